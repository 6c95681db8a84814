//! Built-in expert pool.
//!
//! Vision experts are deterministic mocks that read canned payloads from a
//! fixture directory laid out as `<fixtures>/<fixture_key(path)>/<expert>.json`,
//! where each file holds one [`RawExpertOutput`] document. Any built-in can
//! instead be pointed at a remote endpoint.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::math::eval_math;
use super::{
    ExpertCall, ExpertDescriptor, ExpertError, ExpertExample, ExpertExecutor, ExpertOutput, ExpertRegistry,
    InputSpec, OutputKind, ProducedMedia, RawExpertOutput, RemoteExpert, SearchCorpus, SearchExpert,
};
use crate::session::MediaKind;

pub const BUILTIN_NAMES: [&str; 11] = [
    "captioning",
    "tagging",
    "dense_captioning",
    "detection",
    "ocr",
    "celebrity",
    "receipt",
    "search",
    "math",
    "video_captioning",
    "editing",
];

/// Directory name under which a media path's fixtures live: hex SHA-256 of
/// the path's final segment, so the same fixtures serve a verbatim path and
/// a content-addressed copy with the same file name.
pub fn fixture_key(path: &str) -> String {
    let name = path
        .trim_end_matches('/')
        .rsplit(['/', '\\'])
        .next()
        .unwrap_or(path);
    hex::encode(Sha256::digest(name.as_bytes()))
}

fn d(
    name: &str,
    capability: &str,
    input_spec: InputSpec,
    output_kind: OutputKind,
    triggers: &[&str],
    examples: &[(&str, &str)],
) -> ExpertDescriptor {
    ExpertDescriptor {
        name: name.into(),
        capability: capability.into(),
        input_spec,
        output_kind,
        trigger_phrases: triggers.iter().map(|s| s.to_string()).collect(),
        examples: examples.iter().map(|(u, a)| ExpertExample::new(*u, *a)).collect(),
    }
}

/// Descriptor of the named built-in expert.
pub fn builtin_descriptor(name: &str) -> Option<ExpertDescriptor> {
    use InputSpec::*;
    use OutputKind::*;
    let desc = match name {
        "captioning" => d(
            "captioning",
            "Generates a one-sentence description of the overall content of an image.",
            ImagePath,
            PlainText,
            &["caption", "describe", "description", "what is in", "what's in"],
            &[
                ("<photos/beach.jpg>", "Assistant, captioning <photos/beach.jpg>"),
                ("what is going on in this picture? <party.png>", "Assistant, captioning <party.png>"),
            ],
        ),
        "tagging" => d(
            "tagging",
            "Lists keyword tags for the objects, scenery and actions in an image, with confidences.",
            ImagePath,
            Tags,
            &["tag", "tags", "keywords", "labels"],
            &[
                ("give me some keywords for <cat.jpg>", "Assistant, tagging <cat.jpg>"),
                ("label this photo <street.png>", "Assistant, tagging <street.png>"),
            ],
        ),
        "dense_captioning" => d(
            "dense_captioning",
            "Describes individual regions of an image, each with a short caption and a bounding box.",
            ImagePath,
            Detections,
            &["dense caption", "regions", "region descriptions"],
            &[
                ("describe every part of <market.jpg>", "Assistant, dense_captioning <market.jpg>"),
                ("what is happening in each region of <room.png>?", "Assistant, dense_captioning <room.png>"),
            ],
        ),
        "detection" => d(
            "detection",
            "Finds objects in an image and returns each object's name with its bounding box.",
            ImagePath,
            Detections,
            &["objects", "object", "detect", "locate", "where is", "bounding box", "how many"],
            &[
                ("what objects are on the table? <table.jpg>", "Assistant, detection <table.jpg>"),
                ("how many people are there? <crowd.png>", "Assistant, detection <crowd.png>"),
            ],
        ),
        "ocr" => d(
            "ocr",
            "Reads the text that appears in an image, line by line.",
            ImagePath,
            OcrLines,
            &["ocr", "text", "read", "written", "words"],
            &[
                ("what does the sign say? <sign.jpg>", "Assistant, ocr <sign.jpg>"),
                ("read the note <note.png>", "Assistant, ocr <note.png>"),
            ],
        ),
        "celebrity" => d(
            "celebrity",
            "Recognizes well-known people in an image and returns their names with face boxes.",
            ImagePath,
            Detections,
            &["celebrity", "celebrities", "famous", "who is", "who are"],
            &[
                ("who is this? <portrait.jpg>", "Assistant, celebrity <portrait.jpg>"),
                ("is anyone famous in <gala.png>?", "Assistant, celebrity <gala.png>"),
            ],
        ),
        "receipt" => d(
            "receipt",
            "Extracts the merchant, date, total and line items from a photo of a receipt.",
            ImagePath,
            ReceiptFields,
            &["receipt", "receipts", "invoice", "bill"],
            &[
                ("how much did I pay? <receipt1.png>", "Assistant, receipt <receipt1.png>"),
                ("where did I buy this? <bill.jpg>", "Assistant, receipt <bill.jpg>"),
            ],
        ),
        "search" => d(
            "search",
            "Looks up a text query on the web and returns a short snippet.",
            Text,
            PlainText,
            &["search", "look up", "web", "bing"],
            &[
                ("when is morel mushroom season?", "Assistant, search morel mushroom season"),
                ("who wrote the novel Dune?", "Assistant, search author of Dune"),
            ],
        ),
        "math" => d(
            "math",
            "Evaluates an arithmetic expression with + - * / and parentheses exactly.",
            Text,
            PlainText,
            &["math", "calculate", "compute", "sum", "add up"],
            &[
                ("what is 12.5 plus 3 times 2?", "Assistant, math 12.5 + 3 * 2"),
                ("split 90 dollars three ways", "Assistant, math 90 / 3"),
            ],
        ),
        "video_captioning" => d(
            "video_captioning",
            "Describes what happens in a video as captions at sampled timestamps.",
            VideoPath,
            FrameCaptions,
            &["video", "clip", "frames", "footage"],
            &[
                ("summarize this video <match.mp4>", "Assistant, video_captioning <match.mp4>"),
                ("when does the goal happen? <game.mp4>", "Assistant, video_captioning <game.mp4>"),
            ],
        ),
        "editing" => d(
            "editing",
            "Edits an image following a text instruction and returns the path of the edited image.",
            PathPlusText,
            PlainText,
            &["edit", "replace", "remove", "change the"],
            &[
                ("replace the dog with a cat <park.jpg>", "Assistant, editing <park.jpg> replace the dog with a cat"),
                ("remove the car <street.png>", "Assistant, editing <street.png> remove the car"),
            ],
        ),
        _ => return None,
    };
    Some(desc)
}

pub fn builtin_descriptors() -> Vec<ExpertDescriptor> {
    BUILTIN_NAMES
        .iter()
        .map(|n| builtin_descriptor(n).expect("listed built-in"))
        .collect()
}

/// Mock expert that replays a fixture payload for the requested path.
#[derive(Debug, Clone)]
pub struct FixtureExpert {
    dir: PathBuf,
}

impl FixtureExpert {
    pub fn new(fixtures_dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: fixtures_dir.into(),
        }
    }

    pub fn fixture_path(&self, expert: &str, media_path: &str) -> PathBuf {
        self.dir.join(fixture_key(media_path)).join(format!("{expert}.json"))
    }
}

impl ExpertExecutor for FixtureExpert {
    fn execute(&self, call: &ExpertCall<'_>) -> Result<ExpertOutput, ExpertError> {
        let media = call
            .path
            .ok_or_else(|| ExpertError::MissingPath(call.expert.to_string()))?;
        let file = self.fixture_path(call.expert, media);
        let text = std::fs::read_to_string(&file)
            .map_err(|_| ExpertError::failure(call.expert, format!("no result available for {media}")))?;
        let raw: RawExpertOutput = serde_json::from_str(&text)
            .map_err(|e| ExpertError::failure(call.expert, format!("corrupt fixture {}: {e}", file.display())))?;
        Ok(raw.into())
    }
}

/// Math expert backed by the exact rational evaluator.
#[derive(Debug, Clone, Copy, Default)]
pub struct MathExpert;

impl ExpertExecutor for MathExpert {
    fn execute(&self, call: &ExpertCall<'_>) -> Result<ExpertOutput, ExpertError> {
        let expression = call
            .query
            .map(str::trim)
            .filter(|q| !q.is_empty())
            .ok_or_else(|| ExpertError::failure(call.expert, "no expression given"))?;
        let value = eval_math(expression).map_err(|e| ExpertError::failure(call.expert, e))?;
        Ok(RawExpertOutput::PlainText(format!("{expression} = {value}")).into())
    }
}

/// Mock image editor. Derives a new path next to the input, named after a
/// digest of the instruction, and reports it as produced media. No pixels
/// are touched.
#[derive(Debug, Clone, Copy, Default)]
pub struct EditingExpert;

impl EditingExpert {
    pub fn edited_path(path: &str, instruction: &str) -> String {
        let digest = hex::encode(Sha256::digest(instruction.trim().as_bytes()));
        let tag = &digest[..8];
        let (dir, name) = match path.rfind(['/', '\\']) {
            Some(i) => path.split_at(i + 1),
            None => ("", path),
        };
        match name.rsplit_once('.') {
            Some((stem, ext)) if !stem.is_empty() => format!("{dir}{stem}-edited-{tag}.{ext}"),
            _ => format!("{dir}{name}-edited-{tag}"),
        }
    }
}

impl ExpertExecutor for EditingExpert {
    fn execute(&self, call: &ExpertCall<'_>) -> Result<ExpertOutput, ExpertError> {
        let path = call
            .path
            .ok_or_else(|| ExpertError::MissingPath(call.expert.to_string()))?;
        let instruction = call
            .query
            .map(str::trim)
            .filter(|q| !q.is_empty())
            .ok_or_else(|| ExpertError::failure(call.expert, "no edit instruction given"))?;
        let new_path = Self::edited_path(path, instruction);
        Ok(ExpertOutput {
            raw: RawExpertOutput::PlainText(format!(
                "Applied \"{instruction}\"; the edited image is <{new_path}>"
            )),
            produced_media: vec![ProducedMedia {
                path: new_path,
                kind: MediaKind::Image,
            }],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteEndpoint {
    pub endpoint: String,
    pub token: Option<String>,
}

/// Inputs for assembling the built-in registry.
#[derive(Debug, Clone)]
pub struct BuiltinOptions {
    pub fixtures_dir: PathBuf,
    pub search_corpus: SearchCorpus,
    /// Subset of [`BUILTIN_NAMES`] to register, in that canonical order.
    /// `None` registers all of them.
    pub enabled: Option<Vec<String>>,
    pub remote: HashMap<String, RemoteEndpoint>,
    pub remote_timeout: Duration,
}

impl BuiltinOptions {
    pub fn new(fixtures_dir: impl AsRef<Path>) -> Self {
        Self {
            fixtures_dir: fixtures_dir.as_ref().to_path_buf(),
            search_corpus: SearchCorpus::default(),
            enabled: None,
            remote: HashMap::new(),
            remote_timeout: Duration::from_secs(30),
        }
    }
}

impl ExpertRegistry {
    /// Registry holding the enabled built-ins in canonical order.
    pub fn builtin(options: &BuiltinOptions) -> Result<Self, ExpertError> {
        if let Some(enabled) = &options.enabled {
            if let Some(unknown) = enabled.iter().find(|n| builtin_descriptor(n).is_none()) {
                return Err(ExpertError::UnknownExpert(unknown.clone()));
            }
        }
        let mut registry = ExpertRegistry::new();
        let fixtures = Arc::new(FixtureExpert::new(&options.fixtures_dir));
        for name in BUILTIN_NAMES {
            if let Some(enabled) = &options.enabled {
                if !enabled.iter().any(|n| n == name) {
                    continue;
                }
            }
            let descriptor = builtin_descriptor(name).expect("listed built-in");
            let executor: Arc<dyn ExpertExecutor> = if let Some(remote) = options.remote.get(name) {
                Arc::new(RemoteExpert::new(
                    remote.endpoint.clone(),
                    remote.token.clone(),
                    options.remote_timeout,
                )?)
            } else {
                match name {
                    "search" => Arc::new(SearchExpert::new(options.search_corpus.clone())),
                    "math" => Arc::new(MathExpert),
                    "editing" => Arc::new(EditingExpert),
                    _ => fixtures.clone(),
                }
            };
            registry.register(descriptor, executor)?;
        }
        Ok(registry)
    }
}
