//! The shipped configuration, scripts and fixtures work together.

use std::path::{Path, PathBuf};

use mmreact_core::config::Config;
use mmreact_core::experts::{fixture_key, BUILTIN_NAMES};
use mmreact_core::orchestrate::TraceKind;
use mmreact_core::session::{MediaKind, Role, SessionState};

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

#[test]
fn kitchen_turn_from_shipped_config() {
    let config = Config::load(&assets().join("mmreact.toml")).unwrap();
    let engine = config.engine().unwrap();
    assert_eq!(engine.registry().names(), BUILTIN_NAMES.to_vec());
    let mut session = SessionState::new(config.session_config()).unwrap();
    let result = engine
        .run_turn(
            &mut session,
            "what objects do you see in this image?",
            &[("media/kitchen.png".into(), MediaKind::Image)],
            &mut |_| {},
        )
        .unwrap();
    assert_eq!(
        result.kinds(),
        vec![TraceKind::LlmCall, TraceKind::ExpertBatch, TraceKind::LlmCall, TraceKind::FinalResponse]
    );
    let visible: Vec<Role> = session.visible_transcript().iter().map(|m| m.role).collect();
    assert_eq!(visible, vec![Role::User, Role::AssistantFinal]);
}

#[test]
fn every_fixture_dir_is_a_sha256_key() {
    let media: Vec<String> = std::fs::read_dir(assets().join("scenarios/media"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .collect();
    for name in &media {
        let dir = assets().join("fixtures").join(fixture_key(name));
        assert!(dir.is_dir(), "no fixtures for {name}");
    }
    for entry in std::fs::read_dir(assets().join("fixtures")).unwrap() {
        let name = entry.unwrap().file_name().to_string_lossy().to_string();
        assert_eq!(name.len(), 64);
        assert!(name.chars().all(|c| c.is_ascii_hexdigit()));
    }
}

#[test]
fn docs_quote_the_prefix_template() {
    let doc = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/prompt-prefix.md")).unwrap();
    assert!(doc.contains(mmreact_core::prompting::DEFAULT_PREFIX_TEMPLATE.trim_end()));
}
