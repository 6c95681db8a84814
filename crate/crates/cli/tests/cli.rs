use std::io::Cursor;
use std::path::{Path, PathBuf};

use clap::Parser;
use mmreact_cli::{run, Cli, EXIT_BACKEND, EXIT_CONFIG, EXIT_EXPECTATION, EXIT_OK};

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn asset(rel: &str) -> String {
    assets().join(rel).to_string_lossy().to_string()
}

fn invoke(args: &[&str], stdin: &str) -> (i32, String, String) {
    let mut full = vec!["mmreact", "--config"];
    let config = asset("mmreact.toml");
    full.push(&config);
    full.extend_from_slice(args);
    let cli = Cli::parse_from(full);
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(&cli, &mut Cursor::new(stdin.as_bytes().to_vec()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn scenario(name: &str, script: &str) -> (i32, String) {
    let (code, out, err) = invoke(
        &["--script", &asset(&format!("scripts/{script}")), "batch", &asset(&format!("scenarios/{name}"))],
        "",
    );
    assert!(err.is_empty(), "{err}");
    (code, out)
}

#[test]
fn shipped_scenarios_pass() {
    for (scenario_file, script) in [
        ("kitchen.scenario", "kitchen.script"),
        ("receipts.scenario", "receipts.script"),
        ("editing.scenario", "editing.script"),
        ("video.scenario", "video.script"),
        ("text_only.scenario", "text_only.script"),
    ] {
        let (code, out) = scenario(scenario_file, script);
        assert_eq!(code, EXIT_OK, "{scenario_file}:\n{out}");
    }
}

#[test]
fn failed_expectation_reports_diff() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.scenario");
    std::fs::copy(assets().join("scenarios/media/kitchen.png"), dir.path().join("kitchen.png")).unwrap();
    std::fs::write(
        &file,
        "upload kitchen.png\nsay what objects do you see?\nexpect_contains giraffe\nexpect_trace_kinds llm_call, final_response\n",
    )
    .unwrap();
    let script = dir.path().join("s.script");
    std::fs::write(
        &script,
        "WHEN last contains \"Observation\" RESPOND <<<A kettle.>>>\nWHEN call 1 RESPOND <<<Assistant, detection <kitchen.png>>>>\n",
    )
    .unwrap();
    let (code, out, _) = invoke(
        &["--script", script.to_str().unwrap(), "batch", file.to_str().unwrap()],
        "",
    );
    assert_eq!(code, EXIT_EXPECTATION);
    assert!(out.contains("line 3"), "{out}");
    assert!(out.contains("giraffe"));
    assert!(out.contains("! step 2: expected final_response, got expert_batch"), "{out}");
}

#[test]
fn empty_scenario_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("empty.scenario");
    std::fs::write(&file, "").unwrap();
    let (code, out, _) = invoke(
        &["--script", &asset("scripts/kitchen.script"), "batch", file.to_str().unwrap()],
        "",
    );
    assert_eq!(code, EXIT_OK);
    assert!(out.is_empty());
}

#[test]
fn backend_error_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.scenario");
    std::fs::write(&file, "say nothing matches this\n").unwrap();
    let (code, out, _) = invoke(
        &["--script", &asset("scripts/kitchen.script"), "batch", file.to_str().unwrap()],
        "",
    );
    assert_eq!(code, EXIT_BACKEND, "{out}");
}

#[test]
fn config_errors_exit_2() {
    let (code, _, err) = invoke(&["--max-steps", "0", "batch", "x"], "");
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("config error"));
    let (code, _, _) = invoke(&["--experts", "telepathy", "batch", "x"], "");
    assert_eq!(code, EXIT_CONFIG);
    let (code, _, _) = invoke(&["--script", "/no/such.script", "batch", "x"], "");
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn repl_upload_reasoning_and_quit() {
    let kitchen = asset("scenarios/media/kitchen.png");
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("s.script");
    std::fs::write(
        &script,
        "WHEN last contains \"Observation from detection\" RESPOND <<<A stove and a kettle.>>>\n\
         WHEN last contains \"objects\" RESPOND <<<Looking. Assistant, detection <kitchen.png>>>>\n",
    )
    .unwrap();
    let trace = dir.path().join("trace.jsonl");
    let input = format!("/upload {kitchen}\nwhat objects?\n/reasoning on\nwhat objects again?\n/quit\nnever read\n");
    let (code, out, _) = invoke(
        &["--script", script.to_str().unwrap(), "--trace-out", trace.to_str().unwrap(), "repl"],
        &input,
    );
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.matches("A stove and a kettle.").count(), 2);
    // reasoning only shown for the second turn
    let dimmed: Vec<&str> = out.lines().filter(|l| l.contains("\x1b[2m")).collect();
    assert!(dimmed.iter().any(|l| l.contains("[1 thought] Looking.")), "{out}");
    assert!(dimmed.iter().any(|l| l.contains("Observation from detection:")));
    assert!(out.find("\x1b[2m").unwrap() > out.find("A stove and a kettle.").unwrap());
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 8);
}

#[test]
fn batch_traces_are_byte_identical_and_match_repl() {
    let dir = tempfile::tempdir().unwrap();
    let run_batch = |name: &str| {
        let out = dir.path().join(name);
        let (code, _, _) = invoke(
            &[
                "--script",
                &asset("scripts/receipts.script"),
                "--trace-out",
                out.to_str().unwrap(),
                "batch",
                &asset("scenarios/receipts.scenario"),
            ],
            "",
        );
        assert_eq!(code, EXIT_OK);
        std::fs::read(out).unwrap()
    };
    let a = run_batch("a.jsonl");
    let b = run_batch("b.jsonl");
    assert_eq!(a, b);

    // the same inputs through the REPL, with paths as the scenario writes them
    let media = assets().join("scenarios");
    let cwd = std::env::current_dir().unwrap();
    std::env::set_current_dir(&media).unwrap();
    let repl_trace = dir.path().join("repl.jsonl");
    let input = "/upload media/receipt1.png\nhere is my taxi receipt\n/upload media/receipt2.png\nanother receipt, from dinner\n\
                 /upload media/receipt3.png\na coffee receipt\n/upload media/receipt4.png\nand the metro receipt\nhow much did I spend in total?\n/quit\n";
    let (code, _, _) = invoke(
        &["--script", &asset("scripts/receipts.script"), "--trace-out", repl_trace.to_str().unwrap(), "repl"],
        input,
    );
    std::env::set_current_dir(cwd).unwrap();
    assert_eq!(code, EXIT_OK);
    assert_eq!(std::fs::read(repl_trace).unwrap(), a);
}

#[test]
fn fixture_key_subcommand() {
    let (code, out, _) = invoke(&["fixture-key", "/data/media/kitchen.png"], "");
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.trim().len(), 64);
}
