mod common;
#[path = "../../core/tests/common/stub.rs"]
mod stub;

use std::fs;

use common::{read_records, tree, Scenario};
use electosim_cli::CliError;
use electosim_core::domain::{load_personas, write_personas_csv};
use electosim_core::{Income, Persona};
use serde_json::{json, Value};
use stub::{StubReply, StubServer};

fn person(id: &str, state: &str) -> Persona {
    Persona {
        id: id.into(),
        age: 40,
        gender: "Male".into(),
        ethnicity: "White".into(),
        marital_status: "Married".into(),
        household_size: 2,
        has_children: false,
        education_level: "High school".into(),
        occupation: "Clerk".into(),
        individual_income: Income::Amount(40000.0),
        family_income: Income::Amount(60000.0),
        residence_state: state.into(),
        ideology: None,
        extra: Default::default(),
    }
}

/// Persona file scenario where each (state, R votes, D votes) is scripted.
fn scripted(states: &[(&str, u32, u32, u32)], actuals: &str) -> Scenario {
    let mut s = Scenario::example();
    let mut personas = Vec::new();
    let mut table = serde_json::Map::new();
    let mut entries = Vec::new();
    for &(code, ev, rep, dem) in states {
        for i in 0..(rep + dem) {
            let id = format!("{code}-{i:02}");
            let vote = if i < rep { "Republican" } else { "Democratic" };
            table.insert(id.clone(), json!({ "vote": [vote] }));
            personas.push(person(&id, code));
        }
        entries.push(json!({ "code": code, "category": "swing", "electoral_votes": ev }));
    }
    let mut buf = Vec::new();
    write_personas_csv(&mut buf, &personas).unwrap();
    s.write("people.csv", std::str::from_utf8(&buf).unwrap());
    s.write("actuals.csv", actuals);
    s.config["states"] = Value::Array(entries);
    s.config["personas"] = json!({ "file": "people.csv" });
    s.config["pipeline_version"] = json!("v1");
    s.config["actuals"] = json!("actuals.csv");
    s.config["sampling"] = json!({ "default_ratio": 1.0, "min_sample": 1 });
    s.config["backend"]["mock"] = json!({ "rule": "scripted", "table": table });
    s.config["analysis"] = json!({});
    s
}

#[test]
fn generate_writes_two_blocks_of_one_hundred() {
    let mut s = Scenario::example();
    s.config["states"] = json!([{ "code": "WI", "category": "swing" }]);
    let blocks: Value = serde_json::from_str(&fs::read_to_string(s.path("blocks.json")).unwrap()).unwrap();
    let mut wi: Vec<Value> = blocks["blocks"].as_array().unwrap().iter().filter(|b| b["state"] == "WI").cloned().collect();
    for b in &mut wi {
        b["population"] = json!(100);
    }
    s.write("blocks.json", &json!({ "blocks": wi }).to_string());
    s.run("generate", &[]);
    let personas = load_personas(&s.out("personas/WI.csv")).unwrap();
    assert_eq!(personas.len(), 200);
    assert!(personas.iter().all(|p| p.residence_state == "WI"));
}

#[test]
fn generate_is_byte_identical_on_rerun() {
    let s = Scenario::example();
    s.run("generate", &[]);
    let first = tree(&s.out("personas"));
    s.run("generate", &[]);
    assert_eq!(tree(&s.out("personas")), first);
    assert_eq!(first.len(), 4);
}

#[test]
fn seed_override_changes_personas() {
    let s = Scenario::example();
    s.run("generate", &[]);
    let a = fs::read(s.out("personas/WI.csv")).unwrap();
    s.run("generate", &["--seed", "99"]);
    assert_ne!(fs::read(s.out("personas/WI.csv")).unwrap(), a);
}

#[test]
fn malformed_marginal_file_is_a_config_error_with_location() {
    let s = Scenario::example();
    s.write("marginals.json", "{\n  \"features\": [\n    { \"feature\": \"age\", \n");
    match s.try_run("generate", &[]) {
        Err(e @ CliError::Config(_)) => {
            assert_eq!(e.exit_code(), 2);
            let msg = e.to_string();
            assert!(msg.contains("marginals.json:4:"), "{msg}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn simulate_three_states_v3() {
    let s = Scenario::example();
    s.run("generate", &[]);
    let out = s.run("simulate", &[]);
    assert!(out.contains("simulated 300 personas across 3 states"), "{out}");
    let records = s.records();
    assert_eq!(records.len(), 300);
    assert!(records.iter().all(|r| r.step1_prompt.is_some() && r.vote.is_some()));
    let results: Value = serde_json::from_str(&fs::read_to_string(s.out("state_results.json")).unwrap()).unwrap();
    let results = results["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    for r in results {
        let total: u64 = ["dem_votes", "rep_votes", "no_pref", "unparseable", "failed"]
            .iter()
            .map(|k| r[k].as_u64().unwrap())
            .sum();
        assert_eq!(total, 100);
    }
}

#[test]
fn simulate_without_generate_synthesizes_the_same_personas() {
    let a = Scenario::example();
    a.run("generate", &[]);
    a.run("simulate", &[]);
    let b = Scenario::example();
    b.run("simulate", &[]);
    assert_eq!(a.records(), b.records());
}

#[test]
fn resume_after_interruption_matches_uninterrupted_run() {
    let full = Scenario::example();
    full.run("generate", &[]);
    full.run("simulate", &[]);
    full.run("evaluate", &[]);

    let cut = Scenario::example();
    cut.run("generate", &[]);
    cut.run("simulate", &[]);
    // Keep 120 completed records and half of the next line, as a kill would.
    let ckpt = fs::read_to_string(cut.out("checkpoint.jsonl")).unwrap();
    let lines: Vec<&str> = ckpt.lines().collect();
    let mut text = lines[..120].join("\n");
    text.push('\n');
    text.push_str(&lines[120][..lines[120].len() / 2]);
    fs::write(cut.out("checkpoint.jsonl"), text).unwrap();
    for f in ["records.jsonl", "state_results.json", "state_results.csv"] {
        fs::remove_file(cut.out(f)).unwrap();
    }
    cut.run("simulate", &["--resume"]);
    cut.run("evaluate", &[]);

    assert_eq!(cut.records(), full.records());
    for f in ["state_results.json", "state_results.csv", "sampled_personas.csv"] {
        assert_eq!(fs::read(cut.out(f)).unwrap(), fs::read(full.out(f)).unwrap(), "{f}");
    }
    assert_eq!(tree(&cut.out("report")), tree(&full.out("report")));
}

#[test]
fn resume_under_a_different_config_is_refused() {
    let mut s = Scenario::example();
    s.run("simulate", &[]);
    s.config["backend"]["mock"] = json!({ "rule": "ideology_threshold", "cutoff": 4 });
    let err = s.try_run("simulate", &["--resume"]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("checkpoint was written under config"));
}

#[test]
fn v2_with_missing_context_fails_before_any_request() {
    let server = StubServer::start(vec![], StubReply::ok("Democratic"));
    let mut s = Scenario::example();
    s.config["backend"]["kind"] = json!("http");
    s.config["backend"]["base_url"] = json!(server.url);
    s.config["context"] = json!("missing.json");
    let err = s.try_run("simulate", &["--version", "v2"]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("missing.json"));
    assert!(server.received().is_empty());
}

#[test]
fn v2_with_empty_agendas_fails_before_any_request() {
    let server = StubServer::start(vec![], StubReply::ok("Democratic"));
    let mut s = Scenario::example();
    s.write("thin.json", r#"{"year": 2020, "democratic_candidate": "Joe Biden", "republican_candidate": "Donald Trump"}"#);
    s.config["context"] = json!("thin.json");
    s.config["backend"]["kind"] = json!("http");
    s.config["backend"]["base_url"] = json!(server.url);
    let err = s.try_run("simulate", &["--version", "v2"]).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    assert!(server.received().is_empty());
}

#[test]
fn auth_failure_aborts_with_runtime_exit_code() {
    let server = StubServer::start(vec![], StubReply::status(401));
    let mut s = Scenario::example();
    s.config["backend"]["kind"] = json!("http");
    s.config["backend"]["base_url"] = json!(server.url);
    s.config["pipeline"] = json!({ "workers": 1 });
    let err = s.try_run("simulate", &["--states", "WI"]).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("401"), "{err}");
    assert_eq!(server.received().len(), 1);
}

#[test]
fn transient_failures_exit_one_and_resume_finishes() {
    // Five 503s exhaust the first persona (max_retries 4); everything after succeeds.
    let script = vec![StubReply::status(503); 5];
    let server = StubServer::start(script, StubReply::ok("Republican"));
    let mut s = scripted(&[("WI", 10, 3, 0)], "state,republican_pct,democratic_pct\nWI,50,50\n");
    s.config["backend"]["kind"] = json!("http");
    s.config["backend"]["base_url"] = json!(server.url);
    s.config["backend"]["policy"] = json!({ "max_retries": 4, "backoff_base_ms": 1, "backoff_cap_ms": 2 });
    s.config["pipeline"] = json!({ "workers": 1 });
    let err = s.try_run("simulate", &[]).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("1 records failed"), "{err}");
    let out = s.run("simulate", &["--resume"]);
    assert!(out.contains("WI D=0 R=3"), "{out}");
    assert_eq!(server.received().len(), 5 + 2 + 1);
}

#[test]
fn evaluate_prints_hand_computed_metrics() {
    let s = scripted(
        &[("WI", 10, 6, 4), ("NV", 5, 4, 6)],
        "state,republican_pct,democratic_pct\nWI,50,50\nNV,45,55\n",
    );
    s.run("simulate", &[]);
    let out = s.run("evaluate", &[]);
    assert!(out.starts_with("WAE 8.33%  WMSE 0.75%  BM +5.00%"), "{out}");
    let m: Value = serde_json::from_str(&fs::read_to_string(s.out("report/metrics.json")).unwrap()).unwrap();
    assert!((m["wae"].as_f64().unwrap() - 25.0 / 3.0).abs() < 1e-12);
    assert!((m["wmse"].as_f64().unwrap() - 0.75).abs() < 1e-12);
    assert!((m["bm"].as_f64().unwrap() - 5.0).abs() < 1e-12);
}

#[test]
fn evaluate_with_exact_shares_is_zero() {
    let s = scripted(
        &[("WI", 10, 6, 4), ("NV", 5, 4, 6)],
        "state,republican_pct,democratic_pct\nWI,60,40\nNV,40,60\n",
    );
    s.run("simulate", &[]);
    assert!(s.run("evaluate", &[]).starts_with("WAE 0.00%  WMSE 0.00%  BM +0.00%"));
}

#[test]
fn evaluate_excludes_states_without_actuals() {
    let s = scripted(
        &[("WI", 10, 6, 4), ("NV", 5, 4, 6), ("AZ", 11, 5, 5)],
        "state,republican_pct,democratic_pct\nWI,50,50\nNV,45,55\n",
    );
    s.run("simulate", &[]);
    let out = s.run("evaluate", &[]);
    assert!(out.starts_with("WAE 8.33%  WMSE 0.75%  BM +5.00%"), "{out}");
    assert!(out.contains("excluded AZ: missing actual"));
    let csv = fs::read_to_string(s.out("report/per_state.csv")).unwrap();
    assert!(!csv.contains("\nAZ,"));
}

#[test]
fn evaluate_takes_results_dir_and_actuals_flags() {
    let s = scripted(&[("WI", 10, 6, 4), ("NV", 5, 4, 6)], "state,republican_pct,democratic_pct\nWI,60,40\nNV,40,60\n");
    s.run("simulate", &[]);
    s.write("other.csv", "state,republican_pct,democratic_pct\nWI,50,50\nNV,45,55\n");
    let results = s.path("out").display().to_string();
    let actuals = s.path("other.csv").display().to_string();
    let out = s.run("evaluate", &["--results", &results, "--actuals", &actuals]);
    assert!(out.starts_with("WAE 8.33%"), "{out}");
}

#[test]
fn evaluate_is_a_pure_function_of_its_inputs() {
    let s = Scenario::example();
    s.run("simulate", &[]);
    s.run("evaluate", &[]);
    let first = tree(&s.out("report"));
    s.run("evaluate", &[]);
    assert_eq!(tree(&s.out("report")), first);
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    for f in ["metrics.json", "per_state.csv", "plot_state_shares.csv", "regression.json", "plot_ideology_vote.csv", "gaps.json", "plot_gaps.csv"] {
        assert!(names.contains(&f), "missing {f} in {names:?}");
    }
}

#[test]
fn every_artifact_carries_provenance() {
    let s = Scenario::example();
    s.run("generate", &[]);
    s.run("simulate", &[]);
    s.run("evaluate", &[]);
    let files = tree(&s.path("out"));
    let seed = s.config["master_seed"].as_u64().unwrap().to_string();
    let results: Value = serde_json::from_str(&fs::read_to_string(s.out("state_results.json")).unwrap()).unwrap();
    let hash = results["provenance"]["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    for (name, bytes) in &files {
        if name == "checkpoint.jsonl" {
            continue;
        }
        let text = String::from_utf8_lossy(bytes);
        assert!(text.contains(&hash), "{name} lacks the config hash");
        assert!(text.contains(&seed), "{name} lacks the seed");
        assert!(text.contains("engine_version"), "{name} lacks the engine version");
    }
}

#[test]
fn state_filter_limits_the_run() {
    let s = Scenario::example();
    let out = s.run("simulate", &["--states", "WI,CA"]);
    assert!(out.contains("across 2 states"), "{out}");
    assert_eq!(s.records().len(), 200);
    assert_eq!(s.try_run("simulate", &["--states", "TX"]).unwrap_err().exit_code(), 2);
}

#[test]
fn version_override_switches_pipeline() {
    let s = Scenario::example();
    s.run("simulate", &["--version", "v1", "--states", "WI"]);
    let records = read_records(&s.out("records.jsonl"));
    assert!(records.iter().all(|r| r.step1_prompt.is_none()));
    s.run("evaluate", &["--version", "v1", "--states", "WI"]);
    assert!(!s.out("report/regression.json").exists());
}

#[test]
fn summarize_context_with_mock_writes_a_valid_context() {
    let s = Scenario::example();
    let (a, b, out) = (s.path("raw_agendas.txt"), s.path("raw_bios.txt"), s.path("made.json"));
    let msg = s.run(
        "summarize-context",
        &[
            "--agendas", &a.display().to_string(),
            "--bios", &b.display().to_string(),
            "--democrat", "Joe Biden",
            "--republican", "Donald Trump",
            "--out", &out.display().to_string(),
        ],
    );
    assert!(msg.starts_with("wrote context"));
    let ctx = electosim_core::ElectionContext::from_json_file(&out).unwrap();
    assert_eq!(ctx.year, 2020);
    assert!(ctx.party_agendas.starts_with("The Democratic Party platform"));
    assert!(ctx.party_agendas.split_whitespace().count() <= 120);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_electosim");
    let status = |args: &[&str]| std::process::Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(status(&["generate", "--config", "/nonexistent/config.yaml"]), Some(2));
    assert_eq!(status(&["frobnicate"]), Some(2));
    let s = Scenario::example();
    let cfg = s.config_path().display().to_string();
    assert_eq!(status(&["simulate", "--config", &cfg, "--states", "WI"]), Some(0));
    assert_eq!(status(&["evaluate", "--config", &cfg, "--states", "WI"]), Some(0));
}
