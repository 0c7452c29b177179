#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use electosim_cli::{execute, Cli, CliError};
use electosim_core::SimulationRecord;
use clap::Parser;
use serde_json::{json, Value};
use tempfile::TempDir;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// A scenario in its own temp dir: the shipped example inputs plus a config
/// held as JSON so tests can tweak it.
pub struct Scenario {
    pub dir: TempDir,
    pub config: Value,
}

impl Scenario {
    /// The three-state, 300-persona example with the mock backend.
    pub fn example() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let example = data_dir().join("example");
        for f in ["marginals.json", "blocks.json", "context_2020.json", "reference_gaps.csv", "raw_agendas.txt", "raw_bios.txt"] {
            fs::copy(example.join(f), dir.path().join(f)).unwrap();
        }
        for f in ["electoral_votes_2020.csv", "actuals_2020.csv"] {
            fs::copy(data_dir().join(f), dir.path().join(f)).unwrap();
        }
        let text = fs::read_to_string(example.join("scenario.yaml")).unwrap();
        let mut config: Value = serde_yaml::from_str(&text).unwrap();
        config["electoral_votes"] = json!("electoral_votes_2020.csv");
        config["actuals"] = json!("actuals_2020.csv");
        Self { dir, config }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.path("out").join(rel)
    }

    pub fn write(&self, rel: &str, text: &str) {
        let p = self.path(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, text).unwrap();
    }

    pub fn config_path(&self) -> PathBuf {
        let p = self.path("config.json");
        fs::write(&p, serde_json::to_string_pretty(&self.config).unwrap()).unwrap();
        p
    }

    fn args(&self, command: &str, extra: &[&str]) -> Vec<String> {
        let mut args = vec!["electosim".to_string(), command.to_string(), "--config".to_string()];
        args.push(self.config_path().display().to_string());
        args.extend(extra.iter().map(|s| s.to_string()));
        args
    }

    pub fn try_run(&self, command: &str, extra: &[&str]) -> Result<String, CliError> {
        execute(Cli::try_parse_from(self.args(command, extra)).expect("arguments parse"))
    }

    pub fn run(&self, command: &str, extra: &[&str]) -> String {
        self.try_run(command, extra).unwrap_or_else(|e| panic!("{command} failed: {e}"))
    }

    pub fn records(&self) -> Vec<SimulationRecord> {
        read_records(&self.out("records.jsonl"))
    }
}

pub fn read_records(path: &Path) -> Vec<SimulationRecord> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str::<SimulationRecord>(l).unwrap().without_timestamps())
        .collect()
}

/// Every file under `dir`, relative path with contents, sorted.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
