use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use electosim_core::backend::{ChatBackend, MockBackend};
use electosim_core::domain::{load_personas, write_personas_csv};
use electosim_core::pipeline::{run_pipeline, Checkpoint, PipelineError};
use electosim_core::sampling::sample_state;
use electosim_core::{Persona, PipelineVersion, SeedStreams, StateResult};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{generate, http_backend};
use crate::config::{BackendKind, Loaded, PersonaSource};
use crate::error::CliError;
use crate::output::{read_json, write_csv, write_csv_bytes, write_json, write_jsonl, Stamped};

pub const CHECKPOINT: &str = "checkpoint.jsonl";
pub const CHECKPOINT_META: &str = "checkpoint.meta.json";
pub const RECORDS: &str = "records.jsonl";
pub const STATE_RESULTS: &str = "state_results.json";
pub const SAMPLED_PERSONAS: &str = "sampled_personas.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateResults {
    pub pipeline_version: PipelineVersion,
    pub results: Vec<StateResult>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    pipeline_version: PipelineVersion,
}

#[derive(Debug, Serialize)]
struct SampleEntry {
    state: String,
    population: usize,
    requested: usize,
    sampled: usize,
    capped: bool,
}

/// Full persona populations for the configured states.
fn population(cfg: &Loaded) -> Result<BTreeMap<String, Vec<Persona>>, CliError> {
    let codes: Vec<&str> = cfg.config.states.iter().map(|s| s.code.as_str()).collect();
    let mut grouped: BTreeMap<String, Vec<Persona>> = BTreeMap::new();
    match &cfg.config.personas {
        PersonaSource::File { file: p } => {
            let path = cfg.resolve(p);
            let all = load_personas(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            for persona in all {
                if codes.contains(&persona.residence_state.as_str()) {
                    grouped.entry(persona.residence_state.clone()).or_default().push(persona);
                }
            }
        }
        PersonaSource::Synth { .. } => {
            let dir = cfg.output_dir().join("personas");
            let files: Vec<_> = codes.iter().map(|c| dir.join(format!("{c}.csv"))).collect();
            if files.iter().all(|f| f.is_file()) {
                for (code, f) in codes.iter().zip(&files) {
                    let ps = load_personas(f).map_err(|e| CliError::Config(format!("{}: {e}", f.display())))?;
                    grouped.insert(code.to_string(), ps);
                }
            } else {
                info!("no generated persona files under {}; synthesizing in memory", dir.display());
                grouped = generate::by_state(&generate::synthesize(cfg)?);
            }
        }
    }
    for code in codes {
        if grouped.get(code).is_none_or(Vec::is_empty) {
            return Err(CliError::Config(format!("no personas for state {code}")));
        }
    }
    Ok(grouped)
}

fn open_checkpoint(cfg: &Loaded, out: &Path, resume: bool) -> Result<Checkpoint, CliError> {
    let path = out.join(CHECKPOINT);
    let meta_path = out.join(CHECKPOINT_META);
    let provenance = cfg.provenance();
    let resuming = resume && path.is_file();
    if resume && !resuming {
        warn!("--resume given but no checkpoint at {}; starting fresh", path.display());
    }
    if resuming {
        let meta: Stamped<CheckpointMeta> = read_json(&meta_path)?;
        if meta.provenance.config_hash != provenance.config_hash {
            return Err(CliError::Config(format!(
                "checkpoint was written under config {}, current config is {}",
                meta.provenance.config_hash, provenance.config_hash
            )));
        }
    } else {
        write_json(&meta_path, &provenance, &CheckpointMeta { pipeline_version: cfg.config.pipeline_version })?;
    }
    Checkpoint::open(&path, resuming).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn pipeline_err(e: PipelineError) -> CliError {
    match e {
        PipelineError::Prompt(_) | PipelineError::Context(_) | PipelineError::DuplicatePersona(_) => {
            CliError::Config(e.to_string())
        }
        PipelineError::Backend(_) | PipelineError::Checkpoint { .. } => CliError::Runtime(e.to_string()),
    }
}

pub fn run(cfg: &Loaded, resume: bool) -> Result<String, CliError> {
    let ctx = cfg.context()?;
    let states = cfg.states()?;
    let streams = SeedStreams::new(cfg.config.master_seed);
    let provenance = cfg.provenance();
    let out = cfg.output_dir();

    let pop = population(cfg)?;
    let mut sampled = Vec::new();
    let mut entries = Vec::new();
    for s in &states {
        let people = &pop[&s.code];
        let sample = sample_state(people, &cfg.config.sampling, streams.state(&s.code))
            .map_err(|e| CliError::Config(format!("{}: {e}", s.code)))?;
        entries.push(SampleEntry {
            state: s.code.clone(),
            population: people.len(),
            requested: sample.requested,
            sampled: sample.personas.len(),
            capped: sample.capped,
        });
        sampled.extend(sample.personas);
    }

    let backend: Box<dyn ChatBackend> = match cfg.config.backend.kind {
        BackendKind::Mock => Box::new(MockBackend::new(cfg.config.backend.mock.clone(), sampled.clone(), streams.mock())),
        BackendKind::Http => Box::new(http_backend(cfg)?),
    };
    let checkpoint = open_checkpoint(cfg, &out, resume)?;
    if checkpoint.completed() > 0 {
        info!("resuming with {} completed records", checkpoint.completed());
    }
    let records = run_pipeline(
        &sampled,
        cfg.config.pipeline_version,
        &ctx,
        backend.as_ref(),
        &cfg.pipeline_options(),
        Some(&checkpoint),
    )
    .map_err(pipeline_err)?;

    let mut body = Vec::new();
    write_personas_csv(&mut body, &sampled).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_csv_bytes(&out.join(SAMPLED_PERSONAS), &provenance, &body)?;
    write_json(&out.join("sampling.json"), &provenance, &serde_json::json!({ "states": entries }))?;
    write_jsonl(&out.join(RECORDS), &provenance, &records)?;

    let state_of: HashMap<&str, &str> =
        sampled.iter().map(|p| (p.id.as_str(), p.residence_state.as_str())).collect();
    let results: Vec<StateResult> = states
        .iter()
        .map(|s| {
            let recs = records.iter().filter(|r| state_of.get(r.persona_id.as_str()) == Some(&s.code.as_str()));
            StateResult::tally(s.clone(), recs)
        })
        .collect();
    write_state_results_csv(&out.join("state_results.csv"), &provenance, &results)?;
    let failed: u64 = results.iter().map(|r| r.failed).sum();
    let summary = results
        .iter()
        .map(|r| {
            let p = r.predicted_share().map(|p| format!("{:.3}", p)).unwrap_or_else(|| "n/a".into());
            format!("{} D={} R={} none={} unparseable={} failed={} P={p}", r.state.code, r.dem_votes, r.rep_votes, r.no_pref, r.unparseable, r.failed)
        })
        .collect::<Vec<_>>()
        .join("\n");
    write_json(
        &out.join(STATE_RESULTS),
        &provenance,
        &StateResults { pipeline_version: cfg.config.pipeline_version, results },
    )?;
    if failed > 0 {
        return Err(CliError::Runtime(format!(
            "{summary}\n{failed} records failed on backend errors; rerun with --resume to retry them"
        )));
    }
    Ok(format!("{summary}\nsimulated {} personas across {} states", records.len(), states.len()))
}

fn write_state_results_csv(path: &Path, provenance: &crate::output::Provenance, results: &[StateResult]) -> Result<(), CliError> {
    let mut rows = vec![[
        "state", "category", "E", "dem_votes", "rep_votes", "no_pref", "unparseable", "failed", "P",
    ]
    .map(String::from)
    .to_vec()];
    for r in results {
        rows.push(vec![
            r.state.code.clone(),
            r.state.category.to_string(),
            r.state.electoral_votes.to_string(),
            r.dem_votes.to_string(),
            r.rep_votes.to_string(),
            r.no_pref.to_string(),
            r.unparseable.to_string(),
            r.failed.to_string(),
            r.predicted_share().map(|p| format!("{p:.6}")).unwrap_or_default(),
        ]);
    }
    write_csv(path, provenance, &rows)
}
