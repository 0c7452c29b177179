use std::collections::BTreeMap;

use electosim_core::domain::write_personas_csv;
use electosim_core::synthpop::{generate_blocks, BlockFile, GeneratedBlock, MarginalFile, ScaleReport};
use electosim_core::{Persona, SeedStreams};
use log::{info, warn};
use serde::Serialize;

use crate::config::{Loaded, PersonaSource};
use crate::error::CliError;
use crate::output::{write_csv_bytes, write_json};

#[derive(Debug, Serialize)]
struct StateCount {
    state: String,
    personas: usize,
}

#[derive(Debug, Serialize)]
struct BlockEntry {
    block_id: String,
    state: String,
    seed: u64,
    personas: usize,
    scaling: ScaleReport,
}

#[derive(Debug, Serialize)]
struct Manifest {
    states: Vec<StateCount>,
    blocks: Vec<BlockEntry>,
}

/// Synthesizes the blocks of every configured state.
pub fn synthesize(cfg: &Loaded) -> Result<Vec<GeneratedBlock>, CliError> {
    let PersonaSource::Synth { synth: src } = &cfg.config.personas else {
        return Err(CliError::Config("personas must be a synth source to generate".into()));
    };
    let synth_err = |e: electosim_core::synthpop::SynthError| CliError::Config(e.to_string());
    let marginals = MarginalFile::load(&cfg.resolve(&src.marginals)).map_err(synth_err)?;
    let spec = marginals.copula().map_err(synth_err)?;
    let blocks = BlockFile::load(&cfg.resolve(&src.blocks)).map_err(synth_err)?;
    let wanted: Vec<&str> = cfg.config.states.iter().map(|s| s.code.as_str()).collect();
    let (kept, skipped): (Vec<_>, Vec<_>) = blocks.blocks.into_iter().partition(|b| wanted.contains(&b.state.as_str()));
    if !skipped.is_empty() {
        info!("skipping {} blocks outside the configured states", skipped.len());
    }
    for code in &wanted {
        if !kept.iter().any(|b| b.state == *code) {
            return Err(CliError::Config(format!("no blocks for state {code}")));
        }
    }
    let streams = SeedStreams::new(cfg.config.master_seed);
    let generated =
        generate_blocks(&kept, &marginals.features, &spec, src.scale_options(), streams.synth()).map_err(synth_err)?;
    for g in &generated {
        if !g.scaling.converged {
            warn!("block {}: marginal scaling stopped at discrepancy {:.4}", g.block_id, g.scaling.max_discrepancy());
        }
    }
    Ok(generated)
}

/// Personas grouped by state, in block order within each state.
pub fn by_state(blocks: &[GeneratedBlock]) -> BTreeMap<String, Vec<Persona>> {
    let mut out: BTreeMap<String, Vec<Persona>> = BTreeMap::new();
    for b in blocks {
        for p in &b.personas {
            out.entry(p.residence_state.clone()).or_default().push(p.clone());
        }
    }
    out
}

pub fn run(cfg: &Loaded) -> Result<String, CliError> {
    let generated = synthesize(cfg)?;
    let provenance = cfg.provenance();
    let dir = cfg.output_dir().join("personas");
    let grouped = by_state(&generated);
    let mut counts = Vec::new();
    for s in &cfg.config.states {
        let personas = grouped.get(&s.code).map(Vec::as_slice).unwrap_or_default();
        let mut body = Vec::new();
        write_personas_csv(&mut body, personas).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_csv_bytes(&dir.join(format!("{}.csv", s.code)), &provenance, &body)?;
        counts.push(StateCount { state: s.code.clone(), personas: personas.len() });
    }
    let total: usize = counts.iter().map(|c| c.personas).sum();
    let manifest = Manifest {
        states: counts,
        blocks: generated
            .into_iter()
            .map(|g| BlockEntry {
                state: g.personas.first().map(|p| p.residence_state.clone()).unwrap_or_default(),
                block_id: g.block_id,
                seed: g.seed,
                personas: g.personas.len(),
                scaling: g.scaling,
            })
            .collect(),
    };
    let blocks = manifest.blocks.len();
    write_json(&dir.join("manifest.json"), &provenance, &manifest)?;
    Ok(format!("generated {total} personas from {blocks} blocks into {}", dir.display()))
}
