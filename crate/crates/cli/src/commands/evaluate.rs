use std::path::{Path, PathBuf};

use electosim_core::analysis::{demographic_gaps, fit_logistic, ideology_vote_points, FitOptions, ReferenceTable, RegressionResult};
use electosim_core::backend::logistic;
use electosim_core::domain::load_personas;
use electosim_core::metrics::TieRule;
use electosim_core::{IdeologyLabel, MetricReport, PipelineVersion, SimulationRecord};
use log::{info, warn};
use serde::Serialize;

use super::simulate::{StateResults, RECORDS, SAMPLED_PERSONAS, STATE_RESULTS};
use crate::config::{load_actuals, Loaded};
use crate::error::CliError;
use crate::output::{read_json, read_jsonl, write_csv, write_json, Provenance, Stamped};

#[derive(Debug, Default, Clone)]
pub struct EvaluateArgs {
    pub results: Option<PathBuf>,
    pub actuals: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct MetricsFile<'a> {
    pipeline_version: PipelineVersion,
    tie_rule: TieRule,
    summary: String,
    #[serde(flatten)]
    report: &'a MetricReport,
}

pub fn run(cfg: &Loaded, args: &EvaluateArgs) -> Result<String, CliError> {
    let results_dir = match &args.results {
        Some(p) => p.clone(),
        None => cfg.output_dir(),
    };
    let actuals_path = match (&args.actuals, &cfg.config.actuals) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => cfg.resolve(p),
        (None, None) => return Err(CliError::Config("no actuals file given (config `actuals` or --actuals)".into())),
    };
    if !actuals_path.is_file() {
        return Err(CliError::Config(format!("actuals file {} does not exist", actuals_path.display())));
    }
    let actuals = load_actuals(&actuals_path)?;
    let stamped: Stamped<StateResults> = read_json(&results_dir.join(STATE_RESULTS))?;
    let version = stamped.body.pipeline_version;
    let wanted: Vec<&str> = cfg.config.states.iter().map(|s| s.code.as_str()).collect();
    let mut results: Vec<_> = stamped.body.results.into_iter().filter(|r| wanted.contains(&r.state.code.as_str())).collect();
    for r in &mut results {
        r.state.actual_republican_share = actuals.get(&r.state.code).copied();
    }
    let report = MetricReport::build(&results, cfg.config.tie_rule)
        .map_err(|e| CliError::Config(format!("cannot score any state: {e}")))?;

    let provenance = cfg.provenance();
    let dir = results_dir.join("report");
    let summary = report.summary_line();
    write_json(
        &dir.join("metrics.json"),
        &provenance,
        &MetricsFile { pipeline_version: version, tie_rule: cfg.config.tie_rule, summary: summary.clone(), report: &report },
    )?;
    let mut body = Vec::new();
    report.write_state_csv(&mut body).map_err(|e| CliError::Runtime(e.to_string()))?;
    crate::output::write_csv_bytes(&dir.join("per_state.csv"), &provenance, &body)?;

    let mut rows = vec![["state", "category", "E", "dem_votes", "rep_votes", "P", "R"].map(String::from).to_vec()];
    for r in &results {
        rows.push(vec![
            r.state.code.clone(),
            r.state.category.to_string(),
            r.state.electoral_votes.to_string(),
            r.dem_votes.to_string(),
            r.rep_votes.to_string(),
            r.predicted_share().map(|p| format!("{p:.6}")).unwrap_or_default(),
            r.state.actual_republican_share.map(|p| format!("{p:.6}")).unwrap_or_default(),
        ]);
    }
    write_csv(&dir.join("plot_state_shares.csv"), &provenance, &rows)?;

    let mut lines = vec![summary];
    for (state, why) in &report.excluded {
        lines.push(format!("excluded {state}: {why}"));
    }

    let records_path = results_dir.join(RECORDS);
    let records: Vec<SimulationRecord> = if records_path.is_file() {
        read_jsonl(&records_path)?.1
    } else {
        warn!("{} not found; skipping record-level analyses", records_path.display());
        Vec::new()
    };
    let records: Vec<_> = records.into_iter().filter(|r| r.pipeline_version == version).collect();

    if version == PipelineVersion::V3 {
        if let Some(fit) = regression(&records, &dir, &provenance)? {
            lines.push(format!(
                "ideology regression: beta {:.3}, pseudo-R2 {:.3}, n {}{}",
                fit.beta,
                fit.pseudo_r2,
                fit.n_used,
                if fit.separation_flag { ", complete separation" } else { "" }
            ));
        }
    }

    if let Some(ref_path) = &cfg.config.analysis.reference_gaps {
        let table = ReferenceTable::load(&cfg.resolve(ref_path)).map_err(|e| CliError::Config(e.to_string()))?;
        let personas_path = results_dir.join(SAMPLED_PERSONAS);
        let personas = load_personas(&personas_path)
            .map_err(|e| CliError::Config(format!("{}: {e}", personas_path.display())))?;
        let reports = demographic_gaps(&records, &personas, &table).map_err(|e| CliError::Runtime(e.to_string()))?;
        let mut rows = vec![["dimension", "group", "rep_votes", "dem_votes", "simulated_gap", "reference_gap", "amplification"]
            .map(String::from)
            .to_vec()];
        for rep in &reports {
            let dim = serde_json::to_value(rep.dimension).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            for g in &rep.groups {
                rows.push(vec![
                    dim.clone(),
                    g.group.clone(),
                    g.rep_votes.to_string(),
                    g.dem_votes.to_string(),
                    format!("{:.6}", g.simulated_gap),
                    format!("{:.6}", g.reference_gap),
                    format!("{:.6}", g.amplification),
                ]);
            }
        }
        write_json(&dir.join("gaps.json"), &provenance, &serde_json::json!({ "reports": reports }))?;
        write_csv(&dir.join("plot_gaps.csv"), &provenance, &rows)?;
        lines.push(format!("demographic gaps over {} dimensions", reports.len()));
    }

    Ok(lines.join("\n"))
}

/// Fits vote on ideology and writes the fit plus an observed-versus-fitted
/// table. Returns `None` when the records do not support a fit.
fn regression(records: &[SimulationRecord], dir: &Path, provenance: &Provenance) -> Result<Option<RegressionResult>, CliError> {
    let points = ideology_vote_points(records);
    let fit = match fit_logistic(&points, FitOptions::default()) {
        Ok(f) => f,
        Err(e) => {
            info!("skipping ideology regression: {e}");
            return Ok(None);
        }
    };
    if fit.separation_flag {
        warn!("ideology perfectly separates the simulated votes");
    }
    write_json(&dir.join("regression.json"), provenance, &fit)?;
    let mut rows =
        vec![["scale", "label", "n", "republican", "observed_share", "fitted"].map(String::from).to_vec()];
    for scale in 1..=7u8 {
        let here: Vec<bool> = points.iter().filter(|(x, _)| *x == scale as f64).map(|(_, y)| *y).collect();
        let rep = here.iter().filter(|y| **y).count();
        let label = IdeologyLabel::from_scale(scale).map(IdeologyLabel::text).unwrap_or_default();
        rows.push(vec![
            scale.to_string(),
            label.to_string(),
            here.len().to_string(),
            rep.to_string(),
            if here.is_empty() { String::new() } else { format!("{:.6}", rep as f64 / here.len() as f64) },
            format!("{:.6}", logistic(fit.intercept + fit.beta * scale as f64)),
        ]);
    }
    write_csv(&dir.join("plot_ideology_vote.csv"), provenance, &rows)?;
    Ok(Some(fit))
}
