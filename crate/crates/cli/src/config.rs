//! Run configuration: one YAML or JSON file describing a scenario. Relative
//! paths resolve against the directory holding the config file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use electosim_core::backend::mock::MockRuleset;
use electosim_core::backend::BackendPolicy;
use electosim_core::domain::{is_state_code, ElectionContext};
use electosim_core::metrics::TieRule;
use electosim_core::pipeline::PipelineOptions;
use electosim_core::sampling::SamplingPlan;
use electosim_core::synthpop::ScaleOptions;
use electosim_core::{PipelineVersion, StateCategory, StateInfo};
use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::output::{read_keyed_csv, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub election_year: i32,
    pub pipeline_version: PipelineVersion,
    pub master_seed: u64,
    /// Election context JSON (candidates, agendas, bios).
    pub context: PathBuf,
    pub output_dir: PathBuf,
    pub states: Vec<StateEntry>,
    /// `state,electoral_votes` table used for states without an inline count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub electoral_votes: Option<PathBuf>,
    /// `state,republican_pct,democratic_pct` table of actual results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actuals: Option<PathBuf>,
    pub personas: PersonaSource,
    #[serde(default)]
    pub sampling: SamplingPlan,
    #[serde(default)]
    pub backend: BackendSettings,
    #[serde(default)]
    pub pipeline: PipelineSettings,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(default)]
    pub tie_rule: TieRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateEntry {
    pub code: String,
    pub category: StateCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub electoral_votes: Option<u32>,
}

/// Written as `personas: { synth: {...} }` or `personas: { file: path }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PersonaSource {
    /// Synthesize from block aggregates with `generate`.
    Synth { synth: SynthSource },
    /// A persona CSV or JSON file covering all configured states.
    File { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSource {
    pub marginals: PathBuf,
    pub blocks: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
}

impl SynthSource {
    pub fn scale_options(&self) -> ScaleOptions {
        let d = ScaleOptions::default();
        ScaleOptions { tol: self.tol.unwrap_or(d.tol), max_iters: self.max_iters.unwrap_or(d.max_iters) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub kind: BackendKind,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Overrides `ELECTOSIM_BASE_URL` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system_text: Option<String>,
    pub policy: BackendPolicy,
    pub mock: MockRuleset,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            model_id: "mock".into(),
            temperature: 0.0,
            max_tokens: 256,
            base_url: None,
            system_text: None,
            policy: BackendPolicy::default(),
            mock: MockRuleset::IdeologyThreshold { cutoff: 5 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub reask_limit: u32,
    pub workers: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        let d = PipelineOptions::default();
        Self { reask_limit: d.reask_limit, workers: d.workers }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Reference partisan gaps by demographic group.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_gaps: Option<PathBuf>,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub states: Option<Vec<String>>,
    pub version: Option<PipelineVersion>,
    pub backend: Option<BackendKind>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let is_json = path.extension().and_then(|e| e.to_str()) == Some("json");
        let parsed = if is_json {
            serde_json::from_str(text).map_err(|e| format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
        } else {
            serde_yaml::from_str(text).map_err(|e| match e.location() {
                Some(loc) => format!("{}:{}:{}: {e}", path.display(), loc.line(), loc.column()),
                None => format!("{}: {e}", path.display()),
            })
        };
        parsed.map_err(CliError::Config)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(codes) = &o.states {
            let mut kept = Vec::new();
            for code in codes {
                let code = code.trim().to_ascii_uppercase();
                match self.states.iter().find(|s| s.code == code) {
                    Some(s) => kept.push(s.clone()),
                    None => return Err(CliError::Config(format!("--states: {code} is not in the config"))),
                }
            }
            self.states = kept;
        }
        if let Some(v) = o.version {
            self.pipeline_version = v;
        }
        if let Some(k) = o.backend {
            self.backend.kind = k;
        }
        if let Some(s) = o.seed {
            self.master_seed = s;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A parsed config plus the directory its relative paths hang off.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl Loaded {
    /// Reads, overrides and validates a config. `need_context` is false only
    /// for commands that create the context file.
    pub fn load(path: &Path, overrides: &Overrides, need_context: bool) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = RunConfig::parse(&text, path)?;
        config.apply(overrides)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { config, base_dir };
        loaded.validate(need_context)?;
        Ok(loaded)
    }

    pub fn from_config(config: RunConfig, base_dir: impl Into<PathBuf>) -> Self {
        Self { config, base_dir: base_dir.into() }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.config.hash(), self.config.master_seed)
    }

    fn require_file(&self, what: &str, p: &Path) -> Result<(), CliError> {
        let full = self.resolve(p);
        if full.is_file() {
            Ok(())
        } else {
            Err(CliError::Config(format!("{what} file {} does not exist", full.display())))
        }
    }

    pub fn validate(&self, need_context: bool) -> Result<(), CliError> {
        let c = &self.config;
        if c.states.is_empty() {
            return Err(CliError::Config("no states configured".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &c.states {
            if !is_state_code(&s.code) {
                return Err(CliError::Config(format!("unknown state code {:?}", s.code)));
            }
            if !seen.insert(s.code.as_str()) {
                return Err(CliError::Config(format!("state {} listed twice", s.code)));
            }
        }
        if need_context {
            self.require_file("context", &c.context)?;
        }
        if let Some(p) = &c.electoral_votes {
            self.require_file("electoral votes", p)?;
        }
        if let Some(p) = &c.actuals {
            self.require_file("actuals", p)?;
        }
        if let Some(p) = &c.analysis.reference_gaps {
            self.require_file("reference gaps", p)?;
        }
        match &c.personas {
            PersonaSource::Synth { synth: s } => {
                self.require_file("marginals", &s.marginals)?;
                self.require_file("blocks", &s.blocks)?;
            }
            PersonaSource::File { file: p } => self.require_file("persona", p)?,
        }
        for w in c.sampling.validate().map_err(|e| CliError::Config(format!("sampling: {e}")))? {
            warn!("{w}");
        }
        c.backend.policy.validate().map_err(|e| CliError::Config(format!("backend policy: {e}")))?;
        if !(0.0..=2.0).contains(&c.backend.temperature) {
            return Err(CliError::Config(format!("temperature {} outside [0, 2]", c.backend.temperature)));
        }
        if c.backend.max_tokens == 0 || c.pipeline.workers == 0 {
            return Err(CliError::Config("max_tokens and workers must be positive".into()));
        }
        self.states()?;
        Ok(())
    }

    pub fn context(&self) -> Result<ElectionContext, CliError> {
        let path = self.resolve(&self.config.context);
        let ctx = ElectionContext::from_json_file(&path)
            .map_err(|e| CliError::Config(format!("context {}: {e}", path.display())))?;
        if ctx.year != self.config.election_year {
            warn!("context year {} differs from election_year {}", ctx.year, self.config.election_year);
        }
        Ok(ctx)
    }

    /// Configured states with electoral votes filled in; actual shares are
    /// left empty.
    pub fn states(&self) -> Result<Vec<StateInfo>, CliError> {
        let table = match &self.config.electoral_votes {
            Some(p) => load_electoral_votes(&self.resolve(p))?,
            None => BTreeMap::new(),
        };
        self.config
            .states
            .iter()
            .map(|s| {
                let ev = s.electoral_votes.or_else(|| table.get(&s.code).copied()).ok_or_else(|| {
                    CliError::Config(format!("no electoral vote count for {} (inline or in electoral_votes)", s.code))
                })?;
                let info =
                    StateInfo { code: s.code.clone(), electoral_votes: ev, actual_republican_share: None, category: s.category };
                info.validate().map_err(|e| CliError::Config(e.to_string()))?;
                Ok(info)
            })
            .collect()
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        let b = &self.config.backend;
        PipelineOptions {
            model_id: b.model_id.clone(),
            system_text: b.system_text.clone(),
            temperature: b.temperature,
            max_tokens: b.max_tokens,
            reask_limit: self.config.pipeline.reask_limit,
            workers: self.config.pipeline.workers,
        }
    }
}

pub fn load_electoral_votes(path: &Path) -> Result<BTreeMap<String, u32>, CliError> {
    let rows = read_keyed_csv(path, &["state", "electoral_votes"])?;
    rows.into_iter()
        .map(|(line, cells)| {
            let ev = cells[1]
                .parse::<u32>()
                .map_err(|_| CliError::Config(format!("{}:{line}: bad electoral vote count {:?}", path.display(), cells[1])))?;
            Ok((cells[0].to_ascii_uppercase(), ev))
        })
        .collect()
}

/// Two-party Republican share per state from percentage columns.
pub fn load_actuals(path: &Path) -> Result<BTreeMap<String, f64>, CliError> {
    let rows = read_keyed_csv(path, &["state", "republican_pct", "democratic_pct"])?;
    rows.into_iter()
        .map(|(line, cells)| {
            let bad = || CliError::Config(format!("{}:{line}: bad percentages for {}", path.display(), cells[0]));
            let r: f64 = cells[1].parse().map_err(|_| bad())?;
            let d: f64 = cells[2].parse().map_err(|_| bad())?;
            if !(r >= 0.0 && d >= 0.0 && r + d > 0.0) {
                return Err(bad());
            }
            Ok((cells[0].to_ascii_uppercase(), r / (r + d)))
        })
        .collect()
}
