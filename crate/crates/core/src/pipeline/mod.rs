//! Per-persona prompting pipelines: rendering, the exchange with the backend,
//! parsing and checkpointed batch runs.

mod parse;
mod prompt;
mod run;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{IdeologyLabel, VoteChoice};

pub use parse::{parse_ideology, parse_vote};
pub use prompt::{
    as_sentence, render_demographics, render_v1, render_v2, render_v3_step1, render_v3_step2, with_reask,
    PromptError, REASK_SENTENCE,
};
pub use run::{run_pipeline, Checkpoint, PipelineError, PipelineOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineVersion {
    /// Demographics only.
    V1,
    /// Demographics plus agendas and candidate backgrounds, one step.
    V2,
    /// Ideology inference, then the vote with the inferred ideology.
    V3,
}

impl PipelineVersion {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::V1 => "v1",
            Self::V2 => "v2",
            Self::V3 => "v3",
        }
    }
}

impl fmt::Display for PipelineVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineVersion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v1" | "1" => Ok(Self::V1),
            "v2" | "2" => Ok(Self::V2),
            "v3" | "3" => Ok(Self::V3),
            other => Err(format!("unknown pipeline version {other:?} (expected v1, v2 or v3)")),
        }
    }
}

/// Wall-clock bounds of one persona's exchange, in Unix milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_ms: u64,
    pub finished_ms: u64,
}

mod vote_or_unparseable {
    use super::VoteChoice;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<VoteChoice>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(choice) => choice.serialize(s),
            None => s.serialize_str("unparseable"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<VoteChoice>, D::Error> {
        let raw = String::deserialize(d)?;
        if raw == "unparseable" {
            return Ok(None);
        }
        VoteChoice::deserialize(serde::de::value::StringDeserializer::<D::Error>::new(raw)).map(Some)
    }
}

/// Outcome of one persona's run. `vote: None` means unparseable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub persona_id: String,
    pub pipeline_version: PipelineVersion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step1_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step1_raw: Option<String>,
    /// Step-1 replies that failed to parse and were re-asked.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub step1_rejected: Vec<String>,
    #[serde(default)]
    pub step1_attempts: u32,
    /// Parsed step-1 label; `None` for V1/V2 and for an unparseable step 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inferred_ideology: Option<IdeologyLabel>,
    pub step2_prompt: String,
    pub step2_raw: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub step2_rejected: Vec<String>,
    pub step2_attempts: u32,
    #[serde(with = "vote_or_unparseable")]
    pub vote: Option<VoteChoice>,
    /// Backend failure that ended this persona early, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub timestamps: Timestamps,
}

impl SimulationRecord {
    /// The record with timestamps zeroed, for comparing runs.
    pub fn without_timestamps(&self) -> Self {
        Self { timestamps: Timestamps::default(), ..self.clone() }
    }
}
