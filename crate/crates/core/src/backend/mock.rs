use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Stage, Usage};
use crate::domain::{IdeologyLabel, Persona};
use crate::seed::{derive_seed, rng};

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedReplies {
    #[serde(default)]
    pub ideology: Vec<String>,
    #[serde(default)]
    pub vote: Vec<String>,
}

/// Response rules for the mock backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum MockRuleset {
    /// Same text for every request.
    Constant { text: String },
    /// Per-persona replies; the n-th ask of a stage gets the n-th entry
    /// (the last entry repeats).
    Scripted { table: BTreeMap<String, ScriptedReplies> },
    /// Ideology from [`demographic_ideology`]; votes Republican iff the
    /// ideology scale is at least `cutoff`.
    IdeologyThreshold { cutoff: u8 },
    /// Ideology as above; votes Republican with probability
    /// `logistic(beta · scale + intercept)` from a per-persona seeded draw.
    SeededProbabilistic { beta: f64, intercept: f64 },
}

/// Deterministic ideology for the mock: the persona's own substantive label
/// when it has one, otherwise an additive score over demographic fields
/// rounded onto the 1–7 scale.
pub fn demographic_ideology(p: &Persona) -> IdeologyLabel {
    if let Some(label) = p.ideology.filter(|l| l.scale().is_some()) {
        return label;
    }
    let lower = |s: &str| s.to_ascii_lowercase();
    let mut score: f64 = 4.0;
    if p.age >= 65 {
        score += 1.0;
    } else if p.age < 30 {
        score -= 1.0;
    }
    let gender = lower(&p.gender);
    if gender.starts_with('m') {
        score += 0.5;
    } else if gender.starts_with('f') || gender.starts_with('w') {
        score -= 0.5;
    }
    let eth = lower(&p.ethnicity);
    if eth.contains("white") {
        score += 1.0;
    } else if eth.contains("black") {
        score -= 2.0;
    } else if eth.contains("hispanic") || eth.contains("latino") || eth.contains("asian") {
        score -= 1.0;
    }
    let edu = lower(&p.education_level);
    if ["bachelor", "master", "doctor", "graduate", "professional"].iter().any(|k| edu.contains(k)) {
        score -= 1.0;
    } else if edu.contains("high school") || edu.contains("less than") {
        score += 1.0;
    }
    if p.has_children && lower(&p.marital_status).contains("married") {
        score += 0.5;
    }
    let scale = score.round().clamp(1.0, 7.0) as u8;
    IdeologyLabel::from_scale(scale).expect("clamped into 1..=7")
}

fn vote_scale(persona: &Persona, hint: Option<IdeologyLabel>) -> u8 {
    hint.and_then(IdeologyLabel::scale)
        .or_else(|| demographic_ideology(persona).scale())
        .expect("demographic ideology is substantive")
}

/// Mock reply for one persona and stage; a pure function of its arguments.
pub fn mock_policy_respond(
    persona: &Persona,
    stage: Stage,
    ideology_hint: Option<IdeologyLabel>,
    attempt: u32,
    ruleset: &MockRuleset,
    seed: u64,
) -> Result<String, BackendError> {
    match ruleset {
        MockRuleset::Constant { text } => Ok(text.clone()),
        MockRuleset::Scripted { table } => {
            let entry = table.get(&persona.id).ok_or_else(|| BackendError::UnknownPersona(persona.id.clone()))?;
            let replies = match stage {
                Stage::Ideology => &entry.ideology,
                Stage::Vote => &entry.vote,
            };
            let idx = (attempt.max(1) as usize - 1).min(replies.len().saturating_sub(1));
            replies.get(idx).cloned().ok_or_else(|| BackendError::UnknownPersona(persona.id.clone()))
        }
        MockRuleset::IdeologyThreshold { cutoff } => Ok(match stage {
            Stage::Ideology => demographic_ideology(persona).text().to_string(),
            Stage::Vote if vote_scale(persona, ideology_hint) >= *cutoff => "Republican".into(),
            Stage::Vote => "Democratic".into(),
        }),
        MockRuleset::SeededProbabilistic { beta, intercept } => Ok(match stage {
            Stage::Ideology => demographic_ideology(persona).text().to_string(),
            Stage::Vote => {
                let scale = vote_scale(persona, ideology_hint) as f64;
                let p = logistic(beta * scale + intercept);
                let label = format!("{}/{}/{}", persona.id, stage.as_str(), attempt);
                let u: f64 = rng(derive_seed(seed, &label)).random();
                if u < p { "Republican" } else { "Democratic" }.into()
            }
        }),
    }
}

/// Offline backend answering from a [`MockRuleset`]. Requests must carry a
/// tag naming a persona it was built with, except under `Constant`.
pub struct MockBackend {
    ruleset: MockRuleset,
    personas: HashMap<String, Persona>,
    seed: u64,
}

impl MockBackend {
    pub fn new(ruleset: MockRuleset, personas: impl IntoIterator<Item = Persona>, seed: u64) -> Self {
        Self { ruleset, personas: personas.into_iter().map(|p| (p.id.clone(), p)).collect(), seed }
    }

    pub fn ruleset(&self) -> &MockRuleset {
        &self.ruleset
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        let text = match (&self.ruleset, &req.tag) {
            (MockRuleset::Constant { text }, _) => text.clone(),
            (_, None) => return Err(BackendError::InvalidRequest("mock backend needs a persona tag".into())),
            (rules, Some(tag)) => {
                let persona =
                    self.personas.get(&tag.persona_id).ok_or_else(|| BackendError::UnknownPersona(tag.persona_id.clone()))?;
                mock_policy_respond(persona, tag.stage, tag.ideology, tag.attempt, rules, self.seed)?
            }
        };
        let completion_tokens = text.split_whitespace().count() as u64;
        let prompt_tokens = req.user_text.split_whitespace().count() as u64;
        Ok(ChatResponse {
            text,
            usage: Usage { prompt_tokens, completion_tokens, total_tokens: prompt_tokens + completion_tokens },
            latency: Duration::ZERO,
            attempt_count: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::RequestTag;
    use crate::domain::tests::sample_persona;

    fn with_scale(scale: u8) -> Persona {
        let mut p = sample_persona("p1");
        p.ideology = IdeologyLabel::from_scale(scale);
        p
    }

    #[test]
    fn constant_rule() {
        let b = MockBackend::new(MockRuleset::Constant { text: "Republican".into() }, [], 0);
        let r = b.complete(&ChatRequest::new("mock", "Who?")).unwrap();
        assert_eq!(r.text, "Republican");
        assert_eq!(r.attempt_count, 1);
    }

    #[test]
    fn threshold_rule() {
        let rules = MockRuleset::IdeologyThreshold { cutoff: 5 };
        assert_eq!(mock_policy_respond(&with_scale(6), Stage::Vote, None, 1, &rules, 0).unwrap(), "Republican");
        assert_eq!(mock_policy_respond(&with_scale(4), Stage::Vote, None, 1, &rules, 0).unwrap(), "Democratic");
        assert_eq!(mock_policy_respond(&with_scale(6), Stage::Ideology, None, 1, &rules, 0).unwrap(), "Somewhat conservative");
        // An inferred ideology overrides the persona's own.
        let hint = Some(IdeologyLabel::VeryLiberal);
        assert_eq!(mock_policy_respond(&with_scale(6), Stage::Vote, hint, 1, &rules, 0).unwrap(), "Democratic");
    }

    #[test]
    fn probabilistic_rule_matches_logistic() {
        let rules = MockRuleset::SeededProbabilistic { beta: 1.5, intercept: -6.0 };
        let p = with_scale(4);
        let reps = (0..10_000u64)
            .filter(|s| mock_policy_respond(&p, Stage::Vote, None, 1, &rules, *s).unwrap() == "Republican")
            .count();
        let freq = reps as f64 / 10_000.0;
        let expected = logistic(1.5 * 4.0 - 6.0);
        assert_eq!(expected, 0.5);
        assert!((freq - expected).abs() <= 0.015, "frequency {freq}");
    }

    #[test]
    fn scripted_rule_walks_attempts() {
        let mut table = BTreeMap::new();
        table.insert("p1".to_string(), ScriptedReplies { ideology: vec![], vote: vec!["???".into(), "Democratic".into()] });
        let rules = MockRuleset::Scripted { table };
        let p = sample_persona("p1");
        assert_eq!(mock_policy_respond(&p, Stage::Vote, None, 1, &rules, 0).unwrap(), "???");
        assert_eq!(mock_policy_respond(&p, Stage::Vote, None, 2, &rules, 0).unwrap(), "Democratic");
        assert_eq!(mock_policy_respond(&p, Stage::Vote, None, 9, &rules, 0).unwrap(), "Democratic");
        let other = sample_persona("zz");
        assert_eq!(
            mock_policy_respond(&other, Stage::Vote, None, 1, &rules, 0),
            Err(BackendError::UnknownPersona("zz".into()))
        );
    }

    #[test]
    fn mock_is_deterministic() {
        let rules = MockRuleset::SeededProbabilistic { beta: 1.0, intercept: -4.0 };
        let b = MockBackend::new(rules, [sample_persona("p1")], 5);
        let mut req = ChatRequest::new("mock", "q");
        req.tag = Some(RequestTag { persona_id: "p1".into(), stage: Stage::Vote, attempt: 1, ideology: None });
        let first = b.complete(&req).unwrap().text;
        for _ in 0..5 {
            assert_eq!(b.complete(&req).unwrap().text, first);
        }
    }

    #[test]
    fn demographic_ideology_is_substantive() {
        let mut p = sample_persona("p1");
        for age in [18, 40, 70] {
            p.age = age;
            assert!(demographic_ideology(&p).scale().is_some());
        }
        p.ideology = Some(IdeologyLabel::NoAnswer);
        assert!(demographic_ideology(&p).scale().is_some());
    }
}
