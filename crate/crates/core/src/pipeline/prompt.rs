//! Prompt templates for the three pipeline versions.

use thiserror::Error;

use crate::domain::{state_name, validate_persona, ElectionContext, IdeologyLabel, Persona, Violation};

pub const ANSWER_INSTRUCTION: &str = "Please answer the following question as if you were the resident:";
pub const OPTIONS_LINE: &str = "Options: Democratic, Republican, No Preference";
pub const IDEOLOGY_QUESTION: &str = "When it comes to politics, would you describe yourself as:";
/// Appended to a prompt when the previous reply could not be parsed.
pub const REASK_SENTENCE: &str = "Please answer with exactly one of the listed options.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("persona {persona} is missing {field}")]
    MissingField { persona: String, field: String },
    #[error("election context has no {0}")]
    MissingContext(&'static str),
    #[error("no ideology to place in the step-2 prompt")]
    MissingIdeology,
}

/// The eleven demographic attributes as one comma-separated clause, in order:
/// age, gender, ethnicity, marital status, household size, presence of
/// children, education level, occupation, individual income, family income
/// and place of residence.
pub fn render_demographics(p: &Persona) -> Result<String, PromptError> {
    if let Some(v) = validate_persona(p).into_iter().find(|v| matches!(v, Violation::MissingField(_))) {
        let Violation::MissingField(field) = v else { unreachable!() };
        return Err(PromptError::MissingField { persona: p.id.clone(), field: field.to_string() });
    }
    let residence = state_name(&p.residence_state).unwrap_or(&p.residence_state);
    Ok(format!(
        "age {}, gender {}, ethnicity {}, marital status {}, household size {}, presence of children {}, \
         education level {}, occupation {}, individual income {}, family income {}, and place of residence {}",
        p.age,
        p.gender,
        p.ethnicity,
        p.marital_status,
        p.household_size,
        if p.has_children { "yes" } else { "no" },
        p.education_level,
        p.occupation,
        p.individual_income,
        p.family_income,
        residence,
    ))
}

/// Trims a context block and closes it with a period if it has no terminal
/// punctuation.
pub fn as_sentence(block: &str) -> String {
    let t = block.trim();
    match t.chars().last() {
        None => String::new(),
        Some('.' | '!' | '?' | '"' | '\'' | ')' | ':') => t.to_string(),
        Some(_) => format!("{t}."),
    }
}

fn vote_question(ctx: &ElectionContext) -> String {
    format!(
        "{ANSWER_INSTRUCTION}\n1. As of today, will you vote for the Democratic Party ({}), the Republican Party ({}), \
         or do you have no preference?\n{OPTIONS_LINE}",
        ctx.democratic_candidate.trim(),
        ctx.republican_candidate.trim()
    )
}

fn agendas(ctx: &ElectionContext) -> Result<String, PromptError> {
    let s = as_sentence(&ctx.party_agendas);
    if s.is_empty() {
        return Err(PromptError::MissingContext("party agendas"));
    }
    Ok(s)
}

fn bios(ctx: &ElectionContext) -> Result<String, PromptError> {
    let s = as_sentence(&ctx.candidate_bios);
    if s.is_empty() {
        return Err(PromptError::MissingContext("candidate biographies"));
    }
    Ok(s)
}

/// Demographics-only prompt.
pub fn render_v1(p: &Persona, ctx: &ElectionContext) -> Result<String, PromptError> {
    let demo = render_demographics(p)?;
    Ok(format!("You are persona {demo}. The current year is {}.\n\n{}", ctx.year, vote_question(ctx)))
}

/// Single-step prompt with the party agendas and candidate backgrounds.
pub fn render_v2(p: &Persona, ctx: &ElectionContext) -> Result<String, PromptError> {
    let demo = render_demographics(p)?;
    let (agendas, bios) = (agendas(ctx)?, bios(ctx)?);
    Ok(format!(
        "You are persona {demo}. The current year is {}. {agendas} {bios}\n\n{}",
        ctx.year,
        vote_question(ctx)
    ))
}

/// Two-step pipeline, step 1: ideology self-placement given the agendas.
pub fn render_v3_step1(p: &Persona, ctx: &ElectionContext) -> Result<String, PromptError> {
    let demo = render_demographics(p)?;
    let agendas = agendas(ctx)?;
    let options: Vec<&str> = IdeologyLabel::ALL.iter().map(|l| l.text()).collect();
    Ok(format!(
        "You are a persona with {demo}. The current year is {}. {agendas}\n\n{IDEOLOGY_QUESTION}\n{}",
        ctx.year,
        options.join("\n")
    ))
}

/// Two-step pipeline, step 2: the vote question with the inferred ideology
/// folded into the persona.
pub fn render_v3_step2(
    p: &Persona,
    ideology: Option<IdeologyLabel>,
    ctx: &ElectionContext,
) -> Result<String, PromptError> {
    let ideology = ideology.ok_or(PromptError::MissingIdeology)?;
    let demo = render_demographics(p)?;
    let (agendas, bios) = (agendas(ctx)?, bios(ctx)?);
    Ok(format!(
        "You are a persona with {demo}. Your position on the conservative-liberal spectrum is {}. \
         The current year is {}. {agendas} {bios}\n\n{}",
        ideology.text(),
        ctx.year,
        vote_question(ctx)
    ))
}

pub fn with_reask(prompt: &str) -> String {
    format!("{prompt}\n\n{REASK_SENTENCE}")
}
