use std::path::{Path, PathBuf};

use electosim_core::backend::{BackendError, ChatBackend, ChatRequest, ChatResponse, Usage};
use electosim_core::ElectionContext;

use super::http_backend;
use crate::config::{BackendKind, Loaded};
use crate::error::CliError;
use crate::output::write_file;

pub const MAX_WORDS: usize = 120;

#[derive(Debug, Clone)]
pub struct SummarizeArgs {
    pub agendas: PathBuf,
    pub bios: PathBuf,
    pub democrat: String,
    pub republican: String,
    pub out: PathBuf,
}

const SOURCE_MARKER: &str = "Source text:\n";

pub fn summary_prompt(kind: &str, text: &str) -> String {
    format!(
        "Summarize the following {kind} in a neutral, factual tone in at most {MAX_WORDS} words. \
         Give each side equal weight, use no evaluative language, and do not add information.\n\n\
         {SOURCE_MARKER}{}",
        text.trim()
    )
}

/// Offline stand-in: returns the leading whole sentences of the source text
/// within the word budget.
pub struct ExtractiveSummarizer;

impl ChatBackend for ExtractiveSummarizer {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        let source = req.user_text.split_once(SOURCE_MARKER).map(|(_, s)| s).unwrap_or(&req.user_text);
        Ok(ChatResponse {
            text: leading_sentences(source, MAX_WORDS),
            usage: Usage::default(),
            latency: Default::default(),
            attempt_count: 1,
        })
    }
}

fn leading_sentences(text: &str, max_words: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut end = 0;
    for (i, w) in words.iter().enumerate().take(max_words) {
        if w.ends_with(['.', '!', '?']) {
            end = i + 1;
        }
    }
    if end == 0 {
        end = words.len().min(max_words);
    }
    words[..end].join(" ")
}

fn read_source(path: &Path) -> Result<String, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Err(CliError::Config(format!("{} is empty", path.display())));
    }
    Ok(text)
}

pub fn run(cfg: &Loaded, args: &SummarizeArgs) -> Result<String, CliError> {
    let agendas = read_source(&args.agendas)?;
    let bios = read_source(&args.bios)?;
    let backend: Box<dyn ChatBackend> = match cfg.config.backend.kind {
        BackendKind::Mock => Box::new(ExtractiveSummarizer),
        BackendKind::Http => Box::new(http_backend(cfg)?),
    };
    let b = &cfg.config.backend;
    let ask = |kind: &str, text: &str| -> Result<String, CliError> {
        let mut req = ChatRequest::new(b.model_id.clone(), summary_prompt(kind, text));
        req.system_text = b.system_text.clone();
        req.temperature = b.temperature;
        req.max_tokens = b.max_tokens.max(4 * MAX_WORDS as u32);
        let reply = backend.complete(&req).map_err(|e| CliError::Runtime(format!("summarizing {kind}: {e}")))?;
        Ok(reply.text.trim().to_string())
    };
    let ctx = ElectionContext {
        year: cfg.config.election_year,
        democratic_candidate: args.democrat.clone(),
        republican_candidate: args.republican.clone(),
        party_agendas: ask("party agendas", &agendas)?,
        candidate_bios: ask("candidate backgrounds", &bios)?,
    };
    ctx.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let mut json = serde_json::to_string_pretty(&ctx).expect("context serializes");
    json.push('\n');
    write_file(&args.out, json.as_bytes())?;
    Ok(format!("wrote context to {}", args.out.display()))
}
