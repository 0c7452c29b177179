use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use thiserror::Error;

use super::parse::{parse_ideology, parse_vote};
use super::prompt::{
    as_sentence, render_demographics, render_v1, render_v2, render_v3_step1, render_v3_step2, with_reask, PromptError,
};
use super::{PipelineVersion, SimulationRecord, Timestamps};
use crate::backend::{BackendError, ChatBackend, ChatRequest, RequestTag, Stage};
use crate::domain::{ElectionContext, IdeologyLabel, Persona};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("invalid election context: {0}")]
    Context(#[from] crate::domain::DomainError),
    #[error("duplicate persona id {0}")]
    DuplicatePersona(String),
    #[error("aborted: {0}")]
    Backend(BackendError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub model_id: String,
    pub system_text: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Extra asks allowed per step after an unparseable reply.
    pub reask_limit: u32,
    pub workers: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            model_id: "mock".into(),
            system_text: None,
            temperature: 0.0,
            max_tokens: 256,
            reask_limit: 2,
            workers: 4,
        }
    }
}

/// Append-only JSONL of completed records.
pub struct Checkpoint {
    path: PathBuf,
    done: HashMap<String, SimulationRecord>,
    file: Mutex<File>,
}

impl Checkpoint {
    /// Starts an empty checkpoint, truncating any existing file.
    pub fn create(path: &Path) -> io::Result<Self> {
        let file = File::create(path)?;
        Ok(Self { path: path.to_path_buf(), done: HashMap::new(), file: Mutex::new(file) })
    }

    /// Loads completed records from an existing file (or starts empty). A
    /// torn final line from an interrupted write is dropped; malformed lines
    /// anywhere else are an error.
    pub fn resume(path: &Path) -> io::Result<Self> {
        let content = match fs::read_to_string(path) {
            Ok(c) => c,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e),
        };
        let lines: Vec<&str> = content.lines().collect();
        let mut done = HashMap::new();
        let mut kept = String::new();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<SimulationRecord>(line) {
                Ok(rec) => {
                    kept.push_str(line);
                    kept.push('\n');
                    done.insert(rec.persona_id.clone(), rec);
                }
                Err(_) if i + 1 == lines.len() => warn!("{}: dropping torn final line", path.display()),
                Err(e) => {
                    return Err(io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)));
                }
            }
        }
        if kept.len() != content.len() {
            fs::write(path, &kept)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { path: path.to_path_buf(), done, file: Mutex::new(file) })
    }

    pub fn open(path: &Path, resume: bool) -> io::Result<Self> {
        if resume {
            Self::resume(path)
        } else {
            Self::create(path)
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn completed(&self) -> usize {
        self.done.len()
    }

    fn lookup(&self, id: &str, version: PipelineVersion) -> Option<&SimulationRecord> {
        self.done.get(id).filter(|r| r.pipeline_version == version)
    }

    fn append(&self, rec: &SimulationRecord) -> io::Result<()> {
        let mut line = serde_json::to_string(rec).map_err(io::Error::other)?;
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(line.as_bytes())?;
        file.flush()
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

struct Asked<T> {
    raw: String,
    rejected: Vec<String>,
    attempts: u32,
    parsed: Option<T>,
}

fn ask<B, T>(
    backend: &B,
    options: &PipelineOptions,
    prompt: &str,
    tag: RequestTag,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Asked<T>, (BackendError, Vec<String>, u32)>
where
    B: ChatBackend + ?Sized,
{
    let mut rejected = Vec::new();
    let mut attempt = 0;
    loop {
        attempt += 1;
        let user_text = if attempt == 1 { prompt.to_string() } else { with_reask(prompt) };
        let req = ChatRequest {
            system_text: options.system_text.clone(),
            user_text,
            temperature: options.temperature,
            max_tokens: options.max_tokens,
            model_id: options.model_id.clone(),
            tag: Some(RequestTag { attempt, ..tag.clone() }),
        };
        let resp = match backend.complete(&req) {
            Ok(r) => r,
            Err(e) => return Err((e, rejected, attempt)),
        };
        let parsed = parse(&resp.text);
        if parsed.is_some() || attempt > options.reask_limit {
            return Ok(Asked { raw: resp.text, rejected, attempts: attempt, parsed });
        }
        rejected.push(resp.text);
    }
}

fn blank_record(p: &Persona, version: PipelineVersion) -> SimulationRecord {
    SimulationRecord {
        persona_id: p.id.clone(),
        pipeline_version: version,
        step1_prompt: None,
        step1_raw: None,
        step1_rejected: Vec::new(),
        step1_attempts: 0,
        inferred_ideology: None,
        step2_prompt: String::new(),
        step2_raw: String::new(),
        step2_rejected: Vec::new(),
        step2_attempts: 0,
        vote: None,
        error: None,
        timestamps: Timestamps::default(),
    }
}

/// Runs one persona. `Err` only for errors that must stop the whole batch.
fn simulate_one<B: ChatBackend + ?Sized>(
    p: &Persona,
    version: PipelineVersion,
    ctx: &ElectionContext,
    backend: &B,
    options: &PipelineOptions,
) -> Result<SimulationRecord, BackendError> {
    let mut rec = blank_record(p, version);
    rec.timestamps.started_ms = now_ms();
    let tag = |stage, ideology| RequestTag { persona_id: p.id.clone(), stage, attempt: 1, ideology };
    let fail = |mut rec: SimulationRecord, e: BackendError| {
        if e.is_fatal() {
            return Err(e);
        }
        warn!("persona {}: {e}", rec.persona_id);
        rec.error = Some(e.to_string());
        rec.timestamps.finished_ms = now_ms();
        Ok(rec)
    };

    let mut hint = None;
    let step2_prompt = match version {
        PipelineVersion::V1 => render_v1(p, ctx),
        PipelineVersion::V2 => render_v2(p, ctx),
        PipelineVersion::V3 => {
            let prompt = render_v3_step1(p, ctx).expect("context checked before the run");
            rec.step1_prompt = Some(prompt.clone());
            match ask(backend, options, &prompt, tag(Stage::Ideology, None), parse_ideology) {
                Ok(asked) => {
                    rec.step1_raw = Some(asked.raw);
                    rec.step1_rejected = asked.rejected;
                    rec.step1_attempts = asked.attempts;
                    rec.inferred_ideology = asked.parsed;
                }
                Err((e, rejected, attempts)) => {
                    rec.step1_rejected = rejected;
                    rec.step1_attempts = attempts;
                    return fail(rec, e);
                }
            }
            // An unreadable self-placement goes forward as "No answer".
            let label = rec.inferred_ideology.unwrap_or(IdeologyLabel::NoAnswer);
            hint = Some(label);
            render_v3_step2(p, Some(label), ctx)
        }
    }
    .expect("prompts checked before the run");
    rec.step2_prompt = step2_prompt;
    match ask(backend, options, &rec.step2_prompt.clone(), tag(Stage::Vote, hint), |t| parse_vote(t, ctx)) {
        Ok(asked) => {
            rec.step2_raw = asked.raw;
            rec.step2_rejected = asked.rejected;
            rec.step2_attempts = asked.attempts;
            rec.vote = asked.parsed;
        }
        Err((e, rejected, attempts)) => {
            rec.step2_rejected = rejected;
            rec.step2_attempts = attempts;
            return fail(rec, e);
        }
    }
    rec.timestamps.finished_ms = now_ms();
    Ok(rec)
}

fn check_inputs(personas: &[Persona], version: PipelineVersion, ctx: &ElectionContext) -> Result<(), PipelineError> {
    ctx.validate()?;
    if version != PipelineVersion::V1 && as_sentence(&ctx.party_agendas).is_empty() {
        return Err(PromptError::MissingContext("party agendas").into());
    }
    if version != PipelineVersion::V1 && as_sentence(&ctx.candidate_bios).is_empty() {
        return Err(PromptError::MissingContext("candidate biographies").into());
    }
    let mut seen = HashSet::new();
    for p in personas {
        render_demographics(p)?;
        if !seen.insert(p.id.as_str()) {
            return Err(PipelineError::DuplicatePersona(p.id.clone()));
        }
    }
    Ok(())
}

/// Runs every persona through the pipeline on a bounded worker pool.
///
/// Records come back in input order. Completed records are appended to the
/// checkpoint as they finish; personas already in it are not re-queried.
/// Records that ended in a non-fatal backend error are returned but not
/// checkpointed, so a resumed run retries them. Authentication and
/// checkpoint I/O failures stop the batch.
pub fn run_pipeline<B: ChatBackend + ?Sized>(
    personas: &[Persona],
    version: PipelineVersion,
    ctx: &ElectionContext,
    backend: &B,
    options: &PipelineOptions,
    checkpoint: Option<&Checkpoint>,
) -> Result<Vec<SimulationRecord>, PipelineError> {
    check_inputs(personas, version, ctx)?;
    let slots: Vec<Mutex<Option<SimulationRecord>>> = personas
        .iter()
        .map(|p| Mutex::new(checkpoint.and_then(|c| c.lookup(&p.id, version)).cloned()))
        .collect();
    let reused = slots.iter().filter(|s| s.lock().unwrap().is_some()).count();
    if reused > 0 {
        info!("resuming: {reused} of {} personas already complete", personas.len());
    }

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let failure: Mutex<Option<PipelineError>> = Mutex::new(None);
    let abort = |e: PipelineError| {
        stop.store(true, Ordering::SeqCst);
        failure.lock().unwrap().get_or_insert(e);
    };
    let workers = options.workers.clamp(1, personas.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                while !stop.load(Ordering::SeqCst) {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= personas.len() {
                        break;
                    }
                    if slots[i].lock().unwrap().is_some() {
                        continue;
                    }
                    let rec = match simulate_one(&personas[i], version, ctx, backend, options) {
                        Ok(rec) => rec,
                        Err(e) => {
                            abort(PipelineError::Backend(e));
                            break;
                        }
                    };
                    if let (Some(cp), None) = (checkpoint, &rec.error) {
                        if let Err(source) = cp.append(&rec) {
                            abort(PipelineError::Checkpoint { path: cp.path().to_path_buf(), source });
                            break;
                        }
                    }
                    *slots[i].lock().unwrap() = Some(rec);
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    Ok(slots.into_iter().map(|s| s.into_inner().unwrap().expect("every slot filled")).collect())
}
