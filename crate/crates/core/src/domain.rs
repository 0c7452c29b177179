//! Shared vocabulary: personas, ideology labels, vote choices, election
//! context and per-state metadata, plus the persona file formats.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Two-letter codes of the 50 states plus DC, with display names.
pub const US_STATES: [(&str, &str); 51] = [
    ("AL", "Alabama"),
    ("AK", "Alaska"),
    ("AZ", "Arizona"),
    ("AR", "Arkansas"),
    ("CA", "California"),
    ("CO", "Colorado"),
    ("CT", "Connecticut"),
    ("DE", "Delaware"),
    ("DC", "District of Columbia"),
    ("FL", "Florida"),
    ("GA", "Georgia"),
    ("HI", "Hawaii"),
    ("ID", "Idaho"),
    ("IL", "Illinois"),
    ("IN", "Indiana"),
    ("IA", "Iowa"),
    ("KS", "Kansas"),
    ("KY", "Kentucky"),
    ("LA", "Louisiana"),
    ("ME", "Maine"),
    ("MD", "Maryland"),
    ("MA", "Massachusetts"),
    ("MI", "Michigan"),
    ("MN", "Minnesota"),
    ("MS", "Mississippi"),
    ("MO", "Missouri"),
    ("MT", "Montana"),
    ("NE", "Nebraska"),
    ("NV", "Nevada"),
    ("NH", "New Hampshire"),
    ("NJ", "New Jersey"),
    ("NM", "New Mexico"),
    ("NY", "New York"),
    ("NC", "North Carolina"),
    ("ND", "North Dakota"),
    ("OH", "Ohio"),
    ("OK", "Oklahoma"),
    ("OR", "Oregon"),
    ("PA", "Pennsylvania"),
    ("RI", "Rhode Island"),
    ("SC", "South Carolina"),
    ("SD", "South Dakota"),
    ("TN", "Tennessee"),
    ("TX", "Texas"),
    ("UT", "Utah"),
    ("VT", "Vermont"),
    ("VA", "Virginia"),
    ("WA", "Washington"),
    ("WV", "West Virginia"),
    ("WI", "Wisconsin"),
    ("WY", "Wyoming"),
];

pub fn is_state_code(code: &str) -> bool {
    US_STATES.iter().any(|(c, _)| *c == code)
}

pub fn state_name(code: &str) -> Option<&'static str> {
    US_STATES.iter().find(|(c, _)| *c == code).map(|(_, n)| *n)
}

/// Income as stored in the source data: a numeric USD/year amount or a
/// labelled band such as `"$50,000-$74,999"`. Prompts render it as stored.
#[derive(Debug, Clone, PartialEq)]
pub enum Income {
    Amount(f64),
    Band(String),
}

impl Income {
    pub fn parse(raw: &str) -> Income {
        let trimmed = raw.trim();
        match trimmed.parse::<f64>() {
            Ok(v) if v.is_finite() => Income::Amount(v),
            _ => Income::Band(trimmed.to_string()),
        }
    }

    fn is_blank(&self) -> bool {
        matches!(self, Income::Band(b) if b.trim().is_empty())
    }
}

impl fmt::Display for Income {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Income::Amount(v) if v.fract() == 0.0 && v.abs() < 1e15 => write!(f, "{}", *v as i64),
            Income::Amount(v) => write!(f, "{v}"),
            Income::Band(b) => f.write_str(b),
        }
    }
}

impl Serialize for Income {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Income::Amount(v) => s.serialize_f64(*v),
            Income::Band(b) => s.serialize_str(b),
        }
    }
}

impl<'de> Deserialize<'de> for Income {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Num(v) => Income::Amount(v),
            Raw::Text(t) => Income::Band(t),
        })
    }
}

/// Self-placement on the liberal–conservative spectrum, as offered by the
/// ideology question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdeologyLabel {
    #[serde(alias = "No answer")]
    NoAnswer,
    #[serde(alias = "Very liberal")]
    VeryLiberal,
    #[serde(alias = "Somewhat liberal")]
    SomewhatLiberal,
    #[serde(alias = "Closer to liberal")]
    CloserToLiberal,
    #[serde(alias = "Moderate")]
    Moderate,
    #[serde(alias = "Closer to conservative")]
    CloserToConservative,
    #[serde(alias = "Somewhat conservative")]
    SomewhatConservative,
    #[serde(alias = "Very conservative")]
    VeryConservative,
}

impl IdeologyLabel {
    /// All eight options in the order the ideology question lists them.
    pub const ALL: [IdeologyLabel; 8] = [
        IdeologyLabel::NoAnswer,
        IdeologyLabel::VeryLiberal,
        IdeologyLabel::SomewhatLiberal,
        IdeologyLabel::CloserToLiberal,
        IdeologyLabel::Moderate,
        IdeologyLabel::CloserToConservative,
        IdeologyLabel::SomewhatConservative,
        IdeologyLabel::VeryConservative,
    ];

    /// Option text exactly as it appears in prompts.
    pub fn text(self) -> &'static str {
        match self {
            IdeologyLabel::NoAnswer => "No answer",
            IdeologyLabel::VeryLiberal => "Very liberal",
            IdeologyLabel::SomewhatLiberal => "Somewhat liberal",
            IdeologyLabel::CloserToLiberal => "Closer to liberal",
            IdeologyLabel::Moderate => "Moderate",
            IdeologyLabel::CloserToConservative => "Closer to conservative",
            IdeologyLabel::SomewhatConservative => "Somewhat conservative",
            IdeologyLabel::VeryConservative => "Very conservative",
        }
    }

    /// 1 = very liberal ... 7 = very conservative; `NoAnswer` has no value.
    pub fn scale(self) -> Option<u8> {
        match self {
            IdeologyLabel::NoAnswer => None,
            IdeologyLabel::VeryLiberal => Some(1),
            IdeologyLabel::SomewhatLiberal => Some(2),
            IdeologyLabel::CloserToLiberal => Some(3),
            IdeologyLabel::Moderate => Some(4),
            IdeologyLabel::CloserToConservative => Some(5),
            IdeologyLabel::SomewhatConservative => Some(6),
            IdeologyLabel::VeryConservative => Some(7),
        }
    }

    pub fn from_scale(scale: u8) -> Option<IdeologyLabel> {
        if (1..=7).contains(&scale) {
            Some(IdeologyLabel::ALL[scale as usize])
        } else {
            None
        }
    }

    pub fn from_text(text: &str) -> Option<IdeologyLabel> {
        let t = text.trim();
        IdeologyLabel::ALL.into_iter().find(|l| {
            l.text().eq_ignore_ascii_case(t)
                || serde_json::to_value(l).ok().and_then(|v| v.as_str().map(|s| s == t)) == Some(true)
        })
    }
}

impl fmt::Display for IdeologyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

pub fn ideology_to_scale(label: IdeologyLabel) -> Option<u8> {
    label.scale()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteChoice {
    Democratic,
    Republican,
    NoPreference,
}

impl VoteChoice {
    pub const ALL: [VoteChoice; 3] = [VoteChoice::Democratic, VoteChoice::Republican, VoteChoice::NoPreference];

    /// Option text as listed on the prompt's options line.
    pub fn text(self) -> &'static str {
        match self {
            VoteChoice::Democratic => "Democratic",
            VoteChoice::Republican => "Republican",
            VoteChoice::NoPreference => "No Preference",
        }
    }
}

/// One simulated voter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    pub age: u32,
    pub gender: String,
    pub ethnicity: String,
    pub marital_status: String,
    pub household_size: u32,
    pub has_children: bool,
    pub education_level: String,
    pub occupation: String,
    pub individual_income: Income,
    pub family_income: Income,
    pub residence_state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ideology: Option<IdeologyLabel>,
    /// Columns not in the schema. Carried through file round trips, never read.
    #[serde(flatten, default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Underage(u32),
    EmptyHousehold,
    UnknownState(String),
    MissingField(&'static str),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Underage(a) => write!(f, "age ≥ 18 (got {a})"),
            Violation::EmptyHousehold => f.write_str("household_size ≥ 1"),
            Violation::UnknownState(s) => write!(f, "unknown state code {s:?}"),
            Violation::MissingField(name) => write!(f, "missing field {name}"),
        }
    }
}

pub fn validate_persona(p: &Persona) -> Vec<Violation> {
    let mut out = Vec::new();
    if p.id.trim().is_empty() {
        out.push(Violation::MissingField("id"));
    }
    if p.age < 18 {
        out.push(Violation::Underage(p.age));
    }
    if p.household_size < 1 {
        out.push(Violation::EmptyHousehold);
    }
    let text_fields: [(&'static str, &str); 5] = [
        ("gender", &p.gender),
        ("ethnicity", &p.ethnicity),
        ("marital_status", &p.marital_status),
        ("education_level", &p.education_level),
        ("occupation", &p.occupation),
    ];
    for (name, value) in text_fields {
        if value.trim().is_empty() {
            out.push(Violation::MissingField(name));
        }
    }
    if p.individual_income.is_blank() {
        out.push(Violation::MissingField("individual_income"));
    }
    if p.family_income.is_blank() {
        out.push(Violation::MissingField("family_income"));
    }
    if p.residence_state.trim().is_empty() {
        out.push(Violation::MissingField("residence_state"));
    } else if !is_state_code(&p.residence_state) {
        out.push(Violation::UnknownState(p.residence_state.clone()));
    }
    out
}

/// Year-specific text handed to the prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectionContext {
    pub year: i32,
    pub democratic_candidate: String,
    pub republican_candidate: String,
    #[serde(default)]
    pub party_agendas: String,
    #[serde(default)]
    pub candidate_bios: String,
}

impl ElectionContext {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.year <= 1900 {
            return Err(DomainError::Invalid(format!("election year {} must be after 1900", self.year)));
        }
        if self.democratic_candidate.trim().is_empty() || self.republican_candidate.trim().is_empty() {
            return Err(DomainError::Invalid("both candidate names are required".into()));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, DomainError> {
        let text = std::fs::read_to_string(path)?;
        let ctx: ElectionContext =
            serde_json::from_str(&text).map_err(|e| DomainError::Parse { line: e.line() as u64, message: e.to_string() })?;
        ctx.validate()?;
        Ok(ctx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateCategory {
    Red,
    Blue,
    Swing,
}

impl fmt::Display for StateCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateCategory::Red => "red",
            StateCategory::Blue => "blue",
            StateCategory::Swing => "swing",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateInfo {
    pub code: String,
    pub electoral_votes: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual_republican_share: Option<f64>,
    pub category: StateCategory,
}

impl StateInfo {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !is_state_code(&self.code) {
            return Err(DomainError::Invalid(format!("unknown state code {:?}", self.code)));
        }
        if self.electoral_votes < 3 {
            return Err(DomainError::Invalid(format!(
                "{}: electoral votes must be at least 3, got {}",
                self.code, self.electoral_votes
            )));
        }
        if let Some(r) = self.actual_republican_share {
            if !(0.0..=1.0).contains(&r) {
                return Err(DomainError::Invalid(format!("{}: actual share {r} outside [0, 1]", self.code)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Persona CSV column order.
pub const PERSONA_COLUMNS: [&str; 13] = [
    "id",
    "age",
    "gender",
    "ethnicity",
    "marital_status",
    "household_size",
    "has_children",
    "education_level",
    "occupation",
    "individual_income",
    "family_income",
    "residence_state",
    "ideology",
];

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "y" => Some(true),
        "false" | "no" | "0" | "n" => Some(false),
        _ => None,
    }
}

fn ideology_cell(label: Option<IdeologyLabel>) -> String {
    match label {
        None => String::new(),
        Some(l) => serde_json::to_value(l).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
    }
}

/// Reads personas from CSV. Unknown columns are kept in `Persona::extra`;
/// lines starting with `#` are skipped.
pub fn read_personas_csv<R: Read>(reader: R) -> Result<Vec<Persona>, DomainError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    for required in &PERSONA_COLUMNS[..12] {
        if !headers.iter().any(|h| h == *required) {
            return Err(DomainError::Parse { line: 1, message: format!("missing column {required:?}") });
        }
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let mut cells: BTreeMap<&str, &str> = BTreeMap::new();
        for (h, v) in headers.iter().zip(row.iter()) {
            cells.insert(h, v);
        }
        let get = |name: &str| cells.get(name).copied().unwrap_or("");
        let bad = |name: &str, v: &str| DomainError::Parse { line, message: format!("invalid {name} value {v:?}") };
        let age = get("age").trim().parse::<u32>().map_err(|_| bad("age", get("age")))?;
        let household = get("household_size")
            .trim()
            .parse::<u32>()
            .map_err(|_| bad("household_size", get("household_size")))?;
        let children = parse_bool(get("has_children")).ok_or_else(|| bad("has_children", get("has_children")))?;
        let ideology = match get("ideology").trim() {
            "" => None,
            t => Some(IdeologyLabel::from_text(t).ok_or_else(|| bad("ideology", t))?),
        };
        let extra = cells
            .iter()
            .filter(|(k, _)| !PERSONA_COLUMNS.contains(k))
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.to_string())))
            .collect();
        out.push(Persona {
            id: get("id").to_string(),
            age,
            gender: get("gender").to_string(),
            ethnicity: get("ethnicity").to_string(),
            marital_status: get("marital_status").to_string(),
            household_size: household,
            has_children: children,
            education_level: get("education_level").to_string(),
            occupation: get("occupation").to_string(),
            individual_income: Income::parse(get("individual_income")),
            family_income: Income::parse(get("family_income")),
            residence_state: get("residence_state").to_string(),
            ideology,
            extra,
        });
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> DomainError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    DomainError::Parse { line, message: e.to_string() }
}

/// Writes personas as CSV. Extra columns present on any persona are appended
/// after the schema columns in sorted order.
pub fn write_personas_csv<W: Write>(writer: W, personas: &[Persona]) -> Result<(), DomainError> {
    let mut extra_cols: Vec<&str> = personas.iter().flat_map(|p| p.extra.keys().map(String::as_str)).collect();
    extra_cols.sort_unstable();
    extra_cols.dedup();
    let mut wtr = csv::Writer::from_writer(writer);
    let header: Vec<&str> = PERSONA_COLUMNS.iter().copied().chain(extra_cols.iter().copied()).collect();
    wtr.write_record(&header).map_err(csv_err)?;
    for p in personas {
        let mut row = vec![
            p.id.clone(),
            p.age.to_string(),
            p.gender.clone(),
            p.ethnicity.clone(),
            p.marital_status.clone(),
            p.household_size.to_string(),
            p.has_children.to_string(),
            p.education_level.clone(),
            p.occupation.clone(),
            income_cell(&p.individual_income),
            income_cell(&p.family_income),
            p.residence_state.clone(),
            ideology_cell(p.ideology),
        ];
        for col in &extra_cols {
            row.push(match p.extra.get(*col) {
                None => String::new(),
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(v) => v.to_string(),
            });
        }
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

fn income_cell(income: &Income) -> String {
    match income {
        // `{:?}` keeps the shortest round-tripping representation.
        Income::Amount(v) => format!("{v:?}"),
        Income::Band(b) => b.clone(),
    }
}

pub fn read_personas_json<R: Read>(reader: R) -> Result<Vec<Persona>, DomainError> {
    serde_json::from_reader(reader).map_err(|e| DomainError::Parse { line: e.line() as u64, message: e.to_string() })
}

pub fn write_personas_json<W: Write>(writer: W, personas: &[Persona]) -> Result<(), DomainError> {
    serde_json::to_writer_pretty(writer, personas).map_err(|e| DomainError::Invalid(e.to_string()))
}

/// Loads a persona file, choosing the format from the extension (`.json` or CSV).
pub fn load_personas(path: &Path) -> Result<Vec<Persona>, DomainError> {
    let file = std::fs::File::open(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => read_personas_json(file),
        _ => read_personas_csv(file),
    }
}
