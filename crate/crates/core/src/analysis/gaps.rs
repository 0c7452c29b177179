use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::domain::{Persona, VoteChoice};
use crate::pipeline::SimulationRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Gender,
    Ethnicity,
    #[serde(alias = "age")]
    AgeBand,
    Education,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [Dimension::Gender, Dimension::Ethnicity, Dimension::AgeBand, Dimension::Education];
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::Gender => "gender",
            Dimension::Ethnicity => "ethnicity",
            Dimension::AgeBand => "age_band",
            Dimension::Education => "education",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub dimension: Dimension,
    pub group: String,
    /// Republican minus Democratic share among the group's two-party voters.
    pub reference_gap: f64,
    #[serde(default)]
    pub source_note: String,
}

/// Parses an age band label: "18-29", "30–49", "65+".
fn parse_band(label: &str) -> Option<(u32, u32)> {
    let t = label.trim();
    if let Some(lo) = t.strip_suffix('+') {
        return lo.trim().parse().ok().map(|lo| (lo, u32::MAX));
    }
    let (lo, hi) = t.split_once(['-', '–'])?;
    Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceTable {
    rows: Vec<ReferenceRow>,
}

impl ReferenceTable {
    pub fn new(rows: Vec<ReferenceRow>) -> Result<Self, AnalysisError> {
        for (i, r) in rows.iter().enumerate() {
            if !(-1.0..=1.0).contains(&r.reference_gap) {
                return Err(AnalysisError::Reference(format!("row {}: gap {} outside [-1, 1]", i + 1, r.reference_gap)));
            }
            if r.dimension == Dimension::AgeBand && parse_band(&r.group).is_none() {
                return Err(AnalysisError::Reference(format!("row {}: bad age band {:?}", i + 1, r.group)));
            }
        }
        Ok(Self { rows })
    }

    /// CSV with columns dimension, group, reference_gap, source_note.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, AnalysisError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let rows = rdr.deserialize().collect::<Result<Vec<ReferenceRow>, _>>()?;
        Self::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self, AnalysisError> {
        Self::from_csv(std::fs::File::open(path)?)
    }

    pub fn rows(&self) -> &[ReferenceRow] {
        &self.rows
    }

    fn dimensions(&self) -> Vec<Dimension> {
        let mut d: Vec<Dimension> = self.rows.iter().map(|r| r.dimension).collect();
        d.sort();
        d.dedup();
        d
    }

    /// The reference group a persona falls in, or its raw value when the
    /// table has no matching group.
    fn group_of(&self, dim: Dimension, p: &Persona) -> Result<&ReferenceRow, String> {
        let rows = self.rows.iter().filter(|r| r.dimension == dim);
        match dim {
            Dimension::AgeBand => rows
                .filter(|r| parse_band(&r.group).is_some_and(|(lo, hi)| (lo..=hi).contains(&p.age)))
                .next()
                .ok_or_else(|| format!("age {}", p.age)),
            _ => {
                let value = match dim {
                    Dimension::Gender => &p.gender,
                    Dimension::Ethnicity => &p.ethnicity,
                    _ => &p.education_level,
                };
                let mut rows = rows;
                rows.find(|r| r.group.trim().eq_ignore_ascii_case(value.trim())).ok_or_else(|| value.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupGap {
    pub group: String,
    pub rep_votes: u64,
    pub dem_votes: u64,
    /// P_rep − P_dem over the group's two-party votes.
    pub simulated_gap: f64,
    pub reference_gap: f64,
    pub amplification: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicGapReport {
    pub dimension: Dimension,
    pub groups: Vec<GroupGap>,
    /// Persona values with no reference group, with how many records had them.
    pub unknown_groups: BTreeMap<String, u64>,
    /// Reference groups with no two-party votes.
    pub empty_groups: Vec<String>,
}

/// P_rep − P_dem for two-party counts; `None` when both are zero.
pub fn two_party_gap(rep: u64, dem: u64) -> Option<f64> {
    let n = rep + dem;
    (n > 0).then(|| (rep as f64 - dem as f64) / n as f64)
}

/// Simulated versus reference partisan gaps for every dimension the
/// reference table covers. Records are joined to personas by id; only
/// Democratic and Republican votes count.
pub fn demographic_gaps(
    records: &[SimulationRecord],
    personas: &[Persona],
    reference: &ReferenceTable,
) -> Result<Vec<DemographicGapReport>, AnalysisError> {
    let by_id: HashMap<&str, &Persona> = personas.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut joined = Vec::with_capacity(records.len());
    for r in records {
        let p = by_id.get(r.persona_id.as_str()).ok_or_else(|| AnalysisError::UnknownPersona(r.persona_id.clone()))?;
        match r.vote {
            Some(VoteChoice::Republican) => joined.push((*p, true)),
            Some(VoteChoice::Democratic) => joined.push((*p, false)),
            _ => {}
        }
    }

    let mut reports = Vec::new();
    for dim in reference.dimensions() {
        let mut tallies: BTreeMap<&str, (u64, u64)> = reference
            .rows
            .iter()
            .filter(|r| r.dimension == dim)
            .map(|r| (r.group.as_str(), (0, 0)))
            .collect();
        let mut unknown = BTreeMap::new();
        for &(p, rep) in &joined {
            match reference.group_of(dim, p) {
                Ok(row) => {
                    let t = tallies.get_mut(row.group.as_str()).expect("group registered");
                    if rep {
                        t.0 += 1;
                    } else {
                        t.1 += 1;
                    }
                }
                Err(value) => *unknown.entry(value).or_insert(0) += 1,
            }
        }
        for (value, n) in &unknown {
            warn!("{dim}: {value:?} has no reference group ({n} votes skipped)");
        }
        let mut groups = Vec::new();
        let mut empty_groups = Vec::new();
        for row in reference.rows.iter().filter(|r| r.dimension == dim) {
            let (rep, dem) = tallies[row.group.as_str()];
            match two_party_gap(rep, dem) {
                Some(gap) => groups.push(GroupGap {
                    group: row.group.clone(),
                    rep_votes: rep,
                    dem_votes: dem,
                    simulated_gap: gap,
                    reference_gap: row.reference_gap,
                    amplification: gap - row.reference_gap,
                }),
                None => {
                    warn!("{dim}: group {:?} has no two-party votes", row.group);
                    empty_groups.push(row.group.clone());
                }
            }
        }
        reports.push(DemographicGapReport { dimension: dim, groups, unknown_groups: unknown, empty_groups });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::tests::sample_persona;
    use crate::pipeline::{PipelineVersion, Timestamps};
    use rand::Rng;

    fn record(id: &str, vote: Option<VoteChoice>) -> SimulationRecord {
        SimulationRecord {
            persona_id: id.into(),
            pipeline_version: PipelineVersion::V1,
            step1_prompt: None,
            step1_raw: None,
            step1_rejected: vec![],
            step1_attempts: 0,
            inferred_ideology: None,
            step2_prompt: String::new(),
            step2_raw: String::new(),
            step2_rejected: vec![],
            step2_attempts: 1,
            vote,
            error: None,
            timestamps: Timestamps::default(),
        }
    }

    fn reference() -> ReferenceTable {
        let csv = "dimension,group,reference_gap,source_note\n\
                   gender,Male,0.02,fixture\n\
                   gender,Female,-0.15,fixture\n\
                   age_band,18-29,-0.2,fixture\n\
                   age_band,30-64,0.0,fixture\n\
                   age_band,65+,0.1,fixture\n";
        ReferenceTable::from_csv(csv.as_bytes()).unwrap()
    }

    #[test]
    fn worked_example() {
        // 738 Republican and 262 Democratic men.
        let mut personas = Vec::new();
        let mut records = Vec::new();
        for i in 0..1000 {
            let mut p = sample_persona(&format!("m{i}"));
            p.gender = "Male".into();
            let vote = if i < 738 { VoteChoice::Republican } else { VoteChoice::Democratic };
            records.push(record(&p.id, Some(vote)));
            personas.push(p);
        }
        let reports = demographic_gaps(&records, &personas, &reference()).unwrap();
        let gender = reports.iter().find(|r| r.dimension == Dimension::Gender).unwrap();
        let men = gender.groups.iter().find(|g| g.group == "Male").unwrap();
        assert!((men.simulated_gap - 0.476).abs() < 1e-12);
        assert!((men.amplification - 0.456).abs() < 1e-12);
        assert_eq!(gender.empty_groups, vec!["Female".to_string()]);
    }

    #[test]
    fn even_split_has_zero_gap() {
        let personas: Vec<Persona> = (0..40).map(|i| sample_persona(&format!("p{i}"))).collect();
        let records: Vec<_> = personas
            .iter()
            .enumerate()
            .map(|(i, p)| record(&p.id, Some(if i % 2 == 0 { VoteChoice::Republican } else { VoteChoice::Democratic })))
            .collect();
        for report in demographic_gaps(&records, &personas, &reference()).unwrap() {
            for g in report.groups {
                assert_eq!(g.simulated_gap, 0.0);
            }
        }
    }

    #[test]
    fn unknown_values_are_reported() {
        let mut p = sample_persona("x");
        p.gender = "Nonbinary".into();
        let reports = demographic_gaps(&[record("x", Some(VoteChoice::Democratic))], &[p], &reference()).unwrap();
        let gender = reports.iter().find(|r| r.dimension == Dimension::Gender).unwrap();
        assert_eq!(gender.unknown_groups.get("Nonbinary"), Some(&1));
        assert!(gender.groups.is_empty());
    }

    #[test]
    fn age_bands() {
        assert_eq!(parse_band("18-29"), Some((18, 29)));
        assert_eq!(parse_band("65+"), Some((65, u32::MAX)));
        assert_eq!(parse_band("old"), None);
        let bad = "dimension,group,reference_gap,source_note\nage_band,old,0.1,x\n";
        assert!(ReferenceTable::from_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn matches_brute_force_tally() {
        let genders = ["Male", "Female"];
        let table = reference();
        let mut r = crate::seed::rng(77);
        for trial in 0..1000 {
            let n = r.random_range(1..30);
            let mut personas = Vec::new();
            let mut records = Vec::new();
            for i in 0..n {
                let mut p = sample_persona(&format!("t{trial}-{i}"));
                p.gender = genders[r.random_range(0..2)].into();
                p.age = r.random_range(18..90);
                let vote = [Some(VoteChoice::Democratic), Some(VoteChoice::Republican), Some(VoteChoice::NoPreference), None]
                    [r.random_range(0..4)];
                records.push(record(&p.id, vote));
                personas.push(p);
            }
            let reports = demographic_gaps(&records, &personas, &table).unwrap();
            for report in &reports {
                for g in &report.groups {
                    let in_group = |p: &Persona| match report.dimension {
                        Dimension::Gender => p.gender == g.group,
                        _ => {
                            let (lo, hi) = parse_band(&g.group).unwrap();
                            p.age >= lo && p.age <= hi
                        }
                    };
                    let (mut rep, mut dem) = (0u64, 0u64);
                    for (p, rec) in personas.iter().zip(&records) {
                        if in_group(p) {
                            match rec.vote {
                                Some(VoteChoice::Republican) => rep += 1,
                                Some(VoteChoice::Democratic) => dem += 1,
                                _ => {}
                            }
                        }
                    }
                    assert_eq!((g.rep_votes, g.dem_votes), (rep, dem));
                    assert_eq!(g.simulated_gap, (rep as f64 - dem as f64) / (rep + dem) as f64);
                }
            }
        }
    }
}
