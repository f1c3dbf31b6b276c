//! JSONL scoring datasets in, reward CSVs out.
//!
//! Input lines look like:
//!
//! ```json
//! {"record_id": "r1", "instruction": "put the apple in the fridge",
//!  "action_dictionary": {"3": "find the apple", "8": "pick up the apple"},
//!  "reference_plan": [{"action_id": 3, "action_name": "find the apple"}],
//!  "candidates": ["<think>...</think><answer>{...}</answer>"]}
//! ```
//!
//! Malformed lines never abort a load; they are collected with their line
//! numbers so every input line is accounted for.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{ActionDictionary, ActionStep, ReferencePlan, RewardBreakdown};
use crate::scoring::{score_candidate, ScoringConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringRecord {
    pub record_id: String,
    pub instruction: String,
    pub action_dictionary: ActionDictionary,
    pub reference_plan: ReferencePlan,
    pub candidates: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    record_id: String,
    instruction: String,
    action_dictionary: BTreeMap<u64, String>,
    reference_plan: Vec<ActionStep>,
    candidates: Vec<String>,
}

impl ScoringRecord {
    fn from_line(line: RecordLine) -> Result<Self> {
        if line.candidates.is_empty() {
            return Err(Error::InvalidInput("candidates must not be empty".into()));
        }
        let action_dictionary =
            ActionDictionary::new(line.record_id.clone(), line.action_dictionary)?;
        let steps = line
            .reference_plan
            .into_iter()
            .map(|s| ActionStep::new(s.action_id, &s.name))
            .collect::<Result<_>>()?;
        Ok(Self {
            record_id: line.record_id,
            instruction: line.instruction,
            action_dictionary,
            reference_plan: ReferencePlan::new(steps),
            candidates: line.candidates,
        })
    }

    pub fn to_json_line(&self) -> String {
        let line = RecordLine {
            record_id: self.record_id.clone(),
            instruction: self.instruction.clone(),
            action_dictionary: self.action_dictionary.entries().clone(),
            reference_plan: self.reference_plan.steps.clone(),
            candidates: self.candidates.clone(),
        };
        serde_json::to_string(&line).expect("record serializes")
    }

    /// Reference steps whose name does not match the dictionary entry for
    /// their id.
    pub fn unresolved_reference_steps(&self) -> Vec<usize> {
        self.reference_plan
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                self.action_dictionary
                    .get(s.action_id)
                    .is_none_or(|n| crate::model::normalize_name(n) != s.name)
            })
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadReport {
    pub records: Vec<ScoringRecord>,
    pub rejects: Vec<Reject>,
    /// Non-fatal findings, e.g. reference steps missing from the dictionary.
    pub warnings: Vec<String>,
    pub line_count: usize,
}

/// Parses JSONL text. Line numbers are 1-based.
pub fn parse_records(text: &[u8]) -> LoadReport {
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    let mut lines: Vec<&[u8]> = text.split(|&b| b == b'\n').collect();
    if lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    report.line_count = lines.len();
    for (i, raw) in lines.into_iter().enumerate() {
        let line_no = i + 1;
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let parsed = std::str::from_utf8(raw)
            .map_err(|e| Error::InvalidInput(format!("invalid utf-8: {e}")))
            .and_then(|s| {
                if s.trim().is_empty() {
                    return Err(Error::InvalidInput("empty line".into()));
                }
                Ok(serde_json::from_str::<RecordLine>(s)?)
            })
            .and_then(ScoringRecord::from_line)
            .and_then(|r| {
                if seen.insert(r.record_id.clone()) {
                    Ok(r)
                } else {
                    Err(Error::InvalidInput(format!(
                        "duplicate record_id {:?}",
                        r.record_id
                    )))
                }
            });
        match parsed {
            Ok(record) => {
                let unresolved = record.unresolved_reference_steps();
                if !unresolved.is_empty() {
                    report.warnings.push(format!(
                        "line {line_no}: record {} reference steps {unresolved:?} do not match the dictionary",
                        record.record_id
                    ));
                }
                report.records.push(record);
            }
            Err(e) => report.rejects.push(Reject {
                line: line_no,
                error: e.to_string(),
            }),
        }
    }
    report
}

/// Reads a JSONL dataset. Fails if the file is unreadable or has no valid
/// record.
pub fn load_records(path: impl AsRef<Path>) -> Result<LoadReport> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let report = parse_records(&bytes);
    if report.records.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    Ok(report)
}

pub fn save_records(records: &[ScoringRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_rejects(rejects: &[Reject], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in rejects {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Scores every candidate of every record, in record order.
pub fn score_records(records: &[ScoringRecord], cfg: &ScoringConfig) -> Vec<Vec<RewardBreakdown>> {
    records
        .par_iter()
        .map(|r| {
            r.candidates
                .iter()
                .map(|c| score_candidate(c, &r.action_dictionary, &r.reference_plan.steps, cfg).1)
                .collect()
        })
        .collect()
}

pub const REWARD_COLUMNS: [&str; 12] = [
    "record_id",
    "candidate_index",
    "r_section",
    "r_type",
    "r_validity",
    "r_format",
    "r_lcs",
    "r_step",
    "r_prefix",
    "r_overall",
    "lcs_k",
    "ref_n",
];

/// Per-component means over all scored candidates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardSummary {
    pub rows: usize,
    pub mean: RewardBreakdown,
}

/// One parsed row of a reward CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardRow {
    pub record_id: String,
    pub candidate_index: usize,
    pub breakdown: RewardBreakdown,
}

pub fn rewards_to_csv(
    records: &[ScoringRecord],
    breakdowns: &[Vec<RewardBreakdown>],
) -> Result<(String, RewardSummary)> {
    if records.len() != breakdowns.len()
        || records
            .iter()
            .zip(breakdowns)
            .any(|(r, b)| r.candidates.len() != b.len())
    {
        return Err(Error::InvalidInput(
            "need exactly one breakdown per record candidate".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REWARD_COLUMNS)?;
    let mut sum = [0.0f64; 8];
    let mut rows = 0usize;
    for (record, bs) in records.iter().zip(breakdowns) {
        for (i, b) in bs.iter().enumerate() {
            let values = component_values(b);
            for (s, v) in sum.iter_mut().zip(values) {
                *s += v;
            }
            rows += 1;
            let mut fields = vec![record.record_id.clone(), i.to_string()];
            fields.extend(values.iter().map(|v| format!("{v:.6}")));
            fields.push(b.lcs_length.to_string());
            fields.push(b.reference_length.to_string());
            w.write_record(&fields)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mean = if rows == 0 {
        RewardBreakdown::default()
    } else {
        let m = sum.map(|s| s / rows as f64);
        RewardBreakdown {
            r_section: m[0],
            r_type: m[1],
            r_validity: m[2],
            r_format: m[3],
            r_lcs: m[4],
            r_step: m[5],
            r_prefix: m[6],
            r_overall: m[7],
            lcs_length: 0,
            reference_length: 0,
        }
    };
    Ok((
        String::from_utf8(bytes).expect("csv output is utf-8"),
        RewardSummary { rows, mean },
    ))
}

fn component_values(b: &RewardBreakdown) -> [f64; 8] {
    [
        b.r_section,
        b.r_type,
        b.r_validity,
        b.r_format,
        b.r_lcs,
        b.r_step,
        b.r_prefix,
        b.r_overall,
    ]
}

/// Writes the reward CSV: header plus one row per (record, candidate).
pub fn write_rewards(
    records: &[ScoringRecord],
    breakdowns: &[Vec<RewardBreakdown>],
    path: impl AsRef<Path>,
) -> Result<RewardSummary> {
    let path = path.as_ref();
    let (text, summary) = rewards_to_csv(records, breakdowns)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(summary)
}

pub fn read_rewards(path: impl AsRef<Path>) -> Result<Vec<RewardRow>> {
    let path = path.as_ref();
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_rewards(&text)
}

pub fn parse_rewards(text: &[u8]) -> Result<Vec<RewardRow>> {
    let mut rdr = csv::Reader::from_reader(text);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != REWARD_COLUMNS {
        return Err(Error::InvalidInput(format!(
            "unexpected reward CSV header: {headers:?}"
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::InvalidInput(format!("row {}: bad {what}", i + 2));
        let f =
            |j: usize| -> Result<f64> { rec[j].parse::<f64>().map_err(|_| bad(REWARD_COLUMNS[j])) };
        let u = |j: usize| -> Result<usize> {
            rec[j].parse::<usize>().map_err(|_| bad(REWARD_COLUMNS[j]))
        };
        rows.push(RewardRow {
            record_id: rec[0].to_owned(),
            candidate_index: u(1)?,
            breakdown: RewardBreakdown {
                r_section: f(2)?,
                r_type: f(3)?,
                r_validity: f(4)?,
                r_format: f(5)?,
                r_lcs: f(6)?,
                r_step: f(7)?,
                r_prefix: f(8)?,
                r_overall: f(9)?,
                lcs_length: u(10)?,
                reference_length: u(11)?,
            },
        });
    }
    Ok(rows)
}
