#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use planreward_core::dataset::ScoringRecord;
use planreward_core::lab::{generate_tasks, perturbation_suite, LabConfig, Perturbation};
use planreward_core::{render_response, ActionDictionary, ActionStep, PlanResponse};

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_planreward"));
    cmd.env_remove("PLANREWARD_THREADS");
    cmd
}

pub fn run(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    if let Some(n) = threads {
        cmd.env("PLANREWARD_THREADS", n.to_string());
    }
    cmd.output().expect("binary runs")
}

pub fn render(steps: &[ActionStep]) -> String {
    let resp = PlanResponse::from_steps(
        "A kitchen with a counter.",
        "Do the steps in order.",
        "Follow the plan.",
        steps,
    );
    render_response("Thinking about the goal.", &resp)
}

/// Records built from toy tasks. Candidate 0 is the exact reference; the
/// rest are perturbations rendered through the template.
pub fn perturbed_records(count: usize, seed: u64) -> Vec<ScoringRecord> {
    let cfg = LabConfig {
        min_len: 3,
        max_len: 8,
        ..Default::default()
    };
    generate_tasks(count, &cfg, seed)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let suite = perturbation_suite(
                &t.reference_plan,
                &t.action_dictionary,
                &Perturbation::ALL,
                seed + i as u64,
            );
            ScoringRecord {
                record_id: format!("rec-{i:03}"),
                instruction: format!("instruction {i}"),
                action_dictionary: relabel(&t.action_dictionary, i),
                reference_plan: t.reference_plan.clone(),
                candidates: suite.iter().map(|(_, p)| render(p)).collect(),
            }
        })
        .collect()
}

/// Records whose single-kind candidates all come from one perturbation.
pub fn records_of_kind(count: usize, kind: Perturbation, seed: u64) -> Vec<ScoringRecord> {
    let cfg = LabConfig::default();
    generate_tasks(count, &cfg, seed)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let suite = perturbation_suite(
                &t.reference_plan,
                &t.action_dictionary,
                &[kind, kind],
                seed + i as u64,
            );
            ScoringRecord {
                record_id: format!("rec-{i:03}"),
                instruction: String::new(),
                action_dictionary: relabel(&t.action_dictionary, i),
                reference_plan: t.reference_plan.clone(),
                candidates: suite.iter().map(|(_, p)| render(p)).collect(),
            }
        })
        .collect()
}

/// Loading names each dictionary after its record.
fn relabel(dict: &ActionDictionary, i: usize) -> ActionDictionary {
    ActionDictionary::new(format!("rec-{i:03}"), dict.entries().clone()).unwrap()
}

pub fn write_jsonl(path: &Path, records: &[ScoringRecord]) {
    let text: String = records.iter().map(|r| r.to_json_line() + "\n").collect();
    std::fs::write(path, text).unwrap();
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Column `name` of a CSV file, parsed as f64.
pub fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let idx = rdr
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    rdr.records()
        .map(|r| r.unwrap()[idx].parse().unwrap())
        .collect()
}
