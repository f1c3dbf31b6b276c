//! Command implementations behind the `planreward` binary.
//!
//! Every command returns a process exit code: 0 on success, 1 when the
//! input fails validation, 2 on I/O errors and 3 on configuration or
//! numeric errors. Summaries go to stdout, artifacts to files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use planreward_core::dataset::{self, load_records, score_records, RewardRow, REWARD_COLUMNS};
use planreward_core::lab::{
    compare_rewards, generate_tasks, train, CompareConfig, ToyPolicy, TrainReport,
};
use planreward_core::{
    group_advantages, score_candidate, AccuracyVariant, Error, RunConfig, ScoringConfig,
};

pub const THREADS_ENV: &str = "PLANREWARD_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "planreward",
    version,
    about = "Rule-based rewards for structured plan outputs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse every candidate and report format diagnostics.
    Validate {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score a dataset and write the reward CSV.
    Score {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Append group-normalized advantages to a reward CSV.
    Advantages {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "record_id", value_parser = ["record_id"])]
        group_by: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train one toy policy per accuracy variant and tabulate perturbations.
    Compare {
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the toy policy and write its report CSV.
    Train {
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Config file plus per-field overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<AccuracyVariant>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub clip_eps: Option<f64>,
    #[arg(long)]
    pub kl_coef: Option<f64>,
}

impl CommonArgs {
    /// Loads the config file (or defaults), applies overrides, validates.
    pub fn effective_config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.variant {
            cfg.accuracy.variant = v;
        }
        if let Some(s) = self.steps {
            cfg.lab.steps = s;
        }
        if let Some(lr) = self.lr {
            cfg.lab.lr = lr;
        }
        if let Some(n) = self.group_size {
            cfg.grpo.group_size = n;
        }
        if let Some(e) = self.clip_eps {
            cfg.grpo.clip_epsilon = e;
        }
        if let Some(k) = self.kl_coef {
            cfg.grpo.kl_coef = k;
        }
        cfg.validate()?;
        if cfg.lab.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        Ok(cfg)
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => 2,
        Error::Config(_) | Error::NonFinite(_) => 3,
        Error::InvalidInput(_) | Error::EmptyDataset(_) | Error::Csv(_) | Error::Json(_) => 1,
    }
}

/// Worker count from `PLANREWARD_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>, Error> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {s:?}"
            ))),
        },
    }
}

/// Runs `cli` on a pool sized by `PLANREWARD_THREADS` and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let result = threads_from_env().and_then(|threads| match threads {
        None => dispatch(cli.command),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| dispatch(cli.command))),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command) -> Result<i32, Error> {
    match command {
        Command::Validate { input, common } => cmd_validate(&input, &common),
        Command::Score {
            input,
            output,
            common,
        } => cmd_score(&input, &output, &common),
        Command::Advantages {
            input,
            output,
            common,
            ..
        } => cmd_advantages(&input, &output, &common),
        Command::Compare { output, common } => cmd_compare(&output, &common),
        Command::Train { output, common } => cmd_train(&output, &common),
    }
}

fn scoring_config(cfg: &RunConfig) -> ScoringConfig {
    ScoringConfig {
        format: cfg.format,
        accuracy: cfg.accuracy,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// `out/rewards.csv` -> `out/rewards.<suffix>`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn ensure_parent(path: &Path) -> Result<(), Error> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

pub fn cmd_validate(input: &Path, common: &CommonArgs) -> Result<i32, Error> {
    let cfg = common.effective_config()?;
    let scoring = scoring_config(&cfg);
    let report = load_records(input)?;
    let mut out = String::new();
    let mut failures = report.rejects.len();
    for r in &report.rejects {
        writeln!(out, "line {}: rejected: {}", r.line, r.error).unwrap();
    }
    for w in &report.warnings {
        writeln!(out, "warning: {w}").unwrap();
    }
    for record in &report.records {
        for (i, cand) in record.candidates.iter().enumerate() {
            let (resp, b) = score_candidate(
                cand,
                &record.action_dictionary,
                &record.reference_plan.steps,
                &scoring,
            );
            let ok = b.r_format == 1.0;
            failures += usize::from(!ok);
            write!(
                out,
                "{} candidate {i}: {} format={:.6} section={:.6} type={:.6} validity={:.6}",
                record.record_id,
                if ok { "ok" } else { "FAIL" },
                b.r_format,
                b.r_section,
                b.r_type,
                b.r_validity
            )
            .unwrap();
            for d in &resp.diagnostics {
                write!(out, "; {d}").unwrap();
            }
            out.push('\n');
        }
    }
    let total: usize = report.records.iter().map(|r| r.candidates.len()).sum();
    writeln!(
        out,
        "{} records, {total} candidates, {} rejected lines, {failures} failures",
        report.records.len(),
        report.rejects.len()
    )
    .unwrap();
    print!("{out}");
    Ok(if failures == 0 { 0 } else { 1 })
}

pub fn cmd_score(input: &Path, output: &Path, common: &CommonArgs) -> Result<i32, Error> {
    let cfg = common.effective_config()?;
    let scoring = scoring_config(&cfg);
    let report = load_records(input)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    ensure_parent(output)?;
    let breakdowns = score_records(&report.records, &scoring);
    let summary = dataset::write_rewards(&report.records, &breakdowns, output)?;
    write_file(&sidecar(output, "config.json"), &cfg.to_json_pretty())?;
    if !report.rejects.is_empty() {
        let path = sidecar(output, "rejects.jsonl");
        dataset::write_rejects(&report.rejects, &path)?;
        eprintln!(
            "{} rejected lines written to {}",
            report.rejects.len(),
            path.display()
        );
    }
    let m = &summary.mean;
    println!(
        "records={} rows={} rejected={} variant={}",
        report.records.len(),
        summary.rows,
        report.rejects.len(),
        cfg.accuracy.variant
    );
    for (name, v) in [
        ("r_section", m.r_section),
        ("r_type", m.r_type),
        ("r_validity", m.r_validity),
        ("r_format", m.r_format),
        ("r_lcs", m.r_lcs),
        ("r_step", m.r_step),
        ("r_prefix", m.r_prefix),
        ("r_overall", m.r_overall),
    ] {
        println!("mean {name} {v:.6}");
    }
    Ok(0)
}

/// Advantages of `rows` grouped by record id, in row order.
pub fn advantages_for(
    rows: &[RewardRow],
    grpo: &planreward_core::GrpoConfig,
) -> Result<Vec<f64>, Error> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        groups.entry(r.record_id.as_str()).or_default().push(i);
    }
    let mut out = vec![0.0; rows.len()];
    for (id, idx) in groups {
        if idx.len() < 2 {
            return Err(Error::Config(format!(
                "group {id:?} has a single candidate; advantages need at least 2"
            )));
        }
        let rewards: Vec<f64> = idx.iter().map(|&i| rows[i].breakdown.r_overall).collect();
        let adv = group_advantages(&rewards, grpo)?;
        for (&i, a) in idx.iter().zip(adv.advantages) {
            out[i] = a;
        }
    }
    Ok(out)
}

pub fn cmd_advantages(input: &Path, output: &Path, common: &CommonArgs) -> Result<i32, Error> {
    let cfg = common.effective_config()?;
    let rows = dataset::read_rewards(input)?;
    let advantages = advantages_for(&rows, &cfg.grpo)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = REWARD_COLUMNS.to_vec();
    header.push("advantage");
    w.write_record(&header)?;
    let f = |x: f64| format!("{x:.6}");
    for (r, a) in rows.iter().zip(&advantages) {
        let b = &r.breakdown;
        w.write_record([
            r.record_id.clone(),
            r.candidate_index.to_string(),
            f(b.r_section),
            f(b.r_type),
            f(b.r_validity),
            f(b.r_format),
            f(b.r_lcs),
            f(b.r_step),
            f(b.r_prefix),
            f(b.r_overall),
            b.lcs_length.to_string(),
            b.reference_length.to_string(),
            f(*a),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    ensure_parent(output)?;
    write_file(output, &String::from_utf8_lossy(&bytes))?;
    write_file(&sidecar(output, "config.json"), &cfg.to_json_pretty())?;
    let groups = rows
        .iter()
        .map(|r| r.record_id.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let zero = advantages.iter().filter(|a| **a == 0.0).count();
    println!("rows={} groups={groups} zero_advantages={zero}", rows.len());
    Ok(0)
}

fn print_report_summary(report: &TrainReport, window: usize) {
    let first =
        |m: fn(&planreward_core::lab::TrainRecord) -> f64| report.first_window_mean(window, m);
    let last =
        |m: fn(&planreward_core::lab::TrainRecord) -> f64| report.last_window_mean(window, m);
    println!(
        "variant={} steps={} window={window}",
        report.variant,
        report.records.len()
    );
    println!(
        "  mean_lcs      first={:.6} last={:.6}",
        first(|r| r.mean_lcs),
        last(|r| r.mean_lcs)
    );
    println!(
        "  mean_overall  first={:.6} last={:.6}",
        first(|r| r.mean_overall),
        last(|r| r.mean_overall)
    );
    println!(
        "  mean_format   first={:.6} last={:.6}",
        first(|r| r.mean_format),
        last(|r| r.mean_format)
    );
    if report.records.iter().all(|r| r.long_mean_lcs.is_some()) {
        println!(
            "  long_mean_lcs first={:.6} last={:.6}",
            first(|r| r.long_mean_lcs.unwrap_or(0.0)),
            last(|r| r.long_mean_lcs.unwrap_or(0.0))
        );
    }
}

pub fn cmd_train(output: &Path, common: &CommonArgs) -> Result<i32, Error> {
    let cfg = common.effective_config()?;
    let lab = &cfg.lab;
    let tasks = generate_tasks(lab.num_tasks, lab, common.seed)?;
    let policy = ToyPolicy::for_tasks(&tasks, lab);
    let outcome = train(
        &tasks,
        policy,
        &cfg.grpo,
        &scoring_config(&cfg),
        lab.steps,
        lab.lr,
        common.seed,
    )?;
    ensure_parent(output)?;
    outcome.report.write_csv(output)?;
    write_file(&sidecar(output, "config.json"), &cfg.to_json_pretty())?;
    print_report_summary(&outcome.report, lab.window);
    Ok(0)
}

/// File names written by `compare`.
pub const COMPARE_TABLE: &str = "comparison.csv";
pub const COMPARE_CONFIG: &str = "effective_config.json";

pub fn train_report_name(variant: AccuracyVariant) -> String {
    format!("train_{variant}.csv")
}

pub fn cmd_compare(output: &Path, common: &CommonArgs) -> Result<i32, Error> {
    let cfg = common.effective_config()?;
    let mut lab = cfg.lab.clone();
    lab.long_horizon_tasks = lab.compare_long_horizon_tasks;
    let tasks = generate_tasks(lab.num_tasks, &lab, common.seed)?;
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;

    let table = compare_rewards(
        &tasks,
        &CompareConfig {
            seed: common.seed,
            grpo: cfg.grpo,
            ..Default::default()
        },
    )?;
    table.write_csv(output.join(COMPARE_TABLE))?;

    let quarter = (lab.steps / 4).max(1);
    for variant in AccuracyVariant::ALL {
        let mut scoring = scoring_config(&cfg);
        scoring.accuracy.variant = variant;
        let outcome = train(
            &tasks,
            ToyPolicy::for_tasks(&tasks, &lab),
            &cfg.grpo,
            &scoring,
            lab.steps,
            lab.lr,
            common.seed,
        )?;
        outcome
            .report
            .write_csv(output.join(train_report_name(variant)))?;
        print_report_summary(&outcome.report, lab.window);
        println!(
            "  zero_variance_fraction first_quarter={:.6}",
            outcome
                .report
                .first_window_mean(quarter, |r| r.zero_variance_fraction)
        );
    }
    write_file(&output.join(COMPARE_CONFIG), &cfg.to_json_pretty())?;
    Ok(0)
}
