//! Command-line front end. Every run writes its artifacts plus a manifest
//! recording the resolved config and the hashes of every input and output;
//! `--from-manifest` replays a run and checks the hashes.

pub mod manifest;
pub mod report;
pub mod tables;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cohort::{generate_cohort, score_auc, GROUP_NAMES};
use crate::counterfactual::{
    apply_rule, bound_curves, disparities_by_regime, health_disparities_algo_only, mvpf, parse_grid, DecisionData,
    DecisionRule, MvpfClass,
};
use crate::index::{cronbach_alpha, IndexSpec, IndexVariant, OutcomeMatrix, Standardization, Window};
use crate::inference::{prepare, AnalysisData};
use crate::io::{self, write_table, RunConfig};
use crate::model::verify_propositions;
use crate::{Error, Result};

pub use manifest::{FileHash, RunManifest};
use tables::fmt;

pub const ENV_SEED: &str = "TRIAGE_SEED";
pub const ENV_THREADS: &str = "TRIAGE_THREADS";
const DEFAULT_OUT: &str = "triage-out";

#[derive(Debug, Parser)]
#[command(name = "triage", version, about = "Synthetic screening-trial toolkit: generate, verify, analyze, counterfactuals")]
struct Cli {
    /// TOML config with [cohort], [model], [verify], [analysis] and [counterfactual] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Re-run the run recorded in a manifest and compare output hashes.
    #[arg(long, conflicts_with = "config")]
    from_manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort.
    Generate {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_children: Option<usize>,
        /// Output formats: csv, jsonl.
        #[arg(long, value_delimiter = ',', default_value = "csv,jsonl")]
        format: Vec<String>,
    },
    /// Monte Carlo check of the decision-model orderings and closed forms.
    ModelVerify {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_per_arm: Option<usize>,
    },
    /// Estimate effects on a cohort file.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        /// main|targeting|disparities|balance|firststage|spillover|bounds|power|all
        #[arg(long, value_delimiter = ',', default_value = "main")]
        table: Vec<String>,
        /// equal|obrien|binary|pca1
        #[arg(long)]
        index: Option<String>,
        /// main|full|donut60
        #[arg(long)]
        window: Option<String>,
        /// control|full
        #[arg(long)]
        standardization: Option<String>,
        #[arg(long)]
        n_perm: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Best-case harm bounds and disparities under alternative screening rules.
    Counterfactual {
        #[arg(long)]
        input: PathBuf,
        /// human_only|human_plus_algo|algo_only|oracle|mandate
        #[arg(long)]
        rule: Option<String>,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        /// lo:hi:count
        #[arg(long)]
        r_grid: Option<String>,
        /// auto or a number
        #[arg(long)]
        floor: Option<String>,
        #[arg(long)]
        index: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Evaluate the rule on the treated arm.
        #[arg(long)]
        treated_arm: bool,
    },
    /// Assemble tables and figure series from earlier outputs.
    Report {
        /// Directories holding earlier outputs.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
    },
}

/// A fully resolved unit of work; together with a `RunConfig` it determines
/// every output byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Job {
    Generate { formats: Vec<String> },
    ModelVerify,
    Analyze { input: PathBuf, tables: Vec<String> },
    Counterfactual { input: PathBuf },
    Report { inputs: Vec<PathBuf> },
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Generate { .. } => "generate",
            Job::ModelVerify => "model-verify",
            Job::Analyze { .. } => "analyze",
            Job::Counterfactual { .. } => "counterfactual",
            Job::Report { .. } => "report",
        }
    }

    fn seeds(&self, cfg: &RunConfig) -> Vec<(String, u64)> {
        match self {
            Job::Generate { .. } => vec![("cohort".into(), cfg.cohort.seed)],
            Job::ModelVerify => vec![("verify".into(), cfg.verify.seed)],
            Job::Analyze { .. } => vec![("analysis".into(), cfg.analysis.seed)],
            Job::Counterfactual { .. } => vec![("counterfactual".into(), cfg.counterfactual.seed)],
            Job::Report { .. } => vec![],
        }
    }
}

/// Files a job read and wrote (outputs relative to the output directory),
/// plus a failed check to report after the manifest is written.
#[derive(Debug, Default)]
pub struct JobOutput {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
    pub check_failure: Option<String>,
}

/// Run `argv` (including the program name) and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => return clap_failure(e),
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            e.exit_code()
        }
    }
}

fn clap_failure(e: clap::Error) -> i32 {
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            let _ = e.print();
            0
        }
        _ => {
            let field = match e.get(ContextKind::InvalidArg).or_else(|| e.get(ContextKind::InvalidSubcommand)) {
                Some(ContextValue::String(s)) => s.clone(),
                Some(ContextValue::Strings(v)) => v.join(","),
                _ => "argv".into(),
            };
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            let err = Error::config(field, first);
            eprintln!("{}", error_line(&err));
            err.exit_code()
        }
    }
}

/// Single-line, machine-parsable error report.
pub fn error_line(e: &Error) -> String {
    let clean = |s: &str| s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    match e {
        Error::Config { field, message } => {
            format!("error kind=config field={} message=\"{}\"", clean(field), clean(message))
        }
        _ => format!("error kind={} message=\"{}\"", e.kind(), clean(&e.to_string())),
    }
}

fn env_u64(name: &str) -> Result<Option<u64>> {
    match std::env::var(name) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::config(name, format!("`{v}` is not a non-negative integer"))),
        _ => Ok(None),
    }
}

fn pick_seed(flag: Option<u64>, current: u64) -> Result<u64> {
    Ok(flag.or(env_u64(ENV_SEED)?).unwrap_or(current))
}

fn dispatch(cli: Cli) -> Result<()> {
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => env_u64(ENV_THREADS)?.map(|t| t as usize),
    };
    if threads == Some(0) {
        return Err(Error::config("threads", "must be at least 1"));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| Error::config("threads", e.to_string()))?;
    pool.install(|| {
        if let Some(m) = &cli.from_manifest {
            if cli.command.is_some() {
                return Err(Error::config("from_manifest", "give either a subcommand or --from-manifest, not both"));
            }
            return replay(m, cli.out.as_deref());
        }
        let command = cli
            .command
            .ok_or_else(|| Error::config("subcommand", "missing subcommand (generate|model-verify|analyze|counterfactual|report)"))?;
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let job = resolve(command, &mut cfg)?;
        let out = cli.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        run_job(&job, &cfg, &out)
    })
}

fn absolute(p: &Path) -> Result<PathBuf> {
    p.canonicalize().map_err(|e| Error::io(p, e))
}

/// Fold command-line flags into the config and build the job.
fn resolve(command: Command, cfg: &mut RunConfig) -> Result<Job> {
    Ok(match command {
        Command::Generate {
            seed,
            n_children,
            format,
        } => {
            cfg.cohort.seed = pick_seed(seed, cfg.cohort.seed)?;
            if let Some(n) = n_children {
                cfg.cohort.n_children = n;
            }
            for f in &format {
                if f != "csv" && f != "jsonl" {
                    return Err(Error::config("format", format!("unknown format `{f}` (csv|jsonl)")));
                }
            }
            Job::Generate { formats: format }
        }
        Command::ModelVerify { seed, n_per_arm } => {
            cfg.verify.seed = pick_seed(seed, cfg.verify.seed)?;
            if let Some(n) = n_per_arm {
                cfg.verify.n_per_arm = n;
            }
            Job::ModelVerify
        }
        Command::Analyze {
            input,
            table,
            index,
            window,
            standardization,
            n_perm,
            seed,
        } => {
            let a = &mut cfg.analysis;
            a.seed = pick_seed(seed, a.seed)?;
            if let Some(v) = index {
                a.index = v;
            }
            if let Some(v) = window {
                a.window = v;
            }
            if let Some(v) = standardization {
                a.standardization = v;
            }
            if let Some(v) = n_perm {
                a.n_perm = v;
            }
            analysis_spec(cfg)?;
            let mut tables = Vec::new();
            for t in table {
                if t == "all" {
                    tables.extend(tables::TABLES.iter().map(|s| s.to_string()));
                } else if tables::TABLES.contains(&t.as_str()) {
                    tables.push(t);
                } else {
                    return Err(Error::config(
                        "table",
                        format!("unknown table `{t}` ({}|all)", tables::TABLES.join("|")),
                    ));
                }
            }
            tables.dedup();
            Job::Analyze {
                input: absolute(&input)?,
                tables,
            }
        }
        Command::Counterfactual {
            input,
            rule,
            rate,
            threshold,
            r_grid,
            floor,
            index,
            seed,
            treated_arm,
        } => {
            let c = &mut cfg.counterfactual;
            c.seed = pick_seed(seed, c.seed)?;
            if let Some(v) = rule {
                c.rule = v;
            }
            if let Some(v) = rate {
                c.rate = v;
            }
            if let Some(v) = threshold {
                c.threshold = v;
            }
            if let Some(v) = r_grid {
                c.r_grid = v;
            }
            if let Some(v) = floor {
                c.floor = v;
            }
            c.treated_arm |= treated_arm;
            if let Some(v) = index {
                cfg.analysis.index = v;
            }
            DecisionRule::parse(&cfg.counterfactual.rule, cfg.counterfactual.rate, cfg.counterfactual.threshold)?;
            parse_grid(&cfg.counterfactual.r_grid)?;
            parse_floor(&cfg.counterfactual.floor)?;
            analysis_spec(cfg)?;
            Job::Counterfactual {
                input: absolute(&input)?,
            }
        }
        Command::Report { inputs } => Job::Report {
            inputs: inputs.iter().map(|p| absolute(p)).collect::<Result<_>>()?,
        },
    })
}

fn analysis_spec(cfg: &RunConfig) -> Result<(IndexSpec, Window)> {
    let a = &cfg.analysis;
    let standardization = match a.standardization.as_str() {
        "control" => Standardization::Control,
        "full" => Standardization::Full,
        s => return Err(Error::config("standardization", format!("unknown value `{s}` (control|full)"))),
    };
    let spec = IndexSpec {
        variant: a.index.parse::<IndexVariant>()?,
        standardization,
        ridge: a.ridge,
    };
    Ok((spec, a.window.parse()?))
}

fn parse_floor(s: &str) -> Result<Option<f64>> {
    if s == "auto" {
        return Ok(None);
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| Error::config("floor", format!("`{s}` is neither `auto` nor a number")))
}

fn run_job(job: &Job, cfg: &RunConfig, out: &Path) -> Result<()> {
    let start = Instant::now();
    let res = execute(job, cfg, out)?;
    let m = RunManifest::build(job, cfg, out, &res, start.elapsed().as_secs_f64())?;
    let path = out.join(format!("manifest_{}.json", job.name()));
    io::write_json(&path, &m)?;
    for o in &m.outputs {
        println!("{}  {}", o.sha256, out.join(&o.path).display());
    }
    println!("manifest {}", path.display());
    match res.check_failure {
        Some(msg) => Err(Error::Check(msg)),
        None => Ok(()),
    }
}

fn replay(path: &Path, out_override: Option<&Path>) -> Result<()> {
    let m = RunManifest::load(path)?;
    m.check_inputs()?;
    let out = out_override.map(Path::to_path_buf).unwrap_or_else(|| m.out_dir.clone());
    let res = execute(&m.job, &m.config, &out)?;
    let mismatched = m.compare_outputs(&out, &res)?;
    if !mismatched.is_empty() {
        return Err(Error::Check(format!("replay changed {} output(s): {}", mismatched.len(), mismatched.join(", "))));
    }
    println!("replay ok subcommand={} outputs={} dir={}", m.subcommand, m.outputs.len(), out.display());
    match res.check_failure {
        Some(msg) => Err(Error::Check(msg)),
        None => Ok(()),
    }
}

/// Run a resolved job, writing its artifacts into `out`.
pub fn execute(job: &Job, cfg: &RunConfig, out: &Path) -> Result<JobOutput> {
    let mut res = JobOutput::default();
    match job {
        Job::Generate { formats } => {
            let records = generate_cohort(&cfg.cohort)?;
            for f in formats {
                let name = format!("cohort.{f}");
                match f.as_str() {
                    "csv" => io::write_cohort_csv(&out.join(&name), &records, &[])?,
                    "jsonl" => io::write_cohort_jsonl(&out.join(&name), &records)?,
                    _ => return Err(Error::config("format", format!("unknown format `{f}`"))),
                }
                res.outputs.push(name);
            }
            let m = OutcomeMatrix::from_records(&records, Window::Main)?;
            let mut rows = vec![
                vec!["n_children".into(), records.len().to_string()],
                vec!["cronbach_alpha".into(), fmt(cronbach_alpha(&m)?)],
            ];
            if let Ok(a) = score_auc(&records) {
                rows.push(vec!["score_auc".into(), fmt(a)]);
            }
            write_table(&out.join("cohort_summary.csv"), &["statistic", "value"], &rows)?;
            res.outputs.push("cohort_summary.csv".into());
        }
        Job::ModelVerify => {
            let r = verify_propositions(&cfg.model, cfg.verify.n_per_arm, cfg.verify.seed)?;
            io::write_json(&out.join("proposition_report.json"), &r)?;
            io::write_text(&out.join("proposition_report.txt"), &r.to_table())?;
            res.outputs.push("proposition_report.json".into());
            res.outputs.push("proposition_report.txt".into());
            if !r.passed() {
                let failed: Vec<&str> = r
                    .checks
                    .iter()
                    .filter(|c| c.status == crate::model::CheckStatus::Fail)
                    .map(|c| c.id.as_str())
                    .collect();
                res.check_failure = Some(format!("proposition checks failed: {}", failed.join(", ")));
            }
        }
        Job::Analyze { input, tables: names } => {
            let records = io::read_cohort(input)?;
            res.inputs.push(input.clone());
            let (spec, window) = analysis_spec(cfg)?;
            let d = prepare(&records, &spec, window)?;
            let extra = analysis_columns(&d)?;
            let refs: Vec<(&str, &[f64])> = extra.iter().map(|(n, v)| (*n, v.as_slice())).collect();
            io::write_cohort_csv(&out.join("indexed.csv"), &records, &refs)?;
            res.outputs.push("indexed.csv".into());
            for name in names {
                let (t, series) = tables::build(name, &d, cfg)?;
                let file = format!("table_{name}.csv");
                t.write(&out.join(&file))?;
                res.outputs.push(file);
                for s in series {
                    s.write(out)?;
                    res.outputs.push(s.file);
                }
            }
        }
        Job::Counterfactual { input } => {
            let records = io::read_cohort(input)?;
            res.inputs.push(input.clone());
            let (spec, window) = analysis_spec(cfg)?;
            let d = prepare(&records, &spec, window)?;
            res.outputs.extend(counterfactual_outputs(&d, cfg, out)?);
        }
        Job::Report { inputs } => {
            let r = report::assemble(inputs, out)?;
            res.inputs = r.inputs;
            res.outputs = r.outputs;
        }
    }
    Ok(res)
}

fn analysis_columns(d: &AnalysisData) -> Result<Vec<(&'static str, Vec<f64>)>> {
    ["harm", "top1", "prior_harm", "predicted_harm"]
        .iter()
        .map(|c| Ok((*c, d.frame.get(c)?.to_vec())))
        .collect()
}

fn counterfactual_outputs(d: &AnalysisData, cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let c = &cfg.counterfactual;
    let rule = DecisionRule::parse(&c.rule, c.rate, c.threshold)?;
    let grid = parse_grid(&c.r_grid)?;
    let floor = parse_floor(&c.floor)?.unwrap_or(d.index.floor);
    let all = DecisionData::from_frame(&d.frame)?;
    let arm = all.arm(c.treated_arm);
    let mut rules = vec![rule];
    if let DecisionRule::AlgoOnly { rate } = rule {
        rules.push(DecisionRule::Oracle { rate });
    }
    let curve = bound_curves(&arm, &rules, &grid, floor, c.seed)?;
    let mut outputs = Vec::new();

    let mut rows = Vec::new();
    for (k, r) in grid.iter().enumerate() {
        rows.push(vec!["human_only".into(), fmt(*r), fmt(curve.human_only_mean)]);
        for reg in &curve.regimes {
            rows.push(vec![reg.regime.clone(), fmt(*r), fmt(reg.mean_harm[k])]);
        }
    }
    write_table(&out.join("bound_curve.csv"), &["regime", "r", "mean_harm"], &rows)?;
    outputs.push("bound_curve.csv".to_string());

    let n = arm.len() as f64;
    let human_rate = arm.screened_in.iter().filter(|&&b| b).count() as f64 / n;
    let mut rows = vec![
        vec!["human_only".into(), "harm_floor".into(), fmt(floor)],
        vec!["human_only".into(), "mean_harm".into(), fmt(curve.human_only_mean)],
        vec!["human_only".into(), "screen_in_rate".into(), fmt(human_rate)],
        vec!["human_only".into(), "n_children".into(), fmt(n)],
    ];
    for (reg, rl) in curve.regimes.iter().zip(&rules) {
        let dec = apply_rule(&arm, rl, c.seed)?;
        let rate = dec.iter().filter(|&&b| b).count() as f64 / n;
        rows.push(vec![reg.regime.clone(), "screen_in_rate".into(), fmt(rate)]);
        rows.push(vec![reg.regime.clone(), "screen_in_change".into(), fmt(rate - human_rate)]);
        rows.push(vec![reg.regime.clone(), "asymptote".into(), fmt(reg.asymptote)]);
        for (name, v) in ["in_in", "in_out", "out_in", "out_out"].iter().zip(reg.cell_counts) {
            rows.push(vec![reg.regime.clone(), format!("cell_{name}"), v.to_string()]);
        }
    }
    write_table(&out.join("bound_summary.csv"), &["regime", "statistic", "value"], &rows)?;
    outputs.push("bound_summary.csv".to_string());

    let opt = |v: Option<f64>| v.map(fmt).unwrap_or_else(|| "NA".into());
    let disp = disparities_by_regime(&all, &GROUP_NAMES, &rule, c.seed)?;
    let rows: Vec<Vec<String>> = disp
        .iter()
        .map(|r| vec![r.group.clone(), opt(r.human_only), opt(r.human_plus_algo), opt(r.algo_only)])
        .collect();
    let regime_col = rule.name();
    write_table(
        &out.join("regime_disparities.csv"),
        &["group", "human_only", "human_plus_algo", &regime_col],
        &rows,
    )?;
    outputs.push("regime_disparities.csv".to_string());

    let health = health_disparities_algo_only(&arm, &rule, &grid, &GROUP_NAMES, floor, c.seed)?;
    let mut rows = Vec::new();
    for h in &health {
        for (r, g) in h.r_grid.iter().zip(&h.gap) {
            rows.push(vec![h.group.clone(), fmt(*r), fmt(*g)]);
        }
    }
    write_table(&out.join("health_disparities.csv"), &["group", "r", "harm_gap"], &rows)?;
    outputs.push("health_disparities.csv".to_string());

    let m = mvpf(
        c.mvpf_children_prevented,
        c.mvpf_public_cost_per_child,
        c.mvpf_implementation_cost,
        c.mvpf_annual_maintenance,
        c.mvpf_horizon_years,
    )?;
    let (class, value) = match m.class {
        MvpfClass::Infinite => ("infinite", f64::INFINITY),
        MvpfClass::Finite { value } => ("finite", value),
    };
    let rows = vec![
        vec!["savings".into(), fmt(m.savings)],
        vec!["total_cost".into(), fmt(m.total_cost)],
        vec!["net_government_cost".into(), fmt(m.net_government_cost)],
        vec!["class".into(), class.into()],
        vec!["value".into(), fmt(value)],
    ];
    write_table(&out.join("mvpf.csv"), &["statistic", "value"], &rows)?;
    outputs.push("mvpf.csv".to_string());
    Ok(outputs)
}
