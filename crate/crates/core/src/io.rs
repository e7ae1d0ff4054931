//! Files: the canonical cohort table (CSV and JSON lines), run configs, and
//! content hashes.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{ChildRecord, CohortConfig, GroupFlags, N_OUTCOMES, OUTCOME_NAMES};
use crate::model::ModelParams;
use crate::{Error, Result};

pub const SCHEMA: &str = "triage-cohort/1";
pub const SCHEMA_PREFIX: &str = "#schema: ";

/// Column names of the canonical cohort table, in order.
pub fn cohort_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "child_id",
        "household_id",
        "referral_id",
        "referral_date_index",
        "black",
        "hispanic",
        "female",
        "snap",
        "motherless",
        "sibling_count",
        "rc_stratum",
        "score",
        "treated",
        "score_recorded",
        "screened_in",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["", "early_", "d30_60_", "prior_"] {
        for o in OUTCOME_NAMES {
            h.push(format!("{prefix}{o}"));
        }
    }
    for c in ["prior_referrals", "removed", "re_referrals", "cps_found_injury", "decision_minutes", "status_switched"] {
        h.push(c.to_string());
    }
    h
}

fn b(v: bool) -> String {
    if v { "1" } else { "0" }.to_string()
}

fn record_row(r: &ChildRecord) -> Vec<String> {
    let g = &r.group_flags;
    let mut row = vec![
        r.child_id.to_string(),
        r.household_id.to_string(),
        r.referral_id.to_string(),
        r.referral_date_index.to_string(),
        b(g.black),
        b(g.hispanic),
        b(g.female),
        b(g.snap),
        b(r.motherless),
        r.sibling_count.to_string(),
        r.rc_stratum.to_string(),
        r.score.to_string(),
        b(r.treated),
        b(r.score_recorded),
        b(r.screened_in),
    ];
    for arr in [&r.outcomes, &r.outcomes_early, &r.outcomes_30_60, &r.prior_outcomes] {
        row.extend(arr.iter().map(|v| v.to_string()));
    }
    row.push(r.prior_referrals.to_string());
    row.push(b(r.removed));
    row.push(r.re_referrals.to_string());
    row.push(b(r.cps_found_injury));
    row.push(r.decision_minutes.to_string());
    row.push(b(r.status_switched));
    row
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Write the cohort table, optionally with extra per-child columns appended.
pub fn write_cohort_csv(path: &Path, records: &[ChildRecord], extra: &[(&str, &[f64])]) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{SCHEMA_PREFIX}{SCHEMA}").map_err(|e| Error::io(path, e))?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header = cohort_header();
        header.extend(extra.iter().map(|(n, _)| n.to_string()));
        w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
        for (i, r) in records.iter().enumerate() {
            let mut row = record_row(r);
            row.extend(extra.iter().map(|(_, v)| v[i].to_string()));
            w.write_record(&row).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_cohort_jsonl(path: &Path, records: &[ChildRecord]) -> Result<()> {
    let mut out = create(path)?;
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Data(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn parse<T: std::str::FromStr>(s: &str, col: &str, line: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Data(format!("row {line}: cannot parse `{s}` in column `{col}`")))
}

fn parse_flag(s: &str, col: &str, line: usize) -> Result<bool> {
    match s.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(Error::Data(format!("row {line}: `{s}` in column `{col}` is not 0/1"))),
    }
}

/// Read a cohort table written by `write_cohort_csv`. Extra columns are
/// ignored; a missing column or a different schema version is an error.
pub fn read_cohort_csv(path: &Path) -> Result<Vec<ChildRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let version = first.trim_end().strip_prefix(SCHEMA_PREFIX).ok_or_else(|| {
        Error::Data(format!("{}: missing `{SCHEMA_PREFIX}` line", path.display()))
    })?;
    if version != SCHEMA {
        return Err(Error::Data(format!("{}: schema `{version}` does not match `{SCHEMA}`", path.display())));
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let pos = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("{}: missing column `{name}`", path.display())))
    };
    let expected = cohort_header();
    let idx: Vec<usize> = expected.iter().map(|c| pos(c)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let line = line + 3;
        let f = |k: usize| rec.get(idx[k]).unwrap_or("");
        let col = |k: usize| expected[k].as_str();
        let counts = |start: usize| -> Result<[u32; N_OUTCOMES]> {
            let mut a = [0u32; N_OUTCOMES];
            for (j, v) in a.iter_mut().enumerate() {
                *v = parse(f(start + j), col(start + j), line)?;
            }
            Ok(a)
        };
        let score: u8 = parse(f(11), col(11), line)?;
        if !(1..=20).contains(&score) {
            return Err(Error::Data(format!("row {line}: score {score} outside 1..20")));
        }
        out.push(ChildRecord {
            child_id: parse(f(0), col(0), line)?,
            household_id: parse(f(1), col(1), line)?,
            referral_id: parse(f(2), col(2), line)?,
            referral_date_index: parse(f(3), col(3), line)?,
            group_flags: GroupFlags {
                black: parse_flag(f(4), col(4), line)?,
                hispanic: parse_flag(f(5), col(5), line)?,
                female: parse_flag(f(6), col(6), line)?,
                snap: parse_flag(f(7), col(7), line)?,
            },
            motherless: parse_flag(f(8), col(8), line)?,
            sibling_count: parse(f(9), col(9), line)?,
            rc_stratum: parse(f(10), col(10), line)?,
            score,
            treated: parse_flag(f(12), col(12), line)?,
            score_recorded: parse_flag(f(13), col(13), line)?,
            screened_in: parse_flag(f(14), col(14), line)?,
            outcomes: counts(15)?,
            outcomes_early: counts(20)?,
            outcomes_30_60: counts(25)?,
            prior_outcomes: counts(30)?,
            prior_referrals: parse(f(35), col(35), line)?,
            removed: parse_flag(f(36), col(36), line)?,
            re_referrals: parse(f(37), col(37), line)?,
            cps_found_injury: parse_flag(f(38), col(38), line)?,
            decision_minutes: parse(f(39), col(39), line)?,
            status_switched: parse_flag(f(40), col(40), line)?,
        });
    }
    Ok(out)
}

pub fn read_cohort_jsonl(path: &Path) -> Result<Vec<ChildRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true))
        .map(|(i, l)| {
            let l = l.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Read a cohort from CSV or JSON lines, by extension.
pub fn read_cohort(path: &Path) -> Result<Vec<ChildRecord>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => read_cohort_jsonl(path),
        _ => read_cohort_csv(path),
    }
}

/// Write rows of a delimited table with a header.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = create(path)?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header).map_err(|e| Error::Data(e.to_string()))?;
        for r in rows {
            w.write_record(r).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub n_per_arm: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            n_per_arm: 1_000_000,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub index: String,
    pub standardization: String,
    pub ridge: bool,
    pub window: String,
    pub n_perm: usize,
    pub seed: u64,
    pub scan_groups: usize,
    pub scan_min_size: usize,
    /// Power-calculation design inputs.
    pub power_clusters_per_arm: f64,
    pub power_cluster_size: f64,
    pub power_icc: f64,
    pub power_cv: f64,
    pub power_alpha: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            index: "equal".into(),
            standardization: "control".into(),
            ridge: false,
            window: "main".into(),
            n_perm: 999,
            seed: 1,
            scan_groups: 1000,
            scan_min_size: 100,
            power_clusters_per_arm: 1000.0,
            power_cluster_size: 2.0,
            power_icc: 0.4,
            power_cv: 0.56,
            power_alpha: 0.10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterfactualConfig {
    pub rule: String,
    pub rate: f64,
    pub threshold: f64,
    pub r_grid: String,
    /// `auto` for the zero-event index value, or a number.
    pub floor: String,
    pub seed: u64,
    /// Apply the mandate rule to the treated arm instead of control.
    pub treated_arm: bool,
    /// Cost-benefit inputs.
    pub mvpf_children_prevented: f64,
    pub mvpf_public_cost_per_child: f64,
    pub mvpf_implementation_cost: f64,
    pub mvpf_annual_maintenance: f64,
    pub mvpf_horizon_years: f64,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        CounterfactualConfig {
            rule: "algo_only".into(),
            rate: 0.30,
            threshold: 20.0,
            r_grid: "0:4:41".into(),
            floor: "auto".into(),
            seed: 1,
            treated_arm: false,
            mvpf_children_prevented: 20.0,
            mvpf_public_cost_per_child: 62_500.0,
            mvpf_implementation_cost: 280_000.0,
            mvpf_annual_maintenance: 15_000.0,
            mvpf_horizon_years: 2.0,
        }
    }
}

/// Contents of a run config file; every section is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cohort: CohortConfig,
    pub model: ModelParams,
    pub verify: VerifyConfig,
    pub analysis: AnalysisConfig,
    pub counterfactual: CounterfactualConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map(String::from)
                .unwrap_or_else(|| "config".to_string());
            Error::config(field, msg)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Data(format!("config does not serialize: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::generate_cohort;

    #[test]
    fn csv_and_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CohortConfig {
            n_children: 300,
            seed: 11,
            ..CohortConfig::default()
        };
        let recs = generate_cohort(&cfg).unwrap();
        let p = dir.path().join("c.csv");
        write_cohort_csv(&p, &recs, &[]).unwrap();
        assert_eq!(read_cohort_csv(&p).unwrap(), recs);
        let j = dir.path().join("c.jsonl");
        write_cohort_jsonl(&j, &recs).unwrap();
        assert_eq!(read_cohort(&j).unwrap(), recs);
    }

    #[test]
    fn schema_and_columns_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "#schema: triage-cohort/0\nchild_id\n1\n").unwrap();
        assert!(matches!(read_cohort_csv(&p), Err(Error::Data(m)) if m.contains("schema")));
        fs::write(&p, "#schema: triage-cohort/1\nchild_id\n1\n").unwrap();
        assert!(matches!(read_cohort_csv(&p), Err(Error::Data(m)) if m.contains("`household_id`")));
    }

    #[test]
    fn config_round_trip_and_unknown_field() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        let bad = "[cohort]\nn_childs = 3\n";
        match RunConfig::from_toml(bad) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "n_childs"),
            e => panic!("{e:?}"),
        }
        let partial = RunConfig::from_toml("[cohort]\nseed = 5\n").unwrap();
        assert_eq!(partial.cohort.seed, 5);
        assert_eq!(partial.cohort.n_children, 3431);
    }
}
