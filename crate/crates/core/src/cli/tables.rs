//! Long-format result tables: one row per (model, outcome, term, statistic).

use std::path::Path;

use crate::cohort::{GROUP_NAMES, OUTCOME_NAMES};
use crate::counterfactual::{marginal_reliance, DecisionData};
use crate::inference::{
    balance_f_test, compliance_bounds, disparity_model, first_stage, itt_spec, iv_wald, joint_disparity_chi2,
    ols_cluster, permutation_test, power_calc, power_simulated, spillover_test, subgroup_targeting_scan,
    targeting_tests, AnalysisData, JointTest, PermutationOptions, PowerInputs, RegressionResult, BALANCE_COVARIATES,
    TOP_QUARTILE_SCORE,
};
use crate::io::{write_table, AnalysisConfig, RunConfig};
use crate::{stats, Error, Result};

pub const TABLE_HEADER: [&str; 6] = ["table", "model", "outcome", "term", "statistic", "value"];

pub const TABLES: [&str; 8] = ["main", "targeting", "disparities", "balance", "firststage", "spillover", "bounds", "power"];

pub fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v}")
    }
}

pub struct Table {
    pub name: String,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str) -> Self {
        Table {
            name: name.to_string(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, model: &str, outcome: &str, term: &str, stat: &str, value: f64) {
        self.rows.push(vec![
            self.name.clone(),
            model.to_string(),
            outcome.to_string(),
            term.to_string(),
            stat.to_string(),
            fmt(value),
        ]);
    }

    /// Every non-control term of a regression, plus sample sizes and any joint test.
    pub fn regression(&mut self, model: &str, r: &RegressionResult) {
        for t in r.terms.iter().filter(|t| !t.term.starts_with("rc_")) {
            self.push(model, &r.outcome, &t.term, "estimate", t.estimate);
            self.push(model, &r.outcome, &t.term, "std_error", t.std_error);
            self.push(model, &r.outcome, &t.term, "t_stat", t.t_stat);
            self.push(model, &r.outcome, &t.term, "p_value", t.p_value);
        }
        self.push(model, &r.outcome, "", "n_obs", r.n_obs as f64);
        self.push(model, &r.outcome, "", "n_clusters", r.n_clusters as f64);
        if let Some(j) = &r.joint {
            self.joint(model, &r.outcome, j);
        }
    }

    pub fn joint(&mut self, model: &str, outcome: &str, j: &JointTest) {
        let term = format!("joint_{}", j.kind.to_lowercase());
        self.push(model, outcome, &term, "statistic", j.statistic);
        self.push(model, outcome, &term, "df1", j.df1);
        if let Some(d) = j.df2 {
            self.push(model, outcome, &term, "df2", d);
        }
        self.push(model, outcome, &term, "p_value", j.p_value);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_table(path, &TABLE_HEADER, &self.rows)
    }
}

/// An additional delimited data series written next to a table.
pub struct Series {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Series {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let h: Vec<&str> = self.header.iter().map(String::as_str).collect();
        write_table(&dir.join(&self.file), &h, &self.rows)
    }
}

fn control_mean(d: &AnalysisData, col: &str) -> Result<f64> {
    let y = d.frame.get(col)?;
    let t = d.frame.get("treated")?;
    let c: Vec<f64> = y.iter().zip(t).filter(|(_, &t)| t == 0.0).map(|(v, _)| *v).collect();
    Ok(stats::mean(&c))
}

fn main_table(d: &AnalysisData, a: &AnalysisConfig) -> Result<Table> {
    let mut t = Table::new("main");
    let fs = first_stage(&d.frame, false)?.coef("treated");
    let mut outcomes = vec!["harm", "top1"];
    outcomes.extend(OUTCOME_NAMES);
    for y in outcomes {
        let spec = itt_spec(&d.frame, y);
        let mut r = ols_cluster(&d.frame, &spec)?;
        r.permutation_p = Some(permutation_test(&d.frame, &spec, &PermutationOptions::new(a.n_perm, a.seed))?.p_value);
        t.regression("itt", &r);
        t.push("itt", y, "treated", "permutation_p", r.permutation_p.unwrap());
        t.push("itt", y, "", "control_mean", control_mean(d, y)?);
        t.push("iv", y, "treated", "estimate", iv_wald(r.coef("treated"), fs)?);
        let by_referral = ols_cluster(&d.frame, &spec.clone().cluster("referral_id"))?;
        t.push("itt_referral_cluster", y, "treated", "std_error", by_referral.term("treated")?.std_error);
        t.push("itt_referral_cluster", y, "treated", "p_value", by_referral.term("treated")?.p_value);
    }
    t.push("first_stage", "score_recorded", "treated", "estimate", fs);
    Ok(t)
}

fn targeting_table(d: &AnalysisData, a: &AnalysisConfig) -> Result<(Table, Vec<Series>)> {
    let mut t = Table::new("targeting");
    let r = targeting_tests(&d.frame, TOP_QUARTILE_SCORE)?;
    t.regression("screened_out_harm", &r.screened_out_harm);
    t.regression("found_injury", &r.found_injury);
    t.regression("prior_harm", &r.prior_harm);
    t.regression("predicted_harm", &r.predicted_harm);
    let scan = subgroup_targeting_scan(&d.frame, a.scan_groups, a.scan_min_size, a.seed)?;
    t.push("subgroup_scan", "harm", "slope", "estimate", scan.slope);
    t.push("subgroup_scan", "harm", "slope", "std_error", scan.std_error);
    t.push("subgroup_scan", "harm", "slope", "p_value", scan.p_value);
    let scan_series = Series {
        file: "series_subgroup_scan.csv".into(),
        header: ["subset", "size", "screened_out_itt", "overall_itt"].map(String::from).to_vec(),
        rows: scan
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| vec![i.to_string(), p.size.to_string(), fmt(p.screened_out_itt), fmt(p.overall_itt)])
            .collect(),
    };
    let rel = marginal_reliance(&DecisionData::from_frame(&d.frame)?)?;
    if let Some(g) = rel.gap_at_20 {
        t.push("marginal_reliance", "harm", "score_20_gap", "estimate", g);
    }
    let opt = |v: Option<f64>| v.map(fmt).unwrap_or_else(|| "NA".into());
    let rel_series = Series {
        file: "series_marginal_reliance.csv".into(),
        header: ["score", "treated", "n", "mean_harm", "ci_low", "ci_high"].map(String::from).to_vec(),
        rows: rel
            .cells
            .iter()
            .map(|c| {
                vec![
                    c.score.to_string(),
                    (c.treated as u8).to_string(),
                    c.n.to_string(),
                    opt(c.mean),
                    opt(c.ci_low),
                    opt(c.ci_high),
                ]
            })
            .collect(),
    };
    Ok((t, vec![scan_series, rel_series]))
}

fn disparities_table(d: &AnalysisData) -> Result<Table> {
    let mut t = Table::new("disparities");
    for y in ["screened_in", "harm"] {
        let res = GROUP_NAMES
            .iter()
            .map(|g| disparity_model(&d.frame, g, y))
            .collect::<Result<Vec<_>>>()?;
        for r in &res {
            let m = format!("disparity_{}", r.group);
            t.regression(&m, &r.regression);
            t.push(&m, y, &r.group, "effect_on_disparity_pct", r.effect_on_disparity_pct);
        }
        t.joint("joint_interactions", y, &joint_disparity_chi2(&res)?);
    }
    Ok(t)
}

fn power_table(d: &AnalysisData, cfg: &RunConfig) -> Result<Table> {
    let a = &cfg.analysis;
    let mut t = Table::new("power");
    let treated = d.frame.get("treated")?;
    for y in ["harm", "top1"] {
        let v = d.frame.get(y)?;
        let c: Vec<f64> = v.iter().zip(treated).filter(|(_, &t)| t == 0.0).map(|(x, _)| *x).collect();
        let (m, s) = (stats::mean(&c), stats::sd(&c));
        // the design effect in standard deviations of the harm index
        let effect = cfg.cohort.itt_effect_sd * s;
        let p = PowerInputs {
            mean_c: m,
            mean_t: m + effect,
            sd: s,
            clusters_per_arm: a.power_clusters_per_arm,
            cluster_size: a.power_cluster_size,
            icc: a.power_icc,
            cv: a.power_cv,
            alpha: a.power_alpha,
        };
        t.push("power", y, "", "mean_c", p.mean_c);
        t.push("power", y, "", "mean_t", p.mean_t);
        t.push("power", y, "", "sd", p.sd);
        t.push("power", y, "", "design_effect", p.design_effect());
        t.push("power", y, "", "power", power_calc(&p)?);
        t.push("power", y, "", "power_simulated", power_simulated(&p, 1000, a.seed)?);
    }
    Ok(t)
}

/// Build one named table plus any data series that go with it.
pub fn build(name: &str, d: &AnalysisData, cfg: &RunConfig) -> Result<(Table, Vec<Series>)> {
    let a = &cfg.analysis;
    let t = match name {
        "main" => main_table(d, a)?,
        "targeting" => return targeting_table(d, a),
        "disparities" => disparities_table(d)?,
        "balance" => {
            let mut t = Table::new("balance");
            t.regression("balance", &balance_f_test(&d.frame, &BALANCE_COVARIATES)?);
            t
        }
        "firststage" => {
            let mut t = Table::new("firststage");
            t.regression("first_stage", &first_stage(&d.frame, false)?);
            t.regression("first_stage_by_score", &first_stage(&d.frame, true)?);
            t
        }
        "spillover" => {
            let mut t = Table::new("spillover");
            for r in spillover_test(&d.frame, &["harm", "screened_in"])? {
                t.regression("spillover", &r);
            }
            t
        }
        "bounds" => {
            let mut t = Table::new("bounds");
            let b = compliance_bounds(&d.frame, "harm", "status_switched")?;
            t.push("compliance_bounds", "harm", "treated", "estimate", b.main);
            t.push("compliance_bounds", "harm", "treated", "lower", b.lower);
            t.push("compliance_bounds", "harm", "treated", "upper", b.upper);
            t.push("compliance_bounds", "harm", "", "n_switched", b.n_switched as f64);
            t
        }
        "power" => power_table(d, cfg)?,
        _ => {
            return Err(Error::config(
                "table",
                format!("unknown table `{name}` ({}|all)", TABLES.join("|")),
            ))
        }
    };
    Ok((t, Vec::new()))
}
