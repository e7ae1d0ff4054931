//! Trial diagnostics and effect estimators built on `ols_cluster`.

use std::collections::HashMap;

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::Serialize;

use super::ols::{ols_cluster, stacked_wald_chi2, JointTest, RegressionResult, RegressionSpec};
use crate::frame::Frame;
use crate::{rng, stats, Error, Result};

/// Pre-determined covariates used in the balance test.
pub const BALANCE_COVARIATES: [&str; 8] =
    ["black", "hispanic", "female", "snap", "motherless", "sibling_count", "prior_referrals", "score"];

/// Regress treatment on covariates plus randomization controls and test the
/// covariates jointly.
pub fn balance_f_test(frame: &Frame, covariates: &[&str]) -> Result<RegressionResult> {
    let rc = frame.randomization_controls();
    let spec = RegressionSpec::new("treated", covariates).controls(&rc);
    let mut r = ols_cluster(frame, &spec)?;
    r.joint = Some(r.wald_f(covariates)?);
    Ok(r)
}

/// Share of treated referrals where the worker recorded the score, relative
/// to control. With `score_interaction`, the gap may vary with the score.
pub fn first_stage(frame: &Frame, score_interaction: bool) -> Result<RegressionResult> {
    let rc = frame.randomization_controls();
    let spec = if score_interaction {
        let mut f = frame.clone();
        f.add_product("treated", "score", "treated_x_score")?;
        let spec = RegressionSpec::new("score_recorded", &["treated", "score", "treated_x_score"]).controls(&rc);
        return ols_cluster(&f, &spec);
    } else {
        RegressionSpec::new("score_recorded", &["treated"]).controls(&rc)
    };
    ols_cluster(frame, &spec)
}

/// Wald instrumental-variables estimate: ITT scaled by the first stage.
pub fn iv_wald(itt: f64, first_stage: f64) -> Result<f64> {
    if first_stage == 0.0 || !first_stage.is_finite() {
        return Err(Error::Domain(format!("first stage {first_stage} cannot scale the ITT")));
    }
    Ok(itt / first_stage)
}

#[derive(Clone, Debug, Serialize)]
pub struct DisparityResult {
    pub group: String,
    pub regression: RegressionResult,
    pub group_gap: f64,
    pub interaction: f64,
    /// 100 * interaction / group gap.
    pub effect_on_disparity_pct: f64,
    pub p_unchanged: f64,
    pub interaction_term: String,
}

/// Outcome on group, treatment and their product (plus randomization controls).
pub fn disparity_model(frame: &Frame, group: &str, outcome: &str) -> Result<DisparityResult> {
    let g = frame.get(group)?;
    let t = frame.get("treated")?;
    for gv in [1.0, 0.0] {
        for tv in [1.0, 0.0] {
            if !g.iter().zip(t).any(|(a, b)| *a == gv && *b == tv) {
                return Err(Error::Data(format!("empty cell: {group}={gv}, treated={tv}")));
            }
        }
    }
    let inter = format!("treated_x_{group}");
    let mut f = frame.clone();
    f.add_product("treated", group, &inter)?;
    let rc = f.randomization_controls();
    let spec = RegressionSpec::new(outcome, &[group, "treated", &inter]).controls(&rc);
    let r = ols_cluster(&f, &spec)?;
    let gap = r.coef(group);
    let it = r.term(&inter)?.clone();
    Ok(DisparityResult {
        group: group.to_string(),
        group_gap: gap,
        interaction: it.estimate,
        effect_on_disparity_pct: 100.0 * it.estimate / gap,
        p_unchanged: it.p_value,
        interaction_term: inter,
        regression: r,
    })
}

/// Joint test that every group's interaction is zero.
pub fn joint_disparity_chi2(results: &[DisparityResult]) -> Result<JointTest> {
    let items: Vec<(&RegressionResult, &str)> =
        results.iter().map(|d| (&d.regression, d.interaction_term.as_str())).collect();
    stacked_wald_chi2(&items)
}

/// Jackknife share of other same-day referrals that were treated.
pub fn peer_share(frame: &Frame) -> Result<Vec<f64>> {
    let day = frame.get("day")?;
    let referral = frame.get("referral_id")?;
    let t = frame.get("treated")?;
    let mut refs: HashMap<u64, (u64, f64)> = HashMap::new();
    for i in 0..frame.len() {
        refs.entry(referral[i].to_bits()).or_insert((day[i].to_bits(), t[i]));
    }
    let mut days: HashMap<u64, (f64, f64)> = HashMap::new();
    for (d, tv) in refs.values() {
        let e = days.entry(*d).or_insert((0.0, 0.0));
        e.0 += 1.0;
        e.1 += tv;
    }
    Ok((0..frame.len())
        .map(|i| {
            let (d, tv) = refs[&referral[i].to_bits()];
            let (n, nt) = days[&d];
            if n < 2.0 {
                f64::NAN
            } else {
                (nt - tv) / (n - 1.0)
            }
        })
        .collect())
}

/// Spillover regressions of each outcome on treatment, same-day peer share
/// and their product. Referrals alone on their day are dropped.
pub fn spillover_test(frame: &Frame, outcomes: &[&str]) -> Result<Vec<RegressionResult>> {
    let share = peer_share(frame)?;
    let undefined = share.iter().filter(|v| v.is_nan()).count();
    if undefined > 0 {
        warn!("spillover: {undefined} rows have no other same-day referral and are dropped");
    }
    let mut f = frame.clone().with("peer_share", share)?;
    f.add_product("treated", "peer_share", "treated_x_peer_share")?;
    let rc = f.randomization_controls();
    outcomes
        .iter()
        .map(|y| {
            let spec = RegressionSpec::new(y, &["treated", "peer_share", "treated_x_peer_share"]).controls(&rc);
            ols_cluster(&f, &spec)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerInputs {
    pub mean_c: f64,
    pub mean_t: f64,
    pub sd: f64,
    pub clusters_per_arm: f64,
    pub cluster_size: f64,
    pub icc: f64,
    /// Coefficient of variation of cluster sizes.
    pub cv: f64,
    pub alpha: f64,
}

impl PowerInputs {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("sd", self.sd),
            ("clusters_per_arm", self.clusters_per_arm),
            ("cluster_size", self.cluster_size),
        ];
        for (n, v) in pos {
            if !(v > 0.0) {
                return Err(Error::config(n, format!("{v} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.icc) {
            return Err(Error::config("icc", "must lie in [0, 1)"));
        }
        if !(self.cv >= 0.0) {
            return Err(Error::config("cv", "must be non-negative"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn design_effect(&self) -> f64 {
        1.0 + ((self.cv * self.cv + 1.0) * self.cluster_size - 1.0) * self.icc
    }
}

/// Two-sided power for a difference in means under clustering, by the
/// normal approximation with a design effect.
pub fn power_calc(p: &PowerInputs) -> Result<f64> {
    p.validate()?;
    let n = p.clusters_per_arm * p.cluster_size;
    let se = p.sd * (2.0 * p.design_effect() / n).sqrt();
    let z = (p.mean_t - p.mean_c).abs() / se;
    let crit = stats::normal_quantile(1.0 - p.alpha / 2.0);
    Ok(stats::normal_cdf(z - crit) + stats::normal_cdf(-z - crit))
}

/// Power by simulation: normal outcomes with a cluster random effect and
/// (when cv > 0) gamma-distributed cluster sizes, tested with a
/// cluster-robust z statistic.
pub fn power_simulated(p: &PowerInputs, trials: usize, seed: u64) -> Result<f64> {
    p.validate()?;
    let m = p.clusters_per_arm.round() as usize;
    let sd_c = p.sd * p.icc.sqrt();
    let sd_e = p.sd * (1.0 - p.icc).sqrt();
    let size_dist = if p.cv > 0.0 {
        let shape = 1.0 / (p.cv * p.cv);
        Some(Gamma::new(shape, p.cluster_size / shape).map_err(|e| Error::config("cv", e.to_string()))?)
    } else {
        None
    };
    let crit = stats::normal_quantile(1.0 - p.alpha / 2.0);
    use rayon::prelude::*;
    let rejections: usize = (0..trials)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, b as u64);
            let mut arm = |mu: f64| -> (f64, f64, Vec<(f64, f64)>) {
                let mut totals = Vec::with_capacity(m);
                let (mut sum, mut n) = (0.0, 0.0);
                for _ in 0..m {
                    let k = match &size_dist {
                        Some(d) => (d.sample(&mut rng).round() as usize).max(1),
                        None => p.cluster_size.round().max(1.0) as usize,
                    };
                    let c: f64 = sd_c * rng.sample::<f64, _>(StandardNormal);
                    let s: f64 = (0..k).map(|_| mu + c + sd_e * rng.sample::<f64, _>(StandardNormal)).sum();
                    totals.push((s, k as f64));
                    sum += s;
                    n += k as f64;
                }
                (sum / n, n, totals)
            };
            let (mc, nc, tc) = arm(p.mean_c);
            let (mt, nt, tt) = arm(p.mean_t);
            let v = |mean: f64, n: f64, t: &[(f64, f64)]| {
                let g = t.len() as f64;
                g / (g - 1.0) * t.iter().map(|(s, k)| (s - mean * k).powi(2)).sum::<f64>() / (n * n)
            };
            let z = (mt - mc) / (v(mc, nc, &tc) + v(mt, nt, &tt)).sqrt();
            (z.abs() > crit) as usize
        })
        .sum();
    Ok(rejections as f64 / trials as f64)
}

#[derive(Clone, Debug, Serialize)]
pub struct ComplianceBounds {
    pub main: f64,
    /// ITT with switchers' outcomes set to the sample minimum.
    pub lower: f64,
    /// ITT with switchers' outcomes set to the sample 99th percentile.
    pub upper: f64,
    pub n_switched: usize,
    pub informative: bool,
}

/// Re-estimate the ITT after imputing extreme outcomes for children whose
/// treatment status changed.
pub fn compliance_bounds(frame: &Frame, outcome: &str, switched: &str) -> Result<ComplianceBounds> {
    let rc = frame.randomization_controls();
    let spec = RegressionSpec::new(outcome, &["treated"]).controls(&rc);
    let main = ols_cluster(frame, &spec)?.coef("treated");
    let sw = frame.mask(switched)?;
    let n_switched = sw.iter().filter(|&&b| b).count();
    if n_switched == 0 {
        return Ok(ComplianceBounds {
            main,
            lower: main,
            upper: main,
            n_switched,
            informative: true,
        });
    }
    if n_switched == frame.len() {
        warn!("compliance bounds: every child switched status; bounds are uninformative");
        return Ok(ComplianceBounds {
            main,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            n_switched,
            informative: false,
        });
    }
    let y = frame.get(outcome)?;
    let finite: Vec<f64> = y.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = stats::quantile(&finite, 0.99);
    let with = |v: f64| -> Result<f64> {
        let col: Vec<f64> = y.iter().zip(&sw).map(|(a, s)| if *s { v } else { *a }).collect();
        let f = frame.clone().with("imputed_outcome", col)?;
        let spec = RegressionSpec::new("imputed_outcome", &["treated"]).controls(&rc);
        Ok(ols_cluster(&f, &spec)?.coef("treated"))
    };
    Ok(ComplianceBounds {
        main,
        lower: with(lo)?,
        upper: with(hi)?,
        n_switched,
        informative: true,
    })
}
