//! Randomization inference: re-draw treatment at the household level within
//! randomization strata and compare the treatment coefficient.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::ols::{build_design, ols_cluster, RegressionSpec};
use crate::frame::Frame;
use crate::{rng, Error, Result};

/// Relative slack when comparing permuted and observed statistics.
const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct PermutationOptions {
    pub n_perm: usize,
    pub seed: u64,
    /// Compare cluster-robust t statistics instead of coefficients.
    pub studentized: bool,
    /// Column whose values define the strata.
    pub strata: String,
    /// Column identifying the unit whose status is permuted.
    pub unit: String,
}

impl PermutationOptions {
    pub fn new(n_perm: usize, seed: u64) -> Self {
        PermutationOptions {
            n_perm,
            seed,
            studentized: false,
            strata: "rc_stratum".into(),
            unit: "household_id".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PermutationResult {
    pub p_value: f64,
    pub observed: f64,
    pub n_perm: usize,
    pub exceed: usize,
    pub skipped_strata: Vec<String>,
}

/// Counting rule shared by every permutation test.
pub fn permutation_p(observed: f64, permuted: &[f64]) -> (usize, f64) {
    let thr = observed.abs() * (1.0 - TIE_TOL) - TIE_TOL;
    let exceed = permuted.iter().filter(|v| v.abs() >= thr).count();
    (exceed, (1 + exceed) as f64 / (1 + permuted.len()) as f64)
}

struct Layout {
    /// Row indices (into the regression sample) for each permutable unit.
    units: Vec<Vec<usize>>,
    status: Vec<f64>,
    /// Units grouped by stratum; only strata with two or more units.
    groups: Vec<Vec<usize>>,
    skipped: Vec<String>,
}

fn layout(frame: &Frame, rows: &[usize], treat: &str, opts: &PermutationOptions) -> Result<Layout> {
    let t = frame.get(treat)?;
    let unit = frame.get(&opts.unit)?;
    let stratum = frame.get(&opts.strata)?;
    let mut by_unit: BTreeMap<u64, (usize, f64, f64)> = BTreeMap::new();
    let mut units: Vec<Vec<usize>> = Vec::new();
    let mut status = Vec::new();
    let mut strata_of = Vec::new();
    for (pos, &i) in rows.iter().enumerate() {
        let key = unit[i].to_bits();
        let (idx, s, st) = *by_unit.entry(key).or_insert_with(|| {
            units.push(Vec::new());
            status.push(t[i]);
            strata_of.push(stratum[i]);
            (units.len() - 1, t[i], stratum[i])
        });
        if s != t[i] || st != stratum[i] {
            return Err(Error::Data(format!(
                "`{treat}` or `{}` varies within {} {}",
                opts.strata, opts.unit, unit[i]
            )));
        }
        units[idx].push(pos);
    }
    let mut by_stratum: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (u, s) in strata_of.iter().enumerate() {
        by_stratum.entry(s.to_bits()).or_default().push(u);
    }
    let mut groups = Vec::new();
    let mut skipped = Vec::new();
    for (s, us) in by_stratum {
        if us.len() < 2 {
            let label = format!("{}={}", opts.strata, f64::from_bits(s));
            warn!("permutation: stratum {label} has a single {} and is held fixed", opts.unit);
            skipped.push(label);
        } else {
            groups.push(us);
        }
    }
    Ok(Layout {
        units,
        status,
        groups,
        skipped,
    })
}

fn permuted_status(l: &Layout, seed: u64, b: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, b as u64);
    let mut s = l.status.clone();
    for g in &l.groups {
        let mut vals: Vec<f64> = g.iter().map(|&u| l.status[u]).collect();
        vals.shuffle(&mut rng);
        for (&u, v) in g.iter().zip(vals) {
            s[u] = v;
        }
    }
    s
}

/// Two-sided permutation p-value for the first focal term of `spec`,
/// which must be constant within each permuted unit.
pub fn permutation_test(frame: &Frame, spec: &RegressionSpec, opts: &PermutationOptions) -> Result<PermutationResult> {
    if opts.n_perm < 99 {
        return Err(Error::config("n_perm", format!("{} permutations requested, at least 99 required", opts.n_perm)));
    }
    let treat = spec
        .focal
        .first()
        .ok_or_else(|| Error::config("focal", "permutation test needs a treatment term"))?
        .clone();
    let rows = super::ols::usable_rows(frame, spec)?;
    let lay = layout(frame, &rows, &treat, opts)?;
    let n = rows.len();

    let (observed, permuted): (f64, Vec<f64>) = if opts.studentized {
        let obs = ols_cluster(frame, spec)?.term(&treat)?.t_stat;
        let base = frame.filter(&{
            let mut m = vec![false; frame.len()];
            for &i in &rows {
                m[i] = true;
            }
            m
        })?;
        let sub_spec = RegressionSpec {
            filter: None,
            ..spec.clone()
        };
        let perm: Vec<f64> = (0..opts.n_perm)
            .into_par_iter()
            .map(|b| -> Result<f64> {
                let s = permuted_status(&lay, opts.seed, b);
                let mut col = vec![0.0; n];
                for (u, rs) in lay.units.iter().enumerate() {
                    for &p in rs {
                        col[p] = s[u];
                    }
                }
                let f = base.clone().with(treat.clone(), col)?;
                Ok(ols_cluster(&f, &sub_spec)?.term(&treat)?.t_stat)
            })
            .collect::<Result<_>>()?;
        (obs, perm)
    } else {
        // Frisch-Waugh-Lovell: residualize y on the other regressors once and
        // project each permuted treatment vector.
        let d = build_design(frame, spec)?;
        let tpos = d
            .names
            .iter()
            .position(|nm| *nm == treat)
            .ok_or_else(|| Error::Estimation(format!("`{treat}` dropped from design")))?;
        let others: Vec<usize> = (0..d.x.ncols()).filter(|&j| j != tpos).collect();
        let w = DMatrix::from_fn(n, others.len(), |i, j| d.x[(i, others[j])]);
        let q = if others.is_empty() { DMatrix::zeros(n, 0) } else { w.qr().q() };
        let resid = |v: &DVector<f64>| -> DVector<f64> {
            if q.ncols() == 0 {
                v.clone()
            } else {
                v - &q * (q.transpose() * v)
            }
        };
        let y_res = resid(&d.y);
        let coef = |t: &DVector<f64>| -> f64 {
            let tr = resid(t);
            let den = tr.dot(&tr);
            if den <= 1e-12 * t.dot(t).max(1e-300) {
                f64::NAN
            } else {
                tr.dot(&y_res) / den
            }
        };
        let tcol = DVector::from_iterator(n, (0..n).map(|i| d.x[(i, tpos)]));
        let obs = coef(&tcol);
        let perm: Vec<f64> = (0..opts.n_perm)
            .into_par_iter()
            .map(|b| {
                let s = permuted_status(&lay, opts.seed, b);
                let mut col = DVector::zeros(n);
                for (u, rs) in lay.units.iter().enumerate() {
                    for &p in rs {
                        col[p] = s[u];
                    }
                }
                coef(&col)
            })
            .collect();
        (obs, perm)
    };
    if !observed.is_finite() {
        return Err(Error::Estimation("observed statistic is not finite".into()));
    }
    let finite: Vec<f64> = permuted.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < permuted.len() {
        warn!("permutation: {} draws gave a degenerate design and were discarded", permuted.len() - finite.len());
    }
    let (exceed, p) = permutation_p(observed, &finite);
    Ok(PermutationResult {
        p_value: p,
        observed,
        n_perm: finite.len(),
        exceed,
        skipped_strata: lay.skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_rule() {
        let perm: Vec<f64> = (0..99).map(|i| i as f64 / 100.0).collect();
        assert_eq!(permutation_p(5.0, &perm).1, 0.01);
        assert_eq!(permutation_p(0.0, &perm).1, 1.0);
        assert_eq!(permutation_p(-0.975, &perm), (1, 0.02));
    }

    #[test]
    fn too_few_permutations() {
        let f = Frame::new(2).with("y", vec![0.0, 1.0]).unwrap();
        let spec = RegressionSpec::new("y", &["t"]);
        assert!(matches!(
            permutation_test(&f, &spec, &PermutationOptions::new(50, 1)),
            Err(Error::Config { .. })
        ));
    }
}
