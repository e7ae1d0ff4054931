//! Least squares with cluster-robust (CR1) standard errors.

use std::collections::HashMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::frame::Frame;
use crate::{stats, Error, Result};

/// Relative residual norm below which a column counts as collinear.
const COLLINEAR_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionSpec {
    pub outcome: String,
    /// Terms of interest; estimation fails if any is collinear.
    pub focal: Vec<String>,
    /// Nuisance terms, dropped silently (and reported) when collinear.
    pub controls: Vec<String>,
    pub cluster: String,
    pub filter: Option<Vec<bool>>,
    pub intercept: bool,
}

impl RegressionSpec {
    pub fn new(outcome: &str, focal: &[&str]) -> Self {
        RegressionSpec {
            outcome: outcome.to_string(),
            focal: focal.iter().map(|s| s.to_string()).collect(),
            controls: Vec::new(),
            cluster: "household_id".to_string(),
            filter: None,
            intercept: true,
        }
    }

    pub fn controls<S: AsRef<str>>(mut self, c: &[S]) -> Self {
        self.controls.extend(c.iter().map(|s| s.as_ref().to_string()));
        self
    }

    pub fn cluster(mut self, c: &str) -> Self {
        self.cluster = c.to_string();
        self
    }

    pub fn filter(mut self, mask: Vec<bool>) -> Self {
        self.filter = Some(match self.filter.take() {
            Some(old) => old.iter().zip(&mask).map(|(a, b)| *a && *b).collect(),
            None => mask,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.focal.iter().find(|t| self.controls.contains(t)) {
            return Err(Error::config("controls", format!("focal term `{t}` also listed as a control")));
        }
        if self.focal.iter().any(|t| *t == self.outcome) && self.focal.len() > 1 {
            return Err(Error::config("focal", "outcome listed among several focal terms"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermEstimate {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JointTest {
    pub kind: String,
    pub statistic: f64,
    pub df1: f64,
    pub df2: Option<f64>,
    pub p_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegressionResult {
    pub outcome: String,
    pub terms: Vec<TermEstimate>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub dropped: Vec<String>,
    pub permutation_p: Option<f64>,
    pub joint: Option<JointTest>,
    #[serde(skip)]
    pub vcov: DMatrix<f64>,
    /// Cluster keys aligned with the columns of `influence`.
    #[serde(skip)]
    pub cluster_keys: Vec<f64>,
    /// Per-cluster influence of each kept term on the coefficient vector.
    #[serde(skip)]
    pub influence: DMatrix<f64>,
    /// CR1 small-sample factor.
    #[serde(skip)]
    pub scale: f64,
}

impl RegressionResult {
    pub fn term(&self, name: &str) -> Result<&TermEstimate> {
        self.terms
            .iter()
            .find(|t| t.term == name)
            .ok_or_else(|| Error::Estimation(format!("term `{name}` not in the fitted model")))
    }

    pub fn coef(&self, name: &str) -> f64 {
        self.term(name).map(|t| t.estimate).unwrap_or(f64::NAN)
    }

    fn position(&self, name: &str) -> Result<usize> {
        self.terms
            .iter()
            .position(|t| t.term == name)
            .ok_or_else(|| Error::Estimation(format!("term `{name}` not in the fitted model")))
    }

    /// Cluster-robust Wald F test that the named coefficients are all zero,
    /// with G-1 denominator degrees of freedom.
    pub fn wald_f(&self, names: &[&str]) -> Result<JointTest> {
        let idx: Vec<usize> = names.iter().map(|n| self.position(n)).collect::<Result<_>>()?;
        let q = idx.len();
        let b = DVector::from_iterator(q, idx.iter().map(|&i| self.terms[i].estimate));
        let v = DMatrix::from_fn(q, q, |a, c| self.vcov[(idx[a], idx[c])]);
        let w = quad_form_inverse(&v, &b)?;
        let f = w / q as f64;
        let df2 = (self.n_clusters - 1) as f64;
        Ok(JointTest {
            kind: "F".into(),
            statistic: f,
            df1: q as f64,
            df2: Some(df2),
            p_value: stats::f_upper_p(f, q as f64, df2),
        })
    }

    pub fn influence_row(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.position(name)?;
        Ok(self.influence.row(i).iter().copied().collect())
    }
}

/// b' V^-1 b, failing on a singular V.
pub(crate) fn quad_form_inverse(v: &DMatrix<f64>, b: &DVector<f64>) -> Result<f64> {
    if b.iter().all(|x| *x == 0.0) {
        return Ok(0.0);
    }
    if let Some(ch) = v.clone().cholesky() {
        return Ok(b.dot(&ch.solve(b)));
    }
    let inv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Estimation("joint test covariance is singular".into()))?;
    let w = b.dot(&(inv * b));
    if w.is_finite() {
        Ok(w)
    } else {
        Err(Error::Estimation("joint test covariance is singular".into()))
    }
}

pub(crate) struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub names: Vec<String>,
    pub dropped: Vec<String>,
    pub clusters: Vec<usize>,
    pub cluster_keys: Vec<f64>,
}

/// Rows passing the filter with finite values in every used column.
pub(crate) fn usable_rows(frame: &Frame, spec: &RegressionSpec) -> Result<Vec<usize>> {
    let mut cols = vec![frame.get(&spec.outcome)?, frame.get(&spec.cluster)?];
    for t in spec.focal.iter().chain(&spec.controls) {
        cols.push(frame.get(t)?);
    }
    if let Some(f) = &spec.filter {
        if f.len() != frame.len() {
            return Err(Error::Data(format!("sample filter has {} entries, data has {}", f.len(), frame.len())));
        }
    }
    let mut dropped = 0usize;
    let rows: Vec<usize> = (0..frame.len())
        .filter(|&i| spec.filter.as_ref().map(|f| f[i]).unwrap_or(true))
        .filter(|&i| {
            let ok = cols.iter().all(|c| c[i].is_finite());
            if !ok {
                dropped += 1;
            }
            ok
        })
        .collect();
    if dropped > 0 {
        warn!("{}: dropped {dropped} rows with non-finite values", spec.outcome);
    }
    Ok(rows)
}

pub(crate) fn build_design(frame: &Frame, spec: &RegressionSpec) -> Result<Design> {
    spec.validate()?;
    let rows = usable_rows(frame, spec)?;
    let n = rows.len();
    let mut cand: Vec<(String, Vec<f64>, bool)> = Vec::new();
    if spec.intercept {
        cand.push(("(intercept)".into(), vec![1.0; n], true));
    }
    for t in &spec.focal {
        let c = frame.get(t)?;
        cand.push((t.clone(), rows.iter().map(|&i| c[i]).collect(), true));
    }
    for t in &spec.controls {
        let c = frame.get(t)?;
        cand.push((t.clone(), rows.iter().map(|&i| c[i]).collect(), false));
    }
    // greedy Gram-Schmidt: keep columns that add a new direction
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (name, col, required) in cand {
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut r = col.clone();
        for q in &basis {
            let d: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            for (ri, qi) in r.iter_mut().zip(q) {
                *ri -= d * qi;
            }
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= COLLINEAR_TOL * norm0 {
            if required {
                return Err(Error::Estimation(format!(
                    "focal term `{name}` is collinear with other regressors (or constant) in this sample"
                )));
            }
            dropped.push(name);
            continue;
        }
        basis.push(r.iter().map(|v| v / norm).collect());
        names.push(name);
        kept.push(col);
    }
    if !dropped.is_empty() {
        log::debug!("{}: dropped collinear controls {:?}", spec.outcome, dropped);
    }
    let k = kept.len();
    let x = DMatrix::from_fn(n, k, |i, j| kept[j][i]);
    let yc = frame.get(&spec.outcome)?;
    let y = DVector::from_iterator(n, rows.iter().map(|&i| yc[i]));
    let cc = frame.get(&spec.cluster)?;
    let mut map: HashMap<u64, usize> = HashMap::new();
    let mut cluster_keys = Vec::new();
    let clusters: Vec<usize> = rows
        .iter()
        .map(|&i| {
            let key = cc[i];
            *map.entry(key.to_bits()).or_insert_with(|| {
                cluster_keys.push(key);
                cluster_keys.len() - 1
            })
        })
        .collect();
    Ok(Design {
        x,
        y,
        names,
        dropped,
        clusters,
        cluster_keys,
    })
}

pub fn ols_cluster(frame: &Frame, spec: &RegressionSpec) -> Result<RegressionResult> {
    let d = build_design(frame, spec)?;
    fit_design(d, &spec.outcome)
}

pub(crate) fn fit_design(d: Design, outcome: &str) -> Result<RegressionResult> {
    let n = d.x.nrows();
    let k = d.x.ncols();
    let g = d.cluster_keys.len();
    if n <= k {
        return Err(Error::Estimation(format!("{n} observations for {k} parameters")));
    }
    if g < 2 {
        return Err(Error::Estimation(format!("cluster-robust errors need at least 2 clusters, found {g}")));
    }
    let qr = d.x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &d.y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Estimation("design matrix is singular".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Estimation("design matrix is singular".into()))?;
    let bread = &r_inv * r_inv.transpose();
    let resid = &d.y - &d.x * &beta;
    let mut scores = DMatrix::<f64>::zeros(k, g);
    for i in 0..n {
        let c = d.clusters[i];
        let e = resid[i];
        for j in 0..k {
            scores[(j, c)] += d.x[(i, j)] * e;
        }
    }
    let influence = &bread * &scores;
    let meat = &influence * influence.transpose();
    let gf = g as f64;
    let nf = n as f64;
    let scale = gf / (gf - 1.0) * (nf - 1.0) / (nf - k as f64);
    let vcov = meat * scale;
    let df = gf - 1.0;
    let terms = d
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let est = beta[j];
            let se = vcov[(j, j)].max(0.0).sqrt();
            let t = if se > 0.0 {
                est / se
            } else if est == 0.0 {
                f64::NAN
            } else {
                est.signum() * f64::INFINITY
            };
            TermEstimate {
                term: name.clone(),
                estimate: est,
                std_error: se,
                t_stat: t,
                p_value: stats::t_two_sided_p(t, df),
            }
        })
        .collect();
    Ok(RegressionResult {
        outcome: outcome.to_string(),
        terms,
        n_obs: n,
        n_clusters: g,
        dropped: d.dropped,
        permutation_p: None,
        joint: None,
        vcov,
        cluster_keys: d.cluster_keys,
        influence,
        scale,
    })
}

/// Stacked Wald chi-squared that a set of coefficients from separate
/// regressions on the same clusters are jointly zero. Cross-equation
/// covariances come from the per-cluster influence functions.
pub fn stacked_wald_chi2(items: &[(&RegressionResult, &str)]) -> Result<JointTest> {
    if items.len() < 2 {
        return Err(Error::Domain("joint test needs at least two coefficients".into()));
    }
    let mut index: HashMap<u64, usize> = HashMap::new();
    for (r, _) in items {
        for k in &r.cluster_keys {
            let len = index.len();
            index.entry(k.to_bits()).or_insert(len);
        }
    }
    let g = index.len();
    let m = items.len();
    let mut psi = DMatrix::<f64>::zeros(m, g);
    let mut b = DVector::<f64>::zeros(m);
    for (a, (r, name)) in items.iter().enumerate() {
        b[a] = r.term(name)?.estimate;
        let row = r.influence_row(name)?;
        for (c, key) in r.cluster_keys.iter().enumerate() {
            psi[(a, index[&key.to_bits()])] += row[c];
        }
    }
    let raw = &psi * psi.transpose();
    let v = DMatrix::from_fn(m, m, |a, c| raw[(a, c)] * (items[a].0.scale * items[c].0.scale).sqrt());
    let w = quad_form_inverse(&v, &b)?;
    Ok(JointTest {
        kind: "chi2".into(),
        statistic: w,
        df1: m as f64,
        df2: None,
        p_value: stats::chi2_upper_p(w, m as f64),
    })
}
