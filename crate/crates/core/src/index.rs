//! Harm index construction from the five outcome counts.
//!
//! Columns are standardized on a reference sample (the control arm by
//! default) and then combined; the combined score is restandardized on the
//! same reference rows so control has mean 0 and variance 1.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cohort::{ChildRecord, N_OUTCOMES};
use crate::{stats, Error, Result};

/// Position of the injury column, which fixes the sign of the first
/// principal component.
pub const INJURY_COLUMN: usize = 1;
pub const RIDGE: f64 = 1e-8;

/// Outcome window for the counts that enter the index.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Days 30 onward.
    #[default]
    Main,
    /// From the day of referral.
    Full,
    /// Days 60 onward.
    Donut60,
}

impl Window {
    pub fn counts(self, r: &ChildRecord) -> [u32; N_OUTCOMES] {
        match self {
            Window::Main => r.outcomes,
            Window::Full => std::array::from_fn(|k| r.outcomes[k] + r.outcomes_early[k]),
            Window::Donut60 => std::array::from_fn(|k| r.outcomes[k] - r.outcomes_30_60[k]),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Window::Main => "main",
            Window::Full => "full",
            Window::Donut60 => "donut60",
        }
    }
}

impl FromStr for Window {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" | "30" => Ok(Window::Main),
            "full" | "0" => Ok(Window::Full),
            "donut60" | "60" => Ok(Window::Donut60),
            _ => Err(Error::config("window", format!("unknown window `{s}` (main|full|donut60)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexVariant {
    #[default]
    Equal,
    Obrien,
    Binary,
    Pca1,
}

impl IndexVariant {
    pub const ALL: [IndexVariant; 4] = [IndexVariant::Equal, IndexVariant::Obrien, IndexVariant::Binary, IndexVariant::Pca1];

    pub fn name(self) -> &'static str {
        match self {
            IndexVariant::Equal => "equal",
            IndexVariant::Obrien => "obrien",
            IndexVariant::Binary => "binary",
            IndexVariant::Pca1 => "pca1",
        }
    }
}

impl FromStr for IndexVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" | "equal_weight" => Ok(IndexVariant::Equal),
            "obrien" => Ok(IndexVariant::Obrien),
            "binary" => Ok(IndexVariant::Binary),
            "pca1" => Ok(IndexVariant::Pca1),
            _ => Err(Error::config("index", format!("unknown index variant `{s}` (equal|obrien|binary|pca1)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    #[default]
    Control,
    Full,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSpec {
    pub variant: IndexVariant,
    pub standardization: Standardization,
    /// Add a small ridge to a singular covariance instead of failing.
    pub ridge: bool,
}

impl IndexSpec {
    pub fn new(variant: IndexVariant) -> Self {
        IndexSpec {
            variant,
            ..IndexSpec::default()
        }
    }
}

/// Outcome counts (rows are children) plus the reference rows used for
/// standardization.
#[derive(Clone, Debug)]
pub struct OutcomeMatrix {
    data: DMatrix<f64>,
    reference: Vec<bool>,
}

impl OutcomeMatrix {
    pub fn new(data: DMatrix<f64>, reference: Vec<bool>) -> Result<Self> {
        if reference.len() != data.nrows() {
            return Err(Error::Data(format!(
                "reference mask has {} entries for {} rows",
                reference.len(),
                data.nrows()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Data("outcome counts must be finite and non-negative".into()));
        }
        Ok(OutcomeMatrix { data, reference })
    }

    /// Counts in the chosen window, standardized against the control arm.
    pub fn from_records(records: &[ChildRecord], window: Window) -> Result<Self> {
        let data = DMatrix::from_fn(records.len(), N_OUTCOMES, |i, k| window.counts(&records[i])[k] as f64);
        Self::new(data, records.iter().map(|r| !r.treated).collect())
    }

    pub fn with_reference(mut self, reference: Vec<bool>) -> Result<Self> {
        if reference.len() != self.data.nrows() {
            return Err(Error::Data("reference mask length mismatch".into()));
        }
        self.reference = reference;
        Ok(self)
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn reference(&self) -> &[bool] {
        &self.reference
    }

    fn binarized(&self) -> DMatrix<f64> {
        self.data.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
    }
}

/// Location and scale from the reference rows (n-1 convention).
fn reference_moments(column: &[f64], reference: &[bool]) -> Result<(f64, f64)> {
    let r: Vec<f64> = column.iter().zip(reference).filter(|(_, &m)| m).map(|(v, _)| *v).collect();
    if r.len() < 2 {
        return Err(Error::Data(format!("standardization needs at least 2 reference rows, got {}", r.len())));
    }
    let sd = stats::sd(&r);
    if !(sd > 0.0) {
        return Err(Error::Data("degenerate column: zero variance in the reference sample".into()));
    }
    Ok((stats::mean(&r), sd))
}

pub fn standardize(column: &[f64], reference: &[bool]) -> Result<Vec<f64>> {
    if column.len() != reference.len() {
        return Err(Error::Data("reference mask length mismatch".into()));
    }
    let (m, s) = reference_moments(column, reference)?;
    Ok(column.iter().map(|v| (v - m) / s).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct HarmIndex {
    pub values: Vec<f64>,
    /// Index value of a child with zero events in every outcome.
    pub floor: f64,
    /// Weights on the standardized columns (normalized to sum to one, except
    /// for the principal component, which has unit length).
    pub weights: Vec<f64>,
    /// Eigenvalues of the reference correlation matrix, largest first (pca1 only).
    pub eigenvalues: Option<Vec<f64>>,
}

struct Standardized {
    z: DMatrix<f64>,
    zero_row: DVector<f64>,
}

fn standardize_columns(data: &DMatrix<f64>, reference: &[bool]) -> Result<Standardized> {
    let mut z = data.clone();
    let mut zero_row = DVector::zeros(data.ncols());
    for j in 0..data.ncols() {
        let col: Vec<f64> = data.column(j).iter().copied().collect();
        let (m, s) = reference_moments(&col, reference)
            .map_err(|e| Error::Data(format!("outcome column {j}: {e}")))?;
        for i in 0..data.nrows() {
            z[(i, j)] = (data[(i, j)] - m) / s;
        }
        zero_row[j] = -m / s;
    }
    Ok(Standardized { z, zero_row })
}

fn reference_covariance(z: &DMatrix<f64>, reference: &[bool]) -> DMatrix<f64> {
    let rows: Vec<usize> = (0..z.nrows()).filter(|&i| reference[i]).collect();
    let k = z.ncols();
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..k).map(|j| rows.iter().map(|&i| z[(i, j)]).sum::<f64>() / n).collect();
    DMatrix::from_fn(k, k, |a, b| {
        rows.iter().map(|&i| (z[(i, a)] - means[a]) * (z[(i, b)] - means[b])).sum::<f64>() / (n - 1.0)
    })
}

pub fn harm_index(m: &OutcomeMatrix, spec: &IndexSpec) -> Result<HarmIndex> {
    let reference: Vec<bool> = match spec.standardization {
        Standardization::Control => m.reference.clone(),
        Standardization::Full => vec![true; m.nrows()],
    };
    let data = match spec.variant {
        IndexVariant::Binary => m.binarized(),
        _ => m.data.clone(),
    };
    let st = standardize_columns(&data, &reference)?;
    let k = data.ncols();
    let (weights, eigenvalues) = match spec.variant {
        IndexVariant::Equal | IndexVariant::Binary => (DVector::from_element(k, 1.0 / k as f64), None),
        IndexVariant::Obrien => {
            let mut cov = reference_covariance(&st.z, &reference);
            if spec.ridge {
                for j in 0..k {
                    cov[(j, j)] += RIDGE;
                }
            }
            let chol = cov.cholesky().ok_or_else(|| {
                Error::Estimation("outcome covariance is singular; rerun with the ridge option".into())
            })?;
            let w = chol.solve(&DVector::from_element(k, 1.0));
            let total = w.sum();
            if !(total.abs() > 0.0) || w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Estimation("inverse-covariance weights are degenerate".into()));
            }
            (w / total, None)
        }
        IndexVariant::Pca1 => {
            let cov = reference_covariance(&st.z, &reference);
            let eig = SymmetricEigen::new(cov);
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let mut v: DVector<f64> = eig.eigenvectors.column(order[0]).into_owned();
            let anchor = if k > INJURY_COLUMN && v[INJURY_COLUMN] != 0.0 { v[INJURY_COLUMN] } else { v.sum() };
            if anchor < 0.0 {
                v = -v;
            }
            (v, Some(order.iter().map(|&i| eig.eigenvalues[i]).collect()))
        }
    };
    let raw: Vec<f64> = (&st.z * &weights).iter().copied().collect();
    let raw_floor = st.zero_row.dot(&weights);
    let (mu, sd) = reference_moments(&raw, &reference)
        .map_err(|e| Error::Data(format!("combined index: {e}")))?;
    Ok(HarmIndex {
        values: raw.iter().map(|v| (v - mu) / sd).collect(),
        floor: (raw_floor - mu) / sd,
        weights: weights.iter().copied().collect(),
        eigenvalues,
    })
}

/// Internal consistency of the standardized columns over the reference rows.
pub fn cronbach_alpha(m: &OutcomeMatrix) -> Result<f64> {
    let k = m.ncols();
    if k < 2 {
        return Err(Error::Domain("Cronbach's alpha needs at least two columns".into()));
    }
    let st = standardize_columns(&m.data, &m.reference)?;
    let cov = reference_covariance(&st.z, &m.reference);
    let total: f64 = cov.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Domain("zero variance of the summed scale".into()));
    }
    let item: f64 = cov.diagonal().sum();
    let kf = k as f64;
    Ok(kf / (kf - 1.0) * (1.0 - item / total))
}

/// Flag the ceil(q N) largest values. Ties go to the smaller id, or to the
/// earlier position when no ids are given.
pub fn top_percentile_flag(values: &[f64], q: f64, ids: Option<&[u64]>) -> Result<Vec<bool>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("percentile share {q} must lie in (0, 1)")));
    }
    if let Some(ids) = ids {
        if ids.len() != values.len() {
            return Err(Error::Data("ids and values differ in length".into()));
        }
    }
    let n = values.len();
    let k = flag_count(q, n);
    let key = |i: usize| ids.map(|v| v[i]).unwrap_or(i as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(key(a).cmp(&key(b))));
    let mut flags = vec![false; n];
    for &i in order.iter().take(k) {
        flags[i] = true;
    }
    Ok(flags)
}

/// ceil(q n), robust to q n landing a rounding error above an integer.
pub fn flag_count(q: f64, n: usize) -> usize {
    ((q * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[[f64; 5]]) -> OutcomeMatrix {
        let d = DMatrix::from_fn(rows.len(), 5, |i, j| rows[i][j]);
        OutcomeMatrix::new(d, vec![true; rows.len()]).unwrap()
    }

    #[test]
    fn standardize_two_points() {
        let z = standardize(&[0.0, 2.0], &[true, true]).unwrap();
        let s = 2f64.sqrt() / 2.0;
        assert!((z[0] + s).abs() < 1e-15 && (z[1] - s).abs() < 1e-15);
        assert!(standardize(&[3.0, 3.0, 3.0], &[true; 3]).is_err());
    }

    #[test]
    fn zero_row_below_mean() {
        let m = matrix(&[
            [0.0, 0.0, 0.0, 0.0, 0.0],
            [1.0, 2.0, 1.0, 1.0, 3.0],
            [2.0, 1.0, 3.0, 1.0, 1.0],
            [1.0, 1.0, 1.0, 2.0, 1.0],
        ]);
        for v in IndexVariant::ALL {
            let h = harm_index(&m, &IndexSpec::new(v)).unwrap();
            assert!(h.values[0] < 0.0, "{v:?}");
            assert!((h.floor - h.values[0]).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn top_flags_count_and_ties() {
        let v: Vec<f64> = (0..3431).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = top_percentile_flag(&v, 0.01, None).unwrap();
        assert_eq!(f.iter().filter(|&&b| b).count(), 35);
        let min_in = v.iter().zip(&f).filter(|(_, &b)| b).map(|(x, _)| *x).fold(f64::INFINITY, f64::min);
        let max_out = v.iter().zip(&f).filter(|(_, &b)| !b).map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
        assert!(min_in >= max_out);
        let flat = vec![1.0; 10];
        let ids: Vec<u64> = (0..10).rev().collect();
        let f = top_percentile_flag(&flat, 0.25, Some(&ids)).unwrap();
        assert_eq!(f.iter().filter(|&&b| b).count(), 3);
        assert!(f[9] && f[8] && f[7]);
        assert_eq!(flag_count(0.3, 1000), 300);
    }

    #[test]
    fn cronbach_identical_columns() {
        let rows: Vec<[f64; 5]> = (0..20).map(|i| [(i % 7) as f64; 5]).collect();
        assert!((cronbach_alpha(&matrix(&rows)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_sign_and_order() {
        let rows: Vec<[f64; 5]> = (0..40)
            .map(|i| {
                let b = (i % 5) as f64;
                [b, b + (i % 3) as f64, b * 2.0, (i % 2) as f64, b + (i % 4) as f64]
            })
            .collect();
        let h = harm_index(&matrix(&rows), &IndexSpec::new(IndexVariant::Pca1)).unwrap();
        assert!(h.weights[INJURY_COLUMN] > 0.0);
        let ev = h.eigenvalues.unwrap();
        assert!(ev.windows(2).all(|w| w[0] >= w[1]));
    }
}
