//! Tests of whether tool access changed *who* was screened in.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::ols::{ols_cluster, RegressionResult, RegressionSpec};
use crate::frame::Frame;
use crate::{rng, stats, Error, Result};

/// Lowest score in the top quartile of the default score distribution.
pub const TOP_QUARTILE_SCORE: f64 = 16.0;

pub fn default_loo_features() -> Vec<String> {
    let mut f: Vec<String> = crate::cohort::OUTCOME_NAMES.iter().map(|o| format!("prior_any_{o}")).collect();
    for c in ["black", "hispanic", "female", "snap", "prior_referrals", "sibling_count", "motherless"] {
        f.push(c.to_string());
    }
    f
}

#[derive(Clone, Debug, Serialize)]
pub struct LooPrediction {
    pub predictions: Vec<f64>,
    pub features: Vec<String>,
    pub dropped: Vec<String>,
}

/// Leave-one-out linear predictions of `outcome` from `features`.
///
/// The predictor is fit on the rows in `fit_mask` (all rows when `None`).
/// Fit rows get their leave-one-out prediction through the hat-matrix
/// identity y_i - e_i / (1 - h_ii); other rows get the full-fit prediction.
pub fn loo_predicted_harm(
    frame: &Frame,
    outcome: &str,
    features: &[String],
    fit_mask: Option<&[bool]>,
) -> Result<LooPrediction> {
    let n = frame.len();
    let fit: Vec<bool> = match fit_mask {
        Some(m) if m.len() != n => return Err(Error::Data("fit mask length mismatch".into())),
        Some(m) => m.to_vec(),
        None => vec![true; n],
    };
    let y = frame.get(outcome)?;
    let cols: Vec<&[f64]> = features.iter().map(|f| frame.get(f)).collect::<Result<_>>()?;
    let fit_rows: Vec<usize> = (0..n).filter(|&i| fit[i]).collect();
    let m = fit_rows.len();
    if m <= features.len() + 1 {
        return Err(Error::Estimation(format!("{m} fit rows for {} features", features.len())));
    }
    // drop collinear features on the fit rows, intercept first
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (m as f64).sqrt(); m]];
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (j, c) in cols.iter().enumerate() {
        let v: Vec<f64> = fit_rows.iter().map(|&i| c[i]).collect();
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut r = v;
        for q in &basis {
            let d: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= 1e-9 * norm0 {
            dropped.push(features[j].clone());
        } else {
            basis.push(r.iter().map(|x| x / norm).collect());
            kept.push(j);
        }
    }
    let k = kept.len() + 1;
    let row = |i: usize| -> DVector<f64> {
        DVector::from_iterator(k, std::iter::once(1.0).chain(kept.iter().map(|&j| cols[j][i])))
    };
    let x = DMatrix::from_fn(m, k, |a, b| if b == 0 { 1.0 } else { cols[kept[b - 1]][fit_rows[a]] });
    let yv = DVector::from_iterator(m, fit_rows.iter().map(|&i| y[i]));
    let qr = x.clone().qr();
    let r = qr.r();
    let beta = r
        .solve_upper_triangular(&(qr.q().transpose() * &yv))
        .ok_or_else(|| Error::Estimation("singular feature matrix".into()))?;
    let q = qr.q();
    let mut pred = vec![0.0; n];
    for i in 0..n {
        pred[i] = row(i).dot(&beta);
    }
    for (a, &i) in fit_rows.iter().enumerate() {
        let h: f64 = q.row(a).iter().map(|v| v * v).sum();
        if h >= 1.0 - 1e-10 {
            return Err(Error::Estimation(format!("row {i} has leverage one; its leave-one-out fit is undefined")));
        }
        let e = y[i] - pred[i];
        pred[i] = y[i] - e / (1.0 - h);
    }
    Ok(LooPrediction {
        predictions: pred,
        features: kept.iter().map(|&j| features[j].clone()).collect(),
        dropped,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TargetingResults {
    /// Harm-index ITT among screened-out children.
    pub screened_out_harm: RegressionResult,
    /// ITT on investigator-found injury among screened-in children.
    pub found_injury: RegressionResult,
    /// Prior harm on treatment, screen-in and their product, top score quartile.
    pub prior_harm: RegressionResult,
    /// Predicted harm on the same model.
    pub predicted_harm: RegressionResult,
}

/// The four targeting tests. `frame` must hold `harm`, `prior_harm` and the
/// leave-one-out prediction `predicted_harm`.
pub fn targeting_tests(frame: &Frame, min_score: f64) -> Result<TargetingResults> {
    let rc = frame.randomization_controls();
    let si = frame.mask("screened_in")?;
    let so: Vec<bool> = si.iter().map(|b| !b).collect();
    let screened_out_harm =
        ols_cluster(frame, &RegressionSpec::new("harm", &["treated"]).controls(&rc).filter(so))?;
    let found_injury =
        ols_cluster(frame, &RegressionSpec::new("cps_found_injury", &["treated"]).controls(&rc).filter(si))?;
    let mut f = frame.clone();
    f.add_product("treated", "screened_in", "treated_x_screened_in")?;
    let top: Vec<bool> = f.get("score")?.iter().map(|&s| s >= min_score).collect();
    let inter = |y: &str| {
        RegressionSpec::new(y, &["treated", "screened_in", "treated_x_screened_in"])
            .controls(&rc)
            .filter(top.clone())
    };
    Ok(TargetingResults {
        screened_out_harm,
        found_injury,
        prior_harm: ols_cluster(&f, &inter("prior_harm"))?,
        predicted_harm: ols_cluster(&f, &inter("predicted_harm"))?,
    })
}

/// Coefficient on `t` in a regression of `y` on an intercept, `t` and `w`.
fn treatment_coef(y: &[f64], t: &[f64], w: &[&[f64]]) -> f64 {
    let n = y.len();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for c in w {
        cols.push(c.to_vec());
    }
    // orthonormal basis of the controls
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for c in cols {
        let norm0 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut r = c;
        for q in &basis {
            let d: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 > 0.0 && norm > 1e-9 * norm0 {
            basis.push(r.iter().map(|v| v / norm).collect());
        }
    }
    let mut tr = t.to_vec();
    for q in &basis {
        let d: f64 = tr.iter().zip(q).map(|(a, b)| a * b).sum();
        tr.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
    }
    let den: f64 = tr.iter().map(|v| v * v).sum();
    if den <= 1e-12 {
        return f64::NAN;
    }
    tr.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / den
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanPoint {
    pub size: usize,
    pub screened_out_itt: f64,
    pub overall_itt: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanResult {
    pub slope: f64,
    pub std_error: f64,
    pub p_value: f64,
    pub points: Vec<ScanPoint>,
}

/// Draw random subsets of children, estimate the ITT on screened-out harm
/// and on overall harm in each, and regress the second on the first.
pub fn subgroup_targeting_scan(frame: &Frame, n_groups: usize, min_size: usize, seed: u64) -> Result<ScanResult> {
    let n = frame.len();
    if n < min_size || min_size == 0 {
        return Err(Error::Domain(format!("sample of {n} is smaller than the minimum subset size {min_size}")));
    }
    if n_groups < 3 {
        return Err(Error::config("n_groups", "at least 3 subsets are needed for a slope"));
    }
    let y = frame.get("harm")?;
    let t = frame.get("treated")?;
    let si = frame.get("screened_in")?;
    let rc_names = frame.randomization_controls();
    let rc: Vec<&[f64]> = rc_names.iter().map(|c| frame.get(c)).collect::<Result<_>>()?;
    let points: Vec<ScanPoint> = (0..n_groups)
        .into_par_iter()
        .map(|g| {
            let mut r = rng::stream(seed, g as u64);
            let size = r.random_range(min_size..=n);
            let mut rows = index::sample(&mut r, n, size).into_vec();
            rows.sort_unstable();
            let pick = |c: &[f64], rs: &[usize]| rs.iter().map(|&i| c[i]).collect::<Vec<f64>>();
            let itt = |rs: &[usize]| {
                let w: Vec<Vec<f64>> = rc.iter().map(|c| pick(c, rs)).collect();
                let wr: Vec<&[f64]> = w.iter().map(|v| v.as_slice()).collect();
                treatment_coef(&pick(y, rs), &pick(t, rs), &wr)
            };
            let so: Vec<usize> = rows.iter().copied().filter(|&i| si[i] == 0.0).collect();
            ScanPoint {
                size,
                screened_out_itt: itt(&so),
                overall_itt: itt(&rows),
            }
        })
        .collect();
    let pts: Vec<&ScanPoint> = points
        .iter()
        .filter(|p| p.screened_out_itt.is_finite() && p.overall_itt.is_finite())
        .collect();
    let xs: Vec<f64> = pts.iter().map(|p| p.screened_out_itt).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.overall_itt).collect();
    let (slope, se, p) = simple_slope(&xs, &ys)?;
    Ok(ScanResult {
        slope,
        std_error: se,
        p_value: p,
        points,
    })
}

/// Ordinary least squares slope with the classical standard error.
pub fn simple_slope(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let n = x.len();
    if n < 3 {
        return Err(Error::Estimation("fewer than three points for the slope".into()));
    }
    let mx = stats::mean(x);
    let my = stats::mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 1e-24 * (1.0 + mx * mx) * n as f64) {
        return Err(Error::Estimation("zero variance in the screened-out effects across subsets".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let se = (rss / (n as f64 - 2.0) / sxx).sqrt();
    let t = slope / se;
    Ok((slope, se, stats::t_two_sided_p(t, n as f64 - 2.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_feature_gives_loo_mean() {
        let y: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let f = Frame::new(10).with("y", y.clone()).unwrap().with("c", vec![3.0; 10]).unwrap();
        let p = loo_predicted_harm(&f, "y", &["c".to_string()], None).unwrap();
        assert_eq!(p.dropped, vec!["c"]);
        let s: f64 = y.iter().sum();
        for i in 0..10 {
            assert!((p.predictions[i] - (s - y[i]) / 9.0).abs() < 1e-10);
        }
    }

    #[test]
    fn coef_matches_ols() {
        let y = [1.0, 3.0, 2.0, 5.0, 4.0, 7.0, 2.5];
        let t = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let w = [0.5, 0.1, 1.5, 2.0, 0.7, 1.1, 0.2];
        let f = Frame::new(7)
            .with("y", y.to_vec())
            .unwrap()
            .with("t", t.to_vec())
            .unwrap()
            .with("w", w.to_vec())
            .unwrap()
            .with("g", (0..7).map(|i| i as f64).collect())
            .unwrap();
        let r = ols_cluster(&f, &RegressionSpec::new("y", &["t"]).controls(&["w"]).cluster("g")).unwrap();
        assert!((treatment_coef(&y, &t, &[&w]) - r.coef("t")).abs() < 1e-12);
    }

    #[test]
    fn slope_needs_variation() {
        assert!(simple_slope(&[1.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]).is_err());
        let (s, _, _) = simple_slope(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
    }
}
