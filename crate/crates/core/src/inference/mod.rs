//! Effect estimation and inference for the trial.

pub mod estimators;
pub mod ols;
pub mod permutation;
pub mod targeting;

pub use estimators::{
    balance_f_test, compliance_bounds, disparity_model, first_stage, iv_wald, joint_disparity_chi2, peer_share,
    power_calc, power_simulated, spillover_test, ComplianceBounds, DisparityResult, PowerInputs, BALANCE_COVARIATES,
};
pub use ols::{ols_cluster, stacked_wald_chi2, JointTest, RegressionResult, RegressionSpec, TermEstimate};
pub use permutation::{permutation_p, permutation_test, PermutationOptions, PermutationResult};
pub use targeting::{
    default_loo_features, loo_predicted_harm, simple_slope, subgroup_targeting_scan, targeting_tests, LooPrediction,
    ScanPoint, ScanResult, TargetingResults, TOP_QUARTILE_SCORE,
};

use nalgebra::DMatrix;

use crate::cohort::{ChildRecord, N_OUTCOMES, OUTCOME_NAMES};
use crate::frame::Frame;
use crate::index::{harm_index, top_percentile_flag, HarmIndex, IndexSpec, OutcomeMatrix, Window};
use crate::Result;

/// Share of the pooled sample flagged as the most harmed.
pub const TOP_SHARE: f64 = 0.01;

/// Everything the estimators read, derived from one cohort.
pub struct AnalysisData {
    pub frame: Frame,
    pub index: HarmIndex,
    pub spec: IndexSpec,
    pub window: Window,
}

/// Build the analysis frame: canonical columns, randomization-control
/// indicators, window counts, the harm index (`harm`), the pooled top-1%
/// flag (`top1`), the prior-period index (`prior_harm`) and its
/// leave-one-out prediction from pre-determined features (`predicted_harm`,
/// fit on control children).
pub fn prepare(records: &[ChildRecord], spec: &IndexSpec, window: Window) -> Result<AnalysisData> {
    let mut frame = Frame::from_records(records);
    frame.add_randomization_controls()?;
    let counts = OutcomeMatrix::from_records(records, window)?;
    for k in 0..N_OUTCOMES {
        frame.insert(OUTCOME_NAMES[k], counts.data().column(k).iter().copied().collect())?;
    }
    let index = harm_index(&counts, spec)?;
    frame.insert("harm", index.values.clone())?;
    let ids: Vec<u64> = records.iter().map(|r| r.child_id).collect();
    let top = top_percentile_flag(&index.values, TOP_SHARE, Some(&ids))?;
    frame.insert("top1", top.iter().map(|&b| b as u8 as f64).collect())?;
    let prior = OutcomeMatrix::new(
        DMatrix::from_fn(records.len(), N_OUTCOMES, |i, k| records[i].prior_outcomes[k] as f64),
        records.iter().map(|r| !r.treated).collect(),
    )?;
    frame.insert("prior_harm", harm_index(&prior, spec)?.values)?;
    let control: Vec<bool> = records.iter().map(|r| !r.treated).collect();
    let loo = loo_predicted_harm(&frame, "harm", &default_loo_features(), Some(&control))?;
    frame.insert("predicted_harm", loo.predictions)?;
    Ok(AnalysisData {
        frame,
        index,
        spec: *spec,
        window,
    })
}

/// Intent-to-treat regression of `outcome` on treatment with randomization
/// controls, clustered by household.
pub fn itt(frame: &Frame, outcome: &str) -> Result<RegressionResult> {
    let rc = frame.randomization_controls();
    ols_cluster(frame, &RegressionSpec::new(outcome, &["treated"]).controls(&rc))
}

pub fn itt_spec(frame: &Frame, outcome: &str) -> RegressionSpec {
    RegressionSpec::new(outcome, &["treated"]).controls(&frame.randomization_controls())
}
