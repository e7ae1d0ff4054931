//! Seeded synthetic trial populations.
//!
//! Children live in households (the randomization cluster). Each child has a
//! latent risk `r` (household plus child component, shifted by group), a
//! ventile risk score built from a noisy copy of `r`, and a latent severity
//! that drives five correlated overdispersed outcome counts. Caseworkers
//! decide screen-ins from an empirical-Bayes estimate of `r`; with the tool
//! their signal is less noisy. The injected treatment effect scales down the
//! severity of treated children whom the tool moved from screen-out to
//! screen-in.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

use crate::{rng, stats, Error, Result};

pub const N_OUTCOMES: usize = 5;
pub const OUTCOME_NAMES: [&str; N_OUTCOMES] =
    ["high_priority", "injury", "avoidable_er", "maltreat_icd", "intentional"];
pub const GROUP_NAMES: [&str; 4] = ["black", "hispanic", "female", "snap"];
pub const N_SCORES: usize = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupFlags {
    pub black: bool,
    pub hispanic: bool,
    pub female: bool,
    pub snap: bool,
}

impl GroupFlags {
    pub fn as_array(&self) -> [bool; 4] {
        [self.black, self.hispanic, self.female, self.snap]
    }

    pub fn get(&self, name: &str) -> Option<bool> {
        GROUP_NAMES.iter().position(|g| *g == name).map(|i| self.as_array()[i])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChildRecord {
    pub child_id: u64,
    pub household_id: u64,
    pub referral_id: u64,
    pub referral_date_index: u32,
    pub group_flags: GroupFlags,
    pub motherless: bool,
    pub sibling_count: u32,
    /// Randomization-control cell: sibling-group size for children assigned
    /// individually, 0 for household-level assignment.
    pub rc_stratum: u32,
    pub score: u8,
    pub treated: bool,
    pub score_recorded: bool,
    pub screened_in: bool,
    pub outcomes: [u32; N_OUTCOMES],
    /// Counts in the first 30 days after referral (outside the main window).
    pub outcomes_early: [u32; N_OUTCOMES],
    /// Counts in days 30-60, a subset of `outcomes`.
    pub outcomes_30_60: [u32; N_OUTCOMES],
    pub prior_outcomes: [u32; N_OUTCOMES],
    pub prior_referrals: u32,
    pub removed: bool,
    pub re_referrals: u32,
    pub cps_found_injury: bool,
    pub decision_minutes: f64,
    pub status_switched: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupParams {
    pub share: f64,
    /// Control-arm gap in the harm index, SD units.
    pub harm_shift: f64,
    /// Shift in latent risk, SD units.
    pub risk_shift: f64,
    /// Overestimate of the group's mean risk in caseworker priors.
    pub worker_bias: f64,
    /// Extra proportional severity reduction for the group's switchers.
    pub effect_shift: f64,
    /// When set, `effect_shift` is solved so the treatment-by-group
    /// interaction on the harm index equals this value.
    pub interaction_target: Option<f64>,
}

impl Default for GroupParams {
    fn default() -> Self {
        GroupParams {
            share: 0.0,
            harm_shift: 0.0,
            risk_shift: 0.0,
            worker_bias: 0.0,
            effect_shift: 0.0,
            interaction_target: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisparityParams {
    pub black: GroupParams,
    pub hispanic: GroupParams,
    pub female: GroupParams,
    pub snap: GroupParams,
}

impl DisparityParams {
    pub fn groups(&self) -> [&GroupParams; 4] {
        [&self.black, &self.hispanic, &self.female, &self.snap]
    }

    pub fn groups_mut(&mut self) -> [&mut GroupParams; 4] {
        [&mut self.black, &mut self.hispanic, &mut self.female, &mut self.snap]
    }

    /// Groups present but with no effect on risk, harm, decisions or treatment.
    pub fn neutral(&self) -> Self {
        let mut d = self.clone();
        for g in d.groups_mut() {
            *g = GroupParams {
                share: g.share,
                ..GroupParams::default()
            };
        }
        d
    }
}

impl Default for DisparityParams {
    fn default() -> Self {
        let g = |share, harm_shift, risk_shift, worker_bias| GroupParams {
            share,
            harm_shift,
            risk_shift,
            worker_bias,
            ..GroupParams::default()
        };
        DisparityParams {
            black: g(0.041, 0.37, 0.37, -0.144),
            hispanic: g(0.18, 0.22, 0.22, 0.0),
            female: g(0.51, 0.099, 0.099, 0.0),
            snap: g(0.64, 0.14, 0.14, 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectMode {
    /// Severity falls only for treated children the tool moved into screen-in.
    Reallocation,
    /// Severity falls proportionally for every treated child.
    Uniform,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    Model,
    /// Screen-in drawn independently of risk in both arms.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n_children: usize,
    pub n_households: Option<usize>,
    pub mean_household_size: f64,
    pub max_household_size: u32,
    pub treatment_share: f64,
    pub screen_in_rate: f64,
    pub score_pmf: Vec<f64>,
    pub removal_prob_by_score: Vec<f64>,
    pub control_outcome_means: [f64; N_OUTCOMES],
    /// Gamma shape of the outcome-specific frailty; infinite means none.
    pub outcome_dispersion: [f64; N_OUTCOMES],
    /// Variance of the shared severity factor (mean 1).
    pub severity_variance: f64,
    pub household_risk_share: f64,
    pub itt_effect_sd: f64,
    pub first_stage: f64,
    pub disparity_params: DisparityParams,
    pub seed: u64,
    pub quirk_enabled: bool,
    pub quirk_cutoff_day: u32,
    pub n_days: u32,
    pub motherless_share: f64,
    /// Share of control children later seen under the other arm.
    pub switch_rate: f64,
    pub worker_noise_var: f64,
    pub noise_reduction: f64,
    pub legal_noise_var: f64,
    pub score_noise_sd: f64,
    pub effect_mode: EffectMode,
    pub decision_mode: DecisionMode,
    /// Proportional severity increase for control children per unit of
    /// same-day treated peer share.
    pub crowd_out: f64,
    pub prior_outcome_scale: f64,
    pub prior_referral_mean: f64,
    pub prior_referral_loading: f64,
    pub cps_injury_base: f64,
    pub decision_minutes_mean: f64,
    pub re_referral_mean: f64,
    pub early_window_share: f64,
    pub mid_window_share: f64,
    pub pilot_draws: usize,
}

pub fn default_score_pmf() -> Vec<f64> {
    let mut v = vec![0.94 / 19.0; N_SCORES];
    v[N_SCORES - 1] = 0.06;
    v
}

/// Removal risk rising geometrically with the score; calibrated so the
/// score's AUC for removal is 0.76 under the default score distribution.
pub fn default_removal_probs() -> Vec<f64> {
    (1..=N_SCORES)
        .map(|s| 0.08375 * (0.183189 * (s as f64 - 20.0)).exp())
        .collect()
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_children: 3431,
            n_households: None,
            mean_household_size: 2.24,
            max_household_size: 8,
            treatment_share: 0.55,
            screen_in_rate: 0.30,
            score_pmf: default_score_pmf(),
            removal_prob_by_score: default_removal_probs(),
            control_outcome_means: [0.660, 0.210, 0.168, 0.013, 0.020],
            outcome_dispersion: [20.0; N_OUTCOMES],
            severity_variance: 10.0,
            household_risk_share: 0.4,
            itt_effect_sd: -0.061,
            first_stage: 0.73,
            disparity_params: DisparityParams::default(),
            seed: 20210301,
            quirk_enabled: true,
            quirk_cutoff_day: 120,
            n_days: 365,
            motherless_share: 0.20,
            switch_rate: 0.04,
            worker_noise_var: 10.0,
            noise_reduction: 10.0,
            legal_noise_var: 0.1,
            score_noise_sd: 0.7,
            effect_mode: EffectMode::Reallocation,
            decision_mode: DecisionMode::Model,
            crowd_out: 0.0,
            prior_outcome_scale: 0.5,
            prior_referral_mean: 2.0,
            prior_referral_loading: 0.6,
            cps_injury_base: 0.06,
            decision_minutes_mean: 11.0,
            re_referral_mean: 0.3,
            early_window_share: 0.1,
            mid_window_share: 0.1,
            pilot_draws: 1_000_000,
        }
    }
}

fn prob(field: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(field, format!("{p} is not a probability")))
    }
}

fn positive(field: &str, x: f64) -> Result<()> {
    if x > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("{x} must be positive")))
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.score_pmf.len() != N_SCORES {
            return Err(Error::config("score_pmf", format!("needs {N_SCORES} entries, got {}", self.score_pmf.len())));
        }
        for (i, p) in self.score_pmf.iter().enumerate() {
            prob(&format!("score_pmf[{i}]"), *p)?;
        }
        let total: f64 = self.score_pmf.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config("score_pmf", format!("sums to {total}, not 1")));
        }
        if self.removal_prob_by_score.len() != N_SCORES {
            return Err(Error::config("removal_prob_by_score", format!("needs {N_SCORES} entries")));
        }
        for (i, p) in self.removal_prob_by_score.iter().enumerate() {
            prob(&format!("removal_prob_by_score[{i}]"), *p)?;
        }
        prob("treatment_share", self.treatment_share)?;
        prob("screen_in_rate", self.screen_in_rate)?;
        prob("first_stage", self.first_stage)?;
        prob("motherless_share", self.motherless_share)?;
        prob("switch_rate", self.switch_rate)?;
        prob("household_risk_share", self.household_risk_share)?;
        prob("cps_injury_base", self.cps_injury_base)?;
        prob("early_window_share", self.early_window_share)?;
        prob("mid_window_share", self.mid_window_share)?;
        if self.early_window_share + self.mid_window_share >= 1.0 {
            return Err(Error::config("mid_window_share", "window shares must leave a positive late window"));
        }
        for (g, name) in self.disparity_params.groups().iter().zip(GROUP_NAMES) {
            prob(&format!("disparity_params.{name}.share"), g.share)?;
        }
        for (i, m) in self.control_outcome_means.iter().enumerate() {
            positive(&format!("control_outcome_means[{i}]"), *m)?;
        }
        for (i, d) in self.outcome_dispersion.iter().enumerate() {
            positive(&format!("outcome_dispersion[{i}]"), *d)?;
        }
        if !(self.severity_variance >= 0.0) {
            return Err(Error::config("severity_variance", "must be non-negative"));
        }
        positive("worker_noise_var", self.worker_noise_var)?;
        if !(self.noise_reduction >= 1.0) {
            return Err(Error::config("noise_reduction", "must be at least 1"));
        }
        if !(self.legal_noise_var >= 0.0) {
            return Err(Error::config("legal_noise_var", "must be non-negative"));
        }
        if !(self.score_noise_sd >= 0.0) {
            return Err(Error::config("score_noise_sd", "must be non-negative"));
        }
        if self.max_household_size < 1 {
            return Err(Error::config("max_household_size", "must be at least 1"));
        }
        let kmax = self.max_household_size as f64;
        if !(self.mean_household_size >= 1.0 && self.mean_household_size <= (kmax + 1.0) / 2.0) {
            return Err(Error::config(
                "mean_household_size",
                format!("must lie in [1, {}] for sizes truncated at {kmax}", (kmax + 1.0) / 2.0),
            ));
        }
        if let Some(h) = self.n_households {
            if self.n_children > 0 && (h == 0 || h > self.n_children || self.n_children > h * self.max_household_size as usize) {
                return Err(Error::config("n_households", format!("{h} households cannot hold {} children", self.n_children)));
            }
        }
        if self.n_days == 0 {
            return Err(Error::config("n_days", "must be positive"));
        }
        positive("decision_minutes_mean", self.decision_minutes_mean)?;
        if !(self.prior_outcome_scale >= 0.0 && self.prior_referral_mean >= 0.0 && self.re_referral_mean >= 0.0) {
            return Err(Error::config("prior_outcome_scale", "rates must be non-negative"));
        }
        if self.crowd_out < -1.0 {
            return Err(Error::config("crowd_out", "must be at least -1"));
        }
        if self.pilot_draws < 10_000 {
            return Err(Error::config("pilot_draws", "needs at least 10000 draws"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// severity factor: B = Q_gamma(Phi(u)), mean 1, variance `severity_variance`

const GRID_LO: f64 = -8.0;
const GRID_HI: f64 = 8.0;
const GRID_STEP: f64 = 1.0 / 256.0;

#[derive(Debug)]
struct SeverityTable {
    ln_b: Vec<f64>,
    second_moment: f64,
}

impl SeverityTable {
    fn build(variance: f64) -> Self {
        let n = ((GRID_HI - GRID_LO) / GRID_STEP).round() as usize + 1;
        if variance == 0.0 {
            return SeverityTable {
                ln_b: vec![0.0; n],
                second_moment: 1.0,
            };
        }
        let shape = 1.0 / variance;
        let dist = GammaDist::new(shape, shape).expect("valid gamma");
        let mut ln_b: Vec<f64> = (0..n)
            .map(|i| {
                let u = GRID_LO + i as f64 * GRID_STEP;
                let p = stats::normal_cdf(u).clamp(1e-300, 1.0 - 1e-16);
                dist.inverse_cdf(p).max(1e-300).ln()
            })
            .collect();
        // renormalize so the discretized factor has mean exactly one under N(0,1)
        let (m1, _) = table_moments(&ln_b);
        let shift = m1.ln();
        for v in &mut ln_b {
            *v -= shift;
        }
        let (_, m2) = table_moments(&ln_b);
        SeverityTable { ln_b, second_moment: m2 }
    }

    fn eval(&self, u: f64) -> f64 {
        let x = ((u.clamp(GRID_LO, GRID_HI) - GRID_LO) / GRID_STEP).min((self.ln_b.len() - 1) as f64);
        let i = (x.floor() as usize).min(self.ln_b.len() - 2);
        let w = x - i as f64;
        ((1.0 - w) * self.ln_b[i] + w * self.ln_b[i + 1]).exp()
    }
}

fn table_moments(ln_b: &[f64]) -> (f64, f64) {
    // trapezoid rule against the standard normal density
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    let mut wsum = 0.0;
    for (i, lb) in ln_b.iter().enumerate() {
        let u = GRID_LO + i as f64 * GRID_STEP;
        let mut w = (-0.5 * u * u).exp();
        if i == 0 || i == ln_b.len() - 1 {
            w *= 0.5;
        }
        let b = lb.exp();
        m1 += w * b;
        m2 += w * b * b;
        wsum += w;
    }
    (m1 / wsum, m2 / wsum)
}

fn severity_table(variance: f64) -> Arc<SeverityTable> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<SeverityTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = variance.to_bits();
    if let Some(t) = cache.lock().expect("cache lock").get(&key) {
        return t.clone();
    }
    let t = Arc::new(SeverityTable::build(variance));
    cache.lock().expect("cache lock").insert(key, t.clone());
    t
}

// ---------------------------------------------------------------------------
// calibration: everything that depends on the config but not on the seed

/// Population quantities implied by a config, shared by every seed.
#[derive(Clone, Debug, Serialize)]
pub struct Calibration {
    /// Upper cut points of score bins 1..19 on the latent score scale.
    pub score_cuts: Vec<f64>,
    /// Multiplicative severity factor per group.
    pub group_multiplier: [f64; 4],
    pub severity_scale: f64,
    pub severity_second_moment: f64,
    /// Change in the control-standardized harm index per unit change in mean severity.
    pub index_slope: f64,
    pub outcome_sd: [f64; N_OUTCOMES],
    pub gamma_control: f64,
    pub gamma_tool: f64,
    pub threshold_control: f64,
    pub threshold_treated: f64,
    /// Proportional severity reduction: intercept then one shift per group.
    pub kappa: [f64; 5],
}

struct Combo {
    flags: [bool; 4],
    prob: f64,
}

fn combos(shares: [f64; 4]) -> Vec<Combo> {
    (0..16)
        .map(|code| {
            let flags = [0, 1, 2, 3].map(|j| code >> j & 1 == 1);
            let prob = (0..4).map(|j| if flags[j] { shares[j] } else { 1.0 - shares[j] }).product();
            Combo { flags, prob }
        })
        .collect()
}

fn dot(flags: &[bool; 4], w: &[f64; 4]) -> f64 {
    (0..4).filter(|&j| flags[j]).map(|j| w[j]).sum()
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f increasing, root in [lo, hi]
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

struct Params {
    shares: [f64; 4],
    risk_shift: [f64; 4],
    bias: [f64; 4],
}

impl Params {
    fn of(cfg: &CohortConfig) -> Self {
        let g = cfg.disparity_params.groups();
        Params {
            shares: g.map(|p| p.share),
            risk_shift: g.map(|p| p.risk_shift),
            bias: g.map(|p| p.worker_bias),
        }
    }
}

fn estimate_moments(flags: &[bool; 4], p: &Params, gamma: f64, noise_var: f64, legal_var: f64) -> (f64, f64) {
    let mean_r = dot(flags, &p.risk_shift);
    let alpha = mean_r + dot(flags, &p.bias);
    let mean = (1.0 - gamma) * alpha + gamma * mean_r;
    let var = gamma * gamma * (1.0 + noise_var) + legal_var;
    (mean, var.sqrt())
}

pub fn calibrate(cfg: &CohortConfig) -> Result<Calibration> {
    cfg.validate()?;
    let p = Params::of(cfg);
    let cs = combos(p.shares);

    // score cut points from the mixture of latent score distributions
    let score_sd = (1.0 + cfg.score_noise_sd * cfg.score_noise_sd).sqrt();
    let mix_cdf = |x: f64| -> f64 {
        cs.iter()
            .map(|c| c.prob * stats::normal_cdf((x - dot(&c.flags, &p.risk_shift)) / score_sd))
            .sum()
    };
    let mut cum = 0.0;
    let mut score_cuts = Vec::with_capacity(N_SCORES - 1);
    for s in 0..N_SCORES - 1 {
        cum += cfg.score_pmf[s];
        let target = cum.min(1.0);
        score_cuts.push(if target <= 0.0 {
            f64::NEG_INFINITY
        } else if target >= 1.0 {
            f64::INFINITY
        } else {
            bisect(-40.0, 40.0, |x| mix_cdf(x) - target)
        });
    }

    // group severity multipliers so control harm-index gaps match harm_shift
    let table = severity_table(cfg.severity_variance);
    let lambda = cfg.control_outcome_means;
    let inv_phi = cfg.outcome_dispersion.map(|d| if d.is_finite() { 1.0 / d } else { 0.0 });
    let harm_shift = cfg.disparity_params.groups().map(|g| g.harm_shift);
    let mut mult = [1.0f64; 4];
    let mut scale = 1.0;
    let mut second = table.second_moment;
    let mut slope = 0.0;
    let mut sd = [0.0; N_OUTCOMES];
    for _ in 0..500 {
        scale = 1.0 / (0..4).map(|j| 1.0 - p.shares[j] + p.shares[j] * mult[j]).product::<f64>();
        second = scale * scale
            * table.second_moment
            * (0..4).map(|j| 1.0 - p.shares[j] + p.shares[j] * mult[j] * mult[j]).product::<f64>();
        for k in 0..N_OUTCOMES {
            sd[k] = (lambda[k] + lambda[k] * lambda[k] * (second * (1.0 + inv_phi[k]) - 1.0)).sqrt();
        }
        let mut var_avg = 0.0;
        for k in 0..N_OUTCOMES {
            for l in 0..N_OUTCOMES {
                var_avg += if k == l { 1.0 } else { lambda[k] * lambda[l] * (second - 1.0) / (sd[k] * sd[l]) };
            }
        }
        let sd_avg = (var_avg / 25.0).sqrt();
        slope = (0..N_OUTCOMES).map(|k| lambda[k] / sd[k]).sum::<f64>() / (5.0 * sd_avg);
        let mut next = [1.0; 4];
        for j in 0..4 {
            let g = harm_shift[j] / slope;
            let pi = p.shares[j];
            if g * pi >= 1.0 || 1.0 + g * (1.0 - pi) <= 0.0 {
                return Err(Error::config(
                    format!("disparity_params.{}.harm_shift", GROUP_NAMES[j]),
                    format!("gap {} is not attainable with share {pi}", harm_shift[j]),
                ));
            }
            next[j] = (1.0 + g * (1.0 - pi)) / (1.0 - g * pi);
        }
        let delta: f64 = (0..4).map(|j| (next[j] - mult[j]).abs()).sum();
        mult = next;
        if delta < 1e-14 {
            break;
        }
    }

    // decision thresholds that give each arm the target screen-in rate
    let gamma_c = 1.0 / (1.0 + cfg.worker_noise_var);
    let a2 = cfg.noise_reduction * cfg.noise_reduction;
    let gamma_t = 1.0 / (1.0 + cfg.worker_noise_var / a2);
    let rate = cfg.screen_in_rate;
    let sf = |x: f64, m: (f64, f64)| 1.0 - stats::normal_cdf((x - m.0) / m.1);
    let mom_c: Vec<(f64, f64)> = cs
        .iter()
        .map(|c| estimate_moments(&c.flags, &p, gamma_c, cfg.worker_noise_var, cfg.legal_noise_var))
        .collect();
    let mom_t: Vec<(f64, f64)> = cs
        .iter()
        .map(|c| estimate_moments(&c.flags, &p, gamma_t, cfg.worker_noise_var / a2, cfg.legal_noise_var))
        .collect();
    let fs = cfg.first_stage;
    let (threshold_control, threshold_treated) = if rate <= 0.0 {
        (f64::INFINITY, f64::INFINITY)
    } else if rate >= 1.0 {
        (f64::NEG_INFINITY, f64::NEG_INFINITY)
    } else {
        let tc = bisect(-60.0, 60.0, |x| {
            rate - cs.iter().zip(&mom_c).map(|(c, m)| c.prob * sf(x, *m)).sum::<f64>()
        });
        let tt = bisect(-60.0, 60.0, |x| {
            rate - cs
                .iter()
                .enumerate()
                .map(|(i, c)| c.prob * (fs * sf(x, mom_t[i]) + (1.0 - fs) * sf(x, mom_c[i])))
                .sum::<f64>()
        });
        (tc, tt)
    };

    let mut cal = Calibration {
        score_cuts,
        group_multiplier: mult,
        severity_scale: scale,
        severity_second_moment: second,
        index_slope: slope,
        outcome_sd: sd,
        gamma_control: gamma_c,
        gamma_tool: gamma_t,
        threshold_control,
        threshold_treated,
        kappa: [0.0; 5],
    };
    cal.kappa = solve_effect(cfg, &cal, &p, &table)?;
    Ok(cal)
}

/// Worker decision inputs for one child.
#[derive(Clone, Copy)]
struct Latent {
    flags: [bool; 4],
    r: f64,
    u: f64,
    eps: f64,
    legal: f64,
    recorded: bool,
}

fn decide(cfg: &CohortConfig, cal: &Calibration, p: &Params, l: &Latent) -> (bool, bool) {
    let alpha = dot(&l.flags, &p.risk_shift) + dot(&l.flags, &p.bias);
    let est = |gamma: f64, noise: f64| (1.0 - gamma) * alpha + gamma * (l.r + noise) + l.legal;
    let control = est(cal.gamma_control, l.eps) > cal.threshold_control;
    let treated = if l.recorded {
        est(cal.gamma_tool, l.eps / cfg.noise_reduction) > cal.threshold_treated
    } else {
        est(cal.gamma_control, l.eps) > cal.threshold_treated
    };
    (control, treated)
}

fn severity(cal: &Calibration, table: &SeverityTable, l: &Latent) -> f64 {
    let mut s = cal.severity_scale * table.eval(l.u);
    for j in 0..4 {
        if l.flags[j] {
            s *= cal.group_multiplier[j];
        }
    }
    s
}

fn solve_effect(cfg: &CohortConfig, cal: &Calibration, p: &Params, table: &SeverityTable) -> Result<[f64; 5]> {
    let groups = cfg.disparity_params.groups();
    let targets: Vec<usize> = (0..4).filter(|&j| groups[j].interaction_target.is_some()).collect();
    let fixed: [f64; 4] = groups.map(|g| g.effect_shift);
    let needs_effect = cfg.itt_effect_sd != 0.0 || !targets.is_empty() || fixed.iter().any(|&k| k != 0.0);
    if cfg.effect_mode == EffectMode::None || !needs_effect {
        return Ok([0.0; 5]);
    }
    let reallocation = cfg.effect_mode == EffectMode::Reallocation;
    if reallocation && cfg.decision_mode == DecisionMode::Random {
        return Err(Error::config("effect_mode", "reallocation effects need model-based decisions"));
    }
    // pilot: mass of severity carried by affected treated children, by covariate
    // a[f][l] = E[S * affected * F_l | flag f] for f in {all, g_j=1, g_j=0}
    let n = cfg.pilot_draws;
    let mut mass = [[0.0f64; 5]; 9];
    let mut count = [0.0f64; 9];
    let mut rng = rng::stream(0x5eed_ca1b, rng::PILOT);
    let sd_eps = cfg.worker_noise_var.sqrt();
    let sd_legal = cfg.legal_noise_var.sqrt();
    for _ in 0..n {
        let flags = [0, 1, 2, 3].map(|j| rng.random::<f64>() < p.shares[j]);
        let u: f64 = rng.sample(StandardNormal);
        let eps = sd_eps * rng.sample::<f64, _>(StandardNormal);
        let legal = sd_legal * rng.sample::<f64, _>(StandardNormal);
        let recorded = rng.random::<f64>() < cfg.first_stage;
        let l = Latent {
            flags,
            r: u + dot(&flags, &p.risk_shift),
            u,
            eps,
            legal,
            recorded,
        };
        let affected = if reallocation {
            let (c, t) = decide(cfg, cal, p, &l);
            t && !c
        } else {
            true
        };
        let s = if affected { severity(cal, table, &l) } else { 0.0 };
        let f = [1.0, flags[0] as u8 as f64, flags[1] as u8 as f64, flags[2] as u8 as f64, flags[3] as u8 as f64];
        let mut rows = vec![0usize];
        for j in 0..4 {
            rows.push(if flags[j] { 1 + j } else { 5 + j });
        }
        for &row in &rows {
            count[row] += 1.0;
            for k in 0..5 {
                mass[row][k] += s * f[k];
            }
        }
    }
    let mean_row = |row: usize| -> [f64; 5] { mass[row].map(|m| m / count[row].max(1.0)) };
    // unknowns: kappa0 plus targeted group shifts
    let mut unknown = vec![0usize];
    unknown.extend(targets.iter().map(|j| j + 1));
    let m = unknown.len();
    let mut a = nalgebra::DMatrix::<f64>::zeros(m, m);
    let mut b = nalgebra::DVector::<f64>::zeros(m);
    let slope = cal.index_slope;
    let known = |row: [f64; 5]| -> f64 { (0..4).filter(|j| !targets.contains(j)).map(|j| fixed[j] * row[j + 1]).sum() };
    let all = mean_row(0);
    for (ci, &col) in unknown.iter().enumerate() {
        a[(0, ci)] = -slope * all[col];
    }
    b[0] = cfg.itt_effect_sd + slope * known(all);
    for (ri, &j) in targets.iter().enumerate() {
        let ing = mean_row(1 + j);
        let outg = mean_row(5 + j);
        let diff: [f64; 5] = [0, 1, 2, 3, 4].map(|k| ing[k] - outg[k]);
        for (ci, &col) in unknown.iter().enumerate() {
            a[(ri + 1, ci)] = -slope * diff[col];
        }
        b[ri + 1] = groups[j].interaction_target.unwrap() + slope * known(diff);
    }
    let sol = a.clone().lu().solve(&b).ok_or_else(|| {
        Error::config("disparity_params", "treatment effect system is singular: no affected children to carry the effect")
    })?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("itt_effect_sd", "no affected children to carry the effect"));
    }
    let mut kappa = [0.0; 5];
    for j in 0..4 {
        kappa[j + 1] = fixed[j];
    }
    for (ci, &col) in unknown.iter().enumerate() {
        kappa[col] = sol[ci];
    }
    for c in combos(p.shares) {
        let k = kappa[0] + (0..4).filter(|&j| c.flags[j]).map(|j| kappa[j + 1]).sum::<f64>();
        if c.prob > 0.0 && k >= 1.0 {
            let field = if targets.is_empty() { "itt_effect_sd".to_string() } else { "disparity_params".to_string() };
            return Err(Error::config(
                field,
                format!("requires a severity reduction of {:.3} (>= 1) for group combination {:?}", k, c.flags),
            ));
        }
    }
    Ok(kappa)
}

// ---------------------------------------------------------------------------
// structure and assignment

/// Sibling-group rule: after the cutoff day, children without a listed mother
/// are assigned one by one and any household with a treated child becomes
/// treated, so a group of k stays in control with probability (1-p)^k.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentQuirk {
    pub enabled: bool,
    pub cutoff_day: u32,
}

impl AssignmentQuirk {
    pub fn applies(&self, r: &ChildRecord) -> bool {
        self.enabled && r.motherless && r.referral_date_index >= self.cutoff_day
    }
}

/// Assign arms by household, or child by child for households under the
/// sibling-group rule. Also sets the randomization-control stratum.
pub fn assign_treatment(records: &mut [ChildRecord], treatment_share: f64, quirk: AssignmentQuirk, seed: u64) {
    let mut house: HashMap<u64, bool> = HashMap::new();
    let mut individual: HashMap<u64, bool> = HashMap::new();
    for r in records.iter() {
        if quirk.applies(r) {
            let mut rng = rng::stream(seed, rng::ASSIGN_CHILD + r.child_id);
            let t = rng.random::<f64>() < treatment_share;
            let e = individual.entry(r.household_id).or_insert(false);
            *e |= t;
        } else {
            house.entry(r.household_id).or_insert_with(|| {
                let mut rng = rng::stream(seed, rng::ASSIGN_HOUSEHOLD + r.household_id);
                rng.random::<f64>() < treatment_share
            });
        }
    }
    for r in records.iter_mut() {
        if quirk.applies(r) {
            r.treated = individual[&r.household_id];
            r.rc_stratum = r.sibling_count;
        } else {
            r.treated = house[&r.household_id];
            r.rc_stratum = 0;
        }
    }
}

fn geometric_theta(mean: f64, kmax: u32) -> f64 {
    // truncated geometric on 1..=kmax with P(k) proportional to (1-theta)^(k-1)
    let mean_of = |theta: f64| {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 1..=kmax {
            let w = (1.0 - theta).powi(k as i32 - 1);
            num += k as f64 * w;
            den += w;
        }
        num / den
    };
    if mean <= 1.0 {
        return 1.0;
    }
    // mean_of is decreasing in theta
    bisect(1e-12, 1.0, |t| mean - mean_of(t))
}

fn draw_size(rng: &mut impl Rng, theta: f64, kmax: u32) -> u32 {
    // inverse CDF of the renormalized truncated pmf
    let w: Vec<f64> = (0..kmax).map(|k| (1.0 - theta).powi(k as i32)).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, wk) in w.iter().enumerate() {
        if u < *wk {
            return k as u32 + 1;
        }
        u -= wk;
    }
    kmax
}

fn household_sizes(cfg: &CohortConfig) -> Vec<u32> {
    let n = cfg.n_children;
    let kmax = cfg.max_household_size;
    let mut rng = rng::stream(cfg.seed, rng::STRUCTURE);
    match cfg.n_households {
        None => {
            let theta = geometric_theta(cfg.mean_household_size, kmax);
            let mut sizes = Vec::new();
            let mut total = 0usize;
            while total < n {
                let k = (draw_size(&mut rng, theta, kmax) as usize).min(n - total);
                sizes.push(k as u32);
                total += k;
            }
            sizes
        }
        Some(h) => {
            if n == 0 {
                return Vec::new();
            }
            let theta = geometric_theta((n as f64 / h as f64).min((kmax as f64 + 1.0) / 2.0), kmax);
            let mut sizes: Vec<u32> = (0..h).map(|_| draw_size(&mut rng, theta, kmax)).collect();
            let mut total: usize = sizes.iter().map(|&s| s as usize).sum();
            while total != n {
                let i = rng.random_range(0..h);
                if total > n && sizes[i] > 1 {
                    sizes[i] -= 1;
                    total -= 1;
                } else if total < n && sizes[i] < kmax {
                    sizes[i] += 1;
                    total += 1;
                }
            }
            sizes
        }
    }
}

/// Child-level treated share implied by a base assignment probability.
fn expected_treated_share(records: &[ChildRecord], p: f64, quirk: AssignmentQuirk) -> f64 {
    let n = records.len() as f64;
    records
        .iter()
        .map(|r| if quirk.applies(r) { 1.0 - (1.0 - p).powi(r.sibling_count as i32) } else { p })
        .sum::<f64>()
        / n
}

fn poisson(rng: &mut impl Rng, mean: f64) -> u32 {
    if !(mean > 0.0) {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u32).unwrap_or(0)
}

/// Generate a cohort. Identical configs give bit-identical cohorts.
pub fn generate_cohort(cfg: &CohortConfig) -> Result<Vec<ChildRecord>> {
    cfg.validate()?;
    if cfg.n_children == 0 {
        return Ok(Vec::new());
    }
    let cal = cached_calibration(cfg)?;
    generate_with(cfg, &cal)
}

/// Calibration does not depend on the seed, so replicate cohorts share it.
fn cached_calibration(cfg: &CohortConfig) -> Result<Arc<Calibration>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<Calibration>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = serde_json::to_string(&CohortConfig { seed: 0, ..cfg.clone() }).expect("config serializes");
    if let Some(c) = cache.lock().expect("cache lock").get(&key) {
        return Ok(c.clone());
    }
    let c = Arc::new(calibrate(cfg)?);
    let mut guard = cache.lock().expect("cache lock");
    if guard.len() > 64 {
        guard.clear();
    }
    guard.insert(key, c.clone());
    Ok(c)
}

pub fn generate_with(cfg: &CohortConfig, cal: &Calibration) -> Result<Vec<ChildRecord>> {
    let p = Params::of(cfg);
    let table = severity_table(cfg.severity_variance);
    let sizes = household_sizes(cfg);
    let seed = cfg.seed;

    // structure
    let mut records = Vec::with_capacity(cfg.n_children);
    let mut house_u = Vec::with_capacity(sizes.len());
    let mut child_id = 0u64;
    for (h, &k) in sizes.iter().enumerate() {
        let hid = h as u64 + 1;
        let mut rng = rng::stream(seed, rng::HOUSEHOLD + hid);
        let date = rng.random_range(0..cfg.n_days);
        let motherless = rng.random::<f64>() < cfg.motherless_share;
        let black = rng.random::<f64>() < p.shares[0];
        let hispanic = rng.random::<f64>() < p.shares[1];
        let snap = rng.random::<f64>() < p.shares[3];
        house_u.push(rng.sample::<f64, _>(StandardNormal));
        for _ in 0..k {
            child_id += 1;
            let mut crng = rng::stream(seed, rng::CHILD + child_id);
            let female = crng.random::<f64>() < p.shares[2];
            records.push(ChildRecord {
                child_id,
                household_id: hid,
                referral_id: 1_000_000 + hid,
                referral_date_index: date,
                group_flags: GroupFlags { black, hispanic, female, snap },
                motherless,
                sibling_count: k,
                ..ChildRecord::default()
            });
        }
    }

    // assignment
    let quirk = AssignmentQuirk {
        enabled: cfg.quirk_enabled,
        cutoff_day: cfg.quirk_cutoff_day,
    };
    let target = cfg.treatment_share;
    let p0 = if target <= 0.0 || target >= 1.0 {
        target
    } else {
        bisect(0.0, 1.0, |x| expected_treated_share(&records, x, quirk) - target)
    };
    assign_treatment(&mut records, p0, quirk, seed);

    // jackknife same-day treated share by referral
    let peer = peer_share_by_referral(&records);

    let lambda = cfg.control_outcome_means;
    let phi = cfg.outcome_dispersion;
    let late = 1.0 - cfg.early_window_share - cfg.mid_window_share;
    let main = 1.0 - cfg.early_window_share;
    let w = [cfg.early_window_share / main, cfg.mid_window_share / main, late / main];
    let sd_eps = cfg.worker_noise_var.sqrt();
    let sd_legal = cfg.legal_noise_var.sqrt();
    let hs = cfg.household_risk_share;
    let minutes = {
        let sigma: f64 = 0.5;
        LogNormal::new(cfg.decision_minutes_mean.ln() - sigma * sigma / 2.0, sigma).expect("valid lognormal")
    };
    let frailty: Vec<Option<Gamma<f64>>> = phi
        .iter()
        .map(|&d| if d.is_finite() { Some(Gamma::new(d, 1.0 / d).expect("valid gamma")) } else { None })
        .collect();

    for (idx, r) in records.iter_mut().enumerate() {
        let mut rng = rng::stream(seed, rng::CHILD + r.child_id);
        let _female_draw: f64 = rng.random();
        let flags = r.group_flags.as_array();
        let u = hs.sqrt() * house_u[(r.household_id - 1) as usize] + (1.0 - hs).sqrt() * rng.sample::<f64, _>(StandardNormal);
        let risk = u + dot(&flags, &p.risk_shift);
        let q = risk + cfg.score_noise_sd * rng.sample::<f64, _>(StandardNormal);
        r.score = 1 + cal.score_cuts.iter().filter(|&&c| q > c).count() as u8;
        let l = Latent {
            flags,
            r: risk,
            u,
            eps: sd_eps * rng.sample::<f64, _>(StandardNormal),
            legal: sd_legal * rng.sample::<f64, _>(StandardNormal),
            recorded: rng.random::<f64>() < cfg.first_stage,
        };
        let random_u: f64 = rng.random();
        let (si_c, si_t) = match cfg.decision_mode {
            DecisionMode::Model => decide(cfg, cal, &p, &l),
            DecisionMode::Random => {
                let s = random_u < cfg.screen_in_rate;
                (s, s)
            }
        };
        r.score_recorded = r.treated && l.recorded;
        r.screened_in = if r.treated { si_t } else { si_c };
        let s0 = severity(cal, &table, &l);
        let kappa = cal.kappa[0] + (0..4).filter(|&j| flags[j]).map(|j| cal.kappa[j + 1]).sum::<f64>();
        let affected = r.treated
            && match cfg.effect_mode {
                EffectMode::Reallocation => si_t && !si_c,
                EffectMode::Uniform => true,
                EffectMode::None => false,
            };
        let mut s = if affected { s0 * (1.0 - kappa) } else { s0 };
        if !r.treated && cfg.crowd_out != 0.0 {
            if let Some(ps) = peer[idx] {
                s *= 1.0 + cfg.crowd_out * ps;
            }
        }
        for k in 0..N_OUTCOMES {
            let g = frailty[k].as_ref().map(|d| d.sample(&mut rng)).unwrap_or(1.0);
            let rate = lambda[k] * s * g;
            r.outcomes_early[k] = poisson(&mut rng, rate * w[0]);
            r.outcomes_30_60[k] = poisson(&mut rng, rate * w[1]);
            r.outcomes[k] = r.outcomes_30_60[k] + poisson(&mut rng, rate * w[2]);
        }
        for k in 0..N_OUTCOMES {
            let g = frailty[k].as_ref().map(|d| d.sample(&mut rng)).unwrap_or(1.0);
            r.prior_outcomes[k] = poisson(&mut rng, cfg.prior_outcome_scale * lambda[k] * s0 * g);
        }
        let beta = cfg.prior_referral_loading;
        r.prior_referrals = poisson(&mut rng, cfg.prior_referral_mean * (beta * risk - beta * beta / 2.0).exp());
        r.removed = rng.random::<f64>() < cfg.removal_prob_by_score[r.score as usize - 1];
        let found: f64 = rng.random();
        r.cps_found_injury = r.screened_in && found < (cfg.cps_injury_base * s).min(1.0);
        r.decision_minutes = (minutes.sample(&mut rng) * 100.0).round() / 100.0;
        r.re_referrals = poisson(&mut rng, cfg.re_referral_mean * s.min(25.0));
        let switch: f64 = rng.random();
        r.status_switched = !r.treated && switch < cfg.switch_rate;
    }
    Ok(records)
}

/// Share of the other same-day referrals that were treated; `None` when a
/// referral is alone on its day.
pub fn peer_share_by_referral(records: &[ChildRecord]) -> Vec<Option<f64>> {
    // referral -> (day, treated)
    let mut referrals: HashMap<u64, (u32, bool)> = HashMap::new();
    for r in records {
        referrals.entry(r.referral_id).or_insert((r.referral_date_index, r.treated));
    }
    let mut by_day: HashMap<u32, (usize, usize)> = HashMap::new();
    for (day, t) in referrals.values() {
        let e = by_day.entry(*day).or_insert((0, 0));
        e.0 += 1;
        e.1 += *t as usize;
    }
    records
        .iter()
        .map(|r| {
            let (day, t) = referrals[&r.referral_id];
            let (n, nt) = by_day[&day];
            if n < 2 {
                None
            } else {
                Some((nt - t as usize) as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

/// AUC of the score for removal, by the rank-sum identity.
pub fn score_auc(records: &[ChildRecord]) -> Result<f64> {
    let s: Vec<f64> = records.iter().map(|r| r.score as f64).collect();
    let y: Vec<bool> = records.iter().map(|r| r.removed).collect();
    stats::auc(&s, &y)
}

/// Population AUC implied by a score distribution and removal probabilities.
pub fn implied_auc(pmf: &[f64], removal: &[f64]) -> f64 {
    let pos: Vec<f64> = pmf.iter().zip(removal).map(|(p, r)| p * r).collect();
    let neg: Vec<f64> = pmf.iter().zip(removal).map(|(p, r)| p * (1.0 - r)).collect();
    let (tp, tn): (f64, f64) = (pos.iter().sum(), neg.iter().sum());
    let mut acc = 0.0;
    let mut below = 0.0;
    for s in 0..pmf.len() {
        acc += pos[s] * (below + 0.5 * neg[s]);
        below += neg[s];
    }
    acc / (tp * tn)
}
