//! Counterfactual screening regimes and best-case bounds on child harm.
//!
//! Screen-in effects are homogeneous: under a regime that screens in a child
//! the humans screened out, that child's harm falls by `R` SD, never below
//! the harm of a child with no events at all.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::GROUP_NAMES;
use crate::frame::Frame;
use crate::index::flag_count;
use crate::{rng, stats, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecisionRule {
    /// Observed decisions of workers without the tool.
    HumanOnly,
    /// Observed decisions of workers with the tool.
    HumanPlusAlgo,
    /// Screen in the highest-scoring share of children.
    AlgoOnly { rate: f64 },
    /// Screen in the share of children with the highest realized harm that
    /// a screen-in could still reduce: children the workers screened out come
    /// first, by harm, then the rest by harm.
    Oracle { rate: f64 },
    /// Observed decision, overridden to screen-in at or above a score.
    Mandate { threshold: f64 },
}

impl DecisionRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DecisionRule::AlgoOnly { rate } | DecisionRule::Oracle { rate } if !(rate > 0.0 && rate < 1.0) => {
                Err(Error::config("rate", format!("{rate} must lie in (0, 1)")))
            }
            DecisionRule::Mandate { threshold } if !(1.0..=20.0).contains(&threshold) => {
                Err(Error::config("threshold", format!("{threshold} must lie in [1, 20]")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            DecisionRule::HumanOnly => "human_only".into(),
            DecisionRule::HumanPlusAlgo => "human_plus_algo".into(),
            DecisionRule::AlgoOnly { .. } => "algo_only".into(),
            DecisionRule::Oracle { .. } => "oracle".into(),
            DecisionRule::Mandate { .. } => "mandate".into(),
        }
    }

    /// Build from a rule name plus its parameters.
    pub fn parse(name: &str, rate: f64, threshold: f64) -> Result<Self> {
        let r = match name {
            "human_only" => DecisionRule::HumanOnly,
            "human_plus_algo" => DecisionRule::HumanPlusAlgo,
            "algo_only" => DecisionRule::AlgoOnly { rate },
            "oracle" => DecisionRule::Oracle { rate },
            "mandate" => DecisionRule::Mandate { threshold },
            _ => {
                return Err(Error::config(
                    "rule",
                    format!("unknown rule `{name}` (human_only|human_plus_algo|algo_only|oracle|mandate)"),
                ))
            }
        };
        r.validate()?;
        Ok(r)
    }
}

impl FromStr for DecisionRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        let v = if arg.is_empty() {
            None
        } else {
            Some(arg.parse::<f64>().map_err(|_| Error::config("rule", format!("bad parameter in `{s}`")))?)
        };
        Self::parse(name, v.unwrap_or(0.30), v.unwrap_or(20.0))
    }
}

/// Per-child inputs to the regimes.
#[derive(Clone, Debug, Default)]
pub struct DecisionData {
    pub child_id: Vec<u64>,
    pub score: Vec<f64>,
    pub screened_in: Vec<bool>,
    pub treated: Vec<bool>,
    pub harm: Vec<f64>,
    pub groups: Vec<(String, Vec<bool>)>,
}

impl DecisionData {
    pub fn from_frame(frame: &Frame) -> Result<Self> {
        let groups = GROUP_NAMES
            .iter()
            .filter(|g| frame.has(g))
            .map(|g| Ok((g.to_string(), frame.mask(g)?)))
            .collect::<Result<_>>()?;
        Ok(DecisionData {
            child_id: frame.get("child_id")?.iter().map(|&v| v as u64).collect(),
            score: frame.get("score")?.to_vec(),
            screened_in: frame.mask("screened_in")?,
            treated: frame.mask("treated")?,
            harm: frame.get("harm")?.to_vec(),
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.score.len()
    }

    pub fn is_empty(&self) -> bool {
        self.score.is_empty()
    }

    pub fn subset(&self, keep: &[bool]) -> DecisionData {
        fn pick<T: Clone>(v: &[T], keep: &[bool]) -> Vec<T> {
            v.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| x.clone()).collect()
        }
        DecisionData {
            child_id: pick(&self.child_id, keep),
            score: pick(&self.score, keep),
            screened_in: pick(&self.screened_in, keep),
            treated: pick(&self.treated, keep),
            harm: pick(&self.harm, keep),
            groups: self.groups.iter().map(|(n, v)| (n.clone(), pick(v, keep))).collect(),
        }
    }

    pub fn arm(&self, treated: bool) -> DecisionData {
        let keep: Vec<bool> = self.treated.iter().map(|&t| t == treated).collect();
        self.subset(&keep)
    }

    pub fn group(&self, name: &str) -> Result<&[bool]> {
        self.groups
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Data(format!("missing column `{name}`")))
    }
}

/// Seeded per-child tie-break keys.
fn tie_keys(ids: &[u64], seed: u64) -> Vec<u64> {
    ids.iter().map(|&id| rng::stream(seed, rng::TIE_BREAK + id).random::<u64>()).collect()
}

/// The `rate` share with the largest values; rows with `first[i]` set come
/// before all others.
fn top_by(values: &[f64], first: Option<&[bool]>, ids: &[u64], rate: f64, seed: u64) -> Vec<bool> {
    let n = values.len();
    let k = flag_count(rate, n);
    let ties = tie_keys(ids, seed);
    let tier = |i: usize| first.map(|f| f[i]).unwrap_or(false);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        tier(b)
            .cmp(&tier(a))
            .then(values[b].total_cmp(&values[a]))
            .then(ties[a].cmp(&ties[b]))
            .then(ids[a].cmp(&ids[b]))
    });
    let mut out = vec![false; n];
    for &i in order.iter().take(k) {
        out[i] = true;
    }
    out
}

pub fn apply_rule(data: &DecisionData, rule: &DecisionRule, seed: u64) -> Result<Vec<bool>> {
    rule.validate()?;
    if data.score.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("score column has missing values".into()));
    }
    Ok(match *rule {
        DecisionRule::HumanOnly | DecisionRule::HumanPlusAlgo => data.screened_in.clone(),
        DecisionRule::AlgoOnly { rate } => top_by(&data.score, None, &data.child_id, rate, seed),
        DecisionRule::Oracle { rate } => {
            if data.harm.len() != data.len() || data.harm.iter().any(|h| !h.is_finite()) {
                return Err(Error::Data("oracle rule needs a complete `harm` column".into()));
            }
            // Only children the workers screened out can gain from a new
            // screen-in, so they are ranked first; among them, larger realized
            // harm means a larger reduction at every R.
            let missed: Vec<bool> = data.screened_in.iter().map(|b| !b).collect();
            top_by(&data.harm, Some(&missed), &data.child_id, rate, seed)
        }
        DecisionRule::Mandate { threshold } => data
            .score
            .iter()
            .zip(&data.screened_in)
            .map(|(&s, &h)| h || s >= threshold)
            .collect(),
    })
}

/// Counts and outcomes of human decisions crossed with a regime's decisions.
#[derive(Clone, Debug, Default, Serialize)]
pub struct GridCell2x2 {
    pub in_in: Vec<f64>,
    pub in_out: Vec<f64>,
    pub out_in: Vec<f64>,
    pub out_out: Vec<f64>,
}

impl GridCell2x2 {
    pub fn build(y: &[f64], human: &[bool], algo: &[bool]) -> Self {
        let mut c = GridCell2x2::default();
        for i in 0..y.len() {
            match (human[i], algo[i]) {
                (true, true) => c.in_in.push(y[i]),
                (true, false) => c.in_out.push(y[i]),
                (false, true) => c.out_in.push(y[i]),
                (false, false) => c.out_out.push(y[i]),
            }
        }
        c
    }

    pub fn counts(&self) -> [usize; 4] {
        [self.in_in.len(), self.in_out.len(), self.out_in.len(), self.out_out.len()]
    }

    /// Mean harm once every newly screened-in child sits at the floor.
    pub fn asymptote(&self, floor: f64) -> f64 {
        let n: usize = self.counts().iter().sum();
        let kept: f64 = self.in_in.iter().chain(&self.in_out).chain(&self.out_out).sum();
        (kept + self.out_in.len() as f64 * floor) / n as f64
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RegimeCurve {
    pub regime: String,
    pub mean_harm: Vec<f64>,
    pub cell_counts: [usize; 4],
    pub asymptote: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundCurve {
    pub r_grid: Vec<f64>,
    pub harm_floor: f64,
    pub human_only_mean: f64,
    pub regimes: Vec<RegimeCurve>,
}

impl BoundCurve {
    pub fn regime(&self, name: &str) -> Option<&RegimeCurve> {
        self.regimes.iter().find(|r| r.regime == name)
    }
}

/// Evenly spaced grid `lo:hi:count`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::config("r_grid", format!("expected lo:hi:count, got `{spec}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if n < 1 || !(lo >= 0.0) || !(hi >= lo) {
        return Err(bad());
    }
    Ok(default_grid(lo, hi, n))
}

pub fn default_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Mean harm under a regime with imputation max(y - R, floor) for children
/// the regime screens in and humans screened out; everyone else keeps the
/// observed outcome.
pub fn imputed_mean(y: &[f64], human: &[bool], regime: &[bool], r: f64, floor: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        s += if !human[i] && regime[i] { (y[i] - r).max(floor) } else { y[i] };
    }
    s / y.len() as f64
}

fn check_floor(y: &[f64], floor: f64) -> Result<()> {
    let min = y.iter().copied().fold(f64::INFINITY, f64::min);
    if floor > min {
        return Err(Error::config("harm_floor", format!("floor {floor} exceeds the smallest observed harm {min}")));
    }
    Ok(())
}

/// Best-case bound for one or more regimes on control-arm data.
pub fn bound_curves(control: &DecisionData, rules: &[DecisionRule], r_grid: &[f64], floor: f64, seed: u64) -> Result<BoundCurve> {
    if control.is_empty() {
        return Err(Error::Data("no control children to evaluate".into()));
    }
    if r_grid.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::config("r_grid", "screen-in effects must be non-negative"));
    }
    let y = &control.harm;
    check_floor(y, floor)?;
    let human = &control.screened_in;
    let none = vec![false; y.len()];
    let human_only_mean = imputed_mean(y, human, &none, 0.0, floor);
    let regimes = rules
        .iter()
        .map(|rule| {
            let d = apply_rule(control, rule, seed)?;
            let cells = GridCell2x2::build(y, human, &d);
            Ok(RegimeCurve {
                regime: rule.name(),
                mean_harm: r_grid.iter().map(|&r| imputed_mean(y, human, &d, r, floor)).collect(),
                cell_counts: cells.counts(),
                asymptote: cells.asymptote(floor),
            })
        })
        .collect::<Result<_>>()?;
    Ok(BoundCurve {
        r_grid: r_grid.to_vec(),
        harm_floor: floor,
        human_only_mean,
        regimes,
    })
}

pub fn bound_algo_only(control: &DecisionData, rule: &DecisionRule, r_grid: &[f64], floor: f64, seed: u64) -> Result<BoundCurve> {
    bound_curves(control, &[*rule], r_grid, floor, seed)
}

#[derive(Clone, Debug, Serialize)]
pub struct RelianceCell {
    pub score: u8,
    pub treated: bool,
    pub n: usize,
    pub mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MarginalReliance {
    pub cells: Vec<RelianceCell>,
    /// Treated minus control mean at score 20, when both exist.
    pub gap_at_20: Option<f64>,
}

/// Mean harm (with 90% normal intervals) of screened-out children by score and arm.
pub fn marginal_reliance(data: &DecisionData) -> Result<MarginalReliance> {
    if !data.treated.iter().any(|&t| t) || !data.treated.iter().any(|&t| !t) {
        return Err(Error::Data("marginal reliance needs both arms".into()));
    }
    let z = stats::normal_quantile(0.95);
    let mut cells = Vec::new();
    for arm in [false, true] {
        for s in 1..=20u8 {
            let ys: Vec<f64> = (0..data.len())
                .filter(|&i| data.treated[i] == arm && !data.screened_in[i] && data.score[i] == s as f64)
                .map(|i| data.harm[i])
                .collect();
            let n = ys.len();
            let mean = (n > 0).then(|| stats::mean(&ys));
            let half = (n > 1).then(|| z * stats::sd(&ys) / (n as f64).sqrt());
            cells.push(RelianceCell {
                score: s,
                treated: arm,
                n,
                mean,
                ci_low: mean.zip(half).map(|(m, h)| m - h),
                ci_high: mean.zip(half).map(|(m, h)| m + h),
            });
        }
    }
    let at = |arm: bool| cells.iter().find(|c| c.treated == arm && c.score == 20).and_then(|c| c.mean);
    let gap_at_20 = at(true).zip(at(false)).map(|(t, c)| t - c);
    Ok(MarginalReliance { cells, gap_at_20 })
}

fn rate_gap(decision: &[bool], group: &[bool]) -> Option<f64> {
    let (mut a, mut na, mut b, mut nb) = (0.0, 0.0, 0.0, 0.0);
    for (d, g) in decision.iter().zip(group) {
        if *g {
            a += *d as u8 as f64;
            na += 1.0;
        } else {
            b += *d as u8 as f64;
            nb += 1.0;
        }
    }
    (na > 0.0 && nb > 0.0).then(|| a / na - b / nb)
}

#[derive(Clone, Debug, Serialize)]
pub struct RegimeDisparity {
    pub group: String,
    pub human_only: Option<f64>,
    pub human_plus_algo: Option<f64>,
    pub algo_only: Option<f64>,
}

/// Screen-in rate gaps (group minus everyone else) under observed decisions
/// in each arm and under an algorithmic rule applied to the control arm.
pub fn disparities_by_regime(data: &DecisionData, groups: &[&str], rule: &DecisionRule, seed: u64) -> Result<Vec<RegimeDisparity>> {
    let control = data.arm(false);
    let treated = data.arm(true);
    let algo = apply_rule(&control, rule, seed)?;
    groups
        .iter()
        .map(|g| {
            Ok(RegimeDisparity {
                group: g.to_string(),
                human_only: rate_gap(&control.screened_in, control.group(g)?),
                human_plus_algo: rate_gap(&treated.screened_in, treated.group(g)?),
                algo_only: rate_gap(&algo, control.group(g)?),
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct HealthDisparityCurve {
    pub group: String,
    pub r_grid: Vec<f64>,
    /// Group minus out-group mean imputed harm at each R.
    pub gap: Vec<f64>,
}

pub fn health_disparities_algo_only(
    control: &DecisionData,
    rule: &DecisionRule,
    r_grid: &[f64],
    groups: &[&str],
    floor: f64,
    seed: u64,
) -> Result<Vec<HealthDisparityCurve>> {
    check_floor(&control.harm, floor)?;
    let d = apply_rule(control, rule, seed)?;
    let y = &control.harm;
    let h = &control.screened_in;
    groups
        .iter()
        .map(|g| {
            let mask = control.group(g)?;
            let (mut ia, mut ib) = (Vec::new(), Vec::new());
            for i in 0..y.len() {
                if mask[i] {
                    ia.push(i)
                } else {
                    ib.push(i)
                }
            }
            if ia.is_empty() || ib.is_empty() {
                return Err(Error::Data(format!("group `{g}` or its complement is empty")));
            }
            let sub = |idx: &[usize], r: f64| {
                let yy: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                let hh: Vec<bool> = idx.iter().map(|&i| h[i]).collect();
                let dd: Vec<bool> = idx.iter().map(|&i| d[i]).collect();
                imputed_mean(&yy, &hh, &dd, r, floor)
            };
            Ok(HealthDisparityCurve {
                group: g.to_string(),
                r_grid: r_grid.to_vec(),
                gap: r_grid.iter().map(|&r| sub(&ia, r) - sub(&ib, r)).collect(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum MvpfClass {
    Infinite,
    Finite { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MvpfResult {
    pub savings: f64,
    pub total_cost: f64,
    pub net_government_cost: f64,
    pub class: MvpfClass,
    pub note: Option<String>,
}

/// Net cost of the tool after avoided public spending. Willingness to pay is
/// valued at the avoided public cost, so the ratio is infinite whenever the
/// tool pays for itself.
pub fn mvpf(
    children_prevented: f64,
    public_cost_per_child: f64,
    implementation_cost: f64,
    annual_maintenance: f64,
    horizon_years: f64,
) -> Result<MvpfResult> {
    let inputs = [
        ("children_prevented", children_prevented),
        ("public_cost_per_child", public_cost_per_child),
        ("implementation_cost", implementation_cost),
        ("annual_maintenance", annual_maintenance),
        ("horizon_years", horizon_years),
    ];
    for (n, v) in inputs {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::config(n, format!("{v} must be a non-negative number")));
        }
    }
    let savings = children_prevented * public_cost_per_child;
    let total_cost = implementation_cost + horizon_years * annual_maintenance;
    let net = total_cost - savings;
    let (class, note) = if net <= 0.0 {
        (MvpfClass::Infinite, None)
    } else if savings == 0.0 {
        (
            MvpfClass::Finite { value: 0.0 },
            Some("no prevented cases: zero willingness to pay over a positive net cost".to_string()),
        )
    } else {
        (MvpfClass::Finite { value: savings / net }, None)
    };
    Ok(MvpfResult {
        savings,
        total_cost,
        net_government_cost: net,
        class,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(scores: &[f64], human: &[bool], harm: &[f64]) -> DecisionData {
        DecisionData {
            child_id: (1..=scores.len() as u64).collect(),
            score: scores.to_vec(),
            screened_in: human.to_vec(),
            treated: vec![false; scores.len()],
            harm: harm.to_vec(),
            groups: vec![],
        }
    }

    #[test]
    fn algo_only_sorting_contract() {
        let n = 1000;
        let s: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64).collect();
        let d = data(&s, &vec![false; n], &vec![0.0; n]);
        let a = apply_rule(&d, &DecisionRule::AlgoOnly { rate: 0.3 }, 1).unwrap();
        assert_eq!(a.iter().filter(|&&b| b).count(), 300);
        let min_in = (0..n).filter(|&i| a[i]).map(|i| s[i]).fold(f64::INFINITY, f64::min);
        let max_out = (0..n).filter(|&i| !a[i]).map(|i| s[i]).fold(f64::NEG_INFINITY, f64::max);
        assert!(min_in >= max_out);
    }

    #[test]
    fn ties_are_seeded() {
        let n = 200;
        let d = data(&vec![5.0; n], &vec![false; n], &vec![0.0; n]);
        let a = apply_rule(&d, &DecisionRule::AlgoOnly { rate: 0.3 }, 1).unwrap();
        let b = apply_rule(&d, &DecisionRule::AlgoOnly { rate: 0.3 }, 1).unwrap();
        let c = apply_rule(&d, &DecisionRule::AlgoOnly { rate: 0.3 }, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.iter().filter(|&&v| v).count(), 60);
        // not simply the first ids
        assert!(!a[..60].iter().all(|&v| v));
    }

    #[test]
    fn mandate_is_observed_or_threshold() {
        let d = data(&[20.0, 20.0, 3.0, 19.0], &[true, false, true, false], &[0.0; 4]);
        assert_eq!(
            apply_rule(&d, &DecisionRule::Mandate { threshold: 20.0 }, 0).unwrap(),
            vec![true, true, true, false]
        );
    }

    #[test]
    fn bound_at_zero_and_floor_check() {
        let y = [0.3, -0.2, 1.7, -0.5, 2.2, 0.0];
        let d = data(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[true, false, false, false, true, false], &y);
        let rule = DecisionRule::AlgoOnly { rate: 0.5 };
        let c = bound_algo_only(&d, &rule, &[0.0, 1.0, 100.0], -0.5, 0).unwrap();
        let a = &c.regimes[0].mean_harm;
        assert_eq!(a[0], c.human_only_mean);
        assert!(a[1] <= a[0] && a[2] <= a[1]);
        assert!((a[2] - c.regimes[0].asymptote).abs() < 1e-12);
        assert!(matches!(bound_algo_only(&d, &rule, &[0.0], 0.0, 0), Err(Error::Config { .. })));
    }

    /// Workers already screen in the worst cases. Ranking every child by
    /// harm would pick those same children and reduce nothing; the oracle
    /// instead takes the worst of the children the workers missed.
    #[test]
    fn oracle_skips_children_already_screened_in() {
        let y = [5.0, 4.0, 1.0, 2.0];
        let d = data(&[1.0, 1.0, 9.0, 8.0], &[true, true, false, false], &y);
        assert_eq!(apply_rule(&d, &DecisionRule::Oracle { rate: 0.25 }, 0).unwrap(), vec![false, false, false, true]);
        let c = bound_curves(
            &d,
            &[DecisionRule::AlgoOnly { rate: 0.5 }, DecisionRule::Oracle { rate: 0.5 }],
            &[1.0],
            0.0,
            0,
        )
        .unwrap();
        assert_eq!(c.regime("oracle").unwrap().mean_harm[0], c.regime("algo_only").unwrap().mean_harm[0]);
        assert!(c.regime("oracle").unwrap().mean_harm[0] < c.human_only_mean);
    }

    #[test]
    fn oracle_dominates_when_workers_track_harm() {
        let mut r = rng::stream(17, 0);
        let n = 400;
        let harm: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 6.0 - 0.5).collect();
        // workers screen in mostly high-harm children, the score is noise
        let human: Vec<bool> = harm.iter().map(|h| *h + r.random::<f64>() * 2.0 > 4.0).collect();
        let score: Vec<f64> = (0..n).map(|_| r.random_range(1..=20) as f64).collect();
        let d = data(&score, &human, &harm);
        let grid = default_grid(0.0, 4.0, 41);
        let rules = [DecisionRule::AlgoOnly { rate: 0.3 }, DecisionRule::Oracle { rate: 0.3 }];
        let c = bound_curves(&d, &rules, &grid, -0.5, 3).unwrap();
        let (a, o) = (&c.regime("algo_only").unwrap().mean_harm, &c.regime("oracle").unwrap().mean_harm);
        assert!(o.iter().zip(a).all(|(o, a)| o <= a));
        assert!(o[10] < a[10]);
    }

    #[test]
    fn mvpf_examples() {
        let r = mvpf(20.0, 62500.0, 280000.0, 15000.0, 2.0).unwrap();
        assert_eq!(r.savings, 1_250_000.0);
        assert_eq!(r.net_government_cost, -940_000.0);
        assert_eq!(r.class, MvpfClass::Infinite);
        let z = mvpf(0.0, 5.0, 10.0, 0.0, 1.0).unwrap();
        assert_eq!(z.class, MvpfClass::Finite { value: 0.0 });
        assert!(z.note.is_some());
        assert_eq!(mvpf(3.0, 2.0, 0.0, 0.0, 0.0).unwrap().class, MvpfClass::Infinite);
        assert!(mvpf(-1.0, 2.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0:4:41").unwrap();
        assert_eq!(g.len(), 41);
        assert_eq!(g[40], 4.0);
        assert!((g[1] - 0.1).abs() < 1e-15);
        assert!(parse_grid("0:4").is_err());
    }

    #[test]
    fn rule_strings() {
        assert_eq!("algo_only:0.2".parse::<DecisionRule>().unwrap(), DecisionRule::AlgoOnly { rate: 0.2 });
        assert_eq!("mandate".parse::<DecisionRule>().unwrap(), DecisionRule::Mandate { threshold: 20.0 });
        assert!("oracle:1.5".parse::<DecisionRule>().is_err());
        assert!("nope".parse::<DecisionRule>().is_err());
    }
}
