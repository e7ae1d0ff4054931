//! A small columnar table of f64 columns for regression work.

use std::collections::{BTreeMap, BTreeSet};

use crate::cohort::{ChildRecord, GROUP_NAMES, N_OUTCOMES, OUTCOME_NAMES};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Frame {
    n: usize,
    cols: BTreeMap<String, Vec<f64>>,
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl Frame {
    pub fn new(n: usize) -> Self {
        Frame {
            n,
            cols: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.n {
            return Err(Error::Data(format!("column `{name}` has {} rows, frame has {}", values.len(), self.n)));
        }
        self.cols.insert(name, values);
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        self.insert(name, values)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.cols
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Data(format!("missing column `{name}`")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.cols.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.cols.keys().map(|k| k.as_str())
    }

    /// Boolean view of a 0/1 column.
    pub fn mask(&self, name: &str) -> Result<Vec<bool>> {
        Ok(self.get(name)?.iter().map(|&v| v != 0.0).collect())
    }

    pub fn filter(&self, keep: &[bool]) -> Result<Frame> {
        if keep.len() != self.n {
            return Err(Error::Data(format!("filter has {} entries, frame has {}", keep.len(), self.n)));
        }
        let n = keep.iter().filter(|&&k| k).count();
        let cols = self
            .cols
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().zip(keep).filter(|(_, &m)| m).map(|(x, _)| *x).collect()))
            .collect();
        Ok(Frame { n, cols })
    }

    /// Canonical numeric columns for a cohort.
    pub fn from_records(records: &[ChildRecord]) -> Frame {
        let n = records.len();
        let mut f = Frame::new(n);
        let mut put = |name: &str, g: &dyn Fn(&ChildRecord) -> f64| {
            f.cols.insert(name.to_string(), records.iter().map(g).collect());
        };
        put("child_id", &|r| r.child_id as f64);
        put("household_id", &|r| r.household_id as f64);
        put("referral_id", &|r| r.referral_id as f64);
        put("day", &|r| r.referral_date_index as f64);
        put("motherless", &|r| flag(r.motherless));
        put("sibling_count", &|r| r.sibling_count as f64);
        put("rc_stratum", &|r| r.rc_stratum as f64);
        put("score", &|r| r.score as f64);
        put("treated", &|r| flag(r.treated));
        put("score_recorded", &|r| flag(r.score_recorded));
        put("screened_in", &|r| flag(r.screened_in));
        put("prior_referrals", &|r| r.prior_referrals as f64);
        put("removed", &|r| flag(r.removed));
        put("re_referrals", &|r| r.re_referrals as f64);
        put("cps_found_injury", &|r| flag(r.cps_found_injury));
        put("decision_minutes", &|r| r.decision_minutes);
        put("status_switched", &|r| flag(r.status_switched));
        for (j, g) in GROUP_NAMES.iter().enumerate() {
            put(g, &|r| flag(r.group_flags.as_array()[j]));
        }
        for k in 0..N_OUTCOMES {
            put(&format!("prior_{}", OUTCOME_NAMES[k]), &|r| r.prior_outcomes[k] as f64);
            put(&format!("prior_any_{}", OUTCOME_NAMES[k]), &|r| flag(r.prior_outcomes[k] > 0));
        }
        f
    }

    /// Add one indicator per nonzero randomization stratum and return their
    /// names. These restore conditional random assignment when sibling groups
    /// were assigned child by child.
    pub fn add_randomization_controls(&mut self) -> Result<Vec<String>> {
        let strata: BTreeSet<u64> = self.get("rc_stratum")?.iter().map(|&v| v as u64).filter(|&v| v > 0).collect();
        let col = self.get("rc_stratum")?.to_vec();
        let mut names = Vec::new();
        for s in strata {
            let name = format!("rc_{s}");
            self.insert(name.clone(), col.iter().map(|&v| flag(v as u64 == s)).collect())?;
            names.push(name);
        }
        Ok(names)
    }

    /// Names of existing randomization-control indicators.
    pub fn randomization_controls(&self) -> Vec<String> {
        self.names().filter(|n| n.starts_with("rc_") && *n != "rc_stratum").map(String::from).collect()
    }

    /// Elementwise product of two columns stored under a new name.
    pub fn add_product(&mut self, a: &str, b: &str, name: &str) -> Result<()> {
        let v: Vec<f64> = self.get(a)?.iter().zip(self.get(b)?).map(|(x, y)| x * y).collect();
        self.insert(name, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_and_missing() {
        let f = Frame::new(3).with("a", vec![1.0, 2.0, 3.0]).unwrap();
        let g = f.filter(&[true, false, true]).unwrap();
        assert_eq!(g.get("a").unwrap(), &[1.0, 3.0]);
        match f.get("b") {
            Err(Error::Data(m)) => assert!(m.contains("`b`")),
            e => panic!("{e:?}"),
        }
        assert!(Frame::new(2).with("x", vec![1.0]).is_err());
    }

    #[test]
    fn strata_dummies() {
        let mut f = Frame::new(4).with("rc_stratum", vec![0.0, 2.0, 3.0, 2.0]).unwrap();
        let names = f.add_randomization_controls().unwrap();
        assert_eq!(names, vec!["rc_2", "rc_3"]);
        assert_eq!(f.get("rc_2").unwrap(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(f.randomization_controls(), names);
    }
}
