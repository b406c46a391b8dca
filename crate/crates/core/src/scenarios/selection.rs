use std::collections::BTreeSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Dataset, Source};
use crate::statcore::{empirical_quantile, Rng};

/// Outcome-based subsampling that turns a randomized dataset into a
/// confounded one.
///
/// In `group_a` all controls are kept but only treated units with outcome at
/// or above the group's treated median. In `group_b` all treated units are
/// kept but only controls with outcome at or below the group's control
/// median. Ties at the median are kept on both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionRule {
    pub confounder_column: String,
    pub group_a: BTreeSet<String>,
    pub group_b: BTreeSet<String>,
    pub outcome_column: String,
    pub treatment_column: String,
}

impl SelectionRule {
    pub fn validate(&self) -> Result<()> {
        if self.group_a.is_empty() || self.group_b.is_empty() {
            return Err(Error::Rule("both label groups must be nonempty".into()));
        }
        if let Some(l) = self.group_a.intersection(&self.group_b).next() {
            return Err(Error::Rule(format!("label '{l}' is in both groups")));
        }
        Ok(())
    }

    /// Errors unless each group matches at least one row of `dataset`.
    pub fn check_coverage(&self, dataset: &Dataset) -> Result<()> {
        let labels = self.labels(dataset)?;
        for (name, group) in [("group_a", &self.group_a), ("group_b", &self.group_b)] {
            if !labels.iter().any(|l| group.contains(l)) {
                return Err(Error::Rule(format!(
                    "{name} {:?} matches no rows of column '{}'",
                    group, self.confounder_column
                )));
            }
        }
        Ok(())
    }

    fn labels<'d>(&self, dataset: &'d Dataset) -> Result<&'d [String]> {
        dataset.labels(&self.confounder_column).ok_or_else(|| {
            Error::Rule(format!(
                "dataset carries no labels for column '{}'",
                self.confounder_column
            ))
        })
    }
}

/// Uniform random subset of `n_rct` rows tagged as randomized, plus the
/// disjoint remainder. Both keep the original row order.
pub fn split_rct(dataset: &Dataset, n_rct: usize, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    let len = dataset.len();
    if n_rct == 0 || n_rct >= len {
        return Err(Error::domain(format!(
            "cannot draw {n_rct} randomized rows from a dataset of {len}"
        )));
    }
    let mut chosen = index::sample(rng, len, n_rct).into_vec();
    chosen.sort_unstable();
    let mut in_rct = vec![false; len];
    chosen.iter().for_each(|&i| in_rct[i] = true);
    let rest: Vec<usize> = (0..len).filter(|&i| !in_rct[i]).collect();
    Ok((
        dataset.subset(&chosen, Source::Rct)?,
        dataset.subset(&rest, dataset.source())?,
    ))
}

/// Applies `rule` and tags the result observational. With
/// `hide_confounder`, covariate features derived from the confounder column
/// are dropped. Rows whose label is in neither group are excluded.
pub fn induce_confounding(
    dataset: &Dataset,
    rule: &SelectionRule,
    hide_confounder: bool,
) -> Result<Dataset> {
    rule.validate()?;
    let labels = rule.labels(dataset)?;
    let samples = dataset.samples();

    let cell = |group: &BTreeSet<String>, arm: u8| -> Vec<f64> {
        samples
            .iter()
            .zip(labels)
            .filter(|(s, l)| s.a == arm && group.contains(*l))
            .map(|(s, _)| s.y)
            .collect()
    };
    let in_a = labels.iter().any(|l| rule.group_a.contains(l));
    let in_b = labels.iter().any(|l| rule.group_b.contains(l));
    let median_of = |name: &str, ys: Vec<f64>| -> Result<f64> {
        if ys.is_empty() {
            return Err(Error::Rule(format!(
                "{name} has no rows in the arm the rule ranks"
            )));
        }
        empirical_quantile(&ys, 0.5)
    };
    let med_a = if in_a {
        Some(median_of("group_a treated", cell(&rule.group_a, 1))?)
    } else {
        None
    };
    let med_b = if in_b {
        Some(median_of("group_b control", cell(&rule.group_b, 0))?)
    } else {
        None
    };
    if !in_a && !in_b {
        return Err(Error::Rule(format!(
            "no rows of column '{}' fall in either group",
            rule.confounder_column
        )));
    }

    let keep: Vec<usize> = samples
        .iter()
        .zip(labels)
        .enumerate()
        .filter(|(_, (s, l))| {
            if rule.group_a.contains(*l) {
                s.a == 0 || med_a.is_some_and(|m| s.y >= m)
            } else if rule.group_b.contains(*l) {
                s.a == 1 || med_b.is_some_and(|m| s.y <= m)
            } else {
                false
            }
        })
        .map(|(i, _)| i)
        .collect();
    let obs = dataset.subset(&keep, Source::Obs)?;
    Ok(if hide_confounder {
        obs.without_column(&rule.confounder_column)
    } else {
        obs
    })
}
