use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::prompt::MatchRule;
use crate::bench::SubsetTag;
use crate::error::{invalid, Result};

/// Accuracy of random guessing among four options, in percent.
pub const CHANCE_PERCENT: f64 = 25.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub name: String,
    pub subset_tag: SubsetTag,
    pub gold: usize,
    pub predicted: Option<usize>,
    pub rule: Option<MatchRule>,
    pub generated: String,
    /// Whether any frame fed to the model came from the original (needle) span.
    pub original_visible: bool,
}

impl SampleRecord {
    pub fn correct(&self) -> bool {
        self.predicted == Some(self.gold)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subsets: BTreeMap<SubsetTag, SubsetAccuracy>,
    /// Mean of the subset accuracies.
    pub average: f64,
    pub chance: f64,
    pub records: Vec<SampleRecord>,
}

/// Rounds a percentage to one decimal.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        round1(100.0 * correct as f64 / total as f64)
    }
}

pub fn accuracy(records: Vec<SampleRecord>) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(invalid("accuracy over zero records"));
    }
    let mut counts: BTreeMap<SubsetTag, (usize, usize)> = BTreeMap::new();
    for r in &records {
        let e = counts.entry(r.subset_tag).or_default();
        e.0 += r.correct() as usize;
        e.1 += 1;
    }
    let subsets: BTreeMap<SubsetTag, SubsetAccuracy> = counts
        .into_iter()
        .map(|(k, (correct, total))| {
            (k, SubsetAccuracy { correct, total, accuracy: percent(correct, total) })
        })
        .collect();
    let average = round1(subsets.values().map(|s| s.accuracy).sum::<f64>() / subsets.len() as f64);
    Ok(EvalReport { subsets, average, chance: CHANCE_PERCENT, records })
}

impl EvalReport {
    /// Accuracy over the records matching `keep`, or `None` when none match.
    pub fn accuracy_where(&self, keep: impl Fn(&SampleRecord) -> bool) -> Option<f64> {
        let sel: Vec<&SampleRecord> = self.records.iter().filter(|r| keep(r)).collect();
        (!sel.is_empty()).then(|| percent(sel.iter().filter(|r| r.correct()).count(), sel.len()))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("subset,correct,total,accuracy\n");
        for (k, v) in &self.subsets {
            s.push_str(&format!("{},{},{},{:.1}\n", k.as_str(), v.correct, v.total, v.accuracy));
        }
        let correct: usize = self.subsets.values().map(|v| v.correct).sum();
        s.push_str(&format!("average,{correct},{},{:.1}\n", self.records.len(), self.average));
        s
    }

    pub fn records_csv(&self) -> String {
        let mut s = String::from("name,subset,gold,predicted,rule,original_visible\n");
        for r in &self.records {
            let pred = r.predicted.map(|p| p.to_string()).unwrap_or_default();
            let rule = match r.rule {
                Some(MatchRule::Letter) => "letter",
                Some(MatchRule::Prefix) => "prefix",
                None => "",
            };
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.name,
                r.subset_tag.as_str(),
                r.gold,
                pred,
                rule,
                r.original_visible
            ));
        }
        s
    }
}
