//! Ranking and decision metrics: average precision, PR curves, thresholded
//! accuracies, two-shot calibration and per-source evaluation reports.

mod ap;
mod calibrate;
mod evaluate;

pub use ap::{accuracy_at_threshold, average_precision, mean_ap, oracle_threshold, pr_area, pr_curve};
pub use calibrate::{calibrate_logits, fit_logistic, two_shot_calibrate, CalibrationResult, LogisticFit};
pub use evaluate::{
    eval_input, evaluate, score_records, test_records, CategoryBreakdown, Counts, EvalOptions, EvaluationReport,
    Perturbation, ResizeMode, SourceReport,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry<T> {
    pub id: String,
    pub source_id: String,
    pub category: String,
    pub label: Label,
    /// Fakeness logit.
    pub score: T,
}

/// Scored records; never empty and every score is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet<T> {
    entries: Vec<ScoreEntry<T>>,
}

impl<T: Scalar> ScoreSet<T> {
    pub fn new(entries: Vec<ScoreEntry<T>>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Validation("score set is empty".into()));
        }
        if let Some(e) = entries.iter().find(|e| !e.score.is_finite()) {
            return Err(Error::Validation(format!("record `{}` has non-finite score {}", e.id, e.score)));
        }
        Ok(ScoreSet { entries })
    }

    /// Builds a single-source set from bare scores and labels.
    pub fn from_scores(scores: &[T], labels: &[bool]) -> Result<Self> {
        assert_eq!(scores.len(), labels.len(), "one label per score");
        let entries = scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&score, &fake))| ScoreEntry {
                id: i.to_string(),
                source_id: "synthetic".into(),
                category: String::new(),
                label: if fake { Label::Fake } else { Label::Real },
                score,
            })
            .collect();
        Self::new(entries)
    }

    pub fn entries(&self) -> &[ScoreEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores(&self) -> Vec<T> {
        self.entries.iter().map(|e| e.score).collect()
    }

    /// `true` for fake.
    pub fn labels(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.label.is_fake()).collect()
    }

    fn group_by(&self, key: impl Fn(&ScoreEntry<T>) -> &str) -> BTreeMap<String, ScoreSet<T>> {
        let mut out: BTreeMap<String, Vec<ScoreEntry<T>>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(key(e).to_string()).or_default().push(e.clone());
        }
        out.into_iter().map(|(k, entries)| (k, ScoreSet { entries })).collect()
    }

    pub fn by_source(&self) -> BTreeMap<String, ScoreSet<T>> {
        self.group_by(|e| &e.source_id)
    }

    pub fn by_category(&self) -> BTreeMap<String, ScoreSet<T>> {
        self.group_by(|e| &e.category)
    }

    /// Every score shifted by `bias`.
    pub fn shifted(&self, bias: T) -> Self {
        let entries = self.entries.iter().map(|e| ScoreEntry { score: e.score + bias, ..e.clone() }).collect();
        ScoreSet { entries }
    }
}
