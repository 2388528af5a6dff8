//! Unsupervised label aggregation: majority vote and a generative label
//! model with discrete and continuous LF potentials and quality guides.

mod cage;

use serde::{Deserialize, Serialize};

pub use cage::{
    cage_fit, cage_posterior, cage_predict, estimate_guides, CageGrad, CageParams, EvalSet,
    DEFAULT_GUIDE,
};

use crate::error::{Error, Result};
use crate::math::argmax_first;
use crate::types::{LabelId, VoteMatrix, ABSTAIN};

/// Per row, the label with the most votes; ties go to the smallest id and
/// all-abstain rows stay [`ABSTAIN`].
pub fn mv_predict(vm: &VoteMatrix) -> Vec<LabelId> {
    let k = vm.max_target() as usize;
    let mut counts = vec![0usize; k + 1];
    vm.rows()
        .map(|row| {
            counts.iter_mut().for_each(|c| *c = 0);
            for &v in row {
                counts[v as usize] += 1;
            }
            let mut best = (ABSTAIN, 0);
            for label in 1..=k {
                if counts[label] > best.1 {
                    best = (label as LabelId, counts[label]);
                }
            }
            best.0
        })
        .collect()
}

/// Argmax of a probability vector as a label id, smallest id on ties.
pub fn argmax_label(proba: &[f64]) -> LabelId {
    argmax_first(proba) as LabelId + 1
}

/// Fraction of rows where `pred` equals `gold`. Abstentions count as wrong.
pub fn accuracy(pred: &[LabelId], gold: &[LabelId]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    hits as f64 / gold.len() as f64
}

/// Unweighted mean of per-class F1 over classes `1..=k`. Classes absent from
/// both predictions and gold are skipped.
pub fn macro_f1(pred: &[LabelId], gold: &[LabelId], k: usize) -> f64 {
    let mut total = 0.0;
    let mut classes = 0;
    for c in 1..=k as LabelId {
        let tp = pred.iter().zip(gold).filter(|(p, g)| **p == c && **g == c).count();
        let fp = pred.iter().zip(gold).filter(|(p, g)| **p == c && **g != c).count();
        let fneg = pred.iter().zip(gold).filter(|(p, g)| **p != c && **g == c).count();
        if tp + fp + fneg == 0 {
            continue;
        }
        classes += 1;
        total += 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64;
    }
    if classes == 0 {
        0.0
    } else {
        total / classes as f64
    }
}

/// Optimizer settings for label-model training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight λ of the quality-guide regularizer.
    pub qg_weight: f64,
    pub seed: u64,
    /// Scores and continuous qualities are clamped to `[ε, 1 − ε]`.
    pub score_clamp: f64,
    /// Beta concentration `c` of the continuous potentials.
    pub concentration: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.01,
            qg_weight: 1.0,
            seed: 0,
            score_clamp: 1e-3,
            concentration: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and non-negative"));
        }
        if !(self.qg_weight >= 0.0 && self.qg_weight.is_finite()) {
            return Err(Error::config("qg_weight must be finite and non-negative"));
        }
        if !(self.score_clamp > 0.0 && self.score_clamp < 0.5) {
            return Err(Error::config("score_clamp must lie in (0, 0.5)"));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::config("concentration must be positive"));
        }
        Ok(())
    }
}

/// Objective and evaluation telemetry, one entry for the initial parameters
/// followed by one per epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub objective: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eval_accuracy: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub val_macro_f1: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_epoch: Option<usize>,
}

/// Objectives further than this many multiples of `max(1, |initial|)` past
/// the starting value count as divergence.
pub(crate) const EXPLOSION_FACTOR: f64 = 1e3;

pub(crate) fn divergence() -> Error {
    Error::Divergence("divergence; reduce learning_rate".into())
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub id: String,
    pub proba: Vec<f64>,
    pub label: LabelId,
}

impl Prediction {
    pub fn new(id: impl Into<String>, proba: Vec<f64>) -> Self {
        let label = argmax_label(&proba);
        Prediction {
            id: id.into(),
            proba,
            label,
        }
    }
}

/// Serialize predictions as JSON lines.
pub fn predictions_to_jsonl(preds: &[Prediction]) -> String {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

/// Parse and check a predictions file: each `proba` is a distribution over
/// `k` classes and `label` is its argmax.
pub fn predictions_from_jsonl(s: &str, k: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (no, line) in s.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let ctx = |msg: String| Error::data(format!("line {}: {msg}", no + 1));
        let p: Prediction = serde_json::from_str(line).map_err(|e| ctx(e.to_string()))?;
        if p.proba.len() != k {
            return Err(ctx(format!("{} probabilities for K = {k}", p.proba.len())));
        }
        let total: f64 = p.proba.iter().sum();
        if p.proba.iter().any(|x| !(0.0..=1.0).contains(x)) || (total - 1.0).abs() > 1e-9 {
            return Err(ctx("proba is not a distribution".into()));
        }
        if p.label != argmax_label(&p.proba) {
            return Err(ctx("label is not the argmax of proba".into()));
        }
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vm(rows: &[&[LabelId]], targets: &[LabelId]) -> VoteMatrix {
        let m = targets.len();
        VoteMatrix::new(
            rows.len(),
            rows.concat(),
            (0..m).map(|j| format!("lf{j}")).collect(),
            targets.to_vec(),
            vec![false; m],
        )
        .unwrap()
    }

    #[test]
    fn majority_vote_examples() {
        let m = vm(&[&[1, 0, 1], &[0, 0, 0]], &[1, 2, 1]);
        assert_eq!(mv_predict(&m), vec![1, ABSTAIN]);
        let m = vm(&[&[1, 2]], &[1, 2]);
        assert_eq!(mv_predict(&m), vec![1]);
        let m = vm(&[&[0, 2, 2, 1]], &[1, 2, 2, 1]);
        assert_eq!(mv_predict(&m), vec![2]);
        let m = vm(&[&[0, 0, 2, 0]], &[1, 2, 2, 1]);
        assert_eq!(mv_predict(&m), vec![2]);
    }

    #[test]
    fn argmax_tie_rule() {
        assert_eq!(argmax_label(&[2.0 / 3.0, 1.0 / 3.0]), 1);
        assert_eq!(argmax_label(&[0.5, 0.5]), 1);
        assert_eq!(argmax_label(&[0.1, 0.9]), 2);
    }

    #[test]
    fn f1_and_accuracy() {
        assert_eq!(accuracy(&[1, 2, 0], &[1, 1, 2]), 1.0 / 3.0);
        let preds = vec![Prediction::new("a", vec![0.25, 0.75]), Prediction::new("b", vec![0.5, 0.5])];
        assert_eq!((preds[0].label, preds[1].label), (2, 1));
        let text = predictions_to_jsonl(&preds);
        assert_eq!(predictions_from_jsonl(&text, 2).unwrap(), preds);
        assert!(predictions_from_jsonl(&text, 3).is_err());
        assert!(predictions_from_jsonl(r#"{"id":"a","proba":[0.2,0.8],"label":1}"#, 2).is_err());
        assert_eq!(macro_f1(&[1, 1], &[1, 1], 2), 1.0);
        // class 1: tp 1 fp 1 fn 0 -> 2/3; class 2: tp 0 fn 1 -> 0
        assert!((macro_f1(&[1, 1], &[1, 2], 2) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let zero = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
        let lr0 = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(lr0.validate().is_ok());
    }
}
