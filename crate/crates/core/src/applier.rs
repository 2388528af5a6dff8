//! Applying labeling functions to a split, and the matrix file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::lfkit::LabelingFunction;
use crate::types::{DataSplit, LabelId, LabelSpace, ScoreMatrix, VoteMatrix, ABSTAIN};
use crate::FORMAT_VERSION;

/// Run every LF over every instance. Row `i` of the result is instance `i`.
pub fn apply<R: LabelingFunction>(
    rules: &[R],
    split: &DataSplit,
    space: &LabelSpace,
) -> Result<(VoteMatrix, ScoreMatrix)> {
    for r in rules {
        if !space.contains(r.target()) {
            return Err(Error::config(format!(
                "rule {:?}: target {} not in label space",
                r.name(),
                r.target()
            )));
        }
    }
    let n = split.len();
    let m = rules.len();
    let mut votes = Vec::with_capacity(n * m);
    let mut scores = Vec::with_capacity(n * m);
    for inst in &split.instances {
        for r in rules {
            let vote = r.evaluate(&inst.text, inst.features.as_deref())?;
            if vote.label != ABSTAIN && vote.label != r.target() {
                return Err(Error::config(format!(
                    "rule {:?} emitted {} but targets {}",
                    r.name(),
                    vote.label,
                    r.target()
                )));
            }
            votes.push(vote.label);
            scores.push(if r.is_continuous() { vote.score } else { None });
        }
    }
    let names = rules.iter().map(|r| r.name().to_string()).collect();
    let targets = rules.iter().map(|r| r.target()).collect();
    let cont: Vec<bool> = rules.iter().map(|r| r.is_continuous()).collect();
    let sm = ScoreMatrix::new(n, scores, &cont)?;
    let vm = VoteMatrix::new(n, votes, names, targets, cont)?;
    Ok((vm, sm))
}

/// Layout of the `votes`/`scores` arrays in a matrix file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// `n` rows of `m` entries.
    #[default]
    Instances,
    /// `m` rows of `n` entries.
    Lfs,
}

impl std::str::FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "instances" => Ok(Orientation::Instances),
            "lfs" => Ok(Orientation::Lfs),
            other => Err(Error::config(format!(
                "orientation must be instances or lfs, got {other:?}"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixFile {
    version: u32,
    orientation: Orientation,
    label_space: serde_json::Value,
    lf_names: Vec<String>,
    lf_targets: Vec<LabelId>,
    lf_is_continuous: Vec<bool>,
    votes: Vec<Vec<LabelId>>,
    scores: Vec<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold: Option<Vec<Option<LabelId>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ids: Option<Vec<String>>,
}

/// Everything persisted in a matrix file.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrices {
    pub space: LabelSpace,
    pub votes: VoteMatrix,
    pub scores: ScoreMatrix,
    pub gold: Option<Vec<Option<LabelId>>>,
    /// Instance ids, aligned with rows.
    pub ids: Option<Vec<String>>,
}

impl Matrices {
    /// Apply `rules` to `split`, carrying its gold labels and ids along.
    pub fn from_split<R: LabelingFunction>(
        rules: &[R],
        split: &DataSplit,
        space: &LabelSpace,
    ) -> Result<Self> {
        let (votes, scores) = apply(rules, split, space)?;
        let gold = split.gold();
        Ok(Matrices {
            space: space.clone(),
            votes,
            scores,
            gold: gold.iter().any(Option::is_some).then_some(gold),
            ids: Some(split.instances.iter().map(|i| i.id.clone()).collect()),
        })
    }

    pub fn n(&self) -> usize {
        self.votes.n()
    }

    /// Gold labels, failing if absent for any row.
    pub fn require_gold(&self) -> Result<Vec<LabelId>> {
        let gold = self
            .gold
            .as_ref()
            .ok_or_else(|| Error::data("matrix has no gold labels"))?;
        gold.iter()
            .enumerate()
            .map(|(i, g)| g.ok_or_else(|| Error::data(format!("gold: row {i} missing"))))
            .collect()
    }

    pub fn to_json_string(&self, orientation: Orientation) -> String {
        let (n, m) = (self.votes.n(), self.votes.m());
        let (votes, scores) = match orientation {
            Orientation::Instances => (
                (0..n).map(|i| self.votes.row(i).to_vec()).collect(),
                (0..n).map(|i| self.scores.row(i).to_vec()).collect(),
            ),
            Orientation::Lfs => (
                (0..m)
                    .map(|j| (0..n).map(|i| self.votes.get(i, j)).collect())
                    .collect(),
                (0..m)
                    .map(|j| (0..n).map(|i| self.scores.get(i, j)).collect())
                    .collect(),
            ),
        };
        let file = MatrixFile {
            version: FORMAT_VERSION,
            orientation,
            label_space: self.space.to_json_value(),
            lf_names: self.votes.lf_names().to_vec(),
            lf_targets: self.votes.lf_targets().to_vec(),
            lf_is_continuous: self.votes.lf_is_continuous().to_vec(),
            votes,
            scores,
            gold: self.gold.clone(),
            ids: self.ids.clone(),
        };
        serde_json::to_string(&file).expect("matrix serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: MatrixFile =
            serde_json::from_str(s).map_err(|e| Error::data(format!("matrix file: {e}")))?;
        if file.version != FORMAT_VERSION {
            return Err(Error::data(format!(
                "version: unsupported matrix version {}",
                file.version
            )));
        }
        let space = LabelSpace::from_json_value(file.label_space)
            .map_err(|e| Error::data(e.to_string()))?;
        let m = file.lf_targets.len();
        if file.lf_names.len() != m || file.lf_is_continuous.len() != m {
            return Err(Error::data(format!(
                "lf_names/lf_is_continuous: lengths {}/{} differ from lf_targets {m}",
                file.lf_names.len(),
                file.lf_is_continuous.len()
            )));
        }
        for (j, &t) in file.lf_targets.iter().enumerate() {
            if !space.contains(t) {
                return Err(Error::data(format!("lf_targets[{j}]: label out of range")));
            }
        }
        let (n, votes, scores) = flatten(file.orientation, m, file.votes, file.scores)?;
        for (idx, &v) in votes.iter().enumerate() {
            if v != ABSTAIN && !space.contains(v) {
                return Err(Error::data(format!(
                    "votes: row {} LF {}: label out of range",
                    idx / m,
                    idx % m
                )));
            }
        }
        if let Some(gold) = &file.gold {
            if gold.len() != n {
                return Err(Error::data(format!(
                    "gold: length {} differs from {n} instances",
                    gold.len()
                )));
            }
            if let Some(i) = gold.iter().position(|g| matches!(g, Some(l) if !space.contains(*l))) {
                return Err(Error::data(format!("gold: row {i}: label out of range")));
            }
        }
        if let Some(ids) = &file.ids {
            if ids.len() != n {
                return Err(Error::data(format!(
                    "ids: length {} differs from {n} instances",
                    ids.len()
                )));
            }
        }
        let scores = ScoreMatrix::new(n, scores, &file.lf_is_continuous)?;
        let votes = VoteMatrix::new(
            n,
            votes,
            file.lf_names,
            file.lf_targets,
            file.lf_is_continuous,
        )?;
        Ok(Matrices {
            space,
            votes,
            scores,
            gold: file.gold,
            ids: file.ids,
        })
    }

    pub fn save(&self, path: &Path, orientation: Orientation) -> Result<()> {
        error::write_string(path, &self.to_json_string(orientation))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&error::read_to_string(path)?).map_err(|e| e.in_file(path))
    }
}

type Flat = (usize, Vec<LabelId>, Vec<Option<f64>>);

fn flatten(
    orientation: Orientation,
    m: usize,
    votes: Vec<Vec<LabelId>>,
    scores: Vec<Vec<Option<f64>>>,
) -> Result<Flat> {
    let shape_err = |field: &str, msg: String| Error::data(format!("{field}: shape mismatch, {msg}"));
    match orientation {
        Orientation::Instances => {
            let n = votes.len();
            if scores.len() != n {
                return Err(shape_err("scores", format!("{} rows vs {n}", scores.len())));
            }
            for (i, (v, s)) in votes.iter().zip(&scores).enumerate() {
                if v.len() != m {
                    return Err(shape_err("votes", format!("row {i} has {} entries, expected {m}", v.len())));
                }
                if s.len() != m {
                    return Err(shape_err("scores", format!("row {i} has {} entries, expected {m}", s.len())));
                }
            }
            Ok((
                n,
                votes.into_iter().flatten().collect(),
                scores.into_iter().flatten().collect(),
            ))
        }
        Orientation::Lfs => {
            if votes.len() != m {
                return Err(shape_err("votes", format!("{} LF rows, expected {m}", votes.len())));
            }
            if scores.len() != m {
                return Err(shape_err("scores", format!("{} LF rows, expected {m}", scores.len())));
            }
            let n = votes.first().map_or(0, Vec::len);
            for (j, (v, s)) in votes.iter().zip(&scores).enumerate() {
                if v.len() != n || s.len() != n {
                    return Err(shape_err("votes", format!("LF row {j} length differs from {n}")));
                }
            }
            let mut fv = Vec::with_capacity(n * m);
            let mut fs = Vec::with_capacity(n * m);
            for i in 0..n {
                for j in 0..m {
                    fv.push(votes[j][i]);
                    fs.push(scores[j][i]);
                }
            }
            Ok((n, fv, fs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lfkit::{ContinuousScorer, RuleSet, RuleSpec};
    use crate::types::{Instance, Role};

    fn space() -> LabelSpace {
        LabelSpace::from_names(["spam", "ham"]).unwrap()
    }

    fn demo_split() -> DataSplit {
        DataSplit::new(
            Role::U,
            vec![
                Instance::new("a", "free cash"),
                Instance::new("b", "meeting at noon"),
                Instance::new("c", "hello"),
            ],
        )
    }

    fn demo_rules() -> RuleSet {
        RuleSet::compile(
            space(),
            &[
                RuleSpec::keyword("free", 1, ["free"]),
                RuleSpec::keyword("meeting", 2, ["meeting"]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn apply_keyword_rules() {
        let rs = demo_rules();
        let (vm, sm) = apply(&rs.rules, &demo_split(), &rs.space).unwrap();
        assert_eq!(vm.votes(), &[1, 0, 0, 2, 0, 0]);
        assert!(sm.scores().iter().all(Option::is_none));
        assert_eq!(vm.lf_names(), &["free".to_string(), "meeting".to_string()]);
    }

    #[test]
    fn apply_empty_dataset() {
        let rs = demo_rules();
        let (vm, sm) = apply(&rs.rules, &DataSplit::new(Role::U, vec![]), &rs.space).unwrap();
        assert_eq!((vm.n(), vm.m()), (0, 2));
        assert_eq!((sm.n(), sm.m()), (0, 2));
    }

    #[test]
    fn zero_threshold_always_fires() {
        let rs = RuleSet::compile(
            space(),
            &[RuleSpec::continuous("c", 1, ContinuousScorer::tf_cosine(["zzz"]), 0.0)],
        )
        .unwrap();
        let (vm, sm) = apply(&rs.rules, &demo_split(), &rs.space).unwrap();
        assert_eq!(vm.votes(), &[1, 1, 1]);
        assert!(sm.scores().iter().all(|s| *s == Some(0.0)));
    }

    #[test]
    fn target_outside_space_is_config_error() {
        let rs = demo_rules();
        let small = LabelSpace::from_names(["a", "b"]).unwrap();
        let three = LabelSpace::from_names(["a", "b", "c"]).unwrap();
        let rules3 = RuleSet::compile(three, &[RuleSpec::keyword("k", 3, ["x"])]).unwrap();
        assert!(apply(&rs.rules, &demo_split(), &small).is_ok());
        assert!(matches!(
            apply(&rules3.rules, &demo_split(), &small),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn matrix_round_trip_both_orientations() {
        let rs = demo_rules();
        let m = Matrices::from_split(&rs.rules, &demo_split(), &rs.space).unwrap();
        for o in [Orientation::Instances, Orientation::Lfs] {
            let text = m.to_json_string(o);
            assert_eq!(Matrices::from_json_str(&text).unwrap(), m);
        }
    }

    fn tamper(f: impl FnOnce(&mut serde_json::Value)) -> Result<Matrices> {
        let rs = demo_rules();
        let m = Matrices::from_split(&rs.rules, &demo_split(), &rs.space).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json_string(Orientation::Instances)).unwrap();
        f(&mut v);
        Matrices::from_json_str(&v.to_string())
    }

    #[test]
    fn import_rejects_out_of_range_vote() {
        let err = tamper(|v| v["votes"][0][0] = 7.into()).unwrap_err();
        assert!(err.to_string().contains("label out of range"), "{err}");
    }

    #[test]
    fn import_rejects_score_on_discrete_lf() {
        let err = tamper(|v| v["scores"][0][0] = 0.5.into()).unwrap_err();
        assert!(err.to_string().contains("score on discrete LF"), "{err}");
    }

    #[test]
    fn import_rejects_version_and_shape() {
        let err = tamper(|v| v["version"] = 2.into()).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
        let err = tamper(|v| v["votes"][1] = serde_json::json!([0])).unwrap_err();
        assert!(err.to_string().contains("shape mismatch"), "{err}");
        let err = tamper(|v| v["gold"] = serde_json::json!([1])).unwrap_err();
        assert!(err.to_string().contains("gold"), "{err}");
    }
}
