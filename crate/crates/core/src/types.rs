//! Domain types shared by every module: label space, instances, splits and
//! the vote/score matrices produced by applying labeling functions.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};

/// Class label id. Declared classes are `1..=K`; `0` is [`ABSTAIN`].
pub type LabelId = u32;

/// The reserved "no opinion" vote.
pub const ABSTAIN: LabelId = 0;

/// The declared set of classes, ordered by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelEntry {
    name: String,
    id: LabelId,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelSpaceFile {
    labels: Vec<LabelEntry>,
}

impl LabelSpace {
    /// Build from `(name, id)` pairs in any order.
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = (S, LabelId)>) -> Result<Self> {
        let mut pairs: Vec<(String, LabelId)> =
            labels.into_iter().map(|(n, id)| (n.into(), id)).collect();
        if pairs.len() < 2 {
            return Err(Error::config(format!(
                "labels: need at least 2 classes, got {}",
                pairs.len()
            )));
        }
        pairs.sort_by_key(|p| p.1);
        let mut seen = HashSet::new();
        for (pos, (name, id)) in pairs.iter().enumerate() {
            if *id == ABSTAIN {
                return Err(Error::config("labels: id 0 is reserved for abstain"));
            }
            if *id as usize != pos + 1 {
                return Err(Error::config(format!(
                    "labels: ids must be exactly 1..{}, found {id}",
                    pairs.len()
                )));
            }
            if name.trim().is_empty() {
                return Err(Error::config(format!("labels: empty name for id {id}")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::config(format!("labels: duplicate name {name:?}")));
            }
        }
        Ok(LabelSpace {
            names: pairs.into_iter().map(|p| p.0).collect(),
        })
    }

    /// Convenience constructor assigning ids `1..=K` in order.
    pub fn from_names<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new(
            names
                .into_iter()
                .enumerate()
                .map(|(i, n)| (n, i as LabelId + 1)),
        )
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn contains(&self, id: LabelId) -> bool {
        id >= 1 && id as usize <= self.names.len()
    }

    pub fn name(&self, id: LabelId) -> Option<&str> {
        if self.contains(id) {
            Some(&self.names[id as usize - 1])
        } else {
            None
        }
    }

    pub fn id_of(&self, name: &str) -> Option<LabelId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|p| p as LabelId + 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (LabelId, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (i as LabelId + 1, n.as_str()))
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_file()).expect("label space serializes")
    }

    fn to_file(&self) -> LabelSpaceFile {
        LabelSpaceFile {
            labels: self
                .iter()
                .map(|(id, name)| LabelEntry {
                    name: name.to_string(),
                    id,
                })
                .collect(),
        }
    }

    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        let file: LabelSpaceFile = serde_json::from_value(v)
            .map_err(|e| Error::config(format!("label_space: {e}")))?;
        Self::new(file.labels.into_iter().map(|e| (e.name, e.id)))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: LabelSpaceFile =
            serde_json::from_str(s).map_err(|e| Error::config(format!("label_space: {e}")))?;
        Self::new(file.labels.into_iter().map(|e| (e.name, e.id)))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("label space serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&error::read_to_string(path)?).map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write_string(path, &self.to_json_string())
    }
}

/// One unit of data: a text payload, optional feature vector, optional gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<LabelId>,
}

impl Instance {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Instance {
            id: id.into(),
            text: text.into(),
            features: None,
            label: None,
        }
    }

    pub fn with_features(mut self, features: Vec<f64>) -> Self {
        self.features = Some(features);
        self
    }

    pub fn with_label(mut self, label: LabelId) -> Self {
        self.label = Some(label);
        self
    }
}

/// Role a split plays in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    /// Labeled.
    L,
    /// Unlabeled.
    U,
    /// Validation.
    V,
    /// Test.
    T,
}

impl Role {
    pub fn requires_gold(self) -> bool {
        !matches!(self, Role::U)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::L => "L",
            Role::U => "U",
            Role::V => "V",
            Role::T => "T",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub role: Role,
    pub instances: Vec<Instance>,
}

impl DataSplit {
    pub fn new(role: Role, instances: Vec<Instance>) -> Self {
        DataSplit { role, instances }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Gold labels, `None` where an instance carries none.
    pub fn gold(&self) -> Vec<Option<LabelId>> {
        self.instances.iter().map(|i| i.label).collect()
    }

    /// Gold labels, failing if any instance lacks one.
    pub fn require_gold(&self) -> Result<Vec<LabelId>> {
        self.instances
            .iter()
            .map(|i| {
                i.label.ok_or_else(|| {
                    Error::data(format!("split {}: instance {:?} missing gold", self.role, i.id))
                })
            })
            .collect()
    }

    /// Row-major `n × d` features, failing if any instance lacks them or
    /// dimensions disagree.
    pub fn require_features(&self) -> Result<(Vec<f64>, usize)> {
        let mut dim = None;
        let mut out = Vec::new();
        for inst in &self.instances {
            let f = inst.features.as_ref().ok_or_else(|| {
                Error::data(format!(
                    "split {}: instance {:?} missing features",
                    self.role, inst.id
                ))
            })?;
            match dim {
                None => dim = Some(f.len()),
                Some(d) if d != f.len() => {
                    return Err(Error::data(format!(
                        "split {}: instance {:?} has {} features, expected {d}",
                        self.role,
                        inst.id,
                        f.len()
                    )))
                }
                _ => {}
            }
            out.extend_from_slice(f);
        }
        Ok((out, dim.unwrap_or(0)))
    }

    /// Parse line-delimited JSON, one instance per non-blank line.
    pub fn from_jsonl_str(role: Role, s: &str) -> Result<Self> {
        let mut instances = Vec::new();
        for (lineno, line) in s.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let inst: Instance = serde_json::from_str(line)
                .map_err(|e| Error::data(format!("line {}: {e}", lineno + 1)))?;
            instances.push(inst);
        }
        Ok(DataSplit { role, instances })
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut out = String::new();
        for inst in &self.instances {
            out.push_str(&serde_json::to_string(inst).expect("instance serializes"));
            out.push('\n');
        }
        out
    }

    pub fn load(role: Role, path: &Path) -> Result<Self> {
        Self::from_jsonl_str(role, &error::read_to_string(path)?).map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write_string(path, &self.to_jsonl_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub id: String,
    pub reason: String,
}

/// Outcome of [`validate_dataset`]; empty means the split is valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            return Ok(());
        }
        let lines: Vec<String> = self
            .violations
            .iter()
            .map(|v| format!("{}: {}", v.id, v.reason))
            .collect();
        Err(Error::data(lines.join("; ")))
    }
}

/// Check instance and split invariants against a label space.
pub fn validate_dataset(split: &DataSplit, space: &LabelSpace) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |id: &str, reason: String| {
        violations.push(Violation {
            id: id.to_string(),
            reason,
        })
    };
    let mut seen = HashSet::new();
    let mut dim: Option<usize> = None;
    for inst in &split.instances {
        if inst.id.is_empty() {
            push(&inst.id, "empty id".into());
        } else if !seen.insert(inst.id.as_str()) {
            push(&inst.id, "duplicate id".into());
        }
        match inst.label {
            Some(l) if !space.contains(l) => push(&inst.id, "label out of range".into()),
            None if split.role.requires_gold() => push(&inst.id, "missing gold".into()),
            _ => {}
        }
        if let Some(f) = &inst.features {
            if f.iter().any(|x| !x.is_finite()) {
                push(&inst.id, "non-finite feature".into());
            }
            match dim {
                None => dim = Some(f.len()),
                Some(d) if d != f.len() => push(
                    &inst.id,
                    format!("feature dimension {} differs from {d}", f.len()),
                ),
                _ => {}
            }
        }
    }
    ValidationReport { violations }
}

/// Discrete LF outputs, `n` instances by `m` LFs, stored instance-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteMatrix {
    n: usize,
    m: usize,
    votes: Vec<LabelId>,
    lf_names: Vec<String>,
    lf_targets: Vec<LabelId>,
    lf_is_continuous: Vec<bool>,
}

impl VoteMatrix {
    /// `votes` is row-major `n × m`. Each vote must be abstain or the
    /// column's target.
    pub fn new(
        n: usize,
        votes: Vec<LabelId>,
        lf_names: Vec<String>,
        lf_targets: Vec<LabelId>,
        lf_is_continuous: Vec<bool>,
    ) -> Result<Self> {
        let m = lf_targets.len();
        if lf_names.len() != m || lf_is_continuous.len() != m {
            return Err(Error::data(format!(
                "lf metadata lengths disagree: names {}, targets {m}, continuity {}",
                lf_names.len(),
                lf_is_continuous.len()
            )));
        }
        if votes.len() != n * m {
            return Err(Error::data(format!(
                "votes: expected {} entries for {n}x{m}, got {}",
                n * m,
                votes.len()
            )));
        }
        if let Some(j) = lf_targets.iter().position(|&t| t == ABSTAIN) {
            return Err(Error::data(format!("lf_targets: LF {j} targets abstain")));
        }
        for (idx, &v) in votes.iter().enumerate() {
            let j = idx % m.max(1);
            if v != ABSTAIN && v != lf_targets[j] {
                return Err(Error::data(format!(
                    "votes: row {} LF {j} emits {v} but targets {}",
                    idx / m,
                    lf_targets[j]
                )));
            }
        }
        Ok(VoteMatrix {
            n,
            m,
            votes,
            lf_names,
            lf_targets,
            lf_is_continuous,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> LabelId {
        self.votes[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[LabelId] {
        &self.votes[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[LabelId]> {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn votes(&self) -> &[LabelId] {
        &self.votes
    }

    pub fn lf_names(&self) -> &[String] {
        &self.lf_names
    }

    pub fn lf_targets(&self) -> &[LabelId] {
        &self.lf_targets
    }

    pub fn lf_is_continuous(&self) -> &[bool] {
        &self.lf_is_continuous
    }

    /// Largest label id referenced by any LF target.
    pub fn max_target(&self) -> LabelId {
        self.lf_targets.iter().copied().max().unwrap_or(0)
    }

    /// Matrix restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> VoteMatrix {
        let mut votes = Vec::with_capacity(rows.len() * self.m);
        for &r in rows {
            votes.extend_from_slice(self.row(r));
        }
        VoteMatrix {
            n: rows.len(),
            votes,
            ..self.clone()
        }
    }
}

/// Continuous LF confidences aligned with a [`VoteMatrix`]. Entries exist only
/// in continuous columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    m: usize,
    scores: Vec<Option<f64>>,
}

impl ScoreMatrix {
    pub fn new(
        n: usize,
        scores: Vec<Option<f64>>,
        lf_is_continuous: &[bool],
    ) -> Result<Self> {
        let m = lf_is_continuous.len();
        if scores.len() != n * m {
            return Err(Error::data(format!(
                "scores: expected {} entries for {n}x{m}, got {}",
                n * m,
                scores.len()
            )));
        }
        for (idx, s) in scores.iter().enumerate() {
            if let Some(s) = s {
                let j = idx % m;
                if !lf_is_continuous[j] {
                    return Err(Error::data(format!(
                        "scores: row {} LF {j}: score on discrete LF",
                        idx / m
                    )));
                }
                if !(0.0..=1.0).contains(s) {
                    return Err(Error::data(format!(
                        "scores: row {} LF {j}: score {s} outside [0,1]",
                        idx / m
                    )));
                }
            }
        }
        Ok(ScoreMatrix { n, m, scores })
    }

    /// All-missing scores of the given shape.
    pub fn empty(n: usize, m: usize) -> Self {
        ScoreMatrix {
            n,
            m,
            scores: vec![None; n * m],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.scores[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[Option<f64>] {
        &self.scores[i * self.m..(i + 1) * self.m]
    }

    pub fn scores(&self) -> &[Option<f64>] {
        &self.scores
    }

    pub fn select_rows(&self, rows: &[usize]) -> ScoreMatrix {
        let mut scores = Vec::with_capacity(rows.len() * self.m);
        for &r in rows {
            scores.extend_from_slice(self.row(r));
        }
        ScoreMatrix {
            n: rows.len(),
            m: self.m,
            scores,
        }
    }
}
