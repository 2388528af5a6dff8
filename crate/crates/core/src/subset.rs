//! Choosing which instances to label by hand.
//!
//! Facility location uses `f(S) = Σ_i max(0, max_{j∈S} sim(i, j))` and is
//! maximized with lazy greedy; max cover counts the distinct LFs fired by the
//! selected rows. Greedy ties always go to the smaller index.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::types::{DataSplit, LabelId, Role, VoteMatrix, ABSTAIN};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Similarity {
    /// Cosine; 0 against a zero vector.
    #[default]
    Cosine,
    Dot,
    /// `exp(−‖a − b‖² / (2σ²))`.
    Rbf { sigma: f64 },
}

impl Similarity {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Similarity::Cosine => {
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    dot(a, b) / (na * nb)
                }
            }
            Similarity::Dot => dot(a, b),
            Similarity::Rbf { sigma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Similarity::Rbf { sigma } if !(*sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::config("rbf sigma must be positive"))
            }
            _ => Ok(()),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Selected indices in selection order, with the objective they achieve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub objective_value: f64,
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k > n {
        return Err(Error::config(format!("k = {k} exceeds n = {n}")));
    }
    Ok(())
}

/// `k` distinct indices drawn uniformly without replacement, ascending.
pub fn rand_subset(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    check_k(k, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Dense pairwise similarity over a row-major `n × d` block.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(features: &[f64], d: usize, sim: Similarity) -> Result<Self> {
        sim.validate()?;
        if d == 0 {
            return Err(Error::data("features must have at least one dimension"));
        }
        if !features.len().is_multiple_of(d) {
            return Err(Error::data("feature block is not a whole number of rows"));
        }
        let rows: Vec<&[f64]> = features.chunks(d).collect();
        let n = rows.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let s = sim.eval(rows[i], rows[j]);
                values[i * n + j] = s;
                values[j * n + i] = s;
            }
        }
        Ok(SimilarityMatrix { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// `f(S)` for an arbitrary set.
    pub fn facility_location(&self, selection: &[usize]) -> f64 {
        (0..self.n)
            .map(|i| {
                selection
                    .iter()
                    .map(|&j| self.get(i, j))
                    .fold(0.0, f64::max)
            })
            .sum()
    }

    fn gain(&self, cover: &[f64], e: usize) -> f64 {
        cover
            .iter()
            .enumerate()
            .map(|(i, c)| (self.get(i, e) - c).max(0.0))
            .sum()
    }

    fn absorb(&self, cover: &mut [f64], e: usize) {
        for (i, c) in cover.iter_mut().enumerate() {
            *c = c.max(self.get(i, e));
        }
    }
}

#[derive(PartialEq)]
struct Candidate {
    gain: f64,
    index: usize,
    fresh_at: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| Reverse(self.index).cmp(&Reverse(other.index)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lazy greedy facility location.
pub fn facility_location_lazy(sim: &SimilarityMatrix, k: usize) -> Result<Selection> {
    let n = sim.n();
    check_k(k, n)?;
    let mut cover = vec![0.0; n];
    let mut heap: BinaryHeap<Candidate> = (0..n)
        .map(|e| Candidate {
            gain: sim.gain(&cover, e),
            index: e,
            fresh_at: 0,
        })
        .collect();
    let mut chosen = Vec::with_capacity(k);
    let mut value = 0.0;
    while chosen.len() < k {
        let top = heap.pop().expect("k <= n leaves candidates");
        let step = chosen.len();
        if top.fresh_at == step {
            sim.absorb(&mut cover, top.index);
            value += top.gain;
            chosen.push(top.index);
        } else {
            heap.push(Candidate {
                gain: sim.gain(&cover, top.index),
                index: top.index,
                fresh_at: step,
            });
        }
    }
    Ok(Selection {
        indices: chosen,
        objective_value: value,
    })
}

/// Plain greedy facility location, recomputing every gain each step.
pub fn facility_location_naive(sim: &SimilarityMatrix, k: usize) -> Result<Selection> {
    let n = sim.n();
    check_k(k, n)?;
    let mut cover = vec![0.0; n];
    let mut taken = vec![false; n];
    let mut chosen = Vec::with_capacity(k);
    let mut value = 0.0;
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for e in (0..n).filter(|e| !taken[*e]) {
            let g = sim.gain(&cover, e);
            if best.is_none_or(|(_, b)| g > b) {
                best = Some((e, g));
            }
        }
        let (e, g) = best.expect("k <= n");
        taken[e] = true;
        sim.absorb(&mut cover, e);
        value += g;
        chosen.push(e);
    }
    Ok(Selection {
        indices: chosen,
        objective_value: value,
    })
}

/// Unsupervised subset: lazy greedy facility location over the features.
pub fn unsup_subset(features: &[f64], d: usize, k: usize, sim: Similarity) -> Result<Selection> {
    let m = SimilarityMatrix::new(features, d, sim)?;
    facility_location_lazy(&m, k)
}

/// Number of distinct LFs fired by the selected rows.
pub fn max_cover_value(vm: &VoteMatrix, selection: &[usize]) -> usize {
    let mut covered = vec![false; vm.m()];
    for &i in selection {
        for (c, &v) in covered.iter_mut().zip(vm.row(i)) {
            *c |= v != ABSTAIN;
        }
    }
    covered.iter().filter(|c| **c).count()
}

/// Greedy max cover over the sets of LFs firing on each row.
pub fn max_cover_subset(vm: &VoteMatrix, k: usize) -> Result<Selection> {
    let n = vm.n();
    check_k(k, n)?;
    let mut covered = vec![false; vm.m()];
    let mut taken = vec![false; n];
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(usize, usize)> = None;
        for i in (0..n).filter(|i| !taken[*i]) {
            let g = vm
                .row(i)
                .iter()
                .zip(&covered)
                .filter(|(v, c)| **v != ABSTAIN && !**c)
                .count();
            if best.is_none_or(|(_, b)| g > b) {
                best = Some((i, g));
            }
        }
        let (i, _) = best.expect("k <= n");
        taken[i] = true;
        for (c, &v) in covered.iter_mut().zip(vm.row(i)) {
            *c |= v != ABSTAIN;
        }
        chosen.push(i);
    }
    let value = covered.iter().filter(|c| **c).count() as f64;
    Ok(Selection {
        indices: chosen,
        objective_value: value,
    })
}

/// Per-class budgets proportional to class counts, largest-remainder
/// rounding with remainder ties toward the smaller class id.
pub fn class_budgets(counts: &BTreeMap<LabelId, usize>, k: usize) -> Result<BTreeMap<LabelId, usize>> {
    let n: usize = counts.values().sum();
    check_k(k, n)?;
    if k < counts.len() {
        return Err(Error::config(format!(
            "budget below class count: k = {k}, {} classes",
            counts.len()
        )));
    }
    let mut budgets: BTreeMap<LabelId, usize> = BTreeMap::new();
    let mut rems: Vec<(usize, LabelId)> = Vec::new();
    for (&c, &cnt) in counts {
        budgets.insert(c, k * cnt / n);
        rems.push((k * cnt % n, c));
    }
    let assigned: usize = budgets.values().sum();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, c) in rems.into_iter().take(k - assigned) {
        *budgets.get_mut(&c).expect("present") += 1;
    }
    Ok(budgets)
}

/// Class-stratified facility location: budgets per [`class_budgets`], lazy
/// greedy within each class, results concatenated by ascending class id.
pub fn sup_subset(
    features: &[f64],
    d: usize,
    gold: &[LabelId],
    k: usize,
    sim: Similarity,
) -> Result<Selection> {
    if d == 0 || features.len() != gold.len() * d {
        return Err(Error::data(format!(
            "{} gold labels for {} feature values of dimension {d}",
            gold.len(),
            features.len()
        )));
    }
    if gold.contains(&ABSTAIN) {
        return Err(Error::data("gold labels required for every candidate"));
    }
    let mut members: BTreeMap<LabelId, Vec<usize>> = BTreeMap::new();
    for (i, &g) in gold.iter().enumerate() {
        members.entry(g).or_default().push(i);
    }
    let counts = members.iter().map(|(c, m)| (*c, m.len())).collect();
    let budgets = class_budgets(&counts, k)?;
    let mut indices = Vec::with_capacity(k);
    let mut value = 0.0;
    for (class, rows) in &members {
        let budget = budgets[class];
        if budget == 0 {
            continue;
        }
        let sub: Vec<f64> = rows
            .iter()
            .flat_map(|&i| features[i * d..(i + 1) * d].iter().copied())
            .collect();
        let sel = unsup_subset(&sub, d, budget, sim)?;
        value += sel.objective_value;
        indices.extend(sel.indices.iter().map(|&local| rows[local]));
    }
    Ok(Selection {
        indices,
        objective_value: value,
    })
}

/// Write `<prefix>.L` with the selected instances and `<prefix>.U` with the
/// rest, both preserving input order.
pub fn save_split_files(split: &DataSplit, selected: &[usize], prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    let (l, u) = partition(split, selected)?;
    let with_suffix = |s: &str| {
        let mut p = prefix.as_os_str().to_owned();
        p.push(s);
        PathBuf::from(p)
    };
    let (lp, up) = (with_suffix(".L"), with_suffix(".U"));
    l.save(&lp)?;
    u.save(&up)?;
    Ok((lp, up))
}

/// Split into (selected as L, remainder as U), preserving input order.
pub fn partition(split: &DataSplit, selected: &[usize]) -> Result<(DataSplit, DataSplit)> {
    let mut mark = vec![false; split.len()];
    for &i in selected {
        if i >= split.len() {
            return Err(Error::data(format!("index {i} out of range")));
        }
        mark[i] = true;
    }
    let mut l = Vec::new();
    let mut u = Vec::new();
    for (inst, m) in split.instances.iter().zip(mark) {
        if m {
            l.push(inst.clone());
        } else {
            u.push(inst.clone());
        }
    }
    Ok((DataSplit::new(Role::L, l), DataSplit::new(Role::U, u)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rand,
    Fl,
    Maxcover,
    Sup,
}

/// Output of the `subset` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicesFile {
    pub method: Method,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_value: Option<f64>,
}

impl IndicesFile {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: IndicesFile =
            serde_json::from_str(s).map_err(|e| Error::data(format!("indices file: {e}")))?;
        if f.indices.len() != f.k {
            return Err(Error::data(format!(
                "indices: {} entries but k = {}",
                f.indices.len(),
                f.k
            )));
        }
        let mut sorted = f.indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::data("indices: duplicate entry"));
        }
        Ok(f)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("indices serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&error::read_to_string(path)?).map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write_string(path, &self.to_json_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rand_subset_bounds_and_determinism() {
        assert_eq!(rand_subset(5, 5, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(rand_subset(5, 0, 1).is_err());
        assert!(rand_subset(5, 6, 1).is_err());
        let a = rand_subset(100, 10, 42).unwrap();
        assert_eq!(a, rand_subset(100, 10, 42).unwrap());
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn centroid_wins_single_pick() {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let feats = [1.0, 0.0, 0.0, 1.0, r, r];
        let sel = unsup_subset(&feats, 2, 1, Similarity::Cosine).unwrap();
        assert_eq!(sel.indices, vec![2]);
        assert_relative_eq!(sel.objective_value, 1.0 + 2f64.sqrt(), epsilon = 1e-12);
        let m = SimilarityMatrix::new(&feats, 2, Similarity::Cosine).unwrap();
        assert_relative_eq!(m.facility_location(&[0]), 1.0 + r, epsilon = 1e-12);
    }

    #[test]
    fn identical_points_pick_first() {
        let feats = [1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        let sel = unsup_subset(&feats, 2, 1, Similarity::Cosine).unwrap();
        assert_eq!(sel.indices, vec![0]);
        let all = unsup_subset(&feats, 2, 3, Similarity::Cosine).unwrap();
        let mut idx = all.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2]);
        assert!(unsup_subset(&feats, 2, 4, Similarity::Cosine).is_err());
    }

    #[test]
    fn zero_vector_similarity_is_zero() {
        assert_eq!(Similarity::Cosine.eval(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_relative_eq!(Similarity::Rbf { sigma: 1.0 }.eval(&[0.0], &[0.0]), 1.0);
        assert!(SimilarityMatrix::new(&[1.0], 1, Similarity::Rbf { sigma: 0.0 }).is_err());
    }

    fn cover_matrix(rows: &[&[LabelId]]) -> VoteMatrix {
        VoteMatrix::new(
            rows.len(),
            rows.concat(),
            vec!["a".into(), "b".into(), "c".into()],
            vec![1, 1, 2],
            vec![false; 3],
        )
        .unwrap()
    }

    #[test]
    fn max_cover_examples() {
        // F_1 = {1,2}, F_2 = {2,3}, F_3 = {3}
        let vm = cover_matrix(&[&[1, 1, 0], &[0, 1, 2], &[0, 0, 2]]);
        assert_eq!(max_cover_subset(&vm, 1).unwrap().indices, vec![0]);
        let two = max_cover_subset(&vm, 2).unwrap();
        assert_eq!(two.indices, vec![0, 1]);
        assert_eq!(two.objective_value, 3.0);
        let none = cover_matrix(&[&[0, 0, 0], &[0, 0, 0], &[0, 0, 0]]);
        assert_eq!(max_cover_subset(&none, 2).unwrap().indices, vec![0, 1]);
        assert!(max_cover_subset(&vm, 4).is_err());
    }

    #[test]
    fn largest_remainder_budgets() {
        let counts = BTreeMap::from([(1, 5), (2, 3), (3, 2)]);
        let b = class_budgets(&counts, 5).unwrap();
        assert_eq!(b, BTreeMap::from([(1, 3), (2, 1), (3, 1)]));
        let err = class_budgets(&counts, 2).unwrap_err();
        assert!(err.to_string().contains("budget below class count"));
    }

    #[test]
    fn sup_subset_stratifies() {
        let feats = [1.0, 0.0, 0.9, 0.1, 0.0, 1.0, 0.1, 0.9];
        let gold = [1, 1, 2, 2];
        let sel = sup_subset(&feats, 2, &gold, 2, Similarity::Cosine).unwrap();
        assert_eq!(sel.indices.len(), 2);
        assert_eq!(gold[sel.indices[0]], 1);
        assert_eq!(gold[sel.indices[1]], 2);
        let all = sup_subset(&feats, 2, &gold, 4, Similarity::Cosine).unwrap();
        let mut idx = all.indices;
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn partition_preserves_order() {
        use crate::types::Instance;
        let split = DataSplit::new(
            Role::U,
            (0..4).map(|i| Instance::new(format!("i{i}"), "")).collect(),
        );
        let (l, u) = partition(&split, &[2, 0]).unwrap();
        let ids = |s: &DataSplit| s.instances.iter().map(|i| i.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&l), vec!["i0", "i2"]);
        assert_eq!(ids(&u), vec!["i1", "i3"]);
        assert!(partition(&split, &[9]).is_err());
    }

    #[test]
    fn indices_file_checks() {
        let f = IndicesFile {
            method: Method::Fl,
            k: 2,
            seed: None,
            indices: vec![3, 1],
            objective_value: Some(1.5),
        };
        assert_eq!(IndicesFile::from_json_str(&f.to_json_string()).unwrap(), f);
        let dup = r#"{"method":"rand","k":2,"indices":[1,1]}"#;
        assert!(IndicesFile::from_json_str(dup).is_err());
    }
}
