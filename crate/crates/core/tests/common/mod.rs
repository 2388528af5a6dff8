#![allow(dead_code)]

use dpkit::jointlearn::{Arch, FeatureModel, Head, JlParams, JlWeights};
use dpkit::labelmodels::CageParams;
use dpkit::{LabelId, ScoreMatrix, VoteMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

/// Random LF layout: targets in 1..=k, a share of continuous LFs.
pub fn layout(r: &mut ChaCha8Rng, k: usize, m: usize, continuous: bool) -> (Vec<LabelId>, Vec<bool>) {
    let targets = (0..m).map(|_| r.gen_range(1..=k as LabelId)).collect();
    let cont = (0..m).map(|_| continuous && r.gen_bool(0.4)).collect();
    (targets, cont)
}

pub fn params(r: &mut ChaCha8Rng, k: usize, targets: &[LabelId], cont: &[bool], scale: f64) -> CageParams {
    let guides: Vec<f64> = targets.iter().map(|_| r.gen_range(0.1..0.9)).collect();
    let mut p = CageParams::zeros(k, targets.to_vec(), cont.to_vec(), Some(&guides), 10.0, 1e-3).unwrap();
    p.theta.iter_mut().for_each(|t| *t = r.gen_range(-scale..scale));
    p.pi.iter_mut().for_each(|t| *t = r.gen_range(-2.0..2.0));
    p
}

/// One row of single-polarity votes with scores on continuous columns.
pub fn row(r: &mut ChaCha8Rng, targets: &[LabelId], cont: &[bool]) -> (Vec<LabelId>, Vec<Option<f64>>) {
    let mut votes = Vec::with_capacity(targets.len());
    let mut scores = Vec::with_capacity(targets.len());
    for (&t, &c) in targets.iter().zip(cont) {
        let fired = r.gen_bool(0.5);
        votes.push(if fired { t } else { 0 });
        scores.push((c && (fired || r.gen_bool(0.5))).then(|| r.gen_range(0.0..=1.0)));
    }
    (votes, scores)
}

pub fn matrices(r: &mut ChaCha8Rng, n: usize, targets: &[LabelId], cont: &[bool]) -> (VoteMatrix, ScoreMatrix) {
    let mut votes = Vec::new();
    let mut scores = Vec::new();
    for _ in 0..n {
        let (v, s) = row(r, targets, cont);
        votes.extend(v);
        scores.extend(s);
    }
    let names = (0..targets.len()).map(|j| format!("lf{j}")).collect();
    let sm = ScoreMatrix::new(n, scores, cont).unwrap();
    let vm = VoteMatrix::new(n, votes, names, targets.to_vec(), cont.to_vec()).unwrap();
    (vm, sm)
}

pub fn features(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
    (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect()
}

pub fn gold(r: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<LabelId> {
    (0..n).map(|_| r.gen_range(1..=k as LabelId)).collect()
}

/// JL parameters with every entry random.
pub fn jl_params(r: &mut ChaCha8Rng, gm: CageParams, arch: Arch, d: usize, weights: JlWeights) -> JlParams {
    let k = gm.k;
    let mut p = JlParams {
        fm: FeatureModel::init(arch, d, k, 0),
        gm,
        weights,
        head: Head::Mean,
    };
    let flat: Vec<f64> = p.flat().iter().map(|_| r.gen_range(-1.0..1.0)).collect();
    p.set_flat(&flat);
    p
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
