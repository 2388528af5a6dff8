//! Semi-supervised joint learning of a feature model (fm) and the graphical
//! label model (gm).
//!
//! The minimized objective is
//!
//! ```text
//!   w_fm_sup   · mean_L CE(fm(x_i), y_i)
//! + w_gm_sup   · mean_L −log P_gm(ℓ_i, s_i, y_i)
//! + w_gm_unsup · mean_U −log Σ_y P_gm(ℓ_i, s_i, y)
//! + w_agree    · mean_U KL(gm posterior_i ‖ fm(x_i))
//! − λ · R(θ)
//! ```
//!
//! Setting every gm weight to zero and reading the fm head gives plain
//! supervised training on L ([`JlConfig::only_l`]).

mod fm;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use fm::{Arch, FeatureModel};

use crate::error::{self, Error, Result};
use crate::labelmodels::{
    accuracy, argmax_label, divergence, estimate_guides, macro_f1, CageGrad, CageParams,
    TrainLog, EXPLOSION_FACTOR,
};
use crate::math::logsumexp;
use crate::types::{LabelId, ScoreMatrix, VoteMatrix};
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JlWeights {
    pub fm_sup: f64,
    pub gm_sup: f64,
    pub gm_unsup: f64,
    pub agree: f64,
    /// λ on the quality-guide regularizer.
    pub qg: f64,
}

impl Default for JlWeights {
    fn default() -> Self {
        JlWeights {
            fm_sup: 1.0,
            gm_sup: 1.0,
            gm_unsup: 1.0,
            agree: 1.0,
            qg: 1.0,
        }
    }
}

impl JlWeights {
    fn validate(&self) -> Result<()> {
        let all = [self.fm_sup, self.gm_sup, self.gm_unsup, self.agree, self.qg];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("jl weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Which distribution plays the target in the agreement term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(gm ‖ fm)`: gm posteriors act as soft targets for fm.
    #[default]
    GmFm,
    /// `KL(fm ‖ gm)`.
    FmGm,
}

/// Which model produces the final probabilities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Fm,
    Gm,
    #[default]
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JlConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub arch: Arch,
    pub weights: JlWeights,
    pub kl_direction: KlDirection,
    pub head: Head,
    pub concentration: f64,
    pub score_clamp: f64,
}

impl Default for JlConfig {
    fn default() -> Self {
        JlConfig {
            epochs: 100,
            learning_rate: 0.01,
            seed: 0,
            arch: Arch::Linear,
            weights: JlWeights::default(),
            kl_direction: KlDirection::GmFm,
            head: Head::Mean,
            concentration: 10.0,
            score_clamp: 1e-3,
        }
    }
}

impl JlConfig {
    /// Supervised feature model on L only.
    pub fn only_l(arch: Arch) -> Self {
        JlConfig {
            arch,
            weights: JlWeights {
                fm_sup: 1.0,
                gm_sup: 0.0,
                gm_unsup: 0.0,
                agree: 0.0,
                qg: 0.0,
            },
            head: Head::Fm,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and non-negative"));
        }
        if matches!(self.arch, Arch::Mlp { hidden: 0 }) {
            return Err(Error::config("mlp hidden width must be positive"));
        }
        if !(self.score_clamp > 0.0 && self.score_clamp < 0.5) {
            return Err(Error::config("score_clamp must lie in (0, 0.5)"));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::config("concentration must be positive"));
        }
        self.weights.validate()
    }
}

/// Features and LF outputs for one split, row-aligned.
#[derive(Debug, Clone, Copy)]
pub struct SplitView<'a> {
    /// Row-major `n × d`.
    pub features: &'a [f64],
    pub d: usize,
    pub votes: &'a VoteMatrix,
    pub scores: &'a ScoreMatrix,
    /// Required for L, V and T; ignored for U.
    pub gold: Option<&'a [LabelId]>,
}

impl<'a> SplitView<'a> {
    pub fn n(&self) -> usize {
        self.votes.n()
    }

    fn x(&self, i: usize) -> &'a [f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    fn check(&self, what: &str, d: usize, needs_gold: bool) -> Result<()> {
        let n = self.n();
        if self.d != d || self.features.len() != n * d {
            return Err(Error::data(format!(
                "{what}: expected {n}x{d} features, got {} values of dimension {}",
                self.features.len(),
                self.d
            )));
        }
        if self.scores.n() != n || self.scores.m() != self.votes.m() {
            return Err(Error::data(format!("{what}: score matrix shape differs from votes")));
        }
        match self.gold {
            Some(g) if g.len() != n => Err(Error::data(format!(
                "{what}: {} gold labels for {n} rows",
                g.len()
            ))),
            None if needs_gold => Err(Error::data(format!("{what}: gold labels required"))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JlParams {
    pub fm: FeatureModel,
    pub gm: CageParams,
    pub weights: JlWeights,
    pub head: Head,
}

/// Gradient buffers shaped like [`JlParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct JlGrad {
    pub fm: FeatureModel,
    pub gm: CageGrad,
}

impl JlGrad {
    /// fm parameters then θ then π, matching [`JlParams::flat`].
    pub fn flat(&self) -> Vec<f64> {
        self.fm
            .params()
            .chain(&self.gm.theta)
            .chain(&self.gm.pi)
            .copied()
            .collect()
    }
}

impl JlParams {
    /// fm parameters then θ then π.
    pub fn flat(&self) -> Vec<f64> {
        self.fm
            .params()
            .chain(&self.gm.theta)
            .chain(&self.gm.pi)
            .copied()
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let slots = self
            .fm
            .params_mut()
            .chain(self.gm.theta.iter_mut())
            .chain(self.gm.pi.iter_mut());
        for (slot, v) in slots.zip(values) {
            *slot = *v;
        }
    }

    pub fn predict_fm_proba(&self, features: &[f64], d: usize) -> Result<Vec<Vec<f64>>> {
        predict_fm_proba(&self.fm, features, d)
    }

    pub fn predict_gm_proba(&self, vm: &VoteMatrix, sm: &ScoreMatrix) -> Result<Vec<Vec<f64>>> {
        predict_gm_proba(&self.gm, vm, sm)
    }

    /// Probabilities from the chosen head. The gm inputs may be omitted for
    /// the fm head.
    pub fn predict_proba(
        &self,
        head: Head,
        features: &[f64],
        d: usize,
        lf: Option<(&VoteMatrix, &ScoreMatrix)>,
    ) -> Result<Vec<Vec<f64>>> {
        let need_lf = || Error::data("gm head requires LF outputs");
        match head {
            Head::Fm => self.predict_fm_proba(features, d),
            Head::Gm => {
                let (vm, sm) = lf.ok_or_else(need_lf)?;
                self.predict_gm_proba(vm, sm)
            }
            Head::Mean => {
                let (vm, sm) = lf.ok_or_else(need_lf)?;
                let f = self.predict_fm_proba(features, d)?;
                let g = self.predict_gm_proba(vm, sm)?;
                if f.len() != g.len() {
                    return Err(Error::data(format!(
                        "{} feature rows vs {} LF rows",
                        f.len(),
                        g.len()
                    )));
                }
                Ok(f.iter()
                    .zip(&g)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect())
                    .collect())
            }
        }
    }

    fn view_proba(&self, head: Head, v: &SplitView<'_>) -> Result<Vec<Vec<f64>>> {
        self.predict_proba(head, v.features, v.d, Some((v.votes, v.scores)))
    }

    pub fn to_json_string(&self) -> String {
        let file = JlFile {
            version: FORMAT_VERSION,
            model: "jl".into(),
            fm: fm::FmFile::from_model(&self.fm),
            gm: serde_json::from_str(&self.gm.to_json_string()).expect("gm serializes"),
            weights: self.weights,
            head: self.head,
        };
        serde_json::to_string_pretty(&file).expect("jl params serialize")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: JlFile = serde_json::from_str(s)
            .map_err(|e| Error::data(format!("corrupt params file: {e}")))?;
        if file.version != FORMAT_VERSION {
            return Err(Error::data(format!(
                "version: unsupported params version {}",
                file.version
            )));
        }
        if file.model != "jl" {
            return Err(Error::data(format!(
                "model: expected \"jl\", found {:?}",
                file.model
            )));
        }
        let fm = file.fm.into_model()?;
        let gm = CageParams::from_json_str(&file.gm.to_string())?;
        if fm.k != gm.k {
            return Err(Error::data(format!(
                "fm has K = {}, gm has K = {}",
                fm.k, gm.k
            )));
        }
        file.weights
            .validate()
            .map_err(|e| Error::data(e.to_string()))?;
        Ok(JlParams {
            fm,
            gm,
            weights: file.weights,
            head: file.head,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write_string(path, &self.to_json_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&error::read_to_string(path)?).map_err(|e| e.in_file(path))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JlFile {
    version: u32,
    model: String,
    fm: fm::FmFile,
    gm: serde_json::Value,
    weights: JlWeights,
    head: Head,
}

/// Row-wise fm probabilities over a row-major `n × d` feature block.
pub fn predict_fm_proba(fm: &FeatureModel, features: &[f64], d: usize) -> Result<Vec<Vec<f64>>> {
    if d != fm.d {
        return Err(Error::data(format!(
            "dimension mismatch: fm expects {} features, got {d}",
            fm.d
        )));
    }
    if d == 0 {
        return Err(Error::data("dimension mismatch: zero-width features"));
    }
    if !features.len().is_multiple_of(d) {
        return Err(Error::data("feature block is not a whole number of rows"));
    }
    features.chunks(d).map(|x| fm.proba(x)).collect()
}

/// Row-wise gm posteriors; identical to the label model's posterior.
pub fn predict_gm_proba(gm: &CageParams, vm: &VoteMatrix, sm: &ScoreMatrix) -> Result<Vec<Vec<f64>>> {
    gm.posterior_matrix(vm, sm)
}

pub fn predict_fm(fm: &FeatureModel, features: &[f64], d: usize) -> Result<Vec<LabelId>> {
    Ok(labels(&predict_fm_proba(fm, features, d)?))
}

pub fn predict_gm(gm: &CageParams, vm: &VoteMatrix, sm: &ScoreMatrix) -> Result<Vec<LabelId>> {
    Ok(labels(&predict_gm_proba(gm, vm, sm)?))
}

/// Argmax per row with the smallest-id tie rule.
pub fn labels(proba: &[Vec<f64>]) -> Vec<LabelId> {
    proba.iter().map(|p| argmax_label(p)).collect()
}

/// Value of the joint objective (to be minimized).
pub fn jl_objective(
    params: &JlParams,
    l: &SplitView<'_>,
    u: &SplitView<'_>,
    kl: KlDirection,
) -> f64 {
    evaluate(params, l, u, kl, false).0
}

/// Analytic gradient of [`jl_objective`].
pub fn jl_gradient(
    params: &JlParams,
    l: &SplitView<'_>,
    u: &SplitView<'_>,
    kl: KlDirection,
) -> JlGrad {
    evaluate(params, l, u, kl, true)
        .1
        .expect("gradient requested")
}

fn evaluate(
    params: &JlParams,
    l: &SplitView<'_>,
    u: &SplitView<'_>,
    kl: KlDirection,
    want_grad: bool,
) -> (f64, Option<JlGrad>) {
    let w = params.weights;
    let (fm, gm) = (&params.fm, &params.gm);
    let k = gm.k;
    let cache = gm.row_cache();
    let mut grad = want_grad.then(|| JlGrad {
        fm: fm.zeros_like(),
        gm: CageGrad::zeros(gm.theta.len()),
    });
    let mut obj = 0.0;
    let mut logits = vec![0.0; k];
    let mut g = vec![0.0; k];
    let mut dvec = vec![0.0; k];

    let n_l = l.n();
    if n_l > 0 && (w.fm_sup > 0.0 || w.gm_sup > 0.0) {
        let scale = 1.0 / n_l as f64;
        let gold = l.gold.expect("L split carries gold");
        for i in 0..n_l {
            let y = gold[i] as usize - 1;
            if w.fm_sup > 0.0 {
                let x = l.x(i);
                let trace = fm.forward(x, &mut logits);
                let lse = logsumexp(&logits);
                obj += w.fm_sup * scale * (lse - logits[y]);
                if let Some(gr) = grad.as_mut() {
                    for (c, dv) in dvec.iter_mut().enumerate() {
                        let p = (logits[c] - lse).exp();
                        let hit = if c == y { 1.0 } else { 0.0 };
                        *dv = w.fm_sup * scale * (p - hit);
                    }
                    fm.backward(x, &trace, &dvec, &mut gr.fm);
                }
            }
            if w.gm_sup > 0.0 {
                let (votes, scores) = (l.votes.row(i), l.scores.row(i));
                gm.cached_log_potentials(&cache, votes, scores, &mut g);
                obj += w.gm_sup * scale * (cache.log_z - g[y]);
                if let Some(gr) = grad.as_mut() {
                    dvec.iter_mut().for_each(|d| *d = 0.0);
                    dvec[y] = -w.gm_sup * scale;
                    gm.cached_potential_grad(&cache, votes, scores, &dvec, &mut gr.gm);
                }
            }
        }
        if let (Some(gr), true) = (grad.as_mut(), w.gm_sup > 0.0) {
            gm.add_log_partition_grad(&cache.rho, w.gm_sup, &mut gr.gm.theta);
        }
    }

    let n_u = u.n();
    if n_u > 0 && (w.gm_unsup > 0.0 || w.agree > 0.0) {
        let scale = 1.0 / n_u as f64;
        let mut log_q = vec![0.0; k];
        for i in 0..n_u {
            let (votes, scores) = (u.votes.row(i), u.scores.row(i));
            gm.cached_log_potentials(&cache, votes, scores, &mut g);
            let lse_g = logsumexp(&g);
            if w.gm_unsup > 0.0 {
                obj += w.gm_unsup * scale * (cache.log_z - lse_g);
                if let Some(gr) = grad.as_mut() {
                    for (d, gy) in dvec.iter_mut().zip(&g) {
                        *d = -w.gm_unsup * scale * (gy - lse_g).exp();
                    }
                    gm.cached_potential_grad(&cache, votes, scores, &dvec, &mut gr.gm);
                }
            }
            if w.agree > 0.0 {
                let x = u.x(i);
                let trace = fm.forward(x, &mut logits);
                let lse_f = logsumexp(&logits);
                for (lq, z) in log_q.iter_mut().zip(&logits) {
                    *lq = z - lse_f;
                }
                let log_p: Vec<f64> = g.iter().map(|gy| gy - lse_g).collect();
                let p: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
                let q: Vec<f64> = log_q.iter().map(|v| v.exp()).collect();
                let (src, log_src, log_dst, dst) = match kl {
                    KlDirection::GmFm => (&p, &log_p, &log_q, &q),
                    KlDirection::FmGm => (&q, &log_q, &log_p, &p),
                };
                // KL(src ‖ dst)
                let a: Vec<f64> = log_src.iter().zip(log_dst.iter()).map(|(s, d)| s - d).collect();
                let kl_val: f64 = src.iter().zip(&a).map(|(s, ai)| s * ai).sum();
                obj += w.agree * scale * kl_val;
                if let Some(gr) = grad.as_mut() {
                    // d/d(src logits) = src ⊙ (a − KL); d/d(dst logits) = dst − src
                    let d_src: Vec<f64> = src
                        .iter()
                        .zip(&a)
                        .map(|(s, ai)| w.agree * scale * s * (ai - kl_val))
                        .collect();
                    let d_dst: Vec<f64> = dst
                        .iter()
                        .zip(src.iter())
                        .map(|(d, s)| w.agree * scale * (d - s))
                        .collect();
                    let (d_gm, d_fm) = match kl {
                        KlDirection::GmFm => (d_src, d_dst),
                        KlDirection::FmGm => (d_dst, d_src),
                    };
                    fm.backward(x, &trace, &d_fm, &mut gr.fm);
                    gm.cached_potential_grad(&cache, votes, scores, &d_gm, &mut gr.gm);
                }
            }
        }
        if let (Some(gr), true) = (grad.as_mut(), w.gm_unsup > 0.0) {
            gm.add_log_partition_grad(&cache.rho, w.gm_unsup, &mut gr.gm.theta);
        }
    }

    if w.qg > 0.0 {
        obj -= w.qg * gm.regularizer();
        if let Some(gr) = grad.as_mut() {
            gm.add_regularizer_grad(-w.qg, &mut gr.gm.theta);
        }
    }
    (obj, grad)
}

/// Result of a joint-learning run.
#[derive(Debug, Clone)]
pub struct JlFit {
    pub params: JlParams,
    /// Probabilities over U from the configured head.
    pub proba: Vec<Vec<f64>>,
    pub log: TrainLog,
}

/// Train on L and U by full-batch gradient descent and return probabilities
/// for U. When `val` is given, V macro-F1 is tracked per epoch and the best
/// epoch's parameters are returned (earlier epoch on ties). `test` is scored
/// for telemetry only.
pub fn fit_and_predict_proba(
    l: &SplitView<'_>,
    u: &SplitView<'_>,
    val: Option<&SplitView<'_>>,
    test: Option<&SplitView<'_>>,
    k: usize,
    cfg: &JlConfig,
) -> Result<JlFit> {
    cfg.validate()?;
    let d = l.d;
    if d == 0 {
        return Err(Error::data("L: features required"));
    }
    l.check("L", d, true)?;
    u.check("U", d, false)?;
    if let Some(v) = val {
        v.check("V", d, true)?;
    }
    if let Some(t) = test {
        t.check("T", d, true)?;
    }
    let gold_l = l.gold.expect("checked");
    if gold_l.iter().any(|g| *g == 0 || *g as usize > k) {
        return Err(Error::data("L: gold label out of range"));
    }
    if u.votes.lf_targets() != l.votes.lf_targets()
        || u.votes.lf_is_continuous() != l.votes.lf_is_continuous()
    {
        return Err(Error::data("L and U vote matrices come from different LF sets"));
    }
    let l_gold_opt: Vec<Option<LabelId>> = gold_l.iter().map(|g| Some(*g)).collect();
    let guides = estimate_guides(l.votes, &l_gold_opt)?;
    let gm = CageParams::zeros(
        k,
        u.votes.lf_targets().to_vec(),
        u.votes.lf_is_continuous().to_vec(),
        Some(&guides),
        cfg.concentration,
        cfg.score_clamp,
    )?;
    let mut params = JlParams {
        fm: FeatureModel::init(cfg.arch, d, k, cfg.seed),
        gm,
        weights: cfg.weights,
        head: cfg.head,
    };

    let mut log = TrainLog::default();
    let initial = jl_objective(&params, l, u, cfg.kl_direction);
    if !initial.is_finite() {
        return Err(divergence());
    }
    let ceiling = initial + EXPLOSION_FACTOR * initial.abs().max(1.0);
    log.objective.push(initial);

    let score = |p: &JlParams, v: &SplitView<'_>| -> Result<Vec<LabelId>> {
        Ok(labels(&p.view_proba(cfg.head, v)?))
    };
    let telemetry = |p: &JlParams, log: &mut TrainLog| -> Result<Option<f64>> {
        if let Some(t) = test {
            log.eval_accuracy
                .push(accuracy(&score(p, t)?, t.gold.expect("checked")));
        }
        if let Some(v) = val {
            let f1 = macro_f1(&score(p, v)?, v.gold.expect("checked"), k);
            log.val_macro_f1.push(f1);
            return Ok(Some(f1));
        }
        Ok(None)
    };
    telemetry(&params, &mut log)?;

    let mut best: Option<(f64, usize, JlParams)> = None;
    for epoch in 1..=cfg.epochs {
        let grad = jl_gradient(&params, l, u, cfg.kl_direction);
        let lr = cfg.learning_rate;
        for (p, g) in params.fm.params_mut().zip(grad.fm.params()) {
            *p -= lr * g;
        }
        for (p, g) in params.gm.theta.iter_mut().zip(&grad.gm.theta) {
            *p -= lr * g;
        }
        for (p, g) in params.gm.pi.iter_mut().zip(&grad.gm.pi) {
            *p -= lr * g;
        }
        let obj = jl_objective(&params, l, u, cfg.kl_direction);
        if !obj.is_finite() || obj > ceiling || params.flat().iter().any(|x| !x.is_finite()) {
            return Err(divergence());
        }
        log.objective.push(obj);
        if let Some(f1) = telemetry(&params, &mut log)? {
            if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
                best = Some((f1, epoch, params.clone()));
            }
        }
    }
    if let Some((_, epoch, p)) = best {
        log.selected_epoch = Some(epoch);
        params = p;
    }
    let proba = params.view_proba(cfg.head, u)?;
    Ok(JlFit { params, proba, log })
}

/// As [`fit_and_predict_proba`], returning argmax labels over U.
pub fn fit_and_predict(
    l: &SplitView<'_>,
    u: &SplitView<'_>,
    val: Option<&SplitView<'_>>,
    test: Option<&SplitView<'_>>,
    k: usize,
    cfg: &JlConfig,
) -> Result<(JlParams, Vec<LabelId>, TrainLog)> {
    let fit = fit_and_predict_proba(l, u, val, test, k, cfg)?;
    Ok((fit.params, labels(&fit.proba), fit.log))
}
