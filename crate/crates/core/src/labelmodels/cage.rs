//! Generative label model over LF firings and continuous scores.
//!
//! For class `y` the joint is
//!
//! ```text
//! P(ℓ, s, y) = (1/Z) ∏_j ψ_j(ℓ_j, y) · φ_j(s_j | y)^[ℓ_j ≠ 0 and j continuous]
//! ψ_j(ℓ, y)  = exp(θ_jy) if ℓ ≠ 0, else 1
//! φ_j(s | y) = Beta(s; c·q_jy, c·(1 − q_jy)),  q_jy = logistic(π_jy)
//! Z          = Σ_y ∏_j (1 + exp(θ_jy))
//! ```
//!
//! Each φ integrates to one over `s`, so `Z` does not depend on `π`.
//!
//! Training maximizes the mean marginal log-likelihood plus a quality-guide
//! term `λ·R(θ)`, where `R(θ) = Σ_j q^g_j log p_j + (1 − q^g_j) log(1 − p_j)`
//! and `p_j = softmax(θ_j·)[k_j]` is the model's belief that a firing of LF
//! `j` is correct.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{argmax_label, divergence, TrainConfig, TrainLog, EXPLOSION_FACTOR};
use crate::error::{self, Error, Result};
use crate::math::{beta_ln_pdf_dq, ln_beta, logistic, logsumexp, softmax_in_place, softplus};
use crate::types::{LabelId, ScoreMatrix, VoteMatrix, ABSTAIN};
use crate::FORMAT_VERSION;

/// Guide used for LFs without a user-supplied or estimated quality.
pub const DEFAULT_GUIDE: f64 = 0.9;
const GUIDE_MIN: f64 = 0.05;
const GUIDE_MAX: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct CageParams {
    pub k: usize,
    /// `m × K` discrete potentials, row-major by LF.
    pub theta: Vec<f64>,
    /// `m × K` continuous-quality logits.
    pub pi: Vec<f64>,
    pub quality_guides: Vec<f64>,
    pub concentration: f64,
    pub score_clamp: f64,
    pub lf_targets: Vec<LabelId>,
    pub lf_is_continuous: Vec<bool>,
}

/// Gradient with the same layout as [`CageParams::theta`] / [`CageParams::pi`].
#[derive(Debug, Clone, PartialEq)]
pub struct CageGrad {
    pub theta: Vec<f64>,
    pub pi: Vec<f64>,
}

impl CageGrad {
    pub fn zeros(len: usize) -> Self {
        CageGrad {
            theta: vec![0.0; len],
            pi: vec![0.0; len],
        }
    }
}

/// Gold-labeled matrices used only for telemetry during training.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub votes: &'a VoteMatrix,
    pub scores: &'a ScoreMatrix,
    pub gold: &'a [LabelId],
}

/// Per-(LF, class) Beta quantities, cached for one parameter setting.
struct BetaTable {
    am1: Vec<f64>,
    bm1: Vec<f64>,
    ln_b: Vec<f64>,
    /// `dq/dπ`, zero where the quality is clamped.
    dq: Vec<f64>,
    q: Vec<f64>,
}

impl CageParams {
    /// Zero-initialized parameters. Guides default to [`DEFAULT_GUIDE`] and
    /// are clamped to `[0.05, 0.95]`.
    pub fn zeros(
        k: usize,
        lf_targets: Vec<LabelId>,
        lf_is_continuous: Vec<bool>,
        guides: Option<&[f64]>,
        concentration: f64,
        score_clamp: f64,
    ) -> Result<Self> {
        let m = lf_targets.len();
        let quality_guides = match guides {
            Some(g) => {
                if g.len() != m {
                    return Err(Error::data(format!("{} guides for {m} LFs", g.len())));
                }
                if let Some(bad) = g.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
                    return Err(Error::config(format!("guide {bad} outside (0,1)")));
                }
                g.iter().map(|q| q.clamp(GUIDE_MIN, GUIDE_MAX)).collect()
            }
            None => vec![DEFAULT_GUIDE; m],
        };
        let p = CageParams {
            k,
            theta: vec![0.0; m * k],
            pi: vec![0.0; m * k],
            quality_guides,
            concentration,
            score_clamp,
            lf_targets,
            lf_is_continuous,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn m(&self) -> usize {
        self.lf_targets.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, k) = (self.m(), self.k);
        let shape = |what: &str, got: usize, want: usize| {
            Error::data(format!("{what}: shape mismatch, {got} entries, expected {want}"))
        };
        if k < 2 {
            return Err(Error::data(format!("K must be at least 2, got {k}")));
        }
        if self.theta.len() != m * k {
            return Err(shape("theta", self.theta.len(), m * k));
        }
        if self.pi.len() != m * k {
            return Err(shape("pi", self.pi.len(), m * k));
        }
        if self.quality_guides.len() != m {
            return Err(shape("quality_guides", self.quality_guides.len(), m));
        }
        if self.lf_is_continuous.len() != m {
            return Err(shape("lf_is_continuous", self.lf_is_continuous.len(), m));
        }
        if let Some(t) = self.lf_targets.iter().find(|t| **t == ABSTAIN || **t as usize > k) {
            return Err(Error::data(format!("lf_targets: label {t} out of range")));
        }
        if self.theta.iter().chain(&self.pi).any(|x| !x.is_finite()) {
            return Err(Error::data("theta/pi: non-finite parameter"));
        }
        if self
            .quality_guides
            .iter()
            .any(|q| !(GUIDE_MIN..=GUIDE_MAX).contains(q))
        {
            return Err(Error::data("quality_guides: outside [0.05, 0.95]"));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::data("concentration must be positive"));
        }
        if !(self.score_clamp > 0.0 && self.score_clamp < 0.5) {
            return Err(Error::data("score_clamp must lie in (0, 0.5)"));
        }
        Ok(())
    }

    /// Fail unless `vm` has the LF layout these parameters were trained on.
    pub fn check_matrix(&self, vm: &VoteMatrix) -> Result<()> {
        if vm.m() != self.m() {
            return Err(Error::data(format!(
                "LF count mismatch: params have {}, matrix has {}",
                self.m(),
                vm.m()
            )));
        }
        if vm.lf_targets() != self.lf_targets.as_slice() {
            return Err(Error::data("LF target mismatch between params and matrix"));
        }
        if vm.lf_is_continuous() != self.lf_is_continuous.as_slice() {
            return Err(Error::data("LF continuity mismatch between params and matrix"));
        }
        Ok(())
    }

    fn check_row(&self, votes: &[LabelId], scores: &[Option<f64>]) -> Result<()> {
        if votes.len() != self.m() || scores.len() != self.m() {
            return Err(Error::data(format!(
                "row has {} votes and {} scores, params expect {} LFs",
                votes.len(),
                scores.len(),
                self.m()
            )));
        }
        Ok(())
    }

    fn beta_table(&self) -> BetaTable {
        let c = self.concentration;
        let eps = self.score_clamp;
        let len = self.theta.len();
        let mut t = BetaTable {
            am1: vec![0.0; len],
            bm1: vec![0.0; len],
            ln_b: vec![0.0; len],
            dq: vec![0.0; len],
            q: vec![0.0; len],
        };
        for j in 0..self.m() {
            if !self.lf_is_continuous[j] {
                continue;
            }
            for y in 0..self.k {
                let idx = j * self.k + y;
                let raw = logistic(self.pi[idx]);
                let q = raw.clamp(eps, 1.0 - eps);
                let (a, b) = (c * q, c * (1.0 - q));
                t.am1[idx] = a - 1.0;
                t.bm1[idx] = b - 1.0;
                t.ln_b[idx] = ln_beta(a, b);
                t.q[idx] = q;
                t.dq[idx] = if raw == q { raw * (1.0 - raw) } else { 0.0 };
            }
        }
        t
    }

    fn clamp_score(&self, s: f64) -> f64 {
        s.clamp(self.score_clamp, 1.0 - self.score_clamp)
    }

    /// Unnormalized log joint `g_y = log ∏_j ψ_j φ_j` for every class.
    fn log_potentials(
        &self,
        table: &BetaTable,
        votes: &[LabelId],
        scores: &[Option<f64>],
        out: &mut [f64],
    ) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for (j, &v) in votes.iter().enumerate() {
            if v == ABSTAIN {
                continue;
            }
            let base = j * self.k;
            for (y, g) in out.iter_mut().enumerate() {
                *g += self.theta[base + y];
            }
            if let (true, Some(s)) = (self.lf_is_continuous[j], scores[j]) {
                let s = self.clamp_score(s);
                let (ls, l1s) = (s.ln(), (1.0 - s).ln());
                for (y, g) in out.iter_mut().enumerate() {
                    let idx = base + y;
                    *g += table.am1[idx] * ls + table.bm1[idx] * l1s - table.ln_b[idx];
                }
            }
        }
    }

    /// `log Z` and the class weights `ρ_y = ∏_j (1 + e^θ_jy) / Z`.
    pub(crate) fn log_partition(&self) -> (f64, Vec<f64>) {
        let mut terms: Vec<f64> = (0..self.k)
            .map(|y| {
                (0..self.m())
                    .map(|j| softplus(self.theta[j * self.k + y]))
                    .sum()
            })
            .collect();
        let log_z = softmax_in_place(&mut terms);
        (log_z, terms)
    }

    /// `log Z = log Σ_y ∏_j (1 + e^θ_jy)`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_partition().0
    }

    /// Posterior over classes for one row.
    pub fn posterior(&self, votes: &[LabelId], scores: &[Option<f64>]) -> Result<Vec<f64>> {
        self.check_row(votes, scores)?;
        let table = self.beta_table();
        let mut g = vec![0.0; self.k];
        self.log_potentials(&table, votes, scores, &mut g);
        softmax_in_place(&mut g);
        Ok(g)
    }

    /// Posterior for every row of a matrix.
    pub fn posterior_matrix(&self, vm: &VoteMatrix, sm: &ScoreMatrix) -> Result<Vec<Vec<f64>>> {
        self.check_matrix(vm)?;
        let table = self.beta_table();
        Ok((0..vm.n())
            .map(|i| {
                let mut g = vec![0.0; self.k];
                self.log_potentials(&table, vm.row(i), sm.row(i), &mut g);
                softmax_in_place(&mut g);
                g
            })
            .collect())
    }

    /// Quality-guide regularizer `R(θ)`.
    pub fn regularizer(&self) -> f64 {
        let mut total = 0.0;
        for j in 0..self.m() {
            let row = &self.theta[j * self.k..(j + 1) * self.k];
            let kt = self.lf_targets[j] as usize - 1;
            let all = logsumexp(row);
            let others: Vec<f64> = row
                .iter()
                .enumerate()
                .filter(|(y, _)| *y != kt)
                .map(|(_, t)| *t)
                .collect();
            let log_p = row[kt] - all;
            let log_not_p = logsumexp(&others) - all;
            let q = self.quality_guides[j];
            total += q * log_p + (1.0 - q) * log_not_p;
        }
        total
    }

    /// Adds `scale · ∂R/∂θ` into `grad`.
    pub(crate) fn add_regularizer_grad(&self, scale: f64, grad: &mut [f64]) {
        for j in 0..self.m() {
            let base = j * self.k;
            let row = &self.theta[base..base + self.k];
            let kt = self.lf_targets[j] as usize - 1;
            let mut p = row.to_vec();
            softmax_in_place(&mut p);
            let mut others: Vec<f64> = row.to_vec();
            others[kt] = f64::NEG_INFINITY;
            softmax_in_place(&mut others);
            let q = self.quality_guides[j];
            for y in 0..self.k {
                let hit = if y == kt { 1.0 } else { 0.0 };
                let d_log_p = hit - p[y];
                let d_log_not_p = others[y] - p[y];
                grad[base + y] += scale * (q * d_log_p + (1.0 - q) * d_log_not_p);
            }
        }
    }

    /// Adds `Σ_y w_y · ∂g_y/∂(θ, π)` for one row into `grad`.
    fn add_potential_grad(
        &self,
        table: &BetaTable,
        votes: &[LabelId],
        scores: &[Option<f64>],
        w: &[f64],
        grad: &mut CageGrad,
    ) {
        let c = self.concentration;
        for (j, &v) in votes.iter().enumerate() {
            if v == ABSTAIN {
                continue;
            }
            let base = j * self.k;
            for (y, wy) in w.iter().enumerate() {
                grad.theta[base + y] += wy;
            }
            if let (true, Some(s)) = (self.lf_is_continuous[j], scores[j]) {
                let s = self.clamp_score(s);
                for (y, wy) in w.iter().enumerate() {
                    let idx = base + y;
                    if table.dq[idx] != 0.0 {
                        grad.pi[idx] += wy * table.dq[idx] * beta_ln_pdf_dq(s, c, table.q[idx]);
                    }
                }
            }
        }
    }

    /// Adds `scale · ∂log Z/∂θ` into `grad`.
    pub(crate) fn add_log_partition_grad(&self, rho: &[f64], scale: f64, grad: &mut [f64]) {
        for j in 0..self.m() {
            for y in 0..self.k {
                let idx = j * self.k + y;
                grad[idx] += scale * rho[y] * logistic(self.theta[idx]);
            }
        }
    }

    /// Training objective: mean over rows of `log Σ_y P(ℓ_i, s_i, y)`, plus
    /// `λ·R(θ)`.
    pub fn objective(&self, vm: &VoteMatrix, sm: &ScoreMatrix, qg_weight: f64) -> f64 {
        let table = self.beta_table();
        let (log_z, _) = self.log_partition();
        let mut g = vec![0.0; self.k];
        let mut ll = 0.0;
        for i in 0..vm.n() {
            self.log_potentials(&table, vm.row(i), sm.row(i), &mut g);
            ll += logsumexp(&g) - log_z;
        }
        let data = if vm.n() == 0 { 0.0 } else { ll / vm.n() as f64 };
        data + qg_weight * self.regularizer()
    }

    /// Analytic gradient of [`CageParams::objective`].
    pub fn gradient(&self, vm: &VoteMatrix, sm: &ScoreMatrix, qg_weight: f64) -> CageGrad {
        let table = self.beta_table();
        let mut grad = CageGrad::zeros(self.theta.len());
        let n = vm.n();
        if n > 0 {
            let inv_n = 1.0 / n as f64;
            let mut g = vec![0.0; self.k];
            for i in 0..n {
                self.log_potentials(&table, vm.row(i), sm.row(i), &mut g);
                softmax_in_place(&mut g);
                g.iter_mut().for_each(|p| *p *= inv_n);
                self.add_potential_grad(&table, vm.row(i), sm.row(i), &g, &mut grad);
            }
            let (_, rho) = self.log_partition();
            self.add_log_partition_grad(&rho, -1.0, &mut grad.theta);
        }
        self.add_regularizer_grad(qg_weight, &mut grad.theta);
        grad
    }

    pub(crate) fn step(&mut self, grad: &CageGrad, lr: f64) {
        for (t, d) in self.theta.iter_mut().zip(&grad.theta) {
            *t += lr * d;
        }
        for (p, d) in self.pi.iter_mut().zip(&grad.pi) {
            *p += lr * d;
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ParamsFile::from_params(self)).expect("params serialize")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ParamsFile = serde_json::from_str(s)
            .map_err(|e| Error::data(format!("corrupt params file: {e}")))?;
        file.into_params()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write_string(path, &self.to_json_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&error::read_to_string(path)?).map_err(|e| e.in_file(path))
    }
}

/// Shared helpers for the JL objective, which reuses the gm pieces.
pub(crate) struct GmRowCache {
    table: BetaTable,
    pub(crate) log_z: f64,
    pub(crate) rho: Vec<f64>,
}

impl CageParams {
    pub(crate) fn row_cache(&self) -> GmRowCache {
        let (log_z, rho) = self.log_partition();
        GmRowCache {
            table: self.beta_table(),
            log_z,
            rho,
        }
    }

    pub(crate) fn cached_log_potentials(
        &self,
        cache: &GmRowCache,
        votes: &[LabelId],
        scores: &[Option<f64>],
        out: &mut [f64],
    ) {
        self.log_potentials(&cache.table, votes, scores, out)
    }

    pub(crate) fn cached_potential_grad(
        &self,
        cache: &GmRowCache,
        votes: &[LabelId],
        scores: &[Option<f64>],
        w: &[f64],
        grad: &mut CageGrad,
    ) {
        self.add_potential_grad(&cache.table, votes, scores, w, grad)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ParamsFile {
    version: u32,
    model: String,
    #[serde(rename = "K")]
    k: usize,
    m: usize,
    lf_targets: Vec<LabelId>,
    lf_is_continuous: Vec<bool>,
    theta: Vec<Vec<f64>>,
    pi: Vec<Vec<f64>>,
    quality_guides: Vec<f64>,
    concentration: f64,
    score_clamp: f64,
}

fn unflatten(v: &[f64], k: usize) -> Vec<Vec<f64>> {
    v.chunks(k).map(<[f64]>::to_vec).collect()
}

fn flatten_rows(field: &str, rows: Vec<Vec<f64>>, m: usize, k: usize) -> Result<Vec<f64>> {
    if rows.len() != m || rows.iter().any(|r| r.len() != k) {
        return Err(Error::data(format!(
            "{field}: shape mismatch, expected {m} rows of {k}"
        )));
    }
    Ok(rows.into_iter().flatten().collect())
}

impl ParamsFile {
    pub(crate) fn from_params(p: &CageParams) -> Self {
        ParamsFile {
            version: FORMAT_VERSION,
            model: "cage".into(),
            k: p.k,
            m: p.m(),
            lf_targets: p.lf_targets.clone(),
            lf_is_continuous: p.lf_is_continuous.clone(),
            theta: unflatten(&p.theta, p.k),
            pi: unflatten(&p.pi, p.k),
            quality_guides: p.quality_guides.clone(),
            concentration: p.concentration,
            score_clamp: p.score_clamp,
        }
    }

    pub(crate) fn into_params(self) -> Result<CageParams> {
        if self.version != FORMAT_VERSION {
            return Err(Error::data(format!(
                "version: unsupported params version {}",
                self.version
            )));
        }
        if self.model != "cage" {
            return Err(Error::data(format!(
                "model: expected \"cage\", found {:?}",
                self.model
            )));
        }
        if self.lf_targets.len() != self.m {
            return Err(Error::data(format!(
                "lf_targets: shape mismatch, {} entries for m = {}",
                self.lf_targets.len(),
                self.m
            )));
        }
        let (m, k) = (self.m, self.k);
        if k < 2 {
            return Err(Error::data(format!("K: must be at least 2, got {k}")));
        }
        let p = CageParams {
            k,
            theta: flatten_rows("theta", self.theta, m, k)?,
            pi: flatten_rows("pi", self.pi, m, k)?,
            quality_guides: self.quality_guides,
            concentration: self.concentration,
            score_clamp: self.score_clamp,
            lf_targets: self.lf_targets,
            lf_is_continuous: self.lf_is_continuous,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Quality guides from gold: each LF's accuracy on the gold-bearing rows
/// where it fires, clamped to `[0.05, 0.95]`. LFs that never fire there get
/// [`DEFAULT_GUIDE`].
pub fn estimate_guides(vm: &VoteMatrix, gold: &[Option<LabelId>]) -> Result<Vec<f64>> {
    if gold.len() != vm.n() {
        return Err(Error::data(format!(
            "gold has {} entries for {} instances",
            gold.len(),
            vm.n()
        )));
    }
    Ok((0..vm.m())
        .map(|j| {
            let mut fired = 0usize;
            let mut right = 0usize;
            for (i, g) in gold.iter().enumerate() {
                let v = vm.get(i, j);
                if let (true, Some(g)) = (v != ABSTAIN, g) {
                    fired += 1;
                    right += usize::from(v == *g);
                }
            }
            if fired == 0 {
                DEFAULT_GUIDE
            } else {
                (right as f64 / fired as f64).clamp(GUIDE_MIN, GUIDE_MAX)
            }
        })
        .collect())
}

/// Fit the label model by full-batch gradient ascent from zero.
///
/// `eval` is only scored, never used in gradients.
pub fn cage_fit(
    vm: &VoteMatrix,
    sm: &ScoreMatrix,
    k: usize,
    guides: Option<&[f64]>,
    cfg: &TrainConfig,
    eval: Option<EvalSet<'_>>,
) -> Result<(CageParams, TrainLog)> {
    cfg.validate()?;
    if sm.n() != vm.n() || sm.m() != vm.m() {
        return Err(Error::data(format!(
            "score matrix {}x{} does not match vote matrix {}x{}",
            sm.n(),
            sm.m(),
            vm.n(),
            vm.m()
        )));
    }
    if vm.max_target() as usize > k {
        return Err(Error::data("LF target outside label space"));
    }
    if let Some(e) = eval {
        if e.gold.len() != e.votes.n() {
            return Err(Error::data("eval set gold length differs from its matrix"));
        }
    }
    let mut params = CageParams::zeros(
        k,
        vm.lf_targets().to_vec(),
        vm.lf_is_continuous().to_vec(),
        guides,
        cfg.concentration,
        cfg.score_clamp,
    )?;
    if let Some(e) = eval {
        params.check_matrix(e.votes)?;
    }
    let mut log = TrainLog::default();
    let initial = params.objective(vm, sm, cfg.qg_weight);
    if !initial.is_finite() {
        return Err(divergence());
    }
    let floor = initial - EXPLOSION_FACTOR * initial.abs().max(1.0);
    log.objective.push(initial);
    let record_eval = |p: &CageParams, log: &mut TrainLog| -> Result<()> {
        if let Some(e) = eval {
            let pred = cage_predict(p, e.votes, e.scores)?;
            log.eval_accuracy.push(super::accuracy(&pred, e.gold));
        }
        Ok(())
    };
    record_eval(&params, &mut log)?;
    for _ in 0..cfg.epochs {
        let grad = params.gradient(vm, sm, cfg.qg_weight);
        params.step(&grad, cfg.learning_rate);
        let obj = params.objective(vm, sm, cfg.qg_weight);
        if !obj.is_finite()
            || obj < floor
            || params.theta.iter().chain(&params.pi).any(|x| !x.is_finite())
        {
            return Err(divergence());
        }
        log.objective.push(obj);
        record_eval(&params, &mut log)?;
    }
    Ok((params, log))
}

/// `P(y | ℓ, s)` for one row.
pub fn cage_posterior(
    params: &CageParams,
    votes: &[LabelId],
    scores: &[Option<f64>],
) -> Result<Vec<f64>> {
    params.posterior(votes, scores)
}

/// Posterior argmax per row, smallest id on ties.
pub fn cage_predict(params: &CageParams, vm: &VoteMatrix, sm: &ScoreMatrix) -> Result<Vec<LabelId>> {
    Ok(params
        .posterior_matrix(vm, sm)?
        .iter()
        .map(|p| argmax_label(p))
        .collect())
}
