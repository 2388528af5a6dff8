//! Feature model: softmax regression or a one-hidden-layer ReLU network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::softmax_in_place;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum Arch {
    #[default]
    Linear,
    Mlp { hidden: usize },
}


/// Parameters are stored flat:
///
/// * linear: `w1` is `K × d`, `b1` is `K`, `w2`/`b2` empty;
/// * mlp: `w1` is `d × h`, `b1` is `h`, `w2` is `h × K`, `b2` is `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    pub arch: Arch,
    pub d: usize,
    pub k: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Hidden activations kept from the forward pass for backprop.
pub(crate) struct Trace {
    hidden: Vec<f64>,
}

impl FeatureModel {
    /// Zero weights for linear; mlp input weights drawn from U(−0.1, 0.1).
    pub fn init(arch: Arch, d: usize, k: usize, seed: u64) -> Self {
        match arch {
            Arch::Linear => FeatureModel {
                arch,
                d,
                k,
                w1: vec![0.0; k * d],
                b1: vec![0.0; k],
                w2: Vec::new(),
                b2: Vec::new(),
            },
            Arch::Mlp { hidden } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                FeatureModel {
                    arch,
                    d,
                    k,
                    w1: (0..d * hidden).map(|_| rng.gen_range(-0.1..0.1)).collect(),
                    b1: vec![0.0; hidden],
                    w2: vec![0.0; hidden * k],
                    b2: vec![0.0; k],
                }
            }
        }
    }

    pub fn hidden(&self) -> usize {
        match self.arch {
            Arch::Linear => 0,
            Arch::Mlp { hidden } => hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d, k, h) = (self.d, self.k, self.hidden());
        let want = match self.arch {
            Arch::Linear => [k * d, k, 0, 0],
            Arch::Mlp { .. } => [d * h, h, h * k, k],
        };
        let got = [self.w1.len(), self.b1.len(), self.w2.len(), self.b2.len()];
        if want != got {
            return Err(Error::data(format!(
                "fm: shape mismatch, parameter sizes {got:?}, expected {want:?}"
            )));
        }
        if k < 2 {
            return Err(Error::data("fm: K must be at least 2"));
        }
        if matches!(self.arch, Arch::Mlp { hidden: 0 }) {
            return Err(Error::data("fm: hidden width must be positive"));
        }
        if self.params().any(|x| !x.is_finite()) {
            return Err(Error::data("fm: non-finite weight"));
        }
        Ok(())
    }

    pub(crate) fn params(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2)
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    /// Same-shaped model with every parameter zero, used as a gradient buffer.
    pub(crate) fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.params_mut().for_each(|p| *p = 0.0);
        z
    }

    pub(crate) fn forward(&self, x: &[f64], logits: &mut [f64]) -> Trace {
        match self.arch {
            Arch::Linear => {
                for (c, out) in logits.iter_mut().enumerate() {
                    let row = &self.w1[c * self.d..(c + 1) * self.d];
                    *out = self.b1[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                }
                Trace { hidden: Vec::new() }
            }
            Arch::Mlp { hidden: h } => {
                let mut hid = self.b1.clone();
                for (i, xi) in x.iter().enumerate() {
                    let row = &self.w1[i * h..(i + 1) * h];
                    for (a, w) in hid.iter_mut().zip(row) {
                        *a += xi * w;
                    }
                }
                hid.iter_mut().for_each(|a| *a = a.max(0.0));
                logits.copy_from_slice(&self.b2);
                for (u, a) in hid.iter().enumerate() {
                    let row = &self.w2[u * self.k..(u + 1) * self.k];
                    for (out, w) in logits.iter_mut().zip(row) {
                        *out += a * w;
                    }
                }
                Trace { hidden: hid }
            }
        }
    }

    /// Accumulate parameter gradients given `∂loss/∂logits`.
    pub(crate) fn backward(&self, x: &[f64], trace: &Trace, dlogits: &[f64], grad: &mut FeatureModel) {
        match self.arch {
            Arch::Linear => {
                for (c, g) in dlogits.iter().enumerate() {
                    grad.b1[c] += g;
                    let row = &mut grad.w1[c * self.d..(c + 1) * self.d];
                    for (w, v) in row.iter_mut().zip(x) {
                        *w += g * v;
                    }
                }
            }
            Arch::Mlp { hidden: h } => {
                for (c, g) in grad.b2.iter_mut().zip(dlogits) {
                    *c += g;
                }
                let mut dhid = vec![0.0; h];
                for (u, a) in trace.hidden.iter().enumerate() {
                    let row = &self.w2[u * self.k..(u + 1) * self.k];
                    let grow = &mut grad.w2[u * self.k..(u + 1) * self.k];
                    let mut acc = 0.0;
                    for ((gw, w), g) in grow.iter_mut().zip(row).zip(dlogits) {
                        *gw += a * g;
                        acc += w * g;
                    }
                    dhid[u] = if *a > 0.0 { acc } else { 0.0 };
                }
                for (b, g) in grad.b1.iter_mut().zip(&dhid) {
                    *b += g;
                }
                for (i, xi) in x.iter().enumerate() {
                    let grow = &mut grad.w1[i * h..(i + 1) * h];
                    for (gw, g) in grow.iter_mut().zip(&dhid) {
                        *gw += xi * g;
                    }
                }
            }
        }
    }

    /// Class probabilities for one feature vector.
    pub fn proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::data(format!(
                "fm expects {} features, got {}",
                self.d,
                x.len()
            )));
        }
        let mut logits = vec![0.0; self.k];
        self.forward(x, &mut logits);
        softmax_in_place(&mut logits);
        Ok(logits)
    }
}

/// Serialized form; weights as nested rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case", deny_unknown_fields)]
pub(crate) enum FmFile {
    Linear {
        d: usize,
        #[serde(rename = "K")]
        k: usize,
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    Mlp {
        d: usize,
        #[serde(rename = "K")]
        k: usize,
        hidden: usize,
        w1: Vec<Vec<f64>>,
        b1: Vec<f64>,
        w2: Vec<Vec<f64>>,
        b2: Vec<f64>,
    },
}

fn rows(v: &[f64], width: usize) -> Vec<Vec<f64>> {
    if width == 0 {
        return Vec::new();
    }
    v.chunks(width).map(<[f64]>::to_vec).collect()
}

fn flat(field: &str, r: Vec<Vec<f64>>, n_rows: usize, width: usize) -> Result<Vec<f64>> {
    if r.len() != n_rows || r.iter().any(|row| row.len() != width) {
        return Err(Error::data(format!(
            "fm.{field}: shape mismatch, expected {n_rows} rows of {width}"
        )));
    }
    Ok(r.into_iter().flatten().collect())
}

impl FmFile {
    pub(crate) fn from_model(fm: &FeatureModel) -> Self {
        match fm.arch {
            Arch::Linear => FmFile::Linear {
                d: fm.d,
                k: fm.k,
                weights: rows(&fm.w1, fm.d),
                bias: fm.b1.clone(),
            },
            Arch::Mlp { hidden } => FmFile::Mlp {
                d: fm.d,
                k: fm.k,
                hidden,
                w1: rows(&fm.w1, hidden),
                b1: fm.b1.clone(),
                w2: rows(&fm.w2, fm.k),
                b2: fm.b2.clone(),
            },
        }
    }

    pub(crate) fn into_model(self) -> Result<FeatureModel> {
        let fm = match self {
            FmFile::Linear {
                d,
                k,
                weights,
                bias,
            } => FeatureModel {
                arch: Arch::Linear,
                d,
                k,
                w1: flat("weights", weights, k, d)?,
                b1: bias,
                w2: Vec::new(),
                b2: Vec::new(),
            },
            FmFile::Mlp {
                d,
                k,
                hidden,
                w1,
                b1,
                w2,
                b2,
            } => FeatureModel {
                arch: Arch::Mlp { hidden },
                d,
                k,
                w1: flat("w1", w1, d, hidden)?,
                b1,
                w2: flat("w2", w2, hidden, k)?,
                b2,
            },
        };
        fm.validate()?;
        Ok(fm)
    }
}
