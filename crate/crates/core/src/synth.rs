//! Seeded SMS-style spam/ham generator with planted LF accuracies.
//!
//! Each LF fires on instances of its target class with probability
//! `fire_rate` and on the other class with the rate that makes its precision
//! equal the planted accuracy under the class prior. Firing is realized by
//! inserting trigger words into otherwise neutral text. Features are
//! Gaussian around a class-dependent mean.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfkit::{ContinuousScorer, RuleSet, RuleSpec};
use crate::types::{DataSplit, Instance, LabelId, LabelSpace, Role, ABSTAIN};

pub const SPAM: LabelId = 1;
pub const HAM: LabelId = 2;

/// Planted precision of each LF, in rule order.
pub const PLANTED_ACCURACIES: [f64; 6] = [0.85, 0.80, 0.75, 0.75, 0.70, 0.65];

const TF_THRESHOLD: f64 = 0.2;

const FILLER: [&str; 20] = [
    "hey", "the", "you", "call", "me", "today", "now", "see", "later", "ok", "text", "please",
    "tomorrow", "going", "home", "phone", "message", "reply", "time", "good",
];

struct Planted {
    name: &'static str,
    target: LabelId,
    words: &'static [&'static str],
    continuous: bool,
}

const LFS: [Planted; 6] = [
    Planted { name: "free_prize", target: SPAM, words: &["free", "prize"], continuous: false },
    Planted { name: "meeting", target: HAM, words: &["meeting", "lunch"], continuous: false },
    Planted { name: "win_cash", target: SPAM, words: &["win", "cash", "claim", "urgent"], continuous: true },
    Planted { name: "polite", target: HAM, words: &["thanks", "sorry"], continuous: false },
    Planted { name: "offer", target: SPAM, words: &["offer", "discount"], continuous: false },
    Planted { name: "family", target: HAM, words: &["love", "dinner", "mum", "weekend"], continuous: true },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_l: usize,
    pub n_u: usize,
    pub n_v: usize,
    pub n_t: usize,
    pub d: usize,
    /// Probability that an instance is spam.
    pub spam_rate: f64,
    /// Firing probability of an LF on its own class.
    pub fire_rate: f64,
    /// Per-dimension distance of the class means from the origin.
    pub separation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_l: 100,
            n_u: 2000,
            n_v: 200,
            n_t: 1000,
            d: 8,
            spam_rate: 0.5,
            fire_rate: 0.5,
            separation: 0.35,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0 < self.spam_rate && self.spam_rate < 1.0) {
            return Err(Error::config("spam_rate must lie in (0, 1)"));
        }
        if !(0.0 < self.fire_rate && self.fire_rate <= 1.0) {
            return Err(Error::config("fire_rate must lie in (0, 1]"));
        }
        if self.d == 0 {
            return Err(Error::config("d must be at least 1"));
        }
        if !self.separation.is_finite() {
            return Err(Error::config("separation must be finite"));
        }
        if self.n_l == 0 || self.n_u == 0 || self.n_t == 0 {
            return Err(Error::config("L, U and T must be non-empty"));
        }
        Ok(())
    }

    /// Off-class firing probability that yields precision `acc`.
    fn off_rate(&self, target: LabelId, acc: f64) -> f64 {
        let prior = if target == SPAM { self.spam_rate } else { 1.0 - self.spam_rate };
        (self.fire_rate * prior * (1.0 - acc) / (acc * (1.0 - prior))).min(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub space: LabelSpace,
    pub rules: RuleSet,
    pub l: DataSplit,
    pub u: DataSplit,
    pub v: DataSplit,
    pub t: DataSplit,
}

pub fn label_space() -> LabelSpace {
    LabelSpace::from_names(["spam", "ham"]).expect("static label space")
}

pub fn rule_specs() -> Vec<RuleSpec> {
    LFS.iter()
        .map(|lf| {
            if lf.continuous {
                RuleSpec::continuous(
                    lf.name,
                    lf.target,
                    ContinuousScorer::tf_cosine(lf.words.iter().copied()),
                    TF_THRESHOLD,
                )
            } else {
                RuleSpec::keyword(lf.name, lf.target, lf.words.iter().copied())
            }
        })
        .collect()
}

/// Votes the generator intends for one instance, with its text.
fn instance_text(cfg: &SynthConfig, y: LabelId, rng: &mut ChaCha8Rng) -> (String, Vec<LabelId>) {
    let mut words: Vec<&str> = (0..rng.gen_range(3..=6))
        .map(|_| *FILLER.choose(rng).expect("non-empty"))
        .collect();
    let mut planted = Vec::with_capacity(LFS.len());
    for (lf, &acc) in LFS.iter().zip(&PLANTED_ACCURACIES) {
        let p = if y == lf.target { cfg.fire_rate } else { cfg.off_rate(lf.target, acc) };
        if rng.gen_bool(p) {
            let count = if lf.continuous { rng.gen_range(2..=lf.words.len()) } else { 1 };
            words.extend(lf.words.choose_multiple(rng, count));
            planted.push(lf.target);
        } else {
            planted.push(ABSTAIN);
        }
    }
    words.shuffle(rng);
    let mut text = words.join(" ");
    if y == SPAM && rng.gen_bool(0.3) {
        text = text.to_uppercase() + "!!";
    }
    (text, planted)
}

fn split(cfg: &SynthConfig, role: Role, n: usize, rng: &mut ChaCha8Rng, keep_gold: bool) -> (DataSplit, Vec<Vec<LabelId>>) {
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let prefix = role.to_string().to_lowercase();
    let mut instances = Vec::with_capacity(n);
    let mut planted = Vec::with_capacity(n);
    for i in 0..n {
        let y = if rng.gen_bool(cfg.spam_rate) { SPAM } else { HAM };
        let (text, votes) = instance_text(cfg, y, rng);
        let shift = if y == SPAM { cfg.separation } else { -cfg.separation };
        let features = (0..cfg.d).map(|_| shift + noise.sample(rng)).collect();
        let mut inst = Instance::new(format!("{prefix}{i:05}"), text).with_features(features);
        if keep_gold {
            inst = inst.with_label(y);
        }
        instances.push(inst);
        planted.push(votes);
    }
    (DataSplit::new(role, instances), planted)
}

/// Generated data plus, per split in L/U/V/T order, the intended votes.
pub fn generate_with_plan(cfg: &SynthConfig) -> Result<(SynthData, [Vec<Vec<LabelId>>; 4])> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let space = label_space();
    let rules = RuleSet::compile(space.clone(), &rule_specs())?;
    let (l, pl) = split(cfg, Role::L, cfg.n_l, &mut rng, true);
    let (u, pu) = split(cfg, Role::U, cfg.n_u, &mut rng, false);
    let (v, pv) = split(cfg, Role::V, cfg.n_v, &mut rng, true);
    let (t, pt) = split(cfg, Role::T, cfg.n_t, &mut rng, true);
    Ok((SynthData { space, rules, l, u, v, t }, [pl, pu, pv, pt]))
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    Ok(generate_with_plan(cfg)?.0)
}

impl SynthData {
    /// Write `label_space.json`, `rules.json` and `{l,u,v,t}.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.space.save(&dir.join("label_space.json"))?;
        self.rules.save(&dir.join("rules.json"))?;
        for s in [&self.l, &self.u, &self.v, &self.t] {
            s.save(&dir.join(format!("{}.jsonl", s.role.to_string().to_lowercase())))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::applier::apply;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig { n_u: 50, n_t: 20, ..Default::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.u.to_jsonl_string(), b.u.to_jsonl_string());
        let c = generate(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.u.to_jsonl_string(), c.u.to_jsonl_string());
        assert!(a.u.instances.iter().all(|i| i.label.is_none()));
        assert!(a.t.instances.iter().all(|i| i.label.is_some()));
    }

    #[test]
    fn rules_reproduce_planted_votes() {
        let (data, plan) = generate_with_plan(&SynthConfig::default()).unwrap();
        for (s, p) in [&data.l, &data.u, &data.v, &data.t].into_iter().zip(&plan) {
            let (vm, _) = apply(&data.rules.rules, s, &data.space).unwrap();
            for (i, row) in p.iter().enumerate() {
                assert_eq!(vm.row(i), row.as_slice(), "{} row {i}: {}", s.role, s.instances[i].text);
            }
        }
    }

    #[test]
    fn off_rate_hits_planted_precision() {
        let cfg = SynthConfig::default();
        for (lf, &acc) in LFS.iter().zip(&PLANTED_ACCURACIES) {
            let off = cfg.off_rate(lf.target, acc);
            let precision = cfg.fire_rate * 0.5 / (cfg.fire_rate * 0.5 + off * 0.5);
            assert!((precision - acc).abs() < 1e-12);
        }
    }
}
