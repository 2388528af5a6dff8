//! Labeling functions: preprocessors, continuous scorers, declarative rules
//! and the [`LabelingFunction`] trait for rules written in code.
//!
//! Every LF is single-polarity: it either emits its target label or abstains.
//! Regex rules use the syntax of the `regex` crate (Perl-like, no
//! backreferences or lookaround) and are matched anywhere in the preprocessed
//! payload.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::types::{Instance, LabelId, LabelSpace, ABSTAIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocessor {
    Lowercase,
    /// Drops every character that is neither alphanumeric nor whitespace.
    StripPunct,
    /// Collapses runs of whitespace into single spaces and trims the ends.
    TokenizeWhitespace,
}

impl Preprocessor {
    pub fn apply(self, text: &str) -> String {
        match self {
            Preprocessor::Lowercase => text.to_lowercase(),
            Preprocessor::StripPunct => text
                .chars()
                .filter(|c| c.is_alphanumeric() || c.is_whitespace())
                .collect(),
            Preprocessor::TokenizeWhitespace => {
                text.split_whitespace().collect::<Vec<_>>().join(" ")
            }
        }
    }
}

/// Chain applied to rule payloads when a rule does not declare its own.
pub const DEFAULT_CHAIN: [Preprocessor; 2] = [Preprocessor::Lowercase, Preprocessor::StripPunct];

/// Apply a preprocessor chain left to right.
pub fn preprocess(chain: &[Preprocessor], payload: &str) -> String {
    chain
        .iter()
        .fold(payload.to_string(), |text, p| p.apply(&text))
}

/// Distinct whitespace-separated tokens.
pub fn tokens(text: &str) -> BTreeSet<&str> {
    text.split_whitespace().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ContinuousScorer {
    /// `|T ∩ W| / (√|T| · √|W|)` over distinct payload tokens `T` and the
    /// keyword set `W`; 0 when either is empty.
    TfCosine { keywords: BTreeSet<String> },
    /// `clamp(weights · x + bias, 0, 1)`.
    FeatureDot {
        weights: Vec<f64>,
        #[serde(default)]
        bias: f64,
    },
}

impl ContinuousScorer {
    pub fn tf_cosine<S: Into<String>>(keywords: impl IntoIterator<Item = S>) -> Self {
        ContinuousScorer::TfCosine {
            keywords: keywords.into_iter().map(Into::into).collect(),
        }
    }

    /// Score an instance on its raw payload.
    pub fn score(&self, instance: &Instance) -> Result<f64> {
        self.score_text(&instance.text, instance.features.as_deref())
    }

    /// Score already-preprocessed text.
    pub fn score_text(&self, text: &str, features: Option<&[f64]>) -> Result<f64> {
        match self {
            ContinuousScorer::TfCosine { keywords } => {
                let toks = tokens(text);
                if toks.is_empty() || keywords.is_empty() {
                    return Ok(0.0);
                }
                let shared = toks.iter().filter(|t| keywords.contains(**t)).count();
                let s = shared as f64 / ((toks.len() as f64).sqrt() * (keywords.len() as f64).sqrt());
                Ok(s.min(1.0))
            }
            ContinuousScorer::FeatureDot { weights, bias } => {
                let x = features.ok_or_else(|| Error::data("scorer requires features"))?;
                if x.len() != weights.len() {
                    return Err(Error::data(format!(
                        "feature_dot: {} weights for {} features",
                        weights.len(),
                        x.len()
                    )));
                }
                let dot: f64 = weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias;
                if dot.is_nan() {
                    return Err(Error::data("feature_dot: score is NaN"));
                }
                Ok(dot.clamp(0.0, 1.0))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleKind {
    Keyword {
        any_of: BTreeSet<String>,
    },
    Regex {
        pattern: String,
    },
    FeatureThreshold {
        index: usize,
        op: Comparison,
        value: f64,
    },
    Continuous {
        scorer: ContinuousScorer,
        threshold: f64,
    },
}

fn default_chain() -> Vec<Preprocessor> {
    DEFAULT_CHAIN.to_vec()
}

/// Declarative labeling function as it appears in a rule file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub name: String,
    pub target: LabelId,
    pub kind: RuleKind,
    #[serde(default = "default_chain")]
    pub preprocessors: Vec<Preprocessor>,
}

impl RuleSpec {
    pub fn keyword<S: Into<String>>(
        name: impl Into<String>,
        target: LabelId,
        any_of: impl IntoIterator<Item = S>,
    ) -> Self {
        RuleSpec {
            name: name.into(),
            target,
            kind: RuleKind::Keyword {
                any_of: any_of.into_iter().map(Into::into).collect(),
            },
            preprocessors: default_chain(),
        }
    }

    pub fn continuous(
        name: impl Into<String>,
        target: LabelId,
        scorer: ContinuousScorer,
        threshold: f64,
    ) -> Self {
        RuleSpec {
            name: name.into(),
            target,
            kind: RuleKind::Continuous { scorer, threshold },
            preprocessors: default_chain(),
        }
    }

    pub fn with_preprocessors(mut self, chain: Vec<Preprocessor>) -> Self {
        self.preprocessors = chain;
        self
    }

    /// Validate against a label space and compile regexes.
    pub fn compile(&self, space: &LabelSpace) -> Result<Rule> {
        let ctx = |msg: String| Error::config(format!("rule {:?}: {msg}", self.name));
        if self.name.trim().is_empty() {
            return Err(Error::config("rule with empty name"));
        }
        if !space.contains(self.target) {
            return Err(ctx(format!("target {} not in label space", self.target)));
        }
        let mut keywords = HashSet::new();
        let mut regex = None;
        match &self.kind {
            RuleKind::Keyword { any_of } => {
                if any_of.is_empty() {
                    return Err(ctx("keyword set is empty".into()));
                }
                for kw in any_of {
                    let norm = preprocess(&self.preprocessors, kw);
                    let norm = norm.trim();
                    if norm.is_empty() || norm.contains(char::is_whitespace) {
                        return Err(ctx(format!(
                            "keyword {kw:?} is not a single token after preprocessing"
                        )));
                    }
                    keywords.insert(norm.to_string());
                }
            }
            RuleKind::Regex { pattern } => {
                let re = regex::RegexBuilder::new(pattern)
                    .size_limit(1 << 20)
                    .build()
                    .map_err(|e| ctx(format!("malformed regex: {e}")))?;
                regex = Some(re);
            }
            RuleKind::FeatureThreshold { value, .. } => {
                if !value.is_finite() {
                    return Err(ctx("threshold value must be finite".into()));
                }
            }
            RuleKind::Continuous { scorer, threshold } => {
                if !(0.0..=1.0).contains(threshold) {
                    return Err(ctx(format!("threshold {threshold} outside [0,1]")));
                }
                match scorer {
                    ContinuousScorer::FeatureDot { weights, bias } => {
                        if weights.is_empty() || weights.iter().chain([bias]).any(|w| !w.is_finite())
                        {
                            return Err(ctx("feature_dot weights must be finite and non-empty".into()));
                        }
                    }
                    ContinuousScorer::TfCosine { keywords } => {
                        if keywords.iter().any(|k| k.contains(char::is_whitespace) || k.is_empty()) {
                            return Err(ctx("tf_cosine keywords must be single tokens".into()));
                        }
                    }
                }
            }
        }
        Ok(Rule {
            spec: self.clone(),
            keywords,
            regex,
        })
    }
}

/// Output of one LF on one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    /// Target label, or [`ABSTAIN`].
    pub label: LabelId,
    /// Continuous score, recorded whether or not the LF fired.
    pub score: Option<f64>,
}

impl Vote {
    pub const ABSTAIN: Vote = Vote {
        label: ABSTAIN,
        score: None,
    };

    pub fn fired(&self) -> bool {
        self.label != ABSTAIN
    }
}

/// Anything that can act as a labeling function.
pub trait LabelingFunction: Send + Sync {
    fn name(&self) -> &str;
    fn target(&self) -> LabelId;
    fn is_continuous(&self) -> bool {
        false
    }
    /// Must return either `target()` or abstain.
    fn evaluate(&self, text: &str, features: Option<&[f64]>) -> Result<Vote>;
}

/// A validated [`RuleSpec`] ready for evaluation.
#[derive(Debug, Clone)]
pub struct Rule {
    spec: RuleSpec,
    keywords: HashSet<String>,
    regex: Option<Regex>,
}

impl Rule {
    pub fn spec(&self) -> &RuleSpec {
        &self.spec
    }

    pub fn evaluate_instance(&self, instance: &Instance) -> Result<Vote> {
        self.evaluate(&instance.text, instance.features.as_deref())
    }
}

impl LabelingFunction for Rule {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn target(&self) -> LabelId {
        self.spec.target
    }

    fn is_continuous(&self) -> bool {
        matches!(self.spec.kind, RuleKind::Continuous { .. })
    }

    fn evaluate(&self, text: &str, features: Option<&[f64]>) -> Result<Vote> {
        let target = self.spec.target;
        let text = preprocess(&self.spec.preprocessors, text);
        let decide = |fire: bool| Vote {
            label: if fire { target } else { ABSTAIN },
            score: None,
        };
        Ok(match &self.spec.kind {
            RuleKind::Keyword { .. } => {
                decide(text.split_whitespace().any(|t| self.keywords.contains(t)))
            }
            RuleKind::Regex { .. } => {
                decide(self.regex.as_ref().expect("compiled").is_match(&text))
            }
            RuleKind::FeatureThreshold { index, op, value } => {
                let x = features.ok_or_else(|| {
                    Error::data(format!("rule {:?} requires features", self.spec.name))
                })?;
                let v = *x.get(*index).ok_or_else(|| {
                    Error::data(format!(
                        "rule {:?}: feature index {index} out of range for dimension {}",
                        self.spec.name,
                        x.len()
                    ))
                })?;
                decide(match op {
                    Comparison::Ge => v >= *value,
                    Comparison::Le => v <= *value,
                })
            }
            RuleKind::Continuous { scorer, threshold } => {
                let s = scorer.score_text(&text, features)?;
                Vote {
                    label: if s >= *threshold { target } else { ABSTAIN },
                    score: Some(s),
                }
            }
        })
    }
}

/// Evaluate a rule spec directly. Prefer compiling once with
/// [`RuleSpec::compile`] when evaluating many instances.
pub fn evaluate_rule(rule: &RuleSpec, space: &LabelSpace, instance: &Instance) -> Result<Vote> {
    rule.compile(space)?.evaluate_instance(instance)
}

/// Labeling function backed by a closure returning "fire or not".
pub struct FnRule<F> {
    name: String,
    target: LabelId,
    f: F,
}

impl<F> FnRule<F>
where
    F: Fn(&str, Option<&[f64]>) -> bool + Send + Sync,
{
    pub fn new(name: impl Into<String>, target: LabelId, f: F) -> Self {
        FnRule {
            name: name.into(),
            target,
            f,
        }
    }
}

impl<F> LabelingFunction for FnRule<F>
where
    F: Fn(&str, Option<&[f64]>) -> bool + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn target(&self) -> LabelId {
        self.target
    }

    fn evaluate(&self, text: &str, features: Option<&[f64]>) -> Result<Vote> {
        Ok(if (self.f)(text, features) {
            Vote {
                label: self.target,
                score: None,
            }
        } else {
            Vote::ABSTAIN
        })
    }
}

/// Rule file: a label space plus the rules over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleFile {
    pub label_space: serde_json::Value,
    pub rules: Vec<RuleSpec>,
}

/// A parsed and compiled rule file.
#[derive(Debug, Clone)]
pub struct RuleSet {
    pub space: LabelSpace,
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn compile(space: LabelSpace, specs: &[RuleSpec]) -> Result<Self> {
        let mut names = HashSet::new();
        let mut rules = Vec::with_capacity(specs.len());
        for spec in specs {
            if !names.insert(spec.name.as_str()) {
                return Err(Error::config(format!("rules: duplicate name {:?}", spec.name)));
            }
            rules.push(spec.compile(&space)?);
        }
        Ok(RuleSet { space, rules })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: RuleFile =
            serde_json::from_str(s).map_err(|e| Error::config(format!("rules file: {e}")))?;
        let space = LabelSpace::from_json_value(file.label_space)?;
        Self::compile(space, &file.rules)
    }

    pub fn to_json_string(&self) -> String {
        let file = RuleFile {
            label_space: self.space.to_json_value(),
            rules: self.rules.iter().map(|r| r.spec.clone()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("rule file serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&error::read_to_string(path)?).map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write_string(path, &self.to_json_string())
    }
}
