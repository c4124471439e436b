//! Preference losses over per-action log-probabilities.
//!
//! All losses share the shape `softplus(-z)` where `z` is a reward margin.
//! Rewards are computed from per-action log-probabilities supplied by the
//! caller; [`ToyPolicy`] provides a small differentiable stand-in for a
//! model so gradients can be checked and a loss minimized end to end.

mod grad;
mod toy;

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::script::{common_prefix_len, PlanScript};

pub use grad::{
    fd_logprob_gradient, logprob_grad_check, loss_and_grad, margin_coefficients, LogProbGrad,
    LossVariant, MarginCoefficients,
};
pub use toy::{
    fd_gradient, grad_check, naive_fd_gradient, policy_loss_and_grad, random_problem, train,
    PreferenceExample, ToyPolicy, TrainReport, FD_STEP,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignError {
    #[error("empty action sequence")]
    EmptySequence,
    #[error("reference log-probabilities are required for this loss")]
    MissingReference,
    #[error("{which}: expected {expected} log-probabilities, got {got}")]
    LengthMismatch {
        which: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("log-probability {value} at position {index} is not a finite value <= 0")]
    InvalidLogProb { index: usize, value: f64 },
    #[error("stored k={stored} disagrees with the common prefix length {computed}")]
    PrefixMismatch { stored: usize, computed: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{0} is not covered by the policy")]
    UnknownAction(String),
    #[error("batch line {line}: {message}")]
    Batch { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LogProbSource {
    Theta,
    Ref,
}

/// `per_action[i] = log π(a_i | x, a_<i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceLogProbs {
    pub per_action: Vec<f64>,
    pub source: LogProbSource,
}

impl SequenceLogProbs {
    pub fn new(per_action: Vec<f64>, source: LogProbSource) -> Result<Self, AlignError> {
        if let Some((index, &value)) = per_action
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v <= 0.0))
        {
            return Err(AlignError::InvalidLogProb { index, value });
        }
        Ok(Self { per_action, source })
    }

    pub fn theta(per_action: Vec<f64>) -> Result<Self, AlignError> {
        Self::new(per_action, LogProbSource::Theta)
    }

    pub fn reference(per_action: Vec<f64>) -> Result<Self, AlignError> {
        Self::new(per_action, LogProbSource::Ref)
    }

    pub fn len(&self) -> usize {
        self.per_action.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_action.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.per_action.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub beta: f64,
    /// Weight on the shared prefix, in [0, 1].
    pub mu: f64,
    /// Target reward margin.
    pub gamma: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self::from_ratio(2.0, 0.75, 0.5)
    }
}

impl AlignConfig {
    /// Builds a config with `gamma = beta * gamma_beta_ratio`.
    pub fn from_ratio(beta: f64, mu: f64, gamma_beta_ratio: f64) -> Self {
        Self {
            beta,
            mu,
            gamma: beta * gamma_beta_ratio,
        }
    }

    pub fn validate(&self) -> Result<(), AlignError> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(AlignError::InvalidConfig(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(AlignError::InvalidConfig(format!(
                "mu must be in [0, 1], got {}",
                self.mu
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(AlignError::InvalidConfig(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// A preferred (`y_w`) and a dispreferred (`y_l`) plan for one prompt, with
/// the log-probabilities of both under the trained policy and optionally a
/// frozen reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSample {
    pub prompt_id: String,
    pub y_w: PlanScript,
    pub y_l: PlanScript,
    /// Length of the shared prefix.
    pub k: usize,
    pub lp_w: SequenceLogProbs,
    pub lp_l: SequenceLogProbs,
    pub ref_lp_w: Option<SequenceLogProbs>,
    pub ref_lp_l: Option<SequenceLogProbs>,
}

impl PreferenceSample {
    /// Checks lengths and derives `k` from the plans.
    pub fn new(
        prompt_id: impl Into<String>,
        y_w: PlanScript,
        y_l: PlanScript,
        lp_w: SequenceLogProbs,
        lp_l: SequenceLogProbs,
        refs: Option<(SequenceLogProbs, SequenceLogProbs)>,
    ) -> Result<Self, AlignError> {
        let check = |which, lp: &SequenceLogProbs, plan: &PlanScript| {
            if lp.len() == plan.len() {
                Ok(())
            } else {
                Err(AlignError::LengthMismatch {
                    which,
                    expected: plan.len(),
                    got: lp.len(),
                })
            }
        };
        check("lp_w", &lp_w, &y_w)?;
        check("lp_l", &lp_l, &y_l)?;
        if let Some((rw, rl)) = &refs {
            check("ref_lp_w", rw, &y_w)?;
            check("ref_lp_l", rl, &y_l)?;
        }
        let k = common_prefix_len(&y_w, &y_l);
        let (ref_lp_w, ref_lp_l) = refs.map_or((None, None), |(a, b)| (Some(a), Some(b)));
        Ok(Self {
            prompt_id: prompt_id.into(),
            y_w,
            y_l,
            k,
            lp_w,
            lp_l,
            ref_lp_w,
            ref_lp_l,
        })
    }

    fn refs(&self) -> Result<(&SequenceLogProbs, &SequenceLogProbs), AlignError> {
        match (&self.ref_lp_w, &self.ref_lp_l) {
            (Some(w), Some(l)) => Ok((w, l)),
            _ => Err(AlignError::MissingReference),
        }
    }
}

/// `-log σ(-x)`, i.e. `log(1 + e^x)`, without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic function, stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Prefix-weighted sum `mu * sum(lp[..k]) + sum(lp[k..])`.
fn weighted_sum(lp: &[f64], k: usize, mu: f64) -> f64 {
    let k = k.min(lp.len());
    mu * lp[..k].iter().sum::<f64>() + lp[k..].iter().sum::<f64>()
}

/// r = (β/|y|)·(μ·Σ_{i≤k} lp_i + Σ_{i>k} lp_i).
pub fn reward_safe_align(
    lp: &SequenceLogProbs,
    k: usize,
    cfg: &AlignConfig,
) -> Result<f64, AlignError> {
    if lp.is_empty() {
        return Err(AlignError::EmptySequence);
    }
    Ok(cfg.beta / lp.len() as f64 * weighted_sum(&lp.per_action, k, cfg.mu))
}

/// softplus(-(r_w - r_l - γ)).
pub fn loss_safe_align(s: &PreferenceSample, cfg: &AlignConfig) -> Result<f64, AlignError> {
    Ok(softplus(-margin(LossVariant::SafeAlign, s, cfg)?))
}

/// Length-normalized margin loss without prefix weighting.
pub fn loss_simpo(s: &PreferenceSample, cfg: &AlignConfig) -> Result<f64, AlignError> {
    Ok(softplus(-margin(LossVariant::Simpo, s, cfg)?))
}

/// Sequence-level log-ratio loss against the reference policy.
pub fn loss_dpo(s: &PreferenceSample, beta: f64) -> Result<f64, AlignError> {
    let cfg = AlignConfig {
        beta,
        mu: 1.0,
        gamma: 0.0,
    };
    Ok(softplus(-margin(LossVariant::Dpo, s, &cfg)?))
}

/// The reference-based loss with the first `k` terms of every log-sum
/// weighted by `mu`.
pub fn loss_safe_align_dpo(s: &PreferenceSample, beta: f64, mu: f64) -> Result<f64, AlignError> {
    let cfg = AlignConfig {
        beta,
        mu,
        gamma: 0.0,
    };
    Ok(softplus(-margin(LossVariant::SafeAlignDpo, s, &cfg)?))
}

/// The pre-sigmoid margin `z` of a loss.
///
/// Summed exactly, so terms that cancel algebraically (a shared prefix with
/// equal weights on both sides) cancel bit for bit.
pub fn margin(
    variant: LossVariant,
    s: &PreferenceSample,
    cfg: &AlignConfig,
) -> Result<f64, AlignError> {
    let c = margin_coefficients(variant, s.lp_w.len(), s.lp_l.len(), s.k, cfg)?;
    let mut terms: Vec<f64> = Vec::with_capacity(2 * (s.lp_w.len() + s.lp_l.len()) + 1);
    terms.extend(c.w.iter().zip(&s.lp_w.per_action).map(|(a, b)| a * b));
    terms.extend(c.l.iter().zip(&s.lp_l.per_action).map(|(a, b)| a * b));
    if variant.needs_reference() {
        let (rw, rl) = s.refs()?;
        terms.extend(c.ref_w.iter().zip(&rw.per_action).map(|(a, b)| a * b));
        terms.extend(c.ref_l.iter().zip(&rl.per_action).map(|(a, b)| a * b));
    }
    terms.push(c.constant);
    Ok(exact_sum(&terms))
}

/// Correctly rounded sum of `xs` (Shewchuk's partials).
pub fn exact_sum(xs: &[f64]) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for &x in xs {
        let mut x = x;
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    // fold from the top, rounding once
    let mut hi = 0.0;
    while let Some(x) = partials.pop() {
        let prev = hi;
        hi = prev + x;
        let lo = x - (hi - prev);
        if lo != 0.0 {
            // half-way cases are rounded the same way as in Python's fsum
            if let Some(&next) = partials.last() {
                if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
                    let y = lo * 2.0;
                    let x2 = hi + y;
                    if y == x2 - hi {
                        hi = x2;
                    }
                }
            }
            break;
        }
    }
    hi
}

impl LossVariant {
    pub fn loss(self, s: &PreferenceSample, cfg: &AlignConfig) -> Result<f64, AlignError> {
        match self {
            LossVariant::SafeAlign => loss_safe_align(s, cfg),
            LossVariant::Simpo => loss_simpo(s, cfg),
            LossVariant::Dpo => loss_dpo(s, cfg.beta),
            LossVariant::SafeAlignDpo => loss_safe_align_dpo(s, cfg.beta, cfg.mu),
        }
    }
}

/// Arithmetic mean of per-sample losses.
pub fn batch_loss(
    variant: LossVariant,
    batch: &[PreferenceSample],
    cfg: &AlignConfig,
) -> Result<f64, AlignError> {
    if batch.is_empty() {
        return Err(AlignError::EmptySequence);
    }
    let losses = batch
        .iter()
        .map(|s| variant.loss(s, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchRecord {
    prompt_id: String,
    y_w: PlanScript,
    y_l: PlanScript,
    lp_w: Vec<f64>,
    lp_l: Vec<f64>,
    #[serde(default)]
    ref_lp_w: Option<Vec<f64>>,
    #[serde(default)]
    ref_lp_l: Option<Vec<f64>>,
    #[serde(default)]
    k: Option<usize>,
}

/// Reads a preference batch (JSONL). Blank lines and header lines (objects
/// with a `_header` key) are skipped; `k` is recomputed and checked against
/// any stored value.
pub fn read_batch(reader: impl BufRead) -> Result<Vec<PreferenceSample>, AlignError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| AlignError::Batch {
            line: line_no,
            message,
        };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() || crate::io::is_header_line(&line) {
            continue;
        }
        let rec: BatchRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let refs = match (rec.ref_lp_w, rec.ref_lp_l) {
            (Some(w), Some(l)) => Some((
                SequenceLogProbs::reference(w)?,
                SequenceLogProbs::reference(l)?,
            )),
            (None, None) => None,
            _ => return Err(err("ref_lp_w and ref_lp_l must be given together".into())),
        };
        let s = PreferenceSample::new(
            rec.prompt_id,
            rec.y_w,
            rec.y_l,
            SequenceLogProbs::theta(rec.lp_w)?,
            SequenceLogProbs::theta(rec.lp_l)?,
            refs,
        )
        .map_err(|e| err(e.to_string()))?;
        if let Some(stored) = rec.k {
            if stored != s.k {
                return Err(err(AlignError::PrefixMismatch {
                    stored,
                    computed: s.k,
                }
                .to_string()));
            }
        }
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::parse_script;

    fn plan(n: usize, prefix: &str, tail: &str) -> PlanScript {
        let mut lines: Vec<String> = (0..n).map(|i| format!("[{prefix}] <o{i}>")).collect();
        if !tail.is_empty() {
            lines.push(format!("[{tail}] <x>"));
        }
        parse_script(&lines.join("\n")).unwrap()
    }

    fn worked() -> PreferenceSample {
        PreferenceSample::new(
            "p",
            plan(1, "FIND", "WIPE"),
            plan(1, "FIND", "POUR"),
            SequenceLogProbs::theta(vec![-1.0, -0.5]).unwrap(),
            SequenceLogProbs::theta(vec![-1.0, -2.0]).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn defaults() {
        let c = AlignConfig::default();
        assert_eq!((c.beta, c.mu, c.gamma), (2.0, 0.75, 1.0));
    }

    #[test]
    fn worked_example() {
        let s = worked();
        assert_eq!(s.k, 1);
        let cfg = AlignConfig::default();
        assert!((reward_safe_align(&s.lp_w, 1, &cfg).unwrap() + 1.25).abs() < 1e-15);
        assert!((reward_safe_align(&s.lp_l, 1, &cfg).unwrap() + 2.75).abs() < 1e-15);
        let expected = (1.0 + (-0.5f64).exp()).ln();
        assert!((loss_safe_align(&s, &cfg).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.474077).abs() < 1e-6);
    }

    #[test]
    fn equal_sequences_cost_softplus_gamma() {
        let mut s = worked();
        s.lp_l = s.lp_w.clone();
        s.y_l = s.y_w.clone();
        s.k = 2;
        let l = loss_safe_align(&s, &AlignConfig::default()).unwrap();
        assert!((l - 1.313261687518223).abs() < 1e-12);
    }

    #[test]
    fn simpo_scalar_case() {
        let s = PreferenceSample::new(
            "p",
            plan(2, "A", ""),
            plan(2, "B", ""),
            SequenceLogProbs::theta(vec![-1.0, -1.0]).unwrap(),
            SequenceLogProbs::theta(vec![-2.0, -2.0]).unwrap(),
            None,
        )
        .unwrap();
        let l = loss_simpo(&s, &AlignConfig::default()).unwrap();
        assert!((l - 0.31326168751822286).abs() < 1e-12);
    }

    #[test]
    fn dpo_needs_reference() {
        assert_eq!(loss_dpo(&worked(), 2.0), Err(AlignError::MissingReference));
    }

    #[test]
    fn dpo_scalar_cases() {
        let mut s = worked();
        s.ref_lp_w = Some(s.lp_w.clone());
        s.ref_lp_l = Some(s.lp_l.clone());
        assert!((loss_dpo(&s, 3.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        s.ref_lp_w = Some(SequenceLogProbs::reference(vec![-1.5, -1.0]).unwrap());
        assert!((loss_dpo(&s, 1.0).unwrap() - 0.31326168751822286).abs() < 1e-12);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let s = PreferenceSample::new(
            "p",
            PlanScript::default(),
            plan(1, "A", ""),
            SequenceLogProbs::theta(vec![]).unwrap(),
            SequenceLogProbs::theta(vec![-1.0]).unwrap(),
            None,
        )
        .unwrap();
        assert_eq!(
            loss_safe_align(&s, &AlignConfig::default()),
            Err(AlignError::EmptySequence)
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(SequenceLogProbs::theta(vec![0.1]).is_err());
        assert!(SequenceLogProbs::theta(vec![f64::NAN]).is_err());
        let err = PreferenceSample::new(
            "p",
            plan(2, "A", ""),
            plan(1, "A", ""),
            SequenceLogProbs::theta(vec![-1.0]).unwrap(),
            SequenceLogProbs::theta(vec![-1.0]).unwrap(),
            None,
        );
        assert!(matches!(
            err,
            Err(AlignError::LengthMismatch { which: "lp_w", .. })
        ));
        assert!(AlignConfig {
            beta: 0.0,
            mu: 0.5,
            gamma: 1.0
        }
        .validate()
        .is_err());
        assert!(AlignConfig {
            beta: 1.0,
            mu: 1.5,
            gamma: 1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn exact_sum_cancels() {
        assert_eq!(exact_sum(&[1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum(&[0.1, 0.2, -0.3]), 2.7755575615628914e-17);
        assert_eq!(exact_sum(&[]), 0.0);
        let xs: Vec<f64> = (1..1000).map(|i| 1.0 / i as f64).collect();
        let neg: Vec<f64> = xs.iter().rev().map(|x| -x).collect();
        assert_eq!(exact_sum(&[xs, neg].concat()), 0.0);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        assert!((sigmoid(-800.0)).abs() < 1e-300 && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn batch_reads_and_checks_k() {
        let text = "{\"_header\":{}}\n{\"prompt_id\":\"a\",\"y_w\":[\"[FIND] <o0>\",\"[WIPE] <x>\"],\"y_l\":\"[FIND] <o0>\\n[POUR] <x>\",\"lp_w\":[-1,-0.5],\"lp_l\":[-1,-2],\"k\":1}\n";
        let batch = read_batch(text.as_bytes()).unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch[0].k, 1);
        let bad = text.replace("\"k\":1", "\"k\":0");
        assert!(matches!(
            read_batch(bad.as_bytes()),
            Err(AlignError::Batch { line: 2, .. })
        ));
    }
}
