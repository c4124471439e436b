use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    loss_and_grad, AlignConfig, AlignError, LossVariant, PreferenceSample, SequenceLogProbs,
};
use crate::script::{AtomicAction, PlanScript};

/// Step for central finite differences.
pub const FD_STEP: f64 = 1e-5;

/// A prompt with a preferred and a dispreferred plan, before scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub prompt_id: String,
    pub y_w: PlanScript,
    pub y_l: PlanScript,
}

/// Tabular softmax policy: one row of logits per context, where a context is
/// the prompt id plus the actions taken so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    vocab: BTreeMap<AtomicAction, usize>,
    contexts: BTreeMap<u64, usize>,
    logits: Vec<f64>,
}

fn context_key(prompt_id: &str, prefix: &[AtomicAction]) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(prompt_id.as_bytes());
    for a in prefix {
        eat(b"\x1f");
        eat(a.to_string().as_bytes());
    }
    h
}

impl ToyPolicy {
    /// A policy covering every action and context that occurs in `examples`,
    /// with logits drawn uniformly from `[-scale, scale]`.
    pub fn for_examples(examples: &[PreferenceExample], rng: &mut impl Rng, scale: f64) -> Self {
        let mut vocab = BTreeMap::new();
        let mut keys = Vec::new();
        for ex in examples {
            for plan in [&ex.y_w, &ex.y_l] {
                for (i, a) in plan.actions.iter().enumerate() {
                    let next = vocab.len();
                    vocab.entry(a.clone()).or_insert(next);
                    keys.push(context_key(&ex.prompt_id, &plan.actions[..i]));
                }
            }
        }
        keys.sort_unstable();
        keys.dedup();
        let contexts: BTreeMap<u64, usize> =
            keys.into_iter().enumerate().map(|(i, k)| (k, i)).collect();
        let n = contexts.len() * vocab.len();
        let logits = (0..n)
            .map(|_| {
                if scale > 0.0 {
                    rng.random_range(-scale..=scale)
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            vocab,
            contexts,
            logits,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn row(&self, prompt_id: &str, prefix: &[AtomicAction]) -> Result<usize, AlignError> {
        self.contexts
            .get(&context_key(prompt_id, prefix))
            .map(|r| r * self.vocab.len())
            .ok_or_else(|| {
                AlignError::UnknownAction(format!(
                    "context after {} actions of {prompt_id}",
                    prefix.len()
                ))
            })
    }

    fn action(&self, a: &AtomicAction) -> Result<usize, AlignError> {
        self.vocab
            .get(a)
            .copied()
            .ok_or_else(|| AlignError::UnknownAction(a.to_string()))
    }

    fn softmax(&self, start: usize) -> Vec<f64> {
        let row = &self.logits[start..start + self.vocab.len()];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Action distribution for one context.
    pub fn distribution(
        &self,
        prompt_id: &str,
        prefix: &[AtomicAction],
    ) -> Result<Vec<f64>, AlignError> {
        Ok(self.softmax(self.row(prompt_id, prefix)?))
    }

    /// `log π(a_i | prompt, a_<i)` for every action of `plan`.
    pub fn log_probs(&self, prompt_id: &str, plan: &PlanScript) -> Result<Vec<f64>, AlignError> {
        let v = self.vocab.len();
        (0..plan.len())
            .map(|i| {
                let start = self.row(prompt_id, &plan.actions[..i])?;
                let a = self.action(&plan.actions[i])?;
                let row = &self.logits[start..start + v];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                // log-softmax can round a hair above zero for a dominant logit
                Ok((row[a] - lse).min(0.0))
            })
            .collect()
    }

    /// Adds `Σ_i d_lp[i] · ∂ log π(a_i) / ∂ logits` into `grad`.
    fn accumulate(
        &self,
        prompt_id: &str,
        plan: &PlanScript,
        d_lp: &[f64],
        grad: &mut [f64],
    ) -> Result<(), AlignError> {
        for (i, &d) in d_lp.iter().enumerate() {
            let start = self.row(prompt_id, &plan.actions[..i])?;
            let a = self.action(&plan.actions[i])?;
            // ∂ log softmax_a / ∂ z_b = 1[a = b] - p_b
            for (b, p) in self.softmax(start).into_iter().enumerate() {
                grad[start + b] += d * (f64::from(u8::from(a == b)) - p);
            }
        }
        Ok(())
    }

    /// Scores an example under this policy and an optional frozen reference.
    pub fn score(
        &self,
        ex: &PreferenceExample,
        reference: Option<&ToyPolicy>,
    ) -> Result<PreferenceSample, AlignError> {
        let refs = match reference {
            Some(r) => Some((
                SequenceLogProbs::reference(r.log_probs(&ex.prompt_id, &ex.y_w)?)?,
                SequenceLogProbs::reference(r.log_probs(&ex.prompt_id, &ex.y_l)?)?,
            )),
            None => None,
        };
        PreferenceSample::new(
            ex.prompt_id.clone(),
            ex.y_w.clone(),
            ex.y_l.clone(),
            SequenceLogProbs::theta(self.log_probs(&ex.prompt_id, &ex.y_w)?)?,
            SequenceLogProbs::theta(self.log_probs(&ex.prompt_id, &ex.y_l)?)?,
            refs,
        )
    }
}

/// Mean loss over `examples` and its gradient with respect to the logits of
/// `theta`. `reference` stays frozen.
pub fn policy_loss_and_grad(
    variant: LossVariant,
    theta: &ToyPolicy,
    reference: &ToyPolicy,
    examples: &[PreferenceExample],
    cfg: &AlignConfig,
) -> Result<(f64, Vec<f64>), AlignError> {
    if examples.is_empty() {
        return Err(AlignError::EmptySequence);
    }
    let n = examples.len() as f64;
    let mut grad = vec![0.0; theta.logits.len()];
    let mut total = 0.0;
    for ex in examples {
        let s = theta.score(ex, Some(reference))?;
        let g = loss_and_grad(variant, &s, cfg)?;
        total += g.loss;
        let dw: Vec<f64> = g.d_lp_w.iter().map(|d| d / n).collect();
        let dl: Vec<f64> = g.d_lp_l.iter().map(|d| d / n).collect();
        theta.accumulate(&ex.prompt_id, &ex.y_w, &dw, &mut grad)?;
        theta.accumulate(&ex.prompt_id, &ex.y_l, &dl, &mut grad)?;
    }
    Ok((total / n, grad))
}

fn mean_loss(
    variant: LossVariant,
    theta: &ToyPolicy,
    reference: &ToyPolicy,
    examples: &[PreferenceExample],
    cfg: &AlignConfig,
) -> Result<f64, AlignError> {
    let mut total = 0.0;
    for ex in examples {
        total += variant.loss(&theta.score(ex, Some(reference))?, cfg)?;
    }
    Ok(total / examples.len() as f64)
}

/// Central differences `(L(θ + h·e_i) - L(θ - h·e_i)) / 2h` of the mean loss
/// for every logit, with `h` = [`FD_STEP`].
///
/// Evaluating `L(θ ± h)` separately and subtracting loses about eleven
/// digits to rounding, which swamps gradients that are exactly zero (tied
/// actions, shared prefixes). Instead the difference itself is formed from
/// the softmax definition with `ln_1p`/`exp_m1`, so it carries full relative
/// precision. The result does not use the analytic gradient.
pub fn fd_gradient(
    variant: LossVariant,
    theta: &ToyPolicy,
    reference: &ToyPolicy,
    examples: &[PreferenceExample],
    cfg: &AlignConfig,
) -> Result<Vec<f64>, AlignError> {
    let v = theta.vocab.len();
    let h = FD_STEP;
    // per-row max and normalizer
    let rows: Vec<(f64, f64)> = theta
        .logits
        .chunks(v)
        .map(|row| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (m, row.iter().map(|x| (x - m).exp()).sum())
        })
        .collect();
    struct Term {
        row: usize,
        action: usize,
        coef: f64,
    }
    struct Sample {
        z: f64,
        terms: Vec<Term>,
    }
    let mut samples = Vec::with_capacity(examples.len());
    for ex in examples {
        let s = theta.score(ex, Some(reference))?;
        let c = super::margin_coefficients(variant, s.lp_w.len(), s.lp_l.len(), s.k, cfg)?;
        let mut terms = Vec::new();
        for (plan, coefs) in [(&ex.y_w, &c.w), (&ex.y_l, &c.l)] {
            for (i, &coef) in coefs.iter().enumerate() {
                let row = theta.row(&ex.prompt_id, &plan.actions[..i])? / v;
                terms.push(Term {
                    row,
                    action: theta.action(&plan.actions[i])?,
                    coef,
                });
            }
        }
        samples.push(Sample {
            z: super::margin(variant, &s, cfg)?,
            terms,
        });
    }
    let n = examples.len() as f64;
    let two_sinh = h.exp_m1() - (-h).exp_m1();
    let mut grad = vec![0.0; theta.logits.len()];
    for (p, g) in grad.iter_mut().enumerate() {
        let (r, b) = (p / v, p % v);
        let (m, s) = rows[r];
        let e_b = (theta.logits[p] - m).exp();
        // lse(θ_b - h) - lse(θ_b) and lse(θ_b + h) - lse(θ_b - h)
        let lse_down = (e_b * (-h).exp_m1() / s).ln_1p();
        let lse_span = (e_b * two_sinh / (s + e_b * (-h).exp_m1())).ln_1p();
        let mut total = 0.0;
        for sample in &samples {
            let mut z_down = Vec::new();
            let mut span = Vec::new();
            for t in sample.terms.iter().filter(|t| t.row == r) {
                let hit = if t.action == b { 1.0 } else { 0.0 };
                z_down.push(t.coef * (-h * hit - lse_down));
                span.push(t.coef * (2.0 * h * hit - lse_span));
            }
            if span.is_empty() {
                continue;
            }
            z_down.push(sample.z);
            let z_minus = super::exact_sum(&z_down);
            let dz = super::exact_sum(&span);
            // softplus(-z_minus - dz) - softplus(-z_minus)
            total += (super::sigmoid(-z_minus) * (-dz).exp_m1()).ln_1p();
        }
        *g = total / (n * 2.0 * h);
    }
    Ok(grad)
}

/// Largest relative error `|a - fd| / (|a| + 1e-8)` between the analytic
/// gradient and [`fd_gradient`], over all logits.
pub fn grad_check(
    variant: LossVariant,
    theta: &ToyPolicy,
    reference: &ToyPolicy,
    examples: &[PreferenceExample],
    cfg: &AlignConfig,
) -> Result<f64, AlignError> {
    let (_, analytic) = policy_loss_and_grad(variant, theta, reference, examples, cfg)?;
    let fd = fd_gradient(variant, theta, reference, examples, cfg)?;
    Ok(analytic
        .iter()
        .zip(&fd)
        .map(|(a, f)| (a - f).abs() / (a.abs() + 1e-8))
        .fold(0.0, f64::max))
}

/// Plain central differences: two full loss evaluations per logit.
pub fn naive_fd_gradient(
    variant: LossVariant,
    theta: &ToyPolicy,
    reference: &ToyPolicy,
    examples: &[PreferenceExample],
    cfg: &AlignConfig,
) -> Result<Vec<f64>, AlignError> {
    let mut probe = theta.clone();
    let mut out = Vec::with_capacity(theta.logits.len());
    for i in 0..theta.logits.len() {
        let orig = probe.logits[i];
        probe.logits[i] = orig + FD_STEP;
        let up = mean_loss(variant, &probe, reference, examples, cfg)?;
        probe.logits[i] = orig - FD_STEP;
        let down = mean_loss(variant, &probe, reference, examples, cfg)?;
        probe.logits[i] = orig;
        out.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss before each step, then after the last one.
    pub losses: Vec<f64>,
    /// Steps after which the loss went up.
    pub non_monotone_steps: usize,
    /// Fraction of examples with `log π(y_w) > log π(y_l)` at the end.
    pub preferred_fraction: f64,
}

/// Plain gradient descent on `theta`.
pub fn train(
    variant: LossVariant,
    theta: &mut ToyPolicy,
    reference: &ToyPolicy,
    examples: &[PreferenceExample],
    cfg: &AlignConfig,
    steps: usize,
    learning_rate: f64,
) -> Result<TrainReport, AlignError> {
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (loss, grad) = policy_loss_and_grad(variant, theta, reference, examples, cfg)?;
        losses.push(loss);
        for (p, g) in theta.logits.iter_mut().zip(&grad) {
            *p -= learning_rate * g;
        }
    }
    losses.push(mean_loss(variant, theta, reference, examples, cfg)?);
    let non_monotone_steps = losses.windows(2).filter(|w| w[1] > w[0]).count();
    let mut preferred = 0usize;
    for ex in examples {
        let w: f64 = theta.log_probs(&ex.prompt_id, &ex.y_w)?.iter().sum();
        let l: f64 = theta.log_probs(&ex.prompt_id, &ex.y_l)?.iter().sum();
        preferred += usize::from(w > l);
    }
    Ok(TrainReport {
        losses,
        non_monotone_steps,
        preferred_fraction: preferred as f64 / examples.len() as f64,
    })
}

/// A seeded synthetic problem: preference pairs over a small action
/// vocabulary that share a random-length prefix, a policy with random logits
/// and an independent random reference.
pub fn random_problem(
    seed: u64,
    vocab_size: usize,
    n_pairs: usize,
    max_len: usize,
) -> (Vec<PreferenceExample>, ToyPolicy, ToyPolicy) {
    assert!(vocab_size >= 2 && max_len >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<AtomicAction> = (0..vocab_size)
        .map(|i| AtomicAction::of("GRAB", &[format!("item{i}").as_str()]))
        .collect();
    let pick = |rng: &mut ChaCha8Rng| vocab[rng.random_range(0..vocab.len())].clone();
    let examples: Vec<PreferenceExample> = (0..n_pairs)
        .map(|p| {
            let k = rng.random_range(0..max_len);
            let prefix: Vec<AtomicAction> = (0..k).map(|_| pick(&mut rng)).collect();
            let mut y_w = prefix.clone();
            let mut y_l = prefix;
            let first_w = pick(&mut rng);
            let mut first_l = pick(&mut rng);
            while first_l == first_w {
                first_l = pick(&mut rng);
            }
            y_w.push(first_w);
            y_l.push(first_l);
            for y in [&mut y_w, &mut y_l] {
                let extra = rng.random_range(0..=max_len - y.len());
                y.extend((0..extra).map(|_| pick(&mut rng)));
            }
            PreferenceExample {
                prompt_id: format!("p{p}"),
                y_w: PlanScript::from_actions(y_w),
                y_l: PlanScript::from_actions(y_l),
            }
        })
        .collect();
    let theta = ToyPolicy::for_examples(&examples, &mut rng, 1.0);
    let reference = ToyPolicy::for_examples(&examples, &mut rng, 1.0);
    (examples, theta, reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_distributions() {
        let (examples, theta, _) = random_problem(1, 5, 3, 4);
        for ex in &examples {
            for i in 0..ex.y_w.len() {
                let d = theta
                    .distribution(&ex.prompt_id, &ex.y_w.actions[..i])
                    .unwrap();
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = AlignConfig::default();
        for seed in 0..3 {
            let (examples, theta, reference) = random_problem(seed, 5, 3, 4);
            for v in LossVariant::ALL {
                let err = grad_check(v, &theta, &reference, &examples, &cfg).unwrap();
                assert!(err < 1e-5, "{v:?} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn differenced_fd_agrees_with_plain_fd() {
        let cfg = AlignConfig::default();
        for seed in 0..3 {
            let (examples, theta, reference) = random_problem(seed, 5, 4, 5);
            for v in LossVariant::ALL {
                let a = fd_gradient(v, &theta, &reference, &examples, &cfg).unwrap();
                let b = naive_fd_gradient(v, &theta, &reference, &examples, &cfg).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-9, "{v:?}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn tied_actions_get_equal_gradients() {
        let (examples, theta, reference) = random_problem(4, 6, 2, 3);
        let mut flat = theta;
        flat.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let (_, grad) = policy_loss_and_grad(
            LossVariant::SafeAlign,
            &flat,
            &reference,
            &examples,
            &AlignConfig::default(),
        )
        .unwrap();
        let v = flat.vocab_size();
        // within a row, actions no plan takes from that context are interchangeable
        let mut targets = std::collections::BTreeSet::new();
        for ex in &examples {
            for plan in [&ex.y_w, &ex.y_l] {
                for i in 0..plan.len() {
                    let row = flat.row(&ex.prompt_id, &plan.actions[..i]).unwrap();
                    targets.insert(row + flat.action(&plan.actions[i]).unwrap());
                }
            }
        }
        for start in (0..grad.len()).step_by(v) {
            let mut tied = (start..start + v)
                .filter(|i| !targets.contains(i))
                .map(|i| grad[i]);
            if let Some(first) = tied.next() {
                assert!(tied.all(|g| (g - first).abs() < 1e-9));
            }
        }
    }
}
