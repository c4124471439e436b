//! Inputs shared by the benchmarks.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safeplan_core::align::{
    random_problem, AlignConfig, PreferenceExample, PreferenceSample, ToyPolicy,
};
use safeplan_core::harness::{CorpusLine, Evaluator, SceneCache};
use safeplan_core::synth::synthetic_corpus;
use safeplan_core::{SafetyRuleSet, Simulator};

/// A seeded synthetic corpus, ready for [`Evaluator::evaluate_corpus`].
pub fn corpus(n: usize, seed: u64) -> Vec<CorpusLine> {
    synthetic_corpus(n, &mut ChaCha8Rng::seed_from_u64(seed))
        .into_iter()
        .enumerate()
        .map(|(i, s)| CorpusLine {
            line: i + 1,
            sample: Ok(s),
        })
        .collect()
}

pub fn evaluator() -> Evaluator {
    Evaluator::new(
        Simulator::default(),
        SafetyRuleSet::builtin(),
        SceneCache::default(),
    )
}

pub struct AlignInputs {
    pub examples: Vec<PreferenceExample>,
    pub theta: ToyPolicy,
    pub reference: ToyPolicy,
    pub samples: Vec<PreferenceSample>,
    pub cfg: AlignConfig,
}

/// A toy problem plus its pairs scored under the policy and reference.
pub fn align_inputs(seed: u64, pairs: usize) -> AlignInputs {
    let (examples, theta, reference) = random_problem(seed, 8, pairs, 8);
    let samples = examples
        .iter()
        .map(|e| theta.score(e, Some(&reference)).expect("covered"))
        .collect();
    AlignInputs {
        examples,
        theta,
        reference,
        samples,
        cfg: AlignConfig::default(),
    }
}
