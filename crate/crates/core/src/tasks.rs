//! Synthetic parallel corpora for smoke tests and ablations.
//!
//! Content ids start after the reserved symbols, so a task with vocabulary
//! size `V` draws tokens from `RESERVED.len()..V`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::text::{SentencePair, Vocabulary, RESERVED};

fn check(vocab: usize, min_len: usize, max_len: usize) -> Result<()> {
    if vocab <= RESERVED.len() {
        return Err(Error::Usage(format!(
            "toy vocabulary must exceed {} ids",
            RESERVED.len()
        )));
    }
    if min_len == 0 || min_len > max_len {
        return Err(Error::Usage("toy lengths need 1 <= min_len <= max_len".into()));
    }
    Ok(())
}

fn sentence(rng: &mut ChaCha8Rng, vocab: usize, min_len: usize, max_len: usize) -> Vec<usize> {
    let len = rng.gen_range(min_len..=max_len);
    (0..len).map(|_| rng.gen_range(RESERVED.len()..vocab)).collect()
}

/// Target equals source.
pub fn copy_task(
    rng: &mut ChaCha8Rng,
    n: usize,
    vocab: usize,
    min_len: usize,
    max_len: usize,
) -> Result<Vec<SentencePair>> {
    check(vocab, min_len, max_len)?;
    Ok((0..n)
        .map(|_| {
            let s = sentence(rng, vocab, min_len, max_len);
            SentencePair {
                target: s.clone(),
                source: s,
            }
        })
        .collect())
}

/// Target is the reversed source where each token is independently
/// replaced by a uniformly drawn content token with probability `noise`.
pub fn noisy_reverse_task(
    rng: &mut ChaCha8Rng,
    n: usize,
    vocab: usize,
    min_len: usize,
    max_len: usize,
    noise: f64,
) -> Result<Vec<SentencePair>> {
    check(vocab, min_len, max_len)?;
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::Usage("noise must lie in [0, 1]".into()));
    }
    Ok((0..n)
        .map(|_| {
            let source = sentence(rng, vocab, min_len, max_len);
            let target = source
                .iter()
                .rev()
                .map(|&t| {
                    if rng.gen_bool(noise) {
                        rng.gen_range(RESERVED.len()..vocab)
                    } else {
                        t
                    }
                })
                .collect();
            SentencePair { source, target }
        })
        .collect())
}

/// Vocabulary naming content id `i` as `w<i>`.
pub fn toy_vocabulary(vocab: usize) -> Vocabulary {
    Vocabulary::from_tokens((RESERVED.len()..vocab).map(|i| format!("w{i}"))).expect("distinct toy tokens")
}

/// Small model and fast schedule sized for the toy tasks.
pub fn toy_config(vocab: usize) -> RunConfig {
    let mut run = RunConfig::default();
    let m = &mut run.model;
    m.src_vocab_size = vocab;
    m.tgt_vocab_size = vocab;
    m.embed = 32;
    m.hidden = 32;
    m.dec_hidden = 32;
    m.attention = 32;
    m.heads = 2;
    m.init_range = 0.2;
    m.dropout_embed = 0.1;
    m.dropout_encoder = 0.1;
    m.dropout_readout = 0.1;
    let t = &mut run.train;
    t.lr0 = 5e-3;
    t.decay_start = 600;
    t.decay_end = 1200;
    t.token_budget = 240;
    t.max_steps = 2500;
    t.checkpoint_every = 500;
    run.decode.beam = 4;
    run
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn copy_pairs_match_and_respect_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = copy_task(&mut rng, 50, 16, 1, 10).unwrap();
        for p in &pairs {
            assert_eq!(p.source, p.target);
            assert!((1..=10).contains(&p.source.len()));
            assert!(p.source.iter().all(|&t| (5..16).contains(&t)));
        }
    }

    #[test]
    fn noiseless_reverse_is_exact_reversal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in noisy_reverse_task(&mut rng, 20, 12, 2, 6, 0.0).unwrap() {
            let rev: Vec<usize> = p.source.iter().rev().copied().collect();
            assert_eq!(p.target, rev);
        }
    }

    #[test]
    fn toy_vocabulary_names_ids() {
        let v = toy_vocabulary(8);
        assert_eq!(v.len(), 8);
        assert_eq!(v.id("w6"), 6);
    }
}
