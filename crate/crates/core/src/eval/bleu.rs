use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// Corpus BLEU with the conventions of `multi-bleu.perl`: whitespace
/// tokens, clipped counts against the per-n-gram maximum over references,
/// the closest reference length (shorter on ties), no smoothing.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BleuReport {
    /// Percent, in `[0, 100]`.
    pub bleu: f64,
    /// Modified n-gram precisions for n = 1..4, as fractions.
    pub precisions: [f64; 4],
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub brevity_penalty: f64,
    pub ratio: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.precisions.map(|p| 100.0 * p);
        write!(
            f,
            "BLEU = {:.2}, {:.1}/{:.1}/{:.1}/{:.1} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})",
            self.bleu, p[0], p[1], p[2], p[3], self.brevity_penalty, self.ratio, self.hyp_len, self.ref_len
        )
    }
}

fn ngrams<'a, 'b>(words: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut out = HashMap::new();
    for w in words.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}

/// `ref_sets[k][i]` is the k-th reference of sentence `i`.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    ref_sets: &[Vec<R>],
    case_insensitive: bool,
) -> Result<BleuReport> {
    if hyps.is_empty() {
        return Err(Error::Usage("BLEU of an empty corpus".into()));
    }
    if ref_sets.is_empty() {
        return Err(Error::Usage("BLEU needs at least one reference set".into()));
    }
    if let Some(bad) = ref_sets.iter().find(|r| r.len() != hyps.len()) {
        return Err(Error::Usage(format!(
            "{} hypotheses but a reference set has {} lines",
            hyps.len(),
            bad.len()
        )));
    }
    let fold = |s: &str| {
        if case_insensitive {
            s.to_lowercase()
        } else {
            s.to_owned()
        }
    };
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (i, h) in hyps.iter().enumerate() {
        let h = fold(h.as_ref());
        let hw: Vec<&str> = h.split_whitespace().collect();
        let refs: Vec<String> = ref_sets.iter().map(|r| fold(r[i].as_ref())).collect();
        let rws: Vec<Vec<&str>> = refs.iter().map(|r| r.split_whitespace().collect()).collect();
        let mut closest: Option<(usize, usize)> = None;
        for rw in &rws {
            let diff = rw.len().abs_diff(hw.len());
            closest = match closest {
                Some((d, l)) if d < diff || (d == diff && l <= rw.len()) => Some((d, l)),
                _ => Some((diff, rw.len())),
            };
        }
        hyp_len += hw.len();
        ref_len += closest.map_or(0, |(_, l)| l);
        for n in 1..=4 {
            let mut max_ref: HashMap<&[&str], usize> = HashMap::new();
            for rw in &rws {
                for (g, c) in ngrams(rw, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in ngrams(&hw, n) {
                totals[n - 1] += c;
                matches[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
            }
        }
    }
    let precisions: [f64; 4] = std::array::from_fn(|n| {
        if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        }
    });
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        100.0 * brevity_penalty * (precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        matches,
        totals,
        brevity_penalty,
        ratio: if ref_len == 0 {
            0.0
        } else {
            hyp_len as f64 / ref_len as f64
        },
        hyp_len,
        ref_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_hundred() {
        let h = ["the cat sat on the mat", "a b c d e"];
        let r = bleu(&h, &[h.iter().map(|s| s.to_string()).collect()], false).unwrap();
        assert_eq!(r.bleu, 100.0);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn short_hypothesis_pays_brevity() {
        let r = bleu(&["a b c d"], &[vec!["a b c d e"]], false).unwrap();
        assert!((r.bleu - 100.0 * (-0.25f64).exp()).abs() < 1e-9);
        assert_eq!(
            r.to_string(),
            "BLEU = 77.88, 100.0/100.0/100.0/100.0 (BP=0.779, ratio=0.800, hyp_len=4, ref_len=5)"
        );
    }

    #[test]
    fn no_shared_four_gram_is_zero() {
        let r = bleu(&["a b c d"], &[vec!["a b c e"]], false).unwrap();
        assert_eq!(r.bleu, 0.0);
        assert_eq!(r.matches[0], 3);
    }

    #[test]
    fn clipping_and_case_folding() {
        let r = bleu(&["The the the the"], &[vec!["the cat"]], true).unwrap();
        assert_eq!((r.matches[0], r.totals[0]), (1, 4));
        let r = bleu(&["The cat"], &[vec!["the cat"]], false).unwrap();
        assert_eq!(r.matches[0], 1);
    }

    #[test]
    fn closest_reference_prefers_shorter_on_ties() {
        let r = bleu(&["a b c d e f"], &[vec!["a b c d e"], vec!["a b c d e f g"]], false).unwrap();
        assert_eq!(r.ref_len, 5);
    }

    #[test]
    fn empty_corpus_and_misaligned_refs_rejected() {
        assert!(matches!(
            bleu::<&str, &str>(&[], &[vec![]], false),
            Err(Error::Usage(_))
        ));
        assert!(matches!(bleu(&["a"], &[vec!["a", "b"]], false), Err(Error::Usage(_))));
    }
}
