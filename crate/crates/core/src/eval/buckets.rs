use std::fmt;

use serde::Serialize;

use super::{bleu, ids_line, BleuReport};
use crate::decode::translate_ids;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::text::SentencePair;

/// Interior edges of the default buckets
/// `[0,10), [10,20), [20,30), [30,45), [45,∞)`.
pub const DEFAULT_EDGES: [usize; 4] = [10, 20, 30, 45];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bucket {
    pub lo: usize,
    /// Exclusive; `None` for the open last bucket.
    pub hi: Option<usize>,
    pub count: usize,
    /// Absent for empty buckets.
    pub bleu: Option<BleuReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LengthBucketReport {
    pub buckets: Vec<Bucket>,
}

impl LengthBucketReport {
    pub fn to_jsonl(&self) -> String {
        self.buckets
            .iter()
            .map(|b| serde_json::to_string(b).expect("bucket serializes") + "\n")
            .collect()
    }
}

impl fmt::Display for LengthBucketReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>7} {:>7}", "length", "count", "BLEU")?;
        for b in &self.buckets {
            let range = match b.hi {
                Some(hi) => format!("[{}, {})", b.lo, hi),
                None => format!("[{}, inf)", b.lo),
            };
            let score = b.bleu.as_ref().map_or("-".to_owned(), |r| format!("{:.2}", r.bleu));
            writeln!(f, "{range:<12} {:>7} {score:>7}", b.count)?;
        }
        Ok(())
    }
}

/// Groups sentences by source length and scores each group.
/// `edges` are strictly increasing interior boundaries; an empty slice
/// gives one bucket covering everything.
pub fn bucket_bleu<H: AsRef<str>, R: AsRef<str>>(
    src_lens: &[usize],
    hyps: &[H],
    refs: &[R],
    edges: &[usize],
    case_insensitive: bool,
) -> Result<LengthBucketReport> {
    if hyps.len() != src_lens.len() || refs.len() != src_lens.len() {
        return Err(Error::Usage(
            "source lengths, hypotheses and references must align".into(),
        ));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) || edges.first() == Some(&0) {
        return Err(Error::Usage(
            "bucket edges must be positive and strictly increasing".into(),
        ));
    }
    let mut bounds = vec![0];
    bounds.extend_from_slice(edges);
    let mut buckets = Vec::with_capacity(bounds.len());
    for (k, &lo) in bounds.iter().enumerate() {
        let hi = bounds.get(k + 1).copied();
        let members: Vec<usize> = (0..src_lens.len())
            .filter(|&i| src_lens[i] >= lo && hi.is_none_or(|h| src_lens[i] < h))
            .collect();
        let bleu = if members.is_empty() {
            None
        } else {
            let h: Vec<&str> = members.iter().map(|&i| hyps[i].as_ref()).collect();
            let r: Vec<&str> = members.iter().map(|&i| refs[i].as_ref()).collect();
            Some(bleu(&h, &[r], case_insensitive)?)
        };
        buckets.push(Bucket {
            lo,
            hi,
            count: members.len(),
            bleu,
        });
    }
    Ok(LengthBucketReport { buckets })
}

/// Translates every source and reports BLEU per source-length bucket.
pub fn length_bucket_eval(
    model: &Model,
    pairs: &[SentencePair],
    edges: &[usize],
    beam: usize,
    alpha: f64,
) -> Result<LengthBucketReport> {
    let mut hyps = Vec::with_capacity(pairs.len());
    for p in pairs {
        hyps.push(ids_line(&translate_ids(model, &p.source, beam, alpha)?.tokens));
    }
    let refs: Vec<String> = pairs.iter().map(|p| ids_line(&p.target)).collect();
    let lens: Vec<usize> = pairs.iter().map(|p| p.source.len()).collect();
    bucket_bleu(&lens, &hyps, &refs, edges, false)
}
