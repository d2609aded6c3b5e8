//! Token-budgeted batching of parallel id sequences.
//!
//! Source rows are `tokens, EOS`; target rows are `BOS, tokens, EOS`. Both
//! are right-padded with [`PAD`]. A batch fits the budget when
//! `rows × width ≤ token_budget` holds on each side separately, with the
//! start/end symbols counted.

use super::vocab::{Vocabulary, BOS, EOS, PAD};

/// One aligned sentence pair as ids, without start/end symbols.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Encodes aligned tokenized lines into id pairs.
pub fn encode_pairs<S: AsRef<str>>(
    sources: &[S],
    targets: &[S],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Vec<SentencePair> {
    sources
        .iter()
        .zip(targets)
        .map(|(s, t)| SentencePair {
            source: src_vocab.encode_line(s.as_ref()),
            target: tgt_vocab.encode_line(t.as_ref()),
        })
        .collect()
}

/// Equal-width id rows with their unpadded lengths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedRows {
    pub ids: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
}

impl PaddedRows {
    fn from_rows(rows: Vec<Vec<usize>>) -> Self {
        let width = rows.iter().map(Vec::len).max().unwrap_or(0);
        let lengths = rows.iter().map(Vec::len).collect();
        let ids = rows
            .into_iter()
            .map(|mut r| {
                r.resize(width, PAD);
                r
            })
            .collect();
        Self { ids, lengths }
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn width(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    /// Padded size, the quantity held under the token budget.
    pub fn token_count(&self) -> usize {
        self.rows() * self.width()
    }

    /// Row `i` without padding.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.ids[i][..self.lengths[i]]
    }

    /// `true` at real tokens, `false` at padding.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.ids
            .iter()
            .zip(&self.lengths)
            .map(|(r, &len)| (0..r.len()).map(|j| j < len).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub source: PaddedRows,
    pub target: PaddedRows,
    /// Corpus position of each row.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Source tokens of row `i` including the trailing EOS.
    pub fn source_row(&self, i: usize) -> &[usize] {
        self.source.row(i)
    }

    /// Target tokens of row `i` between BOS and EOS.
    pub fn gold(&self, i: usize) -> &[usize] {
        let row = self.target.row(i);
        &row[1..row.len() - 1]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Batches {
    pub batches: Vec<Batch>,
    /// Pairs dropped because a single sentence exceeded the budget.
    pub skipped: usize,
}

fn target_row(target: &[usize], reverse: bool) -> Vec<usize> {
    let mut row = Vec::with_capacity(target.len() + 2);
    row.push(BOS);
    if reverse {
        row.extend(target.iter().rev());
    } else {
        row.extend_from_slice(target);
    }
    row.push(EOS);
    row
}

/// Buckets pairs by length and packs them greedily under `token_budget`.
///
/// With `reverse_target` the target tokens between BOS and EOS are
/// emitted in reverse order, which is what a right-to-left decoder is
/// taught on.
pub fn make_batches(pairs: &[SentencePair], token_budget: usize, reverse_target: bool) -> Batches {
    let mut order: Vec<usize> = Vec::with_capacity(pairs.len());
    let mut skipped = 0;
    for (i, p) in pairs.iter().enumerate() {
        if p.source.len() + 1 > token_budget || p.target.len() + 2 > token_budget {
            skipped += 1;
        } else {
            order.push(i);
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} sentence pair(s) longer than the token budget {token_budget}");
    }
    order.sort_by_key(|&i| (pairs[i].source.len(), pairs[i].target.len(), i));

    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let (mut src_w, mut tgt_w) = (0, 0);
    for i in order {
        let sw = src_w.max(pairs[i].source.len() + 1);
        let tw = tgt_w.max(pairs[i].target.len() + 2);
        let rows = current.len() + 1;
        if !current.is_empty() && (rows * sw > token_budget || rows * tw > token_budget) {
            batches.push(build(pairs, std::mem::take(&mut current), reverse_target));
            src_w = pairs[i].source.len() + 1;
            tgt_w = pairs[i].target.len() + 2;
        } else {
            src_w = sw;
            tgt_w = tw;
        }
        current.push(i);
    }
    if !current.is_empty() {
        batches.push(build(pairs, current, reverse_target));
    }
    Batches { batches, skipped }
}

fn build(pairs: &[SentencePair], indices: Vec<usize>, reverse_target: bool) -> Batch {
    let source = PaddedRows::from_rows(
        indices
            .iter()
            .map(|&i| {
                let mut r = pairs[i].source.clone();
                r.push(EOS);
                r
            })
            .collect(),
    );
    let target = PaddedRows::from_rows(
        indices
            .iter()
            .map(|&i| target_row(&pairs[i].target, reverse_target))
            .collect(),
    );
    Batch {
        source,
        target,
        indices,
    }
}
