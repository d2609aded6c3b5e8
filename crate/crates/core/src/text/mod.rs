//! Subword segmentation, vocabularies and batching.

mod batch;
mod bpe;
mod vocab;

pub use batch::{encode_pairs, make_batches, Batch, Batches, PaddedRows, SentencePair};
pub use bpe::{read_lines, BpeModel, END_OF_WORD};
pub use vocab::{Vocabulary, BOS, BOS_R2L, EOS, PAD, RESERVED, UNK};
