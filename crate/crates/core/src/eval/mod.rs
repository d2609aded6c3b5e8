//! BLEU, length-bucketed reports, attention heatmaps and the ablation
//! harness.

mod ablation;
mod bleu;
mod buckets;
mod heatmap;

pub use ablation::{ablation_suite, corpus_bleu, median, train_variant, AblationRow, AblationTable, Variant};
pub use bleu::{bleu, BleuReport};
pub use buckets::{bucket_bleu, length_bucket_eval, Bucket, LengthBucketReport, DEFAULT_EDGES};
pub use heatmap::{export_heatmap, gray, read_matrix, read_pgm, AttentionTrace, Heatmap};

/// Space-separated ids, for scoring models without a vocabulary.
pub fn ids_line(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}
