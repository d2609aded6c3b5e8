//! Two-pass inference: a greedy right-to-left pass fills the memory, then
//! beam search runs left to right over it.

mod beam;

pub use beam::{beam_l2r, length_normalized, BeamOptions, BeamOutput, Hypothesis};

use crate::error::{Error, Result};
use crate::eval::AttentionTrace;
use crate::nn::{Ctx, DecoderInput, DimMemory, DimMode, Model};
use crate::text::{BpeModel, Vocabulary, EOS, RESERVED};

/// Greedy right-to-left decoding. The memory holds one state per step,
/// so it has one more row than the token list when the pass ended on EOS.
pub fn greedy_r2l(model: &Model, ctx: &mut Ctx, input: &DecoderInput, cap: usize) -> Result<(Vec<usize>, DimMemory)> {
    let (tokens, run) = model.greedy_r2l(ctx, input, cap)?;
    let memory = DimMemory::new(ctx, run.states)?;
    Ok((tokens, memory))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    pub tokens: Vec<usize>,
    /// Right-to-left output in generation order.
    pub r2l_tokens: Vec<usize>,
    /// Rows of the memory the left-to-right pass read.
    pub memory_rows: usize,
    pub logprob: f64,
    pub score: f64,
    /// One row per output token over the source positions, EOS included.
    pub src_attention: Vec<Vec<f64>>,
    /// One row per output token over the memory rows; empty without memory.
    pub tgt_attention: Vec<Vec<f64>>,
}

impl Translation {
    fn empty() -> Self {
        Self {
            tokens: Vec::new(),
            r2l_tokens: Vec::new(),
            memory_rows: 0,
            logprob: 0.0,
            score: 0.0,
            src_attention: Vec::new(),
            tgt_attention: Vec::new(),
        }
    }
}

/// Translates source ids (EOS not included).
pub fn translate_ids(model: &Model, source: &[usize], beam: usize, alpha: f64) -> Result<Translation> {
    if beam == 0 {
        return Err(Error::Usage("beam size must be at least 1".into()));
    }
    if source.is_empty() {
        return Ok(Translation::empty());
    }
    let mut ctx = Ctx::inference(&model.params);
    let mut row = source.to_vec();
    row.push(EOS);
    let (_, r2l_in, l2r_in) = model.prepare(&mut ctx, &row)?;
    let cap = model.length_cap(source.len());
    let (r2l_tokens, memory) = greedy_r2l(model, &mut ctx, &r2l_in, cap)?;
    let memory_rows = memory.rows();
    let reads = model.has_dim() && model.dim_mode != DimMode::Off;
    let out = beam_l2r(
        model,
        &mut ctx,
        &l2r_in,
        reads.then_some(memory),
        BeamOptions { beam, alpha, cap },
    )?;
    let best = out.best;
    let n = best.tokens.len();
    let mut src_attention = best.src_attention.clone();
    let mut tgt_attention = best.tgt_attention.clone();
    src_attention.truncate(n);
    tgt_attention.truncate(n);
    Ok(Translation {
        score: best.score(alpha),
        logprob: best.logprob,
        tokens: best.tokens,
        r2l_tokens,
        memory_rows: if reads { memory_rows } else { 0 },
        src_attention,
        tgt_attention,
    })
}

/// Text-level translation with the vocabularies and optional BPE models
/// the model was trained with.
pub struct Translator<'m> {
    pub model: &'m Model,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub src_bpe: Option<BpeModel>,
    /// Target side was segmented and must be merged back into words.
    pub tgt_bpe: bool,
    pub beam: usize,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextTranslation {
    pub text: String,
    pub translation: Translation,
    pub trace: AttentionTrace,
}

impl<'m> Translator<'m> {
    pub fn new(model: &'m Model, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> Result<Self> {
        let cfg = model.config();
        if src_vocab.len() != cfg.src_vocab_size || tgt_vocab.len() != cfg.tgt_vocab_size {
            return Err(Error::Version(format!(
                "vocabularies have {}/{} entries, the model expects {}/{}",
                src_vocab.len(),
                tgt_vocab.len(),
                cfg.src_vocab_size,
                cfg.tgt_vocab_size
            )));
        }
        Ok(Self {
            model,
            src_vocab,
            tgt_vocab,
            src_bpe: None,
            tgt_bpe: false,
            beam: 10,
            alpha: 1.0,
        })
    }

    pub fn source_tokens(&self, line: &str) -> Vec<String> {
        match &self.src_bpe {
            Some(bpe) => bpe.encode(line),
            None => line.split_whitespace().map(str::to_owned).collect(),
        }
    }

    pub fn translate(&self, line: &str) -> Result<TextTranslation> {
        let src_tokens = self.source_tokens(line);
        if src_tokens.is_empty() {
            log::warn!("empty source line, emitting empty output");
        }
        let ids = self.src_vocab.encode(&src_tokens);
        let translation = translate_ids(self.model, &ids, self.beam, self.alpha)?;
        let output = self.tgt_vocab.decode(&translation.tokens);
        let text = if self.tgt_bpe {
            BpeModel::decode(&output)
        } else {
            output.join(" ")
        };
        let eos = RESERVED[EOS].to_owned();
        let mut source = src_tokens;
        source.push(eos.clone());
        let mut memory = if translation.memory_rows > 0 {
            self.tgt_vocab.decode(&translation.r2l_tokens)
        } else {
            Vec::new()
        };
        if translation.memory_rows > memory.len() {
            memory.push(eos);
        }
        let trace = AttentionTrace {
            source,
            output,
            memory,
            src_attention: translation.src_attention.clone(),
            tgt_attention: translation.tgt_attention.clone(),
        };
        Ok(TextTranslation {
            text,
            translation,
            trace,
        })
    }
}
