//! Conditional-GRU decoders and the assembled bidirectional model.
//!
//! One decoder step, given the previous token `y` and state `s`:
//!
//! ```text
//! s̃  = GRU1(embed(y), s)
//! c  = Attend(s̃, h)                 (L2R: c = [c_src; c_tgt] from memory)
//! s' = GRU2(c, s̃)
//! logits = tanh([embed(y); c; s']·W_r + b_r) · Eᵀ + b_o
//! ```
//!
//! `E` is the decoder's own embedding table, so input and output
//! embeddings are tied.

use dimnmt_tensor::{ParamId, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    uniform_param, AdditiveAttention, Addressed, Ctx, Dim, DimGates, DimMemory, DimMode, Encoder, EncoderStates,
    GruCell, Keys, MemorySource, ModelConfig,
};
use crate::error::{Error, Result};
use crate::text::{BOS, BOS_R2L, EOS, PAD};

/// Whether a decoder may produce `id`. Padding and the start symbols are
/// never emitted.
pub fn can_emit(id: usize) -> bool {
    !matches!(id, PAD | BOS | BOS_R2L)
}

/// Index of the largest emittable entry.
pub(crate) fn argmax_emittable(logits: &[f64]) -> usize {
    let mut best = EOS;
    for (i, &v) in logits.iter().enumerate() {
        if can_emit(i) && v > logits[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    R2L,
    L2R,
}

impl Direction {
    pub fn bos(self) -> usize {
        match self {
            Direction::R2L => BOS_R2L,
            Direction::L2R => BOS,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Direction::R2L => "r2l",
            Direction::L2R => "l2r",
        }
    }
}

/// Per-sentence decoder setup: projected source keys and the initial state.
#[derive(Clone, Debug)]
pub struct DecoderInput {
    pub keys: Keys,
    pub init: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// `1 × V`.
    pub logits: Var,
    pub state: Var,
    pub src: Addressed,
    /// Memory weights, present when the step read the memory.
    pub tgt: Option<Addressed>,
}

/// Result of a teacher-forced or greedy run.
#[derive(Clone, Debug)]
pub struct Run {
    /// One row per step.
    pub logits: Var,
    /// Decoder states `s_t`, one row per step.
    pub states: Var,
    pub steps: Vec<StepOutput>,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub direction: Direction,
    pub embedding: ParamId,
    pub init_w: ParamId,
    pub init_b: ParamId,
    pub gru1: GruCell,
    pub src_attn: AdditiveAttention,
    pub dim: Option<Dim>,
    pub gru2: GruCell,
    pub readout_w: ParamId,
    pub readout_b: ParamId,
    pub out_b: ParamId,
    state: usize,
    vocab: usize,
    dropout_embed: f64,
    dropout_readout: f64,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        direction: Direction,
        cfg: &ModelConfig,
        annotation: usize,
        with_dim: bool,
    ) -> Result<Self> {
        let p = direction.prefix();
        let r = cfg.init_range;
        let ds = cfg.dec_hidden;
        let embedding = uniform_param(store, rng, &format!("{p}.embedding"), cfg.tgt_vocab_size, cfg.embed, r)?;
        let init_w = uniform_param(store, rng, &format!("{p}.init.w"), annotation, ds, r)?;
        let init_b = uniform_param(store, rng, &format!("{p}.init.b"), 1, ds, r)?;
        let gru1 = GruCell::new(store, rng, &format!("{p}.gru1"), cfg.embed, ds, r)?;
        let src_attn = AdditiveAttention::new(
            store,
            rng,
            &format!("{p}.src_attn"),
            ds,
            annotation,
            cfg.attention,
            ds,
            cfg.heads,
            r,
        )?;
        let dim = if with_dim {
            let attention = AdditiveAttention::new(
                store,
                rng,
                &format!("{p}.dim.attn"),
                ds,
                ds,
                cfg.attention,
                ds,
                cfg.heads,
                r,
            )?;
            let gates = DimGates::new(store, rng, &format!("{p}.dim"), ds, ds, cfg.dim_gate_bias, r)?;
            Some(Dim { attention, gates })
        } else {
            None
        };
        let context = if with_dim { 2 * ds } else { ds };
        let gru2 = GruCell::new(store, rng, &format!("{p}.gru2"), context, ds, r)?;
        let readout_w = uniform_param(
            store,
            rng,
            &format!("{p}.readout.w"),
            cfg.embed + context + ds,
            cfg.embed,
            r,
        )?;
        let readout_b = uniform_param(store, rng, &format!("{p}.readout.b"), 1, cfg.embed, r)?;
        let out_b = uniform_param(store, rng, &format!("{p}.out.b"), 1, cfg.tgt_vocab_size, r)?;
        Ok(Self {
            direction,
            embedding,
            init_w,
            init_b,
            gru1,
            src_attn,
            dim,
            gru2,
            readout_w,
            readout_b,
            out_b,
            state: ds,
            vocab: cfg.tgt_vocab_size,
            dropout_embed: cfg.dropout_embed,
            dropout_readout: cfg.dropout_readout,
        })
    }

    pub fn state_size(&self) -> usize {
        self.state
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    /// Width of the context fed to GRU2 and the readout.
    pub fn context_size(&self) -> usize {
        self.gru2.input_size()
    }

    /// Initial state `tanh(mean(h)·W + b)` over unmasked rows, plus the
    /// projected source keys.
    pub fn prepare(&self, ctx: &mut Ctx, enc: &EncoderStates) -> Result<DecoderInput> {
        let valid = enc.valid_len();
        if valid == 0 {
            return Err(Error::Usage("decoder needs at least one unmasked source row".into()));
        }
        let weights: Vec<f64> = enc
            .mask
            .iter()
            .map(|&m| if m { 1.0 / valid as f64 } else { 0.0 })
            .collect();
        let avg = ctx.graph.constant(Tensor::row(weights)?);
        let (w, b) = (ctx.p(self.init_w), ctx.p(self.init_b));
        let mean = ctx.graph.matmul(avg, enc.annotations)?;
        let proj = ctx.graph.matmul(mean, w)?;
        let pre = ctx.graph.add(proj, b)?;
        let init = ctx.graph.tanh(pre)?;
        let keys = self.src_attn.prepare(ctx, enc.annotations, Some(&enc.mask))?;
        Ok(DecoderInput { keys, init })
    }

    /// Embeddings (after dropout) and GRU1 input projections for `ids`.
    fn embed(&self, ctx: &mut Ctx, ids: &[usize]) -> Result<(Var, Var)> {
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.vocab) {
            return Err(Error::Dimension(format!(
                "target id {bad} outside vocabulary of size {}",
                self.vocab
            )));
        }
        let table = ctx.p(self.embedding);
        let e = ctx.graph.gather_rows(table, ids)?;
        let e = ctx.dropout(e, self.dropout_embed)?;
        let xw = self.gru1.project_inputs(ctx, e)?;
        Ok((e, xw))
    }

    pub fn readout(&self, ctx: &mut Ctx, emb: Var, c: Var, s: Var) -> Result<Var> {
        let (w, b, e, ob) = (
            ctx.p(self.readout_w),
            ctx.p(self.readout_b),
            ctx.p(self.embedding),
            ctx.p(self.out_b),
        );
        let x = ctx.graph.concat_cols(&[emb, c, s])?;
        let h = ctx.graph.matmul(x, w)?;
        let h = ctx.graph.add(h, b)?;
        let h = ctx.graph.tanh(h)?;
        let h = ctx.dropout(h, self.dropout_readout)?;
        let logits = ctx.graph.matmul_bt(h, e)?;
        Ok(ctx.graph.add(logits, ob)?)
    }

    #[allow(clippy::too_many_arguments)]
    fn step_embedded(
        &self,
        ctx: &mut Ctx,
        input: &DecoderInput,
        emb: Var,
        xw: Var,
        s_prev: Var,
        mem: Option<&mut DimMemory>,
        mode: DimMode,
    ) -> Result<StepOutput> {
        let s_tilde = self.gru1.step_projected(ctx, xw, s_prev)?;
        let (src, c_src) = self.src_attn.attend(ctx, s_tilde, &input.keys)?;
        let (tgt, c) = match (&self.dim, mode) {
            (None, _) => (None, c_src),
            (Some(_), DimMode::Off) => {
                let zero = ctx.zeros(1, self.state);
                (None, ctx.graph.concat_cols(&[c_src, zero])?)
            }
            (Some(dim), _) => {
                let mem = mem.ok_or_else(|| Error::Usage("left-to-right step without an initialized memory".into()))?;
                let (a, c_tgt) = dim.address_read(ctx, mem, s_tilde)?;
                if mode == DimMode::Full {
                    mem.update(ctx, &dim.gates, a.mean, s_prev)?;
                }
                (Some(a), ctx.graph.concat_cols(&[c_src, c_tgt])?)
            }
        };
        let state = self.gru2.step(ctx, c, s_tilde)?;
        let logits = self.readout(ctx, emb, c, state)?;
        Ok(StepOutput {
            logits,
            state,
            src,
            tgt,
        })
    }

    /// One step from token `y_prev`. `mem` is required when this decoder
    /// owns a memory module and `mode` is not [`DimMode::Off`].
    pub fn step(
        &self,
        ctx: &mut Ctx,
        input: &DecoderInput,
        y_prev: usize,
        s_prev: Var,
        mem: Option<&mut DimMemory>,
        mode: DimMode,
    ) -> Result<StepOutput> {
        let (e, xw) = self.embed(ctx, &[y_prev])?;
        self.step_embedded(ctx, input, e, xw, s_prev, mem, mode)
    }

    /// Feeds `BOS, gold...`; row `t` of the logits predicts `gold[t]`,
    /// the last row predicts EOS.
    pub fn teacher_forced(
        &self,
        ctx: &mut Ctx,
        input: &DecoderInput,
        gold: &[usize],
        mut mem: Option<&mut DimMemory>,
        mode: DimMode,
    ) -> Result<Run> {
        let mut ids = Vec::with_capacity(gold.len() + 1);
        ids.push(self.direction.bos());
        ids.extend_from_slice(gold);
        let (emb, xw) = self.embed(ctx, &ids)?;
        let mut s = input.init;
        let mut steps = Vec::with_capacity(ids.len());
        for t in 0..ids.len() {
            let e = ctx.graph.row(emb, t)?;
            let x = ctx.graph.row(xw, t)?;
            let out = self.step_embedded(ctx, input, e, x, s, mem.as_deref_mut(), mode)?;
            s = out.state;
            steps.push(out);
        }
        collect(ctx, steps)
    }

    /// Argmax decoding until EOS or `cap` steps. Returns the emitted tokens
    /// (EOS excluded) and the run, whose rows include the EOS step.
    pub fn greedy(
        &self,
        ctx: &mut Ctx,
        input: &DecoderInput,
        cap: usize,
        mut mem: Option<&mut DimMemory>,
        mode: DimMode,
    ) -> Result<(Vec<usize>, Run)> {
        let mut y = self.direction.bos();
        let mut s = input.init;
        let mut tokens = Vec::new();
        let mut steps = Vec::new();
        for _ in 0..cap.max(1) {
            let out = self.step(ctx, input, y, s, mem.as_deref_mut(), mode)?;
            s = out.state;
            steps.push(out);
            y = argmax_emittable(ctx.graph.value(out.logits).data());
            if y == EOS {
                break;
            }
            tokens.push(y);
        }
        Ok((tokens, collect(ctx, steps)?))
    }
}

fn collect(ctx: &mut Ctx, steps: Vec<StepOutput>) -> Result<Run> {
    let logits: Vec<Var> = steps.iter().map(|s| s.logits).collect();
    let states: Vec<Var> = steps.iter().map(|s| s.state).collect();
    Ok(Run {
        logits: ctx.graph.concat_rows(&logits)?,
        states: ctx.graph.concat_rows(&states)?,
        steps,
    })
}

/// Training-time outputs for one sentence pair.
#[derive(Clone, Debug)]
pub struct SentenceForward {
    /// `(m+1) × V`, predicting the reversed gold then EOS.
    pub r2l_logits: Var,
    /// `(m+1) × V`, predicting the gold then EOS.
    pub l2r_logits: Var,
    pub r2l_targets: Vec<usize>,
    pub l2r_targets: Vec<usize>,
    /// Rows of the memory the left-to-right pass read.
    pub memory_rows: usize,
}

impl SentenceForward {
    pub fn gold_len(&self) -> usize {
        self.l2r_targets.len() - 1
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub r2l: Decoder,
    pub l2r: Decoder,
    /// Run-time use of the memory; ignored when the model has none.
    pub dim_mode: DimMode,
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &mut rng, &cfg)?;
        let annotation = encoder.output_size();
        let r2l = Decoder::new(&mut params, &mut rng, Direction::R2L, &cfg, annotation, false)?;
        let l2r = Decoder::new(&mut params, &mut rng, Direction::L2R, &cfg, annotation, cfg.dim)?;
        Ok(Self {
            cfg,
            params,
            encoder,
            r2l,
            l2r,
            dim_mode: DimMode::Full,
        })
    }

    /// Architecture from `cfg` with the given named values; every
    /// parameter must be present with a matching shape.
    pub fn from_params(cfg: ModelConfig, values: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Self::new(cfg, 0)?;
        if values.len() != model.params.len() {
            return Err(Error::Version(format!(
                "checkpoint has {} parameters, model expects {}",
                values.len(),
                model.params.len()
            )));
        }
        for (name, value) in values {
            let id = model
                .params
                .id(&name)
                .ok_or_else(|| Error::Version(format!("checkpoint parameter `{name}` unknown to this model")))?;
            if model.params.value(id).shape() != value.shape() {
                return Err(Error::Version(format!(
                    "parameter `{name}` has shape {:?} in checkpoint, model expects {:?}",
                    value.shape(),
                    model.params.value(id).shape()
                )));
            }
            model.params.set_value(id, value)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn has_dim(&self) -> bool {
        self.l2r.dim.is_some()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Decode cap for a source of `n` tokens (EOS not counted).
    pub fn length_cap(&self, n: usize) -> usize {
        self.cfg.length_cap(n)
    }

    /// Encodes `source` and prepares both decoders.
    pub fn prepare(&self, ctx: &mut Ctx, source: &[usize]) -> Result<(EncoderStates, DecoderInput, DecoderInput)> {
        let enc = self.encoder.encode(ctx, source)?;
        let r2l = self.r2l.prepare(ctx, &enc)?;
        let l2r = self.l2r.prepare(ctx, &enc)?;
        Ok((enc, r2l, l2r))
    }

    /// Greedy right-to-left pass. The tokens come out in right-to-left
    /// order; the run's states are the memory contents.
    pub fn greedy_r2l(&self, ctx: &mut Ctx, input: &DecoderInput, cap: usize) -> Result<(Vec<usize>, Run)> {
        self.r2l.greedy(ctx, input, cap, None, DimMode::Off)
    }

    fn memory_states(&self, ctx: &mut Ctx, source: &[usize], r2l_in: &DecoderInput, forced: &Run) -> Result<Var> {
        let link = self.cfg.dim_grad_to_r2l;
        match self.cfg.memory_source {
            MemorySource::TeacherForced if link => Ok(forced.states),
            MemorySource::TeacherForced => Ok(ctx.graph.detach(forced.states)),
            MemorySource::Greedy => {
                let cap = self.length_cap(source_tokens(source));
                if link {
                    return Ok(self.greedy_r2l(ctx, r2l_in, cap)?.1.states);
                }
                let mut inf = Ctx::inference(ctx.params());
                let enc = self.encoder.encode(&mut inf, source)?;
                let input = self.r2l.prepare(&mut inf, &enc)?;
                let (_, run) = self.greedy_r2l(&mut inf, &input, cap)?;
                Ok(ctx.graph.constant(inf.graph.value(run.states).clone()))
            }
        }
    }

    /// The three training passes for one pair. `source` is the source row
    /// (ending in EOS, unpadded), `gold` the target tokens.
    pub fn forward_sentence(&self, ctx: &mut Ctx, source: &[usize], gold: &[usize]) -> Result<SentenceForward> {
        let (_, r2l_in, l2r_in) = self.prepare(ctx, source)?;
        let reversed: Vec<usize> = gold.iter().rev().copied().collect();
        let r2l = self.r2l.teacher_forced(ctx, &r2l_in, &reversed, None, DimMode::Off)?;
        let mut memory = None;
        let mut memory_rows = 0;
        if self.has_dim() && self.dim_mode != DimMode::Off {
            let states = self.memory_states(ctx, source, &r2l_in, &r2l)?;
            let mem = DimMemory::new(ctx, states)?;
            memory_rows = mem.rows();
            memory = Some(mem);
        }
        let l2r = self
            .l2r
            .teacher_forced(ctx, &l2r_in, gold, memory.as_mut(), self.dim_mode)?;
        let mut r2l_targets = reversed;
        r2l_targets.push(EOS);
        let mut l2r_targets = gold.to_vec();
        l2r_targets.push(EOS);
        Ok(SentenceForward {
            r2l_logits: r2l.logits,
            l2r_logits: l2r.logits,
            r2l_targets,
            l2r_targets,
            memory_rows,
        })
    }
}

/// Source tokens in a row, not counting a trailing EOS or padding.
pub(crate) fn source_tokens(row: &[usize]) -> usize {
    let len = row.iter().position(|&t| t == PAD).unwrap_or(row.len());
    if len > 0 && row[len - 1] == EOS {
        len - 1
    } else {
        len
    }
}
