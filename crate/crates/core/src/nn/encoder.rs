use dimnmt_tensor::{ParamId, ParamStore, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::{uniform_param, Ctx, GruCell, ModelConfig};
use crate::error::{Error, Result};
use crate::text::PAD;

/// Source annotations `h` (`n × 2d`) and which rows are real tokens.
#[derive(Clone, Debug)]
pub struct EncoderStates {
    pub annotations: Var,
    pub mask: Vec<bool>,
}

impl EncoderStates {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Source embedding followed by two stacked bidirectional GRU layers.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub embedding: ParamId,
    layers: Vec<(GruCell, GruCell)>,
    hidden: usize,
    vocab: usize,
    dropout_embed: f64,
    dropout_output: f64,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<Self> {
        let r = cfg.init_range;
        let embedding = uniform_param(store, rng, "enc.embedding", cfg.src_vocab_size, cfg.embed, r)?;
        let mut layers = Vec::with_capacity(2);
        let mut input = cfg.embed;
        for l in 0..2 {
            let fwd = GruCell::new(store, rng, &format!("enc.l{l}.fwd"), input, cfg.hidden, r)?;
            let bwd = GruCell::new(store, rng, &format!("enc.l{l}.bwd"), input, cfg.hidden, r)?;
            layers.push((fwd, bwd));
            input = 2 * cfg.hidden;
        }
        Ok(Self {
            embedding,
            layers,
            hidden: cfg.hidden,
            vocab: cfg.src_vocab_size,
            dropout_embed: cfg.dropout_embed,
            dropout_output: cfg.dropout_encoder,
        })
    }

    /// Width of the annotation rows.
    pub fn output_size(&self) -> usize {
        2 * self.hidden
    }

    /// Encodes one row of source ids. Trailing [`PAD`] ids are masked:
    /// they get zero annotations and never reach the recurrence.
    pub fn encode(&self, ctx: &mut Ctx, row: &[usize]) -> Result<EncoderStates> {
        let len = row.iter().position(|&t| t == PAD).unwrap_or(row.len());
        if len == 0 {
            return Err(Error::Usage("cannot encode an empty source row".into()));
        }
        if let Some(&bad) = row[..len].iter().find(|&&t| t >= self.vocab) {
            return Err(Error::Dimension(format!(
                "source id {bad} outside vocabulary of size {}",
                self.vocab
            )));
        }
        let table = ctx.p(self.embedding);
        let emb = ctx.graph.gather_rows(table, &row[..len])?;
        let mut x = ctx.dropout(emb, self.dropout_embed)?;
        for (fwd, bwd) in &self.layers {
            let f = run(ctx, fwd, x, len, false)?;
            let b = run(ctx, bwd, x, len, true)?;
            let cat = ctx.graph.concat_cols(&[f, b])?;
            x = ctx.dropout(cat, self.dropout_output)?;
        }
        let mut mask = vec![true; len];
        if row.len() > len {
            let pad = ctx.zeros(row.len() - len, self.output_size());
            x = ctx.graph.concat_rows(&[x, pad])?;
            mask.resize(row.len(), false);
        }
        Ok(EncoderStates { annotations: x, mask })
    }
}

/// Runs one direction over the first `len` rows of `x`; outputs are in
/// source position order either way.
fn run(ctx: &mut Ctx, cell: &GruCell, x: Var, len: usize, backward: bool) -> Result<Var> {
    let xw = cell.project_inputs(ctx, x)?;
    let mut h = ctx.graph.constant(Tensor::zeros(&[1, cell.hidden_size()]));
    let mut states = vec![h; len];
    let order: Box<dyn Iterator<Item = usize>> = if backward {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    };
    for t in order {
        let xt = ctx.graph.row(xw, t)?;
        h = cell.step_projected(ctx, xt, h)?;
        states[t] = h;
    }
    Ok(ctx.graph.concat_rows(&states)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn encoder() -> (ParamStore, Encoder) {
        let cfg = ModelConfig {
            src_vocab_size: 9,
            tgt_vocab_size: 9,
            embed: 4,
            hidden: 3,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e = Encoder::new(&mut store, &mut rng, &cfg).unwrap();
        (store, e)
    }

    #[test]
    fn one_token_gives_one_row() {
        let (store, e) = encoder();
        let mut ctx = Ctx::inference(&store);
        let s = e.encode(&mut ctx, &[5]).unwrap();
        assert_eq!(ctx.graph.shape(s.annotations), &[1, 6]);
    }

    #[test]
    fn shape_is_n_by_2d() {
        let (store, e) = encoder();
        for n in 1..7 {
            let row: Vec<usize> = (0..n).map(|i| 5 + i % 4).collect();
            let mut ctx = Ctx::inference(&store);
            let s = e.encode(&mut ctx, &row).unwrap();
            assert_eq!(ctx.graph.shape(s.annotations), &[n, 6]);
        }
    }

    #[test]
    fn padding_is_masked_and_inert() {
        let (store, e) = encoder();
        let mut ctx = Ctx::inference(&store);
        let plain = e.encode(&mut ctx, &[5, 6, 7]).unwrap();
        let padded = e.encode(&mut ctx, &[5, 6, 7, PAD, PAD]).unwrap();
        assert_eq!(padded.mask, vec![true, true, true, false, false]);
        let a = ctx.graph.value(plain.annotations).data().to_vec();
        let b = ctx.graph.value(padded.annotations).data();
        assert_eq!(&b[..a.len()], a.as_slice());
        assert!(b[a.len()..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_id_is_an_error() {
        let (store, e) = encoder();
        let mut ctx = Ctx::inference(&store);
        assert!(matches!(e.encode(&mut ctx, &[5, 9]), Err(Error::Dimension(_))));
        assert!(e.encode(&mut ctx, &[]).is_err());
    }

    #[test]
    fn inference_runs_are_bit_identical() {
        let (store, e) = encoder();
        let mut c1 = Ctx::inference(&store);
        let mut c2 = Ctx::inference(&store);
        let a = e.encode(&mut c1, &[5, 8, 6, 7]).unwrap();
        let b = e.encode(&mut c2, &[5, 8, 6, 7]).unwrap();
        assert_eq!(c1.graph.value(a.annotations), c2.graph.value(b.annotations));
    }

    #[test]
    fn backward_stream_follows_reversed_input() {
        // The backward direction read over x equals the forward-direction
        // recurrence of the same cell over reversed x, re-reversed.
        let (store, e) = encoder();
        let (_, bwd) = &e.layers[0];
        let row = [5usize, 8, 6, 7];
        let rev: Vec<usize> = row.iter().rev().copied().collect();
        let mut ctx = Ctx::inference(&store);
        let table = ctx.p(e.embedding);
        let x = ctx.graph.gather_rows(table, &row).unwrap();
        let xr = ctx.graph.gather_rows(table, &rev).unwrap();
        let b = run(&mut ctx, bwd, x, 4, true).unwrap();
        let f = run(&mut ctx, bwd, xr, 4, false).unwrap();
        let f = ctx.graph.reverse_rows(f).unwrap();
        assert_eq!(ctx.graph.value(b), ctx.graph.value(f));
    }
}
