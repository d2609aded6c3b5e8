use std::io::Write;
use std::path::{Path, PathBuf};

use dimnmt_tensor::clip_global_norm;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::{joint_loss, lr_at, Adam, Checkpoint, LossWeights};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{Ctx, Model};
use crate::text::{make_batches, Batch, SentencePair};

const SHUFFLE: u64 = 1;
const DROPOUT: u64 = 2;

/// A generator for `(seed, domain, index)`; streams never overlap.
pub fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
    pub r2l_nll: f64,
    pub l2r_nll: f64,
    pub agreement: f64,
    pub tokens: usize,
    pub sentences: usize,
    pub grad_norm: f64,
}

pub struct Trainer {
    run: RunConfig,
    pub model: Model,
    adam: Adam,
    step: u64,
    batches: Vec<Batch>,
    skipped: usize,
    dump_dir: PathBuf,
}

impl Trainer {
    /// Fresh model from `run.seed`. `run` must be resolved.
    pub fn new(run: RunConfig, pairs: &[SentencePair]) -> Result<Self> {
        let mut model = Model::new(run.model.clone(), run.seed)?;
        model.dim_mode = run.dim_mode();
        let adam = Adam::new(&model.params);
        Self::assemble(run, model, adam, 0, pairs)
    }

    /// Continues the run saved in `ckpt`.
    pub fn resume(ckpt: &Checkpoint, pairs: &[SentencePair]) -> Result<Self> {
        let (run, model, adam) = ckpt.restore()?;
        Self::assemble(run, model, adam, ckpt.step, pairs)
    }

    fn assemble(run: RunConfig, model: Model, adam: Adam, step: u64, pairs: &[SentencePair]) -> Result<Self> {
        let b = make_batches(pairs, run.train.token_budget, false);
        if b.skipped > 0 {
            log::warn!("skipped {} sentence pairs longer than the token budget", b.skipped);
        }
        if b.batches.is_empty() {
            return Err(Error::Usage("no trainable sentence pairs".into()));
        }
        Ok(Self {
            dump_dir: run.data.out_dir.clone(),
            run,
            model,
            adam,
            step,
            batches: b.batches,
            skipped: b.skipped,
        })
    }

    pub fn run_config(&self) -> &RunConfig {
        &self.run
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Where the offending batch goes if the loss turns non-finite.
    pub fn set_dump_dir(&mut self, dir: impl Into<PathBuf>) {
        self.dump_dir = dir.into();
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.run, &self.model, &self.adam, self.step)
    }

    /// Batch used at `step`: each epoch visits every batch once in an
    /// order drawn from the seed and the epoch number.
    pub fn batch_for(&self, step: u64) -> (u64, &Batch) {
        let n = self.batches.len() as u64;
        let epoch = step / n;
        let mut order: Vec<usize> = (0..self.batches.len()).collect();
        order.shuffle(&mut stream_rng(self.run.seed, SHUFFLE, epoch));
        (epoch, &self.batches[order[(step % n) as usize]])
    }

    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let (epoch, batch) = self.batch_for(self.step);
        let batch = batch.clone();
        let cfg = &self.run.train;
        let lr = lr_at(self.step, cfg);
        let weights = LossWeights {
            label_smoothing: cfg.label_smoothing,
            lambda: cfg.effective_lambda(),
        };
        let mut ctx = Ctx::train(&self.model.params, stream_rng(self.run.seed, DROPOUT, self.step));
        let outputs = (0..batch.len())
            .map(|i| {
                self.model
                    .forward_sentence(&mut ctx, batch.source_row(i), batch.gold(i))
            })
            .collect::<Result<Vec<_>>>()?;
        let loss = joint_loss(&mut ctx.graph, &outputs, weights)?;
        let value = ctx.graph.value(loss.total).item();
        if !value.is_finite() {
            return Err(self.dump(&batch, value));
        }
        let grads = ctx.graph.backward(loss.total)?;
        let graph = ctx.into_graph();
        let params = &mut self.model.params;
        params.zero_grads();
        params.accumulate_grads(&graph, &grads);
        let grad_norm = params.grad_norm();
        if !grad_norm.is_finite() {
            return Err(self.dump(&batch, grad_norm));
        }
        clip_global_norm(self.model.params.grads_mut(), self.run.train.clip_norm);
        self.adam.step(&mut self.model.params, lr, &self.run.train.adam())?;
        let metrics = StepMetrics {
            step: self.step + 1,
            epoch,
            lr,
            loss: value,
            r2l_nll: loss.r2l_nll,
            l2r_nll: loss.l2r_nll,
            agreement: loss.agreement,
            tokens: loss.tokens,
            sentences: batch.len(),
            grad_norm,
        };
        self.step += 1;
        Ok(metrics)
    }

    fn dump(&self, batch: &Batch, value: f64) -> Error {
        let path = self.dump_dir.join(format!("nonfinite-step-{}.json", self.step));
        let record = json!({
            "step": self.step,
            "value": value.to_string(),
            "indices": batch.indices,
            "source": batch.source.ids,
            "target": batch.target.ids,
        });
        let written = std::fs::create_dir_all(&self.dump_dir)
            .and_then(|_| std::fs::write(&path, serde_json::to_string_pretty(&record).expect("json")));
        if let Err(e) = written {
            log::error!("could not write batch dump {}: {e}", path.display());
        }
        Error::NonFiniteLoss {
            step: self.step,
            dump: path,
        }
    }

    /// Header record of the metrics log.
    pub fn header(&self) -> serde_json::Value {
        json!({
            "record": "header",
            "seed": self.run.seed,
            "start_step": self.step,
            "parameters": self.model.num_parameters(),
            "batches": self.batches.len(),
            "skipped": self.skipped,
            "config": self.run,
        })
    }

    /// Trains until `train.max_steps`, appending one JSON line per step to
    /// `log`. With `ckpt_dir`, checkpoints are written every
    /// `train.checkpoint_every` steps and at the end.
    pub fn run(&mut self, log: &mut dyn Write, ckpt_dir: Option<&Path>) -> Result<()> {
        let io = |e| Error::io("metrics log", e);
        writeln!(log, "{}", self.header()).map_err(io)?;
        let every = self.run.train.checkpoint_every;
        while self.step < self.run.train.max_steps {
            let m = self.train_step()?;
            writeln!(log, "{}", serde_json::to_string(&m).expect("metrics serialize")).map_err(io)?;
            log::info!("step {} loss {:.4} lr {:.3e}", m.step, m.loss, m.lr);
            if let Some(dir) = ckpt_dir {
                if every > 0 && self.step.is_multiple_of(every) && self.step < self.run.train.max_steps {
                    self.save_to(dir)?;
                }
            }
        }
        log.flush().map_err(io)?;
        if let Some(dir) = ckpt_dir {
            self.save_to(dir)?;
        }
        Ok(())
    }

    /// Writes `step-<n>.ckpt` and refreshes `latest.ckpt` in `dir`.
    pub fn save_to(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ckpt = self.checkpoint();
        let path = dir.join(format!("step-{:08}.ckpt", self.step));
        ckpt.save(&path)?;
        ckpt.save(&dir.join("latest.ckpt"))?;
        Ok(path)
    }
}
