use std::fmt;

use serde::Serialize;

use super::{bleu, ids_line};
use crate::config::RunConfig;
use crate::decode::translate_ids;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::text::SentencePair;
use crate::train::Trainer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoAgreement,
    NoUpdate,
    NoDim,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoAgreement, Variant::NoUpdate, Variant::NoDim];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full model",
            Variant::NoAgreement => "  - agreement regularization",
            Variant::NoUpdate => "  - Update",
            Variant::NoDim => "  - DIM (Address & Read & Update)",
        }
    }

    /// `base` with this variant's switches; other ablation flags cleared.
    pub fn apply(self, base: &RunConfig) -> Result<RunConfig> {
        let mut run = base.clone();
        run.model.dim = true;
        run.train.no_agreement = self == Variant::NoAgreement;
        run.train.no_update = self == Variant::NoUpdate;
        run.train.no_dim = self == Variant::NoDim;
        run.resolve()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    /// Median over seeds.
    pub bleu: f64,
    /// `bleu` minus the full model's.
    pub delta: f64,
    pub parameters: usize,
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub steps: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> &AblationRow {
        self.rows
            .iter()
            .find(|r| r.variant == v)
            .expect("every variant has a row")
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect()
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<34} {:>7} {:>7} {:>9}", "Architecture", "BLEU", "Delta", "Params")?;
        for r in &self.rows {
            let delta = if r.variant == Variant::Full {
                "--".to_owned()
            } else {
                format!("{:+.2}", r.delta)
            };
            writeln!(
                f,
                "{:<34} {:>7.2} {:>7} {:>9}",
                r.variant.label(),
                r.bleu,
                delta,
                r.parameters
            )?;
        }
        Ok(())
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Corpus BLEU of `model` on `pairs`, tokens rendered as ids.
pub fn corpus_bleu(model: &Model, pairs: &[SentencePair], beam: usize, alpha: f64) -> Result<f64> {
    let mut hyps = Vec::with_capacity(pairs.len());
    for p in pairs {
        hyps.push(ids_line(&translate_ids(model, &p.source, beam, alpha)?.tokens));
    }
    let refs: Vec<String> = pairs.iter().map(|p| ids_line(&p.target)).collect();
    Ok(bleu(&hyps, &[refs], false)?.bleu)
}

/// Trains `run` for `train.max_steps` steps and returns the model.
pub fn train_variant(run: RunConfig, pairs: &[SentencePair]) -> Result<Model> {
    let steps = run.train.max_steps;
    let mut trainer = Trainer::new(run, pairs)?;
    while trainer.step() < steps {
        trainer.train_step()?;
    }
    Ok(trainer.model)
}

/// Trains the four variants under every seed with the budget of `base`
/// and reports median valid BLEU.
pub fn ablation_suite(
    base: &RunConfig,
    train: &[SentencePair],
    valid: &[SentencePair],
    seeds: &[u64],
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Usage("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for v in Variant::ALL {
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut parameters = 0;
        for &seed in seeds {
            let mut run = v.apply(base)?;
            run.seed = seed;
            let model = train_variant(run, train)?;
            parameters = model.num_parameters();
            let score = corpus_bleu(&model, valid, base.decode.beam, base.decode.alpha)?;
            log::info!("ablation {v:?} seed {seed}: BLEU {score:.2}");
            per_seed.push(score);
        }
        rows.push(AblationRow {
            variant: v,
            bleu: median(&per_seed),
            delta: 0.0,
            parameters,
            per_seed,
        });
    }
    let full = rows[0].bleu;
    for r in &mut rows {
        r.delta = r.bleu - full;
    }
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        steps: base.train.max_steps,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn variants_set_exactly_one_switch() {
        let mut base = RunConfig::default();
        base.model.src_vocab_size = 10;
        base.model.tgt_vocab_size = 10;
        base.train.no_agreement = true;
        let full = Variant::Full.apply(&base).unwrap();
        assert!(!full.train.no_agreement && full.model.dim);
        let nd = Variant::NoDim.apply(&base).unwrap();
        assert!(!nd.model.dim && !nd.train.no_agreement);
        assert!(Variant::NoUpdate.apply(&base).unwrap().train.no_update);
    }
}
