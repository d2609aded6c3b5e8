use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dimnmt::decode::Translator;
use dimnmt::eval::{ablation_suite, bleu, bucket_bleu, export_heatmap, AttentionTrace};
use dimnmt::tasks::{copy_task, noisy_reverse_task, toy_config, toy_vocabulary};
use dimnmt::text::{read_lines, BpeModel, SentencePair, Vocabulary};
use dimnmt::train::{Checkpoint, Trainer};
use dimnmt::{Error, Result, RunConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{lines_text, prepare, read_input, write_output};
use crate::{HeatmapKind, Overrides, ToyTask};

pub fn bpe_train(inputs: &[PathBuf], merges: usize, output: &Path) -> Result<()> {
    let mut lines = Vec::new();
    for p in inputs {
        lines.extend(read_lines(p)?);
    }
    let model = BpeModel::train(&lines, merges)?;
    if model.num_merges() < merges {
        log::warn!("only {} merges were possible", model.num_merges());
    }
    model.save(output)
}

pub fn bpe_apply(model: &Path, input: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let bpe = BpeModel::load(model)?;
    let out: Vec<String> = read_input(input)?.iter().map(|l| bpe.encode(l).join(" ")).collect();
    write_output(output, &lines_text(&out))
}

pub fn bpe_decode(input: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let out: Vec<String> = read_input(input)?
        .iter()
        .map(|l| BpeModel::decode(&l.split_whitespace().collect::<Vec<_>>()))
        .collect();
    write_output(output, &lines_text(&out))
}

pub fn vocab(inputs: &[PathBuf], max_size: Option<usize>, output: &Path) -> Result<()> {
    let mut lines = Vec::new();
    for p in inputs {
        lines.extend(read_lines(p)?);
    }
    let reserved = dimnmt::text::RESERVED.len();
    let v = Vocabulary::build(&lines, max_size.map(|m| m.saturating_sub(reserved)));
    v.save(output)
}

fn token_lines(v: &Vocabulary, rows: impl Iterator<Item = Vec<usize>>) -> String {
    rows.map(|r| v.decode(&r).join(" ") + "\n").collect()
}

#[allow(clippy::too_many_arguments)]
pub fn toy(
    task: ToyTask,
    train: usize,
    valid: usize,
    vocab: usize,
    min_len: usize,
    max_len: usize,
    noise: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n| -> Result<Vec<SentencePair>> {
        match task {
            ToyTask::Copy => copy_task(&mut rng, n, vocab, min_len, max_len),
            ToyTask::Reverse => noisy_reverse_task(&mut rng, n, vocab, min_len, max_len, noise),
        }
    };
    let (tr, va) = (draw(train)?, draw(valid)?);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let v = toy_vocabulary(vocab);
    let write = |name: &str, text: String| {
        let p = out_dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("train.src", token_lines(&v, tr.iter().map(|p| p.source.clone())))?;
    write("train.tgt", token_lines(&v, tr.iter().map(|p| p.target.clone())))?;
    write("valid.src", token_lines(&v, va.iter().map(|p| p.source.clone())))?;
    write("valid.tgt", token_lines(&v, va.iter().map(|p| p.target.clone())))?;
    write("vocab.txt", v.to_text())?;
    let mut run = toy_config(vocab);
    run.seed = seed;
    let d = &mut run.data;
    d.train_source = Some(out_dir.join("train.src"));
    d.train_target = Some(out_dir.join("train.tgt"));
    d.valid_source = Some(out_dir.join("valid.src"));
    d.valid_target = Some(out_dir.join("valid.tgt"));
    d.src_vocab = Some(out_dir.join("vocab.txt"));
    d.tgt_vocab = Some(out_dir.join("vocab.txt"));
    d.out_dir = out_dir.join("run");
    write("config.toml", run.to_toml())?;
    println!("{}", out_dir.join("config.toml").display());
    Ok(())
}

pub fn train(overrides: &Overrides, resume: Option<&Path>) -> Result<()> {
    let ckpt = resume.map(Checkpoint::load).transpose()?;
    let mut run = match &ckpt {
        Some(c) => {
            if overrides.changes_model() || overrides.beam.is_some() || overrides.alpha.is_some() {
                return Err(Error::Usage("--resume accepts no overrides besides --max-steps".into()));
            }
            c.run_config()?
        }
        None => {
            if overrides.config.is_none() {
                return Err(Error::Usage("train needs --config or --resume".into()));
            }
            overrides.base()?
        }
    };
    overrides.apply(&mut run);
    let corpus = prepare(run)?;
    let run = corpus.run;
    let out = run.data.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut trainer = match ckpt {
        Some(mut c) => {
            c.config = run.to_toml();
            Trainer::resume(&c, &corpus.train)?
        }
        None => {
            let p = out.join("config.toml");
            std::fs::write(&p, run.to_toml()).map_err(|e| Error::io(&p, e))?;
            Trainer::new(run, &corpus.train)?
        }
    };
    log::info!(
        "seed {} with {} parameters, {} batches",
        trainer.run_config().seed,
        trainer.model.num_parameters(),
        trainer.num_batches()
    );
    trainer.set_dump_dir(&out);
    let log_path = out.join("metrics.jsonl");
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    trainer.run(&mut log, Some(&out.join("checkpoints")))?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    Ok(())
}

fn load_translator<'m>(
    run: &RunConfig,
    model: &'m dimnmt::nn::Model,
    beam: Option<usize>,
    alpha: Option<f64>,
) -> Result<Translator<'m>> {
    let path = |p: &Option<PathBuf>, key: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("checkpoint config has no {key}")))
    };
    let src = Vocabulary::load(&path(&run.data.src_vocab, "data.src_vocab")?)?;
    let tgt = Vocabulary::load(&path(&run.data.tgt_vocab, "data.tgt_vocab")?)?;
    let mut tr = Translator::new(model, src, tgt)?;
    tr.src_bpe = run.data.src_bpe.as_deref().map(BpeModel::load).transpose()?;
    tr.tgt_bpe = run.data.tgt_bpe.is_some();
    tr.beam = beam.unwrap_or(run.decode.beam);
    tr.alpha = alpha.unwrap_or(run.decode.alpha);
    Ok(tr)
}

pub fn translate(
    checkpoint: &Path,
    input: Option<&Path>,
    output: Option<&Path>,
    beam: Option<usize>,
    alpha: Option<f64>,
    trace: Option<&Path>,
) -> Result<()> {
    let (run, model, _) = Checkpoint::load(checkpoint)?.restore()?;
    let tr = load_translator(&run, &model, beam, alpha)?;
    let mut texts = Vec::new();
    let mut traces = String::new();
    for line in read_input(input)? {
        let t = tr.translate(&line)?;
        texts.push(t.text);
        traces.push_str(&serde_json::to_string(&t.trace).expect("trace serializes"));
        traces.push('\n');
    }
    if let Some(p) = trace {
        std::fs::write(p, traces).map_err(|e| Error::io(p, e))?;
    }
    write_output(output, &lines_text(&texts))
}

pub fn score(hyp: &Path, refs: &[PathBuf], case_insensitive: bool, json: bool) -> Result<()> {
    let hyps = read_lines(hyp)?;
    let sets = refs.iter().map(|p| read_lines(p)).collect::<Result<Vec<_>>>()?;
    let report = bleu(&hyps, &sets, case_insensitive)?;
    if json {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    } else {
        println!("{report}");
    }
    Ok(())
}

pub fn buckets(
    checkpoint: &Path,
    source: &Path,
    reference: &Path,
    edges: &[usize],
    beam: Option<usize>,
    alpha: Option<f64>,
    json: bool,
) -> Result<()> {
    let (run, model, _) = Checkpoint::load(checkpoint)?.restore()?;
    let tr = load_translator(&run, &model, beam, alpha)?;
    let sources = read_lines(source)?;
    let refs = read_lines(reference)?;
    let mut hyps = Vec::with_capacity(sources.len());
    for s in &sources {
        hyps.push(tr.translate(s)?.text);
    }
    let lens: Vec<usize> = sources.iter().map(|s| s.split_whitespace().count()).collect();
    let report = bucket_bleu(&lens, &hyps, &refs, edges, run.decode.case_insensitive)?;
    if json {
        print!("{}", report.to_jsonl());
    } else {
        print!("{report}");
    }
    Ok(())
}

pub fn ablate(overrides: &Overrides, seeds: &[u64], json: Option<&Path>) -> Result<()> {
    let mut run = overrides.base()?;
    overrides.apply(&mut run);
    let corpus = prepare(run)?;
    let valid = corpus
        .valid
        .ok_or_else(|| Error::Config("ablation needs data.valid_source and data.valid_target".into()))?;
    let table = ablation_suite(&corpus.run, &corpus.train, &valid, seeds)?;
    print!("{table}");
    if let Some(p) = json {
        std::fs::write(p, table.to_jsonl()).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

pub fn heatmap(trace: &Path, index: usize, kind: HeatmapKind, output: &Path) -> Result<()> {
    let lines = read_lines(trace)?;
    let line = lines
        .get(index)
        .ok_or_else(|| Error::Usage(format!("trace file has {} entries, asked for {index}", lines.len())))?;
    let t: AttentionTrace = serde_json::from_str(line).map_err(|e| Error::format("attention trace", e.to_string()))?;
    let (weights, cols) = match kind {
        HeatmapKind::Memory => (&t.tgt_attention, &t.memory),
        HeatmapKind::Source => (&t.src_attention, &t.source),
    };
    if weights.len() != t.output.len() {
        return Err(Error::Usage(format!(
            "trace {index} has no {kind:?} attention for its output"
        )));
    }
    let (pgm, tsv) = export_heatmap(weights, &t.output, cols, output)?;
    println!("{}\n{}", pgm.display(), tsv.display());
    Ok(())
}
