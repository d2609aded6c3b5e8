use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use dimnmt::text::{encode_pairs, read_lines, SentencePair, Vocabulary, RESERVED};
use dimnmt::{Error, Result, RunConfig};

/// Lines of `path`, or of stdin.
pub fn read_input(path: Option<&Path>) -> Result<Vec<String>> {
    match path {
        Some(p) => read_lines(p),
        None => {
            let mut text = String::new();
            std::io::stdin()
                .read_to_string(&mut text)
                .map_err(|e| Error::io("<stdin>", e))?;
            Ok(text.lines().map(str::to_owned).collect())
        }
    }
}

pub fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

pub fn lines_text(lines: &[String]) -> String {
    lines.iter().map(|l| format!("{l}\n")).collect()
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("{key} is required")))
}

fn read_parallel(src: &Path, tgt: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let (s, t) = (read_lines(src)?, read_lines(tgt)?);
    if s.len() != t.len() {
        return Err(Error::format(
            "parallel corpus",
            format!(
                "{} has {} lines but {} has {}",
                src.display(),
                s.len(),
                tgt.display(),
                t.len()
            ),
        ));
    }
    Ok((s, t))
}

fn vocabulary(slot: &mut Option<PathBuf>, lines: &[String], max: Option<usize>, out: PathBuf) -> Result<Vocabulary> {
    if let Some(p) = slot {
        return Vocabulary::load(p);
    }
    let v = Vocabulary::build(lines, max.map(|m| m.saturating_sub(RESERVED.len())));
    std::fs::create_dir_all(out.parent().unwrap_or(Path::new("."))).map_err(|e| Error::io(&out, e))?;
    v.save(&out)?;
    log::info!("built vocabulary of {} entries at {}", v.len(), out.display());
    *slot = Some(out);
    Ok(v)
}

/// Encoded training data and the configuration completed with the
/// vocabulary paths and sizes.
pub struct Corpus {
    pub run: RunConfig,
    pub train: Vec<SentencePair>,
    pub valid: Option<Vec<SentencePair>>,
}

pub fn prepare(mut run: RunConfig) -> Result<Corpus> {
    let (src, tgt) = (
        required(&run.data.train_source, "data.train_source")?.to_owned(),
        required(&run.data.train_target, "data.train_target")?.to_owned(),
    );
    let (s, t) = read_parallel(&src, &tgt)?;
    let out = run.data.out_dir.clone();
    let max = run.data.max_vocab;
    let src_vocab = vocabulary(&mut run.data.src_vocab, &s, max, out.join("src.vocab"))?;
    let tgt_vocab = vocabulary(&mut run.data.tgt_vocab, &t, max, out.join("tgt.vocab"))?;
    for (slot, len, key) in [
        (&mut run.model.src_vocab_size, src_vocab.len(), "model.src_vocab_size"),
        (&mut run.model.tgt_vocab_size, tgt_vocab.len(), "model.tgt_vocab_size"),
    ] {
        if *slot != 0 && *slot != len {
            log::warn!("{key} = {} replaced by the vocabulary size {len}", *slot);
        }
        *slot = len;
    }
    let train = encode_pairs(&s, &t, &src_vocab, &tgt_vocab);
    let valid = match (&run.data.valid_source, &run.data.valid_target) {
        (Some(vs), Some(vt)) => {
            let (s, t) = read_parallel(vs, vt)?;
            Some(encode_pairs(&s, &t, &src_vocab, &tgt_vocab))
        }
        (None, None) => None,
        _ => {
            return Err(Error::Config(
                "data.valid_source and data.valid_target go together".into(),
            ))
        }
    };
    Ok(Corpus {
        run: run.resolve()?,
        train,
        valid,
    })
}
