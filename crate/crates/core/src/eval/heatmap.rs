use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attention recorded while translating one sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    /// Source tokens, EOS included.
    pub source: Vec<String>,
    /// Left-to-right output tokens.
    pub output: Vec<String>,
    /// Labels of the memory rows: right-to-left tokens in generation order.
    pub memory: Vec<String>,
    /// `output × source` weights.
    pub src_attention: Vec<Vec<f64>>,
    /// `output × memory` weights.
    pub tgt_attention: Vec<Vec<f64>>,
}

impl AttentionTrace {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format("attention trace", e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("trace serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// A labeled weight matrix as read back from its text file.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

pub fn gray(w: f64) -> u8 {
    (255.0 * w).round().clamp(0.0, 255.0) as u8
}

fn check_label(l: &str) -> Result<()> {
    if l.contains(['\t', '\n', '\r']) {
        return Err(Error::Usage(format!("heatmap label {l:?} contains a tab or newline")));
    }
    Ok(())
}

/// Writes `<stem>.pgm` (one gray pixel per cell, white = 1) and
/// `<stem>.tsv` (labels plus the weights at full precision).
pub fn export_heatmap(
    weights: &[Vec<f64>],
    rows: &[String],
    cols: &[String],
    stem: &Path,
) -> Result<(PathBuf, PathBuf)> {
    if weights.len() != rows.len() {
        return Err(Error::Dimension(format!(
            "{} weight rows, {} row labels",
            weights.len(),
            rows.len()
        )));
    }
    if let Some(r) = weights.iter().find(|r| r.len() != cols.len()) {
        return Err(Error::Dimension(format!(
            "weight row of {} entries, {} column labels",
            r.len(),
            cols.len()
        )));
    }
    for l in rows.iter().chain(cols) {
        check_label(l)?;
    }
    for (i, r) in weights.iter().enumerate() {
        let s: f64 = r.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            log::warn!("heatmap row {i} sums to {s}, rendering anyway");
        }
    }
    let mut pgm = format!("P5\n{} {}\n255\n", cols.len(), rows.len()).into_bytes();
    pgm.extend(weights.iter().flatten().map(|&w| gray(w)));
    let mut tsv = String::new();
    for c in cols {
        tsv.push('\t');
        tsv.push_str(c);
    }
    tsv.push('\n');
    for (label, r) in rows.iter().zip(weights) {
        tsv.push_str(label);
        for w in r {
            tsv.push('\t');
            tsv.push_str(&w.to_string());
        }
        tsv.push('\n');
    }
    let pgm_path = stem.with_extension("pgm");
    let tsv_path = stem.with_extension("tsv");
    std::fs::write(&pgm_path, pgm).map_err(|e| Error::io(&pgm_path, e))?;
    std::fs::write(&tsv_path, tsv).map_err(|e| Error::io(&tsv_path, e))?;
    Ok((pgm_path, tsv_path))
}

pub fn read_matrix(path: &Path) -> Result<Heatmap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("heatmap matrix", "empty file"))?;
    let cols: Vec<String> = header.split('\t').skip(1).map(str::to_owned).collect();
    let (mut rows, mut weights) = (Vec::new(), Vec::new());
    for line in lines {
        let mut fields = line.split('\t');
        rows.push(fields.next().unwrap_or_default().to_owned());
        let r = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::format("heatmap matrix", format!("bad number {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if r.len() != cols.len() {
            return Err(Error::format("heatmap matrix", "ragged row"));
        }
        weights.push(r);
    }
    Ok(Heatmap { rows, cols, weights })
}

/// Width, height and pixels of a binary 8-bit PGM.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: &str| Error::format("pgm image", d.to_owned());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected an 8-bit P5 image"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimension"));
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let pixels = bytes.get(pos + 1..).unwrap_or_default().to_vec();
    if pixels.len() != w * h {
        return Err(bad("pixel count does not match the header"));
    }
    Ok((w, h, pixels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize, p: &str) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    #[test]
    fn diagonal_is_white_and_files_agree() {
        let dir = tempfile::tempdir().unwrap();
        let w: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        let (pgm, tsv) = export_heatmap(&w, &labels(3, "l"), &labels(3, "r"), &dir.path().join("h")).unwrap();
        let (pw, ph, px) = read_pgm(&pgm).unwrap();
        assert_eq!((pw, ph), (3, 3));
        assert_eq!(px, vec![255, 0, 0, 0, 255, 0, 0, 0, 255]);
        let m = read_matrix(&tsv).unwrap();
        let again: Vec<u8> = m.weights.iter().flatten().map(|&v| gray(v)).collect();
        assert_eq!(again, px);
    }

    #[test]
    fn uniform_is_flat_gray_and_floats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = vec![vec![1.0 / 3.0; 3]; 2];
        let (pgm, tsv) = export_heatmap(&w, &labels(2, "a"), &labels(3, "b"), &dir.path().join("u")).unwrap();
        let (_, _, px) = read_pgm(&pgm).unwrap();
        assert!(px.iter().all(|&p| p == 85));
        let m = read_matrix(&tsv).unwrap();
        assert_eq!(m.weights, w);
        assert_eq!(m.rows, labels(2, "a"));
        assert_eq!(m.cols, labels(3, "b"));
    }

    #[test]
    fn shape_mismatch_and_tab_labels_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("x");
        assert!(export_heatmap(&[vec![1.0]], &labels(2, "a"), &labels(1, "b"), &stem).is_err());
        assert!(export_heatmap(&[vec![1.0]], &["a\tb".into()], &labels(1, "b"), &stem).is_err());
    }
}
