//! Single-file checkpoints. The byte layout is documented in
//! `docs/checkpoint-format.md`.

use std::path::Path;

use dimnmt_tensor::Tensor;

use super::Adam;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::Model;

pub const MAGIC: &[u8; 8] = b"DIMNMTCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// The run configuration as TOML, stored verbatim.
    pub config: String,
    pub step: u64,
    pub adam_t: u64,
    /// `param/<name>`, `adam_m/<name>`, `adam_v/<name>` entries.
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn capture(run: &RunConfig, model: &Model, adam: &Adam, step: u64) -> Self {
        let mut tensors = Vec::with_capacity(3 * model.params.len());
        for (_, p) in model.params.iter() {
            tensors.push((format!("param/{}", p.name()), p.value().clone()));
        }
        for (prefix, moments) in [("adam_m", &adam.m), ("adam_v", &adam.v)] {
            for ((_, p), t) in model.params.iter().zip(moments) {
                tensors.push((format!("{prefix}/{}", p.name()), t.clone()));
            }
        }
        Self {
            config: run.to_toml(),
            step,
            adam_t: adam.t,
            tensors,
        }
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::from_toml(&self.config)
    }

    /// Rebuilds the model (and its optimizer state) described by this
    /// checkpoint.
    pub fn restore(&self) -> Result<(RunConfig, Model, Adam)> {
        let run = self.run_config()?;
        let take = |prefix: &str| -> Vec<(String, Tensor)> {
            self.tensors
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(prefix).map(|n| (n.to_string(), t.clone())))
                .collect()
        };
        let mut model = Model::from_params(run.model.clone(), take("param/"))?;
        model.dim_mode = run.dim_mode();
        let mut adam = Adam::new(&model.params);
        adam.t = self.adam_t;
        for (prefix, slot) in [("adam_m/", &mut adam.m), ("adam_v/", &mut adam.v)] {
            let found = take(prefix);
            if found.len() != model.params.len() {
                return Err(Error::Version(format!(
                    "checkpoint has {} `{prefix}` moments for {} parameters",
                    found.len(),
                    model.params.len()
                )));
            }
            for (name, t) in found {
                let id = model
                    .params
                    .id(&name)
                    .ok_or_else(|| Error::Version(format!("moment for unknown parameter `{name}`")))?;
                if t.shape() != model.params.value(id).shape() {
                    return Err(Error::Version(format!("moment `{prefix}{name}` has the wrong shape")));
                }
                slot[id.index()] = t;
            }
        }
        Ok((run, model, adam))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.adam_t.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic bytes"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version(format!(
                "checkpoint format version {version}, this build reads version {VERSION}"
            )));
        }
        let len = r.u32()? as usize;
        let config =
            String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format("checkpoint", "config is not UTF-8"))?;
        let step = r.u64()?;
        let adam_t = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::format("checkpoint", "tensor name is not UTF-8"))?;
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(
                    n.checked_mul(8)
                        .ok_or_else(|| Error::format("checkpoint", "tensor too large"))?,
                )?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::format("checkpoint", e.to_string()))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes after tensor table"));
        }
        Ok(Self {
            config,
            step,
            adam_t,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", "file truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config: "seed = 3\n".into(),
            step: 42,
            adam_t: 41,
            tensors: vec![
                (
                    "param/a".into(),
                    Tensor::matrix(2, 2, vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
                ),
                ("adam_m/a".into(), Tensor::row(vec![0.1, 0.2]).unwrap()),
            ],
        }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.tensors[0].1.data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn unknown_version_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Version(_))));
    }

    #[test]
    fn truncation_and_bad_magic_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { .. })));
    }
}
