use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Padding; never predicted.
pub const PAD: usize = 0;
/// Start symbol of the left-to-right decoder.
pub const BOS: usize = 1;
/// End of sentence, shared by both decoders and the source side.
pub const EOS: usize = 2;
/// Out-of-vocabulary token.
pub const UNK: usize = 3;
/// Start symbol of the right-to-left decoder.
pub const BOS_R2L: usize = 4;

pub const RESERVED: [&str; 5] = ["<pad>", "<s>", "</s>", "<unk>", "<s_r2l>"];

/// Token/id maps. Ids `0..5` are the [`RESERVED`] symbols in that order;
/// ordinary tokens follow, most frequent first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>()).expect("reserved symbols are distinct")
    }
}

impl Vocabulary {
    /// Reserved symbols followed by `tokens` in the given order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(tokens.into_iter().map(Into::into))
        {
            if v.index.contains_key(&t) {
                return Err(Error::format("vocabulary", format!("duplicate token {t:?}")));
            }
            v.index.insert(t.clone(), v.tokens.len());
            v.tokens.push(t);
        }
        Ok(v)
    }

    /// Counts whitespace tokens and keeps at most `max_size` of them
    /// (frequency descending, then lexicographic).
    pub fn build<I, S>(lines: I, max_size: Option<usize>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for line in lines {
            for t in line.as_ref().split_whitespace() {
                if !RESERVED.contains(&t) {
                    *counts.entry(t.to_owned()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(max) = max_size {
            ranked.truncate(max);
        }
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t)).expect("counted tokens are distinct")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn encode_line(&self, line: &str) -> Vec<usize> {
        line.split_whitespace().map(|t| self.id(t)).collect()
    }

    /// Maps ids back to tokens, dropping padding and start/end symbols.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS | BOS_R2L))
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK]).to_owned())
            .collect()
    }

    /// `token<TAB>id` per line.
    pub fn to_text(&self) -> String {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{t}\t{i}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::format("vocabulary", format!("line {}: missing tab", n + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::format("vocabulary", format!("line {}: bad id {id:?}", n + 1)))?;
            if id != n {
                return Err(Error::format(
                    "vocabulary",
                    format!("line {}: ids must be contiguous from 0, found {id}", n + 1),
                ));
            }
            tokens.push(tok.to_owned());
        }
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::format(
                "vocabulary",
                format!("the first ids must be the reserved symbols {RESERVED:?}"),
            ));
        }
        Self::from_tokens(tokens.into_iter().skip(RESERVED.len()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::build(["b a a"], None);
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("<s>"), BOS);
        assert_eq!(v.id("</s>"), EOS);
        assert_eq!(v.id("<unk>"), UNK);
        assert_eq!(v.id("<s_r2l>"), BOS_R2L);
        assert_eq!(v.id("a"), 5);
        assert_eq!(v.id("b"), 6);
    }

    #[test]
    fn unknown_maps_to_unk() {
        let v = Vocabulary::build(["x y"], None);
        assert_eq!(v.encode_line("x zz y"), vec![v.id("x"), UNK, v.id("y")]);
    }

    #[test]
    fn max_size_keeps_most_frequent() {
        let v = Vocabulary::build(["c c c a a b"], Some(2));
        assert_eq!(v.len(), RESERVED.len() + 2);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn file_round_trip_and_validation() {
        let v = Vocabulary::build(["the cat the dog"], None);
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
        assert!(Vocabulary::from_text("<pad>\t0\n").is_err());
        assert!(Vocabulary::from_text("a\t0\n").is_err());
    }

    #[test]
    fn decode_strips_specials() {
        let v = Vocabulary::build(["a b"], None);
        let ids = [BOS, v.id("a"), v.id("b"), EOS, PAD];
        assert_eq!(v.decode(&ids), vec!["a", "b"]);
    }
}
