//! Byte-pair encoding over whitespace-separated words.
//!
//! Words are split into characters and the final symbol carries the
//! [`END_OF_WORD`] marker, so `"ab"` starts as `["a", "b</w>"]`. Training
//! repeatedly merges the most frequent adjacent symbol pair; equal counts
//! are broken by the lexicographically smallest pair.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";

type Pair = (String, String);

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<Pair>,
    ranks: HashMap<Pair, usize>,
}

fn word_symbols(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = symbols.last_mut() {
        last.push_str(END_OF_WORD);
    }
    symbols
}

fn merge_pair(symbols: &[String], pair: &Pair) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(format!("{}{}", pair.0, pair.1));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

fn pairs_of(symbols: &[String]) -> impl Iterator<Item = Pair> + '_ {
    symbols.windows(2).map(|w| (w[0].clone(), w[1].clone()))
}

impl BpeModel {
    /// Learns up to `num_merges` merge rules from a line-oriented corpus.
    pub fn train<I, S>(lines: I, num_merges: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
        for line in lines {
            for w in line.as_ref().split_whitespace() {
                *word_counts.entry(w.to_owned()).or_default() += 1;
            }
        }
        if word_counts.is_empty() {
            return Err(Error::Usage("cannot train BPE on an empty corpus".into()));
        }

        let mut words: Vec<(Vec<String>, u64)> = word_counts.into_iter().map(|(w, c)| (word_symbols(&w), c)).collect();
        let mut counts: HashMap<Pair, u64> = HashMap::new();
        let mut occurs: HashMap<Pair, HashSet<usize>> = HashMap::new();
        for (idx, (symbols, freq)) in words.iter().enumerate() {
            for p in pairs_of(symbols) {
                *counts.entry(p.clone()).or_default() += freq;
                occurs.entry(p).or_default().insert(idx);
            }
        }

        let mut model = Self::default();
        while model.merges.len() < num_merges {
            let best = counts
                .iter()
                .filter(|(_, &c)| c > 0)
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
                .map(|(p, _)| p.clone());
            let Some(best) = best else { break };

            let mut touched: Vec<usize> = occurs.remove(&best).unwrap_or_default().into_iter().collect();
            touched.sort_unstable();
            for idx in touched {
                let (symbols, freq) = &mut words[idx];
                for p in pairs_of(symbols) {
                    if let Some(c) = counts.get_mut(&p) {
                        *c -= *freq;
                    }
                    if p != best {
                        if let Some(set) = occurs.get_mut(&p) {
                            set.remove(&idx);
                        }
                    }
                }
                *symbols = merge_pair(symbols, &best);
                for p in pairs_of(symbols) {
                    *counts.entry(p.clone()).or_default() += *freq;
                    occurs.entry(p).or_default().insert(idx);
                }
            }
            counts.remove(&best);
            model.push(best);
        }
        Ok(model)
    }

    fn push(&mut self, pair: Pair) {
        self.ranks.insert(pair.clone(), self.merges.len());
        self.merges.push(pair);
    }

    pub fn from_merges(merges: Vec<(String, String)>) -> Result<Self> {
        let mut model = Self::default();
        for pair in merges {
            if model.ranks.contains_key(&pair) {
                return Err(Error::format(
                    "BPE model",
                    format!("duplicate merge rule `{} {}`", pair.0, pair.1),
                ));
            }
            model.push(pair);
        }
        Ok(model)
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    /// Segments one word, applying merges in rule order.
    pub fn encode_word(&self, word: &str) -> Vec<String> {
        let mut symbols = word_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w)))
                .min_by_key(|(r, _)| *r)
                .map(|(_, w)| (w[0].clone(), w[1].clone()));
            match best {
                Some(pair) => symbols = merge_pair(&symbols, &pair),
                None => return symbols,
            }
        }
    }

    pub fn encode(&self, sentence: &str) -> Vec<String> {
        sentence.split_whitespace().flat_map(|w| self.encode_word(w)).collect()
    }

    /// Joins subword tokens back into whitespace-separated words.
    pub fn decode<S: AsRef<str>>(tokens: &[S]) -> String {
        let mut out = String::new();
        for t in tokens {
            let t = t.as_ref();
            match t.strip_suffix(END_OF_WORD) {
                Some(stem) => {
                    out.push_str(stem);
                    out.push(' ');
                }
                None => out.push_str(t),
            }
        }
        if out.ends_with(' ') {
            out.pop();
        }
        out
    }

    /// One rule per line, `left right`, in training order.
    pub fn to_text(&self) -> String {
        self.merges.iter().map(|(a, b)| format!("{a} {b}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut merges = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => merges.push((a.to_owned(), b.to_owned())),
                _ => {
                    return Err(Error::format(
                        "BPE model",
                        format!("line {}: expected `left right`, got {line:?}", n + 1),
                    ))
                }
            }
        }
        Self::from_merges(merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Reads a UTF-8 corpus, one sentence per line.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))
}
