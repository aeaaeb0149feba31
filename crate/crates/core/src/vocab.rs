//! Name segmentation and fixed-size vocabularies.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

pub const UNKNOWN: &str = "<UNK>";
pub const END_OF_WORD: &str = "</w>";

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("cannot build from an empty corpus")]
    EmptyCorpus,
    #[error("malformed vocabulary file: {0}")]
    Format(String),
}

/// Split an identifier into lower-cased subtokens at underscores and case
/// boundaries. A run of capitals stays together until the capital that
/// starts a lower-case word; digits stay with the preceding subtoken.
pub fn split_subtokens(name: &str) -> Vec<String> {
    let chars: Vec<char> = name.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c == '_' || c == '$' {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if c.is_uppercase() && !cur.is_empty() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if !prev.is_uppercase() || next_lower {
                out.push(std::mem::take(&mut cur));
            }
        }
        cur.push(c);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    if out.is_empty() {
        out.push(name.to_string());
    }
    out.into_iter().map(|s| s.to_lowercase()).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpeModel {
    pub merges: Vec<(String, String)>,
    /// Every symbol the training data or a merge produced, characters first.
    #[serde(skip)]
    pub symbols: Vec<String>,
}

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    chars
        .into_iter()
        .enumerate()
        .map(|(i, c)| if i + 1 == n { format!("{c}{END_OF_WORD}") } else { c.to_string() })
        .collect()
}

fn merge_pair(word: &mut Vec<String>, a: &str, b: &str) -> bool {
    let mut changed = false;
    let mut i = 0;
    while i + 1 < word.len() {
        if word[i] == a && word[i + 1] == b {
            let merged = format!("{a}{b}");
            word[i] = merged;
            word.remove(i + 1);
            changed = true;
        }
        i += 1;
    }
    changed
}

/// Learn at most `max_merges` merges over the given words (already split
/// into subtokens). The most frequent adjacent pair is merged first; ties go
/// to the lexicographically smallest pair.
pub fn bpe_train<'a>(words: impl IntoIterator<Item = &'a str>, max_merges: usize) -> Result<BpeModel, VocabError> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in words {
        if !w.is_empty() {
            *counts.entry(w).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }
    let mut corpus: Vec<(Vec<String>, usize)> = counts.into_iter().map(|(w, c)| (word_symbols(w), c)).collect();
    let mut symbols: Vec<String> = {
        let mut s: Vec<String> = corpus.iter().flat_map(|(w, _)| w.iter().cloned()).collect();
        s.sort();
        s.dedup();
        s
    };
    let mut merges = Vec::new();
    while merges.len() < max_merges {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (w, c) in &corpus {
            for p in w.windows(2) {
                *pairs.entry((p[0].as_str(), p[1].as_str())).or_default() += c;
            }
        }
        let best = pairs
            .into_iter()
            .filter(|(_, c)| *c >= 2)
            .min_by(|(pa, ca), (pb, cb)| cb.cmp(ca).then_with(|| pa.cmp(pb)));
        let Some(((a, b), _)) = best else { break };
        let (a, b) = (a.to_string(), b.to_string());
        for (w, _) in &mut corpus {
            merge_pair(w, &a, &b);
        }
        symbols.push(format!("{a}{b}"));
        merges.push((a, b));
    }
    Ok(BpeModel { merges, symbols })
}

impl BpeModel {
    /// Segment one subtoken. The final symbol carries the end-of-word marker.
    pub fn encode(&self, subtoken: &str) -> Vec<String> {
        let mut word = word_symbols(subtoken);
        for (a, b) in &self.merges {
            if word.len() < 2 {
                break;
            }
            merge_pair(&mut word, a, b);
        }
        word
    }

    /// Segment a whole identifier: subtoken split, then BPE per subtoken.
    pub fn encode_name(&self, name: &str) -> Vec<String> {
        split_subtokens(name).iter().flat_map(|s| self.encode(s)).collect()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("BPE serialization is infallible")
    }

    /// Load merges; the symbol inventory is rebuilt from the merge list
    /// alone, so it lacks unmerged characters.
    pub fn from_json_str(s: &str) -> Result<BpeModel, VocabError> {
        let mut m: BpeModel = serde_json::from_str(s).map_err(|e| VocabError::Format(e.to_string()))?;
        m.symbols = m.merges.iter().map(|(a, b)| format!("{a}{b}")).collect();
        Ok(m)
    }
}

pub fn bpe_encode(model: &BpeModel, subtoken: &str) -> Vec<String> {
    model.encode(subtoken)
}

/// Strip end-of-word markers and concatenate.
pub fn join_symbols(symbols: &[String]) -> String {
    symbols.iter().map(|s| s.strip_suffix(END_OF_WORD).unwrap_or(s)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VocabKind {
    Name,
    Segment,
    NodeFeature,
    EdgeFeature,
    Type,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pub kind: VocabKind,
    entries: Vec<String>,
    index: HashMap<String, usize>,
    unknown_index: Option<usize>,
}

impl Vocabulary {
    pub fn from_entries(kind: VocabKind, entries: Vec<String>) -> Result<Vocabulary, VocabError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.clone(), i).is_some() {
                return Err(VocabError::Format(format!("duplicate entry {e:?}")));
            }
        }
        let unknown_index = index.get(UNKNOWN).copied();
        Ok(Vocabulary { kind, entries, index, unknown_index })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn unknown_index(&self) -> Option<usize> {
        self.unknown_index
    }

    pub fn get(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied()
    }

    /// Index of `s`, or the unknown index for out-of-vocabulary entries.
    pub fn index_or_unknown(&self, s: &str) -> Option<usize> {
        self.get(s).or(self.unknown_index)
    }

    pub fn lookup(&self, i: usize) -> Option<&str> {
        self.entries.get(i).map(String::as_str)
    }

    pub fn contains(&self, s: &str) -> bool {
        self.index.contains_key(s)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("vocabulary serialization is infallible")
    }

    pub fn from_json_str(kind: VocabKind, s: &str) -> Result<Vocabulary, VocabError> {
        let entries: Vec<String> = serde_json::from_str(s).map_err(|e| VocabError::Format(e.to_string()))?;
        Vocabulary::from_entries(kind, entries)
    }
}

impl fmt::Display for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} vocabulary ({} entries)", self.kind, self.entries.len())
    }
}

/// The `max_size` most frequent items, ties broken lexicographically, with
/// UNKNOWN appended when requested.
pub fn build_vocab<I, S>(kind: VocabKind, items: I, max_size: usize, with_unknown: bool) -> Result<Vocabulary, VocabError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for it in items {
        *counts.entry(it.as_ref().to_string()).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }
    counts.remove(UNKNOWN);
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut entries: Vec<String> = ranked.into_iter().take(max_size).map(|(s, _)| s).collect();
    if with_unknown {
        entries.push(UNKNOWN.to_string());
    }
    Vocabulary::from_entries(kind, entries)
}

/// Segment vocabulary: the BPE symbol inventory plus UNKNOWN.
pub fn segment_vocab(model: &BpeModel) -> Vocabulary {
    let mut entries: Vec<String> = Vec::with_capacity(model.symbols.len() + 1);
    let mut seen = std::collections::HashSet::new();
    for s in &model.symbols {
        if s != UNKNOWN && seen.insert(s.clone()) {
            entries.push(s.clone());
        }
    }
    entries.push(UNKNOWN.to_string());
    Vocabulary::from_entries(VocabKind::Segment, entries).expect("entries are unique")
}

/// The vocabularies one model is trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct VocabSet {
    pub names: Vocabulary,
    pub segments: Vocabulary,
    pub node_features: Vocabulary,
    pub edge_features: Vocabulary,
    pub types: Vocabulary,
    pub bpe: BpeModel,
}
