use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{preprocess_type_label, PipelineError, MAX_FILE_TOKENS};
use crate::frontend::{annotations_by_node, parse, strip_annotations, tokenize, Token, TokenKind};
use crate::model::{GraphInput, ModelError, VocabSizes};
use crate::tfg::{build_tfg, collect_function_decls, Tfg, TfgNodeKind};
use crate::vocab::{bpe_train, build_vocab, segment_vocab, split_subtokens, VocabError, VocabKind, VocabSet};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceFile {
    pub name: String,
    pub text: String,
}

/// Every `.ts`/`.js` file directly inside `dir`, sorted by name.
pub fn load_sources(dir: &Path) -> std::io::Result<Vec<SourceFile>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if path.is_file() && (ext == "ts" || ext == "js") {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            out.push(SourceFile { name, text: std::fs::read_to_string(&path)? });
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

/// One file after annotation stripping, parsing and graph construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractedFile {
    pub file_id: String,
    /// Graph with canonical type labels on IdentNodes.
    pub graph: Tfg,
    /// Tokens of the stripped source.
    pub tokens: Vec<Token>,
    /// Token position of each IdentNode.
    pub ident_token: BTreeMap<usize, usize>,
    /// Tokens of the file as given, annotations included.
    pub token_count: usize,
}

pub fn extract_file(file_id: &str, source: &str) -> Result<ExtractedFile, PipelineError> {
    let fe = |source| PipelineError::Frontend { file: file_id.to_string(), source };
    let token_count = tokenize(source).map_err(fe)?.len();
    let (stripped, spans) = strip_annotations(source).map_err(fe)?;
    let tokens = tokenize(&stripped).map_err(fe)?;
    let ast = parse(&tokens).map_err(fe)?;
    let decls = collect_function_decls(&ast);
    let mut graph = build_tfg(&ast, &decls, file_id)
        .map_err(|source| PipelineError::Extract { file: file_id.to_string(), source })?;
    let labels: BTreeMap<_, _> = annotations_by_node(&ast, &spans)
        .into_iter()
        .filter_map(|(id, raw)| preprocess_type_label(&raw).map(|t| (id, t)))
        .collect();
    graph.set_labels_from_ast(&labels);
    let by_span: HashMap<_, usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.kind == TokenKind::Identifier)
        .map(|(i, t)| (t.span, i))
        .collect();
    let ident_token = graph
        .nodes
        .iter()
        .filter(|n| n.kind == TfgNodeKind::IdentNode)
        .filter_map(|n| n.ast_ref.and_then(|a| by_span.get(&ast.node(a).span)).map(|&t| (n.id, t)))
        .collect();
    Ok(ExtractedFile { file_id: file_id.to_string(), graph, tokens, ident_token, token_count })
}

/// Fractions of files held out, and the shuffle seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { valid: 0.1, test: 0.1, seed: 0 }
    }
}

/// Seeded shuffle, then `test` and `valid` shares (rounded) off the front;
/// the rest trains. Each split keeps the input order.
pub fn split_files<T>(items: Vec<T>, spec: &SplitSpec) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_test = ((n as f64) * spec.test).round() as usize;
    let n_valid = (((n as f64) * spec.valid).round() as usize).min(n - n_test.min(n));
    let mut which = vec![0u8; n];
    for (rank, &i) in order.iter().enumerate() {
        which[i] = if rank < n_test {
            2
        } else if rank < n_test + n_valid {
            1
        } else {
            0
        };
    }
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (item, w) in items.into_iter().zip(which) {
        match w {
            0 => train.push(item),
            1 => valid.push(item),
            _ => test.push(item),
        }
    }
    (train, valid, test)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLimits {
    pub names: usize,
    pub merges: usize,
    pub types: usize,
}

impl Default for VocabLimits {
    fn default() -> Self {
        VocabLimits { names: 10000, merges: 10000, types: 100 }
    }
}

/// Vocabularies and BPE merges from training files alone.
pub fn build_vocabs(train: &[ExtractedFile], limits: &VocabLimits) -> Result<VocabSet, VocabError> {
    let mut names = Vec::new();
    let mut features = Vec::new();
    let mut edges = Vec::new();
    let mut types = Vec::new();
    for f in train {
        for n in &f.graph.nodes {
            match n.kind {
                TfgNodeKind::IdentNode => names.push(n.feature.as_str()),
                _ => features.push(n.feature.clone()),
            }
        }
        for t in &f.tokens {
            match t.kind {
                TokenKind::Identifier => names.push(t.text.as_str()),
                _ => features.push(t.feature()),
            }
        }
        edges.extend(f.graph.edges.iter().map(|e| e.feature.as_str()));
        types.extend(f.graph.labels.values().map(String::as_str));
    }
    let subtokens: Vec<String> = names.iter().flat_map(|n| split_subtokens(n)).collect();
    let bpe = bpe_train(subtokens.iter().map(String::as_str), limits.merges)?;
    Ok(VocabSet {
        names: build_vocab(VocabKind::Name, &names, limits.names, true)?,
        segments: segment_vocab(&bpe),
        node_features: build_vocab(VocabKind::NodeFeature, &features, usize::MAX, true)?,
        edge_features: build_vocab(VocabKind::EdgeFeature, &edges, usize::MAX, false)?,
        types: build_vocab(VocabKind::Type, types.iter().filter(|t| **t != "any"), limits.types, false)?,
        bpe,
    })
}

/// A file ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub file_id: String,
    /// The graph as fed to the model, after any edge removal.
    pub graph: Tfg,
    pub input: GraphInput,
    /// Edges dropped for out-of-vocabulary features, duals included.
    pub removed_edges: usize,
}

impl Example {
    pub fn trainable_labels(&self) -> usize {
        self.input.labels.iter().filter(|l| l.1.is_some()).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
    pub vocab: VocabSet,
    /// Label counts per type over the training split.
    pub type_counts: BTreeMap<String, usize>,
}

impl Dataset {
    pub fn vocab_sizes(&self) -> VocabSizes {
        vocab_sizes(&self.vocab)
    }
}

pub(crate) fn vocab_sizes(v: &VocabSet) -> VocabSizes {
    VocabSizes {
        names: v.names.len(),
        segments: v.segments.len(),
        node_features: v.node_features.len(),
        edge_features: v.edge_features.len(),
    }
}

/// Encode one file; held-out files lose edges whose feature is unknown.
pub fn example(f: &ExtractedFile, vocab: &VocabSet, held_out: bool) -> Result<Example, ModelError> {
    let mut graph = f.graph.clone();
    let removed_edges = if held_out { graph.retain_edges(|feat| vocab.edge_features.contains(feat)) } else { 0 };
    let input = GraphInput::encode(&graph, &f.tokens, &f.ident_token, vocab)?;
    Ok(Example { file_id: f.file_id.clone(), graph, input, removed_edges })
}

/// Encode already split files against `vocab`, which must come from `train`.
pub fn make_dataset(
    train: &[ExtractedFile],
    valid: &[ExtractedFile],
    test: &[ExtractedFile],
    vocab: VocabSet,
) -> Result<Dataset, ModelError> {
    let enc = |fs: &[ExtractedFile], held_out| fs.iter().map(|f| example(f, &vocab, held_out)).collect::<Result<Vec<_>, _>>();
    let (tr, va, te) = (enc(train, false)?, enc(valid, true)?, enc(test, true)?);
    let mut type_counts = BTreeMap::new();
    for f in train {
        for t in f.graph.labels.values() {
            *type_counts.entry(t.clone()).or_insert(0) += 1;
        }
    }
    Ok(Dataset { train: tr, valid: va, test: te, vocab, type_counts })
}

/// Extract every source (in parallel) and drop files that fail or exceed
/// the token limit. Returns the kept files in input order and one
/// diagnostic per dropped file.
pub fn extract_sources(sources: &[SourceFile]) -> (Vec<ExtractedFile>, Vec<String>) {
    let results: Vec<Result<ExtractedFile, PipelineError>> =
        sources.par_iter().map(|s| extract_file(&s.name, &s.text)).collect();
    let mut kept = Vec::new();
    let mut diagnostics = Vec::new();
    for r in results {
        match r {
            Ok(f) if f.token_count > MAX_FILE_TOKENS => {
                diagnostics.push(format!("{}: {} tokens, over the {MAX_FILE_TOKENS} limit", f.file_id, f.token_count));
            }
            Ok(f) => kept.push(f),
            Err(e) => diagnostics.push(e.to_string()),
        }
    }
    for d in &diagnostics {
        log::warn!("skipped {d}");
    }
    (kept, diagnostics)
}

/// Extract, split, build vocabularies from the training split and encode.
/// Returns the dataset and one diagnostic per skipped file.
pub fn prepare(
    sources: &[SourceFile],
    split: &SplitSpec,
    limits: &VocabLimits,
) -> Result<(Dataset, Vec<String>), PipelineError> {
    let (kept, diagnostics) = extract_sources(sources);
    let (train, valid, test) = split_files(kept, split);
    if train.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let vocab = build_vocabs(&train, limits)?;
    Ok((make_dataset(&train, &valid, &test, vocab)?, diagnostics))
}
