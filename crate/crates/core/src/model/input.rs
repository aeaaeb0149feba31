use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::frontend::{Token, TokenKind};
use crate::tfg::{Tfg, TfgNodeKind};
use crate::vocab::VocabSet;

/// How a node obtains its initial state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeInit {
    /// Index into [`GraphInput::names`].
    Name(usize),
    /// Index into the node-feature vocabulary.
    Feature(usize),
}

/// A name as the embedding layers see it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameInput {
    pub text: String,
    pub vocab: usize,
    pub segments: Vec<usize>,
}

/// One graph, fully mapped to vocabulary indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphInput {
    pub file_id: String,
    pub init: Vec<NodeInit>,
    pub frozen: Vec<bool>,
    pub predictable: Vec<bool>,
    pub names: Vec<NameInput>,
    /// `(src, dst, edge feature index)`.
    pub edges: Vec<(usize, usize, usize)>,
    /// The file's token sequence, identifiers by name.
    pub tokens: Vec<NodeInit>,
    /// Token position of every IdentNode.
    pub ident_token: Vec<Option<usize>>,
    /// `(node, type index)`; `None` marks a label outside the type vocabulary.
    pub labels: Vec<(usize, Option<usize>)>,
}

impl GraphInput {
    pub fn node_count(&self) -> usize {
        self.init.len()
    }

    /// Map a graph onto `vocab`. `tokens` is the file's token stream and
    /// `ident_token` gives the token position of IdentNodes; both may be
    /// empty for models without the contextual layer.
    pub fn encode(
        g: &Tfg,
        tokens: &[Token],
        ident_token: &BTreeMap<usize, usize>,
        vocab: &VocabSet,
    ) -> Result<GraphInput, ModelError> {
        let mut names: Vec<NameInput> = Vec::new();
        let mut slot: HashMap<String, usize> = HashMap::new();
        let mut name_slot = |text: &str| -> Result<usize, ModelError> {
            if let Some(&s) = slot.get(text) {
                return Ok(s);
            }
            let segments = vocab
                .bpe
                .encode_name(text)
                .iter()
                .map(|s| lookup(&vocab.segments, "segment", s))
                .collect::<Result<Vec<_>, _>>()?;
            let v = lookup(&vocab.names, "name", text)?;
            slot.insert(text.to_string(), names.len());
            names.push(NameInput { text: text.to_string(), vocab: v, segments });
            Ok(names.len() - 1)
        };
        let mut init = Vec::with_capacity(g.nodes.len());
        for n in &g.nodes {
            init.push(match n.kind {
                TfgNodeKind::IdentNode => NodeInit::Name(name_slot(&n.feature)?),
                _ => NodeInit::Feature(lookup(&vocab.node_features, "node feature", &n.feature)?),
            });
        }
        let token_inputs = tokens
            .iter()
            .map(|t| match t.kind {
                TokenKind::Identifier => name_slot(&t.text).map(NodeInit::Name),
                _ => lookup(&vocab.node_features, "node feature", &t.feature()).map(NodeInit::Feature),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let edges = g
            .edges
            .iter()
            .map(|e| {
                vocab
                    .edge_features
                    .get(&e.feature)
                    .map(|f| (e.src, e.dst, f))
                    .ok_or_else(|| ModelError::MissingVocabEntry { kind: "edge feature", entry: e.feature.clone() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut ident_tok = vec![None; g.nodes.len()];
        for (&n, &t) in ident_token {
            if n < ident_tok.len() && t < token_inputs.len() {
                ident_tok[n] = Some(t);
            }
        }
        Ok(GraphInput {
            file_id: g.file_id.clone(),
            init,
            frozen: g.nodes.iter().map(|n| n.kind.is_frozen()).collect(),
            predictable: g.nodes.iter().map(|n| n.predictable).collect(),
            names,
            edges,
            tokens: token_inputs,
            ident_token: ident_tok,
            labels: g.labels.iter().map(|(&n, t)| (n, vocab.types.get(t))).collect(),
        })
    }
}

fn lookup(v: &crate::vocab::Vocabulary, kind: &'static str, s: &str) -> Result<usize, ModelError> {
    v.index_or_unknown(s).ok_or_else(|| ModelError::MissingVocabEntry { kind, entry: s.to_string() })
}

/// Several graphs packed as one disjoint union. Node `i` of graph `g`
/// becomes node `offsets[g] + i`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub node_count: usize,
    pub offsets: Vec<usize>,
    pub file_ids: Vec<String>,
    /// Distinct names of the batch.
    pub names: Vec<NameInput>,
    pub init: Vec<NodeInit>,
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    pub edge_features: Rc<[usize]>,
    /// Whether each node keeps its initial state.
    pub frozen: Rc<[bool]>,
    pub has_in_edges: Vec<bool>,
    pub predictable: Vec<usize>,
    /// Token sequences, one per graph, indexing `tokens`.
    pub token_seqs: Vec<Vec<usize>>,
    pub tokens: Vec<NodeInit>,
    /// Row of `tokens` for each IdentNode.
    pub ident_token: Vec<Option<usize>>,
    /// Labeled nodes whose type is in the vocabulary, and their types.
    pub label_nodes: Rc<[usize]>,
    pub label_types: Rc<[usize]>,
    /// Every labeled node, in graph order, with its type if known.
    pub all_labels: Vec<(usize, Option<usize>)>,
}

impl Batch {
    pub fn pack(graphs: &[&GraphInput]) -> Batch {
        let mut names: Vec<NameInput> = Vec::new();
        let mut slot: HashMap<&str, usize> = HashMap::new();
        let (mut init, mut src, mut dst, mut ef) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let (mut frozen, mut predictable, mut offsets, mut file_ids) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let (mut tokens, mut token_seqs, mut ident_token) = (Vec::new(), Vec::new(), Vec::new());
        let (mut ln, mut lt, mut all_labels) = (Vec::new(), Vec::new(), Vec::new());
        for g in graphs {
            let off = init.len();
            offsets.push(off);
            file_ids.push(g.file_id.clone());
            let local: Vec<usize> = g
                .names
                .iter()
                .map(|n| {
                    *slot.entry(n.text.as_str()).or_insert_with(|| {
                        names.push(n.clone());
                        names.len() - 1
                    })
                })
                .collect();
            let remap = |i: &NodeInit| match *i {
                NodeInit::Name(s) => NodeInit::Name(local[s]),
                f => f,
            };
            init.extend(g.init.iter().map(remap));
            for &(s, d, f) in &g.edges {
                src.push(off + s);
                dst.push(off + d);
                ef.push(f);
            }
            frozen.extend_from_slice(&g.frozen);
            predictable.extend(g.predictable.iter().enumerate().filter(|p| *p.1).map(|p| off + p.0));
            let tok_off = tokens.len();
            tokens.extend(g.tokens.iter().map(remap));
            token_seqs.push((tok_off..tokens.len()).collect::<Vec<_>>());
            ident_token.extend(g.ident_token.iter().map(|t| t.map(|t| tok_off + t)));
            for &(n, t) in &g.labels {
                all_labels.push((off + n, t));
                if let Some(t) = t {
                    ln.push(off + n);
                    lt.push(t);
                }
            }
        }
        let node_count = init.len();
        let mut has_in_edges = vec![false; node_count];
        for &d in &dst {
            has_in_edges[d] = true;
        }
        Batch {
            node_count,
            offsets,
            file_ids,
            names,
            init,
            src: src.into(),
            dst: dst.into(),
            edge_features: ef.into(),
            frozen: frozen.into(),
            has_in_edges,
            predictable,
            token_seqs,
            tokens,
            ident_token,
            label_nodes: ln.into(),
            label_types: lt.into(),
            all_labels,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }
}
