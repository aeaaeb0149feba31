#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use typeflow::frontend::{Span, Token, TokenKind};
use typeflow::model::{Dims, GraphInput, Model, ModelConfig, Preset, VocabSizes};
use typeflow::numeric::{ParamSet, Tensor};
use typeflow::tfg::{Tfg, TfgEdge, TfgNode, TfgNodeKind};
use typeflow::vocab::{bpe_train, segment_vocab, VocabKind, VocabSet, Vocabulary};

/// A five-node graph for `fooBar + xVal;` plus a detached expression node.
pub struct Fixture {
    pub graph: Tfg,
    pub tokens: Vec<Token>,
    pub ident_token: BTreeMap<usize, usize>,
    pub vocab: VocabSet,
}

fn vocab(kind: VocabKind, entries: &[&str]) -> Vocabulary {
    Vocabulary::from_entries(kind, entries.iter().map(|s| s.to_string()).collect()).unwrap()
}

pub fn fixture() -> Fixture {
    let node = |id, kind, feature: &str| TfgNode {
        id,
        kind,
        feature: feature.to_string(),
        ast_ref: None,
        predictable: matches!(kind, TfgNodeKind::IdentNode | TfgNodeKind::ExprNode),
    };
    let nodes = vec![
        node(0, TfgNodeKind::IdentNode, "fooBar"),
        node(1, TfgNodeKind::IdentNode, "xVal"),
        node(2, TfgNodeKind::ExprNode, "Binary"),
        node(3, TfgNodeKind::TokNode, "+"),
        node(4, TfgNodeKind::ExprNode, "Paren"),
    ];
    let mut edges = Vec::new();
    for (s, d, base) in [(0, 2, "(Binary,left)"), (1, 2, "(Binary,right)"), (3, 2, "(Binary,operator)")] {
        edges.push(TfgEdge { src: s, dst: d, feature: format!("{},f)", &base[..base.len() - 1]) });
        edges.push(TfgEdge { src: d, dst: s, feature: format!("{},b)", &base[..base.len() - 1]) });
    }
    let labels = [(0, "number".to_string()), (1, "string".to_string()), (2, "number".to_string())].into();
    let graph = Tfg { file_id: "fixture.ts".into(), nodes, edges, labels };
    let tok = |kind, text: &str, s| Token { kind, text: text.to_string(), span: Span::new(s, s + text.len()) };
    let tokens = vec![
        tok(TokenKind::Identifier, "fooBar", 0),
        tok(TokenKind::Punctuator, "+", 7),
        tok(TokenKind::Identifier, "xVal", 9),
        tok(TokenKind::Punctuator, ";", 13),
    ];
    let bpe = bpe_train(["foo", "bar", "foo", "val", "x", "bar"], 4).unwrap();
    let edge_names: Vec<String> = graph.edges.iter().map(|e| e.feature.clone()).collect();
    let vocab = VocabSet {
        names: vocab(VocabKind::Name, &["fooBar", "<UNK>"]),
        segments: segment_vocab(&bpe),
        node_features: vocab(VocabKind::NodeFeature, &["Binary", "Paren", "+", ";", "<UNK>"]),
        edge_features: Vocabulary::from_entries(VocabKind::EdgeFeature, edge_names).unwrap(),
        types: vocab(VocabKind::Type, &["number", "string", "boolean"]),
        bpe,
    };
    Fixture { graph, tokens, ident_token: [(0, 0), (1, 2)].into(), vocab }
}

impl Fixture {
    pub fn input(&self) -> GraphInput {
        GraphInput::encode(&self.graph, &self.tokens, &self.ident_token, &self.vocab).unwrap()
    }

    pub fn sizes(&self) -> VocabSizes {
        VocabSizes {
            names: self.vocab.names.len(),
            segments: self.vocab.segments.len(),
            node_features: self.vocab.node_features.len(),
            edge_features: self.vocab.edge_features.len(),
        }
    }
}

pub fn small_dims() -> Dims {
    Dims { d_h: 6, d_e: 7, d_seg: 3, d_seg_rnn: 4, d_ctx_rnn: 5, d_name: 6 }
}

/// A model with every parameter, biases included, drawn uniformly from
/// `±[0.1, 0.8]`.
pub fn random_model(p: Preset, k: usize, fx: &Fixture, seed: u64) -> Model<f64> {
    let config = ModelConfig::with_dims(p, fx.vocab.types.len(), k, small_dims());
    let mut m = Model::<f64>::init(config, fx.sizes(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in m.params.values_mut() {
        for v in t.data_mut() {
            let x: f64 = rng.random_range(0.1..0.8);
            *v = if rng.random_bool(0.5) { x } else { -x };
        }
    }
    m
}

// ---- dense reference implementation ----

fn get<'a>(p: &'a ParamSet<f64>, name: &str) -> &'a Tensor<f64> {
    p.get(name).unwrap_or_else(|| panic!("missing {name}"))
}

fn row(t: &Tensor<f64>, r: usize) -> Vec<f64> {
    let c = t.shape()[1];
    t.data()[r * c..(r + 1) * c].to_vec()
}

fn matvec(w: &Tensor<f64>, x: &[f64]) -> Vec<f64> {
    let (o, i) = (w.shape()[0], w.shape()[1]);
    assert_eq!(i, x.len());
    (0..o).map(|r| (0..i).map(|c| w.data()[r * i + c] * x[c]).sum()).collect()
}

fn affine(p: &ParamSet<f64>, w: &str, b: &str, x: &[f64]) -> Vec<f64> {
    let y = matvec(get(p, w), x);
    y.iter().zip(get(p, b).data()).map(|(a, b)| a + b).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gru(p: &ParamSet<f64>, prefix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let d = h.len();
    let xw = affine(p, &format!("{prefix}.w_x"), &format!("{prefix}.b"), x);
    let hu = matvec(get(p, &format!("{prefix}.u_zr")), h);
    let z: Vec<f64> = (0..d).map(|i| sigmoid(xw[i] + hu[i])).collect();
    let r: Vec<f64> = (0..d).map(|i| sigmoid(xw[d + i] + hu[d + i])).collect();
    let rh: Vec<f64> = (0..d).map(|i| r[i] * h[i]).collect();
    let ch = matvec(get(p, &format!("{prefix}.u_h")), &rh);
    (0..d).map(|i| (1.0 - z[i]) * h[i] + z[i] * (xw[2 * d + i] + ch[i]).tanh()).collect()
}

/// Forward and backward GRU states at every position.
fn bigru(p: &ParamSet<f64>, prefix: &str, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = get(p, &format!("{prefix}.fwd.u_h")).shape()[0];
    let mut f = Vec::new();
    let mut h = vec![0.0; d];
    for x in xs {
        h = gru(p, &format!("{prefix}.fwd"), x, &h);
        f.push(h.clone());
    }
    let mut b = vec![Vec::new(); xs.len()];
    let mut h = vec![0.0; d];
    for t in (0..xs.len()).rev() {
        h = gru(p, &format!("{prefix}.bwd"), &xs[t], &h);
        b[t] = h.clone();
    }
    (f, b)
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

fn name_vector(m: &Model<f64>, v: &VocabSet, name: &str) -> Vec<f64> {
    let p = &m.params;
    if !m.config.name_segmentation {
        let i = v.names.index_or_unknown(name).unwrap();
        return row(get(p, "emb.name"), i);
    }
    let xs: Vec<Vec<f64>> = v
        .bpe
        .encode_name(name)
        .iter()
        .map(|s| row(get(p, "emb.seg"), v.segments.index_or_unknown(s).unwrap()))
        .collect();
    let (f, b) = bigru(p, "seg_rnn", &xs);
    affine(p, "seg_rnn.proj.w", "seg_rnn.proj.b", &concat(f.last().unwrap(), &b[0]))
}

/// Logits of every node, computed one node and one edge at a time.
pub fn oracle_logits(m: &Model<f64>, fx: &Fixture) -> Vec<Vec<f64>> {
    let (p, c, g, v) = (&m.params, &m.config, &fx.graph, &fx.vocab);
    let feat = |s: &str| row(get(p, "emb.node"), v.node_features.index_or_unknown(s).unwrap());
    let ctx: Vec<Vec<f64>> = if c.contextual_layer {
        let xs: Vec<Vec<f64>> = fx
            .tokens
            .iter()
            .map(|t| match t.kind {
                TokenKind::Identifier => name_vector(m, v, &t.text),
                _ => feat(&t.feature()),
            })
            .collect();
        let (f, b) = bigru(p, "ctx_rnn", &xs);
        (0..xs.len()).map(|t| affine(p, "ctx_rnn.proj.w", "ctx_rnn.proj.b", &concat(&f[t], &b[t]))).collect()
    } else {
        Vec::new()
    };
    let mut h: Vec<Vec<f64>> = g
        .nodes
        .iter()
        .map(|n| match n.kind {
            TfgNodeKind::IdentNode if c.contextual_layer => ctx[fx.ident_token[&n.id]].clone(),
            TfgNodeKind::IdentNode => name_vector(m, v, &n.feature),
            _ => feat(&n.feature),
        })
        .collect();
    let d = c.d_h;
    for k in 1..=c.k {
        let pre = if c.gnn_type == typeflow::model::GnnType::Recurrent { "mp".to_string() } else { format!("step{k}") };
        let mut next = h.clone();
        for vtx in 0..g.nodes.len() {
            if g.nodes[vtx].kind.is_frozen() {
                continue;
            }
            let incoming: Vec<&TfgEdge> = g.edges.iter().filter(|e| e.dst == vtx).collect();
            let msgs: Vec<Vec<f64>> = incoming
                .iter()
                .map(|e| {
                    if !c.edge_features {
                        return h[e.src].clone();
                    }
                    let ef = row(get(p, "emb.edge"), v.edge_features.get(&e.feature).unwrap());
                    let inner = affine(p, &format!("{pre}.msg.w_mi"), &format!("{pre}.msg.b_mi"), &h[e.src]);
                    let gated: Vec<f64> = inner.iter().zip(&ef).map(|(a, b)| a * b).collect();
                    affine(p, &format!("{pre}.msg.w_mo"), &format!("{pre}.msg.b_mo"), &gated)
                })
                .collect();
            let mut a = vec![0.0; d];
            if !msgs.is_empty() && !c.attention {
                for m in &msgs {
                    for i in 0..d {
                        a[i] += m[i] / msgs.len() as f64;
                    }
                }
            } else if !msgs.is_empty() {
                let w = get(p, &format!("{pre}.att.w")).data();
                let wqk = get(p, &format!("{pre}.att.w_qk"));
                let q = matvec(wqk, &h[vtx]);
                let scores: Vec<f64> = msgs
                    .iter()
                    .map(|m| {
                        let km = matvec(wqk, m);
                        let s: f64 = (0..d).map(|i| w[i] * q[i] + w[d + i] * km[i]).sum();
                        if s > 0.0 {
                            s
                        } else {
                            0.2 * s
                        }
                    })
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
                let mut sum = vec![0.0; d];
                for (m, s) in msgs.iter().zip(&scores) {
                    let alpha = (s - mx).exp() / z;
                    for i in 0..d {
                        sum[i] += alpha * m[i];
                    }
                }
                a = matvec(get(p, &format!("{pre}.att.w_v")), &sum);
            }
            next[vtx] = match c.gnn_type {
                typeflow::model::GnnType::Recurrent => gru(p, "mp.gru", &a, &h[vtx]),
                typeflow::model::GnnType::Convolutional => affine(p, &format!("{pre}.upd.w_h"), &format!("{pre}.upd.b"), &a)
                    .into_iter()
                    .map(|x| x.max(0.0))
                    .collect(),
            };
        }
        h = next;
    }
    h.iter().map(|x| affine(p, "head.w", "head.b", x)).collect()
}
