use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::numeric::GruNames;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GnnType {
    Recurrent,
    Convolutional,
}

/// The eight architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preset {
    CGnn,
    RGnn,
    RGat,
    RGnnNs,
    RGnnCtx,
    RGnnNsCtx,
    RGnnNef,
    RGatNef,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::CGnn,
        Preset::RGnn,
        Preset::RGat,
        Preset::RGnnNs,
        Preset::RGnnCtx,
        Preset::RGnnNsCtx,
        Preset::RGnnNef,
        Preset::RGatNef,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::CGnn => "C-GNN",
            Preset::RGnn => "R-GNN",
            Preset::RGat => "R-GAT",
            Preset::RGnnNs => "R-GNN_NS",
            Preset::RGnnCtx => "R-GNN_CTX",
            Preset::RGnnNsCtx => "R-GNN_NS-CTX",
            Preset::RGnnNef => "R-GNN_NEF",
            Preset::RGatNef => "R-GAT_NEF",
        }
    }

    /// Lower-case command-line spelling, e.g. `rgnn-ns-ctx`.
    pub fn key(self) -> &'static str {
        match self {
            Preset::CGnn => "cgnn",
            Preset::RGnn => "rgnn",
            Preset::RGat => "rgat",
            Preset::RGnnNs => "rgnn-ns",
            Preset::RGnnCtx => "rgnn-ctx",
            Preset::RGnnNsCtx => "rgnn-ns-ctx",
            Preset::RGnnNef => "rgnn-nef",
            Preset::RGatNef => "rgat-nef",
        }
    }

    /// `(gnn_type, attention, name_segmentation, contextual_layer, edge_features)`.
    pub fn flags(self) -> (GnnType, bool, bool, bool, bool) {
        use GnnType::*;
        match self {
            Preset::CGnn => (Convolutional, false, false, false, true),
            Preset::RGnn => (Recurrent, false, false, false, true),
            Preset::RGat => (Recurrent, true, false, false, true),
            Preset::RGnnNs => (Recurrent, false, true, false, true),
            Preset::RGnnCtx => (Recurrent, false, false, true, true),
            Preset::RGnnNsCtx => (Recurrent, false, true, true, true),
            Preset::RGnnNef => (Recurrent, false, false, false, false),
            Preset::RGatNef => (Recurrent, true, false, false, false),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        Preset::ALL
            .into_iter()
            .find(|p| p.key() == s || p.name() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown preset {s:?}")))
    }
}

/// Layer widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_h: usize,
    pub d_e: usize,
    pub d_seg: usize,
    pub d_seg_rnn: usize,
    pub d_ctx_rnn: usize,
    pub d_name: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims { d_h: 128, d_e: 256, d_seg: 32, d_seg_rnn: 32, d_ctx_rnn: 128, d_name: 128 }
    }
}

impl Dims {
    /// Every width set to `d` (segment widths to `d / 2`, at least 2).
    pub fn uniform(d: usize) -> Self {
        let s = (d / 2).max(2);
        Dims { d_h: d, d_e: 2 * d, d_seg: s, d_seg_rnn: s, d_ctx_rnn: d, d_name: d }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gnn_type: GnnType,
    pub attention: bool,
    pub name_segmentation: bool,
    pub contextual_layer: bool,
    pub edge_features: bool,
    #[serde(rename = "K")]
    pub k: usize,
    pub d_h: usize,
    pub d_e: usize,
    pub d_seg: usize,
    pub d_seg_rnn: usize,
    pub d_ctx_rnn: usize,
    pub d_name: usize,
    pub type_count: usize,
}

/// Sizes of the vocabularies the embedding tables index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub names: usize,
    pub segments: usize,
    pub node_features: usize,
    pub edge_features: usize,
}

impl ModelConfig {
    pub fn preset(p: Preset, type_count: usize) -> Self {
        ModelConfig::with_dims(p, type_count, 8, Dims::default())
    }

    pub fn with_dims(p: Preset, type_count: usize, k: usize, d: Dims) -> Self {
        let (gnn_type, attention, name_segmentation, contextual_layer, edge_features) = p.flags();
        ModelConfig {
            gnn_type,
            attention,
            name_segmentation,
            contextual_layer,
            edge_features,
            k,
            d_h: d.d_h,
            d_e: d.d_e,
            d_seg: d.d_seg,
            d_seg_rnn: d.d_seg_rnn,
            d_ctx_rnn: d.d_ctx_rnn,
            d_name: d.d_name,
            type_count,
        }
    }

    /// The preset whose flags this configuration carries, if any.
    pub fn preset_of(&self) -> Option<Preset> {
        Preset::ALL.into_iter().find(|p| {
            p.flags()
                == (self.gnn_type, self.attention, self.name_segmentation, self.contextual_layer, self.edge_features)
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.preset_of().is_none() {
            return Err(ModelError::Config("flag combination is not one of the eight presets".into()));
        }
        if self.d_name != self.d_h {
            return Err(ModelError::Config(format!("d_name ({}) must equal d_h ({})", self.d_name, self.d_h)));
        }
        let widths = [self.d_h, self.d_e, self.d_seg, self.d_seg_rnn, self.d_ctx_rnn];
        if widths.contains(&0) || self.type_count == 0 {
            return Err(ModelError::Config("zero width".into()));
        }
        Ok(())
    }

    /// Parameter-name prefix of propagation step `k` (1-based). Recurrent
    /// models share one prefix across all steps.
    pub fn step_prefix(&self, k: usize) -> String {
        match self.gnn_type {
            GnnType::Recurrent => "mp".to_string(),
            GnnType::Convolutional => format!("step{k}"),
        }
    }

    /// Name and shape of every parameter this configuration owns.
    pub fn param_shapes(&self, v: &VocabSizes) -> BTreeMap<String, Vec<usize>> {
        let mut s = BTreeMap::new();
        let (dh, de) = (self.d_h, self.d_e);
        s.insert("emb.node".into(), vec![v.node_features, dh]);
        if self.name_segmentation {
            s.insert("emb.seg".into(), vec![v.segments, self.d_seg]);
            add_birnn(&mut s, "seg_rnn", self.d_seg, self.d_seg_rnn, dh);
        } else {
            s.insert("emb.name".into(), vec![v.names, self.d_name]);
        }
        if self.contextual_layer {
            add_birnn(&mut s, "ctx_rnn", dh, self.d_ctx_rnn, dh);
        }
        if self.edge_features {
            s.insert("emb.edge".into(), vec![v.edge_features, de]);
        }
        let steps: Vec<usize> = match self.gnn_type {
            GnnType::Recurrent => vec![1],
            GnnType::Convolutional => (1..=self.k).collect(),
        };
        for k in steps {
            let p = self.step_prefix(k);
            if self.edge_features {
                s.insert(format!("{p}.msg.w_mi"), vec![de, dh]);
                s.insert(format!("{p}.msg.b_mi"), vec![de]);
                s.insert(format!("{p}.msg.w_mo"), vec![dh, de]);
                s.insert(format!("{p}.msg.b_mo"), vec![dh]);
            }
            if self.attention {
                s.insert(format!("{p}.att.w_qk"), vec![dh, dh]);
                s.insert(format!("{p}.att.w_v"), vec![dh, dh]);
                s.insert(format!("{p}.att.w"), vec![2 * dh]);
            }
            match self.gnn_type {
                GnnType::Recurrent => {
                    let g = GruNames::new(&format!("{p}.gru"));
                    for (n, shape) in g.all().iter().zip(GruNames::shapes(dh, dh)) {
                        s.insert(n.to_string(), shape);
                    }
                }
                GnnType::Convolutional => {
                    s.insert(format!("{p}.upd.w_h"), vec![dh, dh]);
                    s.insert(format!("{p}.upd.b"), vec![dh]);
                }
            }
        }
        s.insert("head.w".into(), vec![self.type_count, dh]);
        s.insert("head.b".into(), vec![self.type_count]);
        s
    }
}

fn add_birnn(s: &mut BTreeMap<String, Vec<usize>>, prefix: &str, input: usize, hidden: usize, out: usize) {
    for dir in ["fwd", "bwd"] {
        let g = GruNames::new(&format!("{prefix}.{dir}"));
        for (n, shape) in g.all().iter().zip(GruNames::shapes(input, hidden)) {
            s.insert(n.to_string(), shape);
        }
    }
    s.insert(format!("{prefix}.proj.w"), vec![out, 2 * hidden]);
    s.insert(format!("{prefix}.proj.b"), vec![out]);
}
