//! Type flow graphs.
//!
//! A graph is built per file from its [`Ast`](crate::frontend::Ast): one node
//! per identifier occurrence, token leaf, expression and statement-expression
//! context, plus shared hub nodes per variable symbol and per property name.
//! Every edge comes with a backward dual.

mod builder;
mod graph;
mod scope;

use std::collections::HashMap;

pub use builder::{build_tfg, collect_function_decls, ExtractError, FuncDecl, FuncDeclTable};
pub use graph::{
    edge_feature, split_edge_feature, Direction, EdgeType, Tfg, TfgEdge, TfgFormatError, TfgNode, TfgNodeKind,
};
pub use scope::{resolve_variables, VarKey};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Finding {
    UnpairedEdge { edge: usize },
    BadDirection { edge: usize },
    DanglingNode { edge: usize, node: usize },
    PredictableMismatch { node: usize },
    BadNodeId { index: usize, id: usize },
    LabelOnUnpredictable { node: usize },
    LabelOnMissingNode { node: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.findings.is_empty()
    }
}

pub fn validate_tfg(g: &Tfg) -> ValidationReport {
    let mut findings = Vec::new();
    let n = g.nodes.len();
    for (i, node) in g.nodes.iter().enumerate() {
        if node.id != i {
            findings.push(Finding::BadNodeId { index: i, id: node.id });
        }
        if node.predictable != node.kind.is_predictable() {
            findings.push(Finding::PredictableMismatch { node: i });
        }
    }

    // Multiset of (src, dst, base, dir) so duplicated edges need duplicated duals.
    let mut pending: HashMap<(usize, usize, &str, Direction), Vec<usize>> = HashMap::new();
    for (i, e) in g.edges.iter().enumerate() {
        for node in [e.src, e.dst] {
            if node >= n {
                findings.push(Finding::DanglingNode { edge: i, node });
            }
        }
        let Some((base, dir)) = split_edge_feature(&e.feature) else {
            findings.push(Finding::BadDirection { edge: i });
            continue;
        };
        let other = match dir {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        };
        if let Some(list) = pending.get_mut(&(e.dst, e.src, base, other)) {
            if list.pop().is_some() {
                continue;
            }
        }
        pending.entry((e.src, e.dst, base, dir)).or_default().push(i);
    }
    let mut unpaired: Vec<usize> = pending.into_values().flatten().collect();
    unpaired.sort_unstable();
    findings.extend(unpaired.into_iter().map(|edge| Finding::UnpairedEdge { edge }));

    for &node in g.labels.keys() {
        match g.nodes.get(node) {
            None => findings.push(Finding::LabelOnMissingNode { node }),
            Some(x) if !x.kind.is_predictable() => findings.push(Finding::LabelOnUnpredictable { node }),
            _ => {}
        }
    }
    ValidationReport { findings }
}
