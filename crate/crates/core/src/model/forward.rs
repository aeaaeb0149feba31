use std::rc::Rc;

use super::{Batch, GnnType, Model, ModelError, NodeInit};
use crate::numeric::{birnn_encode, gru_cell, BiRnnOutput, GruNames, Scalar, Tape, Tensor, Var, LEAKY_SLOPE};

/// Intermediate results of one forward pass.
pub struct Forward {
    /// Node states before propagation.
    pub initial: Var,
    /// Node states after the last step.
    pub states: Var,
    /// Attention coefficients per step, one row per edge.
    pub attention: Vec<Var>,
}

impl<T: Scalar> Model<T> {
    /// One vector per distinct name of the batch.
    fn name_vectors(&self, tape: &mut Tape<'_, T>, batch: &Batch) -> Result<Var, ModelError> {
        if !self.config.name_segmentation {
            let emb = tape.param("emb.name")?;
            let idx: Rc<[usize]> = batch.names.iter().map(|n| n.vocab).collect();
            return Ok(tape.gather_rows(emb, idx)?);
        }
        let emb = tape.param("emb.seg")?;
        let mut rows = Vec::new();
        let mut seqs = Vec::with_capacity(batch.names.len());
        for n in &batch.names {
            let start = rows.len();
            rows.extend_from_slice(&n.segments);
            seqs.push((start..rows.len()).collect::<Vec<_>>());
        }
        let x = tape.gather_rows(emb, rows.into())?;
        let (f, b) = (GruNames::new("seg_rnn.fwd"), GruNames::new("seg_rnn.bwd"));
        Ok(birnn_encode(tape, &f, &b, Some(("seg_rnn.proj.w", "seg_rnn.proj.b")), x, &seqs, BiRnnOutput::Summary)?)
    }

    /// Initial state of every node.
    fn initial_states(&self, tape: &mut Tape<'_, T>, batch: &Batch) -> Result<Var, ModelError> {
        let node_emb = tape.param("emb.node")?;
        if batch.names.is_empty() {
            let idx: Rc<[usize]> = batch
                .init
                .iter()
                .map(|i| match *i {
                    NodeInit::Feature(f) => f,
                    NodeInit::Name(_) => unreachable!("no names in batch"),
                })
                .collect();
            return Ok(tape.gather_rows(node_emb, idx)?);
        }
        let names = self.name_vectors(tape, batch)?;
        let n_names = batch.names.len();
        if !self.config.contextual_layer {
            let table = tape.concat_rows(&[names, node_emb])?;
            let idx: Rc<[usize]> = batch
                .init
                .iter()
                .map(|i| match *i {
                    NodeInit::Name(s) => s,
                    NodeInit::Feature(f) => n_names + f,
                })
                .collect();
            return Ok(tape.gather_rows(table, idx)?);
        }
        let table = tape.concat_rows(&[names, node_emb])?;
        let tok_idx: Rc<[usize]> = batch
            .tokens
            .iter()
            .map(|t| match *t {
                NodeInit::Name(s) => s,
                NodeInit::Feature(f) => n_names + f,
            })
            .collect();
        let seqs: Vec<Vec<usize>> = batch.token_seqs.iter().filter(|s| !s.is_empty()).cloned().collect();
        let ctx = if seqs.is_empty() {
            None
        } else {
            let x = tape.gather_rows(table, tok_idx)?;
            let (f, b) = (GruNames::new("ctx_rnn.fwd"), GruNames::new("ctx_rnn.bwd"));
            let proj = Some(("ctx_rnn.proj.w", "ctx_rnn.proj.b"));
            Some(birnn_encode(tape, &f, &b, proj, x, &seqs, BiRnnOutput::Positions)?)
        };
        // Positions output is ordered like the concatenated sequences.
        let mut ctx_row = vec![usize::MAX; batch.tokens.len()];
        for (r, &t) in seqs.iter().flatten().enumerate() {
            ctx_row[t] = r;
        }
        let ctx_rows = ctx_row.iter().filter(|&&r| r != usize::MAX).count();
        let parts = match ctx {
            Some(c) => tape.concat_rows(&[c, node_emb])?,
            None => node_emb,
        };
        let mut idx = Vec::with_capacity(batch.node_count);
        for (n, i) in batch.init.iter().enumerate() {
            idx.push(match *i {
                NodeInit::Name(_) => match batch.ident_token[n] {
                    Some(t) if ctx_row[t] != usize::MAX => ctx_row[t],
                    _ => return Err(ModelError::MissingToken { node: n }),
                },
                NodeInit::Feature(f) => ctx_rows + f,
            });
        }
        Ok(tape.gather_rows(parts, idx.into())?)
    }

    /// Aggregated incoming messages of every node.
    fn aggregate(
        &self,
        tape: &mut Tape<'_, T>,
        batch: &Batch,
        prefix: &str,
        h: Var,
        attention: &mut Vec<Var>,
    ) -> Result<Var, ModelError> {
        let n = batch.node_count;
        let c = &self.config;
        if !c.attention && c.edge_features {
            // Mean aggregation commutes with the output projection.
            let (w_mi, b_mi) = (tape.param(&format!("{prefix}.msg.w_mi"))?, tape.param(&format!("{prefix}.msg.b_mi"))?);
            let (w_mo, b_mo) = (tape.param(&format!("{prefix}.msg.w_mo"))?, tape.param(&format!("{prefix}.msg.b_mo"))?);
            let edge_emb = tape.param("emb.edge")?;
            let p = tape.affine(h, w_mi, b_mi)?;
            let ps = tape.gather_rows(p, batch.src.clone())?;
            let e = tape.gather_rows(edge_emb, batch.edge_features.clone())?;
            let pe = tape.mul(ps, e)?;
            let mean = tape.scatter_mean(pe, batch.dst.clone(), n)?;
            let out = tape.affine(mean, w_mo, b_mo)?;
            let has_in = tape.constant(has_in_column(batch));
            return Ok(tape.row_scale(out, has_in)?);
        }
        let m = self.messages(tape, batch, prefix, h)?;
        if !c.attention {
            return Ok(tape.scatter_mean(m, batch.dst.clone(), n)?);
        }
        let w_qk = tape.param(&format!("{prefix}.att.w_qk"))?;
        let w_v = tape.param(&format!("{prefix}.att.w_v"))?;
        let w = tape.param(&format!("{prefix}.att.w"))?;
        let d = c.d_h;
        let w1 = tape.slice_cols(w, 0, d)?;
        let w2 = tape.slice_cols(w, d, d)?;
        let q = tape.linear(h, w_qk)?;
        let s_node = tape.matmul_ex(q, false, w1, true)?;
        let s_dst = tape.gather_rows(s_node, batch.dst.clone())?;
        let km = tape.linear(m, w_qk)?;
        let s_msg = tape.matmul_ex(km, false, w2, true)?;
        let s = tape.add(s_dst, s_msg)?;
        let s = tape.leaky_relu(s, T::from_f64_lossy(LEAKY_SLOPE));
        let alpha = tape.segment_softmax(s, batch.dst.clone(), n)?;
        attention.push(alpha);
        let weighted = tape.row_scale(m, alpha)?;
        let sum = tape.scatter_sum(weighted, batch.dst.clone(), n)?;
        Ok(tape.linear(sum, w_v)?)
    }

    /// One message per edge, from source to destination.
    fn messages(&self, tape: &mut Tape<'_, T>, batch: &Batch, prefix: &str, h: Var) -> Result<Var, ModelError> {
        if !self.config.edge_features {
            return Ok(tape.gather_rows(h, batch.src.clone())?);
        }
        let (w_mi, b_mi) = (tape.param(&format!("{prefix}.msg.w_mi"))?, tape.param(&format!("{prefix}.msg.b_mi"))?);
        let (w_mo, b_mo) = (tape.param(&format!("{prefix}.msg.w_mo"))?, tape.param(&format!("{prefix}.msg.b_mo"))?);
        let edge_emb = tape.param("emb.edge")?;
        let p = tape.affine(h, w_mi, b_mi)?;
        let ps = tape.gather_rows(p, batch.src.clone())?;
        let e = tape.gather_rows(edge_emb, batch.edge_features.clone())?;
        let pe = tape.mul(ps, e)?;
        Ok(tape.affine(pe, w_mo, b_mo)?)
    }

    /// Initial states followed by `K` propagation steps.
    pub fn forward(&self, tape: &mut Tape<'_, T>, batch: &Batch) -> Result<Forward, ModelError> {
        let initial = self.initial_states(tape, batch)?;
        let mut h = initial;
        let mut attention = Vec::new();
        let gru = GruNames::new("mp.gru");
        for k in 1..=self.config.k {
            let prefix = self.config.step_prefix(k);
            let a = self.aggregate(tape, batch, &prefix, h, &mut attention)?;
            let next = match self.config.gnn_type {
                GnnType::Recurrent => gru_cell(tape, &gru, a, h)?,
                GnnType::Convolutional => {
                    let w = tape.param(&format!("{prefix}.upd.w_h"))?;
                    let b = tape.param(&format!("{prefix}.upd.b"))?;
                    let z = tape.affine(a, w, b)?;
                    tape.relu(z)
                }
            };
            h = tape.select_rows(batch.frozen.clone(), h, next)?;
        }
        Ok(Forward { initial, states: h, attention })
    }

    /// Type logits for the given node states.
    pub fn head(&self, tape: &mut Tape<'_, T>, states: Var) -> Result<Var, ModelError> {
        let w = tape.param("head.w")?;
        let b = tape.param("head.b")?;
        Ok(tape.affine(states, w, b)?)
    }
}

fn has_in_column<T: Scalar>(batch: &Batch) -> Tensor<T> {
    let data = batch.has_in_edges.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
    Tensor::matrix(batch.node_count, 1, data)
}

/// The `k` most probable classes of one logit row, as `(class, probability)`.
/// Equal probabilities keep the lower class index first.
pub fn top_k<T: Scalar>(logits: &[T], k: usize) -> Vec<(usize, T)> {
    let p = crate::numeric::softmax(logits);
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    order.into_iter().take(k).map(|i| (i, p[i])).collect()
}
