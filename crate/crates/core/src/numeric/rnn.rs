use std::rc::Rc;

use super::{NumericError, Scalar, Tape, Tensor, Var};

/// Parameter names of one GRU: `w_x` is `[3d, in]`, `u_zr` is `[2d, d]`,
/// `u_h` is `[d, d]`, `b` is `[3d]`; gate blocks are ordered update, reset,
/// candidate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GruNames {
    pub w_x: String,
    pub u_zr: String,
    pub u_h: String,
    pub b: String,
}

impl GruNames {
    pub fn new(prefix: &str) -> Self {
        GruNames {
            w_x: format!("{prefix}.w_x"),
            u_zr: format!("{prefix}.u_zr"),
            u_h: format!("{prefix}.u_h"),
            b: format!("{prefix}.b"),
        }
    }

    /// Shapes of `[w_x, u_zr, u_h, b]` for the given widths.
    pub fn shapes(input: usize, hidden: usize) -> [Vec<usize>; 4] {
        [vec![3 * hidden, input], vec![2 * hidden, hidden], vec![hidden, hidden], vec![3 * hidden]]
    }

    pub fn all(&self) -> [&str; 4] {
        [&self.w_x, &self.u_zr, &self.u_h, &self.b]
    }
}

/// One GRU step given the precomputed input projection `xw = x w_x^T + b`:
///
/// ```text
/// z = sigmoid(xw_z + h u_z^T)
/// r = sigmoid(xw_r + h u_r^T)
/// c = tanh(xw_c + (r * h) u_h^T)
/// h' = (1 - z) * h + z * c
/// ```
fn gru_step<T: Scalar>(tape: &mut Tape<'_, T>, g: &GruNames, xw: Var, h: Var) -> Result<Var, NumericError> {
    let d = tape.value(h).cols();
    let u_zr = tape.param(&g.u_zr)?;
    let u_h = tape.param(&g.u_h)?;
    let hu = tape.linear(h, u_zr)?;
    let xz = tape.slice_cols(xw, 0, d)?;
    let xr = tape.slice_cols(xw, d, d)?;
    let xc = tape.slice_cols(xw, 2 * d, d)?;
    let hz = tape.slice_cols(hu, 0, d)?;
    let hr = tape.slice_cols(hu, d, d)?;
    let z = tape.add(xz, hz)?;
    let z = tape.sigmoid(z);
    let r = tape.add(xr, hr)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h)?;
    let ch = tape.linear(rh, u_h)?;
    let c = tape.add(xc, ch)?;
    let c = tape.tanh(c);
    let keep = tape.one_minus(z);
    let keep = tape.mul(keep, h)?;
    let new = tape.mul(z, c)?;
    Ok(tape.add(keep, new)?)
}

/// GRU cell over a batch of rows: `input` is `[n, in]`, `state` is `[n, d]`.
pub fn gru_cell<T: Scalar>(tape: &mut Tape<'_, T>, g: &GruNames, input: Var, state: Var) -> Result<Var, NumericError> {
    let w_x = tape.param(&g.w_x)?;
    let b = tape.param(&g.b)?;
    let xw = tape.affine(input, w_x, b)?;
    gru_step(tape, g, xw, state)
}

/// Which outputs [`birnn_encode`] produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BiRnnOutput {
    /// One row per input row: `[forward_t ; backward_t]`.
    Positions,
    /// One row per sequence: `[forward_last ; backward_first]`.
    Summary,
}

struct DirectionRun {
    /// All hidden states, time-major.
    states: Var,
    /// Row of `states` for each input row.
    position: Vec<usize>,
    /// Row of `states` holding each sequence's final state.
    last: Vec<usize>,
}

fn run_direction<T: Scalar>(
    tape: &mut Tape<'_, T>,
    g: &GruNames,
    hidden: usize,
    x: Var,
    seqs: &[Vec<usize>],
) -> Result<DirectionRun, NumericError> {
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(seqs[i].len()));
    let max_len = seqs[order[0]].len();
    let total: usize = seqs.iter().map(Vec::len).sum();
    let rows_in = tape.value(x).rows();

    // Time-major layout: at step t the active sequences form a prefix of `order`.
    let mut idx = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(max_len);
    let mut active = Vec::with_capacity(max_len);
    let mut position = vec![usize::MAX; rows_in];
    let mut last = vec![0; seqs.len()];
    for t in 0..max_len {
        offsets.push(idx.len());
        let n_t = order.iter().take_while(|&&i| seqs[i].len() > t).count();
        active.push(n_t);
        for (j, &i) in order.iter().take(n_t).enumerate() {
            let row = seqs[i][t];
            position[row] = idx.len();
            if t + 1 == seqs[i].len() {
                last[i] = offsets[t] + j;
            }
            idx.push(row);
        }
    }

    let w_x = tape.param(&g.w_x)?;
    let b = tape.param(&g.b)?;
    let xt = tape.gather_rows(x, idx.into())?;
    let xw = tape.affine(xt, w_x, b)?;
    let mut h = tape.constant(Tensor::zeros(&[active[0], hidden]));
    let mut steps = Vec::with_capacity(max_len);
    for t in 0..max_len {
        let xw_t = tape.slice_rows(xw, offsets[t], active[t])?;
        let h_prev = if tape.value(h).rows() == active[t] { h } else { tape.slice_rows(h, 0, active[t])? };
        h = gru_step(tape, g, xw_t, h_prev)?;
        steps.push(h);
    }
    let states = tape.concat_rows(&steps)?;
    Ok(DirectionRun { states, position, last })
}

/// Bi-directional GRU over variable-length sequences. `inputs` holds the
/// rows of all sequences, `seqs[i]` lists the rows of sequence `i` in order.
/// With `proj = Some((w, b))` the concatenated states are projected by
/// `x w^T + b`.
pub fn birnn_encode<T: Scalar>(
    tape: &mut Tape<'_, T>,
    forward: &GruNames,
    backward: &GruNames,
    proj: Option<(&str, &str)>,
    inputs: Var,
    seqs: &[Vec<usize>],
    output: BiRnnOutput,
) -> Result<Var, NumericError> {
    if seqs.is_empty() || seqs.iter().any(Vec::is_empty) {
        return Err(NumericError::EmptySequence);
    }
    let u_h = tape.param(&forward.u_h)?;
    let hidden = tape.value(u_h).rows();
    let fwd = run_direction(tape, forward, hidden, inputs, seqs)?;
    let reversed: Vec<Vec<usize>> = seqs.iter().map(|s| s.iter().rev().copied().collect()).collect();
    let bwd = run_direction(tape, backward, hidden, inputs, &reversed)?;

    let (fi, bi): (Vec<usize>, Vec<usize>) = match output {
        BiRnnOutput::Positions => {
            let rows: Vec<usize> = seqs.iter().flatten().copied().collect();
            (rows.iter().map(|&r| fwd.position[r]).collect(), rows.iter().map(|&r| bwd.position[r]).collect())
        }
        BiRnnOutput::Summary => (fwd.last, bwd.last),
    };
    let f = tape.gather_rows(fwd.states, Rc::from(fi))?;
    let b = tape.gather_rows(bwd.states, Rc::from(bi))?;
    let both = tape.concat_cols(&[f, b])?;
    match proj {
        Some((w, b)) => {
            let w = tape.param(w)?;
            let b = tape.param(b)?;
            Ok(tape.affine(both, w, b)?)
        }
        None => Ok(both),
    }
}
