use crate::error::{CoreError, Result};
use dvfcast_autodiff::{Graph, Var};

/// Gate names in parameter order.
pub const GATES: [&str; 4] = ["f", "i", "c", "o"];

/// Shape of one ConvLSTM cell. Its eight parameters live in the owning
/// network starting at `offset`: `W_f, W_i, W_c, W_o, b_f, b_i, b_c, b_o`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLstmCell {
    pub input: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub offset: usize,
}

impl ConvLstmCell {
    /// Weight shape `[hidden, hidden + input, k, k]`; the convolution sees
    /// `[H_{t-1}, X_t]` stacked along channels.
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.hidden, self.hidden + self.input, self.kernel, self.kernel]
    }
}

/// Every intermediate of one cell update.
#[derive(Debug, Clone, Copy)]
pub struct CellOutput {
    pub f: Var,
    pub i: Var,
    pub candidate: Var,
    pub o: Var,
    pub c: Var,
    pub h: Var,
}

/// Runs one cell update. `params` holds the cell's eight parameter vars.
pub fn cell_gates(g: &mut Graph, cell: &ConvLstmCell, params: &[Var], x: Var, h_prev: Var, c_prev: Var) -> Result<CellOutput> {
    if params.len() != 8 {
        return Err(CoreError::Length {
            what: "cell parameters",
            expected: 8,
            found: params.len(),
        });
    }
    let channels = g.shape(x).get(1).copied().unwrap_or(0);
    if channels != cell.input {
        return Err(CoreError::Config(format!(
            "cell expects {} input channels, got {channels}",
            cell.input
        )));
    }
    let hc = cell.hidden;
    let z = g.concat_channels(&[h_prev, x])?;
    let w = g.concat_axis0(&params[..4])?;
    let b = g.concat_axis0(&params[4..])?;
    let a = g.conv2d(z, w, b)?;
    let pre: Vec<Var> = (0..4).map(|k| g.slice_channels(a, k * hc, hc)).collect::<Result<_, _>>()?;
    let f = g.sigmoid(pre[0]);
    let i = g.sigmoid(pre[1]);
    let candidate = g.tanh(pre[2]);
    let o = g.sigmoid(pre[3]);
    let keep = g.hadamard(f, c_prev)?;
    let write = g.hadamard(i, candidate)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.hadamard(o, tc)?;
    Ok(CellOutput { f, i, candidate, o, c, h })
}

/// `(H_t, C_t)` from `(X_t, H_{t-1}, C_{t-1})`.
pub fn cell_step(g: &mut Graph, cell: &ConvLstmCell, params: &[Var], x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    let out = cell_gates(g, cell, params, x, h_prev, c_prev)?;
    Ok((out.h, out.c))
}
