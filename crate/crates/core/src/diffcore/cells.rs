//! Recurrent cells and dense layers assembled from graph primitives.

use super::{DiffError, Graph, ParamId, ParamSet, Tensor, Var};
use crate::scalar::Scalar;

/// Fully connected layer `x · w + b`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        input: usize,
        output: usize,
    ) -> Result<Self, DiffError> {
        Ok(Self {
            w: params.add_glorot(format!("{prefix}.w"), input, output)?,
            b: params.add_zeros(format!("{prefix}.b"), 1, output)?,
            input,
            output,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, DiffError> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.linear(x, w, b)
    }
}

/// LSTM weights with gates packed as `[input | forget | cell | output]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    /// Glorot weights, zero bias except +1 on the forget gate.
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self, DiffError> {
        let w_ih = params.add_glorot(format!("{prefix}.w_ih"), input, 4 * hidden)?;
        let w_hh = params.add_glorot(format!("{prefix}.w_hh"), hidden, 4 * hidden)?;
        let mut bias = Tensor::zeros(1, 4 * hidden);
        for c in hidden..2 * hidden {
            bias.set(0, c, T::one());
        }
        let b = params.add_tensor(format!("{prefix}.b"), bias, true)?;
        Ok(Self {
            w_ih,
            w_hh,
            b,
            input,
            hidden,
        })
    }
}

/// One LSTM step on `1 × input` / `1 × hidden` rows. Returns `(h, c)`.
pub fn lstm_cell<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmParams,
) -> Result<(Var, Var), DiffError> {
    let h = p.hidden;
    let w_ih = g.param(p.w_ih);
    let w_hh = g.param(p.w_hh);
    let b = g.param(p.b);
    let xw = g.matmul(x, w_ih)?;
    let hw = g.matmul(h_prev, w_hh)?;
    let z = g.add(xw, hw)?;
    let z = g.add(z, b)?;

    let zi = g.slice_cols(z, 0, h)?;
    let zf = g.slice_cols(z, h, h)?;
    let zg = g.slice_cols(z, 2 * h, h)?;
    let zo = g.slice_cols(z, 3 * h, h)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);

    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h_new = g.mul(o, tc)?;
    Ok((h_new, c))
}

/// GRU weights with gates packed as `[reset | update | candidate]`.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self, DiffError> {
        Ok(Self {
            w_ih: params.add_glorot(format!("{prefix}.w_ih"), input, 3 * hidden)?,
            w_hh: params.add_glorot(format!("{prefix}.w_hh"), hidden, 3 * hidden)?,
            b_ih: params.add_zeros(format!("{prefix}.b_ih"), 1, 3 * hidden)?,
            b_hh: params.add_zeros(format!("{prefix}.b_hh"), 1, 3 * hidden)?,
            input,
            hidden,
        })
    }
}

/// One GRU step: `h = (1 - z) ⊙ h_prev + z ⊙ n` with
/// `n = tanh(x W_in + b_in + r ⊙ (h_prev W_hn + b_hn))`.
pub fn gru_cell<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    h_prev: Var,
    p: &GruParams,
) -> Result<Var, DiffError> {
    let h = p.hidden;
    let w_ih = g.param(p.w_ih);
    let w_hh = g.param(p.w_hh);
    let b_ih = g.param(p.b_ih);
    let b_hh = g.param(p.b_hh);
    let xw = g.linear(x, w_ih, b_ih)?;
    let hw = g.linear(h_prev, w_hh, b_hh)?;

    let xr = g.slice_cols(xw, 0, h)?;
    let hr = g.slice_cols(hw, 0, h)?;
    let xz = g.slice_cols(xw, h, h)?;
    let hz = g.slice_cols(hw, h, h)?;
    let xn = g.slice_cols(xw, 2 * h, h)?;
    let hn = g.slice_cols(hw, 2 * h, h)?;

    let r = g.add(xr, hr)?;
    let r = g.sigmoid(r);
    let z = g.add(xz, hz)?;
    let z = g.sigmoid(z);
    let gated = g.mul(r, hn)?;
    let n = g.add(xn, gated)?;
    let n = g.tanh(n);

    let diff = g.sub(n, h_prev)?;
    let step = g.mul(z, diff)?;
    g.add(h_prev, step)
}
