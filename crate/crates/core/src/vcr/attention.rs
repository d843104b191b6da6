//! Scaled dot-product attention and the two cross-view variants used during
//! refinement.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Queries, keys and values (tokens × dim) of one view at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionFeatures {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

impl AttentionFeatures {
    pub fn new(q: Matrix, k: Matrix, v: Matrix) -> Result<Self> {
        let f = Self { q, k, v };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.q.shape();
        if d == 0 || self.k.shape() != (n, d) || self.v.nrows() != n {
            return Err(Error::Shape(format!(
                "attention features q {:?}, k {:?}, v {:?}",
                self.q.shape(),
                self.k.shape(),
                self.v.shape()
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.q.ncols()
    }

    pub fn tokens(&self) -> usize {
        self.q.nrows()
    }

    pub fn attend(&self) -> Result<Matrix> {
        attn(&self.q, &self.k, &self.v)
    }
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|x| *x = (*x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// `softmax(Q·Kᵀ/√d)·V`.
pub fn attn(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    let d = q.ncols();
    if d == 0 || k.ncols() != d || k.nrows() != v.nrows() || k.nrows() == 0 {
        return Err(Error::Shape(format!(
            "attn: q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let logits = q * k.transpose() / (d as f64).sqrt();
    Ok(softmax_rows(&logits) * v)
}

/// Stacks the rows of `blocks` (all with the same column count).
pub fn stack_rows(blocks: &[&Matrix]) -> Result<Matrix> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    if blocks.iter().any(|b| b.ncols() != cols) {
        return Err(Error::Shape("stacked blocks disagree in width".into()));
    }
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(b);
        r += b.nrows();
    }
    Ok(out)
}

/// Attention of view `p` over its own keys and values concatenated with those
/// of a reference view `m`.
pub fn mutual_attention(q_p: &Matrix, k_p: &Matrix, v_p: &Matrix, k_m: &Matrix, v_m: &Matrix) -> Result<Matrix> {
    if k_p.ncols() != k_m.ncols() || v_p.ncols() != v_m.ncols() {
        return Err(Error::Shape(format!(
            "mutual attention: own k {:?} v {:?}, reference k {:?} v {:?}",
            k_p.shape(),
            v_p.shape(),
            k_m.shape(),
            v_m.shape()
        )));
    }
    attn(q_p, &stack_rows(&[k_p, k_m])?, &stack_rows(&[v_p, v_m])?)
}

/// Blend weights for an intermediate view against its two guides.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionWeights {
    pub eta_left: f64,
    pub eta_right: f64,
    pub lambda_self: f64,
}

impl FusionWeights {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.eta_left) || !unit(self.eta_right) || !unit(self.lambda_self) {
            return Err(Error::Param(format!("fusion weights outside [0, 1]: {self:?}")));
        }
        if (self.eta_left + self.eta_right - 1.0).abs() > 1e-9 {
            return Err(Error::Param(format!(
                "neighbour weights {} + {} must sum to 1",
                self.eta_left, self.eta_right
            )));
        }
        Ok(())
    }
}

/// `λ·attn(Q_i,K_i,V_i) + (1 − λ)·(η_l·attn(Q_i,K_l,V_l) + η_r·attn(Q_i,K_r,V_r))`.
/// With `λ = 1` the neighbours are not evaluated at all.
#[allow(clippy::too_many_arguments)]
pub fn fused_attention(
    q_i: &Matrix,
    k_i: &Matrix,
    v_i: &Matrix,
    k_l: &Matrix,
    v_l: &Matrix,
    k_r: &Matrix,
    v_r: &Matrix,
    w: FusionWeights,
) -> Result<Matrix> {
    w.validate()?;
    let own = attn(q_i, k_i, v_i)?;
    if w.lambda_self == 1.0 {
        return Ok(own);
    }
    let left = attn(q_i, k_l, v_l)?;
    let right = attn(q_i, k_r, v_r)?;
    if left.shape() != own.shape() || right.shape() != own.shape() {
        return Err(Error::Shape("neighbour values differ in width".into()));
    }
    let lam = w.lambda_self;
    Ok(own * lam + (left * w.eta_left + right * w.eta_right) * (1.0 - lam))
}
