//! Dense tensors, factor matrices and the small set of products the
//! alternating solvers are built from.
//!
//! Tensors use the generalized column-major layout: the mode-1 index varies
//! fastest, so the entry at 0-based multi-index `(i_1, .., i_N)` lives at
//! `i_1 + I_1 * (i_2 + I_2 * (i_3 + ..))`. With that layout the matricization
//! `X_(1:S)` (modes `1..=S` as rows, the rest as columns) is the flat buffer
//! read as a column-major matrix, which is what lets the partial MTTKRPs in
//! [`crate::dimtree`] run as a single GEMM without moving any data.
//!
//! Factor matrices and Gram matrices are plain `nalgebra` column-major
//! matrices. Khatri-Rao products order their rows with the *first* operand's
//! index varying fastest, matching the tensor layout.

use std::ops::Range;

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};

/// Column-major real matrix.
pub type Matrix = DMatrix<f64>;
/// `rows x R` factor matrix (also used for MTTKRP results).
pub type FactorMatrix = Matrix;
/// Symmetric `R x R` matrix such as `H^T H` or a Hadamard product of those.
pub type GramMatrix = Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = checked_len(&dims)?;
        if data.len() != len {
            return Err(Error::InvalidShape(format!(
                "dims {:?} need {} values, got {}",
                dims,
                len,
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = checked_len(&dims)?;
        Ok(Self { dims, data: vec![0.0; len] })
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in layout order.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = checked_len(&dims)?;
        let mut data = Vec::with_capacity(len);
        for_each_index(&dims, |idx| data.push(f(idx)));
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        let mut stride = 1;
        for (&i, &d) in idx.iter().zip(&self.dims) {
            debug_assert!(i < d);
            off += i * stride;
            stride *= d;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    /// Zero-copy view of `X_(1:split)`: rows are modes `1..=split`, columns
    /// the remaining modes.
    pub fn matricize(&self, split: usize) -> Result<DMatrixView<'_, f64>> {
        if split == 0 || split >= self.order() {
            return Err(Error::InvalidShape(format!(
                "matricization split {} outside 1..{}",
                split,
                self.order()
            )));
        }
        let rows: usize = self.dims[..split].iter().product();
        let cols: usize = self.dims[split..].iter().product();
        Ok(DMatrixView::from_slice(&self.data, rows, cols))
    }

    /// Copies out the sub-tensor selected by one index range per mode.
    pub fn sub_block(&self, ranges: &[Range<usize>]) -> Result<DenseTensor> {
        if ranges.len() != self.order() {
            return Err(Error::DimMismatch(format!(
                "{} ranges for an order-{} tensor",
                ranges.len(),
                self.order()
            )));
        }
        for (r, &d) in ranges.iter().zip(&self.dims) {
            if r.start > r.end || r.end > d {
                return Err(Error::DimMismatch(format!("range {:?} outside 0..{}", r, d)));
            }
        }
        let dims: Vec<usize> = ranges.iter().map(|r| r.end - r.start).collect();
        let mut shifted = vec![0; dims.len()];
        let mut data = Vec::with_capacity(dims.iter().product());
        for_each_index(&dims, |idx| {
            for (k, (&i, r)) in idx.iter().zip(ranges).enumerate() {
                shifted[k] = i + r.start;
            }
            data.push(self.get(&shifted));
        });
        Ok(DenseTensor { dims, data })
    }
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    if dims.len() < 2 {
        return Err(Error::InvalidShape(format!("order {} < 2", dims.len())));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidShape(format!("zero dimension in {:?}", dims)));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape(format!("element count of {:?} overflows", dims)))
}

/// Visits every multi-index of `dims` in layout order (first index fastest).
pub fn for_each_index(dims: &[usize], mut f: impl FnMut(&[usize])) {
    if dims.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; dims.len()];
    loop {
        f(&idx);
        let mut k = 0;
        loop {
            if k == dims.len() {
                return;
            }
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// CP model `[[lambda; H_1, .., H_N]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    pub factors: Vec<FactorMatrix>,
    pub lambda: Vec<f64>,
}

impl FactorSet {
    pub fn new(factors: Vec<FactorMatrix>, lambda: Vec<f64>) -> Result<Self> {
        let first = factors.first().ok_or(Error::EmptyInput("factor list"))?;
        let rank = first.ncols();
        if let Some(bad) = factors.iter().find(|h| h.ncols() != rank) {
            return Err(Error::RankMismatch { expected: rank, found: bad.ncols() });
        }
        if lambda.len() != rank {
            return Err(Error::RankMismatch { expected: rank, found: lambda.len() });
        }
        Ok(Self { factors, lambda })
    }

    pub fn with_unit_weights(factors: Vec<FactorMatrix>) -> Result<Self> {
        let rank = factors.first().map_or(0, |h| h.ncols());
        Self::new(factors, vec![1.0; rank])
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|h| h.nrows()).collect()
    }
}

fn common_rank(factors: &[&Matrix]) -> Result<usize> {
    let first = factors.first().ok_or(Error::EmptyInput("khatri-rao operand list"))?;
    let rank = first.ncols();
    for h in factors {
        if h.ncols() != rank {
            return Err(Error::RankMismatch { expected: rank, found: h.ncols() });
        }
    }
    Ok(rank)
}

/// Khatri-Rao product of `factors`, rows linearized with the first operand's
/// row index varying fastest.
pub fn khatri_rao(factors: &[&Matrix]) -> Result<Matrix> {
    let rank = common_rank(factors)?;
    let rows: usize = factors.iter().map(|h| h.nrows()).product();
    let mut out = Matrix::zeros(rows, rank);
    if rows == 0 {
        return Ok(out);
    }
    for (r, dst) in out.as_mut_slice().chunks_exact_mut(rows).enumerate() {
        // Build the column by repeated expansion: after processing operand j
        // the prefix holds the Kronecker column of operands 0..=j.
        let mut filled = 1usize;
        dst[0] = 1.0;
        for h in factors {
            let hc = h.column(r);
            let n = h.nrows();
            // Expand from the back so the source prefix is still intact.
            for j in (0..n).rev() {
                let v = hc[j];
                for i in 0..filled {
                    dst[j * filled + i] = dst[i] * v;
                }
            }
            filled *= n;
        }
    }
    Ok(out)
}

/// `H^T H`, computed entrywise so the result is exactly symmetric.
pub fn gram(h: &Matrix) -> GramMatrix {
    let r = h.ncols();
    let mut g = Matrix::zeros(r, r);
    for i in 0..r {
        for j in i..r {
            let v = h.column(i).dot(&h.column(j));
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Elementwise product of every Gram matrix except `grams[exclude]`.
pub fn hadamard_grams_excluding(grams: &[GramMatrix], exclude: usize) -> Result<GramMatrix> {
    if exclude >= grams.len() {
        return Err(Error::ModeOutOfRange { mode: exclude, order: grams.len() });
    }
    if grams.len() < 2 {
        return Err(Error::EmptyInput("need at least two Gram matrices"));
    }
    let rank = grams[0].nrows();
    let mut out = Matrix::from_element(rank, rank, 1.0);
    for (m, g) in grams.iter().enumerate() {
        if g.nrows() != rank || g.ncols() != rank {
            return Err(Error::RankMismatch { expected: rank, found: g.nrows() });
        }
        if m != exclude {
            out.component_mul_assign(g);
        }
    }
    Ok(out)
}

fn check_factor_dims(dims: &[usize], factors: &[Matrix], mode: usize) -> Result<usize> {
    if mode >= dims.len() {
        return Err(Error::ModeOutOfRange { mode, order: dims.len() });
    }
    if factors.len() != dims.len() {
        return Err(Error::DimMismatch(format!(
            "{} factors for an order-{} tensor",
            factors.len(),
            dims.len()
        )));
    }
    let rank = factors[(mode + 1) % dims.len()].ncols();
    for (m, (h, &d)) in factors.iter().zip(dims).enumerate() {
        if m == mode {
            continue;
        }
        if h.nrows() != d {
            return Err(Error::DimMismatch(format!(
                "factor {} has {} rows, tensor mode has {}",
                m,
                h.nrows(),
                d
            )));
        }
        if h.ncols() != rank {
            return Err(Error::RankMismatch { expected: rank, found: h.ncols() });
        }
    }
    Ok(rank)
}

/// MTTKRP by direct summation over every tensor entry. Slow but obviously
/// correct; the factor in `mode` is ignored.
pub fn naive_mttkrp(x: &DenseTensor, factors: &[Matrix], mode: usize) -> Result<FactorMatrix> {
    let rank = check_factor_dims(x.dims(), factors, mode)?;
    let mut out = Matrix::zeros(x.dims()[mode], rank);
    let mut pos = 0;
    for_each_index(x.dims(), |idx| {
        let v = x.data()[pos];
        pos += 1;
        if v == 0.0 {
            return;
        }
        for r in 0..rank {
            let mut p = v;
            for (m, h) in factors.iter().enumerate() {
                if m != mode {
                    p *= h[(idx[m], r)];
                }
            }
            out[(idx[mode], r)] += p;
        }
    });
    Ok(out)
}

/// Mode-N MTTKRP as one product `X_(1:N-1)^T * (H_1 ⊙ .. ⊙ H_{N-1})`.
pub fn mttkrp_last_mode(x: &DenseTensor, factors: &[Matrix]) -> Result<FactorMatrix> {
    let n = x.order();
    check_factor_dims(x.dims(), factors, n - 1)?;
    let refs: Vec<&Matrix> = factors[..n - 1].iter().collect();
    let krp = khatri_rao(&refs)?;
    Ok(x.matricize(n - 1)?.tr_mul(&krp))
}

/// Khatri-Rao products of the factors before and after `mode`, each a
/// `1 x R` row of ones when the side is empty.
pub fn mode_krps(factors: &[Matrix], mode: usize) -> Result<(Matrix, Matrix)> {
    let rank = factors.iter().enumerate().find(|&(m, _)| m != mode).map_or(0, |(_, h)| h.ncols());
    let side = |hs: &[Matrix]| -> Result<Matrix> {
        if hs.is_empty() {
            Ok(Matrix::from_element(1, rank, 1.0))
        } else {
            khatri_rao(&hs.iter().collect::<Vec<_>>())
        }
    };
    Ok((side(&factors[..mode])?, side(&factors[mode + 1..])?))
}

/// MTTKRP from precomputed side products (see [`mode_krps`]). The tensor is
/// read as `I_left x I_n x I_right`; each of the `I_right` slabs costs one GEMM.
pub fn mttkrp_from_krps(x: &DenseTensor, mode: usize, left: &Matrix, right: &Matrix) -> Result<FactorMatrix> {
    let dims = x.dims();
    if mode >= dims.len() {
        return Err(Error::ModeOutOfRange { mode, order: dims.len() });
    }
    let il: usize = dims[..mode].iter().product();
    let n = dims[mode];
    let ir: usize = dims[mode + 1..].iter().product();
    if left.nrows() != il || right.nrows() != ir || left.ncols() != right.ncols() {
        return Err(Error::DimMismatch(format!(
            "side products {}x{} and {}x{} for mode {} of {:?}",
            left.nrows(),
            left.ncols(),
            right.nrows(),
            right.ncols(),
            mode,
            dims
        )));
    }
    let rank = left.ncols();
    if mode == 0 {
        return Ok(x.matricize(1)? * right);
    }
    if mode + 1 == dims.len() {
        return Ok(x.matricize(mode)?.tr_mul(left));
    }
    let mut out = Matrix::zeros(n, rank);
    for (k, chunk) in x.data().chunks_exact(il * n).enumerate() {
        let xk = DMatrixView::from_slice(chunk, il, n);
        let t = xk.tr_mul(left);
        for r in 0..rank {
            let w = right[(k, r)];
            out.column_mut(r).axpy(w, &t.column(r), 1.0);
        }
    }
    Ok(out)
}

/// Standard (tree-free) MTTKRP for one mode.
pub fn mttkrp(x: &DenseTensor, factors: &[Matrix], mode: usize) -> Result<FactorMatrix> {
    check_factor_dims(x.dims(), factors, mode)?;
    let (left, right) = mode_krps(factors, mode)?;
    mttkrp_from_krps(x, mode, &left, &right)
}

pub fn norm_squared(x: &DenseTensor) -> f64 {
    x.data().iter().map(|v| v * v).sum()
}

/// Expands a CP model into a dense tensor.
pub fn reconstruct(model: &FactorSet) -> Result<DenseTensor> {
    let refs: Vec<&Matrix> = model.factors.iter().collect();
    let krp = khatri_rao(&refs)?;
    let lambda = nalgebra::DVector::from_column_slice(&model.lambda);
    let data = krp * lambda;
    DenseTensor::new(model.dims(), data.as_slice().to_vec())
}

/// Sum of squares of each column.
pub fn column_sq_norms(h: &Matrix) -> Vec<f64> {
    h.column_iter().map(|c| c.iter().map(|v| v * v).sum()).collect()
}

/// Divides each column by its weight; columns with weight zero are left as is.
pub fn scale_columns_by_inverse(h: &mut Matrix, weights: &[f64]) {
    for (mut col, &w) in h.column_iter_mut().zip(weights) {
        if w > 0.0 {
            col /= w;
        }
    }
}

/// Multiplies each column by its weight.
pub fn scale_columns(h: &Matrix, weights: &[f64]) -> Matrix {
    let mut out = h.clone();
    for (mut col, &w) in out.column_iter_mut().zip(weights) {
        col *= w;
    }
    out
}

/// Scales every column to unit 2-norm and returns the original norms.
/// Zero columns stay zero with weight 0.
pub fn normalize_columns(h: &Matrix) -> (Matrix, Vec<f64>) {
    let weights: Vec<f64> = column_sq_norms(h).into_iter().map(f64::sqrt).collect();
    let mut out = h.clone();
    scale_columns_by_inverse(&mut out, &weights);
    (out, weights)
}

pub fn matrix_inner_product(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimMismatch(format!(
            "inner product of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum())
}
