//! MTTKRP via a dimension tree.
//!
//! The root `{1..N}` is split at mode `S` into `{1..S}` and `{S+1..N}`. Each
//! half is computed from the tensor by one partial MTTKRP (a single GEMM on
//! the zero-copy matricization `X_(1:S)` or its transpose) and then walked
//! down by peeling the smallest remaining mode with multi-TTVs:
//!
//! ```text
//!             {1..N}
//!          /          \
//!      {1..S}        {S+1..N}
//!      /    \         /     \
//!    {1}  {2..S}   {S+1}  {S+2..N}
//!           ...              ...
//! ```
//!
//! Modes must be requested in order `0, 1, .., N-1` within an outer
//! iteration; requesting mode 0 starts a new iteration and drops every
//! cached temporary. Only two partial MTTKRPs happen per outer iteration,
//! at modes `0` and `S`.

use std::time::{Duration, Instant};

use nalgebra::DMatrixView;

use crate::error::{Error, Result};
use crate::tensor::{khatri_rao, DenseTensor, FactorMatrix, Matrix};

/// How the root split compares the two mode products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitRule {
    /// Smallest `S` with `prod(I_1..I_S) >= prod(I_{S+1}..I_N)`.
    #[default]
    AtLeast,
    /// Smallest `S` with a strictly larger leading product.
    Strict,
}

/// Returns the split `S` (number of leading modes in the left subtree),
/// always in `1..=N-1`.
pub fn choose_split_mode(dims: &[usize]) -> usize {
    choose_split_mode_with(dims, SplitRule::AtLeast)
}

pub fn choose_split_mode_with(dims: &[usize], rule: SplitRule) -> usize {
    let n = dims.len();
    if n < 2 {
        return 1;
    }
    let total: u128 = dims.iter().map(|&d| d as u128).product();
    let mut left: u128 = 1;
    for (s, &d) in dims.iter().enumerate().take(n - 1) {
        left *= d as u128;
        let right = total / left;
        let accept = match rule {
            SplitRule::AtLeast => left >= right,
            SplitRule::Strict => left > right,
        };
        if accept {
            return s + 1;
        }
    }
    n - 1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimTreePlan {
    pub order: usize,
    pub dims: Vec<usize>,
    pub rank: usize,
    pub split: usize,
    /// Elements of the `{1..S}` temporary, `prod(I_1..I_S) * R`.
    pub left_buffer_elems: usize,
    /// Elements of the `{S+1..N}` temporary, `prod(I_{S+1}..I_N) * R`.
    pub right_buffer_elems: usize,
}

impl DimTreePlan {
    pub fn new(dims: &[usize], rank: usize) -> Result<Self> {
        Self::with_rule(dims, rank, SplitRule::AtLeast)
    }

    pub fn with_rule(dims: &[usize], rank: usize, rule: SplitRule) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidShape(format!("order {} < 2", dims.len())));
        }
        if rank == 0 {
            return Err(Error::InvalidConfig("rank must be positive".into()));
        }
        let split = choose_split_mode_with(dims, rule);
        Ok(Self::with_split(dims, rank, split))
    }

    fn with_split(dims: &[usize], rank: usize, split: usize) -> Self {
        let left: usize = dims[..split].iter().product();
        let right: usize = dims[split..].iter().product();
        Self {
            order: dims.len(),
            dims: dims.to_vec(),
            rank,
            split,
            left_buffer_elems: left * rank,
            right_buffer_elems: right * rank,
        }
    }

    /// Mode range `[lo, hi)` of the subtree containing `mode`.
    fn half(&self, mode: usize) -> (usize, usize) {
        if mode < self.split {
            (0, self.split)
        } else {
            (self.split, self.order)
        }
    }
}

/// Which root child a partial MTTKRP produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Keeps modes `1..S`, contracts the trailing modes.
    Left,
    /// Keeps modes `S+1..N`, contracts the leading modes.
    Right,
}

/// Which end of a temporary a multi-TTV contracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contract {
    /// Contract the first retained mode with one factor column per block.
    Leading,
    /// Contract every retained mode but the first with one KRP column per block.
    Trailing,
}

/// Temporary tensor of a dimension-tree node: retained modes first (first
/// one fastest), rank index slowest, so block `r` is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct TempTensor {
    pub retained_dims: Vec<usize>,
    pub rank: usize,
    pub data: Vec<f64>,
}

impl TempTensor {
    pub fn new(retained_dims: Vec<usize>, rank: usize, data: Vec<f64>) -> Result<Self> {
        let block: usize = retained_dims.iter().product();
        if retained_dims.is_empty() || data.len() != block * rank {
            return Err(Error::InvalidShape(format!(
                "temporary with dims {:?} and rank {} cannot hold {} values",
                retained_dims,
                rank,
                data.len()
            )));
        }
        Ok(Self { retained_dims, rank, data })
    }

    pub fn block_len(&self) -> usize {
        self.retained_dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn block(&self, r: usize) -> &[f64] {
        let b = self.block_len();
        &self.data[r * b..(r + 1) * b]
    }

    /// Mode-1 unfolding of block `r`: `I_first x prod(rest)`.
    pub fn block_unfolding(&self, r: usize) -> DMatrixView<'_, f64> {
        let rows = self.retained_dims[0];
        DMatrixView::from_slice(self.block(r), rows, self.block_len() / rows)
    }

    /// Reads a single-mode temporary as an `I x R` matrix.
    pub fn into_matrix(self) -> Result<FactorMatrix> {
        if self.retained_dims.len() != 1 {
            return Err(Error::InvalidShape(format!(
                "temporary with {} retained modes is not a matrix",
                self.retained_dims.len()
            )));
        }
        Ok(Matrix::from_vec(self.retained_dims[0], self.rank, self.data))
    }
}

/// One GEMM between the matricized tensor and a partial KRP.
///
/// `Left`: `T^{1:S} = X_(1:S) * K` with `K` indexed by modes `S+1..N`.
/// `Right`: `T^{S+1:N} = X_(1:S)^T * K` with `K` indexed by modes `1..S`.
pub fn partial_mttkrp(
    x: &DenseTensor,
    krp: &Matrix,
    side: Side,
    plan: &DimTreePlan,
) -> Result<TempTensor> {
    if x.dims() != plan.dims.as_slice() {
        return Err(Error::DimMismatch(format!(
            "tensor dims {:?} do not match plan dims {:?}",
            x.dims(),
            plan.dims
        )));
    }
    let xs = x.matricize(plan.split)?;
    let (retained, contracted_rows) = match side {
        Side::Left => (plan.dims[..plan.split].to_vec(), xs.ncols()),
        Side::Right => (plan.dims[plan.split..].to_vec(), xs.nrows()),
    };
    if krp.nrows() != contracted_rows {
        return Err(Error::DimMismatch(format!(
            "partial KRP has {} rows, contracted modes have {}",
            krp.nrows(),
            contracted_rows
        )));
    }
    let t = match side {
        Side::Left => xs * krp,
        Side::Right => xs.tr_mul(krp),
    };
    let rank = krp.ncols();
    TempTensor::new(retained, rank, t.data.into())
}

/// `R` independent matrix-vector products, one per rank block.
///
/// `Leading`: block `r` of the result is `T_(1)[r]^T * coeff(:, r)`, dropping
/// the first retained mode. `Trailing`: block `r` is `T_(1)[r] * coeff(:, r)`,
/// keeping only the first retained mode.
pub fn multi_ttv(t: &TempTensor, coeff: &Matrix, contract: Contract) -> Result<TempTensor> {
    if coeff.ncols() != t.rank {
        return Err(Error::RankMismatch { expected: t.rank, found: coeff.ncols() });
    }
    let first = t.retained_dims[0];
    let rest = t.block_len() / first;
    let (out_dims, need_rows, out_block) = match contract {
        Contract::Leading => {
            if t.retained_dims.len() < 2 {
                return Err(Error::InvalidShape("cannot contract the only retained mode".into()));
            }
            (t.retained_dims[1..].to_vec(), first, rest)
        }
        Contract::Trailing => (vec![first], rest, first),
    };
    if coeff.nrows() != need_rows {
        return Err(Error::DimMismatch(format!(
            "multi-TTV coefficient has {} rows, contracted extent is {}",
            coeff.nrows(),
            need_rows
        )));
    }
    let mut data = Vec::with_capacity(out_block * t.rank);
    for r in 0..t.rank {
        let block = t.block_unfolding(r);
        let c = coeff.column(r);
        let v = match contract {
            Contract::Leading => block.tr_mul(&c),
            Contract::Trailing => block * c,
        };
        data.extend_from_slice(v.as_slice());
    }
    TempTensor::new(out_dims, t.rank, data)
}

/// Counters accumulated by a [`DimTreeCache`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DimTreeStats {
    pub partial_mttkrps: u64,
    pub multi_ttvs: u64,
    pub flops: u64,
    pub krp_time: Duration,
    pub partial_time: Duration,
    pub multi_ttv_time: Duration,
}

/// Per-worker tree state for one sweep over the modes.
#[derive(Debug, Default)]
pub struct DimTreeCache {
    next_mode: Option<usize>,
    left: Option<TempTensor>,
    right: Option<TempTensor>,
    pub stats: DimTreeStats,
}

impl DimTreeCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every temporary; the next request must be mode 0.
    pub fn invalidate(&mut self) {
        self.next_mode = None;
        self.left = None;
        self.right = None;
    }

    /// Elements currently held in temporaries.
    pub fn live_elems(&self) -> usize {
        self.left.as_ref().map_or(0, |t| t.len()) + self.right.as_ref().map_or(0, |t| t.len())
    }

    fn timed_krp(&mut self, factors: &[&Matrix]) -> Result<Matrix> {
        let start = Instant::now();
        let k = khatri_rao(factors);
        self.stats.krp_time += start.elapsed();
        k
    }

    fn timed_ttv(&mut self, t: &TempTensor, coeff: &Matrix, contract: Contract) -> Result<TempTensor> {
        let start = Instant::now();
        let out = multi_ttv(t, coeff, contract)?;
        self.stats.multi_ttv_time += start.elapsed();
        self.stats.multi_ttvs += 1;
        self.stats.flops += t.len() as u64;
        Ok(out)
    }
}

/// MTTKRP for `mode` using (and updating) the cached tree temporaries.
///
/// `factors[m]` must hold the current iterate of every mode; the factor of
/// `mode` itself is not read.
pub fn dim_tree_mttkrp(
    x: &DenseTensor,
    factors: &[Matrix],
    mode: usize,
    plan: &DimTreePlan,
    cache: &mut DimTreeCache,
) -> Result<FactorMatrix> {
    let order = plan.order;
    if mode >= order {
        return Err(Error::ModeOutOfRange { mode, order });
    }
    if factors.len() != order {
        return Err(Error::DimMismatch(format!(
            "{} factors for an order-{} plan",
            factors.len(),
            order
        )));
    }
    for (m, h) in factors.iter().enumerate() {
        if m != mode && (h.nrows() != plan.dims[m] || h.ncols() != plan.rank) {
            return Err(Error::DimMismatch(format!(
                "factor {} is {}x{}, plan expects {}x{}",
                m,
                h.nrows(),
                h.ncols(),
                plan.dims[m],
                plan.rank
            )));
        }
    }
    if mode == 0 {
        cache.invalidate();
    } else {
        match cache.next_mode {
            None => {
                return Err(Error::StaleCache(format!(
                    "mode {} requested without a live sweep",
                    mode
                )))
            }
            Some(expected) if expected != mode => {
                return Err(Error::OutOfOrderMode { expected, requested: mode })
            }
            Some(_) => {}
        }
    }

    let (lo, hi) = plan.half(mode);
    let side = if lo == 0 { Side::Left } else { Side::Right };

    let chain = if mode == lo {
        // Partial MTTKRP from the root: contract the other half's modes.
        let other: Vec<&Matrix> = match side {
            Side::Left => factors[plan.split..].iter().collect(),
            Side::Right => factors[..plan.split].iter().collect(),
        };
        let krp = cache.timed_krp(&other)?;
        let start = Instant::now();
        let t = partial_mttkrp(x, &krp, side, plan)?;
        cache.stats.partial_time += start.elapsed();
        cache.stats.partial_mttkrps += 1;
        cache.stats.flops += 2 * (x.len() * plan.rank) as u64;
        t
    } else {
        let parent = match side {
            Side::Left => cache.left.take(),
            Side::Right => cache.right.take(),
        }
        .ok_or_else(|| Error::StaleCache(format!("no temporary for mode {}", mode - 1)))?;
        if parent.rank != plan.rank || parent.retained_dims.len() != hi - mode + 1 {
            return Err(Error::StaleCache(format!(
                "temporary with dims {:?} does not belong to mode {}",
                parent.retained_dims, mode
            )));
        }
        cache.timed_ttv(&parent, &factors[mode - 1], Contract::Leading)?
    };

    let result = if mode + 1 == hi {
        chain.clone().into_matrix()?
    } else {
        let rest: Vec<&Matrix> = factors[mode + 1..hi].iter().collect();
        let krp = cache.timed_krp(&rest)?;
        cache.timed_ttv(&chain, &krp, Contract::Trailing)?.into_matrix()?
    };

    // The chain is only needed by later modes of the same half.
    if mode + 1 < hi {
        match side {
            Side::Left => cache.left = Some(chain),
            Side::Right => cache.right = Some(chain),
        }
    }
    cache.next_mode = if mode + 1 < order { Some(mode + 1) } else { None };
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{naive_mttkrp, reconstruct, FactorSet};
    use rand::{Rng, SeedableRng};

    fn seq_tensor(dims: Vec<usize>) -> DenseTensor {
        let len = dims.iter().product::<usize>();
        DenseTensor::new(dims, (1..=len).map(|v| v as f64).collect()).unwrap()
    }

    fn rel(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn split_mode_examples() {
        assert_eq!(choose_split_mode(&[128, 128, 128]), 2);
        assert_eq!(choose_split_mode(&[1446680, 69, 25]), 1);
        assert_eq!(choose_split_mode(&[384, 384, 384, 384]), 2);
        assert_eq!(choose_split_mode_with(&[384, 384, 384, 384], SplitRule::Strict), 3);
        assert_eq!(choose_split_mode(&[2, 100]), 1);
        assert_eq!(choose_split_mode(&[1, 1, 1]), 1);
    }

    #[test]
    fn split_mode_matches_rule_by_enumeration() {
        let cases: [&[usize]; 5] = [&[3, 4, 5], &[10, 2, 2, 2], &[2, 2, 2, 30], &[6, 6], &[7, 1, 1, 1, 7]];
        for dims in cases {
            let s = choose_split_mode(dims);
            let prod = |r: &[usize]| r.iter().product::<usize>();
            let first = (1..dims.len()).find(|&s| prod(&dims[..s]) >= prod(&dims[s..]));
            assert_eq!(s, first.unwrap_or(dims.len() - 1));
        }
    }

    #[test]
    fn plan_buffer_sizes() {
        let p = DimTreePlan::new(&[3, 4, 5, 6], 2).unwrap();
        assert_eq!(p.split, 3);
        assert_eq!(p.left_buffer_elems, 60 * 2);
        assert_eq!(p.right_buffer_elems, 6 * 2);
    }

    #[test]
    fn partial_mttkrp_examples() {
        let plan = DimTreePlan::with_split(&[2, 2, 2], 1, 1);
        let z = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        let ones = Matrix::from_element(4, 1, 1.0);
        let t = partial_mttkrp(&z, &ones, Side::Left, &plan).unwrap();
        assert_eq!(t.data, vec![0.0; 2]);

        let x = seq_tensor(vec![2, 2, 2]);
        let t = partial_mttkrp(&x, &ones, Side::Left, &plan).unwrap();
        assert_eq!(t.retained_dims, vec![2]);
        assert_eq!(t.data, vec![16.0, 20.0]);

        let bad = Matrix::from_element(3, 1, 1.0);
        assert!(partial_mttkrp(&x, &bad, Side::Left, &plan).is_err());
    }

    #[test]
    fn partial_mttkrp_ones_contraction() {
        let dims = vec![2, 3, 4];
        let ones: Vec<Matrix> = dims.iter().map(|&d| Matrix::from_element(d, 1, 1.0)).collect();
        let x = reconstruct(&FactorSet::with_unit_weights(ones).unwrap()).unwrap();
        let plan = DimTreePlan::new(&dims, 1).unwrap();
        assert_eq!(plan.split, 2);
        let left = partial_mttkrp(&x, &Matrix::from_element(4, 1, 1.0), Side::Left, &plan).unwrap();
        assert!(left.data.iter().all(|&v| v == 4.0));
        let right = partial_mttkrp(&x, &Matrix::from_element(6, 1, 1.0), Side::Right, &plan).unwrap();
        assert!(right.data.iter().all(|&v| v == 6.0));
    }

    #[test]
    fn multi_ttv_examples() {
        let t = TempTensor::new(vec![2, 2], 1, vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let c = Matrix::from_element(2, 1, 1.0);
        let out = multi_ttv(&t, &c, Contract::Trailing).unwrap();
        assert_eq!(out.data, vec![3.0, 7.0]);

        let zero = TempTensor::new(vec![2, 3], 2, vec![0.0; 12]).unwrap();
        let c = Matrix::from_element(3, 2, 5.0);
        assert_eq!(multi_ttv(&zero, &c, Contract::Trailing).unwrap().data, vec![0.0; 4]);

        // ones on the trailing extent give row sums of each block
        let t = TempTensor::new(vec![2, 3], 2, (1..=12).map(f64::from).collect()).unwrap();
        let out = multi_ttv(&t, &Matrix::from_element(3, 2, 1.0), Contract::Trailing).unwrap();
        assert_eq!(out.data, vec![9.0, 12.0, 27.0, 30.0]);

        // leading contraction: block^T * c
        let out = multi_ttv(&t, &Matrix::from_element(2, 2, 1.0), Contract::Leading).unwrap();
        assert_eq!(out.retained_dims, vec![3]);
        assert_eq!(out.data, vec![3.0, 7.0, 11.0, 15.0, 19.0, 23.0]);

        assert!(multi_ttv(&t, &Matrix::zeros(4, 2), Contract::Trailing).is_err());
        assert!(multi_ttv(&t, &Matrix::zeros(3, 3), Contract::Trailing).is_err());
    }

    #[test]
    fn block_contiguity_matches_direct_indexing() {
        let dims = vec![3, 2, 4];
        let rank = 3;
        let data: Vec<f64> = (0..24 * rank).map(|v| v as f64).collect();
        let t = TempTensor::new(dims.clone(), rank, data.clone()).unwrap();
        for r in 0..rank {
            let unf = t.block_unfolding(r);
            for i in 0..3 {
                for j in 0..2 {
                    for k in 0..4 {
                        let direct = data[i + 3 * (j + 2 * (k + 4 * r))];
                        assert_eq!(unf[(i, j + 2 * k)], direct);
                    }
                }
            }
        }
    }

    #[test]
    fn three_way_example_matches_oracle() {
        let x = seq_tensor(vec![2, 2, 2]);
        let h = vec![Matrix::zeros(2, 2), Matrix::identity(2, 2), Matrix::from_element(2, 2, 1.0)];
        let plan = DimTreePlan::new(&[2, 2, 2], 2).unwrap();
        assert_eq!(plan.split, 2);
        let mut cache = DimTreeCache::new();
        let m1 = dim_tree_mttkrp(&x, &h, 0, &plan, &mut cache).unwrap();
        assert_eq!(m1, Matrix::from_row_slice(2, 2, &[6.0, 10.0, 8.0, 12.0]));
    }

    #[test]
    fn rank_one_at_truth() {
        let dims = [3, 4, 2, 3];
        let factors: Vec<Matrix> = dims
            .iter()
            .enumerate()
            .map(|(k, &d)| Matrix::from_fn(d, 1, |i, _| 1.0 + (i + k) as f64 * 0.25))
            .collect();
        let x = reconstruct(&FactorSet::with_unit_weights(factors.clone()).unwrap()).unwrap();
        let plan = DimTreePlan::new(&dims, 1).unwrap();
        let mut cache = DimTreeCache::new();
        for n in 0..dims.len() {
            let got = dim_tree_mttkrp(&x, &factors, n, &plan, &mut cache).unwrap();
            let scale: f64 = (0..dims.len())
                .filter(|&m| m != n)
                .map(|m| factors[m].column(0).dot(&factors[m].column(0)))
                .product();
            assert!(rel(&got, &(&factors[n] * scale)) < 1e-12);
        }
    }

    #[test]
    fn four_way_random_matches_oracle() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let dims = vec![3, 3, 3, 3];
        let x = DenseTensor::from_fn(dims.clone(), |_| rng.gen::<f64>()).unwrap();
        let h: Vec<Matrix> = dims.iter().map(|&d| Matrix::from_fn(d, 3, |_, _| rng.gen())).collect();
        let plan = DimTreePlan::new(&dims, 3).unwrap();
        let mut cache = DimTreeCache::new();
        for n in 0..4 {
            let got = dim_tree_mttkrp(&x, &h, n, &plan, &mut cache).unwrap();
            let want = naive_mttkrp(&x, &h, n).unwrap();
            assert!(rel(&got, &want) < 1e-12, "mode {}", n);
        }
        assert_eq!(cache.stats.partial_mttkrps, 2);
        assert_eq!(cache.live_elems(), 0);
    }

    #[test]
    fn order_two_uses_two_products() {
        let x = seq_tensor(vec![3, 4]);
        let h = vec![
            Matrix::from_fn(3, 2, |i, r| (i + r) as f64),
            Matrix::from_fn(4, 2, |i, r| (i * r + 1) as f64),
        ];
        let plan = DimTreePlan::new(&[3, 4], 2).unwrap();
        let mut cache = DimTreeCache::new();
        for n in 0..2 {
            let got = dim_tree_mttkrp(&x, &h, n, &plan, &mut cache).unwrap();
            assert!(rel(&got, &naive_mttkrp(&x, &h, n).unwrap()) < 1e-12);
        }
        assert_eq!(cache.stats.partial_mttkrps, 2);
        assert_eq!(cache.stats.multi_ttvs, 0);
    }

    #[test]
    fn cache_contract_errors() {
        let x = seq_tensor(vec![2, 2, 2, 2]);
        let h: Vec<Matrix> = (0..4).map(|_| Matrix::from_element(2, 1, 1.0)).collect();
        let plan = DimTreePlan::new(&[2, 2, 2, 2], 1).unwrap();
        let mut cache = DimTreeCache::new();
        assert!(matches!(
            dim_tree_mttkrp(&x, &h, 2, &plan, &mut cache),
            Err(Error::StaleCache(_))
        ));
        dim_tree_mttkrp(&x, &h, 0, &plan, &mut cache).unwrap();
        assert!(matches!(
            dim_tree_mttkrp(&x, &h, 2, &plan, &mut cache),
            Err(Error::OutOfOrderMode { expected: 1, requested: 2 })
        ));
        dim_tree_mttkrp(&x, &h, 1, &plan, &mut cache).unwrap();
        cache.invalidate();
        assert!(matches!(
            dim_tree_mttkrp(&x, &h, 2, &plan, &mut cache),
            Err(Error::StaleCache(_))
        ));
        assert!(matches!(
            dim_tree_mttkrp(&x, &h, 4, &plan, &mut cache),
            Err(Error::ModeOutOfRange { .. })
        ));
    }

    #[test]
    fn flop_accounting() {
        let dims = vec![2, 3, 4, 5];
        let x = DenseTensor::from_fn(dims.clone(), |i| i.iter().sum::<usize>() as f64).unwrap();
        let h: Vec<Matrix> = dims.iter().map(|&d| Matrix::from_element(d, 2, 0.5)).collect();
        let plan = DimTreePlan::new(&dims, 2).unwrap();
        assert_eq!(plan.split, 3);
        let mut cache = DimTreeCache::new();
        dim_tree_mttkrp(&x, &h, 0, &plan, &mut cache).unwrap();
        // one partial (2 I R) plus a trailing TTV over the {1,2,3} temporary
        assert_eq!(cache.stats.flops, 2 * 120 * 2 + 24 * 2);
    }
}
