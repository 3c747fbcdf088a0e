//! Outer iteration of the NNCP solver, sequential and on a processor grid.
//!
//! Both entry points run the same per-worker program. The sequential one
//! hands it a [`SoloComm`] and the whole tensor; the parallel one spawns one
//! worker per grid cell, each holding its block of the tensor and the rows
//! of every factor that block touches (the "slab" of that mode). A worker
//! owns a further subset of its slab's rows and updates only those.

use std::borrow::Cow;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::{debug, warn};

use crate::dimtree::{dim_tree_mttkrp, DimTreeCache, DimTreePlan, SplitRule};
use crate::error::{Error, Result};
use crate::grid::{
    block_partition, run_spmd, CommCounters, Communicator, DistMap, GridShape, Group, GroupReduce, SoloComm,
};
use crate::nnls::{
    nesterov_outer_accelerate, nnls_update, Algorithm, Hyperparams, InnerStats, ReduceOp, UpdateInputs,
    UpdaterState,
};
use crate::tensor::{
    column_sq_norms, gram, hadamard_grams_excluding, matrix_inner_product, mode_krps, mttkrp_from_krps,
    mttkrp_last_mode, norm_squared, scale_columns, scale_columns_by_inverse, DenseTensor, FactorSet, GramMatrix,
    Matrix,
};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub rank: usize,
    pub algorithm: Algorithm,
    pub max_iters: usize,
    /// Stop once the relative error is at or below this.
    pub tol: f64,
    pub seed: u64,
    /// Processor grid for [`nncp_parallel`]; ignored by [`nncp_sequential`].
    pub grid: Option<GridShape>,
    pub dimtree: bool,
    pub split_rule: SplitRule,
    pub hyper: Hyperparams,
    /// Starting model; random from `seed` when absent.
    pub init: Option<FactorSet>,
}

impl RunConfig {
    pub fn new(rank: usize, algorithm: Algorithm) -> Self {
        Self {
            rank,
            algorithm,
            max_iters: 100,
            tol: 1e-6,
            seed: 0,
            grid: None,
            dimtree: true,
            split_rule: SplitRule::default(),
            hyper: Hyperparams::default(),
            init: None,
        }
    }

    fn validate(&self, dims: &[usize], grid: &GridShape) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance {} is not a nonnegative number", self.tol)));
        }
        if grid.order() != dims.len() {
            return Err(Error::Grid(format!(
                "grid {:?} has order {}, tensor has order {}",
                grid.procs(),
                grid.order(),
                dims.len()
            )));
        }
        if let Some((n, (&p, &i))) = grid.procs().iter().zip(dims).enumerate().find(|(_, (&p, &i))| p > i) {
            return Err(Error::Grid(format!("grid splits mode {} of length {} into {} parts", n, i, p)));
        }
        if let Some(init) = &self.init {
            if init.dims() != dims {
                return Err(Error::DimMismatch(format!(
                    "initial model has dims {:?}, tensor has {:?}",
                    init.dims(),
                    dims
                )));
            }
            if init.rank() != self.rank {
                return Err(Error::RankMismatch { expected: self.rank, found: init.rank() });
            }
        }
        Ok(())
    }
}

/// Timing categories of the per-iteration breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Mttkrp,
    Krp,
    MultiTtv,
    Gram,
    Nnls,
    ReduceScatter,
    AllGather,
    AllReduce,
    Error,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::Mttkrp,
        Category::Krp,
        Category::MultiTtv,
        Category::Gram,
        Category::Nnls,
        Category::ReduceScatter,
        Category::AllGather,
        Category::AllReduce,
        Category::Error,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Mttkrp => "MTTKRP",
            Category::Krp => "KRP",
            Category::MultiTtv => "MultiTTV",
            Category::Gram => "Gram",
            Category::Nnls => "NNLS",
            Category::ReduceScatter => "ReduceScatter",
            Category::AllGather => "AllGather",
            Category::AllReduce => "AllReduce",
            Category::Error => "Error",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownCategory(s.to_string()))
    }
}

/// Time and words per [`Category`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Breakdown {
    times: [Duration; 9],
    words: [u64; 9],
}

impl Breakdown {
    pub fn record(&mut self, category: Category, elapsed: Duration, words: u64) {
        self.times[category.index()] += elapsed;
        self.words[category.index()] += words;
    }

    pub fn record_named(&mut self, category: &str, elapsed: Duration, words: u64) -> Result<()> {
        self.record(category.parse()?, elapsed, words);
        Ok(())
    }

    pub fn time(&self, category: Category) -> Duration {
        self.times[category.index()]
    }

    pub fn words(&self, category: Category) -> u64 {
        self.words[category.index()]
    }

    pub fn total_time(&self) -> Duration {
        self.times.iter().sum()
    }

    pub fn total_words(&self) -> u64 {
        self.words.iter().sum()
    }

    pub fn merge(&mut self, other: &Breakdown) {
        for c in Category::ALL {
            self.record(c, other.time(c), other.words(c));
        }
    }
}

/// One row of the convergence history. Row 0 is the starting model.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub relerr: f64,
    /// Categories as seen by worker 0.
    pub breakdown: Breakdown,
    pub wall: Duration,
    /// Words received by all workers together during this iteration.
    pub words: u64,
    /// Partial MTTKRPs computed from the full tensor (worker 0).
    pub partial_mttkrps: u64,
    /// Whether the outer extrapolation step was accepted.
    pub accelerated: bool,
}

/// The three terms of the error identity `||X - model||^2 = alpha - 2 beta + gamma`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorTerms {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ErrorTerms {
    pub fn relative_error(&self) -> Result<f64> {
        error_from_terms(self.alpha, self.beta, self.gamma)
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub records: Vec<IterationRecord>,
    pub model: FactorSet,
    /// Counters summed over every worker.
    pub comm: CommCounters,
    pub worker_comm: Vec<CommCounters>,
    /// Inner-iteration counts per mode (worker 0).
    pub inner_stats: Vec<InnerStats>,
    pub terms: ErrorTerms,
    pub converged: bool,
    pub wall: Duration,
}

impl RunReport {
    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.relerr).collect()
    }

    pub fn final_error(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.relerr)
    }

    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// Breakdown summed over all rows.
    pub fn breakdown(&self) -> Breakdown {
        let mut total = Breakdown::default();
        for r in &self.records {
            total.merge(&r.breakdown);
        }
        total
    }
}

/// `sqrt(max(0, alpha - 2 beta + gamma) / alpha)`.
pub fn error_from_terms(alpha: f64, beta: f64, gamma: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::ZeroTensor);
    }
    Ok(((alpha - 2.0 * beta + gamma).max(0.0) / alpha).sqrt())
}

fn weighted_quadratic(s: &Matrix, g: &Matrix, lambda: &[f64]) -> f64 {
    let r = lambda.len();
    let mut acc = 0.0;
    for j in 0..r {
        for i in 0..r {
            acc += lambda[i] * s[(i, j)] * g[(i, j)] * lambda[j];
        }
    }
    acc
}

/// Relative error of the model from last-mode quantities: `mttkrp_n` is the
/// last mode's MTTKRP, `h_unnormalized` the factor as returned by the update
/// (before its columns were scaled into `lambda`), `s_n` the Hadamard product
/// of the other Grams and `g_n` the Gram of the normalized last factor.
pub fn relative_error(
    alpha: f64,
    mttkrp_n: &Matrix,
    h_unnormalized: &Matrix,
    s_n: &GramMatrix,
    g_n: &GramMatrix,
    lambda: &[f64],
) -> Result<f64> {
    let beta = matrix_inner_product(mttkrp_n, h_unnormalized)?;
    error_from_terms(alpha, beta, weighted_quadratic(s_n, g_n, lambda))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform `[0, 1)` value for entry `(row, col)` of factor `mode`. Depends
/// only on its arguments, so any worker can produce any entry.
pub fn init_value(seed: u64, mode: usize, row: usize, col: usize) -> f64 {
    let h = splitmix64(seed ^ splitmix64(mode as u64 ^ splitmix64(row as u64 ^ splitmix64(col as u64))));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Random starting factors (unit weights) as produced inside the drivers.
pub fn initial_model(dims: &[usize], rank: usize, seed: u64) -> Result<FactorSet> {
    let factors = dims
        .iter()
        .enumerate()
        .map(|(n, &d)| Matrix::from_fn(d, rank, |i, c| init_value(seed, n, i, c)))
        .collect();
    FactorSet::with_unit_weights(factors)
}

fn pack_rows(m: &Matrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn unpack_rows(v: &[f64], rows: usize, cols: usize) -> Matrix {
    Matrix::from_row_slice(rows, cols, v)
}

fn rows_of(m: &Matrix, range: &Range<usize>) -> Matrix {
    m.rows(range.start, range.len()).into_owned()
}

/// Communicator plus the breakdown its collectives are booked into.
struct Ctx<'a, C: Communicator> {
    comm: &'a mut C,
    bd: Breakdown,
    comm_time: Duration,
}

impl<C: Communicator> Ctx<'_, C> {
    fn all_reduce(&mut self, group: &Group, values: &mut [f64]) -> Result<()> {
        let t = Instant::now();
        self.comm.all_reduce(group, values, ReduceOp::Sum)?;
        let el = t.elapsed();
        self.comm_time += el;
        self.bd.record(Category::AllReduce, el, values.len() as u64);
        Ok(())
    }

    fn all_gather(&mut self, group: &Group, local: &[f64]) -> Result<Vec<f64>> {
        let t = Instant::now();
        let out = self.comm.all_gather(group, local)?;
        let el = t.elapsed();
        self.comm_time += el;
        self.bd.record(Category::AllGather, el, out.len() as u64);
        Ok(out)
    }

    fn reduce_scatter(&mut self, group: &Group, local: &[f64], parts: &DistMap) -> Result<Vec<f64>> {
        let t = Instant::now();
        let out = self.comm.reduce_scatter(group, local, parts)?;
        let el = t.elapsed();
        self.comm_time += el;
        self.bd.record(Category::ReduceScatter, el, out.len() as u64);
        Ok(out)
    }

    /// Runs `f` and books its time, minus collectives it issued, to `cat`.
    fn section<T>(&mut self, cat: Category, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let c0 = self.comm_time;
        let t = Instant::now();
        let out = f(self);
        let el = t.elapsed().saturating_sub(self.comm_time - c0);
        self.bd.record(cat, el, 0);
        out
    }

    fn take_breakdown(&mut self) -> Breakdown {
        self.comm_time = Duration::ZERO;
        std::mem::take(&mut self.bd)
    }
}

/// Where a worker sits in the data distribution.
struct Layout {
    world: Group,
    slices: Vec<Group>,
    slab: Vec<Range<usize>>,
    /// Own rows, relative to the slab.
    own: Vec<Range<usize>>,
    /// Split of each slab among the slice members.
    own_maps: Vec<DistMap>,
}

impl Layout {
    fn new(shape: &GridShape, dims: &[usize], rank: usize) -> Result<Self> {
        let coord = shape.coord_of(rank);
        let world = Group::new((0..shape.total()).collect(), rank)?;
        let mut slices = Vec::new();
        let mut slab = Vec::new();
        let mut own = Vec::new();
        let mut own_maps = Vec::new();
        for (n, &d) in dims.iter().enumerate() {
            let group = Group::new(shape.slice_members(n, coord[n]), rank)?;
            let s = block_partition(d, shape.procs()[n]).range(coord[n]);
            let map = block_partition(s.len(), group.size());
            own.push(map.range(group.index()));
            own_maps.push(map);
            slab.push(s);
            slices.push(group);
        }
        Ok(Self { world, slices, slab, own, own_maps })
    }

    fn own_rows(&self, slab: &Matrix, n: usize) -> Matrix {
        rows_of(slab, &self.own[n])
    }
}

struct WorkerOutcome {
    records: Vec<IterationRecord>,
    slabs: Vec<Matrix>,
    lambda: Vec<f64>,
    counters: CommCounters,
    inner_stats: Vec<InnerStats>,
    terms: ErrorTerms,
    converged: bool,
}

/// Error terms of a model given its last-mode MTTKRP rows.
#[allow(clippy::too_many_arguments)]
fn error_terms<C: Communicator>(
    ctx: &mut Ctx<'_, C>,
    world: &Group,
    alpha: f64,
    m_own: &Matrix,
    h_hat_own: &Matrix,
    s: &Matrix,
    g: &Matrix,
    lambda: &[f64],
) -> Result<ErrorTerms> {
    let mut beta = [ctx.section(Category::Error, |_| matrix_inner_product(m_own, h_hat_own))?];
    ctx.all_reduce(world, &mut beta)?;
    let gamma = ctx.section(Category::Error, |_| Ok(weighted_quadratic(s, g, lambda)))?;
    Ok(ErrorTerms { alpha, beta: beta[0], gamma })
}

/// Last-mode MTTKRP reduced onto this worker's own rows, by one GEMM.
fn last_mode_mttkrp<C: Communicator>(
    ctx: &mut Ctx<'_, C>,
    layout: &Layout,
    x: &DenseTensor,
    slabs: &[Matrix],
    rank: usize,
    cat: Category,
) -> Result<Matrix> {
    let last = slabs.len() - 1;
    let local = ctx.section(cat, |_| mttkrp_last_mode(x, slabs))?;
    let parts = layout.own_maps[last].scaled(rank);
    let own = ctx.reduce_scatter(&layout.slices[last], &pack_rows(&local), &parts)?;
    Ok(unpack_rows(&own, layout.own[last].len(), rank))
}

fn run_worker<C: Communicator>(
    comm: &mut C,
    x: &DenseTensor,
    cfg: &RunConfig,
    shape: &GridShape,
) -> Result<WorkerOutcome> {
    let order = x.order();
    let dims = x.dims().to_vec();
    let r = cfg.rank;
    let me = comm.rank();
    let layout = Layout::new(shape, &dims, me)?;
    let xl: Cow<'_, DenseTensor> = if shape.total() == 1 {
        Cow::Borrowed(x)
    } else {
        Cow::Owned(x.sub_block(&layout.slab)?)
    };
    let xl = xl.as_ref();
    let plan = if cfg.dimtree {
        Some(DimTreePlan::with_rule(xl.dims(), r, cfg.split_rule)?)
    } else {
        None
    };
    let mut ctx = Ctx { comm, bd: Breakdown::default(), comm_time: Duration::ZERO };

    // Starting point.
    let start = Instant::now();
    let (mut slabs, mut lambda): (Vec<Matrix>, Vec<f64>) = match &cfg.init {
        Some(init) => (
            init.factors.iter().zip(&layout.slab).map(|(h, s)| rows_of(h, s)).collect(),
            init.lambda.clone(),
        ),
        None => (
            layout
                .slab
                .iter()
                .enumerate()
                .map(|(n, s)| Matrix::from_fn(s.len(), r, |i, c| init_value(cfg.seed, n, s.start + i, c)))
                .collect(),
            vec![1.0; r],
        ),
    };
    let mut grams: Vec<GramMatrix> = Vec::with_capacity(order);
    for (n, slab) in slabs.iter().enumerate() {
        let mut g = ctx.section(Category::Gram, |_| Ok(gram(&layout.own_rows(slab, n))))?;
        ctx.all_reduce(&layout.world, g.as_mut_slice())?;
        grams.push(g);
    }
    let mut alpha = [ctx.section(Category::Error, |_| Ok(norm_squared(xl)))?];
    ctx.all_reduce(&layout.world, &mut alpha)?;
    let alpha = alpha[0];
    if !(alpha > 0.0) {
        return Err(Error::ZeroTensor);
    }
    let last = order - 1;
    let m_own = last_mode_mttkrp(&mut ctx, &layout, xl, &slabs, r, Category::Error)?;
    let s = ctx.section(Category::Error, |_| hadamard_grams_excluding(&grams, last))?;
    let h_hat = scale_columns(&layout.own_rows(&slabs[last], last), &lambda);
    let mut terms = error_terms(&mut ctx, &layout.world, alpha, &m_own, &h_hat, &s, &grams[last], &lambda)?;
    let mut relerr = terms.relative_error()?;

    let mut counters_mark = *ctx.comm.counters();
    let mut records = vec![IterationRecord {
        iter: 0,
        relerr,
        breakdown: ctx.take_breakdown(),
        wall: start.elapsed(),
        words: counters_mark.words_received(),
        partial_mttkrps: 0,
        accelerated: false,
    }];

    let mut states: Vec<UpdaterState> =
        (0..order).map(|_| UpdaterState::new(cfg.algorithm, cfg.hyper.clone())).collect();
    let mut cache = DimTreeCache::new();
    let accelerate = cfg.algorithm == Algorithm::Nesterov;
    let admm = cfg.algorithm == Algorithm::Admm;
    let mut converged = false;

    for iter in 1..=cfg.max_iters {
        if converged {
            break;
        }
        let start = Instant::now();
        let partial_before = cache.stats.partial_mttkrps;
        let previous = accelerate.then(|| (slabs.clone(), lambda.clone()));
        let mut last_m = Matrix::zeros(0, r);
        let mut last_h_hat = Matrix::zeros(0, r);

        for n in 0..order {
            // Local MTTKRP on this worker's block.
            let m_local = match &plan {
                Some(plan) => {
                    let before = cache.stats.clone();
                    let t = Instant::now();
                    let m = dim_tree_mttkrp(xl, &slabs, n, plan, &mut cache)?;
                    let el = t.elapsed();
                    let krp = cache.stats.krp_time - before.krp_time;
                    let ttv = cache.stats.multi_ttv_time - before.multi_ttv_time;
                    ctx.bd.record(Category::Krp, krp, 0);
                    ctx.bd.record(Category::MultiTtv, ttv, 0);
                    ctx.bd.record(Category::Mttkrp, el.saturating_sub(krp + ttv), 0);
                    m
                }
                None => {
                    let (left, right) = ctx.section(Category::Krp, |_| mode_krps(&slabs, n))?;
                    ctx.section(Category::Mttkrp, |_| mttkrp_from_krps(xl, n, &left, &right))?
                }
            };
            let parts = layout.own_maps[n].scaled(r);
            let own = ctx.reduce_scatter(&layout.slices[n], &pack_rows(&m_local), &parts)?;
            let m_own = unpack_rows(&own, layout.own[n].len(), r);

            let s = ctx.section(Category::Gram, |_| hadamard_grams_excluding(&grams, n))?;

            let current = scale_columns(&layout.own_rows(&slabs[n], n), &lambda);
            if admm {
                states[n].rescale_dual(&lambda, false);
            }
            let world = &layout.world;
            let state = &mut states[n];
            let out = ctx
                .section(Category::Nnls, |ctx| {
                    let mut hook = GroupReduce { comm: &mut *ctx.comm, group: world };
                    nnls_update(UpdateInputs::new(&s, &m_own, &current)?, state, &mut hook)
                })
                .map_err(|e| Error::UpdateFailed { mode: n, iteration: iter, source: Box::new(e) })?;

            let (h_own, h_hat, weights) = match out.weights {
                Some(w) => {
                    let h_hat = if n == last { scale_columns(&out.factor, &w) } else { Matrix::zeros(0, r) };
                    (out.factor, h_hat, w)
                }
                None => {
                    let mut sq = ctx.section(Category::Nnls, |_| Ok(column_sq_norms(&out.factor)))?;
                    ctx.all_reduce(&layout.world, &mut sq)?;
                    let w: Vec<f64> = sq.into_iter().map(f64::sqrt).collect();
                    let mut h = out.factor.clone();
                    scale_columns_by_inverse(&mut h, &w);
                    (h, out.factor, w)
                }
            };
            lambda = weights;
            if admm {
                states[n].rescale_dual(&lambda, true);
            }
            if n == last {
                last_m = m_own;
                last_h_hat = h_hat;
            }

            let mut g = ctx.section(Category::Gram, |_| Ok(gram(&h_own)))?;
            ctx.all_reduce(&layout.world, g.as_mut_slice())?;
            grams[n] = g;

            let full = ctx.all_gather(&layout.slices[n], &pack_rows(&h_own))?;
            slabs[n] = unpack_rows(&full, layout.slab[n].len(), r);
        }

        let s = ctx.section(Category::Error, |_| hadamard_grams_excluding(&grams, last))?;
        terms = error_terms(&mut ctx, &layout.world, alpha, &last_m, &last_h_hat, &s, &grams[last], &lambda)?;
        relerr = terms.relative_error()?;

        let mut accepted = false;
        if let Some((prev_slabs, prev_lambda)) = previous.filter(|_| relerr > cfg.tol) {
            let prev = FactorSet::new(prev_slabs, prev_lambda)?;
            let cur = FactorSet::new(slabs.clone(), lambda.clone())?;
            let mut found: Option<(ErrorTerms, Vec<GramMatrix>)> = None;
            let (model, ok) = nesterov_outer_accelerate(&prev, &cur, iter, relerr, |cand| {
                let m = last_mode_mttkrp(&mut ctx, &layout, xl, &cand.factors, r, Category::Mttkrp)?;
                let mut packed = ctx.section(Category::Gram, |_| {
                    Ok(cand
                        .factors
                        .iter()
                        .enumerate()
                        .flat_map(|(n, h)| gram(&layout.own_rows(h, n)).as_slice().to_vec())
                        .collect::<Vec<f64>>())
                })?;
                ctx.all_reduce(&layout.world, &mut packed)?;
                let cgrams: Vec<GramMatrix> =
                    packed.chunks_exact(r * r).map(|c| Matrix::from_column_slice(r, r, c)).collect();
                let s = ctx.section(Category::Error, |_| hadamard_grams_excluding(&cgrams, last))?;
                let h_hat = layout.own_rows(&cand.factors[last], last);
                let t = error_terms(&mut ctx, &layout.world, alpha, &m, &h_hat, &s, &cgrams[last], &cand.lambda)?;
                let e = t.relative_error()?;
                found = Some((t, cgrams));
                Ok(e)
            })?;
            if ok {
                let (t, cgrams) = found.expect("candidate was evaluated");
                let mut new_lambda = vec![1.0; r];
                for (n, (mut h, mut g)) in model.factors.into_iter().zip(cgrams).enumerate() {
                    let w: Vec<f64> = g.diagonal().iter().map(|d| d.max(0.0).sqrt()).collect();
                    scale_columns_by_inverse(&mut h, &w);
                    for i in 0..r {
                        for j in 0..r {
                            if w[i] > 0.0 && w[j] > 0.0 {
                                g[(i, j)] /= w[i] * w[j];
                            }
                        }
                    }
                    for (l, wc) in new_lambda.iter_mut().zip(&w) {
                        *l *= wc;
                    }
                    slabs[n] = h;
                    grams[n] = g;
                }
                lambda = new_lambda;
                terms = t;
                relerr = t.relative_error()?;
                accepted = true;
            }
        }

        let counters = *ctx.comm.counters();
        let words = counters.since(&counters_mark).words_received();
        counters_mark = counters;
        debug!("iteration {}: relative error {:.3e}", iter, relerr);
        records.push(IterationRecord {
            iter,
            relerr,
            breakdown: ctx.take_breakdown(),
            wall: start.elapsed(),
            words,
            partial_mttkrps: cache.stats.partial_mttkrps - partial_before,
            accelerated: accepted,
        });
        converged = relerr <= cfg.tol;
    }

    Ok(WorkerOutcome {
        records,
        slabs,
        lambda,
        counters: *ctx.comm.counters(),
        inner_stats: states.into_iter().map(|s| s.stats).collect(),
        terms,
        converged,
    })
}

fn warn_if_negative(x: &DenseTensor, cfg: &RunConfig) {
    if cfg.algorithm.is_constrained() && x.data().iter().any(|&v| v < 0.0) {
        warn!("tensor has negative entries; the nonnegative model cannot fit them");
    }
}

/// Single-context solver.
pub fn nncp_sequential(x: &DenseTensor, cfg: &RunConfig) -> Result<RunReport> {
    let shape = GridShape::single(x.order());
    cfg.validate(x.dims(), &shape)?;
    warn_if_negative(x, cfg);
    let start = Instant::now();
    let mut comm = SoloComm::new(x.order());
    let out = run_worker(&mut comm, x, cfg, &shape)?;
    let model = FactorSet::new(out.slabs, out.lambda)?;
    Ok(RunReport {
        records: out.records,
        model,
        comm: out.counters,
        worker_comm: vec![out.counters],
        inner_stats: out.inner_stats,
        terms: out.terms,
        converged: out.converged,
        wall: start.elapsed(),
    })
}

/// Solver on the simulated grid `cfg.grid`, one thread per grid cell.
pub fn nncp_parallel(x: &DenseTensor, cfg: &RunConfig) -> Result<RunReport> {
    let shape = cfg
        .grid
        .clone()
        .ok_or_else(|| Error::InvalidConfig("parallel run without a grid".into()))?;
    cfg.validate(x.dims(), &shape)?;
    warn_if_negative(x, cfg);
    let start = Instant::now();
    let outcomes = run_spmd(&shape, |w| run_worker(w, x, cfg, &shape))?;

    // Every slab of mode n exists on the workers with that n-th coordinate;
    // take it from the one whose other coordinates are zero.
    let r = cfg.rank;
    let mut factors = Vec::with_capacity(x.order());
    for (n, &d) in x.dims().iter().enumerate() {
        let map = block_partition(d, shape.procs()[n]);
        let mut h = Matrix::zeros(d, r);
        for p in 0..shape.procs()[n] {
            let mut coord = vec![0; x.order()];
            coord[n] = p;
            let slab = &outcomes[shape.rank_of(&coord)].slabs[n];
            h.rows_mut(map.range(p).start, slab.nrows()).copy_from(slab);
        }
        factors.push(h);
    }

    let mut comm = CommCounters::default();
    for o in &outcomes {
        comm.merge(&o.counters);
    }
    let worker_comm: Vec<CommCounters> = outcomes.iter().map(|o| o.counters).collect();
    let mut outcomes = outcomes.into_iter();
    let first = outcomes.next().expect("grid has at least one worker");
    let mut records = first.records;
    for o in outcomes {
        for (rec, other) in records.iter_mut().zip(&o.records) {
            rec.words += other.words;
        }
    }
    Ok(RunReport {
        records,
        model: FactorSet::new(factors, first.lambda)?,
        comm,
        worker_comm,
        inner_stats: first.inner_stats,
        terms: first.terms,
        converged: first.converged,
        wall: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::reconstruct;

    fn exact_tensor(dims: &[usize], rank: usize, seed: u64) -> (DenseTensor, FactorSet) {
        let truth = initial_model(dims, rank, seed ^ 0xabcdef).unwrap();
        (reconstruct(&truth).unwrap(), truth)
    }

    fn direct_error(x: &DenseTensor, model: &FactorSet) -> f64 {
        let y = reconstruct(model).unwrap();
        let diff: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        (diff / norm_squared(x)).sqrt()
    }

    #[test]
    fn category_names() {
        assert_eq!("MTTKRP".parse::<Category>().unwrap(), Category::Mttkrp);
        assert!(matches!("Sort".parse::<Category>(), Err(Error::UnknownCategory(_))));
        let mut bd = Breakdown::default();
        assert_eq!(bd.total_time(), Duration::ZERO);
        bd.record(Category::Mttkrp, Duration::from_secs(1), 0);
        bd.record_named("MTTKRP", Duration::from_secs(1), 0).unwrap();
        assert_eq!(bd.time(Category::Mttkrp), Duration::from_secs(2));
        let mut all = Breakdown::default();
        for c in Category::ALL {
            all.record(c, Duration::from_millis(1), 1);
        }
        assert_eq!(Category::ALL.iter().filter(|&&c| all.time(c) > Duration::ZERO).count(), 9);
        assert!(all.record_named("Sort", Duration::ZERO, 0).is_err());
    }

    #[test]
    fn error_terms_examples() {
        assert_eq!(error_from_terms(4.0, 2.0, 0.0).unwrap(), 0.0);
        assert_eq!(error_from_terms(4.0, 0.0, 0.0).unwrap(), 1.0);
        // cancellation below zero clamps
        assert_eq!(error_from_terms(1.0, 1.0, 1.0 - 1e-17).unwrap(), 0.0);
        assert!(matches!(error_from_terms(0.0, 0.0, 0.0), Err(Error::ZeroTensor)));
    }

    #[test]
    fn init_values_are_uniform_and_keyed() {
        let a = init_value(1, 0, 3, 2);
        assert_eq!(a, init_value(1, 0, 3, 2));
        assert_ne!(a, init_value(1, 0, 2, 3));
        assert_ne!(a, init_value(2, 0, 3, 2));
        let mean: f64 = (0..4000).map(|i| init_value(7, 1, i, 0)).sum::<f64>() / 4000.0;
        assert!((mean - 0.5).abs() < 0.02);
        assert!((0..1000).all(|i| (0.0..1.0).contains(&init_value(9, 2, i, 1))));
    }

    #[test]
    fn relative_error_matches_direct_norm() {
        let dims = [4, 3, 2];
        let x = DenseTensor::from_fn(dims.to_vec(), |i| ((i[0] * 5 + i[1] * 3 + i[2] * 7) % 11) as f64 / 3.0).unwrap();
        let model = initial_model(&dims, 2, 4).unwrap();
        let model = FactorSet::new(model.factors, vec![1.5, 0.7]).unwrap();
        let last = 2;
        let m = crate::tensor::naive_mttkrp(&x, &model.factors, last).unwrap();
        let (h_norm, w) = crate::tensor::normalize_columns(&model.factors[last]);
        let lambda: Vec<f64> = w.iter().zip(&model.lambda).map(|(a, b)| a * b).collect();
        let h_hat = scale_columns(&model.factors[last], &model.lambda);
        let grams: Vec<Matrix> = model.factors.iter().map(gram).collect();
        let s = hadamard_grams_excluding(&grams, last).unwrap();
        let eps = relative_error(norm_squared(&x), &m, &h_hat, &s, &gram(&h_norm), &lambda).unwrap();
        assert!((eps - direct_error(&x, &model)).abs() < 1e-12);

        let zero = vec![0.0; 2];
        let eps = relative_error(norm_squared(&x), &m, &Matrix::zeros(2, 2), &s, &gram(&h_norm), &zero).unwrap();
        assert_eq!(eps, 1.0);
    }

    #[test]
    fn exact_init_is_a_fixed_point() {
        let (x, truth) = exact_tensor(&[5, 4, 3], 2, 1);
        for alg in [Algorithm::Bpp, Algorithm::Ucp] {
            let mut cfg = RunConfig::new(2, alg);
            cfg.init = Some(truth.clone());
            cfg.max_iters = 1;
            cfg.tol = 0.0;
            let rep = nncp_sequential(&x, &cfg).unwrap();
            assert!(rep.records[1].relerr < 1e-7, "{}: {:?}", alg, rep.errors());
            let t = rep.terms;
            assert!((t.alpha - 2.0 * t.beta + t.gamma).abs() <= 1e-9 * t.alpha);
        }
    }

    #[test]
    fn zero_iterations_reports_the_start() {
        let (x, _) = exact_tensor(&[4, 4, 4], 2, 2);
        let mut cfg = RunConfig::new(2, Algorithm::Bpp);
        cfg.max_iters = 0;
        let rep = nncp_sequential(&x, &cfg).unwrap();
        assert_eq!(rep.records.len(), 1);
        let start = initial_model(&[4, 4, 4], 2, 0).unwrap();
        assert!((rep.final_error() - direct_error(&x, &start)).abs() < 1e-10);
    }

    #[test]
    fn bpp_error_is_monotone_and_matches_model() {
        let (x, _) = exact_tensor(&[6, 5, 4], 3, 3);
        let mut cfg = RunConfig::new(3, Algorithm::Bpp);
        cfg.max_iters = 30;
        cfg.tol = 0.0;
        let rep = nncp_sequential(&x, &cfg).unwrap();
        let e = rep.errors();
        for w in e.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", e);
        }
        assert!((rep.final_error() - direct_error(&x, &rep.model)).abs() < 1e-8);
        for h in &rep.model.factors {
            assert!(h.iter().all(|&v| v >= 0.0));
            for c in h.column_iter() {
                let nrm = c.norm();
                assert!(nrm == 0.0 || (nrm - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimtree_toggle_gives_same_errors() {
        let (x, _) = exact_tensor(&[5, 4, 3, 3], 2, 4);
        let mut cfg = RunConfig::new(2, Algorithm::Hals);
        cfg.max_iters = 5;
        let a = nncp_sequential(&x, &cfg).unwrap();
        cfg.dimtree = false;
        let b = nncp_sequential(&x, &cfg).unwrap();
        for (p, q) in a.errors().iter().zip(b.errors()) {
            assert!((p - q).abs() < 1e-10);
        }
        assert!(a.records[1..].iter().all(|r| r.partial_mttkrps == 2));
        assert!(b.records[1..].iter().all(|r| r.partial_mttkrps == 0));
    }

    #[test]
    fn trivial_grid_is_identical_to_sequential() {
        let (x, _) = exact_tensor(&[6, 5, 4], 2, 5);
        for alg in Algorithm::ALL {
            let mut cfg = RunConfig::new(2, alg);
            cfg.max_iters = 4;
            let seq = nncp_sequential(&x, &cfg).unwrap();
            cfg.grid = Some(GridShape::single(3));
            let par = nncp_parallel(&x, &cfg).unwrap();
            assert_eq!(seq.errors(), par.errors(), "{}", alg);
            assert_eq!(seq.model, par.model, "{}", alg);
        }
    }

    #[test]
    fn uneven_grid_tracks_sequential() {
        let (x, _) = exact_tensor(&[7, 5, 6], 2, 6);
        let mut cfg = RunConfig::new(2, Algorithm::Bpp);
        cfg.max_iters = 5;
        let seq = nncp_sequential(&x, &cfg).unwrap();
        cfg.grid = Some(GridShape::new(vec![2, 3, 2]).unwrap());
        let par = nncp_parallel(&x, &cfg).unwrap();
        for (p, q) in seq.errors().iter().zip(par.errors()) {
            assert!((p - q).abs() <= 1e-10 * p.max(1e-300) + 1e-14, "{} vs {}", p, q);
        }
        for (a, b) in seq.model.factors.iter().zip(&par.model.factors) {
            assert!((a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn config_errors() {
        let (x, _) = exact_tensor(&[3, 3, 3], 1, 7);
        let mut cfg = RunConfig::new(0, Algorithm::Bpp);
        assert!(matches!(nncp_sequential(&x, &cfg), Err(Error::InvalidConfig(_))));
        cfg.rank = 1;
        cfg.grid = Some(GridShape::new(vec![2, 2]).unwrap());
        assert!(matches!(nncp_parallel(&x, &cfg), Err(Error::Grid(_))));
        cfg.grid = Some(GridShape::new(vec![4, 1, 1]).unwrap());
        assert!(matches!(nncp_parallel(&x, &cfg), Err(Error::Grid(_))));
        let zero = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        assert!(matches!(nncp_sequential(&zero, &RunConfig::new(1, Algorithm::Mu)), Err(Error::ZeroTensor)));
    }
}
