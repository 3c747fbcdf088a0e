//! In-process processor grid.
//!
//! Each worker runs on its own thread and talks to the others only through
//! point-to-point channels, one per ordered pair of ranks. The collectives
//! are built on those channels with a linear scheme: the lowest rank of the
//! group gathers, reduces in ascending rank order, and sends the result
//! back. That is slow for large groups but makes every reduction bitwise
//! reproducible.
//!
//! Ranks linearize grid coordinates with mode 1 varying fastest:
//! `rank = p_1 + P_1 p_2 + P_1 P_2 p_3 + ...`.

use std::ops::Range;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::nnls::{ReduceHook, ReduceOp};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridShape {
    procs: Vec<usize>,
}

impl GridShape {
    pub fn new(procs: Vec<usize>) -> Result<Self> {
        if procs.is_empty() {
            return Err(Error::Grid("grid needs at least one dimension".into()));
        }
        if procs.contains(&0) {
            return Err(Error::Grid(format!("grid {:?} has a zero dimension", procs)));
        }
        Ok(Self { procs })
    }

    /// All-ones grid of the given order.
    pub fn single(order: usize) -> Self {
        Self { procs: vec![1; order.max(1)] }
    }

    pub fn procs(&self) -> &[usize] {
        &self.procs
    }

    pub fn order(&self) -> usize {
        self.procs.len()
    }

    pub fn total(&self) -> usize {
        self.procs.iter().product()
    }

    pub fn coord_of(&self, rank: usize) -> Vec<usize> {
        let mut rest = rank;
        self.procs
            .iter()
            .map(|&p| {
                let c = rest % p;
                rest /= p;
                c
            })
            .collect()
    }

    pub fn rank_of(&self, coord: &[usize]) -> usize {
        let mut rank = 0;
        let mut stride = 1;
        for (&c, &p) in coord.iter().zip(&self.procs) {
            rank += c * stride;
            stride *= p;
        }
        rank
    }

    /// Ranks whose `mode`-th coordinate equals `index`, ascending.
    pub fn slice_members(&self, mode: usize, index: usize) -> Vec<usize> {
        (0..self.total()).filter(|&r| self.coord_of(r)[mode] == index).collect()
    }
}

/// Contiguous block split of `global_len` items into `parts.len()` pieces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistMap {
    global_len: usize,
    parts: Vec<usize>,
    offsets: Vec<usize>,
}

impl DistMap {
    pub fn global_len(&self) -> usize {
        self.global_len
    }

    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn range(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k] + self.parts[k]
    }

    /// The same split with every block scaled by `width` (for row-major
    /// packed matrices with `width` columns).
    pub fn scaled(&self, width: usize) -> DistMap {
        let parts: Vec<usize> = self.parts.iter().map(|p| p * width).collect();
        DistMap::from_parts(parts)
    }

    fn from_parts(parts: Vec<usize>) -> DistMap {
        let mut offsets = Vec::with_capacity(parts.len());
        let mut acc = 0;
        for &p in &parts {
            offsets.push(acc);
            acc += p;
        }
        DistMap { global_len: acc, parts, offsets }
    }
}

/// First `len mod parts` blocks get `ceil(len/parts)` items, the rest `floor`.
pub fn block_partition(len: usize, parts: usize) -> DistMap {
    assert!(parts >= 1, "block_partition needs at least one part");
    let base = len / parts;
    let extra = len % parts;
    DistMap::from_parts((0..parts).map(|k| base + usize::from(k < extra)).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CollectiveCounter {
    pub calls: u64,
    pub words_in: u64,
    pub words_out: u64,
    pub time: Duration,
}

impl CollectiveCounter {
    fn add(&mut self, words_in: usize, words_out: usize, time: Duration) {
        self.calls += 1;
        self.words_in += words_in as u64;
        self.words_out += words_out as u64;
        self.time += time;
    }

    fn merge(&mut self, other: &CollectiveCounter) {
        self.calls += other.calls;
        self.words_in += other.words_in;
        self.words_out += other.words_out;
        self.time += other.time;
    }

    fn minus(&self, earlier: &CollectiveCounter) -> CollectiveCounter {
        CollectiveCounter {
            calls: self.calls - earlier.calls,
            words_in: self.words_in - earlier.words_in,
            words_out: self.words_out - earlier.words_out,
            time: self.time.saturating_sub(earlier.time),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommCounters {
    pub all_reduce: CollectiveCounter,
    pub all_gather: CollectiveCounter,
    pub reduce_scatter: CollectiveCounter,
}

impl CommCounters {
    pub fn merge(&mut self, other: &CommCounters) {
        self.all_reduce.merge(&other.all_reduce);
        self.all_gather.merge(&other.all_gather);
        self.reduce_scatter.merge(&other.reduce_scatter);
    }

    /// Counts accumulated since `earlier` was snapshotted.
    pub fn since(&self, earlier: &CommCounters) -> CommCounters {
        CommCounters {
            all_reduce: self.all_reduce.minus(&earlier.all_reduce),
            all_gather: self.all_gather.minus(&earlier.all_gather),
            reduce_scatter: self.reduce_scatter.minus(&earlier.reduce_scatter),
        }
    }

    /// Words received across all collectives.
    pub fn words_received(&self) -> u64 {
        self.all_reduce.words_out + self.all_gather.words_out + self.reduce_scatter.words_out
    }
}

/// A set of ranks taking part in a collective, plus the caller's position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    members: Vec<usize>,
    index: usize,
}

impl Group {
    /// `members` must be sorted and contain `me`.
    pub fn new(members: Vec<usize>, me: usize) -> Result<Self> {
        if !members.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Grid("group members must be strictly ascending".into()));
        }
        let index = members
            .iter()
            .position(|&r| r == me)
            .ok_or_else(|| Error::Grid(format!("rank {} is not in the group", me)))?;
        Ok(Self { members, index })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Position of the calling worker inside the group.
    pub fn index(&self) -> usize {
        self.index
    }

    fn root(&self) -> usize {
        self.members[0]
    }

    fn is_root(&self) -> bool {
        self.index == 0
    }
}

/// Collective operations a backend must provide. [`Worker`] implements it
/// with threads and channels; a message-passing library could stand in.
pub trait Communicator {
    fn rank(&self) -> usize;
    fn shape(&self) -> &GridShape;
    /// Elementwise reduction, result on every member.
    fn all_reduce(&mut self, group: &Group, values: &mut [f64], op: ReduceOp) -> Result<()>;
    /// Concatenation of every member's `local` in group order.
    fn all_gather(&mut self, group: &Group, local: &[f64]) -> Result<Vec<f64>>;
    /// Block `group.index()` of the elementwise sum, blocks given by `parts`.
    fn reduce_scatter(&mut self, group: &Group, local: &[f64], parts: &DistMap) -> Result<Vec<f64>>;
    fn counters(&self) -> &CommCounters;
}

enum Msg {
    Data(Vec<f64>),
    Fail(String),
}

pub struct Worker {
    rank: usize,
    coord: Vec<usize>,
    shape: GridShape,
    outboxes: Vec<Sender<Msg>>,
    inboxes: Vec<Receiver<Msg>>,
    counters: CommCounters,
}

impl Worker {
    pub fn coord(&self) -> &[usize] {
        &self.coord
    }

    /// Group of every worker.
    pub fn world(&self) -> Group {
        Group { members: (0..self.shape.total()).collect(), index: self.rank }
    }

    /// This worker's mode-`mode` slice: workers with the same `mode`-th coordinate.
    pub fn slice(&self, mode: usize) -> Group {
        let members = self.shape.slice_members(mode, self.coord[mode]);
        let index = members.iter().position(|&r| r == self.rank).expect("worker is in its own slice");
        Group { members, index }
    }

    fn send(&self, to: usize, msg: Msg) -> Result<()> {
        self.outboxes[to]
            .send(msg)
            .map_err(|_| Error::Comm(format!("rank {} hung up", to)))
    }

    fn recv(&self, from: usize) -> Result<Vec<f64>> {
        match self.inboxes[from].recv() {
            Ok(Msg::Data(v)) => Ok(v),
            Ok(Msg::Fail(why)) => Err(Error::Comm(why)),
            Err(_) => Err(Error::Comm(format!("rank {} hung up", from))),
        }
    }

    /// Root side of every collective: collect the other members' payloads
    /// in rank order, or tell everyone the collective failed.
    fn gather_at_root(&self, group: &Group, len_check: impl Fn(usize) -> bool) -> Result<Vec<Vec<f64>>> {
        let mut got = Vec::with_capacity(group.size() - 1);
        let mut bad = None;
        for &m in &group.members[1..] {
            let v = self.recv(m)?;
            if bad.is_none() && !len_check(v.len()) {
                bad = Some(format!("rank {} contributed {} words", m, v.len()));
            }
            got.push(v);
        }
        if let Some(why) = bad {
            for &m in &group.members[1..] {
                let _ = self.send(m, Msg::Fail(why.clone()));
            }
            return Err(Error::Comm(why));
        }
        Ok(got)
    }
}

impl Communicator for Worker {
    fn rank(&self) -> usize {
        self.rank
    }

    fn shape(&self) -> &GridShape {
        &self.shape
    }

    fn all_reduce(&mut self, group: &Group, values: &mut [f64], op: ReduceOp) -> Result<()> {
        let start = Instant::now();
        if group.size() > 1 {
            if group.is_root() {
                let others = self.gather_at_root(group, |n| n == values.len())?;
                for v in &others {
                    for (acc, &x) in values.iter_mut().zip(v) {
                        *acc = op.apply(*acc, x);
                    }
                }
                for &m in &group.members[1..] {
                    self.send(m, Msg::Data(values.to_vec()))?;
                }
            } else {
                self.send(group.root(), Msg::Data(values.to_vec()))?;
                let out = self.recv(group.root())?;
                values.copy_from_slice(&out);
            }
        }
        self.counters.all_reduce.add(values.len(), values.len(), start.elapsed());
        Ok(())
    }

    fn all_gather(&mut self, group: &Group, local: &[f64]) -> Result<Vec<f64>> {
        let start = Instant::now();
        let out = if group.size() == 1 {
            local.to_vec()
        } else if group.is_root() {
            let others = self.gather_at_root(group, |_| true)?;
            let mut all = local.to_vec();
            for v in others {
                all.extend(v);
            }
            for &m in &group.members[1..] {
                self.send(m, Msg::Data(all.clone()))?;
            }
            all
        } else {
            self.send(group.root(), Msg::Data(local.to_vec()))?;
            self.recv(group.root())?
        };
        self.counters.all_gather.add(local.len(), out.len(), start.elapsed());
        Ok(out)
    }

    fn reduce_scatter(&mut self, group: &Group, local: &[f64], parts: &DistMap) -> Result<Vec<f64>> {
        let start = Instant::now();
        if parts.num_parts() != group.size() || parts.global_len() != local.len() {
            return Err(Error::Comm(format!(
                "reduce-scatter of {} words into {:?} over {} members",
                local.len(),
                parts.parts(),
                group.size()
            )));
        }
        let out = if group.size() == 1 {
            local.to_vec()
        } else if group.is_root() {
            let others = self.gather_at_root(group, |n| n == local.len())?;
            let mut sum = local.to_vec();
            for v in &others {
                for (acc, &x) in sum.iter_mut().zip(v) {
                    *acc += x;
                }
            }
            for (k, &m) in group.members.iter().enumerate().skip(1) {
                self.send(m, Msg::Data(sum[parts.range(k)].to_vec()))?;
            }
            sum[parts.range(0)].to_vec()
        } else {
            self.send(group.root(), Msg::Data(local.to_vec()))?;
            self.recv(group.root())?
        };
        self.counters.reduce_scatter.add(local.len(), out.len(), start.elapsed());
        Ok(out)
    }

    fn counters(&self) -> &CommCounters {
        &self.counters
    }
}

/// Builds the workers of `shape` with their channel mesh.
pub fn build_grid(shape: &GridShape) -> Vec<Worker> {
    let p = shape.total();
    // senders[src][dst], receivers[dst][src]
    let mut senders: Vec<Vec<Option<Sender<Msg>>>> = (0..p).map(|_| (0..p).map(|_| None).collect()).collect();
    let mut receivers: Vec<Vec<Option<Receiver<Msg>>>> = (0..p).map(|_| (0..p).map(|_| None).collect()).collect();
    for src in 0..p {
        for dst in 0..p {
            let (tx, rx) = channel();
            senders[src][dst] = Some(tx);
            receivers[dst][src] = Some(rx);
        }
    }
    senders
        .into_iter()
        .zip(receivers)
        .enumerate()
        .map(|(rank, (out, inb))| Worker {
            rank,
            coord: shape.coord_of(rank),
            shape: shape.clone(),
            outboxes: out.into_iter().map(Option::unwrap).collect(),
            inboxes: inb.into_iter().map(Option::unwrap).collect(),
            counters: CommCounters::default(),
        })
        .collect()
}

/// Runs `body` on every worker of `shape`, one thread each, and returns the
/// results in rank order. A failing worker makes the whole run fail; its
/// own error wins over the hang-up errors it causes elsewhere.
pub fn run_spmd<T, F>(shape: &GridShape, body: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut Worker) -> Result<T> + Sync,
{
    let workers = build_grid(shape);
    let body = &body;
    let results: Vec<Result<T>> = thread::scope(|s| {
        let handles: Vec<_> = workers
            .into_iter()
            .map(|mut w| s.spawn(move || body(&mut w)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Comm("worker panicked".into()))))
            .collect()
    });
    let mut out = Vec::with_capacity(results.len());
    let mut first_err: Option<Error> = None;
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                let replace = match (&first_err, &e) {
                    (None, _) => true,
                    (Some(Error::Comm(_)), e) => !matches!(e, Error::Comm(_)),
                    _ => false,
                };
                if replace {
                    first_err = Some(e);
                }
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Communicator of a one-worker run. Every collective is the identity and
/// nothing is counted.
#[derive(Debug, Clone)]
pub struct SoloComm {
    shape: GridShape,
    counters: CommCounters,
}

impl SoloComm {
    pub fn new(order: usize) -> Self {
        Self { shape: GridShape::single(order), counters: CommCounters::default() }
    }
}

impl Communicator for SoloComm {
    fn rank(&self) -> usize {
        0
    }

    fn shape(&self) -> &GridShape {
        &self.shape
    }

    fn all_reduce(&mut self, _group: &Group, _values: &mut [f64], _op: ReduceOp) -> Result<()> {
        Ok(())
    }

    fn all_gather(&mut self, _group: &Group, local: &[f64]) -> Result<Vec<f64>> {
        Ok(local.to_vec())
    }

    fn reduce_scatter(&mut self, _group: &Group, local: &[f64], _parts: &DistMap) -> Result<Vec<f64>> {
        Ok(local.to_vec())
    }

    fn counters(&self) -> &CommCounters {
        &self.counters
    }
}

/// [`ReduceHook`] that all-reduces over `group`.
pub struct GroupReduce<'a, C: Communicator> {
    pub comm: &'a mut C,
    pub group: &'a Group,
}

impl<C: Communicator> ReduceHook for GroupReduce<'_, C> {
    fn reduce(&mut self, values: &mut [f64], op: ReduceOp) -> Result<()> {
        self.comm.all_reduce(self.group, values, op)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_coord_examples() {
        let g = GridShape::new(vec![3, 3, 3]).unwrap();
        assert_eq!(g.coord_of(5), vec![2, 1, 0]);
        assert_eq!(g.rank_of(&[2, 1, 0]), 5);
        let single = GridShape::single(4);
        assert_eq!(single.total(), 1);
        assert_eq!(single.slice_members(2, 0), vec![0]);
        assert!(GridShape::new(vec![2, 0]).is_err());
        assert!(GridShape::new(vec![]).is_err());
    }

    #[test]
    fn slices_of_a_column_grid() {
        let g = GridShape::new(vec![4, 1, 1]).unwrap();
        for p in 0..4 {
            assert_eq!(g.slice_members(0, p), vec![p]);
        }
        assert_eq!(g.slice_members(1, 0), vec![0, 1, 2, 3]);
        assert_eq!(g.slice_members(2, 0), vec![0, 1, 2, 3]);
    }

    #[test]
    fn partition_examples() {
        assert_eq!(block_partition(10, 4).parts(), &[3, 3, 2, 2]);
        assert_eq!(block_partition(8, 4).parts(), &[2, 2, 2, 2]);
        assert_eq!(block_partition(3, 5).parts(), &[1, 1, 1, 0, 0]);
        let d = block_partition(10, 4);
        assert_eq!(d.range(2), 6..8);
        assert_eq!(d.scaled(3).parts(), &[9, 9, 6, 6]);
    }

    #[test]
    fn all_reduce_examples() {
        let shape = GridShape::new(vec![5]).unwrap();
        let out = run_spmd(&shape, |w| {
            let mut v = [1.0];
            let g = w.world();
            w.all_reduce(&g, &mut v, ReduceOp::Sum)?;
            Ok(v[0])
        })
        .unwrap();
        assert_eq!(out, vec![5.0; 5]);

        let shape = GridShape::new(vec![2]).unwrap();
        let out = run_spmd(&shape, |w| {
            let mut v = if w.rank() == 0 { vec![1.0, 2.0] } else { vec![3.0, 4.0] };
            let g = w.world();
            w.all_reduce(&g, &mut v, ReduceOp::Sum)?;
            let mut m = vec![w.rank() as f64];
            w.all_reduce(&g, &mut m, ReduceOp::Max)?;
            Ok((v, m[0], w.counters().all_reduce))
        })
        .unwrap();
        for (v, m, c) in out {
            assert_eq!(v, vec![4.0, 6.0]);
            assert_eq!(m, 1.0);
            assert_eq!((c.calls, c.words_in, c.words_out), (2, 3, 3));
        }

        let out = run_spmd(&GridShape::single(1), |w| {
            let mut v = [7.0, 8.0];
            let g = w.world();
            w.all_reduce(&g, &mut v, ReduceOp::Min)?;
            Ok(v)
        })
        .unwrap();
        assert_eq!(out, vec![[7.0, 8.0]]);
    }

    #[test]
    fn all_gather_examples() {
        let out = run_spmd(&GridShape::new(vec![2]).unwrap(), |w| {
            let g = w.world();
            w.all_gather(&g, &[w.rank() as f64 + 1.0])
        })
        .unwrap();
        assert_eq!(out, vec![vec![1.0, 2.0], vec![1.0, 2.0]]);

        let out = run_spmd(&GridShape::new(vec![3]).unwrap(), |w| {
            let g = w.world();
            let local: Vec<f64> = match w.rank() {
                0 => vec![1.0, 2.0],
                1 => vec![3.0],
                _ => vec![],
            };
            let all = w.all_gather(&g, &local)?;
            Ok((all, w.counters().all_gather))
        })
        .unwrap();
        for (rank, (all, c)) in out.into_iter().enumerate() {
            assert_eq!(all, vec![1.0, 2.0, 3.0]);
            assert_eq!(c.words_out, 3);
            assert_eq!(c.words_in, [2, 1, 0][rank]);
        }
    }

    #[test]
    fn reduce_scatter_examples() {
        let out = run_spmd(&GridShape::new(vec![2]).unwrap(), |w| {
            let g = w.world();
            w.reduce_scatter(&g, &[1.0, 2.0], &block_partition(2, 2))
        })
        .unwrap();
        assert_eq!(out, vec![vec![2.0], vec![4.0]]);

        let out = run_spmd(&GridShape::new(vec![3]).unwrap(), |w| {
            let g = w.world();
            let parts = DistMap::from_parts(vec![2, 1, 0]);
            w.reduce_scatter(&g, &[1.0, 1.0, 1.0], &parts)
        })
        .unwrap();
        assert_eq!(out, vec![vec![3.0, 3.0], vec![3.0], vec![]]);

        let out = run_spmd(&GridShape::single(2), |w| {
            let g = w.world();
            w.reduce_scatter(&g, &[5.0, 6.0], &block_partition(2, 1))
        })
        .unwrap();
        assert_eq!(out, vec![vec![5.0, 6.0]]);
    }

    #[test]
    fn slice_collectives_stay_inside_the_slice() {
        let shape = GridShape::new(vec![2, 3]).unwrap();
        let out = run_spmd(&shape, |w| {
            let g = w.slice(1);
            let mut v = [w.rank() as f64];
            w.all_reduce(&g, &mut v, ReduceOp::Sum)?;
            Ok(v[0])
        })
        .unwrap();
        // mode-2 slices: {0,1}, {2,3}, {4,5}
        assert_eq!(out, vec![1.0, 1.0, 5.0, 5.0, 9.0, 9.0]);
    }

    #[test]
    fn length_mismatch_fails_everywhere() {
        let r = run_spmd(&GridShape::new(vec![3]).unwrap(), |w| {
            let g = w.world();
            let mut v = vec![0.0; 1 + usize::from(w.rank() == 2)];
            w.all_reduce(&g, &mut v, ReduceOp::Sum)
        });
        assert!(matches!(r, Err(Error::Comm(_))));
    }

    #[test]
    fn worker_error_is_reported() {
        let r: Result<Vec<()>> = run_spmd(&GridShape::new(vec![2]).unwrap(), |w| {
            if w.rank() == 1 {
                return Err(Error::InvalidConfig("boom".into()));
            }
            let g = w.world();
            w.all_reduce(&g, &mut [1.0], ReduceOp::Sum)
        });
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    proptest! {
        #[test]
        fn rank_coord_bijection(procs in proptest::collection::vec(1usize..5, 1..5)) {
            let g = GridShape::new(procs).unwrap();
            for r in 0..g.total() {
                prop_assert_eq!(g.rank_of(&g.coord_of(r)), r);
            }
        }

        #[test]
        fn slices_partition_ranks(procs in proptest::collection::vec(1usize..4, 1..5)) {
            let g = GridShape::new(procs.clone()).unwrap();
            for (n, &pn) in procs.iter().enumerate() {
                let mut seen = vec![0; g.total()];
                for idx in 0..pn {
                    let s = g.slice_members(n, idx);
                    prop_assert_eq!(s.len(), g.total() / pn);
                    for r in s {
                        seen[r] += 1;
                    }
                }
                prop_assert!(seen.iter().all(|&c| c == 1));
            }
        }

        #[test]
        fn partition_is_balanced(len in 0usize..200, parts in 1usize..20) {
            let d = block_partition(len, parts);
            prop_assert_eq!(d.parts().iter().sum::<usize>(), len);
            let max = *d.parts().iter().max().unwrap();
            let min = *d.parts().iter().min().unwrap();
            prop_assert!(max - min <= 1);
            prop_assert!(d.parts().windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn collectives_match_reference(p in 1usize..5, len in 0usize..7, seed in 0u64..1000) {
            let val = |rank: usize, i: usize| ((seed as usize * 31 + rank * 7 + i * 3) % 17) as f64 * 0.25;
            let shape = GridShape::new(vec![p]).unwrap();
            let parts = block_partition(len, p);
            let out = run_spmd(&shape, |w| {
                let g = w.world();
                let local: Vec<f64> = (0..len).map(|i| val(w.rank(), i)).collect();
                let mut red = local.clone();
                w.all_reduce(&g, &mut red, ReduceOp::Sum)?;
                let gath = w.all_gather(&g, &local)?;
                let rs = w.reduce_scatter(&g, &local, &parts)?;
                Ok((red, gath, rs))
            }).unwrap();
            let sum: Vec<f64> = (0..len).map(|i| (0..p).fold(0.0, |a, r| a + val(r, i))).collect();
            let cat: Vec<f64> = (0..p).flat_map(|r| (0..len).map(move |i| val(r, i))).collect();
            for (rank, (red, gath, rs)) in out.into_iter().enumerate() {
                prop_assert_eq!(&red, &sum);
                prop_assert_eq!(&gath, &cat);
                prop_assert_eq!(&rs[..], &sum[parts.range(rank)]);
            }
        }
    }
}
