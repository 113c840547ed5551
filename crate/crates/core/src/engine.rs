//! Generic irregular-wavefront executor.
//!
//! A [`PropagationRule`] describes what a wavefront element offers to each of
//! its neighbours and when that offer is an improvement. The executor runs
//! such a rule either with a FIFO queue on one thread ([`run_sequential`]) or
//! in rounds on a worker pool sharing one [`AtomicGrid`] ([`run_parallel`]).
//! In the parallel executor the only write path is [`PropagationRule::merge`];
//! a neighbour is queued only by the worker whose merge actually changed it.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Barrier;

use thiserror::Error;

use crate::grid::{Image, Neighborhood, Region, StructuringElement};
use crate::pixel::AtomicCell;
use crate::queue::{QueueConfig, WavefrontQueue};

/// How a rule installs a value into a shared cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeKind {
    /// The rule's order is the value type's natural order; a single
    /// `fetch_max` both tests and installs.
    FetchMax,
    /// Read, test and `compare_exchange`, retrying while other workers race.
    CompareExchange,
}

/// Value stored in a rule's cells.
pub type CellValue<R> = <<R as PropagationRule>::Cell as AtomicCell>::Value;

/// Propagation condition and update of an irregular wavefront computation.
///
/// Contract: `improves(at, ., .)` must be a strict order on the values a
/// cell can take, and merging must only ever move a cell up that order. Under
/// that contract every execution order reaches a fixed point.
pub trait PropagationRule: Sync {
    type Cell: AtomicCell;

    const MERGE: MergeKind;

    /// Value that element `from`, currently holding `from_value`, offers to
    /// its neighbour `to`.
    fn propose(&self, from: usize, from_value: CellValue<Self>, to: usize) -> CellValue<Self>;

    /// Whether `candidate` is strictly better than `current` for cell `at`.
    fn improves(&self, at: usize, candidate: CellValue<Self>, current: CellValue<Self>) -> bool;

    /// Installs `candidate` into `cell` if it improves on the current value
    /// and returns the value held just before.
    fn merge(&self, cell: &Self::Cell, at: usize, candidate: CellValue<Self>) -> CellValue<Self> {
        atomic_merge(self, cell, at, candidate)
    }
}

/// Atomic read-modify-write for `rule`, returning the prior value.
///
/// The caller changed the cell iff `rule.improves(at, proposed, prior)`.
pub fn atomic_merge<R: PropagationRule + ?Sized>(
    rule: &R,
    cell: &R::Cell,
    at: usize,
    proposed: CellValue<R>,
) -> CellValue<R> {
    match R::MERGE {
        MergeKind::FetchMax => cell.fetch_max(proposed),
        MergeKind::CompareExchange => {
            let mut current = cell.load();
            loop {
                if !rule.improves(at, proposed, current) {
                    return current;
                }
                match cell.compare_exchange(current, proposed) {
                    Ok(prior) => return prior,
                    Err(actual) => current = actual,
                }
            }
        }
    }
}

/// Row-major grid of atomic cells shared by all workers of a run.
pub struct AtomicGrid<C> {
    width: usize,
    height: usize,
    cells: Box<[C]>,
}

impl<C: AtomicCell> AtomicGrid<C> {
    pub fn from_image(img: &Image<C::Value>) -> Self {
        AtomicGrid {
            width: img.width(),
            height: img.height(),
            cells: img.data().iter().map(|&v| C::new(v)).collect(),
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize) -> C::Value) -> Self {
        AtomicGrid {
            width,
            height,
            cells: (0..width * height).map(|i| C::new(f(i))).collect(),
        }
    }

    pub fn to_image(&self) -> Image<C::Value> {
        Image::from_vec(
            self.width,
            self.height,
            self.cells.iter().map(|c| c.load()).collect(),
        )
        .expect("grid dimensions are valid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn region(&self) -> Region {
        Region::new(0, 0, self.width, self.height)
    }

    #[inline]
    pub fn cell(&self, i: usize) -> &C {
        &self.cells[i]
    }

    #[inline]
    pub fn load(&self, i: usize) -> C::Value {
        self.cells[i].load()
    }

    #[inline]
    pub fn store(&self, i: usize, v: C::Value) {
        self.cells[i].store(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub n_workers: usize,
    pub queue: QueueConfig,
    /// Abort after this many rounds (summed over re-executions).
    pub max_rounds: Option<usize>,
}

impl EngineConfig {
    pub fn with_workers(n_workers: usize) -> Self {
        EngineConfig {
            n_workers,
            ..Default::default()
        }
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            n_workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            queue: QueueConfig::default(),
            max_rounds: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("propagation did not settle within {limit} rounds; the rule may violate the monotone merge contract")]
    RoundLimit { limit: usize },
    #[error("engine needs at least one worker")]
    NoWorkers,
}

/// Work counters of one propagation phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunStats {
    /// Queue rounds processed (parallel executor; 0 for the FIFO executor).
    pub rounds: usize,
    /// Elements taken off the queue.
    pub queued_total: u64,
    /// Merges that changed a cell.
    pub merges: u64,
    /// Propagation phases run, including overflow re-executions.
    pub executions: usize,
    /// Re-executions caused by a full global queue.
    pub overflow_count: usize,
    /// Global-queue reservations.
    pub reservations: u64,
}

impl RunStats {
    pub fn absorb(&mut self, other: &RunStats) {
        self.rounds += other.rounds;
        self.queued_total += other.queued_total;
        self.merges += other.merges;
        self.executions += other.executions;
        self.overflow_count += other.overflow_count;
        self.reservations += other.reservations;
    }
}

/// FIFO propagation over the whole grid.
pub fn run_sequential<R: PropagationRule>(
    grid: &AtomicGrid<R::Cell>,
    rule: &R,
    g: &StructuringElement,
    seeds: &[usize],
) -> RunStats {
    let nb = Neighborhood::new(g, grid.width());
    run_sequential_in(grid, rule, &nb, &grid.region(), seeds, |_| {})
}

/// FIFO propagation restricted to `region`: neighbours outside it are not
/// visited. `on_change` sees every cell whose value changed.
pub fn run_sequential_in<R: PropagationRule>(
    grid: &AtomicGrid<R::Cell>,
    rule: &R,
    nb: &Neighborhood,
    region: &Region,
    seeds: &[usize],
    mut on_change: impl FnMut(usize),
) -> RunStats {
    let mut queue: VecDeque<usize> = seeds.iter().copied().collect();
    let mut stats = RunStats {
        executions: 1,
        ..Default::default()
    };
    while let Some(p) = queue.pop_front() {
        stats.queued_total += 1;
        let vp = grid.load(p);
        nb.for_each(region, p, |q| {
            let candidate = rule.propose(p, vp, q);
            if rule.improves(q, candidate, grid.load(q)) {
                grid.store(q, candidate);
                stats.merges += 1;
                on_change(q);
                queue.push_back(q);
            }
        });
    }
    stats
}

/// Whether `p` can currently improve one of its neighbours in `region`.
#[inline]
pub fn is_active<R: PropagationRule>(
    grid: &AtomicGrid<R::Cell>,
    rule: &R,
    nb: &Neighborhood,
    region: &Region,
    p: usize,
) -> bool {
    let vp = grid.load(p);
    nb.any(region, p, |q| rule.improves(q, rule.propose(p, vp, q), grid.load(q)))
}

/// Raster-ordered list of every element of `region` that can still propagate.
pub fn collect_seeds<R: PropagationRule>(
    grid: &AtomicGrid<R::Cell>,
    rule: &R,
    nb: &Neighborhood,
    region: &Region,
) -> Vec<usize> {
    region
        .indices(grid.width())
        .filter(|&p| is_active(grid, rule, nb, region, p))
        .collect()
}

/// Round-based parallel propagation.
///
/// Seeds are loaded in the given order as the first round and split among
/// workers by static partition. When the bounded global queue overflows, the
/// run is finished with the surviving elements and the whole phase is
/// repeated on the current grid, with seeds recomputed by a full scan, until
/// a run completes without dropping anything.
pub fn run_parallel<R: PropagationRule>(
    grid: &AtomicGrid<R::Cell>,
    rule: &R,
    g: &StructuringElement,
    seeds: &[usize],
    cfg: &EngineConfig,
) -> Result<RunStats, EngineError> {
    if cfg.n_workers == 0 {
        return Err(EngineError::NoWorkers);
    }
    let nb = Neighborhood::new(g, grid.width());
    let region = grid.region();
    let mut stats = RunStats::default();
    let mut seeds = seeds.to_vec();
    loop {
        let queue = WavefrontQueue::with_initial(cfg.queue, cfg.n_workers, &seeds);
        let budget = cfg.max_rounds.map(|m| m.saturating_sub(stats.rounds));
        let run = propagate_rounds(grid, rule, &nb, &region, &queue, cfg.n_workers, budget);
        stats.absorb(&run);
        stats.reservations += queue.stats().reservations;
        if let Some(limit) = cfg.max_rounds {
            if stats.rounds >= limit && queue.in_round_len() > 0 {
                return Err(EngineError::RoundLimit { limit });
            }
        }
        if !queue.overflowed() {
            return Ok(stats);
        }
        stats.overflow_count += 1;
        seeds = collect_seeds(grid, rule, &nb, &region);
    }
}

/// Runs rounds until the queue drains or `budget` rounds have passed.
fn propagate_rounds<R: PropagationRule>(
    grid: &AtomicGrid<R::Cell>,
    rule: &R,
    nb: &Neighborhood,
    region: &Region,
    queue: &WavefrontQueue<usize>,
    n_workers: usize,
    budget: Option<usize>,
) -> RunStats {
    let barrier = Barrier::new(n_workers);
    let done = AtomicBool::new(queue.in_round_len() == 0 || budget == Some(0));
    let rounds = AtomicUsize::new(0);
    let queued = AtomicU64::new(queue.in_round_len() as u64);
    let merges = AtomicU64::new(0);

    let worker = |w: usize| {
        let mut changed = 0u64;
        while !done.load(Ordering::Acquire) {
            let mut out = queue.worker(w);
            let mut iter = 0;
            while let Some(p) = queue.dequeue(w, iter, n_workers) {
                iter += 1;
                let vp = grid.load(p);
                nb.for_each(region, p, |q| {
                    let candidate = rule.propose(p, vp, q);
                    if rule.improves(q, candidate, grid.load(q)) {
                        let prior = rule.merge(grid.cell(q), q, candidate);
                        if rule.improves(q, candidate, prior) {
                            changed += 1;
                            out.push(q);
                        }
                    }
                });
            }
            out.flush();
            drop(out);

            if barrier.wait().is_leader() {
                let size = queue.end_round();
                let r = rounds.fetch_add(1, Ordering::AcqRel) + 1;
                queued.fetch_add(size as u64, Ordering::Relaxed);
                if size == 0 || budget.is_some_and(|b| r >= b) {
                    done.store(true, Ordering::Release);
                }
            }
            barrier.wait();
        }
        merges.fetch_add(changed, Ordering::Relaxed);
    };

    if n_workers == 1 {
        worker(0);
    } else {
        std::thread::scope(|s| {
            for w in 0..n_workers {
                let worker = &worker;
                s.spawn(move || worker(w));
            }
        });
    }

    RunStats {
        rounds: rounds.into_inner(),
        queued_total: queued.into_inner(),
        merges: merges.into_inner(),
        executions: 1,
        overflow_count: 0,
        reservations: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Coord;
    use crate::oracle;
    use crate::queue::{GbqCapacity, QueueStrategy};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::AtomicU8;

    /// Max-propagation clamped by a cap image (the reconstruction update).
    struct Capped<'a> {
        cap: &'a [u8],
    }

    impl PropagationRule for Capped<'_> {
        type Cell = AtomicU8;
        const MERGE: MergeKind = MergeKind::FetchMax;

        fn propose(&self, _from: usize, v: u8, to: usize) -> u8 {
            v.min(self.cap[to])
        }

        fn improves(&self, _at: usize, candidate: u8, current: u8) -> bool {
            candidate > current
        }
    }

    /// Same order, forced through the compare-exchange path.
    struct CappedCas<'a>(Capped<'a>);

    impl PropagationRule for CappedCas<'_> {
        type Cell = AtomicU8;
        const MERGE: MergeKind = MergeKind::CompareExchange;

        fn propose(&self, from: usize, v: u8, to: usize) -> u8 {
            self.0.propose(from, v, to)
        }

        fn improves(&self, at: usize, candidate: u8, current: u8) -> bool {
            self.0.improves(at, candidate, current)
        }
    }

    fn instance(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (Image<u8>, Image<u8>) {
        let cap = Image::from_fn(w, h, |_| rng.random_range(0..=255u8));
        let start = cap.map(|v| if v > 200 { v.saturating_sub(30) } else { 0 });
        (cap, start)
    }

    fn all_indices(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    fn sequential(cap: &Image<u8>, start: &Image<u8>, g: &StructuringElement) -> Image<u8> {
        let grid = AtomicGrid::from_image(start);
        let rule = Capped { cap: cap.data() };
        run_sequential(&grid, &rule, g, &all_indices(grid.len()));
        grid.to_image()
    }

    #[test]
    fn empty_seeds_leave_grid_unchanged() {
        let img = Image::from_fn(4, 4, |p| (p.x * 10 + p.y) as u8);
        let grid = AtomicGrid::from_image(&img);
        let rule = Capped { cap: img.data() };
        let stats = run_sequential(&grid, &rule, &StructuringElement::EIGHT, &[]);
        assert_eq!(grid.to_image(), img);
        assert_eq!(stats.merges, 0);
    }

    #[test]
    fn flat_grid_bounded_by_itself_is_stable() {
        let img = Image::filled(5, 5, 9u8);
        let grid = AtomicGrid::from_image(&img);
        let rule = Capped { cap: img.data() };
        let stats = run_sequential(&grid, &rule, &StructuringElement::FOUR, &[12]);
        assert_eq!(grid.to_image(), img);
        assert_eq!(stats.merges, 0);
    }

    #[test]
    fn sequential_matches_iterated_dilation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for g in [StructuringElement::FOUR, StructuringElement::EIGHT] {
            for _ in 0..50 {
                let (cap, start) = instance(&mut rng, 5, 5);
                let expected = oracle::iterated_dilation_reconstruction(&cap, &start, &g);
                assert_eq!(sequential(&cap, &start, &g), expected);
            }
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = StructuringElement::EIGHT;
        for case in 0..40 {
            let (cap, start) = instance(&mut rng, 64, 64);
            let expected = sequential(&cap, &start, &g);
            let workers = [1, 2, 4, 8][case % 4];
            let mut cfg = EngineConfig::with_workers(workers);
            cfg.queue.strategy = QueueStrategy::ALL[case % 3];
            cfg.queue.gbq_capacity = GbqCapacity::Unbounded;

            let grid = AtomicGrid::from_image(&start);
            let rule = Capped { cap: cap.data() };
            let seeds = collect_seeds(&grid, &rule, &Neighborhood::new(&g, 64), &grid.region());
            run_parallel(&grid, &rule, &g, &seeds, &cfg).unwrap();
            assert_eq!(grid.to_image(), expected, "case {case}, {workers} workers");

            let grid = AtomicGrid::from_image(&start);
            let rule = CappedCas(Capped { cap: cap.data() });
            run_parallel(&grid, &rule, &g, &seeds, &cfg).unwrap();
            assert_eq!(grid.to_image(), expected, "cas path, case {case}");
        }
    }

    #[test]
    fn one_worker_round_order_equals_fifo() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = StructuringElement::FOUR;
        let (cap, start) = instance(&mut rng, 32, 32);
        let nb = Neighborhood::new(&g, 32);

        let seq = AtomicGrid::from_image(&start);
        let rule = Capped { cap: cap.data() };
        let seeds = collect_seeds(&seq, &rule, &nb, &seq.region());
        let s = run_sequential(&seq, &rule, &g, &seeds);

        let par = AtomicGrid::from_image(&start);
        let mut cfg = EngineConfig::with_workers(1);
        cfg.queue.gbq_capacity = GbqCapacity::Unbounded;
        let p = run_parallel(&par, &rule, &g, &seeds, &cfg).unwrap();
        assert_eq!(par.to_image(), seq.to_image());
        assert_eq!(p.queued_total, s.queued_total);
        assert_eq!(p.merges, s.merges);
    }

    #[test]
    fn overflow_reexecution_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let g = StructuringElement::EIGHT;
        for workers in [1, 3] {
            let (cap, start) = instance(&mut rng, 48, 48);
            let expected = sequential(&cap, &start, &g);
            let grid = AtomicGrid::from_image(&start);
            let rule = Capped { cap: cap.data() };
            let seeds = collect_seeds(&grid, &rule, &Neighborhood::new(&g, 48), &grid.region());
            let mut cfg = EngineConfig::with_workers(workers);
            cfg.queue.gbq_capacity = GbqCapacity::Fixed(16);
            let stats = run_parallel(&grid, &rule, &g, &seeds, &cfg).unwrap();
            assert!(stats.overflow_count >= 2, "{stats:?}");
            assert_eq!(stats.executions, stats.overflow_count + 1);
            assert_eq!(grid.to_image(), expected);
        }
    }

    #[test]
    fn fixed_point_has_no_active_elements() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let g = StructuringElement::EIGHT;
        let (cap, start) = instance(&mut rng, 20, 20);
        let out = sequential(&cap, &start, &g);
        let grid = AtomicGrid::from_image(&out);
        let rule = Capped { cap: cap.data() };
        assert!(collect_seeds(&grid, &rule, &Neighborhood::new(&g, 20), &grid.region()).is_empty());
        let stats = run_parallel(&grid, &rule, &g, &[], &EngineConfig::with_workers(2)).unwrap();
        assert_eq!(stats.rounds, 0);
        assert_eq!(grid.to_image(), out);
    }

    #[test]
    fn merges_are_bounded_by_value_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let g = StructuringElement::EIGHT;
        let (cap, start) = instance(&mut rng, 16, 16);
        let grid = AtomicGrid::from_image(&start);
        let rule = Capped { cap: cap.data() };
        let seeds = all_indices(grid.len());
        let stats = run_parallel(&grid, &rule, &g, &seeds, &EngineConfig::with_workers(4)).unwrap();
        assert!(stats.merges <= (grid.len() * 256) as u64);
    }

    #[test]
    fn round_limit_is_reported() {
        let cap = Image::filled(32, 1, 200u8);
        let mut start = Image::filled(32, 1, 0u8);
        start.set(Coord::new(0, 0), 200);
        let grid = AtomicGrid::from_image(&start);
        let rule = Capped { cap: cap.data() };
        let mut cfg = EngineConfig::with_workers(2);
        cfg.max_rounds = Some(5);
        let err = run_parallel(&grid, &rule, &StructuringElement::FOUR, &[0], &cfg).unwrap_err();
        assert_eq!(err, EngineError::RoundLimit { limit: 5 });
    }

    #[test]
    fn atomic_merge_examples() {
        let rule = Capped { cap: &[255] };
        let cell = AtomicU8::new(5);
        assert_eq!(atomic_merge(&rule, &cell, 0, 7), 5);
        assert_eq!(AtomicCell::load(&cell), 7);
        assert_eq!(atomic_merge(&rule, &cell, 0, 5), 7);
        assert_eq!(AtomicCell::load(&cell), 7);
        assert!(!rule.improves(0, 5, 7), "caller must not enqueue");
    }

    #[test]
    fn racing_merges_every_interleaving() {
        // Two workers offering 6 and 9 to a cell holding 0, modelled as the
        // two possible serializations of their atomic operations.
        let fetch = Capped { cap: &[255] };
        let cas = CappedCas(Capped { cap: &[255] });
        for order in [[6u8, 9], [9, 6]] {
            for use_cas in [false, true] {
                let cell = AtomicU8::new(0);
                let mut enqueued = Vec::new();
                for v in order {
                    let prior = if use_cas {
                        atomic_merge(&cas, &cell, 0, v)
                    } else {
                        atomic_merge(&fetch, &cell, 0, v)
                    };
                    if fetch.improves(0, v, prior) {
                        enqueued.push(v);
                    }
                }
                assert_eq!(AtomicCell::load(&cell), 9);
                let want: Vec<u8> = if order[0] == 6 { vec![6, 9] } else { vec![9] };
                assert_eq!(enqueued, want);
            }
        }

        // Real threads: final value is the maximum, and the 9 always enqueues.
        for _ in 0..200 {
            let cell = AtomicU8::new(0);
            let results: Vec<(u8, bool)> = std::thread::scope(|s| {
                let hs: Vec<_> = [6u8, 9]
                    .into_iter()
                    .map(|v| {
                        let cell = &cell;
                        let rule = &fetch;
                        s.spawn(move || (v, rule.improves(0, v, atomic_merge(rule, cell, 0, v))))
                    })
                    .collect();
                hs.into_iter().map(|h| h.join().unwrap()).collect()
            });
            assert_eq!(AtomicCell::load(&cell), 9);
            assert!(results.contains(&(9, true)));
        }
    }
}
