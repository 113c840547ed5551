//! Randomized oracle-equivalence suites.

use std::collections::BTreeMap;

use clap::{Args, ValueEnum};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iwpp::edt::{self, EdtMode, EdtRule, VoronoiMap};
use iwpp::engine::{collect_seeds, run_parallel, AtomicGrid, CellValue, MergeKind};
use iwpp::grid::{Coord, Neighborhood};
use iwpp::imgio::{gen_gray_mask, gen_marker, gen_synthetic_mask};
use iwpp::oracle;
use iwpp::pixel::AtomicCell;
use iwpp::queue::WavefrontQueue;
use iwpp::recon::{self, ReconRule};
use iwpp::{
    EngineConfig, GbqCapacity, Image, PipelineConfig, PropagationRule, QueueConfig,
    QueueStrategy, StructuringElement,
};

use crate::{parse_dims, CliError, Dims};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Recon,
    Edt,
    Queue,
    Tiling,
    All,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    suite: Suite,
    #[arg(long, default_value_t = 50)]
    cases: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "64x64", value_parser = parse_dims)]
    size: Dims,
    /// Replace the atomic merge of the parallel runs with a racy
    /// load-then-store, to check that the suites notice.
    #[arg(long)]
    inject_fault: bool,
}

/// A rule whose merge reads, yields, then stores without re-checking.
struct Racy<R>(R);

impl<R: PropagationRule> PropagationRule for Racy<R> {
    type Cell = R::Cell;
    const MERGE: MergeKind = R::MERGE;

    fn propose(&self, from: usize, v: CellValue<R>, to: usize) -> CellValue<R> {
        self.0.propose(from, v, to)
    }

    fn improves(&self, at: usize, c: CellValue<R>, cur: CellValue<R>) -> bool {
        self.0.improves(at, c, cur)
    }

    fn merge(&self, cell: &Self::Cell, at: usize, candidate: CellValue<R>) -> CellValue<R> {
        let current = cell.load();
        std::thread::yield_now();
        if self.0.improves(at, candidate, current) {
            cell.store(candidate);
        }
        current
    }
}

struct Outcome {
    passed: usize,
    failures: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            passed: 0,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, case: usize, problems: Vec<String>) {
        if problems.is_empty() {
            self.passed += 1;
        } else {
            self.failures.push(format!("case {case}: {}", problems.join("; ")));
        }
    }
}

fn case_rngs(seed: u64, cases: usize) -> impl Iterator<Item = (usize, ChaCha8Rng)> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..cases).map(move |i| (i, ChaCha8Rng::seed_from_u64(master.random())))
}

fn check<T: PartialEq>(problems: &mut Vec<String>, what: &str, got: &T, want: &T) {
    if got != want {
        problems.push(format!("{what} differs"));
    }
}

fn parallel_cfg(i: usize) -> EngineConfig {
    let mut cfg = EngineConfig::with_workers([1, 2, 4, 8][i % 4]);
    cfg.queue.strategy = QueueStrategy::ALL[i % 3];
    cfg
}

/// Parallel reconstruction straight from the marker through a racy merge.
fn racy_recon(mask: &Image<u8>, marker: &Image<u8>, g: &StructuringElement, workers: usize) -> Image<u8> {
    let grid = AtomicGrid::from_image(marker);
    let rule = Racy(ReconRule::new(mask));
    let nb = Neighborhood::new(g, mask.width());
    let seeds = collect_seeds(&grid, &rule, &nb, &grid.region());
    run_parallel(&grid, &rule, g, &seeds, &EngineConfig::with_workers(workers)).expect("racy run");
    grid.to_image()
}

fn recon_suite(args: &VerifyArgs) -> Outcome {
    let Dims { width: w, height: h } = args.size;
    let g = StructuringElement::EIGHT;
    let mut out = Outcome::new();
    for (i, mut rng) in case_rngs(args.seed, args.cases) {
        let (mask, marker, expected) = if i % 2 == 0 {
            let mask = gen_gray_mask(w, h, rng.random_range(60.0..=100.0), rng.random());
            let marker = gen_marker(&mask, 40);
            let expected = oracle::iterated_dilation_reconstruction(&mask, &marker, &g);
            (mask, marker, expected)
        } else {
            let mask = gen_synthetic_mask(w, h, rng.random_range(30.0..=70.0), rng.random());
            let marker = mask.map(|v| if v != 0 && rng.random_bool(0.002) { 255 } else { 0 });
            let expected = oracle::component_reconstruction(&mask, &marker, &g);
            (mask, marker, expected)
        };
        let mut problems = Vec::new();
        let run = |r: Result<Image<u8>, recon::ReconError>| r.unwrap_or_else(|_| Image::filled(w, h, 0));
        check(&mut problems, "sr", &run(recon::recon_sr(&mask, &marker, &g)), &expected);
        check(&mut problems, "qb", &run(recon::recon_qb(&mask, &marker, &g)), &expected);
        check(&mut problems, "fh", &run(recon::recon_fh(&mask, &marker, &g)), &expected);
        let cfg = parallel_cfg(i);
        let par = if args.inject_fault {
            racy_recon(&mask, &marker, &g, cfg.n_workers.max(2))
        } else {
            run(recon::recon_parallel(&mask, &marker, &g, &cfg).map(|o| o.image))
        };
        check(&mut problems, "parallel", &par, &expected);
        out.record(i, problems);
    }
    out
}

fn random_binary(rng: &mut ChaCha8Rng, w: usize, h: usize, background: f64) -> Image<u8> {
    Image::from_fn(w, h, |_| if rng.random_bool(background) { 0 } else { 255 })
}

fn locally_stable(vr: &VoronoiMap, g: &StructuringElement) -> bool {
    let w = vr.width();
    let nb = Neighborhood::new(g, w);
    let region = vr.raw().region();
    let sq = vr.squared_distances();
    let src = vr.raw().data();
    (0..src.len()).all(|p| {
        !nb.any(&region, p, |q| {
            let s = Coord::from_index(src[p] as usize, w);
            Coord::from_index(q, w).squared_distance(s) < sq.data()[q]
        })
    })
}

fn racy_edt(mask: &Image<u8>, g: &StructuringElement, workers: usize) -> Image<u64> {
    let (vr, seeds) = edt::edt_init(mask, g);
    let w = mask.width();
    let grid = AtomicGrid::from_image(vr.raw());
    let seeds: Vec<usize> = seeds.iter().map(|p| p.index(w)).collect();
    run_parallel(&grid, &Racy(EdtRule::new(w)), g, &seeds, &EngineConfig::with_workers(workers))
        .expect("racy run");
    let sources = grid.to_image();
    Image::from_fn(w, mask.height(), |p| {
        Coord::from_index(sources.get(p) as usize, w).squared_distance(p)
    })
}

fn edt_suite(args: &VerifyArgs) -> Outcome {
    let Dims { width: w, height: h } = args.size;
    let g = StructuringElement::EIGHT;
    let mut out = Outcome::new();
    for (i, mut rng) in case_rngs(args.seed, args.cases) {
        let single = i % 5 == 0;
        let mask = if single {
            let mut m = Image::filled(w, h, 255u8);
            m.set(
                Coord::new(rng.random_range(0..w as u32), rng.random_range(0..h as u32)),
                0,
            );
            m
        } else {
            let mut m = random_binary(&mut rng, w, h, [0.5, 0.2, 0.05, 0.01][i % 4]);
            m.set(Coord::new(0, 0), 0);
            m
        };
        let exact = if w * h <= 4096 {
            edt::exact_squared_bruteforce(&mask)
        } else {
            edt::exact_squared_separable(&mask)
        }
        .expect("mask has background");
        let mut problems = Vec::new();
        let seq = edt::edt(&mask, &g, &EdtMode::Sequential).expect("mask has background");
        let d = seq.voronoi.squared_distances();
        if single {
            check(&mut problems, "single-source map", &d, &exact);
        }
        if !d.data().iter().zip(exact.data()).all(|(a, b)| a >= b) {
            problems.push("distance below exact".into());
        }
        if !locally_stable(&seq.voronoi, &g) {
            problems.push("not locally stable".into());
        }
        let zero_ok = (0..mask.len()).all(|k| (seq.distance.data()[k] == 0.0) == (mask.data()[k] == 0));
        if !zero_ok {
            problems.push("zero set differs from background".into());
        }
        let cfg = parallel_cfg(i);
        let par = if args.inject_fault {
            racy_edt(&mask, &g, cfg.n_workers.max(2))
        } else {
            edt::edt(&mask, &g, &EdtMode::Parallel(cfg))
                .expect("mask has background")
                .voronoi
                .squared_distances()
        };
        check(&mut problems, "parallel", &par, &d);
        out.record(i, problems);
    }
    out
}

fn queue_suite(args: &VerifyArgs) -> Outcome {
    let mut out = Outcome::new();
    for (i, mut rng) in case_rngs(args.seed, args.cases) {
        let n_workers = rng.random_range(1..=4);
        let per_worker: Vec<Vec<u32>> = (0..n_workers)
            .map(|w| {
                let n = rng.random_range(0..200);
                (0..n).map(|k| (w * 1000 + k) as u32).collect()
            })
            .collect();
        let total: usize = per_worker.iter().map(Vec::len).sum();
        let cap = rng.random_range(1..=300);
        let mut problems = Vec::new();
        let mut reference: Option<Vec<u32>> = None;
        for strategy in QueueStrategy::ALL {
            for gbq in [GbqCapacity::Unbounded, GbqCapacity::Fixed(cap)] {
                let cfg = QueueConfig {
                    strategy,
                    tq_capacity: rng.random_range(1..=8),
                    bq_capacity: rng.random_range(8..=40),
                    gbq_capacity: gbq,
                };
                let q = WavefrontQueue::<u32>::new(cfg, n_workers);
                std::thread::scope(|s| {
                    for (w, items) in per_worker.iter().enumerate() {
                        let q = &q;
                        s.spawn(move || {
                            let mut handle = q.worker(w);
                            for &it in items {
                                handle.push(it);
                            }
                            handle.flush();
                        });
                    }
                });
                let size = q.end_round();
                let name = strategy.name();
                if gbq == GbqCapacity::Unbounded {
                    let mut items = q.in_round();
                    items.sort_unstable();
                    if size != total || q.overflowed() {
                        problems.push(format!("{name}: lost items"));
                    }
                    match &reference {
                        None => reference = Some(items),
                        Some(r) if *r != items => problems.push(format!("{name}: multiset differs")),
                        Some(_) => {}
                    }
                    // every item is dequeued by exactly one worker
                    let mut seen = Vec::new();
                    for w in 0..n_workers {
                        let mut it = 0;
                        while let Some(v) = q.dequeue(w, it, n_workers) {
                            seen.push(v);
                            it += 1;
                        }
                    }
                    seen.sort_unstable();
                    if Some(&seen) != reference.as_ref() {
                        problems.push(format!("{name}: dequeue is not a partition"));
                    }
                } else if q.overflowed() != (total > cap) || size != total.min(cap) {
                    problems.push(format!("{name}: overflow flag or size wrong for cap {cap}"));
                }
            }
        }
        out.record(i, problems);
    }
    out
}

fn tiling_suite(args: &VerifyArgs) -> Outcome {
    let Dims { width: w, height: h } = args.size;
    let g = StructuringElement::EIGHT;
    let mut out = Outcome::new();
    for (i, mut rng) in case_rngs(args.seed, args.cases) {
        let mut cfg = PipelineConfig::new(
            rng.random_range(1..=4),
            rng.random_range(1..=w.div_ceil(2)),
            rng.random_range(1..=h.div_ceil(2)),
        );
        cfg.micro_workers = rng.random_range(1..=3);
        let mut problems = Vec::new();

        let mask = gen_gray_mask(w, h, rng.random_range(50.0..=100.0), rng.random());
        let marker = gen_marker(&mask, 40);
        let want = recon::recon_fh(&mask, &marker, &g).expect("valid marker");
        match recon::recon_tiled(&mask, &marker, &g, &cfg) {
            Ok((got, _)) => check(&mut problems, "tiled recon", &got, &want),
            Err(e) => problems.push(e.to_string()),
        }

        let mut bin = random_binary(&mut rng, w, h, [0.5, 0.1, 0.02][i % 3]);
        bin.set(Coord::new(0, 0), 0);
        let seq = edt::edt(&bin, &g, &EdtMode::Sequential).expect("background present");
        match edt::edt(&bin, &g, &EdtMode::Tiled(cfg)) {
            Ok(t) => check(
                &mut problems,
                "tiled edt",
                &t.voronoi.squared_distances(),
                &seq.voronoi.squared_distances(),
            ),
            Err(e) => problems.push(e.to_string()),
        }
        out.record(i, problems);
    }
    out
}

pub fn run(args: &VerifyArgs) -> Result<(), CliError> {
    let suites: &[Suite] = match args.suite {
        Suite::All => &[Suite::Recon, Suite::Edt, Suite::Queue, Suite::Tiling],
        ref one => std::slice::from_ref(one),
    };
    let mut failed = BTreeMap::new();
    for &suite in suites {
        let outcome = match suite {
            Suite::Recon => recon_suite(args),
            Suite::Edt => edt_suite(args),
            Suite::Queue => queue_suite(args),
            Suite::Tiling => tiling_suite(args),
            Suite::All => unreachable!(),
        };
        let name = format!("{suite:?}").to_lowercase();
        let verdict = if outcome.failures.is_empty() { "PASS" } else { "FAIL" };
        println!("{name}: {}/{} passed {verdict}", outcome.passed, args.cases);
        for f in outcome.failures.iter().take(5) {
            println!("  {f}");
        }
        if !outcome.failures.is_empty() {
            failed.insert(name, outcome.failures.len());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Internal(format!("verification failed: {failed:?}")))
    }
}
