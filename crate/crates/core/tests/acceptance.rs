//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Every tolerance here is zero differing pixels unless stated otherwise.
//! A criterion that cannot hold on the current machine (a speedup on fewer
//! cores than workers) is reported as an expected failure and does not fail
//! the run; any other failure exits non-zero.

use std::time::{Duration, Instant};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iwpp::edt::{self, exact_squared_bruteforce, EdtMode};
use iwpp::imgio::{gen_gray_mask, gen_synthetic_mask};
use iwpp::oracle::{component_reconstruction, iterated_dilation_reconstruction};
use iwpp::queue::WavefrontQueue;
use iwpp::recon::{self, h_marker};
use iwpp::tiles::TaskKind;
use iwpp::{
    Coord, EngineConfig, GbqCapacity, Image, PipelineConfig, QueueConfig, QueueStrategy,
    StructuringElement,
};

const WORKERS: [usize; 4] = [1, 2, 4, 8];
const TILES: [usize; 3] = [32, 64, 256];
const H: u8 = 40;
const SPEEDUP_THRESHOLD: f64 = 1.5;

enum Verdict {
    Pass(String),
    Fail(String),
    /// Fails for a reason outside the implementation's control.
    ExpectedFail { detail: String, reason: String },
}

fn differing<T: PartialEq + Copy>(a: &Image<T>, b: &Image<T>) -> usize {
    if a.dims() != b.dims() {
        return a.len().max(b.len());
    }
    a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count()
}

fn noise(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image<u8> {
    Image::from_fn(w, h, |_| rng.random())
}

/// Gray test image: synthetic blobs or plain noise.
fn gray_image(rng: &mut ChaCha8Rng, i: usize, w: usize, h: usize) -> Image<u8> {
    if i % 3 == 2 {
        noise(rng, w, h)
    } else {
        gen_gray_mask(w, h, rng.random_range(40.0..=100.0), rng.random())
    }
}

fn random_binary(rng: &mut ChaCha8Rng, w: usize, h: usize, background: f64) -> Image<u8> {
    Image::from_fn(w, h, |_| if rng.random_bool(background) { 0 } else { 255 })
}

fn conn(i: usize) -> StructuringElement {
    if i.is_multiple_of(2) {
        StructuringElement::EIGHT
    } else {
        StructuringElement::FOUR
    }
}

fn c1_recon_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let g = StructuringElement::EIGHT;
    let (images, mut bad, mut combos) = (200, 0, std::collections::BTreeSet::new());
    for i in 0..images {
        let mask = gray_image(&mut rng, i, 256, 256);
        let marker = h_marker(&mask, H);
        let want = recon::recon_fh(&mask, &marker, &g).expect("valid marker");
        let k = i % 36;
        let (workers, strategy, tile) = (WORKERS[k % 4], QueueStrategy::ALL[(k / 4) % 3], TILES[k / 12]);
        combos.insert(k);
        let mut cfg = EngineConfig::with_workers(workers);
        cfg.queue.strategy = strategy;
        let par = recon::recon_parallel(&mask, &marker, &g, &cfg).expect("parallel run").image;
        let pipeline = PipelineConfig {
            micro_workers: 1 + (i / 36) % 2,
            ..PipelineConfig::new(workers, tile, tile)
        };
        let (tiled, _) = recon::recon_tiled(&mask, &marker, &g, &pipeline).expect("tiled run");
        bad += differing(&par, &want) + differing(&tiled, &want);
    }
    let detail = format!(
        "{images} images 256x256, {} worker/strategy/tile combinations, {bad} differing pixels",
        combos.len()
    );
    if bad == 0 { Verdict::Pass(detail) } else { Verdict::Fail(detail) }
}

fn c2_algorithm_agreement() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (images, mut bad) = (200, 0);
    for i in 0..images {
        let g = conn(i);
        let mask = gray_image(&mut rng, i, 64, 64);
        let marker = h_marker(&mask, rng.random_range(1..=80));
        let fh = recon::recon_fh(&mask, &marker, &g).expect("valid marker");
        let sr = recon::recon_sr(&mask, &marker, &g).expect("valid marker");
        let qb = recon::recon_qb(&mask, &marker, &g).expect("valid marker");
        bad += differing(&sr, &fh) + differing(&qb, &fh);
    }
    let detail = format!("{images} images 64x64, sr/qb vs fh, {bad} differing pixels");
    if bad == 0 { Verdict::Pass(detail) } else { Verdict::Fail(detail) }
}

fn c3_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (images, mut bad) = (100, 0);
    for i in 0..images {
        let g = conn(i);
        let mask = gray_image(&mut rng, i, 32, 32);
        let marker = if i % 4 < 2 {
            h_marker(&mask, H)
        } else {
            // arbitrary marker below the mask
            Image::from_fn(32, 32, |p| rng.random_range(0..=mask.get(p)))
        };
        let want = iterated_dilation_reconstruction(&mask, &marker, &g);
        bad += differing(&recon::recon_fh(&mask, &marker, &g).expect("valid marker"), &want);
    }
    let detail = format!("{images} images 32x32 vs iterated dilation, {bad} differing pixels");
    if bad == 0 { Verdict::Pass(detail) } else { Verdict::Fail(detail) }
}

fn c4_binary() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (instances, mut bad) = (100, 0);
    for i in 0..instances {
        let g = conn(i);
        let mask = if i % 2 == 0 {
            let density = rng.random_range(0.3..0.6);
            random_binary(&mut rng, 48, 48, density)
        } else {
            gen_synthetic_mask(48, 48, rng.random_range(20.0..80.0), rng.random())
        };
        let marker = mask.map(|v| if v != 0 && rng.random_bool(0.01) { 255 } else { 0 });
        let want = component_reconstruction(&mask, &marker, &g);
        let outputs = [
            recon::recon_fh(&mask, &marker, &g),
            recon::recon_sr(&mask, &marker, &g),
            recon::recon_qb(&mask, &marker, &g),
            recon::recon_parallel(&mask, &marker, &g, &EngineConfig::with_workers(WORKERS[i % 4]))
                .map(|o| o.image),
            recon::recon_tiled(&mask, &marker, &g, &PipelineConfig::new(3, 16, 16)).map(|o| o.0),
        ];
        for out in outputs {
            bad += differing(&out.expect("valid marker"), &want);
        }
    }
    let detail = format!("{instances} binary instances 48x48 vs flood fill, all algorithms, {bad} differing pixels");
    if bad == 0 { Verdict::Pass(detail) } else { Verdict::Fail(detail) }
}

/// Squared distance maps of every mode, including masks without background.
fn edt_modes(mask: &Image<u8>, seq_only: bool, i: usize) -> Vec<Image<u64>> {
    let g = StructuringElement::EIGHT;
    let (vr, seeds) = edt::edt_init(mask, &g);
    let mut cfg = EngineConfig::with_workers(WORKERS[i % 4]);
    cfg.queue.strategy = QueueStrategy::ALL[(i / 4) % 3];
    let tile = TILES[i % 3];
    let mut modes = vec![EdtMode::Sequential];
    if !seq_only {
        modes.push(EdtMode::Parallel(cfg));
        modes.push(EdtMode::Tiled(PipelineConfig::new(WORKERS[(i + 1) % 4], tile, tile)));
    }
    modes
        .iter()
        .map(|m| edt::edt_propagate(&vr, &seeds, &g, m).expect("edt run").0.squared_distances())
        .collect()
}

fn c5_edt_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let coverages = [25.0, 50.0, 75.0, 100.0];
    let (per, mut bad, mut bad_masks) = (50, 0, 0);
    for (ci, &c) in coverages.iter().enumerate() {
        for k in 0..per {
            let mask = random_binary(&mut rng, 256, 256, 1.0 - c / 100.0);
            let maps = edt_modes(&mask, false, ci * per + k);
            let d = maps[1..].iter().map(|m| differing(m, &maps[0])).sum::<usize>();
            bad += d;
            bad_masks += usize::from(d > 0);
        }
    }
    let detail = format!(
        "{} random masks 256x256 at {coverages:?}% foreground, seq/parallel/tiled, \
         {bad} differing pixels in {bad_masks} masks",
        per * coverages.len()
    );
    if bad == 0 { Verdict::Pass(detail) } else { Verdict::Fail(detail) }
}

/// Not a criterion: how often modes disagree on blob-shaped masks.
fn blob_mask_note() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(115);
    let (n, mut masks, mut pixels) = (20, 0, 0);
    for i in 0..n {
        let mask = gen_synthetic_mask(256, 256, [25.0, 50.0, 75.0, 90.0][i % 4], rng.random());
        let maps = edt_modes(&mask, false, i);
        let d = maps[1..].iter().map(|m| differing(m, &maps[0])).sum::<usize>();
        masks += usize::from(d > 0);
        pixels += d;
    }
    format!("blob-shaped 256x256 masks: modes disagree in {masks}/{n} masks ({pixels} pixels)")
}

fn c6_edt_bounds() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let (masks, mut below, mut single, mut single_bad) = (100, 0, 0, 0);
    for i in 0..masks {
        let mut mask = if i % 4 == 0 {
            single += 1;
            Image::filled(16, 16, 255u8)
        } else {
            let density = rng.random_range(0.01..0.4);
            random_binary(&mut rng, 16, 16, density)
        };
        mask.set(Coord::new(rng.random_range(0..16), rng.random_range(0..16)), 0);
        let exact = exact_squared_bruteforce(&mask).expect("has background");
        for m in edt_modes(&mask, false, i) {
            below += m.data().iter().zip(exact.data()).filter(|(a, b)| a < b).count();
            if i % 4 == 0 {
                single_bad += differing(&m, &exact);
            }
        }
    }
    // adversarial search: three background pixels on 16x16
    let mut found = None;
    let mut tries = 0;
    while found.is_none() && tries < 100_000 {
        tries += 1;
        let mut mask = Image::filled(16, 16, 255u8);
        for _ in 0..3 {
            mask.set(Coord::new(rng.random_range(0..16), rng.random_range(0..16)), 0);
        }
        let got = edt_modes(&mask, true, 0).remove(0);
        let exact = exact_squared_bruteforce(&mask).expect("has background");
        found = (0..got.len())
            .find(|&k| got.data()[k] > exact.data()[k])
            .map(|k| (Coord::from_index(k, 16), got.data()[k], exact.data()[k]));
    }
    let found_text = match found {
        Some((p, got, exact)) => {
            format!("search hit after {tries} masks: ({},{}) got sqrt({got}), exact sqrt({exact})", p.x, p.y)
        }
        None => format!("no overshoot in {tries} searched masks"),
    };
    // a known instance: (6,4) is sqrt(169) from (18,9) but every path there
    // runs through pixels claimed by the other two sources
    let mut pinned = Image::filled(20, 20, 255u8);
    for (x, y) in [(13, 15), (18, 9), (19, 5)] {
        pinned.set(Coord::new(x, y), 0);
    }
    let p = Coord::new(6, 4);
    let pinned_got = edt_modes(&pinned, true, 0)[0].get(p);
    let pinned_exact = exact_squared_bruteforce(&pinned).expect("has background").get(p);
    let detail = format!(
        "{masks} masks 16x16, {below} pixels below exact, {single} single-source masks with \
         {single_bad} inexact pixels; {found_text}; pinned 20x20 instance at (6,4): \
         sqrt({pinned_got}) vs exact sqrt({pinned_exact})"
    );
    if below == 0 && single_bad == 0 && found.is_some() && pinned_got > pinned_exact {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn c7_overflow() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let g = StructuringElement::EIGHT;
    let (cases, mut bad, mut min_overflows) = (12, 0, usize::MAX);
    for i in 0..cases {
        let workers = WORKERS[i % 4];
        let strategy = QueueStrategy::ALL[i % 3];
        let config = |gbq| {
            let mut cfg = EngineConfig::with_workers(workers);
            cfg.queue.strategy = strategy;
            cfg.queue.gbq_capacity = gbq;
            cfg
        };
        let tight = config(GbqCapacity::Fixed(128));
        let loose = config(GbqCapacity::Unbounded);
        if i % 2 == 0 {
            let mask = gen_gray_mask(128, 128, 95.0, rng.random());
            let marker = h_marker(&mask, H);
            let a = recon::recon_parallel(&mask, &marker, &g, &tight).expect("tight run");
            let b = recon::recon_parallel(&mask, &marker, &g, &loose).expect("unbounded run");
            min_overflows = min_overflows.min(a.stats.overflow_count);
            bad += differing(&a.image, &b.image);
        } else {
            let mask = random_binary(&mut rng, 128, 128, 0.02);
            let a = edt::edt(&mask, &g, &EdtMode::Parallel(tight)).expect("tight run");
            let b = edt::edt(&mask, &g, &EdtMode::Parallel(loose)).expect("unbounded run");
            min_overflows = min_overflows.min(a.stats.overflow_count);
            bad += differing(&a.voronoi.squared_distances(), &b.voronoi.squared_distances());
        }
    }
    let detail = format!(
        "{cases} runs (recon and edt) with a 128-slot global queue, at least {min_overflows} \
         re-executions each, {bad} differing pixels vs unbounded"
    );
    if bad == 0 && min_overflows >= 2 { Verdict::Pass(detail) } else { Verdict::Fail(detail) }
}

/// Checks one filled round against the pushed items. Returns a problem, if any.
fn check_round(q: &WavefrontQueue<u32>, pushed: &[u32], cap: Option<usize>, size: usize) -> Option<String> {
    let mut got = q.in_round();
    got.sort_unstable();
    let mut want = pushed.to_vec();
    want.sort_unstable();
    let total = pushed.len();
    match cap {
        None if got != want || size != total || q.overflowed() => {
            return Some(format!("conservation: {} of {total} items", got.len()))
        }
        Some(c) if q.overflowed() != (total > c) || size != total.min(c) => {
            return Some(format!("overflow flag or size: cap {c}, total {total}, size {size}"))
        }
        Some(_) => {
            let mut w = want.iter().peekable();
            let subset = got.iter().all(|g| {
                while w.next_if(|x| *x < g).is_some() {}
                w.next_if_eq(&g).is_some()
            });
            if !subset {
                return Some("kept items are not a sub-multiset of the pushed ones".into());
            }
        }
        None => {}
    }
    for readers in 1..=4 {
        let mut seen = Vec::new();
        for r in 0..readers {
            let mut it = 0;
            while let Some(v) = q.dequeue(r, it, readers) {
                seen.push(v);
                it += 1;
            }
        }
        seen.sort_unstable();
        if seen != got {
            return Some(format!("dequeue with {readers} readers is not a partition"));
        }
    }
    None
}

fn c8_queue() -> Verdict {
    let mut exhaustive = 0;
    let mut problems = Vec::new();
    // every push-count vector up to 3 workers x 3 items
    for n in 1..=3usize {
        for counts in 0..4usize.pow(n as u32) {
            let per: Vec<usize> = (0..n).map(|w| counts / 4usize.pow(w as u32) % 4).collect();
            let total: usize = per.iter().sum();
            let caps = std::iter::once(None).chain((0..=total + 1).map(Some));
            for cap in caps {
                for strategy in QueueStrategy::ALL {
                    for (tq, bq) in [(1, 1), (1, 2), (2, 3), (3, 5)] {
                        let cfg = QueueConfig {
                            strategy,
                            tq_capacity: tq,
                            bq_capacity: bq,
                            gbq_capacity: cap.map_or(GbqCapacity::Unbounded, GbqCapacity::Fixed),
                        };
                        let q = WavefrontQueue::<u32>::new(cfg, n);
                        // two rounds, interleaving workers item by item
                        for round in 0..2u32 {
                            q.clear_overflow();
                            let mut pushed = Vec::new();
                            for k in 0..per.iter().max().copied().unwrap_or(0) {
                                for (w, &c) in per.iter().enumerate() {
                                    if k < c {
                                        let item = round * 1000 + (w * 10 + k) as u32;
                                        q.push(w, item);
                                        pushed.push(item);
                                    }
                                }
                            }
                            let size = q.end_round();
                            exhaustive += 1;
                            if let Some(p) = check_round(&q, &pushed, cap, size) {
                                problems.push(format!("{} {per:?} cap {cap:?}: {p}", strategy.name()));
                            }
                        }
                    }
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let trials = 1000;
    for t in 0..trials {
        let n = rng.random_range(1..=4);
        let per: Vec<Vec<u32>> = (0..n)
            .map(|w| (0..rng.random_range(0..300)).map(|k| (w * 10_000 + k) as u32).collect())
            .collect();
        let pushed: Vec<u32> = per.concat();
        let cap = rng.random_bool(0.5).then(|| rng.random_range(0..=400));
        let mut reference: Option<Vec<u32>> = None;
        for strategy in QueueStrategy::ALL {
            let cfg = QueueConfig {
                strategy,
                tq_capacity: rng.random_range(1..=16),
                bq_capacity: rng.random_range(1..=64),
                gbq_capacity: cap.map_or(GbqCapacity::Unbounded, GbqCapacity::Fixed),
            };
            let q = WavefrontQueue::<u32>::new(cfg, n);
            std::thread::scope(|s| {
                for (w, items) in per.iter().enumerate() {
                    let q = &q;
                    s.spawn(move || {
                        let mut h = q.worker(w);
                        items.iter().for_each(|&it| h.push(it));
                        h.flush();
                    });
                }
            });
            let size = q.end_round();
            if let Some(p) = check_round(&q, &pushed, cap, size) {
                problems.push(format!("trial {t} {}: {p}", strategy.name()));
            }
            if cap.is_none() {
                let mut got = q.in_round();
                got.sort_unstable();
                match &reference {
                    Some(r) if *r != got => problems.push(format!("trial {t}: strategies disagree")),
                    Some(_) => {}
                    None => reference = Some(got),
                }
            }
        }
    }
    let detail = format!(
        "{exhaustive} exhaustive rounds, {trials} threaded trials x 3 strategies, {} problems{}",
        problems.len(),
        problems.first().map(|p| format!(" (first: {p})")).unwrap_or_default()
    );
    if problems.is_empty() { Verdict::Pass(detail) } else { Verdict::Fail(detail) }
}

fn median_time(repeats: usize, mut f: impl FnMut()) -> Duration {
    f(); // warm-up
    let mut times: Vec<Duration> = (0..repeats)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed()
        })
        .collect();
    times.sort();
    times[repeats / 2]
}

fn c9_scaling() -> Verdict {
    let g = StructuringElement::EIGHT;
    let mask = gen_gray_mask(2048, 2048, 100.0, 109);
    let marker = h_marker(&mask, H);
    let time = |workers| {
        let cfg = PipelineConfig::new(workers, 256, 256);
        median_time(3, || {
            recon::recon_tiled(&mask, &marker, &g, &cfg).expect("tiled run");
        })
    };
    let (t1, t4) = (time(1), time(4));
    let speedup = t1.as_secs_f64() / t4.as_secs_f64();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let detail = format!(
        "2048x2048 at 100%, 256x256 tiles: 1 worker {:.0} ms, 4 workers {:.0} ms, speedup {speedup:.2} \
         (needs > {SPEEDUP_THRESHOLD}), {cores} core(s) available",
        t1.as_secs_f64() * 1e3,
        t4.as_secs_f64() * 1e3
    );
    if speedup > SPEEDUP_THRESHOLD {
        Verdict::Pass(detail)
    } else if cores < 4 {
        Verdict::ExpectedFail {
            detail,
            reason: format!("4 workers cannot run concurrently on {cores} core(s)"),
        }
    } else {
        Verdict::Fail(detail)
    }
}

/// A corridor that snakes across every tile row, entered at the top left.
fn zigzag(w: usize, h: usize) -> (Image<u8>, Image<u8>) {
    let mask = Image::from_fn(w, h, |p| {
        let (x, y) = (p.x as usize, p.y as usize);
        let wall = y % 4 == 3;
        let gap = if (y / 4) % 2 == 0 { x == w - 1 } else { x == 0 };
        if wall && !gap { 0 } else { 200 }
    });
    let mut marker = Image::filled(w, h, 0u8);
    marker.set(Coord::new(0, 0), 200);
    (mask, marker)
}

fn c10_pipeline() -> Verdict {
    let g = StructuringElement::FOUR;
    let (mask, marker) = zigzag(64, 64);
    let (out, stats) =
        recon::recon_tiled(&mask, &marker, &g, &PipelineConfig::new(4, 16, 16)).expect("tiled run");
    let want = recon::recon_fh(&mask, &marker, &g).expect("valid marker");
    let mut overlaps = 0;
    for bp in stats.events.iter().filter(|e| e.kind == TaskKind::Bp) {
        overlaps += stats
            .events
            .iter()
            .filter(|e| e.kind == TaskKind::Tp && e.wave == bp.wave && e.end_us > bp.start_us)
            .count();
    }
    let wrong = differing(&out, &want);
    let detail = format!(
        "64x64 zig-zag corridor, 16x16 tiles, 4 workers: {} BP waves, {} TP tasks, \
         {overlaps} same-wave TP/BP overlaps, {wrong} differing pixels",
        stats.bp_waves, stats.tp_tasks
    );
    if stats.bp_waves >= 2 && overlaps == 0 && wrong == 0 {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        ("exactness (reconstruction)", c1_recon_exactness),
        ("algorithm agreement", c2_algorithm_agreement),
        ("oracle equivalence (reconstruction)", c3_oracle),
        ("binary semantics", c4_binary),
        ("exactness (distance transform)", c5_edt_exactness),
        ("distance transform bounds", c6_edt_bounds),
        ("overflow recovery", c7_overflow),
        ("queue properties", c8_queue),
        ("scaling", c9_scaling),
        ("pipeline structure", c10_pipeline),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let verdict = run();
        let secs = t.elapsed().as_secs_f64();
        match verdict {
            Verdict::Pass(d) => println!("[{id:>2}] PASS {name}: {d} ({secs:.1}s)"),
            Verdict::Fail(d) => {
                unexpected += 1;
                println!("[{id:>2}] FAIL {name}: {d} ({secs:.1}s)");
            }
            Verdict::ExpectedFail { detail, reason } => {
                println!("[{id:>2}] FAIL (expected: {reason}) {name}: {detail} ({secs:.1}s)")
            }
        }
        if id == 5 {
            println!("     note: {}", blob_mask_note());
        }
    }
    if unexpected > 0 {
        println!("{unexpected} criteria failed");
        std::process::exit(1);
    }
}
