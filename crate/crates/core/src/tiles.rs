//! Tiled execution: tile propagation (TP) and border propagation (BP).
//!
//! The image is cut into rectangular tiles. A TP task runs the sequential
//! executor on one tile without looking past its edges. A BP task walks every
//! pair of neighbouring pixels that sit in different tiles, applies the merge
//! across the boundary and hands the changed pixels to new TP tasks of the
//! next wave. Each BP depends on all TPs of its wave; the run ends at the
//! first BP that changes nothing.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Mutex;

use thiserror::Error;

use crate::engine::{run_sequential_in, AtomicGrid, PropagationRule, RunStats};
use crate::grid::{Neighborhood, Region, StructuringElement};
use crate::sched::{dispatch, TaskId};

pub const DEFAULT_TILE_SIZE: usize = 512;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TileError {
    #[error("tile dimensions must be nonzero, got {width}x{height}")]
    ZeroTile { width: usize, height: usize },
    #[error("tiled execution needs at least one worker")]
    NoWorkers,
}

/// A set of disjoint regions covering `bounds`.
pub trait Partition {
    fn bounds(&self) -> Region;
    fn regions(&self) -> &[Region];
    /// Region containing `(x, y)`, if any.
    fn locate(&self, x: usize, y: usize) -> Option<usize>;
}

/// Row-major tiling of a `width x height` image. Edge tiles are clipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    width: usize,
    height: usize,
    tile_w: usize,
    tile_h: usize,
    tiles_x: usize,
    regions: Vec<Region>,
}

impl TileGrid {
    pub fn new(width: usize, height: usize, tile_w: usize, tile_h: usize) -> Result<Self, TileError> {
        if tile_w == 0 || tile_h == 0 {
            return Err(TileError::ZeroTile {
                width: tile_w,
                height: tile_h,
            });
        }
        let tiles_x = width.div_ceil(tile_w);
        let tiles_y = height.div_ceil(tile_h);
        let regions = (0..tiles_y)
            .flat_map(|ty| {
                (0..tiles_x).map(move |tx| {
                    Region::new(
                        tx * tile_w,
                        ty * tile_h,
                        ((tx + 1) * tile_w).min(width),
                        ((ty + 1) * tile_h).min(height),
                    )
                })
            })
            .collect();
        Ok(TileGrid {
            width,
            height,
            tile_w,
            tile_h,
            tiles_x,
            regions,
        })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn tile_of(&self, x: usize, y: usize) -> usize {
        (y / self.tile_h) * self.tiles_x + x / self.tile_w
    }
}

impl Partition for TileGrid {
    fn bounds(&self) -> Region {
        Region::new(0, 0, self.width, self.height)
    }

    fn regions(&self) -> &[Region] {
        &self.regions
    }

    fn locate(&self, x: usize, y: usize) -> Option<usize> {
        (x < self.width && y < self.height).then(|| self.tile_of(x, y))
    }
}

/// Near-equal horizontal bands of one tile, used for micro-tiling.
#[derive(Debug, Clone)]
struct Bands {
    tile: Region,
    regions: Vec<Region>,
}

impl Bands {
    fn new(tile: Region, n: usize) -> Self {
        let h = tile.height();
        let n = n.clamp(1, h.max(1));
        let regions = (0..n)
            .map(|k| Region::new(tile.x0, tile.y0 + k * h / n, tile.x1, tile.y0 + (k + 1) * h / n))
            .collect();
        Bands { tile, regions }
    }
}

impl Partition for Bands {
    fn bounds(&self) -> Region {
        self.tile
    }

    fn regions(&self) -> &[Region] {
        &self.regions
    }

    fn locate(&self, x: usize, y: usize) -> Option<usize> {
        if !self.tile.contains(x, y) {
            return None;
        }
        Some(self.regions.partition_point(|r| r.y1 <= y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineConfig {
    /// Dispatcher workers; each runs one TP or BP at a time.
    pub n_workers: usize,
    pub tile_width: usize,
    pub tile_height: usize,
    /// Threads per TP. Above 1, a tile is split into this many bands that
    /// are propagated concurrently and reconciled by in-tile border passes.
    pub micro_workers: usize,
}

impl PipelineConfig {
    pub fn new(n_workers: usize, tile_width: usize, tile_height: usize) -> Self {
        PipelineConfig {
            n_workers,
            tile_width,
            tile_height,
            micro_workers: 1,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::new(
            std::thread::available_parallelism().map_or(1, |n| n.get()),
            DEFAULT_TILE_SIZE,
            DEFAULT_TILE_SIZE,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Tp,
    Bp,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Tp => "TP",
            TaskKind::Bp => "BP",
        })
    }
}

/// One executed pipeline task. Times are microseconds since dispatch began.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskEvent {
    pub task: TaskId,
    pub kind: TaskKind,
    pub wave: usize,
    pub tile: Option<usize>,
    pub worker: usize,
    pub start_us: u64,
    pub end_us: u64,
}

impl TaskEvent {
    /// The event as a single JSON object line.
    pub fn to_json_line(&self) -> String {
        let tile = self.tile.map_or("null".to_string(), |t| t.to_string());
        format!(
            r#"{{"task":{},"kind":"{}","wave":{},"tile":{},"worker":{},"start_us":{},"end_us":{}}}"#,
            self.task, self.kind, self.wave, tile, self.worker, self.start_us, self.end_us
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineStats {
    /// BP tasks executed (the last one found nothing to propagate).
    pub bp_waves: usize,
    pub tp_tasks: usize,
    /// Cross-boundary neighbour pairs examined, summed over all BPs.
    pub border_pairs: u64,
    /// Work done inside TPs plus merges applied by BPs.
    pub propagation: RunStats,
    /// Executed tasks, ordered by task id.
    pub events: Vec<TaskEvent>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TpOutcome {
    /// Some pixel on the tile's outer ring changed.
    pub border_changed: bool,
    pub stats: RunStats,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BpOutcome {
    /// Changed pixels grouped by region id, ascending; each list in the
    /// order the pixels were first changed.
    pub seeds: Vec<(usize, Vec<usize>)>,
    pub merges: u64,
    pub pairs: u64,
}

/// Border propagation over `part`: every ordered neighbour pair `(p, q)` with
/// `p` and `q` in different regions is examined once.
pub fn run_bp<R: PropagationRule, P: Partition>(
    grid: &AtomicGrid<R::Cell>,
    rule: &R,
    g: &StructuringElement,
    part: &P,
) -> BpOutcome {
    let w = grid.width();
    let nb = Neighborhood::new(g, w);
    let bounds = part.bounds();
    let mut seeds: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut seen = HashSet::new();
    let mut out = BpOutcome::default();
    for (id, r) in part.regions().iter().enumerate() {
        for p in r.indices(w) {
            let (x, y) = (p % w, p / w);
            if !r.on_ring(x, y) {
                continue;
            }
            nb.for_each(&bounds, p, |q| {
                let Some(tq) = part.locate(q % w, q / w) else { return };
                if tq == id {
                    return;
                }
                out.pairs += 1;
                let candidate = rule.propose(p, grid.load(p), q);
                if rule.improves(q, candidate, grid.load(q)) {
                    let prior = rule.merge(grid.cell(q), q, candidate);
                    if rule.improves(q, candidate, prior) {
                        out.merges += 1;
                        if seen.insert(q) {
                            seeds.entry(tq).or_default().push(q);
                        }
                    }
                }
            });
        }
    }
    out.seeds = seeds.into_iter().collect();
    out
}

/// Tile propagation: FIFO propagation from `seeds` confined to `tile`.
pub fn run_tp<R: PropagationRule>(
    grid: &AtomicGrid<R::Cell>,
    rule: &R,
    g: &StructuringElement,
    tile: &Region,
    seeds: &[usize],
    micro_workers: usize,
) -> TpOutcome {
    let w = grid.width();
    let nb = Neighborhood::new(g, w);
    let on_ring = |q: usize| tile.on_ring(q % w, q / w);
    if micro_workers <= 1 || tile.height() < 2 {
        let mut border_changed = false;
        let stats = run_sequential_in(grid, rule, &nb, tile, seeds, |q| {
            border_changed |= on_ring(q)
        });
        return TpOutcome {
            border_changed,
            stats,
        };
    }

    let bands = Bands::new(*tile, micro_workers);
    let mut per_band: Vec<Vec<usize>> = vec![Vec::new(); bands.regions.len()];
    for &p in seeds {
        if let Some(b) = bands.locate(p % w, p / w) {
            per_band[b].push(p);
        }
    }
    let mut outcome = TpOutcome::default();
    loop {
        let results: Vec<TpOutcome> = std::thread::scope(|s| {
            let handles: Vec<_> = bands
                .regions
                .iter()
                .zip(&per_band)
                .filter(|(_, seeds)| !seeds.is_empty())
                .map(|(band, seeds)| {
                    let nb = &nb;
                    let on_ring = &on_ring;
                    s.spawn(move || {
                        let mut border_changed = false;
                        let stats = run_sequential_in(grid, rule, nb, band, seeds, |q| {
                            border_changed |= on_ring(q)
                        });
                        TpOutcome {
                            border_changed,
                            stats,
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for r in results {
            outcome.border_changed |= r.border_changed;
            outcome.stats.absorb(&r.stats);
        }
        let bp = run_bp(grid, rule, g, &bands);
        outcome.stats.merges += bp.merges;
        if bp.seeds.is_empty() {
            return outcome;
        }
        per_band.iter_mut().for_each(Vec::clear);
        for (b, s) in bp.seeds {
            outcome.border_changed |= s.iter().any(|&q| on_ring(q));
            per_band[b] = s;
        }
    }
}

enum Task {
    /// Wave-0 TPs compute their own seeds with the init hook.
    Tp {
        tile: usize,
        wave: usize,
        seeds: Option<Vec<usize>>,
    },
    Bp {
        wave: usize,
    },
}

/// Kind, wave and tile of a spawned task.
type TaskMeta = (TaskKind, usize, Option<usize>);

/// Full TP/BP pipeline on `cfg.n_workers` dispatcher workers.
///
/// `init(tile_id, region)` runs at the start of each wave-0 TP and returns
/// that tile's seeds; it may also prepare the tile's pixels.
pub fn run_pipeline<R, I>(
    grid: &AtomicGrid<R::Cell>,
    rule: &R,
    g: &StructuringElement,
    init: I,
    cfg: &PipelineConfig,
) -> Result<PipelineStats, TileError>
where
    R: PropagationRule,
    I: Fn(usize, &Region) -> Vec<usize> + Sync,
{
    if cfg.n_workers == 0 {
        return Err(TileError::NoWorkers);
    }
    let tiles = TileGrid::new(grid.width(), grid.height(), cfg.tile_width, cfg.tile_height)?;
    let stats = Mutex::new(PipelineStats::default());
    let meta: Mutex<BTreeMap<TaskId, TaskMeta>> = Mutex::default();

    let records = dispatch(
        cfg.n_workers,
        |sp| {
            let tps: Vec<_> = (0..tiles.len())
                .map(|tile| sp.spawn(Task::Tp { tile, wave: 0, seeds: None }, &[]))
                .collect();
            sp.spawn(Task::Bp { wave: 0 }, &tps);
        },
        |id, task, _, sp| match task {
            Task::Tp { tile, wave, seeds } => {
                let region = &tiles.regions()[tile];
                let seeds = seeds.unwrap_or_else(|| init(tile, region));
                let out = run_tp(grid, rule, g, region, &seeds, cfg.micro_workers);
                meta.lock().unwrap().insert(id, (TaskKind::Tp, wave, Some(tile)));
                let mut st = stats.lock().unwrap();
                st.tp_tasks += 1;
                st.propagation.absorb(&out.stats);
            }
            Task::Bp { wave } => {
                let out = run_bp(grid, rule, g, &tiles);
                meta.lock().unwrap().insert(id, (TaskKind::Bp, wave, None));
                {
                    let mut st = stats.lock().unwrap();
                    st.bp_waves += 1;
                    st.border_pairs += out.pairs;
                    st.propagation.merges += out.merges;
                }
                if !out.seeds.is_empty() {
                    let tps: Vec<_> = out
                        .seeds
                        .into_iter()
                        .map(|(tile, seeds)| {
                            sp.spawn(
                                Task::Tp {
                                    tile,
                                    wave: wave + 1,
                                    seeds: Some(seeds),
                                },
                                &[],
                            )
                        })
                        .collect();
                    sp.spawn(Task::Bp { wave: wave + 1 }, &tps);
                }
            }
        },
    );

    let meta = meta.into_inner().unwrap();
    let mut stats = stats.into_inner().unwrap();
    stats.events = records
        .into_iter()
        .map(|r| {
            let (kind, wave, tile) = meta[&r.task];
            TaskEvent {
                task: r.task,
                kind,
                wave,
                tile,
                worker: r.worker,
                start_us: r.start.as_micros() as u64,
                end_us: r.end.as_micros() as u64,
            }
        })
        .collect();
    Ok(stats)
}
