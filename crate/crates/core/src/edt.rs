//! Euclidean distance transform by Voronoi-source propagation.
//!
//! Every pixel carries the background pixel it currently believes nearest
//! (its Voronoi source). Contour pixels start the wavefront; a neighbour
//! adopts a source when that is strictly closer than its own. All comparisons
//! use exact squared integer distances; the result can exceed the true
//! distance where a Voronoi cell is not 8-connected on the grid.

use std::sync::atomic::AtomicU64;

use thiserror::Error;

use crate::engine::{
    run_parallel, run_sequential, AtomicGrid, EngineConfig, EngineError, MergeKind,
    PropagationRule, RunStats,
};
use crate::grid::{Coord, Image, Neighborhood, StructuringElement};
use crate::tiles::{run_pipeline, PipelineConfig, PipelineStats, TileError};

/// Stored source of a pixel that has not been reached yet.
pub const NO_SOURCE: u64 = u64::MAX;

/// Mask value of background pixels; anything else is foreground.
pub const BACKGROUND: u8 = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EdtError {
    #[error("no background reachable: the mask has no background pixel")]
    NoBackground,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Tiles(#[from] TileError),
}

/// Per-pixel nearest-background assignment. Sources are stored as linear
/// indices, [`NO_SOURCE`] where none has arrived.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiMap {
    sources: Image<u64>,
}

impl VoronoiMap {
    pub fn width(&self) -> usize {
        self.sources.width()
    }

    pub fn height(&self) -> usize {
        self.sources.height()
    }

    pub fn source(&self, p: Coord) -> Option<Coord> {
        match self.sources.get(p) {
            NO_SOURCE => None,
            s => Some(Coord::from_index(s as usize, self.width())),
        }
    }

    pub fn raw(&self) -> &Image<u64> {
        &self.sources
    }

    /// Squared distance of every pixel to its source, `u64::MAX` if none.
    pub fn squared_distances(&self) -> Image<u64> {
        let w = self.width();
        Image::from_fn(w, self.height(), |p| squared(p.index(w), self.sources.get(p), w))
    }
}

#[inline]
fn squared(at: usize, source: u64, width: usize) -> u64 {
    if source == NO_SOURCE {
        return u64::MAX;
    }
    Coord::from_index(at, width).squared_distance(Coord::from_index(source as usize, width))
}

/// A pixel offers its source to its neighbours; a neighbour takes it only if
/// it is strictly closer than the source it holds.
pub struct EdtRule {
    width: usize,
}

impl EdtRule {
    pub fn new(width: usize) -> Self {
        EdtRule { width }
    }
}

impl PropagationRule for EdtRule {
    type Cell = AtomicU64;
    const MERGE: MergeKind = MergeKind::CompareExchange;

    #[inline]
    fn propose(&self, _from: usize, from_value: u64, _to: usize) -> u64 {
        from_value
    }

    #[inline]
    fn improves(&self, at: usize, candidate: u64, current: u64) -> bool {
        squared(at, candidate, self.width) < squared(at, current, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdtMode {
    Sequential,
    Parallel(EngineConfig),
    Tiled(PipelineConfig),
}

#[derive(Debug, Clone)]
pub struct EdtOutput {
    pub voronoi: VoronoiMap,
    pub distance: Image<f32>,
    pub stats: RunStats,
    /// Task log and wave counts of a tiled run.
    pub pipeline: Option<PipelineStats>,
}

/// Background pixels are their own source; foreground pixels start without
/// one. Seeds are the background pixels with a foreground neighbour, in
/// raster order.
pub fn edt_init(mask: &Image<u8>, g: &StructuringElement) -> (VoronoiMap, Vec<Coord>) {
    let w = mask.width();
    let data = mask.data();
    let sources = Image::from_fn(w, mask.height(), |p| {
        if mask.get(p) == BACKGROUND {
            p.index(w) as u64
        } else {
            NO_SOURCE
        }
    });
    let nb = Neighborhood::new(g, w);
    let region = mask.region();
    let seeds = (0..data.len())
        .filter(|&p| data[p] == BACKGROUND && nb.any(&region, p, |q| data[q] != BACKGROUND))
        .map(|p| Coord::from_index(p, w))
        .collect();
    (VoronoiMap { sources }, seeds)
}

/// Propagates sources from `seeds` to a fixed point.
///
/// In tiled mode each tile starts from the seeds that fall inside it.
pub fn edt_propagate(
    vr: &VoronoiMap,
    seeds: &[Coord],
    g: &StructuringElement,
    mode: &EdtMode,
) -> Result<(VoronoiMap, RunStats, Option<PipelineStats>), EdtError> {
    let w = vr.width();
    let grid = AtomicGrid::<AtomicU64>::from_image(&vr.sources);
    let rule = EdtRule::new(w);
    let idx: Vec<usize> = seeds.iter().map(|p| p.index(w)).collect();
    let (stats, pipeline) = match mode {
        EdtMode::Sequential => (run_sequential(&grid, &rule, g, &idx), None),
        EdtMode::Parallel(cfg) => (run_parallel(&grid, &rule, g, &idx, cfg)?, None),
        EdtMode::Tiled(cfg) => {
            let tiles = crate::tiles::TileGrid::new(w, vr.height(), cfg.tile_width, cfg.tile_height)?;
            let mut per_tile = vec![Vec::new(); tiles.len()];
            for &p in &idx {
                per_tile[tiles.tile_of(p % w, p / w)].push(p);
            }
            let ps = run_pipeline(&grid, &rule, g, |t, _| per_tile[t].clone(), cfg)?;
            (ps.propagation, Some(ps))
        }
    };
    Ok((
        VoronoiMap {
            sources: grid.to_image(),
        },
        stats,
        pipeline,
    ))
}

/// `M(p) = sqrt(|p - vr(p)|^2)`.
pub fn finalize_distance_map(vr: &VoronoiMap) -> Result<Image<f32>, EdtError> {
    if vr.sources.data().contains(&NO_SOURCE) {
        return Err(EdtError::NoBackground);
    }
    Ok(vr.squared_distances().map(|d| (d as f64).sqrt() as f32))
}

pub fn edt(mask: &Image<u8>, g: &StructuringElement, mode: &EdtMode) -> Result<EdtOutput, EdtError> {
    let (vr, seeds) = edt_init(mask, g);
    let (voronoi, stats, pipeline) = edt_propagate(&vr, &seeds, g, mode)?;
    let distance = finalize_distance_map(&voronoi)?;
    Ok(EdtOutput {
        voronoi,
        distance,
        stats,
        pipeline,
    })
}

/// Exact squared distance to the nearest background pixel, by checking
/// every background pixel for every pixel.
pub fn exact_squared_bruteforce(mask: &Image<u8>) -> Result<Image<u64>, EdtError> {
    let w = mask.width();
    let background: Vec<Coord> = (0..mask.len())
        .filter(|&i| mask.data()[i] == BACKGROUND)
        .map(|i| Coord::from_index(i, w))
        .collect();
    if background.is_empty() {
        return Err(EdtError::NoBackground);
    }
    Ok(Image::from_fn(w, mask.height(), |p| {
        background
            .iter()
            .map(|&b| p.squared_distance(b))
            .min()
            .unwrap()
    }))
}

pub fn edt_exact_bruteforce(mask: &Image<u8>) -> Result<Image<f32>, EdtError> {
    Ok(exact_squared_bruteforce(mask)?.map(|d| (d as f64).sqrt() as f32))
}

/// Exact squared EDT in linear time by separable lower envelopes of
/// parabolas, for images too large for the brute-force scan.
pub fn exact_squared_separable(mask: &Image<u8>) -> Result<Image<u64>, EdtError> {
    let (w, h) = mask.dims();
    if !mask.data().contains(&BACKGROUND) {
        return Err(EdtError::NoBackground);
    }
    // Column pass: squared vertical distance to the nearest background in
    // the same column; i64::MAX/4 stands in for "none".
    let far = i64::MAX / 4;
    let mut col = vec![far; w * h];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if mask.data()[y * w + x] == BACKGROUND {
                last = Some(y);
            }
            if let Some(l) = last {
                col[y * w + x] = ((y - l) * (y - l)) as i64;
            }
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if mask.data()[y * w + x] == BACKGROUND {
                next = Some(y);
            }
            if let Some(n) = next {
                col[y * w + x] = col[y * w + x].min(((n - y) * (n - y)) as i64);
            }
        }
    }
    // Row pass: lower envelope of x -> (x - i)^2 + col[i].
    let mut out = vec![0u64; w * h];
    let mut v = vec![0usize; w];
    let mut z = vec![0f64; w + 1];
    for y in 0..h {
        let f = &col[y * w..(y + 1) * w];
        let cand: Vec<usize> = (0..w).filter(|&i| f[i] < far).collect();
        if cand.is_empty() {
            // unreachable: some column holds background, and every row sees it
            continue;
        }
        let mut k = 0;
        v[0] = cand[0];
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for &q in &cand[1..] {
            loop {
                let p = v[k];
                let s = ((f[q] + (q * q) as i64) - (f[p] + (p * p) as i64)) as f64
                    / (2.0 * (q as f64 - p as f64));
                if s <= z[k] && k > 0 {
                    k -= 1;
                } else {
                    k += 1;
                    v[k] = q;
                    z[k] = s;
                    z[k + 1] = f64::INFINITY;
                    break;
                }
            }
        }
        let mut k = 0;
        for x in 0..w {
            while z[k + 1] < x as f64 {
                k += 1;
            }
            let d = x as i64 - v[k] as i64;
            out[y * w + x] = (d * d + f[v[k]]) as u64;
        }
    }
    Ok(Image::from_vec(w, h, out).expect("dimensions preserved"))
}
