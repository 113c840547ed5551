//! Gray-scale and binary morphological reconstruction of a mask `I` from a
//! marker `J <= I`.
//!
//! Four routes to the same result:
//!
//! * [`recon_sr`]: alternating raster / anti-raster scans until stable.
//! * [`recon_qb`]: FIFO propagation from the marker's regional maxima.
//! * [`recon_fh`]: one raster and one anti-raster scan, then FIFO
//!   propagation from the pixels the anti-raster scan left unfinished.
//! * [`recon_parallel`]: axis-decomposed parallel scans, full-neighbourhood
//!   seeding and round-based parallel propagation with `fetch_max` merges.
//!
//! [`recon_tiled`] runs the hybrid algorithm per tile and resolves
//! cross-tile propagation through the tile pipeline.

use thiserror::Error;

use crate::engine::{
    collect_seeds, run_parallel, run_sequential, AtomicGrid, EngineConfig, EngineError,
    MergeKind, PropagationRule, RunStats,
};
use crate::grid::{Axis, Coord, Direction, Image, Neighborhood, Region, ScanPhase, StructuringElement};
use crate::pixel::Pixel;
use crate::tiles::{run_pipeline, PipelineConfig, PipelineStats, TileError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconError {
    #[error("marker exceeds mask at ({x}, {y})")]
    MarkerAboveMask { x: u32, y: u32 },
    #[error("mask is {mask:?} but marker is {marker:?}")]
    DimensionMismatch {
        mask: (usize, usize),
        marker: (usize, usize),
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Tiles(#[from] TileError),
}

/// The hybrid reconstruction update: a neighbour is raised to
/// `min(J(p), I(q))` whenever that exceeds its current value.
pub struct ReconRule<'a, T> {
    mask: &'a [T],
}

impl<'a, T: Pixel> ReconRule<'a, T> {
    pub fn new(mask: &'a Image<T>) -> Self {
        ReconRule { mask: mask.data() }
    }
}

impl<T: Pixel> PropagationRule for ReconRule<'_, T> {
    type Cell = T::Cell;
    const MERGE: MergeKind = MergeKind::FetchMax;

    #[inline]
    fn propose(&self, _from: usize, from_value: T, to: usize) -> T {
        from_value.min_of(self.mask[to])
    }

    #[inline]
    fn improves(&self, _at: usize, candidate: T, current: T) -> bool {
        candidate > current
    }
}

/// Output of the instrumented reconstruction routes.
#[derive(Debug, Clone)]
pub struct ReconOutput<T> {
    pub image: Image<T>,
    pub stats: RunStats,
}

fn check<T: Pixel>(mask: &Image<T>, marker: &Image<T>) -> Result<(), ReconError> {
    if mask.dims() != marker.dims() {
        return Err(ReconError::DimensionMismatch {
            mask: mask.dims(),
            marker: marker.dims(),
        });
    }
    match marker
        .data()
        .iter()
        .zip(mask.data())
        .position(|(j, i)| j > i)
    {
        Some(at) => {
            let p = Coord::from_index(at, mask.width());
            Err(ReconError::MarkerAboveMask { x: p.x, y: p.y })
        }
        None => Ok(()),
    }
}

/// Index deltas of `offsets`, with the raw offsets kept for border clipping.
struct ScanNeighborhood {
    offsets: Vec<(i32, i32)>,
    deltas: Vec<isize>,
}

impl ScanNeighborhood {
    fn new(offsets: impl Iterator<Item = (i32, i32)>, width: usize) -> Self {
        let offsets: Vec<_> = offsets.collect();
        let deltas = offsets
            .iter()
            .map(|&(dx, dy)| dy as isize * width as isize + dx as isize)
            .collect();
        ScanNeighborhood { offsets, deltas }
    }

    #[inline]
    fn for_each(&self, region: &Region, width: usize, x: usize, y: usize, mut f: impl FnMut(usize)) {
        let p = y * width + x;
        if x > region.x0 && x + 1 < region.x1 && y > region.y0 && y + 1 < region.y1 {
            for &d in &self.deltas {
                f(p.wrapping_add_signed(d));
            }
        } else {
            for &(dx, dy) in &self.offsets {
                let nx = x as isize + dx as isize;
                let ny = y as isize + dy as isize;
                if nx >= region.x0 as isize
                    && ny >= region.y0 as isize
                    && (nx as usize) < region.x1
                    && (ny as usize) < region.y1
                {
                    f(ny as usize * width + nx as usize);
                }
            }
        }
    }
}

#[inline]
fn update_pixel<T: Pixel>(
    grid: &AtomicGrid<T::Cell>,
    mask: &[T],
    nb: &ScanNeighborhood,
    region: &Region,
    x: usize,
    y: usize,
) -> bool {
    let width = grid.width();
    let p = y * width + x;
    let old = grid.load(p);
    let mut m = old;
    nb.for_each(region, width, x, y, |q| m = m.max_of(grid.load(q)));
    let new = m.min_of(mask[p]);
    if new != old {
        grid.store(p, new);
        true
    } else {
        false
    }
}

/// One raster or anti-raster scan of `region`. In the anti-raster phase,
/// pixels with a lower, unfinished `N_G^-` neighbour are appended to `seeds`.
fn scan_region<T: Pixel>(
    grid: &AtomicGrid<T::Cell>,
    mask: &[T],
    g: &StructuringElement,
    phase: ScanPhase,
    region: &Region,
    mut seeds: Option<&mut Vec<usize>>,
) -> bool {
    let width = grid.width();
    let nb = ScanNeighborhood::new(g.half_offsets(phase), width);
    let mut changed = false;
    let mut visit = |x: usize, y: usize| {
        changed |= update_pixel(grid, mask, &nb, region, x, y);
        if let Some(seeds) = seeds.as_deref_mut() {
            let p = y * width + x;
            let jp = grid.load(p);
            let mut hit = false;
            nb.for_each(region, width, x, y, |q| {
                let jq = grid.load(q);
                hit |= jq < jp && jq < mask[q];
            });
            if hit {
                seeds.push(p);
            }
        }
    };
    match phase {
        ScanPhase::Raster => {
            for y in region.y0..region.y1 {
                for x in region.x0..region.x1 {
                    visit(x, y);
                }
            }
        }
        ScanPhase::AntiRaster => {
            for y in (region.y0..region.y1).rev() {
                for x in (region.x0..region.x1).rev() {
                    visit(x, y);
                }
            }
        }
    }
    changed
}

/// `J(p) <- max{J(q), q in N_G^+(p) + p} min I(p)` over the image in raster
/// order. Returns whether any pixel changed.
pub fn raster_pass<T: Pixel>(
    mask: &Image<T>,
    marker: &mut Image<T>,
    g: &StructuringElement,
) -> Result<bool, ReconError> {
    check(mask, marker)?;
    let grid = AtomicGrid::<T::Cell>::from_image(marker);
    let changed = scan_region(&grid, mask.data(), g, ScanPhase::Raster, &mask.region(), None);
    *marker = grid.to_image();
    Ok(changed)
}

/// Anti-raster counterpart of [`raster_pass`]; also returns the pixels that
/// still have a lower `N_G^-` neighbour below its mask, in scan order.
pub fn antiraster_pass<T: Pixel>(
    mask: &Image<T>,
    marker: &mut Image<T>,
    g: &StructuringElement,
) -> Result<(bool, Vec<Coord>), ReconError> {
    check(mask, marker)?;
    let grid = AtomicGrid::<T::Cell>::from_image(marker);
    let mut seeds = Vec::new();
    let changed = scan_region(
        &grid,
        mask.data(),
        g,
        ScanPhase::AntiRaster,
        &mask.region(),
        Some(&mut seeds),
    );
    *marker = grid.to_image();
    let w = mask.width();
    Ok((changed, seeds.into_iter().map(|i| Coord::from_index(i, w)).collect()))
}

/// Sequential reconstruction by alternating full scans.
pub fn recon_sr<T: Pixel>(
    mask: &Image<T>,
    marker: &Image<T>,
    g: &StructuringElement,
) -> Result<Image<T>, ReconError> {
    check(mask, marker)?;
    let grid = AtomicGrid::<T::Cell>::from_image(marker);
    let region = mask.region();
    loop {
        let a = scan_region(&grid, mask.data(), g, ScanPhase::Raster, &region, None);
        let b = scan_region(&grid, mask.data(), g, ScanPhase::AntiRaster, &region, None);
        if !a && !b {
            return Ok(grid.to_image());
        }
    }
}

/// Pixels of every plateau that has no strictly higher neighbour.
///
/// Any pixel with a higher neighbour is not maximal, and neither is anything
/// connected to it through equal values; whatever remains is maximal.
pub fn regional_maxima<T: Pixel>(img: &Image<T>, g: &StructuringElement) -> Vec<Coord> {
    let width = img.width();
    let data = img.data();
    let nb = Neighborhood::new(g, width);
    let region = img.region();
    let mut non_max = vec![false; data.len()];
    let mut stack: Vec<usize> = Vec::new();
    for p in 0..data.len() {
        if nb.any(&region, p, |q| data[q] > data[p]) {
            non_max[p] = true;
            stack.push(p);
        }
    }
    while let Some(p) = stack.pop() {
        nb.for_each(&region, p, |q| {
            if !non_max[q] && data[q] == data[p] {
                non_max[q] = true;
                stack.push(q);
            }
        });
    }
    (0..data.len())
        .filter(|&p| !non_max[p])
        .map(|p| Coord::from_index(p, width))
        .collect()
}

/// Queue-based reconstruction seeded with the marker's regional maxima.
///
/// Non-maximal marker pixels are lowered to the marker minimum before
/// propagation: the reconstruction is unchanged (every such pixel is
/// dominated along an ascending path by a maximum) and every pixel that
/// must rise is then reachable from the seeds.
pub fn recon_qb<T: Pixel>(
    mask: &Image<T>,
    marker: &Image<T>,
    g: &StructuringElement,
) -> Result<Image<T>, ReconError> {
    check(mask, marker)?;
    let w = mask.width();
    let floor = marker
        .data()
        .iter()
        .copied()
        .fold(marker.data()[0], |a, b| a.min_of(b));
    let seeds: Vec<usize> = regional_maxima(marker, g)
        .into_iter()
        .map(|p| p.index(w))
        .collect();
    let mut start = Image::filled(w, mask.height(), floor);
    for &p in &seeds {
        start.data_mut()[p] = marker.data()[p];
    }
    let grid = AtomicGrid::<T::Cell>::from_image(&start);
    run_sequential(&grid, &ReconRule::new(mask), g, &seeds);
    Ok(grid.to_image())
}

/// Fast hybrid reconstruction (one scan pair, then FIFO propagation).
pub fn recon_fh<T: Pixel>(
    mask: &Image<T>,
    marker: &Image<T>,
    g: &StructuringElement,
) -> Result<Image<T>, ReconError> {
    recon_fh_with_stats(mask, marker, g).map(|out| out.image)
}

pub fn recon_fh_with_stats<T: Pixel>(
    mask: &Image<T>,
    marker: &Image<T>,
    g: &StructuringElement,
) -> Result<ReconOutput<T>, ReconError> {
    check(mask, marker)?;
    let grid = AtomicGrid::<T::Cell>::from_image(marker);
    let region = mask.region();
    let mut seeds = Vec::new();
    scan_region(&grid, mask.data(), g, ScanPhase::Raster, &region, None);
    scan_region(&grid, mask.data(), g, ScanPhase::AntiRaster, &region, Some(&mut seeds));
    let stats = run_sequential(&grid, &ReconRule::new(mask), g, &seeds);
    Ok(ReconOutput {
        image: grid.to_image(),
        stats,
    })
}

/// Splits `0..n` into `parts` contiguous, near-equal ranges.
fn bands(n: usize, parts: usize) -> impl Iterator<Item = (usize, usize)> {
    let parts = parts.clamp(1, n.max(1));
    (0..parts).map(move |k| (k * n / parts, (k + 1) * n / parts))
}

fn for_each_band(n: usize, workers: usize, f: impl Fn(usize, usize) + Sync) {
    if workers <= 1 {
        f(0, n);
        return;
    }
    std::thread::scope(|s| {
        for (lo, hi) in bands(n, workers) {
            let f = &f;
            s.spawn(move || f(lo, hi));
        }
    });
}

/// One axis-decomposed scan. Row scans give each worker whole rows; column
/// scans give each worker a band of columns, swept top to bottom (or bottom
/// to top), so a worker sees its own updates of the previous row.
fn axis_scan<T: Pixel>(
    grid: &AtomicGrid<T::Cell>,
    mask: &[T],
    g: &StructuringElement,
    axis: Axis,
    dir: Direction,
    workers: usize,
) {
    let (w, h) = (grid.width(), grid.height());
    let region = grid.region();
    let nb = ScanNeighborhood::new(g.axis_offsets(axis, dir), w);
    let forward = dir == Direction::Forward;
    match axis {
        Axis::Row => for_each_band(h, workers, |y0, y1| {
            for y in y0..y1 {
                for k in 0..w {
                    let x = if forward { k } else { w - 1 - k };
                    update_pixel(grid, mask, &nb, &region, x, y);
                }
            }
        }),
        Axis::Col => for_each_band(w, workers, |x0, x1| {
            for k in 0..h {
                let y = if forward { k } else { h - 1 - k };
                for x in x0..x1 {
                    update_pixel(grid, mask, &nb, &region, x, y);
                }
            }
        }),
    }
}

/// Pixels that can raise some neighbour, found with the full neighbourhood,
/// in raster order.
fn parallel_seeds<T: Pixel>(
    grid: &AtomicGrid<T::Cell>,
    rule: &ReconRule<'_, T>,
    g: &StructuringElement,
    workers: usize,
) -> Vec<usize> {
    let (w, h) = (grid.width(), grid.height());
    let nb = Neighborhood::new(g, w);
    let full = grid.region();
    let parts: Vec<(usize, usize)> = bands(h, workers).collect();
    let mut found: Vec<Vec<usize>> = vec![Vec::new(); parts.len()];
    let scan = |y0: usize, y1: usize| {
        Region::new(0, y0, w, y1)
            .indices(w)
            .filter(|&p| crate::engine::is_active(grid, rule, &nb, &full, p))
            .collect::<Vec<_>>()
    };
    if parts.len() <= 1 {
        found[0] = scan(0, h);
    } else {
        std::thread::scope(|s| {
            for (slot, &(y0, y1)) in found.iter_mut().zip(&parts) {
                let scan = &scan;
                s.spawn(move || *slot = scan(y0, y1));
            }
        });
    }
    found.concat()
}

/// Parallel hybrid reconstruction on `cfg.n_workers` workers.
pub fn recon_parallel<T: Pixel>(
    mask: &Image<T>,
    marker: &Image<T>,
    g: &StructuringElement,
    cfg: &EngineConfig,
) -> Result<ReconOutput<T>, ReconError> {
    check(mask, marker)?;
    if cfg.n_workers == 0 {
        return Err(EngineError::NoWorkers.into());
    }
    let grid = AtomicGrid::<T::Cell>::from_image(marker);
    let data = mask.data();
    let n = cfg.n_workers;
    axis_scan(&grid, data, g, Axis::Row, Direction::Forward, n);
    axis_scan(&grid, data, g, Axis::Col, Direction::Forward, n);
    axis_scan(&grid, data, g, Axis::Row, Direction::Backward, n);
    axis_scan(&grid, data, g, Axis::Col, Direction::Backward, n);
    let rule = ReconRule::new(mask);
    let seeds = parallel_seeds(&grid, &rule, g, n);
    let stats = run_parallel(&grid, &rule, g, &seeds, cfg)?;
    Ok(ReconOutput {
        image: grid.to_image(),
        stats,
    })
}

/// Tiled reconstruction: each tile runs the hybrid algorithm on its own
/// pixels, then border propagation carries values across tiles until the
/// whole image is stable.
pub fn recon_tiled<T: Pixel>(
    mask: &Image<T>,
    marker: &Image<T>,
    g: &StructuringElement,
    cfg: &PipelineConfig,
) -> Result<(Image<T>, PipelineStats), ReconError> {
    check(mask, marker)?;
    let grid = AtomicGrid::<T::Cell>::from_image(marker);
    let rule = ReconRule::new(mask);
    let data = mask.data();
    let init = |_: usize, tile: &Region| {
        let mut seeds = Vec::new();
        scan_region(&grid, data, g, ScanPhase::Raster, tile, None);
        scan_region(&grid, data, g, ScanPhase::AntiRaster, tile, Some(&mut seeds));
        seeds
    };
    let stats = run_pipeline(&grid, &rule, g, init, cfg)?;
    Ok((grid.to_image(), stats))
}

/// Marker for h-dome style reconstruction: `max(mask - h, 0)`.
pub fn h_marker<T: Pixel>(mask: &Image<T>, h: T) -> Image<T> {
    mask.map(|v| v.saturating_sub(h))
}

/// Whether `out` satisfies the reconstruction fixed-point equation for `mask`.
pub fn is_fixed_point<T: Pixel>(mask: &Image<T>, out: &Image<T>, g: &StructuringElement) -> bool {
    let grid = AtomicGrid::<T::Cell>::from_image(out);
    let nb = Neighborhood::new(g, mask.width());
    collect_seeds(&grid, &ReconRule::new(mask), &nb, &grid.region()).is_empty()
        && out.data().iter().zip(mask.data()).all(|(o, m)| o <= m)
}

impl<T: Pixel> ReconOutput<T> {
    pub fn into_image(self) -> Image<T> {
        self.image
    }
}
