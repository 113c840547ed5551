//! Pixel grids, coordinates and structuring-element neighbourhoods.
//!
//! Every algorithm in the crate addresses pixels either through a [`Coord`]
//! or through a row-major linear index (`y * width + x`). Neighbourhoods are
//! clipped at the image border: no padding, no wraparound.

use thiserror::Error;

/// Sample value of a foreground pixel in a binary image.
pub const BINARY_MAX: u8 = 255;

/// Column/row address of a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Coord {
    pub x: u32,
    pub y: u32,
}

impl Coord {
    pub const fn new(x: u32, y: u32) -> Self {
        Coord { x, y }
    }

    pub fn index(self, width: usize) -> usize {
        self.y as usize * width + self.x as usize
    }

    pub fn from_index(index: usize, width: usize) -> Self {
        Coord::new((index % width) as u32, (index / width) as u32)
    }

    pub fn squared_distance(self, other: Coord) -> u64 {
        let dx = self.x.abs_diff(other.x) as u64;
        let dy = self.y.abs_diff(other.y) as u64;
        dx * dx + dy * dy
    }
}

impl From<(u32, u32)> for Coord {
    fn from((x, y): (u32, u32)) -> Self {
        Coord::new(x, y)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("coordinate ({x}, {y}) lies outside the {width}x{height} image")]
    OutOfBounds {
        x: u32,
        y: u32,
        width: usize,
        height: usize,
    },
    #[error("image dimensions must be positive, got {width}x{height}")]
    ZeroDimension { width: usize, height: usize },
    #[error("data length {actual} does not match {width}x{height}")]
    LengthMismatch {
        width: usize,
        height: usize,
        actual: usize,
    },
    #[error("binary image holds {value} at ({x}, {y}); only 0 and {BINARY_MAX} are allowed")]
    NotBinary { x: u32, y: u32, value: u8 },
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
}

/// Rectangular, row-major scalar grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Image<T> {
    /// Image of the given size with every sample set to `value`.
    ///
    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        assert!(
            width > 0 && height > 0,
            "image dimensions must be positive, got {width}x{height}"
        );
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::ZeroDimension { width, height });
        }
        if data.len() != width * height {
            return Err(GridError::LengthMismatch {
                width,
                height,
                actual: data.len(),
            });
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(Coord) -> T) -> Self {
        assert!(
            width > 0 && height > 0,
            "image dimensions must be positive, got {width}x{height}"
        );
        let data = (0..width * height)
            .map(|i| f(Coord::from_index(i, width)))
            .collect();
        Image {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn contains(&self, p: Coord) -> bool {
        (p.x as usize) < self.width && (p.y as usize) < self.height
    }

    pub fn get(&self, p: Coord) -> T {
        self.data[p.index(self.width)]
    }

    pub fn set(&mut self, p: Coord, value: T) {
        let i = p.index(self.width);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    pub fn region(&self) -> Region {
        Region::new(0, 0, self.width, self.height)
    }
}

/// Sample type tag of a [`DynImage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElemKind {
    U8,
    U16,
    F32,
    /// `u8` samples restricted to `{0, 255}`.
    Binary,
}

/// An image whose sample type is only known at runtime (file input, CLI).
#[derive(Debug, Clone, PartialEq)]
pub enum DynImage {
    U8(Image<u8>),
    U16(Image<u16>),
    F32(Image<f32>),
    Binary(Image<u8>),
}

impl DynImage {
    /// Wraps `img` as a binary image after checking every sample is 0 or 255.
    pub fn binary(img: Image<u8>) -> Result<Self, GridError> {
        if let Some(i) = img.data().iter().position(|&v| v != 0 && v != BINARY_MAX) {
            let p = Coord::from_index(i, img.width());
            return Err(GridError::NotBinary {
                x: p.x,
                y: p.y,
                value: img.data()[i],
            });
        }
        Ok(DynImage::Binary(img))
    }

    pub fn kind(&self) -> ElemKind {
        match self {
            DynImage::U8(_) => ElemKind::U8,
            DynImage::U16(_) => ElemKind::U16,
            DynImage::F32(_) => ElemKind::F32,
            DynImage::Binary(_) => ElemKind::Binary,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            DynImage::U8(i) | DynImage::Binary(i) => i.dims(),
            DynImage::U16(i) => i.dims(),
            DynImage::F32(i) => i.dims(),
        }
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub const fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Region { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn contains_index(&self, index: usize, width: usize) -> bool {
        self.contains(index % width, index / width)
    }

    /// Whether `(x, y)` lies on the one-pixel ring just inside the region edge.
    pub fn on_ring(&self, x: usize, y: usize) -> bool {
        self.contains(x, y)
            && (x == self.x0 || x + 1 == self.x1 || y == self.y0 || y + 1 == self.y1)
    }

    /// Linear indices of the region's pixels in raster order.
    pub fn indices(&self, width: usize) -> impl Iterator<Item = usize> + '_ {
        (self.y0..self.y1).flat_map(move |y| (self.x0..self.x1).map(move |x| y * width + x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = u8;

    fn try_from(n: u8) -> Result<Self, u8> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(other),
        }
    }
}

// Offsets are listed in raster order of the 3x3 window.
const FOUR_OFFSETS: [(i32, i32); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
const EIGHT_OFFSETS: [(i32, i32); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanPhase {
    Raster,
    AntiRaster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Row,
    Col,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Square-grid neighbourhood `G` (the centre pixel is never included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StructuringElement {
    connectivity: Connectivity,
}

impl StructuringElement {
    pub const FOUR: StructuringElement = StructuringElement {
        connectivity: Connectivity::Four,
    };
    pub const EIGHT: StructuringElement = StructuringElement {
        connectivity: Connectivity::Eight,
    };

    pub const fn new(connectivity: Connectivity) -> Self {
        StructuringElement { connectivity }
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    /// `(dx, dy)` offsets in raster order.
    pub fn offsets(&self) -> &'static [(i32, i32)] {
        match self.connectivity {
            Connectivity::Four => &FOUR_OFFSETS,
            Connectivity::Eight => &EIGHT_OFFSETS,
        }
    }

    /// Offsets visited before the centre in a raster scan (`N_G^+`), or after
    /// it (`N_G^-`) for the anti-raster phase.
    pub fn half_offsets(&self, phase: ScanPhase) -> impl Iterator<Item = (i32, i32)> {
        self.offsets().iter().copied().filter(move |&(dx, dy)| {
            let before = dy < 0 || (dy == 0 && dx < 0);
            match phase {
                ScanPhase::Raster => before,
                ScanPhase::AntiRaster => !before,
            }
        })
    }

    /// Axis-decomposed half neighbourhood. Row scans see only the horizontal
    /// predecessor (W forward, E backward); column scans see the whole
    /// previous row (NW, N, NE forward) or next row (SW, S, SE backward).
    pub fn axis_offsets(&self, axis: Axis, dir: Direction) -> impl Iterator<Item = (i32, i32)> {
        self.offsets()
            .iter()
            .copied()
            .filter(move |&(dx, dy)| match (axis, dir) {
                (Axis::Row, Direction::Forward) => dy == 0 && dx < 0,
                (Axis::Row, Direction::Backward) => dy == 0 && dx > 0,
                (Axis::Col, Direction::Forward) => dy < 0,
                (Axis::Col, Direction::Backward) => dy > 0,
            })
    }
}

impl Default for StructuringElement {
    fn default() -> Self {
        StructuringElement::EIGHT
    }
}

impl From<Connectivity> for StructuringElement {
    fn from(c: Connectivity) -> Self {
        StructuringElement::new(c)
    }
}

fn check_bounds(p: Coord, (width, height): (usize, usize)) -> Result<(), GridError> {
    if (p.x as usize) < width && (p.y as usize) < height {
        Ok(())
    } else {
        Err(GridError::OutOfBounds {
            x: p.x,
            y: p.y,
            width,
            height,
        })
    }
}

fn clip(
    p: Coord,
    offsets: impl Iterator<Item = (i32, i32)>,
    (width, height): (usize, usize),
) -> Vec<Coord> {
    offsets
        .filter_map(|(dx, dy)| {
            let x = p.x as i64 + dx as i64;
            let y = p.y as i64 + dy as i64;
            (x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height)
                .then(|| Coord::new(x as u32, y as u32))
        })
        .collect()
}

/// In-bounds neighbours of `p`, in offset order.
pub fn neighbors(
    p: Coord,
    g: &StructuringElement,
    dims: (usize, usize),
) -> Result<Vec<Coord>, GridError> {
    check_bounds(p, dims)?;
    Ok(clip(p, g.offsets().iter().copied(), dims))
}

/// `N_G^+(p)` for the raster phase, `N_G^-(p)` for the anti-raster phase.
pub fn half_neighbors(
    p: Coord,
    g: &StructuringElement,
    phase: ScanPhase,
    dims: (usize, usize),
) -> Result<Vec<Coord>, GridError> {
    check_bounds(p, dims)?;
    Ok(clip(p, g.half_offsets(phase), dims))
}

pub fn axis_half_neighbors(
    p: Coord,
    g: &StructuringElement,
    axis: Axis,
    dir: Direction,
    dims: (usize, usize),
) -> Result<Vec<Coord>, GridError> {
    check_bounds(p, dims)?;
    Ok(clip(p, g.axis_offsets(axis, dir), dims))
}

/// Precomputed neighbour lookup on linear indices, clipped to a region.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    width: usize,
    offsets: &'static [(i32, i32)],
    deltas: Vec<isize>,
}

impl Neighborhood {
    pub fn new(g: &StructuringElement, width: usize) -> Self {
        let offsets = g.offsets();
        let deltas = offsets
            .iter()
            .map(|&(dx, dy)| dy as isize * width as isize + dx as isize)
            .collect();
        Neighborhood {
            width,
            offsets,
            deltas,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Calls `f` with every neighbour of `p` that lies inside `region`.
    #[inline]
    pub fn for_each(&self, region: &Region, p: usize, mut f: impl FnMut(usize)) {
        let x = p % self.width;
        let y = p / self.width;
        if x > region.x0 && x + 1 < region.x1 && y > region.y0 && y + 1 < region.y1 {
            for &d in &self.deltas {
                f(p.wrapping_add_signed(d));
            }
        } else {
            for &(dx, dy) in self.offsets {
                let nx = x as isize + dx as isize;
                let ny = y as isize + dy as isize;
                if nx >= region.x0 as isize
                    && ny >= region.y0 as isize
                    && (nx as usize) < region.x1
                    && (ny as usize) < region.y1
                {
                    f(ny as usize * self.width + nx as usize);
                }
            }
        }
    }

    /// Like [`for_each`](Self::for_each) but stops as soon as `f` returns true.
    #[inline]
    pub fn any(&self, region: &Region, p: usize, mut f: impl FnMut(usize) -> bool) -> bool {
        let mut hit = false;
        self.for_each(region, p, |q| {
            if !hit && f(q) {
                hit = true;
            }
        });
        hit
    }
}
