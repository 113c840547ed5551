//! Sample types and their atomic cell counterparts.

use std::fmt::Debug;
use std::sync::atomic::{AtomicU16, AtomicU32, AtomicU64, AtomicU8, Ordering};

/// A grid cell that can be read and merged concurrently.
///
/// `fetch_max` follows the natural order of the value type; callers that
/// merge under a different order go through `compare_exchange`.
pub trait AtomicCell: Send + Sync {
    type Value: Copy + PartialEq + Debug + Send + Sync;

    fn new(v: Self::Value) -> Self;
    fn load(&self) -> Self::Value;
    fn store(&self, v: Self::Value);
    fn compare_exchange(&self, current: Self::Value, new: Self::Value)
        -> Result<Self::Value, Self::Value>;
    /// Installs `max(current, v)` and returns the prior value.
    fn fetch_max(&self, v: Self::Value) -> Self::Value;
}

macro_rules! int_cell {
    ($atomic:ty, $int:ty) => {
        impl AtomicCell for $atomic {
            type Value = $int;

            fn new(v: $int) -> Self {
                <$atomic>::new(v)
            }

            #[inline]
            fn load(&self) -> $int {
                <$atomic>::load(self, Ordering::Relaxed)
            }

            #[inline]
            fn store(&self, v: $int) {
                <$atomic>::store(self, v, Ordering::Relaxed)
            }

            #[inline]
            fn compare_exchange(&self, current: $int, new: $int) -> Result<$int, $int> {
                <$atomic>::compare_exchange(self, current, new, Ordering::AcqRel, Ordering::Relaxed)
            }

            #[inline]
            fn fetch_max(&self, v: $int) -> $int {
                <$atomic>::fetch_max(self, v, Ordering::AcqRel)
            }
        }
    };
}

int_cell!(AtomicU8, u8);
int_cell!(AtomicU16, u16);
int_cell!(AtomicU64, u64);

/// `f32` stored by bit pattern.
#[derive(Debug)]
pub struct AtomicF32(AtomicU32);

impl AtomicCell for AtomicF32 {
    type Value = f32;

    fn new(v: f32) -> Self {
        AtomicF32(AtomicU32::new(v.to_bits()))
    }

    #[inline]
    fn load(&self) -> f32 {
        f32::from_bits(self.0.load(Ordering::Relaxed))
    }

    #[inline]
    fn store(&self, v: f32) {
        self.0.store(v.to_bits(), Ordering::Relaxed)
    }

    #[inline]
    fn compare_exchange(&self, current: f32, new: f32) -> Result<f32, f32> {
        self.0
            .compare_exchange(
                current.to_bits(),
                new.to_bits(),
                Ordering::AcqRel,
                Ordering::Relaxed,
            )
            .map(f32::from_bits)
            .map_err(f32::from_bits)
    }

    fn fetch_max(&self, v: f32) -> f32 {
        let mut current = self.0.load(Ordering::Relaxed);
        loop {
            let prior = f32::from_bits(current);
            if prior >= v {
                return prior;
            }
            match self.0.compare_exchange_weak(
                current,
                v.to_bits(),
                Ordering::AcqRel,
                Ordering::Relaxed,
            ) {
                Ok(_) => return prior,
                Err(actual) => current = actual,
            }
        }
    }
}

/// Gray-level sample type usable for reconstruction.
pub trait Pixel: Copy + PartialOrd + Debug + Default + Send + Sync + 'static {
    type Cell: AtomicCell<Value = Self>;

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    /// `max(self - h, 0)`.
    fn saturating_sub(self, h: Self) -> Self;
}

impl Pixel for u8 {
    type Cell = AtomicU8;

    fn saturating_sub(self, h: u8) -> u8 {
        u8::saturating_sub(self, h)
    }
}

impl Pixel for u16 {
    type Cell = AtomicU16;

    fn saturating_sub(self, h: u16) -> u16 {
        u16::saturating_sub(self, h)
    }
}

impl Pixel for f32 {
    type Cell = AtomicF32;

    fn saturating_sub(self, h: f32) -> f32 {
        (self - h).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fetch_max_returns_prior() {
        let c = <AtomicU8 as AtomicCell>::new(5);
        assert_eq!(AtomicCell::fetch_max(&c, 7), 5);
        assert_eq!(AtomicCell::load(&c), 7);
        assert_eq!(AtomicCell::fetch_max(&c, 5), 7);
        assert_eq!(AtomicCell::load(&c), 7);

        let f = AtomicF32::new(1.5);
        assert_eq!(f.fetch_max(0.5), 1.5);
        assert_eq!(f.fetch_max(2.5), 1.5);
        assert_eq!(f.load(), 2.5);
    }

    #[test]
    fn f32_compare_exchange() {
        let f = AtomicF32::new(1.0);
        assert_eq!(f.compare_exchange(2.0, 3.0), Err(1.0));
        assert_eq!(f.compare_exchange(1.0, 3.0), Ok(1.0));
        assert_eq!(f.load(), 3.0);
    }

    #[test]
    fn h_subtraction_clamps() {
        assert_eq!(Pixel::saturating_sub(30u8, 40), 0);
        assert_eq!(Pixel::saturating_sub(300u16, 40), 260);
        assert_eq!(Pixel::saturating_sub(0.5f32, 1.0), 0.0);
    }
}
