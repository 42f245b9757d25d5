//! Row-major 2-D rasters shared by the renderer, the depth stages and the
//! dataset codecs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Metric depth in meters; `0.0` marks a missing measurement.
pub type DepthMap = Grid<f32>;
/// Per-pixel "sensor returned a value" flag.
pub type ValidityMask = Grid<bool>;
pub type BinaryMask = Grid<bool>;
/// Instance index per pixel, `0` is background.
pub type InstanceMap = Grid<u16>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dims(&[width * height], &[data.len()]));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.index(x, y);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_same_dims<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(
                &[self.width, self.height],
                &[other.width, other.height],
            ));
        }
        Ok(())
    }
}

impl Grid<f32> {
    pub fn validity(&self) -> ValidityMask {
        self.map(|&d| d > 0.0)
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| d > 0.0).count()
    }

    /// Snaps every depth onto the millimeter grid used by the 16-bit PNG codec.
    pub fn quantize_mm(&self) -> DepthMap {
        self.map(|&d| mm_to_meters(meters_to_mm(d)))
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(&a, &b)| !a || b)
    }
}

impl Grid<u16> {
    pub fn mask_of(&self, id: u16) -> BinaryMask {
        self.map(|&v| v == id)
    }
}

pub fn meters_to_mm(d: f32) -> u16 {
    if !(d > 0.0) {
        return 0;
    }
    (f64::from(d) * 1000.0).round().clamp(0.0, f64::from(u16::MAX)) as u16
}

pub fn mm_to_meters(mm: u16) -> f32 {
    (f64::from(mm) / 1000.0) as f32
}
