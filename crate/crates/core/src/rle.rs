//! Column-major run-length encoding of binary masks.
//!
//! Runs alternate between background and foreground, starting with a
//! (possibly empty) background run, in the same layout COCO uses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinaryMask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`.
    pub size: [usize; 2],
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn height(&self) -> usize {
        self.size[0]
    }

    pub fn width(&self) -> usize {
        self.size[1]
    }

    pub fn encode(mask: &BinaryMask) -> Self {
        let (w, h) = mask.dims();
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..w {
            for y in 0..h {
                if *mask.get(x, y) != current {
                    counts.push(run);
                    run = 0;
                    current = !current;
                }
                run += 1;
            }
        }
        counts.push(run);
        Self { size: [h, w], counts }
    }

    /// Checks that the runs cover the image exactly.
    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.counts.iter().map(|&c| u64::from(c)).sum();
        let expected = (self.height() * self.width()) as u64;
        if total != expected {
            return Err(Error::InvalidParameter(format!(
                "RLE runs sum to {total}, expected {expected}"
            )));
        }
        Ok(())
    }

    pub fn decode(&self) -> Result<BinaryMask> {
        self.validate()?;
        let (w, h) = (self.width(), self.height());
        let mut mask = BinaryMask::filled(w, h, false);
        let mut pos = 0usize;
        for (i, &c) in self.counts.iter().enumerate() {
            let c = c as usize;
            if i % 2 == 1 {
                for p in pos..pos + c {
                    mask.set(p / h, p % h, true);
                }
            }
            pos += c;
        }
        Ok(mask)
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| u64::from(c)).sum()
    }

    /// Tight `(x, y, w, h)` box of the foreground, or `None` when empty.
    pub fn bbox(&self) -> Option<[usize; 4]> {
        let h = self.height();
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut pos = 0usize;
        for (i, &c) in self.counts.iter().enumerate() {
            let c = c as usize;
            if i % 2 == 1 && c > 0 {
                let (first, last) = (pos, pos + c - 1);
                let (fx, fy) = (first / h, first % h);
                let (lx, ly) = (last / h, last % h);
                x0 = x0.min(fx);
                x1 = x1.max(lx);
                if fx == lx {
                    y0 = y0.min(fy);
                    y1 = y1.max(ly);
                } else {
                    // A run crossing a column boundary touches the last and first rows.
                    y0 = 0;
                    y1 = h - 1;
                }
            }
            pos += c;
        }
        (x0 != usize::MAX).then(|| [x0, y0, x1 - x0 + 1, y1 - y0 + 1])
    }

    pub fn intersection_area(&self, other: &Rle) -> Result<u64> {
        if self.size != other.size {
            return Err(Error::DimensionMismatch {
                expected: self.size.to_vec(),
                actual: other.size.to_vec(),
            });
        }
        let (a, b) = (&self.counts, &other.counts);
        let (mut ia, mut ib) = (0usize, 0usize);
        let (mut ra, mut rb) = (
            a.first().copied().unwrap_or(0),
            b.first().copied().unwrap_or(0),
        );
        let mut inter = 0u64;
        while ia < a.len() && ib < b.len() {
            let step = ra.min(rb);
            if ia % 2 == 1 && ib % 2 == 1 {
                inter += u64::from(step);
            }
            ra -= step;
            rb -= step;
            while ra == 0 && ia < a.len() {
                ia += 1;
                ra = a.get(ia).copied().unwrap_or(0);
            }
            while rb == 0 && ib < b.len() {
                ib += 1;
                rb = b.get(ib).copied().unwrap_or(0);
            }
        }
        Ok(inter)
    }

    /// Intersection over union; 0 when both masks are empty.
    pub fn iou(&self, other: &Rle) -> Result<f64> {
        let inter = self.intersection_area(other)?;
        let union = self.area() + other.area() - inter;
        Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_masks() {
        assert_eq!(Rle::encode(&BinaryMask::filled(2, 2, false)).counts, vec![4]);
        assert_eq!(Rle::encode(&BinaryMask::filled(2, 2, true)).counts, vec![0, 4]);
    }

    #[test]
    fn column_major_order() {
        // 3 wide, 2 high; foreground at (1, 0) and (1, 1).
        let m = BinaryMask::from_fn(3, 2, |x, _| x == 1);
        let r = Rle::encode(&m);
        assert_eq!(r.counts, vec![2, 2, 2]);
        assert_eq!(r.size, [2, 3]);
        assert_eq!(r.bbox(), Some([1, 0, 1, 2]));
    }

    #[test]
    fn decode_rejects_bad_total() {
        let r = Rle { size: [2, 2], counts: vec![1, 2] };
        assert!(r.decode().is_err());
    }

    #[test]
    fn iou_of_overlapping_rectangles() {
        let a = BinaryMask::from_fn(8, 8, |x, y| (1..5).contains(&x) && (2..4).contains(&y));
        let b = BinaryMask::from_fn(8, 8, |x, y| (3..7).contains(&x) && (2..4).contains(&y));
        let (ra, rb) = (Rle::encode(&a), Rle::encode(&b));
        assert_eq!(ra.intersection_area(&rb).unwrap(), 4);
        assert!((ra.iou(&rb).unwrap() - 4.0 / 12.0).abs() < 1e-15);
        assert_eq!(ra.iou(&ra).unwrap(), 1.0);
    }

    #[test]
    fn iou_dimension_mismatch() {
        let a = Rle::encode(&BinaryMask::filled(2, 3, true));
        let b = Rle::encode(&BinaryMask::filled(3, 2, true));
        assert!(matches!(a.iou(&b), Err(Error::DimensionMismatch { .. })));
    }
}
