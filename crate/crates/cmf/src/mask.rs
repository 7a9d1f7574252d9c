//! Binary pixel masks shared by the metrics, depth-range, scene, and
//! decoder modules.

use crate::error::{CmfError, Result};

/// A binary H x W mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(CmfError::invalid(
                "mask",
                format!(
                    "{}x{} mask needs {} entries, got {}",
                    width,
                    height,
                    width * height,
                    data.len()
                ),
            ));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    /// Mask of a rectangle `[x0, x1) x [y0, y1)` clipped to the image.
    pub fn from_rect(
        width: usize,
        height: usize,
        x0: isize,
        y0: isize,
        x1: isize,
        y1: isize,
    ) -> Self {
        let mut m = BinaryMask::empty(width, height);
        let xa = x0.clamp(0, width as isize) as usize;
        let xb = x1.clamp(0, width as isize) as usize;
        let ya = y0.clamp(0, height as isize) as usize;
        let yb = y1.clamp(0, height as isize) as usize;
        for y in ya..yb {
            for x in xa..xb {
                m.data[y * width + x] = true;
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_dims(other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a | b)
                .collect(),
        })
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a & b)
            .count())
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if !self.same_dims(other) {
            return Err(CmfError::shape(
                "mask",
                format!(
                    "{}x{} vs {}x{}",
                    self.width, self.height, other.width, other.height
                ),
            ));
        }
        Ok(())
    }
}
