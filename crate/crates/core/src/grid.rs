use alloc::vec::Vec;

use crate::error::{mismatch, Error, Result};
use crate::linalg::Matrix;

/// Geometry of the feature grid laid over a frame: one cell per
/// `stride x stride` pixel block, partial blocks at the right and bottom
/// edges included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridShape {
    pub frame_height: usize,
    pub frame_width: usize,
    pub stride: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl GridShape {
    pub fn new(frame_width: usize, frame_height: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidConfig("stride must be >= 1".into()));
        }
        if frame_width < stride || frame_height < stride {
            return Err(Error::InvalidInput(alloc::format!(
                "{frame_width}x{frame_height} frame is smaller than one {stride}x{stride} cell"
            )));
        }
        Ok(Self {
            frame_height,
            frame_width,
            stride,
            grid_h: frame_height.div_ceil(stride),
            grid_w: frame_width.div_ceil(stride),
        })
    }

    #[inline]
    pub fn hw(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// `(row, col)` of raster cell `p`.
    #[inline]
    pub fn cell_of(&self, p: usize) -> (usize, usize) {
        (p / self.grid_w, p % self.grid_w)
    }

    #[inline]
    pub fn index_of(&self, row: usize, col: usize) -> usize {
        row * self.grid_w + col
    }

    /// Raster cell containing pixel `(x, y)`.
    #[inline]
    pub fn cell_of_pixel(&self, x: usize, y: usize) -> usize {
        self.index_of(y / self.stride, x / self.stride)
    }

    /// Pixel ranges `(x0..x1, y0..y1)` covered by cell `p`.
    pub fn pixel_bounds(&self, p: usize) -> (core::ops::Range<usize>, core::ops::Range<usize>) {
        let (r, c) = self.cell_of(p);
        let x0 = c * self.stride;
        let y0 = r * self.stride;
        (
            x0..(x0 + self.stride).min(self.frame_width),
            y0..(y0 + self.stride).min(self.frame_height),
        )
    }

    /// Mean of a full-resolution scalar field over each cell.
    pub fn reduce_mean(&self, field: &[f64]) -> Vec<f64> {
        debug_assert_eq!(field.len(), self.frame_width * self.frame_height);
        (0..self.hw())
            .map(|p| {
                let (xs, ys) = self.pixel_bounds(p);
                let n = (xs.len() * ys.len()) as f64;
                let mut s = 0.0;
                for y in ys {
                    for x in xs.clone() {
                        s += field[y * self.frame_width + x];
                    }
                }
                s / n
            })
            .collect()
    }

    /// Bilinear upsampling of a per-cell field to full resolution. Cell values
    /// sit at cell centers; samples outside the outermost centers are clamped.
    pub fn upsample_bilinear(&self, cells: &[f64]) -> Vec<f64> {
        debug_assert_eq!(cells.len(), self.hw());
        let s = self.stride as f64;
        let axis = |pix: usize, n: usize| -> (usize, usize, f64) {
            let g = ((pix as f64 + 0.5) / s - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = libm::floor(g) as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, g - i0 as f64)
        };
        let cols: Vec<_> = (0..self.frame_width).map(|x| axis(x, self.grid_w)).collect();
        let mut out = Vec::with_capacity(self.frame_width * self.frame_height);
        for y in 0..self.frame_height {
            let (r0, r1, fy) = axis(y, self.grid_h);
            for &(c0, c1, fx) in &cols {
                let top = cells[r0 * self.grid_w + c0] * (1.0 - fx) + cells[r0 * self.grid_w + c1] * fx;
                let bot = cells[r1 * self.grid_w + c0] * (1.0 - fx) + cells[r1 * self.grid_w + c1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
        out
    }
}

/// An `hw x C` matrix of per-cell feature vectors, rows in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub shape: GridShape,
    pub data: Matrix,
}

impl FeatureGrid {
    pub fn new(shape: GridShape, data: Matrix) -> Result<Self> {
        if data.rows() != shape.hw() {
            return Err(mismatch("FeatureGrid::new", shape.hw(), data.rows()));
        }
        if !data.is_finite() {
            return Err(Error::NonFinite("FeatureGrid"));
        }
        Ok(Self { shape, data })
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.data.cols()
    }

    #[inline]
    pub fn row(&self, p: usize) -> &[f64] {
        self.data.row(p)
    }

    pub(crate) fn check_hw(&self, other: &FeatureGrid, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(mismatch(op, format_args!("{:?}", self.shape), format_args!("{:?}", other.shape)));
        }
        Ok(())
    }

    pub(crate) fn check_same(&self, other: &FeatureGrid, op: &'static str) -> Result<()> {
        self.check_hw(other, op)?;
        if self.channels() != other.channels() {
            return Err(mismatch(op, self.channels(), other.channels()));
        }
        Ok(())
    }
}

/// A scalar per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityMap {
    pub shape: GridShape,
    pub values: Vec<f64>,
}

impl ReliabilityMap {
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.hw() {
            return Err(mismatch("ReliabilityMap::new", shape.hw(), values.len()));
        }
        Ok(Self { shape, values })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_division_and_raster_order() {
        let g = GridShape::new(20, 17, 8).unwrap();
        assert_eq!((g.grid_w, g.grid_h, g.hw()), (3, 3, 9));
        for p in 0..g.hw() {
            let (r, c) = g.cell_of(p);
            assert_eq!(g.index_of(r, c), p);
        }
        assert_eq!(g.cell_of_pixel(19, 16), 8);
        let (xs, ys) = g.pixel_bounds(8);
        assert_eq!((xs, ys), (16..20, 16..17));
    }

    #[test]
    fn too_small_frame_is_rejected() {
        assert!(matches!(GridShape::new(7, 64, 8), Err(Error::InvalidInput(_))));
        assert!(GridShape::new(8, 8, 0).is_err());
    }

    #[test]
    fn stride_eight_on_64px() {
        assert_eq!(GridShape::new(64, 64, 8).unwrap().hw(), 64);
    }

    #[test]
    fn upsample_of_constant_is_constant() {
        let g = GridShape::new(24, 16, 8).unwrap();
        let up = g.upsample_bilinear(&[0.3; 6]);
        assert!(up.iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert_eq!(up.len(), 24 * 16);
    }

    #[test]
    fn reduce_then_upsample_roundtrips_cell_centers() {
        let g = GridShape::new(16, 8, 8).unwrap();
        let up = g.upsample_bilinear(&[0.0, 1.0]);
        // pixels left of the first center and right of the last are clamped
        assert_eq!(up[0], 0.0);
        assert_eq!(up[15], 1.0);
        let back = g.reduce_mean(&up);
        assert!((back[0] + back[1] - 1.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn raster_mapping_is_bijective(w in 1usize..80, h in 1usize..80, s in 1usize..9) {
            proptest::prop_assume!(w >= s && h >= s);
            let g = GridShape::new(w, h, s).unwrap();
            for p in 0..g.hw() {
                let (r, c) = g.cell_of(p);
                proptest::prop_assert!(r < g.grid_h && c < g.grid_w);
                proptest::prop_assert_eq!(g.index_of(r, c), p);
            }
        }
    }
}
