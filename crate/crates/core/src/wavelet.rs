//! Orthonormal 2D Daubechies-4 wavelet transform with periodic boundaries.
//!
//! Images are square, `side × side` with `side` a power of two, stored
//! row-major. Each level filters the rows and then the columns of the
//! current approximation block, leaving the standard Mallat layout:
//! coarsest approximation in the top-left corner, details around it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry;
use crate::scalar::Real;

/// Daubechies-4 low-pass taps before the `1/(4√2)` normalization.
fn daubechies4<T: Real>() -> ([T; 4], [T; 4]) {
    let s3 = 3.0f64.sqrt();
    let norm = 4.0 * 2.0f64.sqrt();
    let h = [(1.0 + s3) / norm, (3.0 + s3) / norm, (3.0 - s3) / norm, (1.0 - s3) / norm];
    // g_k = (−1)^k h_{3−k}
    let g = [h[3], -h[2], h[1], -h[0]];
    (h.map(T::of), g.map(T::of))
}

/// The basis `Z`: [`analyze`](WaveletBasis::analyze) applies `Zᵀ`,
/// [`synthesize`](WaveletBasis::synthesize) applies `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "BasisShape", into = "BasisShape", bound = "")]
pub struct WaveletBasis<T: Real> {
    side: usize,
    levels: usize,
    low: [T; 4],
    high: [T; 4],
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct BasisShape {
    side: usize,
    levels: usize,
}

impl<T: Real> From<BasisShape> for WaveletBasis<T> {
    fn from(s: BasisShape) -> Self {
        let (low, high) = daubechies4();
        Self {
            side: s.side,
            levels: s.levels,
            low,
            high,
        }
    }
}

impl<T: Real> From<WaveletBasis<T>> for BasisShape {
    fn from(b: WaveletBasis<T>) -> Self {
        Self {
            side: b.side,
            levels: b.levels,
        }
    }
}

impl<T: Real> WaveletBasis<T> {
    /// `levels` may go down to a single coarsest pixel: periodization keeps
    /// the wrapped filters orthonormal even on blocks shorter than the taps.
    pub fn new(side: usize, levels: usize) -> Result<Self> {
        if side < 2 || !side.is_power_of_two() {
            return Err(Error::InvalidDimensions(format!(
                "image side {side} must be a power of two >= 2"
            )));
        }
        let max_levels = side.trailing_zeros() as usize;
        if levels == 0 || levels > max_levels {
            return Err(Error::InvalidParameter(format!(
                "levels={levels} must lie in [1, {max_levels}] for side {side}"
            )));
        }
        Ok(BasisShape { side, levels }.into())
    }

    /// Default depth `log2(side) − 1`, leaving a 2×2 approximation block.
    pub fn with_default_levels(side: usize) -> Result<Self> {
        if side < 2 || !side.is_power_of_two() {
            return Err(Error::InvalidDimensions(format!(
                "image side {side} must be a power of two >= 2"
            )));
        }
        let levels = (side.trailing_zeros() as usize).saturating_sub(1).max(1);
        Self::new(side, levels)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Number of pixels, `side²`.
    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    pub fn low_pass(&self) -> [T; 4] {
        self.low
    }

    fn check_len(&self, v: &[T]) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "vector of length {} for a {side}x{side} basis",
                v.len(),
                side = self.side
            )));
        }
        Ok(())
    }

    fn forward_1d(&self, x: &[T], out: &mut [T]) {
        let n = x.len();
        let half = n / 2;
        for i in 0..half {
            let (mut a, mut d) = (T::zero(), T::zero());
            for k in 0..4 {
                let v = x[(2 * i + k) % n];
                a += self.low[k] * v;
                d += self.high[k] * v;
            }
            out[i] = a;
            out[half + i] = d;
        }
    }

    fn inverse_1d(&self, c: &[T], out: &mut [T]) {
        let n = c.len();
        let half = n / 2;
        out.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..half {
            let (a, d) = (c[i], c[half + i]);
            for k in 0..4 {
                out[(2 * i + k) % n] += self.low[k] * a + self.high[k] * d;
            }
        }
    }

    fn transform_1d(&self, inverse: bool, input: &[T], out: &mut [T]) {
        if inverse {
            self.inverse_1d(input, out)
        } else {
            self.forward_1d(input, out)
        }
    }

    fn rows_pass(&self, data: &mut [T], size: usize, inverse: bool, buf: &mut [T]) {
        for r in 0..size {
            let row = &mut data[r * self.side..r * self.side + size];
            self.transform_1d(inverse, row, buf);
            row.copy_from_slice(buf);
        }
    }

    fn cols_pass(&self, data: &mut [T], size: usize, inverse: bool, line: &mut [T], buf: &mut [T]) {
        for c in 0..size {
            for r in 0..size {
                line[r] = data[r * self.side + c];
            }
            self.transform_1d(inverse, line, buf);
            for r in 0..size {
                data[r * self.side + c] = buf[r];
            }
        }
    }

    /// One level on the top-left `size × size` block: rows then columns
    /// forward, columns then rows inverse.
    fn level(&self, data: &mut [T], size: usize, inverse: bool) {
        let mut line = vec![T::zero(); size];
        let mut buf = vec![T::zero(); size];
        if inverse {
            self.cols_pass(data, size, true, &mut line, &mut buf);
            self.rows_pass(data, size, true, &mut buf);
        } else {
            self.rows_pass(data, size, false, &mut buf);
            self.cols_pass(data, size, false, &mut line, &mut buf);
        }
    }

    /// Coefficients `z = Zᵀ x`.
    pub fn analyze(&self, image: &[T]) -> Result<Vec<T>> {
        self.check_len(image)?;
        let mut z = image.to_vec();
        for level in 0..self.levels {
            self.level(&mut z, self.side >> level, false);
        }
        Ok(z)
    }

    /// Image `x = Z z`.
    pub fn synthesize(&self, coeffs: &[T]) -> Result<Vec<T>> {
        self.check_len(coeffs)?;
        let mut x = coeffs.to_vec();
        for level in (0..self.levels).rev() {
            self.level(&mut x, self.side >> level, true);
        }
        Ok(x)
    }

    /// Best `k`-term wavelet approximation of `image`: returns the
    /// approximated image and its `k`-sparse coefficients.
    pub fn sparsify_top_k(&self, image: &[T], k: usize) -> Result<(Vec<T>, Vec<T>)> {
        if k > self.len() {
            return Err(Error::InvalidParameter(format!(
                "k={k} exceeds the {} coefficients",
                self.len()
            )));
        }
        let coeffs = geometry::hard_threshold(&self.analyze(image)?, k)?;
        let sparse = self.synthesize(&coeffs)?;
        Ok((sparse, coeffs))
    }
}
