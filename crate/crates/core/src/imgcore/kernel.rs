use crate::error::{Error, Result};

/// Square convolution kernel with odd side length, centered at
/// `(size / 2, size / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    size: usize,
    taps: Vec<f64>,
}

impl Kernel2D {
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::InvalidKernel(format!("side length {size} is not odd")));
        }
        if taps.len() != size * size {
            return Err(Error::InvalidKernel(format!(
                "{} taps for a {size}x{size} kernel",
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidKernel("non-finite tap".into()));
        }
        Ok(Self { size, taps })
    }

    pub(crate) fn from_raw(size: usize, taps: Vec<f64>) -> Self {
        debug_assert!(size % 2 == 1 && taps.len() == size * size);
        Self { size, taps }
    }

    /// Single center tap holding `mass`.
    pub fn delta(mass: f64) -> Self {
        Self {
            size: 1,
            taps: vec![mass],
        }
    }

    pub fn zeros(size: usize) -> Result<Self> {
        Self::new(size, vec![0.0; size * size])
    }

    pub fn from_fn(size: usize, f: impl Fn(isize, isize) -> f64) -> Result<Self> {
        let half = (size / 2) as isize;
        let mut taps = Vec::with_capacity(size * size);
        for j in 0..size as isize {
            for i in 0..size as isize {
                taps.push(f(i - half, j - half));
            }
        }
        Self::new(size, taps)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn half(&self) -> usize {
        self.size / 2
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut [f64] {
        &mut self.taps
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.taps[y * self.size + x]
    }

    /// Tap at offset `(dx, dy)` from the center, zero outside the support.
    pub fn at_offset(&self, dx: isize, dy: isize) -> f64 {
        let h = self.half() as isize;
        if dx.abs() > h || dy.abs() > h {
            return 0.0;
        }
        self.get((dx + h) as usize, (dy + h) as usize)
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.taps.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.taps.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn center(&self) -> f64 {
        let h = self.half();
        self.get(h, h)
    }

    pub fn scaled(&self, k: f64) -> Kernel2D {
        Kernel2D::from_raw(self.size, self.taps.iter().map(|t| t * k).collect())
    }

    /// Rescales so the taps sum to `mass`. A zero-sum kernel is returned unchanged.
    pub fn normalized_to(&self, mass: f64) -> Kernel2D {
        let s = self.sum();
        if s == 0.0 {
            return self.clone();
        }
        self.scaled(mass / s)
    }

    /// Mirror about the vertical axis through the center.
    pub fn flip_horizontal(&self) -> Kernel2D {
        let mut taps = self.taps.clone();
        for row in taps.chunks_exact_mut(self.size) {
            row.reverse();
        }
        Kernel2D::from_raw(self.size, taps)
    }

    pub fn transpose(&self) -> Kernel2D {
        let n = self.size;
        let mut taps = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                taps[x * n + y] = self.taps[y * n + x];
            }
        }
        Kernel2D::from_raw(n, taps)
    }

    /// Elementwise sum; the smaller kernel is embedded at the center of the larger.
    pub fn add(&self, other: &Kernel2D) -> Kernel2D {
        let size = self.size.max(other.size);
        let a = self.embed(size);
        let b = other.embed(size);
        Kernel2D::from_raw(size, a.taps.iter().zip(&b.taps).map(|(x, y)| x + y).collect())
    }

    /// Zero-pads to a larger odd side, keeping the center fixed.
    pub fn embed(&self, size: usize) -> Kernel2D {
        assert!(size % 2 == 1 && size >= self.size, "embed target must be odd and not smaller");
        if size == self.size {
            return self.clone();
        }
        let off = (size - self.size) / 2;
        let mut taps = vec![0.0; size * size];
        for y in 0..self.size {
            let src = &self.taps[y * self.size..(y + 1) * self.size];
            let d = (y + off) * size + off;
            taps[d..d + self.size].copy_from_slice(src);
        }
        Kernel2D::from_raw(size, taps)
    }

    /// Largest elementwise absolute difference after embedding both kernels
    /// on a common canvas.
    pub fn max_abs_diff(&self, other: &Kernel2D) -> f64 {
        let size = self.size.max(other.size);
        let a = self.embed(size);
        let b = other.embed(size);
        a.taps
            .iter()
            .zip(&b.taps)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// Mass-weighted centroid as an offset `(dx, dy)` from the center tap.
    pub fn centroid(&self) -> (f64, f64) {
        let h = self.half() as f64;
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut m = 0.0;
        for y in 0..self.size {
            for x in 0..self.size {
                let t = self.get(x, y);
                sx += t * (x as f64 - h);
                sy += t * (y as f64 - h);
                m += t;
            }
        }
        if m == 0.0 {
            (0.0, 0.0)
        } else {
            (sx / m, sy / m)
        }
    }

    /// Position `(x, y)` of the largest tap (first in row-major order on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, t) in self.taps.iter().enumerate() {
            if *t > self.taps[best] {
                best = i;
            }
        }
        (best % self.size, best / self.size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_even_side() {
        assert!(Kernel2D::new(2, vec![0.0; 4]).is_err());
        assert!(Kernel2D::new(3, vec![0.0; 8]).is_err());
    }

    #[test]
    fn embed_keeps_center() {
        let k = Kernel2D::from_fn(3, |dx, dy| (dx * 3 + dy) as f64).unwrap();
        let e = k.embed(7);
        for dy in -1..=1 {
            for dx in -1..=1 {
                assert_eq!(e.at_offset(dx, dy), k.at_offset(dx, dy));
            }
        }
        assert_eq!(e.at_offset(3, 3), 0.0);
        assert_eq!(e.sum(), k.sum());
    }

    #[test]
    fn flip_moves_centroid() {
        let k = Kernel2D::from_fn(5, |dx, _| if dx == -2 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(k.centroid().0, -2.0);
        assert_eq!(k.flip_horizontal().centroid().0, 2.0);
    }
}
