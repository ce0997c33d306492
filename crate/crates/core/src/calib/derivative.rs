use crate::imgcore::conv::convolve_direct;
use crate::imgcore::Kernel2D;

/// First and second derivative operators used by the estimation and
/// fitting objectives. Taps are stored in convolution order, so `d_x`
/// applied to the ramp `I(x, y) = x` gives +1 and `d_xx` of `x^2` gives 2.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeSet {
    pub d_x: Kernel2D,
    pub d_y: Kernel2D,
    pub d_xx: Kernel2D,
    pub d_yy: Kernel2D,
    pub d_xy: Kernel2D,
}

impl Default for DerivativeSet {
    fn default() -> Self {
        Self::new()
    }
}

impl DerivativeSet {
    pub fn new() -> Self {
        let d_x = Kernel2D::from_raw(3, vec![0.0, 0.0, 0.0, 0.5, 0.0, -0.5, 0.0, 0.0, 0.0]);
        let d_xx = Kernel2D::from_raw(3, vec![0.0, 0.0, 0.0, 1.0, -2.0, 1.0, 0.0, 0.0, 0.0]);
        let d_y = d_x.transpose();
        let mut xy = vec![0.0; 9];
        for j in 0..3 {
            for i in 0..3 {
                xy[j * 3 + i] = d_x.get(i, 1) * d_y.get(1, j);
            }
        }
        Self {
            d_yy: d_xx.transpose(),
            d_xy: Kernel2D::from_raw(3, xy),
            d_x,
            d_y,
            d_xx,
        }
    }

    pub fn kernels(&self) -> [&Kernel2D; 5] {
        [&self.d_x, &self.d_y, &self.d_xx, &self.d_yy, &self.d_xy]
    }

    /// `r + sum_i D_i^T D_i r` with zero-padded same-size operators, and the
    /// matching quadratic form `|r|^2 + sum_i |D_i r|^2`.
    pub(crate) fn weighted(&self, r: &[f64], w: usize, h: usize) -> (f64, Vec<f64>) {
        let mut value: f64 = r.iter().map(|v| v * v).sum();
        let mut out = r.to_vec();
        for k in self.kernels() {
            let d = convolve_direct(r, w, h, k);
            value += d.iter().map(|v| v * v).sum::<f64>();
            let adj = convolve_direct(&d, w, h, &rotate180(k));
            for (o, a) in out.iter_mut().zip(adj) {
                *o += a;
            }
        }
        (value, out)
    }

    /// `|r|^2 + sum_i |D_i r|^2` only.
    pub(crate) fn energy(&self, r: &[f64], w: usize, h: usize) -> f64 {
        let mut value: f64 = r.iter().map(|v| v * v).sum();
        for k in self.kernels() {
            value += convolve_direct(r, w, h, k).iter().map(|v| v * v).sum::<f64>();
        }
        value
    }
}

pub(crate) fn rotate180(k: &Kernel2D) -> Kernel2D {
    Kernel2D::from_raw(k.size(), k.taps().iter().rev().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply(k: &Kernel2D, f: impl Fn(f64, f64) -> f64) -> f64 {
        // response at an interior point of a 9x9 plane
        let src: Vec<f64> = (0..81).map(|i| f((i % 9) as f64, (i / 9) as f64)).collect();
        convolve_direct(&src, 9, 9, k)[4 * 9 + 4]
    }

    #[test]
    fn responses_on_polynomials() {
        let d = DerivativeSet::new();
        for k in d.kernels() {
            assert_eq!(apply(k, |_, _| 0.7), 0.0);
        }
        assert_eq!(apply(&d.d_x, |x, _| x), 1.0);
        assert_eq!(apply(&d.d_y, |_, y| y), 1.0);
        assert_eq!(apply(&d.d_x, |_, y| y), 0.0);
        assert_eq!(apply(&d.d_xx, |x, _| x * x), 2.0);
        assert_eq!(apply(&d.d_yy, |_, y| y * y), 2.0);
        assert_eq!(apply(&d.d_xy, |x, y| x * y), 1.0);
        assert_eq!(apply(&d.d_xy, |x, _| x * x), 0.0);
    }

    #[test]
    fn weighted_is_gradient_of_energy() {
        let d = DerivativeSet::new();
        let (w, h) = (7, 5);
        let r: Vec<f64> = (0..35).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let (value, g) = d.weighted(&r, w, h);
        assert!((value - d.energy(&r, w, h)).abs() < 1e-12);
        let eps = 1e-6;
        for i in [0, 8, 17, 34] {
            let mut p = r.clone();
            p[i] += eps;
            let mut m = r.clone();
            m[i] -= eps;
            let fd = (d.energy(&p, w, h) - d.energy(&m, w, h)) / (2.0 * eps);
            assert!((fd - 2.0 * g[i]).abs() < 1e-6);
        }
    }
}
