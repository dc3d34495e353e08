//! Multi-dimensional FFTs and spectral derivatives on the periodic
//! configuration grid.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// FFT plans and wavenumbers for a hypercubic grid of `rank` axes with `n`
/// points each. Row-major layout, last axis fastest.
pub struct Spectral {
    n: usize,
    rank: usize,
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral")
            .field("n", &self.n)
            .field("rank", &self.rank)
            .finish()
    }
}

impl Spectral {
    pub fn new(n: usize, rank: usize, spacing: f64) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let dk = 2.0 * PI / (n as f64 * spacing);
        let wavenumbers = (0..n)
            .map(|i| {
                let m = if i < n / 2 {
                    i as isize
                } else {
                    i as isize - n as isize
                };
                m as f64 * dk
            })
            .collect();
        Self {
            n,
            rank,
            len: n.pow(rank as u32),
            fwd,
            inv,
            wavenumbers,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Angular wavenumber of FFT bin `i` along any axis.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.rank - 1 - axis) as u32)
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, self.fwd.as_ref());
    }

    /// Inverse transform including the 1/len normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, self.inv.as_ref());
        let scale = 1.0 / self.len as f64;
        for z in data.iter_mut() {
            *z *= scale;
        }
    }

    fn transform(&self, data: &mut [Complex64], fft: &dyn Fft<f64>) {
        assert_eq!(data.len(), self.len, "field length does not match grid");
        let n = self.n;
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for axis in 0..self.rank {
            let stride = self.stride(axis);
            if stride == 1 {
                fft.process_with_scratch(data, &mut scratch);
                continue;
            }
            let block = n * stride;
            let mut lanes = vec![Complex64::new(0.0, 0.0); block];
            for base in (0..self.len).step_by(block) {
                let chunk = &mut data[base..base + block];
                for s in 0..stride {
                    for i in 0..n {
                        lanes[s * n + i] = chunk[i * stride + s];
                    }
                }
                fft.process_with_scratch(&mut lanes, &mut scratch);
                for s in 0..stride {
                    for i in 0..n {
                        chunk[i * stride + s] = lanes[s * n + i];
                    }
                }
            }
        }
    }

    /// Calls `f(flat_index, axis_index)` for every grid point.
    pub fn for_each_along(&self, axis: usize, mut f: impl FnMut(usize, usize)) {
        let stride = self.stride(axis);
        let block = self.n * stride;
        for base in (0..self.len).step_by(block) {
            for i in 0..self.n {
                let row = base + i * stride;
                for s in 0..stride {
                    f(row + s, i);
                }
            }
        }
    }

    /// Spectral first derivative along `axis` of a field already in
    /// momentum space. The Nyquist bin is dropped so real fields stay real.
    pub fn derivative_from_spectrum(&self, spectrum: &[Complex64], axis: usize) -> Vec<Complex64> {
        let mut out = spectrum.to_vec();
        let nyquist = self.n / 2;
        let k = &self.wavenumbers;
        self.for_each_along(axis, |idx, i| {
            out[idx] = if i == nyquist {
                Complex64::new(0.0, 0.0)
            } else {
                out[idx] * Complex64::new(0.0, k[i])
            };
        });
        self.inverse(&mut out);
        out
    }

    /// Gradient of `field` along every axis.
    pub fn gradient(&self, field: &[Complex64]) -> Vec<Vec<Complex64>> {
        let mut spectrum = field.to_vec();
        self.forward(&mut spectrum);
        (0..self.rank)
            .map(|axis| self.derivative_from_spectrum(&spectrum, axis))
            .collect()
    }

    /// Derivative of `field` along a single axis.
    pub fn derivative(&self, field: &[Complex64], axis: usize) -> Vec<Complex64> {
        let mut spectrum = field.to_vec();
        self.forward(&mut spectrum);
        self.derivative_from_spectrum(&spectrum, axis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_2d(n: usize, h: f64, f: impl Fn(f64, f64) -> Complex64) -> Vec<Complex64> {
        let x0 = -(n as f64) * h / 2.0;
        let mut v = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                v.push(f(x0 + i as f64 * h, x0 + j as f64 * h));
            }
        }
        v
    }

    #[test]
    fn roundtrip_is_identity() {
        let s = Spectral::new(16, 3, 0.5);
        let data: Vec<Complex64> = (0..s.len())
            .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let mut work = data.clone();
        s.forward(&mut work);
        s.inverse(&mut work);
        let err = data
            .iter()
            .zip(&work)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "roundtrip error {err}");
    }

    #[test]
    fn gaussian_derivatives_match_analytic() {
        let n = 64;
        let h = 0.2;
        let s = Spectral::new(n, 2, h);
        let f = field_2d(n, h, |x, y| {
            Complex64::new((-(x * x + 2.0 * y * y)).exp(), 0.0)
        });
        let grad = s.gradient(&f);
        let dx = field_2d(n, h, |x, y| {
            Complex64::new(-2.0 * x * (-(x * x + 2.0 * y * y)).exp(), 0.0)
        });
        let dy = field_2d(n, h, |x, y| {
            Complex64::new(-4.0 * y * (-(x * x + 2.0 * y * y)).exp(), 0.0)
        });
        let ex = grad[0]
            .iter()
            .zip(&dx)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        let ey = grad[1]
            .iter()
            .zip(&dy)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(ex < 1e-10 && ey < 1e-10, "{ex} {ey}");
    }
}
