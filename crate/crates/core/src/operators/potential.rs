use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialFamily {
    /// `V0 exp(-r^2 / (2 range^2))`
    GaussianWell,
    /// `V0 / sqrt(r^2 + s^2)`
    SoftCoulomb,
    /// `V0 r^2 / (2 range^2)`
    Harmonic,
}

/// Conservative pair potential `V(|w_j - w_k|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub family: PotentialFamily,
    /// Energy scale; the sign selects attraction or repulsion.
    pub depth: f64,
    /// Length scale (unused by `soft_coulomb`).
    pub range: f64,
    /// Softening length for `soft_coulomb`; defaults to two grid spacings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub softening: Option<f64>,
}

/// Value and radial derivatives at one separation.
#[derive(Debug, Clone, Copy)]
struct Radial {
    value: f64,
    /// `dV/dr / r`, finite at r = 0 for every family.
    slope_over_r: f64,
}

impl PotentialSpec {
    pub fn gaussian_well(depth: f64, range: f64) -> Self {
        Self {
            family: PotentialFamily::GaussianWell,
            depth,
            range,
            softening: None,
        }
    }

    pub fn soft_coulomb(depth: f64, softening: Option<f64>) -> Self {
        Self {
            family: PotentialFamily::SoftCoulomb,
            depth,
            range: 1.0,
            softening,
        }
    }

    pub fn harmonic(stiffness: f64, range: f64) -> Self {
        Self {
            family: PotentialFamily::Harmonic,
            depth: stiffness,
            range,
            softening: None,
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !self.depth.is_finite() {
            return Err(Error::Potential(format!(
                "depth must be finite, got {}",
                self.depth
            )));
        }
        if !(self.range.is_finite() && self.range > 0.0) {
            return Err(Error::Potential(format!(
                "range must be positive, got {}",
                self.range
            )));
        }
        if self.family == PotentialFamily::SoftCoulomb {
            let s = self.softening_for(grid.spacing());
            if !(s >= grid.spacing()) {
                return Err(Error::Potential(format!(
                    "softening {s} must be at least one grid spacing ({})",
                    grid.spacing()
                )));
            }
        }
        Ok(())
    }

    pub fn softening_for(&self, spacing: f64) -> f64 {
        self.softening.unwrap_or(2.0 * spacing)
    }

    fn radial(&self, r2: f64, softening: f64) -> Radial {
        let v0 = self.depth;
        match self.family {
            PotentialFamily::GaussianWell => {
                let s2 = self.range * self.range;
                let value = v0 * (-0.5 * r2 / s2).exp();
                Radial {
                    value,
                    slope_over_r: -value / s2,
                }
            }
            PotentialFamily::SoftCoulomb => {
                let q = r2 + softening * softening;
                let value = v0 / q.sqrt();
                Radial {
                    value,
                    slope_over_r: -value / q,
                }
            }
            PotentialFamily::Harmonic => {
                let s2 = self.range * self.range;
                Radial {
                    value: 0.5 * v0 * r2 / s2,
                    slope_over_r: v0 / s2,
                }
            }
        }
    }

    /// `(V, grad_j V, laplacian_j V)` at separation vector `sep = w_j - w_k`.
    /// `grad_k V = -grad_j V` and the two Laplacians coincide.
    pub fn derivatives(&self, sep: &[f64], softening: f64) -> (f64, Vec<f64>, f64) {
        let r2: f64 = sep.iter().map(|x| x * x).sum();
        let dims = sep.len() as f64;
        let rad = self.radial(r2, softening);
        let grad = sep.iter().map(|x| rad.slope_over_r * x).collect();
        let lap = match self.family {
            PotentialFamily::GaussianWell => {
                let s2 = self.range * self.range;
                (r2 / (s2 * s2) - dims / s2) * rad.value
            }
            PotentialFamily::SoftCoulomb => {
                let q = r2 + softening * softening;
                self.depth * (3.0 * r2 / q.powf(2.5) - dims / q.powf(1.5))
            }
            PotentialFamily::Harmonic => dims * self.depth / (self.range * self.range),
        };
        (rad.value, grad, lap)
    }

    /// Potential at a separation vector.
    pub fn at_separation(&self, sep: &[f64], softening: f64) -> f64 {
        let r2: f64 = sep.iter().map(|x| x * x).sum();
        self.radial(r2, softening).value
    }

    /// Potential at configuration point `(w_j, w_k)`; soft-Coulomb softening
    /// must be explicit here since no grid is attached.
    pub fn eval(&self, wj: &[f64], wk: &[f64]) -> f64 {
        let sep: Vec<f64> = wj.iter().zip(wk).map(|(a, b)| a - b).collect();
        self.at_separation(&sep, self.softening.unwrap_or(self.range))
    }
}

/// Potential and its analytic derivatives tabulated on a grid.
///
/// Separations use the minimum image of the integer index difference, so the
/// table is periodic like the FFT propagator and exactly invariant under
/// common integer shifts of both particles.
#[derive(Debug, Clone)]
pub struct PotentialField {
    pub values: Vec<f64>,
    /// `grad_j V`, one array per spatial component.
    pub grad_j: Vec<Vec<f64>>,
    /// `laplacian_j V` (equal to `laplacian_k V`).
    pub laplacian: Vec<f64>,
}

impl PotentialField {
    pub fn new(grid: &Grid, spec: &PotentialSpec) -> Result<Self> {
        spec.validate(grid)?;
        let d = grid.dims();
        let softening = spec.softening_for(grid.spacing());
        let mut values = vec![0.0; grid.len()];
        let mut grad_j = vec![vec![0.0; grid.len()]; d];
        let mut laplacian = vec![0.0; grid.len()];
        let mut sep = vec![0.0; d];
        for idx in 0..grid.len() {
            separation(grid, idx, &mut sep);
            let (v, g, l) = spec.derivatives(&sep, softening);
            values[idx] = v;
            for c in 0..d {
                grad_j[c][idx] = g[c];
            }
            laplacian[idx] = l;
        }
        Ok(Self {
            values,
            grad_j,
            laplacian,
        })
    }

    /// `d V / d x_axis` for a configuration axis.
    pub fn axis_gradient(&self, grid: &Grid, axis: usize) -> impl Iterator<Item = f64> + '_ {
        let d = grid.dims();
        let sign = if axis < d { 1.0 } else { -1.0 };
        self.grad_j[axis % d].iter().map(move |g| sign * g)
    }
}

/// Minimum-image separation `w_j - w_k` of grid point `idx`.
pub fn separation(grid: &Grid, idx: usize, out: &mut [f64]) {
    let d = grid.dims();
    let n = grid.points() as isize;
    for (c, s) in out.iter_mut().enumerate() {
        let di = grid.axis_index(idx, c) as isize - grid.axis_index(idx, d + c) as isize;
        *s = min_image(di, n) as f64 * grid.spacing();
    }
}

fn min_image(di: isize, n: isize) -> isize {
    let half = n / 2;
    let mut m = di.rem_euclid(n);
    if m >= half {
        m -= n;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn gaussian_well_values() {
        let v = PotentialSpec::gaussian_well(-1.0, 1.0);
        assert_eq!(v.eval(&[0.0], &[0.0]), -1.0);
        assert!((v.eval(&[1.0], &[0.0]) + (-0.5f64).exp()).abs() < 1e-15);
        assert!((v.eval(&[3.5], &[2.5]) + (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn analytic_gradient_and_laplacian_match_differences() {
        let specs = [
            PotentialSpec::gaussian_well(-1.3, 0.8),
            PotentialSpec::soft_coulomb(0.7, Some(0.5)),
            PotentialSpec::harmonic(2.0, 1.5),
        ];
        let sep = [0.4, -0.9];
        let h = 1e-4;
        for spec in specs {
            let s = spec.softening.unwrap_or(1.0);
            let (_, grad, lap) = spec.derivatives(&sep, s);
            let mut fd_lap = 0.0;
            for c in 0..2 {
                let mut p = sep;
                let mut m = sep;
                p[c] += h;
                m[c] -= h;
                let vp = spec.at_separation(&p, s);
                let vm = spec.at_separation(&m, s);
                let v0 = spec.at_separation(&sep, s);
                assert!(
                    ((vp - vm) / (2.0 * h) - grad[c]).abs() < 1e-7,
                    "{spec:?} grad"
                );
                fd_lap += (vp - 2.0 * v0 + vm) / (h * h);
            }
            assert!(
                (fd_lap - lap).abs() < 1e-5,
                "{spec:?} lap {fd_lap} vs {lap}"
            );
        }
    }

    #[test]
    fn grid_table_is_shift_invariant_bitwise() {
        let grid = Grid::new(GridSpec::new(1, 64, 8.0, [1.0, 1.0])).unwrap();
        let field = PotentialField::new(&grid, &PotentialSpec::gaussian_well(-1.0, 1.0)).unwrap();
        let n = 64;
        let mut max_diff = 0.0f64;
        for shift in [1usize, 5, 17] {
            for i in 0..n {
                for j in 0..n {
                    let a = field.values[i * n + j];
                    let b = field.values[((i + shift) % n) * n + (j + shift) % n];
                    max_diff = max_diff.max((a - b).abs());
                }
            }
        }
        assert_eq!(max_diff, 0.0);
    }

    #[test]
    fn soft_coulomb_softening_must_resolve() {
        let grid = Grid::new(GridSpec::new(1, 64, 8.0, [1.0, 1.0])).unwrap();
        assert!(PotentialField::new(&grid, &PotentialSpec::soft_coulomb(1.0, Some(0.1))).is_err());
        let field = PotentialField::new(&grid, &PotentialSpec::soft_coulomb(1.0, None)).unwrap();
        let vmax = field.values.iter().cloned().fold(0.0, f64::max);
        assert!((vmax - 1.0 / (2.0 * grid.spacing())).abs() < 1e-12);
    }
}
