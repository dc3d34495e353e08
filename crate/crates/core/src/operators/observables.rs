use num_complex::Complex64;

use super::Model;
use crate::grid::{Grid, WaveFunction};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Expectation values and the probability current of a state.
#[derive(Debug, Clone)]
pub struct ObservableSet {
    pub mean_v: f64,
    pub mean_t: f64,
    pub mean_h: f64,
    /// Total momentum, one entry per spatial component.
    pub mean_p: Vec<f64>,
    /// Total orbital angular momentum `L_z` (two dimensions per particle only).
    pub mean_l: Option<f64>,
    /// Probability current per configuration axis.
    pub current: Vec<Vec<f64>>,
    /// Largest imaginary part found among the expectation values.
    pub imag_residue: f64,
}

/// `sum psi^* f dV` for an arbitrary field `f`.
pub fn expectation(grid: &Grid, psi: &[Complex64], field: &[Complex64]) -> Complex64 {
    let s: Complex64 = psi.iter().zip(field).map(|(a, b)| a.conj() * b).sum();
    s * grid.cell_volume()
}

/// Total momentum component `-i sum_p d/dx_{p,c}` applied to `field`.
pub fn momentum_action(grid: &Grid, field: &[Complex64], component: usize) -> Vec<Complex64> {
    momentum_parts(grid, field, component, &[0, 1])
}

/// Momentum component of one particle applied to `field`.
pub fn particle_momentum_action(
    grid: &Grid,
    field: &[Complex64],
    component: usize,
    particle: usize,
) -> Vec<Complex64> {
    momentum_parts(grid, field, component, &[particle])
}

fn momentum_parts(
    grid: &Grid,
    field: &[Complex64],
    component: usize,
    particles: &[usize],
) -> Vec<Complex64> {
    let spectral = grid.spectral();
    let mut spectrum = field.to_vec();
    spectral.forward(&mut spectrum);
    let mut out = vec![Complex64::new(0.0, 0.0); field.len()];
    for &p in particles {
        let d = spectral.derivative_from_spectrum(&spectrum, grid.axis(p, component));
        for (o, v) in out.iter_mut().zip(d) {
            *o -= I * v;
        }
    }
    out
}

/// Total `L_z = -i sum_p (x_p d/dy_p - y_p d/dx_p)` applied to `field`.
/// Requires two spatial dimensions per particle.
pub fn angular_momentum_action(grid: &Grid, field: &[Complex64]) -> Vec<Complex64> {
    angular_momentum_parts(grid, field, &[0, 1])
}

/// `L_z` of one particle applied to `field`.
pub fn particle_angular_momentum_action(
    grid: &Grid,
    field: &[Complex64],
    particle: usize,
) -> Vec<Complex64> {
    angular_momentum_parts(grid, field, &[particle])
}

fn angular_momentum_parts(grid: &Grid, field: &[Complex64], particles: &[usize]) -> Vec<Complex64> {
    assert_eq!(
        grid.dims(),
        2,
        "angular momentum needs two dimensions per particle"
    );
    let spectral = grid.spectral();
    let mut spectrum = field.to_vec();
    spectral.forward(&mut spectrum);
    let mut out = vec![Complex64::new(0.0, 0.0); field.len()];
    for &p in particles {
        let ax = grid.axis(p, 0);
        let ay = grid.axis(p, 1);
        let dx = spectral.derivative_from_spectrum(&spectrum, ax);
        let dy = spectral.derivative_from_spectrum(&spectrum, ay);
        for (idx, o) in out.iter_mut().enumerate() {
            let x = grid.coordinate(idx, ax);
            let y = grid.coordinate(idx, ay);
            *o -= I * (dy[idx] * x - dx[idx] * y);
        }
    }
    out
}

/// Kinetic operator applied spectrally.
pub fn kinetic_action(grid: &Grid, field: &[Complex64]) -> Vec<Complex64> {
    let spectral = grid.spectral();
    let mut work = field.to_vec();
    spectral.forward(&mut work);
    for (z, t) in work.iter_mut().zip(grid.kinetic_symbol()) {
        *z *= t;
    }
    spectral.inverse(&mut work);
    work
}

/// `H field = T field + V field`.
pub fn hamiltonian_action(model: &Model, field: &[Complex64]) -> Vec<Complex64> {
    let mut out = kinetic_action(&model.grid, field);
    for ((o, f), v) in out.iter_mut().zip(field).zip(&model.field.values) {
        *o += f * v;
    }
    out
}

/// Probability current `J_a = Im(psi^* d_a psi) / m_a` per configuration axis
/// from precomputed gradients.
pub fn probability_current(
    grid: &Grid,
    psi: &[Complex64],
    gradient: &[Vec<Complex64>],
) -> Vec<Vec<f64>> {
    gradient
        .iter()
        .enumerate()
        .map(|(axis, g)| {
            let m = grid.axis_mass(axis);
            psi.iter()
                .zip(g)
                .map(|(a, b)| (a.conj() * b).im / m)
                .collect()
        })
        .collect()
}

pub fn observables(model: &Model, psi: &WaveFunction) -> ObservableSet {
    let grid = &model.grid;
    let amps = &psi.amps;
    let mut imag_residue = 0.0f64;

    let mean_v = model.mean_potential(psi);

    let mut spectrum = amps.clone();
    grid.spectral().forward(&mut spectrum);
    let spec_norm: f64 = spectrum.iter().map(|z| z.norm_sqr()).sum();
    let mean_t = spectrum
        .iter()
        .zip(grid.kinetic_symbol())
        .map(|(z, t)| z.norm_sqr() * t)
        .sum::<f64>()
        / spec_norm
        * psi.norm_sq();

    let h_psi = hamiltonian_action(model, amps);
    let h_real_space = expectation(grid, amps, &h_psi);
    imag_residue = imag_residue.max(h_real_space.im.abs());

    let gradient: Vec<Vec<Complex64>> = (0..grid.rank())
        .map(|a| grid.spectral().derivative_from_spectrum(&spectrum, a))
        .collect();

    let mean_p = (0..grid.dims())
        .map(|c| {
            let mut total = Complex64::new(0.0, 0.0);
            for p in 0..2 {
                let g = &gradient[grid.axis(p, c)];
                total += -I * expectation(grid, amps, g);
            }
            imag_residue = imag_residue.max(total.im.abs());
            total.re
        })
        .collect();

    let mean_l = (grid.dims() == 2).then(|| {
        let l = expectation(grid, amps, &angular_momentum_action(grid, amps));
        imag_residue = imag_residue.max(l.im.abs());
        l.re
    });

    let current = probability_current(grid, amps, &gradient);

    ObservableSet {
        mean_v,
        mean_t,
        mean_h: mean_t + mean_v,
        mean_p,
        mean_l,
        current,
        imag_residue,
    }
}
