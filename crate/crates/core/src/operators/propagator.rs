use std::sync::Arc;

use num_complex::Complex64;

use super::{hamiltonian_action, observables, separation, Model};
use crate::error::{Error, Result};
use crate::grid::{Grid, WaveFunction};

/// Largest time step allowed for a grid and potential depth.
pub fn stability_budget(grid: &Grid, depth: f64) -> f64 {
    let m = grid.mass(0).min(grid.mass(1));
    let h = grid.spacing();
    let kinetic = 0.1 * m * h * h;
    if depth == 0.0 {
        kinetic
    } else {
        kinetic.min(0.05 / depth.abs())
    }
}

/// Strang split-step propagator `e^{-iV dt/2} e^{-iT dt} e^{-iV dt/2}`.
#[derive(Debug, Clone)]
pub struct Propagator {
    model: Arc<Model>,
    dt: f64,
    half_potential: Vec<Complex64>,
    kinetic: Vec<Complex64>,
}

impl Propagator {
    /// Builds the phase tables without checking the stability budget
    /// (negative `dt` is allowed for time reversal).
    pub fn new(model: Arc<Model>, dt: f64) -> Self {
        let half_potential = model
            .field
            .values
            .iter()
            .map(|v| Complex64::from_polar(1.0, -0.5 * v * dt))
            .collect();
        let kinetic = model
            .grid
            .kinetic_symbol()
            .iter()
            .map(|t| Complex64::from_polar(1.0, -t * dt))
            .collect();
        Self {
            model,
            dt,
            half_potential,
            kinetic,
        }
    }

    pub fn checked(model: Arc<Model>, dt: f64) -> Result<Self> {
        let budget = stability_budget(&model.grid, model.potential.depth);
        if !(dt > 0.0 && dt <= budget * (1.0 + 1e-12)) {
            return Err(Error::StepTooLarge { dt, budget });
        }
        Ok(Self::new(model, dt))
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    /// Advances `psi` by one step in place.
    pub fn step(&self, psi: &mut WaveFunction) {
        let spectral = self.model.grid.spectral();
        for (z, p) in psi.amps.iter_mut().zip(&self.half_potential) {
            *z *= p;
        }
        spectral.forward(&mut psi.amps);
        for (z, p) in psi.amps.iter_mut().zip(&self.kinetic) {
            *z *= p;
        }
        spectral.inverse(&mut psi.amps);
        for (z, p) in psi.amps.iter_mut().zip(&self.half_potential) {
            *z *= p;
        }
        psi.time += self.dt;
    }
}

/// One unitary step returning a new state.
pub fn hamiltonian_step(model: &Arc<Model>, psi: &WaveFunction, dt: f64) -> Result<WaveFunction> {
    if !Arc::ptr_eq(psi.grid(), &model.grid) && psi.grid().spec() != model.grid.spec() {
        return Err(Error::Mismatch(
            "state and model live on different grids".into(),
        ));
    }
    let mut out = psi.clone();
    Propagator::checked(model.clone(), dt)?.step(&mut out);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub state: WaveFunction,
    /// `<H>` of the relaxed state.
    pub energy: f64,
    pub sweeps: usize,
}

/// Imaginary-time relaxation to the lowest state of the relative motion.
///
/// Split-step sweeps bring the state close; two-dimensional Rayleigh-Ritz
/// steps on the grid Hamiltonian then remove the splitting error, so the
/// result is stationary under real-time evolution up to `tolerance` in the
/// residual `|(H - E) psi|`.
///
/// The default initial guess is a Gaussian in the pair separation and uniform
/// along the center of mass, so the result has zero total momentum.
pub fn relax_ground_state(
    model: &Arc<Model>,
    dtau: f64,
    tolerance: f64,
    max_sweeps: usize,
    initial: Option<WaveFunction>,
) -> Result<GroundState> {
    if !(dtau > 0.0 && dtau.is_finite()) {
        return Err(Error::Preset(format!(
            "relaxation step must be positive, got {dtau}"
        )));
    }
    let grid = &model.grid;
    let mut psi = match initial {
        Some(psi) => psi,
        None => {
            let width = model.potential.range.max(2.0 * grid.spacing());
            let mut sep = vec![0.0; grid.dims()];
            let amps = (0..grid.len())
                .map(|idx| {
                    separation(grid, idx, &mut sep);
                    let r2: f64 = sep.iter().map(|x| x * x).sum();
                    Complex64::new((-r2 / (4.0 * width * width)).exp(), 0.0)
                })
                .collect();
            WaveFunction::from_amplitudes(grid.clone(), amps)?
        }
    };
    psi.normalize();

    let half_potential: Vec<f64> = model
        .field
        .values
        .iter()
        .map(|v| (-0.5 * v * dtau).exp())
        .collect();
    let kinetic: Vec<f64> = grid
        .kinetic_symbol()
        .iter()
        .map(|t| (-t * dtau).exp())
        .collect();
    let spectral = grid.spectral();

    let dv = grid.cell_volume();
    let mut previous = psi.amps.clone();
    for sweep in 1..=max_sweeps {
        for (z, p) in psi.amps.iter_mut().zip(&half_potential) {
            *z *= p;
        }
        spectral.forward(&mut psi.amps);
        for (z, p) in psi.amps.iter_mut().zip(&kinetic) {
            *z *= p;
        }
        spectral.inverse(&mut psi.amps);
        for (z, p) in psi.amps.iter_mut().zip(&half_potential) {
            *z *= p;
        }
        let norm_sq = psi.normalize();
        if !(norm_sq > 0.0 && norm_sq.is_finite()) {
            return Err(Error::Preset("imaginary-time relaxation diverged".into()));
        }
        let moved = psi
            .amps
            .iter()
            .zip(&previous)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            * dv;
        if moved.sqrt() < tolerance.max(SPLIT_TOLERANCE) * dtau {
            let polish = polish_ground_state(model, &mut psi, tolerance, max_sweeps)?;
            psi.time = 0.0;
            let energy = observables(model, &psi).mean_h;
            return Ok(GroundState {
                state: psi,
                energy,
                sweeps: sweep + polish,
            });
        }
        previous.copy_from_slice(&psi.amps);
    }
    Err(Error::Preset(format!(
        "imaginary-time relaxation did not converge in {max_sweeps} sweeps"
    )))
}

/// Residual at which split-step relaxation hands over to the polish.
const SPLIT_TOLERANCE: f64 = 1e-6;
const STALL_ITERATIONS: usize = 100;

/// Steepest descent with exact line search on the Rayleigh quotient. Stops
/// below `tolerance` or once the residual stalls at its round-off floor.
fn polish_ground_state(
    model: &Model,
    psi: &mut WaveFunction,
    tolerance: f64,
    max_iterations: usize,
) -> Result<usize> {
    let dv = model.grid.cell_volume();
    let inner = |a: &[Complex64], b: &[Complex64]| -> Complex64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.conj() * y)
            .sum::<Complex64>()
            * dv
    };
    let (mut best, mut stalled) = (f64::INFINITY, 0);
    for iteration in 0..max_iterations {
        let h_psi = hamiltonian_action(model, &psi.amps);
        let energy = inner(&psi.amps, &h_psi).re;
        let mut q: Vec<Complex64> = h_psi
            .iter()
            .zip(&psi.amps)
            .map(|(h, z)| h - z * energy)
            .collect();
        let residual = inner(&q, &q).re.sqrt();
        if residual < 0.9 * best {
            (best, stalled) = (residual, 0);
        } else {
            stalled += 1;
        }
        if residual < tolerance || stalled > STALL_ITERATIONS {
            return Ok(iteration);
        }
        q.iter_mut().for_each(|z| *z /= residual);
        let d = inner(&q, &hamiltonian_action(model, &q)).re;
        let half = 0.5 * (d - energy);
        // Lowest Ritz value minus `energy`, free of cancellation.
        let shift = -residual * residual / (half + (half * half + residual * residual).sqrt());
        let (a, b) = (residual, shift);
        for (z, r) in psi.amps.iter_mut().zip(&q) {
            *z = *z * a + r * b;
        }
        psi.normalize();
    }
    Err(Error::Preset(format!(
        "ground state residual did not reach {tolerance} in {max_iterations} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{init_on_grid, GridSpec, Packet, PacketPair, Preset};
    use crate::operators::{expectation, PotentialSpec};

    fn free_model(n: usize, extent: f64) -> Arc<Model> {
        let grid = Grid::new(GridSpec::new(1, n, extent, [1.0, 1.0])).unwrap();
        Model::new(grid, PotentialSpec::gaussian_well(0.0, 1.0)).unwrap()
    }

    fn packet_state(model: &Arc<Model>, k: f64, sigma: f64) -> WaveFunction {
        let preset = Preset::packets(PacketPair::new(
            Packet::line(-5.0, k, sigma),
            Packet::line(5.0, 0.0, sigma),
        ));
        init_on_grid(&model.grid, &preset).unwrap()
    }

    #[test]
    fn free_step_preserves_norm_and_momentum() {
        let model = free_model(128, 16.0);
        let mut psi = packet_state(&model, 2.0, 1.0);
        let p0 = observables(&model, &psi).mean_p[0];
        let prop = Propagator::checked(model.clone(), 0.005).unwrap();
        for _ in 0..20 {
            prop.step(&mut psi);
            assert!((psi.norm_sq() - 1.0).abs() < 1e-12);
        }
        let p1 = observables(&model, &psi).mean_p[0];
        assert!((p1 - p0).abs() < 1e-10, "{p0} -> {p1}");
    }

    #[test]
    fn observables_of_gaussian_packets() {
        let model = free_model(128, 16.0);
        let psi = packet_state(&model, 2.0, 1.0);
        let obs = observables(&model, &psi);
        assert!((obs.mean_p[0] - 2.0).abs() < 0.01);
        // j carries k0 = 2, k is at rest; both have width 1.
        let expected = (4.0 + 0.25) / 2.0 + 0.25 / 2.0;
        assert!(
            (obs.mean_h - expected).abs() < 0.01 * expected,
            "{}",
            obs.mean_h
        );
        assert!(obs.imag_residue < 1e-9);

        let real = packet_state(&model, 0.0, 1.0);
        let obs = observables(&model, &real);
        assert!(obs.mean_p[0].abs() < 1e-12);
        let jmax = obs
            .current
            .iter()
            .flatten()
            .fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(jmax < 1e-12);
    }

    #[test]
    fn forward_then_backward_recovers_state() {
        let grid = Grid::new(GridSpec::new(1, 64, 10.0, [1.0, 2.0])).unwrap();
        let model = Model::new(grid, PotentialSpec::gaussian_well(-1.0, 1.0)).unwrap();
        let psi0 = packet_state(&model, 1.0, 1.0);
        let mut psi = psi0.clone();
        let fwd = Propagator::new(model.clone(), 0.01);
        let back = Propagator::new(model, -0.01);
        for _ in 0..25 {
            fwd.step(&mut psi);
        }
        for _ in 0..25 {
            back.step(&mut psi);
        }
        let diff = psi
            .amps
            .iter()
            .zip(&psi0.amps)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn budget_is_enforced() {
        let model = free_model(64, 8.0);
        let budget = stability_budget(&model.grid, 0.0);
        assert!(Propagator::checked(model.clone(), budget).is_ok());
        assert!(matches!(
            Propagator::checked(model, 2.0 * budget),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn harmonic_ground_state_energy_and_stationarity() {
        // Relative mass 1/2 and stiffness 1 give omega = sqrt(2).
        let grid = Grid::new(GridSpec::new(1, 64, 8.0, [1.0, 1.0])).unwrap();
        let model = Model::new(grid, PotentialSpec::harmonic(1.0, 1.0)).unwrap();
        let ground = relax_ground_state(&model, 0.005, 1e-10, 200_000, None).unwrap();
        let exact = 0.5 * 2f64.sqrt();
        assert!(
            (ground.energy - exact).abs() < 0.01 * exact,
            "{}",
            ground.energy
        );

        let dt = stability_budget(&model.grid, 1.0);
        let mut psi = ground.state.clone();
        Propagator::checked(model, dt).unwrap().step(&mut psi);
        let fidelity = ground.state.inner(&psi).norm();
        assert!(fidelity >= 1.0 - 1e-6, "{fidelity}");
    }

    #[test]
    fn ehrenfest_momentum_rate() {
        let grid = Grid::new(GridSpec::new(1, 128, 12.0, [1.0, 1.0])).unwrap();
        let model = Model::new(grid, PotentialSpec::gaussian_well(-1.0, 1.0)).unwrap();
        let preset = Preset::packets(PacketPair::new(
            Packet::line(-0.8, 0.5, 1.0),
            Packet::line(0.4, 0.0, 1.0),
        ));
        let psi = init_on_grid(&model.grid, &preset).unwrap();
        let dt = 1e-3;
        let force = |psi: &WaveFunction| {
            let g: Vec<Complex64> = model
                .field
                .axis_gradient(&model.grid, 0)
                .map(|v| Complex64::new(v, 0.0))
                .zip(&psi.amps)
                .map(|(v, a)| v * a)
                .collect();
            -expectation(&model.grid, &psi.amps, &g).re
        };
        let mut fwd = psi.clone();
        let mut back = psi.clone();
        Propagator::new(model.clone(), dt).step(&mut fwd);
        Propagator::new(model.clone(), -dt).step(&mut back);
        let p_jf = momentum_of_particle(&model, &fwd, 0);
        let p_jb = momentum_of_particle(&model, &back, 0);
        let rate = (p_jf - p_jb) / (2.0 * dt);
        let f = force(&psi);
        assert!((rate - f).abs() < 1e-5 * (1.0 + f.abs()), "{rate} vs {f}");
    }

    fn momentum_of_particle(model: &Model, psi: &WaveFunction, p: usize) -> f64 {
        let d = model
            .grid
            .spectral()
            .derivative(&psi.amps, model.grid.axis(p, 0));
        (-Complex64::i() * expectation(&model.grid, &psi.amps, &d)).re
    }
}
