//! Interaction-driven stochastic collapse step.
//!
//! A single complex Wiener increment drives the operator
//! `C = sqrt(gamma) (V - <V>) / rest_energy`, where `gamma` is the rate at
//! which the interaction energy is changing relative to the pair's
//! center-of-mass frame energy.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::WaveFunction;
use crate::operators::{probability_current, Model, Propagator};

/// Upper bound on the coupling for physically motivated runs.
pub const PHYSICAL_KAPPA_MAX: f64 = 5e-4;

/// Relative threshold on `|<V>| / |V0|` below which the interaction is off.
pub const DEFAULT_VBAR_GUARD: f64 = 1e-12;

/// One complex Wiener increment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseIncrement {
    pub dxi: Complex64,
    pub dt: f64,
}

impl NoiseIncrement {
    pub fn new(dxi: Complex64, dt: f64) -> Self {
        Self { dxi, dt }
    }

    /// `dxi + dxi*`, the only combination that moves branch weight.
    pub fn real_sum(&self) -> f64 {
        2.0 * self.dxi.re
    }
}

/// `dxi = (g1 + i g2) sqrt(dt/2)` with independent standard normals.
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, dt: f64) -> NoiseIncrement {
    let g1: f64 = rng.sample(StandardNormal);
    let g2: f64 = rng.sample(StandardNormal);
    let s = (0.5 * dt).sqrt();
    NoiseIncrement::new(Complex64::new(g1 * s, g2 * s), dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseParams {
    /// Interaction energy scale over the pair rest energy (dimensionless).
    pub kappa: f64,
    /// Ground-state energy subtracted in the rate denominator.
    #[serde(default)]
    pub e0: f64,
    /// Guard on `|<V>|` relative to `|V0|`.
    #[serde(default = "default_guard")]
    pub vbar_guard: f64,
}

fn default_guard() -> f64 {
    DEFAULT_VBAR_GUARD
}

impl CollapseParams {
    pub fn from_kappa(kappa: f64) -> Self {
        Self {
            kappa,
            e0: 0.0,
            vbar_guard: DEFAULT_VBAR_GUARD,
        }
    }

    /// Coupling from the pair rest energy `(m_j + m_k) c^2` and the well depth.
    pub fn from_rest_energy(depth: f64, rest_energy: f64) -> Result<Self> {
        if !(rest_energy > 0.0 && rest_energy.is_finite()) {
            return Err(Error::Config(format!(
                "rest energy must be positive, got {rest_energy}"
            )));
        }
        Ok(Self::from_kappa(depth.abs() / rest_energy))
    }

    pub fn with_e0(mut self, e0: f64) -> Self {
        self.e0 = e0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!(
                "kappa must be finite and non-negative, got {}",
                self.kappa
            )));
        }
        if !self.e0.is_finite() {
            return Err(Error::Config("e0 must be finite".into()));
        }
        if !(self.vbar_guard > 0.0 && self.vbar_guard.is_finite()) {
            return Err(Error::Config("vbar_guard must be positive".into()));
        }
        Ok(())
    }

    pub fn is_physical(&self) -> bool {
        self.kappa <= PHYSICAL_KAPPA_MAX
    }

    /// Rest energy implied by `kappa` and the well depth.
    pub fn rest_energy(&self, depth: f64) -> f64 {
        depth.abs() / self.kappa
    }

    /// `1 / rest_energy`.
    pub fn coupling(&self, depth: f64) -> f64 {
        if depth == 0.0 {
            0.0
        } else {
            self.kappa / depth.abs()
        }
    }
}

/// Rate parameter and its ingredients at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaRecord {
    pub t: f64,
    pub gamma: f64,
    /// Weighted `|dV/dt|` over the interacting part.
    pub numerator: f64,
    /// Center-of-mass frame energy above `e0`.
    pub denominator: f64,
    pub u_com: Vec<f64>,
    pub mean_v: f64,
    /// False when the guard on `<V>` tripped.
    pub active: bool,
}

impl GammaRecord {
    fn inactive(t: f64, dims: usize, mean_v: f64) -> Self {
        Self {
            t,
            gamma: 0.0,
            numerator: 0.0,
            denominator: 0.0,
            u_com: vec![0.0; dims],
            mean_v,
            active: false,
        }
    }
}

fn guard_trips(model: &Model, params: &CollapseParams, mean_v: f64) -> bool {
    model.potential.depth == 0.0 || mean_v.abs() < params.vbar_guard * model.potential.depth.abs()
}

fn com_velocity_from(
    model: &Model,
    psi: &WaveFunction,
    gradient: &[Vec<Complex64>],
    mean_v: f64,
) -> Vec<f64> {
    let grid = &model.grid;
    let dv = grid.cell_volume();
    let total_mass = grid.total_mass();
    (0..grid.dims())
        .map(|c| {
            let gj = &gradient[grid.axis(0, c)];
            let gk = &gradient[grid.axis(1, c)];
            let s: f64 = psi
                .amps
                .iter()
                .zip(gj.iter().zip(gk))
                .zip(&model.field.values)
                .map(|((a, (dj, dk)), v)| v * (a.conj() * (dj + dk)).im)
                .sum();
            s * dv / (mean_v * total_mass)
        })
        .collect()
}

/// Center-of-mass velocity weighted by `V / <V>`; `None` when the guard trips.
pub fn com_velocity(
    model: &Model,
    psi: &WaveFunction,
    params: &CollapseParams,
) -> Option<Vec<f64>> {
    let mean_v = model.mean_potential(psi);
    if guard_trips(model, params, mean_v) {
        return None;
    }
    let gradient = model.gradient(psi);
    Some(com_velocity_from(model, psi, &gradient, mean_v))
}

/// Rate parameter on the current state.
///
/// Every ingredient is averaged over the interacting part of the state with
/// the density weight `w |psi|^2`, `w = V / <V>`, so the rate does not depend
/// on the amplitude of that part. The numerator is `|int w grad V . J|`, the
/// real rate of change of the interaction energy (the Laplacian part of the
/// commutator is purely imaginary and cancels). The denominator is the
/// weighted energy above `e0` after removing the center-of-mass velocity `u`.
pub fn gamma_jk(model: &Model, psi: &WaveFunction, params: &CollapseParams) -> Result<GammaRecord> {
    let grid = &model.grid;
    let mean_v = model.mean_potential(psi);
    if guard_trips(model, params, mean_v) {
        return Ok(GammaRecord::inactive(psi.time, grid.dims(), mean_v));
    }
    let gradient = model.gradient(psi);
    let dv = grid.cell_volume();

    let current = probability_current(grid, &psi.amps, &gradient);
    let mut rate = 0.0;
    for (axis, j) in current.iter().enumerate() {
        rate += model
            .field
            .axis_gradient(grid, axis)
            .zip(j)
            .zip(&model.field.values)
            .map(|((g, j), v)| v * g * j)
            .sum::<f64>();
    }
    let numerator = (rate * dv / mean_v).abs();

    let u = com_velocity_from(model, psi, &gradient, mean_v);
    let mut weighted = 0.0;
    for idx in 0..grid.len() {
        let v = model.field.values[idx];
        let a = psi.amps[idx];
        let mut local = (v - params.e0) * a.norm_sqr();
        for (axis, g) in gradient.iter().enumerate() {
            let p = axis / grid.dims();
            let c = axis % grid.dims();
            let m = grid.mass(p);
            let shifted = g[idx] - Complex64::new(0.0, m * u[c]) * a;
            local += shifted.norm_sqr() / (2.0 * m);
        }
        weighted += v * local;
    }
    let denominator = weighted * dv / mean_v;
    if !(denominator > 0.0) {
        return Err(Error::Denominator {
            denominator,
            e0: params.e0,
        });
    }
    Ok(GammaRecord {
        t: psi.time,
        gamma: numerator / denominator,
        numerator,
        denominator,
        u_com: u,
        mean_v,
        active: true,
    })
}

/// Pointwise collapse operator `sqrt(gamma) (V - <V>) / rest_energy`.
pub fn collapse_field(
    model: &Model,
    psi: &WaveFunction,
    params: &CollapseParams,
    gamma: f64,
) -> Vec<f64> {
    let a = gamma.sqrt() * params.coupling(model.potential.depth);
    let mean_v = model.mean_potential(psi);
    model
        .field
        .values
        .iter()
        .map(|v| a * (v - mean_v))
        .collect()
}

/// Result of one stochastic update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticOutcome {
    /// `||psi'||^2 - 1` before renormalization.
    pub norm_excess: f64,
}

/// `psi <- psi + C psi dxi - C^2 psi dt / 2`, then renormalize.
pub fn apply_stochastic(
    model: &Model,
    psi: &mut WaveFunction,
    params: &CollapseParams,
    gamma: &GammaRecord,
    noise: &NoiseIncrement,
) -> StochasticOutcome {
    let a = gamma.gamma.sqrt() * params.coupling(model.potential.depth);
    if a == 0.0 {
        return StochasticOutcome { norm_excess: 0.0 };
    }
    let mean_v = model.mean_potential(psi);
    for (z, v) in psi.amps.iter_mut().zip(&model.field.values) {
        let c = a * (v - mean_v);
        *z *= Complex64::new(1.0 - 0.5 * c * c * noise.dt, 0.0) + c * noise.dxi;
    }
    let norm_sq = psi.normalize();
    StochasticOutcome {
        norm_excess: norm_sq - 1.0,
    }
}

/// Everything recorded about one full step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub gamma: GammaRecord,
    pub noise: NoiseIncrement,
    pub norm_excess: f64,
}

/// Hamiltonian step followed by the stochastic step on the evolved state.
#[derive(Debug, Clone)]
pub struct SdeStepper {
    propagator: Propagator,
    params: CollapseParams,
}

impl SdeStepper {
    pub fn new(model: Arc<Model>, params: CollapseParams, dt: f64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            propagator: Propagator::checked(model, dt)?,
            params,
        })
    }

    pub fn model(&self) -> &Arc<Model> {
        self.propagator.model()
    }

    pub fn params(&self) -> &CollapseParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.propagator.dt()
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    /// Same model and step with a different coupling.
    pub fn with_params(&self, params: CollapseParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            propagator: self.propagator.clone(),
            params,
        })
    }

    /// Draws the noise and advances `psi`. The noise is drawn even when the
    /// coupling vanishes so the generator stream stays aligned.
    pub fn step<R: Rng + ?Sized>(&self, psi: &mut WaveFunction, rng: &mut R) -> Result<StepRecord> {
        let noise = sample_noise(rng, self.dt());
        self.step_with_noise(psi, noise)
    }

    /// Advances `psi` with a given increment.
    pub fn step_with_noise(
        &self,
        psi: &mut WaveFunction,
        noise: NoiseIncrement,
    ) -> Result<StepRecord> {
        self.propagator.step(psi);
        let model = self.propagator.model();
        let gamma = gamma_jk(model, psi, &self.params)?;
        let outcome = apply_stochastic(model, psi, &self.params, &gamma, &noise);
        Ok(StepRecord {
            gamma,
            noise,
            norm_excess: outcome.norm_excess,
        })
    }
}

/// One full step returning the new state and its record.
pub fn sde_step<R: Rng + ?Sized>(
    model: &Arc<Model>,
    psi: &WaveFunction,
    params: &CollapseParams,
    rng: &mut R,
    dt: f64,
) -> Result<(WaveFunction, StepRecord)> {
    let stepper = SdeStepper::new(model.clone(), params.clone(), dt)?;
    let mut out = psi.clone();
    let record = stepper.step(&mut out, rng)?;
    Ok((out, record))
}
