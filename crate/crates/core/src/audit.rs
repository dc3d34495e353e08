//! Checks of conservation identities on recorded steps.
//!
//! A [`Recording`] keeps the initial state, the stepper and the noise path,
//! so every check here replays the trajectory deterministically instead of
//! storing states.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::Serialize;

use crate::collapse::{
    gamma_jk, CollapseParams, GammaRecord, NoiseIncrement, SdeStepper, StepRecord,
};
use crate::error::{Error, Result};
use crate::grid::{Grid, Region, WaveFunction};
use crate::operators::{
    angular_momentum_action, expectation, hamiltonian_action, momentum_action,
    particle_angular_momentum_action, particle_momentum_action, Model,
};

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditCheck {
    pub name: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl AuditCheck {
    pub fn new(name: impl Into<String>, max_residual: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_residual,
            tolerance,
            pass: max_residual <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
    /// Optional per-step residual traces keyed by check name.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub series: BTreeMap<String, Vec<f64>>,
}

impl AuditReport {
    pub fn push(&mut self, check: AuditCheck) {
        self.checks.push(check);
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn extend(&mut self, other: AuditReport) {
        self.checks.extend(other.checks);
        self.series.extend(other.series);
    }

    /// Tab-separated table, one check per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("name\tmax_residual\ttolerance\tpass\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{}\t{:e}\t{:e}\t{}\n",
                c.name, c.max_residual, c.tolerance, c.pass
            ));
        }
        out
    }
}

/// One replayed step.
pub struct ReplayStep<'a> {
    pub index: usize,
    pub before: &'a WaveFunction,
    /// State after the Hamiltonian part.
    pub unitary: &'a WaveFunction,
    pub after: &'a WaveFunction,
    pub record: &'a StepRecord,
}

/// Initial state, stepper and noise path of a trajectory.
#[derive(Debug, Clone)]
pub struct Recording {
    pub stepper: SdeStepper,
    pub initial: WaveFunction,
    pub noises: Vec<NoiseIncrement>,
}

impl Recording {
    /// Runs `steps` steps drawing noise from `rng`.
    pub fn record<R: rand::Rng + ?Sized>(
        stepper: SdeStepper,
        initial: WaveFunction,
        steps: usize,
        rng: &mut R,
    ) -> Result<(Self, Vec<StepRecord>)> {
        let mut psi = initial.clone();
        let mut noises = Vec::with_capacity(steps);
        let mut records = Vec::with_capacity(steps);
        for _ in 0..steps {
            let r = stepper.step(&mut psi, rng)?;
            noises.push(r.noise);
            records.push(r);
        }
        Ok((
            Self {
                stepper,
                initial,
                noises,
            },
            records,
        ))
    }

    /// Same initial state and noise path under other collapse parameters.
    pub fn with_params(&self, params: CollapseParams) -> Result<Self> {
        Ok(Self {
            stepper: self.stepper.with_params(params)?,
            initial: self.initial.clone(),
            noises: self.noises.clone(),
        })
    }

    /// Replays every step, handing each to `f`. Bitwise identical to the run.
    pub fn replay(&self, mut f: impl FnMut(ReplayStep<'_>) -> Result<()>) -> Result<()> {
        let model = self.stepper.model();
        let params = self.stepper.params();
        let mut before = self.initial.clone();
        for (index, noise) in self.noises.iter().enumerate() {
            let mut unitary = before.clone();
            self.stepper.propagator().step(&mut unitary);
            let gamma = gamma_jk(model, &unitary, params)?;
            let mut after = unitary.clone();
            let outcome =
                crate::collapse::apply_stochastic(model, &mut after, params, &gamma, noise);
            let record = StepRecord {
                gamma,
                noise: *noise,
                norm_excess: outcome.norm_excess,
            };
            f(ReplayStep {
                index,
                before: &before,
                unitary: &unitary,
                after: &after,
                record: &record,
            })?;
            before = after;
        }
        Ok(())
    }
}

fn check_grids(a: &WaveFunction, b: &WaveFunction) -> Result<()> {
    if a.same_grid(b) {
        Ok(())
    } else {
        Err(Error::Mismatch("states live on different grids".into()))
    }
}

/// `div J = sum_a Im(psi^* d_a^2 psi) / m_a`, which avoids differentiating
/// the product in `J` and so has no aliasing error.
fn current_divergence(grid: &Grid, psi: &WaveFunction) -> Vec<f64> {
    let spectral = grid.spectral();
    let mut spectrum = psi.amps.clone();
    spectral.forward(&mut spectrum);
    let mut div = vec![0.0; grid.len()];
    let k = spectral.wavenumbers();
    for axis in 0..grid.rank() {
        let m = grid.axis_mass(axis);
        let mut second = spectrum.clone();
        spectral.for_each_along(axis, |idx, i| second[idx] *= -k[i] * k[i]);
        spectral.inverse(&mut second);
        for ((d, a), s) in div.iter_mut().zip(&psi.amps).zip(&second) {
            *d += (a.conj() * s).im / m;
        }
    }
    div
}

/// Relative residual allowed for the continuity part of one step.
pub const CONTINUITY_TOLERANCE: f64 = 1e-3;

/// Decomposes the density change of one recorded step.
///
/// The unitary part is compared with `-div J dt` (current at mid-step), the
/// stochastic part with `2 C |psi|^2 Re(dxi)` pointwise and per branch, where
/// the stochastic remainder is measured against its second-order bound
/// `|psi|^2 (C^2 (|dxi|^2 + dt) + |N - 1|)` with a factor two margin. The
/// total density change must integrate to zero.
pub fn density_change_decomposition(
    stepper: &SdeStepper,
    before: &WaveFunction,
    after: &WaveFunction,
    record: &StepRecord,
    branch: Option<&Region>,
) -> Result<AuditReport> {
    check_grids(before, after)?;
    let model = stepper.model();
    let grid = &model.grid;
    if !before.grid().spec().eq(grid.spec()) {
        return Err(Error::Mismatch(
            "state and stepper live on different grids".into(),
        ));
    }
    let dt = stepper.dt();
    let dv = grid.cell_volume();
    let mut report = AuditReport::default();

    let mut unitary = before.clone();
    stepper.propagator().step(&mut unitary);
    let mut mid = before.clone();
    crate::operators::Propagator::new(model.clone(), 0.5 * dt).step(&mut mid);
    let div = current_divergence(grid, &mid);
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for idx in 0..grid.len() {
        let d_rho = unitary.amps[idx].norm_sqr() - before.amps[idx].norm_sqr();
        scale = scale.max(d_rho.abs());
        worst = worst.max((d_rho + dt * div[idx]).abs());
    }
    let continuity = if scale > 0.0 { worst / scale } else { worst };
    report.push(AuditCheck::new(
        "continuity",
        continuity,
        CONTINUITY_TOLERANCE,
    ));

    let params = stepper.params();
    let a = record.gamma.gamma.sqrt() * params.coupling(model.potential.depth);
    let mean_v = model.mean_potential(&unitary);
    let noise = &record.noise;
    let dxi2 = noise.dxi.norm_sqr();
    let n_minus_1 = record.norm_excess.abs();
    let mask = branch.map(|r| r.mask(grid));
    let mut ratio = 0.0f64;
    let (mut branch_pred, mut branch_bound) = (0.0, 0.0);
    for idx in 0..grid.len() {
        let c = a * (model.field.values[idx] - mean_v);
        let rho = unitary.amps[idx].norm_sqr();
        let d_rho = after.amps[idx].norm_sqr() - rho;
        let pred = c * rho * noise.real_sum();
        let bound = 2.0 * rho * (c * c * (dxi2 + dt) + n_minus_1) + 1e-15 * rho;
        if bound > 0.0 {
            ratio = ratio.max((d_rho - pred).abs() / bound);
        } else if (d_rho - pred).abs() > 0.0 {
            ratio = f64::INFINITY;
        }
        if mask.as_ref().is_some_and(|m| m[idx]) {
            branch_pred += pred * dv;
            branch_bound += bound * dv;
        }
    }
    report.push(AuditCheck::new("stochastic_pointwise", ratio, 1.0));

    if let Some(region) = branch {
        let fd = crate::grid::branch_weight(after, region)
            - crate::grid::branch_weight(&unitary, region);
        report.push(AuditCheck::new(
            "branch_transfer",
            (fd - branch_pred).abs(),
            branch_bound + 1e-14,
        ));
    }

    let total: f64 = after
        .amps
        .iter()
        .zip(&before.amps)
        .map(|(x, y)| x.norm_sqr() - y.norm_sqr())
        .sum::<f64>()
        * dv;
    report.push(AuditCheck::new("global_density", total.abs(), 1e-10));
    Ok(report)
}

/// Conserved quantity audited by [`conservation_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Quantity {
    /// Total momentum along one spatial component.
    Momentum(usize),
    /// Total orbital angular momentum `L_z`.
    AngularMomentum,
}

impl Quantity {
    pub fn label(&self) -> String {
        match self {
            Quantity::Momentum(c) => format!("p{c}"),
            Quantity::AngularMomentum => "lz".into(),
        }
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        match self {
            Quantity::AngularMomentum if grid.dims() < 2 => Err(Error::Audit(
                "angular momentum needs two dimensions per particle".into(),
            )),
            Quantity::Momentum(c) if *c >= grid.dims() => {
                Err(Error::Audit(format!("momentum component {c} out of range")))
            }
            _ => Ok(()),
        }
    }

    pub fn action(&self, grid: &Grid, field: &[Complex64]) -> Vec<Complex64> {
        match self {
            Quantity::Momentum(c) => momentum_action(grid, field, *c),
            Quantity::AngularMomentum => angular_momentum_action(grid, field),
        }
    }

    /// The part of the action belonging to one particle.
    pub fn particle_action(
        &self,
        grid: &Grid,
        field: &[Complex64],
        particle: usize,
    ) -> Vec<Complex64> {
        match self {
            Quantity::Momentum(c) => particle_momentum_action(grid, field, *c, particle),
            Quantity::AngularMomentum => particle_angular_momentum_action(grid, field, particle),
        }
    }

    pub fn mean(&self, grid: &Grid, psi: &WaveFunction) -> f64 {
        expectation(grid, &psi.amps, &self.action(grid, &psi.amps)).re
    }
}

/// `max |Q(W psi) - W Q psi| / max |Q_j(W psi)|` with `W = V - <V>`, where
/// `Q_j` is the part of `Q` acting on particle j alone. The denominator is
/// the size of either particle's contribution, which stays finite when the
/// total vanishes. The scalar prefactor of the collapse operator cancels.
pub fn identity_residual(model: &Model, psi: &WaveFunction, q: Quantity) -> f64 {
    let grid = &model.grid;
    let mean_v = model.mean_potential(psi);
    let w: Vec<f64> = model.field.values.iter().map(|v| v - mean_v).collect();
    let w_psi: Vec<Complex64> = psi.amps.iter().zip(&w).map(|(a, w)| a * w).collect();
    let q_w_psi = q.action(grid, &w_psi);
    let qj_w_psi = q.particle_action(grid, &w_psi, 0);
    let q_psi = q.action(grid, &psi.amps);
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for idx in 0..grid.len() {
        diff = diff.max((q_w_psi[idx] - w[idx] * q_psi[idx]).norm());
        scale = scale.max(qj_w_psi[idx].norm());
    }
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Largest identity residual along the coupling-free replay of `rec`.
pub fn identity_baseline(rec: &Recording, q: Quantity) -> Result<f64> {
    let free = rec.with_params(CollapseParams {
        kappa: 0.0,
        ..rec.stepper.params().clone()
    })?;
    let model = free.stepper.model().clone();
    let mut worst = 0.0f64;
    free.replay(|s| {
        worst = worst.max(identity_residual(&model, s.unitary, q));
        Ok(())
    })?;
    Ok(worst)
}

/// Relative drift allowed for conserved totals.
pub const DRIFT_TOLERANCE: f64 = 1e-6;

/// Conservation audit for momentum or angular momentum along a recording.
///
/// Checks the operator identity on every step against ten times the
/// coupling-free baseline, the summed change of `<Q>` caused by the
/// stochastic parts, and the drift of the total between the first and last
/// state. Drifts are relative to `max(|<Q>(0)|, 1)`. The expectation checks
/// presume the initial state carries the same value of `Q` everywhere.
pub fn conservation_report(rec: &Recording, q: Quantity) -> Result<AuditReport> {
    let model = rec.stepper.model().clone();
    let grid = model.grid.clone();
    q.check(&grid)?;
    let baseline = identity_baseline(rec, q)?;
    let tolerance = (10.0 * baseline).max(1e-13);
    let q0 = q.mean(&grid, &rec.initial);
    let scale = q0.abs().max(1.0);

    let mut identity = Vec::with_capacity(rec.noises.len());
    let mut stochastic = 0.0;
    let mut last = q0;
    rec.replay(|s| {
        identity.push(identity_residual(&model, s.unitary, q));
        let qu = q.mean(&grid, s.unitary);
        let qa = q.mean(&grid, s.after);
        stochastic += (qa - qu).abs();
        last = qa;
        Ok(())
    })?;
    let label = q.label();
    let mut report = AuditReport::default();
    let worst = identity.iter().cloned().fold(0.0, f64::max);
    report.push(AuditCheck::new(
        format!("identity_{label}"),
        worst,
        tolerance,
    ));
    report.push(AuditCheck::new(
        format!("stochastic_drift_{label}"),
        stochastic / scale,
        DRIFT_TOLERANCE,
    ));
    report.push(AuditCheck::new(
        format!("total_drift_{label}"),
        (last - q0).abs() / scale,
        DRIFT_TOLERANCE,
    ));
    report.series.insert(format!("identity_{label}"), identity);
    report
        .series
        .insert(format!("identity_baseline_{label}"), vec![baseline]);
    Ok(report)
}

/// Collapse-induced change of `<H>` split into its three parts, as per-step
/// energy increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyDeviationTerms {
    /// `2 Re(dxi <C H>)`, proportional to the density change.
    pub proportional_term: f64,
    /// `2 Re(dxi <[T, C]>)`, from the kinetic commutator.
    pub gradient_term: f64,
    /// `sum_a <|d_a C|^2> dt / (2 m_a)`, never negative.
    pub quadratic_term: f64,
    /// Lowest-order relativistic kinetic correction `-<T>^2 / (2 M c^2)`.
    pub ke_relativistic_correction: f64,
}

/// Evaluates the three parts on `psi` for a given rate and noise increment.
pub fn energy_deviation_terms(
    model: &Model,
    psi: &WaveFunction,
    params: &CollapseParams,
    gamma: &GammaRecord,
    noise: &NoiseIncrement,
) -> EnergyDeviationTerms {
    let grid = &model.grid;
    let dv = grid.cell_volume();
    let depth = model.potential.depth;
    let a = gamma.gamma.sqrt() * params.coupling(depth);
    let mean_v = model.mean_potential(psi);
    let c: Vec<f64> = model
        .field
        .values
        .iter()
        .map(|v| a * (v - mean_v))
        .collect();

    let h_psi = hamiltonian_action(model, &psi.amps);
    let c_h: Complex64 = psi
        .amps
        .iter()
        .zip(&h_psi)
        .zip(&c)
        .map(|((p, h), c)| p.conj() * h * c)
        .sum::<Complex64>()
        * dv;

    let gradient = grid.spectral().gradient(&psi.amps);
    let mut commutator = Complex64::new(0.0, 0.0);
    let mut quadratic = 0.0;
    for (axis, g) in gradient.iter().enumerate() {
        let m = grid.axis_mass(axis);
        for (idx, (dc, psi_a)) in model
            .field
            .axis_gradient(grid, axis)
            .zip(&psi.amps)
            .enumerate()
        {
            let dc = a * dc;
            let lap = a * model.field.laplacian[idx];
            // Each Laplacian is shared by the d components of one particle.
            let lap_share = lap / grid.dims() as f64;
            let term = lap_share * psi_a + 2.0 * dc * g[idx];
            commutator -= psi_a.conj() * term / (2.0 * m);
            quadratic += dc * dc * psi_a.norm_sqr() / (2.0 * m);
        }
    }
    commutator *= dv;
    quadratic *= dv * noise.dt;

    let mean_t = crate::operators::observables(model, psi).mean_t;
    let rest = if params.kappa > 0.0 && depth != 0.0 {
        params.rest_energy(depth)
    } else {
        f64::INFINITY
    };
    EnergyDeviationTerms {
        proportional_term: 2.0 * (noise.dxi * c_h).re,
        gradient_term: 2.0 * (noise.dxi * commutator).re,
        quadratic_term: quadratic,
        ke_relativistic_correction: -mean_t * mean_t / (2.0 * rest),
    }
}

/// Change of `<H>` under one stochastic update minus the three parts,
/// averaged over the antithetic pair `+-dxi` with `|dxi|^2 = dt`, which
/// removes the odd higher-order terms.
pub fn energy_closure_residual(
    model: &Model,
    psi: &WaveFunction,
    params: &CollapseParams,
    gamma: &GammaRecord,
    dt: f64,
    phase: f64,
) -> f64 {
    let h0 = crate::operators::observables(model, psi).mean_h;
    let mut total = 0.0;
    for sign in [1.0, -1.0] {
        let noise = NoiseIncrement::new(Complex64::from_polar(sign * dt.sqrt(), phase), dt);
        let terms = energy_deviation_terms(model, psi, params, gamma, &noise);
        let mut probe = psi.clone();
        crate::collapse::apply_stochastic(model, &mut probe, params, gamma, &noise);
        let h1 = crate::operators::observables(model, &probe).mean_h;
        total += (h1 - h0) - terms.proportional_term - terms.gradient_term - terms.quadratic_term;
    }
    0.5 * total
}

/// Fitted order of the closure residual over `dt, dt/2, dt/4`.
pub fn energy_closure_order(
    model: &Model,
    psi: &WaveFunction,
    params: &CollapseParams,
    gamma: &GammaRecord,
    dt: f64,
    phase: f64,
) -> (f64, [f64; 3]) {
    let r = [dt, 0.5 * dt, 0.25 * dt]
        .map(|h| energy_closure_residual(model, psi, params, gamma, h, phase).abs());
    let order = 0.5 * ((r[0] / r[1]).log2() + (r[1] / r[2]).log2());
    (order, r)
}

/// Sample mean of the weight at every checkpoint stays within three standard
/// errors of its starting value.
pub fn martingale_check(traces: &[Vec<f64>], mu0: f64) -> Result<AuditReport> {
    if traces.len() < 100 {
        return Err(Error::Audit(format!(
            "martingale check needs at least 100 traces, got {}",
            traces.len()
        )));
    }
    let len = traces[0].len();
    if traces.iter().any(|t| t.len() != len) {
        return Err(Error::Audit("traces have different lengths".into()));
    }
    let n = traces.len() as f64;
    let mut z = Vec::with_capacity(len);
    for k in 0..len {
        let mean = traces.iter().map(|t| t[k]).sum::<f64>() / n;
        let var = traces.iter().map(|t| (t[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let dev = (mean - mu0).abs();
        let floor = 1e-12 * mu0.abs().max(1.0);
        z.push(if se > floor {
            dev / se
        } else if dev <= floor {
            0.0
        } else {
            f64::INFINITY
        });
    }
    let mut report = AuditReport::default();
    report.push(AuditCheck::new(
        "martingale",
        z.iter().cloned().fold(0.0, f64::max),
        3.0,
    ));
    report.series.insert("martingale_z".into(), z);
    Ok(report)
}
