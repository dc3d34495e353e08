use serde::{Deserialize, Serialize};

use super::table::{int, num};
use super::{merge_worst, Emit, Progress, RunOutput, Table};
use crate::audit::{
    conservation_report, density_change_decomposition, energy_closure_order,
    energy_deviation_terms, AuditCheck, AuditReport, Quantity, Recording,
};
use crate::collapse::{CollapseParams, SdeStepper, StepRecord};
use crate::ensemble::run_indexed;
use crate::error::{Error, Result};
use crate::grid::{init_on_grid, Grid, GridSpec, Preset, WaveFunction};
use crate::operators::{observables, stability_budget, Model, PotentialSpec};
use crate::rng::stream;

/// Conserved totals audited along a probe run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conserved {
    Px,
    Py,
    Lz,
}

impl Conserved {
    pub fn quantity(self) -> Quantity {
        match self {
            Conserved::Px => Quantity::Momentum(0),
            Conserved::Py => Quantity::Momentum(1),
            Conserved::Lz => Quantity::AngularMomentum,
        }
    }
}

/// One recorded trajectory from a prepared state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeBlock {
    pub initial: Preset,
    /// Length of the run (time units).
    pub duration: f64,
    /// Time step (time units); defaults to the stability budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Totals audited when audits are emitted. The initial state must carry
    /// the same value of each everywhere.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conserved: Vec<Conserved>,
}

/// Energy-deviation parts replayed on one noise path at several couplings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Couplings of the sweep (dimensionless); the noise path is recorded at
    /// the first.
    pub kappas: Vec<f64>,
    /// Coupling used for the closure probes (dimensionless).
    pub closure_kappa: f64,
    /// Number of recorded states probed for closure.
    pub closure_probes: usize,
    /// Phase of the probe increments (radians).
    #[serde(default = "default_phase")]
    pub closure_phase: f64,
}

fn default_phase() -> f64 {
    0.3
}

/// Slope tolerances of the sweep and the smallest accepted closure order.
pub const GRADIENT_SLOPE: (f64, f64) = (1.0, 0.2);
pub const QUADRATIC_SLOPE: (f64, f64) = (2.0, 0.3);
pub const MIN_CLOSURE_ORDER: f64 = 1.8;

struct Setup {
    stepper: SdeStepper,
    initial: WaveFunction,
    steps: usize,
}

fn setup(
    grid: &GridSpec,
    potential: &PotentialSpec,
    collapse: CollapseParams,
    probe: &ProbeBlock,
) -> Result<Setup> {
    let grid = Grid::new(grid.clone())?;
    let model = Model::new(grid.clone(), potential.clone())?;
    let dt = probe
        .dt
        .unwrap_or_else(|| stability_budget(&grid, potential.depth));
    let stepper = SdeStepper::new(model, collapse, dt)?;
    if !(probe.duration >= dt && probe.duration.is_finite()) {
        return Err(Error::Config(format!(
            "probe.duration {} must be at least one step ({dt})",
            probe.duration
        )));
    }
    let initial = init_on_grid(&grid, &probe.initial)?;
    Ok(Setup {
        stepper,
        initial,
        steps: (probe.duration / dt).round() as usize,
    })
}

pub(super) struct Probe {
    setup: Setup,
    conserved: Vec<Quantity>,
}

pub(super) fn prepare_probe(
    grid: &GridSpec,
    potential: &PotentialSpec,
    collapse: &CollapseParams,
    probe: &ProbeBlock,
) -> Result<Probe> {
    let setup = setup(grid, potential, collapse.clone(), probe)?;
    let dims = setup.stepper.model().grid.dims();
    for c in &probe.conserved {
        if matches!(c, Conserved::Py | Conserved::Lz) && dims < 2 {
            return Err(Error::Config(format!(
                "{c:?} needs two dimensions per particle"
            )));
        }
    }
    Ok(Probe {
        setup,
        conserved: probe.conserved.iter().map(|c| c.quantity()).collect(),
    })
}

fn gamma_table(records: &[StepRecord], dt: f64) -> Table {
    let mut t = Table::new(&[
        "step",
        "t",
        "gamma",
        "numerator",
        "denominator",
        "mean_v",
        "u_com",
        "active",
    ]);
    for (i, r) in records.iter().enumerate() {
        let g = &r.gamma;
        t.row(&[
            int(i as u64),
            num((i + 1) as f64 * dt),
            num(g.gamma),
            num(g.numerator),
            num(g.denominator),
            num(g.mean_v),
            num(g.u_com.first().copied().unwrap_or(0.0)),
            g.active.to_string(),
        ]);
    }
    t
}

fn key_value(rows: &[(&str, String)]) -> Table {
    let mut t = Table::new(&["quantity", "value"]);
    for (k, v) in rows {
        t.row(&[k.to_string(), v.clone()]);
    }
    t
}

impl Probe {
    pub(super) fn run(&self, seed: u64, emit: Emit, progress: Progress<'_>) -> Result<RunOutput> {
        let s = &self.setup;
        let dt = s.stepper.dt();
        progress(&format!("recording {} steps of {dt}", s.steps));
        let (rec, records) = Recording::record(
            s.stepper.clone(),
            s.initial.clone(),
            s.steps,
            &mut stream(seed, 0),
        )?;
        let integral: f64 = records.iter().map(|r| r.gamma.gamma).sum::<f64>() * dt;
        let peak = records.iter().map(|r| r.gamma.gamma).fold(0.0, f64::max);

        let model = rec.stepper.model().clone();
        let params = rec.stepper.params().clone();
        let mut labels: Vec<String> = vec![
            "t".into(),
            "mean_h".into(),
            "mean_v".into(),
            "norm_excess".into(),
        ];
        labels.extend(self.conserved.iter().map(|q| format!("mean_{}", q.label())));
        let header: Vec<&str> = labels.iter().map(String::as_str).collect();
        let mut traces = Table::new(&header);
        let mut decomposition = AuditReport::default();
        let (mut signed, mut magnitude, mut quadratic) = (0.0, 0.0, 0.0);
        progress("replaying for energy terms");
        rec.replay(|step| {
            let terms = energy_deviation_terms(
                &model,
                step.unitary,
                &params,
                &step.record.gamma,
                &step.record.noise,
            );
            signed += terms.gradient_term;
            magnitude += terms.gradient_term.abs();
            quadratic += terms.quadratic_term;
            if emit.traces {
                let obs = observables(&model, step.after);
                let mut row = vec![
                    num((step.index + 1) as f64 * dt),
                    num(obs.mean_h),
                    num(obs.mean_v),
                    num(step.record.norm_excess),
                ];
                row.extend(
                    self.conserved
                        .iter()
                        .map(|q| num(q.mean(&model.grid, step.after))),
                );
                traces.row(&row);
            }
            if emit.audits {
                let r = density_change_decomposition(
                    &rec.stepper,
                    step.before,
                    step.after,
                    step.record,
                    None,
                )?;
                merge_worst(&mut decomposition, r);
            }
            Ok(())
        })?;

        let mut out = RunOutput::default();
        out.add(
            "summary.tsv",
            key_value(&[
                ("steps", int(s.steps as u64)),
                ("dt", num(dt)),
                ("integral_gamma", num(integral)),
                ("max_gamma", num(peak)),
                ("signed_gradient_term", num(signed)),
                ("abs_gradient_term", num(magnitude)),
                ("quadratic_term", num(quadratic)),
            ]),
        );
        if emit.gamma {
            out.add("gamma.tsv", gamma_table(&records, dt));
        }
        if emit.traces {
            out.add("traces.tsv", traces);
        }
        if emit.audits {
            let mut report = decomposition;
            for q in &self.conserved {
                progress(&format!("auditing {}", q.label()));
                let mut r = conservation_report(&rec, *q)?;
                r.series.clear();
                report.extend(r);
            }
            out.set_audits(report);
        }
        Ok(out)
    }
}

pub(super) struct Sweep {
    setup: Setup,
    block: SweepBlock,
}

pub(super) fn prepare_sweep(
    grid: &GridSpec,
    potential: &PotentialSpec,
    probe: &ProbeBlock,
    block: &SweepBlock,
) -> Result<Sweep> {
    if !probe.conserved.is_empty() {
        return Err(Error::Config(
            "probe.conserved is not used by a sweep".into(),
        ));
    }
    if block.kappas.len() < 2 || block.kappas.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
        return Err(Error::Config(
            "sweep.kappas needs at least two positive couplings".into(),
        ));
    }
    let mut sorted = block.kappas.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("sweep.kappas must be distinct".into()));
    }
    if !(block.closure_kappa > 0.0) || block.closure_probes == 0 {
        return Err(Error::Config(
            "sweep needs closure_kappa > 0 and closure_probes >= 1".into(),
        ));
    }
    for k in block.kappas.iter().chain([&block.closure_kappa]) {
        CollapseParams::from_kappa(*k).validate()?;
    }
    Ok(Sweep {
        setup: setup(
            grid,
            potential,
            CollapseParams::from_kappa(block.kappas[0]),
            probe,
        )?,
        block: block.clone(),
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

impl Sweep {
    pub(super) fn run(
        &self,
        seed: u64,
        emit: Emit,
        workers: usize,
        progress: Progress<'_>,
    ) -> Result<RunOutput> {
        let s = &self.setup;
        let dt = s.stepper.dt();
        progress(&format!("recording {} steps of {dt}", s.steps));
        let (rec, _) = Recording::record(
            s.stepper.clone(),
            s.initial.clone(),
            s.steps,
            &mut stream(seed, 0),
        )?;

        let kappas = &self.block.kappas;
        let sums = run_indexed(kappas.len() as u64, workers, |i| -> Result<[f64; 3]> {
            let kappa = kappas[i as usize];
            let replay = rec.with_params(CollapseParams::from_kappa(kappa))?;
            let model = replay.stepper.model().clone();
            let params = replay.stepper.params().clone();
            let mut sums = [0.0; 3];
            replay.replay(|step| {
                let t = energy_deviation_terms(
                    &model,
                    step.unitary,
                    &params,
                    &step.record.gamma,
                    &step.record.noise,
                );
                sums[0] += t.gradient_term.abs();
                sums[1] += t.quadratic_term;
                sums[2] += t.gradient_term;
                Ok(())
            })?;
            progress(&format!("kappa {kappa} replayed"));
            Ok(sums)
        })?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let mut sweep = Table::new(&[
            "kappa",
            "abs_gradient_term",
            "quadratic_term",
            "signed_gradient_term",
        ]);
        for (k, v) in kappas.iter().zip(&sums) {
            sweep.row(&[num(*k), num(v[0]), num(v[1]), num(v[2])]);
        }
        let gradient_slope = log_log_slope(kappas, &sums.iter().map(|v| v[0]).collect::<Vec<_>>());
        let quadratic_slope = log_log_slope(kappas, &sums.iter().map(|v| v[1]).collect::<Vec<_>>());

        let closure_rec = rec.with_params(CollapseParams::from_kappa(self.block.closure_kappa))?;
        let mut gammas = Vec::with_capacity(s.steps);
        closure_rec.replay(|step| {
            gammas.push(step.record.gamma.gamma);
            Ok(())
        })?;
        let chosen = probe_steps(&gammas, self.block.closure_probes);
        let model = closure_rec.stepper.model().clone();
        let params = closure_rec.stepper.params().clone();
        let mut closure = Table::new(&[
            "step",
            "t",
            "gamma",
            "order",
            "residual_dt",
            "residual_half",
            "residual_quarter",
        ]);
        let mut min_order = f64::INFINITY;
        progress(&format!("closure probes at steps {chosen:?}"));
        closure_rec.replay(|step| {
            if chosen.contains(&step.index) {
                let (order, r) = energy_closure_order(
                    &model,
                    step.unitary,
                    &params,
                    &step.record.gamma,
                    dt,
                    self.block.closure_phase,
                );
                min_order = min_order.min(order);
                closure.row(&[
                    int(step.index as u64),
                    num((step.index + 1) as f64 * dt),
                    num(step.record.gamma.gamma),
                    num(order),
                    num(r[0]),
                    num(r[1]),
                    num(r[2]),
                ]);
            }
            Ok(())
        })?;

        let mut out = RunOutput::default();
        out.add("sweep.tsv", sweep);
        out.add("closure.tsv", closure);
        out.add(
            "summary.tsv",
            key_value(&[
                ("steps", int(s.steps as u64)),
                ("dt", num(dt)),
                ("gradient_slope", num(gradient_slope)),
                ("quadratic_slope", num(quadratic_slope)),
                ("min_closure_order", num(min_order)),
            ]),
        );
        if emit.audits {
            let mut report = AuditReport::default();
            report.push(AuditCheck::new(
                "gradient_slope",
                (gradient_slope - GRADIENT_SLOPE.0).abs(),
                GRADIENT_SLOPE.1,
            ));
            report.push(AuditCheck::new(
                "quadratic_slope",
                (quadratic_slope - QUADRATIC_SLOPE.0).abs(),
                QUADRATIC_SLOPE.1,
            ));
            report.push(AuditCheck::new(
                "closure_order_shortfall",
                if min_order.is_finite() {
                    (2.0 - min_order).max(0.0)
                } else {
                    f64::INFINITY
                },
                2.0 - MIN_CLOSURE_ORDER,
            ));
            out.set_audits(report);
        }
        Ok(out)
    }
}

/// `n` steps spread evenly over the steps whose rate is at least a tenth of
/// the peak.
fn probe_steps(gammas: &[f64], n: usize) -> Vec<usize> {
    let peak = gammas.iter().cloned().fold(0.0, f64::max);
    let active: Vec<usize> = (0..gammas.len())
        .filter(|&i| peak > 0.0 && gammas[i] >= 0.1 * peak)
        .collect();
    if active.is_empty() {
        return Vec::new();
    }
    let mut chosen: Vec<usize> = (0..n)
        .map(|k| active[((2 * k + 1) * active.len()) / (2 * n)])
        .collect();
    chosen.dedup();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((log_log_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn probes_fall_on_active_steps() {
        let g = [0.0, 0.0, 1.0, 2.0, 3.0, 0.05, 0.0];
        let p = probe_steps(&g, 3);
        assert_eq!(p, vec![2, 3, 4]);
        assert!(probe_steps(&[0.0; 4], 2).is_empty());
    }
}
