use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::table::{int, num};
use super::{merge_worst, stream_index, Emit, EnsembleBlock, Progress, RunOutput, Table};
use crate::audit::{density_change_decomposition, AuditCheck, AuditReport, Recording};
use crate::collapse::{CollapseParams, GammaRecord, SdeStepper};
use crate::ensemble::{run_indexed, Frequency, Tally, TrajectoryStats};
use crate::error::{Error, Result};
use crate::grid::{
    branch_weight, mix_branches, packet_pair, Grid, GridSpec, PacketPair, Region, WaveFunction,
};
use crate::operators::{stability_budget, Model, PotentialSpec};
use crate::rng::stream;

/// Repeated two-branch collisions. Each cycle prepares both branches afresh
/// with the current weights, evolves them for `cycle_time` and reads off the
/// new weight of the first branch (the part inside `split`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeBlock {
    pub branches: [PacketPair; 2],
    /// Region holding the first branch; its label names that outcome.
    pub split: Region,
    /// Duration of one cycle (time units).
    pub cycle_time: f64,
    pub max_cycles: u32,
    /// Weights within this distance of 0 or 1 end the trajectory.
    pub termination_eps: f64,
    /// Time step (time units); defaults to the stability budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// When set, audits require the weight never to move further than this
    /// from its initial value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_tolerance: Option<f64>,
}

/// Largest weight allowed outside a branch's own side of the split.
const LEAKAGE: f64 = 1e-6;

pub(super) struct Cascade {
    stepper: SdeStepper,
    first: WaveFunction,
    second: WaveFunction,
    mask: Vec<bool>,
    block: CascadeBlock,
    ensemble: EnsembleBlock,
    steps_per_cycle: usize,
}

pub(super) fn prepare(
    grid: &GridSpec,
    potential: &PotentialSpec,
    collapse: &CollapseParams,
    ensemble: &EnsembleBlock,
    block: &CascadeBlock,
) -> Result<Cascade> {
    ensemble.validate(1)?;
    let grid = Grid::new(grid.clone())?;
    let model = Model::new(grid.clone(), potential.clone())?;
    let dt = block
        .dt
        .unwrap_or_else(|| stability_budget(&grid, potential.depth));
    let stepper = SdeStepper::new(model, collapse.clone(), dt)?;
    if !(block.cycle_time >= dt && block.cycle_time.is_finite()) {
        return Err(Error::Config(format!(
            "cascade.cycle_time {} must be at least one step ({dt})",
            block.cycle_time
        )));
    }
    if block.max_cycles == 0 {
        return Err(Error::Config(
            "cascade.max_cycles must be at least 1".into(),
        ));
    }
    if !(block.termination_eps > 0.0 && block.termination_eps < 0.5) {
        return Err(Error::Config(
            "cascade.termination_eps must lie in (0, 0.5)".into(),
        ));
    }
    if block.frozen_tolerance.is_some_and(|t| !(t > 0.0)) {
        return Err(Error::Config(
            "cascade.frozen_tolerance must be positive".into(),
        ));
    }
    block.split.validate(&grid)?;
    let first = packet_pair(&grid, &block.branches[0])?;
    let second = packet_pair(&grid, &block.branches[1])?;
    let (w1, w2) = (
        branch_weight(&first, &block.split),
        branch_weight(&second, &block.split),
    );
    if w1 < 1.0 - LEAKAGE || w2 > LEAKAGE {
        return Err(Error::Config(format!(
            "branches must lie on their own sides of the split (weights inside: {w1}, {w2})"
        )));
    }
    Ok(Cascade {
        mask: block.split.mask(&grid),
        steps_per_cycle: (block.cycle_time / dt).round() as usize,
        stepper,
        first,
        second,
        block: block.clone(),
        ensemble: ensemble.clone(),
    })
}

struct CascadeRun {
    stats: TrajectoryStats,
    cycles: u32,
    final_weight: f64,
    max_drift: f64,
    weights: Vec<f64>,
    gamma: Vec<GammaRecord>,
}

impl Cascade {
    fn prepared(&self, w: f64) -> WaveFunction {
        mix_branches(&self.first, &self.second, &self.mask, [w, 1.0 - w])
    }

    fn labels(&self) -> [String; 2] {
        [
            self.block.split.label.clone(),
            self.block.split.complement().label,
        ]
    }

    fn trajectory(
        &self,
        seed: u64,
        index: u64,
        label: u64,
        p0: f64,
        keep_gamma: bool,
    ) -> CascadeRun {
        let started = Instant::now();
        let mut rng = stream(seed, index);
        let eps = self.block.termination_eps;
        let mut stats = TrajectoryStats::new(label, seed);
        let mut run = CascadeRun {
            stats: TrajectoryStats::new(label, seed),
            cycles: 0,
            final_weight: p0,
            max_drift: 0.0,
            weights: vec![p0],
            gamma: Vec::new(),
        };
        let mut w = p0;
        while run.cycles < self.block.max_cycles && w > eps && w < 1.0 - eps {
            let mut psi = self.prepared(w);
            for _ in 0..self.steps_per_cycle {
                match self.stepper.step(&mut psi, &mut rng) {
                    Ok(r) => {
                        if keep_gamma {
                            run.gamma.push(r.gamma);
                        }
                    }
                    Err(e) => {
                        stats.failure = Some(e.to_string());
                        break;
                    }
                }
                stats.steps += 1;
            }
            if stats.failure.is_some() {
                break;
            }
            w = branch_weight(&psi, &self.block.split);
            run.cycles += 1;
            run.max_drift = run.max_drift.max((w - p0).abs());
            run.weights.push(w);
        }
        let [inside, outside] = self.labels();
        if stats.failure.is_none() {
            stats.outcome = if w >= 1.0 - eps {
                Some(inside)
            } else if w <= eps {
                Some(outside)
            } else {
                None
            };
        }
        stats.wall_time = started.elapsed();
        run.final_weight = w;
        run.stats = stats;
        run
    }

    fn audits(&self, seed: u64, runs: &[Vec<CascadeRun>]) -> Result<AuditReport> {
        let p0 = self.ensemble.initial_weights[0];
        let (rec, _) = Recording::record(
            self.stepper.clone(),
            self.prepared(p0),
            self.steps_per_cycle,
            &mut stream(seed, stream_index(0, 0)),
        )?;
        let mut report = AuditReport::default();
        rec.replay(|s| {
            let step = density_change_decomposition(
                &rec.stepper,
                s.before,
                s.after,
                s.record,
                Some(&self.block.split),
            )?;
            merge_worst(&mut report, step);
            Ok(())
        })?;
        if let Some(tol) = self.block.frozen_tolerance {
            let drift = runs
                .iter()
                .flatten()
                .map(|r| r.max_drift)
                .fold(0.0, f64::max);
            report.push(AuditCheck::new("frozen_weight", drift, tol));
        }
        Ok(report)
    }

    pub(super) fn run(
        &self,
        seed: u64,
        emit: Emit,
        workers: usize,
        progress: Progress<'_>,
    ) -> Result<RunOutput> {
        let n = self.ensemble.trajectories;
        let dt = self.stepper.dt();
        let [inside, outside] = self.labels();
        let mut all = Vec::with_capacity(self.ensemble.initial_weights.len());
        for (group, &p0) in self.ensemble.initial_weights.iter().enumerate() {
            progress(&format!(
                "cascade from weight {p0}: {n} trajectories of up to {} cycles x {} steps",
                self.block.max_cycles, self.steps_per_cycle
            ));
            let runs = run_indexed(n, workers, |i| {
                let r = self.trajectory(
                    seed,
                    stream_index(group, i),
                    i,
                    p0,
                    emit.gamma && group == 0 && i == 0,
                );
                progress(&format!(
                    "  trajectory {i}: {} after {} cycles",
                    r.stats.outcome.as_deref().unwrap_or("undecided"),
                    r.cycles
                ));
                r
            })?;
            all.push(runs);
        }

        let mut outcomes = Table::new(&[
            "initial_weight",
            "trajectory",
            "outcome",
            "cycles",
            "steps",
            "final_weight",
            "max_drift",
            "failure",
        ]);
        let mut summary = Table::new(&[
            "initial_weight",
            "measured_initial_weight",
            "trajectories",
            "outcome",
            "hits",
            "other",
            "undecided",
            "failures",
            "frequency",
            "std_error",
            "sigma_at_initial",
            "within_3sigma",
            "mean_cycles",
        ]);
        let mut traces = Table::new(&["initial_weight", "trajectory", "cycle", "weight"]);
        for (runs, &p0) in all.iter().zip(&self.ensemble.initial_weights) {
            for r in runs {
                outcomes.row(&[
                    num(p0),
                    int(r.stats.index),
                    r.stats
                        .outcome
                        .clone()
                        .unwrap_or_else(|| "undecided".into()),
                    int(r.cycles),
                    int(r.stats.steps),
                    num(r.final_weight),
                    num(r.max_drift),
                    r.stats.failure.clone().unwrap_or_default(),
                ]);
                for (c, w) in r.weights.iter().enumerate() {
                    traces.row(&[num(p0), int(r.stats.index), int(c as u64), num(*w)]);
                }
            }
            let tally = runs
                .iter()
                .map(|r| Tally::of(&r.stats))
                .fold(Tally::default(), Tally::merge);
            let measured = branch_weight(&self.prepared(p0), &self.block.split);
            let f: Frequency = tally.frequency(&inside);
            summary.row(&[
                num(p0),
                num(measured),
                int(tally.trajectories),
                inside.clone(),
                int(f.hits),
                int(tally.count(&outside)),
                int(tally.undecided),
                int(tally.failures),
                num(f.value),
                num(f.std_error),
                num((measured * (1.0 - measured) / tally.trajectories as f64).sqrt()),
                f.consistent_with(measured, 3.0).to_string(),
                num(runs.iter().map(|r| r.cycles as f64).sum::<f64>() / runs.len() as f64),
            ]);
        }

        let mut out = RunOutput::default();
        out.add("outcomes.tsv", outcomes);
        out.add("summary.tsv", summary);
        if emit.traces {
            out.add("traces.tsv", traces);
        }
        if emit.gamma {
            out.add(
                "gamma.tsv",
                gamma_table(&all[0][0].gamma, self.steps_per_cycle, dt),
            );
        }
        if emit.audits {
            progress("auditing the first cycle of trajectory 0");
            out.set_audits(self.audits(seed, &all)?);
        }
        Ok(out)
    }
}

fn gamma_table(records: &[GammaRecord], steps_per_cycle: usize, dt: f64) -> Table {
    let mut t = Table::new(&[
        "cycle",
        "step",
        "t",
        "gamma",
        "numerator",
        "denominator",
        "mean_v",
        "active",
    ]);
    for (i, g) in records.iter().enumerate() {
        let (cycle, step) = (i / steps_per_cycle, i % steps_per_cycle);
        t.row(&[
            int(cycle as u64),
            int(step as u64),
            num((step + 1) as f64 * dt),
            num(g.gamma),
            num(g.numerator),
            num(g.denominator),
            num(g.mean_v),
            g.active.to_string(),
        ]);
    }
    t
}
