use super::table::{int, num};
use super::{stream_index, Emit, EnsembleBlock, Progress, RunOutput, Table};
use crate::audit::{martingale_check, AuditReport};
use crate::branchwalk::{run_walk, walk_streams, Absorbed, BornEstimate, WalkOutcome, WalkParams};
use crate::ensemble::run_indexed;
use crate::error::{Error, Result};

pub(super) struct Reduced {
    walk: WalkParams,
    ensemble: EnsembleBlock,
}

pub(super) fn prepare(walk: &WalkParams, ensemble: &EnsembleBlock, emit: Emit) -> Result<Reduced> {
    walk.validate()?;
    ensemble.validate(1)?;
    if emit.audits {
        if walk.trace_every == 0 {
            return Err(Error::Config(
                "martingale audit needs walk.trace_every > 0".into(),
            ));
        }
        if ensemble.trajectories < 100 {
            return Err(Error::Config(
                "martingale audit needs at least 100 trajectories".into(),
            ));
        }
    }
    if emit.traces && walk.trace_every == 0 {
        return Err(Error::Config("traces need walk.trace_every > 0".into()));
    }
    Ok(Reduced {
        walk: walk.clone(),
        ensemble: ensemble.clone(),
    })
}

fn label(o: &WalkOutcome) -> &'static str {
    match o.absorbed_at {
        Some(Absorbed::One) => "one",
        Some(Absorbed::Zero) => "zero",
        None => "undecided",
    }
}

impl Reduced {
    pub(super) fn run(
        &self,
        seed: u64,
        emit: Emit,
        workers: usize,
        progress: Progress<'_>,
    ) -> Result<RunOutput> {
        let n = self.ensemble.trajectories;
        let mut outcomes_table = Table::new(&[
            "initial_weight",
            "trajectory",
            "outcome",
            "steps",
            "final_weight",
            "clamps",
            "band_fraction",
        ]);
        let mut summary = Table::new(&[
            "initial_weight",
            "walks",
            "hits",
            "zeros",
            "undecided",
            "frequency",
            "ci_low",
            "ci_high",
            "sigma",
            "within_3sigma",
            "mean_steps",
            "band_fraction",
            "clamps",
        ]);
        let mut traces = Table::new(&[
            "initial_weight",
            "checkpoint",
            "step",
            "mean_weight",
            "std_error",
        ]);
        let mut audits = AuditReport::default();

        for (group, &p0) in self.ensemble.initial_weights.iter().enumerate() {
            progress(&format!("walks from weight {p0}: {n} trajectories"));
            let outcomes = run_indexed(n, workers, |i| {
                let (mut noise, mut jitter) = walk_streams(seed, stream_index(group, i));
                run_walk(p0, &self.walk, &mut noise, &mut jitter)
            })?
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            for (i, o) in outcomes.iter().enumerate() {
                outcomes_table.row(&[
                    num(p0),
                    int(i as u64),
                    label(o).into(),
                    int(o.steps),
                    num(o.final_mu2),
                    int(o.clamps),
                    num(o.band_fraction()),
                ]);
            }
            let est = BornEstimate::from_outcomes(p0, &outcomes);
            summary.row(&[
                num(p0),
                int(est.walks),
                int(est.hits),
                int(est.zeros),
                int(est.undecided),
                num(est.frequency),
                num(est.ci.0),
                num(est.ci.1),
                num(est.sigma),
                est.within(3.0).to_string(),
                num(est.mean_steps),
                num(est.band_fraction),
                int(est.clamps),
            ]);
            progress(&format!(
                "weight {p0}: frequency {:.4} ({} hits, {} undecided)",
                est.frequency, est.hits, est.undecided
            ));

            let sampled: Vec<Vec<f64>> = outcomes.into_iter().map(|o| o.trace).collect();
            if emit.traces {
                let m = sampled.len() as f64;
                for k in 0..sampled[0].len() {
                    let mean = sampled.iter().map(|t| t[k]).sum::<f64>() / m;
                    let var = sampled.iter().map(|t| (t[k] - mean).powi(2)).sum::<f64>()
                        / (m - 1.0).max(1.0);
                    traces.row(&[
                        num(p0),
                        int(k as u64),
                        int(k as u64 * self.walk.trace_every),
                        num(mean),
                        num((var / m).sqrt()),
                    ]);
                }
            }
            if emit.audits {
                let mut report = martingale_check(&sampled, p0)?;
                for c in &mut report.checks {
                    c.name = format!("{}_w{p0}", c.name);
                }
                report.series.clear();
                audits.extend(report);
            }
        }

        let mut out = RunOutput::default();
        out.add("outcomes.tsv", outcomes_table);
        out.add("summary.tsv", summary);
        if emit.traces {
            out.add("traces.tsv", traces);
        }
        if emit.audits {
            out.set_audits(audits);
        }
        Ok(out)
    }
}
