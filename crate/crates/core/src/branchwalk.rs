//! Reduced model: the interacting-branch weight as a bounded random walk.
//!
//! Each step moves the weight by
//! `d(mu2) = mu2 nu2 (kappa1 sqrt(gamma1) - kappa2 sqrt(gamma2)) (dxi + dxi*)`
//! where `nu2 = 1 - mu2` and both sites share one noise path. The real sum
//! `dxi + dxi*` is a normal increment of variance `2 dt`, drawn directly.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, substream, StreamRng};

/// Lane used for pulse jitter draws, kept apart from the noise path.
pub const JITTER_LANE: u64 = 1;

/// Fine-structure constant.
pub const FINE_STRUCTURE: f64 = 7.297_352_569_3e-3;

/// Band around one half used to diagnose frustrated walks.
pub const FRUSTRATION_BAND: (f64, f64) = (0.45, 0.55);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchState {
    /// Weight of the interacting branch.
    pub mu2: f64,
    pub t: f64,
}

impl BranchState {
    pub fn new(mu2: f64) -> Self {
        Self { mu2, t: 0.0 }
    }

    pub fn nu2(&self) -> f64 {
        1.0 - self.mu2
    }
}

/// Rectangular rate pulses of fixed area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseTrain {
    /// Pulse duration (time units).
    pub width: f64,
    /// Onset spacing (time units).
    pub period: f64,
    /// Onset of the first pulse (time units).
    #[serde(default)]
    pub first_onset: f64,
    /// Integral of the rate over one pulse (dimensionless).
    #[serde(default = "unit_area")]
    pub area: f64,
    /// Onset jitter, uniform in `+-onset_jitter * width`.
    #[serde(default)]
    pub onset_jitter: f64,
    /// Relative height jitter, uniform in `+-height_jitter`.
    #[serde(default)]
    pub height_jitter: f64,
}

fn unit_area() -> f64 {
    1.0
}

impl PulseTrain {
    pub fn new(width: f64, period: f64) -> Self {
        Self {
            width,
            period,
            first_onset: 0.0,
            area: 1.0,
            onset_jitter: 0.0,
            height_jitter: 0.0,
        }
    }

    pub fn with_jitter(mut self, onset: f64, height: f64) -> Self {
        self.onset_jitter = onset;
        self.height_jitter = height;
        self
    }

    pub fn peak(&self) -> f64 {
        self.area * (1.0 + self.height_jitter) / self.width
    }

    fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.period >= self.width && self.area > 0.0) {
            return Err(Error::Walk(format!(
                "pulses need width > 0, period >= width and area > 0 (got {}, {}, {})",
                self.width, self.period, self.area
            )));
        }
        if !(0.0..1.0).contains(&self.height_jitter) || self.onset_jitter < 0.0 {
            return Err(Error::Walk(
                "jitter must be non-negative and height jitter below 1".into(),
            ));
        }
        if 2.0 * self.onset_jitter * self.width > self.period - self.width + 1e-12 {
            return Err(Error::Walk(
                "onset jitter would let neighbouring pulses overlap".into(),
            ));
        }
        Ok(())
    }
}

/// How the per-step drive is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepRule {
    /// Every step multiplies the unit noise by `step`:
    /// `d(mu2) = mu2 nu2 step g` with `g` standard normal. Site 2 is idle.
    Constant { step: f64 },
    /// Both sites follow pulse trains with independent jitter draws.
    Pulses { train: PulseTrain },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkParams {
    /// Coupling at the site in the interacting branch (dimensionless).
    pub kappa1: f64,
    /// Coupling at the site in the other branch; 0 for a single detector.
    #[serde(default)]
    pub kappa2: f64,
    pub rule: StepRule,
    /// Time step (time units).
    pub dt: f64,
    pub max_steps: u64,
    /// Weights within this distance of 0 or 1 count as absorbed.
    #[serde(default = "default_eps")]
    pub termination_eps: f64,
    /// Spacing of recorded checkpoints in steps; 0 records none.
    #[serde(default)]
    pub trace_every: u64,
}

fn default_eps() -> f64 {
    1e-3
}

impl WalkParams {
    pub fn constant(step: f64, max_steps: u64) -> Self {
        Self {
            kappa1: 1.0,
            kappa2: 0.0,
            rule: StepRule::Constant { step },
            dt: 1.0,
            max_steps,
            termination_eps: default_eps(),
            trace_every: 0,
        }
    }

    pub fn pulses(kappa1: f64, kappa2: f64, train: PulseTrain, dt: f64, max_steps: u64) -> Self {
        Self {
            kappa1,
            kappa2,
            rule: StepRule::Pulses { train },
            dt,
            max_steps,
            termination_eps: default_eps(),
            trace_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.termination_eps > 0.0 && self.termination_eps <= 0.01) {
            return Err(Error::Walk(format!(
                "termination_eps must lie in (0, 0.01], got {}",
                self.termination_eps
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Walk(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.kappa1 >= 0.0 && self.kappa2 >= 0.0) {
            return Err(Error::Walk("couplings must be non-negative".into()));
        }
        match &self.rule {
            StepRule::Constant { step } => {
                if !(*step > 0.0 && *step < 1.0) {
                    return Err(Error::Walk(format!(
                        "constant step must lie in (0, 1), got {step}"
                    )));
                }
            }
            StepRule::Pulses { train } => {
                train.validate()?;
                if self.dt * train.peak() > 0.1 + 1e-12 {
                    return Err(Error::Walk(format!(
                        "dt * peak rate = {} exceeds 0.1",
                        self.dt * train.peak()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest multiplier of the unit noise in one step.
    pub fn peak_step(&self) -> f64 {
        match &self.rule {
            StepRule::Constant { step } => *step,
            StepRule::Pulses { train } => {
                self.kappa1.max(self.kappa2) * (train.peak() * 2.0 * self.dt).sqrt()
            }
        }
    }
}

/// One step of the reduced model. `drive` is `kappa1 sqrt(gamma1) -
/// kappa2 sqrt(gamma2)` and `real_sum` is `dxi + dxi*`. Values pushed past a
/// boundary are clamped onto it; the flag reports the clamp.
pub fn walk_step(state: BranchState, drive: f64, real_sum: f64, dt: f64) -> (BranchState, bool) {
    let mut mu2 = state.mu2 + state.mu2 * state.nu2() * drive * real_sum;
    let clamped = !(0.0..=1.0).contains(&mu2);
    mu2 = mu2.clamp(0.0, 1.0);
    (
        BranchState {
            mu2,
            t: state.t + dt,
        },
        clamped,
    )
}

/// Position in one site's pulse train.
#[derive(Debug, Clone)]
struct PulseCursor {
    index: u64,
    onset: f64,
    height: f64,
}

impl PulseCursor {
    fn new(train: &PulseTrain, rng: &mut StreamRng) -> Self {
        let mut c = Self {
            index: 0,
            onset: 0.0,
            height: 0.0,
        };
        c.draw(train, rng);
        c
    }

    fn draw(&mut self, train: &PulseTrain, rng: &mut StreamRng) {
        let nominal = train.first_onset + self.index as f64 * train.period;
        let shift = if train.onset_jitter > 0.0 {
            rng.random_range(-1.0..1.0) * train.onset_jitter * train.width
        } else {
            0.0
        };
        let scale = if train.height_jitter > 0.0 {
            1.0 + rng.random_range(-1.0..1.0) * train.height_jitter
        } else {
            1.0
        };
        self.onset = nominal + shift;
        self.height = train.area * scale / train.width;
    }

    fn rate(&mut self, train: &PulseTrain, t: f64, rng: &mut StreamRng) -> f64 {
        while t >= self.onset + train.width {
            self.index += 1;
            self.draw(train, rng);
        }
        if t >= self.onset {
            self.height
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Absorbed {
    Zero,
    One,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkOutcome {
    pub absorbed_at: Option<Absorbed>,
    pub steps: u64,
    pub final_mu2: f64,
    pub clamps: u64,
    /// Steps spent with the weight inside [`FRUSTRATION_BAND`].
    pub band_steps: u64,
    /// Weight at every `trace_every` steps, held after absorption.
    pub trace: Vec<f64>,
}

impl WalkOutcome {
    pub fn band_fraction(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.band_steps as f64 / self.steps as f64
        }
    }
}

fn absorbed(mu2: f64, eps: f64) -> Option<Absorbed> {
    if mu2 >= 1.0 - eps {
        Some(Absorbed::One)
    } else if mu2 <= eps {
        Some(Absorbed::Zero)
    } else {
        None
    }
}

/// Runs one walk. `noise` drives the weight; `jitter` draws pulse jitter.
pub fn run_walk(
    mu2: f64,
    params: &WalkParams,
    noise: &mut StreamRng,
    jitter: &mut StreamRng,
) -> Result<WalkOutcome> {
    params.validate()?;
    if !(0.0..=1.0).contains(&mu2) {
        return Err(Error::Walk(format!("initial weight {mu2} outside [0, 1]")));
    }
    let eps = params.termination_eps;
    let noise_scale = (2.0 * params.dt).sqrt();
    let mut state = BranchState::new(mu2);
    let mut out = WalkOutcome {
        absorbed_at: absorbed(mu2, eps),
        steps: 0,
        final_mu2: mu2,
        clamps: 0,
        band_steps: 0,
        trace: Vec::new(),
    };
    let checkpoints = params
        .max_steps
        .checked_div(params.trace_every)
        .map_or(0, |n| n + 1);
    if checkpoints > 0 {
        out.trace.reserve(checkpoints as usize);
        out.trace.push(mu2);
    }
    if out.absorbed_at.is_some() {
        out.trace.resize(checkpoints as usize, mu2);
        return Ok(out);
    }

    let mut cursors = match &params.rule {
        StepRule::Pulses { train } => {
            let a = PulseCursor::new(train, jitter);
            let b = PulseCursor::new(train, jitter);
            Some((a, b))
        }
        StepRule::Constant { .. } => None,
    };

    let (lo, hi) = FRUSTRATION_BAND;
    while out.steps < params.max_steps {
        let drive = match (&params.rule, cursors.as_mut()) {
            (StepRule::Constant { step }, _) => step / noise_scale,
            (StepRule::Pulses { train }, Some((a, b))) => {
                let g1 = a.rate(train, state.t, jitter);
                let g2 = b.rate(train, state.t, jitter);
                params.kappa1 * g1.sqrt() - params.kappa2 * g2.sqrt()
            }
            (StepRule::Pulses { .. }, None) => unreachable!(),
        };
        let g: f64 = noise.sample(StandardNormal);
        let (next, clamped) = walk_step(state, drive, g * noise_scale, params.dt);
        state = next;
        out.steps += 1;
        out.clamps += clamped as u64;
        if (lo..=hi).contains(&state.mu2) {
            out.band_steps += 1;
        }
        if params.trace_every > 0 && out.steps.is_multiple_of(params.trace_every) {
            out.trace.push(state.mu2);
        }
        if let Some(end) = absorbed(state.mu2, eps) {
            out.absorbed_at = Some(end);
            break;
        }
    }
    out.final_mu2 = state.mu2;
    out.trace.resize(checkpoints as usize, state.mu2);
    Ok(out)
}

/// Noise and jitter generators of walk `index`.
pub fn walk_streams(master: u64, index: u64) -> (StreamRng, StreamRng) {
    (stream(master, index), substream(master, index, JITTER_LANE))
}

/// Frequency of absorption at one over an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct BornEstimate {
    pub p0: f64,
    pub walks: u64,
    pub hits: u64,
    pub zeros: u64,
    pub undecided: u64,
    pub frequency: f64,
    /// Normal-approximation interval of three standard errors.
    pub ci: (f64, f64),
    /// Binomial standard deviation of the frequency under `p0`.
    pub sigma: f64,
    pub clamps: u64,
    pub mean_steps: f64,
    /// Mean fraction of steps spent in [`FRUSTRATION_BAND`].
    pub band_fraction: f64,
}

impl BornEstimate {
    pub fn from_outcomes(p0: f64, outcomes: &[WalkOutcome]) -> Self {
        let walks = outcomes.len() as u64;
        let count =
            |a: Option<Absorbed>| outcomes.iter().filter(|o| o.absorbed_at == a).count() as u64;
        let hits = count(Some(Absorbed::One));
        let zeros = count(Some(Absorbed::Zero));
        let n = walks.max(1) as f64;
        let frequency = hits as f64 / n;
        let se = (frequency * (1.0 - frequency) / n).sqrt();
        Self {
            p0,
            walks,
            hits,
            zeros,
            undecided: walks - hits - zeros,
            frequency,
            ci: (frequency - 3.0 * se, frequency + 3.0 * se),
            sigma: (p0 * (1.0 - p0) / n).sqrt(),
            clamps: outcomes.iter().map(|o| o.clamps).sum(),
            mean_steps: outcomes.iter().map(|o| o.steps as f64).sum::<f64>() / n,
            band_fraction: outcomes.iter().map(|o| o.band_fraction()).sum::<f64>() / n,
        }
    }

    /// True when the frequency lies within `k` binomial deviations of `p0`.
    pub fn within(&self, k: f64) -> bool {
        (self.frequency - self.p0).abs() <= k * self.sigma + 1e-15
    }
}

/// Runs `n` walks from `p0` on `workers` threads.
pub fn born_estimate(
    p0: f64,
    n: u64,
    params: &WalkParams,
    master: u64,
    workers: usize,
) -> Result<(BornEstimate, Vec<WalkOutcome>)> {
    if n < 100 {
        return Err(Error::Walk(format!(
            "a Born estimate needs at least 100 walks, got {n}"
        )));
    }
    params.validate()?;
    let outcomes = crate::ensemble::run_indexed(n, workers, |i| {
        let (mut noise, mut jitter) = walk_streams(master, i);
        run_walk(p0, params, &mut noise, &mut jitter)
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok((BornEstimate::from_outcomes(p0, &outcomes), outcomes))
}

/// Inputs of the order-of-magnitude estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleInput {
    /// Square of the fine-structure constant.
    ReferenceRatio,
    /// Ten times the reference ratio, the largest nonrelativistic ratio.
    MaxRatio,
    /// `hbar / (rest_energy delta_t)` in SI units (J, s, J s).
    Perturbation {
        rest_energy: f64,
        delta_t: f64,
        hbar: f64,
    },
    /// `ceil(1 / s^2)` steps for step size `s`.
    Steps { step: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleEstimate {
    pub name: &'static str,
    pub value: f64,
}

pub fn scale_estimates(input: ScaleInput) -> Result<ScaleEstimate> {
    let positive = |x: f64, what: &str| {
        if x > 0.0 && x.is_finite() {
            Ok(x)
        } else {
            Err(Error::Domain(format!("{what} must be positive, got {x}")))
        }
    };
    Ok(match input {
        ScaleInput::ReferenceRatio => ScaleEstimate {
            name: "reference_ratio",
            value: FINE_STRUCTURE * FINE_STRUCTURE,
        },
        ScaleInput::MaxRatio => ScaleEstimate {
            name: "max_ratio",
            value: 10.0 * FINE_STRUCTURE * FINE_STRUCTURE,
        },
        ScaleInput::Perturbation {
            rest_energy,
            delta_t,
            hbar,
        } => ScaleEstimate {
            name: "perturbation_ratio",
            value: positive(hbar, "hbar")?
                / (positive(rest_energy, "rest energy")? * positive(delta_t, "delta t")?),
        },
        ScaleInput::Steps { step } => ScaleEstimate {
            name: "steps",
            value: (1.0 / (positive(step, "step")?.powi(2))).ceil(),
        },
    })
}

/// Rounds to `digits` significant figures.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = 10f64.powi(digits - 1 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

/// `(delta/2) |1 - ln(delta/2)|` with the natural logarithm.
pub fn entanglement_estimate(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let h = 0.5 * delta;
    Ok(h * (1.0 - h.ln()).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn step_by_direct_substitution() {
        let (s, clamped) = walk_step(BranchState::new(0.5), 1.0, 0.01, 1e-3);
        assert!((s.mu2 - 0.5 - 2.5e-3).abs() < 1e-15);
        assert!(!clamped);
        let (s, _) = walk_step(BranchState::new(0.0), 3.0, 0.7, 1e-3);
        assert_eq!(s.mu2, 0.0);
        let (s, clamped) = walk_step(BranchState::new(0.9), 100.0, 1.0, 1e-3);
        assert_eq!(s.mu2, 1.0);
        assert!(clamped);
    }

    #[test]
    fn synchronized_sites_cancel_exactly() {
        let train = PulseTrain::new(1.0, 2.0);
        let mut p = WalkParams::pulses(0.3, 0.3, train, 0.05, 20_000);
        p.trace_every = 100;
        let (mut noise, mut jitter) = walk_streams(5, 0);
        let out = run_walk(0.5, &p, &mut noise, &mut jitter).unwrap();
        assert_eq!(out.absorbed_at, None);
        assert!(out.trace.iter().all(|&m| m == 0.5));
        assert_eq!(out.band_fraction(), 1.0);
    }

    #[test]
    fn already_absorbed_takes_no_steps() {
        let p = WalkParams::constant(1e-2, 1000);
        let (mut noise, mut jitter) = walk_streams(1, 0);
        let out = run_walk(1.0, &p, &mut noise, &mut jitter).unwrap();
        assert_eq!(out.absorbed_at, Some(Absorbed::One));
        assert_eq!(out.steps, 0);
        let (est, _) = born_estimate(1.0, 100, &p, 3, 1).unwrap();
        assert_eq!(est.frequency, 1.0);
        assert_eq!(est.mean_steps, 0.0);
    }

    #[test]
    fn symmetric_walk_is_fair() {
        let p = WalkParams::constant(0.2, 1_000_000);
        let (est, _) = born_estimate(0.5, 10_000, &p, 17, 2).unwrap();
        assert_eq!(est.undecided, 0);
        assert!(est.within(3.0), "{est:?}");
    }

    #[test]
    fn pulsed_walk_reproduces_initial_weight() {
        let p = WalkParams::pulses(0.5, 0.0, PulseTrain::new(1.0, 2.0), 0.1, 1_000_000);
        let (est, _) = born_estimate(0.3, 4000, &p, 23, 2).unwrap();
        assert_eq!(est.undecided, 0);
        assert!(est.within(3.0), "{est:?}");
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let mut p = WalkParams::constant(1e-2, 10);
        p.termination_eps = 0.05;
        assert!(p.validate().is_err());
        let p = WalkParams::pulses(1.0, 0.0, PulseTrain::new(1.0, 2.0), 0.2, 10);
        assert!(p.validate().is_err());
        let p = WalkParams::pulses(
            1.0,
            0.0,
            PulseTrain::new(1.0, 1.1).with_jitter(0.2, 0.0),
            0.05,
            10,
        );
        assert!(p.validate().is_err());
    }

    #[test]
    fn scale_estimate_arithmetic() {
        let a2 = scale_estimates(ScaleInput::ReferenceRatio).unwrap().value;
        assert_eq!(round_sig(a2, 3), 5.33e-5);
        let max = scale_estimates(ScaleInput::MaxRatio).unwrap().value;
        assert_eq!(round_sig(max, 1), 5e-4);
        let pert = scale_estimates(ScaleInput::Perturbation {
            rest_energy: 1e-13,
            delta_t: 1e-17,
            hbar: 1e-34,
        })
        .unwrap()
        .value;
        assert!((pert - 1e-4).abs() < 1e-16);
        assert_eq!(
            scale_estimates(ScaleInput::Steps { step: 5e-4 })
                .unwrap()
                .value,
            4e6
        );
        assert!(scale_estimates(ScaleInput::Steps { step: 0.0 }).is_err());
    }

    #[test]
    fn entanglement_values() {
        let v = entanglement_estimate(0.01).unwrap();
        assert!((v - 0.005 * (1.0 - 0.005f64.ln())).abs() < 1e-15);
        assert!((v - 0.0315).abs() < 5e-5);
        assert!(entanglement_estimate(1e-12).unwrap() < 1e-10);
        assert!(entanglement_estimate(0.0).is_err());
        assert!(entanglement_estimate(1.0).is_err());
        let mut prev = 0.0;
        for i in 1..=1000 {
            let v = entanglement_estimate(i as f64 * 1e-4).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn step_stays_in_unit_interval(mu2 in 0.0f64..=1.0, drive in -50.0f64..50.0, z in -1.0f64..1.0) {
            let (s, _) = walk_step(BranchState::new(mu2), drive, z, 1e-3);
            prop_assert!((0.0..=1.0).contains(&s.mu2));
        }

        #[test]
        fn equal_sites_never_move(mu2 in 0.0f64..=1.0, z in -1.0f64..1.0, k in 0.0f64..2.0, g in 0.0f64..10.0) {
            let drive = k * g.sqrt() - k * g.sqrt();
            let (s, _) = walk_step(BranchState::new(mu2), drive, z, 1e-3);
            prop_assert_eq!(s.mu2, mu2);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        /// Random pulse shapes and couplings keep the absorption frequency at the
        /// initial weight.
        #[test]
        fn absorption_matches_initial_weight(
            p0 in 0.15f64..0.85,
            kappa in 0.3f64..0.8,
            width in 0.5f64..2.0,
            gap in 0.0f64..1.0,
            jitter in 0.0f64..0.3,
            seed in 0u64..1000,
        ) {
            let train = PulseTrain::new(width, width * (1.0 + gap)).with_jitter(0.0, jitter);
            let dt = 0.1 * width / (1.0 + jitter);
            let p = WalkParams::pulses(kappa, 0.0, train, dt, 5_000_000);
            let (est, _) = born_estimate(p0, 1500, &p, seed, 1).unwrap();
            prop_assert_eq!(est.undecided, 0);
            prop_assert!(est.within(3.5), "{:?}", est);
        }
    }
}
