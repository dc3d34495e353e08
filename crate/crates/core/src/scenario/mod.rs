//! Scenario configuration files, built-in presets and runners.
//!
//! A configuration names one scenario and carries only the sections that
//! scenario reads; unknown keys and unused sections are rejected before any
//! computation starts. Runners return their data files in memory so callers
//! decide where (and whether) to write them. Nothing written depends on the
//! worker count or on wall time.

mod cascade;
mod entanglement;
mod probe;
mod reduced;
mod table;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::AuditReport;
use crate::branchwalk::WalkParams;
use crate::collapse::{CollapseParams, PHYSICAL_KAPPA_MAX};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::operators::PotentialSpec;

pub use cascade::CascadeBlock;
pub use entanglement::{exact_entropy, mirror_delta, EntanglementBlock};
pub use probe::{Conserved, ProbeBlock, SweepBlock};
pub use table::{num, Table};

/// Version written into every manifest.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Name of the manifest file in an output directory.
pub const MANIFEST: &str = "manifest.toml";

/// Progress sink; called with one line at a time, possibly from workers.
pub type Progress<'a> = &'a (dyn Fn(&str) + Sync);

/// Progress sink that drops everything.
pub fn silent(_: &str) {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    SingleDetectorGrid,
    DualDetectorGrid,
    SingleDetectorReduced,
    DualDetectorReduced,
    ScatteringGammaProbe,
    #[serde(rename = "conservation_2d")]
    Conservation2d,
    EnergyDeviationSweep,
    BeamSplitterEntanglement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Reduced,
    Cascade,
    Probe,
    Sweep,
    Entanglement,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        ScenarioKind::SingleDetectorGrid,
        ScenarioKind::DualDetectorGrid,
        ScenarioKind::SingleDetectorReduced,
        ScenarioKind::DualDetectorReduced,
        ScenarioKind::ScatteringGammaProbe,
        ScenarioKind::Conservation2d,
        ScenarioKind::EnergyDeviationSweep,
        ScenarioKind::BeamSplitterEntanglement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::SingleDetectorGrid => "single_detector_grid",
            ScenarioKind::DualDetectorGrid => "dual_detector_grid",
            ScenarioKind::SingleDetectorReduced => "single_detector_reduced",
            ScenarioKind::DualDetectorReduced => "dual_detector_reduced",
            ScenarioKind::ScatteringGammaProbe => "scattering_gamma_probe",
            ScenarioKind::Conservation2d => "conservation_2d",
            ScenarioKind::EnergyDeviationSweep => "energy_deviation_sweep",
            ScenarioKind::BeamSplitterEntanglement => "beam_splitter_entanglement",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Documented configuration template with unit comments.
    pub fn template(self) -> &'static str {
        match self {
            ScenarioKind::SingleDetectorGrid => {
                include_str!("../../presets/single_detector_grid.toml")
            }
            ScenarioKind::DualDetectorGrid => include_str!("../../presets/dual_detector_grid.toml"),
            ScenarioKind::SingleDetectorReduced => {
                include_str!("../../presets/single_detector_reduced.toml")
            }
            ScenarioKind::DualDetectorReduced => {
                include_str!("../../presets/dual_detector_reduced.toml")
            }
            ScenarioKind::ScatteringGammaProbe => {
                include_str!("../../presets/scattering_gamma_probe.toml")
            }
            ScenarioKind::Conservation2d => include_str!("../../presets/conservation_2d.toml"),
            ScenarioKind::EnergyDeviationSweep => {
                include_str!("../../presets/energy_deviation_sweep.toml")
            }
            ScenarioKind::BeamSplitterEntanglement => {
                include_str!("../../presets/beam_splitter_entanglement.toml")
            }
        }
    }

    /// Parsed template.
    pub fn preset(self) -> ScenarioConfig {
        load_config(self.template()).expect("built-in presets parse")
    }

    fn family(self) -> Family {
        match self {
            ScenarioKind::SingleDetectorReduced | ScenarioKind::DualDetectorReduced => {
                Family::Reduced
            }
            ScenarioKind::SingleDetectorGrid | ScenarioKind::DualDetectorGrid => Family::Cascade,
            ScenarioKind::ScatteringGammaProbe | ScenarioKind::Conservation2d => Family::Probe,
            ScenarioKind::EnergyDeviationSweep => Family::Sweep,
            ScenarioKind::BeamSplitterEntanglement => Family::Entanglement,
        }
    }
}

/// Which optional outputs to produce.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Emit {
    #[serde(default)]
    pub traces: bool,
    #[serde(default)]
    pub gamma: bool,
    #[serde(default)]
    pub audits: bool,
}

impl Emit {
    /// Parses a comma-separated list such as `traces,audits`; empty or
    /// `none` selects nothing.
    pub fn parse_list(list: &str) -> Result<Self> {
        let mut emit = Emit::default();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "traces" => emit.traces = true,
                "gamma" => emit.gamma = true,
                "audits" => emit.audits = true,
                "none" => {}
                other => {
                    return Err(Error::Config(format!(
                        "unknown emit item `{other}` (expected traces, gamma, audits)"
                    )))
                }
            }
        }
        Ok(emit)
    }
}

/// Trajectory counts and initial branch weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleBlock {
    /// Trajectories per initial weight.
    pub trajectories: u64,
    /// Initial weight of the first branch, one ensemble per entry.
    pub initial_weights: Vec<f64>,
}

impl EnsembleBlock {
    fn validate(&self, min_trajectories: u64) -> Result<()> {
        if self.trajectories < min_trajectories {
            return Err(Error::Config(format!(
                "ensemble.trajectories must be at least {min_trajectories}, got {}",
                self.trajectories
            )));
        }
        if self.trajectories > u32::MAX as u64 {
            return Err(Error::Config("ensemble.trajectories is too large".into()));
        }
        if self.initial_weights.is_empty() {
            return Err(Error::Config("ensemble.initial_weights is empty".into()));
        }
        if let Some(w) = self
            .initial_weights
            .iter()
            .find(|w| !(**w > 0.0 && **w < 1.0))
        {
            return Err(Error::Config(format!(
                "initial weight {w} must lie in (0, 1)"
            )));
        }
        Ok(())
    }
}

/// Stream index of trajectory `i` in ensemble `group`.
fn stream_index(group: usize, i: u64) -> u64 {
    ((group as u64) << 32) | i
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    /// Master seed; see the command-line tool for the precedence of sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub emit: Emit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collapse: Option<CollapseParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk: Option<WalkParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cascade: Option<CascadeBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entanglement: Option<EntanglementBlock>,
}

fn required<'a, T>(section: &'a Option<T>, name: &str, kind: ScenarioKind) -> Result<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| Error::Config(format!("scenario {} needs a [{name}] section", kind.name())))
}

impl ScenarioConfig {
    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Canonical text form; its digest identifies the configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn sha256(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    fn check_sections(&self) -> Result<()> {
        let family = self.scenario.family();
        let present = [
            ("grid", self.grid.is_some()),
            ("potential", self.potential.is_some()),
            ("collapse", self.collapse.is_some()),
            ("walk", self.walk.is_some()),
            ("ensemble", self.ensemble.is_some()),
            ("cascade", self.cascade.is_some()),
            ("probe", self.probe.is_some()),
            ("sweep", self.sweep.is_some()),
            ("entanglement", self.entanglement.is_some()),
        ];
        let used: &[&str] = match family {
            Family::Reduced => &["walk", "ensemble"],
            Family::Cascade => &["grid", "potential", "collapse", "ensemble", "cascade"],
            Family::Probe => &["grid", "potential", "collapse", "probe"],
            Family::Sweep => &["grid", "potential", "probe", "sweep"],
            Family::Entanglement => &["entanglement"],
        };
        for (name, is_present) in present {
            if is_present && !used.contains(&name) {
                return Err(Error::Config(format!(
                    "section [{name}] is not used by scenario {}",
                    self.scenario.name()
                )));
            }
            if !is_present && used.contains(&name) {
                return Err(Error::Config(format!(
                    "scenario {} needs a [{name}] section",
                    self.scenario.name()
                )));
            }
        }
        let (traces, gamma, audits) = match family {
            Family::Reduced => (true, false, true),
            Family::Cascade | Family::Probe => (true, true, true),
            Family::Sweep => (false, false, true),
            Family::Entanglement => (false, false, false),
        };
        for (name, wanted, available) in [
            ("traces", self.emit.traces, traces),
            ("gamma", self.emit.gamma, gamma),
            ("audits", self.emit.audits, audits),
        ] {
            if wanted && !available {
                return Err(Error::Config(format!(
                    "scenario {} cannot emit {name}",
                    self.scenario.name()
                )));
            }
        }
        Ok(())
    }

    /// Validates every section and builds what the run needs.
    pub fn prepare(&self) -> Result<Prepared> {
        self.check_sections()?;
        let kind = self.scenario;
        let inner =
            match kind.family() {
                Family::Reduced => PreparedInner::Reduced(reduced::prepare(
                    required(&self.walk, "walk", kind)?,
                    required(&self.ensemble, "ensemble", kind)?,
                    self.emit,
                )?),
                Family::Cascade => PreparedInner::Cascade(Box::new(cascade::prepare(
                    required(&self.grid, "grid", kind)?,
                    required(&self.potential, "potential", kind)?,
                    required(&self.collapse, "collapse", kind)?,
                    required(&self.ensemble, "ensemble", kind)?,
                    required(&self.cascade, "cascade", kind)?,
                )?)),
                Family::Probe => PreparedInner::Probe(Box::new(probe::prepare_probe(
                    required(&self.grid, "grid", kind)?,
                    required(&self.potential, "potential", kind)?,
                    required(&self.collapse, "collapse", kind)?,
                    required(&self.probe, "probe", kind)?,
                )?)),
                Family::Sweep => PreparedInner::Sweep(Box::new(probe::prepare_sweep(
                    required(&self.grid, "grid", kind)?,
                    required(&self.potential, "potential", kind)?,
                    required(&self.probe, "probe", kind)?,
                    required(&self.sweep, "sweep", kind)?,
                )?)),
                Family::Entanglement => PreparedInner::Entanglement(entanglement::prepare(
                    required(&self.entanglement, "entanglement", kind)?,
                )?),
            };
        Ok(Prepared {
            config: self.clone(),
            inner,
        })
    }
}

/// A validated scenario ready to run.
pub struct Prepared {
    config: ScenarioConfig,
    inner: PreparedInner,
}

enum PreparedInner {
    Reduced(reduced::Reduced),
    Cascade(Box<cascade::Cascade>),
    Probe(Box<probe::Probe>),
    Sweep(Box<probe::Sweep>),
    Entanglement(entanglement::Entanglement),
}

impl Prepared {
    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    /// Runs on `workers` threads. Only the progress lines depend on timing.
    pub fn run(&self, workers: usize, progress: Progress<'_>) -> Result<RunOutput> {
        if workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let seed = self.config.seed_or_default();
        let emit = self.config.emit;
        if let Some(c) = self.config.collapse.as_ref().filter(|c| !c.is_physical()) {
            progress(&format!(
                "kappa {} exceeds the physical bound {PHYSICAL_KAPPA_MAX}; test-only configuration",
                c.kappa
            ));
        }
        match &self.inner {
            PreparedInner::Reduced(r) => r.run(seed, emit, workers, progress),
            PreparedInner::Cascade(c) => c.run(seed, emit, workers, progress),
            PreparedInner::Probe(p) => p.run(seed, emit, progress),
            PreparedInner::Sweep(s) => s.run(seed, emit, workers, progress),
            PreparedInner::Entanglement(e) => e.run(),
        }
    }
}

/// Data files of one run, keyed by file name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub files: BTreeMap<String, String>,
    /// Present when audits were requested.
    pub audits: Option<AuditReport>,
}

impl RunOutput {
    fn add(&mut self, name: &str, table: Table) {
        self.files.insert(name.to_string(), table.into_string());
    }

    fn set_audits(&mut self, report: AuditReport) {
        self.files.insert("audits.tsv".into(), report.to_tsv());
        self.audits = Some(report);
    }

    /// False only when a requested audit failed.
    pub fn audits_pass(&self) -> bool {
        self.audits.as_ref().is_none_or(AuditReport::pass)
    }
}

/// Everything needed to reproduce a run's files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    /// SHA-256 of every data file.
    pub files: BTreeMap<String, String>,
    pub config: ScenarioConfig,
}

impl Manifest {
    pub fn new(config: &ScenarioConfig, output: &RunOutput) -> Self {
        Self {
            version: VERSION.to_string(),
            seed: config.seed_or_default(),
            config_sha256: config.sha256(),
            files: output
                .files
                .iter()
                .map(|(name, body)| (name.clone(), sha256_hex(body.as_bytes())))
                .collect(),
            config: config.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// Folds `next` into `acc`, keeping per check name the entry closest to (or
/// furthest past) its tolerance; a name fails if it failed anywhere.
fn merge_worst(acc: &mut AuditReport, next: AuditReport) {
    let ratio = |c: &crate::audit::AuditCheck| c.max_residual / c.tolerance;
    for check in next.checks {
        match acc.checks.iter_mut().find(|c| c.name == check.name) {
            Some(existing) => {
                let pass = existing.pass && check.pass;
                if ratio(&check) > ratio(existing) || ratio(&check).is_nan() {
                    *existing = check;
                }
                existing.pass = pass;
            }
            None => acc.checks.push(check),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Parses a configuration, or the configuration embedded in a manifest
/// (whose digest is then checked).
pub fn load_config(text: &str) -> Result<ScenarioConfig> {
    let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
    if table.contains_key("config") && table.contains_key("config_sha256") {
        let manifest: Manifest = toml::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        let digest = manifest.config.sha256();
        if digest != manifest.config_sha256 {
            return Err(Error::Config(format!(
                "manifest config digest {} does not match its config ({digest})",
                manifest.config_sha256
            )));
        }
        if manifest.config.seed != Some(manifest.seed) {
            return Err(Error::Config(
                "manifest seed does not match its config".into(),
            ));
        }
        return Ok(manifest.config);
    }
    toml::from_str(text).map_err(|e| Error::Config(format!("{e}")))
}

/// Writes the data files and the manifest into `dir`, creating it.
pub fn write_outputs(dir: &Path, config: &ScenarioConfig, output: &RunOutput) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    for (name, body) in &output.files {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
    }
    let manifest = Manifest::new(config, output);
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest.to_toml())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_validates() {
        for kind in ScenarioKind::ALL {
            let config = kind.preset();
            assert_eq!(config.scenario, kind);
            assert!(config.seed.is_some(), "{} has no seed", kind.name());
            config.check_sections().unwrap();
        }
    }

    #[test]
    fn names_round_trip() {
        for kind in ScenarioKind::ALL {
            assert_eq!(ScenarioKind::from_name(kind.name()), Some(kind));
            let text = format!("scenario = \"{}\"", kind.name());
            let parsed: toml::Table = text.parse().unwrap();
            let back: ScenarioKind = parsed["scenario"].clone().try_into().unwrap();
            assert_eq!(back, kind);
        }
    }

    #[test]
    fn unknown_keys_and_unused_sections_rejected() {
        let base = ScenarioKind::BeamSplitterEntanglement.template();
        assert!(load_config(&format!("bogus = 1\n{base}")).is_err());
        let mut config = load_config(base).unwrap();
        config.grid = Some(GridSpec::new(1, 32, 5.0, [1.0, 1.0]));
        assert!(matches!(config.prepare(), Err(Error::Config(_))));
        let mut config = load_config(base).unwrap();
        config.emit.gamma = true;
        assert!(matches!(config.prepare(), Err(Error::Config(_))));
        let mut config = load_config(base).unwrap();
        config.entanglement = None;
        assert!(matches!(config.prepare(), Err(Error::Config(_))));
    }

    #[test]
    fn manifest_round_trips_and_detects_tampering() {
        let config = ScenarioKind::BeamSplitterEntanglement.preset();
        let output = config.prepare().unwrap().run(1, &silent).unwrap();
        let manifest = Manifest::new(&config, &output);
        let text = manifest.to_toml();
        assert_eq!(load_config(&text).unwrap(), config);
        let tampered = text.replace("mirror_width = 1.0", "mirror_width = 2.0");
        assert_ne!(tampered, text);
        assert!(load_config(&tampered).is_err());
    }

    #[test]
    fn emit_list() {
        let e = Emit::parse_list("traces, audits").unwrap();
        assert!(e.traces && e.audits && !e.gamma);
        assert_eq!(Emit::parse_list("").unwrap(), Emit::default());
        assert!(Emit::parse_list("plots").is_err());
    }
}
