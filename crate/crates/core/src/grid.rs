//! Discrete two-particle configuration space.
//!
//! Axes `0..d` hold the coordinates of particle j and axes `d..2d` those of
//! particle k, where `d` is the number of spatial dimensions per particle.
//! The layout is row-major with the last axis fastest.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{self, Model, PotentialSpec};
use crate::spectral::Spectral;

/// Default cap on the number of grid points (64^4).
pub const DEFAULT_MAX_POINTS: usize = 1 << 24;

/// Normalization tolerance every exported transformation must honour.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Spatial dimensions per particle (1 or 2).
    pub dims_per_particle: usize,
    /// Points per axis, a power of two.
    pub points_per_axis: usize,
    /// Half-width of every axis (length units).
    pub extent: f64,
    /// Masses of particles j and k (mass units).
    pub masses: [f64; 2],
    /// Memory budget expressed as a maximum number of grid points.
    #[serde(default = "default_max_points")]
    pub max_points: usize,
}

fn default_max_points() -> usize {
    DEFAULT_MAX_POINTS
}

impl GridSpec {
    pub fn new(
        dims_per_particle: usize,
        points_per_axis: usize,
        extent: f64,
        masses: [f64; 2],
    ) -> Self {
        Self {
            dims_per_particle,
            points_per_axis,
            extent,
            masses,
            max_points: DEFAULT_MAX_POINTS,
        }
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / self.points_per_axis as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dims_per_particle) {
            return Err(Error::Grid(format!(
                "dims_per_particle must be 1 or 2, got {}",
                self.dims_per_particle
            )));
        }
        let n = self.points_per_axis;
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Grid(format!(
                "points_per_axis must be a power of two >= 4, got {n}"
            )));
        }
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(Error::Grid(format!(
                "extent must be positive, got {}",
                self.extent
            )));
        }
        if self.masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::Grid(format!(
                "masses must be positive, got {:?}",
                self.masses
            )));
        }
        let rank = 2 * self.dims_per_particle as u32;
        let total = n.checked_pow(rank).unwrap_or(usize::MAX);
        if total > self.max_points {
            return Err(Error::Grid(format!(
                "{total} grid points exceed the budget of {}",
                self.max_points
            )));
        }
        Ok(())
    }
}

/// Validated grid with derived geometry and FFT plans.
#[derive(Debug)]
pub struct Grid {
    spec: GridSpec,
    spacing: f64,
    rank: usize,
    len: usize,
    coords: Vec<f64>,
    kinetic: Vec<f64>,
    spectral: Spectral,
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Arc<Self>> {
        spec.validate()?;
        let n = spec.points_per_axis;
        let spacing = spec.spacing();
        let rank = 2 * spec.dims_per_particle;
        let coords = (0..n).map(|i| -spec.extent + i as f64 * spacing).collect();
        let spectral = Spectral::new(n, rank, spacing);
        let len = spectral.len();

        let k = spectral.wavenumbers().to_vec();
        let mut kinetic = vec![0.0; len];
        for axis in 0..rank {
            let mass = spec.masses[axis / spec.dims_per_particle];
            spectral.for_each_along(axis, |idx, i| kinetic[idx] += k[i] * k[i] / (2.0 * mass));
        }

        Ok(Arc::new(Self {
            spec,
            spacing,
            rank,
            len,
            coords,
            kinetic,
            spectral,
        }))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Number of configuration axes (`2 * dims_per_particle`).
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dims(&self) -> usize {
        self.spec.dims_per_particle
    }

    pub fn points(&self) -> usize {
        self.spec.points_per_axis
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.rank as i32)
    }

    pub fn mass(&self, particle: usize) -> f64 {
        self.spec.masses[particle]
    }

    pub fn total_mass(&self) -> f64 {
        self.spec.masses[0] + self.spec.masses[1]
    }

    /// Configuration axis holding component `c` of particle `p`.
    pub fn axis(&self, particle: usize, component: usize) -> usize {
        particle * self.dims() + component
    }

    /// Mass attached to a configuration axis.
    pub fn axis_mass(&self, axis: usize) -> f64 {
        self.spec.masses[axis / self.dims()]
    }

    /// Coordinate values along any axis.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Index along `axis` of flat index `idx`.
    pub fn axis_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.spectral.stride(axis)) % self.points()
    }

    pub fn coordinate(&self, idx: usize, axis: usize) -> f64 {
        self.coords[self.axis_index(idx, axis)]
    }

    /// All configuration coordinates of flat index `idx`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        (0..self.rank).map(|a| self.coordinate(idx, a)).collect()
    }

    /// Kinetic-energy symbol `sum_a k_a^2 / (2 m_a)` in FFT order.
    pub fn kinetic_symbol(&self) -> &[f64] {
        &self.kinetic
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }
}

/// Complex amplitude field over the configuration grid.
#[derive(Debug, Clone)]
pub struct WaveFunction {
    grid: Arc<Grid>,
    pub amps: Vec<Complex64>,
    pub time: f64,
}

impl WaveFunction {
    pub fn from_amplitudes(grid: Arc<Grid>, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != grid.len() {
            return Err(Error::Mismatch(format!(
                "{} amplitudes for a grid of {} points",
                amps.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            amps,
            time: 0.0,
        })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let amps = vec![Complex64::new(0.0, 0.0); grid.len()];
        Self {
            grid,
            amps,
            time: 0.0,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn same_grid(&self, other: &WaveFunction) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.spec() == other.grid.spec()
    }

    pub fn norm_sq(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    /// Rescales to unit norm and returns the norm squared before rescaling.
    pub fn normalize(&mut self) -> f64 {
        let n2 = self.norm_sq();
        let scale = 1.0 / n2.sqrt();
        for z in self.amps.iter_mut() {
            *z *= scale;
        }
        n2
    }

    /// `<self|other>`
    pub fn inner(&self, other: &WaveFunction) -> Complex64 {
        let s: Complex64 = self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum();
        s * self.grid.cell_volume()
    }

    pub fn density(&self) -> Vec<f64> {
        self.amps.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.amps
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sq() - 1.0).abs() <= NORM_TOLERANCE
    }
}

/// Axis-aligned region of configuration space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Points with `coordinate[axis] >= threshold` (or `<` when `upper` is false).
    HalfSpace {
        axis: usize,
        threshold: f64,
        upper: bool,
    },
    /// Points with `lower[a] <= coordinate[a] < upper[a]` on every axis.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub shape: Shape,
    #[serde(default)]
    pub complement: bool,
    pub label: String,
}

impl Region {
    pub fn half_space(axis: usize, threshold: f64, upper: bool, label: impl Into<String>) -> Self {
        Self {
            shape: Shape::HalfSpace {
                axis,
                threshold,
                upper,
            },
            complement: false,
            label: label.into(),
        }
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>, label: impl Into<String>) -> Self {
        Self {
            shape: Shape::Box { lower, upper },
            complement: false,
            label: label.into(),
        }
    }

    pub fn full(label: impl Into<String>) -> Self {
        Self::half_space(0, f64::NEG_INFINITY, true, label)
    }

    pub fn complement(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            complement: !self.complement,
            label: format!("not {}", self.label),
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        match &self.shape {
            Shape::HalfSpace { axis, .. } if *axis >= grid.rank() => Err(Error::Grid(format!(
                "region axis {axis} out of range for rank {}",
                grid.rank()
            ))),
            Shape::Box { lower, upper }
                if lower.len() != grid.rank() || upper.len() != grid.rank() =>
            {
                Err(Error::Grid(format!(
                    "box region needs {} bounds per side",
                    grid.rank()
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn contains(&self, grid: &Grid, idx: usize) -> bool {
        let inside = match &self.shape {
            Shape::HalfSpace {
                axis,
                threshold,
                upper,
            } => {
                let x = grid.coordinate(idx, *axis);
                if *upper {
                    x >= *threshold
                } else {
                    x < *threshold
                }
            }
            Shape::Box { lower, upper } => (0..grid.rank()).all(|a| {
                let x = grid.coordinate(idx, a);
                x >= lower[a] && x < upper[a]
            }),
        };
        inside != self.complement
    }

    /// Boolean mask over the grid.
    pub fn mask(&self, grid: &Grid) -> Vec<bool> {
        (0..grid.len()).map(|i| self.contains(grid, i)).collect()
    }
}

/// Integrated `|psi|^2` over a region.
pub fn branch_weight(psi: &WaveFunction, region: &Region) -> f64 {
    let grid = psi.grid();
    psi.amps
        .iter()
        .enumerate()
        .filter(|(i, _)| region.contains(grid, *i))
        .map(|(_, z)| z.norm_sqr())
        .sum::<f64>()
        * grid.cell_volume()
}

/// Single-particle Gaussian packet. `width` is the standard deviation of
/// `|psi|^2` along each component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Packet {
    pub center: Vec<f64>,
    pub wavevector: Vec<f64>,
    pub width: f64,
}

impl Packet {
    pub fn new(center: Vec<f64>, wavevector: Vec<f64>, width: f64) -> Self {
        Self {
            center,
            wavevector,
            width,
        }
    }

    /// 1-D convenience constructor.
    pub fn line(center: f64, wavevector: f64, width: f64) -> Self {
        Self::new(vec![center], vec![wavevector], width)
    }

    fn validate(&self, grid: &Grid) -> Result<()> {
        if self.center.len() != grid.dims() || self.wavevector.len() != grid.dims() {
            return Err(Error::Preset(format!(
                "packet needs {} components per particle",
                grid.dims()
            )));
        }
        if !(self.width >= 2.0 * grid.spacing()) {
            return Err(Error::Preset(format!(
                "packet width {} is below two grid spacings ({})",
                self.width,
                2.0 * grid.spacing()
            )));
        }
        Ok(())
    }

    fn amplitude(&self, x: &[f64]) -> Complex64 {
        let mut arg = Complex64::new(0.0, 0.0);
        for c in 0..x.len() {
            let dx = x[c] - self.center[c];
            arg += Complex64::new(
                -dx * dx / (4.0 * self.width * self.width),
                self.wavevector[c] * x[c],
            );
        }
        arg.exp()
    }

    /// Packet on a ring of circumference `period`: the displacement from the
    /// center is taken as its minimum image and the phase is measured from
    /// the center, so the state is smooth across the box edge.
    fn periodic_amplitude(&self, x: &[f64], period: f64) -> Complex64 {
        let mut arg = Complex64::new(0.0, 0.0);
        for c in 0..x.len() {
            let dx = x[c] - self.center[c];
            let dx = dx - period * (dx / period).round();
            arg += Complex64::new(
                -dx * dx / (4.0 * self.width * self.width),
                self.wavevector[c] * dx,
            );
        }
        arg.exp()
    }
}

/// Product state of one packet per particle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketPair {
    pub j: Packet,
    pub k: Packet,
}

impl PacketPair {
    pub fn new(j: Packet, k: Packet) -> Self {
        Self { j, k }
    }

    fn config_center(&self) -> Vec<f64> {
        self.j
            .center
            .iter()
            .chain(&self.k.center)
            .copied()
            .collect()
    }
}

/// Shape of a pair state in the separation `s = w_j - w_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RelativeProfile {
    /// Gaussian packet in the separation.
    Packet {
        center: Vec<f64>,
        wavevector: Vec<f64>,
        width: f64,
    },
    /// `((s_x + i s_y) / width)^winding exp(-|s|^2 / (4 width^2))`, an
    /// eigenstate of the relative `L_z` with eigenvalue `winding`.
    Vortex { width: f64, winding: u32 },
}

impl RelativeProfile {
    fn width(&self) -> f64 {
        match self {
            RelativeProfile::Packet { width, .. } | RelativeProfile::Vortex { width, .. } => *width,
        }
    }

    fn validate(&self, grid: &Grid) -> Result<()> {
        match self {
            RelativeProfile::Packet {
                center, wavevector, ..
            } => {
                if center.len() != grid.dims() || wavevector.len() != grid.dims() {
                    return Err(Error::Preset(format!(
                        "relative packet needs {} components",
                        grid.dims()
                    )));
                }
            }
            RelativeProfile::Vortex { .. } => {
                if grid.dims() != 2 {
                    return Err(Error::Preset(
                        "a vortex needs two dimensions per particle".into(),
                    ));
                }
            }
        }
        if !(self.width() >= PAIR_MIN_WIDTH * grid.spacing()) {
            return Err(Error::Preset(format!(
                "relative width {} is below {PAIR_MIN_WIDTH} grid spacings",
                self.width()
            )));
        }
        Ok(())
    }

    fn amplitude(&self, s: &[f64]) -> Complex64 {
        match self {
            RelativeProfile::Packet {
                center,
                wavevector,
                width,
            } => Packet::new(center.clone(), wavevector.clone(), *width).amplitude(s),
            RelativeProfile::Vortex { width, winding } => {
                let r2 = s[0] * s[0] + s[1] * s[1];
                let z = Complex64::new(s[0], s[1]) / width;
                z.powu(*winding) * (-r2 / (4.0 * width * width)).exp()
            }
        }
    }
}

/// Smallest width, in grid spacings, accepted for pair-state factors. A
/// Gaussian this narrow still has spectral content below 1e-9 at the Nyquist
/// wavenumber.
pub const PAIR_MIN_WIDTH: f64 = 1.5;

/// Initial-state recipes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[allow(clippy::large_enum_variant)]
pub enum Preset {
    GaussianPacket {
        pair: PacketPair,
    },
    /// Product of a center-of-mass factor and a relative factor. Without
    /// `com` the state is uniform along the center of mass (zero total
    /// momentum) and the separation is taken as the minimum image.
    Pair {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        com: Option<Packet>,
        relative: RelativeProfile,
    },
    /// Two packet configurations whose weights are fixed exactly on the two
    /// sides of `split` (the first branch lives inside `split`). When `split`
    /// is `None` a half-space through the midpoint of the branch centers,
    /// along the axis of largest separation, is used.
    TwoBranch {
        branches: [PacketPair; 2],
        weights: [f64; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split: Option<Region>,
    },
    /// Imaginary-time ground state of the pair potential.
    PairGroundState {
        potential: PotentialSpec,
        dtau: f64,
        tolerance: f64,
        max_sweeps: usize,
    },
}

fn pair_state(
    grid: &Arc<Grid>,
    com: Option<&Packet>,
    relative: &RelativeProfile,
) -> Result<WaveFunction> {
    relative.validate(grid)?;
    if let Some(c) = com {
        if c.center.len() != grid.dims() || c.wavevector.len() != grid.dims() {
            return Err(Error::Preset(format!(
                "center-of-mass packet needs {} components",
                grid.dims()
            )));
        }
        if !(c.width >= PAIR_MIN_WIDTH * grid.spacing()) {
            return Err(Error::Preset(format!(
                "center-of-mass width {} is below {PAIR_MIN_WIDTH} grid spacings",
                c.width
            )));
        }
    }
    let d = grid.dims();
    let (mj, mk) = (grid.mass(0), grid.mass(1));
    let total = mj + mk;
    let mut psi = WaveFunction::zeros(grid.clone());
    let mut sep = vec![0.0; d];
    let mut com_x = vec![0.0; d];
    for (idx, z) in psi.amps.iter_mut().enumerate() {
        match com {
            None => operators::separation(grid, idx, &mut sep),
            Some(_) => {
                for c in 0..d {
                    let xj = grid.coordinate(idx, grid.axis(0, c));
                    let xk = grid.coordinate(idx, grid.axis(1, c));
                    sep[c] = xj - xk;
                    com_x[c] = (mj * xj + mk * xk) / total;
                }
            }
        }
        let mut a = relative.amplitude(&sep);
        if let Some(c) = com {
            a *= c.amplitude(&com_x);
        }
        *z = a;
    }
    psi.normalize();
    Ok(psi)
}

impl Preset {
    pub fn packets(pair: PacketPair) -> Self {
        Preset::GaussianPacket { pair }
    }

    pub fn pair_ground_state(potential: PotentialSpec) -> Self {
        Preset::PairGroundState {
            potential,
            dtau: 0.005,
            tolerance: 1e-10,
            max_sweeps: 200_000,
        }
    }
}

/// Default split for a two-branch state: the first branch lies inside.
pub fn default_split(branches: &[PacketPair; 2]) -> Region {
    let a = branches[0].config_center();
    let b = branches[1].config_center();
    let axis = (0..a.len())
        .max_by(|&x, &y| (a[x] - b[x]).abs().total_cmp(&(a[y] - b[y]).abs()))
        .unwrap_or(0);
    let threshold = 0.5 * (a[axis] + b[axis]);
    Region::half_space(axis, threshold, a[axis] > threshold, "branch0")
}

fn packet_pair_state(grid: &Arc<Grid>, pair: &PacketPair) -> Result<WaveFunction> {
    pair.j.validate(grid)?;
    pair.k.validate(grid)?;
    let d = grid.dims();
    let period = 2.0 * grid.spec().extent;
    let mut psi = WaveFunction::zeros(grid.clone());
    let mut x = vec![0.0; grid.rank()];
    for (idx, z) in psi.amps.iter_mut().enumerate() {
        for (a, xa) in x.iter_mut().enumerate() {
            *xa = grid.coordinate(idx, a);
        }
        *z =
            pair.j.periodic_amplitude(&x[..d], period) * pair.k.periodic_amplitude(&x[d..], period);
    }
    psi.normalize();
    Ok(psi)
}

/// Single packet-pair state.
pub fn packet_pair(grid: &Arc<Grid>, pair: &PacketPair) -> Result<WaveFunction> {
    packet_pair_state(grid, pair)
}

/// `sqrt(w0) first + sqrt(w1) second`, rescaled so the weight inside `mask`
/// is exactly `w0` and outside exactly `w1`.
pub fn mix_branches(
    first: &WaveFunction,
    second: &WaveFunction,
    mask: &[bool],
    weights: [f64; 2],
) -> WaveFunction {
    let grid = first.grid().clone();
    let mut psi = WaveFunction::zeros(grid.clone());
    let (a, b) = (weights[0].sqrt(), weights[1].sqrt());
    for ((z, p), q) in psi.amps.iter_mut().zip(&first.amps).zip(&second.amps) {
        *z = p * a + q * b;
    }
    let dv = grid.cell_volume();
    let (mut inside, mut outside) = (0.0, 0.0);
    for (z, m) in psi.amps.iter().zip(mask) {
        if *m {
            inside += z.norm_sqr() * dv;
        } else {
            outside += z.norm_sqr() * dv;
        }
    }
    let scale_in = if inside > 0.0 {
        (weights[0] / inside).sqrt()
    } else {
        0.0
    };
    let scale_out = if outside > 0.0 {
        (weights[1] / outside).sqrt()
    } else {
        0.0
    };
    for (z, m) in psi.amps.iter_mut().zip(mask) {
        *z *= if *m { scale_in } else { scale_out };
    }
    psi
}

/// Builds a normalized initial state.
pub fn init_wavefunction(spec: &GridSpec, preset: &Preset) -> Result<WaveFunction> {
    let grid = Grid::new(spec.clone())?;
    init_on_grid(&grid, preset)
}

/// As [`init_wavefunction`] on an existing grid.
pub fn init_on_grid(grid: &Arc<Grid>, preset: &Preset) -> Result<WaveFunction> {
    match preset {
        Preset::GaussianPacket { pair } => packet_pair_state(grid, pair),
        Preset::Pair { com, relative } => pair_state(grid, com.as_ref(), relative),
        Preset::TwoBranch {
            branches,
            weights,
            split,
        } => {
            if weights.iter().any(|w| !(0.0..=1.0).contains(w))
                || (weights[0] + weights[1] - 1.0).abs() > 1e-12
            {
                return Err(Error::Preset(format!(
                    "branch weights {weights:?} must be in [0,1] and sum to 1"
                )));
            }
            let split = split.clone().unwrap_or_else(|| default_split(branches));
            split.validate(grid)?;
            let first = packet_pair_state(grid, &branches[0])?;
            let second = packet_pair_state(grid, &branches[1])?;
            Ok(mix_branches(&first, &second, &split.mask(grid), *weights))
        }
        Preset::PairGroundState {
            potential,
            dtau,
            tolerance,
            max_sweeps,
        } => {
            let model = Model::new(grid.clone(), potential.clone())?;
            let relaxed =
                operators::relax_ground_state(&model, *dtau, *tolerance, *max_sweeps, None)?;
            Ok(relaxed.state)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_grid(n: usize, extent: f64) -> Arc<Grid> {
        Grid::new(GridSpec::new(1, n, extent, [1.0, 1.0])).unwrap()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(Grid::new(GridSpec::new(3, 32, 5.0, [1.0, 1.0])).is_err());
        assert!(Grid::new(GridSpec::new(1, 100, 5.0, [1.0, 1.0])).is_err());
        assert!(Grid::new(GridSpec::new(1, 32, 0.0, [1.0, 1.0])).is_err());
        assert!(Grid::new(GridSpec::new(1, 32, 5.0, [1.0, -1.0])).is_err());
        let mut big = GridSpec::new(2, 128, 5.0, [1.0, 1.0]);
        big.max_points = 1 << 20;
        assert!(Grid::new(big).is_err());
    }

    #[test]
    fn gaussian_packet_is_normalized() {
        let grid = line_grid(128, 20.0);
        let pair = PacketPair::new(Packet::line(-5.0, 2.0, 1.0), Packet::line(5.0, 0.0, 1.0));
        let psi = init_on_grid(&grid, &Preset::GaussianPacket { pair }).unwrap();
        assert!((psi.norm_sq() - 1.0).abs() < 1e-12);
        assert!(psi.is_finite());
    }

    #[test]
    fn narrow_packet_rejected() {
        let grid = line_grid(64, 10.0);
        let h = grid.spacing();
        let pair = PacketPair::new(Packet::line(0.0, 0.0, 1.5 * h), Packet::line(2.0, 0.0, 1.0));
        assert!(matches!(
            init_on_grid(&grid, &Preset::GaussianPacket { pair }),
            Err(Error::Preset(_))
        ));
    }

    fn two_branch(weights: [f64; 2]) -> Preset {
        let left = PacketPair::new(Packet::line(-10.0, 0.0, 1.0), Packet::line(0.0, 0.0, 1.0));
        let right = PacketPair::new(Packet::line(10.0, 0.0, 1.0), Packet::line(0.0, 0.0, 1.0));
        Preset::TwoBranch {
            branches: [left, right],
            weights,
            split: None,
        }
    }

    #[test]
    fn two_branch_weights_are_exact() {
        let grid = line_grid(256, 32.0);
        let psi = init_on_grid(&grid, &two_branch([0.3, 0.7])).unwrap();
        let Preset::TwoBranch { branches, .. } = two_branch([0.3, 0.7]) else {
            unreachable!()
        };
        let left = default_split(&branches);
        assert!((branch_weight(&psi, &left) - 0.3).abs() < 1e-10);
        assert!((branch_weight(&psi, &left.complement()) - 0.7).abs() < 1e-10);
        assert!((psi.norm_sq() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_branch_rejects_unnormalized_weights() {
        let grid = line_grid(256, 32.0);
        assert!(matches!(
            init_on_grid(&grid, &two_branch([0.3, 0.6])),
            Err(Error::Preset(_))
        ));
    }

    #[test]
    fn branch_weight_full_empty_and_additive() {
        let grid = line_grid(128, 20.0);
        let pair = PacketPair::new(Packet::line(-3.0, 1.0, 1.5), Packet::line(2.0, -0.5, 1.0));
        let psi = init_on_grid(&grid, &Preset::GaussianPacket { pair }).unwrap();
        assert!((branch_weight(&psi, &Region::full("all")) - 1.0).abs() < 1e-12);
        let empty = Region::boxed(vec![100.0, 100.0], vec![101.0, 101.0], "empty");
        assert_eq!(branch_weight(&psi, &empty), 0.0);
        let r = Region::half_space(1, 0.7, true, "k right");
        assert!(
            (branch_weight(&psi, &r) + branch_weight(&psi, &r.complement()) - 1.0).abs() < 1e-12
        );
    }

    #[test]
    fn region_and_complement_partition() {
        let grid = line_grid(32, 5.0);
        let r = Region::boxed(vec![-1.0, -2.0], vec![2.0, 1.5], "box");
        let c = r.complement();
        for i in 0..grid.len() {
            assert!(r.contains(&grid, i) ^ c.contains(&grid, i));
        }
    }

    #[test]
    fn coordinates_follow_layout() {
        let grid = Grid::new(GridSpec::new(2, 8, 4.0, [1.0, 2.0])).unwrap();
        assert_eq!(grid.rank(), 4);
        assert_eq!(grid.axis(1, 0), 2);
        assert_eq!(grid.axis_mass(3), 2.0);
        let idx = ((3 * 8 + 5) * 8 + 1) * 8 + 7;
        assert_eq!(grid.point(idx), vec![-1.0, 1.0, -3.0, 3.0]);
    }
}
