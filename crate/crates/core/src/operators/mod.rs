//! Pair potentials, observables and the unitary split-step propagator.

mod observables;
mod potential;
mod propagator;

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::Result;
use crate::grid::{Grid, WaveFunction};

pub use observables::{
    angular_momentum_action, expectation, hamiltonian_action, kinetic_action, momentum_action,
    observables, particle_angular_momentum_action, particle_momentum_action, probability_current,
    ObservableSet,
};
pub use potential::{separation, PotentialFamily, PotentialField, PotentialSpec};
pub use propagator::{
    hamiltonian_step, relax_ground_state, stability_budget, GroundState, Propagator,
};

/// A grid together with a tabulated pair potential.
#[derive(Debug)]
pub struct Model {
    pub grid: Arc<Grid>,
    pub potential: PotentialSpec,
    pub field: PotentialField,
}

impl Model {
    pub fn new(grid: Arc<Grid>, potential: PotentialSpec) -> Result<Arc<Self>> {
        let field = PotentialField::new(&grid, &potential)?;
        Ok(Arc::new(Self {
            grid,
            potential,
            field,
        }))
    }

    /// `<V>` on a state.
    pub fn mean_potential(&self, psi: &WaveFunction) -> f64 {
        psi.amps
            .iter()
            .zip(&self.field.values)
            .map(|(z, v)| z.norm_sqr() * v)
            .sum::<f64>()
            * self.grid.cell_volume()
    }

    /// Spectral gradient of the state along every configuration axis.
    pub fn gradient(&self, psi: &WaveFunction) -> Vec<Vec<Complex64>> {
        self.grid.spectral().gradient(&psi.amps)
    }
}
