use serde::{Deserialize, Serialize};

use super::table::num;
use super::{RunOutput, Table};
use crate::branchwalk::entanglement_estimate;
use crate::error::{Error, Result};

/// Mirror kicked by momentum `q` in one of two equal branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntanglementBlock {
    /// Position spread of the mirror state (length units).
    pub mirror_width: f64,
    /// Momentum transfers (inverse length units).
    pub kicks: Vec<f64>,
}

/// `1 - <M|e^{iqx}|M>` for a Gaussian mirror of position spread `width`.
pub fn mirror_delta(kick: f64, width: f64) -> f64 {
    -(-0.5 * kick * kick * width * width).exp_m1()
}

/// Von Neumann entropy (nats) of either side for equal branches whose
/// mirror states overlap by `1 - delta`.
pub fn exact_entropy(delta: f64) -> f64 {
    let low = 0.5 * delta;
    let high = 1.0 - low;
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    term(low) + term(high)
}

pub(super) struct Entanglement {
    rows: Vec<(f64, f64)>,
}

pub(super) fn prepare(block: &EntanglementBlock) -> Result<Entanglement> {
    if !(block.mirror_width > 0.0 && block.mirror_width.is_finite()) {
        return Err(Error::Config(
            "entanglement.mirror_width must be positive".into(),
        ));
    }
    if block.kicks.is_empty() {
        return Err(Error::Config("entanglement.kicks is empty".into()));
    }
    let mut rows = Vec::with_capacity(block.kicks.len());
    for &q in &block.kicks {
        let delta = mirror_delta(q, block.mirror_width);
        if !(q > 0.0 && delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!(
                "kick {q} gives overlap defect {delta}, outside (0, 1)"
            )));
        }
        rows.push((q, delta));
    }
    Ok(Entanglement { rows })
}

impl Entanglement {
    pub(super) fn run(&self) -> Result<RunOutput> {
        let mut table = Table::new(&[
            "kick",
            "delta",
            "entropy_exact",
            "entropy_estimate",
            "relative_error",
        ]);
        for &(q, delta) in &self.rows {
            let exact = exact_entropy(delta);
            let estimate = entanglement_estimate(delta)?;
            table.row(&[
                num(q),
                num(delta),
                num(exact),
                num(estimate),
                num((estimate - exact) / exact),
            ]);
        }
        let mut out = RunOutput::default();
        out.add("entanglement.tsv", table);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_limits() {
        assert!(exact_entropy(0.0).abs() < 1e-15);
        assert!((exact_entropy(1.0) - 2f64.ln()).abs() < 1e-15);
        for delta in [1e-6, 1e-4, 1e-2] {
            let rel = (entanglement_estimate(delta).unwrap() - exact_entropy(delta)).abs()
                / exact_entropy(delta);
            assert!(rel < delta, "delta {delta}: {rel}");
        }
    }

    #[test]
    fn small_kick_defect() {
        let d = mirror_delta(1e-3, 2.0);
        assert!((d - (2e-6 - 2e-12)).abs() < 1e-17);
    }
}
