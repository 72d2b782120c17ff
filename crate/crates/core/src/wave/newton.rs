//! Phase-conditioned Newton solver for front profiles.
//!
//! Unknowns are the interior profile values and the speed `c`. The speed
//! column and the (possibly dense) linear phase functional are folded into a
//! banded system by carrying a copy of `c` and a running partial sum of the
//! phase functional at every node, so each Newton step is one banded LU.

use crate::error::{Error, Result};
use crate::linalg::BandMatrix;

/// Local part of a residual Jacobian on the interior nodes.
pub(crate) struct LocalJacobian {
    /// `∂R_i/∂Φ_{i-1}` (entry 0 unused)
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    /// `∂R_i/∂Φ_{i+1}` (last entry unused)
    pub sup: Vec<f64>,
    pub dc: Vec<f64>,
}

pub(crate) trait FrontProblem {
    /// Residual on the full grid; entries at the two boundary nodes are
    /// ignored.
    fn residual(&self, phi: &[f64], c: f64) -> Result<Vec<f64>>;
    fn jacobian(&self, phi: &[f64], c: f64) -> Result<LocalJacobian>;
}

/// `Σ weights[i] * Φ[i] = target` over the full grid.
pub(crate) struct PhaseCondition {
    pub weights: Vec<f64>,
    pub target: f64,
}

impl PhaseCondition {
    fn value(&self, phi: &[f64]) -> f64 {
        self.weights.iter().zip(phi).map(|(w, p)| w * p).sum::<f64>() - self.target
    }
}

pub(crate) struct NewtonSettings {
    pub tol: f64,
    pub max_iter: usize,
}

pub(crate) struct NewtonOutcome {
    pub phi: Vec<f64>,
    pub c: f64,
    pub history: Vec<f64>,
}

fn merit(res: &[f64], phase: f64) -> f64 {
    let n = res.len();
    res[1..n - 1]
        .iter()
        .fold(phase.abs(), |m, r| m.max(r.abs()))
}

pub(crate) fn solve_front(
    problem: &impl FrontProblem,
    phase: &PhaseCondition,
    mut phi: Vec<f64>,
    mut c: f64,
    settings: &NewtonSettings,
) -> Result<NewtonOutcome> {
    let n = phi.len();
    let interior = n - 2;
    let dim = 3 * interior;
    let mut res = problem.residual(&phi, c)?;
    let mut current = merit(&res, phase.value(&phi));
    let mut history = vec![current];

    for _ in 0..settings.max_iter {
        if current <= settings.tol {
            return Ok(NewtonOutcome { phi, c, history });
        }
        let jac = problem.jacobian(&phi, c)?;
        let mut m = BandMatrix::zeros(dim, 3, 3);
        let mut rhs = vec![0.0; dim];
        for i in 0..interior {
            let r = 3 * i;
            if i > 0 {
                m.set(r, 3 * (i - 1), jac.sub[i]);
            }
            m.set(r, r, jac.diag[i]);
            if i + 1 < interior {
                m.set(r, 3 * (i + 1), jac.sup[i]);
            }
            m.set(r, r + 1, jac.dc[i]);
            rhs[r] = -res[i + 1];

            m.set(r + 1, r + 2, 1.0);
            if i > 0 {
                m.set(r + 1, r - 1, -1.0);
            }
            m.set(r + 1, r, -phase.weights[i + 1]);

            if i + 1 < interior {
                m.set(r + 2, r + 4, 1.0);
                m.set(r + 2, r + 1, -1.0);
            } else {
                m.set(r + 2, r + 2, 1.0);
                rhs[r + 2] = -phase.value(&phi);
            }
        }
        let lu = m.factor()?;
        lu.solve_in_place(&mut rhs);

        let mut step = 1.0;
        let mut accepted = false;
        while step >= 1.0 / 64.0 {
            let trial: Vec<f64> = phi
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    if k == 0 || k + 1 == n {
                        p
                    } else {
                        p + step * rhs[3 * (k - 1)]
                    }
                })
                .collect();
            let trial_c = c + step * rhs[1];
            let trial_res = problem.residual(&trial, trial_c)?;
            let trial_merit = merit(&trial_res, phase.value(&trial));
            if trial_merit.is_finite() && (trial_merit < current || step == 1.0 / 64.0) {
                phi = trial;
                c = trial_c;
                res = trial_res;
                current = trial_merit;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        history.push(current);
        if !accepted {
            break;
        }
    }
    if current <= settings.tol {
        return Ok(NewtonOutcome { phi, c, history });
    }
    Err(Error::NewtonFailed {
        iterations: history.len() - 1,
        residual: current,
        history,
    })
}
