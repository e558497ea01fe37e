//! Levenberg–Marquardt over the rest pose (SE(3)) and the contact vectors.
//!
//! New timesteps are handled by warm-started batch re-solves: the previous
//! solution seeds the next problem and only new contact variables are
//! initialized from scratch.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{object_pose_at, TimestepObservation};
use crate::graph::{FactorGraphState, Values};
use crate::lie::Pose;
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub max_iters: usize,
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_lambda: f64,
    /// Converged when `(H_prev - H) / H_prev` drops below this.
    pub rel_cost_tol: f64,
    /// Converged when the largest tangent step entry drops below this.
    pub step_tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            max_iters: 100,
            initial_lambda: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.1,
            max_lambda: 1e8,
            rel_cost_tol: 1e-9,
            step_tol: 1e-10,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && [
                self.initial_lambda,
                self.lambda_up,
                self.lambda_down,
                self.max_lambda,
                self.rel_cost_tol,
                self.step_tol,
            ]
            .iter()
            .all(|x| x.is_finite() && *x > 0.0)
            && self.lambda_up > 1.0
            && self.lambda_down < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("solver parameters must be positive with lambda_up > 1 > lambda_down".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub values: Values,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost at the start and after every accepted step.
    pub cost_trace: Vec<f64>,
}

pub fn solve(state: &FactorGraphState, init: Values, params: &SolverParams) -> Result<SolveReport> {
    params.validate()?;
    state.check_values(&init)?;
    let layout = state.layout();
    let mut values = init;
    let mut cost = state.total_cost(&values)?;
    let mut trace = vec![cost];
    let mut lambda = params.initial_lambda;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iters {
        iterations += 1;
        let (r, j) = state.linearize(&values, &layout)?;
        let a = j.tr_mul(&j);
        let g = j.tr_mul(&r);
        let mut accepted = None;
        loop {
            let Some(step) = damped_step(&a, &g, lambda) else {
                lambda *= params.lambda_up;
                if lambda > params.max_lambda {
                    return Err(Error::SingularSystem { lambda });
                }
                continue;
            };
            if step.amax() < params.step_tol {
                converged = true;
                break;
            }
            let candidate = state.retract(&values, &layout, &step);
            let new_cost = state.total_cost(&candidate)?;
            if new_cost.is_finite() && new_cost <= cost {
                lambda = (lambda * params.lambda_down).max(1e-15);
                accepted = Some((candidate, new_cost, step.amax()));
                break;
            }
            lambda *= params.lambda_up;
            if lambda > params.max_lambda {
                // No descent direction left at any damping: a stationary point.
                converged = true;
                break;
            }
        }
        let Some((candidate, new_cost, step_max)) = accepted else {
            break;
        };
        let rel = if cost > 0.0 { (cost - new_cost) / cost } else { 0.0 };
        values = candidate;
        cost = new_cost;
        trace.push(cost);
        if rel < params.rel_cost_tol || step_max < params.step_tol || cost == 0.0 {
            converged = true;
            break;
        }
    }
    Ok(SolveReport {
        values,
        cost,
        iterations,
        converged,
        cost_trace: trace,
    })
}

fn damped_step(a: &DMatrix<f64>, g: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += lambda;
    }
    let chol = m.cholesky()?;
    let step = chol.solve(&(-g));
    step.iter().all(|x| x.is_finite()).then_some(step)
}

/// Initial contact point and force for a newly detected contact: the
/// midpoint of the closest object-sample/environment pair, and the observed
/// grasp force rotated into the world.
pub fn initialize_contact(
    rest: &Pose,
    obs: &TimestepObservation,
    object_samples: &[Vector3<f64>],
    environment: &TriangleMesh,
) -> (Vector3<f64>, Vector3<f64>) {
    let pose = object_pose_at(rest, obs);
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for p in object_samples {
        let x = pose.act(p);
        let s = environment.signed_distance(&x);
        if best.is_none_or(|(v, _)| s.value < v) {
            best = Some((s.value, (x + s.closest_point) * 0.5));
        }
    }
    let point = best.map(|(_, c)| c).unwrap_or_else(|| *pose.translation());
    (point, obs.gripper.rotate(&obs.force()))
}

/// Fills in any contact variables `state` needs that `values` lacks.
pub fn complete_values(values: &Values, state: &FactorGraphState) -> Values {
    let mut out = values.clone();
    for t in state.contact_timesteps() {
        if out.contact(t).is_err() {
            let (c, f) = initialize_contact(
                &out.rest_pose,
                &state.observations()[t],
                &state.object_samples().points,
                state.environment(),
            );
            out.insert_contact(t, c, f);
        }
    }
    out
}

/// Warm-starts from `prev`, initializing new contact variables, and re-solves.
pub fn extend_and_resolve(prev: &SolveReport, state: &FactorGraphState, params: &SolverParams) -> Result<SolveReport> {
    solve(state, complete_values(&prev.values, state), params)
}
