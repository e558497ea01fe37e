//! The MAP problem: variables, active factors and the total whitened cost.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::{Frame, PointCloud};
use crate::error::{Error, Result};
use crate::factors::{
    contact_kinematics, force_balance, geometric_consistency, non_penetration, NoiseModel, TimestepObservation,
};
use crate::lie::Pose;
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VariableKey {
    RestPose,
    ContactPoint(usize),
    ContactForce(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VariableValue {
    Pose(Pose),
    Point(Vector3<f64>),
    Force(Vector3<f64>),
}

/// Current estimate of every variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Values {
    pub rest_pose: Pose,
    pub contact_points: BTreeMap<usize, Vector3<f64>>,
    pub contact_forces: BTreeMap<usize, Vector3<f64>>,
}

impl Values {
    pub fn new(rest_pose: Pose) -> Self {
        Self {
            rest_pose,
            contact_points: BTreeMap::new(),
            contact_forces: BTreeMap::new(),
        }
    }

    pub fn insert_contact(&mut self, t: usize, point: Vector3<f64>, force: Vector3<f64>) {
        self.contact_points.insert(t, point);
        self.contact_forces.insert(t, force);
    }

    pub fn get(&self, key: VariableKey) -> Option<VariableValue> {
        match key {
            VariableKey::RestPose => Some(VariableValue::Pose(self.rest_pose)),
            VariableKey::ContactPoint(t) => self.contact_points.get(&t).copied().map(VariableValue::Point),
            VariableKey::ContactForce(t) => self.contact_forces.get(&t).copied().map(VariableValue::Force),
        }
    }

    pub fn contact(&self, t: usize) -> Result<(Vector3<f64>, Vector3<f64>)> {
        match (self.contact_points.get(&t), self.contact_forces.get(&t)) {
            (Some(c), Some(f)) => Ok((*c, *f)),
            _ => Err(Error::MissingVariable(t)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Factor {
    GeometricConsistency,
    NonPenetration(usize),
    ContactKinematics(usize),
    ForceBalance(usize),
}

/// Meshes, observations and noise for one estimation problem. Geometry is
/// shared between particles through `Arc`.
#[derive(Debug, Clone)]
pub struct FactorGraphState {
    object: Arc<TriangleMesh>,
    environment: Arc<TriangleMesh>,
    cloud: PointCloud,
    object_samples: PointCloud,
    observations: Vec<TimestepObservation>,
    noise: NoiseModel,
    factors: Vec<Factor>,
}

/// Column offsets of each variable in the stacked tangent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    /// `(timestep, column of c_t)`; `f_t` follows at +3.
    pub contacts: Vec<(usize, usize)>,
    pub dim: usize,
}

impl Layout {
    pub fn contact_column(&self, t: usize) -> Option<usize> {
        self.contacts.iter().find(|(tt, _)| *tt == t).map(|(_, c)| *c)
    }
}

impl FactorGraphState {
    /// `cloud` is the observed object cloud in the t = 0 gripper frame;
    /// `object_samples` are object-frame surface samples for non-penetration.
    pub fn new(
        object: Arc<TriangleMesh>,
        environment: Arc<TriangleMesh>,
        cloud: PointCloud,
        object_samples: PointCloud,
        noise: NoiseModel,
    ) -> Result<Self> {
        cloud.expect(Frame::Gripper, "observed cloud")?;
        object_samples.expect(Frame::Object, "object samples")?;
        noise.validate()?;
        Ok(Self {
            object,
            environment,
            cloud,
            object_samples,
            observations: Vec::new(),
            noise,
            factors: vec![Factor::GeometricConsistency],
        })
    }

    /// Appends a timestep and its factors; returns the timestep index.
    pub fn push_observation(&mut self, obs: TimestepObservation) -> Result<usize> {
        obs.validate()?;
        let t = self.observations.len();
        self.observations.push(obs);
        self.factors.push(Factor::NonPenetration(t));
        if obs.in_contact {
            self.factors.push(Factor::ContactKinematics(t));
            self.factors.push(Factor::ForceBalance(t));
        }
        Ok(t)
    }

    /// Reorders factors; the cost is a sum, so order only affects rounding.
    pub fn with_factor_order(mut self, order: impl FnOnce(&mut Vec<Factor>)) -> Self {
        order(&mut self.factors);
        self
    }

    pub fn object(&self) -> &Arc<TriangleMesh> {
        &self.object
    }

    pub fn environment(&self) -> &Arc<TriangleMesh> {
        &self.environment
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn object_samples(&self) -> &PointCloud {
        &self.object_samples
    }

    pub fn observations(&self) -> &[TimestepObservation] {
        &self.observations
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn contact_timesteps(&self) -> Vec<usize> {
        self.observations
            .iter()
            .enumerate()
            .filter(|(_, o)| o.in_contact)
            .map(|(t, _)| t)
            .collect()
    }

    pub fn layout(&self) -> Layout {
        let contacts: Vec<_> = self
            .contact_timesteps()
            .into_iter()
            .enumerate()
            .map(|(k, t)| (t, 6 + 6 * k))
            .collect();
        let dim = 6 + 6 * contacts.len();
        Layout { contacts, dim }
    }

    pub fn check_values(&self, values: &Values) -> Result<()> {
        for t in self.contact_timesteps() {
            values.contact(t)?;
        }
        Ok(())
    }

    /// Whitened residual of a single factor.
    pub fn factor_residual(&self, factor: Factor, values: &Values) -> Result<DVector<f64>> {
        let n = &self.noise;
        Ok(match factor {
            Factor::GeometricConsistency => {
                geometric_consistency(&values.rest_pose, &self.cloud.points, &self.object).residual / n.sigma_h1
            }
            Factor::NonPenetration(t) => {
                non_penetration(&values.rest_pose, &self.observations[t], &self.object_samples.points, &self.environment)
                    .residual
                    / n.sigma_h2
            }
            Factor::ContactKinematics(t) => {
                let (c, _) = values.contact(t)?;
                let e = contact_kinematics(&values.rest_pose, &c, &self.observations[t], &self.environment, &self.object);
                DVector::from_column_slice((e.residual / n.sigma_h3).as_slice())
            }
            Factor::ForceBalance(t) => {
                let (c, f) = values.contact(t)?;
                let e = force_balance(&c, &f, &self.observations[t]);
                DVector::from_column_slice(e.residual.component_div(&n.h4_sigmas()).as_slice())
            }
        })
    }

    /// Whitened squared norm per factor, in factor order.
    pub fn factor_costs(&self, values: &Values) -> Result<Vec<(Factor, f64)>> {
        self.factors
            .iter()
            .map(|&f| Ok((f, self.factor_residual(f, values)?.norm_squared())))
            .collect()
    }

    /// Total cost `H`: the sum of whitened squared residuals.
    pub fn total_cost(&self, values: &Values) -> Result<f64> {
        self.check_values(values)?;
        Ok(self.factor_costs(values)?.iter().map(|(_, c)| c).sum())
    }

    pub fn residual_dim(&self) -> usize {
        self.factors
            .iter()
            .map(|f| match f {
                Factor::GeometricConsistency => self.cloud.len(),
                Factor::NonPenetration(_) => self.object_samples.len(),
                Factor::ContactKinematics(_) => 2,
                Factor::ForceBalance(_) => 6,
            })
            .sum()
    }

    /// Whitened residual stack and its Jacobian in the tangent layout.
    pub fn linearize(&self, values: &Values, layout: &Layout) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_values(values)?;
        let m = self.residual_dim();
        let mut r = DVector::zeros(m);
        let mut j = DMatrix::zeros(m, layout.dim);
        let n = &self.noise;
        let mut row = 0;
        let col_of = |t: usize| layout.contact_column(t).ok_or(Error::MissingVariable(t));
        for &factor in &self.factors {
            match factor {
                Factor::GeometricConsistency => {
                    let e = geometric_consistency(&values.rest_pose, &self.cloud.points, &self.object);
                    let k = e.residual.len();
                    r.rows_mut(row, k).copy_from(&(e.residual / n.sigma_h1));
                    j.view_mut((row, 0), (k, 6)).copy_from(&(e.jacobian / n.sigma_h1));
                    row += k;
                }
                Factor::NonPenetration(t) => {
                    let e = non_penetration(
                        &values.rest_pose,
                        &self.observations[t],
                        &self.object_samples.points,
                        &self.environment,
                    );
                    let k = e.residual.len();
                    r.rows_mut(row, k).copy_from(&(e.residual / n.sigma_h2));
                    j.view_mut((row, 0), (k, 6)).copy_from(&(e.jacobian / n.sigma_h2));
                    row += k;
                }
                Factor::ContactKinematics(t) => {
                    let (c, _) = values.contact(t)?;
                    let col = col_of(t)?;
                    let e = contact_kinematics(&values.rest_pose, &c, &self.observations[t], &self.environment, &self.object);
                    let s = 1.0 / n.sigma_h3;
                    r.rows_mut(row, 2).copy_from(&(e.residual * s));
                    j.view_mut((row, 0), (2, 6)).copy_from(&(e.d_rest * s));
                    j.view_mut((row, col), (2, 3)).copy_from(&(e.d_point * s));
                    row += 2;
                }
                Factor::ForceBalance(t) => {
                    let (c, f) = values.contact(t)?;
                    let col = col_of(t)?;
                    let e = force_balance(&c, &f, &self.observations[t]);
                    let sig = n.h4_sigmas();
                    for i in 0..6 {
                        let s = 1.0 / sig[i];
                        r[row + i] = e.residual[i] * s;
                        for k in 0..3 {
                            j[(row + i, col + k)] = e.d_point[(i, k)] * s;
                            j[(row + i, col + 3 + k)] = e.d_force[(i, k)] * s;
                        }
                    }
                    row += 6;
                }
            }
        }
        debug_assert_eq!(row, m);
        Ok((r, j))
    }

    /// Applies a tangent step: right perturbation on the pose, additive on vectors.
    pub fn retract(&self, values: &Values, layout: &Layout, step: &DVector<f64>) -> Values {
        let xi = step.fixed_rows::<6>(0).into_owned();
        let mut out = Values::new(values.rest_pose.retract(&xi));
        for &(t, col) in &layout.contacts {
            let c = values.contact_points[&t] + step.fixed_rows::<3>(col);
            let f = values.contact_forces[&t] + step.fixed_rows::<3>(col + 3);
            out.insert_contact(t, c, f);
        }
        out
    }
}
