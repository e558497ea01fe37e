//! Runtime self-checks: distance-field sign and gradients, factor Jacobians,
//! simulator/estimator closure, and the two brute-force metric oracles.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DVector, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cloud::Frame;
use crate::error::Result;
use crate::factors::{NoiseModel, TimestepObservation};
use crate::graph::{Factor, FactorGraphState, Values};
use crate::lie::Pose;
use crate::mesh::{shapes, TriangleMesh};
use crate::metrics::add_metric;
use crate::scenario::{build_meshes, generate_scenario, GenConfig};
use crate::sim::ground_truth_contact_from_ft;
use crate::solver::solve;

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed,
        detail,
    }
}

/// Inside test by counting crossings of a ray with the triangles.
pub fn ray_parity_inside(mesh: &TriangleMesh, p: &Vector3<f64>, dir: &Vector3<f64>) -> Option<bool> {
    let mut crossings = 0;
    for f in 0..mesh.faces().len() {
        let [a, b, c] = mesh.triangle(f);
        let e1 = b - a;
        let e2 = c - a;
        let h = dir.cross(&e2);
        let det = e1.dot(&h);
        if det.abs() < 1e-14 {
            continue;
        }
        let s = p - a;
        let u = s.dot(&h) / det;
        let q = s.cross(&e1);
        let v = dir.dot(&q) / det;
        let t = e2.dot(&q) / det;
        // Hits too close to an edge are ambiguous; the caller retries.
        let margin = 1e-9;
        if t > 0.0 && u > -margin && v > -margin && u + v < 1.0 + margin {
            if u < margin || v < margin || u + v > 1.0 - margin {
                return None;
            }
            crossings += 1;
        }
    }
    Some(crossings % 2 == 1)
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_point_near(mesh: &TriangleMesh, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let b = mesh.bounds();
    let pad = 0.2 * b.extent();
    Vector3::from_fn(|i, _| rng.random_range(b.min[i] - pad[i]..b.max[i] + pad[i]))
}

/// Fraction of random points where the SDF sign matches ray parity.
pub fn sdf_sign_agreement(mesh: &TriangleMesh, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0;
    for _ in 0..n {
        let p = random_point_near(mesh, &mut rng);
        let inside = loop {
            if let Some(v) = ray_parity_inside(mesh, &p, &random_direction(&mut rng)) {
                break v;
            }
        };
        if (mesh.signed_distance(&p).value < 0.0) == inside {
            agree += 1;
        }
    }
    agree as f64 / n as f64
}

/// Largest relative gradient error against central differences (step `h`)
/// over random points with `|SDF| > 1e-3`; stencils that straddle a kink
/// (two step sizes disagree) are skipped. Returns `(worst, checked)`.
pub fn sdf_gradient_error(mesh: &TriangleMesh, n: usize, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let fd = |p: &Vector3<f64>, h: f64| {
        Vector3::from_fn(|i, _| {
            let mut e = Vector3::zeros();
            e[i] = h;
            (mesh.signed_distance(&(p + e)).value - mesh.signed_distance(&(p - e)).value) / (2.0 * h)
        })
    };
    let (mut worst, mut checked) = (0.0f64, 0);
    while checked < n {
        let p = random_point_near(mesh, &mut rng);
        let s = mesh.signed_distance(&p);
        if s.value.abs() <= 1e-3 {
            continue;
        }
        let a = fd(&p, h);
        if (a - fd(&p, 2.0 * h)).norm() > 1e-6 {
            continue;
        }
        checked += 1;
        worst = worst.max((s.gradient - a).norm() / a.norm().max(1e-12));
    }
    (worst, checked)
}

/// Random single-contact-per-step problem on an L-shaped object.
pub fn random_problem(rng: &mut ChaCha8Rng) -> (FactorGraphState, Values) {
    let object = Arc::new(shapes::l_shape(0.06, 0.04, 0.02, 0.02));
    let env = Arc::new(shapes::table(Vector3::new(0.4, 0.4, 0.05), 0.0));
    let mut pose = |rot: f64, trans: f64| {
        let xi = Vector6::from_fn(|i, _| if i < 3 { rot } else { trans } * rng.random_range(-1.0..1.0));
        Pose::exp(&xi)
    };
    let rest = pose(0.6, 0.005);
    let drift = pose(0.05, 0.002);
    let mut obs = Vec::new();
    for t in 0..3 {
        obs.push((pose(0.4, 0.0), pose(0.02, 0.001), t));
    }
    let cloud = object.sample_surface(60, rng.random()).transformed(&rest, Frame::Gripper);
    let samples = object.sample_surface(150, rng.random());
    let mut state = FactorGraphState::new(object, env, cloud, samples, NoiseModel::default()).expect("valid problem");
    let mut values = Values::new(drift.compose(&rest));
    for (g, d, t) in obs {
        let height = if t == 0 { 0.1 } else { 0.012 };
        let gripper = Pose::new(
            *g.rotation(),
            Vector3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), height),
        );
        state
            .push_observation(TimestepObservation {
                gripper,
                displacement: d,
                wrench: Vector6::from_fn(|_, _| rng.random_range(-2.0..2.0)),
                in_contact: t > 0,
            })
            .expect("valid observation");
        if t > 0 {
            let c = Vector3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.003..0.003));
            let f = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..5.0));
            values.insert_contact(t, c, f);
        }
    }
    (state, values)
}

/// Largest relative row error of the analytic Jacobian of each factor kind
/// against central differences over `states` random problems.
pub fn factor_jacobian_errors(states: usize, seed: u64) -> Result<[(String, f64, usize); 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 4];
    let mut rows = [0usize; 4];
    for _ in 0..states {
        let (state, values) = random_problem(&mut rng);
        let layout = state.layout();
        let (_, jac) = state.linearize(&values, &layout)?;
        let residual = |v: &Values| -> Result<DVector<f64>> {
            let mut parts = Vec::new();
            for &f in state.factors() {
                parts.extend(state.factor_residual(f, v)?.iter().copied());
            }
            Ok(DVector::from_vec(parts))
        };
        let fd = |h: f64| -> Result<nalgebra::DMatrix<f64>> {
            let mut m = nalgebra::DMatrix::zeros(jac.nrows(), jac.ncols());
            for k in 0..layout.dim {
                let mut step = DVector::zeros(layout.dim);
                step[k] = h;
                let rp = residual(&state.retract(&values, &layout, &step))?;
                step[k] = -h;
                let rm = residual(&state.retract(&values, &layout, &step))?;
                m.column_mut(k).copy_from(&((rp - rm) / (2.0 * h)));
            }
            Ok(m)
        };
        let a = fd(1e-6)?;
        let b = fd(2e-6)?;
        let mut row = 0;
        for &f in state.factors() {
            let (kind, len) = match f {
                Factor::GeometricConsistency => (0, state.cloud().len()),
                Factor::NonPenetration(_) => (1, state.object_samples().len()),
                Factor::ContactKinematics(_) => (2, 2),
                Factor::ForceBalance(_) => (3, 6),
            };
            for i in row..row + len {
                let scale = a.row(i).norm().max(jac.row(i).norm());
                if scale == 0.0 || (a.row(i) - b.row(i)).norm() > 1e-5 * scale {
                    continue;
                }
                rows[kind] += 1;
                worst[kind] = worst[kind].max((jac.row(i) - a.row(i)).norm() / scale);
            }
            row += len;
        }
    }
    let names = ["geometric_consistency", "non_penetration", "contact_kinematics", "force_balance"];
    Ok(std::array::from_fn(|k| (names[k].to_string(), worst[k], rows[k])))
}

/// Closure on noiseless generated scenarios: `(max H at truth, max LM
/// iterations from truth)`.
pub fn closure(per_object: usize, seed: u64) -> Result<(f64, usize)> {
    let config = GenConfig {
        seed,
        scenarios_per_object: per_object,
        ..GenConfig::default()
    }
    .noiseless();
    let (objects, env) = build_meshes(&config, Path::new("."))?;
    let env = Arc::new(env);
    let (mut max_cost, mut max_iters) = (0.0f64, 0);
    for (j, obj) in objects.into_iter().enumerate() {
        let obj = Arc::new(obj);
        for i in 0..per_object {
            let s = generate_scenario(&config, j, i, &obj, &env, "object.obj".into(), "environment.obj".into())?;
            let gt = s.ground_truth.as_ref().expect("generated scenarios carry ground truth");
            let samples = obj.sample_surface(s.estimator.object_samples, s.estimator.seed);
            let mut state = FactorGraphState::new(obj.clone(), env.clone(), s.tactile_cloud.clone(), samples, s.estimator.noise)?;
            let mut values = Values::new(gt.rest_pose);
            for (t, o) in s.observations.iter().enumerate() {
                state.push_observation(*o)?;
                if let Some(c) = gt.contacts[t] {
                    values.insert_contact(t, c.point, c.force);
                }
            }
            max_cost = max_cost.max(state.total_cost(&values)?);
            max_iters = max_iters.max(solve(&state, values, &s.estimator.solver)?.iterations);
        }
    }
    Ok((max_cost, max_iters))
}

/// Fraction of random draws where the force/torque oracle returns the
/// generating candidate.
pub fn contact_oracle_recovery(draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..draws {
        let cands: Vec<Vector3<f64>> = (0..50)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1)))
            .collect();
        let k = rng.random_range(0..cands.len());
        let f = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let tau = cands[k].cross(&f);
        if ground_truth_contact_from_ft(&f, &tau, &cands).is_ok_and(|i| i == k) {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

/// Largest difference between [`add_metric`] and a direct recomputation
/// over the same samples.
pub fn add_oracle_error(pairs: usize, seed: u64) -> Result<f64> {
    let mesh = shapes::wrench_like();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = mesh.sample_surface(1000, 7);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a = Pose::exp(&Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0)));
        let b = Pose::exp(&Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0)));
        let direct = samples
            .points
            .iter()
            .map(|x| {
                let (ma, mb) = (a.to_homogeneous(), b.to_homogeneous());
                let pa = ma.fixed_view::<3, 3>(0, 0) * x + ma.fixed_view::<3, 1>(0, 3);
                let pb = mb.fixed_view::<3, 3>(0, 0) * x + mb.fixed_view::<3, 1>(0, 3);
                (pa - pb).norm()
            })
            .sum::<f64>()
            / 1000.0;
        worst = worst.max((add_metric(&a, &b, &mesh, 1000, 7)? - direct).abs());
    }
    Ok(worst)
}

/// Runs every check at a size suited to the command line.
pub fn run_all() -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let cube = shapes::box_mesh(Vector3::repeat(1.0));
    let wrench = shapes::wrench_like();
    for (name, mesh) in [("cube", &cube), ("wrench", &wrench)] {
        let a = sdf_sign_agreement(mesh, 1000, 1);
        out.push(outcome(&format!("sdf_sign_{name}"), a == 1.0, format!("agreement {a:.4}")));
        let (e, n) = sdf_gradient_error(mesh, 100, 2);
        out.push(outcome(&format!("sdf_gradient_{name}"), e <= 1e-4, format!("max rel err {e:.2e} over {n}")));
    }
    match factor_jacobian_errors(10, 3) {
        Ok(errs) => {
            for (name, e, n) in errs {
                out.push(outcome(&format!("jacobian_{name}"), e <= 1e-4 && n > 0, format!("max rel err {e:.2e} over {n} rows")));
            }
        }
        Err(e) => out.push(outcome("jacobians", false, e.to_string())),
    }
    match closure(2, 4) {
        Ok((h, it)) => out.push(outcome("closure", h <= 1e-8 && it <= 2, format!("max H {h:.2e}, max iterations {it}"))),
        Err(e) => out.push(outcome("closure", false, e.to_string())),
    }
    let r = contact_oracle_recovery(1000, 5);
    out.push(outcome("contact_oracle", r == 1.0, format!("recovered {r:.4}")));
    match add_oracle_error(50, 6) {
        Ok(e) => out.push(outcome("add_oracle", e <= 1e-12, format!("max diff {e:.2e}"))),
        Err(e) => out.push(outcome("add_oracle", false, e.to_string())),
    }
    out
}
