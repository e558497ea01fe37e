//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers to run a subset:
//! `cargo test --release --test acceptance -- 3 5`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tacgraph_core::factors::{NoiseModel, TimestepObservation};
use tacgraph_core::graph::{Factor, FactorGraphState, Values};
use tacgraph_core::inference::{grasp_orientation, run_icp_baseline, run_tacgraph, sample_initial_particles, GraspPrior};
use tacgraph_core::mesh::obj::to_obj_string;
use tacgraph_core::mesh::shapes;
use tacgraph_core::metrics::add_metric;
use tacgraph_core::scenario::{build_meshes, generate_scenario, CloudMode, GenConfig, ObjectSpec, Scenario, ShapeSpec};
use tacgraph_core::sim::{ground_truth_contact_from_ft, ContactSimulator, SimParams};
use tacgraph_core::solver::solve;
use tacgraph_core::{load_mesh, Frame, Pose, TriangleMesh};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let criteria: [(&str, Option<f64>, Check); 9] = [
        ("SDF sign and gradient", Some(10.0), sdf_correctness),
        ("factor Jacobians", Some(30.0), factor_jacobians),
        ("simulator-estimator closure", Some(60.0), closure),
        ("noiseless recovery", Some(300.0), noiseless_recovery),
        ("ambiguity resolution", None, ambiguity_resolution),
        ("tactile-only ordering vs ICP", Some(1200.0), tactile_ordering),
        ("ground-truth contact oracle", Some(5.0), contact_oracle),
        ("ADD brute force", None, add_brute_force),
        ("pipeline determinism", None, determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let out = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let in_time = limit.is_none_or(|l| secs < l);
        let passed = out.passed && in_time;
        if !passed {
            failed += 1;
        }
        let budget = limit.map_or(String::new(), |l| format!(" (limit {l:.0}s)"));
        println!(
            "{} criterion {n}: {name}: {}; {secs:.1}s{budget}",
            if passed { "PASS" } else { "FAIL" },
            out.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        if (0.1..=1.0).contains(&v.norm()) {
            return v.normalize();
        }
    }
}

fn random_pose(rng: &mut ChaCha8Rng, rot: f64, trans: f64) -> Pose {
    Pose::exp(&Vector6::from_fn(|i, _| if i < 3 { rot } else { trans } * rng.random_range(-1.0..1.0)))
}

// ---- 1 ----

/// Möller–Trumbore: `(t, u, v)` of the ray hit, if any.
fn ray_triangle(o: &Vector3<f64>, d: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> Option<(f64, f64, f64)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-15 {
        return None;
    }
    let s = o - tri[0];
    let u = s.dot(&p) / det;
    let q = s.cross(&e1);
    let v = d.dot(&q) / det;
    let t = e2.dot(&q) / det;
    Some((t, u, v))
}

/// Inside by crossing parity; rays grazing an edge or vertex are redrawn.
fn parity_inside(mesh: &TriangleMesh, p: &Vector3<f64>, rng: &mut ChaCha8Rng) -> bool {
    'retry: loop {
        let d = random_unit(rng);
        let mut crossings = 0;
        for f in 0..mesh.faces().len() {
            let Some((t, u, v)) = ray_triangle(p, &d, &mesh.triangle(f)) else {
                continue;
            };
            let eps = 1e-9;
            if t <= 0.0 || u < -eps || v < -eps || u + v > 1.0 + eps {
                continue;
            }
            if u < eps || v < eps || u + v > 1.0 - eps || t < eps {
                continue 'retry;
            }
            crossings += 1;
        }
        return crossings % 2 == 1;
    }
}

fn sdf_value(mesh: &TriangleMesh, p: &Vector3<f64>) -> f64 {
    mesh.signed_distance(p).value
}

fn central_gradient(mesh: &TriangleMesh, p: &Vector3<f64>, h: f64) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        let mut e = Vector3::zeros();
        e[i] = h;
        (sdf_value(mesh, &(p + e)) - sdf_value(mesh, &(p - e))) / (2.0 * h)
    })
}

fn check_mesh(mesh: &TriangleMesh, seed: u64) -> (usize, usize, f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = mesh.bounds();
    let pad = 0.25 * b.extent();
    let (mut agree, mut checked, mut worst) = (0, 0, 0.0f64);
    let n = 1000;
    for _ in 0..n {
        let p = Vector3::from_fn(|i, _| rng.random_range(b.min[i] - pad[i]..b.max[i] + pad[i]));
        let s = mesh.signed_distance(&p);
        if (s.value < 0.0) == parity_inside(mesh, &p, &mut rng) {
            agree += 1;
        }
        // Skip stencils that straddle a non-smooth locus of the field (the
        // two step sizes then disagree) and points on the surface itself.
        let h = 1e-6;
        let g1 = central_gradient(mesh, &p, h);
        let g2 = central_gradient(mesh, &p, 2.0 * h);
        if s.value.abs() < 1e-5 || (g1 - g2).norm() > 1e-6 {
            continue;
        }
        checked += 1;
        worst = worst.max((s.gradient - g1).norm() / g1.norm());
    }
    (agree, checked, worst, n)
}

fn sdf_correctness() -> Outcome {
    let cube = shapes::box_mesh(Vector3::repeat(1.0));
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("wrench.obj");
    std::fs::write(&path, to_obj_string(&shapes::wrench_like())).expect("write wrench");
    let wrench = load_mesh(&path).expect("load wrench");
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, mesh, seed) in [("cube", &cube, 1), ("wrench", &wrench, 2)] {
        let (agree, checked, worst, n) = check_mesh(mesh, seed);
        passed &= agree == n && worst <= 1e-4 && checked * 10 >= n * 9;
        parts.push(format!("{name} sign {agree}/{n}, grad max rel err {worst:.1e} over {checked}"));
    }
    outcome(passed, parts.join(", "))
}

// ---- 2 ----

/// Random L-shape problem with contact at t = 1, 2 and penetrating samples.
fn random_state(rng: &mut ChaCha8Rng) -> (FactorGraphState, Values) {
    let object = Arc::new(shapes::l_shape(0.06, 0.04, 0.02, 0.02));
    let env = Arc::new(shapes::table(Vector3::new(0.4, 0.4, 0.05), 0.0));
    let rest = random_pose(rng, 0.6, 0.005);
    let cloud = object.sample_surface(60, rng.random()).transformed(&rest, Frame::Gripper);
    let samples = object.sample_surface(150, rng.random());
    let mut state = FactorGraphState::new(object, env, cloud, samples, NoiseModel::default()).expect("valid state");
    let mut values = Values::new(random_pose(rng, 0.05, 0.002).compose(&rest));
    for t in 0..3 {
        let height = if t == 0 { 0.1 } else { 0.012 };
        let gripper = Pose::new(
            *random_pose(rng, 0.4, 0.0).rotation(),
            Vector3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), height),
        );
        state
            .push_observation(TimestepObservation {
                gripper,
                displacement: random_pose(rng, 0.02, 0.001),
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

fn factor_kind(f: Factor) -> usize {
    match f {
        Factor::GeometricConsistency => 0,
        Factor::NonPenetration(_) => 1,
        Factor::ContactKinematics(_) => 2,
        Factor::ForceBalance(_) => 3,
    }
}

fn factor_jacobians() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst = [0.0f64; 4];
    let mut rows = [0usize; 4];
    let mut skipped = [0usize; 4];
    let mut covered = [0usize; 4];
    let states = 50;
    for _ in 0..states {
        // Redraw until some object sample penetrates so that every factor is active.
        let (state, values) = loop {
            let (state, values) = random_state(&mut rng);
            let active = (1..3).any(|t| {
                let r = state.factor_residual(Factor::NonPenetration(t), &values).expect("residual");
                r.iter().any(|x| *x != 0.0)
            });
            if active {
                break (state, values);
            }
        };
        let layout = state.layout();
        let (_, jac) = state.linearize(&values, &layout).expect("linearize");
        let mut offset = 0;
        let mut seen = [false; 4];
        for &f in state.factors() {
            let r0 = state.factor_residual(f, &values).expect("residual");
            let fd = |h: f64| {
                let mut m = DMatrix::zeros(r0.len(), layout.dim);
                for k in 0..layout.dim {
                    let mut step = DVector::zeros(layout.dim);
                    step[k] = h;
                    let rp = state.factor_residual(f, &state.retract(&values, &layout, &step)).expect("residual");
                    step[k] = -h;
                    let rm = state.factor_residual(f, &state.retract(&values, &layout, &step)).expect("residual");
                    m.column_mut(k).copy_from(&((rp - rm) / (2.0 * h)));
                }
                m
            };
            let (a, b) = (fd(1e-6), fd(2e-6));
            let kind = factor_kind(f);
            for i in 0..r0.len() {
                let analytic = jac.row(offset + i);
                let scale = a.row(i).norm().max(analytic.norm());
                if scale == 0.0 {
                    continue;
                }
                // Stencil crosses a kink of a distance field.
                if (a.row(i) - b.row(i)).norm() > 1e-5 * scale {
                    skipped[kind] += 1;
                    continue;
                }
                rows[kind] += 1;
                seen[kind] = true;
                worst[kind] = worst[kind].max((analytic - a.row(i)).norm() / scale);
            }
            offset += r0.len();
        }
        for k in 0..4 {
            covered[k] += seen[k] as usize;
        }
    }
    let names = ["h1", "h2", "h3", "h4"];
    let passed = (0..4).all(|k| worst[k] <= 1e-4 && covered[k] == states && skipped[k] * 20 < rows[k]);
    let detail = (0..4)
        .map(|k| format!("{} {:.1e} ({} rows, {} states, {} kink rows skipped)", names[k], worst[k], rows[k], covered[k], skipped[k]))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(passed, detail)
}

// ---- 3 ----

/// Total cost recomputed from raw distance queries.
fn oracle_cost(state: &FactorGraphState, v: &Values) -> f64 {
    let n = state.noise();
    let inv = v.rest_pose.inverse();
    let mut h: f64 = state
        .cloud()
        .points
        .iter()
        .map(|p| (sdf_value(state.object(), &inv.act(p)) / n.sigma_h1).powi(2))
        .sum();
    for (t, o) in state.observations().iter().enumerate() {
        let pose = o.gripper.compose(&o.displacement).compose(&v.rest_pose);
        for p in &state.object_samples().points {
            h += (sdf_value(state.environment(), &pose.act(p)).min(0.0) / n.sigma_h2).powi(2);
        }
        if o.in_contact {
            let (c, f) = (v.contact_points[&t], v.contact_forces[&t]);
            h += (sdf_value(state.environment(), &c) / n.sigma_h3).powi(2);
            h += (sdf_value(state.object(), &pose.inverse().act(&c)) / n.sigma_h3).powi(2);
            let ginv = o.gripper.inverse();
            let fg = ginv.rotate(&f);
            let tau = ginv.act(&c).cross(&fg);
            for k in 0..3 {
                h += ((fg[k] - o.wrench[k]) / n.sigma_h4_force).powi(2);
                h += ((tau[k] - o.wrench[k + 3]) / n.sigma_h4_torque).powi(2);
            }
        }
    }
    h
}

fn generate(config: &GenConfig, count: usize) -> Vec<(Scenario, Arc<TriangleMesh>, Arc<TriangleMesh>)> {
    let (objects, env) = build_meshes(config, Path::new(".")).expect("meshes");
    let objects: Vec<Arc<TriangleMesh>> = objects.into_iter().map(Arc::new).collect();
    let env = Arc::new(env);
    let jobs: Vec<(usize, usize)> = (0..objects.len())
        .flat_map(|j| (0..config.scenarios_per_object).map(move |i| (j, i)))
        .take(count)
        .collect();
    jobs.par_iter()
        .map(|&(j, i)| {
            let s = generate_scenario(config, j, i, &objects[j], &env, "o.obj".into(), "e.obj".into()).expect("scenario");
            (s, objects[j].clone(), env.clone())
        })
        .collect()
}

fn state_at_truth(s: &Scenario, object: Arc<TriangleMesh>, env: Arc<TriangleMesh>) -> (FactorGraphState, Values) {
    let gt = s.ground_truth.as_ref().expect("ground truth");
    let samples = object.sample_surface(s.estimator.object_samples, s.estimator.seed);
    let mut state = FactorGraphState::new(object, env, s.tactile_cloud.clone(), samples, s.estimator.noise).expect("state");
    let mut values = Values::new(gt.rest_pose);
    for (t, o) in s.observations.iter().enumerate() {
        state.push_observation(*o).expect("observation");
        if let Some(c) = gt.contacts[t] {
            values.insert_contact(t, c.point, c.force);
        }
    }
    (state, values)
}

fn closure() -> Outcome {
    let config = GenConfig {
        seed: 3,
        scenarios_per_object: 7,
        ..GenConfig::default()
    }
    .noiseless();
    let scenarios = generate(&config, 20);
    let (mut max_cost, mut max_oracle, mut max_iters, mut contacts) = (0.0f64, 0.0f64, 0, 0);
    for (s, object, env) in &scenarios {
        let (state, values) = state_at_truth(s, object.clone(), env.clone());
        contacts += state.contact_timesteps().len();
        max_cost = max_cost.max(state.total_cost(&values).expect("cost"));
        max_oracle = max_oracle.max(oracle_cost(&state, &values));
        max_iters = max_iters.max(solve(&state, values, &s.estimator.solver).expect("solve").iterations);
    }
    outcome(
        scenarios.len() == 20 && contacts > 0 && max_cost <= 1e-8 && max_oracle <= 1e-8 && max_iters <= 2,
        format!(
            "{} scenarios, {contacts} contact steps, max H {max_cost:.1e} (oracle {max_oracle:.1e}), max LM iterations {max_iters}",
            scenarios.len()
        ),
    )
}

// ---- 4 ----

fn noiseless_recovery() -> Outcome {
    let mut config = GenConfig {
        seed: 4,
        scenarios_per_object: 20,
        ..GenConfig::default()
    }
    .noiseless();
    config.objects.retain(|o| o.name == "l_shape");
    config.grasp.yaw_on_sweep = true;
    let scenarios = generate(&config, 20);
    type Row = (f64, f64, f64, f64, f64, usize, bool);
    let rows: Vec<Row> = scenarios
        .par_iter()
        .map(|(s, object, env)| {
            let gt = s.ground_truth.as_ref().expect("ground truth");
            let problem = s.problem(object.clone(), env.clone(), CloudMode::Tactile);
            // Seed orientations swept about the grasp axis; one must be the truth.
            let e = &s.estimator;
            let seed_angle = (0..e.sweep_angles)
                .map(|j| {
                    let psi = std::f64::consts::TAU * j as f64 / e.sweep_angles as f64;
                    grasp_orientation(&s.grasp_prior.object_axis, &e.grasp_axis, psi).angle_to(gt.rest_pose.rotation())
                })
                .fold(f64::INFINITY, f64::min);
            let particles = sample_initial_particles(&problem.cloud, object, &problem.grasp_prior, e.particles, e).expect("particles");
            let refined_angle = particles
                .iter()
                .map(|p| p.pose.rotation().angle_to(gt.rest_pose.rotation()))
                .fold(f64::INFINITY, f64::min);
            let r = run_tacgraph(&problem, &s.estimator).expect("estimate");
            let add = r
                .object_poses
                .iter()
                .zip(&gt.object_poses)
                .map(|(e, t)| add_metric(e, t, object, 1000, 0xadd).expect("add"))
                .fold(0.0, f64::max);
            let (mut dc, mut df, mut flags_match) = (0.0f64, 0.0f64, true);
            for (e, t) in r.contacts.iter().zip(&gt.contacts) {
                match (e, t) {
                    (Some(e), Some(t)) => {
                        dc = dc.max((e.point - t.point).norm());
                        df = df.max((e.force - t.force).norm());
                    }
                    (None, None) => {}
                    _ => flags_match = false,
                }
            }
            (add, dc, df, seed_angle, refined_angle, particles.len(), flags_match)
        })
        .collect();
    let max = |k: fn(&Row) -> f64| rows.iter().map(k).fold(0.0, f64::max);
    let (add, dc, df, seed_angle, refined) = (max(|r| r.0), max(|r| r.1), max(|r| r.2), max(|r| r.3), max(|r| r.4));
    let k8 = rows.iter().all(|r| r.5 == 8);
    let flags = rows.iter().all(|r| r.6);
    outcome(
        rows.len() == 20 && add <= 1e-4 && dc <= 1e-3 && df <= 1e-2 && seed_angle <= 1e-9 && k8 && flags,
        format!(
            "{} scenarios, max ADD {:.2e} m, max contact err {dc:.2e} m, max force err {df:.2e} N, K=8 {k8}, \
             truth-to-nearest-seed angle {seed_angle:.1e} rad (after ICP {refined:.1e}), contact flags match {flags}",
            rows.len(),
            add
        ),
    )
}

// ---- 5 ----

/// L-shape pinched on its long leg with the short leg hanging down. The pads
/// see only the long leg's two flat faces, which a half turn about the
/// gripper x axis maps onto each other; that twin has the short leg up.
fn ambiguity_config() -> GenConfig {
    let mut config = GenConfig {
        seed: 5,
        scenarios_per_object: 1,
        objects: vec![ObjectSpec {
            name: "l_shape".into(),
            shape: ShapeSpec::LShape { long: 0.06, short: 0.04, width: 0.02, thickness: 0.02 },
            grasp: GraspPrior {
                object_axis: -Vector3::z(),
                center: Vector3::new(0.010, -0.005, 0.0),
            },
        }],
        ..GenConfig::default()
    };
    config.grasp.yaw_jitter_deg = 0.0;
    config.grasp.offset = 0.0;
    config.estimator.canonical_axes = vec![Vector3::z(), -Vector3::z()];
    config.estimator.sweep_angles = 1;
    config.estimator.particles = 2;
    config
}

fn ambiguity_resolution() -> Outcome {
    let config = ambiguity_config();
    let run = || {
        let (s, object, env) = generate(&config, 1).pop().expect("scenario");
        let problem = s.problem(object.clone(), env, CloudMode::Tactile);
        let r = run_tacgraph(&problem, &s.estimator).expect("estimate");
        (s, object, r)
    };
    let (s, object, r) = run();
    let (_, _, again) = run();
    let gt = s.ground_truth.as_ref().expect("ground truth");
    let first_contact = gt.contacts.iter().position(Option::is_some);
    let w = |t: usize, id: usize| r.trace[t][id].weight;
    // The correct particle is the one whose seed orientation matches the truth.
    let particles = sample_initial_particles(&s.cloud(CloudMode::Tactile), &object, &s.grasp_prior, 2, &s.estimator).expect("particles");
    let angles: Vec<f64> = particles.iter().map(|p| p.pose.rotation().angle_to(gt.rest_pose.rotation())).collect();
    let correct = if angles[0] < angles[1] { 0 } else { 1 };
    let wrong = 1 - correct;
    let symmetric = (angles[wrong] - std::f64::consts::PI).abs() < 0.5 && angles[correct] < 0.5;
    let tie = (w(0, 0) - w(0, 1)).abs() / w(0, 0).max(w(0, 1));
    let ratio = w(2, wrong) / w(2, correct);
    let add = add_metric(&r.rest_pose, &gt.rest_pose, &object, 1000, 0xadd).expect("add");
    let costs: Vec<String> = r
        .trace
        .iter()
        .map(|row| format!("{:.3}/{:.3}", row[correct].cost.unwrap_or(f64::NAN), row[wrong].cost.unwrap_or(f64::NAN)))
        .collect();
    outcome(
        symmetric && first_contact == Some(1) && tie <= 0.05 && ratio < 0.01 && r.selected == correct && r == again,
        format!(
            "seed angles to truth {:.2}/{:.2} rad, first contact {first_contact:?}, t=0 weight gap {tie:.2e}, wrong/correct weight after 2nd poke {ratio:.2e}, costs correct/wrong per step [{}], \
             selected correct {}, ADD {:.2} mm, deterministic {}",
            angles[correct],
            angles[wrong],
            costs.join(" "),
            r.selected == correct,
            add * 1e3,
            r == again
        ),
    )
}

// ---- 6 ----

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn tactile_ordering() -> Outcome {
    let config = GenConfig {
        seed: 6,
        scenarios_per_object: 20,
        ..GenConfig::default()
    };
    let scenarios = generate(&config, usize::MAX);
    let adds: Vec<(String, f64, f64)> = scenarios
        .par_iter()
        .map(|(s, object, env)| {
            let gt = s.ground_truth.as_ref().expect("ground truth");
            let problem = s.problem(object.clone(), env.clone(), CloudMode::Tactile);
            let mean_add = |poses: &[Pose]| {
                poses
                    .iter()
                    .zip(&gt.object_poses)
                    .map(|(e, t)| add_metric(e, t, object, 1000, 0xadd).expect("add"))
                    .sum::<f64>()
                    / poses.len() as f64
            };
            let tg = run_tacgraph(&problem, &s.estimator).expect("tacgraph");
            let icp = run_icp_baseline(&problem, &s.estimator).expect("icp");
            (s.object.clone(), mean_add(&tg.object_poses), mean_add(&icp.object_poses))
        })
        .collect();
    let mut by_object: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (o, tg, icp) in adds {
        let e = by_object.entry(o).or_default();
        e.0.push(tg);
        e.1.push(icp);
    }
    let mut passed = by_object.len() == 3;
    let mut parts = Vec::new();
    for (o, (tg, icp)) in by_object {
        let n = tg.len();
        let (mt, mi) = (median(tg), median(icp));
        passed &= n == 20 && mt <= mi && mt <= 5e-3;
        parts.push(format!("{o} ({n}) median ADD tacgraph {:.2} mm vs icp {:.2} mm", mt * 1e3, mi * 1e3));
    }
    outcome(passed, parts.join(", "))
}

// ---- 7 ----

fn contact_oracle() -> Outcome {
    let object = shapes::wrench_like();
    let env = shapes::table(Vector3::new(0.4, 0.4, 0.05), 0.0);
    let sim = ContactSimulator::new(&object, &env, SimParams::default()).expect("simulator");
    let candidates = sim.candidates();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pose = random_pose(&mut rng, 3.0, 0.05);
    let world: Vec<Vector3<f64>> = candidates.iter().map(|c| pose.act(c)).collect();
    let draws = 1000;
    let mut exact = 0;
    for _ in 0..draws {
        let k = rng.random_range(0..world.len());
        // Redraw the force until no other candidate lies on its line of action.
        let f = loop {
            let f = random_unit(&mut rng) * rng.random_range(0.1..10.0);
            let dir = f.normalize();
            if world
                .iter()
                .enumerate()
                .all(|(l, c)| l == k || (c - world[k]).cross(&dir).norm() > 1e-6)
            {
                break f;
            }
        };
        let tau = world[k].cross(&f);
        if matches!(ground_truth_contact_from_ft(&f, &tau, &world), Ok(i) if i == k) {
            exact += 1;
        }
    }
    outcome(exact == draws, format!("{exact}/{draws} exact over {} candidates", world.len()))
}

// ---- 8 ----

fn add_brute_force() -> Outcome {
    let mesh = shapes::l_shape(0.06, 0.04, 0.02, 0.02);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let seed = 0xadd;
    let samples = mesh.sample_surface(1000, seed);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let a = random_pose(&mut rng, 3.0, 0.1);
        let b = random_pose(&mut rng, 3.0, 0.1);
        let (ma, mb) = (a.to_homogeneous(), b.to_homogeneous());
        let mut total = 0.0;
        for x in &samples.points {
            let xh = x.push(1.0);
            let d = (ma * xh - mb * xh).xyz();
            total += (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
        }
        let direct = total / samples.len() as f64;
        let lib = add_metric(&a, &b, &mesh, 1000, seed).expect("add");
        worst = worst.max((lib - direct).abs());
    }
    outcome(worst <= 1e-12, format!("max |difference| {worst:.1e} m over 50 pose pairs"))
}

// ---- 9 ----

fn tacgraph(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tacgraph"))
        .args(args)
        .env("TACGRAPH_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn pipeline(root: &Path, threads: &str) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let config = GenConfig {
        seed: 9,
        scenarios_per_object: 1,
        ..GenConfig::default()
    };
    let cfg = root.join("config.json");
    std::fs::write(&cfg, serde_json::to_string(&config).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let out = root.join("out");
    let s = |p: &Path| p.to_str().expect("utf-8 path").to_string();
    let scen = out.join("scenarios");
    tacgraph(&["gen", "--config", &s(&cfg), "--out", &s(&scen)], threads)?;
    let tg = out.join("tacgraph.json");
    let icp = out.join("icp.json");
    tacgraph(&["run", "--scenarios", &s(&scen), "--method", "tacgraph", "--mode", "tactile", "--out", &s(&tg)], threads)?;
    tacgraph(&["run", "--scenarios", &s(&scen), "--method", "icp", "--mode", "vision+tactile", "--out", &s(&icp)], threads)?;
    tacgraph(&["report", "--results", &s(&tg), &s(&icp), "--out", &s(&out.join("table.csv"))], threads)?;
    let mut files = BTreeMap::new();
    collect(&out, &out, &mut files).map_err(|e| e.to_string())?;
    Ok(files)
}

fn collect(base: &Path, dir: &Path, files: &mut BTreeMap<PathBuf, Vec<u8>>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect(base, &p, files)?;
        } else {
            files.insert(p.strip_prefix(base).expect("under base").to_path_buf(), std::fs::read(&p)?);
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().expect("temp dir");
    let b = tempfile::tempdir().expect("temp dir");
    let (ra, rb) = match (pipeline(a.path(), "1"), pipeline(b.path(), "3")) {
        (Ok(ra), Ok(rb)) => (ra, rb),
        (Err(e), _) | (_, Err(e)) => return outcome(false, format!("pipeline failed: {}", e.trim())),
    };
    let differing: Vec<String> = ra
        .keys()
        .chain(rb.keys())
        .filter(|k| ra.get(*k) != rb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let bytes: usize = ra.values().map(Vec::len).sum();
    outcome(
        differing.is_empty() && ra.len() >= 7,
        if differing.is_empty() {
            format!("{} files, {bytes} bytes identical (1 vs 3 worker threads)", ra.len())
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    )
}
