//! Shared fixtures for the benchmarks.

use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use tacgraph_core::graph::{FactorGraphState, Values};
use tacgraph_core::mesh::shapes;
use tacgraph_core::scenario::{build_meshes, generate_scenario, GenConfig, Scenario};
use tacgraph_core::TriangleMesh;

pub fn wrench_mesh() -> TriangleMesh {
    shapes::wrench_like()
}

pub fn query_points(n: usize) -> Vec<Vector3<f64>> {
    // Deterministic spread over the wrench bounds without an RNG dependency.
    (0..n)
        .map(|i| {
            let f = i as f64;
            Vector3::new((f * 0.618).fract() - 0.5, (f * 0.414).fract() - 0.5, (f * 0.732).fract() - 0.5) * 0.2
        })
        .collect()
}

/// One generated L-shape scenario with its meshes.
pub fn l_shape_scenario() -> (Scenario, Arc<TriangleMesh>, Arc<TriangleMesh>) {
    let config = GenConfig {
        scenarios_per_object: 1,
        ..GenConfig::default()
    };
    let (objects, env) = build_meshes(&config, Path::new(".")).expect("default meshes build");
    let j = config.objects.iter().position(|o| o.name == "l_shape").expect("l_shape configured");
    let object = objects.into_iter().nth(j).expect("mesh per object");
    let s = generate_scenario(&config, j, 0, &object, &env, "l_shape.obj".into(), "environment.obj".into())
        .expect("scenario generates");
    (s, Arc::new(object), Arc::new(env))
}

/// Factor graph of a scenario evaluated at its ground truth.
pub fn graph_at_truth(s: &Scenario, object: Arc<TriangleMesh>, env: Arc<TriangleMesh>) -> (FactorGraphState, Values) {
    let gt = s.ground_truth.as_ref().expect("generated scenario has ground truth");
    let samples = object.sample_surface(s.estimator.object_samples, s.estimator.seed);
    let mut state = FactorGraphState::new(object, env, s.tactile_cloud.clone(), samples, s.estimator.noise)
        .expect("valid problem");
    let mut values = Values::new(gt.rest_pose);
    for (t, o) in s.observations.iter().enumerate() {
        state.push_observation(*o).expect("valid observation");
        if let Some(c) = gt.contacts[t] {
            values.insert_contact(t, c.point, c.force);
        }
    }
    (state, values)
}
