//! Evaluation metrics and their aggregation into result tables.
//!
//! Everything is stored in SI units; millimetres appear only in the CSV.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{EstimationResult, ParticleSummary};
use crate::lie::Pose;
use crate::mesh::TriangleMesh;
use crate::scenario::{CloudMode, Scenario, SCHEMA_VERSION};

/// Seed of the fixed ADD sample set.
pub const ADD_SEED: u64 = 0xadd;
pub const ADD_SAMPLES: usize = 1000;

/// Mean distance between `est · x` and `truth · x` over `n` seeded surface
/// samples `x` of `mesh`.
pub fn add_metric(est: &Pose, truth: &Pose, mesh: &TriangleMesh, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("ADD needs at least one sample".into()));
    }
    let samples = mesh.sample_surface(n, seed);
    let sum: f64 = samples.points.iter().map(|x| (est.act(x) - truth.act(x)).norm()).sum();
    Ok(sum / n as f64)
}

/// `(‖ĉ − c*‖, ‖f̂ − f*‖)`.
pub fn contact_metrics(
    est_point: &Vector3<f64>,
    est_force: &Vector3<f64>,
    true_point: &Vector3<f64>,
    true_force: &Vector3<f64>,
) -> (f64, f64) {
    ((est_point - true_point).norm(), (est_force - true_force).norm())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioMetrics {
    /// ADD averaged over all timesteps (m).
    pub add: f64,
    /// ADD of the final timestep (m).
    pub add_final: f64,
    /// Per contact timestep where both truth and estimate exist (m).
    pub contact_point_errors: Vec<f64>,
    /// Same timesteps (N).
    pub force_errors: Vec<f64>,
    /// True contacts the estimator did not flag.
    pub missed_contacts: usize,
    /// Flagged contacts without a true contact.
    pub spurious_contacts: usize,
}

pub fn evaluate(result: &EstimationResult, scenario: &Scenario, mesh: &TriangleMesh) -> Result<ScenarioMetrics> {
    let gt = scenario
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("scenario {} has no ground truth", scenario.id)))?;
    if result.object_poses.len() != gt.object_poses.len() {
        return Err(Error::InvalidInput("estimate and ground truth lengths differ".into()));
    }
    let adds = result
        .object_poses
        .iter()
        .zip(&gt.object_poses)
        .map(|(e, t)| add_metric(e, t, mesh, ADD_SAMPLES, ADD_SEED))
        .collect::<Result<Vec<_>>>()?;
    let mut m = ScenarioMetrics {
        add: adds.iter().sum::<f64>() / adds.len() as f64,
        add_final: *adds.last().expect("non-empty"),
        contact_point_errors: Vec::new(),
        force_errors: Vec::new(),
        missed_contacts: 0,
        spurious_contacts: 0,
    };
    for (est, truth) in result.contacts.iter().zip(&gt.contacts) {
        match (est, truth) {
            (Some(e), Some(t)) => {
                let (dc, df) = contact_metrics(&e.point, &e.force, &t.point, &t.force);
                m.contact_point_errors.push(dc);
                m.force_errors.push(df);
            }
            (None, Some(_)) => m.missed_contacts += 1,
            (Some(_), None) => m.spurious_contacts += 1,
            (None, None) => {}
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tacgraph,
    Icp,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Tacgraph => "tacgraph",
            Method::Icp => "icp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRecord {
    pub id: String,
    pub object: String,
    pub metrics: Option<ScenarioMetrics>,
    pub estimate: EstimationResult,
    /// Wall-clock seconds; only recorded on request so that outputs stay
    /// reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_s: Option<f64>,
}

/// One `run` output: every scenario under one method and cloud mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsFile {
    pub schema: u32,
    pub method: Method,
    pub mode: CloudMode,
    /// Sorted by scenario id.
    pub scenarios: Vec<ScenarioRecord>,
}

impl ResultsFile {
    pub fn new(method: Method, mode: CloudMode, mut scenarios: Vec<ScenarioRecord>) -> Self {
        scenarios.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            schema: SCHEMA_VERSION,
            method,
            mode,
            scenarios,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!("unsupported results schema {}", self.schema)));
        }
        Ok(())
    }
}

/// Mean, sample standard deviation (n − 1; zero for a single value) and median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Some(Summary { count: n, mean, std, median })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    pub mode: CloudMode,
    pub object: String,
    pub scenarios: usize,
    pub add: Option<Summary>,
    pub contact_point: Option<Summary>,
    pub force: Option<Summary>,
    pub runtime: Option<Summary>,
}

/// Groups scenario records by (method, mode, object).
pub fn aggregate(files: &[ResultsFile]) -> Result<Vec<ReportRow>> {
    type Key = (Method, CloudMode, String);
    let mut groups: BTreeMap<Key, Vec<&ScenarioRecord>> = BTreeMap::new();
    for f in files {
        f.validate()?;
        for r in &f.scenarios {
            groups.entry((f.method, f.mode, r.object.clone())).or_default().push(r);
        }
    }
    Ok(groups
        .into_iter()
        .map(|((method, mode, object), recs)| {
            let metrics: Vec<&ScenarioMetrics> = recs.iter().filter_map(|r| r.metrics.as_ref()).collect();
            let adds: Vec<f64> = metrics.iter().map(|m| m.add).collect();
            let points: Vec<f64> = metrics.iter().flat_map(|m| m.contact_point_errors.iter().copied()).collect();
            let forces: Vec<f64> = metrics.iter().flat_map(|m| m.force_errors.iter().copied()).collect();
            let times: Vec<f64> = recs.iter().filter_map(|r| r.runtime_s).collect();
            ReportRow {
                method,
                mode,
                object,
                scenarios: recs.len(),
                add: summarize(&adds),
                contact_point: summarize(&points),
                force: summarize(&forces),
                runtime: summarize(&times),
            }
        })
        .collect())
}

pub const CSV_HEADER: &str = "method,mode,object,scenarios,add_mean_mm,add_std_mm,add_median_mm,\
contact_point_mean_mm,contact_point_std_mm,force_mean_n,force_std_n,runtime_mean_s";

/// Table-shaped CSV; empty cells where a statistic is unavailable.
pub fn to_csv(rows: &[ReportRow]) -> String {
    let cell = |s: &Option<Summary>, f: fn(&Summary) -> f64, scale: f64| {
        s.as_ref().map(|s| format!("{:.4}", f(s) * scale)).unwrap_or_default()
    };
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.method.as_str().to_string(),
            r.mode.as_str().to_string(),
            r.object.clone(),
            r.scenarios.to_string(),
            cell(&r.add, |s| s.mean, 1e3),
            cell(&r.add, |s| s.std, 1e3),
            cell(&r.add, |s| s.median, 1e3),
            cell(&r.contact_point, |s| s.mean, 1e3),
            cell(&r.contact_point, |s| s.std, 1e3),
            cell(&r.force, |s| s.mean, 1.0),
            cell(&r.force, |s| s.std, 1.0),
            cell(&r.runtime, |s| s.mean, 1.0),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Weight of each particle at each timestep, for plotting.
pub fn weight_table(trace: &[Vec<ParticleSummary>]) -> Vec<Vec<f64>> {
    trace.iter().map(|row| row.iter().map(|p| p.weight).collect()).collect()
}
