//! WebAssembly bindings behind `www/index.html`.
//!
//! Each export returns a JSON string. The plain functions underneath return
//! `Result<String, String>` so they can be exercised natively.

use std::collections::BTreeMap;

use partial_varifold::config::RegistrationConfig;
use partial_varifold::dissimilarity::{dissimilarity, omega, varifold_inner, Variant};
use partial_varifold::geometry::{DiscreteShape, Polylines, Vec3};
use partial_varifold::kernels::VarifoldKernel;
use partial_varifold::optimizer::OptimizerConfig;
use partial_varifold::registration::register;
use partial_varifold::synthetic::{generate, make_tree, trim_tree, SynthSpec, TreeSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Curves {
    vertices: Vec<[f64; 3]>,
    edges: Vec<[usize; 2]>,
    labels: Vec<u32>,
}

impl Curves {
    fn of(c: &Polylines) -> Self {
        Self::with_vertices(c, c.vertices())
    }

    fn with_vertices(c: &Polylines, vertices: &[Vec3]) -> Self {
        Self {
            vertices: vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            edges: c.edges().to_vec(),
            labels: c.labels().to_vec(),
        }
    }
}

fn values(s: &DiscreteShape, t: &DiscreteShape, kernel: &VarifoldKernel, epsilon: f64) -> Result<BTreeMap<&'static str, f64>, String> {
    Variant::ALL
        .into_iter()
        .map(|v| Ok((v.name(), dissimilarity(v, s.atoms(), t.atoms(), kernel, epsilon).map_err(|e| e.to_string())?)))
        .collect()
}

fn curves(c: Polylines) -> Result<DiscreteShape, String> {
    DiscreteShape::from_curves(c).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SegmentReport {
    source: Curves,
    target: Curves,
    /// Canonical functions of source and target at each source atom.
    omega_source: Vec<f64>,
    omega_target: Vec<f64>,
    atom_x: Vec<f64>,
    self_inner: f64,
    values: BTreeMap<&'static str, f64>,
}

/// A short segment shifted above a longer one: the pointwise coverage
/// `omega_S <= omega_T` and the four dissimilarities.
pub fn shifted_segment_report(alpha: f64, beta: f64, shift: f64, sigma_w: f64, epsilon: f64, spacing: f64) -> Result<String, String> {
    let (s, t) = partial_varifold::synthetic::shifted_segments(alpha, beta, shift, spacing).map_err(|e| e.to_string())?;
    let (source, target) = (Curves::of(&s), Curves::of(&t));
    let (s, t) = (curves(s)?, curves(t)?);
    let kernel = VarifoldKernel::new(sigma_w).map_err(|e| e.to_string())?;
    let mut omega_source = Vec::new();
    let mut omega_target = Vec::new();
    for a in s.atoms() {
        omega_source.push(omega(a, s.atoms(), &kernel).map_err(|e| e.to_string())?);
        omega_target.push(omega(a, t.atoms(), &kernel).map_err(|e| e.to_string())?);
    }
    to_json(&SegmentReport {
        source,
        target,
        omega_source,
        omega_target,
        atom_x: s.atoms().iter().map(|a| a.position.x).collect(),
        self_inner: varifold_inner(s.atoms(), s.atoms(), &kernel).map_err(|e| e.to_string())?,
        values: values(&s, &t, &kernel, epsilon)?,
    })
}

#[derive(Serialize)]
struct TrimReport {
    full: Curves,
    kept: Vec<u32>,
    sigma_w: f64,
    trimmed_onto_full: BTreeMap<&'static str, f64>,
    full_onto_trimmed: BTreeMap<&'static str, f64>,
}

/// Dissimilarities in both directions between the default tree and the
/// branches selected by the bits of `keep_mask` (bit k keeps branch k).
pub fn trimmed_tree_report(keep_mask: u32, sigma_w_fraction: f64, epsilon: f64, seed: u64) -> Result<String, String> {
    let tree = make_tree(&TreeSpec {
        seed,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let kept: Vec<u32> = tree.distinct_labels().into_iter().filter(|l| keep_mask & (1 << l) != 0).collect();
    let trimmed = trim_tree(&tree, &kept).map_err(|e| e.to_string())?;
    let full = Curves::of(&tree);
    let (t, s) = (curves(tree)?, curves(trimmed)?);
    let sigma_w = sigma_w_fraction * t.bbox_diagonal();
    let kernel = VarifoldKernel::new(sigma_w).map_err(|e| e.to_string())?;
    to_json(&TrimReport {
        full,
        kept,
        sigma_w,
        trimmed_onto_full: values(&s, &t, &kernel, epsilon)?,
        full_onto_trimmed: values(&t, &s, &kernel, epsilon)?,
    })
}

#[derive(Serialize)]
struct RegistrationReport {
    target: Curves,
    truth: Curves,
    source: Curves,
    deformed: Curves,
    objective_history: Vec<f64>,
    iterations: usize,
    termination: String,
    /// Mean distance between registered and true vertices over the target diagonal.
    recovery_error: f64,
    initial_error: f64,
}

fn mean_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64
}

/// Registers the deformed trimmed tree back onto the full tree.
pub fn register_tree_report(variant: &str, sigma_w_fraction: f64, lambda: f64, seed: u64, max_iters: usize) -> Result<String, String> {
    let variant: Variant = variant.parse().map_err(|e: partial_varifold::Error| e.to_string())?;
    let case = generate(&SynthSpec {
        deformation_seed: seed,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let target = curves(case.full.clone())?;
    let source = curves(case.deformed.clone())?;
    let diag = target.bbox_diagonal();
    let cfg = RegistrationConfig {
        sigma_w: Some(sigma_w_fraction * diag),
        lambda,
        variant,
        optimizer: OptimizerConfig {
            max_iters,
            ..Default::default()
        },
        ..Default::default()
    };
    let reg = register(&source, &target, &cfg).map_err(|e| e.to_string())?;
    let r = &reg.result;
    let truth = case.trimmed.vertices();
    to_json(&RegistrationReport {
        target: Curves::of(&case.full),
        truth: Curves::of(&case.trimmed),
        source: Curves::with_vertices(&case.deformed, reg.aligned_source.vertices()),
        deformed: Curves::with_vertices(&case.deformed, reg.deformed.vertices()),
        objective_history: r.objective_history.clone(),
        iterations: r.iterations,
        termination: format!("{:?}", r.termination),
        recovery_error: mean_distance(reg.deformed.vertices(), truth) / diag,
        initial_error: mean_distance(reg.aligned_source.vertices(), truth) / diag,
    })
}

#[wasm_bindgen(js_name = shiftedSegment)]
pub fn shifted_segment(alpha: f64, beta: f64, shift: f64, sigma_w: f64, epsilon: f64, spacing: f64) -> Result<String, JsError> {
    shifted_segment_report(alpha, beta, shift, sigma_w, epsilon, spacing).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = trimmedTree)]
pub fn trimmed_tree(keep_mask: u32, sigma_w_fraction: f64, epsilon: f64, seed: u32) -> Result<String, JsError> {
    trimmed_tree_report(keep_mask, sigma_w_fraction, epsilon, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = registerTree)]
pub fn register_tree(variant: &str, sigma_w_fraction: f64, lambda: f64, seed: u32, max_iters: u32) -> Result<String, JsError> {
    register_tree_report(variant, sigma_w_fraction, lambda, seed.into(), max_iters as usize).map_err(|e| JsError::new(&e))
}
