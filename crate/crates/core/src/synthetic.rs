//! Synthetic trees of 3D curves, trimming, and random ground-truth
//! diffeomorphisms drawn from the registration's own deformation model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::deformation::{reverse_flow_points, shoot, ShootingConfig, DEFAULT_TIME_STEPS};
use crate::error::{Error, Result};
use crate::geometry::{bbox_diagonal, Polylines, Vec3};
use crate::kernels::{DeformationKernel, DEFAULT_SCALES};

pub const DEFAULT_MAGNITUDE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSpec {
    pub branches: usize,
    pub points_per_branch: usize,
    /// Maximum bifurcation generation; 1 attaches every branch to the trunk.
    pub depth: usize,
    /// Trunk length; child branches shrink by 0.6 per generation.
    pub length: f64,
    pub seed: u64,
}

impl Default for TreeSpec {
    fn default() -> Self {
        Self {
            branches: 6,
            points_per_branch: 12,
            depth: 2,
            length: 10.0,
            seed: 7,
        }
    }
}

impl TreeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.branches == 0 || self.depth == 0 {
            return Err(Error::InvalidSpec("branches and depth must be at least 1".into()));
        }
        if self.points_per_branch < 2 {
            return Err(Error::InvalidSpec("points_per_branch must be at least 2".into()));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::InvalidSpec(format!("length must be positive, got {}", self.length)));
        }
        Ok(())
    }
}

struct Branch {
    vertices: Vec<usize>,
    generation: usize,
    children: usize,
}

fn bezier(p: [Vec3; 4], t: f64) -> Vec3 {
    let s = 1.0 - t;
    p[0] * (s * s * s) + p[1] * (3.0 * s * s * t) + p[2] * (3.0 * s * t * t) + p[3] * (t * t * t)
}

/// Unit vectors completing `t` to an orthonormal frame.
fn frame(t: &Vec3) -> (Vec3, Vec3) {
    let helper = if t.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = t.cross(&helper).normalize();
    let e2 = t.cross(&e1);
    (e1, e2)
}

/// A connected tree: a trunk along +z and cubic Bezier branches attached
/// at vertices of their parent. Each branch is one labeled polyline; label
/// 0 is the trunk.
pub fn make_tree(spec: &TreeSpec) -> Result<Polylines> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.points_per_branch;
    let len = spec.length;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut branches: Vec<Branch> = Vec::new();

    let wiggle = 0.1 * len;
    let trunk = [
        Vec3::zeros(),
        Vec3::new(rng.random_range(-wiggle..wiggle), rng.random_range(-wiggle..wiggle), len / 3.0),
        Vec3::new(rng.random_range(-wiggle..wiggle), rng.random_range(-wiggle..wiggle), 2.0 * len / 3.0),
        Vec3::new(0.0, 0.0, len),
    ];
    let ids = (0..n)
        .map(|i| {
            vertices.push(bezier(trunk, i as f64 / (n - 1) as f64));
            vertices.len() - 1
        })
        .collect();
    branches.push(Branch {
        vertices: ids,
        generation: 0,
        children: 0,
    });

    for k in 1..spec.branches {
        let mut parent = if k >= 3 { (k - 1) / 2 } else { 0 };
        while branches[parent].generation >= spec.depth {
            parent = if parent >= 3 { (parent - 1) / 2 } else { 0 };
        }
        let sibling = branches[parent].children;
        branches[parent].children += 1;
        let pv = &branches[parent].vertices;
        let frac = [0.45, 0.75, 0.6, 0.3][sibling % 4];
        let at = ((frac * (pv.len() - 1) as f64).round() as usize).clamp(1, pv.len() - 2);
        let anchor = pv[at];
        let tangent = (vertices[pv[at + 1]] - vertices[pv[at - 1]]).normalize();
        let (e1, e2) = frame(&tangent);
        let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
        let tilt = rng.random_range(35f64..55.0).to_radians();
        let dir = tangent * tilt.cos() + (e1 * azimuth.cos() + e2 * azimuth.sin()) * tilt.sin();
        let generation = branches[parent].generation + 1;
        let blen = len * 0.6f64.powi(generation as i32) * rng.random_range(0.8..1.0);
        let (b1, b2) = frame(&dir);
        let bend_angle = rng.random_range(0.0..std::f64::consts::TAU);
        let bend = (b1 * bend_angle.cos() + b2 * bend_angle.sin()) * (0.15 * blen);

        let p0 = vertices[anchor];
        let ctrl = [p0, p0 + dir * (blen / 3.0), p0 + dir * (2.0 * blen / 3.0) + bend, p0 + dir * blen + bend * 0.5];
        let mut ids = vec![anchor];
        for i in 1..n {
            vertices.push(bezier(ctrl, i as f64 / (n - 1) as f64));
            ids.push(vertices.len() - 1);
        }
        branches.push(Branch {
            vertices: ids,
            generation,
            children: 0,
        });
    }

    let curves: Vec<(u32, Vec<usize>)> = branches.into_iter().enumerate().map(|(i, b)| (i as u32, b.vertices)).collect();
    Polylines::from_curves(vertices, &curves)
}

/// Keeps the edges whose label is in `keep`. Surviving vertices keep their
/// coordinates bit for bit and their relative order.
pub fn trim_tree(tree: &Polylines, keep: &[u32]) -> Result<Polylines> {
    if keep.is_empty() {
        return Err(Error::InvalidSpec("keep set is empty".into()));
    }
    let present = tree.distinct_labels();
    if let Some(missing) = keep.iter().find(|l| !present.contains(l)) {
        return Err(Error::InvalidSpec(format!("label {missing} does not exist")));
    }
    let kept: Vec<usize> = (0..tree.edges().len()).filter(|&e| keep.contains(&tree.labels()[e])).collect();
    let mut remap = vec![usize::MAX; tree.vertices().len()];
    for &e in &kept {
        for &v in &tree.edges()[e] {
            remap[v] = 0;
        }
    }
    let mut vertices = Vec::new();
    for (i, slot) in remap.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = vertices.len();
            vertices.push(tree.vertices()[i]);
        }
    }
    let edges = kept.iter().map(|&e| tree.edges()[e].map(|v| remap[v])).collect();
    let labels = kept.iter().map(|&e| tree.labels()[e]).collect();
    Polylines::with_labels(vertices, edges, labels)
}

/// Everything needed to reproduce a random deformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub magnitude: f64,
    pub sigma0: f64,
    pub scales: Vec<f64>,
    pub time_steps: usize,
    pub momenta: Vec<Vec3>,
    pub original: Vec<Vec3>,
    pub deformed: Vec<Vec3>,
}

impl GroundTruth {
    pub fn shooting_config(&self) -> Result<ShootingConfig> {
        ShootingConfig::new(self.time_steps, DeformationKernel::new(self.sigma0, self.scales.clone())?)
    }
}

/// Shoots Gaussian momenta placed at the shape's vertices, with the
/// deformation kernel at half the bounding-box diagonal. The momentum
/// standard deviation is `magnitude * diagonal / sqrt(vertex count)`.
pub fn random_diffeo(shape: &Polylines, magnitude: f64, seed: u64) -> Result<(Polylines, GroundTruth)> {
    if !(magnitude > 0.0 && magnitude.is_finite()) {
        return Err(Error::InvalidSpec(format!("magnitude must be positive, got {magnitude}")));
    }
    let q0 = shape.vertices().to_vec();
    let diag = bbox_diagonal(&q0);
    let std = magnitude * diag / (q0.len() as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let momenta: Vec<Vec3> = q0
        .iter()
        .map(|_| Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    let truth_kernel = DeformationKernel::new(0.5 * diag, DEFAULT_SCALES.to_vec())?;
    let cfg = ShootingConfig::new(DEFAULT_TIME_STEPS, truth_kernel)?;
    let traj = shoot(&q0, &momenta, &cfg)?;
    let deformed_pts = traj.final_points().to_vec();
    let deformed = Polylines::with_labels(deformed_pts.clone(), shape.edges().to_vec(), shape.labels().to_vec())?;
    let truth = GroundTruth {
        seed,
        magnitude,
        sigma0: cfg.kernel.sigma0(),
        scales: cfg.kernel.scales().to_vec(),
        time_steps: cfg.time_steps,
        momenta,
        original: q0,
        deformed: deformed_pts,
    };
    Ok((deformed, truth))
}

/// Maps deformed points back through the inverse of a ground-truth flow.
pub fn invert_ground_truth(truth: &GroundTruth, points: &[Vec3]) -> Result<Vec<Vec3>> {
    let cfg = truth.shooting_config()?;
    let traj = shoot(&truth.original, &truth.momenta, &cfg)?;
    reverse_flow_points(points, &traj, &cfg)
}

/// Input of the synthetic partial-matching protocol: a tree, the branches
/// kept in the source, and the random deformation applied to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub tree: TreeSpec,
    pub keep: Vec<u32>,
    pub magnitude: f64,
    pub deformation_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            tree: TreeSpec::default(),
            keep: vec![0, 1, 2],
            magnitude: DEFAULT_MAGNITUDE,
            deformation_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCase {
    pub full: Polylines,
    pub trimmed: Polylines,
    /// The trimmed tree after the ground-truth deformation.
    pub deformed: Polylines,
    pub truth: GroundTruth,
}

/// Full tree (target), trimmed tree, and the deformed trimmed tree (source).
pub fn generate(spec: &SynthSpec) -> Result<SynthCase> {
    let full = make_tree(&spec.tree)?;
    let trimmed = trim_tree(&full, &spec.keep)?;
    let (deformed, truth) = random_diffeo(&trimmed, spec.magnitude, spec.deformation_seed)?;
    Ok(SynthCase {
        full,
        trimmed,
        deformed,
        truth,
    })
}

/// A source segment `{(s, shift, 0) : |s| <= alpha}` above a longer target
/// segment `{(t, 0, 0) : |t| <= beta}`, both cut into edges of length close
/// to `spacing` and oriented along +x.
pub fn shifted_segments(alpha: f64, beta: f64, shift: f64, spacing: f64) -> Result<(Polylines, Polylines)> {
    let ok = |x: f64| x > 0.0 && x.is_finite();
    if !(ok(alpha) && ok(beta) && ok(spacing) && shift.is_finite()) {
        return Err(Error::InvalidSpec("segment lengths and spacing must be positive".into()));
    }
    let segment = |half: f64, y: f64| {
        let n = ((2.0 * half / spacing).round() as usize).max(1);
        let vertices = (0..=n).map(|i| Vec3::new(-half + 2.0 * half * i as f64 / n as f64, y, 0.0)).collect();
        Polylines::new(vertices, (0..n).map(|i| [i, i + 1]).collect())
    };
    Ok((segment(alpha, shift)?, segment(beta, 0.0)?))
}
