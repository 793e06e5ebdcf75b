//! The full pipeline: barycenter alignment, geodesic shooting from zero
//! momenta, L-BFGS over the initial momenta.

use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{RegistrationConfig, ResolvedConfig};
use crate::deformation::{hamiltonian, shoot, Momenta, Objective, Trajectory};
use crate::dissimilarity::DataTerm;
use crate::error::Result;
use crate::geometry::{barycenter, DiscreteShape, Geometry, Vec3};
use crate::optimizer::{minimize_with, Termination};

/// Connectivity of a shape, for the JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Connectivity {
    Curves { edges: Vec<[usize; 2]>, labels: Vec<u32> },
    Mesh { faces: Vec<[usize; 3]> },
}

impl Connectivity {
    pub fn of(geometry: &Geometry) -> Self {
        match geometry {
            Geometry::Curves(c) => Connectivity::Curves {
                edges: c.edges().to_vec(),
                labels: c.labels().to_vec(),
            },
            Geometry::Mesh(m) => Connectivity::Mesh { faces: m.faces().to_vec() },
        }
    }
}

/// JSON-serializable summary of a registration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub config: ResolvedConfig,
    /// Added to every source vertex before shooting.
    pub translation: Vec3,
    /// Control points, i.e. the aligned source vertices.
    pub control_points: Vec<Vec3>,
    pub momenta: Vec<Vec3>,
    pub deformed_vertices: Vec<Vec3>,
    pub connectivity: Connectivity,
    /// Objective at the start and after each accepted iteration.
    pub objective_history: Vec<f64>,
    pub data_history: Vec<f64>,
    pub regularization_history: Vec<f64>,
    /// `max_t |H(t) - H(0)| / max(H(0), 1e-12)` along the final trajectory.
    pub hamiltonian_drift: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub final_grad_norm: f64,
    pub wall_time_seconds: f64,
}

impl RegistrationResult {
    pub fn initial_objective(&self) -> f64 {
        self.objective_history[0]
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_history.last().expect("history starts with the initial value")
    }
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub result: RegistrationResult,
    pub aligned_source: DiscreteShape,
    pub deformed: DiscreteShape,
    /// Source shape at `t = k / time_steps`, `k = 0..=time_steps`.
    pub frames: Vec<DiscreteShape>,
    pub trajectory: Trajectory,
}

pub fn relative_drift(traj: &Trajectory, cfg: &ResolvedConfig) -> Result<f64> {
    let kernel = cfg.shooting()?.kernel;
    let h0 = hamiltonian(&traj.q[0], &traj.p[0], &kernel)?;
    let mut worst: f64 = 0.0;
    for (q, p) in traj.q.iter().zip(&traj.p) {
        worst = worst.max((hamiltonian(q, p, &kernel)? - h0).abs());
    }
    Ok(worst / h0.max(1e-12))
}

/// Registers `source` onto `target`.
pub fn register(source: &DiscreteShape, target: &DiscreteShape, config: &RegistrationConfig) -> Result<Registration> {
    let start = Instant::now();
    let cfg = config.resolve(target)?;
    let translation = barycenter(target)? - barycenter(source)?;
    let aligned = source.translated(&translation)?;
    let data = DataTerm::new(cfg.variant, cfg.varifold_kernel()?, cfg.epsilon, target.atoms().to_vec())?;
    let shooting = cfg.shooting()?;
    let objective = Objective::new(&aligned, data, shooting.clone(), cfg.lambda)?;

    let p0 = Momenta::zeros(aligned.vertices().len());
    let first = objective.parts(&p0)?;
    let mut data_history = vec![first.data];
    let mut regularization_history = vec![first.regularization];
    let oracle = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (f, g) = objective.value_and_gradient(&Momenta::from_flat(x))?;
        Ok((f, g.to_flat()))
    };
    let mut split_error = None;
    let (x, report) = minimize_with(p0.to_flat(), oracle, &cfg.optimizer, |_, x, _| {
        match objective.parts(&Momenta::from_flat(x)) {
            Ok(parts) => {
                data_history.push(parts.data);
                regularization_history.push(parts.regularization);
            }
            Err(e) => {
                split_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = split_error {
        return Err(e);
    }

    let momenta = Momenta::from_flat(&x);
    let trajectory = shoot(aligned.vertices(), &momenta.0, &shooting)?;
    let frames = trajectory
        .q
        .iter()
        .map(|q| aligned.with_vertices(q.clone()))
        .collect::<Result<Vec<_>>>()?;
    let deformed = frames.last().expect("at least one frame").clone();
    let hamiltonian_drift = relative_drift(&trajectory, &cfg)?;

    let result = RegistrationResult {
        translation,
        control_points: aligned.vertices().to_vec(),
        momenta: momenta.0,
        deformed_vertices: deformed.vertices().to_vec(),
        connectivity: Connectivity::of(deformed.geometry()),
        objective_history: report.history,
        data_history,
        regularization_history,
        hamiltonian_drift,
        iterations: report.iterations,
        termination: report.termination,
        final_grad_norm: report.final_grad_norm,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        config: cfg,
    };
    Ok(Registration {
        result,
        aligned_source: aligned,
        deformed,
        frames,
        trajectory,
    })
}
