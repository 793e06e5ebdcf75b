//! Built-in verification suite run by `pvreg check`.
//!
//! Every check runs on small generated problems using the length scales,
//! step count and epsilon of the given configuration, so a configuration
//! that breaks an invariant (too few time steps, say) shows up as a failed
//! row rather than a wrong registration later.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{RegistrationConfig, ResolvedConfig};
use crate::deformation::{flow_points, reverse_flow_points, shoot, Momenta, Objective, ShootingConfig};
use crate::dissimilarity::{
    min_eps, min_eps_derivative, naive_half, partial_dissimilarity, varifold_inner, DataTerm, Variant,
};
use crate::error::{Error, Result};
use crate::geometry::{bbox_diagonal, Atom, DiscreteShape, Vec3};
use crate::kernels::VarifoldKernel;
use crate::registration::relative_drift;
use crate::synthetic::{generate, shifted_segments, SynthSpec, TreeSpec};

pub const DISSIMILARITY_GRAD_TOL: f64 = 1e-5;
pub const OBJECTIVE_GRAD_TOL: f64 = 1e-4;
pub const DRIFT_TOL: f64 = 1e-3;
pub const FLOW_INVERSE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: String) {
        self.outcomes.push(CheckOutcome {
            name: name.into(),
            passed,
            detail,
        });
    }

    pub fn table(&self) -> String {
        let width = self.outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
        let mut s = String::new();
        for o in &self.outcomes {
            let status = if o.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{status}  {:width$}  {}", o.name, o.detail);
        }
        let passed = self.outcomes.iter().filter(|o| o.passed).count();
        let _ = writeln!(s, "{passed}/{} checks passed", self.outcomes.len());
        s
    }
}

/// `|a - b| / max(|b|, floor)` over flattened vectors.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(floor)
}

/// Central differences of `f` at `x` with step `h` in every coordinate.
pub fn central_differences<F>(x: &[f64], h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

fn flatten(points: &[Vec3]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn gaussian_points(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<Vec3> {
    let mut draw = || -> f64 { StandardNormal.sample(rng) };
    (0..n).map(|_| Vec3::new(draw(), draw(), draw()) * std).collect()
}

/// Random momenta scaled so the mean control-point displacement at `t = 1`
/// is close to `fraction` of the bounding-box diagonal.
pub fn momenta_with_displacement(
    q0: &[Vec3],
    fraction: f64,
    cfg: &ShootingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec3>> {
    let diag = bbox_diagonal(q0);
    let mut p = gaussian_points(rng, q0.len(), 1.0);
    for _ in 0..3 {
        let traj = shoot(q0, &p, cfg)?;
        let moved = traj.final_points().iter().zip(q0).map(|(a, b)| (a - b).norm()).sum::<f64>() / q0.len() as f64;
        if moved <= 0.0 {
            break;
        }
        let scale = fraction * diag / moved;
        p.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(p)
}

struct Problem {
    full: DiscreteShape,
    trimmed: DiscreteShape,
    source: DiscreteShape,
    cfg: ResolvedConfig,
}

fn problem(config: &RegistrationConfig) -> Result<Problem> {
    let spec = SynthSpec {
        tree: TreeSpec {
            branches: 4,
            points_per_branch: 6,
            seed: config.seed,
            ..Default::default()
        },
        keep: vec![0, 1],
        deformation_seed: config.seed.wrapping_add(1),
        ..Default::default()
    };
    let case = generate(&spec)?;
    let full = DiscreteShape::from_curves(case.full)?;
    let cfg = config.resolve(&full)?;
    Ok(Problem {
        full,
        trimmed: DiscreteShape::from_curves(case.trimmed)?,
        source: DiscreteShape::from_curves(case.deformed)?,
        cfg,
    })
}

fn check_dissimilarity_gradient(report: &mut CheckReport, p: &Problem, variant: Variant) -> Result<()> {
    let term = DataTerm::new(variant, p.cfg.varifold_kernel()?, p.cfg.epsilon, p.full.atoms().to_vec())?;
    let geometry = p.source.geometry();
    let x0 = flatten(p.source.vertices());
    let (_, atom_grads) = term.value_and_gradient(p.source.atoms());
    let analytic = flatten(&geometry.pullback(p.source.vertices(), &atom_grads));
    let h = 1e-6 * p.full.bbox_diagonal();
    let fd = central_differences(&x0, h, |x| {
        let pts: Vec<Vec3> = x.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        Ok(term.value(&geometry.atoms_at(&pts)))
    })?;
    let err = relative_error(&analytic, &fd, 1e-12);
    report.push(
        format!("gradient {variant}"),
        err < DISSIMILARITY_GRAD_TOL,
        format!("relative error {err:.2e} (tol {DISSIMILARITY_GRAD_TOL:.0e})"),
    );
    Ok(())
}

fn check_objective_gradient(report: &mut CheckReport, p: &Problem, rng: &mut ChaCha8Rng) -> Result<()> {
    let term = DataTerm::new(p.cfg.variant, p.cfg.varifold_kernel()?, p.cfg.epsilon, p.full.atoms().to_vec())?;
    let shooting = p.cfg.shooting()?;
    let q0 = p.source.vertices();
    let momenta = momenta_with_displacement(q0, 0.05, &shooting, rng)?;
    let objective = Objective::new(&p.source, term, shooting, p.cfg.lambda)?;
    let x0 = Momenta(momenta).to_flat();
    let (_, grad) = objective.value_and_gradient(&Momenta::from_flat(&x0))?;
    let scale = x0.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let fd = central_differences(&x0, 1e-5 * scale, |x| objective.value(&Momenta::from_flat(x)))?;
    let err = relative_error(&grad.to_flat(), &fd, 1e-12);
    report.push(
        format!("objective gradient ({})", p.cfg.variant),
        err < OBJECTIVE_GRAD_TOL,
        format!("relative error {err:.2e} (tol {OBJECTIVE_GRAD_TOL:.0e})"),
    );
    Ok(())
}

fn check_flow(report: &mut CheckReport, p: &Problem, rng: &mut ChaCha8Rng) -> Result<()> {
    let shooting = p.cfg.shooting()?;
    let q0 = p.full.vertices();
    let momenta = momenta_with_displacement(q0, 0.2, &shooting, rng)?;
    let traj = shoot(q0, &momenta, &shooting)?;
    let drift = relative_drift(&traj, &p.cfg)?;
    report.push(
        "hamiltonian drift",
        drift < DRIFT_TOL,
        format!("{drift:.2e} over {} steps (tol {DRIFT_TOL:.0e})", p.cfg.time_steps),
    );

    let extra: Vec<Vec3> = p.full.atoms().iter().map(|a| a.position).collect();
    let forward = flow_points(&extra, &traj, &shooting)?;
    let diag = p.full.bbox_diagonal();
    match reverse_flow_points(&forward, &traj, &shooting) {
        Ok(back) => {
            let worst = back.iter().zip(&extra).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / diag;
            report.push(
                "flow invertibility",
                worst < FLOW_INVERSE_TOL,
                format!("round trip {worst:.2e} x diagonal (tol {FLOW_INVERSE_TOL:.0e})"),
            );
        }
        Err(e @ Error::FlowInversion { .. }) => report.push("flow invertibility", false, e.to_string()),
        Err(e) => return Err(e),
    }
    Ok(())
}

fn check_inclusion_properties(report: &mut CheckReport, p: &Problem, rng: &mut ChaCha8Rng) -> Result<()> {
    let kernel = p.cfg.varifold_kernel()?;
    let inclusion = partial_dissimilarity(p.trimmed.atoms(), p.full.atoms(), &kernel)?;
    report.push(
        "inclusion gives zero",
        inclusion == 0.0,
        format!("partial(trimmed, full) = {inclusion:e}"),
    );

    let source = p.source.atoms();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..20 {
        let big: Vec<Atom> = source.iter().filter(|_| rng.random_bool(0.7)).copied().collect();
        let small: Vec<Atom> = big.iter().filter(|_| rng.random_bool(0.5)).copied().collect();
        if small.is_empty() {
            continue;
        }
        let a = partial_dissimilarity(&small, p.full.atoms(), &kernel)?;
        let b = partial_dissimilarity(&big, p.full.atoms(), &kernel)?;
        worst = worst.max(a - b);
    }
    report.push(
        "monotone under subsets",
        worst <= 1e-12,
        format!("max partial(A) - partial(B) for A in B: {worst:.2e}"),
    );

    let (s, t) = shifted_segments(0.1, 1.0, 0.01, 0.01)?;
    let s = DiscreteShape::from_curves(s)?;
    let t = DiscreteShape::from_curves(t)?;
    let k = VarifoldKernel::new(0.5)?;
    let value = partial_dissimilarity(s.atoms(), t.atoms(), &k)?;
    let ss = varifold_inner(s.atoms(), s.atoms(), &k)?;
    report.push(
        "disjoint shifted segment",
        value < 1e-10 * ss,
        format!("partial = {value:e}, <S,S> = {ss:.3e}"),
    );

    let doubled: Vec<Atom> = p.trimmed.atoms().iter().chain(p.trimmed.atoms()).copied().collect();
    let naive = naive_half(p.trimmed.atoms(), &doubled, &kernel)?;
    let partial = partial_dissimilarity(p.trimmed.atoms(), &doubled, &kernel)?;
    report.push(
        "mass compensation",
        naive < 0.0 && partial == 0.0,
        format!("naive_half(S, S+S) = {naive:.3e}, partial = {partial:e}"),
    );
    Ok(())
}

fn check_min_eps(report: &mut CheckReport, epsilon: f64) {
    let half_root = 0.5 * epsilon.sqrt();
    let mut ok = true;
    let mut prev = f64::NEG_INFINITY;
    for i in 0..=400 {
        let s = -1.0 + 0.01 * i as f64;
        let m = min_eps(s, epsilon);
        let d = min_eps_derivative(s, epsilon);
        let exact = s.min(1.0);
        ok &= m <= exact && m >= exact - half_root - 1e-15 && m > prev && d > 0.0 && d < 1.0;
        prev = m;
    }
    report.push(
        "min_eps bounds",
        ok,
        format!("min(1,s) - sqrt(eps)/2 <= min_eps(s) <= min(1,s), increasing, eps = {epsilon:e}"),
    );
}

/// Validates `config` and runs every check. Configuration errors are
/// returned as errors, failed checks as failed rows.
pub fn run_checks(config: &RegistrationConfig) -> Result<CheckReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let p = problem(config)?;
    let mut report = CheckReport::default();
    for variant in Variant::ALL {
        check_dissimilarity_gradient(&mut report, &p, variant)?;
    }
    check_objective_gradient(&mut report, &p, &mut rng)?;
    check_flow(&mut report, &p, &mut rng)?;
    check_inclusion_properties(&mut report, &p, &mut rng)?;
    check_min_eps(&mut report, p.cfg.epsilon);
    Ok(report)
}
