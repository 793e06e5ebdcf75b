//! Varifold data-attachment terms between a source and a target shape.
//!
//! All four variants are evaluated on discrete atoms:
//!
//! * `varifold_distance`: `<S,S> - 2<S,T> + <T,T>`
//! * `naive_half`: `<S,S> - <S,T>`, signed
//! * `partial`: `sum_i w_i g(omega_S(x_i) - omega_T(x_i))`
//! * `partial_normalized`: as `partial`, with the target field at `x_i`
//!   replaced by `sum_j m_j min_eps(1, omega_S(x_i) / omega_T(y_j)) k(x_i, y_j)`
//!
//! where `g(s) = max(0, s)^2` and `omega_X(x) = sum_a w_a k(x, x_a)` is the
//! canonical function of `X`, self term included.
//!
//! Summation order is fixed: every canonical-function value is accumulated
//! over its terms sorted in ascending order, and all other sums run in atom
//! index order. Ascending accumulation makes floating-point sums monotone
//! under adding non-negative terms, so a source whose atoms are a
//! sub-multiset of the target's gets a partial dissimilarity of exactly 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Atom, AtomGradient, DiscreteShape, Vec3};
use crate::kernels::VarifoldKernel;

pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    VarifoldDistance,
    NaiveHalf,
    Partial,
    PartialNormalized,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::VarifoldDistance,
        Variant::NaiveHalf,
        Variant::Partial,
        Variant::PartialNormalized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::VarifoldDistance => "varifold_distance",
            Variant::NaiveHalf => "naive_half",
            Variant::Partial => "partial",
            Variant::PartialNormalized => "partial_normalized",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

/// Sum in ascending order of value. Sorts `terms` in place.
pub fn sum_ascending(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

#[inline]
fn g(s: f64) -> f64 {
    let p = s.max(0.0);
    p * p
}

#[inline]
fn g_prime(s: f64) -> f64 {
    2.0 * s.max(0.0)
}

/// Smooth approximation of `min(1, s)`: `(s + 1 - sqrt(eps + (s - 1)^2)) / 2`.
pub fn min_eps(s: f64, epsilon: f64) -> f64 {
    let d = s - 1.0;
    0.5 * (s + 1.0 - (epsilon + d * d).sqrt())
}

pub fn min_eps_derivative(s: f64, epsilon: f64) -> f64 {
    let d = s - 1.0;
    0.5 * (1.0 - d / (epsilon + d * d).sqrt())
}

fn non_empty(atoms: &[Atom]) -> Result<()> {
    if atoms.is_empty() {
        Err(Error::EmptyShape)
    } else {
        Ok(())
    }
}

/// Canonical function of `atoms` evaluated at the query's position and
/// direction; the query's weight is ignored.
pub fn omega(query: &Atom, atoms: &[Atom], kernel: &VarifoldKernel) -> Result<f64> {
    non_empty(atoms)?;
    let mut terms: Vec<f64> = atoms
        .iter()
        .map(|a| a.weight * kernel.pair(&query.position, &query.direction, &a.position, &a.direction))
        .collect();
    Ok(sum_ascending(&mut terms))
}

/// `sum_i sum_j w_i m_j k(a_i, b_j)`, accumulated over all pair products
/// in ascending order, which makes it exactly symmetric in its arguments.
pub fn varifold_inner(s: &[Atom], t: &[Atom], kernel: &VarifoldKernel) -> Result<f64> {
    non_empty(s)?;
    non_empty(t)?;
    let mut terms = Vec::with_capacity(s.len() * t.len());
    for a in s {
        for b in t {
            terms.push((a.weight * b.weight) * kernel.pair(&a.position, &a.direction, &b.position, &b.direction));
        }
    }
    Ok(sum_ascending(&mut terms))
}

/// Squared varifold distance; rounding residues below zero are clamped.
pub fn varifold_distance_sq(s: &[Atom], t: &[Atom], kernel: &VarifoldKernel) -> Result<f64> {
    let d = (varifold_inner(s, s, kernel)? + varifold_inner(t, t, kernel)?) - 2.0 * varifold_inner(s, t, kernel)?;
    Ok(d.max(0.0))
}

/// `<S,S> - <S,T>`. Can be negative when the target carries more mass
/// than the source around it.
pub fn naive_half(s: &[Atom], t: &[Atom], kernel: &VarifoldKernel) -> Result<f64> {
    Ok(varifold_inner(s, s, kernel)? - varifold_inner(s, t, kernel)?)
}

pub fn partial_dissimilarity(s: &[Atom], t: &[Atom], kernel: &VarifoldKernel) -> Result<f64> {
    non_empty(s)?;
    Ok(DataTerm::new(Variant::Partial, *kernel, DEFAULT_EPSILON, t.to_vec())?.value(s))
}

pub fn partial_normalized_dissimilarity(s: &[Atom], t: &[Atom], kernel: &VarifoldKernel, epsilon: f64) -> Result<f64> {
    non_empty(s)?;
    Ok(DataTerm::new(Variant::PartialNormalized, *kernel, epsilon, t.to_vec())?.value(s))
}

/// Evaluates one variant through the standalone functions above.
pub fn dissimilarity(variant: Variant, s: &[Atom], t: &[Atom], kernel: &VarifoldKernel, epsilon: f64) -> Result<f64> {
    match variant {
        Variant::VarifoldDistance => varifold_distance_sq(s, t, kernel),
        Variant::NaiveHalf => naive_half(s, t, kernel),
        Variant::Partial => partial_dissimilarity(s, t, kernel),
        Variant::PartialNormalized => partial_normalized_dissimilarity(s, t, kernel, epsilon),
    }
}

/// Gradient of the chosen variant with respect to every source vertex,
/// the target held fixed.
pub fn grad_source_vertices(
    variant: Variant,
    source: &DiscreteShape,
    target: &DiscreteShape,
    kernel: &VarifoldKernel,
    epsilon: f64,
) -> Result<Vec<Vec3>> {
    non_empty(source.atoms())?;
    let term = DataTerm::new(variant, *kernel, epsilon, target.atoms().to_vec())?;
    let (_, atom_grads) = term.value_and_gradient(source.atoms());
    Ok(source.geometry().pullback(source.vertices(), &atom_grads))
}

/// A data-attachment term with the target-only quantities precomputed.
///
/// The value is differentiable in the source atoms (not clamped, unlike
/// [`varifold_distance_sq`]).
#[derive(Debug, Clone)]
pub struct DataTerm {
    variant: Variant,
    kernel: VarifoldKernel,
    epsilon: f64,
    target: Vec<Atom>,
    /// Canonical function of the target at its own atoms.
    target_omega: Vec<f64>,
    target_self: f64,
}

/// Per-source-atom coefficients of the first variation. Every variant's
/// differential has the form
/// `sum_i e_i dw_i + sum_i d_i d(omega_S(x_i)) - sum_ij c_i m_j beta_ij dk_ij`.
struct Variation {
    value: f64,
    e: Vec<f64>,
    d: Vec<f64>,
    c: Vec<f64>,
}

impl DataTerm {
    pub fn new(variant: Variant, kernel: VarifoldKernel, epsilon: f64, target: Vec<Atom>) -> Result<Self> {
        non_empty(&target)?;
        if variant == Variant::PartialNormalized && !(epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
        }
        let mut target_omega = Vec::with_capacity(target.len());
        let mut row = Vec::with_capacity(target.len());
        for b in &target {
            row.clear();
            row.extend(
                target
                    .iter()
                    .map(|a| a.weight * kernel.pair(&b.position, &b.direction, &a.position, &a.direction)),
            );
            target_omega.push(sum_ascending(&mut row));
        }
        let target_self = target.iter().zip(&target_omega).map(|(a, o)| a.weight * o).sum();
        Ok(Self {
            variant,
            kernel,
            epsilon,
            target,
            target_omega,
            target_self,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn kernel(&self) -> &VarifoldKernel {
        &self.kernel
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn target(&self) -> &[Atom] {
        &self.target
    }

    pub fn value(&self, source: &[Atom]) -> f64 {
        self.evaluate(source, false).0
    }

    pub fn value_and_gradient(&self, source: &[Atom]) -> (f64, Vec<AtomGradient>) {
        let (value, grad) = self.evaluate(source, true);
        (value, grad.unwrap_or_default())
    }

    fn evaluate(&self, src: &[Atom], want_grad: bool) -> (f64, Option<Vec<AtomGradient>>) {
        let n = src.len();
        let m = self.target.len();
        let tgt = &self.target;

        let mut kss = vec![0.0; n * n];
        for (i, a) in src.iter().enumerate() {
            for (k, b) in src.iter().enumerate() {
                kss[i * n + k] = self.kernel.pair(&a.position, &a.direction, &b.position, &b.direction);
            }
        }
        let mut kst = vec![0.0; n * m];
        for (i, a) in src.iter().enumerate() {
            for (j, b) in tgt.iter().enumerate() {
                kst[i * m + j] = self.kernel.pair(&a.position, &a.direction, &b.position, &b.direction);
            }
        }

        let mut omega_s = Vec::with_capacity(n);
        let mut omega_t = Vec::with_capacity(n);
        let mut row = Vec::with_capacity(n.max(m));
        for i in 0..n {
            row.clear();
            row.extend(src.iter().enumerate().map(|(k, a)| a.weight * kss[i * n + k]));
            omega_s.push(sum_ascending(&mut row));
            row.clear();
            row.extend(tgt.iter().enumerate().map(|(j, b)| b.weight * kst[i * m + j]));
            omega_t.push(sum_ascending(&mut row));
        }

        let var = match self.variant {
            Variant::VarifoldDistance => {
                let mut value = self.target_self;
                let mut e = Vec::with_capacity(n);
                for i in 0..n {
                    value += src[i].weight * (omega_s[i] - 2.0 * omega_t[i]);
                    e.push(omega_s[i] - 2.0 * omega_t[i]);
                }
                let w: Vec<f64> = src.iter().map(|a| a.weight).collect();
                let c = w.iter().map(|w| 2.0 * w).collect();
                Variation { value, e, d: w, c }
            }
            Variant::NaiveHalf => {
                let mut value = 0.0;
                let mut e = Vec::with_capacity(n);
                for i in 0..n {
                    let f = omega_s[i] - omega_t[i];
                    value += src[i].weight * f;
                    e.push(f);
                }
                let w: Vec<f64> = src.iter().map(|a| a.weight).collect();
                Variation {
                    value,
                    e,
                    d: w.clone(),
                    c: w,
                }
            }
            Variant::Partial => {
                let mut value = 0.0;
                let mut e = Vec::with_capacity(n);
                let mut c = Vec::with_capacity(n);
                for i in 0..n {
                    let f = omega_s[i] - omega_t[i];
                    value += src[i].weight * g(f);
                    e.push(g(f));
                    c.push(src[i].weight * g_prime(f));
                }
                Variation {
                    value,
                    e,
                    d: c.clone(),
                    c,
                }
            }
            Variant::PartialNormalized => {
                let mut value = 0.0;
                let mut e = Vec::with_capacity(n);
                let mut c = Vec::with_capacity(n);
                let mut d = Vec::with_capacity(n);
                for i in 0..n {
                    let mut capped = 0.0;
                    let mut slope = 0.0;
                    for (j, b) in tgt.iter().enumerate() {
                        let k = kst[i * m + j];
                        let r = omega_s[i] / self.target_omega[j];
                        capped += b.weight * min_eps(r, self.epsilon) * k;
                        if want_grad {
                            slope += b.weight * min_eps_derivative(r, self.epsilon) * k / self.target_omega[j];
                        }
                    }
                    let f = omega_s[i] - capped;
                    value += src[i].weight * g(f);
                    e.push(g(f));
                    let ci = src[i].weight * g_prime(f);
                    c.push(ci);
                    d.push(ci * (1.0 - slope));
                }
                Variation { value, e, d, c }
            }
        };

        if !want_grad {
            return (var.value, None);
        }

        let scale = -2.0 / (self.kernel.sigma_w() * self.kernel.sigma_w());
        let mut grads = Vec::with_capacity(n);
        for (b, atom) in src.iter().enumerate() {
            let mut gw = var.e[b];
            let mut gx = Vec3::zeros();
            let mut gu = Vec3::zeros();
            for (a, other) in src.iter().enumerate() {
                let k = kss[b * n + a];
                gw += var.d[a] * k;
                let coef = (var.d[b] * other.weight + var.d[a] * atom.weight) * k;
                gx += (atom.position - other.position) * (coef * scale);
                gu += other.direction * coef;
            }
            if var.c[b] != 0.0 {
                for (j, y) in tgt.iter().enumerate() {
                    let beta = match self.variant {
                        Variant::PartialNormalized => min_eps(omega_s[b] / self.target_omega[j], self.epsilon),
                        _ => 1.0,
                    };
                    let coef = var.c[b] * y.weight * beta * kst[b * m + j];
                    gx -= (atom.position - y.position) * (coef * scale);
                    gu -= y.direction * coef;
                }
            }
            grads.push(AtomGradient {
                position: gx,
                direction: gu,
                weight: gw,
            });
        }
        (var.value, Some(grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn atom(p: Vec3, d: Vec3, w: f64) -> Atom {
        Atom {
            position: p,
            direction: d.normalize(),
            weight: w,
        }
    }

    fn kernel() -> VarifoldKernel {
        VarifoldKernel::new(0.5).unwrap()
    }

    #[test]
    fn omega_examples() {
        let k = kernel();
        let a = atom(v(0., 0., 0.), v(1., 0., 0.), 2.0);
        assert!((omega(&a, &[a], &k).unwrap() - 2.0 * E).abs() < 1e-14);

        let far = atom(v(1e3, 0., 0.), v(1., 0., 0.), 1.0);
        assert!(omega(&far, &[a], &k).unwrap() < 1e-300);

        let first = atom(v(0., 0., 0.), v(1., 0., 0.), 1.0);
        let second = atom(v(0.5, 0., 0.), v(1., 0., 0.), 1.0);
        assert!((omega(&first, &[first, second], &k).unwrap() - (E + 1.0)).abs() < 1e-14);

        assert!(matches!(omega(&first, &[], &k), Err(Error::EmptyShape)));
    }

    #[test]
    fn inner_examples() {
        let k = kernel();
        let a = atom(v(0., 0., 0.), v(0., 1., 0.), 1.0);
        assert!((varifold_inner(&[a], &[a], &k).unwrap() - E).abs() < 1e-14);
        let b = atom(v(0., 0., 0.5), v(0., 1., 0.), 1.0);
        assert!((varifold_inner(&[a], &[b], &k).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn distance_examples() {
        let k = kernel();
        let a = atom(v(0., 0., 0.), v(1., 0., 0.), 1.0);
        let b = atom(v(0., 0., 0.), v(-1., 0., 0.), 1.0);
        assert_eq!(varifold_distance_sq(&[a], &[a], &k).unwrap(), 0.0);
        let d = varifold_distance_sq(&[a], &[b], &k).unwrap();
        assert!((d - (2.0 * E - 2.0 / E)).abs() < 1e-13);
        assert!((d - 4.700805).abs() < 1e-6);

        let s = [a, atom(v(0.3, 0.1, 0.), v(1., 1., 0.), 0.5)];
        let t: Vec<Atom> = s.iter().map(|x| Atom { position: x.position + v(100., 0., 0.), ..*x }).collect();
        let ss = varifold_inner(&s, &s, &k).unwrap();
        let tt = varifold_inner(&t, &t, &k).unwrap();
        let d = varifold_distance_sq(&s, &t, &k).unwrap();
        assert!((d - (ss + tt)).abs() <= 1e-6 * (ss + tt));
    }

    #[test]
    fn partial_examples() {
        let k = kernel();
        let a = atom(v(0., 0., 0.), v(1., 0., 0.), 1.0);
        let b = atom(v(0., 0., 0.), v(-1., 0., 0.), 1.0);
        let p = partial_dissimilarity(&[a], &[b], &k).unwrap();
        assert!((p - (E - 1.0 / E).powi(2)).abs() < 1e-13);
        assert!((p - 5.524391).abs() < 1e-6);

        // S a weighted sub-multiset of T
        let t = [a, b, atom(v(0.2, 0., 0.), v(0., 0., 1.), 0.7)];
        let s = [Atom { weight: 0.5, ..a }, b];
        assert_eq!(partial_dissimilarity(&s, &t, &k).unwrap(), 0.0);

        // doubled source mass
        assert!(partial_dissimilarity(&[a, a], &[a], &k).unwrap() > 0.0);
    }

    #[test]
    fn naive_half_examples() {
        let k = kernel();
        let s = [
            atom(v(0., 0., 0.), v(1., 0., 0.), 1.0),
            atom(v(0.4, 0.1, 0.), v(1., 0.3, 0.), 0.8),
        ];
        assert!(naive_half(&s, &s, &k).unwrap().abs() < 1e-12);
        let far: Vec<Atom> = s.iter().map(|x| Atom { position: x.position + v(0., 50., 0.), ..*x }).collect();
        let ss = varifold_inner(&s, &s, &k).unwrap();
        assert!((naive_half(&s, &far, &k).unwrap() - ss).abs() < 1e-6);

        let doubled: Vec<Atom> = s.iter().chain(s.iter()).copied().collect();
        assert!(naive_half(&s, &doubled, &k).unwrap() < 0.0);
        assert_eq!(partial_dissimilarity(&s, &doubled, &k).unwrap(), 0.0);
    }

    #[test]
    fn min_eps_examples() {
        assert!((min_eps(1.0, 0.01) - 0.95).abs() < 1e-15);
        assert!((min_eps(0.0, 0.01) - (1.0 - 1.01f64.sqrt()) / 2.0).abs() < 1e-15);
        assert!((min_eps(0.0, 0.01) + 0.0024938).abs() < 1e-7);
        assert!((min_eps(100.0, 0.01) - 0.9999747).abs() < 1e-7);
        assert!(min_eps(100.0, 0.01) < 1.0);
    }

    #[test]
    fn min_eps_properties() {
        for &eps in &[1e-4, 1e-3, 1e-2, 0.1] {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..4001 {
                let s = -5.0 + i as f64 * 0.005;
                let m = min_eps(s, eps);
                assert!(m >= prev);
                assert!(m <= s.min(1.0) + eps);
                prev = m;
            }
            assert!((min_eps(1.0, eps) - 1.0).abs() <= eps.sqrt() / 2.0 + 1e-15);
        }
    }

    #[test]
    fn min_eps_derivative_matches_difference() {
        for &s in &[-1.0, 0.2, 0.99, 1.0, 1.5, 7.0] {
            let h = 1e-6;
            let fd = (min_eps(s + h, 1e-3) - min_eps(s - h, 1e-3)) / (2.0 * h);
            assert!((fd - min_eps_derivative(s, 1e-3)).abs() < 1e-6);
        }
    }

    #[test]
    fn normalized_examples() {
        let k = kernel();
        let eps = 1e-4;
        let a = atom(v(0., 0., 0.), v(1., 0., 0.), 1.0);

        // heavier target: value negligible
        let heavy = Atom { weight: 10.0, ..a };
        let ss = varifold_inner(&[a], &[a], &k).unwrap();
        let val = partial_normalized_dissimilarity(&[a], &[heavy], &k, eps).unwrap();
        assert!(val < 1e-3 * ss, "{val}");

        // heavier source: strictly positive
        assert!(partial_normalized_dissimilarity(&[a, a], &[a], &k, eps).unwrap() > 0.0);

        // S = T with a uniform canonical function (single atom, regular
        // polygon): the only slack is min_eps(1, 1) = 1 - sqrt(eps)/2
        let single = partial_normalized_dissimilarity(&[a], &[a], &k, eps).unwrap();
        let expected = g(eps.sqrt() / 2.0 * omega(&a, &[a], &k).unwrap());
        assert!((single - expected).abs() <= 1e-12 * expected);

        let n = 24;
        let polygon: Vec<Atom> = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) * std::f64::consts::TAU / n as f64;
                atom(v(t.cos(), t.sin(), 0.), v(-t.sin(), t.cos(), 0.), 0.26)
            })
            .collect();
        let val = partial_normalized_dissimilarity(&polygon, &polygon, &k, eps).unwrap();
        let bound: f64 = polygon
            .iter()
            .map(|x| x.weight * g(eps.sqrt() / 2.0 * omega(x, &polygon, &k).unwrap()))
            .sum();
        assert!(val >= 0.0 && val <= bound * (1.0 + 1e-6), "{val} > {bound}");
    }

    /// Independent, unsorted double loop over the defining sums.
    fn normalized_by_direct_summation(s: &[Atom], t: &[Atom], k: &VarifoldKernel, eps: f64) -> f64 {
        let field = |x: &Atom, shape: &[Atom]| -> f64 { shape.iter().map(|y| y.weight * k.eval(x, y)).sum() };
        s.iter()
            .map(|x| {
                let os = field(x, s);
                let capped: f64 = t
                    .iter()
                    .map(|y| {
                        let r = os / field(y, t);
                        y.weight * (r + 1.0 - (eps + (r - 1.0).powi(2)).sqrt()) / 2.0 * k.eval(x, y)
                    })
                    .sum();
                x.weight * (os - capped).max(0.0).powi(2)
            })
            .sum()
    }

    #[test]
    fn normalized_matches_direct_summation() {
        let k = kernel();
        let eps = 1e-4;
        let s = [
            atom(v(0., 0., 0.), v(1., 0., 0.), 1.0),
            atom(v(0.3, 0.2, 0.), v(1., 1., 0.), 0.6),
            atom(v(-0.2, 0.4, 0.1), v(0., 1., 1.), 0.3),
        ];
        let t = [s[0], atom(v(0.5, 0.1, 0.), v(1., 0., 0.), 2.0), atom(v(0., 1., 0.), v(0., 0., 1.), 0.4)];
        for (a, b) in [(&s[..], &s[..]), (&s[..], &t[..]), (&t[..], &s[..])] {
            let ours = partial_normalized_dissimilarity(a, b, &k, eps).unwrap();
            let oracle = normalized_by_direct_summation(a, b, &k, eps);
            assert!((ours - oracle).abs() <= 1e-12 * oracle.max(1e-300), "{ours} vs {oracle}");
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn normalized_needs_positive_epsilon() {
        let a = atom(v(0., 0., 0.), v(1., 0., 0.), 1.0);
        assert!(partial_normalized_dissimilarity(&[a], &[a], &kernel(), 0.0).is_err());
    }

    fn arb_atoms(max: usize) -> impl Strategy<Value = Vec<Atom>> {
        prop::collection::vec(
            (
                prop::array::uniform3(-1.0..1.0f64),
                prop::array::uniform3(-1.0..1.0f64),
                0.05..2.0f64,
            ),
            1..max,
        )
        .prop_filter_map("unit direction", |raw| {
            raw.into_iter()
                .map(|(p, d, w)| {
                    let d = Vec3::from(d);
                    (d.norm() > 1e-3).then(|| atom(Vec3::from(p), d, w))
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn partial_terms_are_non_negative(s in arb_atoms(12), t in arb_atoms(12)) {
            let k = kernel();
            prop_assert!(partial_dissimilarity(&s, &t, &k).unwrap() >= 0.0);
            prop_assert!(partial_normalized_dissimilarity(&s, &t, &k, 1e-3).unwrap() >= 0.0);
        }

        #[test]
        fn inner_is_exactly_symmetric(s in arb_atoms(12), t in arb_atoms(12)) {
            let k = kernel();
            prop_assert_eq!(varifold_inner(&s, &t, &k).unwrap(), varifold_inner(&t, &s, &k).unwrap());
            prop_assert_eq!(varifold_distance_sq(&s, &t, &k).unwrap(), varifold_distance_sq(&t, &s, &k).unwrap());
        }

        #[test]
        fn partial_is_monotone_under_subsets(s in arb_atoms(14), t in arb_atoms(14), mask in prop::collection::vec(any::<bool>(), 14)) {
            let k = kernel();
            let sub: Vec<Atom> = s.iter().zip(&mask).filter(|(_, &m)| m).map(|(a, _)| *a).collect();
            prop_assume!(!sub.is_empty());
            let full = partial_dissimilarity(&s, &t, &k).unwrap();
            prop_assert!(partial_dissimilarity(&sub, &t, &k).unwrap() <= full + 1e-12);
        }

        #[test]
        fn sub_multiset_source_is_exactly_zero(t in arb_atoms(14), mask in prop::collection::vec(any::<bool>(), 14), shrink in 0.1..1.0f64) {
            let k = kernel();
            let sub: Vec<Atom> = t.iter().zip(&mask).filter(|(_, &m)| m).map(|(a, _)| Atom { weight: a.weight * shrink, ..*a }).collect();
            prop_assume!(!sub.is_empty());
            prop_assert_eq!(partial_dissimilarity(&sub, &t, &k).unwrap(), 0.0);
        }
    }
}
