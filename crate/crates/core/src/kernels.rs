//! Varifold kernel (Gaussian in space times oriented exponential in
//! direction) and the multi-scale Gaussian deformation kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Atom, Vec3};

pub const DEFAULT_SCALES: [f64; 4] = [1.0, 4.0, 8.0, 16.0];

#[inline]
pub(crate) fn dist2(x: &Vec3, y: &Vec3) -> f64 {
    let d = x - y;
    d.x * d.x + d.y * d.y + d.z * d.z
}

#[inline]
pub(crate) fn dot(u: &Vec3, v: &Vec3) -> f64 {
    u.x * v.x + u.y * v.y + u.z * v.z
}

/// Scale of the spatial factor `exp(-|x - y|^2 / sigma_w^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarifoldKernel {
    sigma_w: f64,
}

impl VarifoldKernel {
    pub fn new(sigma_w: f64) -> Result<Self> {
        if !(sigma_w > 0.0 && sigma_w.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma_w must be positive, got {sigma_w}")));
        }
        Ok(Self { sigma_w })
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    pub fn spatial(&self, x: &Vec3, y: &Vec3) -> f64 {
        (-dist2(x, y) / (self.sigma_w * self.sigma_w)).exp()
    }

    /// `exp(<u, v>)`. Panics unless both inputs are unit vectors.
    pub fn directional(u: &Vec3, v: &Vec3) -> f64 {
        assert!(
            (u.norm() - 1.0).abs() <= 1e-9 && (v.norm() - 1.0).abs() <= 1e-9,
            "directional kernel needs unit vectors"
        );
        dot(u, v).exp()
    }

    /// Product kernel on position/direction pairs.
    pub fn eval(&self, a: &Atom, b: &Atom) -> f64 {
        self.pair(&a.position, &a.direction, &b.position, &b.direction)
    }

    /// Single-exp evaluation used by all pairwise sums, so that the same
    /// pair always produces the same bits whichever side it comes from.
    #[inline]
    pub(crate) fn pair(&self, x: &Vec3, u: &Vec3, y: &Vec3, v: &Vec3) -> f64 {
        (dot(u, v) - dist2(x, y) / (self.sigma_w * self.sigma_w)).exp()
    }
}

/// `K_V(x, y) = sum_s exp(-|x - y|^2 / (sigma0 / s)^2)`, applied
/// identically to each velocity coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationKernel {
    sigma0: f64,
    scales: Vec<f64>,
    /// `(s / sigma0)^2` per scale.
    inv_widths2: Vec<f64>,
}

/// Kernel value with the radial derivative factors needed by the
/// Hamiltonian equations and their linearization:
/// `value = sum e_s`, `a = sum e_s / h_s^2`, `c = sum e_s / h_s^4`,
/// with `h_s = sigma0 / s`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RadialTerms {
    pub value: f64,
    pub a: f64,
    pub c: f64,
}

impl DeformationKernel {
    pub fn new(sigma0: f64, scales: Vec<f64>) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma0 must be positive, got {sigma0}")));
        }
        if scales.is_empty() {
            return Err(Error::InvalidConfig("scales must not be empty".into()));
        }
        if let Some(s) = scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!("scales must be positive, got {s}")));
        }
        let inv_widths2 = scales.iter().map(|s| (s / sigma0) * (s / sigma0)).collect();
        Ok(Self {
            sigma0,
            scales,
            inv_widths2,
        })
    }

    pub fn with_default_scales(sigma0: f64) -> Result<Self> {
        Self::new(sigma0, DEFAULT_SCALES.to_vec())
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn eval(&self, x: &Vec3, y: &Vec3) -> f64 {
        self.value_r2(dist2(x, y))
    }

    #[inline]
    pub(crate) fn value_r2(&self, r2: f64) -> f64 {
        self.inv_widths2.iter().map(|w| (-r2 * w).exp()).sum()
    }

    #[inline]
    pub(crate) fn radial_r2(&self, r2: f64) -> RadialTerms {
        let mut t = RadialTerms { value: 0.0, a: 0.0, c: 0.0 };
        for w in &self.inv_widths2 {
            let e = (-r2 * w).exp();
            t.value += e;
            t.a += e * w;
            t.c += e * w * w;
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn spatial_values() {
        let k = VarifoldKernel::new(0.7).unwrap();
        let x = v(0.1, 0.2, 0.3);
        assert_eq!(k.spatial(&x, &x), 1.0);
        let y = x + v(0.7, 0., 0.);
        assert!((k.spatial(&x, &y) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k.spatial(&x, &(x + v(0., 1.4, 0.))) - (-4.0f64).exp()).abs() < 1e-15);
        assert!((k.spatial(&x, &y) - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn directional_values() {
        let u = v(1., 0., 0.);
        assert!((VarifoldKernel::directional(&u, &u) - E).abs() < 1e-15);
        assert!((VarifoldKernel::directional(&u, &-u) - 1.0 / E).abs() < 1e-15);
        assert_eq!(VarifoldKernel::directional(&u, &v(0., 1., 0.)), 1.0);
    }

    #[test]
    #[should_panic]
    fn directional_rejects_non_unit() {
        VarifoldKernel::directional(&v(2., 0., 0.), &v(1., 0., 0.));
    }

    #[test]
    fn product_kernel() {
        let k = VarifoldKernel::new(0.5).unwrap();
        let a = Atom {
            position: v(0., 0., 0.),
            direction: v(0., 0., 1.),
            weight: 1.0,
        };
        let mut b = a;
        assert!((k.eval(&a, &b) - E).abs() < 1e-15);
        b.direction = -a.direction;
        assert!((k.eval(&a, &b) - 1.0 / E).abs() < 1e-15);
        b.direction = a.direction;
        b.position = v(0.5, 0., 0.);
        assert!((k.eval(&a, &b) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn deformation_kernel_values() {
        let k = DeformationKernel::with_default_scales(2.0).unwrap();
        let x = v(1., 2., 3.);
        assert_eq!(k.eval(&x, &x), 4.0);
        assert!(k.eval(&x, &v(1e3, 0., 0.)) < 1e-300);
        let single = DeformationKernel::new(2.0, vec![1.0]).unwrap();
        assert!((single.eval(&x, &(x + v(0., 2., 0.))) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs() {
        assert!(VarifoldKernel::new(0.0).is_err());
        assert!(VarifoldKernel::new(-1.0).is_err());
        assert!(DeformationKernel::new(1.0, vec![]).is_err());
        assert!(DeformationKernel::new(1.0, vec![1.0, 0.0]).is_err());
        assert!(DeformationKernel::new(f64::NAN, vec![1.0]).is_err());
    }

    #[test]
    fn radial_terms_are_derivatives() {
        // d/dr2 of value is -a, d/dr2 of a is -c
        let k = DeformationKernel::new(1.3, vec![1.0, 3.0]).unwrap();
        let r2 = 0.21;
        let h = 1e-6;
        let t = k.radial_r2(r2);
        let dv = (k.value_r2(r2 + h) - k.value_r2(r2 - h)) / (2.0 * h);
        let da = (k.radial_r2(r2 + h).a - k.radial_r2(r2 - h).a) / (2.0 * h);
        assert!((dv + t.a).abs() < 1e-6 * t.a);
        assert!((da + t.c).abs() < 1e-6 * t.c);
        assert_eq!(t.value, k.value_r2(r2));
    }
}
