//! Closed-form arithmetic on the Heisenberg group ℍⁿ = ℝⁿ × ℝⁿ × ℝ.
//!
//! Points are written ξ = (x, y, t). The group law is
//!
//! ```text
//! (x, y, t) ∘ (x', y', t') = (x + x', y + y', t + t' + 2⟨y, x'⟩ − 2⟨x, y'⟩)
//! ```
//!
//! with identity 0 and inverse −ξ. Dilations act anisotropically,
//! δ_λ(x, y, t) = (λx, λy, λ²t), and the Korányi gauge
//! |ξ| = (|z|⁴ + t²)^{1/4} is homogeneous of degree one under them.
//!
//! The grid code only ever needs n = 1, so [`h1`] carries allocation-free
//! copies of the same formulas on `[f64; 3]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimension data of ℍⁿ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupParams {
    n: usize,
}

impl GroupParams {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        Ok(Self { n })
    }

    /// The first Heisenberg group, Q = 4 and 2* = 4.
    pub const fn h1() -> Self {
        Self { n: 1 }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Homogeneous dimension Q = 2n + 2.
    pub fn q(&self) -> usize {
        2 * self.n + 2
    }

    /// Critical Sobolev exponent 2* = 2Q / (Q − 2).
    pub fn crit_exp(&self) -> f64 {
        let q = self.q() as f64;
        2.0 * q / (q - 2.0)
    }

    /// Exponent (Q − 2)/2 of the energy-invariant bubble prefactor.
    pub fn bubble_exponent(&self) -> f64 {
        (self.q() as f64 - 2.0) / 2.0
    }
}

impl Default for GroupParams {
    fn default() -> Self {
        Self::h1()
    }
}

/// A point ξ = (x, y, t) of ℍⁿ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: f64,
}

impl GroupPoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>, t: f64) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        Ok(Self { x, y, t })
    }

    pub fn origin(n: usize) -> Self {
        Self {
            x: vec![0.0; n],
            y: vec![0.0; n],
            t: 0.0,
        }
    }

    /// Point of ℍ¹.
    pub fn h1(x: f64, y: f64, t: f64) -> Self {
        Self {
            x: vec![x],
            y: vec![y],
            t,
        }
    }

    pub fn from_h1(p: [f64; 3]) -> Self {
        Self::h1(p[0], p[1], p[2])
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn inverse(&self) -> Self {
        Self {
            x: self.x.iter().map(|v| -v).collect(),
            y: self.y.iter().map(|v| -v).collect(),
            t: -self.t,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }

    /// Squared horizontal norm |z|² = |x|² + |y|².
    pub fn z_norm2(&self) -> f64 {
        self.x.iter().chain(&self.y).map(|v| v * v).sum()
    }

    /// Coordinates as an ℍ¹ triple; errors for n ≠ 1.
    pub fn to_h1(&self) -> Result<[f64; 3]> {
        if self.n() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: self.n(),
            });
        }
        Ok([self.x[0], self.y[0], self.t])
    }
}

fn check_same_n(a: &GroupPoint, b: &GroupPoint) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch {
            expected: a.n(),
            got: b.n(),
        });
    }
    Ok(())
}

pub(crate) fn check_scale(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::NonPositiveScale(lambda));
    }
    Ok(())
}

/// Group product a ∘ b.
pub fn compose(a: &GroupPoint, b: &GroupPoint) -> Result<GroupPoint> {
    check_same_n(a, b)?;
    let mut twist = 0.0;
    for i in 0..a.n() {
        twist += a.y[i] * b.x[i] - a.x[i] * b.y[i];
    }
    Ok(GroupPoint {
        x: a.x.iter().zip(&b.x).map(|(p, q)| p + q).collect(),
        y: a.y.iter().zip(&b.y).map(|(p, q)| p + q).collect(),
        t: a.t + b.t + 2.0 * twist,
    })
}

/// Non-isotropic dilation δ_λ.
pub fn dilate(lambda: f64, xi: &GroupPoint) -> Result<GroupPoint> {
    check_scale(lambda)?;
    Ok(GroupPoint {
        x: xi.x.iter().map(|v| lambda * v).collect(),
        y: xi.y.iter().map(|v| lambda * v).collect(),
        t: lambda * lambda * xi.t,
    })
}

/// Left translation τ_{ξ0}(ξ) = ξ0 ∘ ξ.
pub fn left_translate(xi0: &GroupPoint, xi: &GroupPoint) -> Result<GroupPoint> {
    compose(xi0, xi)
}

/// Korányi gauge (|z|⁴ + t²)^{1/4}.
pub fn gauge(xi: &GroupPoint) -> f64 {
    let z2 = xi.z_norm2();
    (z2 * z2 + xi.t * xi.t).sqrt().sqrt()
}

/// Korányi distance |η⁻¹ ∘ ξ|.
pub fn distance(eta: &GroupPoint, xi: &GroupPoint) -> Result<f64> {
    Ok(gauge(&compose(&eta.inverse(), xi)?))
}

/// δ_{1/λ}(ξ0⁻¹ ∘ ξ): the coordinates in which a bubble centred at ξ0 with
/// scale λ is the standard profile.
pub fn scaled_translate(lambda: f64, xi0: &GroupPoint, xi: &GroupPoint) -> Result<GroupPoint> {
    check_scale(lambda)?;
    dilate(1.0 / lambda, &compose(&xi0.inverse(), xi)?)
}

/// The same operations for n = 1 on plain triples.
pub mod h1 {
    #[inline]
    pub fn compose(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        [
            a[0] + b[0],
            a[1] + b[1],
            a[2] + b[2] + 2.0 * (a[1] * b[0] - a[0] * b[1]),
        ]
    }

    #[inline]
    pub fn inverse(a: [f64; 3]) -> [f64; 3] {
        [-a[0], -a[1], -a[2]]
    }

    #[inline]
    pub fn dilate(lambda: f64, a: [f64; 3]) -> [f64; 3] {
        [lambda * a[0], lambda * a[1], lambda * lambda * a[2]]
    }

    #[inline]
    pub fn gauge(a: [f64; 3]) -> f64 {
        let z2 = a[0] * a[0] + a[1] * a[1];
        (z2 * z2 + a[2] * a[2]).sqrt().sqrt()
    }

    /// |η⁻¹ ∘ ξ|.
    #[inline]
    pub fn distance(eta: [f64; 3], xi: [f64; 3]) -> f64 {
        gauge(compose(inverse(eta), xi))
    }

    /// δ_{1/λ}(ξ0⁻¹ ∘ ξ); λ is assumed positive.
    #[inline]
    pub fn scaled_translate(lambda: f64, xi0: [f64; 3], xi: [f64; 3]) -> [f64; 3] {
        dilate(1.0 / lambda, compose(inverse(xi0), xi))
    }
}
