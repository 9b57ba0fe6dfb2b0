//! Jerison–Lee extremals, the bubble family U_{λ,ξ₀}, and a quadrature
//! estimate of the best constant Ŝ*.
//!
//! The canonical profile is U(ξ) = ((1 + |z|²)² + t²)^{−(Q−2)/4} with c₀ = 1.
//! Bubbles carry the prefactor λ^{−(Q−2)/2}, which keeps their Dirichlet
//! energy independent of λ in the continuum.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{field_from_function, DomainMask, Field, Grid};
use crate::hdiff::{dirichlet_energy, weighted_energy_raw};
use crate::heis::{self, check_scale, h1, GroupParams, GroupPoint};
use crate::par;

pub fn jerison_lee_value(xi: &GroupPoint, params: GroupParams) -> f64 {
    let z2 = xi.z_norm2();
    let a = (1.0 + z2) * (1.0 + z2) + xi.t * xi.t;
    a.powf(-(params.q() as f64 - 2.0) / 4.0)
}

/// U on ℍ¹: ((1 + |z|²)² + t²)^{−1/2}.
#[inline]
pub fn jl_h1(p: [f64; 3]) -> f64 {
    let s = 1.0 + p[0] * p[0] + p[1] * p[1];
    1.0 / (s * s + p[2] * p[2]).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleSpec {
    pub lambda: f64,
    pub center: [f64; 3],
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl BubbleSpec {
    pub fn new(lambda: f64, center: [f64; 3]) -> Self {
        Self {
            lambda,
            center,
            amplitude: 1.0,
        }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_scale(self.lambda)?;
        if !self.amplitude.is_finite() || !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidParameter("bubble parameters must be finite".into()));
        }
        Ok(())
    }

    /// amplitude · λ^{−1} · U(δ_{1/λ}(ξ₀⁻¹ ∘ ξ)).
    #[inline]
    pub fn value(&self, p: [f64; 3]) -> f64 {
        self.amplitude / self.lambda * jl_h1(h1::scaled_translate(self.lambda, self.center, p))
    }
}

/// Samples a bubble on the mask (zero outside).
pub fn bubble_field(spec: &BubbleSpec, mask: &Arc<DomainMask>) -> Result<Field> {
    spec.validate()?;
    let s = *spec;
    field_from_function(mask, move |p| s.value(p))
}

/// Rescales `u` to unit discrete Dirichlet energy.
pub fn normalize_energy(u: &Field) -> Result<Field> {
    let e = dirichlet_energy(u);
    if !(e > 0.0) {
        return Err(Error::ZeroField("field has zero Dirichlet energy"));
    }
    Ok(u.scaled(1.0 / e.sqrt()))
}

pub fn normalized_bubble(spec: &BubbleSpec, mask: &Arc<DomainMask>) -> Result<Field> {
    let b = bubble_field(spec, mask)?;
    normalize_energy(&b).map_err(|_| Error::ZeroField("bubble vanishes on the mask"))
}

/// Options for [`estimate_sstar`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SstarConfig {
    /// Nodes per axis at each level, coarse to fine.
    pub ladder: Vec<usize>,
    pub lambda: f64,
    pub center: [f64; 3],
    /// Box half-widths in units of λ (horizontal) and λ² (vertical).
    pub half_xy: f64,
    pub half_t: f64,
}

impl Default for SstarConfig {
    fn default() -> Self {
        Self {
            ladder: vec![33, 65],
            lambda: 1.0,
            center: [0.0; 3],
            half_xy: 3.0,
            half_t: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SstarLevel {
    pub resolution: usize,
    pub energy: f64,
    pub l4: f64,
    pub sstar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SstarEstimate {
    /// Richardson extrapolation of the two finest levels.
    pub value: f64,
    /// |Ŝ*(finest) − Ŝ*(next coarser)|.
    pub error: f64,
    /// Spreads between consecutive levels, coarse to fine.
    pub spreads: Vec<f64>,
    pub levels: Vec<SstarLevel>,
    /// a with −Δ_H(aU) = (aU)^{2*−1}, i.e. √(energy / L⁴ mass).
    pub critical_amplitude: f64,
}

/// Ŝ* = ∫|U|⁴ / (∫|D_H U|²)² for the unit-energy bubble on ℍ¹.
///
/// Each level samples U_{λ,ξ₀} on the box ξ₀ + [−Aλ, Aλ]² × [−Tλ², Tλ²]
/// with trapezoid weights and centered differences (one extra layer of
/// samples outside the box), then adds the exterior of the box in closed
/// form using the explicit decay of |U|⁴ and |D_H U|².
pub fn estimate_sstar(cfg: &SstarConfig) -> Result<SstarEstimate> {
    check_scale(cfg.lambda)?;
    if cfg.ladder.len() < 2 || cfg.ladder.iter().any(|&n| n < 5) {
        return Err(Error::InvalidParameter(
            "Ŝ* needs at least two levels of ≥ 5 nodes".into(),
        ));
    }
    if !(cfg.half_xy > 0.0 && cfg.half_t > 0.0) {
        return Err(Error::InvalidParameter("box half-widths must be positive".into()));
    }
    let (tail_e, tail_l4) = exterior_tails(cfg);
    let mut levels = Vec::with_capacity(cfg.ladder.len());
    for &n in &cfg.ladder {
        let (e, l4) = box_integrals(cfg, n)?;
        let (energy, l4) = (e + tail_e, l4 + tail_l4);
        levels.push(SstarLevel {
            resolution: n,
            energy,
            l4,
            sstar: l4 / (energy * energy),
        });
    }
    let spreads: Vec<f64> = levels.windows(2).map(|w| (w[1].sstar - w[0].sstar).abs()).collect();
    let (c, f) = (&levels[levels.len() - 2], &levels[levels.len() - 1]);
    let hc = 1.0 / (c.resolution - 1) as f64;
    let hf = 1.0 / (f.resolution - 1) as f64;
    let r = hf * hf / (hc * hc - hf * hf);
    let value = f.sstar + (f.sstar - c.sstar) * r;
    let error = *spreads.last().unwrap();
    if !(value.is_finite() && value > 0.0) || error > 0.1 * value {
        return Err(Error::NotConverged {
            what: "Ŝ* resolution ladder",
            iterations: levels.len(),
            change: error / value.abs(),
        });
    }
    let critical_amplitude = (f.energy / f.l4).sqrt();
    Ok(SstarEstimate {
        value,
        error,
        spreads,
        levels,
        critical_amplitude,
    })
}

/// Trapezoid-weighted (energy, L⁴ mass) of the bubble over the box.
fn box_integrals(cfg: &SstarConfig, n: usize) -> Result<(f64, f64)> {
    let l = cfg.lambda;
    let c = cfg.center;
    let (a, t) = (cfg.half_xy * l, cfg.half_t * l * l);
    let h = [
        2.0 * a / (n - 1) as f64,
        2.0 * a / (n - 1) as f64,
        2.0 * t / (n - 1) as f64,
    ];
    // one extra layer on every side so the one-sided differences on the box
    // faces see true samples; the layer itself gets zero weight
    let ext = Grid::new(
        [
            [c[0] - a - h[0], c[0] + a + h[0]],
            [c[1] - a - h[1], c[1] + a + h[1]],
            [c[2] - t - h[2], c[2] + t + h[2]],
        ],
        [n + 2; 3],
    )?;
    let spec = BubbleSpec::new(l, c);
    let mut vals = vec![0.0; ext.len()];
    par::fill(&mut vals, |i| spec.value(ext.node(i)));
    let m = n + 2;
    let weight = |i: usize| -> f64 {
        if i == 0 || i == m - 1 {
            0.0
        } else if i == 1 || i == m - 2 {
            0.5
        } else {
            1.0
        }
    };
    let w = |idx: usize| {
        let [i, j, k] = ext.ijk(idx);
        weight(i) * weight(j) * weight(k)
    };
    let e = weighted_energy_raw(&ext, &vals, w);
    let l4 = par::sum(ext.len(), |i| {
        let v2 = vals[i] * vals[i];
        w(i) * v2 * v2
    }) * ext.cell_volume();
    Ok((e, l4))
}

/// Closed-form (energy, L⁴ mass) of the unit bubble outside the sampled box,
/// in rescaled coordinates η = δ_{1/λ}(ξ₀⁻¹ ∘ ξ).
///
/// |U|⁴ = 1/w⁴ and |D_H U|² = 4s/w⁴ with s = |z|², w² = (1+s)² + t². The
/// exterior splits into (a) |z|∞ > A with t over all of ℝ and (b) the
/// square with |t + c(z)| > T, where c is the shear 2(y₀X − x₀Y)/λ that the
/// translation introduces.
fn exterior_tails(cfg: &SstarConfig) -> (f64, f64) {
    let a = cfg.half_xy;
    let big_t = cfg.half_t;
    let (gx, gw) = gauss_legendre(32);

    // (a) ∫_ℝ dt/(w²+t²)² = π/(2w³) with w = 1+s. Integrating radially
    // from the square's edge r₀(θ), s₀ = r₀², gives per radian
    // energy π(1/(1+s₀) − 1/(2(1+s₀)²)) and L⁴ mass π/(8(1+s₀)²).
    // The square has eightfold symmetry, so integrate θ over [0, π/4] only.
    let (mut ea, mut la) = (0.0, 0.0);
    let half = PI / 8.0;
    for (x, w) in gx.iter().zip(&gw) {
        let th = half * (1.0 + x);
        let r = a / th.cos();
        let q = 1.0 + r * r;
        ea += w * half * PI * (1.0 / q - 0.5 / (q * q));
        la += w * half * PI / (8.0 * q * q);
    }
    let (ea, la) = (8.0 * ea, 8.0 * la);

    // (b) one-sided t tails over the square by composite Gauss–Legendre
    let [x0, y0, _] = cfg.center;
    let l = cfg.lambda;
    let panels = 16;
    let (mut eb, mut lb) = (0.0, 0.0);
    let pw = 2.0 * a / panels as f64;
    for pi in 0..panels {
        for (xi, wxi) in gx.iter().zip(&gw) {
            let xx = -a + pw * (pi as f64 + 0.5 * (1.0 + xi));
            for pj in 0..panels {
                for (yj, wyj) in gx.iter().zip(&gw) {
                    let yy = -a + pw * (pj as f64 + 0.5 * (1.0 + yj));
                    let s = xx * xx + yy * yy;
                    let w = 1.0 + s;
                    let c = 2.0 * (y0 * xx - x0 * yy) / l;
                    let j = t_tail(w, big_t - c) + t_tail(w, big_t + c);
                    let wt = wxi * wyj * 0.25 * pw * pw;
                    eb += wt * 4.0 * s * j;
                    lb += wt * j;
                }
            }
        }
    }
    (ea + eb, la + lb)
}

/// ∫_τ^∞ dt / (w² + t²)², valid for any real τ.
fn t_tail(w: f64, tau: f64) -> f64 {
    let w2 = w * w;
    PI / (4.0 * w2 * w) - tau / (2.0 * w2 * (w2 + tau * tau)) - (tau / w).atan() / (2.0 * w2 * w)
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 {
                1.0
            } else if n == 1 {
                z
            } else {
                p1
            };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Discrete quotient ∫|u|^{2*} / (∫|D_H u|²)^{2*/2} for n = 1.
pub fn sobolev_quotient(u: &Field) -> Result<f64> {
    let e = dirichlet_energy(u);
    if !(e > 0.0) {
        return Err(Error::ZeroField("quotient of a zero field"));
    }
    Ok(u.quadrature_lp(4.0) / (e * e))
}

/// Point of the group used by [`jerison_lee_value`] for an ℍ¹ triple.
pub fn h1_point(p: [f64; 3]) -> GroupPoint {
    heis::GroupPoint::from_h1(p)
}
