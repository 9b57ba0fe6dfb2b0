//! Explicit sequences built from bubbles: localized concentrating bubbles,
//! glued multi-bubble fields, recovery pairs, the X_N approximation and
//! Palais-Smale-type sequences. Also the functionals E_λ and E* and the
//! size of dE_λ.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extremals::{normalize_energy, BubbleSpec};
use crate::grid::{field_from_function, raw_pairing, DomainMask, Field, Grid};
use crate::hdiff::{apply_stiffness, dirichlet_energy};
use crate::heis::{h1, GroupParams};
use crate::measures::{self, energy_density, Atom, EnergyMeasure, XPair, BANK_SIZE};

/// Version of the JSON schema of [`RecoverySpec`] and [`PsSpec`].
pub const SCHEMA_VERSION: u32 = 1;

/// Slack on the total mass of a recovery pair.
pub const RECOVERY_MASS_SLACK: f64 = 1e-8;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

/// The bump ψ as a function of the gauge: 1 on [0, 1], (1 − (s − 1)²)³ on
/// [1, 2], 0 beyond. C¹ at s = 1 and C² at s = 2.
pub fn cutoff_profile(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let a = s - 1.0;
        let b = 1.0 - a * a;
        b * b * b
    }
}

/// ψ(δ_{1/ρ}(ξ₀⁻¹ ∘ p)): ≡ 1 on B_ρ(ξ₀), 0 outside B_{2ρ}(ξ₀).
pub fn cutoff(center: [f64; 3], rho: f64, p: [f64; 3]) -> f64 {
    cutoff_profile(h1::distance(center, p) / rho)
}

/// The larger horizontal grid step.
pub fn horizontal_spacing(g: &Grid) -> f64 {
    let h = g.spacing();
    h[0].max(h[1])
}

/// Moves a center whose nearest node is outside the mask onto the nearest
/// interior node. Centers further than two grid steps (in the gauge) from the domain are
/// rejected.
pub fn nudge_center(mask: &DomainMask, center: [f64; 3]) -> Result<[f64; 3]> {
    let g = mask.grid();
    if !center.iter().all(|c| c.is_finite()) || !g.contains(center) {
        return Err(Error::InvalidParameter(format!("center {center:?} outside the box")));
    }
    if mask.inside(g.nearest_node(center)) {
        return Ok(center);
    }
    let node = g.node(mask.nearest_inside(center));
    let h = g.spacing();
    if h1::distance(node, center) > 2.0 * h[0].max(h[1]).max(h[2].sqrt()) {
        return Err(Error::InvalidParameter(format!(
            "center {center:?} is not in the closed domain"
        )));
    }
    Ok(node)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// φ·w_ε with w_ε = ε^{−1}U(δ_{1/ε}(ξ⁻¹ ∘ ·)) and φ the cutoff of radius ρ,
/// before normalization.
fn localized_bubble(mask: &Arc<DomainMask>, center: [f64; 3], eps: f64, rho: f64) -> Result<Field> {
    let b = BubbleSpec::new(eps, center);
    field_from_function(mask, move |p| {
        let c = cutoff(center, rho, p);
        if c == 0.0 {
            0.0
        } else {
            c * b.value(p)
        }
    })
}

/// Concentrating bubble at `center` localized to B_{2ρ}, scaled to unit
/// Dirichlet energy.
pub fn recovery_single(center: [f64; 3], eps: f64, rho: f64, mask: &Arc<DomainMask>) -> Result<Field> {
    check_positive("eps", eps)?;
    check_positive("cutoff radius", rho)?;
    let c = nudge_center(mask, center)?;
    let raw = localized_bubble(mask, c, eps, rho)?;
    normalize_energy(&raw).map_err(|_| Error::ZeroField("bubble support is empty after masking"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub weight: f64,
    pub center: [f64; 3],
}

/// Targets Σμⱼδ_{ξⱼ} and the cutoff radius of a recovery construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoverySpec {
    #[serde(default = "schema_version")]
    pub version: u32,
    pub targets: Vec<Target>,
    pub cutoff_rho: f64,
    pub eps_ladder: Vec<f64>,
    /// Diffuse part u of the limit pair; only [`recovery_pair`] uses it.
    #[serde(skip)]
    pub background: Option<Field>,
}

impl RecoverySpec {
    pub fn new(targets: Vec<Target>, cutoff_rho: f64, eps_ladder: Vec<f64>) -> Self {
        Self {
            version: SCHEMA_VERSION,
            targets,
            cutoff_rho,
            eps_ladder,
            background: None,
        }
    }

    pub fn with_background(mut self, u: Field) -> Self {
        self.background = Some(u);
        self
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "recovery spec version {} (expected {SCHEMA_VERSION})",
                self.version
            )));
        }
        if self.targets.is_empty() {
            return Err(Error::InvalidParameter("no targets".into()));
        }
        let mut total = 0.0;
        for t in &self.targets {
            if !(t.weight > 0.0 && t.weight <= 1.0) {
                return Err(Error::InvalidParameter(format!("weight {} not in (0, 1]", t.weight)));
            }
            total += t.weight;
        }
        if !(total < 1.0) {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, need < 1")));
        }
        check_positive("cutoff radius", self.cutoff_rho)?;
        let h = horizontal_spacing(grid);
        if self.cutoff_rho < 2.0 * h {
            return Err(Error::InvalidParameter(format!(
                "cutoff radius {} below two grid steps ({h})",
                self.cutoff_rho
            )));
        }
        for (i, a) in self.targets.iter().enumerate() {
            for b in &self.targets[i + 1..] {
                let d = h1::distance(a.center, b.center);
                if !(d > 4.0 * self.cutoff_rho) {
                    return Err(Error::InvalidParameter(format!(
                        "centers {:?} and {:?} are {d} apart, need > 4ρ = {}",
                        a.center,
                        b.center,
                        4.0 * self.cutoff_rho
                    )));
                }
            }
        }
        if self.eps_ladder.is_empty()
            || self.eps_ladder.iter().any(|e| !(*e > 0.0))
            || self.eps_ladder.windows(2).any(|w| !(w[1] < w[0]))
        {
            return Err(Error::InvalidParameter(
                "eps ladder must be nonempty, positive and strictly descending".into(),
            ));
        }
        Ok(())
    }
}

/// Nodes whose one-sided differences can see a nonzero value of `u`.
fn stencil_support(u: &Field) -> Vec<bool> {
    let g = u.grid();
    let [nx, ny, nt] = g.res();
    let v = u.values();
    let mut s = vec![false; v.len()];
    for (idx, _) in v.iter().enumerate().filter(|(_, x)| **x != 0.0) {
        let [i, j, k] = g.ijk(idx);
        s[idx] = true;
        if i > 0 {
            s[idx - 1] = true;
        }
        if i + 1 < nx {
            s[idx + 1] = true;
        }
        if j > 0 {
            s[idx - nx] = true;
        }
        if j + 1 < ny {
            s[idx + nx] = true;
        }
        if k > 0 {
            s[idx - nx * ny] = true;
        }
        if k + 1 < nt {
            s[idx + nx * ny] = true;
        }
    }
    s
}

fn glue(targets: &[Target], eps: f64, rho: f64, mask: &Arc<DomainMask>) -> Result<Field> {
    let parts = targets
        .iter()
        .map(|t| recovery_single(t.center, eps, rho, mask))
        .collect::<Result<Vec<_>>>()?;
    let supports: Vec<Vec<bool>> = parts.iter().map(stencil_support).collect();
    for i in 0..parts.len() {
        for j in i + 1..parts.len() {
            if supports[i].iter().zip(&supports[j]).any(|(a, b)| *a && *b) {
                return Err(Error::SupportOverlap(format!(
                    "components {i} and {j} share difference stencils at eps = {eps}"
                )));
            }
        }
    }
    let mut sum = Field::zeros(mask);
    for (t, u) in targets.iter().zip(&parts) {
        sum = sum.axpy(t.weight.sqrt(), u)?;
    }
    Ok(sum)
}

/// u^{(Σ)} = Σⱼ √μⱼ·uⱼ. The components have disjoint stencil supports, so
/// the Dirichlet energy is Σμⱼ up to rounding.
pub fn recovery_glued(spec: &RecoverySpec, eps: f64, mask: &Arc<DomainMask>) -> Result<Field> {
    spec.validate(mask.grid())?;
    glue(&spec.targets, eps, spec.cutoff_rho, mask)
}

/// φ_ρ = 1 − Σⱼ ψ(δ_{1/ρ}(ξⱼ⁻¹ ∘ ·)): zero on each B_ρ(ξⱼ), one away from
/// the B_{2ρ}(ξⱼ).
pub fn hole_cutoff(targets: &[Target], rho: f64, p: [f64; 3]) -> f64 {
    1.0 - targets.iter().map(|t| cutoff(t.center, rho, p)).sum::<f64>()
}

/// The pair (u φ_ρ + u^{(Σ)}, |D_H(u φ_ρ + u^{(Σ)})|² dξ).
///
/// The glued bubbles are localized with radius ρ/2, so they live inside the
/// holes B_ρ(ξⱼ) of φ_ρ and the two parts barely interact.
pub fn recovery_pair(spec: &RecoverySpec, eps: f64, mask: &Arc<DomainMask>) -> Result<XPair> {
    spec.validate(mask.grid())?;
    let u = spec
        .background
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("recovery pair needs a background field".into()))?;
    if u.grid() != mask.grid() {
        return Err(Error::GridMismatch);
    }
    let targets: Vec<Target> = spec
        .targets
        .iter()
        .map(|t| {
            Ok(Target {
                weight: t.weight,
                center: nudge_center(mask, t.center)?,
            })
        })
        .collect::<Result<_>>()?;
    let rho = spec.cutoff_rho;
    let g = mask.grid();
    let vals = u.values();
    let mut bar: Vec<f64> = (0..g.len())
        .map(|i| {
            if vals[i] == 0.0 || !mask.inside(i) {
                0.0
            } else {
                vals[i] * hole_cutoff(&targets, rho, g.node(i))
            }
        })
        .collect();
    let glued = glue(&targets, eps, 0.5 * rho, mask)?;
    bar.iter_mut().zip(glued.values()).for_each(|(a, b)| *a += b);
    let bar = Field::from_values(mask, bar)?;
    let mu = energy_density(&bar);
    let mass = mu.total_mass();
    if mass > 1.0 + RECOVERY_MASS_SLACK {
        return Err(Error::BoundViolation {
            value: mass,
            bound: 1.0,
            tol: RECOVERY_MASS_SLACK,
        });
    }
    XPair::new(bar, mu)
}

/// (a u, a²·μ) with μ's atom list cut at the first `n` atoms.
pub fn xn_approximation(p: &XPair, n: usize, a: f64) -> Result<XPair> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::InvalidParameter(format!("a_N = {a} not in (0, 1)")));
    }
    let a2 = a * a;
    let density: Vec<f64> = p.mu.density().iter().map(|d| a2 * d).collect();
    let atoms: Vec<Atom> =
        p.mu.atoms
            .iter()
            .take(n)
            .map(|t| Atom {
                weight: a2 * t.weight,
                location: t.location,
            })
            .collect();
    let mu = EnergyMeasure::new(p.mu.mask(), density, atoms, a2 * p.mu.residual_mass)?;
    XPair::new(p.u.scaled(a), mu)
}

/// E_λ(u) = ½∫|D_H u|² − (λ/2)∫u² − (1/2*)∫|u|^{2*}.
pub fn energy_e_lambda(u: &Field, lambda: f64) -> f64 {
    let crit = GroupParams::h1().crit_exp();
    0.5 * dirichlet_energy(u) - 0.5 * lambda * u.quadrature_lp(2.0) - u.quadrature_lp(crit) / crit
}

/// E*(u) = ½∫|D_H u|² − (1/2*)∫|u|^{2*}, for fields on a reference box.
pub fn energy_e_star(u: &Field) -> f64 {
    energy_e_lambda(u, 0.0)
}

/// Size of dE_λ(u).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    /// max over the test bank of |dE_λ(u)[φ]| / ‖D_H φ‖₂.
    pub dual: f64,
    /// ‖L u − λu − |u|^{2*−2}u‖₂ · h^{3/2}, h the larger horizontal step.
    pub l2_scaled: f64,
}

/// The test bank restricted to `mask`, each φ with its Dirichlet norm.
pub fn bank_fields(mask: &Arc<DomainMask>) -> Result<Vec<(Field, f64)>> {
    let g = mask.grid().clone();
    (0..BANK_SIZE)
        .map(|i| {
            let phi = field_from_function(mask, |p| measures::test_function(&g, i, p))?;
            let norm = dirichlet_energy(&phi).sqrt();
            Ok((phi, norm))
        })
        .collect()
}

pub fn de_residual(u: &Field, lambda: f64) -> Result<Residual> {
    let bank = bank_fields(u.mask())?;
    de_residual_with(u, lambda, &bank)
}

/// [`de_residual`] with a precomputed bank, for sequences on one mask.
pub fn de_residual_with(u: &Field, lambda: f64, bank: &[(Field, f64)]) -> Result<Residual> {
    let g = u.grid();
    let crit = GroupParams::h1().crit_exp();
    let lu = apply_stiffness(u);
    let r: Vec<f64> = lu
        .values()
        .iter()
        .zip(u.values())
        .map(|(l, v)| {
            if *v == 0.0 {
                *l
            } else {
                l - lambda * v - v.abs().powf(crit - 2.0) * v
            }
        })
        .collect();
    let mut dual: f64 = 0.0;
    for (phi, norm) in bank {
        if phi.grid() != g {
            return Err(Error::GridMismatch);
        }
        if *norm > 0.0 {
            dual = dual.max(raw_pairing(g, &r, phi.values()).abs() / norm);
        }
    }
    let h = g.spacing();
    let l2 = raw_pairing(g, &r, &r).sqrt() * h[0].max(h[1]).powf(1.5);
    Ok(Residual { dual, l2_scaled: l2 })
}

/// One bubble family of a Palais-Smale sequence: scale λ₀·r^{−k} at a fixed
/// center, localized to B_{2ρ}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsBubble {
    pub lambda0: f64,
    pub rate: f64,
    pub center: [f64; 3],
}

impl PsBubble {
    pub fn scale(&self, k: i64) -> f64 {
        self.lambda0 * self.rate.powf(-(k as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub seed: u64,
    /// ‖noise‖_{2*} relative to ‖u_k‖_{2*}.
    pub relative: f64,
}

/// The amplitude a with −Δ_H(aU) = (aU)^{2*−1}, which is 2 on ℍ¹.
pub const CRITICAL_AMPLITUDE: f64 = 2.0;

fn critical_amplitude() -> f64 {
    CRITICAL_AMPLITUDE
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsSpec {
    #[serde(default = "schema_version")]
    pub version: u32,
    pub bubbles: Vec<PsBubble>,
    /// λ of E_λ.
    #[serde(default)]
    pub lambda_param: f64,
    /// Inclusive range of k.
    pub k_range: [i64; 2],
    /// Localization radius of every bubble.
    pub cutoff_rho: f64,
    #[serde(default = "critical_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    /// u⁽⁰⁾; zero when absent.
    #[serde(skip)]
    pub base: Option<Field>,
}

impl PsSpec {
    pub fn new(bubbles: Vec<PsBubble>, k_range: [i64; 2], cutoff_rho: f64) -> Self {
        Self {
            version: SCHEMA_VERSION,
            bubbles,
            lambda_param: 0.0,
            k_range,
            cutoff_rho,
            amplitude: CRITICAL_AMPLITUDE,
            noise: None,
            base: None,
        }
    }

    pub fn ks(&self) -> impl Iterator<Item = i64> {
        self.k_range[0]..=self.k_range[1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "PS spec version {} (expected {SCHEMA_VERSION})",
                self.version
            )));
        }
        if self.k_range[1] < self.k_range[0] {
            return Err(Error::InvalidParameter("empty k range".into()));
        }
        check_positive("cutoff radius", self.cutoff_rho)?;
        if !self.amplitude.is_finite() || !self.lambda_param.is_finite() {
            return Err(Error::InvalidParameter("amplitude and λ must be finite".into()));
        }
        for b in &self.bubbles {
            check_positive("lambda0", b.lambda0)?;
            if !(b.rate > 1.0 && b.rate.is_finite()) {
                return Err(Error::InvalidParameter(format!("rate {} must exceed 1", b.rate)));
            }
        }
        for (i, a) in self.bubbles.iter().enumerate() {
            for b in &self.bubbles[i + 1..] {
                if a.rate == b.rate && a.center == b.center {
                    return Err(Error::InvalidParameter(
                        "two bubbles share rate and center, so their parameters do not separate".into(),
                    ));
                }
            }
        }
        if let Some(n) = self.noise {
            if !(n.relative >= 0.0 && n.relative.is_finite()) {
                return Err(Error::InvalidParameter("noise level must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Localized bubble amplitude·λ^{−1}·ψ·U(δ_{1/λ}(ξ⁻¹ ∘ ·)).
pub fn ps_bubble_field(b: &PsBubble, k: i64, rho: f64, amplitude: f64, mask: &Arc<DomainMask>) -> Result<Field> {
    let spec = BubbleSpec::new(b.scale(k), b.center).with_amplitude(amplitude);
    spec.validate()?;
    field_from_function(mask, move |p| {
        let c = cutoff(b.center, rho, p);
        if c == 0.0 {
            0.0
        } else {
            c * spec.value(p)
        }
    })
}

/// u_k = u⁽⁰⁾ + Σⱼ localized bubbles of scale λ₀ⱼ rⱼ^{−k}, for k in the range.
pub fn synth_ps_sequence(spec: &PsSpec, mask: &Arc<DomainMask>) -> Result<Vec<Field>> {
    spec.validate()?;
    let g = mask.grid();
    if let Some(b) = &spec.base {
        if b.grid() != g {
            return Err(Error::GridMismatch);
        }
    }
    for b in &spec.bubbles {
        let mut escaped = !g.contains(b.center);
        g.for_each_in_ball(b.center, 2.0 * spec.cutoff_rho, |i| escaped |= !mask.inside(i));
        if escaped {
            return Err(Error::SupportEscape(format!(
                "support B(ξ = {:?}, 2ρ = {}) leaves the domain",
                b.center,
                2.0 * spec.cutoff_rho
            )));
        }
    }
    let ks: Vec<i64> = spec.ks().collect();
    ks.par_iter()
        .map(|&k| {
            let mut u = match &spec.base {
                Some(b) => Field::from_values(mask, b.values().to_vec())?,
                None => Field::zeros(mask),
            };
            for b in &spec.bubbles {
                u = u.add(&ps_bubble_field(b, k, spec.cutoff_rho, spec.amplitude, mask)?)?;
            }
            if let Some(n) = spec.noise {
                u = add_noise(&u, n, k)?;
            }
            Ok(u)
        })
        .collect()
}

/// Adds seeded uniform noise scaled to `relative`·‖u‖_{2*}.
fn add_noise(u: &Field, n: NoiseSpec, k: i64) -> Result<Field> {
    if n.relative == 0.0 {
        return Ok(u.clone());
    }
    let mask = u.mask();
    let mut rng = ChaCha8Rng::seed_from_u64(n.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let raw: Vec<f64> = (0..u.grid().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let noise = Field::from_values(mask, raw)?;
    let crit = GroupParams::h1().crit_exp();
    let nn = noise.norm_lp(crit);
    if nn == 0.0 {
        return Ok(u.clone());
    }
    u.axpy(n.relative * u.norm_lp(crit) / nn, &noise)
}

/// Energy bookkeeping of one element of a sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e_lambda: f64,
    pub e_star_per_bubble: Vec<f64>,
    pub residual_dual_norm: f64,
    /// E_λ(u_k) − E_λ(u⁽⁰⁾) − Σⱼ E*(u⁽ʲ⁾).
    pub splitting_defect: f64,
}

pub fn energy_report(u: &Field, base: Option<&Field>, profiles: &[Field], lambda: f64) -> Result<EnergyReport> {
    let e = energy_e_lambda(u, lambda);
    let e0 = base.map_or(0.0, |b| energy_e_lambda(b, lambda));
    let stars: Vec<f64> = profiles.iter().map(energy_e_star).collect();
    let res = de_residual(u, lambda)?;
    Ok(EnergyReport {
        e_lambda: e,
        splitting_defect: e - e0 - stars.iter().sum::<f64>(),
        e_star_per_bubble: stars,
        residual_dual_norm: res.dual,
    })
}
