//! Discrete Radon measures: energy densities with atoms, the space X, the
//! functionals F_ε and F, and concentration diagnostics.

use std::sync::Arc;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DomainMask, Field, Grid};
use crate::hdiff::energy_density_values;
use crate::heis::{h1, GroupParams};
use crate::par;

/// Default clustering radius in units of the horizontal spacing, and the
/// default mass threshold.
pub const DEFAULT_ATOM_RADIUS_H: f64 = 4.0;
pub const DEFAULT_ATOM_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub weight: f64,
    pub location: [f64; 3],
}

/// Density on the full grid plus atoms plus a scalar non-atomic singular mass.
#[derive(Debug, Clone)]
pub struct EnergyMeasure {
    mask: Arc<DomainMask>,
    density: Vec<f64>,
    pub atoms: Vec<Atom>,
    pub residual_mass: f64,
}

impl EnergyMeasure {
    pub fn new(mask: &Arc<DomainMask>, density: Vec<f64>, atoms: Vec<Atom>, residual_mass: f64) -> Result<Self> {
        let g = mask.grid();
        if density.len() != g.len() {
            return Err(Error::LengthMismatch {
                expected: g.len(),
                found: density.len(),
            });
        }
        if let Some((node, &value)) = density.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NonFinite { node, value });
        }
        for a in &atoms {
            if !(a.weight > 0.0 && a.weight.is_finite()) || !g.contains(a.location) {
                return Err(Error::Invariant(format!(
                    "atom {a:?} needs positive weight and a location in the box"
                )));
            }
        }
        if !(residual_mass >= 0.0 && residual_mass.is_finite()) {
            return Err(Error::Invariant("residual mass must be nonnegative".into()));
        }
        Ok(Self {
            mask: Arc::clone(mask),
            density,
            atoms,
            residual_mass,
        })
    }

    pub fn zero(mask: &Arc<DomainMask>) -> Self {
        Self {
            mask: Arc::clone(mask),
            density: vec![0.0; mask.grid().len()],
            atoms: Vec::new(),
            residual_mass: 0.0,
        }
    }

    /// Unit atom at `at` with no density.
    pub fn dirac(mask: &Arc<DomainMask>, at: [f64; 3]) -> Result<Self> {
        Self::new(
            mask,
            vec![0.0; mask.grid().len()],
            vec![Atom {
                weight: 1.0,
                location: at,
            }],
            0.0,
        )
    }

    pub fn mask(&self) -> &Arc<DomainMask> {
        &self.mask
    }

    pub fn grid(&self) -> &Grid {
        self.mask.grid()
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn density_mass(&self) -> f64 {
        let d = &self.density;
        par::sum(d.len(), |i| d[i]) * self.grid().cell_volume()
    }

    pub fn atom_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.density_mass() + self.atom_mass() + self.residual_mass
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidParameter(format!("measure scale {c} must be positive")));
        }
        Ok(Self {
            mask: Arc::clone(&self.mask),
            density: self.density.iter().map(|v| c * v).collect(),
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    weight: c * a.weight,
                    location: a.location,
                })
                .collect(),
            residual_mass: c * self.residual_mass,
        })
    }

    /// Density mass inside the Korányi ball B_r(center).
    pub fn ball_mass(&self, center: [f64; 3], radius: f64) -> f64 {
        let mut s = 0.0;
        self.grid().for_each_in_ball(center, radius, |i| s += self.density[i]);
        s * self.grid().cell_volume()
    }
}

/// |D_H u|² dξ.
pub fn energy_density(u: &Field) -> EnergyMeasure {
    EnergyMeasure {
        mask: Arc::clone(u.mask()),
        density: energy_density_values(u),
        atoms: Vec::new(),
        residual_mass: 0.0,
    }
}

/// |u|^p dξ.
pub fn lp_density(u: &Field, p: f64) -> EnergyMeasure {
    EnergyMeasure {
        mask: Arc::clone(u.mask()),
        density: u.values().iter().map(|v| v.abs().powf(p)).collect(),
        atoms: Vec::new(),
        residual_mass: 0.0,
    }
}

/// Greedy ball clustering.
///
/// Repeatedly takes the Korányi ball of radius ρ (centered at a node) that
/// carries the most density. If that mass is at least θ times the total mass
/// of the input measure, the ball's density becomes an atom at its density
/// barycenter. Total mass is preserved. On large grids the heaviest ball is
/// located by a strided scan refined with a pattern search, so it can miss
/// the exact optimum by a few nodes.
pub fn detect_atoms(m: &EnergyMeasure, rho: f64, theta: f64) -> Result<EnergyMeasure> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!("ball radius {rho} must be positive")));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold {theta} outside (0, 1)")));
    }
    let g = m.grid().clone();
    let w = g.cell_volume();
    let reference = m.total_mass();
    let mut out = m.clone();
    if reference == 0.0 {
        return Ok(out);
    }
    let cap = (1.0 / theta).ceil() as usize + 1;
    for _ in 0..cap {
        let Some((c, s)) = heaviest_ball(&g, &out.density, rho) else {
            break;
        };
        let mass = s * w;
        if !(mass >= theta * reference) {
            break;
        }
        let center = g.node(c);
        let mut bary = [0.0; 3];
        let mut removed = 0.0;
        let mut members = Vec::new();
        g.for_each_in_ball(center, rho, |i| members.push(i));
        for &i in &members {
            let v = out.density[i];
            let p = g.node(i);
            (0..3).for_each(|a| bary[a] += v * p[a]);
            removed += v;
            out.density[i] = 0.0;
        }
        bary.iter_mut().for_each(|b| *b /= removed);
        out.atoms.push(Atom {
            weight: removed * w,
            location: bary,
        });
    }
    Ok(out)
}

/// Node work allowed for one exhaustive search of the heaviest ball.
const BALL_SEARCH_BUDGET: f64 = 2e8;

/// Node-centered Korányi ball of radius ρ carrying the most density, among
/// centers with nonzero density.
///
/// Every such node is tried when that fits the budget. Otherwise candidates
/// sit on a strided sublattice and the winner is polished by a pattern
/// search whose step halves down to one node.
fn heaviest_ball(g: &Grid, d: &[f64], rho: f64) -> Option<(usize, f64)> {
    let mass = |c: usize| {
        if d[c] == 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut s = 0.0;
        g.for_each_in_ball(g.node(c), rho, |i| s += d[i]);
        s
    };
    let h = g.spacing();
    let res = g.res();
    let reach = [rho, rho, rho * rho];
    let per_ball: f64 = (0..3)
        .map(|a| (2.0 * reach[a] / h[a] + 1.0).min(res[a] as f64))
        .product();
    let work = per_ball * g.len() as f64;
    if work <= BALL_SEARCH_BUDGET {
        return par::argmax(g.len(), mass);
    }
    let stride = ((work / BALL_SEARCH_BUDGET).cbrt().ceil() as usize).max(2);
    let lattice: Vec<usize> = (0..g.len())
        .filter(|&c| {
            let ijk = g.ijk(c);
            ijk.iter().all(|v| v % stride == 0) && d[c] != 0.0
        })
        .collect();
    let (mut best, mut best_mass) = par::argmax(lattice.len(), |j| mass(lattice[j]))
        .map(|(j, m)| (lattice[j], m))
        .filter(|(_, m)| m.is_finite())?;
    let mut step = stride;
    loop {
        let ijk = g.ijk(best);
        let mut moved = false;
        for a in 0..3 {
            for dir in [-1i64, 1] {
                let v = ijk[a] as i64 + dir * step as i64;
                if v < 0 || v >= res[a] as i64 {
                    continue;
                }
                let mut n = ijk;
                n[a] = v as usize;
                let c = g.index(n[0], n[1], n[2]);
                let m = mass(c);
                if m > best_mass {
                    best = c;
                    best_mass = m;
                    moved = true;
                }
            }
        }
        if !moved {
            if step == 1 {
                break;
            }
            step /= 2;
        }
    }
    Some((best, best_mass))
}

/// F_ε(u) = ∫|u|^{2*−ε}.
pub fn f_eps(u: &Field, eps: f64) -> Result<f64> {
    let crit = GroupParams::h1().crit_exp();
    if !(eps >= 0.0 && eps < crit - 2.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon {eps} outside [0, {})",
            crit - 2.0
        )));
    }
    Ok(u.quadrature_lp(crit - eps))
}

/// Slack on the nodewise and total-mass constraints of X.
pub const X_SLACK: f64 = 1e-10;

/// (u, μ) with μ ≥ |D_H u|² dξ and mass(μ) ≤ 1.
#[derive(Debug, Clone)]
pub struct XPair {
    pub u: Field,
    pub mu: EnergyMeasure,
}

impl XPair {
    pub fn new(u: Field, mu: EnergyMeasure) -> Result<Self> {
        let p = Self { u, mu };
        p.validate()?;
        Ok(p)
    }

    /// The pair (u, |D_H u|² dξ).
    pub fn from_field(u: Field) -> Result<Self> {
        let mu = energy_density(&u);
        Self::new(u, mu)
    }

    pub fn validate(&self) -> Result<()> {
        if self.u.grid() != self.mu.grid() {
            return Err(Error::GridMismatch);
        }
        let e = energy_density_values(&self.u);
        let scale = e.iter().fold(0.0f64, |m, v| m.max(*v)).max(1.0);
        if let Some(i) = (0..e.len()).find(|&i| self.mu.density[i] < e[i] - X_SLACK * scale) {
            return Err(Error::Invariant(format!(
                "measure density {} below |D_H u|² = {} at node {i}",
                self.mu.density[i], e[i]
            )));
        }
        let mass = self.mu.total_mass();
        if mass > 1.0 + X_SLACK {
            return Err(Error::Invariant(format!("total mass {mass} exceeds 1")));
        }
        Ok(())
    }
}

/// F(u, μ) = ∫|u|^{2*} + S*·Σⱼ μⱼ^{2*/2}.
pub fn gamma_limit_f(p: &XPair, s_star: f64) -> Result<f64> {
    p.validate()?;
    let crit = GroupParams::h1().crit_exp();
    let atoms: f64 = p.mu.atoms.iter().map(|a| a.weight.powf(crit / 2.0)).sum();
    Ok(p.u.quadrature_lp(crit) + s_star * atoms)
}

/// Relative slack allowed over S*·mass^{2*/2} in [`sstar_bound_check`].
pub const SSTAR_BOUND_TOL: f64 = 0.02;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundCheck {
    pub value: f64,
    /// S*·mass(μ)^{2*/2}.
    pub bound: f64,
    /// bound·(1 + tol) − value, nonnegative on success.
    pub margin: f64,
}

/// Checks F(u, μ) ≤ S*·mass(μ)^{2*/2} (≤ S*) up to [`SSTAR_BOUND_TOL`].
pub fn sstar_bound_check(p: &XPair, s_star: f64) -> Result<BoundCheck> {
    let value = gamma_limit_f(p, s_star)?;
    let crit = GroupParams::h1().crit_exp();
    let bound = s_star * p.mu.total_mass().powf(crit / 2.0);
    let margin = bound * (1.0 + SSTAR_BOUND_TOL) - value;
    if margin < 0.0 {
        return Err(Error::BoundViolation {
            value,
            bound,
            tol: SSTAR_BOUND_TOL,
        });
    }
    Ok(BoundCheck { value, bound, margin })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtomPair {
    pub mu: f64,
    pub nu: f64,
    pub mu_location: [f64; 3],
    pub nu_location: [f64; 3],
    /// Ŝ*·μ^{2*/2}.
    pub bound: f64,
    /// ν / bound.
    pub ratio: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CcaReport {
    pub pairs: Vec<AtomPair>,
    pub unpaired_mu: Vec<Atom>,
    pub unpaired_nu: Vec<Atom>,
    pub all_ok: bool,
}

/// Relative slack of the concentration-compactness inequality check.
pub const CCA_TOL: f64 = 0.05;

/// Detects atoms of |D_H u|² and |u|^{2*} for the last field of the sequence,
/// pairs them by nearest location and checks νⱼ ≤ Ŝ*·μⱼ^{2*/2}·(1 + 5%).
/// Each threshold θ is relative to its own measure's total mass.
pub fn cca_check(seq: &[Field], rho: f64, theta: f64, s_star: f64) -> Result<CcaReport> {
    if seq.len() < 2 {
        return Err(Error::InvalidParameter("need at least two fields".into()));
    }
    for u in &seq[1..] {
        seq[0].same_grid(u)?;
    }
    let last = seq.last().unwrap();
    let crit = GroupParams::h1().crit_exp();
    let mu = detect_atoms(&energy_density(last), rho, theta)?.atoms;
    let nu = detect_atoms(&lp_density(last, crit), rho, theta)?.atoms;
    let mut used = vec![false; nu.len()];
    let mut pairs = Vec::new();
    let mut unpaired_mu = Vec::new();
    for a in &mu {
        let best = nu
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, b)| (i, h1::distance(a.location, b.location)))
            .min_by(|x, y| x.1.total_cmp(&y.1));
        match best {
            Some((i, d)) if d < 2.0 * rho => {
                used[i] = true;
                let b = nu[i];
                let bound = s_star * a.weight.powf(crit / 2.0);
                let ratio = b.weight / bound;
                pairs.push(AtomPair {
                    mu: a.weight,
                    nu: b.weight,
                    mu_location: a.location,
                    nu_location: b.location,
                    bound,
                    ratio,
                    ok: ratio <= 1.0 + CCA_TOL,
                });
            }
            _ => unpaired_mu.push(*a),
        }
    }
    let unpaired_nu: Vec<Atom> = nu.iter().zip(&used).filter(|(_, u)| !**u).map(|(a, _)| *a).collect();
    let all_ok = pairs.iter().all(|p| p.ok);
    Ok(CcaReport {
        pairs,
        unpaired_mu,
        unpaired_nu,
        all_ok,
    })
}

/// Number of functions in the weak-* test bank.
pub const BANK_SIZE: usize = 16;
/// Version of the bank; bump when its definition changes.
pub const BANK_VERSION: u32 = 1;
const BANK_SEED: u64 = 0x4853_4631_0000_0001;

#[derive(Debug, Clone, Copy)]
struct BankBump {
    center: [f64; 3],
    width: [f64; 3],
}

fn bank_bumps() -> &'static [BankBump; 8] {
    static BUMPS: OnceLock<[BankBump; 8]> = OnceLock::new();
    BUMPS.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(BANK_SEED);
        std::array::from_fn(|_| BankBump {
            center: std::array::from_fn(|_| rng.gen_range(0.3..0.7)),
            width: std::array::from_fn(|_| rng.gen_range(0.2..0.3)),
        })
    })
}

/// φᵢ at a point, in coordinates normalized to the unit cube of the box.
///
/// φ₀..φ₇ are the tensor cosines Π_d cos(π(X_d − ½))^{m_d} with m_d ∈ {1, 2}
/// read from the bits of i; φ₈..φ₁₅ are (1 − r²)³ bumps with seeded centers
/// and widths. All of them vanish on the faces of the box.
pub fn test_function(grid: &Grid, i: usize, p: [f64; 3]) -> f64 {
    let b = grid.bounds();
    let x: [f64; 3] = std::array::from_fn(|d| (p[d] - b[d][0]) / (b[d][1] - b[d][0]));
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return 0.0;
    }
    if i < 8 {
        (0..3)
            .map(|d| {
                let c = (std::f64::consts::PI * (x[d] - 0.5)).cos().max(0.0);
                if (i >> d) & 1 == 1 {
                    c * c
                } else {
                    c
                }
            })
            .product()
    } else {
        let bump = bank_bumps()[i - 8];
        let r2: f64 = (0..3).map(|d| ((x[d] - bump.center[d]) / bump.width[d]).powi(2)).sum();
        if r2 < 1.0 {
            (1.0 - r2).powi(3)
        } else {
            0.0
        }
    }
}

/// ⟨m, φᵢ⟩ for the whole bank. The residual mass has no location and is
/// left out.
pub fn weak_star_pairings(m: &EnergyMeasure) -> [f64; BANK_SIZE] {
    let g = m.grid();
    let w = g.cell_volume();
    let d = m.density();
    std::array::from_fn(|i| {
        let dens = par::sum(g.len(), |n| {
            if d[n] == 0.0 {
                0.0
            } else {
                d[n] * test_function(g, i, g.node(n))
            }
        }) * w;
        let atoms: f64 = m.atoms.iter().map(|a| a.weight * test_function(g, i, a.location)).sum();
        dens + atoms
    })
}

/// ∫u φᵢ for the whole bank (weak convergence proxy for fields).
pub fn field_pairings(u: &Field) -> [f64; BANK_SIZE] {
    let g = u.grid();
    let v = u.values();
    std::array::from_fn(|i| {
        par::sum(g.len(), |n| {
            if v[n] == 0.0 {
                0.0
            } else {
                v[n] * test_function(g, i, g.node(n))
            }
        }) * g.cell_volume()
    })
}

/// Node of max |u|.
///
/// The energy density of a bubble vanishes at its center (the horizontal
/// gradient of U is zero there), so the field maximum is the meaningful
/// concentration point.
pub fn peak_of(u: &Field) -> Result<[f64; 3]> {
    let (i, _) = u.argmax_abs().ok_or(Error::ZeroField("peak of a zero field"))?;
    Ok(u.grid().node(i))
}

/// Fraction of the energy of `u` inside Korányi balls around `center`.
pub fn energy_fractions(u: &Field, center: [f64; 3], radii: &[f64]) -> Result<Vec<f64>> {
    let m = energy_density(u);
    let total = m.density_mass();
    if total == 0.0 {
        return Err(Error::ZeroField("energy fractions of a zero field"));
    }
    Ok(radii.iter().map(|&r| m.ball_mass(center, r) / total).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcReport {
    pub peak: [f64; 3],
    /// (radius, energy fraction) pairs in input order.
    pub fractions: Vec<(f64, f64)>,
    pub weak_pairings: Vec<f64>,
    /// Peak within 2h of the mask edge.
    pub boundary: bool,
}

pub fn concentration_report(u: &Field, radii: &[f64]) -> Result<ConcReport> {
    let peak = peak_of(u)?;
    let f = energy_fractions(u, peak, radii)?;
    let h = u.grid().spacing();
    let hops = (2.0 * h[0].max(h[1]) / h[0].min(h[1])).ceil().max(2.0) as usize;
    let boundary = u.mask().near_edge(u.grid().nearest_node(peak), hops);
    Ok(ConcReport {
        peak,
        fractions: radii.iter().copied().zip(f).collect(),
        weak_pairings: weak_star_pairings(&energy_density(u)).to_vec(),
        boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extremals::{normalized_bubble, BubbleSpec};
    use crate::grid::field_from_function;
    use crate::hdiff::dirichlet_energy;

    fn cube(n: usize) -> Arc<DomainMask> {
        Arc::new(DomainMask::full_box(Grid::cube(1.0, n).unwrap()).unwrap())
    }

    #[test]
    fn energy_density_examples() {
        let m = cube(17);
        let z = energy_density(&Field::zeros(&m));
        assert_eq!(z.total_mass(), 0.0);
        let u = field_from_function(&m, |p| (1.0 - p[0] * p[0]) * (1.0 - p[2] * p[2]) * (1.0 + p[1])).unwrap();
        let e = energy_density(&u).total_mass();
        assert!((e - dirichlet_energy(&u)).abs() <= 1e-12 * e);
    }

    #[test]
    fn spread_density_has_no_atoms_and_mass_is_kept() {
        let m = cube(17);
        let u = field_from_function(&m, |p| (1.0 - p[0] * p[0]) * (1.0 - p[1] * p[1]) * (1.0 - p[2] * p[2])).unwrap();
        let mu = energy_density(&u);
        let out = detect_atoms(&mu, 0.25, 0.3).unwrap();
        assert!(out.atoms.is_empty());
        let found = detect_atoms(&mu, 1.2, 0.1).unwrap();
        assert!(!found.atoms.is_empty());
        assert!((found.total_mass() - mu.total_mass()).abs() <= 1e-12 * mu.total_mass());
    }

    #[test]
    fn gamma_limit_examples() {
        let m = cube(9);
        let s = 0.7;
        let dirac = XPair::new(Field::zeros(&m), EnergyMeasure::dirac(&m, [0.0; 3]).unwrap()).unwrap();
        assert_eq!(gamma_limit_f(&dirac, s).unwrap(), s);
        let c = sstar_bound_check(&dirac, s).unwrap();
        assert!((c.value - c.bound).abs() <= 1e-12 * s);
        let two = EnergyMeasure::new(
            &m,
            vec![0.0; m.grid().len()],
            vec![
                Atom {
                    weight: 0.5,
                    location: [0.5, 0.0, 0.0],
                },
                Atom {
                    weight: 0.5,
                    location: [-0.5, 0.0, 0.0],
                },
            ],
            0.0,
        )
        .unwrap();
        let p = XPair::new(Field::zeros(&m), two).unwrap();
        assert!((gamma_limit_f(&p, s).unwrap() - s / 2.0).abs() < 1e-15);
        let heavy = EnergyMeasure::dirac(&m, [0.0; 3]).unwrap().scaled(1.5).unwrap();
        assert!(XPair::new(Field::zeros(&m), heavy).is_err());
    }

    #[test]
    fn field_pair_without_atoms() {
        let m = cube(17);
        let u = normalized_bubble(&BubbleSpec::new(0.4, [0.0; 3]), &m)
            .unwrap()
            .scaled(0.8);
        let p = XPair::from_field(u.clone()).unwrap();
        assert!(p.mu.atoms.is_empty() && p.mu.residual_mass == 0.0);
        assert_eq!(gamma_limit_f(&p, 1.0).unwrap(), u.quadrature_lp(4.0));
        assert!(f_eps(&u, 2.0).is_err());
        assert_eq!(f_eps(&u, 0.0).unwrap(), u.quadrature_lp(4.0));
    }

    #[test]
    fn bank_is_linear_and_vanishes_on_zero() {
        let m = cube(9);
        assert!(weak_star_pairings(&EnergyMeasure::zero(&m)).iter().all(|&v| v == 0.0));
        let u = field_from_function(&m, |p| 1.0 + p[0]).unwrap();
        let mu = energy_density(&u);
        let a = weak_star_pairings(&mu);
        let b = weak_star_pairings(&mu.scaled(3.0).unwrap());
        for i in 0..BANK_SIZE {
            assert!((b[i] - 3.0 * a[i]).abs() <= 1e-12 * b[i].abs().max(1e-300));
        }
        let d = weak_star_pairings(&EnergyMeasure::dirac(&m, [0.1, 0.2, -0.1]).unwrap());
        for (i, v) in d.iter().enumerate() {
            assert_eq!(*v, test_function(m.grid(), i, [0.1, 0.2, -0.1]));
        }
    }

    #[test]
    fn concentration_report_rejects_zero() {
        let m = cube(9);
        assert!(concentration_report(&Field::zeros(&m), &[0.5]).is_err());
    }
}
