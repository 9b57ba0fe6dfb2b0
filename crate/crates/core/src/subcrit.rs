//! Subcritical maximization S*_ε = sup{∫|u|^{4−ε} : ∫|D_H u|² ≤ 1} on a
//! masked domain, its ε-sweep, and an inverse-power eigenvalue oracle.
//!
//! The maximizer is found by the normalized inverse iteration
//! u ← L⁻¹(|u|^{p−2}u), rescaled to unit energy after every step. Each step
//! cannot decrease ∫|u|^p, which is checked as the iteration runs.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extremals::{bubble_field, normalize_energy, BubbleSpec};
use crate::grid::{pairing, DomainMask, Field, MaskShape};
use crate::hdiff::{apply_stiffness, default_cg_max_iter, dirichlet_energy, solve_poisson_from};
use crate::heis::GroupParams;
use crate::io::num;
use crate::measures;

/// Initial guess for the fixed point.
#[derive(Debug, Clone, Default)]
pub enum Init {
    /// Bubble of scale `lambda` at `center`; `None` picks the mask centroid
    /// and a third of its diameter.
    Bubble {
        lambda: Option<f64>,
        center: Option<[f64; 3]>,
    },
    /// Uniform(0, 1) values on the mask from a seeded ChaCha8 stream.
    Random {
        seed: u64,
    },
    Provided(Field),
    #[default]
    Auto,
}

#[derive(Debug, Clone)]
pub struct SubcritConfig {
    pub epsilon: f64,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub cg_tol: f64,
    /// `None` uses the hdiff default for the mask.
    pub cg_max_iter: Option<usize>,
    pub init: Init,
    /// History length of the Anderson mixing; 0 gives the plain iteration.
    pub anderson_depth: usize,
}

impl SubcritConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            fp_tol: 1e-7,
            fp_max_iter: 2000,
            cg_tol: 1e-10,
            cg_max_iter: None,
            init: Init::Auto,
            anderson_depth: 5,
        }
    }

    pub fn exponent(&self) -> f64 {
        GroupParams::h1().crit_exp() - self.epsilon
    }

    pub fn validate(&self) -> Result<()> {
        let crit = GroupParams::h1().crit_exp();
        if !(self.epsilon > 0.0 && self.epsilon < crit - 2.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon {} outside (0, {})",
                self.epsilon,
                crit - 2.0
            )));
        }
        if !(self.fp_tol > 0.0 && self.cg_tol > 0.0) || self.fp_max_iter == 0 {
            return Err(Error::InvalidParameter(
                "tolerances and iteration caps must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub epsilon: f64,
    pub s_eps: f64,
    pub maximizer: Field,
    pub multiplier: f64,
    pub el_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// ∫|u_m|^p after each step.
    pub history: Vec<f64>,
    /// Largest relative drop of ∫|u_m|^p between steps (0 if monotone).
    pub worst_ascent_drop: f64,
    pub peak: [f64; 3],
    pub final_change: f64,
}

/// |u|^{p−2}u on interior nodes.
fn nonlinearity(u: &Field, p: f64) -> Field {
    if p == 4.0 {
        u.map(|v| v * v * v)
    } else {
        u.map(|v| if v == 0.0 { 0.0 } else { v.abs().powf(p - 2.0) * v })
    }
}

/// Default bubble start: mask centroid, scale a third of the diameter.
fn default_start(mask: &Arc<DomainMask>) -> BubbleSpec {
    let (center, lambda) = match mask.shape() {
        MaskShape::KoranyiBall { center, radius } => (*center, radius / 3.0),
        _ => {
            let g = mask.grid();
            let mut c = [0.0; 3];
            for i in (0..g.len()).filter(|&i| mask.inside(i)) {
                let p = g.node(i);
                (0..3).for_each(|a| c[a] += p[a]);
            }
            c.iter_mut().for_each(|v| *v /= mask.count() as f64);
            let node = g.node(mask.nearest_inside(c));
            (node, mask.diameter() / 6.0)
        }
    };
    BubbleSpec::new(lambda.max(1e-6), center)
}

fn initial_field(init: &Init, mask: &Arc<DomainMask>) -> Result<Field> {
    let raw = match init {
        Init::Auto => bubble_field(&default_start(mask), mask)?,
        Init::Bubble { lambda, center } => {
            let d = default_start(mask);
            let spec = BubbleSpec::new(lambda.unwrap_or(d.lambda), center.unwrap_or(d.center));
            bubble_field(&spec, mask)?
        }
        Init::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let v = (0..mask.grid().len()).map(|_| rng.gen::<f64>()).collect();
            Field::from_values(mask, v)?
        }
        Init::Provided(f) => {
            if f.grid() != mask.grid() || f.mask().flags() != mask.flags() {
                return Err(Error::GridMismatch);
            }
            Field::from_raw(mask, f.values().to_vec())
        }
    };
    normalize_energy(&raw)
}

/// Anderson mixing for the fixed point x = G(x), on raw nodal arrays.
struct Anderson {
    depth: usize,
    xs: VecDeque<Vec<f64>>,
    fs: VecDeque<Vec<f64>>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Self {
            depth,
            xs: VecDeque::new(),
            fs: VecDeque::new(),
        }
    }

    fn reset(&mut self) {
        self.xs.clear();
        self.fs.clear();
    }

    /// Records (x, G(x)) and returns the mixed iterate once two pairs exist.
    fn mix(&mut self, x: &[f64], g: &[f64]) -> Option<Vec<f64>> {
        if self.depth == 0 {
            return None;
        }
        let f: Vec<f64> = g.iter().zip(x).map(|(a, b)| a - b).collect();
        self.xs.push_back(x.to_vec());
        self.fs.push_back(f);
        if self.xs.len() > self.depth + 1 {
            self.xs.pop_front();
            self.fs.pop_front();
        }
        let m = self.xs.len() - 1;
        if m == 0 {
            return None;
        }
        let diff =
            |v: &VecDeque<Vec<f64>>, i: usize| -> Vec<f64> { v[i + 1].iter().zip(&v[i]).map(|(a, b)| a - b).collect() };
        let df: Vec<Vec<f64>> = (0..m).map(|i| diff(&self.fs, i)).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let fk = &self.fs[m];
        let mut a = vec![vec![0.0; m]; m];
        let mut rhs = vec![0.0; m];
        for i in 0..m {
            for j in 0..=i {
                a[i][j] = dot(&df[i], &df[j]);
                a[j][i] = a[i][j];
            }
            rhs[i] = dot(&df[i], fk);
        }
        let trace: f64 = (0..m).map(|i| a[i][i]).sum();
        if !(trace > 0.0) {
            return None;
        }
        (0..m).for_each(|i| a[i][i] += 1e-12 * trace);
        let gamma = solve_small(a, rhs)?;
        let mut out = g.to_vec();
        for (i, gi) in gamma.iter().enumerate() {
            let (x1, x0) = (&self.xs[i + 1], &self.xs[i]);
            let (f1, f0) = (&self.fs[i + 1], &self.fs[i]);
            for n in 0..out.len() {
                out[n] -= gi * ((x1[n] - x0[n]) + (f1[n] - f0[n]));
            }
        }
        Some(out)
    }
}

/// Gaussian elimination with partial pivoting for the tiny mixing system.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let m = b.len();
    for c in 0..m {
        let piv = (c..m).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c] == 0.0 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..m {
            let f = a[r][c] / a[c][c];
            for k in c..m {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; m];
    for c in (0..m).rev() {
        let s: f64 = (c + 1..m).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub fn solve_subcritical(cfg: &SubcritConfig, mask: &Arc<DomainMask>) -> Result<SolveReport> {
    cfg.validate()?;
    let p = cfg.exponent();
    let cg_max = cfg.cg_max_iter.unwrap_or_else(|| default_cg_max_iter(mask));
    let mut u = initial_field(&cfg.init, mask)?;
    let mut s = u.quadrature_lp(p);
    let mut history = vec![s];
    let mut worst_drop: f64 = 0.0;
    let mut converged = false;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    let mut mixer = Anderson::new(cfg.anderson_depth);
    while iterations < cfg.fp_max_iter {
        let rhs = nonlinearity(&u, p);
        // at a fixed point L⁻¹(|u|^{p−2}u) = u·∫|u|^p
        let guess = u.scaled(s);
        // inexact inner solves: the CG error only has to stay well below the
        // fixed-point change it feeds into
        let tol = (1e-2 * change).clamp(cfg.cg_tol, 1e-4);
        let w = solve_poisson_from(&rhs, Some(&guess), tol, cg_max)?.solution;
        let plain = normalize_energy(&w)?;
        change = plain.sub(&u)?.norm_lp(2.0) / plain.norm_lp(2.0);
        let s_plain = plain.quadrature_lp(p);
        iterations += 1;
        if change <= cfg.fp_tol {
            worst_drop = worst_drop.max((s - s_plain) / s);
            u = plain;
            s = s_plain;
            history.push(s);
            converged = true;
            break;
        }
        let (next, s_next) = match mixer.mix(u.values(), plain.values()) {
            Some(raw) => {
                let nonneg = plain.values().iter().all(|v| *v >= 0.0);
                // |v| never has more energy than v, so folding keeps ascent
                let raw = if nonneg {
                    raw.into_iter().map(f64::abs).collect()
                } else {
                    raw
                };
                let cand = Field::from_values(mask, raw).and_then(|c| normalize_energy(&c));
                match cand {
                    Ok(c) if c.quadrature_lp(p) >= s => {
                        let sc = c.quadrature_lp(p);
                        (c, sc)
                    }
                    _ => {
                        mixer.reset();
                        (plain, s_plain)
                    }
                }
            }
            None => (plain, s_plain),
        };
        worst_drop = worst_drop.max((s - s_next) / s);
        u = next;
        s = s_next;
        history.push(s);
    }
    finish(cfg.epsilon, p, u, history, worst_drop, iterations, converged, change)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    epsilon: f64,
    p: f64,
    u: Field,
    history: Vec<f64>,
    worst_ascent_drop: f64,
    iterations: usize,
    converged: bool,
    final_change: f64,
) -> Result<SolveReport> {
    let s_eps = u.quadrature_lp(p);
    let multiplier = 1.0 / s_eps;
    let el_residual = el_residual(&u, p, multiplier)?;
    let peak = measures::peak_of(&u)?;
    Ok(SolveReport {
        epsilon,
        s_eps,
        maximizer: u,
        multiplier,
        el_residual,
        iterations,
        converged,
        history,
        worst_ascent_drop,
        peak,
        final_change,
    })
}

/// ‖Lu − μ|u|^{p−2}u‖₂ / ‖Lu‖₂.
pub fn el_residual(u: &Field, p: f64, multiplier: f64) -> Result<f64> {
    let lu = apply_stiffness(u);
    let r = lu.axpy(-multiplier, &nonlinearity(u, p))?;
    let den = lu.norm_lp(2.0);
    if den == 0.0 {
        return Err(Error::ZeroField("residual of a zero field"));
    }
    Ok(r.norm_lp(2.0) / den)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub s_eps: f64,
    pub el_residual: f64,
    pub multiplier: f64,
    pub iterations: usize,
    pub converged: bool,
    pub peak: [f64; 3],
    pub conc_fraction_rho1: f64,
    pub conc_fraction_rho2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Concentration radii: diam/8 and diam/4 of the domain.
    pub radii: [f64; 2],
    /// Maximizer per row (`None` for failed rows).
    pub maximizers: Vec<Option<Field>>,
}

pub const SWEEP_HEADER: &str = "epsilon,s_eps,el_residual,multiplier,iterations,converged,peak_x,peak_y,peak_t,conc_fraction_rho1,conc_fraction_rho2";

impl Sweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for r in &self.rows {
            let cells = [
                num(r.epsilon),
                num(r.s_eps),
                num(r.el_residual),
                num(r.multiplier),
                r.iterations.to_string(),
                r.converged.to_string(),
                num(r.peak[0]),
                num(r.peak[1]),
                num(r.peak[2]),
                num(r.conc_fraction_rho1),
                num(r.conc_fraction_rho2),
            ];
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Empirical |ΔS*_ε| / |Δε| for adjacent successful rows.
    pub fn continuity_constants(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .filter(|w| w[0].error.is_none() && w[1].error.is_none())
            .map(|w| (w[1].s_eps - w[0].s_eps).abs() / (w[1].epsilon - w[0].epsilon).abs())
            .collect()
    }
}

/// Solves for each ε in `eps` (strictly descending). Failing rows are kept
/// with `converged = false` and an error message; the sweep continues.
pub fn epsilon_sweep(eps: &[f64], mask: &Arc<DomainMask>, warm_start: bool, template: &SubcritConfig) -> Result<Sweep> {
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter(
            "epsilon list must be strictly descending".into(),
        ));
    }
    let diam = mask.diameter();
    let radii = [diam / 8.0, diam / 4.0];
    let mut rows = Vec::with_capacity(eps.len());
    let mut maximizers = Vec::with_capacity(eps.len());
    let mut previous: Option<Field> = None;
    for &e in eps {
        let mut cfg = template.clone();
        cfg.epsilon = e;
        if warm_start {
            if let Some(prev) = &previous {
                cfg.init = Init::Provided(prev.clone());
            }
        }
        let mut outcome = solve_subcritical(&cfg, mask);
        // a stalled warm start falls back to the fixed bubble start
        let stalled = matches!(&outcome, Ok(r) if !r.converged) || outcome.is_err();
        if warm_start && previous.is_some() && stalled {
            cfg.init = template.init.clone();
            let cold = solve_subcritical(&cfg, mask);
            outcome = match (outcome, cold) {
                (Ok(a), Ok(b)) => Ok(if b.converged || b.s_eps > a.s_eps { b } else { a }),
                (Err(_), b) => b,
                (a, Err(_)) => a,
            };
        }
        match outcome {
            Ok(r) => {
                let f = measures::energy_fractions(&r.maximizer, r.peak, &radii)?;
                rows.push(SweepRow {
                    epsilon: e,
                    s_eps: r.s_eps,
                    el_residual: r.el_residual,
                    multiplier: r.multiplier,
                    iterations: r.iterations,
                    converged: r.converged,
                    peak: r.peak,
                    conc_fraction_rho1: f[0],
                    conc_fraction_rho2: f[1],
                    error: None,
                });
                previous = Some(r.maximizer.clone());
                maximizers.push(Some(r.maximizer));
            }
            Err(err) => {
                rows.push(SweepRow {
                    epsilon: e,
                    s_eps: f64::NAN,
                    el_residual: f64::NAN,
                    multiplier: f64::NAN,
                    iterations: 0,
                    converged: false,
                    peak: [f64::NAN; 3],
                    conc_fraction_rho1: f64::NAN,
                    conc_fraction_rho2: f64::NAN,
                    error: Some(err.to_string()),
                });
                maximizers.push(None);
            }
        }
    }
    Ok(Sweep {
        rows,
        radii,
        maximizers,
    })
}

#[derive(Debug, Clone)]
pub struct EigenReport {
    pub lambda1: f64,
    pub iterations: usize,
    /// Unit-energy eigenvector.
    pub eigenvector: Field,
}

/// Smallest eigenvalue of L on the mask by inverse power iteration.
pub fn eigen_oracle(mask: &Arc<DomainMask>) -> Result<EigenReport> {
    eigen_oracle_with(mask, 1e-10, 500)
}

pub fn eigen_oracle_with(mask: &Arc<DomainMask>, rel_tol: f64, max_iter: usize) -> Result<EigenReport> {
    let cg_max = default_cg_max_iter(mask) * 4;
    let mut v = normalize_energy(&bubble_field(&default_start(mask), mask)?)?;
    let mut lambda = rayleigh(&v)?;
    for it in 1..=max_iter {
        // v has unit energy, so L⁻¹v ≈ v/λ is the natural warm start
        let guess = v.scaled(1.0 / lambda);
        let w = solve_poisson_from(&v, Some(&guess), 1e-12, cg_max)?.solution;
        v = normalize_energy(&w)?;
        let next = rayleigh(&v)?;
        let change = (next - lambda).abs() / next;
        lambda = next;
        if change <= rel_tol && it > 2 {
            return Ok(EigenReport {
                lambda1: lambda,
                iterations: it,
                eigenvector: v,
            });
        }
    }
    Err(Error::NotConverged {
        what: "inverse power iteration",
        iterations: max_iter,
        change: f64::NAN,
    })
}

fn rayleigh(v: &Field) -> Result<f64> {
    let vv = pairing(v, v)?;
    if vv == 0.0 {
        return Err(Error::ZeroField("Rayleigh quotient of a zero field"));
    }
    Ok(dirichlet_energy(v) / vv)
}
