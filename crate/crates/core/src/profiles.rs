//! Profile decomposition of field sequences: scale and center estimation,
//! greedy extraction of rescaled profiles, the separation metric and the
//! norm and energy splitting tables.
//!
//! Every profile lives on its own reference grid, the original grid pulled
//! back by ξ ↦ δ_{1/λ}(ξ₀⁻¹ ∘ ξ). Reference nodes are the images of
//! original nodes in x and y (and in t when the center sits on the t-axis),
//! so pullback and pushforward only interpolate along t and the discrete
//! Dirichlet energy is carried over unchanged.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bubbles::{bank_fields, de_residual_with, energy_e_lambda, energy_e_star};
use crate::error::{Error, Result};
use crate::extremals::jl_h1;
use crate::grid::{DomainMask, Field, Grid};
use crate::hdiff::dirichlet_energy;
use crate::heis::{h1, GroupParams};
use crate::io::num;

/// Samples λ^{(Q−2)/2}·u(ξ₀ ∘ δ_λ(η)) at the nodes η of `target`, by
/// trilinear interpolation of u (zero beyond u's box).
///
/// The exponent −Q/2* of the decomposition and −(Q−2)/2 of the bubble
/// family agree because 2* = 2Q/(Q−2); on ℍ¹ the prefactor is λ.
pub fn rescale_field(u: &Field, lambda: f64, xi0: [f64; 3], target: &Arc<DomainMask>) -> Result<Field> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::NonPositiveScale(lambda));
    }
    let pre = lambda.powf(GroupParams::h1().bubble_exponent());
    let src = u.grid();
    let vals = u.values();
    let tg = target.grid();
    let mut out = vec![0.0; tg.len()];
    out.par_iter_mut().enumerate().for_each(|(i, o)| {
        if target.inside(i) {
            let p = h1::compose(xi0, h1::dilate(lambda, tg.node(i)));
            *o = pre * src.interpolate(vals, p);
        }
    });
    Field::from_values(target, out)
}

/// Pushforward of a profile w: λ^{−(Q−2)/2}·w(δ_{1/λ}(ξ₀⁻¹ ∘ ξ)) on `target`.
pub fn pushforward(w: &Field, lambda: f64, xi0: [f64; 3], target: &Arc<DomainMask>) -> Result<Field> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::NonPositiveScale(lambda));
    }
    // δ_{1/λ}(ξ₀⁻¹ ∘ ξ) = δ_{1/λ}(ξ₀⁻¹) ∘ δ_{1/λ}(ξ)
    rescale_field(w, 1.0 / lambda, h1::dilate(1.0 / lambda, h1::inverse(xi0)), target)
}

/// Reference grid for a profile at (λ, ξ₀) covering the gauge ball of
/// radius `radius` around ξ₀ (clipped to the box). Spacing is (h_x/λ,
/// h_y/λ, h_t/λ²) and nodes sit at images of original nodes.
pub fn reference_grid(g: &Grid, lambda: f64, xi0: [f64; 3], radius: f64) -> Result<Grid> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::NonPositiveScale(lambda));
    }
    let reach = [
        radius,
        radius,
        radius * radius + 2.0 * radius * (xi0[0].abs() + xi0[1].abs()),
    ];
    let h = g.spacing();
    let res = g.res();
    let b = g.bounds();
    let scale = [lambda, lambda, lambda * lambda];
    let mut bounds = [[0.0; 2]; 3];
    let mut n = [0usize; 3];
    for a in 0..3 {
        let top = res[a] - 1;
        let lo = (((xi0[a] - reach[a] - b[a][0]) / h[a]).floor() - 1.0).max(0.0) as usize;
        let hi = ((((xi0[a] + reach[a] - b[a][0]) / h[a]).ceil() + 1.0).max(0.0) as usize).min(top);
        let (lo, hi) = if hi < lo + 2 {
            let lo = lo.min(top.saturating_sub(2));
            (lo, (lo + 2).min(top))
        } else {
            (lo.min(top), hi)
        };
        bounds[a] = [
            (g.coord(a, lo) - xi0[a]) / scale[a],
            (g.coord(a, hi) - xi0[a]) / scale[a],
        ];
        n[a] = hi - lo + 1;
    }
    Grid::new(bounds, n)
}

/// (λ, ξ₀) from the sup norm: ξ₀ the node of max |u| and
/// λ = (U(0)/|u(ξ₀)|)^{2/(Q−2)} with U(0) = 1 the peak of the unit bubble.
pub fn estimate_scale_center(u: &Field) -> Result<(f64, [f64; 3])> {
    let (i, m) = u.argmax_abs().ok_or(Error::ZeroField("scale of a zero field"))?;
    if m == 0.0 {
        return Err(Error::ZeroField("scale of a zero field"));
    }
    let q = GroupParams::h1().q() as f64;
    let u_max_ref = jl_h1([0.0; 3]);
    Ok(((u_max_ref / m).powf(2.0 / (q - 2.0)), u.grid().node(i)))
}

/// Least-squares fit of a·λ^{−1}U(δ_{1/λ}(ξ₀⁻¹ ∘ ·)) to u near ξ₀ with the
/// center held at the peak node. Returns (λ, a). `None` when the fit region
/// has too few nodes to pin both parameters.
pub fn refine_fit(u: &Field, lambda_sup: f64, xi0: [f64; 3]) -> Option<(f64, f64)> {
    let g = u.grid();
    // a tight region keeps cutoffs and neighbouring bubbles out of the fit;
    // it grows only until it holds enough nodes
    let mut radius = 2.0 * lambda_sup;
    let mut pts: Vec<([f64; 3], f64)> = Vec::new();
    for _ in 0..12 {
        pts.clear();
        g.for_each_in_ball(xi0, radius, |i| {
            if u.mask().inside(i) {
                pts.push((g.node(i), u.values()[i]));
            }
        });
        if pts.len() >= 13 {
            break;
        }
        radius *= 1.5;
    }
    if pts.len() < 7 {
        return None;
    }
    let sign = u.sample(xi0).signum();
    // objective with the optimal amplitude eliminated
    let cost = |lam: f64| -> (f64, f64) {
        let (mut ub, mut bb) = (0.0, 0.0);
        for (p, v) in &pts {
            let b = jl_h1(h1::scaled_translate(lam, xi0, *p)) / lam;
            ub += v * b;
            bb += b * b;
        }
        let a = ub / bb;
        (-(ub * ub) / bb, a)
    };
    let (mut lo, mut hi) = ((lambda_sup / 4.0).ln(), (lambda_sup * 4.0).ln());
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let (mut fc, mut fd) = (cost(c.exp()).0, cost(d.exp()).0);
    for _ in 0..60 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = cost(c.exp()).0;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = cost(d.exp()).0;
        }
    }
    let lam = (0.5 * (lo + hi)).exp();
    let a = cost(lam).1;
    // a fit pinned to the bracket edge or with the wrong sign is not trusted
    let edge = (lam / lambda_sup).ln().abs() > 4f64.ln() * 0.98;
    (a.is_finite() && a * sign > 0.0 && !edge).then_some((lam, a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub max_profiles: usize,
    /// Stop when ‖r‖_{2*} ≤ stop_tol·(reference norm).
    pub stop_tol: f64,
    pub refine: bool,
    /// A profile window ends where |u| first drops below window_tau·|u(ξ₀)|.
    pub window_tau: f64,
    /// Norm the stopping rule is relative to; the last element's ‖u‖_{2*}
    /// when absent.
    pub reference_norm: Option<f64>,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            max_profiles: 8,
            stop_tol: 0.05,
            refine: true,
            window_tau: 1e-4,
            reference_norm: None,
        }
    }
}

/// One extracted profile with its per-element parameters.
#[derive(Debug, Clone)]
pub struct ProfileEntry {
    /// λ_k per sequence element.
    pub scales: Vec<f64>,
    /// ξ_k per sequence element.
    pub centers: Vec<[f64; 3]>,
    /// Fitted amplitude at the last element (1 for a unit bubble).
    pub amplitude: f64,
    /// Window radius (gauge) at the last element.
    pub window: f64,
    /// Pulled-back field at the last element, on its reference grid.
    pub profile: Field,
}

#[derive(Debug, Clone)]
pub struct ProfileSet {
    pub entries: Vec<ProfileEntry>,
    /// u_k − Σⱼ pushforward of profile j with (λ_k, ξ_k).
    pub remainders: Vec<Field>,
    /// ‖r_k‖_{2*} per element.
    pub l2star_remainder: Vec<f64>,
    /// ‖u_k‖_{2*} per element.
    pub l2star_total: Vec<f64>,
    /// Extraction stopped because an iteration failed to shrink the remainder.
    pub stalled: bool,
}

/// Smallest radius r ≥ λ at which max |u| over the gauge shell [r, r + δ)
/// drops below tau·|u(ξ₀)|, δ one gauge grid step.
fn window_radius(u: &Field, xi0: [f64; 3], lambda: f64, tau: f64) -> f64 {
    let g = u.grid();
    let h = g.spacing();
    let step = h[0].max(h[1]).max(h[2].sqrt());
    let peak = u.sample(xi0).abs().max(u.max_abs() * 1e-300);
    let vals = u.values();
    let rmax = g.diagonal() + step;
    let nbins = ((rmax / step).ceil() as usize).max(1);
    let mut shell = vec![0.0f64; nbins + 1];
    for (i, v) in vals.iter().enumerate() {
        if *v != 0.0 {
            let d = h1::distance(xi0, g.node(i));
            let b = ((d / step) as usize).min(nbins);
            shell[b] = shell[b].max(v.abs());
        }
    }
    let first = ((lambda / step) as usize).max(1);
    for (b, m) in shell.iter().enumerate().skip(first) {
        if *m < tau * peak {
            return b as f64 * step;
        }
    }
    rmax
}

/// Restriction of u to the gauge ball of radius r around ξ₀.
fn windowed(u: &Field, xi0: [f64; 3], r: f64) -> Result<Field> {
    let g = u.grid();
    let mut v = vec![0.0; g.len()];
    g.for_each_in_ball(xi0, r, |i| v[i] = u.values()[i]);
    Field::from_values(u.mask(), v)
}

/// (λ, ξ₀, amplitude) of the dominant bubble of u.
fn locate(u: &Field, refine: bool) -> Result<(f64, [f64; 3], f64)> {
    let (lam, xi) = estimate_scale_center(u)?;
    if refine {
        if let Some((l, a)) = refine_fit(u, lam, xi) {
            return Ok((l, xi, a));
        }
    }
    Ok((lam, xi, u.sample(xi).signum()))
}

struct Peeled {
    params: Vec<(f64, [f64; 3], f64, f64)>,
    profiles: Vec<Field>,
    remainder: Field,
    stalled: bool,
}

/// Greedy extraction on one field.
fn peel(u: &Field, cfg: &ExtractConfig, reference: f64, max: usize) -> Result<Peeled> {
    let crit = GroupParams::h1().crit_exp();
    let mut r = u.clone();
    let mut norm = r.norm_lp(crit);
    let mut params = Vec::new();
    let mut profiles = Vec::new();
    let mut stalled = false;
    while params.len() < max && norm > cfg.stop_tol * reference && norm > 0.0 {
        let (lam, xi, amp) = locate(&r, cfg.refine)?;
        let w = window_radius(&r, xi, lam, cfg.window_tau);
        let piece = windowed(&r, xi, w)?;
        let rg = reference_grid(r.grid(), lam, xi, w)?;
        let rmask = Arc::new(DomainMask::full_box(rg)?);
        let prof = rescale_field(&piece, lam, xi, &rmask)?;
        let back = pushforward(&prof, lam, xi, r.mask())?;
        let next = r.sub(&back)?;
        let next_norm = next.norm_lp(crit);
        if !(next_norm < norm) {
            stalled = true;
            break;
        }
        params.push((lam, xi, amp, w));
        profiles.push(prof);
        r = next;
        norm = next_norm;
    }
    Ok(Peeled {
        params,
        profiles,
        remainder: r,
        stalled,
    })
}

/// Greedy profile extraction (see the module docs). Profiles come from the
/// last element; every element gets its own scales and centers, matched to
/// the profiles by nearest center.
pub fn extract_profiles(seq: &[Field], cfg: &ExtractConfig) -> Result<ProfileSet> {
    if seq.len() < 3 {
        return Err(Error::InvalidParameter("need at least three sequence elements".into()));
    }
    if !(cfg.stop_tol > 0.0) || cfg.max_profiles == 0 {
        return Err(Error::InvalidParameter(
            "stop_tol and max_profiles must be positive".into(),
        ));
    }
    for u in &seq[1..] {
        seq[0].same_grid(u)?;
    }
    let crit = GroupParams::h1().crit_exp();
    let last = seq.last().unwrap();
    let reference = cfg.reference_norm.unwrap_or_else(|| last.norm_lp(crit));
    let peeled = peel(last, cfg, reference, cfg.max_profiles)?;
    let j = peeled.params.len();

    // per-element parameters, matched to the final profiles
    let n = seq.len();
    let per_k: Vec<Vec<(f64, [f64; 3])>> = seq[..n - 1]
        .par_iter()
        .map(|u| -> Result<Vec<(f64, [f64; 3])>> {
            if j == 0 {
                return Ok(Vec::new());
            }
            let own_ref = u.norm_lp(crit);
            let p = peel(
                u,
                &ExtractConfig {
                    stop_tol: 1e-12,
                    ..*cfg
                },
                own_ref,
                j,
            )?;
            let mut out = Vec::with_capacity(j);
            let mut used = vec![false; p.params.len()];
            for (_, xi_last, _, _) in &peeled.params {
                let best = (0..p.params.len()).filter(|&i| !used[i]).min_by(|&a, &b| {
                    let da = h1::distance(p.params[a].1, *xi_last);
                    let db = h1::distance(p.params[b].1, *xi_last);
                    da.total_cmp(&db)
                });
                match best {
                    Some(i) => {
                        used[i] = true;
                        out.push((p.params[i].0, p.params[i].1));
                    }
                    None => out.push((f64::NAN, [f64::NAN; 3])),
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let entries: Vec<ProfileEntry> = peeled
        .params
        .iter()
        .zip(peeled.profiles)
        .enumerate()
        .map(|(jj, ((lam, xi, amp, w), prof))| {
            let mut scales: Vec<f64> = per_k.iter().map(|v| v[jj].0).collect();
            let mut centers: Vec<[f64; 3]> = per_k.iter().map(|v| v[jj].1).collect();
            scales.push(*lam);
            centers.push(*xi);
            ProfileEntry {
                scales,
                centers,
                amplitude: *amp,
                window: *w,
                profile: prof,
            }
        })
        .collect();

    let mut remainders = Vec::with_capacity(n);
    for (k, u) in seq.iter().enumerate() {
        if k == n - 1 {
            remainders.push(peeled.remainder.clone());
            continue;
        }
        let mut r = u.clone();
        for e in &entries {
            if e.scales[k].is_finite() {
                r = r.sub(&pushforward(&e.profile, e.scales[k], e.centers[k], u.mask())?)?;
            }
        }
        remainders.push(r);
    }
    let l2star_remainder = remainders.iter().map(|r| r.norm_lp(crit)).collect();
    let l2star_total = seq.iter().map(|u| u.norm_lp(crit)).collect();
    Ok(ProfileSet {
        entries,
        remainders,
        l2star_remainder,
        l2star_total,
        stalled: peeled.stalled,
    })
}

/// |log(λᵢ/λⱼ)| + |δ_{1/λⱼ}(ξⱼ⁻¹ ∘ ξᵢ)|.
pub fn separation_metric(li: f64, xi_i: [f64; 3], lj: f64, xi_j: [f64; 3]) -> Result<f64> {
    for l in [li, lj] {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::NonPositiveScale(l));
        }
    }
    Ok((li / lj).ln().abs() + h1::gauge(h1::scaled_translate(lj, xi_j, xi_i)))
}

/// Separation of entries i and j at element k.
pub fn entry_separation(a: &ProfileEntry, b: &ProfileEntry, k: usize) -> Result<f64> {
    separation_metric(a.scales[k], a.centers[k], b.scales[k], b.centers[k])
}

pub const SPLITTING_HEADER: &str = "k,norm_total,norm_base,norm_profiles_sum,norm_defect,e_lambda_total,e_lambda_base,e_star_sum,energy_defect,ps_residual";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplittingRow {
    pub k: i64,
    pub norm_total: f64,
    pub norm_base: f64,
    pub norm_profiles_sum: f64,
    pub norm_defect: f64,
    pub e_lambda_total: f64,
    pub e_lambda_base: f64,
    pub e_star_sum: f64,
    pub energy_defect: f64,
    pub ps_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplittingReport {
    pub lambda_param: f64,
    pub rows: Vec<SplittingRow>,
    /// Pairwise separation metrics per element (upper triangle, row-major).
    pub separation: Vec<Vec<f64>>,
    /// sup_k ‖u_k‖², the bounded-sequence hypothesis made visible.
    pub energy_bound: f64,
    pub profile_count: usize,
    pub l2star_remainder: Vec<f64>,
    pub stalled: bool,
}

impl SplittingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SPLITTING_HEADER);
        out.push('\n');
        for r in &self.rows {
            let cells = [
                r.k.to_string(),
                num(r.norm_total),
                num(r.norm_base),
                num(r.norm_profiles_sum),
                num(r.norm_defect),
                num(r.e_lambda_total),
                num(r.e_lambda_base),
                num(r.e_star_sum),
                num(r.energy_defect),
                num(r.ps_residual),
            ];
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Tabulates the norm and energy splittings per element; `first_k` labels
/// the first row.
pub fn splitting_report(
    seq: &[Field],
    base: Option<&Field>,
    profiles: &ProfileSet,
    lambda: f64,
    first_k: i64,
) -> Result<SplittingReport> {
    let Some(first) = seq.first() else {
        return Err(Error::InvalidParameter("empty sequence".into()));
    };
    for u in seq {
        first.same_grid(u)?;
    }
    if let Some(b) = base {
        first.same_grid(b)?;
    }
    let norm_base = base.map_or(0.0, dirichlet_energy);
    let e_base = base.map_or(0.0, |b| energy_e_lambda(b, lambda));
    let norm_prof: f64 = profiles.entries.iter().map(|e| dirichlet_energy(&e.profile)).sum();
    let e_star: f64 = profiles.entries.iter().map(|e| energy_e_star(&e.profile)).sum();
    let bank = bank_fields(first.mask())?;
    let rows: Vec<SplittingRow> = seq
        .par_iter()
        .enumerate()
        .map(|(k, u)| {
            let nt = dirichlet_energy(u);
            let et = energy_e_lambda(u, lambda);
            let res = de_residual_with(u, lambda, &bank)?;
            Ok(SplittingRow {
                k: first_k + k as i64,
                norm_total: nt,
                norm_base,
                norm_profiles_sum: norm_prof,
                norm_defect: nt - norm_base - norm_prof,
                e_lambda_total: et,
                e_lambda_base: e_base,
                e_star_sum: e_star,
                energy_defect: et - e_base - e_star,
                ps_residual: res.dual,
            })
        })
        .collect::<Result<_>>()?;
    let m = profiles.entries.len();
    let mut separation = Vec::with_capacity(seq.len());
    for k in 0..seq.len() {
        let mut row = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                let (a, b) = (&profiles.entries[i], &profiles.entries[j]);
                row.push(entry_separation(a, b, k).unwrap_or(f64::NAN));
            }
        }
        separation.push(row);
    }
    Ok(SplittingReport {
        lambda_param: lambda,
        energy_bound: rows.iter().map(|r| r.norm_total).fold(0.0, f64::max),
        rows,
        separation,
        profile_count: m,
        l2star_remainder: profiles.l2star_remainder.clone(),
        stalled: profiles.stalled,
    })
}
