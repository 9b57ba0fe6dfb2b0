//! Discrete horizontal gradient, sub-Laplacian stiffness and CG solver.
//!
//! Each Zⱼ (Z₁ = ∂x + 2y∂t, Z₂ = ∂y − 2x∂t) is discretized twice, once with
//! forward and once with backward differences on the zero-extended field,
//! and the energy density is the average ½(|D⁺u|² + |D⁻u|²). The O(h) parts
//! of the two one-sided gradients cancel in the average, so the density is
//! second-order accurate. Plain centered differences would split the lattice
//! into four decoupled sublattices (and let the nonlinear maximizers live on
//! one of them); the one-sided pair couples every node.
//!
//! The stiffness is L = ½ Σⱼ (Dⱼ⁺ᵀDⱼ⁺ + Dⱼ⁻ᵀDⱼ⁻) restricted to interior
//! unknowns, so ⟨Lu, v⟩ equals the discrete energy pairing identically.
//! Gradients are evaluated at every box node and therefore live on the mask
//! plus a one-node fringe.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{raw_pairing, DomainMask, Field, Grid};
use crate::par;

use rayon::prelude::*;

/// Default relative residual for [`solve_poisson`].
pub const DEFAULT_CG_TOL: f64 = 1e-8;

/// max(500, 10·√unknowns).
pub fn default_cg_max_iter(mask: &DomainMask) -> usize {
    ((10.0 * (mask.count() as f64).sqrt()).ceil() as usize).max(500)
}

/// One-sided horizontal gradients of a field on the full box.
#[derive(Debug, Clone)]
pub struct HorizontalField {
    mask: Arc<DomainMask>,
    /// [D₁⁺u, D₂⁺u, D₁⁻u, D₂⁻u]
    parts: [Vec<f64>; 4],
}

impl HorizontalField {
    pub fn mask(&self) -> &Arc<DomainMask> {
        &self.mask
    }

    pub fn grid(&self) -> &Grid {
        self.mask.grid()
    }

    /// Z₁u as the mean of the forward and backward differences.
    pub fn z1(&self) -> Vec<f64> {
        mean(&self.parts[0], &self.parts[2])
    }

    pub fn z2(&self) -> Vec<f64> {
        mean(&self.parts[1], &self.parts[3])
    }

    pub fn forward(&self) -> (&[f64], &[f64]) {
        (&self.parts[0], &self.parts[1])
    }

    pub fn backward(&self) -> (&[f64], &[f64]) {
        (&self.parts[2], &self.parts[3])
    }

    /// Pointwise energy density ½(|D⁺u|² + |D⁻u|²).
    pub fn density(&self) -> Vec<f64> {
        let [a, b, c, d] = &self.parts;
        (0..a.len())
            .map(|i| 0.5 * (a[i] * a[i] + b[i] * b[i] + c[i] * c[i] + d[i] * d[i]))
            .collect()
    }
}

fn mean(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

/// Stencil constants of a grid, shared by the kernels below.
struct Stencil {
    res: [usize; 3],
    inv_h: [f64; 3],
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Stencil {
    fn new(g: &Grid) -> Self {
        let res = g.res();
        let h = g.spacing();
        Self {
            res,
            inv_h: [1.0 / h[0], 1.0 / h[1], 1.0 / h[2]],
            xs: (0..res[0]).map(|i| g.coord(0, i)).collect(),
            ys: (0..res[1]).map(|j| g.coord(1, j)).collect(),
        }
    }

    fn plane(&self) -> usize {
        self.res[0] * self.res[1]
    }
}

/// Planes k−1 and k+1 of `u`, the zero plane beyond the box.
#[inline(always)]
fn neighbours<'a>(u: &'a [f64], zero: &'a [f64], k: usize, nt: usize) -> (&'a [f64], &'a [f64]) {
    let plane = zero.len();
    let base = k * plane;
    let dn = if k > 0 { &u[base - plane..base] } else { zero };
    let up = if k + 1 < nt {
        &u[base + plane..base + 2 * plane]
    } else {
        zero
    };
    (dn, up)
}

/// Writes [D₁⁺u, D₂⁺u, D₁⁻u, D₂⁻u] into `out`, plane by plane.
fn gradient_into(st: &Stencil, u: &[f64], out: &mut [Vec<f64>; 4]) {
    let [nx, ny, nt] = st.res;
    let plane = st.plane();
    let [ix, iy, it] = st.inv_h;
    let zero = vec![0.0; plane];
    let row0 = vec![0.0; nx];
    let [f1, f2, b1, b2] = out;
    f1.par_chunks_mut(plane)
        .zip(f2.par_chunks_mut(plane))
        .zip(b1.par_chunks_mut(plane))
        .zip(b2.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(k, (((f1, f2), b1), b2))| {
            let cur = &u[k * plane..(k + 1) * plane];
            let (dn, up) = neighbours(u, &zero, k, nt);
            for j in 0..ny {
                let ty = 2.0 * st.ys[j] * it;
                let r = j * nx..(j + 1) * nx;
                let (c, d, p) = (&cur[r.clone()], &dn[r.clone()], &up[r.clone()]);
                let n = if j + 1 < ny {
                    &cur[r.start + nx..r.end + nx]
                } else {
                    &row0[..]
                };
                let s = if j > 0 {
                    &cur[r.start - nx..r.end - nx]
                } else {
                    &row0[..]
                };
                let (f1, f2) = (&mut f1[r.clone()], &mut f2[r.clone()]);
                let (b1, b2) = (&mut b1[r.clone()], &mut b2[r]);
                let xs = &st.xs[..nx];
                for i in 0..nx {
                    let u0 = c[i];
                    let e = if i + 1 < nx { c[i + 1] } else { 0.0 };
                    let w = if i > 0 { c[i - 1] } else { 0.0 };
                    let ft = p[i] - u0;
                    let bt = u0 - d[i];
                    let tx = 2.0 * xs[i] * it;
                    f1[i] = (e - u0) * ix + ty * ft;
                    f2[i] = (n[i] - u0) * iy - tx * ft;
                    b1[i] = (u0 - w) * ix + ty * bt;
                    b2[i] = (u0 - s[i]) * iy - tx * bt;
                }
            }
        });
}

/// [D₁⁺u, D₂⁺u, D₁⁻u, D₂⁻u] of raw nodal values on the full box.
pub(crate) fn gradient_raw(grid: &Grid, u: &[f64]) -> [Vec<f64>; 4] {
    let st = Stencil::new(grid);
    let mut out: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; grid.len()]);
    gradient_into(&st, u, &mut out);
    out
}

/// Σ weight·½(|D⁺u|² + |D⁻u|²)·cell over the box.
pub(crate) fn weighted_energy_raw<W>(grid: &Grid, u: &[f64], weight: W) -> f64
where
    W: Fn(usize) -> f64 + Sync,
{
    let [a, b, c, d] = gradient_raw(grid, u);
    0.5 * par::sum(a.len(), |i| {
        let w = weight(i);
        if w == 0.0 {
            0.0
        } else {
            w * (a[i] * a[i] + b[i] * b[i] + c[i] * c[i] + d[i] * d[i])
        }
    }) * grid.cell_volume()
}

/// out = ½ Σⱼ (Dⱼ⁺ᵀ g⁺ⱼ + Dⱼ⁻ᵀ g⁻ⱼ) on nodes where `keep` holds, 0 elsewhere.
fn transpose_into(st: &Stencil, g: &[Vec<f64>; 4], keep: Option<&[bool]>, out: &mut [f64]) {
    let [nx, ny, nt] = st.res;
    let plane = st.plane();
    let [ix, iy, it] = st.inv_h;
    let zero = vec![0.0; plane];
    let row0 = vec![0.0; nx];
    let [f1, f2, b1, b2] = g;
    out.par_chunks_mut(plane).enumerate().for_each(|(k, o)| {
        let base = k * plane;
        let (f1c, f2c) = (&f1[base..base + plane], &f2[base..base + plane]);
        let (b1c, b2c) = (&b1[base..base + plane], &b2[base..base + plane]);
        let (f1d, _) = neighbours(f1, &zero, k, nt);
        let (f2d, _) = neighbours(f2, &zero, k, nt);
        let (_, b1u) = neighbours(b1, &zero, k, nt);
        let (_, b2u) = neighbours(b2, &zero, k, nt);
        for j in 0..ny {
            let ty = 2.0 * st.ys[j] * it;
            let r = j * nx..(j + 1) * nx;
            let (f1r, b1r) = (&f1c[r.clone()], &b1c[r.clone()]);
            let (f2r, b2r) = (&f2c[r.clone()], &b2c[r.clone()]);
            let (f1t, f2t) = (&f1d[r.clone()], &f2d[r.clone()]);
            let (b1t, b2t) = (&b1u[r.clone()], &b2u[r.clone()]);
            let f2s = if j > 0 {
                &f2c[r.start - nx..r.end - nx]
            } else {
                &row0[..]
            };
            let b2n = if j + 1 < ny {
                &b2c[r.start + nx..r.end + nx]
            } else {
                &row0[..]
            };
            let xs = &st.xs[..nx];
            let o = &mut o[r.clone()];
            for i in 0..nx {
                let tx = 2.0 * xs[i] * it;
                let f1x = if i > 0 { f1r[i - 1] } else { 0.0 };
                let b1x = if i + 1 < nx { b1r[i + 1] } else { 0.0 };
                let fwd1 = -(ix + ty) * f1r[i] + ix * f1x + ty * f1t[i];
                let fwd2 = -(iy - tx) * f2r[i] + iy * f2s[i] - tx * f2t[i];
                let bwd1 = (ix + ty) * b1r[i] - ix * b1x - ty * b1t[i];
                let bwd2 = (iy - tx) * b2r[i] - iy * b2n[i] + tx * b2t[i];
                o[i] = 0.5 * (fwd1 + fwd2 + bwd1 + bwd2);
            }
            if let Some(m) = keep {
                for (o, &m) in o.iter_mut().zip(&m[base + r.start..base + r.end]) {
                    if !m {
                        *o = 0.0;
                    }
                }
            }
        }
    });
}

/// Reusable stiffness application with scratch buffers.
pub(crate) struct StiffnessOp<'a> {
    st: Stencil,
    keep: Option<&'a [bool]>,
    scratch: [Vec<f64>; 4],
}

impl<'a> StiffnessOp<'a> {
    pub(crate) fn new(grid: &Grid, keep: Option<&'a [bool]>) -> Self {
        Self {
            st: Stencil::new(grid),
            keep,
            scratch: std::array::from_fn(|_| vec![0.0; grid.len()]),
        }
    }

    pub(crate) fn apply(&mut self, u: &[f64], out: &mut [f64]) {
        gradient_into(&self.st, u, &mut self.scratch);
        transpose_into(&self.st, &self.scratch, self.keep, out);
    }
}

fn stiffness_raw(grid: &Grid, u: &[f64], keep: Option<&[bool]>) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    StiffnessOp::new(grid, keep).apply(u, &mut out);
    out
}

/// L applied to nodal values on the whole box with no masking; used for
/// consistency checks against the continuum operator −Δ_H away from the faces.
pub fn apply_stiffness_unmasked(grid: &Grid, values: &[f64]) -> Result<Vec<f64>> {
    if values.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            found: values.len(),
        });
    }
    Ok(stiffness_raw(grid, values, None))
}

pub fn horizontal_gradient(u: &Field) -> HorizontalField {
    HorizontalField {
        mask: Arc::clone(u.mask()),
        parts: gradient_raw(u.grid(), u.values()),
    }
}

/// Pointwise energy density on the full box (mask plus fringe).
pub fn energy_density_values(u: &Field) -> Vec<f64> {
    horizontal_gradient(u).density()
}

/// Discrete ∫|D_H u|² over the box.
pub fn dirichlet_energy(u: &Field) -> f64 {
    weighted_energy_raw(u.grid(), u.values(), |_| 1.0)
}

/// Σⱼ⟨Dⱼu, Dⱼv⟩, the bilinear form of [`dirichlet_energy`].
pub fn energy_pairing(u: &Field, v: &Field) -> Result<f64> {
    u.same_grid(v)?;
    let a = gradient_raw(u.grid(), u.values());
    let b = gradient_raw(v.grid(), v.values());
    let n = a[0].len();
    Ok(0.5
        * par::sum(n, |i| {
            a[0][i] * b[0][i] + a[1][i] * b[1][i] + a[2][i] * b[2][i] + a[3][i] * b[3][i]
        })
        * u.grid().cell_volume())
}

pub fn apply_stiffness(u: &Field) -> Field {
    let mask = u.mask();
    let out = stiffness_raw(u.grid(), u.values(), Some(mask.flags()));
    Field::from_raw(mask, out)
}

/// Diagonal of L on interior nodes (1 elsewhere, never used).
pub fn stiffness_diagonal(mask: &DomainMask) -> Vec<f64> {
    let g = mask.grid();
    let h = g.spacing();
    let (ix, iy, it) = (1.0 / h[0], 1.0 / h[1], 1.0 / h[2]);
    (0..g.len())
        .map(|i| {
            if mask.inside(i) {
                let p = g.node(i);
                let (ty, tx) = (2.0 * p[1] * it, 2.0 * p[0] * it);
                (ix + ty).powi(2) + ix * ix + ty * ty + (iy - tx).powi(2) + iy * iy + tx * tx
            } else {
                1.0
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Field,
    pub iterations: usize,
    /// ‖L u − f‖₂ / ‖f‖₂ recomputed from the returned iterate.
    pub residual: f64,
}

/// Solves L u = f to relative residual `tol` by Jacobi-preconditioned CG.
pub fn solve_poisson(f: &Field, tol: f64, max_iter: usize) -> Result<Field> {
    Ok(solve_poisson_from(f, None, tol, max_iter)?.solution)
}

/// [`solve_poisson`] with an optional initial guess and iteration stats.
pub fn solve_poisson_from(f: &Field, guess: Option<&Field>, tol: f64, max_iter: usize) -> Result<CgOutcome> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("cg tolerance {tol} must be positive")));
    }
    if max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be positive".into()));
    }
    let mask = Arc::clone(f.mask());
    let grid = mask.grid().clone();
    let n = grid.len();
    let b = f.values();
    let b_norm = raw_pairing(&grid, b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: Field::zeros(&mask),
            iterations: 0,
            residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = stiffness_diagonal(&mask).iter().map(|d| 1.0 / d).collect();
    let mut op = StiffnessOp::new(&grid, Some(mask.flags()));
    let cell = grid.cell_volume();

    let mut x = match guess {
        Some(g) => {
            f.same_grid(g)?;
            g.values().to_vec()
        }
        None => vec![0.0; n],
    };
    let mut ap = vec![0.0; n];
    let mut r: Vec<f64> = if guess.is_some() {
        op.apply(&x, &mut ap);
        b.iter().zip(&ap).map(|(b, l)| b - l).collect()
    } else {
        b.to_vec()
    };
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = par::sum(n, |i| r[i] * z[i]);
    let target = tol * b_norm;
    let mut res_norm = (par::sum(n, |i| r[i] * r[i]) * cell).sqrt();
    let mut it = 0;
    while res_norm > target && it < max_iter {
        op.apply(&p, &mut ap);
        let pap = par::sum(n, |i| p[i] * ap[i]);
        if !(pap > 0.0) {
            return Err(Error::Invariant(format!(
                "stiffness not positive along search direction (pAp = {pap:e})"
            )));
        }
        let alpha = rz / pap;
        // fused update, serial so the sums do not depend on the thread count
        let (mut rz_new, mut rr) = (0.0, 0.0);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
            rz_new += r[i] * z[i];
            rr += r[i] * r[i];
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res_norm = (rr * cell).sqrt();
        it += 1;
    }
    // verify with the true residual; recursive residuals drift slightly
    op.apply(&x, &mut ap);
    let true_res = (par::sum(n, |i| (b[i] - ap[i]).powi(2)) * cell).sqrt() / b_norm;
    if true_res > tol * 1.5 {
        return Err(Error::CgNotConverged {
            iterations: it,
            residual: true_res,
        });
    }
    Ok(CgOutcome {
        solution: Field::from_raw(&mask, x),
        iterations: it,
        residual: true_res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{field_from_function, pairing};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ball(n: usize) -> Arc<DomainMask> {
        let g = Grid::cube(1.0, n).unwrap();
        Arc::new(DomainMask::koranyi_ball(g, [0.0; 3], 0.9).unwrap())
    }

    fn random(mask: &Arc<DomainMask>, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..mask.grid().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Field::from_values(mask, v).unwrap()
    }

    fn bump(p: [f64; 3]) -> f64 {
        let r2 = p[0] * p[0] + p[1] * p[1] + 2.0 * p[2] * p[2];
        if r2 < 0.64 {
            (1.0 - r2 / 0.64).powi(3) * (1.0 + 0.3 * p[0] - 0.2 * p[2])
        } else {
            0.0
        }
    }

    #[test]
    fn gradient_of_linear_and_t() {
        let m = Arc::new(DomainMask::full_box(Grid::cube(1.0, 17).unwrap()).unwrap());
        let g = m.grid();
        // raw arrays so the box faces do not interfere
        let xs: Vec<f64> = (0..g.len()).map(|i| g.node(i)[0]).collect();
        let ts: Vec<f64> = (0..g.len()).map(|i| g.node(i)[2]).collect();
        let [a1, a2, a3, a4] = gradient_raw(g, &xs);
        let [b1, b2, b3, b4] = gradient_raw(g, &ts);
        for i in 0..g.len() {
            if g.is_box_boundary(i) {
                continue;
            }
            let p = g.node(i);
            for (one, zero) in [(a1[i], a2[i]), (a3[i], a4[i])] {
                assert!((one - 1.0).abs() < 1e-12 && zero.abs() < 1e-12);
            }
            for (z1, z2) in [(b1[i], b2[i]), (b3[i], b4[i])] {
                assert!((z1 - 2.0 * p[1]).abs() <= 1e-10);
                assert!((z2 + 2.0 * p[0]).abs() <= 1e-10);
            }
        }
        let z = horizontal_gradient(&Field::zeros(&m));
        assert!(z.z1().iter().chain(&z.z2()).all(|&v| v == 0.0));
    }

    #[test]
    fn energy_homogeneity_and_identity() {
        let m = ball(17);
        let u = random(&m, 4);
        let e = dirichlet_energy(&u);
        assert_eq!(dirichlet_energy(&Field::zeros(&m)), 0.0);
        assert!((dirichlet_energy(&u.scaled(3.0)) - 9.0 * e).abs() <= 1e-12 * 9.0 * e);
        let lu = apply_stiffness(&u);
        assert!((pairing(&lu, &u).unwrap() - e).abs() <= 1e-10 * e);
        let b = field_from_function(&m, bump).unwrap();
        let eb = dirichlet_energy(&b);
        assert!((pairing(&apply_stiffness(&b), &b).unwrap() - eb).abs() <= 1e-10 * eb);
    }

    #[test]
    fn zero_trace_of_stiffness() {
        let m = ball(13);
        let lu = apply_stiffness(&random(&m, 9));
        for i in 0..m.grid().len() {
            if !m.inside(i) {
                assert_eq!(lu.values()[i], 0.0);
            }
        }
    }

    #[test]
    fn diagonal_matches_unit_vectors() {
        let m = ball(11);
        let d = stiffness_diagonal(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inner: Vec<usize> = (0..m.grid().len()).filter(|&i| m.inside(i)).collect();
        for _ in 0..10 {
            let i = inner[rng.gen_range(0..inner.len())];
            let mut v = vec![0.0; m.grid().len()];
            v[i] = 1.0;
            let e = Field::from_values(&m, v).unwrap();
            let le = apply_stiffness(&e);
            assert!((le.values()[i] - d[i]).abs() <= 1e-12 * d[i]);
        }
    }

    #[test]
    fn poisson_examples() {
        let m = ball(21);
        let zero = solve_poisson(&Field::zeros(&m), 1e-8, 500).unwrap();
        assert!(zero.is_zero());

        let ustar = field_from_function(&m, bump).unwrap();
        let f = apply_stiffness(&ustar);
        let tol = 1e-8;
        let u = solve_poisson(&f, tol, default_cg_max_iter(&m)).unwrap();
        let err = u.sub(&ustar).unwrap().norm_lp(2.0) / ustar.norm_lp(2.0);
        assert!(err <= 10.0 * tol, "manufactured error {err}");

        let u3 = solve_poisson(&f.scaled(3.0), tol, 5000).unwrap();
        let lin = u3.sub(&u.scaled(3.0)).unwrap().norm_lp(2.0) / u3.norm_lp(2.0);
        assert!(lin <= 10.0 * tol, "linearity {lin}");
    }

    #[test]
    fn poisson_reports_non_convergence() {
        let m = ball(21);
        let f = field_from_function(&m, |_| 1.0).unwrap();
        let err = solve_poisson(&f, 1e-12, 3).unwrap_err();
        assert!(matches!(err, Error::CgNotConverged { iterations: 3, .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn adjointness_and_positivity(seed in 0u64..10_000) {
            let m = ball(9);
            let u = random(&m, seed);
            let v = random(&m, seed ^ 0xabcdef);
            let luv = pairing(&apply_stiffness(&u), &v).unwrap();
            let ulv = pairing(&u, &apply_stiffness(&v)).unwrap();
            let dd = energy_pairing(&u, &v).unwrap();
            let scale = dirichlet_energy(&u).sqrt() * dirichlet_energy(&v).sqrt();
            prop_assert!((luv - ulv).abs() <= 1e-10 * scale);
            prop_assert!((luv - dd).abs() <= 1e-10 * scale);
            prop_assert!(pairing(&apply_stiffness(&u), &u).unwrap() > 0.0);
        }
    }
}
