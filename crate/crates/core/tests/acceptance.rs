//! Acceptance criteria, one test per criterion. Each prints a single
//! `criterion N PASS|FAIL` line straight to stdout (so it survives output
//! capture) and then asserts.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use heisenvar::bubbles::{self, synth_ps_sequence, PsBubble, PsSpec, RecoverySpec, Target};
use heisenvar::extremals::{bubble_field, estimate_sstar, jl_h1, BubbleSpec, SstarConfig};
use heisenvar::hdiff::{self, apply_stiffness, apply_stiffness_unmasked, dirichlet_energy, solve_poisson};
use heisenvar::heis::{self, h1};
use heisenvar::measures::{self, gamma_limit_f, Atom, EnergyMeasure, XPair};
use heisenvar::profiles::{extract_profiles, splitting_report, ExtractConfig};
use heisenvar::*;

/// Reference value used only to judge estimates: 1/(4π²) on ℍ¹.
const SSTAR_ORACLE: f64 = 1.0 / (4.0 * PI * PI);

fn report(n: u32, title: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "\ncriterion {n:>2} {verdict}: {title}: {detail}");
    assert!(ok, "criterion {n} failed: {detail}");
}

fn sstar() -> f64 {
    static S: OnceLock<f64> = OnceLock::new();
    *S.get_or_init(|| estimate_sstar(&SstarConfig::default()).unwrap().value)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn box_mask(bounds: [[f64; 2]; 3], res: [usize; 3]) -> Arc<DomainMask> {
    Arc::new(DomainMask::full_box(Grid::new(bounds, res).unwrap()).unwrap())
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_group_law() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pt = |rng: &mut ChaCha8Rng| -> [f64; 3] { std::array::from_fn(|_| rng.gen_range(-10.0..10.0)) };
    let n = 10_000;
    let mut worst = [0.0f64; 5];
    for _ in 0..n {
        let (a, b, c) = (pt(&mut rng), pt(&mut rng), pt(&mut rng));
        let lam = rng.gen_range(0.01..100.0);
        let scale = |v: [f64; 3]| v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let diff =
            |u: [f64; 3], v: [f64; 3]| (0..3).map(|i| (u[i] - v[i]).abs()).fold(0.0, f64::max) / scale(u).max(scale(v));
        let l = h1::compose(h1::compose(a, b), c);
        let r = h1::compose(a, h1::compose(b, c));
        worst[0] = worst[0].max(diff(l, r));
        let e = h1::compose(a, h1::inverse(a));
        worst[1] = worst[1].max(diff(e, [0.0; 3]) / scale(a) / scale(a));
        worst[2] = worst[2].max(rel(h1::gauge(h1::dilate(lam, a)), lam * h1::gauge(a)));
        worst[3] = worst[3].max(rel(h1::gauge(h1::inverse(a)), h1::gauge(a)));
        let d1 = h1::dilate(lam, h1::compose(a, b));
        let d2 = h1::compose(h1::dilate(lam, a), h1::dilate(lam, b));
        worst[4] = worst[4].max(diff(d1, d2));
    }
    // the general-n implementation on ℍ², one pass per property
    let gp = |rng: &mut ChaCha8Rng| {
        GroupPoint::new(
            (0..2).map(|_| rng.gen_range(-10.0..10.0)).collect(),
            (0..2).map(|_| rng.gen_range(-10.0..10.0)).collect(),
            rng.gen_range(-10.0..10.0),
        )
        .unwrap()
    };
    let mut worst_n2 = 0.0f64;
    for _ in 0..n {
        let (a, b, c) = (gp(&mut rng), gp(&mut rng), gp(&mut rng));
        let lam = rng.gen_range(0.01..100.0);
        let l = heis::compose(&heis::compose(&a, &b).unwrap(), &c).unwrap();
        let r = heis::compose(&a, &heis::compose(&b, &c).unwrap()).unwrap();
        let s = 1.0f64.max(l.t.abs());
        worst_n2 = worst_n2.max((l.t - r.t).abs() / s);
        let g1 = heis::gauge(&heis::dilate(lam, &a).unwrap());
        worst_n2 = worst_n2.max(rel(g1, lam * heis::gauge(&a)));
        worst_n2 = worst_n2.max(rel(heis::gauge(&a.inverse()), heis::gauge(&a)));
    }
    let elapsed = start.elapsed();
    let max = worst.iter().copied().fold(worst_n2, f64::max);
    let ok = max <= 1e-12 && elapsed < Duration::from_secs(1);
    report(
        1,
        "group law",
        ok,
        &format!(
            "{n} cases each; worst assoc {:.1e}, inverse {:.1e}, homogeneity {:.1e}, symmetry {:.1e}, dilation {:.1e}, n=2 {:.1e}; {:.0} ms",
            worst[0], worst[1], worst[2], worst[3], worst[4], worst_n2, elapsed.as_secs_f64() * 1e3
        ),
    );
}

// ---------------------------------------------------------------------------

fn interior_error<F, G>(n: usize, f: F, minus_lap: G) -> f64
where
    F: Fn([f64; 3]) -> f64,
    G: Fn([f64; 3]) -> f64,
{
    let g = Grid::cube(1.0, n).unwrap();
    let vals: Vec<f64> = (0..g.len()).map(|i| f(g.node(i))).collect();
    let lu = apply_stiffness_unmasked(&g, &vals).unwrap();
    let mut err = 0.0f64;
    for k in 2..n - 2 {
        for j in 2..n - 2 {
            for i in 2..n - 2 {
                let idx = g.index(i, j, k);
                err = err.max((lu[idx] - minus_lap(g.node(idx))).abs());
            }
        }
    }
    err
}

#[test]
fn criterion_02_operator() {
    let start = Instant::now();
    let mask = Arc::new(DomainMask::koranyi_ball(Grid::cube(1.0, 33).unwrap(), [0.0; 3], 0.9).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let random = |rng: &mut ChaCha8Rng| {
        let v = (0..mask.grid().len())
            .map(|i| if mask.inside(i) { rng.gen_range(-1.0..1.0) } else { 0.0 })
            .collect();
        Field::from_values(&mask, v).unwrap()
    };
    let mut sym = 0.0f64;
    let mut ident = 0.0f64;
    for _ in 0..5 {
        let (u, v) = (random(&mut rng), random(&mut rng));
        let (lu, lv) = (apply_stiffness(&u), apply_stiffness(&v));
        let a = pairing(&lu, &v).unwrap();
        let b = pairing(&u, &lv).unwrap();
        sym = sym.max(rel(a, b));
        ident = ident.max(rel(pairing(&lu, &u).unwrap(), dirichlet_energy(&u)));
    }

    let bump = |p: [f64; 3]| {
        let d = h1::gauge(p) / 0.9;
        if d < 1.0 {
            (1.0 - d * d).powi(3) * (1.0 + 0.3 * p[0] - 0.2 * p[2])
        } else {
            0.0
        }
    };
    let ustar = field_from_function(&mask, bump).unwrap();
    let f = apply_stiffness(&ustar);
    let tol = hdiff::DEFAULT_CG_TOL;
    let u = solve_poisson(&f, tol, hdiff::default_cg_max_iter(&mask)).unwrap();
    let solve_err = u.sub(&ustar).unwrap().norm_lp(2.0) / ustar.norm_lp(2.0);

    // −Δ_H of x², t, t² and sin(x + t)
    let cases: [(&str, fn([f64; 3]) -> f64, fn([f64; 3]) -> f64); 4] = [
        ("x^2", |p| p[0] * p[0], |_| -2.0),
        ("t", |p| p[2], |_| 0.0),
        ("t^2", |p| p[2] * p[2], |p| -8.0 * (p[0] * p[0] + p[1] * p[1])),
        (
            "sin(x+t)",
            |p| (p[0] + p[2]).sin(),
            |p| (p[0] + p[2]).sin() * ((1.0 + 2.0 * p[1]).powi(2) + 4.0 * p[0] * p[0]),
        ),
    ];
    let mut orders_ok = true;
    let mut detail = Vec::new();
    for (name, f, l) in cases {
        let (e1, e2) = (interior_error(33, f, l), interior_error(65, f, l));
        let order = (e1 / e2).log2();
        let exact = e1 <= 1e-9 && e2 <= 1e-9;
        // the polynomials are reproduced exactly, so only sin carries an order
        orders_ok &= if name == "sin(x+t)" {
            order >= 1.8
        } else {
            exact || order >= 1.8
        };
        detail.push(format!("{name}: {e1:.1e}->{e2:.1e} (order {order:.2})"));
    }
    let elapsed = start.elapsed();
    let ok =
        sym <= 1e-10 && ident <= 1e-10 && solve_err <= 10.0 * tol && orders_ok && elapsed < Duration::from_secs(60);
    report(
        2,
        "discrete sub-Laplacian",
        ok,
        &format!(
            "symmetry {sym:.1e}, energy identity {ident:.1e}, manufactured solve {solve_err:.1e} (limit {:.0e}); {}; {:.1} s",
            10.0 * tol,
            detail.join(", "),
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_03_sstar_stability() {
    let start = Instant::now();
    let ladder = SstarConfig {
        ladder: vec![17, 33, 65],
        ..SstarConfig::default()
    };
    let est = estimate_sstar(&ladder).unwrap();
    let shrink = est.spreads[0] / est.spreads[1];
    let base = estimate_sstar(&SstarConfig::default()).unwrap().value;
    let moved = estimate_sstar(&SstarConfig {
        lambda: 0.5,
        center: [0.4, -0.3, 0.2],
        ..SstarConfig::default()
    })
    .unwrap()
    .value;
    let inv = rel(moved, base);
    let elapsed = start.elapsed();
    let ok = (3.0..=5.0).contains(&shrink) && inv <= 0.01 && elapsed < Duration::from_secs(120);
    report(
        3,
        "sharp-constant estimate",
        ok,
        &format!(
            "value {:.6} (oracle {SSTAR_ORACLE:.6}), spreads {:.2e} -> {:.2e}, shrink {shrink:.2}, invariance {inv:.1e}; {:.1} s",
            est.value,
            est.spreads[0],
            est.spreads[1],
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------

const SWEEP_EPS: [f64; 5] = [1.0, 0.5, 0.25, 0.1, 0.05];

struct SweepRun {
    dir: PathBuf,
    doc: Value,
    elapsed: Duration,
    code: i32,
}

/// The 65³ Korányi-ball sweep, run once through the CLI and shared.
fn sweep_run() -> &'static SweepRun {
    static RUN: OnceLock<SweepRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_sweep");
        let _ = std::fs::remove_dir_all(&dir);
        let start = Instant::now();
        let status = Command::new(env!("CARGO_BIN_EXE_heisenvar"))
            .args([
                "--out",
                dir.to_str().unwrap(),
                "sweep",
                "--domain",
                "ball",
                "--rho",
                "0.8",
                "--res",
                "65",
            ])
            .args(["--eps", "1.0,0.5,0.25,0.1,0.05", "--save-fields"])
            .status()
            .unwrap();
        let elapsed = start.elapsed();
        let doc: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("sweep.json")).unwrap()).unwrap();
        SweepRun {
            dir,
            doc,
            elapsed,
            code: status.code().unwrap_or(-1),
        }
    })
}

#[test]
fn criterion_04_subcritical_limit() {
    let run = sweep_run();
    let rows = run.doc["result"]["rows"].as_array().unwrap();
    let csv = std::fs::read_to_string(run.dir.join("sweep.csv")).unwrap();
    let data_rows = csv.lines().filter(|l| !l.starts_with('#')).count() - 1;
    let s_hat = sstar();
    let crit = 4.0;
    let vol = run.doc["result"]["mask_volume"].as_f64().unwrap();
    let mut holder_ok = true;
    let mut ratios = Vec::new();
    for r in rows {
        let e = r["epsilon"].as_f64().unwrap();
        let s = r["s_eps"].as_f64().unwrap_or(f64::NAN);
        let bound = s_hat.powf((crit - e) / crit) * vol.powf(e / crit);
        holder_ok &= s <= bound * 1.05;
        ratios.push(format!("{e}: {:.4}", s / bound));
    }
    let last = rows.last().unwrap()["s_eps"].as_f64().unwrap_or(f64::NAN);
    let gap = (last - s_hat).abs() / s_hat;
    let converged = rows.iter().all(|r| r["converged"].as_bool() == Some(true));
    let ok = run.code == 0
        && data_rows == 5
        && converged
        && holder_ok
        && gap <= 0.10
        && run.elapsed < Duration::from_secs(600);
    report(
        4,
        "subcritical maximizers approach the sharp constant",
        ok,
        &format!(
            "exit {}, {data_rows} rows, S*_0.05 = {last:.6} vs {s_hat:.6} (gap {:.1}%), S/holder bound [{}]; {:.0} s",
            run.code,
            gap * 100.0,
            ratios.join(", "),
            run.elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_05_concentration() {
    let run = sweep_run();
    let rows = run.doc["result"]["rows"].as_array().unwrap();
    let fr: Vec<f64> = rows
        .iter()
        .map(|r| r["conc_fraction_rho1"].as_f64().unwrap_or(f64::NAN))
        .collect();
    let monotone = fr.windows(2).all(|w| w[1] >= w[0]);
    let last = *fr.last().unwrap();
    let first = heisenvar::io::load_field(run.dir.join("maximizer_00.hsf")).unwrap();
    let final_u = heisenvar::io::load_field(run.dir.join(format!("maximizer_{:02}.hsf", SWEEP_EPS.len() - 1))).unwrap();
    let p0 = measures::field_pairings(&first);
    let p1 = measures::field_pairings(&final_u);
    let worst = p0
        .iter()
        .zip(&p1)
        .map(|(a, b)| a.abs() / b.abs().max(1e-300))
        .fold(f64::INFINITY, f64::min);
    let ok = monotone && last >= 0.9 && worst >= 5.0;
    report(
        5,
        "energy concentrates at one point",
        ok,
        &format!(
            "fraction within diam/8 {:?} (monotone {monotone}, last {last:.3} vs 0.9), weakest pairing decay {worst:.2}x (need 5x)",
            fr.iter().map(|f| (f * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    );
}

// ---------------------------------------------------------------------------

/// Grid resolving a cutoff bubble of scale λ with cutoff ρ = 8λ: spacing
/// 0.4λ horizontally and 0.5λ² vertically over the support B_{2ρ}.
fn single_bubble_mask(lambda: f64) -> Arc<DomainMask> {
    let a = 16.0 * lambda;
    box_mask([[-a, a], [-a, a], [-a * a, a * a]], [81, 81, 1025])
}

/// Two targets with cutoff ρ = 6λ on the t axis at ±312λ². Horizontal
/// offsets would shear the bubbles by 2x₀y in t, which this spacing cannot
/// resolve.
fn pair_mask(lambda: f64) -> Arc<DomainMask> {
    let (a, at) = (12.0 * lambda, 464.0 * lambda * lambda);
    box_mask([[-a, a], [-a, a], [-at, at]], [49, 49, 929])
}

fn pair_spec(lambda: f64, eps: Vec<f64>) -> RecoverySpec {
    let c = 312.0 * lambda * lambda;
    RecoverySpec::new(
        vec![
            Target {
                weight: 0.3,
                center: [0.0, 0.0, -c],
            },
            Target {
                weight: 0.4,
                center: [0.0, 0.0, c],
            },
        ],
        6.0 * lambda,
        eps,
    )
}

#[test]
fn criterion_06_recovery_sequences() {
    let start = Instant::now();
    let s_hat = sstar();
    let eps = 0.05;
    let mask = single_bubble_mask(eps);
    let ladder = [0.2, 0.1, 0.05];
    let mut single = Vec::new();
    for &e in &ladder {
        let u = bubbles::recovery_single([0.0; 3], e, 8.0 * eps, &mask).unwrap();
        single.push(measures::f_eps(&u, e).unwrap() / s_hat);
    }
    let single_gap = (single.last().unwrap() - 1.0).abs();
    drop(mask);

    let pmask = pair_mask(eps);
    let spec = pair_spec(eps, vec![eps]);
    spec.validate(pmask.grid()).unwrap();
    let glued = bubbles::recovery_glued(&spec, eps, &pmask).unwrap();
    let energy = dirichlet_energy(&glued);
    let mu_sum = 0.7;
    let target = s_hat * (0.3f64.powi(2) + 0.4f64.powi(2));
    let f = measures::f_eps(&glued, eps).unwrap();
    let glued_gap = (f / target - 1.0).abs();
    let elapsed = start.elapsed();
    let ok = single_gap <= 0.10
        && (energy - mu_sum).abs() <= 1e-10
        && glued_gap <= 0.10
        && elapsed < Duration::from_secs(300);
    report(
        6,
        "recovery sequences",
        ok,
        &format!(
            "F_eps/S* along eps {ladder:?}: {:?}; glued energy {energy:.12} (target 0.7), F_eps/(S*·Σμ²) = {:.4}; {:.0} s",
            single.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            f / target,
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_07_gamma_limit_bound() {
    let s_hat = sstar();
    let mask = box_mask([[-1.0, 1.0], [-1.0, 1.0], [-1.0, 1.0]], [21, 21, 41]);
    let g = mask.grid().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let n = 1000;
    for _ in 0..n {
        // diffuse part: a few resolved bubbles of random sign
        let mut u = Field::zeros(&mask);
        for _ in 0..rng.gen_range(0..3usize) {
            let lam = rng.gen_range(0.4..1.0);
            let c = [
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.3..0.3),
            ];
            let amp = rng.gen_range(-1.0..1.0);
            let b = bubble_field(&BubbleSpec::new(lam, c).with_amplitude(amp), &mask).unwrap();
            u = u.add(&b).unwrap();
        }
        // split the unit budget between |D_H u|², extra density and atoms
        let atoms_n = rng.gen_range(0..4usize);
        let mut shares: Vec<f64> = (0..atoms_n + 2).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = shares.iter().sum::<f64>() / rng.gen_range(0.5..1.0);
        shares.iter_mut().for_each(|s| *s /= total);
        let e = dirichlet_energy(&u);
        if e > 0.0 {
            u = u.scaled((shares[0] / e).sqrt());
        }
        let mut density = hdiff::energy_density_values(&u);
        let extra = shares[1] / (g.cell_volume() * g.len() as f64);
        density.iter_mut().for_each(|d| *d += extra);
        let atoms = (0..atoms_n)
            .map(|j| Atom {
                weight: shares[2 + j],
                location: [
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                ],
            })
            .collect();
        let mu = EnergyMeasure::new(&mask, density, atoms, 0.0).unwrap();
        let p = XPair::new(u, mu).unwrap();
        let value = gamma_limit_f(&p, s_hat).unwrap();
        let bound = s_hat * p.mu.total_mass().powi(2);
        worst = worst.max(value / bound);
    }
    let mut dirac_err = 0.0f64;
    for w in [1.0, 0.7, 0.25] {
        let mu = EnergyMeasure::dirac(&mask, [0.1, -0.2, 0.3])
            .unwrap()
            .scaled(w)
            .unwrap();
        let p = XPair::new(Field::zeros(&mask), mu).unwrap();
        let value = gamma_limit_f(&p, s_hat).unwrap();
        dirac_err = dirac_err.max(rel(value, s_hat * w * w));
    }
    let ok = worst <= 1.02 && dirac_err <= 1e-12;
    report(
        7,
        "limit functional bound",
        ok,
        &format!(
            "{n} random pairs, worst F/(S*·mass²) = {worst:.4} (limit 1.02); Dirac equality error {dirac_err:.1e}"
        ),
    );
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_08_atom_inequality() {
    let s_hat = sstar();
    let lam = 0.05;
    // pure bubble: cutoff ρ = 8λ, detection radius 2ρ covers the support
    let mask = single_bubble_mask(lam);
    let rho_c = 8.0 * lam;
    let seq: Vec<Field> = [0.1, 0.05]
        .iter()
        .map(|&l| {
            let u = field_from_function(&mask, |p| {
                jl_h1(h1::dilate(1.0 / l, p)) / l * bubbles::cutoff([0.0; 3], rho_c, p)
            })
            .unwrap();
            extremals_normalize(&u)
        })
        .collect();
    let pure = measures::cca_check(&seq, 2.0 * rho_c, 0.2, s_hat).unwrap();
    drop(seq);
    drop(mask);
    let tight = pure.pairs.len() == 1 && (pure.pairs[0].ratio - 1.0).abs() <= 0.05;

    // weighted pair: the glued recovery fields at two scales
    let pmask = pair_mask(lam);
    let spec = pair_spec(lam, vec![2.0 * lam, lam]);
    let seq: Vec<Field> = spec
        .eps_ladder
        .iter()
        .map(|&e| bubbles::recovery_glued(&spec, e, &pmask).unwrap())
        .collect();
    let pair = measures::cca_check(&seq, 2.0 * spec.cutoff_rho, 0.2, s_hat).unwrap();
    let all = pure.pairs.iter().chain(&pair.pairs).all(|p| p.ratio <= 1.05);
    let ok = tight && all && pair.pairs.len() == 2;
    let ratios: Vec<String> = pair
        .pairs
        .iter()
        .map(|p| format!("mu {:.3} ratio {:.4}", p.mu, p.ratio))
        .collect();
    report(
        8,
        "atom inequality nu <= S* mu^2",
        ok,
        &format!(
            "pure bubble ratio {:.4} ({} pair), weighted pairs [{}]",
            pure.pairs.first().map_or(f64::NAN, |p| p.ratio),
            pure.pairs.len(),
            ratios.join(", ")
        ),
    );
}

fn extremals_normalize(u: &Field) -> Field {
    heisenvar::extremals::normalize_energy(u).unwrap()
}

// ---------------------------------------------------------------------------

struct PsOutcome {
    scale_err: f64,
    center_err_h: f64,
    norm_defects: Vec<f64>,
    energy_defects: Vec<f64>,
    residuals: Vec<f64>,
    separation: f64,
    profiles: usize,
}

fn ps_case(bubbles: Vec<PsBubble>) -> PsOutcome {
    let mask = box_mask([[-0.6, 0.6], [-0.6, 0.6], [-0.6, 0.6]], [65, 65, 193]);
    let spec = PsSpec::new(bubbles, [0, 6], 0.15);
    let seq = synth_ps_sequence(&spec, &mask).unwrap();
    let set = extract_profiles(&seq, &ExtractConfig::default()).unwrap();
    let rep = splitting_report(&seq, None, &set, 0.0, 0).unwrap();
    let h = bubbles::horizontal_spacing(mask.grid());
    let mut scale_err = 0.0f64;
    let mut center_err = 0.0f64;
    for b in &spec.bubbles {
        // the entry whose last center is nearest to this bubble
        let last = seq.len() - 1;
        let e = set
            .entries
            .iter()
            .min_by(|x, y| h1::distance(x.centers[last], b.center).total_cmp(&h1::distance(y.centers[last], b.center)));
        let Some(e) = e else {
            scale_err = f64::INFINITY;
            continue;
        };
        for (k, (l, c)) in e.scales.iter().zip(&e.centers).enumerate() {
            scale_err = scale_err.max((l / b.scale(k as i64) - 1.0).abs());
            center_err = center_err.max(h1::distance(*c, b.center) / h);
        }
    }
    let rows = &rep.rows;
    PsOutcome {
        scale_err,
        center_err_h: center_err,
        norm_defects: rows.iter().map(|r| (r.norm_defect / r.norm_total).abs()).collect(),
        energy_defects: rows
            .iter()
            .map(|r| (r.energy_defect / r.e_lambda_total).abs())
            .collect(),
        residuals: rows.iter().map(|r| r.ps_residual).collect(),
        separation: rep
            .separation
            .last()
            .and_then(|s| s.first().copied())
            .unwrap_or(f64::NAN),
        profiles: set.entries.len(),
    }
}

fn decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn short(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(" "))
}

#[test]
fn criterion_09_profile_splitting() {
    let start = Instant::now();
    // centers on the t axis, where translation does not shear the bubbles
    let one = ps_case(vec![PsBubble {
        lambda0: 0.2,
        rate: 2.0,
        center: [0.0; 3],
    }]);
    let two = ps_case(vec![
        PsBubble {
            lambda0: 0.2,
            rate: 2.0,
            center: [0.0, 0.0, -0.3],
        },
        PsBubble {
            lambda0: 0.2,
            rate: 2.0,
            center: [0.0, 0.0, 0.3],
        },
    ]);
    let elapsed = start.elapsed();
    let case_ok = |o: &PsOutcome, n: usize| {
        o.profiles == n
            && o.scale_err <= 0.05
            && o.center_err_h <= 2.0
            && decreasing(&o.norm_defects)
            && decreasing(&o.energy_defects)
            && *o.norm_defects.last().unwrap() <= 0.05
            && *o.energy_defects.last().unwrap() <= 0.05
            && decreasing(&o.residuals)
    };
    let ok = case_ok(&one, 1) && case_ok(&two, 2) && two.separation > 10.0 && elapsed < Duration::from_secs(600);
    let describe = |o: &PsOutcome| {
        format!(
            "{} profiles, scale err {:.3}, center err {:.2}h, norm defect {}, energy defect {}, residual {}",
            o.profiles,
            o.scale_err,
            o.center_err_h,
            short(&o.norm_defects),
            short(&o.energy_defects),
            short(&o.residuals)
        )
    };
    report(
        9,
        "profile decomposition and splitting",
        ok,
        &format!(
            "one bubble: {}; two bubbles: {}, separation {:.2}; {:.0} s",
            describe(&one),
            describe(&two),
            two.separation,
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------

fn cli(out: &Path, args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_heisenvar"))
        .arg("--threads")
        .arg("1")
        .arg("--out")
        .arg(out)
        .args(args)
        .status()
        .unwrap()
        .code()
        .unwrap_or(-1)
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_10_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for _ in 0..2 {
        // same paths both times, since inputs are recorded in provenance
        let base = tmp.path().join("run");
        let _ = std::fs::remove_dir_all(&base);
        let synth = base.join("synth");
        let mut codes = vec![cli(
            &synth,
            &[
                "synth",
                "--kind",
                "ps",
                "--domain",
                "box",
                "--rho",
                "1",
                "--half-t",
                "0.5",
                "--res",
                "21",
                "--res-t",
                "41",
                "--bubble",
                "0.3,1.5,0,0,0",
                "--k-max",
                "2",
                "--cutoff-rho",
                "0.3",
                "--noise",
                "0.01",
                "--seed",
                "42",
            ],
        )];
        let inputs: Vec<String> = (0..3)
            .map(|k| synth.join(format!("seq_{k:03}.hsf")).display().to_string())
            .collect();
        let mut dec = vec!["decompose", "--input"];
        dec.extend(inputs.iter().map(String::as_str));
        codes.push(cli(&base.join("decompose"), &dec));
        let mut ps = vec!["pscheck", "--input"];
        ps.extend(inputs.iter().map(String::as_str));
        codes.push(cli(&base.join("pscheck"), &ps));
        codes.push(cli(
            &base.join("sweep"),
            &[
                "sweep",
                "--res",
                "17",
                "--eps",
                "1.0,0.5",
                "--init",
                "random",
                "--seed",
                "3",
                "--save-fields",
                "--sstar",
                "0.025",
            ],
        ));
        let snaps: Vec<_> = ["synth", "decompose", "pscheck", "sweep"]
            .iter()
            .map(|d| snapshot(&base.join(d)))
            .collect();
        runs.push((codes, snaps));
    }
    let codes_ok = runs.iter().all(|(c, _)| c.iter().all(|&x| x == 0));
    let files: usize = runs[0].1.iter().map(Vec::len).sum();
    let same = runs[0].1 == runs[1].1;
    report(
        10,
        "deterministic artifacts",
        codes_ok && same && files > 0,
        &format!("exit codes {:?}, {files} artifacts byte-identical: {same}", runs[0].0),
    );
}
