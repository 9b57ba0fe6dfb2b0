//! Command-line front end. Every subcommand delegates to one library
//! operation and writes its artifacts into `--out`.
//!
//! `--config file.json` works for every subcommand: each key names a flag
//! of that subcommand (underscores or dashes), arrays of numbers become
//! comma lists, arrays of arrays become repeated flags and `true` becomes a
//! bare switch. Flags given on the command line win over config keys.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical non-convergence
//! (partial artifacts plus `failure.json`). Every error is also printed to
//! stderr as one JSON object.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bubbles::{self, de_residual_with, energy_e_lambda, NoiseSpec, PsBubble, PsSpec, RecoverySpec, Target};
use crate::error::{Error, Result};
use crate::extremals::{estimate_sstar, sobolev_quotient, SstarConfig};
use crate::grid::{DomainMask, Field, Grid};
use crate::hdiff::dirichlet_energy;
use crate::heis::GroupParams;
use crate::io::{load_field, num, save_field_with};
use crate::measures::{self, DEFAULT_ATOM_RADIUS_H, DEFAULT_ATOM_THRESHOLD};
use crate::profiles::{extract_profiles, splitting_report, ExtractConfig};
use crate::subcrit::{epsilon_sweep, solve_subcritical, Init, SubcritConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "heisenvar",
    version,
    about = "Critical Sobolev experiments on the Heisenberg group"
)]
pub struct Cli {
    /// Worker threads; HEISENVAR_THREADS when absent, else every core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file whose keys stand in for the subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the sharp constant from resolved bubbles.
    Extremal(ExtremalArgs),
    /// Energies and quotients of stored fields.
    Energy(EnergyArgs),
    /// One subcritical maximizer.
    Solve(SolveArgs),
    /// Subcritical maximizers along a descending ε list.
    Sweep(SweepArgs),
    /// Concentration, atoms and weak pairings of stored fields.
    Concentrate(ConcentrateArgs),
    /// Synthetic Palais-Smale or recovery sequences.
    Synth(SynthArgs),
    /// Profile decomposition and splitting table of a stored sequence.
    Decompose(DecomposeArgs),
    /// Energies and derivative residuals along a stored sequence.
    Pscheck(PscheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Ball,
    Box,
    Ellipsoid,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DomainArgs {
    #[arg(long, value_enum, default_value = "ball")]
    pub domain: DomainKind,
    /// Ball radius; also the default size of the box and ellipsoid.
    #[arg(long, default_value_t = 0.8)]
    pub rho: f64,
    /// Nodes per axis.
    #[arg(long, default_value_t = 33)]
    pub res: usize,
    /// Nodes along t, when different from --res.
    #[arg(long)]
    pub res_t: Option<usize>,
    /// Horizontal half-width of the box (default 1.05ρ for ball and
    /// ellipsoid, ρ for a plain box).
    #[arg(long)]
    pub half_xy: Option<f64>,
    /// Vertical half-width of the box (default 1.05ρ², ρ² for a plain box).
    #[arg(long)]
    pub half_t: Option<f64>,
}

impl DomainArgs {
    pub fn build(&self) -> Result<Arc<DomainMask>> {
        if !(self.rho > 0.0) {
            return Err(Error::InvalidParameter(format!("rho {} must be positive", self.rho)));
        }
        let pad = if self.domain == DomainKind::Box { 1.0 } else { 1.05 };
        let a = self.half_xy.unwrap_or(pad * self.rho);
        let b = self.half_t.unwrap_or(pad * self.rho * self.rho);
        let res = [self.res, self.res, self.res_t.unwrap_or(self.res)];
        let g = Grid::centered(a, b, res)?;
        let r = self.rho;
        let m = match self.domain {
            DomainKind::Ball => DomainMask::koranyi_ball(g, [0.0; 3], r)?,
            DomainKind::Box => DomainMask::full_box(g)?,
            DomainKind::Ellipsoid => DomainMask::ellipsoid(g, [0.0; 3], [r, r, r * r])?,
        };
        Ok(Arc::new(m))
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExtremalArgs {
    /// Nodes per axis at each level, coarse to fine.
    #[arg(long, value_delimiter = ',', default_value = "33,65")]
    pub ladder: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0", allow_hyphen_values = true)]
    pub center: [f64; 3],
    /// Box half-width in units of λ.
    #[arg(long, default_value_t = 3.0)]
    pub box_xy: f64,
    /// Box half-height in units of λ².
    #[arg(long, default_value_t = 4.0)]
    pub box_t: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EnergyArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    /// ε values at which F_ε is reported.
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
    /// λ of E_λ.
    #[arg(long, default_value_t = 0.0)]
    pub lambda_param: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Auto,
    Bubble,
    Random,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-7)]
    pub fp_tol: f64,
    #[arg(long, default_value_t = 2000)]
    pub fp_max_iter: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub cg_tol: f64,
    #[arg(long)]
    pub cg_max_iter: Option<usize>,
    /// Anderson history length; 0 gives the plain fixed point.
    #[arg(long, default_value_t = 5)]
    pub anderson_depth: usize,
    #[arg(long, value_enum, default_value = "auto")]
    pub init: InitKind,
    /// Scale of the bubble start.
    #[arg(long)]
    pub init_lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SolverArgs {
    fn config(&self, epsilon: f64) -> SubcritConfig {
        let mut c = SubcritConfig::new(epsilon);
        c.fp_tol = self.fp_tol;
        c.fp_max_iter = self.fp_max_iter;
        c.cg_tol = self.cg_tol;
        c.cg_max_iter = self.cg_max_iter;
        c.anderson_depth = self.anderson_depth;
        c.init = match self.init {
            InitKind::Auto => Init::Auto,
            InitKind::Bubble => Init::Bubble {
                lambda: self.init_lambda,
                center: None,
            },
            InitKind::Random => Init::Random { seed: self.seed },
        };
        c
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolveArgs {
    #[command(flatten)]
    pub domain: DomainArgs,
    #[arg(long)]
    pub eps: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub domain: DomainArgs,
    /// Strictly descending ε list.
    #[arg(long, value_delimiter = ',', required = true)]
    pub eps: Vec<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Start every ε from the initial guess instead of the previous maximizer.
    #[arg(long)]
    pub cold: bool,
    /// Also write each maximizer as an HSF1 file.
    #[arg(long)]
    pub save_fields: bool,
    /// Sharp constant used for the Hölder bound; estimated when absent.
    #[arg(long)]
    pub sstar: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConcentrateArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    /// Gauge radii around the peak (default diam/8 and diam/4 of the mask).
    #[arg(long, value_delimiter = ',')]
    pub radii: Vec<f64>,
    /// Atom clustering radius (default four horizontal spacings).
    #[arg(long)]
    pub atom_rho: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_ATOM_THRESHOLD)]
    pub theta: f64,
    /// Sharp constant for the atom inequality; estimated when absent.
    #[arg(long)]
    pub sstar: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Ps,
    Recovery,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[command(flatten)]
    pub domain: DomainArgs,
    /// Palais-Smale bubble as lambda0,rate,x,y,t (repeatable).
    #[arg(long, value_parser = parse_vec5, allow_hyphen_values = true)]
    pub bubble: Vec<[f64; 5]>,
    #[arg(long, default_value_t = 0)]
    pub k_min: i64,
    #[arg(long, default_value_t = 6)]
    pub k_max: i64,
    #[arg(long, default_value_t = bubbles::CRITICAL_AMPLITUDE)]
    pub amplitude: f64,
    /// λ of E_λ recorded with the sequence.
    #[arg(long, default_value_t = 0.0)]
    pub lambda_param: f64,
    /// Noise ‖·‖_{2*} relative to each element; 0 disables it.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Recovery target as weight,x,y,t (repeatable).
    #[arg(long, value_parser = parse_vec4, allow_hyphen_values = true)]
    pub target: Vec<[f64; 4]>,
    /// Strictly descending ε ladder of a recovery sequence.
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
    #[arg(long)]
    pub cutoff_rho: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecomposeArgs {
    /// Sequence elements in order of k.
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    /// Weak limit u⁽⁰⁾; zero when absent.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub stop_tol: f64,
    #[arg(long, default_value_t = 8)]
    pub max_profiles: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub window_tau: f64,
    /// Skip the least-squares refinement of (λ, amplitude).
    #[arg(long)]
    pub no_refine: bool,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_param: f64,
    /// Also write each profile as an HSF1 file.
    #[arg(long)]
    pub save_profiles: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PscheckArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_param: f64,
}

fn parse_list<const N: usize>(s: &str) -> std::result::Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

fn parse_vec3(s: &str) -> std::result::Result<[f64; 3], String> {
    parse_list::<3>(s)
}

fn parse_vec4(s: &str) -> std::result::Result<[f64; 4], String> {
    parse_list::<4>(s)
}

fn parse_vec5(s: &str) -> std::result::Result<[f64; 5], String> {
    parse_list::<5>(s)
}

/// What went wrong, in a form `run` turns into an exit code.
#[derive(Debug)]
enum Failure {
    Invalid(String, &'static str),
    NotConverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_convergence() {
            Failure::NotConverged(e.to_string())
        } else {
            Failure::Invalid(e.to_string(), error_kind(&e))
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::NonPositiveScale(_) => "non_positive_scale",
        Error::InvalidGrid(_) => "invalid_grid",
        Error::InvalidMask(_) => "invalid_mask",
        Error::GridMismatch => "grid_mismatch",
        Error::NonFinite { .. } => "non_finite",
        Error::InvalidParameter(_) => "invalid_parameter",
        Error::CgNotConverged { .. } | Error::NotConverged { .. } => "not_converged",
        Error::ZeroField(_) => "zero_field",
        Error::SupportOverlap(_) => "support_overlap",
        Error::SupportEscape(_) => "support_escape",
        Error::Invariant(_) => "invariant",
        Error::BoundViolation { .. } => "bound_violation",
        Error::Format(_) | Error::LengthMismatch { .. } => "format",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
    }
}

/// Where artifacts go, plus the provenance every artifact embeds.
struct Sink {
    dir: PathBuf,
    provenance: Value,
}

impl Sink {
    fn new(dir: &Path, command: &str, config: Value) -> Result<Self> {
        let canonical = serde_json::to_string(&config)?;
        let hash = Sha256::digest(canonical.as_bytes());
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            provenance: json!({
                "tool": "heisenvar",
                "version": env!("CARGO_PKG_VERSION"),
                "command": command,
                "config_hash": hex,
                "config": config,
            }),
        })
    }

    fn provenance_for(&self, grid: Option<&Grid>, extra: Value) -> Value {
        let mut p = self.provenance.clone();
        if let Some(g) = grid {
            p["grid"] = json!({ "bounds": g.bounds(), "resolution": g.res() });
        }
        if let Value::Object(m) = extra {
            for (k, v) in m {
                p[k] = v;
            }
        }
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    }

    fn json(&self, name: &str, grid: Option<&Grid>, body: Value) -> Result<()> {
        let doc = json!({ "provenance": self.provenance_for(grid, Value::Null), "result": body });
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// CSV with the provenance as a leading `#` comment line.
    fn csv(&self, name: &str, grid: Option<&Grid>, body: &str) -> Result<()> {
        let head = serde_json::to_string(&self.provenance_for(grid, Value::Null))?;
        self.write(name, format!("# {head}\n{body}").as_bytes())
    }

    fn field(&self, name: &str, u: &Field, extra: Value) -> Result<()> {
        save_field_with(u, self.path(name), Some(self.provenance_for(Some(u.grid()), extra)))
    }

    fn failure(&self, message: &str) -> Result<()> {
        self.json(
            "failure.json",
            None,
            json!({ "kind": "not_converged", "message": message }),
        )
    }
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<Field>> {
    paths.iter().map(load_field).collect()
}

/// k label stored by `synth` in the first file, 0 otherwise.
fn first_k(path: &Path) -> i64 {
    fs::read(path)
        .ok()
        .and_then(|b| {
            let len = u32::from_le_bytes(b.get(4..8)?.try_into().ok()?) as usize;
            let h: Value = serde_json::from_slice(b.get(8..8 + len)?).ok()?;
            h["provenance"]["k"].as_i64()
        })
        .unwrap_or(0)
}

fn sstar_or_estimate(v: Option<f64>) -> Result<f64> {
    match v {
        Some(s) if s > 0.0 => Ok(s),
        Some(s) => Err(Error::InvalidParameter(format!("sstar {s} must be positive"))),
        None => Ok(estimate_sstar(&SstarConfig::default())?.value),
    }
}

fn cmd_extremal(a: &ExtremalArgs, sink: &Sink) -> std::result::Result<(), Failure> {
    let cfg = SstarConfig {
        ladder: a.ladder.clone(),
        lambda: a.lambda,
        center: a.center,
        half_xy: a.box_xy,
        half_t: a.box_t,
    };
    let est = estimate_sstar(&cfg)?;
    sink.json("sstar.json", None, serde_json::to_value(&est).map_err(Error::from)?)?;
    Ok(())
}

fn cmd_energy(a: &EnergyArgs, sink: &Sink) -> std::result::Result<(), Failure> {
    let fields = load_all(&a.input)?;
    let mut rows = Vec::new();
    let mut csv = String::from("file,dirichlet_energy,l2star_mass,sobolev_quotient,e_lambda\n");
    for (p, u) in a.input.iter().zip(&fields) {
        let e = dirichlet_energy(u);
        let l4 = u.quadrature_lp(GroupParams::h1().crit_exp());
        let q = sobolev_quotient(u).unwrap_or(f64::NAN);
        let el = energy_e_lambda(u, a.lambda_param);
        let f: Vec<Value> = a
            .eps
            .iter()
            .map(|&e| Ok(json!({ "eps": e, "f_eps": measures::f_eps(u, e)? })))
            .collect::<Result<_>>()?;
        let name = p.display().to_string();
        csv.push_str(&format!("{name},{},{},{},{}\n", num(e), num(l4), num(q), num(el)));
        rows.push(json!({
            "file": name,
            "dirichlet_energy": e,
            "l2star_mass": l4,
            "sobolev_quotient": q,
            "e_lambda": el,
            "f_eps": f,
        }));
    }
    let g = fields.first().map(|u| u.grid());
    sink.csv("energy.csv", g, &csv)?;
    sink.json(
        "energy.json",
        g,
        json!({ "lambda_param": a.lambda_param, "fields": rows }),
    )?;
    Ok(())
}

fn cmd_solve(a: &SolveArgs, sink: &Sink) -> std::result::Result<(), Failure> {
    let mask = a.domain.build()?;
    let cfg = a.solver.config(a.eps);
    cfg.validate()?;
    let r = solve_subcritical(&cfg, &mask)?;
    sink.field("maximizer.hsf", &r.maximizer, json!({ "epsilon": r.epsilon }))?;
    let body = json!({
        "epsilon": r.epsilon,
        "s_eps": r.s_eps,
        "multiplier": r.multiplier,
        "el_residual": r.el_residual,
        "iterations": r.iterations,
        "converged": r.converged,
        "final_change": r.final_change,
        "worst_ascent_drop": r.worst_ascent_drop,
        "peak": r.peak,
        "history": r.history,
    });
    sink.json("solve.json", Some(mask.grid()), body)?;
    if !r.converged {
        let msg = format!(
            "fixed point did not converge after {} iterations (last change {:e})",
            r.iterations, r.final_change
        );
        sink.failure(&msg)?;
        return Err(Failure::NotConverged(msg));
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, sink: &Sink) -> std::result::Result<(), Failure> {
    let mask = a.domain.build()?;
    let template = a.solver.config(a.eps.first().copied().unwrap_or(1.0));
    for &e in &a.eps {
        a.solver.config(e).validate()?;
    }
    let s_star = sstar_or_estimate(a.sstar)?;
    let sweep = epsilon_sweep(&a.eps, &mask, !a.cold, &template)?;
    let crit = GroupParams::h1().crit_exp();
    let vol = mask.volume();
    let holder: Vec<Value> = sweep
        .rows
        .iter()
        .map(|r| {
            let bound = s_star.powf((crit - r.epsilon) / crit) * vol.powf(r.epsilon / crit);
            json!({ "epsilon": r.epsilon, "bound": bound, "ratio": r.s_eps / bound })
        })
        .collect();
    let g = mask.grid();
    sink.csv("sweep.csv", Some(g), &sweep.to_csv())?;
    if a.save_fields {
        for (i, u) in sweep.maximizers.iter().enumerate() {
            if let Some(u) = u {
                let e = sweep.rows[i].epsilon;
                sink.field(&format!("maximizer_{i:02}.hsf"), u, json!({ "epsilon": e }))?;
            }
        }
    }
    let body = json!({
        "rows": sweep.rows,
        "radii": sweep.radii,
        "sstar": s_star,
        "mask_volume": vol,
        "holder": holder,
        "continuity_constants": sweep.continuity_constants(),
    });
    sink.json("sweep.json", Some(g), body)?;
    let bad: Vec<f64> = sweep.rows.iter().filter(|r| !r.converged).map(|r| r.epsilon).collect();
    if !bad.is_empty() {
        let msg = format!("rows did not converge at epsilon {bad:?}");
        sink.failure(&msg)?;
        return Err(Failure::NotConverged(msg));
    }
    Ok(())
}

fn cmd_concentrate(a: &ConcentrateArgs, sink: &Sink) -> std::result::Result<(), Failure> {
    let fields = load_all(&a.input)?;
    let first = &fields[0];
    for u in &fields[1..] {
        first.same_grid(u)?;
    }
    let diam = first.mask().diameter();
    let radii = if a.radii.is_empty() {
        vec![diam / 8.0, diam / 4.0]
    } else {
        a.radii.clone()
    };
    let h = bubbles::horizontal_spacing(first.grid());
    let atom_rho = a.atom_rho.unwrap_or(DEFAULT_ATOM_RADIUS_H * h);
    let crit = GroupParams::h1().crit_exp();
    let mut csv = String::from("file,peak_x,peak_y,peak_t");
    for i in 0..radii.len() {
        csv.push_str(&format!(",fraction_{i}"));
    }
    csv.push_str(",energy_atoms,lp_atoms\n");
    let mut rows = Vec::new();
    for (p, u) in a.input.iter().zip(&fields) {
        let c = measures::concentration_report(u, &radii)?;
        let mu = measures::detect_atoms(&measures::energy_density(u), atom_rho, a.theta)?;
        let nu = measures::detect_atoms(&measures::lp_density(u, crit), atom_rho, a.theta)?;
        let name = p.display().to_string();
        csv.push_str(&format!(
            "{name},{},{},{}",
            num(c.peak[0]),
            num(c.peak[1]),
            num(c.peak[2])
        ));
        for (_, f) in &c.fractions {
            csv.push(',');
            csv.push_str(&num(*f));
        }
        csv.push_str(&format!(",{},{}\n", mu.atoms.len(), nu.atoms.len()));
        rows.push(json!({
            "file": name,
            "report": c,
            "energy_atoms": mu.atoms,
            "lp_atoms": nu.atoms,
        }));
    }
    let cca = if fields.len() >= 2 {
        let s = sstar_or_estimate(a.sstar)?;
        Some(measures::cca_check(&fields, atom_rho, a.theta, s)?)
    } else {
        None
    };
    let g = Some(first.grid());
    sink.csv("concentrate.csv", g, &csv)?;
    let body = json!({ "radii": radii, "atom_rho": atom_rho, "theta": a.theta, "fields": rows, "cca": cca });
    sink.json("concentrate.json", g, body)?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs, sink: &Sink) -> std::result::Result<(), Failure> {
    let mask = a.domain.build()?;
    let g = mask.grid();
    match a.kind {
        SynthKind::Ps => {
            if a.bubble.is_empty() {
                return Err(
                    Error::InvalidParameter("a Palais-Smale sequence needs at least one --bubble".into()).into(),
                );
            }
            let bubbles = a
                .bubble
                .iter()
                .map(|b| PsBubble {
                    lambda0: b[0],
                    rate: b[1],
                    center: [b[2], b[3], b[4]],
                })
                .collect();
            let mut spec = PsSpec::new(bubbles, [a.k_min, a.k_max], a.cutoff_rho);
            spec.amplitude = a.amplitude;
            spec.lambda_param = a.lambda_param;
            if a.noise > 0.0 {
                spec.noise = Some(NoiseSpec {
                    seed: a.seed,
                    relative: a.noise,
                });
            }
            let seq = bubbles::synth_ps_sequence(&spec, &mask)?;
            let mut files = Vec::new();
            for (k, u) in spec.ks().zip(&seq) {
                let name = if k < 0 {
                    format!("seq_m{:03}.hsf", -k)
                } else {
                    format!("seq_{k:03}.hsf")
                };
                sink.field(&name, u, json!({ "k": k }))?;
                files.push(json!({ "k": k, "file": name, "scales": spec.bubbles.iter().map(|b| b.scale(k)).collect::<Vec<_>>() }));
            }
            sink.json(
                "synth.json",
                Some(g),
                json!({ "kind": "ps", "spec": spec, "elements": files }),
            )?;
        }
        SynthKind::Recovery => {
            let targets = a
                .target
                .iter()
                .map(|t| Target {
                    weight: t[0],
                    center: [t[1], t[2], t[3]],
                })
                .collect();
            let spec = RecoverySpec::new(targets, a.cutoff_rho, a.eps.clone());
            spec.validate(g)?;
            let mut rows = Vec::new();
            for (i, &e) in spec.eps_ladder.iter().enumerate() {
                let u = bubbles::recovery_glued(&spec, e, &mask)?;
                let name = format!("rec_{i:03}.hsf");
                let energy = dirichlet_energy(&u);
                let f = measures::f_eps(&u, e)?;
                sink.field(&name, &u, json!({ "k": i, "epsilon": e }))?;
                rows.push(json!({ "epsilon": e, "file": name, "dirichlet_energy": energy, "f_eps": f }));
            }
            sink.json(
                "synth.json",
                Some(g),
                json!({ "kind": "recovery", "spec": spec, "elements": rows }),
            )?;
        }
    }
    Ok(())
}

fn cmd_decompose(a: &DecomposeArgs, sink: &Sink) -> std::result::Result<(), Failure> {
    let seq = load_all(&a.input)?;
    let base = a.base.as_ref().map(load_field).transpose()?;
    let cfg = ExtractConfig {
        max_profiles: a.max_profiles,
        stop_tol: a.stop_tol,
        refine: !a.no_refine,
        window_tau: a.window_tau,
        reference_norm: None,
    };
    let set = extract_profiles(&seq, &cfg)?;
    let k0 = first_k(&a.input[0]);
    let report = splitting_report(&seq, base.as_ref(), &set, a.lambda_param, k0)?;
    let mut profiles = Vec::new();
    for (j, e) in set.entries.iter().enumerate() {
        let name = format!("profile_{j:02}.hsf");
        if a.save_profiles {
            sink.field(&name, &e.profile, json!({ "profile": j }))?;
        }
        profiles.push(json!({
            "scales": e.scales,
            "centers": e.centers,
            "amplitude": e.amplitude,
            "window": e.window,
            "dirichlet_energy": dirichlet_energy(&e.profile),
            "reference_grid": { "bounds": e.profile.grid().bounds(), "resolution": e.profile.grid().res() },
            "file": a.save_profiles.then_some(name),
        }));
    }
    let g = Some(seq[0].grid());
    sink.csv("splitting.csv", g, &report.to_csv())?;
    sink.json("splitting.json", g, serde_json::to_value(&report).map_err(Error::from)?)?;
    let body = json!({
        "first_k": k0,
        "profiles": profiles,
        "l2star_remainder": set.l2star_remainder,
        "l2star_total": set.l2star_total,
        "stalled": set.stalled,
    });
    sink.json("profiles.json", g, body)?;
    Ok(())
}

fn cmd_pscheck(a: &PscheckArgs, sink: &Sink) -> std::result::Result<(), Failure> {
    let seq = load_all(&a.input)?;
    let first = &seq[0];
    for u in &seq[1..] {
        first.same_grid(u)?;
    }
    let bank = bubbles::bank_fields(first.mask())?;
    let k0 = first_k(&a.input[0]);
    let mut csv = String::from("k,dirichlet_energy,e_lambda,residual_dual,residual_l2_scaled\n");
    let mut rows = Vec::new();
    for (i, u) in seq.iter().enumerate() {
        let k = k0 + i as i64;
        let e = dirichlet_energy(u);
        let el = energy_e_lambda(u, a.lambda_param);
        let r = de_residual_with(u, a.lambda_param, &bank)?;
        csv.push_str(&format!(
            "{k},{},{},{},{}\n",
            num(e),
            num(el),
            num(r.dual),
            num(r.l2_scaled)
        ));
        rows.push(json!({ "k": k, "dirichlet_energy": e, "e_lambda": el, "residual": r }));
    }
    let duals: Vec<f64> = rows
        .iter()
        .map(|r| r["residual"]["dual"].as_f64().unwrap_or(f64::NAN))
        .collect();
    let decreasing = duals.windows(2).all(|w| w[1] <= w[0]);
    let g = Some(first.grid());
    sink.csv("pscheck.csv", g, &csv)?;
    sink.json(
        "pscheck.json",
        g,
        json!({ "lambda_param": a.lambda_param, "rows": rows, "residual_decreasing": decreasing }),
    )?;
    Ok(())
}

fn flag_of(token: &str) -> Option<&str> {
    token.strip_prefix("--").map(|t| t.split('=').next().unwrap_or(t))
}

/// Inserts the flags of a `--config` file right after the subcommand name.
fn expand_config(args: Vec<OsString>) -> std::result::Result<Vec<OsString>, Failure> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < strs.len() {
        let t = &strs[i];
        if let Some(v) = t.strip_prefix("--config=") {
            config = Some(v.to_string());
        } else if t == "--config" {
            config = strs.get(i + 1).cloned();
            i += 1;
        } else if t == "--threads" || t == "--out" {
            i += 1;
        } else if sub.is_none() && !t.starts_with('-') {
            sub = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(sub)) = (config, sub) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| Failure::from(Error::io(&path, e)))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Failure::from(Error::from(e)))?;
    let Value::Object(map) = doc else {
        return Err(Failure::Invalid(
            "config must be a JSON object".into(),
            "invalid_parameter",
        ));
    };
    let given: Vec<&str> = strs.iter().filter_map(|t| flag_of(t)).collect();
    let scalar = |v: &Value| -> std::result::Result<String, Failure> {
        match v {
            Value::Number(n) => Ok(n.to_string()),
            Value::String(s) => Ok(s.clone()),
            Value::Array(xs) => xs
                .iter()
                .map(|x| match x {
                    Value::Number(n) => Ok(n.to_string()),
                    Value::String(s) => Ok(s.clone()),
                    _ => Err(Failure::Invalid(
                        format!("unsupported config value {x}"),
                        "invalid_parameter",
                    )),
                })
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(|v| v.join(",")),
            _ => Err(Failure::Invalid(
                format!("unsupported config value {v}"),
                "invalid_parameter",
            )),
        }
    };
    let mut extra: Vec<OsString> = Vec::new();
    for (k, v) in &map {
        let flag = k.replace('_', "-");
        if given.contains(&flag.as_str()) || v.is_null() {
            continue;
        }
        match v {
            Value::Bool(true) => extra.push(format!("--{flag}").into()),
            Value::Bool(false) => {}
            Value::Array(xs) if xs.iter().all(Value::is_array) => {
                for x in xs {
                    extra.push(format!("--{flag}").into());
                    extra.push(scalar(x)?.into());
                }
            }
            Value::Array(xs) if flag == "input" => {
                extra.push("--input".into());
                for x in xs {
                    extra.push(scalar(x)?.into());
                }
            }
            _ => {
                extra.push(format!("--{flag}").into());
                extra.push(scalar(v)?.into());
            }
        }
    }
    let mut out: Vec<OsString> = args[..=sub].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[sub + 1..]);
    Ok(out)
}

fn report_error(kind: &str, message: &str, code: i32) {
    let v = json!({ "error": { "kind": kind, "message": message, "exit_code": code } });
    eprintln!("{v}");
}

fn threads_from_env(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| std::env::var("HEISENVAR_THREADS").ok()?.trim().parse().ok())
        .filter(|&n| n > 0)
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(Failure::Invalid(m, k)) => {
            report_error(k, &m, EXIT_INVALID);
            return EXIT_INVALID;
        }
        Err(Failure::NotConverged(m)) => {
            report_error("not_converged", &m, EXIT_NOT_CONVERGED);
            return EXIT_NOT_CONVERGED;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            report_error("usage", e.to_string().trim(), EXIT_INVALID);
            return EXIT_INVALID;
        }
    };
    if let Some(n) = threads_from_env(cli.threads) {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (name, config) = match &cli.command {
        Command::Extremal(a) => ("extremal", serde_json::to_value(a)),
        Command::Energy(a) => ("energy", serde_json::to_value(a)),
        Command::Solve(a) => ("solve", serde_json::to_value(a)),
        Command::Sweep(a) => ("sweep", serde_json::to_value(a)),
        Command::Concentrate(a) => ("concentrate", serde_json::to_value(a)),
        Command::Synth(a) => ("synth", serde_json::to_value(a)),
        Command::Decompose(a) => ("decompose", serde_json::to_value(a)),
        Command::Pscheck(a) => ("pscheck", serde_json::to_value(a)),
    };
    let outcome = config
        .map_err(Error::from)
        .and_then(|c| Sink::new(&cli.out, name, c))
        .map_err(Failure::from)
        .and_then(|sink| match &cli.command {
            Command::Extremal(a) => cmd_extremal(a, &sink),
            Command::Energy(a) => cmd_energy(a, &sink),
            Command::Solve(a) => cmd_solve(a, &sink),
            Command::Sweep(a) => cmd_sweep(a, &sink),
            Command::Concentrate(a) => cmd_concentrate(a, &sink),
            Command::Synth(a) => cmd_synth(a, &sink),
            Command::Decompose(a) => cmd_decompose(a, &sink),
            Command::Pscheck(a) => cmd_pscheck(a, &sink),
        });
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Invalid(m, k)) => {
            report_error(k, &m, EXIT_INVALID);
            EXIT_INVALID
        }
        Err(Failure::NotConverged(m)) => {
            report_error("not_converged", &m, EXIT_NOT_CONVERGED);
            EXIT_NOT_CONVERGED
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<OsString> {
        s.split_whitespace().map(OsString::from).collect()
    }

    #[test]
    fn lists_parse() {
        assert_eq!(parse_vec3("1,-2,0.5").unwrap(), [1.0, -2.0, 0.5]);
        assert!(parse_vec3("1,2").is_err());
        assert!(parse_vec5("a,1,2,3,4").is_err());
    }

    #[test]
    fn config_keys_become_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(
            &p,
            r#"{"eps": [1.0, 0.5], "rho": 0.6, "cold": true, "save_fields": false}"#,
        )
        .unwrap();
        let a = argv(&format!("heisenvar --config {} sweep --rho 0.7", p.display()));
        let out: Vec<String> = expand_config(a)
            .unwrap()
            .into_iter()
            .map(|s| s.into_string().unwrap())
            .collect();
        let joined = out.join(" ");
        assert!(joined.contains("sweep --cold --eps 1.0,0.5 --rho 0.7"), "{joined}");
        let cli = Cli::try_parse_from(out).unwrap();
        let Command::Sweep(s) = cli.command else { panic!() };
        assert_eq!(s.eps, vec![1.0, 0.5]);
        assert_eq!(s.domain.rho, 0.7);
        assert!(s.cold && !s.save_fields);
    }

    #[test]
    fn repeated_config_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(
            &p,
            r#"{"kind": "ps", "bubble": [[0.2, 2, 0, 0, 0], [0.1, 2, 0.5, 0, -0.1]], "cutoff_rho": 0.2}"#,
        )
        .unwrap();
        let a = expand_config(argv(&format!("heisenvar synth --config {}", p.display()))).unwrap();
        let cli = Cli::try_parse_from(a).unwrap();
        let Command::Synth(s) = cli.command else { panic!() };
        assert_eq!(s.bubble.len(), 2);
        assert_eq!(s.bubble[1], [0.1, 2.0, 0.5, 0.0, -0.1]);
    }

    #[test]
    fn validation_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let code = run(argv(&format!(
            "heisenvar --out {} sweep --eps 1.0 --bogus",
            out.display()
        )));
        assert_eq!(code, EXIT_INVALID);
        assert!(!out.exists());
        let code = run(argv(&format!("heisenvar --out {} solve --eps 9", out.display())));
        assert_eq!(code, EXIT_INVALID);
    }

    #[test]
    fn solve_cap_exits_three_with_partial_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let code = run(argv(&format!(
            "heisenvar --out {} solve --domain box --rho 1 --res 9 --eps 0.5 --fp-max-iter 1",
            out.display()
        )));
        assert_eq!(code, EXIT_NOT_CONVERGED);
        assert!(out.join("maximizer.hsf").exists() && out.join("failure.json").exists());
    }
}
