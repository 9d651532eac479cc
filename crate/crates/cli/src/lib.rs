//! Argument handling and report emission for the `limulrich` binary.
//!
//! [`run`] never panics on bad input: it writes the report to `out`,
//! diagnostics to `err`, and returns the process exit code.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use limulrich_core::algebra::{GradedAlgebra, LinearFormSet};
use limulrich_core::modules::{self, koszul_report_forms, prop24_check, KoszulReport, Prop24Report, SlicedModule};
use limulrich_core::parse::{parse_extension_polynomial, RingSpecFile};
use limulrich_core::segre::{lc_dim, lc_slice_total, segre_forms, w_dim, WDescriptor};
use limulrich_core::ulrich::{
    class_base, lech_demo, residue_profile, residue_profile_any, ring_multiplicity, ConvergenceRow, LechDemoReport,
    Pipeline, ResidueProfile, DEFAULT_SLICES, DEFAULT_SLICE_GUARD,
};
use limulrich_core::{Error, Result};

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "LIMULRICH_THREADS";

/// Column order of the convergence CSV.
pub const CSV_HEADER: [&str; 9] =
    ["e", "q", "nu", "mult", "chi1", "ratio_mult_nu", "ratio_chi1_nu", "predicted_mult", "slice_dim_q1"];

#[derive(Parser, Debug)]
#[command(
    name = "limulrich",
    version,
    about = "Weakly lim Ulrich sequences over standard graded rings in characteristic p"
)]
pub struct Cli {
    /// Worker threads; overrides LIMULRICH_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Hilbert function of a ring file.
    Hilbert(HilbertArgs),
    /// dim (W_q^n)_t.
    Wdim(WdimArgs),
    /// dim H^j_m(W_q^n)_t.
    Lcdim(LcdimArgs),
    /// Sum of dim H^j_m(W_q^n)_t over t = -r mod q.
    Lcslice(LcsliceArgs),
    /// Realize U_e densely and report its Koszul homology.
    BuildUe(UeArgs),
    /// Convergence table over a range of e.
    Converge(ConvergeArgs),
    /// Off-degree mass of W on one degree class.
    Residue(ResidueArgs),
    /// Compare e(R) and e(R[u]/(g)).
    Lech(LechArgs),
    /// Check the Koszul/annihilator identities on a ring.
    Prop24(Prop24Args),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
pub struct RingArgs {
    /// Ring description file.
    #[arg(long)]
    pub ring: PathBuf,
    /// Krull dimension; defaults to the file's `dim=`.
    #[arg(long)]
    pub d: Option<usize>,
    /// Initial degree window; grown automatically when too small.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct HilbertArgs {
    #[arg(long)]
    pub ring: PathBuf,
    #[arg(long)]
    pub t_max: usize,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct WdimArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub q: u64,
    #[arg(long, allow_hyphen_values = true)]
    pub t: i64,
}

#[derive(Args, Debug)]
pub struct LcdimArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub q: u64,
    #[arg(long)]
    pub j: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub t: i64,
}

#[derive(Args, Debug)]
pub struct LcsliceArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub q: u64,
    #[arg(long)]
    pub j: usize,
    #[arg(long, default_value_t = 1)]
    pub r: u64,
}

/// Options shared by the commands that build `U_e`.
#[derive(Args, Debug)]
pub struct UlrichOptions {
    /// Slice count J.
    #[arg(long = "slices", short = 'J', default_value_t = DEFAULT_SLICES)]
    pub slices: usize,
    /// Degree class -r mod q.
    #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
    pub r: i64,
    /// Permit r <= 0, which the construction is known not to support.
    #[arg(long)]
    pub allow_bad_r: bool,
    /// Largest slice of R ⊗ W the dense evaluator may build.
    #[arg(long, default_value_t = DEFAULT_SLICE_GUARD)]
    pub max_slice_dim: usize,
}

#[derive(Args, Debug)]
pub struct UeArgs {
    #[command(flatten)]
    pub ring: RingArgs,
    #[arg(long)]
    pub e: u32,
    #[command(flatten)]
    pub opts: UlrichOptions,
}

#[derive(Args, Debug)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub ring: RingArgs,
    #[arg(long, default_value_t = 1)]
    pub e_min: u32,
    #[arg(long)]
    pub e_max: u32,
    #[command(flatten)]
    pub opts: UlrichOptions,
    /// Always realize U_e densely.
    #[arg(long)]
    pub dense: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct ResidueArgs {
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub p: u64,
    #[arg(long, default_value_t = 1)]
    pub e_min: u32,
    #[arg(long)]
    pub e_max: u32,
    #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
    pub r: i64,
    #[arg(long)]
    pub allow_bad_r: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct LechArgs {
    #[command(flatten)]
    pub ring: RingArgs,
    /// Polynomial in x0.. and u, monic in u.
    #[arg(long, allow_hyphen_values = true)]
    pub g: String,
}

#[derive(Args, Debug)]
pub struct Prop24Args {
    #[command(flatten)]
    pub ring: RingArgs,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let target: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(target, "{text}");
            return code;
        }
    };
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(e) => return report_error(err, &e),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(pool) => pool,
        Err(e) => return report_error(err, &Error::Input(format!("thread pool: {e}"))),
    };
    // reports are buffered so the work can run inside the pool
    let (mut buf_out, mut buf_err) = (Vec::new(), Vec::new());
    let code = pool.install(|| match dispatch(&cli.command, &mut buf_out, &mut buf_err) {
        Ok(code) => code,
        Err(e) => report_error(&mut buf_err, &e),
    });
    let _ = out.write_all(&buf_out);
    let _ = err.write_all(&buf_err);
    code
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(t) = flag {
        return Ok(Some(t.max(1)));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(|t| Some(t.max(1)))
            .map_err(|_| Error::Input(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        _ => Ok(None),
    }
}

fn report_error(err: &mut dyn Write, e: &Error) -> i32 {
    let _ = writeln!(err, "limulrich: {e}");
    if let Error::Uncertified { partial, .. } = e {
        let _ = writeln!(err, "partial Koszul lengths (lower bounds): {:?}", partial.lengths);
    }
    e.exit_code()
}

fn io(e: std::io::Error) -> Error {
    Error::Input(format!("write failed: {e}"))
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Input(e.to_string()))?;
    writeln!(out, "{text}").map_err(io)
}

fn emit_csv(out: &mut dyn Write, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Input(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

fn load_spec(path: &Path) -> Result<RingSpecFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    RingSpecFile::parse(&text)
}

/// The ring with its dimension and a starting window.
fn load_ring(args: &RingArgs) -> Result<(RingSpecFile, GradedAlgebra, usize)> {
    let spec = load_spec(&args.ring)?;
    let d = args
        .d
        .or(spec.dim)
        .ok_or_else(|| Error::Input("dimension unknown: pass --d or put dim= in the ring file".into()))?;
    let gens = spec.polynomials()?;
    let top = gens.iter().filter_map(|g| g.degree()).max().unwrap_or(1) as usize;
    let window = args.window.unwrap_or(top + d + 2);
    let alg = GradedAlgebra::build(spec.field()?, spec.vars, gens, window)?;
    Ok((spec, alg, d))
}

fn check_r(r: i64, allow_bad_r: bool) -> Result<()> {
    if r < 1 && !allow_bad_r {
        return Err(Error::Input(format!("r = {r} is not positive; pass --allow-bad-r to run it anyway")));
    }
    Ok(())
}

fn pipeline(ring: &RingArgs, opts: &UlrichOptions) -> Result<Pipeline> {
    check_r(opts.r, opts.allow_bad_r)?;
    let (_, alg, d) = load_ring(ring)?;
    let mut pipe = Pipeline::new(&alg, d, ring.seed)?;
    pipe.slices = opts.slices;
    pipe.r = opts.r;
    pipe.slice_guard = opts.max_slice_dim;
    Ok(pipe)
}

#[derive(Serialize)]
struct HilbertReport {
    p: u64,
    vars: usize,
    values: Vec<usize>,
}

#[derive(Serialize)]
struct UeReport {
    e: u32,
    q: u64,
    r: i64,
    s: i64,
    slice_degrees: Vec<i64>,
    slice_dims: Vec<usize>,
    nu: u64,
    koszul: KoszulReport,
}

#[derive(Serialize)]
struct RowError {
    e: u32,
    message: String,
}

#[derive(Serialize)]
struct ConvergeReport {
    p: u64,
    d: usize,
    s: i64,
    seed: u64,
    slices: usize,
    r: i64,
    free_over_a: bool,
    forms: LinearFormSet,
    w_forms: LinearFormSet,
    rows: Vec<ConvergenceRow>,
    errors: Vec<RowError>,
}

#[derive(Serialize)]
struct ResidueReport {
    seed: u64,
    w_forms: LinearFormSet,
    rows: Vec<ResidueProfile>,
}

#[derive(Serialize)]
struct Prop24Output {
    d: usize,
    seed: u64,
    window: usize,
    forms: LinearFormSet,
    report: Prop24Report,
    all_hold: bool,
}

fn dispatch(cmd: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Hilbert(a) => {
            let spec = load_spec(&a.ring)?;
            let alg = GradedAlgebra::build(spec.field()?, spec.vars, spec.polynomials()?, a.t_max.max(2))?;
            let values: Vec<usize> = (0..=a.t_max).map(|t| alg.dim(t)).collect();
            match a.format {
                Format::Json => emit_json(out, &HilbertReport { p: spec.p, vars: spec.vars, values })?,
                Format::Csv => {
                    let rows: Vec<Vec<String>> =
                        values.iter().enumerate().map(|(t, v)| vec![t.to_string(), v.to_string()]).collect();
                    emit_csv(out, &["t", "dim"], &rows)?;
                }
            }
            Ok(0)
        }
        Command::Wdim(a) => {
            WDescriptor::new(a.n, a.q)?;
            writeln!(out, "{}", w_dim(a.n, a.q, a.t)).map_err(io)?;
            Ok(0)
        }
        Command::Lcdim(a) => {
            WDescriptor::new(a.n, a.q)?;
            writeln!(out, "{}", lc_dim(a.n, a.q, a.j, a.t)?).map_err(io)?;
            Ok(0)
        }
        Command::Lcslice(a) => {
            WDescriptor::new(a.n, a.q)?;
            writeln!(out, "{}", lc_slice_total(a.n, a.q, a.j, a.r)?).map_err(io)?;
            Ok(0)
        }
        Command::BuildUe(a) => {
            let pipe = pipeline(&a.ring, &a.opts)?;
            let u = pipe.build_ue(a.e)?;
            let q = u64::pow(pipe.ring().field().p(), a.e);
            let base = class_base(pipe.r, q) as i64;
            let koszul = koszul_report_forms(&u, &pipe.forms().forms)?;
            let nu = modules::nu(&u)?;
            let report = UeReport {
                e: a.e,
                q,
                r: pipe.r,
                s: pipe.s(),
                slice_degrees: (0..u.len() as i64).map(|j| base + j * q as i64).collect(),
                slice_dims: u.dims().to_vec(),
                nu,
                koszul,
            };
            emit_json(out, &report)?;
            Ok(0)
        }
        Command::Converge(a) => converge(a, out, err),
        Command::Residue(a) => {
            check_r(a.r, a.allow_bad_r)?;
            if a.e_min == 0 || a.e_max < a.e_min {
                return Err(Error::Input(format!("bad e range {}..={}", a.e_min, a.e_max)));
            }
            let field = limulrich_core::linalg::PrimeField::new(a.p)?;
            if a.d < 2 {
                return Err(Error::Input(format!("W needs d >= 2, got {}", a.d)));
            }
            let w_forms = segre_forms(field, a.d - 1, a.seed)?;
            let rows = (a.e_min..=a.e_max)
                .map(|e| {
                    if a.r >= 1 {
                        residue_profile(field, a.d, e, a.r, &w_forms)
                    } else {
                        residue_profile_any(field, a.d, e, a.r, &w_forms)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            match a.format {
                Format::Json => emit_json(out, &ResidueReport { seed: a.seed, w_forms, rows })?,
                Format::Csv => {
                    let table: Vec<Vec<String>> = rows
                        .iter()
                        .map(|p| {
                            vec![
                                p.e.to_string(),
                                p.q.to_string(),
                                p.length.to_string(),
                                p.degree_dim.to_string(),
                                p.residue.to_string(),
                                p.normalized().to_string(),
                            ]
                        })
                        .collect();
                    emit_csv(out, &["e", "q", "length", "degree_dim", "residue", "residue_over_q_pow"], &table)?;
                }
            }
            Ok(0)
        }
        Command::Lech(a) => {
            let (spec, alg, d) = load_ring(&a.ring)?;
            let g = parse_extension_polynomial(&a.g, spec.vars, alg.field())?;
            let report: LechDemoReport = lech_demo(&alg, d, &g, a.ring.seed)?;
            emit_json(out, &report)?;
            if !report.holds {
                let _ = writeln!(err, "limulrich: theorem violated: e(R) = {} > e(S) = {}", report.e_r, report.e_s);
                return Ok(3);
            }
            Ok(0)
        }
        Command::Prop24(a) => {
            let (_, alg, d) = load_ring(&a.ring)?;
            let mult = ring_multiplicity(&alg, d, a.ring.seed)?;
            let window = mult.window + 2;
            let alg = alg.rebuild(window)?;
            let m = SlicedModule::from_algebra(&alg, window)?;
            let forms = &mult.forms.forms;
            let y = &forms[d - 1];
            // (x⁻, y + x_1) generates the same ideal as (x⁻, y)
            let z: Vec<u64> = if d >= 2 {
                y.iter().zip(&forms[0]).map(|(&a, &b)| alg.field().add(a, b)).collect()
            } else {
                y.iter().map(|&a| alg.field().add(a, a)).collect()
            };
            let report = prop24_check(&m, &forms[..d - 1], y, &z)?;
            let all_hold = report.all_hold();
            emit_json(
                out,
                &Prop24Output { d, seed: a.ring.seed, window, forms: mult.forms.clone(), report, all_hold },
            )?;
            Ok(if all_hold { 0 } else { 3 })
        }
    }
}

fn converge(a: &ConvergeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    if a.e_min == 0 || a.e_max < a.e_min {
        return Err(Error::Input(format!("bad e range {}..={}", a.e_min, a.e_max)));
    }
    let mut pipe = pipeline(&a.ring, &a.opts)?;
    pipe.force_dense = a.dense;
    let entries = pipe.convergence_table(a.e_min..=a.e_max);
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut code = 0;
    for entry in entries {
        match entry.row {
            Ok(row) => rows.push(row),
            Err(e) => {
                let _ = writeln!(err, "limulrich: e = {}: {e}", entry.e);
                code = code.max(e.exit_code());
                errors.push(RowError { e: entry.e, message: e.to_string() });
            }
        }
    }
    match a.format {
        Format::Json => emit_json(
            out,
            &ConvergeReport {
                p: pipe.ring().field().p(),
                d: pipe.d(),
                s: pipe.s(),
                seed: a.ring.seed,
                slices: pipe.slices,
                r: pipe.r,
                free_over_a: pipe.is_free(),
                forms: pipe.forms().clone(),
                w_forms: pipe.w_forms().clone(),
                rows,
                errors,
            },
        )?,
        Format::Csv => {
            let table: Vec<Vec<String>> = rows.iter().map(csv_row).collect();
            emit_csv(out, &CSV_HEADER, &table)?;
        }
    }
    Ok(code)
}

/// One convergence row in [`CSV_HEADER`] order.
pub fn csv_row(row: &ConvergenceRow) -> Vec<String> {
    vec![
        row.e.to_string(),
        row.q.to_string(),
        row.nu.to_string(),
        row.mult.to_string(),
        row.chi1.to_string(),
        row.ratio_mult_nu.to_string(),
        row.ratio_chi1_nu.to_string(),
        row.predicted_mult.to_string(),
        row.slice_dim_q1.to_string(),
    ]
}
