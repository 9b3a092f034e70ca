//! Command-line front end. Every subcommand prints one JSON report (numbers
//! rounded to 12 significant digits) and maps the outcome to an exit code:
//! 0 success, 1 unsatisfied inequality, 2 parameter error, 3 solver or
//! inconclusive error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::mapping::{DilatationKind, MappingSpec, NormConvention, PlanarPoint};
use crate::modulus::{build_grid, capacity, discrete_modulus, pushforward_modulus, CurveFamily, ModulusOptions};
use crate::quadrature::{composition_norm_bound, h_norm_bound, sup_functional, EvalMode, NormOptions, SupFunctional, SupMode};
use crate::report::{float_value, to_json_string, to_json_value};
use crate::spectral::{
    convergence_table, cusp_spectral_bound, neumann_eigenvalue, poincare_bound, write_convergence_csv, PoincareKind,
    SpectralOptions,
};
use crate::suite::{load_suite, parse_suite, run_suite, spectral_config, PAPER_SUITE};
use crate::verify::{
    dual_exponents, measure_distortion_check, q_inequality_check, weighted_poincare_check, DualMode, InequalityReport,
    MeasureOptions, PoincareOptions, QCheckOptions, TestFunction, DEFAULT_SLACK,
};

#[derive(Parser, Debug)]
#[command(name = "qconf", version, about = "Distortion, modulus and eigenvalue bounds for planar Sobolev homeomorphisms")]
struct Cli {
    /// Write the report here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct Resolution {
    /// Cells per unit length; the spacing is 1/grid.
    #[arg(long, conflicts_with = "h")]
    grid: Option<u32>,
    /// Grid spacing.
    #[arg(long)]
    h: Option<f64>,
}

impl Resolution {
    fn spacing(&self, default: f64) -> Result<f64> {
        match (self.grid, self.h) {
            (Some(0), _) => Err(Error::Parameter("--grid must be positive".into())),
            (Some(n), _) => Ok(1.0 / f64::from(n)),
            (None, Some(h)) => Ok(h),
            (None, None) => Ok(default),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Image of a point.
    Evaluate {
        #[arg(long)]
        map: String,
        #[arg(long)]
        point: String,
        /// Apply the analytic inverse instead.
        #[arg(long)]
        inverse: bool,
    },
    /// Pointwise distortion value.
    Dilatation {
        #[arg(long)]
        map: String,
        #[arg(long)]
        point: String,
        /// outer, inner, qfield, pdil:<p> or hq:<q>
        #[arg(long)]
        kind: String,
        #[arg(long, default_value = "spectral")]
        norm: String,
        /// Multiplier c_n of the Q-field bound.
        #[arg(long, default_value_t = 1.0)]
        cn: f64,
    },
    /// Derivative matrix, determinant, norms and minimal stretch.
    Jacobian {
        #[arg(long)]
        map: String,
        #[arg(long)]
        point: String,
    },
    /// Composition-operator norm bound over a source domain.
    Opnorm {
        #[arg(long)]
        map: String,
        #[arg(long)]
        domain: String,
        #[arg(long)]
        p: String,
        #[arg(long)]
        q: f64,
        #[arg(long, default_value = "spectral")]
        norm: String,
        #[arg(long, default_value = "quadrature")]
        mode: String,
        #[arg(long, default_value_t = 1.0)]
        multiplicity: f64,
        #[arg(long, default_value_t = 1e-9)]
        rel_tol: f64,
    },
    /// H_q norm over a target domain.
    Hnorm {
        #[arg(long)]
        map: String,
        #[arg(long)]
        domain: String,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        #[arg(long, default_value = "spectral")]
        norm: String,
        #[arg(long, default_value_t = 1e-9)]
        rel_tol: f64,
    },
    /// Supremum functional of the derivative.
    Sup {
        #[arg(long)]
        map: String,
        #[arg(long)]
        domain: String,
        /// jac-sqrt or norm-over-jac
        #[arg(long)]
        functional: String,
        #[arg(long, default_value = "spectral")]
        norm: String,
        /// Skip closed-form shortcuts.
        #[arg(long)]
        grid_only: bool,
        #[arg(long, default_value_t = 1e-4)]
        rel_tol: f64,
    },
    /// Discrete conformal modulus of a curve family.
    Modulus {
        #[arg(long)]
        domain: String,
        #[arg(long)]
        family: String,
        /// Push the family forward under this map first.
        #[arg(long)]
        map: Option<String>,
        #[command(flatten)]
        resolution: Resolution,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Also report the discrete capacity of the condenser.
        #[arg(long)]
        capacity: bool,
        /// csv writes the density as x,y,rho rows.
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Q-homeomorphism modulus inequality.
    VerifyQ {
        #[arg(long)]
        map: String,
        #[arg(long)]
        domain: String,
        #[arg(long)]
        family: String,
        #[command(flatten)]
        resolution: Resolution,
        #[arg(long, default_value_t = DEFAULT_SLACK)]
        slack: f64,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Measure distortion on target boxes.
    VerifyMeasure {
        #[arg(long)]
        map: String,
        /// x0,x1,y0,y1; repeatable.
        #[arg(long = "box", required = true)]
        boxes: Vec<String>,
        #[arg(long, default_value_t = 1.0)]
        q: f64,
        #[command(flatten)]
        resolution: Resolution,
        #[arg(long, default_value = "spectral")]
        norm: String,
        #[arg(long, default_value_t = DEFAULT_SLACK)]
        slack: f64,
    },
    /// Weighted Poincaré inequality on the image domain.
    VerifyPoincare {
        #[arg(long)]
        map: String,
        #[arg(long, default_value = "diamond")]
        domain: String,
        #[arg(long, default_value_t = 2.0)]
        s: f64,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        /// Comma-separated test functions; all of them by default.
        #[arg(long)]
        functions: Option<String>,
        #[command(flatten)]
        resolution: Resolution,
        #[arg(long, default_value = "frobenius")]
        norm: String,
        #[arg(long, default_value_t = DEFAULT_SLACK)]
        slack: f64,
    },
    /// Dual exponents.
    Dual {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = 2)]
        n: u32,
        /// sobolev or holder
        #[arg(long, default_value = "holder")]
        mode: String,
    },
    /// Eigenvalue bounds: the cusp-domain bound, Poincaré constants, or
    /// finite-difference Neumann eigenvalues.
    Spectral {
        #[arg(long)]
        alpha: Option<f64>,
        /// Also solve the Neumann eigenproblem on the cusp domain.
        #[arg(long)]
        fd_check: bool,
        /// Neumann eigenvalue of this domain instead of the cusp bound.
        #[arg(long)]
        domain: Option<String>,
        /// Poincaré constant: disk, diamond or lip:L=<value>.
        #[arg(long)]
        poincare: Option<String>,
        /// Attach the two-grid extrapolation.
        #[arg(long)]
        richardson: bool,
        /// Comma-separated spacings for a convergence table.
        #[arg(long)]
        table: Option<String>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[command(flatten)]
        resolution: Resolution,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// JSON file with spectral.tol, spectral.h, spectral.max_iters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a verification suite.
    Suite {
        /// Suite file; the bundled suite when omitted.
        config: Option<PathBuf>,
    },
}

/// Entry point; `argv[0]` is the program name.
pub fn run(argv: Vec<String>) -> i32 {
    configure_threads();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("QCONF_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            // only the first call in a process can size the global pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn write_text(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p)?);
            f.write_all(text.as_bytes())?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
            _ => {}
        },
    }
    Ok(())
}

fn emit<T: Serialize>(report: &T, output: Option<&Path>) -> Result<()> {
    write_text(&to_json_string(report)?, output)
}

fn verdict(r: &InequalityReport) -> i32 {
    if r.inconclusive() {
        3
    } else if r.satisfied {
        0
    } else {
        1
    }
}

fn parse_p(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" | "infinity" => Ok(f64::INFINITY),
        t => t.parse().map_err(|_| Error::parse("exponent", s, "expected a number or inf")),
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let out = cli.output.as_deref();
    match &cli.command {
        Command::Evaluate { map, point, inverse } => {
            let map: MappingSpec = map.parse()?;
            let p: PlanarPoint = point.parse()?;
            let image = if *inverse { map.evaluate_inverse(p)? } else { map.evaluate(p)? };
            emit(&json!({"map": map.to_string(), "point": p, "inverse": inverse, "value": image}), out)?;
        }
        Command::Dilatation { map, point, kind, norm, cn } => {
            let map: MappingSpec = map.parse()?;
            let p: PlanarPoint = point.parse()?;
            let kind: DilatationKind = kind.parse()?;
            let conv: NormConvention = norm.parse()?;
            let value = map.dilatation_with_constant(p, kind, conv, *cn)?;
            emit(&json!({"map": map.to_string(), "point": p, "kind": kind.to_string(), "norm": conv, "value": float_value(value)}), out)?;
        }
        Command::Jacobian { map, point } => {
            let map: MappingSpec = map.parse()?;
            let p: PlanarPoint = point.parse()?;
            let j = map.jacobian(p)?;
            emit(&json!({"map": map.to_string(), "point": p, "jacobian": j}), out)?;
        }
        Command::Opnorm { map, domain, p, q, norm, mode, multiplicity, rel_tol } => {
            let mode: EvalMode = mode.parse()?;
            let opts = NormOptions { rel_tol: *rel_tol, multiplicity: *multiplicity, mode };
            let r = composition_norm_bound(&map.parse()?, &domain.parse()?, parse_p(p)?, *q, norm.parse()?, &opts)?;
            emit(&r, out)?;
            return Ok(if r.quadrature.divergent { 3 } else { 0 });
        }
        Command::Hnorm { map, domain, p, q, norm, rel_tol } => {
            let opts = NormOptions { rel_tol: *rel_tol, ..Default::default() };
            let r = h_norm_bound(&map.parse()?, &domain.parse()?, *p, *q, norm.parse()?, &opts)?;
            emit(&r, out)?;
            return Ok(if r.quadrature.divergent { 3 } else { 0 });
        }
        Command::Sup { map, domain, functional, norm, grid_only, rel_tol } => {
            let map: MappingSpec = map.parse()?;
            let domain: DomainSpec = domain.parse()?;
            let f: SupFunctional = functional.parse()?;
            let mode = if *grid_only { SupMode::Grid } else { SupMode::Auto };
            let conv: NormConvention = norm.parse()?;
            let v = sup_functional(&map, &domain, f, conv, mode, *rel_tol)?;
            emit(&json!({"map": map.to_string(), "domain": domain.to_string(), "functional": f, "norm": conv, "value": v}), out)?;
        }
        Command::Modulus { domain, family, map, resolution, tol, capacity: with_cap, format } => {
            let domain: DomainSpec = domain.parse()?;
            let family: CurveFamily = family.parse()?;
            let grid = build_grid(&domain, resolution.spacing(1.0 / 64.0)?)?;
            let opts = ModulusOptions { tol: *tol, ..Default::default() };
            let sol = match map {
                Some(m) => pushforward_modulus(&m.parse()?, &grid, &family, &opts)?,
                None => discrete_modulus(&grid, &family, 2.0, &opts)?,
            };
            if *format == Format::Csv {
                let mut buf = Vec::new();
                sol.write_density_csv(&mut buf)?;
                write_text(String::from_utf8_lossy(&buf).trim_end(), out)?;
                return Ok(0);
            }
            let mut v = to_json_value(&sol)?;
            v["family"] = json!(family.to_string());
            v["domain"] = json!(domain.to_string());
            if *with_cap {
                if map.is_some() {
                    return Err(Error::Unsupported("capacity of a pushed-forward family".into()));
                }
                v["capacity"] = to_json_value(&capacity(&grid, &family)?)?;
            }
            emit(&v, out)?;
        }
        Command::VerifyQ { map, domain, family, resolution, slack, tol } => {
            let opts = QCheckOptions {
                slack: *slack,
                modulus: ModulusOptions { tol: *tol, ..Default::default() },
                ..Default::default()
            };
            let h = resolution.spacing(1.0 / 32.0)?;
            let r = q_inequality_check(&map.parse()?, &domain.parse()?, &family.parse()?, h, &opts)?;
            emit(&r, out)?;
            return Ok(verdict(&r));
        }
        Command::VerifyMeasure { map, boxes, q, resolution, norm, slack } => {
            let boxes = boxes.iter().map(|b| b.parse()).collect::<Result<Vec<_>>>()?;
            let opts = MeasureOptions { slack: *slack, convention: norm.parse()?, ..Default::default() };
            let r = measure_distortion_check(&map.parse()?, &boxes, *q, resolution.spacing(1.0 / 128.0)?, &opts)?;
            emit(&r, out)?;
            return Ok(verdict(&r));
        }
        Command::VerifyPoincare { map, domain, s, p, functions, resolution, norm, slack } => {
            let fns: Vec<TestFunction> = match functions {
                Some(list) => list.split(',').map(str::parse).collect::<Result<_>>()?,
                None => TestFunction::ALL.to_vec(),
            };
            let opts = PoincareOptions { slack: *slack, convention: norm.parse()?, ..Default::default() };
            let h = resolution.spacing(1.0 / 64.0)?;
            let r = weighted_poincare_check(&map.parse()?, &domain.parse()?, *s, *p, &fns, h, &opts)?;
            emit(&r, out)?;
            return Ok(verdict(&r));
        }
        Command::Dual { p, q, n, mode } => {
            let mode: DualMode = mode.parse()?;
            emit(&dual_exponents(*p, *q, *n, mode)?, out)?;
        }
        Command::Spectral { alpha, fd_check, domain, poincare, richardson, table, format, resolution, tol, max_iters, config } => {
            let mut opts = SpectralOptions::default();
            if let Some(path) = config {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))?;
                let v: Value = serde_json::from_str(&text).map_err(|e| Error::parse("config", &path.display().to_string(), e.to_string()))?;
                opts = spectral_config(&v)?.apply(opts);
            }
            opts.h = resolution.spacing(opts.h)?;
            if let Some(t) = tol {
                opts.tol = *t;
            }
            if let Some(m) = max_iters {
                opts.max_iters = *m;
            }
            return spectral_command(*alpha, *fd_check, domain, poincare, *richardson, table, *format, &opts, out);
        }
        Command::Suite { config } => {
            let suite = match config {
                Some(p) => load_suite(p)?,
                None => parse_suite(PAPER_SUITE)?,
            };
            let (code, reports) = run_suite(&suite, |line| eprintln!("{line}"));
            emit(&reports, out)?;
            return Ok(code);
        }
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn spectral_command(
    alpha: Option<f64>,
    fd_check: bool,
    domain: &Option<String>,
    poincare: &Option<String>,
    richardson: bool,
    table: &Option<String>,
    format: Format,
    opts: &SpectralOptions,
    out: Option<&Path>,
) -> Result<i32> {
    if let Some(kind) = poincare {
        let kind: PoincareKind = kind.parse()?;
        emit(&json!({"poincare": kind, "value": poincare_bound(kind)?}), out)?;
        return Ok(0);
    }
    if let Some(d) = domain {
        let d: DomainSpec = d.parse()?;
        if let Some(list) = table {
            let hs = list
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| Error::parse("spacing list", list, "expected numbers")))
                .collect::<Result<Vec<_>>>()?;
            let rows = convergence_table(&d, &hs, opts)?;
            if format == Format::Csv {
                let mut buf = Vec::new();
                write_convergence_csv(&rows, &mut buf)?;
                write_text(String::from_utf8_lossy(&buf).trim_end(), out)?;
            } else {
                emit(&rows, out)?;
            }
            return Ok(0);
        }
        emit(&neumann_eigenvalue(&d, opts, richardson)?, out)?;
        return Ok(0);
    }
    let alpha = alpha.ok_or_else(|| Error::Parameter("spectral needs --alpha, --domain or --poincare".into()))?;
    let r = cusp_spectral_bound(alpha, fd_check, opts)?;
    emit(&r, out)?;
    Ok(match (fd_check, r.satisfied) {
        (false, _) => 0,
        (true, Some(true)) => 0,
        (true, Some(false)) => 1,
        (true, None) => 3,
    })
}
