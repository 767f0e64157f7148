//! Command-line front end. [`run`] is the whole program; the binary only
//! forwards `std::env::args` and the standard streams.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::codec::{
    build_k_user_codec, build_side_info_codec, build_two_user_codec, run_k_user_experiment,
    run_side_info_experiment, run_two_user_experiment, SimOptions, SimReport, DEFAULT_CHUNK,
    SIM_CSV_HEADER,
};
use crate::error::Error;
use crate::gauss::{function_variance, sigma_theta, PartitionPlan, SourceModel};
use crate::lattice::Lattice;
use crate::nested::{construction_a, NestedPair};
use crate::regions::{
    bt_solution, k_user_rates, lattice_two_user_min_sum, with_noisy_function_side_info,
};
use crate::sweep::{run_sweep, write_csv, GridSpec, Reduce, SweepSpec, CSV_HEADER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const AFTER_HELP: &str = "\
Exit codes: 0 success, 1 I/O error, 2 usage or validation error.
LATFUN_THREADS bounds the number of worker threads.

Sweep CSV (schema=1): a `# schema=1` comment line, then the header
  rho,c,D,lattice_sum_bits,bt_sum_bits,gap_bits,regime
with numbers at 6 significant digits. regime is interior, q2_infinite,
q1_infinite or zero_rate, suffixed `;bt_tight` when c < 0.

Simulation CSV rows (appended with --csv) use the header
  experiment,trials,n,seed,margin,target_distortion,empirical_distortion,
  distortion_std_error,conditional_distortion,conditional_std_error,
  overload_rate,dither_moment_check,rates
with rates separated by `;`. JSON output keeps full double precision.";

#[derive(Debug, Parser)]
#[command(name = "latfun", version, about = "Lattice coding of linear functions of Gaussian sources", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rates and regions for one operating point.
    Region(RegionArgs),
    /// Sum-rate comparison over a parameter grid, as CSV.
    Sweep(SweepArgs),
    /// Monte Carlo run of an encoder/decoder pipeline.
    Simulate(SimulateArgs),
    /// Lattice inspection: moments, cosets, Construction A.
    Lattice(LatticeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegionScheme {
    Lattice,
    Bt,
    Kuser,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Correlation of the unit-variance pair.
    #[arg(long)]
    rho: Option<f64>,
    /// Coefficient c in Z = X1 - c X2, or a comma-separated coefficient
    /// vector for a model given by --model.
    #[arg(long, allow_hyphen_values = true)]
    c: Option<String>,
    /// JSON source model {K, cov, coeffs}; overrides --rho/--c.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RegionArgs {
    #[arg(long, value_enum)]
    scheme: RegionScheme,
    #[command(flatten)]
    model: ModelArgs,
    /// Target distortion.
    #[arg(long)]
    d: Option<f64>,
    /// JSON partition plan {partition, order, q} (1-based).
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Named setup: fig3, fig4 or fig5.
    #[arg(long)]
    preset: Option<String>,
    /// JSON sweep spec; alternative to --preset and the grid flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Grid `min:max:count[:log]` or a single value.
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    c: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    d: Option<String>,
    /// Read the D grid as fractions of sigma_Z^2.
    #[arg(long)]
    d_relative: bool,
    /// Keep only the largest-gap row for each (rho, c).
    #[arg(long)]
    max_gap: bool,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    d: Option<f64>,
    /// Fine-lattice second moment of encoder 1; defaults to the equal-rate
    /// split.
    #[arg(long)]
    q1: Option<f64>,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, default_value_t = DEFAULT_CHUNK)]
    chunk: u64,
    /// Reuse one dither per encoder for all trials.
    #[arg(long)]
    fixed_dither: bool,
    /// Snap the fine lattices so each divides the coarse one.
    #[arg(long)]
    commensurate: bool,
    /// Sequential scheme with this JSON partition plan.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Decoder side information Y = Z + W with this noise variance.
    #[arg(long)]
    side_info: Option<f64>,
    /// Append a CSV row to this file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LatticeKind {
    Zn,
    A2,
    File,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LatticeOp {
    Moment,
    Nsm,
    Cosets,
    ConstructionA,
}

#[derive(Debug, Args)]
struct LatticeArgs {
    #[arg(long, value_enum, default_value = "zn")]
    lattice: LatticeKind,
    #[arg(long, value_enum)]
    op: LatticeOp,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// JSON lattice {dim, gen, moment_cache} for --lattice file.
    #[arg(long)]
    file: Option<PathBuf>,
    /// Integer scale of the coarse lattice for --op cosets.
    #[arg(long, default_value_t = 2)]
    scale: i64,
    #[arg(long)]
    p: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn usage<T>(msg: impl Into<String>) -> std::result::Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> std::result::Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, v: &Value) -> CmdResult {
    let text = serde_json::to_string_pretty(v).expect("json values serialize");
    writeln!(out, "{text}").map_err(|e| Failure::Io(e.to_string()))
}

fn parse_scalar(s: &str, name: &str) -> std::result::Result<f64, Failure> {
    s.trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("--{name}: cannot parse '{s}' as a number")))
}

fn parse_vector(s: &str, name: &str) -> std::result::Result<Vec<f64>, Failure> {
    s.split(',').map(|t| parse_scalar(t, name)).collect()
}

fn load_model(args: &ModelArgs) -> std::result::Result<SourceModel, Failure> {
    if let Some(path) = &args.model {
        let mut m: SourceModel = read_json(path)?;
        if let Some(c) = &args.c {
            let coeffs = parse_vector(c, "c")?;
            m = SourceModel::new(m.cov().clone(), coeffs)?;
        }
        return Ok(m);
    }
    let rho = match args.rho {
        Some(r) => r,
        None => return usage("--rho is required without --model"),
    };
    let c = match &args.c {
        Some(c) => parse_scalar(c, "c")?,
        None => return usage("--c is required without --model"),
    };
    Ok(SourceModel::two_user(rho, c)?)
}

fn require_d(d: Option<f64>) -> std::result::Result<f64, Failure> {
    d.ok_or_else(|| Failure::Usage("--d is required".into()))
}

fn cmd_region(a: &RegionArgs, out: &mut dyn Write) -> CmdResult {
    let model = load_model(&a.model)?;
    let s2 = function_variance(&model);
    let v = match a.scheme {
        RegionScheme::Lattice => {
            let d = require_d(a.d)?;
            let (rho, c) = model.unit_pair()?;
            let sum = lattice_two_user_min_sum(&model, d)?;
            json!({
                "scheme": "lattice",
                "rho": rho,
                "c": c,
                "d": d,
                "sigma_z2": s2,
                "region_rhs": d / s2,
                "min_sum_rate_bits": sum,
                "r1_bits": sum / 2.0,
                "r2_bits": sum / 2.0,
            })
        }
        RegionScheme::Bt => {
            let d = require_d(a.d)?;
            let (rho, c) = model.correlated_pair()?;
            let opt = bt_solution(&model, d)?;
            let finite = |q: f64| if q.is_finite() { json!(q) } else { Value::Null };
            json!({
                "scheme": "bt",
                "rho": rho,
                "c": c,
                "d": d,
                "sigma_z2": s2,
                "sum_rate_bits": opt.sum_rate,
                "q1_star": finite(opt.q1_star),
                "q2_star": finite(opt.q2_star),
                "regime": opt.regime.as_str(),
            })
        }
        RegionScheme::Kuser => {
            let path = match &a.plan {
                Some(p) => p,
                None => return usage("--plan is required for --scheme kuser"),
            };
            let plan: PartitionPlan = read_json(path)?;
            let point = k_user_rates(&model, &plan)?;
            let theta = sigma_theta(&model, &plan)?;
            json!({
                "scheme": "kuser",
                "sigma_z2": s2,
                "rates_bits": point.rates,
                "sum_rate_bits": point.sum_rate(),
                "distortion": point.distortion,
                "sigma_theta": theta,
                "plan": plan,
            })
        }
    };
    emit(out, &v)
}

fn parse_grid(s: &str, name: &str) -> std::result::Result<GridSpec, Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [v] => Ok(GridSpec::fixed(parse_scalar(v, name)?)),
        [lo, hi, n] | [lo, hi, n, _] => {
            let count = n
                .trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("--{name}: bad count '{n}'")))?;
            let log = match parts.get(3).map(|t| t.trim()) {
                None | Some("lin") => false,
                Some("log") => true,
                Some(t) => return usage(format!("--{name}: unknown spacing '{t}'")),
            };
            Ok(GridSpec {
                min: parse_scalar(lo, name)?,
                max: parse_scalar(hi, name)?,
                count,
                log,
            })
        }
        _ => usage(format!("--{name}: expected value or min:max:count[:log]")),
    }
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> CmdResult {
    let mut spec = match (&a.preset, &a.spec) {
        (Some(_), Some(_)) => return usage("--preset and --spec are exclusive"),
        (Some(name), None) => match SweepSpec::preset(name) {
            Some(s) => s,
            None => return usage(format!("unknown preset '{name}' (expected fig3, fig4 or fig5)")),
        },
        (None, Some(path)) => read_json(path)?,
        (None, None) => {
            let grid = |v: &Option<String>, name: &str| match v {
                Some(s) => parse_grid(s, name),
                None => usage(format!("--{name} is required without --preset or --spec")),
            };
            SweepSpec {
                rho: grid(&a.rho, "rho")?,
                c: grid(&a.c, "c")?,
                d: grid(&a.d, "d")?,
                d_relative: a.d_relative,
                reduce: Reduce::None,
            }
        }
    };
    if a.max_gap {
        spec.reduce = Reduce::MaxGapOverD;
    }
    let rows = run_sweep(&spec)?;
    match &a.out {
        Some(path) => {
            let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
            write_csv(&rows, &mut f).map_err(|e| io_err(path, e))?;
            f.flush().map_err(|e| io_err(path, e))?;
            emit(out, &json!({"rows": rows.len(), "out": path.display().to_string(), "header": CSV_HEADER}))
        }
        None => write_csv(&rows, out).map_err(|e| Failure::Io(e.to_string())),
    }
}

fn append_csv(path: &Path, row: &str) -> CmdResult {
    let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    if fresh {
        writeln!(f, "# schema=1\n{SIM_CSV_HEADER}").map_err(|e| io_err(path, e))?;
    }
    writeln!(f, "{row}").map_err(|e| io_err(path, e))
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> CmdResult {
    let model = load_model(&a.model)?;
    let opts = SimOptions {
        trials: a.trials,
        seed: a.seed,
        chunk_size: a.chunk,
        fixed_dither: a.fixed_dither,
    };
    let (label, report): (&str, SimReport) = if let Some(path) = &a.plan {
        if a.side_info.is_some() {
            return usage("--plan and --side-info are exclusive");
        }
        let plan: PartitionPlan = read_json(path)?;
        let codec = build_k_user_codec(&model, &plan, a.n, a.margin, None)?;
        ("kuser", run_k_user_experiment(&codec, &opts)?)
    } else {
        let d = require_d(a.d)?;
        let side_model;
        let (m, variance, side): (&SourceModel, f64, Option<Vec<usize>>) = match a.side_info {
            Some(w) => {
                side_model = with_noisy_function_side_info(&model, w)?;
                let eta = crate::regions::innovations_variance(&side_model, &[2])?;
                (&side_model, eta, Some(vec![2]))
            }
            None => (&model, function_variance(&model), None),
        };
        if !(d > 0.0 && d < variance) {
            return usage(format!("--d {d} outside the valid interval (0, {variance})"));
        }
        let upper = d * variance / (variance - d);
        let q1 = a.q1.unwrap_or(upper / 2.0);
        if !(q1 > 0.0 && q1 < upper) {
            return usage(format!(
                "--q1 {q1} outside the valid interval (0, D sigma^2 / (sigma^2 - D)) = (0, {upper})"
            ));
        }
        match side {
            Some(side) => {
                let mut codec = build_side_info_codec(m, &side, d, q1, a.n, a.margin, None)?;
                if a.commensurate {
                    codec.inner = codec.inner.with_commensurate_nesting()?;
                }
                ("side_info", run_side_info_experiment(&codec, &opts)?)
            }
            None => {
                let mut codec = build_two_user_codec(m, d, q1, a.n, a.margin, None)?;
                if a.commensurate {
                    codec = codec.with_commensurate_nesting()?;
                }
                ("two_user", run_two_user_experiment(&codec, &opts)?)
            }
        }
    };
    if let Some(path) = &a.csv {
        append_csv(path, &report.csv_row(label))?;
    }
    let mut v = serde_json::to_value(&report).expect("report serializes");
    v["experiment"] = json!(label);
    emit(out, &v)
}

fn base_lattice(a: &LatticeArgs) -> std::result::Result<Lattice, Failure> {
    match a.lattice {
        LatticeKind::Zn => Ok(Lattice::integer(a.dim)?),
        LatticeKind::A2 => Ok(Lattice::hexagonal()),
        LatticeKind::File => match &a.file {
            Some(p) => read_json(p),
            None => usage("--file is required for --lattice file"),
        },
    }
}

fn cmd_lattice(a: &LatticeArgs, out: &mut dyn Write) -> CmdResult {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let v = match a.op {
        LatticeOp::Moment | LatticeOp::Nsm => {
            let lat = base_lattice(a)?;
            let m = lat.second_moment(a.samples, &mut rng)?;
            let (nsm, nsm_se) = lat.normalized_second_moment(a.samples, &mut rng)?;
            json!({
                "dim": lat.dim(),
                "volume": lat.volume(),
                "second_moment": m.sigma2,
                "second_moment_std_error": m.std_error,
                "nsm": nsm,
                "nsm_std_error": nsm_se,
                "exact": m.is_exact(),
                "samples": m.sample_count,
            })
        }
        LatticeOp::Cosets => {
            if a.scale < 1 {
                return usage("--scale must be a positive integer");
            }
            let fine = base_lattice(a)?;
            let coarse = fine.scaled(a.scale as f64)?;
            let pair = NestedPair::new(fine, coarse)?;
            let leaders = pair.coset_leaders()?;
            json!({
                "dim": pair.dim(),
                "index": pair.index(),
                "nesting_ratio": pair.nesting_ratio(),
                "coset_count": leaders.len(),
                "coset_leaders": leaders,
            })
        }
        LatticeOp::ConstructionA => {
            let (p, k) = match (a.p, a.k) {
                (Some(p), Some(k)) => (p, k),
                _ => return usage("--p and --k are required for construction-a"),
            };
            let coarse = match a.lattice {
                LatticeKind::File => base_lattice(a)?,
                _ => Lattice::scaled_integer(a.dim, p as f64)?,
            };
            // Redraw until the code has full rank k; the sequence is fixed by the seed.
            let mut draws = 0;
            let ca = loop {
                draws += 1;
                let ca = construction_a(&coarse, p, k, &mut rng)?;
                if ca.rank == k || draws >= 1000 {
                    break ca;
                }
            };
            json!({
                "p": p,
                "k": k,
                "dim": coarse.dim(),
                "rank": ca.rank,
                "draws": draws,
                "code": ca.code_matrix,
                "coset_count": ca.coset_count,
                "nesting_ratio": ca.nesting_ratio(),
                "nested": ca.pair.verify()?,
                "fine_generator": ca.pair.fine.rows(),
            })
        }
    };
    emit(out, &v)
}

fn thread_count() -> std::result::Result<Option<usize>, Failure> {
    match std::env::var("LATFUN_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => usage(format!("LATFUN_THREADS must be a positive integer (got '{s}')")),
        },
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CmdResult {
    match &cli.command {
        Command::Region(a) => cmd_region(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Lattice(a) => cmd_lattice(a, out),
    }
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let result = match thread_count() {
        Err(f) => Err(f),
        Ok(None) => dispatch(&cli, out),
        Ok(Some(n)) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => {
                let mut buf = Vec::new();
                let r = pool.install(|| dispatch(&cli, &mut buf));
                out.write_all(&buf)
                    .map_err(|e| Failure::Io(e.to_string()))
                    .and(r)
            }
            Err(e) => Err(Failure::Io(format!("thread pool: {e}"))),
        },
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Io(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_IO
        }
    }
}
