use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cpa_enum::arrangement::EnumerationError;
use cpa_enum::lp::{LpConfig, DEFAULT_EPS_CAP, DEFAULT_MAX_PIVOTS, DEFAULT_TOL_INTERIOR};
use cpa_enum::network::DEFAULT_LEAKY_ALPHA;
use cpa_enum::sampling::{self, Budget, SamplingError, DEFAULT_SAMPLING_HALF_WIDTH};
use cpa_enum::slice::{SliceError, SliceSpec, DEFAULT_EXTENT, DEFAULT_RESOLUTION};
use cpa_enum::{Activation, BudgetPolicy, EnumOptions, InputBox, Network};

const DEFAULT_BOX: f64 = 1e3;

#[derive(Parser)]
#[command(name = "cpa-enum", version, about = "Exact linear-region enumeration for piecewise-affine networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random network as JSON.
    Gen(GenArgs),
    /// Enumerate every region of a network inside a box.
    Enumerate(EnumerateArgs),
    /// Discover regions by uniform sampling.
    Sample(SampleArgs),
    /// Exact enumeration against sampling under matched budgets.
    Compare(CompareArgs),
    /// Draw the partition restricted to a 2D plane as SVG.
    Slice(SliceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Act {
    Relu,
    LeakyRelu,
    Abs,
}

impl Act {
    fn activation(self, alpha: f64) -> Activation {
        match self {
            Act::Relu => Activation::relu(),
            Act::LeakyRelu => Activation::leaky_relu(alpha),
            Act::Abs => Activation::abs(),
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Input dimension.
    #[arg(short = 'D', long = "dim")]
    dim: usize,
    /// Hidden layer widths, comma separated or repeated.
    #[arg(short = 'w', long = "widths", value_delimiter = ',', required = true)]
    widths: Vec<usize>,
    #[arg(long, value_enum, default_value = "relu")]
    act: Act,
    #[arg(long, default_value_t = DEFAULT_LEAKY_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct LpArgs {
    #[arg(long, default_value_t = DEFAULT_TOL_INTERIOR)]
    tol_interior: f64,
    #[arg(long, default_value_t = DEFAULT_EPS_CAP)]
    eps_cap: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_PIVOTS)]
    max_pivots: usize,
    /// Worker threads; defaults to CPA_ENUM_WORKERS, then to the core count.
    #[arg(long, env = "CPA_ENUM_WORKERS")]
    workers: Option<usize>,
}

impl LpArgs {
    fn options(&self) -> EnumOptions {
        let workers = self
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1);
        EnumOptions {
            lp: LpConfig {
                tol_interior: self.tol_interior,
                eps_cap: self.eps_cap,
                max_pivots: self.max_pivots,
            },
            workers,
        }
    }
}

#[derive(Args)]
struct EnumerateArgs {
    network: PathBuf,
    /// Half-width of the input box.
    #[arg(long = "box", default_value_t = DEFAULT_BOX, conflicts_with = "unbounded")]
    half_width: f64,
    /// Enumerate over all of R^D.
    #[arg(long)]
    unbounded: bool,
    #[command(flatten)]
    lp: LpArgs,
    /// Partition file; `.csv` selects CSV, anything else JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    network: PathBuf,
    #[arg(long = "box", default_value_t = DEFAULT_SAMPLING_HALF_WIDTH)]
    half_width: f64,
    /// Number of samples to draw.
    #[arg(long, conflicts_with = "seconds", required_unless_present = "seconds")]
    samples: Option<u64>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "CPA_ENUM_WORKERS")]
    workers: Option<usize>,
    /// Discovery curve CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Network to compare on; without it a grid of random networks is used.
    network: Option<PathBuf>,
    /// Grid input dimensions.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    dims: Vec<usize>,
    /// Grid hidden widths, one column each.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    widths: Vec<usize>,
    /// Hidden layers per grid network.
    #[arg(long, default_value_t = 1)]
    depth: usize,
    /// Network seeds per grid cell (seeds 0..n).
    #[arg(long, default_value_t = 1)]
    net_seeds: u64,
    #[arg(long, value_enum, default_value = "relu")]
    act: Act,
    #[arg(long, default_value_t = DEFAULT_LEAKY_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Base sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed samples per run instead of the matched wall-clock budget.
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long = "box", default_value_t = DEFAULT_SAMPLING_HALF_WIDTH)]
    half_width: f64,
    #[command(flatten)]
    lp: LpArgs,
    /// Reports as a JSON array.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Table CSV (rows D, columns width).
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct SliceArgs {
    network: PathBuf,
    /// Plane origin; defaults to 0.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    anchor: Option<Vec<f64>>,
    /// First basis vector; defaults to e1.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    u: Option<Vec<f64>>,
    /// Second basis vector; defaults to e2.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    v: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_EXTENT)]
    extent: f64,
    /// Image size in pixels.
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    #[command(flatten)]
    lp: LpArgs,
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
}

/// Exit 2 for bad input, 3 for numerical trouble.
enum Failure {
    Input(anyhow::Error),
    Numerical(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

fn classify(e: EnumerationError) -> Failure {
    match e {
        EnumerationError::Lp(cpa_enum::lp::LpError::InvalidBox(_))
        | EnumerationError::ZeroRow { .. }
        | EnumerationError::DimensionMismatch { .. }
        | EnumerationError::TooManyUnits(_) => Failure::Input(e.into()),
        EnumerationError::Lp(_) | EnumerationError::Branches(_) => Failure::Numerical(e.into()),
    }
}

fn classify_sampling(e: SamplingError) -> Failure {
    match e {
        SamplingError::Enumeration(inner) => classify(inner),
        SamplingError::PartialEnumeration(_) => Failure::Numerical(e.into()),
        other => Failure::Input(other.into()),
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn load(path: &Path) -> anyhow::Result<Network> {
    Network::load(path).with_context(|| format!("cannot load network {}", path.display()))
}

fn bounded(dim: usize, half_width: f64) -> anyhow::Result<InputBox> {
    InputBox::bounded(dim, half_width).map_err(|e| anyhow!(e))
}

fn gen(args: GenArgs) -> Result<(), Failure> {
    let net = Network::random(args.dim, &args.widths, args.act.activation(args.alpha), args.seed)?;
    net.save(&args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    Ok(())
}

fn enumerate(args: EnumerateArgs) -> Result<(), Failure> {
    let net = load(&args.network)?;
    let bx = if args.unbounded {
        InputBox::unbounded(net.input_dim())
    } else {
        bounded(net.input_dim(), args.half_width)?
    };
    let opts = args.lp.options();
    let partition = cpa_enum::enumerate_network(&net, &bx, &opts).map_err(classify)?;
    if let Some(path) = &args.out {
        let mut out = create(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            partition.write_csv(&mut out)?;
        } else {
            writeln!(out, "{}", partition.to_json())?;
        }
        out.flush()?;
    }
    let s = &partition.stats;
    println!(
        "regions={} lp_calls={} tree_nodes={} wall_time={:.6} workers={} status={}",
        s.region_count,
        s.lp_calls,
        s.tree_nodes,
        s.wall_time,
        s.worker_count,
        if partition.is_complete() { "complete" } else { "partial" }
    );
    if !partition.is_complete() {
        for f in &partition.failures {
            eprintln!("branch failed: {f}");
        }
        return Err(Failure::Numerical(anyhow!(
            "{} branch(es) failed; partition is partial",
            partition.failures.len()
        )));
    }
    Ok(())
}

fn sample(args: SampleArgs) -> Result<(), Failure> {
    let net = load(&args.network)?;
    let bx = bounded(net.input_dim(), args.half_width)?;
    let budget = match (args.samples, args.seconds) {
        (Some(n), _) => Budget::Samples(n),
        (None, Some(s)) => Budget::WallTime(
            Duration::try_from_secs_f64(s).map_err(|_| anyhow!("--seconds must be non-negative and finite"))?,
        ),
        (None, None) => unreachable!("clap requires one budget"),
    };
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let found = sampling::sample_discover(&net, &bx, budget, args.seed, workers).map_err(classify_sampling)?;
    if let Some(path) = &args.out {
        let mut out = create(path)?;
        found.curve.write_csv(&mut out)?;
        out.flush()?;
    }
    println!("samples={} regions={}", found.samples, found.patterns.len());
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), Failure> {
    let opts = args.lp.options();
    let policy = match args.samples {
        Some(n) => BudgetPolicy::Samples(n),
        None => BudgetPolicy::MatchedWallTime,
    };
    let mut jobs: Vec<(Network, Option<u64>)> = Vec::new();
    if let Some(path) = &args.network {
        jobs.push((load(path)?, None));
    } else {
        let act = args.act.activation(args.alpha);
        for &dim in &args.dims {
            for &width in &args.widths {
                for net_seed in 0..args.net_seeds {
                    let widths = vec![width; args.depth.max(1)];
                    jobs.push((Network::random(dim, &widths, act, net_seed)?, Some(net_seed)));
                }
            }
        }
    }
    let mut reports = Vec::with_capacity(jobs.len());
    for (net, net_seed) in &jobs {
        let bx = bounded(net.input_dim(), args.half_width)?;
        let mut report =
            sampling::compare(net, &bx, args.runs, args.seed, policy, &opts).map_err(classify_sampling)?;
        report.config.network_seed = *net_seed;
        eprintln!(
            "D={} widths={:?} seed={:?}: enumerated {} in {:.3}s, sampling found {:.1}±{:.1} ({:.1}%)",
            report.config.input_dim,
            report.config.widths,
            net_seed,
            report.enumeration_count,
            report.enumeration_time,
            report.sampling_mean,
            report.sampling_std,
            report.percent_found
        );
        reports.push(report);
    }
    if let Some(path) = &args.json {
        let mut out = create(path)?;
        serde_json::to_writer_pretty(&mut out, &reports)?;
        writeln!(out)?;
        out.flush()?;
    }
    if let Some(path) = &args.table {
        let mut out = create(path)?;
        sampling::write_table_csv(&reports, &mut out)?;
        out.flush()?;
    }
    sampling::write_table_csv(&reports, std::io::stdout().lock())?;
    Ok(())
}

fn slice(args: SliceArgs) -> Result<(), Failure> {
    let net = load(&args.network)?;
    let mut spec = SliceSpec::axes(net.input_dim());
    if let Some(a) = args.anchor {
        spec.anchor = a;
    }
    if let Some(u) = args.u {
        spec.basis[0] = u;
    }
    if let Some(v) = args.v {
        spec.basis[1] = v;
    }
    spec.extent = args.extent;
    spec.resolution = args.resolution;
    let sl = cpa_enum::slice(&net, &spec, &args.lp.options()).map_err(|e| match e {
        SliceError::Enumeration(inner) => classify(inner),
        other => Failure::Input(other.into()),
    })?;
    let mut out = create(&args.out)?;
    out.write_all(sl.to_svg().as_bytes())?;
    out.flush()?;
    println!("regions={} segments={}", sl.partition.len(), sl.segments.len());
    if !sl.partition.is_complete() {
        return Err(Failure::Numerical(anyhow!("slice partition is partial")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Enumerate(a) => enumerate(a),
        Command::Sample(a) => sample(a),
        Command::Compare(a) => compare(a),
        Command::Slice(a) => slice(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(3)
        }
    }
}
