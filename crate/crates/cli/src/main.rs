use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ttwopt::eval::{self, MetricReport};
use ttwopt::io::{self, parse_init, parse_list, RankSpec, RunConfig};
use ttwopt::tensorize::TensorizationPlan;
use ttwopt::wopt::{self, InitScheme, Method, ObservedProblem, OptimizerConfig};
use ttwopt::{DenseTensor, RankChain, Shape};

#[derive(Parser)]
#[command(
    name = "ttwopt",
    version,
    about = "Tensor completion with tensor-train weighted optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth tensor.
    Generate(GenerateArgs),
    /// Generate a random 0/1 observation mask with an exact missing count.
    Mask(MaskArgs),
    /// Fit TT cores to the observed entries and fill in the missing ones.
    Complete(CompleteArgs),
    /// Reshape a 2^k x 2^k x C image into its (4, ..., 4, C) block tensor.
    Tensorize(ConvertArgs),
    /// Invert `tensorize`.
    Detensorize(ConvertArgs),
    /// Compare an estimate against ground truth; prints one JSON line.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on a random instance.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    dims: IntList,
    /// CP rank of the random factor model.
    #[arg(long, conflicts_with = "tt_ranks")]
    cp_rank: Option<usize>,
    /// Draw the tensor from random TT cores with this rank chain instead.
    #[arg(long)]
    tt_ranks: Option<IntList>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct MaskArgs {
    /// Fraction of entries to mark missing.
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Take the shape from this tensor file (or PPM image).
    #[arg(long, conflicts_with = "dims")]
    like: Option<PathBuf>,
    #[arg(long)]
    dims: Option<IntList>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(short = 'x', long = "data")]
    data: PathBuf,
    #[arg(short = 'w', long = "mask")]
    mask: PathBuf,
    /// Full rank chain `1,r1,...,1` or one interior rank.
    #[arg(long)]
    ranks: Option<RankSpec>,
    /// `ncg` or `gd`.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// `scaled`, `gaussian:<sigma>` or `uniform:<low>:<high>`.
    #[arg(long, value_parser = parse_init_arg)]
    init: Option<InitScheme>,
    /// key=value run configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Completed tensor: observed entries kept, missing ones from the model.
    #[arg(short, long)]
    output: PathBuf,
    /// Model reconstruction at every entry, observed ones included.
    #[arg(long)]
    reconstruction: Option<PathBuf>,
    /// Iteration trace as CSV (iter,f,gnorm,step).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    /// `.ppm` image or tensor file.
    #[arg(short, long)]
    input: PathBuf,
    /// `.ppm` image or tensor file.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Also report PSNR (whole tensor unless --psnr-missing-only).
    #[arg(long)]
    psnr: bool,
    /// PSNR over the missing entries of --mask only.
    #[arg(long, requires = "mask")]
    psnr_missing_only: bool,
    #[arg(long, default_value_t = 255.0)]
    peak: f64,
    /// Human-readable table instead of JSON.
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    dims: IntList,
    #[arg(long)]
    ranks: IntList,
    #[arg(long, default_value_t = 0.0)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
    /// Exit nonzero when the max relative error exceeds this.
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
}

/// Comma-separated positive integers such as `30,30,30`.
#[derive(Clone, Debug)]
struct IntList(Vec<usize>);

impl std::str::FromStr for IntList {
    type Err = ttwopt::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_list(s).map(IntList)
    }
}

fn parse_init_arg(s: &str) -> Result<InitScheme, String> {
    parse_init(s).map_err(|e| e.to_string())
}

/// Output files written so far; removed again unless the command succeeds.
#[derive(Default)]
struct Outputs {
    written: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    fn tensor(&mut self, path: &Path, t: &DenseTensor) -> Result<()> {
        if is_ppm(path) {
            io::write_ppm(path, t)
        } else {
            io::write_tensor(path, t)
        }
        .with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    fn text(&mut self, path: &Path, text: &str) -> Result<()> {
        io::write_atomic(path, text.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

fn is_ppm(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
}

fn load(path: &Path) -> Result<DenseTensor> {
    if is_ppm(path) {
        io::read_ppm(path)
    } else {
        io::read_tensor(path)
    }
    .with_context(|| format!("reading {}", path.display()))
}

fn generate(args: GenerateArgs) -> Result<()> {
    let x = match (args.cp_rank, &args.tt_ranks) {
        (Some(rank), None) => eval::gen_cp_problem(&args.dims.0, rank, args.seed)?,
        (None, Some(ranks)) => {
            let cfg = OptimizerConfig {
                init: InitScheme::Gaussian { sigma: 1.0 },
                seed: args.seed,
                ..Default::default()
            };
            let shape = Shape::new(args.dims.0.clone())?;
            wopt::init_cores(&shape, &RankChain::new(ranks.0.clone())?, &cfg)?.full()?
        }
        _ => bail!("exactly one of --cp-rank or --tt-ranks is required"),
    };
    let mut out = Outputs::default();
    out.tensor(&args.output, &x)?;
    out.commit();
    Ok(())
}

fn mask(args: MaskArgs) -> Result<()> {
    let dims = match (&args.like, &args.dims) {
        (Some(p), None) => load(p)?.dims().to_vec(),
        (None, Some(d)) => d.0.clone(),
        _ => bail!("exactly one of --like or --dims is required"),
    };
    let w = eval::gen_mask(&dims, args.rate, args.seed)?;
    let mut out = Outputs::default();
    out.tensor(&args.output, &w)?;
    out.commit();
    Ok(())
}

fn complete(args: CompleteArgs) -> Result<()> {
    let file_cfg = match &args.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    let run = file_cfg.merged(RunConfig {
        ranks: args.ranks.clone(),
        method: args.method,
        max_iters: args.max_iters,
        rel_tol: args.rel_tol,
        grad_tol: args.grad_tol,
        seed: args.seed,
        init: args.init,
        ..Default::default()
    });
    let config = run.optimizer_config()?;
    let x = load(&args.data)?;
    let w = load(&args.mask)?;
    let problem = ObservedProblem::new(x, w)?;
    let ranks = run
        .ranks
        .as_ref()
        .context("--ranks is required (flag or config file)")?
        .resolve(problem.shape().order())?;

    let (tt, trace) = wopt::optimize(&problem, &ranks, &config)?;
    eprintln!(
        "{} iterations, f {:.6e} -> {:.6e}, stopped on {}",
        trace.records.len(),
        trace.initial_f,
        trace.final_f(),
        trace.termination
    );

    let mut out = Outputs::default();
    out.tensor(&args.output, &wopt::complete(&problem, &tt)?)?;
    if let Some(p) = &args.reconstruction {
        out.tensor(p, &tt.full()?)?;
    }
    if let Some(p) = &args.trace {
        out.text(p, &trace.to_csv())?;
    }
    out.commit();
    Ok(())
}

fn tensorize(args: ConvertArgs) -> Result<()> {
    let img = load(&args.input)?;
    let d = img.dims();
    if d.len() != 3 {
        bail!("expected an HxWxC image, got shape {}", img.shape());
    }
    let plan = TensorizationPlan::new(d[0], d[1], d[2])?;
    let mut out = Outputs::default();
    out.tensor(&args.output, &plan.tensorize(&img)?)?;
    out.commit();
    Ok(())
}

fn detensorize(args: ConvertArgs) -> Result<()> {
    let t = load(&args.input)?;
    let plan = TensorizationPlan::from_stage2(t.dims())?;
    let mut out = Outputs::default();
    out.tensor(&args.output, &plan.detensorize(&t)?)?;
    out.commit();
    Ok(())
}

fn evaluate(args: EvalArgs) -> Result<()> {
    let truth = load(&args.truth)?;
    let est = load(&args.est)?;
    let w = args.mask.as_deref().map(load).transpose()?;
    let (n_observed, n_missing) = match &w {
        Some(w) => {
            let obs = w.data().iter().filter(|&&v| v != 0.0).count();
            (obs, w.numel() - obs)
        }
        None => (truth.numel(), 0),
    };
    let psnr = if args.psnr || args.psnr_missing_only {
        Some(match (&w, args.psnr_missing_only) {
            (Some(w), true) => eval::psnr_missing(&truth, &est, w, args.peak)?,
            _ => eval::psnr(&truth, &est, args.peak)?,
        })
    } else {
        None
    };
    let report = MetricReport {
        rse: eval::rse(&truth, &est)?,
        psnr,
        n_observed,
        n_missing,
    };
    if args.pretty {
        println!("{:<12}{:>14}", "metric", "value");
        println!("{:<12}{:>14.6e}", "rse", report.rse);
        if let Some(p) = report.psnr {
            println!("{:<12}{:>14.4}", "psnr (dB)", p);
        }
        println!("{:<12}{:>14}", "observed", report.n_observed);
        println!("{:<12}{:>14}", "missing", report.n_missing);
    } else {
        println!("{}", report_json(&report));
    }
    Ok(())
}

fn report_json(r: &MetricReport) -> serde_json::Value {
    let psnr = match r.psnr {
        None => serde_json::Value::Null,
        Some(p) if p.is_infinite() => json!("inf"),
        Some(p) => json!(p),
    };
    let mut v = json!({
        "rse": r.rse,
        "n_observed": r.n_observed,
        "n_missing": r.n_missing,
    });
    if r.psnr.is_some() {
        v["psnr"] = psnr;
    }
    v
}

fn gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let shape = Shape::new(args.dims.0.clone())?;
    let ranks = RankChain::new(args.ranks.0.clone())?;
    let cfg = OptimizerConfig {
        init: InitScheme::Gaussian { sigma: 1.0 },
        seed: args.seed,
        ..Default::default()
    };
    let tt = wopt::init_cores(&shape, &ranks, &cfg)?;
    let truth_cfg = OptimizerConfig {
        seed: args.seed.wrapping_add(1),
        ..cfg
    };
    let x = wopt::init_cores(&shape, &ranks, &truth_cfg)?.full()?;
    let w = eval::gen_mask(&args.dims.0, args.rate, args.seed.wrapping_add(2))?;
    let problem = ObservedProblem::new(x, w)?;
    let analytic = wopt::gradient(&problem, &tt)?;
    let numeric = eval::finite_diff_gradient(&problem, &tt, args.step)?;
    let err = analytic.max_rel_error(&numeric, 1e-8);
    println!("{err:e}");
    Ok(if err > args.threshold {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("TT_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("TT_THREADS={v:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    configure_threads()?;
    match cli.command {
        Command::Generate(a) => generate(a)?,
        Command::Mask(a) => mask(a)?,
        Command::Complete(a) => complete(a)?,
        Command::Tensorize(a) => tensorize(a)?,
        Command::Detensorize(a) => detensorize(a)?,
        Command::Eval(a) => evaluate(a)?,
        Command::Gradcheck(a) => return gradcheck(a),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
