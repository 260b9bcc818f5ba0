use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use sketchstream::apps::{self, ClusterParams, Schedule, SummaryResult};
use sketchstream::linalg::{DenseMatrix, Power, Projector};
use sketchstream::oracle;
use sketchstream::randomness::parse_seed;
use sketchstream::rowarrival::{volume_max_row_arrival, PointSet, RowArrivalMode};
use sketchstream::samplers::{multi_sample, SampleOutcome, SamplerConfig};
use sketchstream::sketches::codec::{self, Sketch};
use sketchstream::sketches::{AmsM, CountSketchM, EstimatorM, LinearSketch};
use sketchstream::stream::{parse_projector, parse_stream, Stream};
use sketchstream::{suites, Error};

const EXIT_USAGE: u8 = 1;
const EXIT_SAMPLER_FAIL: u8 = 2;
const EXIT_CRITERION_FAIL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "sketchstream", version, about = "One-pass turnstile matrix sketching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// Decimal or 0x-prefixed hex.
    #[arg(long, default_value = "1", value_parser = seed_arg)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw one L_{p,2} sample from a stream.
    Sample {
        stream: PathBuf,
        #[arg(long, default_value_t = 2)]
        p: u32,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long)]
        projector: Option<PathBuf>,
        #[arg(long)]
        buckets: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run an application on a stream.
    Run {
        app: App,
        stream: PathBuf,
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Number of flats for `cluster`.
        #[arg(long, default_value_t = 2)]
        s: usize,
        #[arg(long, default_value_t = 2)]
        p: u32,
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long, default_value_t = apps::DEFAULT_SHRINK)]
        shrink: f64,
        /// Trade-off parameter of the Gaussian embedding (`volmax-ra`).
        #[arg(long, default_value_t = 2.0)]
        c: f64,
        /// `plain` or `bicriteria` for `subspace`; `coreset`, `exp_d` or
        /// `jl_then_exp_d` for `volmax-ra`.
        #[arg(long)]
        mode: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run an acceptance criterion by name, or `all`.
    Accept {
        suite: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value = "0x5EED", value_parser = seed_arg)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build, merge and inspect serialized sketches.
    #[command(subcommand)]
    Sketch(SketchCommand),
}

#[derive(Subcommand, Debug)]
enum SketchCommand {
    Build {
        stream: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
        /// CountSketch bucket count.
        #[arg(long, default_value_t = 64)]
        buckets: usize,
        /// CountSketch row count.
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value = "1", value_parser = seed_arg)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    Merge {
        first: PathBuf,
        second: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Info {
        file: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum App {
    Rss,
    Subspace,
    Cluster,
    Volmax,
    VolmaxRa,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Ams,
    Countsketch,
    Estimator,
}

fn seed_arg(s: &str) -> Result<u64, String> {
    parse_seed(s).map_err(|e| e.to_string())
}

fn power(p: u32) -> anyhow::Result<Power> {
    Ok(Power::from_int(p)?)
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_stream(path: &Path) -> anyhow::Result<Stream> {
    parse_stream(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn emit(out: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn fmt_row(r: &[f64]) -> String {
    r.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ")
}

fn cmd_sample(
    stream: &Path,
    p: u32,
    eps: f64,
    projector: Option<&Path>,
    buckets: Option<usize>,
    reps: Option<usize>,
    common: &Common,
) -> anyhow::Result<u8> {
    let s = load_stream(stream)?;
    let proj = match projector {
        Some(f) => parse_projector(&read(f)?).with_context(|| format!("parsing {}", f.display()))?,
        None => Projector::Identity,
    };
    let mut config = SamplerConfig::new(power(p)?, eps);
    config.buckets = buckets;
    config.reps = reps;
    let outcome = multi_sample(common.seed, &s, &proj, &config)?;
    let mut text = format!("seed {:#x}\np {p}\neps {eps}\n", common.seed);
    let code = match outcome {
        SampleOutcome::Fail => {
            text.push_str("outcome fail\n");
            EXIT_SAMPLER_FAIL
        }
        SampleOutcome::Sample { index, row, scale } => {
            writeln!(text, "outcome sample\nindex {index}\nscale {scale:e}\nrow {}", fmt_row(&row))?;
            0
        }
    };
    emit(&common.out, &text)?;
    Ok(code)
}

fn ratio_line(cost: f64, baseline: f64) -> String {
    if baseline == 0.0 && cost.abs() <= f64::MIN_POSITIVE {
        "ratio 0 / 0\n".into()
    } else if baseline == 0.0 {
        "ratio inf\n".into()
    } else {
        format!("ratio {:e}\n", cost / baseline)
    }
}

fn baseline(app: App, a: &DenseMatrix, k: usize, s: usize, p: Power) -> Result<(f64, &'static str), Error> {
    match app {
        App::Rss => {
            let e = oracle::best_rank_k_error(a, k, Power::Two).value;
            Ok((e * e, "svd"))
        }
        App::Subspace => {
            let e = oracle::best_rank_k_error(a, k, p);
            let tag = if e.reference_only { "svd_reference_not_optimum" } else { "svd" };
            Ok((p.raise(e.value), tag))
        }
        App::Cluster => Ok((oracle::best_flats_through_rows(a, s, k, p)?.cost, "flats_through_rows")),
        App::Volmax | App::VolmaxRa => Ok((oracle::exact_volume_max(a, k)?.volume, "enumeration")),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    app: App,
    stream: &Path,
    k: usize,
    s: usize,
    p: u32,
    eps: f64,
    alpha: f64,
    shrink: f64,
    c: f64,
    mode: Option<&str>,
    common: &Common,
) -> anyhow::Result<u8> {
    let st = load_stream(stream)?;
    let pw = power(p)?;
    let seed = common.seed;
    let result: SummaryResult = match app {
        App::Rss => apps::row_subset_select(&st, k, eps, seed)?,
        App::Subspace => match mode.unwrap_or("plain") {
            "plain" => apps::subspace_approx(&st, k, pw, eps, seed)?,
            "bicriteria" => {
                let sched = Schedule::default_for(k, pw, eps, st.d, shrink);
                apps::subspace_approx_bicriteria(&st, pw, eps, sched, seed)?
            }
            m => bail!(Error::InvalidParameter(format!("unknown subspace mode {m}; use plain or bicriteria"))),
        },
        App::Cluster => {
            let mut params = ClusterParams::new(k, s, pw, eps);
            params.shrink = shrink;
            apps::projective_cluster_reduce(&st, &params, seed)?
        }
        App::Volmax => apps::volume_max_turnstile(&st, k, alpha, seed)?,
        App::VolmaxRa => {
            let m = match mode.unwrap_or("coreset") {
                "coreset" => RowArrivalMode::coreset(),
                "exp_d" => RowArrivalMode::exp_d(),
                "jl_then_exp_d" => RowArrivalMode::jl_then_exp_d(c, seed),
                m => bail!(Error::InvalidParameter(format!(
                    "unknown row-arrival mode {m}; use coreset, exp_d or jl_then_exp_d"
                ))),
            };
            volume_max_row_arrival(&PointSet::from_matrix(&st.to_dense()?), k, m)?
        }
    };
    let name = app.to_possible_value().expect("named").get_name().to_string();
    let mut text = format!("app {name}\nseed {seed:#x}\n");
    text.push_str(&result.report());
    let a = st.to_dense()?;
    match baseline(app, &a, k, s, pw) {
        Ok((b, tag)) => {
            writeln!(text, "baseline {b:e} {tag}")?;
            let (num, den) = match app {
                App::Volmax | App::VolmaxRa => (b, result.cost),
                _ => (result.cost, b),
            };
            text.push_str(&ratio_line(num, den));
        }
        Err(e) => writeln!(text, "baseline unavailable: {e}")?,
    }
    emit(&common.out, &text)?;
    Ok(0)
}

fn cmd_accept(suite: &str, trials: Option<usize>, seed: u64, out: &Option<PathBuf>) -> anyhow::Result<u8> {
    let names: Vec<&str> = if suite == "all" {
        suites::suite_names()
    } else if suites::criterion(suite).is_some() {
        vec![suite]
    } else {
        bail!(Error::InvalidParameter(format!(
            "unknown suite {suite}; known: all, {}",
            suites::suite_names().join(", ")
        )));
    };
    let mut text = String::new();
    let mut all = true;
    for n in names {
        let r = suites::run(n, trials, seed)?;
        all &= r.passed();
        writeln!(text, "{}", r.line())?;
        if out.is_none() {
            print!("{}", r.line() + "\n");
        }
    }
    if let Some(p) = out {
        std::fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(if all { 0 } else { EXIT_CRITERION_FAIL })
}

fn cmd_sketch(cmd: &SketchCommand) -> anyhow::Result<u8> {
    match cmd {
        SketchCommand::Build {
            stream,
            kind,
            eps,
            buckets,
            reps,
            seed,
            out,
        } => {
            let s = load_stream(stream)?;
            let sk: Sketch = match kind {
                Kind::Ams => {
                    let mut a = AmsM::new(s.n, s.d, *eps, *seed)?;
                    a.ingest(&s.updates)?;
                    a.into()
                }
                Kind::Countsketch => {
                    let mut c = CountSketchM::new(s.n, s.d, *reps, *buckets, *seed)?;
                    c.ingest(&s.updates)?;
                    c.into()
                }
                Kind::Estimator => {
                    let mut e = EstimatorM::new(s.n, s.d, *seed)?;
                    e.ingest(&s.updates)?;
                    e.into()
                }
            };
            std::fs::write(out, codec::encode(&sk)).with_context(|| format!("writing {}", out.display()))?;
        }
        SketchCommand::Merge { first, second, out } => {
            let a = std::fs::read(first).with_context(|| format!("reading {}", first.display()))?;
            let b = std::fs::read(second).with_context(|| format!("reading {}", second.display()))?;
            let merged = codec::merge_encoded(&a, &b)?;
            std::fs::write(out, merged).with_context(|| format!("writing {}", out.display()))?;
        }
        SketchCommand::Info { file } => {
            let bytes = std::fs::read(file).with_context(|| format!("reading {}", file.display()))?;
            let sk = codec::decode(&bytes)?;
            let (n, d, seed) = match &sk {
                Sketch::Ams(a) => (a.n(), a.d(), a.seed()),
                Sketch::CountSketch(c) => (c.n(), c.d(), c.seed()),
                Sketch::Estimator(e) => (e.n(), e.d(), e.seed()),
            };
            println!("kind {}\nn {n}\nd {d}\nseed {seed:#x}\nbytes {}", sk.kind_name(), bytes.len());
        }
    }
    Ok(0)
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    match &cli.command {
        Command::Sample {
            stream,
            p,
            eps,
            projector,
            buckets,
            reps,
            common,
        } => cmd_sample(stream, *p, *eps, projector.as_deref(), *buckets, *reps, common),
        Command::Run {
            app,
            stream,
            k,
            s,
            p,
            eps,
            alpha,
            shrink,
            c,
            mode,
            common,
        } => cmd_run(*app, stream, *k, *s, *p, *eps, *alpha, *shrink, *c, mode.as_deref(), common),
        Command::Accept {
            suite,
            trials,
            seed,
            out,
        } => cmd_accept(suite, *trials, *seed, out),
        Command::Sketch(cmd) => cmd_sketch(cmd),
    }
}

fn cap_threads() {
    if let Some(n) = std::env::var("SKETCHSTREAM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    cap_threads();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
