use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use approxtopk::bench::{
    bench_sweep, roofline_row, write_bench_csv, write_roofline_csv, BenchConfig, RooflineRow,
};
use approxtopk::calibrate::{calibrate, CalibrateConfig};
use approxtopk::core::microkernel::isa;
use approxtopk::core::recall::plan_bins;
use approxtopk::core::{DenseMatrix, Metric, SearchOutput, SearchParams};
use approxtopk::parallel::{default_workers, search_parallel_with_plan};
use approxtopk::specfile::{format_hardware, load_hardware, load_profile, BUNDLED_HARDWARE, BUNDLED_PROFILES};
use approxtopk::synth::{gen_synthetic, permutation, Distribution};
use approxtopk::truth::{compute_truth, Truth, TruthCache};
use approxtopk::vecs::{read_fvecs_with_dim, write_fvecs, write_ivecs};
use approxtopk::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Approximate top-k similarity search with binned reduction.
#[derive(Parser)]
#[command(name = "approxtopk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset as fvecs.
    Gen(GenArgs),
    /// Compute exact neighbors as ivecs.
    Truth(TruthArgs),
    /// Run an approximate search.
    Search(SearchArgs),
    /// Sweep recall targets and write a speed/recall CSV.
    Bench(BenchArgs),
    /// Tabulate roofline bounds for kernel profiles on machines.
    Roofline(RooflineArgs),
    /// Measure this host's FLOP, bandwidth and COP ceilings.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value = "gaussian")]
    distribution: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// Database fvecs file.
    #[arg(long)]
    base: PathBuf,
    /// Query fvecs file.
    #[arg(long)]
    queries: PathBuf,
    /// Row dimension, required to accept an empty query file.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value = "mips")]
    metric: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct TruthArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reuse or populate a content-addressed truth cache.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.95)]
    recall_target: f64,
    /// Reduce the bin candidates to the final top-k.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    aggregate: bool,
    /// Size the bins as if the database had this many rows.
    #[arg(long)]
    size_override: Option<usize>,
    /// Zero-pad query and database rows to this dimension.
    #[arg(long)]
    pad_dim_to: Option<usize>,
    /// Search a seeded permutation of the database; indices refer to the
    /// original rows.
    #[arg(long)]
    shuffle_db: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Queries per kernel call.
    #[arg(long)]
    batch: Option<usize>,
    /// Output ivecs of neighbor indices.
    #[arg(long)]
    out: PathBuf,
    /// Optional fvecs of the matching scores.
    #[arg(long)]
    values_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated recall targets.
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.9, 0.95, 0.99])]
    recall_targets: Vec<f64>,
    /// Truth ivecs; computed (and cached with --cache-dir) when absent.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    size_override: Option<usize>,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Seed recorded in the metadata sidecar.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output; a `.meta` file is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RooflineArgs {
    /// Hardware spec files or bundled names; all bundled machines by default.
    #[arg(long = "hardware", value_delimiter = ',')]
    hardware: Vec<String>,
    /// Profile files or bundled names; all bundled profiles by default.
    #[arg(long = "profile", value_delimiter = ',')]
    profiles: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value = "host")]
    name: String,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Hardware spec output; printed when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Truth(a) => cmd_truth(a),
        Command::Search(a) => cmd_search(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Roofline(a) => cmd_roofline(a),
        Command::Calibrate(a) => cmd_calibrate(a),
    }
}

fn parse_metric(s: &str) -> Result<Metric> {
    s.parse()
        .map_err(|_| Error::Invalid(format!("unknown metric `{s}` (expected mips, cosine or l2)")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Database, queries (None when the query file is empty), metric, workers.
struct Loaded {
    base: DenseMatrix,
    queries: Option<DenseMatrix>,
    metric: Metric,
    workers: usize,
}

fn load(d: &DataArgs) -> Result<Loaded> {
    let metric = parse_metric(&d.metric)?;
    if d.k == 0 {
        return Err(Error::Invalid("--k must be at least 1".into()));
    }
    let base = read_fvecs_with_dim(&d.base, d.dim)?.into_matrix()?;
    if d.k > base.rows() {
        return Err(Error::Invalid(format!("--k {} exceeds the {} database rows", d.k, base.rows())));
    }
    let q = read_fvecs_with_dim(&d.queries, d.dim.or(Some(base.cols())))?;
    if q.dim != base.cols() {
        return Err(Error::Invalid(format!(
            "queries have dimension {}, database {}",
            q.dim,
            base.cols()
        )));
    }
    let queries = if q.rows == 0 { None } else { Some(q.into_matrix()?) };
    Ok(Loaded {
        base,
        queries,
        metric,
        workers: d.workers.unwrap_or_else(default_workers).max(1),
    })
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    if a.n == 0 || a.dim == 0 {
        return Err(Error::Invalid("--n and --dim must be positive".into()));
    }
    let dist: Distribution = a.distribution.parse()?;
    write_fvecs(&a.out, &gen_synthetic(a.n, a.dim, dist, a.seed)?)
}

fn cmd_truth(a: TruthArgs) -> Result<()> {
    let l = load(&a.data)?;
    let k = a.data.k;
    let truth = match (&l.queries, &a.cache_dir) {
        (None, _) => Truth {
            rows: 0,
            k,
            indices: Vec::new(),
        },
        (Some(q), Some(dir)) => {
            let (t, hit) = TruthCache::new(dir)?.get_or_compute(&l.base, q, l.metric, k, l.workers)?;
            eprintln!("truth cache {}", if hit { "hit" } else { "miss" });
            t
        }
        (Some(q), None) => compute_truth(&l.base, q, l.metric, k, l.workers)?,
    };
    match &a.out {
        Some(path) => truth.save(path),
        None if a.cache_dir.is_some() => Ok(()),
        None => Err(Error::Invalid("give --out or --cache-dir".into())),
    }
}

fn cmd_search(a: SearchArgs) -> Result<()> {
    let l = load(&a.data)?;
    let k = a.data.k;
    let Some(mut queries) = l.queries else {
        write_ivecs(&a.out, k, &[])?;
        if let Some(p) = &a.values_out {
            fs::write(p, b"").map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
        }
        return Ok(());
    };
    let mut base = l.base;
    if let Some(d) = a.pad_dim_to {
        base = base.padded_to(d)?;
        queries = queries.padded_to(d)?;
    }
    let perm = if a.shuffle_db {
        let p = permutation(base.rows(), a.seed);
        base = base.permuted_rows(&p)?;
        Some(p)
    } else {
        None
    };
    let params = SearchParams {
        recall_target: a.recall_target,
        aggregate: a.aggregate,
        size_override: a.size_override,
        layout: None,
    };
    let plan = plan_bins(base.rows(), k, a.recall_target, a.size_override)?;
    eprintln!(
        "plan: L={} W={} expected recall {:.4}",
        plan.num_bins,
        plan.bin_width_exp,
        plan.expected_recall()
    );
    let (values, mut indices, cols) = if a.aggregate {
        let mut parts = Vec::new();
        let m = queries.rows();
        let step = a.batch.filter(|&b| b > 0).unwrap_or(m);
        for start in (0..m).step_by(step) {
            let rows: Vec<&[f32]> = (start..(start + step).min(m)).map(|i| queries.row(i)).collect();
            let q = DenseMatrix::from_rows(&rows)?;
            match search_parallel_with_plan(&q, &base, l.metric, k, &plan, &params, l.workers)? {
                SearchOutput::TopK(t) => parts.push(t),
                SearchOutput::Candidates(_) => unreachable!(),
            }
        }
        let t = approxtopk::core::TopKResult::concat(&parts)?;
        (t.values, t.indices, k)
    } else {
        match search_parallel_with_plan(&queries, &base, l.metric, k, &plan, &params, l.workers)? {
            SearchOutput::Candidates(c) => (c.values, c.indices, plan.num_bins),
            SearchOutput::TopK(_) => unreachable!(),
        }
    };
    if let Some(p) = &perm {
        let invalid = base.rows() as u32;
        for a in indices.iter_mut().filter(|a| **a != invalid) {
            *a = p[*a as usize] as u32;
        }
    }
    let as_i32: Vec<i32> = indices.iter().map(|&a| a as i32).collect();
    write_ivecs(&a.out, cols, &as_i32)?;
    if let Some(p) = &a.values_out {
        write_fvecs(p, &DenseMatrix::new(values.len() / cols, cols, values)?)?;
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let l = load(&a.data)?;
    let k = a.data.k;
    let queries = l
        .queries
        .ok_or_else(|| Error::Invalid("bench needs at least one query".into()))?;
    if a.recall_targets.is_empty() {
        return Err(Error::Invalid("no recall targets".into()));
    }
    let truth = match (&a.truth, &a.cache_dir) {
        (Some(p), _) => Truth::load(p)?,
        (None, Some(dir)) => TruthCache::new(dir)?.get_or_compute(&l.base, &queries, l.metric, k, l.workers)?.0,
        (None, None) => compute_truth(&l.base, &queries, l.metric, k, l.workers)?,
    };
    let cfg = BenchConfig {
        warmup: a.warmup,
        runs: a.runs,
        workers: l.workers,
        batch: a.batch,
        size_override: a.size_override,
    };
    let points = bench_sweep(&l.base, &queries, &truth, l.metric, k, &a.recall_targets, &cfg)?;
    match &a.out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            write_bench_csv(file, &points)?;
            let targets: Vec<String> = a.recall_targets.iter().map(f64::to_string).collect();
            let meta = format!(
                "seed={}\nmetric={}\nk={k}\nn={}\nd={}\nm={}\nworkers={}\nbatch={}\nwarmup={}\nruns={}\nrecall_targets={}\nisa={:?}\nbase={}\nqueries={}\n",
                a.seed,
                l.metric.name(),
                l.base.rows(),
                l.base.cols(),
                queries.rows(),
                cfg.workers,
                cfg.batch.map_or("all".to_string(), |b| b.to_string()),
                cfg.warmup,
                cfg.runs,
                targets.join(","),
                isa(),
                a.data.base.display(),
                a.data.queries.display(),
            );
            let mut meta_path = path.clone().into_os_string();
            meta_path.push(".meta");
            write_text(Path::new(&meta_path), &meta)
        }
        None => write_bench_csv(io::stdout().lock(), &points),
    }
}

fn cmd_roofline(a: RooflineArgs) -> Result<()> {
    let hardware: Vec<String> = if a.hardware.is_empty() {
        BUNDLED_HARDWARE.iter().map(|(n, _)| n.to_string()).collect()
    } else {
        a.hardware
    };
    let profiles: Vec<String> = if a.profiles.is_empty() {
        BUNDLED_PROFILES.iter().map(|(n, _)| n.to_string()).collect()
    } else {
        a.profiles
    };
    let hardware = hardware.iter().map(|h| load_hardware(h)).collect::<Result<Vec<_>>>()?;
    let profiles = profiles.iter().map(|p| load_profile(p)).collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<RooflineRow> = Vec::new();
    for p in &profiles {
        for hw in &hardware {
            rows.push(roofline_row(p, hw)?);
        }
    }
    match &a.out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            write_roofline_csv(file, &rows)
        }
        None => write_roofline_csv(io::stdout().lock(), &rows),
    }
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let cfg = CalibrateConfig {
        workers: a.workers.unwrap_or_else(default_workers).max(1),
        repeats: a.repeats,
        ..CalibrateConfig::default()
    };
    let text = format_hardware(&calibrate(&a.name, &cfg)?);
    match &a.out {
        Some(path) => write_text(path, &text),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| Error::Io {
                path: "<stdout>".into(),
                source: e,
            }),
    }
}
