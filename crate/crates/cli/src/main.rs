mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use sinkdem::data::{eval_metrics, read_metrics_csv, read_sdem, write_pgm, write_sdem, RasterF32, CSV_HEADER};
use sinkdem::diffnet::Tensor;
use sinkdem::experiments::{
    prepare_run_dir, run_baselines, run_denoise, run_eps_sweep, run_smoothness, run_sr_toy, ExperimentConfig,
    ExperimentKind, SrDataset,
};
use sinkdem::ot::{sinkhorn_solve, CostMatrix, DiscreteMeasure, SinkhornConfig};
use sinkdem::Error;

#[derive(Parser)]
#[command(name = "sinkdem", version, about = "Sinkhorn OT experiments for DEM super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// key=value config file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key, applied after the file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Root directory for run outputs
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Entropic OT between uniform marginals for a cost matrix in CSV
    OtSolve {
        #[arg(long, value_name = "PATH")]
        cost: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
    },
    /// MNIST denoising with one method
    Denoise(RunArgs),
    /// Denoising over every epsilon in epsilon_list
    EpsSweep(RunArgs),
    /// Denoising with every method on shared seeds
    Baselines(RunArgs),
    /// Toy super-resolution on synthetic terrain
    SrToy(RunArgs),
    /// Write the synthetic terrain training patches as rasters
    GenData(RunArgs),
    /// Smoothness estimates for the Sinkhorn loss of a linear generator
    ProbeSmoothness(RunArgs),
    /// SVG panels from metrics CSVs; several CSVs also give overlays
    Plot {
        #[arg(required = true, value_name = "CSV")]
        csv: Vec<PathBuf>,
        /// Defaults to the directory of the first CSV
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Metrics of a predicted SDEM raster against the truth on a unit range
    Eval { pred: PathBuf, truth: PathBuf },
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Numerical { .. } | Error::NonFiniteLoss { .. } => 2,
            _ => 1,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

fn runtime(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

fn thread_cap() -> Result<usize, Failure> {
    match std::env::var("SINKDEM_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(invalid(format!("SINKDEM_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn load_config(args: &RunArgs, kind: ExperimentKind) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| invalid(e.to_string()))?,
        None => ExperimentConfig::for_kind(kind),
    };
    for kv in &args.set {
        cfg.apply_override(kv)?;
    }
    if cfg.kind != kind {
        return Err(invalid(format!(
            "config kind {} does not match subcommand {}",
            cfg.kind.as_str(),
            kind.as_str()
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_cost(path: &Path) -> Result<Array2<f64>, Failure> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| invalid(format!("{} row {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    let m = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(invalid(format!("{}: cost must be a nonempty rectangular matrix", path.display())));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{}: cost entries must be finite", path.display())));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, m), rows.concat()).map_err(|e| invalid(e.to_string()))
}

fn ot_solve(cost: &Path, eps: f64, iters: usize) -> Result<(), Failure> {
    let c = read_cost(cost)?;
    let (n, m) = c.dim();
    let mu = DiscreteMeasure::uniform(Array2::zeros((n, 1)))?;
    let nu = DiscreteMeasure::uniform(Array2::zeros((m, 1)))?;
    let cfg = SinkhornConfig {
        epsilon: eps,
        max_iters: iters,
        ..SinkhornConfig::default()
    };
    let cost = CostMatrix { values: c, p: cfg.p };
    let sol = sinkhorn_solve(&mu, &nu, &cost, &cfg)?;
    println!("dual_value {:.11e}", sol.dual_value);
    println!("primal_cost {:.11e}", sol.primal_cost);
    println!("iterations_used {}", sol.iterations_used);
    println!("marginal_violation {:.11e}", sol.marginal_violation);
    Ok(())
}

fn raster(t: &Tensor<f32>, i: usize, ch: usize) -> Result<RasterF32, Failure> {
    let (_, c, h, w) = t.dims4()?;
    let start = (i * c + ch) * h * w;
    Ok(RasterF32::new(h, w, t.data()[start..start + h * w].to_vec())?)
}

fn gen_data(cfg: &ExperimentConfig, root: &Path) -> Result<(), Failure> {
    let data = SrDataset::generate(cfg)?;
    let dir = prepare_run_dir(cfg, root)?;
    let s = &data.train;
    for i in 0..s.y.batch() {
        let truth = raster(&s.y, i, 0)?;
        write_sdem(&truth, &dir.join(format!("terrain_{i}.sdem")))?;
        write_pgm(&truth, &dir.join(format!("terrain_{i}.pgm")))?;
        write_sdem(&raster(&s.x, i, 0)?, &dir.join(format!("coarse_{i}.sdem")))?;
        for ch in 0..s.z.shape()[1] {
            write_sdem(&raster(&s.z, i, ch)?, &dir.join(format!("prior{ch}_{i}.sdem")))?;
        }
    }
    println!("wrote {} patches to {}", s.y.batch(), dir.display());
    Ok(())
}

fn write_all(dir: &Path, files: &[(String, String)]) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn plot(csvs: &[PathBuf], out: Option<&Path>) -> Result<(), Failure> {
    let mut runs = Vec::new();
    for path in csvs {
        let recs = read_metrics_csv(path).map_err(|e| invalid(e.to_string()))?;
        let label = path
            .parent()
            .and_then(Path::file_name)
            .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        runs.push((label, recs));
    }
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => csvs[0].parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    let mut files = plot::run_panels(&runs[0].1);
    if runs.len() > 1 {
        files.extend(plot::overlay_panels(&runs));
    }
    write_all(&dir, &files)
}

fn eval(pred: &Path, truth: &Path) -> Result<(), Failure> {
    let p = read_sdem(pred).map_err(|e| invalid(e.to_string()))?;
    let t = read_sdem(truth).map_err(|e| invalid(e.to_string()))?;
    if (p.height, p.width) != (t.height, t.width) {
        return Err(invalid(format!(
            "raster sizes differ: {}x{} vs {}x{}",
            p.height, p.width, t.height, t.width
        )));
    }
    let shape = [1, 1, t.height, t.width];
    let pt = Tensor::<f64>::new(&shape, p.data.iter().map(|&v| v as f64).collect())?;
    let tt = Tensor::<f64>::new(&shape, t.data.iter().map(|&v| v as f64).collect())?;
    let rec = eval_metrics(&pt, &tt, 1.0)?;
    println!("{CSV_HEADER}");
    println!("{}", rec.to_csv_row());
    Ok(())
}

fn failed(what: &str, failure: Option<&String>) -> Result<(), Failure> {
    match failure {
        Some(f) => Err(runtime(format!("{what} failed: {f}"))),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    thread_cap()?;
    match cli.command {
        Command::OtSolve { cost, eps, iters } => ot_solve(&cost, eps, iters),
        Command::Denoise(a) => {
            let cfg = load_config(&a, ExperimentKind::Denoise)?;
            let out = run_denoise(&cfg, &a.out)?;
            println!("epochs_to_target {}", out.epochs_to_target.map_or("none".into(), |e| e.to_string()));
            failed(&cfg.name, out.failure.as_ref())
        }
        Command::EpsSweep(a) => {
            let cfg = load_config(&a, ExperimentKind::EpsSweep)?;
            let res = run_eps_sweep(&cfg, &a.out)?;
            for e in &res.entries {
                println!(
                    "epsilon {} epochs_to_target {}",
                    e.outcome.epsilon,
                    e.outcome.epochs_to_target.map_or("none".into(), |v| v.to_string())
                );
            }
            res.entries.iter().try_for_each(|e| failed(&format!("epsilon {}", e.outcome.epsilon), e.outcome.failure.as_ref()))
        }
        Command::Baselines(a) => {
            let cfg = load_config(&a, ExperimentKind::Baselines)?;
            let outs = run_baselines(&cfg, &a.out)?;
            for o in &outs {
                println!(
                    "{} epochs_to_target {}",
                    o.method.as_str(),
                    o.epochs_to_target.map_or("none".into(), |v| v.to_string())
                );
            }
            outs.iter().try_for_each(|o| failed(o.method.as_str(), o.failure.as_ref()))
        }
        Command::SrToy(a) => {
            let cfg = load_config(&a, ExperimentKind::SrToy)?;
            let out = run_sr_toy(&cfg, &a.out)?;
            if let (Some(r), Some(s)) = (out.test.rmse, out.test.ssim) {
                println!("test rmse {r:.6} ssim {s:.3}");
            }
            failed(&cfg.name, out.failure.as_ref())
        }
        Command::GenData(a) => {
            let cfg = load_config(&a, ExperimentKind::SrToy)?;
            gen_data(&cfg, &a.out)
        }
        Command::ProbeSmoothness(a) => {
            let cfg = load_config(&a, ExperimentKind::Smoothness)?;
            for r in run_smoothness(&cfg, &a.out)? {
                println!("epsilon {} gamma_hat {:.6e} theory_log10 {:.4}", r.epsilon, r.gamma_hat, r.theory_log10);
            }
            Ok(())
        }
        Command::Plot { csv, out } => plot(&csv, out.as_deref()),
        Command::Eval { pred, truth } => eval(&pred, &truth),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
