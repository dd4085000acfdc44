//! Thin command-line front end over the `rbfkan` library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rbfkan::benchmarks::FunctionId;
use rbfkan::experiment::{
    cmd_eval, cmd_export_grid, cmd_loocv, cmd_matrix, cmd_train, resolve_out_dir,
    ExperimentConfig, MatrixConfig, ModelKind,
};
use rbfkan::kernels::KernelKind;

#[derive(Parser)]
#[command(
    name = "rbfkan",
    about = "Adaptive RBF-KAN experiments: LOOCV shape search, training, benchmark matrices",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flag overrides applied on top of the (optional) TOML config; flags win.
#[derive(Args, Clone)]
struct RunOverrides {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Benchmark function: f1, f2, f3, f4.
    #[arg(long)]
    function: Option<FunctionId>,
    /// Model kind: adaptive, fastkan_fixed, spline_kan, cheb_kan, mlp.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Kernel: GA, IMQ, M6, M4, M2, W6, W4, W2.
    #[arg(long)]
    kernel: Option<KernelKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total sample count (80/20 train/test split).
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Use a dataset CSV (x,y,target,split) instead of generating one.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (falls back to config, then $RBFKAN_OUT, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunOverrides {
    fn build_config(&self) -> rbfkan::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_toml_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(f) = self.function {
            cfg.function = f;
        }
        if let Some(m) = self.model {
            cfg.model = m;
        }
        if let Some(k) = self.kernel {
            cfg.kernel = k;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.samples {
            cfg.samples = n;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            cfg.train.learning_rate = lr;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Two-stage LOOCV search for the initial shape parameter.
    Loocv(RunOverrides),
    /// Full pipeline: LOOCV (for adaptive), training, surface export.
    Train(RunOverrides),
    /// Run a function x kernel (or function x model) experiment matrix.
    Matrix {
        /// Matrix config file (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated functions, e.g. f1,f2,f3,f4.
        #[arg(long, value_delimiter = ',')]
        functions: Vec<FunctionId>,
        /// Comma-separated kernels for an adaptive matrix.
        #[arg(long, value_delimiter = ',')]
        kernels: Vec<KernelKind>,
        /// Comma-separated model specs for a comparison matrix.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        epochs: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a saved model on points from a CSV.
    Eval {
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// CSV with x,y columns.
        #[arg(long)]
        points: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on a uniform grid and export the surface.
    ExportGrid {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        function: FunctionId,
        #[arg(long, default_value_t = 100)]
        resolution: usize,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run() -> rbfkan::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Loocv(overrides) => {
            let cfg = overrides.build_config()?;
            let out = resolve_out_dir(overrides.out.clone(), cfg.output_dir.as_ref());
            let result = cmd_loocv(&cfg, overrides.data.as_deref(), &out)?;
            println!(
                "loocv {} {}: h_opt = {}, err_min = {:e} ({} candidates) -> {}",
                cfg.function,
                cfg.kernel,
                result.h_opt,
                result.err_min,
                result.curve.len(),
                out.display()
            );
        }
        Command::Train(overrides) => {
            let cfg = overrides.build_config()?;
            let out = resolve_out_dir(overrides.out.clone(), cfg.output_dir.as_ref());
            let report = cmd_train(&cfg, overrides.data.as_deref(), &out)?;
            let h = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
            println!(
                "train {} {} ({}): h_init = {}, h_final = {}, test rel L2 = {:e}, {:.2}s -> {}",
                cfg.function,
                cfg.model,
                cfg.kernel,
                h(report.h_init),
                h(report.h_final),
                report.test_rel_l2,
                report.loocv_seconds + report.train_seconds,
                out.display()
            );
        }
        Command::Matrix {
            config,
            functions,
            kernels,
            models,
            seed,
            samples,
            epochs,
            out,
        } => {
            let mut cfg = match &config {
                Some(path) => MatrixConfig::from_toml_file(path)?,
                None => MatrixConfig::default(),
            };
            if !functions.is_empty() {
                cfg.functions = functions;
            }
            if !kernels.is_empty() {
                cfg.kernels = kernels;
            }
            if !models.is_empty() {
                cfg.models = models;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = samples {
                cfg.samples = n;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            let out = resolve_out_dir(out, None);
            let summary = cmd_matrix(&cfg, &out)?;
            let failed = summary
                .rows
                .iter()
                .filter(|r| r.status != "ok")
                .count();
            println!(
                "matrix: {} cells ({} failed) -> {}",
                summary.rows.len(),
                failed,
                out.display()
            );
            for row in &summary.rows {
                let err = row
                    .rel_l2
                    .map(|e| format!("{e:.3e}"))
                    .unwrap_or_else(|| row.status.clone());
                println!(
                    "  {} {:<16} {}{}",
                    row.function,
                    row.label,
                    err,
                    if row.best { "  <- best" } else { "" }
                );
            }
        }
        Command::Eval { model, points, out } => {
            let n = cmd_eval(&model, &points, &out)?;
            println!("eval: {n} predictions -> {}", out.display());
        }
        Command::ExportGrid {
            model,
            function,
            resolution,
            out,
        } => {
            let rel = cmd_export_grid(&model, function, resolution, &out)?;
            println!(
                "export-grid {function} at {resolution}x{resolution}: grid rel L2 = {rel:e} -> {}",
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
