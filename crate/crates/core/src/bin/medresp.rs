use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use medresp::config::RunConfig;
use medresp::pipeline;
use medresp::{Error, Result};

#[derive(Parser)]
#[command(name = "medresp", version, about = "ICN feature extraction, subspace kernels and SVM evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort under <out>/dataset
    Simulate(Common),
    /// Run constrained ICA on every subject of the dataset manifest
    Extract {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest to read instead of <out>/dataset/manifest.json
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Compute static FNC from the extracted time courses
    Fnc(Common),
    /// Write the precomputed kernel matrix for each feature set
    Kernel(Common),
    /// Beam-search forward selection over all subjects (exploratory)
    Select(Common),
    /// Repeated stratified cross-validation with permutation baseline
    Evaluate(Common),
    /// Render report.svg from the evaluation report
    Report(Common),
    /// simulate, extract, fnc, select (if searching), evaluate and report
    Run(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; unset keys take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: config output_dir, "out"]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed [default: config seed, 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads [default: available cores]
    #[arg(long)]
    threads: Option<usize>,
    /// synthetic, n53, n105 or a template JSON path [default: synthetic]
    #[arg(long)]
    template: Option<String>,
    /// Comma-separated feature sets: sm, sm+fnc [default: sm,sm+fnc]
    #[arg(long)]
    features: Option<String>,
    /// fixed:all, fixed:<i,j,...>, sfs or ssfs [default: fixed:all]
    #[arg(long)]
    selection: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = &self.template {
            cfg.template = t.clone();
        }
        if let Some(f) = &self.features {
            cfg.features = f.split(',').map(|s| s.trim().to_string()).collect();
        }
        if let Some(s) = &self.selection {
            cfg.selection.mode = s.clone();
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(Error::Config("--threads must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        }
        let out = cfg.output_dir.clone();
        Ok((cfg, out))
    }
}

fn print_reports(reports: &[medresp::eval::report::ExperimentReport]) {
    for r in reports {
        if let Some(m) = r.metric("macro_pr_auc") {
            println!(
                "{}: macro PR-AUC median {:.4} (q1 {:.4}, q3 {:.4}, n {})",
                r.label, m.median, m.q1, m.q3, m.n
            );
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(c) => {
            let (cfg, out) = c.resolve()?;
            let s = pipeline::simulate(&cfg, &out)?;
            println!(
                "{} subjects ({}), {} components over {} voxels, T={}, SNR {:.2}",
                s.n_subjects,
                s.class_set
                    .iter()
                    .zip(&s.class_counts)
                    .map(|(c, n)| format!("{c}={n}"))
                    .collect::<Vec<_>>()
                    .join(" "),
                s.n_components,
                s.n_voxels,
                s.timepoints,
                s.snr
            );
            println!("manifest: {}", out.join("dataset/manifest.json").display());
        }
        Command::Extract { common, manifest } => {
            let (cfg, out) = common.resolve()?;
            let idx = pipeline::extract(&cfg, &out, manifest.as_deref())?;
            let units: Vec<_> = idx.subjects.iter().flat_map(|s| &s.units).collect();
            let unconverged = units.iter().filter(|u| !u.converged).count();
            let mean_corr = units.iter().map(|u| u.reference_corr.abs()).sum::<f64>() / units.len().max(1) as f64;
            println!(
                "{} subjects extracted; mean |corr| to reference {:.3}; {} unconverged units",
                idx.subjects.len(),
                mean_corr,
                unconverged
            );
        }
        Command::Fnc(c) => {
            let (cfg, out) = c.resolve()?;
            println!("FNC written for {} subjects", pipeline::fnc(&cfg, &out)?);
        }
        Command::Kernel(c) => {
            let (cfg, out) = c.resolve()?;
            for p in pipeline::kernel(&cfg, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Select(c) => {
            let (cfg, out) = c.resolve()?;
            for s in pipeline::select(&cfg, &out)? {
                println!(
                    "{} {}: score {:.4} with [{}]",
                    s.features,
                    s.mode,
                    s.result.best_score,
                    s.best_components.join(", ")
                );
            }
        }
        Command::Evaluate(c) => {
            let (cfg, out) = c.resolve()?;
            let (reports, baselines) = pipeline::evaluate(&cfg, &out)?;
            print_reports(&reports);
            for b in baselines {
                println!(
                    "{} permuted: mean {:.4}, chance {:.4}, prevalence {:.4}",
                    b.label, b.stats.mean, b.stats.chance, b.stats.prevalence
                );
            }
        }
        Command::Report(c) => {
            let (_, out) = c.resolve()?;
            print_reports(&pipeline::report(&out)?);
            println!("{}", Path::new(&out).join("eval/report.svg").display());
        }
        Command::Run(c) => {
            let (cfg, out) = c.resolve()?;
            print_reports(&pipeline::run_all(&cfg, &out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
