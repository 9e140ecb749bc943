use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use petal_cli::config::{ExperimentConfig, Method};
use petal_cli::error::{CliError, Stage, StageContext};
use petal_cli::pipeline::{
    ablate, assemble_report, gen_data, invert_all, linearize, run_na, train_models, Inits, Models,
    Problem, RunPaths, Solver, TrainingSummary,
};
use petal_cli::report::{emit_report, RunReport};
use petal_core::inversion::InitKind;
use petal_core::ocean_sim::Split;
use petal_core::surrogate::{load_model, ModelVariant, SavedModel};

#[derive(Parser)]
#[command(
    name = "petal",
    version,
    about = "Synthetic ocean tomography with PETAL surrogates"
)]
struct Cli {
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the rayon pool.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Avg,
    Tik,
    Lfm,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainTarget {
    Petal,
    Mlp,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Every stage, then the report.
    Run,
    /// Sample the synthetic ocean and its arrival times.
    GenData,
    /// Expand one reference per series.
    Linearize,
    /// Fit the learned surrogates.
    Train {
        #[arg(long, value_enum, default_value = "all")]
        model: TrainTarget,
    },
    /// Invert observations; without `--model`, every configured method and initialization.
    Invert {
        /// Checkpoint directory of a trained PETAL or MLP.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "avg")]
        init: InitArg,
    },
    /// Ablation variants from the average initialization.
    Ablate,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn histories(paths: &RunPaths) -> TrainingSummary {
    let mut summary = TrainingSummary::default();
    for m in [Method::Petal, Method::Mlp] {
        if let Ok(h) = petal_core::io::read_json(&paths.model(m).join("history.json")) {
            summary.histories.insert(m.name().into(), h);
        }
    }
    summary
}

fn invert_single(
    cfg: &ExperimentConfig,
    model: &Path,
    data: &Path,
    split: Split,
    init: InitKind,
    out: &Path,
) -> Result<(), CliError> {
    let refs = data.parent().unwrap_or(Path::new(".")).join("refs");
    let problem = Problem::load(cfg, data, &refs, split)?;
    let (models, solver) =
        match load_model::<f64>(model).map_err(|e| CliError::from_core(Stage::Invert, e))? {
            SavedModel::Petal(p, _) => (
                Models {
                    petal: Some(p),
                    mlp: None,
                },
                Solver::Variant(ModelVariant::PETAL),
            ),
            SavedModel::Mlp(m, _) => (
                Models {
                    petal: None,
                    mlp: Some(m),
                },
                Solver::Mlp,
            ),
        };
    let mut init_cfg = cfg.clone();
    init_cfg.inversion.methods = match init {
        InitKind::Average => Vec::new(),
        InitKind::Tik => vec![Method::Tik],
        InitKind::Lfm => vec![Method::Lfm],
    };
    init_cfg.inversion.inits = vec![init];
    let inits = Inits::compute(&init_cfg, &problem, &models)?;
    let x0 = inits.matrix(&problem, init)?;
    let result = run_na(cfg, &problem, &models, solver, init, &x0)?;
    result.write(out)?;
    eprintln!(
        "[invert] {} / {}: mean RMSE {:.4} m/s over {} samples",
        result.label,
        init.name(),
        result.mean_rmse(),
        result.rmse.len()
    );
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .stage(Stage::Config)?;
    }
    let cfg = load_config(cli)?;
    let paths = RunPaths::new(&cli.out);
    std::fs::create_dir_all(&cli.out).stage(Stage::Config)?;
    match &cli.command {
        Command::Run => {
            let report = petal_cli::run_pipeline(&cfg, &cli.out)?;
            for r in report.table1.iter().chain(&report.table2) {
                eprintln!(
                    "[report] {:<12} {:<4} {:.4} m/s",
                    r.method, r.init, r.mean_rmse_mps
                );
            }
        }
        Command::GenData => {
            cfg.save(&paths.config())?;
            let ds = gen_data(&cfg, &paths)?;
            eprintln!(
                "[gen-data] {} series written to {}",
                ds.series.len(),
                paths.data().display()
            );
        }
        Command::Linearize => {
            let refs = linearize(&cfg, &paths)?;
            eprintln!(
                "[linearize] {} references written to {}",
                refs.len(),
                paths.refs().display()
            );
        }
        Command::Train { model } => {
            let which = match model {
                TrainTarget::Petal => vec![Method::Petal],
                TrainTarget::Mlp => vec![Method::Mlp],
                TrainTarget::All => vec![Method::Mlp, Method::Petal],
            };
            let summary = train_models(&cfg, &paths, &which)?;
            for (name, h) in &summary.histories {
                eprintln!(
                    "[train] {name}: best validation loss {:.3e} at epoch {}",
                    h.best_val_loss, h.best_epoch
                );
            }
        }
        Command::Invert {
            model,
            data,
            split,
            init,
        } => {
            let split = match split {
                SplitArg::Val => Split::Val,
                SplitArg::Test => Split::Test,
            };
            let init = match init {
                InitArg::Avg => InitKind::Average,
                InitArg::Tik => InitKind::Tik,
                InitArg::Lfm => InitKind::Lfm,
            };
            let data = data.clone().unwrap_or_else(|| paths.data());
            match model {
                Some(model) => invert_single(&cfg, model, &data, split, init, &cli.out)?,
                None => {
                    let problem = Problem::load(&cfg, &data, &paths.refs(), split)?;
                    let models = Models::load(&paths, &cfg.inversion.methods, false)?;
                    let inits = Inits::compute(&cfg, &problem, &models)?;
                    let runs = invert_all(&cfg, &problem, &models, &inits)?;
                    let report = assemble_report(
                        &cfg,
                        &paths,
                        inits.tik.as_ref(),
                        &runs,
                        &[],
                        histories(&paths),
                    )?;
                    emit_report(&report, &cli.out)?;
                }
            }
        }
        Command::Ablate => {
            let problem = Problem::load(&cfg, &paths.data(), &paths.refs(), Split::Test)?;
            let models = Models::load(&paths, &[], true)?;
            let mut base = cfg.clone();
            base.inversion.methods = Vec::new();
            let inits = Inits::compute(&base, &problem, &models)?;
            let runs = ablate(&cfg, &problem, &models, &inits)?;
            let mut report = assemble_report(&base, &paths, None, &[], &runs, histories(&paths))?;
            // keep the tables of an earlier `invert` in the same directory
            if let Ok(previous) = RunReport::load(&cli.out) {
                let baseline = previous
                    .table2
                    .iter()
                    .filter(|r| r.method == "PETAL")
                    .cloned();
                report.table2 = baseline.chain(report.table2).collect();
                report.table1 = previous.table1;
                report.n_test = report.n_test.max(previous.n_test);
                let mut wall = previous.wall_time_s;
                wall.append(&mut report.wall_time_s);
                report.wall_time_s = wall;
            }
            emit_report(&report, &cli.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("petal: {e}");
            ExitCode::FAILURE
        }
    }
}
