use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use petal_core::inversion::{
    neural_adjoint, pca_fit, rmse_columns, tik_solve_batch, GridShape, InitKind, InversionResult,
    LfmSurrogate, NaConfig, Surrogate, VariantSurrogate,
};
use petal_core::linearize::{build_reference, load_references, RefTag, ReferenceLinearization};
use petal_core::ocean_sim::{generate_dataset, Dataset, Split};
use petal_core::surrogate::{
    default_latent_dim, embed_references, load_model, train, Ensemble, Mlp, ModelVariant,
    NormStats, Petal, SavedModel, TrainData, TrainHistory,
};
use petal_core::{io, rng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::error::{CliError, Stage, StageContext};
use crate::report::{RunReport, TableRow, Trace};

/// Directory layout of one experiment run.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn refs(&self) -> PathBuf {
        self.root.join("refs")
    }

    pub fn model(&self, method: Method) -> PathBuf {
        self.root
            .join("models")
            .join(method.name().to_ascii_lowercase())
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }
}

/// Surrogates that can be inverted by gradient descent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    Lfm,
    Mlp,
    Variant(ModelVariant),
}

impl Solver {
    pub fn label(self) -> &'static str {
        match self {
            Self::Lfm => "LFM",
            Self::Mlp => "MLP",
            Self::Variant(v) => v.name(),
        }
    }
}

pub fn slug(label: &str) -> String {
    label.to_ascii_lowercase().replace('+', "-")
}

/// Per-sample outcome of one method under one initialization.
#[derive(Clone, Debug)]
pub struct MethodResult {
    pub label: String,
    pub init: Option<InitKind>,
    pub rmse: Vec<f64>,
    pub iterations: Vec<usize>,
    pub cutoff_hit: Vec<bool>,
    pub final_misfit: Vec<f64>,
    pub trace: Vec<f64>,
    pub wall_time_s: f64,
    pub x_hat: DMatrix<f64>,
}

impl MethodResult {
    pub fn dir_name(&self) -> String {
        match self.init {
            Some(init) => format!("{}_{}", slug(&self.label), init.name()),
            None => slug(&self.label),
        }
    }

    pub fn mean_rmse(&self) -> f64 {
        mean(&self.rmse)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).stage(Stage::Invert)?;
        let mut w = csv::Writer::from_path(dir.join("results.csv")).stage(Stage::Invert)?;
        w.write_record([
            "sample_id",
            "rmse_mps",
            "iterations",
            "cutoff_hit",
            "final_misfit",
        ])
        .stage(Stage::Invert)?;
        for j in 0..self.rmse.len() {
            w.write_record([
                j.to_string(),
                format!("{:e}", self.rmse[j]),
                self.iterations[j].to_string(),
                self.cutoff_hit[j].to_string(),
                format!("{:e}", self.final_misfit[j]),
            ])
            .stage(Stage::Invert)?;
        }
        w.flush().stage(Stage::Invert)?;
        io::write_f64(&dir.join("xhat.f64"), self.x_hat.iter().copied()).stage(Stage::Invert)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Everything the inversion stages share: data, references, statistics and
/// the test observations.
pub struct Problem {
    pub dataset: Dataset<f64>,
    pub refs: Vec<ReferenceLinearization<f64>>,
    pub stats: NormStats<f64>,
    pub grid: GridShape,
    pub x_test: DMatrix<f64>,
    pub y_test: DMatrix<f64>,
    /// Series index of every test column.
    pub slice_of: Vec<usize>,
}

impl Problem {
    pub fn load(
        cfg: &ExperimentConfig,
        data: &Path,
        refs: &Path,
        split: Split,
    ) -> Result<Self, CliError> {
        let dataset =
            Dataset::<f64>::load(data).map_err(|e| CliError::from_core(Stage::Invert, e))?;
        let refs =
            load_references::<f64>(refs).map_err(|e| CliError::from_core(Stage::Invert, e))?;
        Self::new(cfg, dataset, refs, split)
    }

    /// Inversion targets are the snapshots of `split`.
    pub fn new(
        cfg: &ExperimentConfig,
        dataset: Dataset<f64>,
        refs: Vec<ReferenceLinearization<f64>>,
        split: Split,
    ) -> Result<Self, CliError> {
        if refs.len() != dataset.series.len() {
            return Err(CliError::new(
                Stage::Invert,
                format!(
                    "{} references for {} series",
                    refs.len(),
                    dataset.series.len()
                ),
            ));
        }
        let (x_train, y_train) = dataset.stacked(Split::Train);
        let stats = NormStats::compute(&x_train, &y_train)
            .map_err(|e| CliError::from_core(Stage::Invert, e))?;
        let cap = cfg.inversion.max_test_per_series.unwrap_or(usize::MAX);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut slice_of = Vec::new();
        for (s, data) in dataset.series.iter().enumerate() {
            let x = data.series.split(split);
            let y = data.split_times(split);
            for t in 0..x.ncols().min(cap) {
                xs.push(x.column(t).into_owned());
                ys.push(y.column(t).into_owned());
                slice_of.push(s);
            }
        }
        let m = dataset.n_cells();
        let n = dataset.n_obs();
        let x_test = if xs.is_empty() {
            DMatrix::zeros(m, 0)
        } else {
            DMatrix::from_columns(&xs)
        };
        let y_test = if ys.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&ys)
        };
        let grid = GridShape {
            n_range: dataset.geometry.n_range,
            n_depth: dataset.geometry.n_depth,
        };
        Ok(Self {
            dataset,
            refs,
            stats,
            grid,
            x_test,
            y_test,
            slice_of,
        })
    }

    pub fn n_test(&self) -> usize {
        self.x_test.ncols()
    }

    pub fn average_init(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.x_test.nrows(), self.n_test(), |i, _| {
            self.stats.x_mean[i]
        })
    }

    pub fn lfm_surrogate(&self) -> Result<LfmSurrogate<f64>, CliError> {
        let refs = embed_references(&self.refs, &self.stats)
            .map_err(|e| CliError::from_core(Stage::Invert, e))?;
        LfmSurrogate::new(refs, self.slice_of.clone())
            .map_err(|e| CliError::from_core(Stage::Invert, e))
    }

    fn columns_of(&self, slice: usize) -> Vec<usize> {
        (0..self.n_test())
            .filter(|&j| self.slice_of[j] == slice)
            .collect()
    }
}

pub fn gen_data(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<Dataset<f64>, CliError> {
    let ds = generate_dataset::<f64>(&cfg.geometry, &cfg.generator, cfg.seed, cfg.noise_sigma)
        .map_err(|e| CliError::from_core(Stage::GenData, e))?;
    let dir = paths.data();
    if dir.exists() {
        fs::remove_dir_all(&dir).stage(Stage::GenData)?;
    }
    ds.save(&dir)
        .map_err(|e| CliError::from_core(Stage::GenData, e))?;
    Ok(ds)
}

/// One reference per series, expanded at the configured snapshot.
pub fn linearize(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
) -> Result<Vec<ReferenceLinearization<f64>>, CliError> {
    let fail = |e| CliError::from_core(Stage::Linearize, e);
    let ds = Dataset::<f64>::load(&paths.data()).map_err(fail)?;
    let t = cfg.reference_time();
    let dir = paths.refs();
    if dir.exists() {
        fs::remove_dir_all(&dir).stage(Stage::Linearize)?;
    }
    fs::create_dir_all(&dir).stage(Stage::Linearize)?;
    let refs = ds
        .series
        .iter()
        .map(|s| {
            if t >= s.series.train_end {
                return Err(CliError::new(
                    Stage::Linearize,
                    format!("reference snapshot {t} is not a training snapshot"),
                ));
            }
            let tag = RefTag {
                slice_id: s.series.slice_id,
                time_index: t,
            };
            let r = build_reference(&s.series.snapshot(t), &ds.geometry, tag).map_err(fail)?;
            r.save(&dir).map_err(fail)?;
            Ok(r)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(refs)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub histories: BTreeMap<String, TrainHistory>,
    pub wall_time_s: BTreeMap<String, f64>,
}

struct NormalizedSplits {
    x_train: DMatrix<f64>,
    y_train: DMatrix<f64>,
    x_val: DMatrix<f64>,
    y_val: DMatrix<f64>,
}

fn normalized_splits(
    ds: &Dataset<f64>,
    stats: &NormStats<f64>,
) -> petal_core::Result<NormalizedSplits> {
    let (xt, yt) = ds.stacked(Split::Train);
    let (xv, yv) = ds.stacked(Split::Val);
    Ok(NormalizedSplits {
        x_train: stats.normalize_x(&xt)?,
        y_train: stats.normalize_y(&yt)?,
        x_val: stats.normalize_x(&xv)?,
        y_val: stats.normalize_y(&yv)?,
    })
}

/// Trains the requested learned surrogates and checkpoints them.
pub fn train_models(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
    which: &[Method],
) -> Result<TrainingSummary, CliError> {
    let fail = |e| CliError::from_core(Stage::Train, e);
    let ds = Dataset::<f64>::load(&paths.data()).map_err(fail)?;
    let (x_train, y_train) = ds.stacked(Split::Train);
    let stats = NormStats::compute(&x_train, &y_train).map_err(fail)?;
    let splits = normalized_splits(&ds, &stats).map_err(fail)?;
    let data = TrainData {
        x_train: &splits.x_train,
        y_train: &splits.y_train,
        x_val: &splits.x_val,
        y_val: &splits.y_val,
    };
    let mut summary = TrainingSummary::default();
    for &method in which {
        let start = Instant::now();
        let dir = paths.model(method);
        let history = match method {
            Method::Petal => {
                let refs = load_references::<f64>(&paths.refs()).map_err(fail)?;
                let embedded = embed_references(&refs, &stats).map_err(fail)?;
                let ensemble = Ensemble::new(&embedded).map_err(fail)?;
                let d = cfg
                    .petal
                    .latent_dim
                    .unwrap_or_else(|| default_latent_dim(ds.n_cells()));
                let model = Petal::init(ensemble, d, &mut rng::stream(cfg.seed, "petal-init"))
                    .map_err(fail)?;
                let (model, history) = train(
                    model,
                    data,
                    &cfg.petal.train,
                    &mut rng::stream(cfg.seed, "petal-train"),
                )
                .map_err(fail)?;
                model.save(&dir, &stats).map_err(fail)?;
                history
            }
            Method::Mlp => {
                let model = Mlp::init(
                    ds.n_cells(),
                    &cfg.mlp.hidden,
                    ds.n_obs(),
                    &mut rng::stream(cfg.seed, "mlp-init"),
                )
                .map_err(fail)?;
                let (model, history) = train(
                    model,
                    data,
                    &cfg.mlp.train,
                    &mut rng::stream(cfg.seed, "mlp-train"),
                )
                .map_err(fail)?;
                model.save(&dir, &stats).map_err(fail)?;
                history
            }
            other => {
                return Err(CliError::new(
                    Stage::Train,
                    format!("{} has no trainable surrogate", other.name()),
                ))
            }
        };
        io::write_json(&dir.join("history.json"), &history).map_err(fail)?;
        summary.histories.insert(method.name().into(), history);
        summary
            .wall_time_s
            .insert(method.name().into(), start.elapsed().as_secs_f64());
    }
    Ok(summary)
}

pub fn load_petal(path: &Path) -> Result<Petal<f64>, CliError> {
    match load_model::<f64>(path).map_err(|e| CliError::from_core(Stage::Invert, e))? {
        SavedModel::Petal(p, _) => Ok(p),
        SavedModel::Mlp(..) => Err(CliError::new(
            Stage::Invert,
            format!("{} holds an MLP", path.display()),
        )),
    }
}

pub fn load_mlp(path: &Path) -> Result<Mlp<f64>, CliError> {
    match load_model::<f64>(path).map_err(|e| CliError::from_core(Stage::Invert, e))? {
        SavedModel::Mlp(m, _) => Ok(m),
        SavedModel::Petal(..) => Err(CliError::new(
            Stage::Invert,
            format!("{} holds a PETAL model", path.display()),
        )),
    }
}

/// Closed-form Tikhonov estimate, one PCA basis and reference per series.
pub fn tik_estimate(cfg: &ExperimentConfig, problem: &Problem) -> Result<MethodResult, CliError> {
    let fail = |e| CliError::from_core(Stage::Invert, e);
    let start = Instant::now();
    let mut x_hat = DMatrix::zeros(problem.x_test.nrows(), problem.n_test());
    let weights: Option<DVector<f64>> = cfg
        .tik
        .weighted
        .then(|| problem.stats.y_std.map(|s| 1.0 / s));
    for (s, data) in problem.dataset.series.iter().enumerate() {
        let cols = problem.columns_of(s);
        if cols.is_empty() {
            continue;
        }
        let basis = pca_fit(&data.series.split(Split::Train), cfg.tik.components).map_err(fail)?;
        let y = problem.y_test.select_columns(&cols);
        let x = tik_solve_batch(
            &problem.refs[s],
            &basis,
            &y,
            cfg.tik.alpha,
            weights.as_ref(),
        )
        .map_err(fail)?;
        for (k, &j) in cols.iter().enumerate() {
            x_hat.set_column(j, &x.column(k));
        }
    }
    let lfm = problem.lfm_surrogate()?;
    let final_misfit = normalized_misfit(&lfm, problem, &x_hat)?;
    let b = problem.n_test();
    Ok(MethodResult {
        label: Method::Tik.name().into(),
        init: None,
        rmse: rmse_columns(&x_hat, &problem.x_test).map_err(fail)?,
        iterations: vec![0; b],
        cutoff_hit: vec![false; b],
        final_misfit,
        trace: Vec::new(),
        wall_time_s: start.elapsed().as_secs_f64(),
        x_hat,
    })
}

fn normalized_misfit(
    s: &dyn Surrogate<f64>,
    problem: &Problem,
    x_hat: &DMatrix<f64>,
) -> Result<Vec<f64>, CliError> {
    let fail = |e| CliError::from_core(Stage::Invert, e);
    let ids: Vec<usize> = (0..x_hat.ncols()).collect();
    let x = problem.stats.normalize_x(x_hat).map_err(fail)?;
    let y = problem.stats.normalize_y(&problem.y_test).map_err(fail)?;
    let r = s.predict(&x, &ids).map_err(fail)? - y;
    Ok(r.column_iter()
        .map(|c| c.norm_squared() / r.nrows().max(1) as f64)
        .collect())
}

/// Learned surrogates available to the inversion stages.
#[derive(Default)]
pub struct Models {
    pub petal: Option<Petal<f64>>,
    pub mlp: Option<Mlp<f64>>,
}

impl Models {
    pub fn load(paths: &RunPaths, methods: &[Method], need_petal: bool) -> Result<Self, CliError> {
        let petal = (need_petal || methods.contains(&Method::Petal))
            .then(|| load_petal(&paths.model(Method::Petal)))
            .transpose()?;
        let mlp = methods
            .contains(&Method::Mlp)
            .then(|| load_mlp(&paths.model(Method::Mlp)))
            .transpose()?;
        Ok(Self { petal, mlp })
    }
}

/// Neural-adjoint inversion of every test sample through one surrogate.
pub fn run_na(
    cfg: &ExperimentConfig,
    problem: &Problem,
    models: &Models,
    solver: Solver,
    init: InitKind,
    x_init: &DMatrix<f64>,
) -> Result<MethodResult, CliError> {
    let fail = |e| CliError::from_core(Stage::Invert, e);
    let lfm;
    let variant;
    let (surrogate, subspace): (&dyn Surrogate<f64>, bool) = match solver {
        Solver::Lfm => {
            lfm = problem.lfm_surrogate()?;
            (&lfm, false)
        }
        Solver::Mlp => {
            let mlp = models
                .mlp
                .as_ref()
                .ok_or_else(|| CliError::new(Stage::Invert, "MLP model not loaded"))?;
            (mlp, false)
        }
        Solver::Variant(v) => {
            let petal = models
                .petal
                .as_ref()
                .ok_or_else(|| CliError::new(Stage::Invert, "PETAL model not loaded"))?;
            variant = VariantSurrogate::new(petal, v).map_err(fail)?;
            (&variant, v.ssp_subspace)
        }
    };
    let na = NaConfig {
        optimize_in_subspace: subspace,
        init,
        ..cfg.inversion.na
    };
    let res: InversionResult<f64> = neural_adjoint(
        surrogate,
        &problem.stats,
        problem.grid,
        &problem.y_test,
        x_init,
        &na,
        &cfg.inversion.regularizer,
    )
    .map_err(fail)?;
    Ok(MethodResult {
        label: solver.label().into(),
        init: Some(init),
        rmse: rmse_columns(&res.x_hat, &problem.x_test).map_err(fail)?,
        iterations: res.iterations,
        cutoff_hit: res.cutoff_hit,
        final_misfit: res.final_misfit,
        trace: res.trace,
        wall_time_s: res.wall_time_s,
        x_hat: res.x_hat,
    })
}

/// Starting points for every configured initialization.
pub struct Inits {
    pub tik: Option<MethodResult>,
    pub lfm_avg: Option<MethodResult>,
}

impl Inits {
    pub fn compute(
        cfg: &ExperimentConfig,
        problem: &Problem,
        models: &Models,
    ) -> Result<Self, CliError> {
        let methods = &cfg.inversion.methods;
        let inits = &cfg.inversion.inits;
        let tik = (methods.contains(&Method::Tik))
            .then(|| tik_estimate(cfg, problem))
            .transpose()?;
        let want_lfm = methods.contains(&Method::Lfm)
            && (inits.contains(&InitKind::Average) || inits.contains(&InitKind::Lfm));
        let lfm_avg = want_lfm
            .then(|| {
                run_na(
                    cfg,
                    problem,
                    models,
                    Solver::Lfm,
                    InitKind::Average,
                    &problem.average_init(),
                )
            })
            .transpose()?;
        Ok(Self { tik, lfm_avg })
    }

    pub fn matrix(&self, problem: &Problem, init: InitKind) -> Result<DMatrix<f64>, CliError> {
        let missing = |what: &str| {
            CliError::new(
                Stage::Invert,
                format!("{what} initialization requested but not computed"),
            )
        };
        match init {
            InitKind::Average => Ok(problem.average_init()),
            InitKind::Tik => Ok(self
                .tik
                .as_ref()
                .ok_or_else(|| missing("tik"))?
                .x_hat
                .clone()),
            InitKind::Lfm => Ok(self
                .lfm_avg
                .as_ref()
                .ok_or_else(|| missing("lfm"))?
                .x_hat
                .clone()),
        }
    }
}

/// Runs `jobs` across the rayon pool and keeps their order.
fn run_jobs(
    cfg: &ExperimentConfig,
    problem: &Problem,
    models: &Models,
    inits: &Inits,
    jobs: &[(Solver, InitKind)],
) -> Result<Vec<MethodResult>, CliError> {
    jobs.par_iter()
        .map(|&(solver, init)| {
            let x0 = inits.matrix(problem, init)?;
            run_na(cfg, problem, models, solver, init, &x0)
        })
        .collect()
}

/// Table 1 runs: every method under every initialization.
pub fn invert_all(
    cfg: &ExperimentConfig,
    problem: &Problem,
    models: &Models,
    inits: &Inits,
) -> Result<Vec<MethodResult>, CliError> {
    let mut jobs = Vec::new();
    for &method in &cfg.inversion.methods {
        let solver = match method {
            Method::Tik => continue,
            Method::Lfm => Solver::Lfm,
            Method::Mlp => Solver::Mlp,
            Method::Petal => Solver::Variant(ModelVariant::PETAL),
        };
        for &init in &cfg.inversion.inits {
            if !(solver == Solver::Lfm && init == InitKind::Average) {
                jobs.push((solver, init));
            }
        }
    }
    let mut out = run_jobs(cfg, problem, models, inits, &jobs)?;
    if let Some(r) = &inits.lfm_avg {
        out.push(r.clone());
    }
    Ok(out)
}

/// Table 2 runs: each configured variant from the average initialization.
pub fn ablate(
    cfg: &ExperimentConfig,
    problem: &Problem,
    models: &Models,
    inits: &Inits,
) -> Result<Vec<MethodResult>, CliError> {
    let jobs: Vec<_> = cfg
        .ablation_variants()?
        .into_iter()
        .map(|v| (Solver::Variant(v), InitKind::Average))
        .collect();
    run_jobs(cfg, problem, models, inits, &jobs)
        .map_err(|e| CliError::new(Stage::Ablate, e.message))
}

fn row(result: &MethodResult, init: InitKind, paths: &RunPaths) -> TableRow {
    let n = result.rmse.len();
    let dir = paths.runs().join(result.dir_name());
    TableRow {
        method: result.label.clone(),
        init: init.name().into(),
        mean_rmse_mps: result.mean_rmse(),
        mean_final_misfit: mean(&result.final_misfit),
        cutoff_rate: if n == 0 {
            0.0
        } else {
            result.cutoff_hit.iter().filter(|&&c| c).count() as f64 / n as f64
        },
        mean_iterations: mean(
            &result
                .iterations
                .iter()
                .map(|&i| i as f64)
                .collect::<Vec<_>>(),
        ),
        n_samples: n,
        results: dir
            .strip_prefix(&paths.root)
            .unwrap_or(&dir)
            .join("results.csv")
            .display()
            .to_string(),
    }
}

fn order_key(label: &str) -> usize {
    [
        "Tik",
        "LFM",
        "MLP",
        "PETAL",
        "WAN",
        "WA-LFM+Dec",
        "WA-LFM",
        "A-LFM",
    ]
    .iter()
    .position(|l| *l == label)
    .unwrap_or(usize::MAX)
}

/// Writes per-method artifacts and assembles both tables.
pub fn assemble_report(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
    tik: Option<&MethodResult>,
    table1_runs: &[MethodResult],
    table2_runs: &[MethodResult],
    training: TrainingSummary,
) -> Result<RunReport, CliError> {
    let runs_dir = paths.runs();
    let mut written = Vec::new();
    for r in tik.into_iter().chain(table1_runs).chain(table2_runs) {
        r.write(&runs_dir.join(r.dir_name()))
            .map_err(|e| CliError::new(Stage::Report, e.message))?;
        written.push(r);
    }
    let mut table1 = Vec::new();
    for &init in &cfg.inversion.inits {
        if let Some(t) = tik {
            table1.push(row(t, init, paths));
        }
        for r in table1_runs.iter().filter(|r| r.init == Some(init)) {
            table1.push(row(r, init, paths));
        }
    }
    table1.sort_by_key(|r| {
        (
            order_key(&r.method),
            InitKind::ALL.iter().position(|i| i.name() == r.init),
        )
    });
    let mut table2 = Vec::new();
    if let Some(p) = table1_runs
        .iter()
        .find(|r| r.label == "PETAL" && r.init == Some(InitKind::Average))
    {
        table2.push(row(p, InitKind::Average, paths));
    }
    table2.extend(table2_runs.iter().map(|r| row(r, InitKind::Average, paths)));
    let traces = written
        .iter()
        .filter(|r| r.init.is_some())
        .map(|r| Trace {
            name: r.dir_name(),
            objective: r.trace.clone(),
        })
        .collect();
    let n_test = written.first().map_or(0, |r| r.rmse.len());
    Ok(RunReport {
        seed: cfg.seed,
        n_test,
        table1,
        table2,
        training,
        wall_time_s: written
            .iter()
            .map(|r| (r.dir_name(), r.wall_time_s))
            .collect(),
        threads: rayon::current_num_threads(),
        version: env!("CARGO_PKG_VERSION").into(),
        traces,
    })
}

/// Full experiment: gen-data, linearize, train, invert, ablate, report.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport, CliError> {
    cfg.validate()?;
    let paths = RunPaths::new(out);
    fs::create_dir_all(out).stage(Stage::Config)?;
    cfg.save(&paths.config())?;
    gen_data(cfg, &paths)?;
    linearize(cfg, &paths)?;
    let ablations = cfg.ablation_variants()?;
    let mut trainable: Vec<Method> = cfg
        .inversion
        .methods
        .iter()
        .copied()
        .filter(|m| matches!(m, Method::Petal | Method::Mlp))
        .collect();
    if !ablations.is_empty() && !trainable.contains(&Method::Petal) {
        trainable.push(Method::Petal);
    }
    trainable.sort();
    let training = train_models(cfg, &paths, &trainable)?;
    let problem = Problem::load(cfg, &paths.data(), &paths.refs(), Split::Test)?;
    let (t1, t2, tik) = if problem.n_test() == 0 {
        (Vec::new(), Vec::new(), None)
    } else {
        let models = Models::load(&paths, &cfg.inversion.methods, !ablations.is_empty())?;
        let inits = Inits::compute(cfg, &problem, &models)?;
        let t1 = invert_all(cfg, &problem, &models, &inits)?;
        let t2 = ablate(cfg, &problem, &models, &inits)?;
        (t1, t2, inits.tik)
    };
    let report = assemble_report(cfg, &paths, tik.as_ref(), &t1, &t2, training)?;
    crate::report::emit_report(&report, out)?;
    Ok(report)
}
