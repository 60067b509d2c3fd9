//! The experiment grid: dataset forms × normalizations × random states ×
//! per-family hyperparameters, executed with per-trial derived RNG seeds
//! and deterministic report ordering.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    group_hourly, impute, join_regions, make_targets, regression_subset, split, HourlyDataset,
    RegionSet, SplitMode, SplitSpec, Task, WeatherRecord, RAIN_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::harness::config::Config;
use crate::knn::{self, Distance, KnnMode};
use crate::linear;
use crate::metrics::{self, EvalReport, Provenance, TaskEval};
use crate::neural::{self, Head};
use crate::normalize::{self, NormKind, Normalizer, Scope};
use crate::recurrent::{self, CellKind};
use crate::reservoir;
use crate::svm::{self, KernelSpec, SvmParams};

/// Split seed axis: a fixed value or a freshly drawn entropy seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SeedSpec {
    None,
    Fixed(u64),
}

impl std::fmt::Display for SeedSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SeedSpec::None => write!(f, "none"),
            SeedSpec::Fixed(s) => write!(f, "{s}"),
        }
    }
}

impl std::str::FromStr for SeedSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("none") {
            Ok(SeedSpec::None)
        } else {
            s.parse::<u64>()
                .map(SeedSpec::Fixed)
                .map_err(|_| Error::Config(format!("seed '{s}' is neither 'none' nor an integer")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Knn,
    Rcc,
    Svm,
    Svr,
    Dnn,
    Wnn,
    Dwnn,
    Linear,
    Lstm,
    BiLstm,
    Gru,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Family::Knn => "knn",
            Family::Rcc => "rcc",
            Family::Svm => "svm",
            Family::Svr => "svr",
            Family::Dnn => "dnn",
            Family::Wnn => "wnn",
            Family::Dwnn => "dwnn",
            Family::Linear => "linear",
            Family::Lstm => "lstm",
            Family::BiLstm => "bilstm",
            Family::Gru => "gru",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(Family::Knn),
            "rcc" => Ok(Family::Rcc),
            "svm" | "svc" => Ok(Family::Svm),
            "svr" => Ok(Family::Svr),
            "dnn" => Ok(Family::Dnn),
            "wnn" => Ok(Family::Wnn),
            "dwnn" => Ok(Family::Dwnn),
            "linear" => Ok(Family::Linear),
            "lstm" => Ok(Family::Lstm),
            "bilstm" => Ok(Family::BiLstm),
            "gru" => Ok(Family::Gru),
            other => Err(Error::Config(format!("unknown model family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Poly,
    Rbf,
    Sigmoid,
}

impl KernelKind {
    pub fn to_spec(self, d: usize) -> KernelSpec {
        let gamma = KernelSpec::default_gamma(d);
        match self {
            KernelKind::Linear => KernelSpec::Linear,
            KernelKind::Poly => KernelSpec::Poly {
                degree: 3,
                gamma,
                coef0: 0.0,
            },
            KernelKind::Rbf => KernelSpec::Rbf { gamma },
            KernelKind::Sigmoid => KernelSpec::Sigmoid { gamma, coef0: 0.0 },
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelKind::Linear => write!(f, "linear"),
            KernelKind::Poly => write!(f, "poly"),
            KernelKind::Rbf => write!(f, "rbf"),
            KernelKind::Sigmoid => write!(f, "sigmoid"),
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(KernelKind::Linear),
            "poly" => Ok(KernelKind::Poly),
            "rbf" => Ok(KernelKind::Rbf),
            "sigmoid" => Ok(KernelKind::Sigmoid),
            other => Err(Error::Config(format!("unknown kernel '{other}'"))),
        }
    }
}

/// One hyperparameter cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParamSpec {
    None,
    K(usize),
    Size(usize),
    Kernel(KernelKind),
    Layers(usize),
    SeqLen(usize),
}

impl std::fmt::Display for ParamSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamSpec::None => write!(f, "n/a"),
            ParamSpec::K(k) => write!(f, "k={k}"),
            ParamSpec::Size(m) => write!(f, "size={m}"),
            ParamSpec::Kernel(k) => write!(f, "kernel={k}"),
            ParamSpec::Layers(l) => write!(f, "layers={l}"),
            ParamSpec::SeqLen(l) => write!(f, "seq={l}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossMode {
    NoCross,
    AllPairs,
}

impl std::str::FromStr for CrossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "no_cross" => Ok(CrossMode::NoCross),
            "all_pairs" => Ok(CrossMode::AllPairs),
            other => Err(Error::Config(format!("unknown cross mode '{other}'"))),
        }
    }
}

/// Full grid settings, paper defaults built in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub tasks: Vec<Task>,
    pub datasets: Vec<RegionSet>,
    pub normalizations: Vec<NormKind>,
    pub scope: Scope,
    pub seeds: Vec<SeedSpec>,
    pub threshold: f64,
    pub subset_threshold: f64,
    /// Master seed mixed into every derived per-trial seed.
    pub grid_seed: u64,
    /// Model-init seed shared by all regression trials.
    pub regression_model_seed: u64,

    pub knn_k_max_classify: usize,
    pub knn_k_max_regress: usize,

    pub rcc_sizes: Vec<usize>,
    pub rcc_input_scaling: f64,
    pub rcc_spectral_radius: f64,
    pub rcc_connectivity: f64,
    pub rcc_washout: usize,
    pub rcc_ridge: f64,

    pub svm_kernels: Vec<KernelKind>,
    pub svm_c: f64,
    pub svm_tol: f64,
    pub svm_max_passes: usize,
    pub svr_epsilon: f64,

    pub nn_layers_classify: Vec<usize>,
    pub nn_layers_regress: Vec<usize>,
    pub nn_epochs: usize,
    pub nn_lr: f64,

    pub wnn_cross_mode: CrossMode,
    pub wnn_epochs: usize,
    pub wnn_lr: f64,

    pub seq_lens_classify: Vec<usize>,
    pub seq_lens_regress: Vec<usize>,
    pub rnn_epochs: usize,
    pub rnn_lr: f64,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            tasks: vec![Task::Classification, Task::Regression],
            datasets: vec![RegionSet::Single, RegionSet::Mixed],
            normalizations: vec![NormKind::None, NormKind::MinMax, NormKind::ZScore],
            scope: Scope::Train,
            seeds: vec![SeedSpec::None, SeedSpec::Fixed(0), SeedSpec::Fixed(42)],
            threshold: RAIN_THRESHOLD,
            subset_threshold: RAIN_THRESHOLD,
            grid_seed: 0,
            regression_model_seed: 46,
            knn_k_max_classify: 42,
            knn_k_max_regress: 1000,
            rcc_sizes: vec![50, 100, 200, 400, 600, 1000],
            rcc_input_scaling: reservoir::DEFAULT_INPUT_SCALING,
            rcc_spectral_radius: reservoir::DEFAULT_SPECTRAL_RADIUS,
            rcc_connectivity: reservoir::DEFAULT_CONNECTIVITY,
            rcc_washout: reservoir::DEFAULT_WASHOUT,
            rcc_ridge: reservoir::DEFAULT_RIDGE,
            svm_kernels: vec![
                KernelKind::Linear,
                KernelKind::Poly,
                KernelKind::Rbf,
                KernelKind::Sigmoid,
            ],
            svm_c: 1.0,
            svm_tol: 1e-3,
            svm_max_passes: 100,
            svr_epsilon: 0.1,
            nn_layers_classify: vec![2, 3, 4, 5],
            nn_layers_regress: vec![2, 3, 4, 5, 10, 20, 30],
            nn_epochs: neural::DEFAULT_EPOCHS,
            nn_lr: neural::DEFAULT_LR,
            wnn_cross_mode: CrossMode::NoCross,
            wnn_epochs: linear::DEFAULT_EPOCHS,
            wnn_lr: linear::DEFAULT_LR,
            seq_lens_classify: vec![3, 7],
            seq_lens_regress: vec![3, 5, 7, 9, 12],
            rnn_epochs: recurrent::DEFAULT_EPOCHS,
            rnn_lr: recurrent::DEFAULT_LR,
        }
    }
}

impl ExperimentGrid {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let base = ExperimentGrid::default();
        let tasks = cfg
            .list_or("grid", "tasks", vec!["classification".into(), "regression".into()])?
            .iter()
            .map(|s: &String| match s.as_str() {
                "classification" => Ok(Task::Classification),
                "regression" => Ok(Task::Regression),
                other => Err(Error::Config(format!("unknown task '{other}'"))),
            })
            .collect::<Result<_>>()?;
        let datasets = cfg
            .list_or("grid", "datasets", vec!["single".into(), "mixed".into()])?
            .iter()
            .map(|s: &String| match s.as_str() {
                "single" => Ok(RegionSet::Single),
                "mixed" => Ok(RegionSet::Mixed),
                other => Err(Error::Config(format!("unknown dataset form '{other}'"))),
            })
            .collect::<Result<_>>()?;
        Ok(ExperimentGrid {
            tasks,
            datasets,
            normalizations: cfg.list_or(
                "grid",
                "normalizations",
                vec![NormKind::None, NormKind::MinMax, NormKind::ZScore],
            )?,
            scope: cfg.parse_or("grid", "scope", base.scope)?,
            seeds: cfg.list_or("grid", "seeds", base.seeds)?,
            threshold: cfg.parse_or("grid", "threshold", base.threshold)?,
            subset_threshold: cfg.parse_or("grid", "subset_threshold", base.subset_threshold)?,
            grid_seed: cfg.parse_or("grid", "grid_seed", base.grid_seed)?,
            regression_model_seed: cfg.parse_or(
                "grid",
                "regression_model_seed",
                base.regression_model_seed,
            )?,
            knn_k_max_classify: cfg.parse_or("knn", "k_max_classify", base.knn_k_max_classify)?,
            knn_k_max_regress: cfg.parse_or("knn", "k_max_regress", base.knn_k_max_regress)?,
            rcc_sizes: cfg.list_or("rcc", "sizes", base.rcc_sizes)?,
            rcc_input_scaling: cfg.parse_or("rcc", "input_scaling", base.rcc_input_scaling)?,
            rcc_spectral_radius: cfg.parse_or("rcc", "spectral_radius", base.rcc_spectral_radius)?,
            rcc_connectivity: cfg.parse_or("rcc", "connectivity", base.rcc_connectivity)?,
            rcc_washout: cfg.parse_or("rcc", "washout", base.rcc_washout)?,
            rcc_ridge: cfg.parse_or("rcc", "ridge", base.rcc_ridge)?,
            svm_kernels: cfg.list_or("svm", "kernels", base.svm_kernels)?,
            svm_c: cfg.parse_or("svm", "c", base.svm_c)?,
            svm_tol: cfg.parse_or("svm", "tol", base.svm_tol)?,
            svm_max_passes: cfg.parse_or("svm", "max_passes", base.svm_max_passes)?,
            svr_epsilon: cfg.parse_or("svm", "epsilon", base.svr_epsilon)?,
            nn_layers_classify: cfg.list_or("nn", "layers_classify", base.nn_layers_classify)?,
            nn_layers_regress: cfg.list_or("nn", "layers_regress", base.nn_layers_regress)?,
            nn_epochs: cfg.parse_or("nn", "epochs", base.nn_epochs)?,
            nn_lr: cfg.parse_or("nn", "lr", base.nn_lr)?,
            wnn_cross_mode: cfg.parse_or("wnn", "crosses", base.wnn_cross_mode)?,
            wnn_epochs: cfg.parse_or("wnn", "epochs", base.wnn_epochs)?,
            wnn_lr: cfg.parse_or("wnn", "lr", base.wnn_lr)?,
            seq_lens_classify: cfg.list_or("rnn", "seq_lens_classify", base.seq_lens_classify)?,
            seq_lens_regress: cfg.list_or("rnn", "seq_lens_regress", base.seq_lens_regress)?,
            rnn_epochs: cfg.parse_or("rnn", "epochs", base.rnn_epochs)?,
            rnn_lr: cfg.parse_or("rnn", "lr", base.rnn_lr)?,
        })
    }
}

/// Imputed, untargeted hourly datasets for both region forms.
#[derive(Debug, Clone)]
pub struct DataSources {
    pub single: HourlyDataset,
    pub mixed: HourlyDataset,
}

/// Grid, impute, and left-join per-region record streams. The first
/// region is the primary; the mixed form joins the rest onto it.
pub fn prepare_sources(regions: &[Vec<WeatherRecord>]) -> Result<DataSources> {
    if regions.is_empty() {
        return Err(Error::InsufficientData("no region data".into()));
    }
    let hourly: Vec<HourlyDataset> = regions
        .iter()
        .map(|r| impute(&group_hourly(r)?))
        .collect::<Result<_>>()?;
    let single = hourly[0].clone();
    let mixed = if hourly.len() > 1 {
        join_regions(&single, &hourly[1..])?
    } else {
        single.clone()
    };
    Ok(DataSources { single, mixed })
}

fn region_name(r: RegionSet) -> &'static str {
    match r {
        RegionSet::Single => "single",
        RegionSet::Mixed => "mixed",
    }
}

/// FNV-1a over the provenance key, mixed with the grid seed: every trial
/// gets an independent, run-stable RNG seed.
pub fn derive_seed(grid_seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ grid_seed
}

/// One prepared "form of data": a split, normalized feature/target set
/// shared by every model family crossed with it.
#[derive(Debug, Clone)]
struct PreparedForm {
    train_x: Vec<Vec<f64>>,
    train_y: Vec<f64>,
    test_x: Vec<Vec<f64>>,
    test_y: Vec<f64>,
    drawn_seed: Option<u64>,
    d: usize,
}

/// Chronological variant kept as datasets so sequence windows can be cut
/// per sequence length.
#[derive(Debug, Clone)]
struct ChronoForm {
    train: HourlyDataset,
    test: HourlyDataset,
}

/// Per-form provenance stored in the report sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormRecord {
    pub task: Task,
    pub dataset: String,
    pub normalization: NormKind,
    pub scope: Scope,
    pub split_mode: SplitMode,
    pub requested_seed: String,
    pub drawn_seed: Option<u64>,
    pub normalizer: Option<Normalizer>,
}

fn targeted_base(
    sources: &DataSources,
    region: RegionSet,
    task: Task,
    threshold: f64,
    subset_threshold: f64,
) -> Result<HourlyDataset> {
    let base = match region {
        RegionSet::Single => &sources.single,
        RegionSet::Mixed => &sources.mixed,
    };
    let labeled = make_targets(base, task, threshold)?;
    match task {
        Task::Classification => Ok(labeled),
        Task::Regression => regression_subset(&labeled, subset_threshold),
    }
}

fn dense_xy(ds: &HourlyDataset) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    Ok((ds.dense_rows()?, ds.targets()?.to_vec()))
}

fn prepare_shuffled_form(
    grid: &ExperimentGrid,
    sources: &DataSources,
    task: Task,
    region: RegionSet,
    norm: NormKind,
    seed: SeedSpec,
) -> Result<(PreparedForm, FormRecord)> {
    let labeled = targeted_base(sources, region, task, grid.threshold, grid.subset_threshold)?;
    let spec = SplitSpec::shuffled(match seed {
        SeedSpec::None => None,
        SeedSpec::Fixed(s) => Some(s),
    });

    let (train, test, drawn_seed, normalizer) = match grid.scope {
        Scope::Global => {
            let scaler = normalize::fit(&labeled, norm, Scope::Global)?;
            let scaled = normalize::apply(&scaler, &labeled)?;
            let out = split(&scaled, &spec)?;
            (out.train, out.test, out.drawn_seed, scaler)
        }
        Scope::Train => {
            let out = split(&labeled, &spec)?;
            let scaler = normalize::fit(&out.train, norm, Scope::Train)?;
            (
                normalize::apply(&scaler, &out.train)?,
                normalize::apply(&scaler, &out.test)?,
                out.drawn_seed,
                scaler,
            )
        }
    };

    let (train_x, train_y) = dense_xy(&train)?;
    let (test_x, test_y) = dense_xy(&test)?;
    let d = train_x.first().map_or(0, Vec::len);
    Ok((
        PreparedForm {
            train_x,
            train_y,
            test_x,
            test_y,
            drawn_seed,
            d,
        },
        FormRecord {
            task,
            dataset: region_name(region).to_string(),
            normalization: norm,
            scope: grid.scope,
            split_mode: SplitMode::Shuffled,
            requested_seed: seed.to_string(),
            drawn_seed,
            normalizer: Some(normalizer),
        },
    ))
}

fn prepare_chrono_form(
    grid: &ExperimentGrid,
    sources: &DataSources,
    task: Task,
    region: RegionSet,
    norm: NormKind,
) -> Result<(ChronoForm, FormRecord)> {
    let labeled = targeted_base(sources, region, task, grid.threshold, grid.subset_threshold)?;
    let spec = SplitSpec::chronological();
    let (train, test, normalizer) = match grid.scope {
        Scope::Global => {
            let scaler = normalize::fit(&labeled, norm, Scope::Global)?;
            let scaled = normalize::apply(&scaler, &labeled)?;
            let out = split(&scaled, &spec)?;
            (out.train, out.test, scaler)
        }
        Scope::Train => {
            let out = split(&labeled, &spec)?;
            let scaler = normalize::fit(&out.train, norm, Scope::Train)?;
            (
                normalize::apply(&scaler, &out.train)?,
                normalize::apply(&scaler, &out.test)?,
                scaler,
            )
        }
    };
    Ok((
        ChronoForm { train, test },
        FormRecord {
            task,
            dataset: region_name(region).to_string(),
            normalization: norm,
            scope: grid.scope,
            split_mode: SplitMode::Chronological,
            requested_seed: "n/a".to_string(),
            drawn_seed: None,
            normalizer: Some(normalizer),
        },
    ))
}

type ShuffledKey = (Task, RegionSet, NormKind, SeedSpec);
type ChronoKey = (Task, RegionSet, NormKind);

struct WorkItem {
    task: Task,
    family: Family,
    region: RegionSet,
    norm: NormKind,
    seed: SeedSpec,
    param: ParamSpec,
    /// Reports this item expands to (the KNN sweep yields one per k).
    report_count: usize,
}

pub struct GridRun {
    /// All per-trial rows, sorted by provenance key.
    pub reports: Vec<EvalReport>,
    /// One record per prepared data form, for the report sidecar.
    pub forms: Vec<FormRecord>,
    /// Rows whose trial failed.
    pub failures: usize,
}

/// Analytic per-family report counts; the plan is checked against these
/// before anything runs.
pub fn expected_counts(
    grid: &ExperimentGrid,
    knn_k_max_regress_capped: usize,
) -> BTreeMap<(Task, Family), usize> {
    let d = grid.datasets.len();
    let n = grid.normalizations.len();
    let s = grid.seeds.len();
    let forms = d * n * s;
    let mut out = BTreeMap::new();
    for &task in &grid.tasks {
        match task {
            Task::Classification => {
                out.insert((task, Family::Knn), forms * grid.knn_k_max_classify);
                out.insert((task, Family::Rcc), forms * grid.rcc_sizes.len());
                out.insert((task, Family::Svm), forms * grid.svm_kernels.len());
                out.insert((task, Family::Dnn), forms * grid.nn_layers_classify.len());
                out.insert((task, Family::Wnn), forms);
                out.insert((task, Family::Dwnn), forms * grid.nn_layers_classify.len());
                out.insert(
                    (task, Family::Lstm),
                    d * n * grid.seq_lens_classify.len(),
                );
            }
            Task::Regression => {
                out.insert((task, Family::Knn), forms * knn_k_max_regress_capped);
                out.insert((task, Family::Linear), forms);
                out.insert((task, Family::Svr), forms * grid.svm_kernels.len());
                out.insert((task, Family::Dnn), forms * grid.nn_layers_regress.len());
                out.insert((task, Family::Wnn), forms);
                out.insert((task, Family::Dwnn), forms * grid.nn_layers_regress.len());
                for family in [Family::Lstm, Family::BiLstm, Family::Gru] {
                    out.insert((task, family), d * n * grid.seq_lens_regress.len());
                }
            }
        }
    }
    out
}

pub fn run_grid(grid: &ExperimentGrid, sources: &DataSources) -> Result<GridRun> {
    // Prepare every data form once; all families crossed with a form see
    // the same split and the same drawn entropy seed.
    let mut shuffled: BTreeMap<ShuffledKey, PreparedForm> = BTreeMap::new();
    let mut chrono: BTreeMap<ChronoKey, ChronoForm> = BTreeMap::new();
    let mut forms: Vec<FormRecord> = Vec::new();
    for &task in &grid.tasks {
        for &region in &grid.datasets {
            for &norm in &grid.normalizations {
                for &seed in &grid.seeds {
                    let (form, record) =
                        prepare_shuffled_form(grid, sources, task, region, norm, seed)?;
                    shuffled.insert((task, region, norm, seed), form);
                    forms.push(record);
                }
                let needs_chrono = match task {
                    Task::Classification => !grid.seq_lens_classify.is_empty(),
                    Task::Regression => !grid.seq_lens_regress.is_empty(),
                };
                if needs_chrono {
                    let (form, record) = prepare_chrono_form(grid, sources, task, region, norm)?;
                    chrono.insert((task, region, norm), form);
                    forms.push(record);
                }
            }
        }
    }

    // The paper's regression sweep runs to k=1000; desk-scale training
    // sets are smaller, so the sweep caps at the training-set size.
    let knn_k_max_regress = shuffled
        .iter()
        .filter(|((task, ..), _)| *task == Task::Regression)
        .map(|(_, form)| form.train_x.len())
        .min()
        .unwrap_or(grid.knn_k_max_regress)
        .min(grid.knn_k_max_regress);

    let mut work: Vec<WorkItem> = Vec::new();
    let mut push = |task, family, region, norm, seed, param, report_count| {
        work.push(WorkItem {
            task,
            family,
            region,
            norm,
            seed,
            param,
            report_count,
        });
    };
    for &task in &grid.tasks {
        for &region in &grid.datasets {
            for &norm in &grid.normalizations {
                for &seed in &grid.seeds {
                    match task {
                        Task::Classification => {
                            push(
                                task,
                                Family::Knn,
                                region,
                                norm,
                                seed,
                                ParamSpec::K(grid.knn_k_max_classify),
                                grid.knn_k_max_classify,
                            );
                            for &m in &grid.rcc_sizes {
                                push(task, Family::Rcc, region, norm, seed, ParamSpec::Size(m), 1);
                            }
                            for &k in &grid.svm_kernels {
                                push(task, Family::Svm, region, norm, seed, ParamSpec::Kernel(k), 1);
                            }
                            for &l in &grid.nn_layers_classify {
                                push(task, Family::Dnn, region, norm, seed, ParamSpec::Layers(l), 1);
                                push(task, Family::Dwnn, region, norm, seed, ParamSpec::Layers(l), 1);
                            }
                            push(task, Family::Wnn, region, norm, seed, ParamSpec::None, 1);
                        }
                        Task::Regression => {
                            push(
                                task,
                                Family::Knn,
                                region,
                                norm,
                                seed,
                                ParamSpec::K(knn_k_max_regress),
                                knn_k_max_regress,
                            );
                            push(task, Family::Linear, region, norm, seed, ParamSpec::None, 1);
                            for &k in &grid.svm_kernels {
                                push(task, Family::Svr, region, norm, seed, ParamSpec::Kernel(k), 1);
                            }
                            for &l in &grid.nn_layers_regress {
                                push(task, Family::Dnn, region, norm, seed, ParamSpec::Layers(l), 1);
                                push(task, Family::Dwnn, region, norm, seed, ParamSpec::Layers(l), 1);
                            }
                            push(task, Family::Wnn, region, norm, seed, ParamSpec::None, 1);
                        }
                    }
                }
                // chronological sequence trials have no seed axis
                let (families, lens): (&[Family], &Vec<usize>) = match task {
                    Task::Classification => (&[Family::Lstm], &grid.seq_lens_classify),
                    Task::Regression => (
                        &[Family::Lstm, Family::BiLstm, Family::Gru],
                        &grid.seq_lens_regress,
                    ),
                };
                for &family in families {
                    for &l in lens {
                        push(task, family, region, norm, SeedSpec::None, ParamSpec::SeqLen(l), 1);
                    }
                }
            }
        }
    }

    // cardinality check before running
    let expected = expected_counts(grid, knn_k_max_regress);
    let mut planned: BTreeMap<(Task, Family), usize> = BTreeMap::new();
    for item in &work {
        *planned.entry((item.task, item.family)).or_default() += item.report_count;
    }
    if planned != expected {
        return Err(Error::Validation(format!(
            "grid plan does not match the analytic axis product: {planned:?} vs {expected:?}"
        )));
    }

    let mut reports: Vec<EvalReport> = work
        .par_iter()
        .map(|item| run_item(grid, item, &shuffled, &chrono))
        .collect::<Result<Vec<Vec<EvalReport>>>>()?
        .into_iter()
        .flatten()
        .collect();
    reports.sort_by(|a, b| sort_key(&a.provenance).cmp(&sort_key(&b.provenance)));

    let mut actual: BTreeMap<(Task, Family), usize> = BTreeMap::new();
    for r in &reports {
        let task = match r.provenance.task.as_str() {
            "classification" => Task::Classification,
            _ => Task::Regression,
        };
        let family: Family = r.provenance.family.parse()?;
        *actual.entry((task, family)).or_default() += 1;
    }
    if actual != expected {
        return Err(Error::Validation(format!(
            "grid produced {actual:?} reports, expected {expected:?}"
        )));
    }

    let failures = reports
        .iter()
        .filter(|r| matches!(r.eval, TaskEval::Failed { .. }))
        .count();
    Ok(GridRun {
        reports,
        forms,
        failures,
    })
}

/// Provenance key with digit runs zero-padded so "k=2" sorts before
/// "k=11".
fn sort_key(p: &Provenance) -> String {
    let mut out = String::with_capacity(p.key().len() + 8);
    let mut digits = String::new();
    for ch in p.key().chars() {
        if ch.is_ascii_digit() {
            digits.push(ch);
        } else {
            if !digits.is_empty() {
                out.push_str(&format!("{:0>8}", digits));
                digits.clear();
            }
            out.push(ch);
        }
    }
    if !digits.is_empty() {
        out.push_str(&format!("{:0>8}", digits));
    }
    out
}

fn base_provenance(grid: &ExperimentGrid, item: &WorkItem, drawn_seed: Option<u64>) -> Provenance {
    Provenance {
        task: item.task.to_string(),
        family: item.family.to_string(),
        dataset: region_name(item.region).to_string(),
        normalization: item.norm.to_string(),
        scope: grid.scope.to_string(),
        split_mode: if matches!(item.param, ParamSpec::SeqLen(_)) {
            SplitMode::Chronological.to_string()
        } else {
            SplitMode::Shuffled.to_string()
        },
        requested_seed: if matches!(item.param, ParamSpec::SeqLen(_)) {
            "n/a".to_string()
        } else {
            item.seed.to_string()
        },
        drawn_seed,
        model_seed: None,
        parameter: item.param.to_string(),
        flags: Vec::new(),
    }
}

fn model_seed_for(grid: &ExperimentGrid, task: Task, provenance_key: &str) -> u64 {
    match task {
        Task::Regression => grid.regression_model_seed,
        Task::Classification => derive_seed(grid.grid_seed, provenance_key),
    }
}

fn run_item(
    grid: &ExperimentGrid,
    item: &WorkItem,
    shuffled: &BTreeMap<ShuffledKey, PreparedForm>,
    chrono: &BTreeMap<ChronoKey, ChronoForm>,
) -> Result<Vec<EvalReport>> {
    if let ParamSpec::SeqLen(l) = item.param {
        let form = chrono
            .get(&(item.task, item.region, item.norm))
            .expect("chrono form prepared");
        return Ok(vec![run_sequence_trial(grid, item, form, l)]);
    }
    let form = shuffled
        .get(&(item.task, item.region, item.norm, item.seed))
        .expect("shuffled form prepared");
    match item.family {
        Family::Knn => run_knn_sweep(grid, item, form),
        _ => Ok(vec![run_tabular_trial(grid, item, form)]),
    }
}

fn failed(provenance: Provenance, err: &Error) -> EvalReport {
    EvalReport {
        provenance,
        eval: TaskEval::Failed {
            message: err.to_string(),
        },
    }
}

fn run_knn_sweep(
    grid: &ExperimentGrid,
    item: &WorkItem,
    form: &PreparedForm,
) -> Result<Vec<EvalReport>> {
    let (k_max, mode) = match item.task {
        Task::Classification => (grid.knn_k_max_classify, KnnMode::Classify),
        Task::Regression => {
            let ParamSpec::K(k) = item.param else {
                unreachable!()
            };
            (k, KnnMode::Regress)
        }
    };
    let sweep = knn::sweep_k(
        &form.train_x,
        &form.train_y,
        &form.test_x,
        &form.test_y,
        k_max,
        Distance::Euclidean,
        mode,
    );
    match sweep {
        Ok(sweep) => Ok(sweep
            .reports
            .into_iter()
            .map(|(k, eval)| {
                let mut p = base_provenance(grid, item, form.drawn_seed);
                p.parameter = ParamSpec::K(k).to_string();
                EvalReport { provenance: p, eval }
            })
            .collect()),
        Err(e) => {
            // the whole sweep failed; still emit one flagged row per k
            Ok((1..=k_max)
                .map(|k| {
                    let mut p = base_provenance(grid, item, form.drawn_seed);
                    p.parameter = ParamSpec::K(k).to_string();
                    failed(p, &e)
                })
                .collect())
        }
    }
}

fn wide_settings(
    grid: &ExperimentGrid,
    train_x: &[Vec<f64>],
) -> (Vec<(usize, usize)>, Vec<f64>) {
    match grid.wnn_cross_mode {
        CrossMode::NoCross => (Vec::new(), Vec::new()),
        CrossMode::AllPairs => {
            let d = train_x.first().map_or(0, Vec::len);
            (linear::all_pairs(d), linear::feature_medians(train_x))
        }
    }
}

fn run_tabular_trial(grid: &ExperimentGrid, item: &WorkItem, form: &PreparedForm) -> EvalReport {
    let mut provenance = base_provenance(grid, item, form.drawn_seed);
    let result = (|| -> Result<TaskEval> {
        let predictions: Vec<f64> = match (item.family, item.param) {
            (Family::Rcc, ParamSpec::Size(m)) => {
                let seed = model_seed_for(grid, item.task, &provenance.key());
                provenance.model_seed = Some(seed);
                let mut res = reservoir::build(
                    form.d,
                    m,
                    grid.rcc_input_scaling,
                    grid.rcc_spectral_radius,
                    grid.rcc_connectivity,
                    seed,
                )?;
                if res.regen_count > 0 {
                    provenance
                        .flags
                        .push(format!("adjacency_regenerated_x{}", res.regen_count));
                }
                let washout = grid.rcc_washout.min(form.train_x.len().saturating_sub(1));
                let states = res.run_states(&form.train_x, washout)?;
                let targets = reservoir::one_hot(&form.train_y[washout..], 2)?;
                let w_out = reservoir::fit_readout(&states, &targets, grid.rcc_ridge)?;
                // carry the trained state into the test stream
                let test_states = res.run_states(&form.test_x, 0)?;
                reservoir::predict_classes(&test_states, &w_out)
            }
            (Family::Svm, ParamSpec::Kernel(kind)) => {
                let model = svm::fit_svc(
                    &form.train_x,
                    &form.train_y,
                    kind.to_spec(form.d),
                    SvmParams {
                        c: grid.svm_c,
                        tol: grid.svm_tol,
                        max_passes: grid.svm_max_passes,
                        track_objective: false,
                    },
                )?;
                if !model.converged {
                    provenance.flags.push("not_converged".to_string());
                }
                form.test_x
                    .iter()
                    .map(|x| model.predict_label(x))
                    .collect::<Result<_>>()?
            }
            (Family::Svr, ParamSpec::Kernel(kind)) => {
                let model = svm::fit_svr(
                    &form.train_x,
                    &form.train_y,
                    kind.to_spec(form.d),
                    grid.svr_epsilon,
                    SvmParams {
                        c: grid.svm_c,
                        tol: grid.svm_tol,
                        max_passes: grid.svm_max_passes,
                        track_objective: false,
                    },
                )?;
                if !model.converged {
                    provenance.flags.push("not_converged".to_string());
                }
                form.test_x
                    .iter()
                    .map(|x| model.predict_value(x))
                    .collect::<Result<_>>()?
            }
            (Family::Dnn, ParamSpec::Layers(layers)) => {
                let seed = model_seed_for(grid, item.task, &provenance.key());
                provenance.model_seed = Some(seed);
                let head = match item.task {
                    Task::Classification => Head::Logistic,
                    Task::Regression => Head::Affine,
                };
                let fit = neural::fit_mlp(
                    &form.train_x,
                    &form.train_y,
                    layers,
                    grid.nn_epochs,
                    grid.nn_lr,
                    seed,
                    head,
                )?;
                form.test_x
                    .iter()
                    .map(|x| match head {
                        Head::Logistic => fit.model.predict_label(x),
                        Head::Affine => fit.model.predict(x),
                    })
                    .collect::<Result<_>>()?
            }
            (Family::Dwnn, ParamSpec::Layers(layers)) => {
                let seed = model_seed_for(grid, item.task, &provenance.key());
                provenance.model_seed = Some(seed);
                let head = match item.task {
                    Task::Classification => Head::Logistic,
                    Task::Regression => Head::Affine,
                };
                let (crosses, thresholds) = wide_settings(grid, &form.train_x);
                let fit = neural::fit_deep_wide(
                    &form.train_x,
                    &form.train_y,
                    crosses,
                    thresholds,
                    layers,
                    grid.nn_epochs,
                    grid.nn_lr,
                    seed,
                    head,
                )?;
                form.test_x
                    .iter()
                    .map(|x| match head {
                        Head::Logistic => fit.model.predict_label(x),
                        Head::Affine => fit.model.predict(x),
                    })
                    .collect::<Result<_>>()?
            }
            (Family::Wnn, ParamSpec::None) => {
                let (crosses, thresholds) = wide_settings(grid, &form.train_x);
                match item.task {
                    Task::Classification => {
                        let fit = linear::fit_wide_classifier(
                            &form.train_x,
                            &form.train_y,
                            crosses,
                            thresholds,
                            grid.wnn_epochs,
                            grid.wnn_lr,
                        )?;
                        form.test_x
                            .iter()
                            .map(|x| fit.model.predict_label(x))
                            .collect()
                    }
                    Task::Regression => {
                        let fit = linear::fit_wide_regressor(
                            &form.train_x,
                            &form.train_y,
                            crosses,
                            thresholds,
                        )?;
                        if fit.used_ridge_fallback {
                            provenance.flags.push("ridge_fallback".to_string());
                        }
                        form.test_x
                            .iter()
                            .map(|x| fit.model.predict_value(x))
                            .collect()
                    }
                }
            }
            (Family::Linear, ParamSpec::None) => {
                let fit = linear::fit_linear_regression(&form.train_x, &form.train_y)?;
                if fit.used_ridge_fallback {
                    provenance.flags.push("ridge_fallback".to_string());
                }
                form.test_x
                    .iter()
                    .map(|x| fit.model.predict_value(x))
                    .collect()
            }
            (family, param) => {
                return Err(Error::Trial(format!(
                    "family {family} does not take parameter {param}"
                )))
            }
        };
        Ok(match item.task {
            Task::Classification => {
                TaskEval::Classification(metrics::evaluate_classifier(&form.test_y, &predictions)?)
            }
            Task::Regression => {
                TaskEval::Regression(metrics::evaluate_regressor(&form.test_y, &predictions)?)
            }
        })
    })();
    match result {
        Ok(eval) => EvalReport { provenance, eval },
        Err(e) => failed(provenance, &e),
    }
}

fn run_sequence_trial(
    grid: &ExperimentGrid,
    item: &WorkItem,
    form: &ChronoForm,
    seq_len: usize,
) -> EvalReport {
    let mut provenance = base_provenance(grid, item, None);
    let result = (|| -> Result<TaskEval> {
        let cell = match item.family {
            Family::Lstm => CellKind::Lstm,
            Family::BiLstm => CellKind::BiLstm,
            Family::Gru => CellKind::Gru,
            other => return Err(Error::Trial(format!("{other} is not a sequence family"))),
        };
        let head = match item.task {
            Task::Classification => Head::Logistic,
            Task::Regression => Head::Affine,
        };
        let seed = model_seed_for(grid, item.task, &provenance.key());
        provenance.model_seed = Some(seed);
        let train_seqs = recurrent::make_sequences(&form.train, seq_len)?;
        let test_seqs = recurrent::make_sequences(&form.test, seq_len)?;
        let hidden = form.train.n_features();
        let fit = recurrent::fit_recurrent(
            &train_seqs,
            cell,
            hidden,
            grid.rnn_epochs,
            grid.rnn_lr,
            seed,
            head,
            true,
        )?;
        let mut truth = Vec::with_capacity(test_seqs.len());
        let mut predictions = Vec::with_capacity(test_seqs.len());
        for (window, y) in &test_seqs {
            truth.push(*y);
            predictions.push(match head {
                Head::Logistic => fit.model.predict_label(window)?,
                Head::Affine => fit.model.predict(window)?,
            });
        }
        Ok(match item.task {
            Task::Classification => {
                TaskEval::Classification(metrics::evaluate_classifier(&truth, &predictions)?)
            }
            Task::Regression => {
                TaskEval::Regression(metrics::evaluate_regressor(&truth, &predictions)?)
            }
        })
    })();
    match result {
        Ok(eval) => EvalReport { provenance, eval },
        Err(e) => failed(provenance, &e),
    }
}
