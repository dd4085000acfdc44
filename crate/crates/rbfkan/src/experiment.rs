//! Experiment configuration, report files, and the operations behind the
//! CLI subcommands: single LOOCV searches, single trainings, and the full
//! function-by-kernel (or function-by-model) matrix.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    Activation, ChebKanConfig, ChebKanModel, FixedShapeKan, MlpConfig, MlpModel, SplineKanConfig,
    SplineKanModel, FIXED_SHAPE_H,
};
use crate::benchmarks::{reconstruct_surface, Dataset, FunctionId};
use crate::error::{Error, Result};
use crate::kan::{ModelConfig, RbfKanModel};
use crate::kernels::KernelKind;
use crate::loocv::{prepare_auxiliary, search_h, LoocvConfig, LoocvResult};
use crate::training::{train, BackpropResult, TrainConfig, Trainable};

/// Environment variable holding the default output root.
pub const OUT_ENV: &str = "RBFKAN_OUT";

/// Which architecture an experiment trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// RBF-KAN with LOOCV-initialized, learnable shape parameter.
    Adaptive,
    /// RBF-KAN with the shape parameter frozen at 0.5714.
    FastkanFixed,
    SplineKan,
    ChebKan,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Adaptive,
        ModelKind::FastkanFixed,
        ModelKind::SplineKan,
        ModelKind::ChebKan,
        ModelKind::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Adaptive => "adaptive",
            ModelKind::FastkanFixed => "fastkan_fixed",
            ModelKind::SplineKan => "spline_kan",
            ModelKind::ChebKan => "cheb_kan",
            ModelKind::Mlp => "mlp",
        }
    }

    /// Kinds with an RBF shape parameter (reported as `h`).
    pub fn has_shape_param(self) -> bool {
        matches!(self, ModelKind::Adaptive | ModelKind::FastkanFixed)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model {s:?}; valid: adaptive, fastkan_fixed, spline_kan, cheb_kan, mlp"
                ))
            })
    }
}

/// Architecture knobs shared across model kinds; unset widths fall back to
/// the per-function defaults of [`default_widths`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub widths: Option<Vec<usize>>,
    pub num_centers: usize,
    pub center_range: (f64, f64),
    pub use_layernorm: bool,
    pub use_residual: bool,
    pub spline_intervals: usize,
    pub spline_degree: usize,
    pub spline_domain: (f64, f64),
    pub cheb_degree: usize,
    pub mlp_activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            widths: None,
            num_centers: 8,
            center_range: (-2.0, 2.0),
            use_layernorm: true,
            use_residual: true,
            spline_intervals: 5,
            spline_degree: 3,
            spline_domain: (-1.0, 1.0),
            cheb_degree: 4,
            mlp_activation: Activation::Relu,
        }
    }
}

/// Layer widths used when the config leaves them unset: `[2, 16, 1]` for
/// the oscillatory f3 and `[2, 8, 1]` otherwise for the KAN-style models,
/// `[2, 5, 5, 1]` for the spline KAN and `[2, 128, 128, 128, 1]` for the
/// MLP.
pub fn default_widths(model: ModelKind, function: FunctionId) -> Vec<usize> {
    match model {
        ModelKind::Adaptive | ModelKind::FastkanFixed | ModelKind::ChebKan => {
            if function == FunctionId::F3 {
                vec![2, 16, 1]
            } else {
                vec![2, 8, 1]
            }
        }
        ModelKind::SplineKan => vec![2, 5, 5, 1],
        ModelKind::Mlp => vec![2, 128, 128, 128, 1],
    }
}

/// One experiment cell: function, model, kernel and every nested setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub function: FunctionId,
    pub model: ModelKind,
    pub kernel: KernelKind,
    pub seed: u64,
    pub samples: usize,
    pub surface_resolution: usize,
    pub output_dir: Option<PathBuf>,
    pub loocv: LoocvConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: 1,
            function: FunctionId::F1,
            model: ModelKind::Adaptive,
            kernel: KernelKind::Ga,
            seed: 0,
            samples: 2000,
            surface_resolution: 100,
            output_dir: None,
            loocv: LoocvConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(Error::Config(format!(
                "unsupported config schema version {}",
                self.schema_version
            )));
        }
        if self.samples < 10 {
            return Err(Error::Config("samples must be >= 10".into()));
        }
        if self.surface_resolution < 2 {
            return Err(Error::Config("surface_resolution must be >= 2".into()));
        }
        let widths = self.widths();
        if widths.first() != Some(&2) || widths.last() != Some(&1) {
            return Err(Error::Config(format!(
                "widths must map 2 inputs to 1 output, got {widths:?}"
            )));
        }
        self.loocv.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        self.network
            .widths
            .clone()
            .unwrap_or_else(|| default_widths(self.model, self.function))
    }

    /// Model-init seed, decorrelated from the dataset seed.
    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }
}

/// Every trainable architecture behind one serializable face, so model
/// files are self-describing and `eval` can reload any of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnyModel {
    Adaptive { model: RbfKanModel },
    FastkanFixed { model: FixedShapeKan },
    SplineKan { model: SplineKanModel },
    ChebKan { model: ChebKanModel },
    Mlp { model: MlpModel },
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $body:expr) => {
        match $self {
            AnyModel::Adaptive { model: $m } => $body,
            AnyModel::FastkanFixed { model: $m } => $body,
            AnyModel::SplineKan { model: $m } => $body,
            AnyModel::ChebKan { model: $m } => $body,
            AnyModel::Mlp { model: $m } => $body,
        }
    };
}

impl Trainable for AnyModel {
    fn input_dim(&self) -> usize {
        dispatch!(self, m => m.input_dim())
    }

    fn output_dim(&self) -> usize {
        dispatch!(self, m => m.output_dim())
    }

    fn params(&self) -> Vec<f64> {
        dispatch!(self, m => Trainable::params(m))
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        dispatch!(self, m => Trainable::set_params(m, params))
    }

    fn forward(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        dispatch!(self, m => Trainable::forward(m, inputs, n))
    }

    fn backprop(
        &self,
        inputs: &[f64],
        n: usize,
        output_grads: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<BackpropResult> {
        dispatch!(self, m => m.backprop(inputs, n, output_grads))
    }

    fn shape_param(&self) -> Option<f64> {
        dispatch!(self, m => m.shape_param())
    }
}

/// Versioned on-disk wrapper around [`AnyModel`].
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub model: AnyModel,
}

impl ModelFile {
    pub fn save(model: &AnyModel, path: &Path) -> Result<()> {
        let file = ModelFile {
            schema_version: 1,
            model: model.clone(),
        };
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::Config(format!("model serialization failed: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AnyModel> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("model parse failed: {e}")))?;
        if file.schema_version != 1 {
            return Err(Error::Config(format!(
                "unsupported model schema version {}",
                file.schema_version
            )));
        }
        Ok(file.model)
    }
}

/// Relative artifact names inside a run's output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub model_file: String,
    pub history_csv: String,
    pub surface_csv: String,
    pub dataset_csv: String,
    pub loocv_curve_csv: Option<String>,
}

/// Complete record of one experiment. Wall-clock fields are serialized to
/// a sibling `timing.json` so `report.json` stays byte-reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub h_init: Option<f64>,
    pub h_final: Option<f64>,
    pub test_rel_l2: f64,
    pub epochs: u64,
    pub artifacts: ArtifactPaths,
    pub loocv_seconds: f64,
    pub train_seconds: f64,
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    schema_version: u32,
    config: ExperimentConfig,
    h_init: Option<f64>,
    h_final: Option<f64>,
    test_rel_l2: f64,
    epochs: u64,
    artifacts: ArtifactPaths,
}

#[derive(Serialize, Deserialize)]
struct TimingFile {
    schema_version: u32,
    loocv_seconds: f64,
    train_seconds: f64,
}

impl ExperimentReport {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let report = ReportFile {
            schema_version: 1,
            config: self.config.clone(),
            h_init: self.h_init,
            h_final: self.h_final,
            test_rel_l2: self.test_rel_l2,
            epochs: self.epochs,
            artifacts: self.artifacts.clone(),
        };
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Config(format!("report serialization failed: {e}")))?;
        std::fs::write(dir.join("report.json"), text)?;
        let timing = TimingFile {
            schema_version: 1,
            loocv_seconds: self.loocv_seconds,
            train_seconds: self.train_seconds,
        };
        let text = serde_json::to_string_pretty(&timing)
            .map_err(|e| Error::Config(format!("timing serialization failed: {e}")))?;
        std::fs::write(dir.join("timing.json"), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<ExperimentReport> {
        let report: ReportFile =
            serde_json::from_str(&std::fs::read_to_string(dir.join("report.json"))?)
                .map_err(|e| Error::Config(format!("report parse failed: {e}")))?;
        if report.schema_version != 1 {
            return Err(Error::Config(format!(
                "unsupported report schema version {}",
                report.schema_version
            )));
        }
        let timing: TimingFile =
            serde_json::from_str(&std::fs::read_to_string(dir.join("timing.json"))?)
                .map_err(|e| Error::Config(format!("timing parse failed: {e}")))?;
        Ok(ExperimentReport {
            config: report.config,
            h_init: report.h_init,
            h_final: report.h_final,
            test_rel_l2: report.test_rel_l2,
            epochs: report.epochs,
            artifacts: report.artifacts,
            loocv_seconds: timing.loocv_seconds,
            train_seconds: timing.train_seconds,
        })
    }
}

fn load_or_generate_dataset(config: &ExperimentConfig, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(path) => Dataset::read_csv(path),
        None => Dataset::generate(config.function, config.samples, config.seed),
    }
}

/// Run the two-stage LOOCV search for a config, writing `loocv.json` and
/// `loocv_curve.csv` into `out_dir`.
pub fn cmd_loocv(
    config: &ExperimentConfig,
    data: Option<&Path>,
    out_dir: &Path,
) -> Result<LoocvResult> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let dataset = load_or_generate_dataset(config, data)?;
    let (points, targets) = prepare_auxiliary(&dataset, &config.loocv)?;
    let result = search_h(&points, &targets, config.kernel, &config.loocv)?;

    #[derive(Serialize)]
    struct LoocvFile<'a> {
        schema_version: u32,
        function: FunctionId,
        kernel: KernelKind,
        #[serde(flatten)]
        result: &'a LoocvResult,
    }
    let text = serde_json::to_string_pretty(&LoocvFile {
        schema_version: 1,
        function: config.function,
        kernel: config.kernel,
        result: &result,
    })
    .map_err(|e| Error::Config(format!("loocv serialization failed: {e}")))?;
    std::fs::write(out_dir.join("loocv.json"), text)?;
    result.write_curve_csv(&out_dir.join("loocv_curve.csv"))?;
    Ok(result)
}

/// Build the configured model, running the LOOCV initialization when the
/// kind calls for it. Returns the model and `h_init` (if any) with the
/// LOOCV wall time.
pub fn build_model(
    config: &ExperimentConfig,
    dataset: &Dataset,
) -> Result<(AnyModel, Option<f64>, Option<LoocvResult>, f64)> {
    let widths = config.widths();
    let init_seed = config.init_seed();
    match config.model {
        ModelKind::Adaptive => {
            let started = Instant::now();
            let (points, targets) = prepare_auxiliary(dataset, &config.loocv)?;
            let loocv = search_h(&points, &targets, config.kernel, &config.loocv)?;
            let loocv_seconds = started.elapsed().as_secs_f64();
            let model_cfg = ModelConfig {
                widths,
                kernel: config.kernel,
                num_centers: config.network.num_centers,
                center_range: config.network.center_range,
                use_layernorm: config.network.use_layernorm,
                use_residual: config.network.use_residual,
                seed: init_seed,
            };
            let model = RbfKanModel::init(&model_cfg, loocv.h_opt)?;
            Ok((
                AnyModel::Adaptive { model },
                Some(loocv.h_opt),
                Some(loocv),
                loocv_seconds,
            ))
        }
        ModelKind::FastkanFixed => {
            let model_cfg = ModelConfig {
                widths,
                kernel: config.kernel,
                num_centers: config.network.num_centers,
                center_range: config.network.center_range,
                use_layernorm: config.network.use_layernorm,
                use_residual: config.network.use_residual,
                seed: init_seed,
            };
            let model = FixedShapeKan::init(&model_cfg, FIXED_SHAPE_H)?;
            Ok((
                AnyModel::FastkanFixed { model },
                Some(FIXED_SHAPE_H),
                None,
                0.0,
            ))
        }
        ModelKind::SplineKan => {
            let model = SplineKanModel::init(&SplineKanConfig {
                widths,
                grid_intervals: config.network.spline_intervals,
                degree: config.network.spline_degree,
                domain: config.network.spline_domain,
                use_layernorm: config.network.use_layernorm,
                use_residual: config.network.use_residual,
                seed: init_seed,
            })?;
            Ok((AnyModel::SplineKan { model }, None, None, 0.0))
        }
        ModelKind::ChebKan => {
            let model = ChebKanModel::init(&ChebKanConfig {
                widths,
                degree: config.network.cheb_degree,
                use_layernorm: config.network.use_layernorm,
                seed: init_seed,
            })?;
            Ok((AnyModel::ChebKan { model }, None, None, 0.0))
        }
        ModelKind::Mlp => {
            let model = MlpModel::init(&MlpConfig {
                widths,
                activation: config.network.mlp_activation,
                seed: init_seed,
            })?;
            Ok((AnyModel::Mlp { model }, None, None, 0.0))
        }
    }
}

/// Full training pipeline: dataset, optional LOOCV, training, surface
/// reconstruction, and every artifact file under `out_dir`.
pub fn cmd_train(
    config: &ExperimentConfig,
    data: Option<&Path>,
    out_dir: &Path,
) -> Result<ExperimentReport> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let dataset = load_or_generate_dataset(config, data)?;
    dataset.write_csv(&out_dir.join("dataset.csv"))?;

    let (mut model, h_init, loocv, loocv_seconds) = build_model(config, &dataset)?;
    if let Some(loocv) = &loocv {
        loocv.write_curve_csv(&out_dir.join("loocv_curve.csv"))?;
    }

    let started = Instant::now();
    let record = match train(&mut model, &dataset, &config.train) {
        Ok(record) => record,
        Err(Error::NumericalDivergence {
            context,
            partial_record,
        }) => {
            // Preserve whatever history exists before reporting failure.
            if let Some(partial) = &partial_record {
                partial.write_csv(&out_dir.join("history.csv"))?;
            }
            return Err(Error::NumericalDivergence {
                context,
                partial_record,
            });
        }
        Err(other) => return Err(other),
    };
    let train_seconds = started.elapsed().as_secs_f64();

    record.write_csv(&out_dir.join("history.csv"))?;
    ModelFile::save(&model, &out_dir.join("model.json"))?;
    let surface = reconstruct_surface(&model, config.function, config.surface_resolution)?;
    surface.write_csv(&out_dir.join("surface.csv"))?;

    let report = ExperimentReport {
        config: config.clone(),
        h_init,
        h_final: model.shape_param(),
        test_rel_l2: record.final_test_rel_l2().unwrap_or(f64::NAN),
        epochs: config.train.epochs,
        artifacts: ArtifactPaths {
            model_file: "model.json".into(),
            history_csv: "history.csv".into(),
            surface_csv: "surface.csv".into(),
            dataset_csv: "dataset.csv".into(),
            loocv_curve_csv: loocv.as_ref().map(|_| "loocv_curve.csv".to_string()),
        },
        loocv_seconds,
        train_seconds,
    };
    report.save(out_dir)?;
    Ok(report)
}

/// Per-function best adaptive kernel, used by the `adaptive_best` matrix
/// entry: GA for the smooth f1, M2 for the discontinuous f2, W2 for the
/// oscillatory f3 and W6 for the peaked f4.
pub fn best_kernel_for(function: FunctionId) -> KernelKind {
    match function {
        FunctionId::F1 => KernelKind::Ga,
        FunctionId::F2 => KernelKind::M2,
        FunctionId::F3 => KernelKind::W2,
        FunctionId::F4 => KernelKind::W6,
    }
}

/// Matrix specification: every listed function crossed with either a
/// kernel list (adaptive matrix) or a model list (comparison matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixConfig {
    pub schema_version: u32,
    pub functions: Vec<FunctionId>,
    /// Adaptive-matrix mode: one cell per function x kernel.
    pub kernels: Vec<KernelKind>,
    /// Comparison mode: entries like `"fastkan_fixed"`, `"adaptive_best"`,
    /// `"adaptive:GA"`, `"spline_kan"`, `"cheb_kan"`, `"mlp"`.
    pub models: Vec<String>,
    pub seed: u64,
    pub samples: usize,
    pub surface_resolution: usize,
    pub loocv: LoocvConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig {
            schema_version: 1,
            functions: Vec::new(),
            kernels: Vec::new(),
            models: Vec::new(),
            seed: 0,
            samples: 2000,
            surface_resolution: 100,
            loocv: LoocvConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl MatrixConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: MatrixConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(Error::Config(format!(
                "unsupported config schema version {}",
                self.schema_version
            )));
        }
        if self.functions.is_empty() {
            return Err(Error::Domain("matrix spec lists no functions".into()));
        }
        if self.kernels.is_empty() == self.models.is_empty() {
            return Err(Error::Domain(
                "matrix spec must list exactly one of `kernels` or `models`".into(),
            ));
        }
        for spec in &self.models {
            parse_model_spec(spec)?;
        }
        self.loocv.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

fn parse_model_spec(spec: &str) -> Result<(ModelKind, Option<KernelKind>)> {
    if spec == "adaptive_best" {
        return Ok((ModelKind::Adaptive, None));
    }
    if let Some(kernel) = spec.strip_prefix("adaptive:") {
        return Ok((ModelKind::Adaptive, Some(kernel.parse()?)));
    }
    let kind: ModelKind = spec.parse()?;
    Ok((kind, Some(KernelKind::Ga)))
}

/// One aggregated matrix row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixRow {
    pub function: FunctionId,
    pub label: String,
    pub kernel: Option<KernelKind>,
    pub architecture: String,
    pub h_init: Option<f64>,
    pub h_final: Option<f64>,
    pub rel_l2: Option<f64>,
    pub loocv_seconds: Option<f64>,
    pub train_seconds: Option<f64>,
    pub status: String,
    /// Lowest error among this function's successful rows.
    pub best: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixSummary {
    pub schema_version: u32,
    pub rows: Vec<MatrixRow>,
}

impl MatrixSummary {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# rbfkan.matrix.v1")?;
        writeln!(
            out,
            "function,model,kernel,architecture,h_init,h_final,rel_l2,loocv_seconds,train_seconds,status,best"
        )?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},\"{}\",{},{},{},{},{},{},{}",
                r.function,
                r.label,
                r.kernel.map(|k| k.name()).unwrap_or(""),
                r.architecture,
                fmt(r.h_init),
                fmt(r.h_final),
                fmt(r.rel_l2),
                fmt(r.loocv_seconds),
                fmt(r.train_seconds),
                r.status,
                if r.best { "*" } else { "" }
            )?;
        }
        Ok(())
    }
}

/// Run every matrix cell (in parallel, each in its own subdirectory of
/// `out_dir`), then aggregate one CSV/JSON summary. Individual cell
/// failures become failed rows; the matrix keeps going.
pub fn cmd_matrix(config: &MatrixConfig, out_dir: &Path) -> Result<MatrixSummary> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;

    struct Cell {
        function: FunctionId,
        label: String,
        model: ModelKind,
        kernel: KernelKind,
    }

    let mut cells = Vec::new();
    for &function in &config.functions {
        if !config.kernels.is_empty() {
            for &kernel in &config.kernels {
                cells.push(Cell {
                    function,
                    label: format!("adaptive_{}", kernel.name()),
                    model: ModelKind::Adaptive,
                    kernel,
                });
            }
        } else {
            for spec in &config.models {
                let (model, kernel) = parse_model_spec(spec)?;
                let kernel = kernel.unwrap_or_else(|| best_kernel_for(function));
                cells.push(Cell {
                    function,
                    label: spec.clone(),
                    model,
                    kernel,
                });
            }
        }
    }

    let results: Vec<(String, std::result::Result<ExperimentReport, String>)> = cells
        .par_iter()
        .map(|cell| {
            let cell_config = ExperimentConfig {
                schema_version: 1,
                function: cell.function,
                model: cell.model,
                kernel: cell.kernel,
                seed: config.seed,
                samples: config.samples,
                surface_resolution: config.surface_resolution,
                output_dir: None,
                loocv: config.loocv.clone(),
                network: config.network.clone(),
                train: config.train.clone(),
            };
            let cell_dir = out_dir.join(format!("{}_{}", cell.function, cell.label));
            let outcome = cmd_train(&cell_config, None, &cell_dir).map_err(|e| e.to_string());
            (cell.label.clone(), outcome)
        })
        .collect();

    let mut rows: Vec<MatrixRow> = Vec::with_capacity(cells.len());
    for (cell, (label, outcome)) in cells.iter().zip(results) {
        let architecture = format!(
            "{:?}",
            config
                .network
                .widths
                .clone()
                .unwrap_or_else(|| default_widths(cell.model, cell.function))
        );
        match outcome {
            Ok(report) => rows.push(MatrixRow {
                function: cell.function,
                label,
                kernel: Some(cell.kernel).filter(|_| cell.model.has_shape_param()),
                architecture,
                h_init: report.h_init,
                h_final: report.h_final,
                rel_l2: Some(report.test_rel_l2),
                loocv_seconds: Some(report.loocv_seconds),
                train_seconds: Some(report.train_seconds),
                status: "ok".into(),
                best: false,
            }),
            Err(msg) => rows.push(MatrixRow {
                function: cell.function,
                label,
                kernel: Some(cell.kernel).filter(|_| cell.model.has_shape_param()),
                architecture,
                h_init: None,
                h_final: None,
                rel_l2: None,
                loocv_seconds: None,
                train_seconds: None,
                status: format!("failed: {msg}"),
                best: false,
            }),
        }
    }

    // Mark the best row per function by minimal error.
    for &function in &config.functions {
        let best = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.function == function)
            .filter_map(|(i, r)| r.rel_l2.map(|e| (i, e)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, _)) = best {
            rows[i].best = true;
        }
    }

    let summary = MatrixSummary {
        schema_version: 1,
        rows,
    };
    summary.write_csv(&out_dir.join("matrix.csv"))?;
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Config(format!("matrix serialization failed: {e}")))?;
    std::fs::write(out_dir.join("matrix.json"), text)?;
    Ok(summary)
}

/// Load a model file and evaluate it on points from a CSV with `x,y`
/// columns; writes `x,y,prediction`.
pub fn cmd_eval(model_path: &Path, points_csv: &Path, output_csv: &Path) -> Result<usize> {
    let model = ModelFile::load(model_path)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(points_csv)
        .map_err(|e| Error::Config(format!("points csv: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Config(format!("points csv: {e}")))?
        .clone();
    let xi = headers.iter().position(|h| h == "x");
    let yi = headers.iter().position(|h| h == "y");
    let (xi, yi) = match (xi, yi) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Config(
                "points csv must have `x` and `y` columns".into(),
            ))
        }
    };
    let mut coords = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Config(format!("points csv: {e}")))?;
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number {s:?} in points csv")))
        };
        coords.push(parse(&record[xi])?);
        coords.push(parse(&record[yi])?);
    }
    if coords.is_empty() {
        return Err(Error::Config("points csv contains no rows".into()));
    }
    let n = coords.len() / 2;
    let preds = model.forward(&coords, n)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(output_csv)?);
    writeln!(out, "# rbfkan.predictions.v1")?;
    writeln!(out, "x,y,prediction")?;
    for i in 0..n {
        writeln!(out, "{},{},{}", coords[2 * i], coords[2 * i + 1], preds[i])?;
    }
    Ok(n)
}

/// Load a model file and export its surface reconstruction for a target
/// function at the given resolution.
pub fn cmd_export_grid(
    model_path: &Path,
    function: FunctionId,
    resolution: usize,
    output_csv: &Path,
) -> Result<f64> {
    let model = ModelFile::load(model_path)?;
    let surface = reconstruct_surface(&model, function, resolution)?;
    surface.write_csv(output_csv)?;
    Ok(surface.rel_l2)
}

/// Output directory precedence: explicit flag, then config, then the
/// `RBFKAN_OUT` environment variable, then `./out`.
pub fn resolve_out_dir(flag: Option<PathBuf>, config_dir: Option<&PathBuf>) -> PathBuf {
    flag.or_else(|| config_dir.cloned())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}
