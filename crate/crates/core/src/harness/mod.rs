//! End-to-end experiments: stream, autoencoder, detector, report.
//!
//! Every stage is exposed separately so the command-line tool can run them
//! one at a time; [`run_experiment`] chains them and writes all artifacts.

mod config;
mod table1;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cdt::{self, CdtError, DetectorState, TraceRow, TrainedDetector};
use crate::graph::{self, make_benchmark_stream, AttributeMoments, GraphError, GraphStream};
use crate::metrics::{self, regime_boundary, MetricError, RunLengthSummary};
use crate::nn::{self, Autoencoder, Embedding, History, NnError};
use crate::seeding::derive;

pub use config::{
    AutoWindow, DetectorSettings, ExperimentConfig, LatentSpace, ModelSettings, StreamConfig, SyntheticStream,
    WindowSize,
};
pub use table1::{replicate_table1, CellOutcome, LatentChoice, RowSpec, Table1, Table1Cell, Table1Config, Table1Row};

/// Pipeline stage, used to tag errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Stream,
    Normalise,
    Train,
    Embed,
    Fit,
    Detect,
    Report,
    Artifacts,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Stream => "stream",
            Stage::Normalise => "normalise",
            Stage::Train => "train",
            Stage::Embed => "embed",
            Stage::Fit => "fit",
            Stage::Detect => "detect",
            Stage::Report => "report",
            Stage::Artifacts => "artifacts",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Cdt(#[from] CdtError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Process exit codes of the command-line tool.
pub mod exit_code {
    pub const SUCCESS: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DIVERGENCE: i32 = 3;
    pub const CALIBRATION: i32 = 4;
    pub const GEOMETRY: i32 = 5;
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => exit_code::CONFIG,
            Error::Graph(GraphError::InvalidParameters(_)) => exit_code::CONFIG,
            Error::Nn(NnError::Config(_)) => exit_code::CONFIG,
            Error::Nn(NnError::Divergence { .. }) => exit_code::DIVERGENCE,
            Error::Nn(NnError::Projection { .. } | NnError::Geometry(_)) => exit_code::GEOMETRY,
            Error::Cdt(CdtError::Config(_) | CdtError::InsufficientData { .. }) => exit_code::CONFIG,
            Error::Cdt(CdtError::Calibration { .. }) => exit_code::CALIBRATION,
            Error::Cdt(CdtError::Geometry { .. } | CdtError::SingularCovariance) => exit_code::GEOMETRY,
            Error::Stage { source, .. } => source.exit_code(),
            _ => exit_code::OTHER,
        }
    }

    fn at(stage: Stage) -> impl FnOnce(Error) -> Error {
        move |e| match e {
            tagged @ Error::Stage { .. } => tagged,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

pub fn open_file(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(io_err(path))?))
}

pub fn read_stream_file(path: &Path) -> Result<GraphStream> {
    Ok(graph::read_stream(open_file(path)?)?)
}

pub fn write_stream_file(path: &Path, stream: &GraphStream) -> Result<()> {
    let mut w = create_file(path)?;
    graph::write_stream(&mut w, stream)?;
    w.flush().map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    writeln!(w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open_file(path)?).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })
}

/// Training and operational streams of an experiment.
pub fn load_streams(config: &ExperimentConfig) -> Result<(GraphStream, GraphStream)> {
    match &config.stream {
        StreamConfig::Synthetic(s) => Ok(make_benchmark_stream(&s.benchmark(derive(config.seed, "stream")))?),
        StreamConfig::Files { train, operational } => Ok((read_stream_file(train)?, read_stream_file(operational)?)),
    }
}

/// Whether the operational stream carries a real change.
pub fn has_ground_truth_change(config: &ExperimentConfig, operational: &GraphStream) -> bool {
    match &config.stream {
        StreamConfig::Synthetic(s) => s.class_index != 0,
        StreamConfig::Files { .. } => operational.change_point.is_some(),
    }
}

/// Builds and trains an autoencoder on an already normalised training stream.
pub fn train_autoencoder(settings: &ModelSettings, train: &GraphStream, seed: u64) -> Result<(Autoencoder, History)> {
    let first = train
        .graphs
        .first()
        .ok_or_else(|| Error::Config("the training stream is empty".into()))?;
    let max_nodes = train.graphs.iter().map(|g| g.order()).max().unwrap_or(0);
    let config = settings.model_config(max_nodes, first.node_features(), first.edge_features())?;
    let mut model = Autoencoder::new(config, derive(seed, "model-init"))?;
    let history = nn::train(&mut model, train, &settings.train_config(seed))?;
    Ok((model, history))
}

pub fn embed_stream(model: &Autoencoder, stream: &GraphStream) -> Result<Vec<Embedding>> {
    let graphs: Vec<_> = stream.graphs.iter().collect();
    Ok(model.encode_all(&graphs)?)
}

pub fn fit_stream_detector(
    settings: &DetectorSettings,
    model: &Autoencoder,
    train_embeddings: &[Embedding],
    seed: u64,
) -> Result<TrainedDetector> {
    let config = settings.detector_config(model.ensemble().clone(), train_embeddings.len(), seed)?;
    Ok(cdt::fit_detector(&config, train_embeddings)?)
}

/// Graph counts consumed by each stage; the operational stream is never used
/// for training or fitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub model_training_graphs: usize,
    pub detector_fitting_graphs: usize,
    pub monitored_graphs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub initial_validation: f64,
    pub best_validation: f64,
}

impl From<&History> for TrainingSummary {
    fn from(h: &History) -> Self {
        TrainingSummary {
            epochs: h.epochs.len(),
            best_epoch: h.best_epoch,
            initial_validation: h.initial_validation,
            best_validation: h.best_validation(),
        }
    }
}

/// Outcome of monitoring one operational stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    /// `None` when either regime has no run length.
    pub auc_rl: Option<f64>,
    pub auc_undefined: Option<String>,
    /// Mean run lengths in windows.
    pub arl_nominal: Option<f64>,
    pub arl_nonnominal: Option<f64>,
    pub tau_hat: Option<usize>,
    pub n_alarms: usize,
    pub alarm_windows: Vec<usize>,
    pub windows: usize,
    pub window_n: usize,
    /// Change point used to split the run lengths.
    pub change_point: Option<usize>,
    pub ground_truth_change: bool,
    pub thresholds: Vec<f64>,
    pub drifts: Vec<f64>,
    pub training: Option<TrainingSummary>,
    pub lineage: Option<Lineage>,
    pub seed: u64,
    pub config: Option<ExperimentConfig>,
}

/// Run-length summary against the recorded change point, or an all-nominal
/// split when the stream has none.
pub fn summarize_state(state: &DetectorState, n: usize, change_point: Option<usize>) -> Result<RunLengthSummary> {
    let boundary = change_point.map_or(usize::MAX, |tau| regime_boundary(tau, n));
    Ok(metrics::summarize(&state.alarms, boundary)?)
}

pub fn build_report(
    detector: &TrainedDetector,
    state: &DetectorState,
    change_point: Option<usize>,
    ground_truth_change: bool,
    seed: u64,
) -> Result<StreamReport> {
    let summary = summarize_state(state, detector.n(), change_point)?;
    Ok(StreamReport {
        auc_rl: summary.auc_rl,
        auc_undefined: summary.auc_undefined,
        arl_nominal: summary.arl_nominal,
        arl_nonnominal: summary.arl_nonnominal,
        tau_hat: cdt::estimate_change_point(state, detector.n()),
        n_alarms: state.alarms.len(),
        alarm_windows: state.alarms.clone(),
        windows: state.windows,
        window_n: detector.n(),
        change_point,
        ground_truth_change,
        thresholds: detector.tests.iter().map(|t| t.h).collect(),
        drifts: detector.tests.iter().map(|t| t.q).collect(),
        training: None,
        lineage: None,
        seed,
        config: None,
    })
}

/// One row of the accumulator plot data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub window: usize,
    pub member: usize,
    pub s_w: f64,
    #[serde(rename = "S_w")]
    pub big_s_w: f64,
    pub h: f64,
    pub alarm: bool,
}

pub fn plot_rows(trace: &[TraceRow], detector: &TrainedDetector) -> Vec<PlotRow> {
    trace
        .iter()
        .map(|r| PlotRow {
            window: r.window_index,
            member: r.member,
            s_w: r.s_w,
            big_s_w: r.big_s_w,
            h: detector.tests[r.member].h,
            alarm: r.alarm,
        })
        .collect()
}

/// Writes accumulator plot data with columns `window, member, s_w, S_w, h,
/// alarm`.
pub fn export_plot_data<W: Write>(trace: &[TraceRow], detector: &TrainedDetector, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for row in plot_rows(trace, detector) {
        out.serialize(row).map_err(csv_err)?;
    }
    out.flush().map_err(|source| Error::Io {
        path: PathBuf::from("<plot data>"),
        source,
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<csv>"),
        source: std::io::Error::other(e.to_string()),
    }
}

/// File names written by [`run_experiment`].
pub mod artifact {
    pub const MODEL: &str = "model.json";
    pub const DETECTOR: &str = "detector.json";
    pub const TRACE: &str = "trace.csv";
    pub const REPORT: &str = "report.json";
    pub const PLOT: &str = "accumulator.csv";
    /// Present while a run is unfinished or after it failed.
    pub const INCOMPLETE: &str = "INCOMPLETE";
}

/// Everything produced by one pipeline run, kept in memory.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: StreamReport,
    pub model: Autoencoder,
    pub moments: AttributeMoments,
    pub detector: TrainedDetector,
    pub trace: Vec<TraceRow>,
}

/// Runs the whole pipeline in memory.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let (train, operational) = load_streams(config).map_err(Error::at(Stage::Stream))?;
    let ground_truth = has_ground_truth_change(config, &operational);
    let (train, operational, moments) =
        graph::normalize_attributes(&train, &operational).map_err(|e| Error::at(Stage::Normalise)(e.into()))?;
    let (model, history) = train_autoencoder(&config.model, &train, config.seed).map_err(Error::at(Stage::Train))?;
    let train_embeddings = embed_stream(&model, &train).map_err(Error::at(Stage::Embed))?;
    let detector =
        fit_stream_detector(&config.detector, &model, &train_embeddings, config.seed).map_err(Error::at(Stage::Fit))?;
    let op_embeddings = embed_stream(&model, &operational).map_err(Error::at(Stage::Embed))?;
    let (state, trace) = detector
        .process_stream(&op_embeddings)
        .map_err(|e| Error::at(Stage::Detect)(e.into()))?;
    let mut report = build_report(&detector, &state, operational.change_point, ground_truth, config.seed)
        .map_err(Error::at(Stage::Report))?;
    report.training = Some(TrainingSummary::from(&history));
    report.lineage = Some(Lineage {
        model_training_graphs: train.len(),
        detector_fitting_graphs: train_embeddings.len(),
        monitored_graphs: operational.len(),
    });
    report.config = Some(config.clone());
    Ok(ExperimentOutcome {
        report,
        model,
        moments,
        detector,
        trace,
    })
}

/// Runs the pipeline and, if `output_dir` is set, writes the model and
/// detector checkpoints, the trace, the report and the plot data there.
/// An `INCOMPLETE` marker holding the diagnostic stays behind on failure.
pub fn run_experiment(config: &ExperimentConfig) -> Result<StreamReport> {
    let Some(dir) = &config.output_dir else {
        return Ok(run_pipeline(config)?.report);
    };
    let marker = dir.join(artifact::INCOMPLETE);
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    fs::write(&marker, "running\n").map_err(io_err(&marker))?;
    let result = run_pipeline(config).and_then(|outcome| {
        write_artifacts(dir, &outcome).map_err(Error::at(Stage::Artifacts))?;
        Ok(outcome.report)
    });
    match &result {
        Ok(_) => fs::remove_file(&marker).map_err(io_err(&marker))?,
        Err(e) => fs::write(&marker, format!("{e}\n")).map_err(io_err(&marker))?,
    }
    result
}

pub fn write_artifacts(dir: &Path, outcome: &ExperimentOutcome) -> Result<()> {
    let path = dir.join(artifact::MODEL);
    let mut w = create_file(&path)?;
    nn::save_model(&outcome.model, Some(&outcome.moments), &mut w)?;
    w.flush().map_err(io_err(&path))?;

    let path = dir.join(artifact::DETECTOR);
    let mut w = create_file(&path)?;
    cdt::save_detector(&outcome.detector, &mut w)?;
    w.flush().map_err(io_err(&path))?;

    cdt::write_trace_csv(&outcome.trace, create_file(&dir.join(artifact::TRACE))?)?;
    export_plot_data(
        &outcome.trace,
        &outcome.detector,
        create_file(&dir.join(artifact::PLOT))?,
    )?;
    write_json(&dir.join(artifact::REPORT), &outcome.report)
}

pub fn load_model_file(path: &Path) -> Result<(Autoencoder, Option<AttributeMoments>)> {
    Ok(nn::load_model(open_file(path)?)?)
}

pub fn load_detector_file(path: &Path) -> Result<TrainedDetector> {
    Ok(cdt::load_detector(open_file(path)?)?)
}

#[cfg(test)]
mod tests;
