use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use graphcd::cdt::{self, DetectorState, DriftMode, Variant};
use graphcd::harness::{
    self, build_report, create_file, embed_stream, export_plot_data, fit_stream_detector, load_detector_file,
    load_model_file, load_streams, read_json, read_stream_file, replicate_table1, train_autoencoder, write_json,
    write_stream_file, ExperimentConfig, LatentChoice, LatentSpace, RowSpec, StreamConfig, Table1Config, WindowSize,
};
use graphcd::nn::{self, ConvKind, DiscriminatorKind};
use graphcd::{exit_code, Error};

#[derive(Parser)]
#[command(
    name = "graphcd",
    version,
    about = "Change detection in graph streams via manifold embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Delaunay benchmark (training and operational streams).
    GenStream(GenStreamArgs),
    /// Train the autoencoder on a training stream.
    Train(TrainArgs),
    /// Fit a change-detection test on the embedded training stream.
    FitDetector(FitArgs),
    /// Monitor an operational stream with a fitted detector.
    Detect(DetectArgs),
    /// Compute run-length statistics from a detection state.
    Report(ReportArgs),
    /// Run the whole pipeline and write every artifact.
    Run(RunArgs),
    /// Replicate the AUC_RL grid on the Delaunay benchmark.
    Table1(Table1Args),
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML experiment configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Default)]
struct StreamArgs {
    /// Class of the post-change regime (0 gives a stream without change).
    #[arg(long)]
    class: Option<u32>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_operational: Option<usize>,
    #[arg(long)]
    change_point: Option<usize>,
    #[arg(long)]
    nodes: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConvArg {
    Ecc,
    Gcn,
}

#[derive(Clone, Copy, ValueEnum)]
enum DiscArg {
    Prior,
    Geom,
}

#[derive(Args, Default)]
struct ModelArgs {
    #[arg(long, value_enum)]
    conv: Option<ConvArg>,
    /// Comma-separated latent members, e.g. `hyperbolic,flat,sphere`.
    #[arg(long)]
    ensemble: Option<String>,
    #[arg(long, value_enum)]
    disc: Option<DiscArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    batch_norm: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    DCdt,
    RCdt,
}

#[derive(Clone, Copy, ValueEnum)]
enum DriftArg {
    ChiSquare,
    Empirical,
}

#[derive(Args, Default)]
struct DetectorArgs {
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Window length, or `auto` for 0.1% of the training stream.
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    q_quantile: Option<f64>,
    #[arg(long, value_enum)]
    drift: Option<DriftArg>,
    #[arg(long)]
    mc_runs: Option<usize>,
}

#[derive(Args)]
struct GenStreamArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[command(flatten)]
    stream: StreamArgs,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    operational_out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Training stream file.
    #[arg(long)]
    train: PathBuf,
    /// Model checkpoint to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    train: PathBuf,
    /// Detector checkpoint to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    detector: PathBuf,
    /// Operational stream file.
    #[arg(long)]
    stream: PathBuf,
    /// Per-window trace CSV.
    #[arg(long)]
    trace: PathBuf,
    /// Accumulator plot data CSV.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Detection state JSON consumed by `report`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Detection state written by `detect`.
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    detector: PathBuf,
    /// Overrides the change point recorded in the stream.
    #[arg(long)]
    change_point: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[command(flatten)]
    stream: StreamArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct Table1Args {
    #[command(flatten)]
    common: ConfigArgs,
    #[command(flatten)]
    stream: StreamArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    detector: DetectorArgs,
    /// Comma-separated change classes.
    #[arg(long, default_value = "2,4,8,12,16,20")]
    classes: String,
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// Restrict the grid to one latent geometry: M*, M-1, M0 or M1.
    #[arg(long)]
    ccm: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Per-replicate outcomes.
    #[arg(long)]
    details: Option<PathBuf>,
}

/// Detection output handed from `detect` to `report`.
#[derive(Serialize, Deserialize)]
struct DetectionFile {
    state: DetectorState,
    window_n: usize,
    change_point: Option<usize>,
    seed: Option<u64>,
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn apply_stream(config: &mut ExperimentConfig, args: &StreamArgs) -> Result<()> {
    let touched = args.class.is_some()
        || args.n_train.is_some()
        || args.n_operational.is_some()
        || args.change_point.is_some()
        || args.nodes.is_some();
    let StreamConfig::Synthetic(s) = &mut config.stream else {
        if touched {
            return Err(config_error("stream flags only apply to synthetic streams"));
        }
        return Ok(());
    };
    s.class_index = args.class.unwrap_or(s.class_index);
    s.n_train = args.n_train.unwrap_or(s.n_train);
    s.n_operational = args.n_operational.unwrap_or(s.n_operational);
    s.change_point = args.change_point.unwrap_or(s.change_point);
    s.nodes = args.nodes.unwrap_or(s.nodes);
    Ok(())
}

fn apply_model(config: &mut ExperimentConfig, args: &ModelArgs) -> Result<()> {
    let m = &mut config.model;
    if let Some(conv) = args.conv {
        m.conv = match conv {
            ConvArg::Ecc => ConvKind::EdgeConditioned,
            ConvArg::Gcn => ConvKind::NodeOnly,
        };
    }
    if let Some(list) = &args.ensemble {
        m.ensemble = LatentSpace::parse_list(list)?;
    }
    if let Some(disc) = args.disc {
        m.discriminator = match disc {
            DiscArg::Prior => DiscriminatorKind::Probabilistic,
            DiscArg::Geom => DiscriminatorKind::Geometric,
        };
    }
    m.max_epochs = args.epochs.unwrap_or(m.max_epochs);
    m.patience = args.patience.unwrap_or(m.patience);
    m.batch_size = args.batch_size.unwrap_or(m.batch_size);
    m.batch_norm |= args.batch_norm;
    Ok(())
}

fn apply_detector(config: &mut ExperimentConfig, args: &DetectorArgs) -> Result<()> {
    let d = &mut config.detector;
    if let Some(v) = args.variant {
        d.variant = match v {
            VariantArg::DCdt => Variant::Distance,
            VariantArg::RCdt => Variant::Riemannian,
        };
    }
    if let Some(w) = &args.window {
        d.window_n = WindowSize::parse(w)?;
    }
    if let Some(drift) = args.drift {
        d.drift_mode = match drift {
            DriftArg::ChiSquare => DriftMode::ChiSquare,
            DriftArg::Empirical => DriftMode::Empirical,
        };
    }
    d.alpha = args.alpha.unwrap_or(d.alpha);
    d.q_quantile = args.q_quantile.unwrap_or(d.q_quantile);
    d.mc_runs = args.mc_runs.unwrap_or(d.mc_runs);
    Ok(())
}

fn save_model(path: &Path, model: &nn::Autoencoder, moments: Option<&graphcd::graph::AttributeMoments>) -> Result<()> {
    let mut w = create_file(path)?;
    nn::save_model(model, moments, &mut w).map_err(Error::from)?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn gen_stream(args: GenStreamArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    apply_stream(&mut config, &args.stream)?;
    let (train, operational) = load_streams(&config)?;
    write_stream_file(&args.train_out, &train)?;
    write_stream_file(&args.operational_out, &operational)?;
    eprintln!(
        "wrote {} training and {} operational graphs (change point {:?})",
        train.len(),
        operational.len(),
        operational.change_point
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    apply_model(&mut config, &args.model)?;
    let stream = read_stream_file(&args.train)?;
    let moments = graphcd::graph::AttributeMoments::fit(&stream).map_err(Error::from)?;
    let stream = moments.apply_stream(&stream).map_err(Error::from)?;
    let (model, history) = train_autoencoder(&config.model, &stream, config.seed)?;
    save_model(&args.out, &model, Some(&moments))?;
    eprintln!(
        "trained {} epochs; kept epoch {} with validation loss {:.4} (initial {:.4})",
        history.epochs.len(),
        history.best_epoch,
        history.best_validation(),
        history.initial_validation
    );
    Ok(())
}

fn normalised(path: &Path, moments: Option<&graphcd::graph::AttributeMoments>) -> Result<graphcd::graph::GraphStream> {
    let stream = read_stream_file(path)?;
    Ok(match moments {
        Some(m) => m.apply_stream(&stream).map_err(Error::from)?,
        None => stream,
    })
}

fn fit_detector(args: FitArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    apply_detector(&mut config, &args.detector)?;
    let (model, moments) = load_model_file(&args.model)?;
    let train = normalised(&args.train, moments.as_ref())?;
    let embeddings = embed_stream(&model, &train)?;
    let detector = fit_stream_detector(&config.detector, &model, &embeddings, config.seed)?;
    let mut w = create_file(&args.out)?;
    cdt::save_detector(&detector, &mut w).map_err(Error::from)?;
    w.flush()?;
    for (i, t) in detector.tests.iter().enumerate() {
        eprintln!(
            "test {i}: members {:?}, dof {}, q = {:.6}, h = {:.6}, alpha = {}",
            t.members,
            t.dim(),
            t.q,
            t.h,
            t.alpha
        );
    }
    Ok(())
}

fn detect(args: DetectArgs) -> Result<()> {
    let (model, moments) = load_model_file(&args.model)?;
    let detector = load_detector_file(&args.detector)?;
    let stream = normalised(&args.stream, moments.as_ref())?;
    let embeddings = embed_stream(&model, &stream)?;
    let (state, trace) = detector.process_stream(&embeddings).map_err(Error::from)?;
    cdt::write_trace_csv(&trace, create_file(&args.trace)?).map_err(Error::from)?;
    if let Some(plot) = &args.plot {
        export_plot_data(&trace, &detector, create_file(plot)?)?;
    }
    eprintln!(
        "{} windows, {} alarms, first alarm at sample {:?}",
        state.windows,
        state.alarms.len(),
        cdt::estimate_change_point(&state, detector.n())
    );
    write_json(
        &args.out,
        &DetectionFile {
            state,
            window_n: detector.n(),
            change_point: stream.change_point,
            seed: stream.seed,
        },
    )?;
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let detection: DetectionFile = read_json(&args.state)?;
    let detector = load_detector_file(&args.detector)?;
    if detection.window_n != detector.n() {
        return Err(config_error(
            "the detection state was produced with a different window length",
        ));
    }
    let change_point = args.change_point.or(detection.change_point);
    let report = build_report(
        &detector,
        &detection.state,
        change_point,
        change_point.is_some(),
        detection.seed.unwrap_or_default(),
    )?;
    emit_report(&report, args.out.as_deref())
}

fn emit_report(report: &harness::StreamReport, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_json(path, report)?,
        None => println!("{}", serde_json::to_string_pretty(report)?),
    }
    let auc = report.auc_rl.map_or_else(
        || format!("undefined ({})", report.auc_undefined.as_deref().unwrap_or("")),
        |a| format!("{a:.4}"),
    );
    eprintln!("AUC_RL {auc}; {} alarms; tau_hat {:?}", report.n_alarms, report.tau_hat);
    if !report.ground_truth_change {
        eprintln!("note: the stream has no ground-truth change");
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    apply_stream(&mut config, &args.stream)?;
    apply_model(&mut config, &args.model)?;
    apply_detector(&mut config, &args.detector)?;
    if args.out_dir.is_some() {
        config.output_dir = args.out_dir;
    }
    let report = harness::run_experiment(&config)?;
    if let Some(dir) = &config.output_dir {
        eprintln!("artifacts written to {}", dir.display());
    }
    emit_report(&report, None)
}

fn parse_ccm(s: &str) -> Result<LatentChoice> {
    LatentChoice::ALL
        .into_iter()
        .find(|c| c.label() == s)
        .ok_or_else(|| config_error(format!("unknown geometry {s:?}; expected M*, M-1, M0 or M1")))
}

fn table1(args: Table1Args) -> Result<()> {
    let mut base = load_config(&args.common)?;
    apply_stream(&mut base, &args.stream)?;
    apply_model(&mut base, &args.model)?;
    apply_detector(&mut base, &args.detector)?;
    let classes = args
        .classes
        .split(',')
        .map(|c| {
            c.trim()
                .parse::<u32>()
                .map_err(|_| config_error(format!("invalid class {c:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut config = Table1Config::new(classes, args.seeds, base);
    if let Some(ccm) = &args.ccm {
        let ccm = parse_ccm(ccm)?;
        config.rows.retain(|r: &RowSpec| r.ccm == ccm);
    }
    let table = replicate_table1(&config)?;
    table.write_csv(create_file(&args.out)?)?;
    if let Some(details) = &args.details {
        table.write_details_csv(create_file(details)?)?;
    }
    table.write_csv(std::io::stdout())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenStream(a) => gen_stream(a),
        Command::Train(a) => train(a),
        Command::FitDetector(a) => fit_detector(a),
        Command::Detect(a) => detect(a),
        Command::Report(a) => report(a),
        Command::Run(a) => run(a),
        Command::Table1(a) => table1(a),
    };
    match result {
        Ok(()) => ExitCode::from(exit_code::SUCCESS as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(exit_code::OTHER, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
