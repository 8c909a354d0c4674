//! AUC_RL grid over latent geometry, test variant and discriminator on the
//! Delaunay benchmark.
//!
//! One autoencoder is trained per (geometry, discriminator, seed) job; the
//! training stream depends only on the seed, so the same model and detector
//! serve every requested class. Each cell is then identical to a single
//! [`run_pipeline`](super::run_pipeline) call with the matching settings.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LatentSpace, StreamConfig, SyntheticStream};
use super::{build_report, embed_stream, fit_stream_detector, train_autoencoder, Error, Result};
use crate::cdt::{TrainedDetector, Variant};
use crate::graph::{make_benchmark_stream, AttributeMoments};
use crate::metrics::median;
use crate::nn::{DiscriminatorKind, Embedding};
use crate::seeding::{derive, derive_indexed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LatentChoice {
    /// Ensemble of hyperbolic, flat and spherical members.
    #[serde(rename = "M*")]
    Ensemble,
    #[serde(rename = "M-1")]
    Hyperbolic,
    #[serde(rename = "M0")]
    Flat,
    #[serde(rename = "M1")]
    Sphere,
}

impl LatentChoice {
    pub const ALL: [LatentChoice; 4] = [
        LatentChoice::Ensemble,
        LatentChoice::Hyperbolic,
        LatentChoice::Flat,
        LatentChoice::Sphere,
    ];

    pub fn label(self) -> &'static str {
        match self {
            LatentChoice::Ensemble => "M*",
            LatentChoice::Hyperbolic => "M-1",
            LatentChoice::Flat => "M0",
            LatentChoice::Sphere => "M1",
        }
    }

    pub fn members(self) -> Vec<LatentSpace> {
        match self {
            LatentChoice::Ensemble => vec![LatentSpace::Hyperbolic, LatentSpace::Flat, LatentSpace::Sphere],
            LatentChoice::Hyperbolic => vec![LatentSpace::Hyperbolic],
            LatentChoice::Flat => vec![LatentSpace::Flat],
            LatentChoice::Sphere => vec![LatentSpace::Sphere],
        }
    }
}

fn variant_label(v: Variant) -> &'static str {
    match v {
        Variant::Distance => "D-CDT",
        Variant::Riemannian => "R-CDT",
    }
}

fn discriminator_label(d: DiscriminatorKind) -> &'static str {
    match d {
        DiscriminatorKind::Geometric => "geom",
        DiscriminatorKind::Probabilistic => "prior",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowSpec {
    pub ccm: LatentChoice,
    pub cdt: Variant,
    pub discriminator: DiscriminatorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Config {
    pub classes: Vec<u32>,
    pub seeds: usize,
    /// Stream sizes, model and detector settings; the class, ensemble,
    /// discriminator and variant are overridden per cell.
    pub base: ExperimentConfig,
    pub rows: Vec<RowSpec>,
}

impl Table1Config {
    /// The full 16-row grid in table order.
    pub fn full_grid() -> Vec<RowSpec> {
        let mut rows = Vec::with_capacity(16);
        for ccm in LatentChoice::ALL {
            for cdt in [Variant::Distance, Variant::Riemannian] {
                for discriminator in [DiscriminatorKind::Geometric, DiscriminatorKind::Probabilistic] {
                    rows.push(RowSpec {
                        ccm,
                        cdt,
                        discriminator,
                    });
                }
            }
        }
        rows
    }

    pub fn new(classes: Vec<u32>, seeds: usize, base: ExperimentConfig) -> Self {
        Table1Config {
            classes,
            seeds,
            base,
            rows: Self::full_grid(),
        }
    }

    /// Experiment seed of replicate `i`.
    pub fn replicate_seed(&self, i: usize) -> u64 {
        derive_indexed(self.base.seed, "replicate", i as u64)
    }

    /// The single-run configuration equivalent to one cell and replicate.
    pub fn cell_config(&self, row: &RowSpec, class: u32, replicate: usize) -> Result<ExperimentConfig> {
        let StreamConfig::Synthetic(stream) = &self.base.stream else {
            return Err(Error::Config("the table grid needs a synthetic stream".into()));
        };
        let mut config = self.base.clone();
        config.seed = self.replicate_seed(replicate);
        config.stream = StreamConfig::Synthetic(SyntheticStream {
            class_index: class,
            ..stream.clone()
        });
        config.model.ensemble = row.ccm.members();
        config.model.discriminator = row.discriminator;
        config.detector.variant = row.cdt;
        config.output_dir = None;
        Ok(config)
    }
}

/// Result of one replicate of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub seed: u64,
    pub auc_rl: Option<f64>,
    pub arl_nominal: Option<f64>,
    pub arl_nonnominal: Option<f64>,
    pub n_alarms: usize,
    /// `ok`, or the reason the AUC is missing.
    pub status: String,
}

impl CellOutcome {
    fn failed(seed: u64, error: &dyn std::fmt::Display) -> Self {
        CellOutcome {
            seed,
            auc_rl: None,
            arl_nominal: None,
            arl_nonnominal: None,
            n_alarms: 0,
            status: format!("failed: {error}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Cell {
    pub class: u32,
    /// Median AUC_RL over the replicates where it is defined.
    pub median: Option<f64>,
    pub outcomes: Vec<CellOutcome>,
}

impl Table1Cell {
    pub fn display(&self) -> String {
        match self.median {
            Some(m) => format!("{m:.4}"),
            None if self.outcomes.iter().all(|o| o.status.starts_with("failed")) => "failed".into(),
            None => "undefined".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub spec: RowSpec,
    pub cells: Vec<Table1Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub classes: Vec<u32>,
    pub rows: Vec<Table1Row>,
}

impl Table1 {
    pub fn row(&self, ccm: LatentChoice, cdt: Variant, discriminator: DiscriminatorKind) -> Option<&Table1Row> {
        self.rows.iter().find(|r| {
            r.spec
                == RowSpec {
                    ccm,
                    cdt,
                    discriminator,
                }
        })
    }

    pub fn cell(&self, spec: RowSpec, class: u32) -> Option<&Table1Cell> {
        let row = self.rows.iter().find(|r| r.spec == spec)?;
        row.cells.iter().find(|c| c.class == class)
    }

    /// One line per grid row, one column per class.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["ccm".to_string(), "cdt".into(), "discriminator".into()];
        header.extend(self.classes.iter().map(|c| format!("C={c}")));
        out.write_record(&header).map_err(super::csv_err)?;
        for row in &self.rows {
            let mut record = vec![
                row.spec.ccm.label().to_string(),
                variant_label(row.spec.cdt).into(),
                discriminator_label(row.spec.discriminator).into(),
            ];
            record.extend(row.cells.iter().map(Table1Cell::display));
            out.write_record(&record).map_err(super::csv_err)?;
        }
        out.flush().map_err(|e| super::csv_err(e.into()))
    }

    /// One line per cell and replicate.
    pub fn write_details_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record([
            "ccm",
            "cdt",
            "discriminator",
            "class",
            "seed",
            "auc_rl",
            "arl_nominal",
            "arl_nonnominal",
            "n_alarms",
            "status",
        ])
        .map_err(super::csv_err)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for row in &self.rows {
            for cell in &row.cells {
                for o in &cell.outcomes {
                    out.write_record([
                        row.spec.ccm.label().to_string(),
                        variant_label(row.spec.cdt).into(),
                        discriminator_label(row.spec.discriminator).into(),
                        cell.class.to_string(),
                        o.seed.to_string(),
                        opt(o.auc_rl),
                        opt(o.arl_nominal),
                        opt(o.arl_nonnominal),
                        o.n_alarms.to_string(),
                        o.status.clone(),
                    ])
                    .map_err(super::csv_err)?;
                }
            }
        }
        out.flush().map_err(|e| super::csv_err(e.into()))
    }
}

/// Outcomes of one trained model, indexed by `[row within job][class]`.
type JobResult = Vec<Vec<CellOutcome>>;

/// Trains one model per (geometry, discriminator, replicate) in parallel and
/// evaluates every requested variant and class on it. Failures are recorded
/// per cell and do not stop the grid.
pub fn replicate_table1(config: &Table1Config) -> Result<Table1> {
    if config.classes.is_empty() || config.seeds == 0 || config.rows.is_empty() {
        return Err(Error::Config("table needs at least one class, seed and row".into()));
    }
    if config.classes.contains(&0) {
        return Err(Error::Config(
            "class 0 is the nominal class and has no change to detect".into(),
        ));
    }
    // Validate every cell configuration up front.
    for row in &config.rows {
        config.cell_config(row, config.classes[0], 0)?.validate()?;
    }
    let mut groups: Vec<(LatentChoice, DiscriminatorKind)> = Vec::new();
    for r in &config.rows {
        if !groups.contains(&(r.ccm, r.discriminator)) {
            groups.push((r.ccm, r.discriminator));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|g| (0..config.seeds).map(move |s| (g, s)))
        .collect();
    let results: Vec<JobResult> = jobs
        .par_iter()
        .map(|&(g, replicate)| {
            let rows: Vec<RowSpec> = config
                .rows
                .iter()
                .filter(|r| (r.ccm, r.discriminator) == groups[g])
                .copied()
                .collect();
            run_job(config, &rows, replicate)
        })
        .collect();

    let rows = config
        .rows
        .iter()
        .map(|spec| {
            let g = groups
                .iter()
                .position(|&k| k == (spec.ccm, spec.discriminator))
                .expect("row belongs to a group");
            let within = config
                .rows
                .iter()
                .filter(|r| (r.ccm, r.discriminator) == groups[g])
                .position(|r| r == spec)
                .expect("row is listed");
            let cells = config
                .classes
                .iter()
                .enumerate()
                .map(|(ci, &class)| {
                    let outcomes: Vec<CellOutcome> = (0..config.seeds)
                        .map(|s| results[g * config.seeds + s][within][ci].clone())
                        .collect();
                    Table1Cell {
                        class,
                        median: median(outcomes.iter().map(|o| o.auc_rl)),
                        outcomes,
                    }
                })
                .collect();
            Table1Row { spec: *spec, cells }
        })
        .collect();
    Ok(Table1 {
        classes: config.classes.clone(),
        rows,
    })
}

fn run_job(config: &Table1Config, rows: &[RowSpec], replicate: usize) -> JobResult {
    let seed = config.replicate_seed(replicate);
    let fail_all = |e: &Error| vec![vec![CellOutcome::failed(seed, e); config.classes.len()]; rows.len()];
    let base = match config.cell_config(&rows[0], config.classes[0], replicate) {
        Ok(c) => c,
        Err(e) => return fail_all(&e),
    };
    let StreamConfig::Synthetic(stream) = &base.stream else {
        unreachable!("cell_config only accepts synthetic streams")
    };
    let stream = stream.clone();

    // The training stream and its moments are shared by every class.
    let prepared = (|| -> Result<_> {
        let (train, _) = make_benchmark_stream(&stream.benchmark(derive(seed, "stream")))?;
        let moments = AttributeMoments::fit(&train)?;
        let train = moments.apply_stream(&train)?;
        let (model, _) = train_autoencoder(&base.model, &train, seed)?;
        let train_embeddings = embed_stream(&model, &train)?;
        Ok((model, moments, train_embeddings))
    })();
    let (model, moments, train_embeddings) = match prepared {
        Ok(p) => p,
        Err(e) => return fail_all(&e),
    };

    let operational: Vec<Result<_>> = config
        .classes
        .iter()
        .map(|&class| {
            let (_, op) = make_benchmark_stream(
                &SyntheticStream {
                    class_index: class,
                    ..stream.clone()
                }
                .benchmark(derive(seed, "stream")),
            )?;
            let op = moments.apply_stream(&op)?;
            let embeddings = embed_stream(&model, &op)?;
            Ok((op.change_point, embeddings))
        })
        .collect();

    rows.iter()
        .map(|row| {
            let settings = super::DetectorSettings {
                variant: row.cdt,
                ..base.detector.clone()
            };
            let detector = fit_stream_detector(&settings, &model, &train_embeddings, seed);
            operational
                .iter()
                .map(|op| match (&detector, op) {
                    (Err(e), _) | (_, Err(e)) => CellOutcome::failed(seed, e),
                    (Ok(detector), Ok((change_point, embeddings))) => {
                        evaluate(detector, embeddings, *change_point, seed)
                            .unwrap_or_else(|e| CellOutcome::failed(seed, &e))
                    }
                })
                .collect()
        })
        .collect()
}

fn evaluate(
    detector: &TrainedDetector,
    embeddings: &[Embedding],
    change_point: Option<usize>,
    seed: u64,
) -> Result<CellOutcome> {
    let (state, _) = detector.process_stream(embeddings)?;
    let report = build_report(detector, &state, change_point, true, seed)?;
    Ok(CellOutcome {
        seed,
        auc_rl: report.auc_rl,
        arl_nominal: report.arl_nominal,
        arl_nonnominal: report.arl_nonnominal,
        n_alarms: report.n_alarms,
        status: report.auc_undefined.map_or("ok".into(), |r| format!("undefined: {r}")),
    })
}
