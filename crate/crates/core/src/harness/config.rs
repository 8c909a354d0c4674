//! Experiment configuration with desk-scale defaults.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cdt::{DetectorConfig, DriftMode, Variant};
use crate::geometry::{Ccm, Curvature, Ensemble};
use crate::graph::BenchmarkConfig;
use crate::nn::{AdamConfig, ConvKind, DiscriminatorKind, EncoderConfig, ModelConfig, TrainConfig};
use crate::seeding::derive;

use super::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every random decision in a run.
    pub seed: u64,
    pub stream: StreamConfig,
    pub model: ModelSettings,
    pub detector: DetectorSettings,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            stream: StreamConfig::Synthetic(SyntheticStream::default()),
            model: ModelSettings::default(),
            detector: DetectorSettings::default(),
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum StreamConfig {
    /// Delaunay benchmark generated from the experiment seed.
    Synthetic(SyntheticStream),
    /// Line-delimited JSON stream files.
    Files { train: PathBuf, operational: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticStream {
    pub class_index: u32,
    pub n_train: usize,
    pub n_operational: usize,
    pub change_point: usize,
    pub nodes: usize,
    pub noise_std: f64,
}

impl Default for SyntheticStream {
    fn default() -> Self {
        SyntheticStream {
            class_index: 2,
            n_train: 1000,
            n_operational: 4000,
            change_point: 2000,
            nodes: 7,
            noise_std: 1.0,
        }
    }
}

impl SyntheticStream {
    pub fn benchmark(&self, seed: u64) -> BenchmarkConfig {
        BenchmarkConfig {
            class_index: self.class_index,
            n_train: self.n_train,
            n_operational: self.n_operational,
            change_point: self.change_point,
            nodes: self.nodes,
            noise_std: self.noise_std,
            seed,
        }
    }
}

/// Latent manifold kinds accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentSpace {
    Hyperbolic,
    Flat,
    Sphere,
}

impl LatentSpace {
    pub fn curvature(self) -> Curvature {
        match self {
            LatentSpace::Hyperbolic => Curvature::HYPERBOLIC,
            LatentSpace::Flat => Curvature::FLAT,
            LatentSpace::Sphere => Curvature::SPHERICAL,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "hyperbolic" | "h" => Ok(LatentSpace::Hyperbolic),
            "flat" | "euclidean" | "e" => Ok(LatentSpace::Flat),
            "sphere" | "spherical" | "s" => Ok(LatentSpace::Sphere),
            other => Err(Error::Config(format!("unknown latent space {other:?}"))),
        }
    }

    /// Parses a comma-separated list such as `sphere,flat,hyperbolic`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').map(Self::parse).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub conv: ConvKind,
    pub ensemble: Vec<LatentSpace>,
    /// Manifold dimension `d` of every curved member.
    pub latent_dim: usize,
    pub discriminator: DiscriminatorKind,
    pub batch_norm: bool,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            conv: ConvKind::NodeOnly,
            ensemble: vec![LatentSpace::Hyperbolic, LatentSpace::Flat, LatentSpace::Sphere],
            latent_dim: 2,
            discriminator: DiscriminatorKind::Geometric,
            batch_norm: false,
            max_epochs: 200,
            patience: 20,
            batch_size: 128,
            learning_rate: 1e-3,
        }
    }
}

impl ModelSettings {
    pub fn ensemble(&self) -> Result<Ensemble> {
        if self.ensemble.is_empty() || self.latent_dim == 0 {
            return Err(Error::Config(
                "the ensemble needs at least one member of positive dimension".into(),
            ));
        }
        Ensemble::new(
            self.ensemble
                .iter()
                .map(|m| Ccm::new(m.curvature(), self.latent_dim))
                .collect(),
        )
        .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_config(&self, max_nodes: usize, node_features: usize, edge_features: usize) -> Result<ModelConfig> {
        if self.conv == ConvKind::EdgeConditioned && edge_features == 0 {
            return Err(Error::Config(
                "edge-conditioned convolutions need edge attributes; use --conv gcn".into(),
            ));
        }
        Ok(ModelConfig {
            encoder: EncoderConfig {
                ensemble: self.ensemble()?,
                conv_kind: self.conv,
                batch_norm: self.batch_norm,
                ..EncoderConfig::default()
            },
            discriminator: self.discriminator,
            ..ModelConfig::new(max_nodes, node_features, edge_features)
        })
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            seed: derive(seed, "training"),
            ..TrainConfig::default()
        }
    }
}

/// `"auto"` selects 0.1% of the training stream length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WindowSize {
    Fixed(usize),
    Rule(AutoWindow),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AutoWindow {
    Auto,
}

impl WindowSize {
    pub fn resolve(self, n_train: usize) -> usize {
        match self {
            WindowSize::Fixed(n) => n,
            WindowSize::Rule(AutoWindow::Auto) => DetectorConfig::default_window(n_train),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(WindowSize::Rule(AutoWindow::Auto));
        }
        s.parse()
            .map(WindowSize::Fixed)
            .map_err(|_| Error::Config(format!("window size must be a positive integer or \"auto\", got {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSettings {
    pub variant: Variant,
    pub alpha: f64,
    pub window_n: WindowSize,
    pub q_quantile: f64,
    pub drift_mode: DriftMode,
    pub mc_runs: usize,
    pub ridge: f64,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        DetectorSettings {
            variant: Variant::Riemannian,
            alpha: 0.01,
            window_n: WindowSize::Fixed(5),
            q_quantile: 0.75,
            drift_mode: DriftMode::ChiSquare,
            mc_runs: 100_000,
            ridge: 1e-6,
        }
    }
}

impl DetectorSettings {
    pub fn detector_config(&self, ensemble: Ensemble, n_train: usize, seed: u64) -> Result<DetectorConfig> {
        let config = DetectorConfig {
            alpha: self.alpha,
            window_n: self.window_n.resolve(n_train),
            q_quantile: self.q_quantile,
            variant: self.variant,
            ensemble,
            drift_mode: self.drift_mode,
            mc_runs: self.mc_runs,
            ridge: self.ridge,
            seed: derive(seed, "detector"),
        };
        config.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.ensemble()?;
        if self.model.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.model.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.detector.mc_runs < 10_000 {
            return Err(Error::Config("mc_runs must be at least 10000".into()));
        }
        if let StreamConfig::Synthetic(s) = &self.stream {
            if s.change_point == 0 || s.change_point >= s.n_operational {
                return Err(Error::Config(
                    "change_point must lie strictly inside the operational stream".into(),
                ));
            }
        }
        let n_train = match &self.stream {
            StreamConfig::Synthetic(s) => s.n_train,
            StreamConfig::Files { .. } => 1000,
        };
        self.detector
            .detector_config(self.model.ensemble()?, n_train, self.seed)?;
        Ok(())
    }
}
