//! Detector checkpoints (JSON) and per-window traces (CSV).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{CdtError, CusumTest, DetectorConfig, Result, TraceRow, TrainedDetector};
use crate::geometry::CcmPoint;

pub const DETECTOR_FORMAT: &str = "graphcd-detector";
pub const DETECTOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTest {
    pub members: Vec<usize>,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub q: f64,
    pub h: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: DetectorConfig,
    pub mu0: Vec<CcmPoint>,
    pub tests: Vec<StoredTest>,
}

impl DetectorCheckpoint {
    pub fn from_detector(detector: &TrainedDetector) -> Self {
        DetectorCheckpoint {
            format: DETECTOR_FORMAT.into(),
            version: DETECTOR_VERSION,
            config: detector.config.clone(),
            mu0: detector.mu0.clone(),
            tests: detector
                .tests
                .iter()
                .map(|t| StoredTest {
                    members: t.members.clone(),
                    mean: t.mean.clone(),
                    cov: t.cov.clone(),
                    q: t.q,
                    h: t.h,
                    alpha: t.alpha,
                })
                .collect(),
        }
    }

    pub fn into_detector(self) -> Result<TrainedDetector> {
        if self.format != DETECTOR_FORMAT {
            return Err(CdtError::Checkpoint(format!("unexpected format {:?}", self.format)));
        }
        if self.version != DETECTOR_VERSION {
            return Err(CdtError::Checkpoint(format!(
                "unsupported version {} (expected {DETECTOR_VERSION})",
                self.version
            )));
        }
        self.config.validate()?;
        let c = self.config.ensemble.len();
        if self.mu0.len() != c {
            return Err(CdtError::Checkpoint(format!(
                "{} nominal means for {c} members",
                self.mu0.len()
            )));
        }
        // Deserialisation bypasses the manifold check, so redo it here.
        let mu0 = self
            .mu0
            .into_iter()
            .map(|p| CcmPoint::new(p.kappa(), p.into_coords()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CdtError::Checkpoint(format!("nominal mean: {e}")))?;
        let tests = self
            .tests
            .into_iter()
            .map(|t| {
                let finite = t.mean.iter().chain(t.cov.iter().flatten()).all(|v| v.is_finite());
                if !finite || !t.q.is_finite() || !(t.h > 0.0 && t.h.is_finite()) || t.members.iter().any(|&m| m >= c) {
                    return Err(CdtError::Checkpoint("invalid test parameters".into()));
                }
                CusumTest::new(t.members, t.mean, t.cov, t.q, t.h, t.alpha)
            })
            .collect::<Result<Vec<_>>>()?;
        TrainedDetector::from_parts(self.config, mu0, tests)
    }
}

pub fn save_detector<W: Write>(detector: &TrainedDetector, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, &DetectorCheckpoint::from_detector(detector))
        .map_err(|e| CdtError::Checkpoint(e.to_string()))
}

pub fn load_detector<R: Read>(reader: R) -> Result<TrainedDetector> {
    let ckpt: DetectorCheckpoint = serde_json::from_reader(reader).map_err(|e| CdtError::Checkpoint(e.to_string()))?;
    ckpt.into_detector()
}

/// Writes the trace with columns `window_index, member, s_w, S_w, alarm`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for row in rows {
        out.serialize(row).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> CdtError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CdtError::Io(io),
        other => CdtError::Checkpoint(format!("csv: {other:?}")),
    }
}
