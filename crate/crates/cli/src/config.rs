use std::path::Path;

use serde::{Deserialize, Serialize};
use usneedle::losses::{ToyDatasetSpec, TrainConfig};
use usneedle::monitor::MonitorParams;
use usneedle::needle3d::{DbscanParams, RansacParams};
use usneedle::pipeline::{DetectConfig, T_CON};
use usneedle::reposition::{ClosedLoopConfig, InsertionScenario, SearchSpec};
use usneedle::sim::{DegradationParams, SweepSpec};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub detect: DetectConfig,
    pub t_con: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detect: DetectConfig::default(),
            t_con: T_CON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub thetas_deg: Vec<f64>,
    pub shifts_mm: Vec<f64>,
    pub trials: usize,
    pub scenario: InsertionScenario,
    pub search: SearchSpec,
    pub degradation: Option<DegradationParams>,
    pub verify_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let cl = ClosedLoopConfig::default();
        Self {
            thetas_deg: vec![5.0, 10.0, 15.0],
            shifts_mm: vec![0.0, 3.0, 6.0],
            trials: 5,
            scenario: cl.scenario,
            search: cl.search,
            degradation: cl.degradation,
            verify_fraction: cl.verify_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub samples: usize,
    pub size_px: usize,
    pub fd_step: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            size_px: 16,
            fd_step: 1e-4,
        }
    }
}

/// Everything a run can be configured with; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub simulate: SweepSpec,
    pub pipeline: PipelineConfig,
    pub monitor: MonitorParams,
    pub dbscan: DbscanParams,
    pub ransac: RansacParams,
    pub experiment: ExperimentConfig,
    pub dataset: ToyDatasetSpec,
    pub train: TrainConfig,
    /// Seeds for the Dice/CE comparison of `train-toy --compare`.
    pub compare_seeds: usize,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            simulate: SweepSpec::default(),
            pipeline: PipelineConfig::default(),
            monitor: MonitorParams::default(),
            dbscan: DbscanParams::default(),
            ransac: RansacParams::default(),
            experiment: ExperimentConfig::default(),
            dataset: ToyDatasetSpec::default(),
            train: TrainConfig::default(),
            compare_seeds: 5,
            eval: EvalConfig::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.simulate.validate().map_err(|e| invalid(e.to_string()))?;
        let d = &self.pipeline.detect;
        if !(d.theta_threshold_deg > 0.0 && d.theta_threshold_deg <= 90.0) {
            return Err(invalid("pipeline.detect.theta_threshold_deg must be in (0, 90]"));
        }
        if !(self.pipeline.t_con > 0.0 && self.pipeline.t_con <= 1.0) {
            return Err(invalid("pipeline.t_con must be in (0, 1]"));
        }
        if !self.monitor.validate() {
            return Err(invalid("monitor: n_ring >= 1 and 0 < t_mis < 1"));
        }
        if !self.dbscan.validate() {
            return Err(invalid("dbscan: eps > 0 and min_pts >= 1"));
        }
        if !self.ransac.validate() {
            return Err(invalid("ransac: iterations >= 1, threshold > 0, min_inliers >= 2"));
        }
        let e = &self.experiment;
        if e.thetas_deg.is_empty() || e.shifts_mm.is_empty() || e.trials == 0 {
            return Err(invalid("experiment grid is empty"));
        }
        if e.search.step_mm <= 0.0 || e.search.extent_mm <= 0.0 {
            return Err(invalid("experiment.search extent and step must be positive"));
        }
        if let Some(dg) = &e.degradation {
            if !dg.validate() {
                return Err(invalid("experiment.degradation"));
            }
        }
        if !(e.verify_fraction > 0.0 && e.verify_fraction <= 1.0) {
            return Err(invalid("experiment.verify_fraction must be in (0, 1]"));
        }
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        if self.dataset.size_px < 8 || self.dataset.spacing_mm <= 0.0 {
            return Err(invalid("dataset size_px >= 8 and spacing_mm > 0"));
        }
        if self.eval.samples == 0 || self.eval.size_px == 0 || self.eval.fd_step <= 0.0 {
            return Err(invalid("eval samples, size_px and fd_step must be positive"));
        }
        Ok(())
    }

    pub fn closed_loop(&self) -> ClosedLoopConfig {
        ClosedLoopConfig {
            probe: self.simulate.probe,
            calibration: self.simulate.calibration,
            detect: self.pipeline.detect,
            monitor: self.monitor,
            dbscan: self.dbscan,
            ransac: self.ransac,
            search: self.experiment.search,
            scenario: self.experiment.scenario,
            degradation: self.experiment.degradation,
            verify_fraction: self.experiment.verify_fraction,
        }
    }
}
