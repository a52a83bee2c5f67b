use std::collections::BTreeMap;
use std::path::Path;

use crate::control::ControllerEvent;
use crate::error::{Error, Result};
use crate::metrics::AlignmentReport;

/// Time series emitted by a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub steps: Vec<u64>,
    pub mse_series: Vec<f64>,
    pub k_series: Vec<f64>,
    /// `s_n^dec` on the training batch, keyed by rank `n`.
    pub metric_series: BTreeMap<usize, Vec<f64>>,
    pub dead_series: Vec<usize>,
    /// Per-latent activation counts accumulated over each recorded interval.
    pub fire_counts: Vec<Vec<u32>>,
    /// Controller decisions, one per evaluation step (auto-L0 runs only).
    pub controller: Vec<ControllerEvent>,
    /// `(step, latent)` for every decoder column that collapsed and was redrawn.
    pub reinitialized: Vec<(u64, usize)>,
    pub final_alignment: Option<AlignmentReport>,
    pub final_scalars: BTreeMap<String, f64>,
}

impl RunRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Series lengths agree and steps strictly increase.
    pub fn check_consistency(&self) -> Result<()> {
        let n = self.steps.len();
        let lengths_ok = self.mse_series.len() == n
            && self.k_series.len() == n
            && self.dead_series.len() == n
            && self.fire_counts.len() == n
            && self.metric_series.values().all(|s| s.len() == n);
        if !lengths_ok {
            return Err(Error::param("run record series have different lengths"));
        }
        if self.steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("run record steps are not strictly increasing"));
        }
        Ok(())
    }

    /// Writes `step,k,mse,dead,s_dec_<n>...` rows.
    pub fn write_series_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["step".to_string(), "k".into(), "mse".into(), "dead".into()];
        header.extend(self.metric_series.keys().map(|n| format!("s_dec_{n}")));
        w.write_record(&header)?;
        for i in 0..self.steps.len() {
            let mut row = vec![
                self.steps[i].to_string(),
                self.k_series[i].to_string(),
                self.mse_series[i].to_string(),
                self.dead_series[i].to_string(),
            ];
            row.extend(self.metric_series.values().map(|s| s[i].to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes the controller time series
    /// `step,k,metric_m,raw_grad,biased_grad,applied_delta`.
    pub fn write_controller_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "k", "metric_m", "raw_grad", "biased_grad", "applied_delta"])?;
        for e in &self.controller {
            w.write_record([
                e.step.to_string(),
                e.k.to_string(),
                e.metric_m.to_string(),
                e.raw_grad.to_string(),
                e.biased_grad.to_string(),
                e.applied_delta.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
