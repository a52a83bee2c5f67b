use std::path::PathBuf;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{adam_step, backward, forward, init_params, latent_fire_counts, AdamState, SaeParams, ThresholdEstimator};
use crate::control::{auto_l0_update, AutoL0Config, AutoL0State, ControllerEvent, L0Schedule};
use crate::error::{Error, Result};
use crate::experiments::{save_checkpoint, RunRecord};
use crate::metrics::{cosine_similarity_matrix, nth_decoder_projections};
use crate::toy_data::{sample_batch, FeatureDictionary};

/// Where training batches come from.
pub trait ActivationSource {
    fn input_dim(&self) -> usize;

    fn next_batch(&mut self, batch: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f32>>;

    /// Ground-truth feature directions, when the source has them.
    fn true_features(&self) -> Option<&Array2<f32>> {
        None
    }
}

/// Fresh samples from the toy model on every call.
pub struct ToySource<'a> {
    dict: &'a FeatureDictionary,
}

impl<'a> ToySource<'a> {
    pub fn new(dict: &'a FeatureDictionary) -> Self {
        Self { dict }
    }
}

impl ActivationSource for ToySource<'_> {
    fn input_dim(&self) -> usize {
        self.dict.input_dim()
    }

    fn next_batch(&mut self, batch: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f32>> {
        Ok(sample_batch(self.dict, batch, rng)?.activations)
    }

    fn true_features(&self) -> Option<&Array2<f32>> {
        Some(&self.dict.features)
    }
}

/// Cycles through a fixed activation matrix, reshuffling rows every epoch.
pub struct MatrixSource {
    data: Array2<f32>,
    order: Vec<usize>,
    cursor: usize,
}

impl MatrixSource {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(Self {
            order: (0..data.nrows()).collect(),
            cursor: data.nrows(),
            data,
        })
    }
}

impl ActivationSource for MatrixSource {
    fn input_dim(&self) -> usize {
        self.data.ncols()
    }

    fn next_batch(&mut self, batch: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f32>> {
        if batch == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut out = Array2::zeros((batch, self.data.ncols()));
        for mut row in out.rows_mut() {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            row.assign(&self.data.row(self.order[self.cursor]));
            self.cursor += 1;
        }
        Ok(out)
    }
}

/// Optimisation and bookkeeping settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    /// Total training samples; the step count is `ceil(n_samples / batch)`.
    pub n_samples: u64,
    pub n_latents: usize,
    /// Fixed `k`, used when no schedule is given.
    pub k: f64,
    pub k_floor: f64,
    pub k_schedule: Option<L0Schedule>,
    /// Steps without firing before a latent counts as dead.
    pub dead_latent_window: u64,
    /// Steps between run-record rows.
    pub record_every: u64,
    /// Ranks `n` of `s_n^dec` recorded on the training batch.
    pub metric_n_values: Vec<usize>,
    pub seed: u64,
    /// Written if training aborts on a non-finite loss.
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch: 1024,
            n_samples: 2_000_000,
            n_latents: 50,
            k: 10.0,
            k_floor: 1.0,
            k_schedule: None,
            dead_latent_window: 1000,
            record_every: 100,
            metric_n_values: vec![12, 20],
            seed: 0,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::param("lr must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::param("batch must be at least 1"));
        }
        if self.n_latents == 0 || self.record_every == 0 || self.dead_latent_window == 0 {
            return Err(Error::param(
                "n_latents, record_every and dead_latent_window must be positive",
            ));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::param("Adam betas must lie in (0, 1)"));
        }
        if !(self.k_floor > 0.0) {
            return Err(Error::param("k_floor must be positive"));
        }
        match &self.k_schedule {
            Some(s) => s.validate()?,
            None if !(self.k > 0.0) || self.k > self.n_latents as f64 => {
                return Err(Error::param(format!(
                    "k = {} must lie in (0, n_latents = {}]",
                    self.k, self.n_latents
                )));
            }
            None => {}
        }
        if let Some(&n) = self.metric_n_values.iter().find(|&&n| n == 0 || n >= self.n_latents) {
            return Err(Error::param(format!(
                "metric rank {n} out of range for {} latents",
                self.n_latents
            )));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.n_samples.div_ceil(self.batch as u64)
    }

    /// `k` requested for a step before controller overrides and clamping.
    fn scheduled_k(&self, step: u64) -> f64 {
        self.k_schedule.as_ref().map_or(self.k, |s| s.k_at(step))
    }
}

/// Runs sample → forward → backward → Adam for `config.total_steps()` steps,
/// moving `k` by the schedule or, when `auto_l0` is given, by the controller.
///
/// Deterministic in `config.seed`.
pub fn train(
    source: &mut dyn ActivationSource,
    config: &TrainConfig,
    auto_l0: Option<&AutoL0Config>,
) -> Result<(SaeParams<f32>, RunRecord)> {
    config.validate()?;
    if let Some(cfg) = auto_l0 {
        cfg.validate()?;
        if cfg.n_for_metric >= config.n_latents {
            return Err(Error::param("controller metric rank must be below n_latents"));
        }
    }
    let h = config.n_latents;
    let k_max = h as f64;
    let clamp_k = |k: f64| k.max(config.k_floor).min(k_max);

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed);
    data_rng.set_stream(1);
    let mut reinit_rng = ChaCha8Rng::seed_from_u64(config.seed);
    reinit_rng.set_stream(2);

    let k0 = clamp_k(auto_l0.map_or_else(|| config.scheduled_k(0), |c| c.k_init));
    let mut params: SaeParams<f32> = init_params(source.input_dim(), h, k0, &mut init_rng)?;
    let mut adam = AdamState::new(&params, config.lr, config.beta1, config.beta2, config.eps);
    let mut threshold = ThresholdEstimator::default();
    let mut record = RunRecord::default();
    for &n in &config.metric_n_values {
        record.metric_series.insert(n, Vec::new());
    }

    let mut controller = AutoL0State::default();
    let mut pending_metrics: Vec<f64> = Vec::new();
    let mut controller_k = k0;

    let mut last_fired: Vec<Option<u64>> = vec![None; h];
    let mut interval_counts = vec![0u32; h];
    let total_steps = config.total_steps();
    let mut last_mse = f64::NAN;

    for step in 0..total_steps {
        params.k = match auto_l0 {
            Some(_) => controller_k,
            None => clamp_k(config.scheduled_k(step)),
        };
        let x = source.next_batch(config.batch, &mut data_rng)?;
        let trace = forward(&params, x.view())?;
        if !trace.mse.is_finite() {
            return Err(abort_non_finite(&params, config, step));
        }
        last_mse = trace.mse;
        threshold.observe_trace(&trace);

        let counts = latent_fire_counts(&trace.active_mask);
        for (j, &c) in counts.iter().enumerate() {
            interval_counts[j] += c;
            if c > 0 {
                last_fired[j] = Some(step);
            }
        }

        let is_last = step + 1 == total_steps;
        if step % config.record_every == 0 || is_last {
            let report = nth_decoder_projections(&params, x.view(), &config.metric_n_values)?;
            record.steps.push(step);
            record.mse_series.push(trace.mse);
            record.k_series.push(params.k);
            for (n, score) in report.n_values.iter().zip(report.scores) {
                record.metric_series.get_mut(n).expect("registered").push(score);
            }
            record.dead_series.push(count_dead(&last_fired, step, config.dead_latent_window));
            record.fire_counts.push(std::mem::replace(&mut interval_counts, vec![0; h]));
            debug!(step, k = params.k, mse = trace.mse, "train");
        }

        if let Some(cfg) = auto_l0 {
            if step % cfg.metric_every == 0 {
                let report = nth_decoder_projections(&params, x.view(), &[cfg.n_for_metric])?;
                pending_metrics.push(report.scores[0]);
            }
            if step > 0 && step % cfg.eval_every == 0 {
                let update = auto_l0_update(&mut controller, cfg, &pending_metrics, controller_k)?;
                pending_metrics.clear();
                controller_k = clamp_k(update.new_k);
                if let Some(s) = update.step {
                    record.controller.push(ControllerEvent {
                        step,
                        k: controller_k,
                        metric_m: s.metric_m,
                        raw_grad: s.raw_grad,
                        biased_grad: s.biased_grad,
                        applied_delta: s.applied_delta,
                    });
                }
            }
        }

        let grads = backward(&params, x.view(), &trace)?;
        match adam_step(&mut params, &grads, &mut adam, &mut reinit_rng) {
            Ok(reinit) => {
                for j in reinit {
                    warn!(step, latent = j, "decoder column collapsed; reinitialised");
                    record.reinitialized.push((step, j));
                }
            }
            Err(Error::NonFinite { .. }) => return Err(abort_non_finite(&params, config, step)),
            Err(e) => return Err(e),
        }
    }

    params.inference_threshold = threshold.value().unwrap_or(0.0).max(0.0) as f32;
    if let Some(features) = source.true_features() {
        let alignment = cosine_similarity_matrix(&params.w_dec, features)?;
        record
            .final_scalars
            .insert("mean_max_cosine".into(), alignment.mean_max_cosine);
        record.final_alignment = Some(alignment);
    }
    record.final_scalars.insert("final_k".into(), params.k);
    record.final_scalars.insert("final_mse".into(), last_mse);
    record.final_scalars.insert("steps".into(), total_steps as f64);
    record
        .final_scalars
        .insert("inference_threshold".into(), params.inference_threshold as f64);
    if let Some(&dead) = record.dead_series.last() {
        record.final_scalars.insert("dead_latents".into(), dead as f64);
    }
    Ok((params, record))
}

fn count_dead(last_fired: &[Option<u64>], step: u64, window: u64) -> usize {
    last_fired
        .iter()
        .filter(|lf| match lf {
            Some(s) => step - s >= window,
            None => step + 1 >= window,
        })
        .count()
}

fn abort_non_finite(params: &SaeParams<f32>, config: &TrainConfig, step: u64) -> Error {
    if let Some(path) = &config.checkpoint_path {
        if let Err(e) = save_checkpoint(params, step, path) {
            warn!(%e, "could not save checkpoint after non-finite loss");
        }
    }
    Error::NonFinite { what: "loss", step }
}
