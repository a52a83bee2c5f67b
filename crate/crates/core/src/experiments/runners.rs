//! Experiment suites: k sweeps, reconstruction comparisons, schedule
//! transitions and controller runs.
//!
//! Every run is self-contained (its own rng streams), so grids run in
//! parallel and the summaries are assembled in grid order afterwards.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tracing::{info, warn};

use super::config::{ExperimentKind, ExperimentSpec};
use super::{load_activations, plots, save_checkpoint, RunRecord};
use crate::control::{AutoL0Config, L0Schedule};
use crate::error::{Error, Result};
use crate::metrics::{cosine_similarity_matrix, nth_decoder_projections, variance_explained_from, AlignmentReport};
use crate::sae::{
    build_ground_truth_sae, forward, latent_fire_counts, train, ActivationSource, MatrixSource,
    SaeParams, ToySource, TrainConfig,
};
use crate::toy_data::{empirical_l0, generate_feature_dictionary, sample_batch, FeatureDictionary};

// Stream ids beyond the three used inside `train`.
const EVAL_STREAM: u64 = 3;
const L0_STREAM: u64 = 4;
const RECON_STREAM: u64 = 5;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Training data and held-out evaluation rows for one seed.
pub struct World {
    pub seed: u64,
    pub dict: Option<FeatureDictionary>,
    pub dump: Option<Array2<f32>>,
    /// Generator's empirical mean number of firing features per sample.
    pub true_l0: Option<f64>,
    pub eval: Array2<f32>,
}

impl World {
    pub fn prepare(spec: &ExperimentSpec, seed: u64) -> Result<Self> {
        match &spec.activations {
            Some(path) => Self::from_dump(load_activations(path)?, spec.eval_samples, seed),
            None => Self::from_dictionary(
                generate_feature_dictionary(&spec.toy_for_seed(seed))?,
                spec,
                seed,
            ),
        }
    }

    /// A toy world around an existing dictionary.
    pub fn from_dictionary(dict: FeatureDictionary, spec: &ExperimentSpec, seed: u64) -> Result<Self> {
        let true_l0 = empirical_l0(&dict, spec.l0_samples, &mut stream_rng(seed, L0_STREAM))?;
        let eval = sample_batch(&dict, spec.eval_samples, &mut stream_rng(seed, EVAL_STREAM))?.activations;
        Ok(Self {
            seed,
            dict: Some(dict),
            dump: None,
            true_l0: Some(true_l0),
            eval,
        })
    }

    /// Evaluates on a random subset of at most `eval_samples` dump rows.
    pub fn from_dump(data: Array2<f32>, eval_samples: usize, seed: u64) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let eval = if data.nrows() <= eval_samples {
            data.clone()
        } else {
            let mut rng = stream_rng(seed, EVAL_STREAM);
            let mut rows = rand::seq::index::sample(&mut rng, data.nrows(), eval_samples).into_vec();
            rows.sort_unstable();
            data.select(Axis(0), &rows)
        };
        Ok(Self {
            seed,
            dict: None,
            dump: Some(data),
            true_l0: None,
            eval,
        })
    }

    pub fn features(&self) -> Option<&Array2<f32>> {
        self.dict.as_ref().map(|d| &d.features)
    }

    fn train(&self, cfg: &TrainConfig, auto: Option<&AutoL0Config>) -> Result<(SaeParams<f32>, RunRecord)> {
        let mut source: Box<dyn ActivationSource + '_> = match (&self.dict, &self.dump) {
            (Some(dict), _) => Box::new(ToySource::new(dict)),
            (None, Some(data)) => Box::new(MatrixSource::new(data.clone())?),
            (None, None) => return Err(Error::EmptyBatch),
        };
        train(source.as_mut(), cfg, auto)
    }
}

/// Reconstruction, alignment and projection scores on a held-out set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub n_values: Vec<usize>,
    pub scores: Vec<f64>,
    pub mse: f64,
    pub variance_explained: f64,
    /// Latents that never fired on the evaluation rows.
    pub dead_latents: usize,
    pub alignment: Option<AlignmentReport>,
}

impl Evaluation {
    pub fn mean_max_cosine(&self) -> Option<f64> {
        self.alignment.as_ref().map(|a| a.mean_max_cosine)
    }
}

/// Scores `params` on `x` with BatchTopK at `params.k`.
pub fn evaluate(
    params: &SaeParams<f32>,
    x: &Array2<f32>,
    n_values: &[usize],
    features: Option<&Array2<f32>>,
) -> Result<Evaluation> {
    let trace = forward(params, x.view())?;
    let variance_explained = variance_explained_from(x.view(), &trace.recon)?;
    let dead_latents = latent_fire_counts(&trace.active_mask)
        .iter()
        .filter(|&&c| c == 0)
        .count();
    let report = nth_decoder_projections(params, x.view(), n_values)?;
    let alignment = features
        .map(|f| cosine_similarity_matrix(&params.w_dec, f))
        .transpose()?;
    Ok(Evaluation {
        n_values: report.n_values,
        scores: report.scores,
        mse: trace.mse,
        variance_explained,
        dead_latents,
        alignment,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `key=value` lines in key order.
pub fn write_scalars(path: &Path, scalars: &BTreeMap<String, f64>) -> Result<()> {
    let text: String = scalars.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write_text(path, &text)
}

/// `latent,f0,f1,...` rows of the decoder/feature cosine matrix.
pub fn write_cosine_csv(path: &Path, alignment: &AlignmentReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["latent".to_string()];
    header.extend((0..alignment.cosine.ncols()).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for (j, row) in alignment.cosine.outer_iter().enumerate() {
        let mut rec = vec![j.to_string()];
        rec.extend(row.iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `n,s_n_dec` rows.
pub fn write_projection_csv(path: &Path, eval: &Evaluation) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n", "s_n_dec"])?;
    for (n, s) in eval.n_values.iter().zip(&eval.scores) {
        w.write_record([n.to_string(), s.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Checkpoint, series CSV and final scalars for one run.
fn save_run(dir: &Path, params: &SaeParams<f32>, record: &RunRecord) -> Result<()> {
    create_dir(dir)?;
    let steps = record.steps.last().map_or(0, |s| s + 1);
    save_checkpoint(params, steps, &dir.join("checkpoint.sae"))?;
    record.write_series_csv(&dir.join("series.csv"))?;
    write_scalars(&dir.join("scalars.txt"), &record.final_scalars)?;
    if let Some(a) = &record.final_alignment {
        write_cosine_csv(&dir.join("cosine.csv"), a)?;
    }
    if !record.controller.is_empty() {
        record.write_controller_csv(&dir.join("controller.csv"))?;
    }
    Ok(())
}

fn prepare_worlds(spec: &ExperimentSpec) -> Result<Vec<World>> {
    spec.seeds
        .par_iter()
        .map(|&s| World::prepare(spec, s))
        .collect()
}

fn expect_kind(spec: &ExperimentSpec, kind: ExperimentKind) -> Result<()> {
    spec.validate()?;
    if spec.kind != kind {
        return Err(Error::Config(format!(
            "expected a {kind:?} experiment, got {:?}",
            spec.kind
        )));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Sweep

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub k: f64,
    pub seed: u64,
    pub true_l0: Option<f64>,
    /// Error message for a run that failed and was skipped.
    pub outcome: std::result::Result<Evaluation, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub n_values: Vec<usize>,
    pub cells: Vec<SweepCell>,
}

impl SweepSummary {
    /// The `k` minimising `s_n^dec` for one seed, ignoring failed runs.
    pub fn argmin_k(&self, seed: u64, n: usize) -> Option<f64> {
        let idx = self.n_values.iter().position(|&m| m == n)?;
        self.cells
            .iter()
            .filter(|c| c.seed == seed)
            .filter_map(|c| c.outcome.as_ref().ok().map(|e| (c.k, e.scores[idx])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
    }

    pub fn true_l0(&self, seed: u64) -> Option<f64> {
        self.cells.iter().find(|c| c.seed == seed)?.true_l0
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "k", "seed", "n", "s_n_dec", "mean_max_cosine", "var_explained", "mse", "true_l0", "status",
        ])?;
        for cell in &self.cells {
            for (i, n) in self.n_values.iter().enumerate() {
                let mut row = vec![cell.k.to_string(), cell.seed.to_string(), n.to_string()];
                match &cell.outcome {
                    Ok(e) => row.extend([
                        e.scores[i].to_string(),
                        fmt_opt(e.mean_max_cosine()),
                        e.variance_explained.to_string(),
                        e.mse.to_string(),
                        fmt_opt(cell.true_l0),
                        "ok".into(),
                    ]),
                    Err(_) => row.extend([
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        fmt_opt(cell.true_l0),
                        "failed".into(),
                    ]),
                }
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Trains one SAE per `(k, seed)` and scores each on held-out data.
///
/// Writes `sweep_summary.csv`, one directory per run under `runs/` and one
/// `s_n^dec` plot per rank.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepSummary> {
    expect_kind(spec, ExperimentKind::Sweep)?;
    let out = &spec.output_dir;
    create_dir(out)?;
    let worlds = prepare_worlds(spec)?;
    let grid: Vec<(usize, f64)> = worlds
        .iter()
        .enumerate()
        .flat_map(|(w, _)| spec.k_values.iter().map(move |&k| (w, k)))
        .collect();

    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(w, k)| {
            let world = &worlds[w];
            let outcome = sweep_cell(spec, world, k).map_err(|e| {
                warn!(k, seed = world.seed, error = %e, "sweep run failed");
                e.to_string()
            });
            SweepCell {
                k,
                seed: world.seed,
                true_l0: world.true_l0,
                outcome,
            }
        })
        .collect();

    let summary = SweepSummary {
        n_values: spec.n_values.clone(),
        cells,
    };
    let csv_path = out.join("sweep_summary.csv");
    summary.write_csv(&csv_path)?;
    if summary.cells.iter().any(|c| c.outcome.is_ok()) && !summary.n_values.is_empty() {
        plots::plot_sweep(&csv_path, out)?;
    }
    Ok(summary)
}

fn sweep_cell(spec: &ExperimentSpec, world: &World, k: f64) -> Result<Evaluation> {
    let cfg = TrainConfig {
        k,
        k_schedule: None,
        seed: world.seed,
        ..spec.train.clone()
    };
    let (params, record) = world.train(&cfg, None)?;
    save_run(
        &spec.output_dir.join("runs").join(format!("sweep_k{k}_seed{}", world.seed)),
        &params,
        &record,
    )?;
    info!(k, seed = world.seed, "sweep run done");
    evaluate(&params, &world.eval, &spec.n_values, world.features())
}

// ---------------------------------------------------------------------------
// Reconstruction comparison

#[derive(Debug, Clone, PartialEq)]
pub struct ReconRow {
    pub k: f64,
    pub seed: u64,
    pub true_l0: f64,
    pub learned_var: f64,
    pub gt_var: f64,
    pub learned_mse: f64,
    pub gt_mse: f64,
}

/// Learned versus ground-truth SAE on a common held-out set, for every `k`
/// and seed.
///
/// Writes `recon_compare.csv` and its plot. Failed runs are logged and left
/// out of the table.
pub fn run_recon_compare(spec: &ExperimentSpec) -> Result<Vec<ReconRow>> {
    expect_kind(spec, ExperimentKind::ReconCompare)?;
    let out = &spec.output_dir;
    create_dir(out)?;
    let worlds = prepare_worlds(spec)?;
    let evals: Vec<Array2<f32>> = worlds
        .par_iter()
        .map(|w| {
            let dict = w.dict.as_ref().expect("toy world");
            let mut rng = stream_rng(w.seed, RECON_STREAM);
            Ok(sample_batch(dict, spec.recon_eval_samples, &mut rng)?.activations)
        })
        .collect::<Result<_>>()?;
    let grid: Vec<(usize, f64)> = (0..worlds.len())
        .flat_map(|w| spec.k_values.iter().map(move |&k| (w, k)))
        .collect();

    let rows: Vec<Option<ReconRow>> = grid
        .par_iter()
        .map(|&(w, k)| {
            recon_cell(spec, &worlds[w], &evals[w], k)
                .map_err(|e| warn!(k, seed = worlds[w].seed, error = %e, "recon run failed"))
                .ok()
        })
        .collect();
    let rows: Vec<ReconRow> = rows.into_iter().flatten().collect();

    let path = out.join("recon_compare.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["k", "seed", "learned_var", "gt_var", "learned_mse", "gt_mse", "true_l0"])?;
    for r in &rows {
        w.write_record([
            r.k.to_string(),
            r.seed.to_string(),
            r.learned_var.to_string(),
            r.gt_var.to_string(),
            r.learned_mse.to_string(),
            r.gt_mse.to_string(),
            r.true_l0.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    if !rows.is_empty() {
        plots::plot_recon(&path, out)?;
    }
    Ok(rows)
}

fn recon_cell(spec: &ExperimentSpec, world: &World, eval: &Array2<f32>, k: f64) -> Result<ReconRow> {
    let dict = world.dict.as_ref().expect("toy world");
    let cfg = TrainConfig {
        k,
        k_schedule: None,
        seed: world.seed,
        ..spec.train.clone()
    };
    let (learned, record) = world.train(&cfg, None)?;
    save_run(
        &spec.output_dir.join("runs").join(format!("recon_k{k}_seed{}", world.seed)),
        &learned,
        &record,
    )?;
    let gt = build_ground_truth_sae(dict, k);
    let score = |p: &SaeParams<f32>| -> Result<(f64, f64)> {
        let trace = forward(p, eval.view())?;
        Ok((variance_explained_from(eval.view(), &trace.recon)?, trace.mse))
    };
    let (learned_var, learned_mse) = score(&learned)?;
    let (gt_var, gt_mse) = score(&gt)?;
    Ok(ReconRow {
        k,
        seed: world.seed,
        true_l0: world.true_l0.unwrap_or(f64::NAN),
        learned_var,
        gt_var,
        learned_mse,
        gt_mse,
    })
}

// ---------------------------------------------------------------------------
// Transitions

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Starts above the true L0 and ramps down.
    FromHigh,
    /// Starts below the true L0 and ramps up.
    FromLow,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Self::FromHigh => "high",
            Self::FromLow => "low",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransitionRun {
    pub seed: u64,
    pub direction: Direction,
    pub k_start: f64,
    pub k_end: f64,
    pub params: SaeParams<f32>,
    pub record: RunRecord,
}

impl TransitionRun {
    pub fn mean_max_cosine(&self) -> f64 {
        self.record
            .final_alignment
            .as_ref()
            .map_or(f64::NAN, |a| a.mean_max_cosine)
    }
}

/// Linear `k` ramps from above and from below to the true L0, followed by a
/// hold at the true L0, for every seed.
///
/// The step budget is `transition_steps + hold_steps`; `train.n_samples` is
/// ignored. Writes `transition_summary.csv` and per-run directories.
pub fn run_transition(spec: &ExperimentSpec) -> Result<Vec<TransitionRun>> {
    expect_kind(spec, ExperimentKind::Transition)?;
    let out = &spec.output_dir;
    create_dir(out)?;
    let worlds = prepare_worlds(spec)?;
    let grid: Vec<(usize, Direction)> = (0..worlds.len())
        .flat_map(|w| [(w, Direction::FromHigh), (w, Direction::FromLow)])
        .collect();

    let runs: Vec<Option<TransitionRun>> = grid
        .par_iter()
        .map(|&(w, dir)| {
            transition_cell(spec, &worlds[w], dir)
                .map_err(|e| warn!(seed = worlds[w].seed, error = %e, "transition run failed"))
                .ok()
        })
        .collect();
    let runs: Vec<TransitionRun> = runs.into_iter().flatten().collect();

    let path = out.join("transition_summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["seed", "direction", "k_start", "k_end", "mean_max_cosine", "features_matched", "final_k"])?;
    for r in &runs {
        let matched = r.record.final_alignment.as_ref().map(|a| a.features_matched(0.85));
        w.write_record([
            r.seed.to_string(),
            r.direction.label().to_string(),
            r.k_start.to_string(),
            r.k_end.to_string(),
            r.mean_max_cosine().to_string(),
            matched.map(|m| m.to_string()).unwrap_or_default(),
            r.params.k.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(runs)
}

fn transition_cell(spec: &ExperimentSpec, world: &World, dir: Direction) -> Result<TransitionRun> {
    let t = &spec.transition;
    let k_end = world
        .true_l0
        .ok_or_else(|| Error::Config("transition runs need a toy model with a known L0".into()))?;
    let k_start = match dir {
        Direction::FromHigh => t.k_high,
        Direction::FromLow => t.k_low,
    };
    let schedule = L0Schedule::linear(k_start, k_end, t.transition_steps, t.hold_steps);
    let cfg = TrainConfig {
        k: k_end,
        k_schedule: Some(schedule),
        n_samples: schedule.total_steps() * spec.train.batch as u64,
        seed: world.seed,
        ..spec.train.clone()
    };
    let (params, record) = world.train(&cfg, None)?;
    save_run(
        &spec
            .output_dir
            .join("runs")
            .join(format!("transition_{}_seed{}", dir.label(), world.seed)),
        &params,
        &record,
    )?;
    Ok(TransitionRun {
        seed: world.seed,
        direction: dir,
        k_start,
        k_end,
        params,
        record,
    })
}

// ---------------------------------------------------------------------------
// Controller runs

#[derive(Debug, Clone)]
pub struct AutoL0Run {
    pub seed: u64,
    pub true_l0: Option<f64>,
    pub params: SaeParams<f32>,
    pub record: RunRecord,
    /// Smallest `k` used at any training step.
    pub min_k: f64,
    /// `k` sat at the floor or ceiling for more than half of the steps.
    pub diverged: bool,
}

/// Fraction of training steps whose `k` equalled `floor` or `ceiling`.
pub fn pinned_fraction(record: &RunRecord, k_init: f64, total_steps: u64, floor: f64, ceiling: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let pinned = |k: f64| k <= floor || k >= ceiling;
    let mut count = 0u64;
    let mut k = k_init;
    let mut from = 0u64;
    // A controller event at step s sets k from step s onwards.
    for e in &record.controller {
        if pinned(k) {
            count += e.step - from;
        }
        k = e.k;
        from = e.step;
    }
    if pinned(k) {
        count += total_steps - from;
    }
    count as f64 / total_steps as f64
}

/// Trains with the automatic L0 controller for every seed.
///
/// Writes per-run directories (with `controller.csv`) and
/// `autol0_summary.csv`; diverged runs are flagged there, not dropped.
pub fn run_autol0(spec: &ExperimentSpec) -> Result<Vec<AutoL0Run>> {
    expect_kind(spec, ExperimentKind::Autol0)?;
    let out = &spec.output_dir;
    create_dir(out)?;
    let worlds = prepare_worlds(spec)?;
    let ctl = &spec.autol0;
    let ceiling = ctl
        .k_ceiling
        .unwrap_or(f64::INFINITY)
        .min(spec.train.n_latents as f64);
    let floor = ctl.k_floor.max(spec.train.k_floor);

    let runs: Vec<Option<AutoL0Run>> = worlds
        .par_iter()
        .map(|world| {
            let cfg = TrainConfig {
                k_schedule: None,
                seed: world.seed,
                ..spec.train.clone()
            };
            let result = world.train(&cfg, Some(ctl)).and_then(|(params, record)| {
                save_run(
                    &out.join("runs").join(format!("autol0_seed{}", world.seed)),
                    &params,
                    &record,
                )?;
                Ok((params, record))
            });
            match result {
                Ok((params, record)) => {
                    let k_init = ctl.k_init.max(floor).min(ceiling);
                    let min_k = record
                        .controller
                        .iter()
                        .map(|e| e.k)
                        .fold(k_init, f64::min);
                    let frac = pinned_fraction(&record, k_init, cfg.total_steps(), floor, ceiling);
                    Some(AutoL0Run {
                        seed: world.seed,
                        true_l0: world.true_l0,
                        params,
                        record,
                        min_k,
                        diverged: frac > 0.5,
                    })
                }
                Err(e) => {
                    warn!(seed = world.seed, error = %e, "controller run failed");
                    None
                }
            }
        })
        .collect();
    let runs: Vec<AutoL0Run> = runs.into_iter().flatten().collect();

    let path = out.join("autol0_summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["seed", "final_k", "min_k", "true_l0", "mean_max_cosine", "diverged"])?;
    for r in &runs {
        w.write_record([
            r.seed.to_string(),
            r.params.k.to_string(),
            r.min_k.to_string(),
            fmt_opt(r.true_l0),
            fmt_opt(r.record.final_alignment.as_ref().map(|a| a.mean_max_cosine)),
            r.diverged.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    for r in &runs {
        plots::plot_controller(
            &out.join("runs").join(format!("autol0_seed{}", r.seed)).join("controller.csv"),
            &out.join(format!("autol0_seed{}_k.svg", r.seed)),
        )
        .or_else(|e| match e {
            // A run too short for any controller step has nothing to draw.
            Error::Plot(_) => Ok(()),
            e => Err(e),
        })?;
    }
    Ok(runs)
}

// ---------------------------------------------------------------------------
// Single runs

/// Trains one SAE with `spec.train` as given (fixed `k` or schedule) on the
/// first seed and scores it on held-out data.
pub fn run_single(spec: &ExperimentSpec) -> Result<(SaeParams<f32>, RunRecord, Evaluation)> {
    expect_kind(spec, ExperimentKind::SingleTrain)?;
    run_single_on(spec, &World::prepare(spec, spec.seeds[0])?)
}

/// [`run_single`] on a prepared world; training uses the world's seed.
pub fn run_single_on(spec: &ExperimentSpec, world: &World) -> Result<(SaeParams<f32>, RunRecord, Evaluation)> {
    create_dir(&spec.output_dir)?;
    let cfg = TrainConfig {
        seed: world.seed,
        ..spec.train.clone()
    };
    let (params, record) = world.train(&cfg, None)?;
    let dir = spec.output_dir.join("runs").join(format!("single_seed{}", world.seed));
    save_run(&dir, &params, &record)?;
    let eval = evaluate(&params, &world.eval, &spec.n_values, world.features())?;
    write_projection_csv(&dir.join("projections.csv"), &eval)?;
    Ok((params, record, eval))
}

/// Output paths of [`write_evaluation`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOutputs {
    pub projections: PathBuf,
    pub cosine: Option<PathBuf>,
    pub scalars: PathBuf,
}

/// Writes `eval_projections.csv`, `eval_cosine.csv` (with ground truth) and
/// `eval_scalars.txt` into `dir`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<EvalOutputs> {
    create_dir(dir)?;
    let projections = dir.join("eval_projections.csv");
    write_projection_csv(&projections, eval)?;
    let cosine = match &eval.alignment {
        Some(a) => {
            let p = dir.join("eval_cosine.csv");
            write_cosine_csv(&p, a)?;
            Some(p)
        }
        None => None,
    };
    let mut scalars = BTreeMap::new();
    scalars.insert("mse".to_string(), eval.mse);
    scalars.insert("variance_explained".to_string(), eval.variance_explained);
    scalars.insert("dead_latents".to_string(), eval.dead_latents as f64);
    if let Some(m) = eval.mean_max_cosine() {
        scalars.insert("mean_max_cosine".to_string(), m);
    }
    let scalars_path = dir.join("eval_scalars.txt");
    write_scalars(&scalars_path, &scalars)?;
    Ok(EvalOutputs {
        projections,
        cosine,
        scalars: scalars_path,
    })
}
