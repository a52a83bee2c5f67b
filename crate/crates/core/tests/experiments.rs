use std::path::Path;

use ndarray::Array2;

use sae_l0::experiments::{
    emit_plots, load_checkpoint, run_autol0, run_recon_compare, run_single, run_sweep,
    run_transition, save_checkpoint, Direction, ExperimentKind, ExperimentSpec,
};
use sae_l0::metrics::nth_decoder_projections;
use sae_l0::sae::{train, ToySource, TrainConfig};
use sae_l0::toy_data::generate_feature_dictionary;
use sae_l0::Error;

fn quick(kind: ExperimentKind, out: &Path) -> ExperimentSpec {
    ExperimentSpec {
        kind,
        output_dir: out.to_path_buf(),
        n_values: vec![12, 20],
        eval_samples: 1024,
        recon_eval_samples: 2048,
        l0_samples: 20_000,
        train: TrainConfig {
            batch: 128,
            n_samples: 12_800,
            record_every: 20,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn count_data_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn single_cell_sweep_has_one_row_per_rank() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec {
        k_values: vec![11.0],
        ..quick(ExperimentKind::Sweep, dir.path())
    };
    let summary = run_sweep(&spec).unwrap();
    assert_eq!(summary.cells.len(), 1);
    assert_eq!(count_data_rows(&dir.path().join("sweep_summary.csv")), 2);
    assert!(dir.path().join("runs/sweep_k11_seed0/checkpoint.sae").exists());
}

#[test]
fn sweep_covers_the_grid_and_reruns_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = |out: &Path| ExperimentSpec {
        k_values: vec![4.0, 10.0],
        seeds: vec![0, 1],
        ..quick(ExperimentKind::Sweep, out)
    };
    run_sweep(&spec(a.path())).unwrap();
    run_sweep(&spec(b.path())).unwrap();
    let csv = |d: &Path| std::fs::read(d.join("sweep_summary.csv")).unwrap();
    assert_eq!(csv(a.path()), csv(b.path()));
    assert_eq!(count_data_rows(&a.path().join("sweep_summary.csv")), 2 * 2 * 2);
    for n in [12, 20] {
        assert!(a.path().join(format!("sweep_s{n}.svg")).exists());
    }
}

#[test]
fn failed_runs_are_marked_not_dropped() {
    let dir = tempfile::tempdir().unwrap();
    // k above the latent count cannot be trained.
    let spec = ExperimentSpec {
        k_values: vec![5.0, 60.0],
        ..quick(ExperimentKind::Sweep, dir.path())
    };
    let summary = run_sweep(&spec).unwrap();
    assert!(summary.cells[0].outcome.is_ok());
    assert!(summary.cells[1].outcome.is_err());
    let text = std::fs::read_to_string(dir.path().join("sweep_summary.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.ends_with(",failed")).count(), 2);
}

#[test]
fn plots_regenerate_byte_identically_from_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec {
        k_values: vec![3.0, 9.0],
        ..quick(ExperimentKind::Sweep, dir.path())
    };
    run_sweep(&spec).unwrap();
    let first = emit_plots(dir.path()).unwrap();
    assert_eq!(first.len(), 2);
    let bytes: Vec<Vec<u8>> = first.iter().map(|p| std::fs::read(p).unwrap()).collect();
    for p in &first {
        std::fs::remove_file(p).unwrap();
    }
    let again = emit_plots(dir.path()).unwrap();
    assert_eq!(first, again);
    for (p, b) in again.iter().zip(bytes) {
        assert_eq!(std::fs::read(p).unwrap(), b);
    }
}

#[test]
fn recon_compare_writes_one_row_per_k() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec {
        k_values: vec![2.0, 12.0],
        ..quick(ExperimentKind::ReconCompare, dir.path())
    };
    let rows = run_recon_compare(&spec).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(count_data_rows(&dir.path().join("recon_compare.csv")), 2);
    assert!(dir.path().join("recon_compare.svg").exists());
    // Budget well above the true L0: the ground truth reconstructs almost
    // perfectly.
    assert!(rows[1].gt_var > 0.99, "{rows:?}");
}

#[test]
fn transitions_hold_the_true_l0_after_the_ramp() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = quick(ExperimentKind::Transition, dir.path());
    spec.transition.transition_steps = 60;
    spec.transition.hold_steps = 20;
    spec.train.record_every = 5;
    let runs = run_transition(&spec).unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0].direction, Direction::FromHigh);
    for r in &runs {
        assert_eq!(r.k_start, if r.direction == Direction::FromHigh { 20.0 } else { 2.0 });
        for (&step, &k) in r.record.steps.iter().zip(&r.record.k_series) {
            if step >= 60 {
                assert_eq!(k, r.k_end);
            }
        }
        assert_eq!(r.record.steps.last(), Some(&79));
    }
}

#[test]
fn controller_respects_the_floor() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = quick(ExperimentKind::Autol0, dir.path());
    spec.train.n_samples = 128 * 600;
    spec.autol0.eval_every = 20;
    spec.autol0.metric_every = 2;
    spec.autol0.k_floor = 8.0;
    spec.autol0.k_init = 12.0;
    let runs = run_autol0(&spec).unwrap();
    let r = &runs[0];
    assert!(!r.record.controller.is_empty());
    assert!(r.min_k >= 8.0);
    assert!(r.record.k_series.iter().all(|&k| k >= 8.0));
    assert!(dir.path().join("runs/autol0_seed0/controller.csv").exists());
    assert!(dir.path().join("autol0_seed0_k.svg").exists());
}

#[test]
fn single_run_matches_direct_training() {
    let dir = tempfile::tempdir().unwrap();
    let spec = quick(ExperimentKind::SingleTrain, dir.path());
    let (params, record, _) = run_single(&spec).unwrap();
    let dict = generate_feature_dictionary(&spec.toy_for_seed(0)).unwrap();
    let (direct, direct_record) = train(&mut ToySource::new(&dict), &spec.train, None).unwrap();
    assert_eq!(params, direct);
    assert_eq!(record, direct_record);
    let ckpt = load_checkpoint(&dir.path().join("runs/single_seed0/checkpoint.sae")).unwrap();
    assert_eq!(ckpt.params, params);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let spec = quick(ExperimentKind::SingleTrain, dir.path());
    let (params, _, _) = run_single(&spec).unwrap();
    let path = dir.path().join("again.sae");
    save_checkpoint(&params, 7, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.step, 7);
    let bits = |a: &Array2<f32>| a.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.params.w_enc), bits(&params.w_enc));
    assert_eq!(bits(&back.params.w_dec), bits(&params.w_dec));
    assert_eq!(back.params, params);
}

#[test]
fn checkpoint_against_wrong_width_data_reports_both_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = quick(ExperimentKind::SingleTrain, dir.path());
    let (params, _, _) = run_single(&spec).unwrap();
    let x = Array2::<f32>::zeros((4, 64));
    let err = nth_decoder_projections(&params, x.view(), &[1]).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
    let msg = err.to_string();
    assert!(msg.contains("100") && msg.contains("64"), "{msg}");
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let spec = ExperimentSpec::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            spec.validate().unwrap();
            seen += 1;
        }
    }
    assert_eq!(seen, 5);
}
