use std::path::Path;
use std::process::{Command, Output};

fn sae_l0(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sae-l0")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

const QUICK: &str = r#"
n_values = [12, 20]
eval_samples = 512
l0_samples = 5000

[train]
batch = 64
n_samples = 3200
record_every = 10
"#;

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("{extra}{QUICK}")).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn gen_data_then_train_on_the_dump_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().to_str().unwrap();
    let text = stdout(&sae_l0(&["--config", &cfg, "--out", out, "gen-data", "--samples", "2000"]));
    assert!(text.contains("empirical_l0="), "{text}");
    let dump = dir.path().join("activations.l0a");
    let dict = dir.path().join("dictionary.l0d");
    assert!(dump.exists() && dict.exists());

    let ckpt = dir.path().join("model.sae");
    let ckpt_s = ckpt.to_str().unwrap();
    stdout(&sae_l0(&[
        "--config", &cfg, "--out", out, "train",
        "--data", dump.to_str().unwrap(), "--checkpoint", ckpt_s, "--record-every", "5",
    ]));
    assert!(ckpt.exists());
    let series = std::fs::read_to_string(dir.path().join("runs/single_seed0/series.csv")).unwrap();
    // 50 steps recorded every 5, plus the final step.
    assert_eq!(series.lines().count() - 1, 11);

    let text = stdout(&sae_l0(&[
        "--config", &cfg, "--out", out, "eval",
        "--checkpoint", ckpt_s, "--data", dump.to_str().unwrap(),
        "--dictionary", dict.to_str().unwrap(),
    ]));
    assert!(text.contains("mean_max_cosine="), "{text}");
    let scalars = std::fs::read_to_string(dir.path().join("eval_scalars.txt")).unwrap();
    for key in ["mse", "variance_explained", "dead_latents", "mean_max_cosine"] {
        assert!(scalars.contains(&format!("{key}=")), "{scalars}");
    }
    let proj = std::fs::read_to_string(dir.path().join("eval_projections.csv")).unwrap();
    assert!(proj.starts_with("n,s_n_dec"));
}

#[test]
fn sweep_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "k_values = [4, 10]\n");
    let out = dir.path().to_str().unwrap();
    let text = stdout(&sae_l0(&["--config", &cfg, "--out", out, "--threads", "1", "sweep"]));
    assert_eq!(text.lines().filter(|l| l.contains("argmin_k=")).count(), 2);
    let text = stdout(&sae_l0(&["--out", out, "plot"]));
    assert!(text.contains("sweep_s12.svg") && text.contains("sweep_s20.svg"), "{text}");
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "no_such_key = 1\n");
    let o = sae_l0(&["--config", &cfg, "train"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
}

#[test]
fn plot_without_results_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = sae_l0(&["--out", dir.path().to_str().unwrap(), "plot"]);
    assert!(!o.status.success());
}
