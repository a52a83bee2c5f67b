//! `sae-l0`: generate toy data, train BatchTopK SAEs, run the L0 experiments
//! and plot their results.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sae_l0::experiments::{
    self, emit_plots, evaluate, load_activations, load_checkpoint, load_dictionary,
    save_activations, save_checkpoint, save_dictionary, write_evaluation, ExperimentKind,
    ExperimentSpec, World,
};
use sae_l0::toy_data::{empirical_l0, expected_l0, generate_feature_dictionary, sample_batch};

#[derive(Parser)]
#[command(name = "sae-l0", version, about = "Find the right L0 for BatchTopK sparse autoencoders")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment file; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run a single seed (overrides `seeds`; for gen-data, the generator seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a toy feature dictionary and, optionally, sampled activations.
    GenData {
        /// Rows of activations to sample; no dump is written when 0.
        #[arg(long, default_value_t = 0)]
        samples: usize,
    },
    /// Train one SAE with the configured `[train]` settings.
    Train {
        /// Train on this dictionary instead of generating one from `[toy]`.
        #[arg(long, conflicts_with = "data")]
        dictionary: Option<PathBuf>,
        /// Train on an activation dump.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also copy the final checkpoint here.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Steps between recorded metrics (overrides `record_every`).
        #[arg(long)]
        record_every: Option<u64>,
    },
    /// Sweep `k_values` × `seeds` and score each SAE.
    Sweep,
    /// Score a checkpoint on an activation dump.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Dictionary file for decoder/feature alignment.
        #[arg(long)]
        dictionary: Option<PathBuf>,
    },
    /// Learned versus ground-truth SAE reconstruction for each `k`.
    ReconCompare,
    /// Linear `k` ramps from above and below the true L0.
    Transition,
    /// Train with the automatic L0 controller.
    Autol0,
    /// Re-render plots from the CSVs in the output directory.
    Plot,
}

fn load_spec(global: &Global, kind: ExperimentKind) -> Result<ExperimentSpec> {
    let mut spec = match &global.config {
        Some(path) => ExperimentSpec::load(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentSpec::default(),
    };
    spec.kind = kind;
    if let Some(out) = &global.out {
        spec.output_dir = out.clone();
    }
    if let Some(seed) = global.seed {
        spec.seeds = vec![seed];
    }
    spec.validate()?;
    Ok(spec)
}

fn output_dir(global: &Global) -> Result<PathBuf> {
    Ok(load_spec(global, ExperimentKind::SingleTrain)?.output_dir)
}

fn gen_data(global: &Global, samples: usize) -> Result<()> {
    let spec = load_spec(global, ExperimentKind::SingleTrain)?;
    let mut toy = spec.toy.clone();
    if let Some(seed) = global.seed {
        toy.seed = seed;
    }
    let dict = generate_feature_dictionary(&toy)?;
    let out = &spec.output_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_dictionary(&dict, &out.join("dictionary.l0d"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(toy.seed);
    let l0 = empirical_l0(&dict, spec.l0_samples, &mut rng)?;
    println!("expected_l0={:.4}", expected_l0(&dict));
    println!("empirical_l0={l0:.4}");
    if samples > 0 {
        let batch = sample_batch(&dict, samples, &mut rng)?;
        save_activations(&batch.activations, &out.join("activations.l0a"))?;
        println!("wrote {samples} activation rows");
    }
    Ok(())
}

fn eval(global: &Global, checkpoint: &Path, data: &Path, dictionary: Option<&Path>) -> Result<()> {
    let spec = load_spec(global, ExperimentKind::SingleTrain)?;
    let params = load_checkpoint(checkpoint)?.params;
    let x = load_activations(data)?;
    let dict = dictionary.map(load_dictionary).transpose()?;
    let n_values: Vec<usize> = if spec.n_values.is_empty() {
        (1..params.n_latents()).collect()
    } else {
        spec.n_values.clone()
    };
    let result = evaluate(&params, &x, &n_values, dict.as_ref().map(|d| &d.features))?;
    let files = write_evaluation(&spec.output_dir, &result)?;
    println!("mse={}", result.mse);
    println!("variance_explained={}", result.variance_explained);
    if let Some(m) = result.mean_max_cosine() {
        println!("mean_max_cosine={m}");
    }
    println!("wrote {}", files.scalars.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let g = &cli.global;
    match cli.command {
        Command::GenData { samples } => gen_data(g, samples)?,
        Command::Train { dictionary, data, checkpoint, record_every } => {
            let mut spec = load_spec(g, ExperimentKind::SingleTrain)?;
            if let Some(every) = record_every {
                spec.train.record_every = every;
                spec.validate()?;
            }
            let seed = spec.seeds[0];
            let world = match (dictionary, data) {
                (Some(d), _) => World::from_dictionary(load_dictionary(&d)?, &spec, seed)?,
                (_, Some(d)) => World::from_dump(load_activations(&d)?, spec.eval_samples, seed)?,
                _ => World::prepare(&spec, seed)?,
            };
            let (params, record, e) = experiments::run_single_on(&spec, &world)?;
            if let Some(path) = checkpoint {
                save_checkpoint(&params, record.steps.last().map_or(0, |s| s + 1), &path)?;
                println!("wrote {}", path.display());
            }
            println!("k={} mse={} variance_explained={}", params.k, e.mse, e.variance_explained);
            if let Some(m) = e.mean_max_cosine() {
                println!("mean_max_cosine={m}");
            }
        }
        Command::Sweep => {
            let spec = load_spec(g, ExperimentKind::Sweep)?;
            let summary = experiments::run_sweep(&spec)?;
            for &seed in &spec.seeds {
                for &n in &summary.n_values {
                    let best = summary.argmin_k(seed, n);
                    println!(
                        "seed={seed} n={n} argmin_k={} true_l0={}",
                        best.map_or("-".into(), |k| k.to_string()),
                        summary.true_l0(seed).map_or("-".into(), |l| format!("{l:.3}")),
                    );
                }
            }
            let failed = summary.cells.iter().filter(|c| c.outcome.is_err()).count();
            if failed > 0 {
                eprintln!("{failed} runs failed; see sweep_summary.csv");
            }
        }
        Command::Eval { checkpoint, data, dictionary } => {
            eval(g, &checkpoint, &data, dictionary.as_deref())?
        }
        Command::ReconCompare => {
            let spec = load_spec(g, ExperimentKind::ReconCompare)?;
            for r in experiments::run_recon_compare(&spec)? {
                println!(
                    "k={} seed={} learned_var={:.4} gt_var={:.4} learned_mse={:.4} gt_mse={:.4}",
                    r.k, r.seed, r.learned_var, r.gt_var, r.learned_mse, r.gt_mse
                );
            }
        }
        Command::Transition => {
            let spec = load_spec(g, ExperimentKind::Transition)?;
            for r in experiments::run_transition(&spec)? {
                println!(
                    "seed={} start={} end={:.3} mean_max_cosine={:.4}",
                    r.seed,
                    r.k_start,
                    r.k_end,
                    r.mean_max_cosine()
                );
            }
        }
        Command::Autol0 => {
            let spec = load_spec(g, ExperimentKind::Autol0)?;
            let runs = experiments::run_autol0(&spec)?;
            if runs.is_empty() {
                bail!("every controller run failed");
            }
            for r in runs {
                println!(
                    "seed={} final_k={:.3} min_k={:.3} true_l0={} diverged={}",
                    r.seed,
                    r.params.k,
                    r.min_k,
                    r.true_l0.map_or("-".into(), |l| format!("{l:.3}")),
                    r.diverged
                );
            }
        }
        Command::Plot => {
            let dir = output_dir(g)?;
            let files = emit_plots(&dir)?;
            if files.is_empty() {
                bail!("no result CSVs found in {}", dir.display());
            }
            for f in files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
