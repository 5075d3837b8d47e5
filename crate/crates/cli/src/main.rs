use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use shapereg_core::data::{generate_synthetic, load_dataset, save_dataset, SyntheticConfig};
use shapereg_core::experiment::{
    ablate, default_fractions, evaluate, load_run, train_and_save, write_ablation_csv, ExperimentConfig, Model,
};

#[derive(Parser)]
#[command(name = "shapereg", version, about = "Landmark shape regression on images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    GenerateData {
        /// Generator settings (JSON); defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model and evaluate it on the test split.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's dataset path.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides the config's output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate saved weights on a dataset's test split.
    Evaluate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run config; defaults to `config.json` next to the weights.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Sweep square occluders over the test images for several runs.
    Ablate {
        /// Comma-separated run directories.
        #[arg(long, value_delimiter = ',', required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Comma-separated occluder side fractions; defaults to 0, 0.1, ..., 1.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
}

fn read_synthetic_config(path: &Path) -> Result<SyntheticConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: SyntheticConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { config, out, seed } => {
            let cfg = match config {
                Some(p) => read_synthetic_config(&p)?,
                None => SyntheticConfig::default(),
            };
            let ds = generate_synthetic(&cfg, seed)?;
            save_dataset(&ds, &out)?;
            eprintln!("wrote {} samples to {}", ds.manifest.n_samples, out.display());
        }
        Command::Train { config, data, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            let Some(data) = data.or_else(|| cfg.dataset.clone()) else {
                bail!("no dataset: pass --data or set `dataset` in the config");
            };
            let Some(out) = out.or_else(|| cfg.output.clone()) else {
                bail!("no output directory: pass --out or set `output` in the config");
            };
            cfg.dataset = Some(data.clone());
            cfg.output = Some(out.clone());
            let ds = load_dataset(&data)?;
            let (_, report) = train_and_save(&cfg, &ds, &out)?;
            eprintln!(
                "{}: DSC {:.2} ± {:.2} %, ASD {:.3} ± {:.3} mm",
                report.model, report.average.dsc.mean, report.average.dsc.sd, report.average.asd_mm.mean, report.average.asd_mm.sd
            );
        }
        Command::Evaluate {
            weights,
            data,
            out,
            config,
        } => {
            let run_dir = weights.parent().unwrap_or(Path::new("."));
            let cfg_path = config.unwrap_or_else(|| run_dir.join("config.json"));
            let cfg = ExperimentConfig::load(&cfg_path)?;
            let ds = load_dataset(&data)?;
            let model = Model::load(&cfg, &ds.train_shapes(), ds.image_size(), &weights)?;
            let report = evaluate(&model, &ds, cfg.n_initial_shapes, cfg.seeds.eval)?;
            report.save(&out)?;
        }
        Command::Ablate {
            runs,
            data,
            out,
            seeds,
            fractions,
        } => {
            let ds = load_dataset(&data)?;
            let models = runs
                .iter()
                .map(|r| load_run(r, &ds).with_context(|| format!("loading run {}", r.display())))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Model> = models.iter().collect();
            let fractions = fractions.unwrap_or_else(default_fractions);
            let rows = ablate(&refs, &ds, &fractions, &seeds)?;
            write_ablation_csv(&out, &rows)?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
