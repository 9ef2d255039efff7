use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use xpaudit::attack::{build_attack_dataset, run_attack};
use xpaudit::explain::{ExplainContext, ExplanationMatrix, Method};
use xpaudit::nn::MlpModel;
use xpaudit::noise::{perturb, NoiseSpec};
use xpaudit::pipeline::{
    dp_variant_train, explain_aux, faithfulness_on_test, load_bundle, prepare_dataset, read_rows, run_pipeline,
    save_bundle, stage_summary, summarize, train_baseline, write_summary, DatasetConfig, DpVariant, ExperimentConfig,
    Prepared,
};
use xpaudit::seed::derive_seed_str;
use xpaudit::synth::{diagnostics, CopulaModel};
use xpaudit::{Error, Result};

#[derive(Parser)]
#[command(name = "xpaudit", version, about = "Attribute-inference audits of model explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Campaign config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Dataset name from the config; defaults to the first one.
    #[arg(long)]
    dataset: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<(ExperimentConfig, DatasetConfig)> {
        let cfg = ExperimentConfig::load(&self.config)?;
        let ds = match &self.dataset {
            None => cfg.datasets[0].clone(),
            Some(name) => cfg
                .datasets
                .iter()
                .find(|d| &d.name == name)
                .cloned()
                .ok_or_else(|| Error::Config(format!("dataset `{name}` not in config")))?,
        };
        Ok((cfg, ds))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load, preprocess and split a dataset into a bundle directory.
    Prep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the non-private target model on a bundle.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with DP-SGD using the dataset's DP hyperparameters.
    DpTrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, conflicts_with = "noise_multiplier", required_unless_present = "noise_multiplier")]
        epsilon_target: Option<f64>,
        #[arg(long)]
        noise_multiplier: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a Gaussian copula to the training split and sample from it.
    Synth {
        #[arg(long)]
        bundle: PathBuf,
        /// Rows to sample; defaults to the training-split size.
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explain both auxiliary halves with one method.
    Explain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add calibrated or random noise to an explanation matrix.
    Perturb {
        #[arg(long)]
        input: PathBuf,
        /// dp-laplace, dp-gaussian, random-laplace or random-gaussian.
        #[arg(long)]
        variant: NoiseSpec,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-6)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the attack model on explanations and report its metrics.
    Attack {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        explanations: PathBuf,
        #[arg(long)]
        attribute: String,
    },
    /// Faithfulness metrics on a sample of attack-test records.
    Metrics {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        explanations: PathBuf,
    },
    /// Run the full campaign described by a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare PET cells against the baseline from a report CSV.
    Summarize {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn prepared(ds: &DatasetConfig, bundle: &Path) -> Result<Prepared> {
    Ok(Prepared { name: ds.name.clone(), bundle: load_bundle(bundle)? })
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    model: String,
    digest: String,
    train_accuracy: f64,
    test_accuracy: f64,
    train_seconds: f64,
    privacy: Option<&'a xpaudit::dp::PrivacySpent>,
}

fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Prep { cfg, out } => {
            let (cfg, ds) = cfg.load()?;
            let p = prepare_dataset(&ds, cfg.seed)?;
            save_bundle(&p.bundle, &out)?;
            println!(
                "{}: {} / {} / {} rows written to {}",
                ds.name,
                p.bundle.target_train.len(),
                p.bundle.aux_attack_train.len(),
                p.bundle.aux_attack_test.len(),
                out.display()
            );
        }
        Command::Train { cfg, bundle, out } => {
            let (cfg, ds) = cfg.load()?;
            let t = train_baseline(&cfg, &prepared(&ds, &bundle)?)?;
            t.model.save(&out)?;
            print_json(&TrainSummary {
                model: out.display().to_string(),
                digest: t.model.digest(),
                train_accuracy: t.train_accuracy,
                test_accuracy: t.test_accuracy,
                train_seconds: t.train_seconds,
                privacy: None,
            })?;
        }
        Command::DpTrain { cfg, bundle, epsilon_target, noise_multiplier, out } => {
            let (cfg, ds) = cfg.load()?;
            let variant = match (epsilon_target, noise_multiplier) {
                (Some(e), None) => DpVariant::EpsilonTarget(e),
                (None, Some(n)) => DpVariant::NoiseMultiplier(n),
                _ => return Err(Error::Config("give exactly one of --epsilon-target and --noise-multiplier".into())),
            };
            let t = dp_variant_train(&cfg, &ds, &prepared(&ds, &bundle)?, variant)?;
            t.model.save(&out)?;
            print_json(&TrainSummary {
                model: out.display().to_string(),
                digest: t.model.digest(),
                train_accuracy: t.train_accuracy,
                test_accuracy: t.test_accuracy,
                train_seconds: t.train_seconds,
                privacy: t.privacy.as_ref(),
            })?;
        }
        Command::Synth { bundle, rows, seed, out } => {
            let b = load_bundle(&bundle)?;
            let real = &b.target_train;
            let copula = CopulaModel::fit(real)?;
            let synth = copula.sample(rows.unwrap_or(real.len()), seed)?;
            synth.write_csv(&out)?;
            print_json(&diagnostics(real, &synth)?)?;
        }
        Command::Explain { cfg, bundle, model, method, out } => {
            let (cfg, ds) = cfg.load()?;
            let p = prepared(&ds, &bundle)?;
            let m = MlpModel::load(&model)?;
            let ctx = ExplainContext::from_dataset(
                &p.bundle.target_train,
                cfg.explainer.shap_background_size,
                derive_seed_str(cfg.seed, &format!("{}/background", ds.name)),
            );
            let e = explain_aux(&cfg, &p, &m, method, &ctx)?;
            e.write(&out)?;
            println!("{} records, {:.3} ms/record", e.len(), e.ms_per_record());
        }
        Command::Perturb { input, variant, epsilon, delta, seed, out } => {
            let e = ExplanationMatrix::read(&input)?;
            let spec = NoiseSpec { epsilon, delta, seed, ..variant };
            let noisy = perturb(&e, &spec)?;
            noisy.write(&out)?;
            if let Some(r) = &noisy.meta.perturbation {
                print_json(r)?;
            }
        }
        Command::Attack { cfg, bundle, explanations, attribute } => {
            let (cfg, _) = cfg.load()?;
            let b = load_bundle(&bundle)?;
            let e = ExplanationMatrix::read(&explanations)?;
            let ads = build_attack_dataset(&e, &b, &attribute)?;
            let seeds: Vec<u64> = (0..cfg.repetitions as u64).collect();
            print_json(&run_attack(&ads, &cfg.attack, &seeds)?)?;
        }
        Command::Metrics { cfg, bundle, model, explanations } => {
            let (cfg, _) = cfg.load()?;
            let b = load_bundle(&bundle)?;
            let m = MlpModel::load(&model)?;
            let e = ExplanationMatrix::read(&explanations)?;
            print_json(&faithfulness_on_test(&m, &b, &e, &cfg.faithfulness)?)?;
        }
        Command::Run { config, output_dir, repetitions, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            if let Some(r) = repetitions {
                cfg.repetitions = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let campaign = run_pipeline(&cfg)?;
            campaign.emit(&cfg.output_dir)?;
            println!(
                "{} cells, {} rows, {} failed; reports in {}",
                campaign.cell_count(),
                campaign.reports.len(),
                campaign.failures.len(),
                cfg.output_dir.display()
            );
            for f in &campaign.failures {
                eprintln!("failed: {} ({})", f.cell, f.error);
            }
            return Ok(campaign.succeeded());
        }
        Command::Summarize { report, out } => {
            let rows = read_rows(&report)?;
            let summary = summarize(&rows)?;
            write_summary(&out, &summary)?;
            let stages = stage_summary(&summary);
            write_json(&out.with_extension("stages.json"), &stages)?;
            for s in &stages {
                println!(
                    "{}: {}/{} cells mitigated ({:.1}%)",
                    s.stage,
                    s.mitigated,
                    s.cells,
                    100.0 * s.fraction_mitigated
                );
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
