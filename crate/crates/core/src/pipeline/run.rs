use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::config::{DatasetConfig, DpVariant, ExperimentConfig, Stage};
use super::report::{AuditReport, Campaign, CellFailure, ReportRow, Timings};
use crate::attack::{attack_once, build_attack_dataset, random_guess_baseline, AttackReport};
use crate::data::{load_csv, preprocess, split, Encoding, SplitBundle, TabularDataset};
use crate::dp::{accounting_schedule, calibrate_noise, dp_train, DpConfig, PrivacySpent};
use crate::error::{Error, Result};
use crate::explain::{explain_rows, ExplainContext, ExplanationMatrix, Method};
use crate::faithfulness::{evaluate_faithfulness, sample_positions, FaithfulnessConfig, FaithfulnessReport};
use crate::nn::{evaluate, train, MlpModel, TrainConfig};
use crate::noise::{perturb, NoiseSpec};
use crate::seed::derive_seed_str;
use crate::synth::{diagnostics, CopulaModel, DiagnosticScore};

/// A loaded, split and rescaled dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub name: String,
    pub bundle: SplitBundle,
}

pub fn split_seed(campaign_seed: u64, dataset: &str) -> u64 {
    derive_seed_str(campaign_seed, &format!("{dataset}/split"))
}

pub fn prepare_dataset(ds: &DatasetConfig, campaign_seed: u64) -> Result<Prepared> {
    let raw = load_csv(&ds.path, &ds.schema())?;
    let full = preprocess(&raw, &ds.preprocess_spec())?;
    let bundle = split(&full, split_seed(campaign_seed, &ds.name))?.refit_scaling();
    Ok(Prepared { name: ds.name.clone(), bundle })
}

/// Both auxiliary halves stacked: attack-train rows first.
pub fn stack_aux(bundle: &SplitBundle) -> (Array2<f64>, Vec<u8>, Vec<u64>) {
    let (a, b) = (&bundle.aux_attack_train, &bundle.aux_attack_test);
    let x = concatenate(Axis(0), &[a.x.view(), b.x.view()]).expect("aux halves share columns");
    let y = a.target.iter().chain(&b.target).copied().collect();
    let ids = a.record_ids.iter().chain(&b.record_ids).copied().collect();
    (x, y, ids)
}

const BUNDLE_PARTS: [&str; 3] = ["target_train", "aux_attack_train", "aux_attack_test"];

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    seed: u64,
    encoding: Encoding,
}

/// Writes the three parts as CSV plus `bundle.json` with the encoding.
pub fn save_bundle(bundle: &SplitBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let parts = [&bundle.target_train, &bundle.aux_attack_train, &bundle.aux_attack_test];
    for (name, part) in BUNDLE_PARTS.iter().zip(parts) {
        part.write_csv(&dir.join(format!("{name}.csv")))?;
    }
    let meta = BundleMeta { seed: bundle.seed, encoding: bundle.target_train.encoding.clone() };
    let path = dir.join("bundle.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_bundle(dir: &Path) -> Result<SplitBundle> {
    let path = dir.join("bundle.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: BundleMeta = serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.clone(), detail: e.to_string() })?;
    let read = |name: &str| TabularDataset::read_csv(&dir.join(format!("{name}.csv")), &meta.encoding);
    Ok(SplitBundle {
        target_train: read(BUNDLE_PARTS[0])?,
        aux_attack_train: read(BUNDLE_PARTS[1])?,
        aux_attack_test: read(BUNDLE_PARTS[2])?,
        seed: meta.seed,
    })
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: MlpModel,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub train_seconds: f64,
    pub privacy: Option<PrivacySpent>,
    pub diagnostics: Option<DiagnosticScore>,
    pub synth_ms_per_record: Option<f64>,
}

fn init_model(cfg: &ExperimentConfig, dataset: &str, d: usize) -> Result<MlpModel> {
    let layers = cfg.target_model.architecture.layers();
    MlpModel::new(d, &layers, derive_seed_str(cfg.seed, &format!("{dataset}/init")))
}

fn train_seed(cfg: &ExperimentConfig, dataset: &str) -> u64 {
    derive_seed_str(cfg.seed, &format!("{dataset}/train"))
}

fn accuracies(model: &MlpModel, train: &TabularDataset, bundle: &SplitBundle) -> Result<(f64, f64)> {
    let (x, y, _) = stack_aux(bundle);
    Ok((evaluate(model, train.x.view(), &train.target)?, evaluate(model, x.view(), &y)?))
}

/// Non-private model on the real training split.
pub fn train_baseline(cfg: &ExperimentConfig, p: &Prepared) -> Result<TrainedModel> {
    let tr = &p.bundle.target_train;
    let mut model = init_model(cfg, &p.name, tr.n_features())?;
    let hist = train(&mut model, tr.x.view(), &tr.target, &cfg.target_model.train, train_seed(cfg, &p.name))?;
    let (train_accuracy, test_accuracy) = accuracies(&model, tr, &p.bundle)?;
    Ok(TrainedModel {
        model,
        train_accuracy,
        test_accuracy,
        train_seconds: hist.seconds,
        privacy: None,
        diagnostics: None,
        synth_ms_per_record: None,
    })
}

/// Same initialization and optimizer settings as the baseline, trained on a
/// copula sample. Accuracy is measured on real data.
pub fn train_synthetic(cfg: &ExperimentConfig, p: &Prepared) -> Result<TrainedModel> {
    let real = &p.bundle.target_train;
    let start = Instant::now();
    let copula = CopulaModel::fit(real)?;
    let n = cfg.pre.sample_size.unwrap_or(real.len());
    let synth = copula.sample(n, derive_seed_str(cfg.seed, &format!("{}/copula", p.name)))?;
    let synth_ms = start.elapsed().as_secs_f64() * 1e3 / n as f64;
    let diag = diagnostics(real, &synth)?;
    let mut model = init_model(cfg, &p.name, real.n_features())?;
    let hist = train(&mut model, synth.x.view(), &synth.target, &cfg.target_model.train, train_seed(cfg, &p.name))?;
    let (train_accuracy, test_accuracy) = accuracies(&model, real, &p.bundle)?;
    Ok(TrainedModel {
        model,
        train_accuracy,
        test_accuracy,
        train_seconds: hist.seconds,
        privacy: None,
        diagnostics: Some(diag),
        synth_ms_per_record: Some(synth_ms),
    })
}

/// DP-SGD with the dataset's DP hyperparameters.
pub fn dp_variant_train(
    cfg: &ExperimentConfig,
    ds: &DatasetConfig,
    p: &Prepared,
    variant: DpVariant,
) -> Result<TrainedModel> {
    let tr = &p.bundle.target_train;
    let h = &ds.dp;
    let noise_multiplier = match variant {
        DpVariant::NoiseMultiplier(nm) => nm,
        DpVariant::EpsilonTarget(e) => {
            let (steps, q) = accounting_schedule(tr.len(), h.batch_size, h.epochs);
            calibrate_noise(e, steps, q, h.delta)?
        }
    };
    let train_cfg = TrainConfig {
        epochs: h.epochs,
        learning_rate: h.learning_rate,
        batch_size: h.batch_size,
        l2: 0.0,
        early_stopping: None,
    };
    let dp = DpConfig {
        noise_multiplier,
        l2_clip: h.l2_clip,
        microbatch_size: h.microbatch_size,
        delta: h.delta,
    };
    let mut model = init_model(cfg, &p.name, tr.n_features())?;
    let out = dp_train(&mut model, tr.x.view(), &tr.target, &train_cfg, &dp, train_seed(cfg, &p.name))?;
    if !out.clip_audit.holds(h.l2_clip) {
        return Err(Error::Config(format!(
            "clipping audit failed: max norm {} above {}",
            out.clip_audit.max_clipped_norm, h.l2_clip
        )));
    }
    let (train_accuracy, test_accuracy) = accuracies(&model, tr, &p.bundle)?;
    Ok(TrainedModel {
        model,
        train_accuracy,
        test_accuracy,
        train_seconds: out.history.seconds,
        privacy: Some(out.privacy),
        diagnostics: None,
        synth_ms_per_record: None,
    })
}

/// Explanations for both auxiliary halves, stacked.
pub fn explain_aux(
    cfg: &ExperimentConfig,
    p: &Prepared,
    model: &MlpModel,
    method: Method,
    ctx: &ExplainContext,
) -> Result<ExplanationMatrix> {
    let (x, _, ids) = stack_aux(&p.bundle);
    let names = p.bundle.target_train.encoding.feature_names().into_iter().map(str::to_string).collect();
    let seed = derive_seed_str(cfg.seed, &format!("{}/{method}/explain", p.name));
    explain_rows(model, x.view(), &ids, names, method, &cfg.explainer, ctx, seed)
}

/// Faithfulness on a sample of attack-test records, located in `expl` by record id.
pub fn faithfulness_on_test(
    model: &MlpModel,
    bundle: &SplitBundle,
    expl: &ExplanationMatrix,
    cfg: &FaithfulnessConfig,
) -> Result<FaithfulnessReport> {
    let test = &bundle.aux_attack_test;
    let index: BTreeMap<u64, usize> = expl.record_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let picks = sample_positions(test.len(), cfg);
    let rows = picks
        .iter()
        .map(|&i| {
            let id = test.record_ids[i];
            index.get(&id).copied().ok_or_else(|| Error::Config(format!("record {id} has no explanation")))
        })
        .collect::<Result<Vec<_>>>()?;
    let x = test.x.select(Axis(0), &picks);
    evaluate_faithfulness(model, x.view(), &expl.select(&rows), cfg)
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// One stage variant with its trained model; explanation noise is applied per
/// repetition for the post stage.
struct VariantRun<'a> {
    stage: Stage,
    label: String,
    trained: &'a TrainedModel,
    noise: Option<NoiseSpec>,
}

#[allow(clippy::too_many_arguments)]
fn run_explainer(
    cfg: &ExperimentConfig,
    ds: &DatasetConfig,
    p: &Prepared,
    v: &VariantRun<'_>,
    method: Method,
    clean: &ExplanationMatrix,
    out: &mut Vec<AuditReport>,
) -> Result<()> {
    let t = v.trained;
    let reps = cfg.repetitions;
    // Per repetition: (explanations, faithfulness, noise ms/record).
    let mut per_rep = Vec::with_capacity(reps);
    match &v.noise {
        None => {
            let f = faithfulness_on_test(&t.model, &p.bundle, clean, &cfg.faithfulness)?;
            for _ in 0..reps {
                per_rep.push((None, f.clone(), None));
            }
        }
        Some(spec) => {
            for rep in 0..reps {
                let seed = derive_seed_str(cfg.seed, &format!("{}/post/{}/{method}/{rep}", p.name, v.label));
                let noisy = perturb(clean, &NoiseSpec { seed, ..spec.clone() })?;
                let ms = noisy.meta.perturbation.as_ref().map(|r| r.ms_per_record);
                let f = faithfulness_on_test(&t.model, &p.bundle, &noisy, &cfg.faithfulness)?;
                per_rep.push((Some(noisy), f, ms));
            }
        }
    }
    for attribute in ds.attributes() {
        let mut reps_out = Vec::with_capacity(reps);
        for (rep, (noisy, faith, noise_ms)) in per_rep.iter().enumerate() {
            let expl = noisy.as_ref().unwrap_or(clean);
            let ads = build_attack_dataset(expl, &p.bundle, &attribute)?;
            let start = Instant::now();
            let r = attack_once(&ads, &cfg.attack, rep as u64)?;
            let attack_seconds = start.elapsed().as_secs_f64();
            let m = &r.metrics;
            let row = ReportRow {
                dataset: p.name.clone(),
                stage: v.stage,
                variant: v.label.clone(),
                explainer: method.to_string(),
                attribute: attribute.clone(),
                repetition: rep,
                attack_seed: r.seed,
                attack_epochs: r.epochs,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                attack_success: m.attack_success,
                precision_undefined: m.precision_undefined,
                recall_undefined: m.recall_undefined,
                tp: m.counts.tp,
                fp: m.counts.fp,
                fn_: m.counts.fn_,
                tn: m.counts.tn,
                random_guess: random_guess_baseline(&ads.test_y)?,
                random_guess_uniform: 0.5,
                faithfulness_correlation: finite(faith.correlation),
                faithfulness_estimate: finite(faith.estimate),
                sufficiency: finite(faith.sufficiency),
                train_accuracy: t.train_accuracy,
                test_accuracy: t.test_accuracy,
                epsilon: t.privacy.as_ref().and_then(|pr| pr.epsilon),
                noise_multiplier: t.privacy.as_ref().map(|pr| pr.noise_multiplier),
                data_validity: t.diagnostics.as_ref().map(|d| d.data_validity),
                data_structure: t.diagnostics.as_ref().map(|d| d.data_structure),
                model_digest: t.model.digest(),
            };
            let timings = Timings {
                train_seconds: t.train_seconds,
                explain_ms_per_record: clean.ms_per_record(),
                synth_ms_per_record: t.synth_ms_per_record,
                noise_ms_per_record: *noise_ms,
                attack_seconds,
            };
            reps_out.push(AuditReport { row, timings });
        }
        out.extend(reps_out);
    }
    Ok(())
}

fn cell_name(dataset: &str, stage: Stage, variant: &str, method: Option<Method>) -> String {
    match method {
        Some(m) => format!("{dataset}/{stage}/{variant}/{m}"),
        None => format!("{dataset}/{stage}/{variant}"),
    }
}

/// Runs every configured stage for every dataset. Failures are recorded per
/// cell and the campaign continues; the caller decides the exit status.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<Campaign> {
    cfg.validate()?;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let mut fail = |cell: String, e: Error| {
        log::error!("cell {cell} failed: {e}");
        failures.push(CellFailure { cell, error: e.to_string() });
    };

    for ds in &cfg.datasets {
        let prepared = match prepare_dataset(ds, cfg.seed) {
            Ok(p) => p,
            Err(e) => {
                fail(ds.name.clone(), e);
                continue;
            }
        };
        log::info!(
            "{}: {} train / {} attack-train / {} attack-test rows",
            ds.name,
            prepared.bundle.target_train.len(),
            prepared.bundle.aux_attack_train.len(),
            prepared.bundle.aux_attack_test.len()
        );
        let ctx_seed = derive_seed_str(cfg.seed, &format!("{}/background", ds.name));
        let ctx = ExplainContext::from_dataset(
            &prepared.bundle.target_train,
            cfg.explainer.shap_background_size,
            ctx_seed,
        );
        let baseline = match train_baseline(cfg, &prepared) {
            Ok(b) => b,
            Err(e) => {
                fail(cell_name(&ds.name, Stage::Baseline, "none", None), e);
                continue;
            }
        };
        // Clean baseline explanations are shared by the baseline and post stages.
        let mut baseline_expl: BTreeMap<Method, ExplanationMatrix> = BTreeMap::new();

        let mut models: Vec<(Stage, String, Result<TrainedModel>, Option<NoiseSpec>)> = Vec::new();
        for &stage in &cfg.stages {
            match stage {
                Stage::Baseline => models.push((stage, "none".into(), Ok(baseline.clone()), None)),
                Stage::Pre => {
                    for g in &cfg.pre.generators {
                        log::info!("{}: fitting {g}", ds.name);
                        models.push((stage, g.clone(), train_synthetic(cfg, &prepared), None));
                    }
                }
                Stage::In => {
                    for v in cfg.in_model.variants() {
                        log::info!("{}: DP training {}", ds.name, v.label());
                        models.push((stage, v.label(), dp_variant_train(cfg, ds, &prepared, v), None));
                    }
                }
                Stage::Post => match cfg.post.specs() {
                    Ok(specs) => {
                        for s in specs {
                            models.push((stage, s.label(), Ok(baseline.clone()), Some(s)));
                        }
                    }
                    Err(e) => fail(cell_name(&ds.name, stage, "*", None), e),
                },
            }
        }

        for (stage, label, trained, noise) in models {
            let trained = match trained {
                Ok(t) => t,
                Err(e) => {
                    fail(cell_name(&ds.name, stage, &label, None), e);
                    continue;
                }
            };
            let shares_baseline = matches!(stage, Stage::Baseline | Stage::Post);
            let run = VariantRun { stage, label: label.clone(), trained: &trained, noise };
            for &method in &cfg.explainers {
                let cell = cell_name(&ds.name, stage, &label, Some(method));
                log::info!("cell {cell}");
                let clean = if shares_baseline {
                    match baseline_expl.get(&method) {
                        Some(e) => Ok(e.clone()),
                        None => explain_aux(cfg, &prepared, &baseline.model, method, &ctx)
                            .inspect(|e| {
                                baseline_expl.insert(method, e.clone());
                            }),
                    }
                } else {
                    explain_aux(cfg, &prepared, &trained.model, method, &ctx)
                };
                let result = clean.and_then(|clean| {
                    let mut rows = Vec::new();
                    run_explainer(cfg, ds, &prepared, &run, method, &clean, &mut rows).map(|_| rows)
                });
                match result {
                    Ok(rows) => reports.extend(rows),
                    Err(e) => fail(cell, e),
                }
            }
        }
    }
    Ok(Campaign { name: cfg.name.clone(), reports, failures })
}

/// Mean attack report for one set of explanations, with seeds `0..repetitions`.
pub fn attack_report(expl: &ExplanationMatrix, bundle: &SplitBundle, attribute: &str, cfg: &ExperimentConfig) -> Result<AttackReport> {
    let ads = build_attack_dataset(expl, bundle, attribute)?;
    let seeds: Vec<u64> = (0..cfg.repetitions as u64).collect();
    crate::attack::run_attack(&ads, &cfg.attack, &seeds)
}
