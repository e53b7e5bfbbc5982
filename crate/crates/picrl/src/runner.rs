//! Pipeline orchestration: workload preparation, predictor training,
//! policy pretraining and the online run, per seed, with all artifacts
//! (step logs, checkpoints, resolved config, summary) written to the run
//! directory. Runs are reproducible from (config, seed list) alone.

use crate::checkpoint;
use crate::config::{ConfigError, ExperimentConfig, PolicyChoice, WorkloadSource};
use crate::trace_io;
use picrl_core::agent::{pretrain_offline, AgentConfig, OnlineAgent};
use picrl_core::baselines::{
    run_baseline, Baseline, ConformalCalibrator, GammaSchedule, NaiveMixtureLearner, Oracle,
    RuleAutoscaler, ThompsonSampler,
};
use picrl_core::controller::{run_online, PolicyDriver, RunOutput, StepLog};
use picrl_core::predictor::{self, PredictorModel};
use picrl_core::workload::{
    generate_bursty, generate_drift, generate_seasonal, normalize_and_split, NormalizedSplit,
};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("phase `{phase}` failed: {cause}")]
    Phase { phase: &'static str, cause: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn phase_err<E: std::fmt::Display>(phase: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Phase {
        phase,
        cause: e.to_string(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Per-seed outcome metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub mae: f64,
    pub regret: f64,
    pub censoring_rate: f64,
    pub over_provision_rate: f64,
    pub shortage_steps: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct MetricAggregate {
    pub mae: f64,
    pub regret: f64,
    pub censoring_rate: f64,
    pub over_provision_rate: f64,
    pub shortage_steps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: usize,
    pub regret: f64,
}

/// Ablation-derived switches echoed into the summary for auditability.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct FlagSummary {
    pub ablation: Option<String>,
    pub uncertainty_disabled: bool,
    pub censored_reward_disabled: bool,
    pub pessimism_disabled: bool,
    pub risk_buffer_disabled: bool,
    pub kl_disabled: bool,
    pub ema_disabled: bool,
    pub pretrain_skipped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub config_hash: String,
    pub seed_count: usize,
    pub per_seed: Vec<SeedSummary>,
    /// Mean over seeds, metric by metric.
    pub aggregate: MetricAggregate,
    /// Mean cumulative regret sampled along the horizon.
    pub regret_curve: Vec<CurvePoint>,
    pub flags: FlagSummary,
    pub config: ExperimentConfig,
}

/// Builds the (possibly drifted) raw trace and its normalized split for
/// one seed. Generator sources use the seed directly; CSV sources ignore
/// it by construction.
pub fn prepare_workload(cfg: &ExperimentConfig, seed: u64) -> Result<NormalizedSplit, PipelineError> {
    let mut trace = match &cfg.workload.source {
        WorkloadSource::Seasonal {
            length,
            period,
            noise_cv,
        } => generate_seasonal(*length, *period, *noise_cv, seed).map_err(phase_err("workload"))?,
        WorkloadSource::Bursty {
            length,
            target_pmr,
            target_cv,
        } => generate_bursty(*length, *target_pmr, *target_cv, seed).map_err(phase_err("workload"))?,
        WorkloadSource::Csv { path } => {
            trace_io::ingest_csv(Path::new(path)).map_err(phase_err("workload"))?
        }
    };
    if let Some(drift) = &cfg.workload.drift {
        let at = ((trace.len() as f64 * drift.at_fraction) as usize).clamp(1, trace.len() - 1);
        trace = generate_drift(&trace, at, drift.scale);
    }
    normalize_and_split(&trace, &cfg.workload.split.into()).map_err(phase_err("workload"))
}

/// The observation window is warm-started from the most recent history
/// available before the online phase: the tail of train++val.
fn warm_window(split: &NormalizedSplit, window_len: usize) -> Vec<f64> {
    let mut hist: Vec<f64> = split
        .train
        .demands
        .iter()
        .chain(split.val.demands.iter())
        .cloned()
        .collect();
    if hist.len() < window_len {
        let mut padded = vec![0.5; window_len - hist.len()];
        padded.append(&mut hist);
        hist = padded;
    }
    hist[hist.len() - window_len..].to_vec()
}

/// Phase 1 for one seed, honoring `reuse_predictor`.
pub fn predictor_phase(
    cfg: &ExperimentConfig,
    split: &NormalizedSplit,
    seed: u64,
    out_dir: &Path,
) -> Result<PredictorModel, PipelineError> {
    let path = out_dir.join(format!("predictor_seed{seed}.json"));
    if cfg.experiment.reuse_predictor && path.exists() {
        return checkpoint::load_predictor(&path).map_err(phase_err("train-predictor"));
    }
    let pcfg = cfg.predictor.to_core(seed);
    let model = predictor::train(
        &split.train.demands,
        split.train.context.as_deref(),
        &split.val.demands,
        split.val.context.as_deref(),
        &pcfg,
    )
    .map_err(phase_err("train-predictor"))?;
    checkpoint::save_predictor(&path, &model).map_err(phase_err("train-predictor"))?;
    Ok(model)
}

/// Phases 2+3 for one seed of the picrl policy.
#[allow(clippy::too_many_arguments)]
fn picrl_run(
    cfg: &ExperimentConfig,
    split: &NormalizedSplit,
    model: &PredictorModel,
    agent_cfg: &AgentConfig,
    online: &[f64],
    online_ctx: Option<&[Vec<f64>]>,
    seed: u64,
    out_dir: &Path,
) -> Result<RunOutput, PipelineError> {
    let ctrl = cfg.controller.to_core()?;
    let est_cfg = cfg.estimator.to_core();
    let pretrained = pretrain_offline(
        &split.train.demands,
        split.train.context.as_deref(),
        model,
        cfg.predictor.window_len,
        &ctrl,
        &est_cfg,
        agent_cfg,
    )
    .map_err(phase_err("pretrain-policy"))?;
    checkpoint::save_policy(
        &out_dir.join(format!("policy_seed{seed}.json")),
        &pretrained.policy,
    )
    .map_err(phase_err("pretrain-policy"))?;
    checkpoint::save_value(
        &out_dir.join(format!("value_seed{seed}.json")),
        &pretrained.value,
    )
    .map_err(phase_err("pretrain-policy"))?;

    let mut agent = OnlineAgent::from_nets(pretrained.policy, pretrained.value, agent_cfg.clone());
    let warm = warm_window(split, cfg.predictor.window_len);
    run_online(
        online,
        online_ctx,
        model,
        PolicyDriver::Agent(&mut agent),
        &warm,
        &ctrl,
        &est_cfg,
        seed,
    )
    .map_err(phase_err("run-online"))
}

fn baseline_run(
    cfg: &ExperimentConfig,
    split: &NormalizedSplit,
    model: Option<&PredictorModel>,
    online: &[f64],
    online_ctx: Option<&[Vec<f64>]>,
    seed: u64,
) -> Result<RunOutput, PipelineError> {
    let cost = cfg.controller.to_core()?.cost;
    let train_mean = split.train.demands.iter().sum::<f64>() / split.train.demands.len() as f64;
    let mut baseline = match cfg.experiment.policy {
        PolicyChoice::Naive => Baseline::Naive(NaiveMixtureLearner::new(
            train_mean,
            1.0,
            GammaSchedule::default(),
            &split.train.demands,
        )),
        PolicyChoice::Conformal => Baseline::Conformal(ConformalCalibrator::new(0.9)),
        PolicyChoice::Ts => Baseline::Thompson(ThompsonSampler::new(seed)),
        PolicyChoice::Rule => Baseline::Rule(RuleAutoscaler::default()),
        PolicyChoice::Oracle => Baseline::Oracle(Oracle::for_evaluation()),
        PolicyChoice::Picrl => unreachable!("handled by picrl_run"),
    };
    let warm = warm_window(split, cfg.predictor.window_len);
    run_baseline(
        online,
        online_ctx,
        model.map(|m| m as &dyn predictor::Forecaster),
        &mut baseline,
        &warm,
        &cost,
    )
    .map_err(phase_err("run-online"))
}

/// Per-step log CSV, exact column order
/// `t,d_true,a,y,c,mu,sigma,k,eta,m,b,reward,regret_cum`.
pub fn step_log_csv(steps: &[StepLog]) -> String {
    let mut out = String::from("t,d_true,a,y,c,mu,sigma,k,eta,m,b,reward,regret_cum\n");
    for s in steps {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            s.t,
            s.d_true,
            s.a,
            s.y,
            u8::from(s.c),
            s.mu,
            s.sigma,
            s.k,
            s.eta,
            s.m,
            s.b,
            s.reward,
            s.regret_cum
        ));
    }
    out
}

fn summarize_seed(seed: u64, out: &RunOutput) -> SeedSummary {
    SeedSummary {
        seed,
        mae: out.ledger.mae().unwrap_or(0.0),
        regret: out.ledger.regret(),
        censoring_rate: out.ledger.censoring_rate(),
        over_provision_rate: out.ledger.over_provision_rate(),
        shortage_steps: out.ledger.censored_steps(),
        steps: out.ledger.len(),
    }
}

const CURVE_POINTS: usize = 100;

fn mean_regret_curve(runs: &[RunOutput]) -> Vec<CurvePoint> {
    let horizon = runs.iter().map(|r| r.steps.len()).min().unwrap_or(0);
    if horizon == 0 {
        return Vec::new();
    }
    let stride = (horizon / CURVE_POINTS).max(1);
    let mut curve = Vec::new();
    let mut t = stride - 1;
    while t < horizon {
        let mean = runs.iter().map(|r| r.steps[t].regret_cum).sum::<f64>() / runs.len() as f64;
        curve.push(CurvePoint { t, regret: mean });
        t += stride;
    }
    curve
}

/// One seed of the configured policy; returns the episode output and
/// writes checkpoints (step logs are the caller's job).
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<RunOutput, PipelineError> {
    let split = prepare_workload(cfg, seed)?;
    let online_len = cfg
        .experiment
        .online_steps
        .map(|n| n.min(split.test.demands.len()))
        .unwrap_or(split.test.demands.len());
    let online = &split.test.demands[..online_len];
    let online_ctx_owned = split.test.context.as_ref().map(|c| c[..online_len].to_vec());
    let online_ctx = online_ctx_owned.as_deref();

    let needs_predictor = matches!(
        cfg.experiment.policy,
        PolicyChoice::Picrl | PolicyChoice::Conformal
    );
    let model = if needs_predictor {
        Some(predictor_phase(cfg, &split, seed, out_dir)?)
    } else {
        None
    };

    match cfg.experiment.policy {
        PolicyChoice::Picrl => {
            let agent_cfg = cfg.agent.to_core(seed, cfg.ablation_flags());
            picrl_run(
                cfg,
                &split,
                model.as_ref().expect("predictor trained"),
                &agent_cfg,
                online,
                online_ctx,
                seed,
                out_dir,
            )
        }
        _ => baseline_run(cfg, &split, model.as_ref(), online, online_ctx, seed),
    }
}

/// Full experiment: every seed, all artifacts, aggregate summary.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary, PipelineError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let defaults_path = out_dir.join("defaults.json");
    fs::write(&defaults_path, cfg.resolved_json()).map_err(io_err(&defaults_path))?;

    let mut per_seed = Vec::new();
    let mut runs = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let out = run_seed(cfg, seed, out_dir)?;
        if cfg.experiment.write_step_logs {
            let path = out_dir.join(format!("steps_seed{seed}.csv"));
            fs::write(&path, step_log_csv(&out.steps)).map_err(io_err(&path))?;
        }
        per_seed.push(summarize_seed(seed, &out));
        runs.push(out);
    }

    let n = per_seed.len() as f64;
    let aggregate = MetricAggregate {
        mae: per_seed.iter().map(|s| s.mae).sum::<f64>() / n,
        regret: per_seed.iter().map(|s| s.regret).sum::<f64>() / n,
        censoring_rate: per_seed.iter().map(|s| s.censoring_rate).sum::<f64>() / n,
        over_provision_rate: per_seed.iter().map(|s| s.over_provision_rate).sum::<f64>() / n,
        shortage_steps: per_seed.iter().map(|s| s.shortage_steps as f64).sum::<f64>() / n,
    };
    let flags_src = cfg.ablation_flags();
    let summary = RunSummary {
        policy: cfg.experiment.policy.name().to_string(),
        config_hash: cfg.hash(),
        seed_count: per_seed.len(),
        per_seed,
        aggregate,
        regret_curve: mean_regret_curve(&runs),
        flags: FlagSummary {
            ablation: cfg.experiment.ablation.map(|a| a.name().to_string()),
            uncertainty_disabled: flags_src.no_uncertainty,
            censored_reward_disabled: flags_src.no_censored_reward,
            pessimism_disabled: flags_src.no_pessimism,
            risk_buffer_disabled: flags_src.no_risk_buffer,
            kl_disabled: flags_src.no_kl,
            ema_disabled: flags_src.no_ema,
            pretrain_skipped: flags_src.skip_pretrain,
        },
        config: cfg.clone(),
    };
    let summary_path = out_dir.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&summary_path, json).map_err(io_err(&summary_path))?;
    Ok(summary)
}

/// Step-log path for a seed inside a run directory.
pub fn steps_path(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("steps_seed{seed}.csv"))
}
