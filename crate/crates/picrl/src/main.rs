//! `picrl` — trace generation, training, online runs, ablations,
//! verification and reporting for provisioning under censored feedback.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error,
//! 3 verification FAIL.

use clap::{Args, Parser, Subcommand};
use picrl::checkpoint;
use picrl::config::{AblationChoice, ExperimentConfig, PolicyChoice};
use picrl::report::generate_report;
use picrl::runner::{self, run_pipeline};
use picrl::trace_io;
use picrl::verify::{render_table, verify, VerifyCheck};
use picrl_core::agent::OnlineAgent;
use picrl_core::controller::{run_online, PolicyDriver};
use picrl_core::workload::{generate_bursty, generate_drift, generate_seasonal};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "picrl", version, about = "Closed-loop resource provisioning under censored feedback")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic trace CSV plus an achieved-statistics sidecar.
    GenTrace {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Phase 1 only: train the probabilistic predictor for every seed.
    TrainPredictor(ConfigArgs),
    /// Phase 2 only: pretrain policy/value nets from saved predictors.
    PretrainPolicy(ConfigArgs),
    /// Phase 3 only: online run from saved checkpoints.
    RunOnline(ConfigArgs),
    /// Full pipeline: train → pretrain → run online, per seed.
    Pipeline(PipelineArgs),
    /// Numerical verification: prop1 | prop2 | equilibrium | stability.
    Verify {
        /// Which check to run.
        which: String,
        /// Write the verdict JSON here as well as printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full configuration plus every ablation A1..A7 and compare.
    Ablate(ConfigArgs),
    /// Aggregate completed runs into comparison CSVs.
    Report {
        /// Run directories holding summary.json and step logs.
        run_dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    base: ConfigArgs,
    /// Run a single ablation (A1..A7) instead of the configured one.
    #[arg(long)]
    ablate: Option<String>,
    /// Override the configured policy (naive|conformal|ts|rule|picrl|oracle).
    #[arg(long)]
    policy: Option<String>,
    /// Reuse predictor checkpoints already present in the output dir.
    #[arg(long)]
    reuse_predictor: bool,
}

#[derive(Subcommand)]
enum GenKind {
    /// Heavy-tailed quasi-periodic trace tuned to PMR and CV targets.
    Bursty {
        #[arg(long)]
        len: usize,
        #[arg(long)]
        pmr: f64,
        #[arg(long)]
        cv: f64,
        #[arg(long)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
        /// Multiply demands by SCALE from fraction AT of the trace on.
        #[arg(long)]
        drift_at: Option<f64>,
        #[arg(long)]
        drift_scale: Option<f64>,
    },
    /// Sinusoid-plus-noise trace with a fixed period.
    Seasonal {
        #[arg(long)]
        len: usize,
        #[arg(long)]
        period: usize,
        #[arg(long, default_value_t = 0.2)]
        noise_cv: f64,
        #[arg(long)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn load_config(args: &ConfigArgs) -> Result<(ExperimentConfig, PathBuf), String> {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(|e| e.to_string())?;
    if let Some(dir) = &args.out_dir {
        cfg.experiment.out_dir = dir.display().to_string();
    }
    let out_dir = PathBuf::from(&cfg.experiment.out_dir);
    Ok((cfg, out_dir))
}

fn cmd_gen_trace(kind: GenKind) -> Result<(), String> {
    let (trace, out, period) = match kind {
        GenKind::Bursty {
            len,
            pmr,
            cv,
            seed,
            out,
            drift_at,
            drift_scale,
        } => {
            let mut trace = generate_bursty(len, pmr, cv, seed).map_err(|e| e.to_string())?;
            if let (Some(at), Some(scale)) = (drift_at, drift_scale) {
                let idx = ((len as f64 * at) as usize).clamp(1, len - 1);
                trace = generate_drift(&trace, idx, scale);
            }
            (trace, out, None)
        }
        GenKind::Seasonal {
            len,
            period,
            noise_cv,
            seed,
            out,
        } => {
            let trace =
                generate_seasonal(len, period, noise_cv, seed).map_err(|e| e.to_string())?;
            (trace, out, Some(period))
        }
    };
    trace_io::write_trace_csv(&out, &trace).map_err(|e| e.to_string())?;
    let sidecar = trace_io::sidecar_for(&trace, period);
    let sidecar_path = out.with_extension("stats.json");
    trace_io::write_sidecar(&sidecar_path, &sidecar).map_err(|e| e.to_string())?;
    println!(
        "wrote {} ({} steps) and {} (pmr {:.3}, cv {:.3})",
        out.display(),
        trace.len(),
        sidecar_path.display(),
        sidecar.pmr,
        sidecar.cv
    );
    Ok(())
}

fn cmd_train_predictor(args: ConfigArgs) -> Result<(), String> {
    let (cfg, out_dir) = load_config(&args)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
    for &seed in &cfg.experiment.seeds {
        let split = runner::prepare_workload(&cfg, seed).map_err(|e| e.to_string())?;
        let model =
            runner::predictor_phase(&cfg, &split, seed, &out_dir).map_err(|e| e.to_string())?;
        println!(
            "seed {seed}: best val NLL {:.4}, val MAE {:.4} → predictor_seed{seed}.json",
            model.meta.best_val_nll, model.meta.val_mae
        );
    }
    Ok(())
}

fn cmd_pretrain_policy(args: ConfigArgs) -> Result<(), String> {
    let (cfg, out_dir) = load_config(&args)?;
    if cfg.experiment.policy != PolicyChoice::Picrl {
        return Err("pretrain-policy applies to the picrl policy only".into());
    }
    for &seed in &cfg.experiment.seeds {
        let split = runner::prepare_workload(&cfg, seed).map_err(|e| e.to_string())?;
        let pred_path = out_dir.join(format!("predictor_seed{seed}.json"));
        let model = checkpoint::load_predictor(&pred_path).map_err(|e| {
            format!("{e}; run `picrl train-predictor` first")
        })?;
        let ctrl = cfg.controller.to_core().map_err(|e| e.to_string())?;
        let out = picrl_core::agent::pretrain_offline(
            &split.train.demands,
            split.train.context.as_deref(),
            &model,
            cfg.predictor.window_len,
            &ctrl,
            &cfg.estimator.to_core(),
            &cfg.agent.to_core(seed, cfg.ablation_flags()),
        )
        .map_err(|e| e.to_string())?;
        checkpoint::save_policy(&out_dir.join(format!("policy_seed{seed}.json")), &out.policy)
            .map_err(|e| e.to_string())?;
        checkpoint::save_value(&out_dir.join(format!("value_seed{seed}.json")), &out.value)
            .map_err(|e| e.to_string())?;
        let curve = &out.value_loss_curve;
        let drop = if curve.len() >= 2 && curve[0] > 0.0 {
            100.0 * (1.0 - curve.last().unwrap() / curve[0])
        } else {
            0.0
        };
        println!("seed {seed}: value loss drop {drop:.1}% → policy/value checkpoints");
    }
    Ok(())
}

fn cmd_run_online(args: ConfigArgs) -> Result<(), String> {
    let (cfg, out_dir) = load_config(&args)?;
    if cfg.experiment.policy != PolicyChoice::Picrl {
        // Baselines have no checkpoints; the pipeline path covers them.
        return run_pipeline(&cfg, &out_dir).map(|_| ()).map_err(|e| e.to_string());
    }
    for &seed in &cfg.experiment.seeds {
        let split = runner::prepare_workload(&cfg, seed).map_err(|e| e.to_string())?;
        let model = checkpoint::load_predictor(&out_dir.join(format!("predictor_seed{seed}.json")))
            .map_err(|e| format!("{e}; run `picrl train-predictor` first"))?;
        let policy = checkpoint::load_policy(&out_dir.join(format!("policy_seed{seed}.json")))
            .map_err(|e| format!("{e}; run `picrl pretrain-policy` first"))?;
        let value = checkpoint::load_value(&out_dir.join(format!("value_seed{seed}.json")))
            .map_err(|e| format!("{e}; run `picrl pretrain-policy` first"))?;

        let online_len = cfg
            .experiment
            .online_steps
            .map(|n| n.min(split.test.demands.len()))
            .unwrap_or(split.test.demands.len());
        let online = &split.test.demands[..online_len];
        let ctx_owned = split.test.context.as_ref().map(|c| c[..online_len].to_vec());
        let ctrl = cfg.controller.to_core().map_err(|e| e.to_string())?;
        let mut agent =
            OnlineAgent::from_nets(policy, value, cfg.agent.to_core(seed, cfg.ablation_flags()));
        let mut warm: Vec<f64> = split
            .train
            .demands
            .iter()
            .chain(split.val.demands.iter())
            .cloned()
            .collect();
        let wl = cfg.predictor.window_len;
        if warm.len() < wl {
            warm.splice(0..0, std::iter::repeat_n(0.5, wl - warm.len()));
        }
        let warm = warm[warm.len() - wl..].to_vec();
        let out = run_online(
            online,
            ctx_owned.as_deref(),
            &model,
            PolicyDriver::Agent(&mut agent),
            &warm,
            &ctrl,
            &cfg.estimator.to_core(),
            seed,
        )
        .map_err(|e| e.to_string())?;
        let path = runner::steps_path(&out_dir, seed);
        std::fs::write(&path, runner::step_log_csv(&out.steps)).map_err(|e| e.to_string())?;
        println!(
            "seed {seed}: regret {:.3}, MAE {:.4}, censor rate {:.3} → {}",
            out.ledger.regret(),
            out.ledger.mae().unwrap_or(0.0),
            out.ledger.censoring_rate(),
            path.display()
        );
    }
    Ok(())
}

fn cmd_pipeline(args: PipelineArgs) -> Result<(), String> {
    let (mut cfg, out_dir) = load_config(&args.base)?;
    if let Some(ablate) = &args.ablate {
        cfg.experiment.ablation = Some(AblationChoice::parse(ablate).map_err(|e| e.to_string())?);
    }
    if let Some(policy) = &args.policy {
        cfg.experiment.policy = PolicyChoice::parse(policy).map_err(|e| e.to_string())?;
    }
    if args.reuse_predictor {
        cfg.experiment.reuse_predictor = true;
    }
    let summary = run_pipeline(&cfg, &out_dir).map_err(|e| e.to_string())?;
    println!(
        "policy {}: mean regret {:.3}, mean MAE {:.4}, censor rate {:.3} over {} seed(s) → {}",
        summary.policy,
        summary.aggregate.regret,
        summary.aggregate.mae,
        summary.aggregate.censoring_rate,
        summary.seed_count,
        out_dir.join("summary.json").display()
    );
    Ok(())
}

fn cmd_ablate(args: ConfigArgs) -> Result<(), String> {
    let (cfg, out_dir) = load_config(&args)?;
    if cfg.experiment.policy != PolicyChoice::Picrl {
        return Err("ablate applies to the picrl policy only".into());
    }
    let variants: Vec<(String, Option<AblationChoice>)> = std::iter::once(("full".to_string(), None))
        .chain(
            [
                AblationChoice::A1,
                AblationChoice::A2,
                AblationChoice::A3,
                AblationChoice::A4,
                AblationChoice::A5,
                AblationChoice::A6,
                AblationChoice::A7,
            ]
            .into_iter()
            .map(|a| (a.name().to_string(), Some(a))),
        )
        .collect();

    let mut table = String::from("variant,mae,regret,censor_rate,mae_vs_full_pct\n");
    let mut full_mae = None;
    for (name, ablation) in variants {
        let mut vcfg = cfg.clone();
        vcfg.experiment.ablation = ablation;
        let vdir = out_dir.join(&name);
        let summary = run_pipeline(&vcfg, &vdir).map_err(|e| e.to_string())?;
        let a = &summary.aggregate;
        if ablation.is_none() {
            full_mae = Some(a.mae);
        }
        let delta = full_mae
            .map(|f| 100.0 * (a.mae - f) / f)
            .unwrap_or(0.0);
        table.push_str(&format!(
            "{name},{},{},{},{delta:.1}\n",
            a.mae, a.regret, a.censoring_rate
        ));
        println!("{name}: MAE {:.4}, regret {:.3} ({delta:+.1}% MAE vs full)", a.mae, a.regret);
    }
    let table_path = out_dir.join("ablation_summary.csv");
    std::fs::write(&table_path, table).map_err(|e| e.to_string())?;
    println!("wrote {}", table_path.display());
    Ok(())
}

fn cmd_verify(which: &str, out: Option<&Path>) -> Result<bool, String> {
    let check = VerifyCheck::parse(which)
        .ok_or_else(|| format!("unknown check `{which}`; expected prop1|prop2|equilibrium|stability"))?;
    let verdict = verify(check);
    // Tolerate a closed pipe (e.g. `| head`) on the human-readable side.
    let stdout = std::io::stdout();
    let _ = write!(stdout.lock(), "{}", render_table(&verdict));
    let json = serde_json::to_string_pretty(&verdict).expect("verdict serializes");
    match out {
        Some(path) => std::fs::write(path, &json).map_err(|e| e.to_string())?,
        None => {
            let _ = writeln!(stdout.lock(), "{json}");
        }
    }
    Ok(verdict.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<bool, String> = match cli.cmd {
        Cmd::GenTrace { kind } => cmd_gen_trace(kind).map(|_| true),
        Cmd::TrainPredictor(args) => cmd_train_predictor(args).map(|_| true),
        Cmd::PretrainPolicy(args) => cmd_pretrain_policy(args).map(|_| true),
        Cmd::RunOnline(args) => cmd_run_online(args).map(|_| true),
        Cmd::Pipeline(args) => cmd_pipeline(args).map(|_| true),
        Cmd::Verify { which, out } => cmd_verify(&which, out.as_deref()),
        Cmd::Ablate(args) => cmd_ablate(args).map(|_| true),
        Cmd::Report { run_dirs, out_dir } => generate_report(&run_dirs, &out_dir)
            .map(|_| true)
            .map_err(|e| e.to_string()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
