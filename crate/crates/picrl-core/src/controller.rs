//! The closed provisioning loop: reactive calibration on the fast
//! timescale, hierarchical action composition, and episode orchestration.
//!
//! Per step: predict (μ, σ), plan (η, k) with the policy, act with
//! a = clip(μ + k·σ + m + b, 0, 1), observe censored feedback, apply the
//! event-driven calibrator update, reward (surrogate when censored, true
//! cost otherwise), store the transition, and refine the policy every
//! `n_update` steps. The margin/bias pair (m, b) moves every step; the
//! policy only at the slow cadence — that separation is what keeps the
//! loop stable under drift.

use crate::agent::{
    build_state, pessimism_reward_streak, policy_forward, reward_for_step, AblationFlags,
    AgentState, Experience, OnlineAgent, PolicyOutput, STATE_DIM,
};
use crate::env::{self, CostModel, EnvError, EpisodeLedger, Feedback, StepRecord};
use crate::estimator::{estimate, CensoredEstimate, CensoredWindow, EstimatorConfig};
use crate::predictor::Forecaster;
use crate::stats::{GaussianBelief, SIGMA_FLOOR};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Fast-loop variables: additive margin and bias corrections plus the
/// event streak counters. Streaks reset on the opposite event.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CalibratorState {
    pub m: f64,
    pub b: f64,
    pub n_censored_streak: usize,
    pub n_over_streak: usize,
}

impl CalibratorState {
    pub fn new() -> Self {
        CalibratorState::default()
    }

    pub fn correction(&self) -> f64 {
        self.m + self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub delta_m: f64,
    pub delta_b: f64,
    /// Damping applied to the bias decrement on over-provision events.
    pub gamma: f64,
    pub cost: CostModel,
    /// Window (in steps) for the recent censoring-rate state feature.
    pub recent_window: usize,
    /// Robbins-Monro exponent for the fast steps: both δs are scaled by
    /// 1/(1+t)^power. Zero keeps the constant steps used to track drift.
    pub step_decay_power: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            delta_m: 0.005,
            delta_b: 0.002,
            gamma: 0.5,
            cost: CostModel::default(),
            recent_window: 50,
            step_decay_power: 0.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.delta_m > 0.0 && self.delta_b > 0.0) {
            return Err(ControllerError::Config(format!(
                "step sizes must be positive, got delta_m={}, delta_b={}",
                self.delta_m, self.delta_b
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(ControllerError::Config(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Schedule factor applied to both fast steps at time t.
    pub fn step_scale(&self, t: usize) -> f64 {
        if self.step_decay_power == 0.0 {
            1.0
        } else {
            1.0 / libm::pow(1.0 + t as f64, self.step_decay_power)
        }
    }

    /// Zero-drift fixed point of the summed m+b dynamics under a frozen
    /// policy: the long-run censoring rate
    /// p* = (δ_m + γδ_b) / (2δ_m + (1+γ)δ_b).
    pub fn equilibrium_censoring_rate(&self) -> f64 {
        (self.delta_m + self.gamma * self.delta_b)
            / (2.0 * self.delta_m + (1.0 + self.gamma) * self.delta_b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerError {
    Config(String),
    /// Environment rejected the step at index `t`.
    Step { t: usize, source: EnvError },
}

impl fmt::Display for ControllerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControllerError::Config(msg) => write!(f, "invalid controller config: {msg}"),
            ControllerError::Step { t, source } => write!(f, "episode aborted at step {t}: {source}"),
        }
    }
}

impl core::error::Error for ControllerError {}

/// a = clip(μ + k·σ + m + b, 0, 1).
pub fn compose_action(mu: f64, sigma: f64, k: f64, calib: &CalibratorState) -> f64 {
    (mu + k * sigma + calib.m + calib.b).clamp(0.0, 1.0)
}

/// Event-driven calibration: censored steps push both corrections up by
/// η·δ, strict over-provision pulls them down (bias damped by γ), and an
/// exact hit leaves the corrections alone while resetting both streaks.
pub fn fast_update(
    calib: &mut CalibratorState,
    feedback: &Feedback,
    a: f64,
    eta: f64,
    cfg: &ControllerConfig,
) {
    if feedback.c {
        calib.m += eta * cfg.delta_m;
        calib.b += eta * cfg.delta_b;
        calib.n_censored_streak += 1;
        calib.n_over_streak = 0;
    } else if a > feedback.y {
        calib.m -= eta * cfg.delta_m;
        calib.b -= cfg.gamma * eta * cfg.delta_b;
        calib.n_over_streak += 1;
        calib.n_censored_streak = 0;
    } else {
        calib.n_censored_streak = 0;
        calib.n_over_streak = 0;
    }
}

/// Rolling feedback state shared by the online loop and offline rollouts:
/// the predictor window (censored substitutes included), the estimator
/// window, and the recent-censoring ring.
#[derive(Debug, Clone)]
pub struct FeedbackTracker {
    window: Vec<f64>,
    est_window: CensoredWindow,
    recent: Vec<bool>,
    recent_head: usize,
    recent_filled: bool,
}

impl FeedbackTracker {
    pub fn new(warm_window: &[f64], est_capacity: usize, recent_capacity: usize) -> Self {
        FeedbackTracker {
            window: warm_window.to_vec(),
            est_window: CensoredWindow::new(est_capacity),
            recent: Vec::with_capacity(recent_capacity.max(1)),
            recent_head: 0,
            recent_filled: false,
        }
    }

    /// Append d_t if uncensored, a_t if censored — both arrive as y.
    pub fn update(&mut self, y: f64, c: bool) {
        self.window.rotate_left(1);
        let last = self.window.len() - 1;
        self.window[last] = y;
        self.est_window.push(y, c);
        let cap = self.recent.capacity().max(1);
        if self.recent_filled {
            self.recent[self.recent_head] = c;
            self.recent_head = (self.recent_head + 1) % cap;
        } else {
            self.recent.push(c);
            if self.recent.len() == cap {
                self.recent_filled = true;
            }
        }
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn est_window(&self) -> &CensoredWindow {
        &self.est_window
    }

    pub fn recent_censor_rate(&self) -> f64 {
        if self.recent.is_empty() {
            0.0
        } else {
            self.recent.iter().filter(|&&c| c).count() as f64 / self.recent.len() as f64
        }
    }
}

/// One per-step record of the closed loop, in log-column order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub t: usize,
    pub d_true: f64,
    pub a: f64,
    pub y: f64,
    pub c: bool,
    pub mu: f64,
    pub sigma: f64,
    pub k: f64,
    pub eta: f64,
    /// Calibrator margin after this step's fast update.
    pub m: f64,
    pub b: f64,
    pub reward: f64,
    pub regret_cum: f64,
}

/// Who chooses (η, k) each step.
pub enum PolicyDriver<'a> {
    /// Fixed multipliers; no learning, no randomness.
    Frozen { eta: f64, k: f64 },
    /// Sampling from (and updating) a live agent.
    Agent(&'a mut OnlineAgent),
}

/// Shared per-step mechanics for Phase-2 rollouts and the Phase-3 loop.
pub struct StepEngine<'a> {
    pub calib: CalibratorState,
    pub tracker: FeedbackTracker,
    ctrl: &'a ControllerConfig,
    est_cfg: &'a EstimatorConfig,
    flags: AblationFlags,
    reward_from_predictor: bool,
    horizon: usize,
}

/// What the engine saw before acting at one step.
pub struct StepView {
    pub belief: GaussianBelief,
    pub est: CensoredEstimate,
    pub state: AgentState,
    pub features: [f64; STATE_DIM],
}

impl<'a> StepEngine<'a> {
    pub fn new(
        warm_window: &[f64],
        ctrl: &'a ControllerConfig,
        est_cfg: &'a EstimatorConfig,
        flags: AblationFlags,
        reward_from_predictor: bool,
        horizon: usize,
    ) -> Self {
        StepEngine {
            calib: CalibratorState::new(),
            tracker: FeedbackTracker::new(warm_window, est_cfg.window_capacity, ctrl.recent_window),
            ctrl,
            est_cfg,
            flags,
            reward_from_predictor,
            horizon,
        }
    }

    pub fn reset_calibrator(&mut self) {
        self.calib = CalibratorState::new();
    }

    /// Predict and assemble the state ahead of acting at step `t`.
    pub fn observe(&self, t: usize, forecaster: &dyn Forecaster, ctx: Option<&[f64]>) -> StepView {
        let mut belief = forecaster.predict_belief(self.tracker.window(), ctx);
        if self.flags.no_uncertainty {
            belief = GaussianBelief {
                mean: belief.mean,
                stddev: 0.0,
            };
        }
        let est = if self.tracker.est_window().len() >= 5 {
            let mut e = estimate(
                self.tracker.est_window(),
                self.calib.n_censored_streak,
                self.est_cfg,
            )
            .expect("window length checked");
            if self.flags.no_pessimism {
                e.pessimism = 1.0;
            }
            e
        } else {
            // Cold estimator: fall back on the forecaster's belief until
            // enough feedback has accumulated.
            CensoredEstimate {
                mu_hat: belief.mean,
                sigma_hat: belief.stddev.max(SIGMA_FLOOR),
                pessimism: if self.flags.no_pessimism {
                    1.0
                } else {
                    crate::estimator::pessimism_factor(
                        self.calib.n_censored_streak,
                        self.est_cfg.beta,
                        self.est_cfg.n_max,
                    )
                },
                uncertainty: belief.stddev.max(SIGMA_FLOOR),
                low_confidence: true,
            }
        };
        let state = build_state(
            self.calib.m,
            self.calib.b,
            self.calib.n_censored_streak,
            self.calib.n_over_streak,
            self.tracker.recent_censor_rate(),
            self.tracker.est_window().values_mean(),
            self.tracker.est_window().values_std(),
            t as f64 / self.horizon.max(1) as f64,
            &belief,
            &est,
        );
        let features = state.features(self.est_cfg.n_max);
        StepView {
            belief,
            est,
            state,
            features,
        }
    }

    /// Execute the composed action against true demand: environment step,
    /// fast calibration, reward, and feedback bookkeeping.
    pub fn act(
        &mut self,
        t: usize,
        d_true: f64,
        view: &StepView,
        out: &PolicyOutput,
    ) -> Result<(StepLog, Feedback, f64), ControllerError> {
        let k_eff = if self.flags.no_risk_buffer { 0.0 } else { out.k };
        let a = compose_action(view.belief.mean, view.belief.stddev, k_eff, &self.calib);
        let (fb, step_cost) =
            env::step(d_true, a, &self.ctrl.cost).map_err(|source| ControllerError::Step { t, source })?;
        let eta_eff = out.eta * self.ctrl.step_scale(t);
        fast_update(&mut self.calib, &fb, a, eta_eff, self.ctrl);

        let reward = reward_for_step(
            a,
            &fb,
            &view.belief,
            &view.est,
            pessimism_reward_streak(&self.flags, self.calib.n_censored_streak, self.est_cfg),
            self.reward_from_predictor,
            &self.flags,
            &self.ctrl.cost,
        );
        self.tracker.update(fb.y, fb.c);

        let log = StepLog {
            t,
            d_true,
            a,
            y: fb.y,
            c: fb.c,
            mu: view.belief.mean,
            sigma: view.belief.stddev,
            k: k_eff,
            eta: out.eta,
            m: self.calib.m,
            b: self.calib.b,
            reward,
            regret_cum: 0.0, // filled by the caller from its ledger
        };
        Ok((log, fb, step_cost))
    }
}

/// Episode output: hidden-truth ledger plus the per-step log records.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ledger: EpisodeLedger,
    pub steps: Vec<StepLog>,
}

const ROLE_ACT: u64 = 0xac7_0001;
const ROLE_SAMPLE: u64 = 0xac7_0002;

/// Phase-3 closed loop over a demand segment. Fully deterministic given
/// the seed and the initial component states; m and b start at zero.
#[allow(clippy::too_many_arguments)]
pub fn run_online(
    demands: &[f64],
    context: Option<&[Vec<f64>]>,
    forecaster: &dyn Forecaster,
    mut driver: PolicyDriver<'_>,
    warm_window: &[f64],
    ctrl: &ControllerConfig,
    est_cfg: &EstimatorConfig,
    seed: u64,
) -> Result<RunOutput, ControllerError> {
    ctrl.validate()?;
    let (flags, reward_from_predictor) = match &driver {
        PolicyDriver::Frozen { .. } => (AblationFlags::default(), false),
        PolicyDriver::Agent(agent) => (agent.cfg.ablation, agent.cfg.reward_from_predictor),
    };
    if let PolicyDriver::Agent(agent) = &mut driver {
        agent.reseed(seed, ROLE_ACT, ROLE_SAMPLE);
    }

    let horizon = demands.len();
    let mut engine = StepEngine::new(
        warm_window,
        ctrl,
        est_cfg,
        flags,
        reward_from_predictor,
        horizon,
    );
    let mut ledger = EpisodeLedger::new();
    let mut steps = Vec::with_capacity(horizon);
    let mut pending: Option<([f64; STATE_DIM], [f64; 2], f64)> = None;

    for (t, &d_true) in demands.iter().enumerate() {
        let ctx = context.map(|c| c[t].as_slice());
        let view = engine.observe(t, forecaster, ctx);

        let (out, raw) = match &mut driver {
            PolicyDriver::Frozen { eta, k } => (PolicyOutput { eta: *eta, k: *k }, [0.0, 0.0]),
            PolicyDriver::Agent(agent) => {
                let (out, raw, _) = policy_forward(&agent.policy, &view.features, true, &mut agent.act_rng);
                (out, raw)
            }
        };

        let (mut log, fb, step_cost) = engine.act(t, d_true, &view, &out)?;
        ledger.push(StepRecord {
            t,
            d_true,
            a: log.a,
            y: fb.y,
            c: fb.c,
            step_cost,
        });
        log.regret_cum = ledger.regret();
        steps.push(log);

        if let PolicyDriver::Agent(agent) = &mut driver {
            if let Some((s, a_raw, r)) = pending.take() {
                agent.buffer.push(Experience {
                    state: s,
                    raw_action: a_raw,
                    reward: r,
                    next_state: view.features,
                    done: false,
                });
            }
            pending = Some((view.features, raw, log.reward));
            if (t + 1) % agent.cfg.n_update == 0 {
                agent.update_once();
            }
        }
    }

    if let (PolicyDriver::Agent(agent), Some((s, a_raw, r))) = (&mut driver, pending.take()) {
        agent.buffer.push(Experience {
            state: s,
            raw_action: a_raw,
            reward: r,
            next_state: s,
            done: true,
        });
    }

    Ok(RunOutput { ledger, steps })
}
