//! Reference policies sharing the censored-feedback interface.
//!
//! Each baseline sees only `Feedback`; none can read true demand. The one
//! exception, [`Oracle`], exists to define the regret floor and refuses
//! to run outside an evaluation context. The naive mixture learner is the
//! instability demonstrator: tracking the mean of its own censored
//! observation stream gives it a strictly negative drift, so it slides
//! away from the true demand mean and into the censoring trap.

use crate::env::{self, CostModel, EpisodeLedger, Feedback, StepRecord};
use crate::controller::{RunOutput, StepLog};
use crate::predictor::Forecaster;
use crate::rng::Rng;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineError {
    /// Oracle consulted outside the evaluation harness.
    Access,
}

impl fmt::Display for BaselineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineError::Access => write!(f, "oracle access outside evaluation context"),
        }
    }
}

impl core::error::Error for BaselineError {}

/// Diminishing step sizes γ_t = c / (1 + t)^power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaSchedule {
    pub c: f64,
    pub power: f64,
}

impl Default for GammaSchedule {
    fn default() -> Self {
        GammaSchedule { c: 0.5, power: 0.55 }
    }
}

impl GammaSchedule {
    pub fn at(&self, t: usize) -> f64 {
        self.c / libm::pow(1.0 + t as f64, self.power)
    }
}

/// Stochastic-approximation learner that tracks the mixture of a fixed
/// historical mean and the mean of its own current observation stream
/// (y when uncensored, the action value when censored). With any weight
/// on the current stream the target sits below the true mean whenever
/// censoring is active.
#[derive(Debug, Clone)]
pub struct NaiveMixtureLearner {
    level: f64,
    rho: f64,
    schedule: GammaSchedule,
    hist_mean: f64,
    current: Vec<f64>,
    cap: usize,
    head: usize,
    filled: bool,
    t: usize,
}

impl NaiveMixtureLearner {
    pub fn new(initial_level: f64, rho: f64, schedule: GammaSchedule, historical: &[f64]) -> Self {
        debug_assert!((0.0..=1.0).contains(&rho) && rho >= 0.0);
        let hist_mean = if historical.is_empty() {
            initial_level
        } else {
            historical.iter().sum::<f64>() / historical.len() as f64
        };
        NaiveMixtureLearner {
            level: initial_level,
            rho,
            schedule,
            hist_mean,
            current: Vec::new(),
            cap: 200,
            head: 0,
            filled: false,
            t: 0,
        }
    }

    /// Current base level A_t, which doubles as the action.
    pub fn level(&self) -> f64 {
        self.level
    }

    fn current_mean(&self) -> Option<f64> {
        if self.current.is_empty() {
            None
        } else {
            Some(self.current.iter().sum::<f64>() / self.current.len() as f64)
        }
    }

    /// The empirical mixed target (1−ρ)·hist + ρ·mean(current stream).
    pub fn mixed_target(&self) -> f64 {
        match self.current_mean() {
            Some(cur) => (1.0 - self.rho) * self.hist_mean + self.rho * cur,
            None => self.hist_mean,
        }
    }

    /// A_{t+1} = A_t + γ_t(μ_mix − A_t), after absorbing the observation.
    pub fn naive_step(&mut self, feedback: &Feedback) {
        if self.filled {
            self.current[self.head] = feedback.y;
            self.head = (self.head + 1) % self.cap;
        } else {
            self.current.push(feedback.y);
            if self.current.len() == self.cap {
                self.filled = true;
            }
        }
        let gamma = self.schedule.at(self.t);
        debug_assert!(gamma > 0.0);
        self.level += gamma * (self.mixed_target() - self.level);
        self.level = self.level.clamp(0.0, 1.0);
        self.t += 1;
    }
}

/// One-sided conformal calibration on uncensored residuals y − μ. The
/// buffer deliberately skips censored steps, which is exactly the
/// selection bias that makes this baseline fail under heavy censoring.
#[derive(Debug, Clone)]
pub struct ConformalCalibrator {
    residuals: Vec<f64>,
    cap: usize,
    head: usize,
    filled: bool,
    q: f64,
    warm: usize,
}

impl ConformalCalibrator {
    pub fn new(q: f64) -> Self {
        debug_assert!(q > 0.0 && q < 1.0);
        ConformalCalibrator {
            residuals: Vec::new(),
            cap: 500,
            head: 0,
            filled: false,
            q,
            warm: 20,
        }
    }

    fn quantile(&self) -> f64 {
        let mut sorted = self.residuals.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        // Conformal rank ⌈q·(n+1)⌉ clipped into the sample.
        let rank = libm::ceil(self.q * (n + 1) as f64) as usize;
        sorted[rank.clamp(1, n) - 1]
    }

    /// a = μ + Quantile_q(residuals); falls back to μ on a cold buffer.
    pub fn action(&self, mu: f64) -> f64 {
        if self.residuals.len() < self.warm {
            mu.clamp(0.0, 1.0)
        } else {
            (mu + self.quantile()).clamp(0.0, 1.0)
        }
    }

    /// Buffer update: uncensored steps only.
    pub fn observe(&mut self, mu: f64, feedback: &Feedback) {
        if feedback.c {
            return;
        }
        let r = feedback.y - mu;
        if self.filled {
            self.residuals[self.head] = r;
            self.head = (self.head + 1) % self.cap;
        } else {
            self.residuals.push(r);
            if self.residuals.len() == self.cap {
                self.filled = true;
            }
        }
    }

    pub fn buffer_len(&self) -> usize {
        self.residuals.len()
    }
}

/// Gaussian-conjugate Thompson sampling over the demand mean, updated on
/// uncensored observations only, acting at a fixed upper quantile. Under
/// persistent censoring the posterior freezes — its documented failure.
#[derive(Debug, Clone)]
pub struct ThompsonSampler {
    prior_mean: f64,
    prior_pseudo: f64,
    prior_std: f64,
    sum: f64,
    count: usize,
    welford_mean: f64,
    welford_m2: f64,
    quantile_z: f64,
    rng: Rng,
}

impl ThompsonSampler {
    pub fn new(seed: u64) -> Self {
        ThompsonSampler {
            prior_mean: 0.5,
            prior_pseudo: 1.0,
            prior_std: 0.25,
            sum: 0.0,
            count: 0,
            welford_mean: 0.0,
            welford_m2: 0.0,
            quantile_z: 1.281_551_565_544_9, // z at the 90th percentile
            rng: Rng::derive(seed, 0x7505),
        }
    }

    pub fn posterior_mean(&self) -> f64 {
        (self.prior_pseudo * self.prior_mean + self.sum) / (self.prior_pseudo + self.count as f64)
    }

    pub fn observation_count(&self) -> usize {
        self.count
    }

    fn obs_std(&self) -> f64 {
        if self.count >= 2 {
            libm::sqrt(self.welford_m2 / self.count as f64).max(1e-3)
        } else {
            self.prior_std
        }
    }

    /// Posterior draw plus a fixed quantile buffer.
    pub fn thompson_step(&mut self) -> f64 {
        let obs_std = self.obs_std();
        let post_std = obs_std / libm::sqrt(self.prior_pseudo + self.count as f64);
        let draw = self.posterior_mean() + post_std * self.rng.normal();
        (draw + self.quantile_z * obs_std).clamp(0.0, 1.0)
    }

    pub fn observe(&mut self, feedback: &Feedback) {
        if feedback.c {
            return;
        }
        self.count += 1;
        self.sum += feedback.y;
        let delta = feedback.y - self.welford_mean;
        self.welford_mean += delta / self.count as f64;
        self.welford_m2 += delta * (feedback.y - self.welford_mean);
    }
}

/// Max-over-window rule with a fixed headroom multiplier, the archetypal
/// reactive autoscaler. Provisioning full scale on a cold window.
#[derive(Debug, Clone)]
pub struct RuleAutoscaler {
    window: Vec<f64>,
    cap: usize,
    head: usize,
    filled: bool,
    headroom: f64,
}

impl RuleAutoscaler {
    pub fn new(window: usize, headroom: f64) -> Self {
        RuleAutoscaler {
            window: Vec::new(),
            cap: window.max(1),
            head: 0,
            filled: false,
            headroom,
        }
    }

    pub fn rule_step(&self) -> f64 {
        if self.window.is_empty() {
            return 1.0;
        }
        let max = self.window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (self.headroom * max).clamp(0.0, 1.0)
    }

    pub fn observe(&mut self, feedback: &Feedback) {
        if self.filled {
            self.window[self.head] = feedback.y;
            self.head = (self.head + 1) % self.cap;
        } else {
            self.window.push(feedback.y);
            if self.window.len() == self.cap {
                self.filled = true;
            }
        }
    }
}

impl Default for RuleAutoscaler {
    fn default() -> Self {
        RuleAutoscaler::new(48, 1.15)
    }
}

/// Perfect-information policy a = d, defining the regret floor. Only an
/// evaluation harness may construct an authorized instance; learner-side
/// construction yields a handle whose steps fail.
#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    authorized: bool,
}

impl Oracle {
    /// Unauthorized handle: every step errors.
    pub fn new() -> Self {
        Oracle { authorized: false }
    }

    /// Authorization is the evaluation harness's assertion that it owns
    /// the hidden trace anyway.
    pub fn for_evaluation() -> Self {
        Oracle { authorized: true }
    }

    pub fn oracle_step(&self, d_true: f64) -> Result<f64, BaselineError> {
        if self.authorized {
            Ok(d_true)
        } else {
            Err(BaselineError::Access)
        }
    }
}

impl Default for Oracle {
    fn default() -> Self {
        Oracle::new()
    }
}

/// Uniform dispatch for the episode driver and the CLI.
pub enum Baseline {
    Naive(NaiveMixtureLearner),
    Conformal(ConformalCalibrator),
    Thompson(ThompsonSampler),
    Rule(RuleAutoscaler),
    Oracle(Oracle),
}

impl Baseline {
    /// Next action from feedback-derived state only; `mu` is the frozen
    /// predictor's mean where the policy consumes one.
    fn act(&mut self, mu: Option<f64>) -> f64 {
        match self {
            Baseline::Naive(l) => l.level(),
            Baseline::Conformal(c) => c.action(mu.expect("conformal baseline needs a forecaster")),
            Baseline::Thompson(ts) => ts.thompson_step(),
            Baseline::Rule(r) => r.rule_step(),
            Baseline::Oracle(_) => unreachable!("oracle handled by the driver"),
        }
    }

    fn observe(&mut self, mu: Option<f64>, feedback: &Feedback) {
        match self {
            Baseline::Naive(l) => l.naive_step(feedback),
            Baseline::Conformal(c) => c.observe(mu.expect("conformal baseline needs a forecaster"), feedback),
            Baseline::Thompson(ts) => ts.observe(feedback),
            Baseline::Rule(r) => r.observe(feedback),
            Baseline::Oracle(_) => {}
        }
    }
}

/// Closed-loop episode for a baseline: same censored feedback protocol as
/// the main controller, none of the learning machinery.
pub fn run_baseline(
    demands: &[f64],
    context: Option<&[Vec<f64>]>,
    forecaster: Option<&dyn Forecaster>,
    baseline: &mut Baseline,
    warm_window: &[f64],
    cost: &CostModel,
) -> Result<RunOutput, BaselineError> {
    let mut window = warm_window.to_vec();
    let mut ledger = EpisodeLedger::new();
    let mut steps = Vec::with_capacity(demands.len());

    for (t, &d_true) in demands.iter().enumerate() {
        let ctx = context.map(|c| c[t].as_slice());
        let belief = forecaster.map(|f| f.predict_belief(&window, ctx));
        let mu = belief.map(|b| b.mean);
        let a = match &mut *baseline {
            Baseline::Oracle(o) => o.oracle_step(d_true)?,
            other => other.act(mu),
        };
        let (fb, step_cost) = env::step(d_true, a, cost).expect("normalized inputs");
        baseline.observe(mu, &fb);
        if !window.is_empty() {
            window.rotate_left(1);
            let last = window.len() - 1;
            window[last] = fb.y;
        }
        ledger.push(StepRecord {
            t,
            d_true,
            a,
            y: fb.y,
            c: fb.c,
            step_cost,
        });
        steps.push(StepLog {
            t,
            d_true,
            a,
            y: fb.y,
            c: fb.c,
            mu: mu.unwrap_or(0.0),
            sigma: belief.map(|b| b.stddev).unwrap_or(0.0),
            k: 0.0,
            eta: 0.0,
            m: 0.0,
            b: 0.0,
            reward: -step_cost,
            regret_cum: ledger.regret(),
        });
    }
    Ok(RunOutput { ledger, steps })
}
