//! Counterfactual censoring environment and cost accounting.
//!
//! This is the only module allowed to touch true demand. Learners receive
//! a [`Feedback`] — the truncated observation `y = min(d, a)` and the
//! censoring flag `c = (d > a)` — and nothing else; the [`EpisodeLedger`]
//! keeps the hidden truth for offline evaluation only.

use alloc::vec::Vec;
use core::fmt;

/// Asymmetric per-step cost weights, under-provisioning weighted heavier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub c_under: f64,
    pub c_over: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            c_under: 2.0,
            c_over: 1.0,
        }
    }
}

impl CostModel {
    pub fn new(c_under: f64, c_over: f64) -> Result<Self, EnvError> {
        if !(c_under > c_over && c_over > 0.0) {
            return Err(EnvError::InvalidCost { c_under, c_over });
        }
        Ok(CostModel { c_under, c_over })
    }

    /// ℓ(a, d) = c_under·(d−a)₊ + c_over·(a−d)₊.
    pub fn loss(&self, a: f64, d: f64) -> f64 {
        self.c_under * (d - a).max(0.0) + self.c_over * (a - d).max(0.0)
    }
}

/// The only signal a learner may see: truncated value and censoring flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback {
    /// min(d, a): equals true demand when uncensored, the action when censored.
    pub y: f64,
    /// true iff demand strictly exceeded the action.
    pub c: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvError {
    OutOfRange { name: &'static str, value: f64 },
    InvalidCost { c_under: f64, c_over: f64 },
    EmptyLedger,
}

impl fmt::Display for EnvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvError::OutOfRange { name, value } => {
                write!(f, "{name} = {value} outside [0, 1]")
            }
            EnvError::InvalidCost { c_under, c_over } => {
                write!(
                    f,
                    "cost weights must satisfy c_under > c_over > 0, got ({c_under}, {c_over})"
                )
            }
            EnvError::EmptyLedger => write!(f, "ledger holds no steps"),
        }
    }
}

impl core::error::Error for EnvError {}

/// One environment transition: reveal only the censored feedback, charge
/// the asymmetric cost on the hidden truth.
pub fn step(d_true: f64, a: f64, cost: &CostModel) -> Result<(Feedback, f64), EnvError> {
    if !(0.0..=1.0).contains(&d_true) {
        return Err(EnvError::OutOfRange {
            name: "d_true",
            value: d_true,
        });
    }
    if !(0.0..=1.0).contains(&a) {
        return Err(EnvError::OutOfRange { name: "a", value: a });
    }
    let feedback = Feedback {
        y: d_true.min(a),
        c: d_true > a,
    };
    Ok((feedback, cost.loss(a, d_true)))
}

/// Full per-step record; `d_true` is present because the ledger is an
/// evaluation artifact, never a learner input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub d_true: f64,
    pub a: f64,
    pub y: f64,
    pub c: bool,
    pub step_cost: f64,
}

/// Episode history plus running aggregates.
#[derive(Debug, Clone, Default)]
pub struct EpisodeLedger {
    records: Vec<StepRecord>,
    cum_regret: f64,
    censored: usize,
    over_provisioned: usize,
}

impl EpisodeLedger {
    pub fn new() -> Self {
        EpisodeLedger::default()
    }

    pub fn push(&mut self, rec: StepRecord) {
        self.cum_regret += rec.step_cost;
        if rec.c {
            self.censored += 1;
        } else if rec.a > rec.y {
            self.over_provisioned += 1;
        }
        self.records.push(rec);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn censored_steps(&self) -> usize {
        self.censored
    }

    pub fn over_provisioned_steps(&self) -> usize {
        self.over_provisioned
    }

    pub fn censoring_rate(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.censored as f64 / self.records.len() as f64
        }
    }

    pub fn over_provision_rate(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.over_provisioned as f64 / self.records.len() as f64
        }
    }

    /// Cumulative regret Σ ℓ(a_t, d_t).
    pub fn regret(&self) -> f64 {
        self.cum_regret
    }

    /// Mean absolute provisioning error (1/T)·Σ|a_t − d_t|.
    pub fn mae(&self) -> Result<f64, EnvError> {
        if self.records.is_empty() {
            return Err(EnvError::EmptyLedger);
        }
        let total: f64 = self.records.iter().map(|r| (r.a - r.d_true).abs()).sum();
        Ok(total / self.records.len() as f64)
    }
}
