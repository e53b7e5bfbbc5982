//! Windowed probabilistic demand forecaster with a Gaussian head.
//!
//! A feed-forward encoder reads a fixed window of recent observations
//! (plus optional context features) and emits (μ, σ); training minimizes
//! the Gaussian negative log-likelihood by minibatch gradient descent so
//! the dispersion head learns honest uncertainty, not just a point fit.
//! The trained model is frozen at deployment.

use crate::nn::{self, Mlp};
use crate::rng::Rng;
use crate::stats::{GaussianBelief, SIGMA_FLOOR};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub window_len: usize,
    pub hidden_width: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplicative decay of the learning rate; 1.0 keeps it
    /// constant. The loss curvature in the mean head grows like 1/σ², so
    /// a decaying rate is what lets σ settle all the way down on
    /// near-deterministic targets.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Number of exogenous context features appended to the window.
    pub context_width: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            window_len: 32,
            hidden_width: 64,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            context_width: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let lr_ok = self.learning_rate > 0.0;
        let decay_ok = self.lr_decay > 0.0 && self.lr_decay <= 1.0;
        if self.window_len < 2
            || self.hidden_width < 4
            || !lr_ok
            || !decay_ok
            || self.epochs == 0
            || self.batch_size == 0
        {
            return Err(PredictorError::Config(format!(
                "need window_len >= 2, hidden_width >= 4, learning_rate > 0, epochs/batch > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorError {
    Config(String),
    /// Window or context width does not match the trained configuration.
    Shape { expected: usize, got: usize },
    /// Loss became non-finite at the given epoch.
    TrainingDiverged { epoch: usize },
    /// Training segment too short for one window plus target.
    NotEnoughData { needed: usize, got: usize },
}

impl fmt::Display for PredictorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorError::Config(msg) => write!(f, "invalid predictor config: {msg}"),
            PredictorError::Shape { expected, got } => {
                write!(f, "input width mismatch: expected {expected}, got {got}")
            }
            PredictorError::TrainingDiverged { epoch } => {
                write!(f, "training loss became non-finite at epoch {epoch}")
            }
            PredictorError::NotEnoughData { needed, got } => {
                write!(f, "segment of {got} steps cannot feed windows of {needed}")
            }
        }
    }
}

impl core::error::Error for PredictorError {}

/// Per-sample Gaussian negative log-likelihood log σ + ½((d−μ)/σ)².
pub fn nll_loss(pred: &GaussianBelief, d: f64) -> f64 {
    debug_assert!(pred.stddev > 0.0);
    let z = (d - pred.mean) / pred.stddev;
    libm::log(pred.stddev) + 0.5 * z * z
}

fn softplus(s: f64) -> f64 {
    if s > 20.0 {
        s
    } else if s < -20.0 {
        libm::exp(s)
    } else {
        libm::log(1.0 + libm::exp(s))
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + libm::exp(-s))
    } else {
        let e = libm::exp(s);
        e / (1.0 + e)
    }
}

/// Anything that maps an observation window to a Gaussian belief. The
/// online loop is generic over this so verification harnesses can plug in
/// constant or clairvoyant forecasters.
pub trait Forecaster {
    fn predict_belief(&self, window: &[f64], context: Option<&[f64]>) -> GaussianBelief;
}

/// Training curves and the checkpoint trail.
#[derive(Debug, Clone, Default)]
pub struct TrainMeta {
    pub final_train_nll: f64,
    pub best_val_nll: f64,
    pub val_mae: f64,
    pub train_nll_curve: Vec<f64>,
    pub val_nll_curve: Vec<f64>,
    /// (epoch, val NLL) at every improvement; strictly decreasing NLL.
    pub checkpoints: Vec<(usize, f64)>,
}

/// Frozen forecaster: window encoder weights plus training metadata.
#[derive(Debug, Clone)]
pub struct PredictorModel {
    cfg: PredictorConfig,
    net: Mlp,
    pub meta: TrainMeta,
}

impl PredictorModel {
    pub fn config(&self) -> &PredictorConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn from_parts(cfg: PredictorConfig, net: Mlp, meta: TrainMeta) -> Self {
        PredictorModel { cfg, net, meta }
    }

    /// Gaussian belief for the step following `window`; pure in its inputs.
    pub fn predict(
        &self,
        window: &[f64],
        context: Option<&[f64]>,
    ) -> Result<GaussianBelief, PredictorError> {
        if window.len() != self.cfg.window_len {
            return Err(PredictorError::Shape {
                expected: self.cfg.window_len,
                got: window.len(),
            });
        }
        let ctx_len = context.map_or(0, |c| c.len());
        if ctx_len != self.cfg.context_width {
            return Err(PredictorError::Shape {
                expected: self.cfg.context_width,
                got: ctx_len,
            });
        }
        let mut input = Vec::with_capacity(window.len() + ctx_len);
        input.extend_from_slice(window);
        if let Some(c) = context {
            input.extend_from_slice(c);
        }
        let out = self.net.forward(&input);
        Ok(GaussianBelief::new(
            out[0].clamp(0.0, 1.0),
            softplus(out[1]) + SIGMA_FLOOR,
        ))
    }
}

impl Forecaster for PredictorModel {
    fn predict_belief(&self, window: &[f64], context: Option<&[f64]>) -> GaussianBelief {
        self.predict(window, context)
            .expect("caller guarantees window and context widths")
    }
}

struct SampleSet<'a> {
    demands: &'a [f64],
    context: Option<&'a [Vec<f64>]>,
    window_len: usize,
}

impl<'a> SampleSet<'a> {
    fn len(&self) -> usize {
        self.demands.len().saturating_sub(self.window_len)
    }

    fn fill_input(&self, i: usize, input: &mut Vec<f64>) -> f64 {
        input.clear();
        input.extend_from_slice(&self.demands[i..i + self.window_len]);
        if let Some(ctx) = self.context {
            input.extend_from_slice(&ctx[i + self.window_len]);
        }
        self.demands[i + self.window_len]
    }
}

/// Mean NLL of `net` over a sample set, without mutating anything.
fn eval_nll(net: &Mlp, set: &SampleSet) -> f64 {
    let mut input = Vec::new();
    let mut total = 0.0;
    for i in 0..set.len() {
        let d = set.fill_input(i, &mut input);
        let out = net.forward(&input);
        if !(out[0].is_finite() && out[1].is_finite()) {
            return f64::NAN;
        }
        let belief = GaussianBelief::new(out[0], softplus(out[1]) + SIGMA_FLOOR);
        total += nll_loss(&belief, d);
    }
    total / set.len() as f64
}

fn eval_mae(net: &Mlp, set: &SampleSet) -> f64 {
    let mut input = Vec::new();
    let mut total = 0.0;
    for i in 0..set.len() {
        let d = set.fill_input(i, &mut input);
        let out = net.forward(&input);
        total += (out[0].clamp(0.0, 1.0) - d).abs();
    }
    total / set.len() as f64
}

const GRAD_CLIP: f64 = 5.0;

/// Trains on sliding windows of the normalized training segment, tracking
/// NLL on the validation segment and returning the best-validation weights.
/// Deterministic given the seed.
pub fn train(
    train_demands: &[f64],
    train_context: Option<&[Vec<f64>]>,
    val_demands: &[f64],
    val_context: Option<&[Vec<f64>]>,
    cfg: &PredictorConfig,
) -> Result<PredictorModel, PredictorError> {
    cfg.validate()?;
    if train_demands.len() < cfg.window_len + 2 {
        return Err(PredictorError::NotEnoughData {
            needed: cfg.window_len + 2,
            got: train_demands.len(),
        });
    }
    let train_set = SampleSet {
        demands: train_demands,
        context: train_context,
        window_len: cfg.window_len,
    };
    let val_set = SampleSet {
        demands: val_demands,
        context: val_context,
        window_len: cfg.window_len,
    };
    let has_val = val_set.len() > 0;

    let n_in = cfg.window_len + cfg.context_width;
    let sizes = [n_in, cfg.hidden_width, cfg.hidden_width, 2];
    let mut init_rng = Rng::derive(cfg.seed, 0x9ed1_c701);
    let mut net = Mlp::new(&sizes, &mut init_rng);
    let mut shuffle_rng = Rng::derive(cfg.seed, 0x9ed1_c702);

    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; net.params().len()];
    let mut input = Vec::new();

    let mut meta = TrainMeta {
        best_val_nll: f64::INFINITY,
        ..TrainMeta::default()
    };
    let mut best_params = net.params().to_vec();

    // Decay bottoms out at 1% of the initial rate so late epochs keep
    // making (slow) progress instead of freezing.
    let lr_min = cfg.learning_rate * 0.01;
    let mut lr = cfg.learning_rate;
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let d = train_set.fill_input(i, &mut input);
                let (out, cache) = net.forward_cached(&input);
                let (mu, s_raw) = (out[0], out[1]);
                let sigma = softplus(s_raw) + SIGMA_FLOOR;
                let z = (d - mu) / sigma;
                // dL/dμ and dL/dσ·dσ/ds for L = log σ + ½z².
                let dmu = -z / sigma;
                let ds = (1.0 / sigma - z * z / sigma) * sigmoid(s_raw);
                net.backward(&cache, &[dmu * inv, ds * inv], &mut grad);
            }
            nn::clip_grad_norm(&mut grad, GRAD_CLIP);
            nn::sgd_step(net.params_mut(), &grad, lr);
        }
        lr = (lr * cfg.lr_decay).max(lr_min);

        let train_nll = eval_nll(&net, &train_set);
        if !train_nll.is_finite() {
            return Err(PredictorError::TrainingDiverged { epoch });
        }
        meta.train_nll_curve.push(train_nll);
        if has_val {
            let val_nll = eval_nll(&net, &val_set);
            if !val_nll.is_finite() {
                return Err(PredictorError::TrainingDiverged { epoch });
            }
            meta.val_nll_curve.push(val_nll);
            if val_nll < meta.best_val_nll {
                meta.best_val_nll = val_nll;
                best_params.copy_from_slice(net.params());
                meta.checkpoints.push((epoch, val_nll));
            }
        } else {
            best_params.copy_from_slice(net.params());
        }
    }

    net.set_params(&best_params);
    meta.final_train_nll = *meta.train_nll_curve.last().unwrap();
    if has_val {
        meta.val_mae = eval_mae(&net, &val_set);
    }
    Ok(PredictorModel {
        cfg: cfg.clone(),
        net,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg() -> PredictorConfig {
        PredictorConfig {
            window_len: 16,
            hidden_width: 24,
            learning_rate: 5e-3,
            lr_decay: 1.0,
            epochs: 60,
            batch_size: 32,
            seed: 1,
            context_width: 0,
        }
    }

    fn iid_gaussian(n: usize, mean: f64, std: f64, seed: u64) -> Vec<f64> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| (rng.normal_with(mean, std)).clamp(0.0, 1.0)).collect()
    }

    #[test]
    fn nll_trivial_values() {
        let b = GaussianBelief::new(0.3, 1.0);
        assert_eq!(nll_loss(&b, 0.3), 0.0);
        let b = GaussianBelief::new(0.0, 1.0);
        assert!((nll_loss(&b, 2.0) - 2.0).abs() < 1e-15);
        let b = GaussianBelief::new(0.5, 0.1);
        assert!((nll_loss(&b, 0.5) - libm::log(0.1)).abs() < 1e-12);
    }

    #[test]
    fn learns_iid_gaussian_dispersion() {
        // Known generator: N(0.5, 0.05²). A calibrated head should recover
        // σ within ±20% on held-out data and cover ~95% at ±1.96σ.
        let train = iid_gaussian(1200, 0.5, 0.05, 10);
        let val = iid_gaussian(400, 0.5, 0.05, 11);
        let cfg = PredictorConfig {
            epochs: 150,
            ..base_cfg()
        };
        let model = train_ok(&train, &val, &cfg);

        let mut sig_sum = 0.0;
        let mut covered = 0usize;
        let mut count = 0usize;
        for i in 0..val.len() - cfg.window_len {
            let window = &val[i..i + cfg.window_len];
            let d = val[i + cfg.window_len];
            let belief = model.predict(window, None).unwrap();
            sig_sum += belief.stddev;
            if (d - belief.mean).abs() <= 1.96 * belief.stddev {
                covered += 1;
            }
            count += 1;
        }
        let avg_sigma = sig_sum / count as f64;
        assert!(
            (avg_sigma - 0.05).abs() <= 0.2 * 0.05,
            "avg sigma {avg_sigma}"
        );
        let coverage = covered as f64 / count as f64;
        assert!(
            (0.90..=0.99).contains(&coverage),
            "coverage {coverage}"
        );
    }

    fn train_ok(tr: &[f64], va: &[f64], cfg: &PredictorConfig) -> PredictorModel {
        train(tr, None, va, None, cfg).expect("training should converge")
    }

    #[test]
    fn constant_demand_degenerates_to_floor() {
        // Fixed-rate GD limit-cycles here (the μ-head curvature grows as
        // 1/σ²), so the schedule must decay for σ to settle toward the
        // floor.
        let data = alloc::vec![0.5; 400];
        let cfg = PredictorConfig {
            window_len: 4,
            hidden_width: 8,
            epochs: 4000,
            learning_rate: 3e-2,
            lr_decay: 0.996,
            ..base_cfg()
        };
        let model = train_ok(&data[..300], &data[300..], &cfg);
        let belief = model.predict(&data[..4], None).unwrap();
        assert!((belief.mean - 0.5).abs() <= 0.01, "mu {}", belief.mean);
        // The shared trunk couples the two heads, so σ approaches the
        // floor asymptotically rather than reaching it; 20× the floor on
        // a [0,1] scale is the practical neighborhood for clipped GD.
        assert!(belief.stddev <= 20.0 * SIGMA_FLOOR, "sigma {}", belief.stddev);
    }

    #[test]
    fn noiseless_sinusoid_is_learnable() {
        let n = 1500;
        let xs: Vec<f64> = (0..n)
            .map(|t| 0.5 + 0.35 * libm::sin(core::f64::consts::TAU * t as f64 / 48.0))
            .collect();
        let cfg = PredictorConfig {
            epochs: 300,
            learning_rate: 1e-2,
            ..base_cfg()
        };
        let model = train_ok(&xs[..1000], &xs[1000..], &cfg);
        assert!(model.meta.val_mae <= 0.02, "val mae {}", model.meta.val_mae);
    }

    #[test]
    fn predict_is_pure_and_shape_checked() {
        let data = iid_gaussian(400, 0.5, 0.05, 3);
        let cfg = PredictorConfig { epochs: 5, ..base_cfg() };
        let model = train_ok(&data[..300], &data[300..], &cfg);
        let window = &data[..16];
        assert_eq!(
            model.predict(window, None).unwrap(),
            model.predict(window, None).unwrap()
        );
        assert!(matches!(
            model.predict(&data[..10], None),
            Err(PredictorError::Shape { expected: 16, got: 10 })
        ));
        // Censored substitutes (action values) are just numbers in [0,1];
        // the predictor is agnostic to their provenance.
        let mut substituted = window.to_vec();
        substituted[3] = 0.77;
        assert!(model.predict(&substituted, None).is_ok());
    }

    #[test]
    fn checkpoint_nll_strictly_decreases() {
        let train_d = iid_gaussian(800, 0.5, 0.05, 5);
        let val_d = iid_gaussian(300, 0.5, 0.05, 6);
        let model = train_ok(&train_d, &val_d, &base_cfg());
        let cps = &model.meta.checkpoints;
        assert!(!cps.is_empty());
        for pair in cps.windows(2) {
            assert!(pair[1].1 < pair[0].1, "checkpoints not improving: {cps:?}");
        }
        assert_eq!(model.meta.best_val_nll, cps.last().unwrap().1);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data = iid_gaussian(500, 0.5, 0.05, 8);
        let cfg = PredictorConfig { epochs: 10, ..base_cfg() };
        let a = train_ok(&data[..400], &data[400..], &cfg);
        let b = train_ok(&data[..400], &data[400..], &cfg);
        assert_eq!(a.network().params(), b.network().params());
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let data = iid_gaussian(300, 0.5, 0.05, 9);
        let cfg = PredictorConfig {
            learning_rate: 1e300,
            epochs: 5,
            ..base_cfg()
        };
        match train(&data[..250], None, &data[250..], None, &cfg) {
            Err(PredictorError::TrainingDiverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn context_features_feed_the_network() {
        let mut rng = Rng::new(12);
        // Demand equals the context feature of the target step; a model
        // with context should do far better than the window alone allows.
        let n = 900;
        let ctx: Vec<Vec<f64>> = (0..n).map(|_| alloc::vec![rng.uniform()]).collect();
        let demands: Vec<f64> = ctx.iter().map(|c| c[0]).collect();
        let cfg = PredictorConfig {
            context_width: 1,
            epochs: 200,
            learning_rate: 1e-2,
            ..base_cfg()
        };
        let model = train(
            &demands[..700],
            Some(&ctx[..700]),
            &demands[700..],
            Some(&ctx[700..]),
            &cfg,
        )
        .unwrap();
        assert!(model.meta.val_mae < 0.05, "val mae {}", model.meta.val_mae);
    }

    /// Analytic NLL gradients against central differences on small random
    /// models; the whole parameter vector is checked on five seeds.
    #[test]
    fn nll_gradients_match_finite_differences() {
        for seed in 20..25u64 {
            let mut rng = Rng::new(seed);
            let sizes = [6, 8, 8, 2];
            let mut net = Mlp::new(&sizes, &mut rng);
            let p: Vec<f64> = (0..net.params().len())
                .map(|_| rng.uniform_range(-0.6, 0.6))
                .collect();
            net.set_params(&p);
            let x: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
            let d = rng.uniform();

            let loss_of = |net: &Mlp| {
                let out = net.forward(&x);
                let belief = GaussianBelief::new(out[0], softplus(out[1]) + SIGMA_FLOOR);
                nll_loss(&belief, d)
            };

            let (out, cache) = net.forward_cached(&x);
            let sigma = softplus(out[1]) + SIGMA_FLOOR;
            let z = (d - out[0]) / sigma;
            let dl = [-z / sigma, (1.0 / sigma - z * z / sigma) * sigmoid(out[1])];
            let mut grad = alloc::vec![0.0; p.len()];
            net.backward(&cache, &dl, &mut grad);

            let mut probe = net.clone();
            for i in 0..p.len() {
                let h = 1e-6 * (1.0 + p[i].abs());
                let mut plus = p.clone();
                plus[i] += h;
                probe.set_params(&plus);
                let lp = loss_of(&probe);
                let mut minus = p.clone();
                minus[i] -= h;
                probe.set_params(&minus);
                let lm = loss_of(&probe);
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(grad[i].abs()).max(1e-6);
                assert!(
                    (fd - grad[i]).abs() / denom < 1e-5,
                    "seed {seed} param {i}: fd {fd} vs {}",
                    grad[i]
                );
            }
        }
    }
}
