//! Versioned JSON checkpoints for the predictor, policy and value
//! networks. Weights serialize through shortest-round-trip decimal
//! formatting, so save → load → save reproduces files byte-for-byte.

use picrl_core::agent::{PolicyNet, ValueNet};
use picrl_core::nn::Mlp;
use picrl_core::predictor::{PredictorConfig, PredictorModel, TrainMeta};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const PREDICTOR_FORMAT: &str = "picrl-predictor-v1";
pub const POLICY_FORMAT: &str = "picrl-policy-v1";
pub const VALUE_FORMAT: &str = "picrl-value-v1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("checkpoint format `{got}` does not match expected `{expected}`")]
    Format { expected: &'static str, got: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictorCfgDto {
    window_len: usize,
    hidden_width: usize,
    learning_rate: f64,
    lr_decay: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    context_width: usize,
}

impl From<&PredictorConfig> for PredictorCfgDto {
    fn from(c: &PredictorConfig) -> Self {
        PredictorCfgDto {
            window_len: c.window_len,
            hidden_width: c.hidden_width,
            learning_rate: c.learning_rate,
            lr_decay: c.lr_decay,
            epochs: c.epochs,
            batch_size: c.batch_size,
            seed: c.seed,
            context_width: c.context_width,
        }
    }
}

impl From<PredictorCfgDto> for PredictorConfig {
    fn from(d: PredictorCfgDto) -> Self {
        PredictorConfig {
            window_len: d.window_len,
            hidden_width: d.hidden_width,
            learning_rate: d.learning_rate,
            lr_decay: d.lr_decay,
            epochs: d.epochs,
            batch_size: d.batch_size,
            seed: d.seed,
            context_width: d.context_width,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
struct TrainMetaDto {
    final_train_nll: f64,
    best_val_nll: f64,
    val_mae: f64,
    train_nll_curve: Vec<f64>,
    val_nll_curve: Vec<f64>,
    checkpoints: Vec<(usize, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictorCkpt {
    format: String,
    config: PredictorCfgDto,
    sizes: Vec<usize>,
    params: Vec<f64>,
    meta: TrainMetaDto,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetCkpt {
    format: String,
    sizes: Vec<usize>,
    params: Vec<f64>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CheckpointError> {
    let json = serde_json::to_string(value).expect("checkpoint serializes");
    fs::write(path, json).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CheckpointError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| CheckpointError::Json {
        path: path.display().to_string(),
        source,
    })
}

pub fn save_predictor(path: &Path, model: &PredictorModel) -> Result<(), CheckpointError> {
    let m = &model.meta;
    write_json(
        path,
        &PredictorCkpt {
            format: PREDICTOR_FORMAT.to_string(),
            config: model.config().into(),
            sizes: model.network().sizes().to_vec(),
            params: model.network().params().to_vec(),
            meta: TrainMetaDto {
                final_train_nll: m.final_train_nll,
                best_val_nll: m.best_val_nll,
                val_mae: m.val_mae,
                train_nll_curve: m.train_nll_curve.clone(),
                val_nll_curve: m.val_nll_curve.clone(),
                checkpoints: m.checkpoints.clone(),
            },
        },
    )
}

pub fn load_predictor(path: &Path) -> Result<PredictorModel, CheckpointError> {
    let ckpt: PredictorCkpt = read_json(path)?;
    if ckpt.format != PREDICTOR_FORMAT {
        return Err(CheckpointError::Format {
            expected: PREDICTOR_FORMAT,
            got: ckpt.format,
        });
    }
    let meta = TrainMeta {
        final_train_nll: ckpt.meta.final_train_nll,
        best_val_nll: ckpt.meta.best_val_nll,
        val_mae: ckpt.meta.val_mae,
        train_nll_curve: ckpt.meta.train_nll_curve,
        val_nll_curve: ckpt.meta.val_nll_curve,
        checkpoints: ckpt.meta.checkpoints,
    };
    Ok(PredictorModel::from_parts(
        ckpt.config.into(),
        Mlp::from_parts(ckpt.sizes, ckpt.params),
        meta,
    ))
}

pub fn save_policy(path: &Path, policy: &PolicyNet) -> Result<(), CheckpointError> {
    write_json(
        path,
        &NetCkpt {
            format: POLICY_FORMAT.to_string(),
            sizes: policy.network().sizes().to_vec(),
            params: policy.network().params().to_vec(),
        },
    )
}

pub fn load_policy(path: &Path) -> Result<PolicyNet, CheckpointError> {
    let ckpt: NetCkpt = read_json(path)?;
    if ckpt.format != POLICY_FORMAT {
        return Err(CheckpointError::Format {
            expected: POLICY_FORMAT,
            got: ckpt.format,
        });
    }
    Ok(PolicyNet::from_network(Mlp::from_parts(ckpt.sizes, ckpt.params)))
}

pub fn save_value(path: &Path, value: &ValueNet) -> Result<(), CheckpointError> {
    write_json(
        path,
        &NetCkpt {
            format: VALUE_FORMAT.to_string(),
            sizes: value.network().sizes().to_vec(),
            params: value.network().params().to_vec(),
        },
    )
}

pub fn load_value(path: &Path) -> Result<ValueNet, CheckpointError> {
    let ckpt: NetCkpt = read_json(path)?;
    if ckpt.format != VALUE_FORMAT {
        return Err(CheckpointError::Format {
            expected: VALUE_FORMAT,
            got: ckpt.format,
        });
    }
    Ok(ValueNet::from_network(Mlp::from_parts(ckpt.sizes, ckpt.params)))
}
