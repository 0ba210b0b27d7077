//! Training schedule: extractor pretraining, VAE pretraining and the joint
//! loop with the property-consistency (I) and latent-consistency (II)
//! updates.
//!
//! Every random draw comes from a stream keyed by `(seed, stage, step,
//! item)`, and per-molecule gradients are reduced in batch order, so a run
//! is bit-reproducible regardless of thread count and can resume from any
//! checkpoint. Stage progress lives in the parameter store's metadata.

mod config;
mod gradients;
mod state;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;
use crate::nn::NnError;

pub use config::{ConsistencyOption, ConsistencyTarget, TrainConfig};
pub use gradients::{check_networks, NetworkCheck};
pub use state::StageState;
pub use trainer::{consistency_loss, extractor_mse, label_accuracy, StageReport, Trainer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric fault: {0}")]
    Numeric(String),
    #[error("no usable molecules")]
    EmptyCorpus,
    #[error(transparent)]
    Model(ModelError),
    #[error("log sink: {0}")]
    Sink(String),
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Nn(NnError::NumericFault(m)) => TrainError::Numeric(m),
            other => TrainError::Model(other),
        }
    }
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        ModelError::from(e).into()
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Extractor,
    Vae,
    Joint,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Extractor => "extractor",
            Stage::Vae => "vae",
            Stage::Joint => "joint",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Stage::Extractor => 1,
            Stage::Vae => 2,
            Stage::Joint => 3,
        }
    }
}

/// One optimizer step. Loss fields are batch means; optional fields are
/// present only for the stages that produce them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: Stage,
    pub step: u64,
    pub batch: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assembly: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<f64>,
    /// Full-corpus extractor MSE, at evaluation steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_mse: Option<f64>,
}

impl StepRecord {
    fn new(stage: Stage, step: u64, batch: usize, loss: f64) -> Self {
        StepRecord {
            stage,
            step,
            batch,
            loss,
            kl: None,
            beta: None,
            topo: None,
            label: None,
            assembly: None,
            label_acc: None,
            consistency: None,
            train_mse: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Receives every step record together with the updated store (stage
/// progress already written to its metadata, so it is checkpointable).
pub trait TrainSink {
    fn record(
        &mut self,
        rec: &StepRecord,
        store: &crate::nn::ParamStore,
    ) -> std::result::Result<Control, String>;
}

impl TrainSink for Vec<StepRecord> {
    fn record(
        &mut self,
        rec: &StepRecord,
        _: &crate::nn::ParamStore,
    ) -> std::result::Result<Control, String> {
        self.push(rec.clone());
        Ok(Control::Continue)
    }
}

impl<F> TrainSink for F
where
    F: FnMut(&StepRecord, &crate::nn::ParamStore) -> std::result::Result<Control, String>,
{
    fn record(
        &mut self,
        rec: &StepRecord,
        store: &crate::nn::ParamStore,
    ) -> std::result::Result<Control, String> {
        self(rec, store)
    }
}

/// Discards records.
pub struct NullSink;

impl TrainSink for NullSink {
    fn record(
        &mut self,
        _: &StepRecord,
        _: &crate::nn::ParamStore,
    ) -> std::result::Result<Control, String> {
        Ok(Control::Continue)
    }
}
