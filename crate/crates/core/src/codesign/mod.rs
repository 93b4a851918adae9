//! Differentiable bandpass filter bank trained jointly with a small
//! classifier.
//!
//! Each channel is a second-order transconductor-capacitor bandpass whose
//! second transconductance and capacitance are learned as log scaling
//! factors of fixed unit devices.

mod autodiff;
mod bpf;
mod data;
mod export;
mod features;
mod model;
mod train;

use thiserror::Error;

pub use autodiff::{GraphError, Tape, Var};
pub use bpf::{
    biquad_on_tape, channel_for, init_bank, Biquad, BiquadVars, BpfChannel, Derived, FilterBank,
    UnitConstants, N_CHANNELS,
};
pub use data::{load_wav_dir, snr_mix, synthetic, Clip, Dataset, SyntheticConfig};
pub use export::{
    netlist_values, render_bank_netlist, write_bank_csv, write_history_csv, write_response_csv,
    ChannelRecord, ModelFile,
};
pub use features::{
    bank_on_tape, feature_values, forward_features, frame_len, hop_len, mean_features, BankVars,
    Frame, LOG_FLOOR,
};
pub use model::{loss_bpf, Classifier, ClassifierVars, LossConfig};
pub use train::{
    evaluate, example_gradient, example_loss, fit_normalization, train_codesign, EpochRecord,
    ExampleGrad, TrainConfig, Trained,
};

#[derive(Debug, Error)]
pub enum CodesignError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("center frequency {f0:.1} Hz is not below fs/2 = {:.1} Hz", fs / 2.0)]
    Alias { f0: f64, fs: f64 },
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("training diverged in epoch {}: {}", .0.epoch, .0.message)]
    Divergence(Box<Diverged>),
    #[error("{0}")]
    Io(String),
}

/// State before the step that diverged.
#[derive(Debug, Clone)]
pub struct Diverged {
    pub epoch: usize,
    pub message: String,
    pub bank: FilterBank,
    pub classifier: Classifier,
    pub history: Vec<EpochRecord>,
}
