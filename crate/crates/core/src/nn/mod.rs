//! Recurrent and dense layers, and the stacked Bi-GRU classifier.
//!
//! Default architecture, input `B×64×13`:
//!
//! ```text
//! BiGRU(128, seq) → drop → BiGRU(64, seq) → drop → BiGRU(32, last) → drop
//!   → Dense(64, relu) → drop → Dense(32, relu) → drop → Dense(2, softmax)
//! ```
//!
//! GRU convention: `h_t = (1−z)⊙h_{t−1} + z⊙h̃`, the reset gate multiplies
//! `h_{t−1}` before the recurrent product of the candidate, one bias per gate.

mod dense;
mod gru;
mod init;
mod model;

pub use dense::{dense_forward, Activation, BoundDense, DenseParams};
pub use gru::{
    bigru_layer, gru_cell_step, gru_layer_forward, gru_layer_states, BiGruLayerParams,
    BoundBiGru, BoundGruCell, Direction, GruCellParams, OutputMode,
};
pub use init::{glorot_uniform, orthogonal};
pub use model::{model_forward, BoundModel, ModelParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    BadArch(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Layer widths and regularization of the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Channels per time step.
    pub input_features: usize,
    /// Time steps per window.
    pub seq_len: usize,
    /// Units per direction of each stacked Bi-GRU layer.
    pub gru_hidden: Vec<usize>,
    /// Width entering the dense head; must be twice the last GRU width.
    pub head_input: usize,
    /// Hidden dense widths (ReLU); the output layer is appended.
    pub dense_hidden: Vec<usize>,
    pub n_classes: usize,
    pub dropout: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_features: 13,
            seq_len: 64,
            gru_hidden: vec![128, 64, 32],
            head_input: 64,
            dense_hidden: vec![64, 32],
            n_classes: 2,
            dropout: 0.5,
        }
    }
}

impl ArchConfig {
    /// Default head with custom recurrent widths; keeps `head_input`
    /// consistent.
    pub fn with_gru_hidden(gru_hidden: &[usize]) -> Self {
        Self {
            head_input: 2 * gru_hidden.last().copied().unwrap_or(0),
            gru_hidden: gru_hidden.to_vec(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::BadArch(m));
        if self.input_features == 0 || self.seq_len == 0 {
            return bad("input_features and seq_len must be positive".into());
        }
        if self.gru_hidden.is_empty() || self.gru_hidden.contains(&0) {
            return bad(format!("gru_hidden must be non-empty and positive, got {:?}", self.gru_hidden));
        }
        let last = *self.gru_hidden.last().unwrap();
        if self.head_input != 2 * last {
            return bad(format!(
                "head_input {} must equal the final Bi-GRU concat width {}",
                self.head_input,
                2 * last
            ));
        }
        if self.dense_hidden.contains(&0) {
            return bad(format!("dense widths must be positive, got {:?}", self.dense_hidden));
        }
        if self.n_classes < 2 {
            return bad(format!("n_classes must be ≥ 2, got {}", self.n_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut f = self.input_features;
        for &h in &self.gru_hidden {
            total += 2 * 3 * (f * h + h * h + h);
            f = 2 * h;
        }
        let mut f = self.head_input;
        for &d in self.dense_hidden.iter().chain(std::iter::once(&self.n_classes)) {
            total += f * d + d;
            f = d;
        }
        total
    }
}
