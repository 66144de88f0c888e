//! Signal pipeline from cleaned recordings to balanced, augmented and split
//! window samples.

mod augment;
mod balance;
mod filter;
mod pipeline;
mod split;
mod standardize;
mod window;

pub use augment::augment_gaussian;
pub use balance::{balance_undersample, class_counts};
pub use filter::{bandpass_filter, FilterSpec, Section, SosFilter};
pub use pipeline::{
    run_pipeline, PipelineConfig, PipelineMode, PipelineOutput, PipelineReport, PipelineSeeds, StageCount,
    StandardizeMode,
};
pub use split::{split_train_test, SplitDataset};
pub use standardize::{apply_stats, channel_stats, standardize, ChannelStats, StatsSource};
pub use window::{window_segments, WindowOrigin, WindowSample};

use thiserror::Error;

use crate::dataio::ClassLabel;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid filter spec: {0}")]
    InvalidFilterSpec(String),
    #[error("numerical instability: {0}")]
    NumericalInstability(String),
    #[error("({subject_id}, {run_id}) channel {channel} has zero variance")]
    ZeroVariance {
        subject_id: String,
        run_id: String,
        channel: String,
    },
    #[error("channel layout mismatch: {0}")]
    ChannelMismatch(String),
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("class {0} has no samples")]
    MissingClass(ClassLabel),
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("no recordings given")]
    EmptyInput,
    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<DspError>,
    },
}

impl DspError {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(DspError) -> DspError {
        move |e| DspError::Stage {
            stage,
            source: Box::new(e),
        }
    }
}
