pub mod autodiff;
pub mod cli;
pub mod container;
pub mod dataio;
pub mod dsp;
pub mod eval;
pub mod nn;
pub mod seed;
pub mod store;
pub mod train;
