use rand::Rng;

use super::init::glorot_uniform;
use super::NnError;
use crate::autodiff::{Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softmax,
    None,
}

/// Fully connected layer: `activation(x·W + b)`, `W` is `F_in×F_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub activation: Activation,
}

impl<T: Real> DenseParams<T> {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            w: Tensor::zeros(&[input, output]),
            b: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn init<R: Rng>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            w: glorot_uniform(input, output, rng),
            b: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn input_size(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn output_size(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn validate(&self) -> Result<(), NnError> {
        match (self.w.shape(), self.b.shape()) {
            (&[_, o], &[bo]) if o == bo => Ok(()),
            (w, b) => Err(NnError::BadArch(format!("dense W {w:?} and b {b:?} disagree"))),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Result<BoundDense, NnError> {
        self.validate()?;
        Ok(BoundDense {
            w: tape.param(self.w.clone()),
            b: tape.param(self.b.clone()),
            activation: self.activation,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub w: Var,
    pub b: Var,
    pub activation: Activation,
}

impl BoundDense {
    /// `x·W + b` without the activation.
    pub fn affine<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var, NnError> {
        let xw = tape.matmul(x, self.w)?;
        Ok(tape.add_bias(xw, self.b)?)
    }
}

pub fn dense_forward<T: Real>(tape: &mut Tape<T>, x: Var, layer: &BoundDense) -> Result<Var, NnError> {
    let a = layer.affine(tape, x)?;
    Ok(match layer.activation {
        Activation::Relu => tape.relu(a),
        Activation::Softmax => tape.softmax(a)?,
        Activation::None => a,
    })
}
