use rand::Rng;

use super::init::{glorot_uniform, orthogonal};
use super::NnError;
use crate::autodiff::{AutodiffError, Real, Tape, Tensor, Var};

/// Parameter names of one GRU cell, in storage order.
pub const GATE_NAMES: [&str; 9] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];

/// Weights of one GRU direction. `w_*` are `F_in×H`, `u_*` are `H×H`,
/// `b_*` have length `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams<T> {
    pub w_z: Tensor<T>,
    pub w_r: Tensor<T>,
    pub w_h: Tensor<T>,
    pub u_z: Tensor<T>,
    pub u_r: Tensor<T>,
    pub u_h: Tensor<T>,
    pub b_z: Tensor<T>,
    pub b_r: Tensor<T>,
    pub b_h: Tensor<T>,
}

impl<T: Real> GruCellParams<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[input, hidden]);
        let u = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        Self {
            w_z: w(),
            w_r: w(),
            w_h: w(),
            u_z: u(),
            u_r: u(),
            u_h: u(),
            b_z: b(),
            b_r: b(),
            b_h: b(),
        }
    }

    /// Glorot-uniform input weights, orthogonal recurrent weights, zero biases.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w_z: glorot_uniform(input, hidden, rng),
            w_r: glorot_uniform(input, hidden, rng),
            w_h: glorot_uniform(input, hidden, rng),
            u_z: orthogonal(hidden, rng),
            u_r: orthogonal(hidden, rng),
            u_h: orthogonal(hidden, rng),
            b_z: Tensor::zeros(&[hidden]),
            b_r: Tensor::zeros(&[hidden]),
            b_h: Tensor::zeros(&[hidden]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_z.shape()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_z.shape()[1]
    }

    pub fn tensors(&self) -> [&Tensor<T>; 9] {
        [
            &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r,
            &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let (f, h) = match self.w_z.shape() {
            &[f, h] => (f, h),
            s => return Err(NnError::BadArch(format!("w_z must be rank 2, got {s:?}"))),
        };
        let expect: [&[usize]; 3] = [&[f, h], &[h, h], &[h]];
        for (i, (name, t)) in GATE_NAMES.iter().zip(self.tensors()).enumerate() {
            if t.shape() != expect[i / 3] {
                return Err(NnError::BadArch(format!(
                    "{name} has shape {:?}, expected {:?}",
                    t.shape(),
                    expect[i / 3]
                )));
            }
        }
        Ok(())
    }

    /// Registers the nine tensors as trainable leaves and builds the fused
    /// gate matrices on the tape.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<BoundGruCell, NnError> {
        self.validate()?;
        let leaves = self.tensors().map(|t| tape.param(t.clone()));
        let [w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h] = leaves;
        Ok(BoundGruCell {
            leaves,
            w: tape.concat(&[w_z, w_r, w_h], 1)?,
            u_zr: tape.concat(&[u_z, u_r], 1)?,
            u_h,
            b: tape.concat(&[b_z, b_r, b_h], 0)?,
            input: self.input_size(),
            hidden: self.hidden_size(),
        })
    }
}

/// A GRU cell whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundGruCell {
    /// Leaves in [`GATE_NAMES`] order.
    pub leaves: [Var; 9],
    w: Var,
    u_zr: Var,
    u_h: Var,
    b: Var,
    input: usize,
    hidden: usize,
}

impl BoundGruCell {
    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    /// `x·[W_z|W_r|W_h] + [b_z|b_r|b_h]` for `x` of shape `N×F_in`.
    fn project<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var, AutodiffError> {
        let xw = tape.matmul(x, self.w)?;
        tape.add_bias(xw, self.b)
    }

    /// Recurrent half of a step given the projected input `xp` (`B×3H`).
    fn update<T: Real>(&self, tape: &mut Tape<T>, xp: Var, h_prev: Var) -> Result<Var, AutodiffError> {
        let h = self.hidden;
        let hu = tape.matmul(h_prev, self.u_zr)?;
        let x_zr = tape.slice(xp, 1, 0, 2 * h)?;
        let pre_zr = tape.add(x_zr, hu)?;
        let zr = tape.sigmoid(pre_zr);
        let z = tape.slice(zr, 1, 0, h)?;
        let r = tape.slice(zr, 1, h, h)?;
        let x_h = tape.slice(xp, 1, 2 * h, h)?;
        let rh = tape.mul(r, h_prev)?;
        let rhu = tape.matmul(rh, self.u_h)?;
        let pre_cand = tape.add(x_h, rhu)?;
        let cand = tape.tanh(pre_cand);
        // (1−z)⊙h_prev + z⊙h̃  ==  h_prev + z⊙(h̃ − h_prev)
        let delta = tape.sub(cand, h_prev)?;
        let step = tape.mul(z, delta)?;
        tape.add(h_prev, step)
    }
}

/// One GRU step: `x_t` is `B×F_in`, `h_prev` is `B×H`.
pub fn gru_cell_step<T: Real>(
    tape: &mut Tape<T>,
    x_t: Var,
    h_prev: Var,
    cell: &BoundGruCell,
) -> Result<Var, NnError> {
    let xp = cell.project(tape, x_t)?;
    Ok(cell.update(tape, xp, h_prev)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

fn seq_dims<T: Real>(tape: &Tape<T>, seq: Var, input: usize) -> Result<(usize, usize), NnError> {
    match *tape.shape(seq) {
        [b, t, f] if f == input && t >= 1 => Ok((b, t)),
        ref s => Err(AutodiffError::ShapeMismatch {
            op: "gru_layer",
            left: s.to_vec(),
            right: vec![input],
        }
        .into()),
    }
}

/// Runs one direction over `seq` (`B×T×F_in`) from a zero state and returns
/// the hidden state at every time position, `B×H` each.
///
/// For [`Direction::Backward`] the recurrence runs from `T−1` down to `0`
/// and element `t` holds the state computed at position `t`.
pub fn gru_layer_states<T: Real>(
    tape: &mut Tape<T>,
    seq: Var,
    cell: &BoundGruCell,
    direction: Direction,
) -> Result<Vec<Var>, NnError> {
    let (b, t_len) = seq_dims(tape, seq, cell.input)?;
    let h = cell.hidden;
    // project every time step at once
    let flat = tape.reshape(seq, &[b * t_len, cell.input])?;
    let xp_flat = cell.project(tape, flat)?;
    let xp_all = tape.reshape(xp_flat, &[b, t_len, 3 * h])?;

    let mut state = tape.constant(Tensor::zeros(&[b, h]));
    let mut states = vec![state; t_len];
    let order: Box<dyn Iterator<Item = usize>> = match direction {
        Direction::Forward => Box::new(0..t_len),
        Direction::Backward => Box::new((0..t_len).rev()),
    };
    for t in order {
        let xp_t = tape.slice(xp_all, 1, t, 1)?;
        let xp_t = tape.reshape(xp_t, &[b, 3 * h])?;
        state = cell.update(tape, xp_t, state)?;
        states[t] = state;
    }
    Ok(states)
}

fn stack_time<T: Real>(tape: &mut Tape<T>, states: &[Var]) -> Result<Var, AutodiffError> {
    let (b, h) = (tape.shape(states[0])[0], tape.shape(states[0])[1]);
    let expanded = states
        .iter()
        .map(|&s| tape.reshape(s, &[b, 1, h]))
        .collect::<Result<Vec<_>, _>>()?;
    tape.concat(&expanded, 1)
}

/// One direction over the whole sequence, stacked to `B×T×H`.
pub fn gru_layer_forward<T: Real>(
    tape: &mut Tape<T>,
    seq: Var,
    cell: &BoundGruCell,
    direction: Direction,
) -> Result<Var, NnError> {
    let states = gru_layer_states(tape, seq, cell, direction)?;
    Ok(stack_time(tape, &states)?)
}

/// What a Bi-GRU layer hands to the next layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    /// `B×T×2H`, per-step concatenation.
    Sequence,
    /// `B×2H`: forward state at the last step joined with the backward
    /// state at the first step.
    LastConcat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiGruLayerParams<T> {
    pub forward: GruCellParams<T>,
    pub backward: GruCellParams<T>,
    pub output_mode: OutputMode,
}

impl<T: Real> BiGruLayerParams<T> {
    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size()
    }

    pub fn output_width(&self) -> usize {
        2 * self.hidden_size()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        self.forward.validate()?;
        self.backward.validate()?;
        if self.forward.hidden_size() != self.backward.hidden_size()
            || self.forward.input_size() != self.backward.input_size()
        {
            return Err(NnError::BadArch(format!(
                "directions disagree: forward {}→{}, backward {}→{}",
                self.forward.input_size(),
                self.forward.hidden_size(),
                self.backward.input_size(),
                self.backward.hidden_size()
            )));
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Result<BoundBiGru, NnError> {
        self.validate()?;
        Ok(BoundBiGru {
            forward: self.forward.bind(tape)?,
            backward: self.backward.bind(tape)?,
            output_mode: self.output_mode,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BoundBiGru {
    pub forward: BoundGruCell,
    pub backward: BoundGruCell,
    pub output_mode: OutputMode,
}

/// Bidirectional layer with dropout on its output when `training`.
pub fn bigru_layer<T: Real>(
    tape: &mut Tape<T>,
    seq: Var,
    layer: &BoundBiGru,
    dropout_rate: f64,
    training: bool,
    seed: u64,
) -> Result<Var, NnError> {
    let fwd = gru_layer_states(tape, seq, &layer.forward, Direction::Forward)?;
    let bwd = gru_layer_states(tape, seq, &layer.backward, Direction::Backward)?;
    let out = match layer.output_mode {
        OutputMode::Sequence => {
            let f = stack_time(tape, &fwd)?;
            let b = stack_time(tape, &bwd)?;
            tape.concat(&[f, b], 2)?
        }
        OutputMode::LastConcat => tape.concat(&[*fwd.last().unwrap(), bwd[0]], 1)?,
    };
    Ok(tape.dropout(out, dropout_rate, training, seed)?)
}
