use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::{dense_forward, Activation, BoundDense, DenseParams};
use super::gru::{bigru_layer, BiGruLayerParams, BoundBiGru, GruCellParams, OutputMode, GATE_NAMES};
use super::{ArchConfig, NnError};
use crate::autodiff::{AutodiffError, Gradients, Real, Tape, Tensor, Var};
use crate::seed::mix;

/// Every learnable tensor of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub arch: ArchConfig,
    pub bigru: Vec<BiGruLayerParams<T>>,
    pub dense: Vec<DenseParams<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Fresh parameters for `arch`, deterministic in `init_seed`.
    pub fn build(arch: &ArchConfig, init_seed: u64) -> Result<Self, NnError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let n = arch.gru_hidden.len();
        let mut bigru = Vec::with_capacity(n);
        let mut f = arch.input_features;
        for (i, &h) in arch.gru_hidden.iter().enumerate() {
            bigru.push(BiGruLayerParams {
                forward: GruCellParams::init(f, h, &mut rng),
                backward: GruCellParams::init(f, h, &mut rng),
                output_mode: if i + 1 == n { OutputMode::LastConcat } else { OutputMode::Sequence },
            });
            f = 2 * h;
        }
        let dense = Self::dense_widths(arch)
            .map(|(i, o, act)| DenseParams::init(i, o, act, &mut rng))
            .collect();
        Ok(Self { arch: arch.clone(), bigru, dense })
    }

    /// All-zero parameters with the shapes `arch` implies.
    pub fn zeros(arch: &ArchConfig) -> Result<Self, NnError> {
        arch.validate()?;
        let n = arch.gru_hidden.len();
        let mut f = arch.input_features;
        let mut bigru = Vec::with_capacity(n);
        for (i, &h) in arch.gru_hidden.iter().enumerate() {
            bigru.push(BiGruLayerParams {
                forward: GruCellParams::zeros(f, h),
                backward: GruCellParams::zeros(f, h),
                output_mode: if i + 1 == n { OutputMode::LastConcat } else { OutputMode::Sequence },
            });
            f = 2 * h;
        }
        let dense = Self::dense_widths(arch)
            .map(|(i, o, act)| DenseParams::zeros(i, o, act))
            .collect();
        Ok(Self { arch: arch.clone(), bigru, dense })
    }

    fn dense_widths(arch: &ArchConfig) -> impl Iterator<Item = (usize, usize, Activation)> + '_ {
        let outs: Vec<usize> = arch
            .dense_hidden
            .iter()
            .copied()
            .chain(std::iter::once(arch.n_classes))
            .collect();
        let last = outs.len() - 1;
        let mut f = arch.head_input;
        outs.into_iter().enumerate().map(move |(i, o)| {
            let act = if i == last { Activation::Softmax } else { Activation::Relu };
            let item = (f, o, act);
            f = o;
            item
        })
    }

    /// Parameter names in storage order, e.g. `bigru1.fwd.w_z`, `dense3.b`.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 1..=self.bigru.len() {
            for dir in ["fwd", "bwd"] {
                names.extend(GATE_NAMES.iter().map(|g| format!("bigru{i}.{dir}.{g}")));
            }
        }
        for i in 1..=self.dense.len() {
            names.push(format!("dense{i}.w"));
            names.push(format!("dense{i}.b"));
        }
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.bigru {
            out.extend(layer.forward.tensors());
            out.extend(layer.backward.tensors());
        }
        for d in &self.dense {
            out.push(&d.w);
            out.push(&d.b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.bigru {
            out.extend(layer.forward.tensors_mut());
            out.extend(layer.backward.tensors_mut());
        }
        for d in &mut self.dense {
            out.push(&mut d.w);
            out.push(&mut d.b);
        }
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.names().into_iter().zip(self.tensors()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let cell = |c: &GruCellParams<T>| GruCellParams {
            w_z: c.w_z.cast(),
            w_r: c.w_r.cast(),
            w_h: c.w_h.cast(),
            u_z: c.u_z.cast(),
            u_r: c.u_r.cast(),
            u_h: c.u_h.cast(),
            b_z: c.b_z.cast(),
            b_r: c.b_r.cast(),
            b_h: c.b_h.cast(),
        };
        ModelParams {
            arch: self.arch.clone(),
            bigru: self
                .bigru
                .iter()
                .map(|l| BiGruLayerParams {
                    forward: cell(&l.forward),
                    backward: cell(&l.backward),
                    output_mode: l.output_mode,
                })
                .collect(),
            dense: self
                .dense
                .iter()
                .map(|d| DenseParams { w: d.w.cast(), b: d.b.cast(), activation: d.activation })
                .collect(),
        }
    }

    /// Places every tensor on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<BoundModel, NnError> {
        let layers = self
            .bigru
            .iter()
            .map(|l| l.bind(tape))
            .collect::<Result<Vec<_>, _>>()?;
        let dense = self
            .dense
            .iter()
            .map(|d| d.bind(tape))
            .collect::<Result<Vec<_>, _>>()?;
        let mut params = Vec::new();
        for l in &layers {
            params.extend(l.forward.leaves);
            params.extend(l.backward.leaves);
        }
        for d in &dense {
            params.push(d.w);
            params.push(d.b);
        }
        Ok(BoundModel {
            layers,
            dense,
            dropout: self.arch.dropout,
            input_features: self.arch.input_features,
            seq_len: self.arch.seq_len,
            params,
        })
    }
}

/// A model whose parameters are leaves of one tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    layers: Vec<BoundBiGru>,
    dense: Vec<BoundDense>,
    dropout: f64,
    input_features: usize,
    seq_len: usize,
    /// Leaves in [`ModelParams::tensors`] order.
    pub params: Vec<Var>,
}

impl BoundModel {
    /// Pre-softmax scores, `B×n_classes`. `x` is `B×T×F`.
    ///
    /// Dropout sites draw their masks from `seed` mixed with the site index.
    pub fn logits<T: Real>(&self, tape: &mut Tape<T>, x: Var, training: bool, seed: u64) -> Result<Var, NnError> {
        match *tape.shape(x) {
            [_, t, f] if t == self.seq_len && f == self.input_features => {}
            ref s => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "model_forward",
                    left: s.to_vec(),
                    right: vec![self.seq_len, self.input_features],
                }
                .into())
            }
        }
        let mut site = 0u64;
        let mut h = x;
        for layer in &self.layers {
            h = bigru_layer(tape, h, layer, self.dropout, training, mix(seed, site))?;
            site += 1;
        }
        let (last, hidden) = self.dense.split_last().expect("at least the output layer");
        for d in hidden {
            h = dense_forward(tape, h, d)?;
            h = tape.dropout(h, self.dropout, training, mix(seed, site))?;
            site += 1;
        }
        last.affine(tape, h)
    }

    pub fn probabilities<T: Real>(&self, tape: &mut Tape<T>, x: Var, training: bool, seed: u64) -> Result<Var, NnError> {
        let z = self.logits(tape, x, training, seed)?;
        Ok(tape.softmax(z)?)
    }

    /// Parameter gradients in [`ModelParams::tensors`] order.
    pub fn collect_grads<T: Real>(&self, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        self.params
            .iter()
            .map(|&v| grads.take(v).expect("backward fills every trainable leaf"))
            .collect()
    }
}

/// Class probabilities for `batch` (`B×T×F`), rows summing to one.
pub fn model_forward<T: Real>(
    params: &ModelParams<T>,
    batch: &Tensor<T>,
    training: bool,
    seed: u64,
) -> Result<Tensor<T>, NnError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let x = tape.constant(batch.clone());
    let p = bound.probabilities(&mut tape, x, training, seed)?;
    Ok(tape.value(p).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{max_rel_err, numeric_grad};
    use rand::Rng;

    fn random_batch(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn default_model_count_and_shape_chain() {
        let p = ModelParams::<f32>::build(&ArchConfig::default(), 1).unwrap();
        assert_eq!(p.param_count(), 269_538);
        let widths: Vec<usize> = p.bigru.iter().map(|l| l.output_width()).collect();
        assert_eq!(widths, vec![256, 128, 64]);
        let dense: Vec<usize> = p.dense.iter().map(|d| d.output_size()).collect();
        assert_eq!(dense, vec![64, 32, 2]);
        assert_eq!(p.names().len(), p.tensors().len());
    }

    #[test]
    fn init_is_deterministic_and_orthogonal() {
        let a = ModelParams::<f32>::build(&ArchConfig::default(), 9).unwrap();
        let b = ModelParams::<f32>::build(&ArchConfig::default(), 9).unwrap();
        let c = ModelParams::<f32>::build(&ArchConfig::default(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (name, t) in a.named_tensors() {
            if name.contains(".u_") {
                let n = t.shape()[0];
                let gram = t.transpose2().unwrap().matmul(t).unwrap();
                assert!(gram.max_abs_diff(&Tensor::eye(n)) < 1e-5, "{name}");
            }
            if name.ends_with(".b") || name.contains(".b_") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn bad_head_rejected() {
        let arch = ArchConfig { head_input: 32, ..ArchConfig::default() };
        assert!(matches!(ModelParams::<f32>::build(&arch, 0), Err(NnError::BadArch(_))));
    }

    #[test]
    fn full_size_forward_shape() {
        let p = ModelParams::<f32>::build(&ArchConfig::default(), 3).unwrap();
        let x = random_batch(&[64, 64, 13], 1).cast::<f32>();
        let y = model_forward(&p, &x, false, 0).unwrap();
        assert_eq!(y.shape(), &[64, 2]);
        for row in y.data().chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
        }
        let one = random_batch(&[1, 64, 13], 2).cast::<f32>();
        let y1 = model_forward(&p, &one, false, 0).unwrap();
        assert_eq!(y1.shape(), &[1, 2]);
        assert!((y1.data()[0] + y1.data()[1] - 1.0).abs() < 1e-6);
        let wrong = Tensor::<f32>::zeros(&[2, 64, 12]);
        assert!(model_forward(&p, &wrong, false, 0).is_err());
    }

    fn small_arch() -> ArchConfig {
        ArchConfig {
            input_features: 3,
            seq_len: 5,
            ..ArchConfig::with_gru_hidden(&[4, 3, 2])
        }
    }

    #[test]
    fn identical_rows_identical_outputs_and_permutation() {
        let p = ModelParams::<f64>::build(&small_arch(), 4).unwrap();
        let x = random_batch(&[3, 5, 3], 5);
        let mut dup = Vec::new();
        dup.extend_from_slice(&x.data()[15..30]);
        dup.extend_from_slice(&x.data()[0..15]);
        dup.extend_from_slice(&x.data()[15..30]);
        let permuted = Tensor::new(vec![3, 5, 3], dup).unwrap();
        let y = model_forward(&p, &x, false, 0).unwrap();
        let yp = model_forward(&p, &permuted, false, 0).unwrap();
        for k in 0..2 {
            assert!((yp.get(&[0, k]) - y.get(&[1, k])).abs() < 1e-12);
            assert!((yp.get(&[1, k]) - y.get(&[0, k])).abs() < 1e-12);
            assert!((yp.get(&[0, k]) - yp.get(&[2, k])).abs() < 1e-12);
        }
        assert_eq!(model_forward(&p, &x, false, 0).unwrap(), y);
    }

    #[test]
    fn zero_model_is_uniform() {
        let p = ModelParams::<f64>::zeros(&small_arch()).unwrap();
        let y = model_forward(&p, &random_batch(&[4, 5, 3], 6), false, 0).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn shrunken_model_gradients_match_finite_differences() {
        let arch = small_arch();
        let params = ModelParams::<f64>::build(&arch, 17).unwrap();
        let x = random_batch(&[2, 5, 3], 18);
        let labels = Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let loss_of = |p: &ModelParams<f64>| {
            let mut tape = Tape::new();
            let bound = p.bind(&mut tape).unwrap();
            let xv = tape.constant(x.clone());
            let z = bound.logits(&mut tape, xv, false, 0).unwrap();
            let l = tape.softmax_cross_entropy(z, labels.clone()).unwrap();
            (tape, bound, l)
        };
        let (tape, bound, l) = loss_of(&params);
        let mut grads = tape.backward(l).unwrap();
        let analytic = bound.collect_grads(&mut grads);
        let mut worst: f64 = 0.0;
        for (k, name) in params.names().iter().enumerate() {
            let mut f = |t: &Tensor<f64>| {
                let mut q = params.clone();
                *q.tensors_mut()[k] = t.clone();
                let (tp, _, l) = loss_of(&q);
                tp.value(l).item()
            };
            let num = numeric_grad(&mut f, params.tensors()[k], 1e-5);
            let err = max_rel_err(&analytic[k], &num);
            assert!(err < 1e-4, "{name}: {err}");
            worst = worst.max(err);
        }
        assert!(worst < 1e-4);
    }
}
