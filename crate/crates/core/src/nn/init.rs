use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Real, Tensor};

/// Uniform on `±sqrt(6/(fan_in+fan_out))`, shape `fan_in×fan_out`.
pub fn glorot_uniform<T: Real, R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::from_f64_lossy(rng.random_range(-limit..=limit)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches data")
}

/// Random orthogonal `n×n` matrix: Gram-Schmidt on a Gaussian draw, with
/// column signs fixed so the distribution is Haar.
pub fn orthogonal<T: Real, R: Rng>(n: usize, rng: &mut R) -> Tensor<T> {
    // columns of the Gaussian matrix, orthonormalized in f64
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for j in 0..n {
        for _pass in 0..2 {
            for i in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let qi = &done[i];
                let dot: f64 = qi.iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
                for (x, q) in rest[0].iter_mut().zip(qi) {
                    *x -= dot * q;
                }
            }
        }
        let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        // sign of the first nonzero entry plays the role of sign(diag(R))
        let sign = if cols[j][0] < 0.0 { -1.0 } else { 1.0 };
        for x in cols[j].iter_mut() {
            *x *= sign / norm;
        }
    }
    let mut data = vec![T::zero(); n * n];
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            data[i * n + j] = T::from_f64_lossy(v);
        }
    }
    Tensor::new(vec![n, n], data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_gram_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 2, 7, 32, 128] {
            let u: Tensor<f64> = orthogonal(n, &mut rng);
            let gram = u.transpose2().unwrap().matmul(&u).unwrap();
            assert!(gram.max_abs_diff(&Tensor::eye(n)) < 1e-10, "n={n}");
        }
    }

    #[test]
    fn glorot_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w: Tensor<f64> = glorot_uniform(13, 128, &mut rng);
        let limit = (6.0f64 / 141.0).sqrt();
        assert!(w.data().iter().all(|x| x.abs() <= limit));
        let mean = w.data().iter().sum::<f64>() / w.numel() as f64;
        assert!(mean.abs() < 0.02);
    }
}
