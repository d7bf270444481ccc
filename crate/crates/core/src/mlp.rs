//! The tiny view-dependent MLP that decodes accumulated features into a
//! specular residual.
//!
//! Architecture: `[F_s (4) | d (3) | sin/cos(2^k d), k = 0..4 (24)]` ->
//! 16 ReLU -> 16 ReLU -> 3 sigmoid. Parameters live in one flat vector:
//! `W1 (16x31, row-major), b1, W2 (16x16), b2, W3 (3x16), b3`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const FEATURE_DIM: usize = 4;
pub const VIEW_FREQS: usize = 4;
pub const VIEW_ENC_DIM: usize = 3 + 3 * 2 * VIEW_FREQS;
pub const INPUT_DIM: usize = FEATURE_DIM + VIEW_ENC_DIM;
pub const HIDDEN: usize = 16;
pub const OUTPUT_DIM: usize = 3;

const W1: usize = 0;
const B1: usize = W1 + HIDDEN * INPUT_DIM;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + HIDDEN * HIDDEN;
const W3: usize = B2 + HIDDEN;
const B3: usize = W3 + OUTPUT_DIM * HIDDEN;
pub const PARAM_COUNT: usize = B3 + OUTPUT_DIM;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `d`, then `sin(2^k d)` and `cos(2^k d)` per frequency.
pub fn encode_view_dir(d: &Vec3) -> [f64; VIEW_ENC_DIM] {
    let mut out = [0.0; VIEW_ENC_DIM];
    out[..3].copy_from_slice(d.as_slice());
    for k in 0..VIEW_FREQS {
        let f = (1u32 << k) as f64;
        for a in 0..3 {
            let (s, c) = (f * d[a]).sin_cos();
            out[3 + 6 * k + a] = s;
            out[3 + 6 * k + 3 + a] = c;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeferredMLP {
    params: Vec<f64>,
}

/// Activations retained from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: [f64; INPUT_DIM],
    h1: [f64; HIDDEN],
    h2: [f64; HIDDEN],
    out: [f64; OUTPUT_DIM],
}

impl DeferredMLP {
    pub fn zeros() -> Self {
        Self {
            params: vec![0.0; PARAM_COUNT],
        }
    }

    /// Glorot-uniform weights, zero hidden biases, and a constant output bias.
    pub fn init(seed: u64, output_bias: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; PARAM_COUNT];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-a..a);
            }
        };
        fill(W1..B1, INPUT_DIM, HIDDEN);
        fill(W2..B2, HIDDEN, HIDDEN);
        fill(W3..B3, HIDDEN, OUTPUT_DIM);
        for p in &mut params[B3..] {
            *p = output_bias;
        }
        Self { params }
    }

    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        if params.len() != PARAM_COUNT {
            return Err(Error::ShapeMismatch(format!(
                "deferred MLP expects {PARAM_COUNT} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, features: &[f64; FEATURE_DIM], dir: &Vec3) -> [f64; OUTPUT_DIM] {
        self.forward_cached(features, dir).out
    }

    pub fn forward_cached(&self, features: &[f64; FEATURE_DIM], dir: &Vec3) -> MlpCache {
        let p = &self.params;
        let mut input = [0.0; INPUT_DIM];
        input[..FEATURE_DIM].copy_from_slice(features);
        input[FEATURE_DIM..].copy_from_slice(&encode_view_dir(dir));

        let mut h1 = [0.0; HIDDEN];
        for (j, h) in h1.iter_mut().enumerate() {
            let row = &p[W1 + j * INPUT_DIM..W1 + (j + 1) * INPUT_DIM];
            let z: f64 = p[B1 + j] + row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>();
            *h = z.max(0.0);
        }
        let mut h2 = [0.0; HIDDEN];
        for (j, h) in h2.iter_mut().enumerate() {
            let row = &p[W2 + j * HIDDEN..W2 + (j + 1) * HIDDEN];
            let z: f64 = p[B2 + j] + row.iter().zip(&h1).map(|(w, x)| w * x).sum::<f64>();
            *h = z.max(0.0);
        }
        let mut out = [0.0; OUTPUT_DIM];
        for (j, o) in out.iter_mut().enumerate() {
            let row = &p[W3 + j * HIDDEN..W3 + (j + 1) * HIDDEN];
            let z: f64 = p[B3 + j] + row.iter().zip(&h2).map(|(w, x)| w * x).sum::<f64>();
            *o = sigmoid(z);
        }
        MlpCache { input, h1, h2, out }
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the feature input.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64; OUTPUT_DIM], grad: &mut [f64]) -> [f64; FEATURE_DIM] {
        debug_assert_eq!(grad.len(), PARAM_COUNT);
        let p = &self.params;
        let mut dz3 = [0.0; OUTPUT_DIM];
        for j in 0..OUTPUT_DIM {
            let o = cache.out[j];
            dz3[j] = d_out[j] * o * (1.0 - o);
        }
        let mut dh2 = [0.0; HIDDEN];
        for j in 0..OUTPUT_DIM {
            grad[B3 + j] += dz3[j];
            for i in 0..HIDDEN {
                grad[W3 + j * HIDDEN + i] += dz3[j] * cache.h2[i];
                dh2[i] += p[W3 + j * HIDDEN + i] * dz3[j];
            }
        }
        let mut dh1 = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            if cache.h2[j] <= 0.0 {
                continue;
            }
            let dz = dh2[j];
            grad[B2 + j] += dz;
            for i in 0..HIDDEN {
                grad[W2 + j * HIDDEN + i] += dz * cache.h1[i];
                dh1[i] += p[W2 + j * HIDDEN + i] * dz;
            }
        }
        let mut dfeat = [0.0; FEATURE_DIM];
        for j in 0..HIDDEN {
            if cache.h1[j] <= 0.0 {
                continue;
            }
            let dz = dh1[j];
            grad[B1 + j] += dz;
            let row = W1 + j * INPUT_DIM;
            for i in 0..INPUT_DIM {
                grad[row + i] += dz * cache.input[i];
            }
            for (i, d) in dfeat.iter_mut().enumerate() {
                *d += p[row + i] * dz;
            }
        }
        dfeat
    }

    /// Little-endian f32 blob of the parameters.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.params
            .iter()
            .flat_map(|v| (*v as f32).to_le_bytes())
            .collect()
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != PARAM_COUNT * 4 {
            return Err(Error::ShapeMismatch(format!(
                "MLP blob must be {} bytes, got {}",
                PARAM_COUNT * 4,
                bytes.len()
            )));
        }
        let params = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::from_params(params)
    }
}

impl MlpCache {
    pub fn output(&self) -> [f64; OUTPUT_DIM] {
        self.out
    }
}

/// Pixel-wise specular residual `MLP(F_s, d)`.
pub fn specular_decode(mlp: &DeferredMLP, features: &[f64; FEATURE_DIM], dir: &Vec3) -> [f64; OUTPUT_DIM] {
    mlp.forward(features, dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count() {
        assert_eq!(INPUT_DIM, 31);
        assert_eq!(PARAM_COUNT, 31 * 16 + 16 + 16 * 16 + 16 + 16 * 3 + 3);
        assert!(DeferredMLP::from_params(vec![0.0; PARAM_COUNT - 1]).is_err());
    }

    #[test]
    fn zero_network_outputs_half() {
        let m = DeferredMLP::zeros();
        let out = specular_decode(&m, &[0.3, 0.1, 0.9, 0.5], &Vec3::new(0.0, 0.6, 0.8));
        assert_eq!(out, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn deterministic() {
        let m = DeferredMLP::init(7, 0.0);
        let f = [0.2, 0.4, 0.6, 0.8];
        let d = Vec3::new(1.0, 2.0, -2.0).normalize();
        assert_eq!(m.forward(&f, &d), m.forward(&f, &d));
        assert_eq!(DeferredMLP::init(7, 0.0), m);
    }

    /// Second implementation: explicit matrices through nalgebra.
    fn matrix_forward(m: &DeferredMLP, f: &[f64; 4], d: &Vec3) -> [f64; 3] {
        use nalgebra::{DMatrix, DVector};
        let p = m.params();
        let w1 = DMatrix::from_row_slice(HIDDEN, INPUT_DIM, &p[W1..B1]);
        let b1 = DVector::from_column_slice(&p[B1..W2]);
        let w2 = DMatrix::from_row_slice(HIDDEN, HIDDEN, &p[W2..B2]);
        let b2 = DVector::from_column_slice(&p[B2..W3]);
        let w3 = DMatrix::from_row_slice(OUTPUT_DIM, HIDDEN, &p[W3..B3]);
        let b3 = DVector::from_column_slice(&p[B3..]);
        let mut x = vec![f[0], f[1], f[2], f[3], d.x, d.y, d.z];
        for k in 0..4 {
            let s = 2f64.powi(k);
            x.extend([(s * d.x).sin(), (s * d.y).sin(), (s * d.z).sin()]);
            x.extend([(s * d.x).cos(), (s * d.y).cos(), (s * d.z).cos()]);
        }
        let x = DVector::from_vec(x);
        let h1 = (w1 * x + b1).map(|v| v.max(0.0));
        let h2 = (w2 * h1 + b2).map(|v| v.max(0.0));
        let o = (w3 * h2 + b3).map(|v| 1.0 / (1.0 + (-v).exp()));
        [o[0], o[1], o[2]]
    }

    #[test]
    fn matches_matrix_oracle() {
        for seed in 0..5 {
            let m = DeferredMLP::init(seed, -1.0);
            let f = [0.1 * seed as f64, 0.7, 0.3, 0.9];
            let d = Vec3::new(0.3, -0.5 + 0.1 * seed as f64, 0.8).normalize();
            let a = m.forward(&f, &d);
            let b = matrix_forward(&m, &f, &d);
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn blob_round_trip_is_f32() {
        let m = DeferredMLP::init(3, 0.0);
        let back = DeferredMLP::from_le_bytes(&m.to_le_bytes()).unwrap();
        for (a, b) in m.params().iter().zip(back.params()) {
            assert_eq!(*a as f32 as f64, *b);
        }
        assert!(DeferredMLP::from_le_bytes(&[0u8; 12]).is_err());
    }
}
