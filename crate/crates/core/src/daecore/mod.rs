//! Disentangling auto-encoder numerics: two-layer encoder/decoder MLPs, the
//! latent signer/background split, cosine similarity losses, the
//! signer-feature swap, L1 reconstruction, momentum teacher updates, and the
//! total-loss composition. Gradients are hand-derived in `grad`.
//!
//! Cosine similarity is computed as `dot(x, y) / sqrt(dot(x,x) * dot(y,y))`,
//! which makes `sim_pos(x, x)` exactly zero in f64.

mod grad;
pub mod io;

pub use grad::{dae_grads, loss_rec_grad, loss_sim_grad, sim_neg_grad, sim_pos_grad, DaeGrads, LinearGrads};
pub(crate) use grad::mlp_backward;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norm threshold below which cosine similarity is refused.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DaeError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("vector norm below {NORM_EPS}; cosine similarity undefined")]
    DegenerateNorm,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("feature dimension {0} must be even")]
    OddDimension(usize),
    #[error("margin {0} outside [-1, 1]")]
    BadMargin(f64),
    #[error("momentum {0} outside [0, 1]")]
    BadMomentum(f64),
    #[error("alpha {0} must be >= 0")]
    BadAlpha(f64),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("bad checkpoint {path}: {reason}")]
    BadCheckpoint {
        path: std::path::PathBuf,
        reason: String,
    },
}

/// A flattened spatial feature vector (the auto-encoder's input space).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVec {
    values: Vec<f64>,
}

impl FeatureVec {
    pub fn new(values: Vec<f64>) -> Result<Self, DaeError> {
        if values.len() % 2 != 0 {
            return Err(DaeError::OddDimension(values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DaeError::NonFinite("feature vector"));
        }
        Ok(FeatureVec { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// A latent vector physically split into a signer half and a background half.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPair {
    signer: Vec<f64>,
    background: Vec<f64>,
}

impl LatentPair {
    pub fn new(signer: Vec<f64>, background: Vec<f64>) -> Result<Self, DaeError> {
        if signer.len() != background.len() {
            return Err(DaeError::ShapeMismatch {
                what: "latent halves",
                expected: signer.len(),
                got: background.len(),
            });
        }
        if signer.iter().chain(&background).any(|v| !v.is_finite()) {
            return Err(DaeError::NonFinite("latent pair"));
        }
        Ok(LatentPair { signer, background })
    }

    pub fn signer(&self) -> &[f64] {
        &self.signer
    }

    pub fn background(&self) -> &[f64] {
        &self.background
    }

    pub fn half_dim(&self) -> usize {
        self.signer.len()
    }

    /// Concatenated `[signer, background]` vector.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.signer.len());
        v.extend_from_slice(&self.signer);
        v.extend_from_slice(&self.background);
        v
    }

    fn from_concat(h: &[f64]) -> LatentPair {
        let half = h.len() / 2;
        LatentPair {
            signer: h[..half].to_vec(),
            background: h[half..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Test-only passthrough so identity weight configurations round-trip
    /// exactly; never used in training.
    Identity,
}

impl Activation {
    pub(crate) fn apply(self, z: &[f64]) -> Vec<f64> {
        match self {
            Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
            Activation::Identity => z.to_vec(),
        }
    }

    /// Derivative given the preactivation; the ReLU subgradient at 0 is 0.
    pub(crate) fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// A dense affine layer, weights row-major `[rows x cols]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Linear {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    /// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (cols as f64).sqrt();
        let w = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        let b = (0..rows).map(|_| rng.random_range(-bound..=bound)).collect();
        Linear { rows, cols, w, b }
    }

    pub fn eye(n: usize) -> Self {
        let mut l = Linear::zeros(n, n);
        for i in 0..n {
            l.w[i * n + i] = 1.0;
        }
        l
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, DaeError> {
        if x.len() != self.cols {
            return Err(DaeError::ShapeMismatch {
                what: "linear input",
                expected: self.cols,
                got: x.len(),
            });
        }
        let mut y = self.b.clone();
        for (r, yr) in y.iter_mut().enumerate() {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            *yr += row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
        Ok(y)
    }

    /// Input gradient `W^T delta`; parameter gradients are accumulated by the
    /// caller via [`LinearGrads`].
    pub(crate) fn input_grad(&self, delta: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.cols];
        for (r, d) in delta.iter().enumerate() {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            for (dx_i, w) in dx.iter_mut().zip(row) {
                *dx_i += w * d;
            }
        }
        dx
    }
}

/// Encoder/decoder parameters. Shapes compose `D -> Dh` through two encoder
/// layers and `Dh -> D` back through two decoder layers; the decoder is
/// shared between the teacher and student branches.
#[derive(Debug, Clone, PartialEq)]
pub struct DaeParams {
    pub enc1: Linear, // Dh x D
    pub enc2: Linear, // Dh x Dh
    pub dec1: Linear, // Dh x Dh
    pub dec2: Linear, // D x Dh
    pub activation: Activation,
}

impl DaeParams {
    pub fn init<R: Rng + ?Sized>(
        feature_dim: usize,
        latent_dim: usize,
        rng: &mut R,
    ) -> Result<Self, DaeError> {
        if latent_dim % 2 != 0 {
            return Err(DaeError::OddDimension(latent_dim));
        }
        Ok(DaeParams {
            enc1: Linear::init(latent_dim, feature_dim, rng),
            enc2: Linear::init(latent_dim, latent_dim, rng),
            dec1: Linear::init(latent_dim, latent_dim, rng),
            dec2: Linear::init(feature_dim, latent_dim, rng),
            activation: Activation::Relu,
        })
    }

    /// Identity configuration (Dh = D, identity weights, passthrough
    /// activation): `decode(encode(f)) == f` exactly. Test fixture.
    pub fn identity(dim: usize) -> Result<Self, DaeError> {
        if dim % 2 != 0 {
            return Err(DaeError::OddDimension(dim));
        }
        Ok(DaeParams {
            enc1: Linear::eye(dim),
            enc2: Linear::eye(dim),
            dec1: Linear::eye(dim),
            dec2: Linear::eye(dim),
            activation: Activation::Identity,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.enc1.cols
    }

    pub fn latent_dim(&self) -> usize {
        self.enc1.rows
    }

    /// All parameter tensors in a fixed order (used by momentum updates and
    /// serialization).
    pub fn tensors(&self) -> [(&[f64], usize, usize); 8] {
        [
            (&self.enc1.w, self.enc1.rows, self.enc1.cols),
            (&self.enc1.b, self.enc1.rows, 1),
            (&self.enc2.w, self.enc2.rows, self.enc2.cols),
            (&self.enc2.b, self.enc2.rows, 1),
            (&self.dec1.w, self.dec1.rows, self.dec1.cols),
            (&self.dec1.b, self.dec1.rows, 1),
            (&self.dec2.w, self.dec2.rows, self.dec2.cols),
            (&self.dec2.b, self.dec2.rows, 1),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.enc1.w,
            &mut self.enc1.b,
            &mut self.enc2.w,
            &mut self.enc2.b,
            &mut self.dec1.w,
            &mut self.dec1.b,
            &mut self.dec2.w,
            &mut self.dec2.b,
        ]
    }
}

/// Which composite latent reconstructs which feature after the signer swap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapOrientation {
    /// Each branch keeps its own background and borrows the other branch's
    /// signer: `f_hat_q = decode(hk_s ++ hq_b)`.
    #[default]
    KeepOwnBackground,
    /// The opposite convention, kept testable.
    KeepOwnSigner,
}

/// Loss hyperparameters plus the externally supplied scalar terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Margin in the negative similarity loss.
    pub margin: f64,
    /// Weight of the external alignment term.
    pub alpha: f64,
    /// Teacher momentum.
    pub momentum: f64,
    /// External scalar losses, 0 when no host network supplies them.
    pub l_ve: f64,
    pub l_va: f64,
    pub swap_orientation: SwapOrientation,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.5,
            alpha: 3.0,
            momentum: 0.99,
            l_ve: 0.0,
            l_va: 0.0,
            swap_orientation: SwapOrientation::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), DaeError> {
        if !(-1.0..=1.0).contains(&self.margin) {
            return Err(DaeError::BadMargin(self.margin));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(DaeError::BadMomentum(self.momentum));
        }
        if !(self.alpha >= 0.0) {
            return Err(DaeError::BadAlpha(self.alpha));
        }
        Ok(())
    }
}

pub(crate) struct MlpCache {
    pub input: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub out: Vec<f64>,
}

pub(crate) fn mlp_forward(
    l1: &Linear,
    l2: &Linear,
    act: Activation,
    input: &[f64],
) -> Result<MlpCache, DaeError> {
    let z1 = l1.forward(input)?;
    let a1 = act.apply(&z1);
    let out = l2.forward(&a1)?;
    Ok(MlpCache {
        input: input.to_vec(),
        z1,
        a1,
        out,
    })
}

/// Embed a feature vector and split the latent at its midpoint.
pub fn encode(params: &DaeParams, f: &FeatureVec) -> Result<LatentPair, DaeError> {
    let cache = mlp_forward(&params.enc1, &params.enc2, params.activation, f.values())?;
    Ok(LatentPair::from_concat(&cache.out))
}

/// Re-project a latent pair back into the feature space.
pub fn decode(params: &DaeParams, h: &LatentPair) -> Result<FeatureVec, DaeError> {
    let cache = mlp_forward(&params.dec1, &params.dec2, params.activation, &h.concat())?;
    FeatureVec::new(cache.out)
}

pub(crate) struct CosineParts {
    pub cos: f64,
    pub sxx: f64,
    pub syy: f64,
    pub denom: f64,
}

pub(crate) fn cosine_parts(x: &[f64], y: &[f64]) -> Result<CosineParts, DaeError> {
    if x.len() != y.len() {
        return Err(DaeError::ShapeMismatch {
            what: "cosine operands",
            expected: x.len(),
            got: y.len(),
        });
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|a| a * a).sum();
    if sxx.sqrt() <= NORM_EPS || syy.sqrt() <= NORM_EPS {
        return Err(DaeError::DegenerateNorm);
    }
    let denom = (sxx * syy).sqrt();
    Ok(CosineParts {
        cos: dot / denom,
        sxx,
        syy,
        denom,
    })
}

/// Pulling loss `1 - cos(x1, x2)`.
pub fn sim_pos(x1: &[f64], x2: &[f64]) -> Result<f64, DaeError> {
    Ok(1.0 - cosine_parts(x1, x2)?.cos)
}

/// Pushing loss `max(0, cos(x1, x2) - margin)`.
pub fn sim_neg(x1: &[f64], x2: &[f64], margin: f64) -> Result<f64, DaeError> {
    Ok((cosine_parts(x1, x2)?.cos - margin).max(0.0))
}

/// `sim_pos` on the signer halves plus `sim_neg` on the background halves.
pub fn loss_sim(hq: &LatentPair, hk: &LatentPair, margin: f64) -> Result<f64, DaeError> {
    Ok(sim_pos(hq.signer(), hk.signer())? + sim_neg(hq.background(), hk.background(), margin)?)
}

/// Exchange signer halves between the branches; backgrounds stay put.
/// Returns `(h_qk, h_kq)` where `h_qk = (hq_s, hk_b)` and
/// `h_kq = (hk_s, hq_b)`.
pub fn swap(hq: &LatentPair, hk: &LatentPair) -> (LatentPair, LatentPair) {
    let h_qk = LatentPair {
        signer: hq.signer.clone(),
        background: hk.background.clone(),
    };
    let h_kq = LatentPair {
        signer: hk.signer.clone(),
        background: hq.background.clone(),
    };
    (h_qk, h_kq)
}

/// Summed L1 reconstruction distance over both branches.
pub fn loss_rec(
    f_hat_q: &FeatureVec,
    f_q: &FeatureVec,
    f_hat_k: &FeatureVec,
    f_k: &FeatureVec,
) -> Result<f64, DaeError> {
    let l1 = |a: &FeatureVec, b: &FeatureVec| -> Result<f64, DaeError> {
        if a.dim() != b.dim() {
            return Err(DaeError::ShapeMismatch {
                what: "reconstruction pair",
                expected: b.dim(),
                got: a.dim(),
            });
        }
        Ok(a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum())
    };
    Ok(l1(f_hat_q, f_q)? + l1(f_hat_k, f_k)?)
}

/// `theta_t <- m * theta_t + (1 - m) * theta_s`, elementwise.
pub fn momentum_update_flat(teacher: &mut [f64], student: &[f64], m: f64) -> Result<(), DaeError> {
    if !(0.0..=1.0).contains(&m) {
        return Err(DaeError::BadMomentum(m));
    }
    if teacher.len() != student.len() {
        return Err(DaeError::ShapeMismatch {
            what: "momentum tensors",
            expected: teacher.len(),
            got: student.len(),
        });
    }
    for (t, s) in teacher.iter_mut().zip(student) {
        *t = m * *t + (1.0 - m) * s;
    }
    Ok(())
}

/// Momentum-update every parameter tensor of a teacher copy.
pub fn momentum_update(teacher: &mut DaeParams, student: &DaeParams, m: f64) -> Result<(), DaeError> {
    let student_tensors: Vec<Vec<f64>> = student.tensors().iter().map(|(t, _, _)| t.to_vec()).collect();
    for (t, s) in teacher.tensors_mut().into_iter().zip(&student_tensors) {
        momentum_update_flat(t, s, m)?;
    }
    Ok(())
}

/// `L_total = L_CTC + L_VE + alpha * L_VA + L_sim + L_rec`.
pub fn total_loss(l_ctc: f64, l_sim: f64, l_rec: f64, cfg: &LossConfig) -> Result<f64, DaeError> {
    cfg.validate()?;
    for (name, v) in [
        ("l_ctc", l_ctc),
        ("l_sim", l_sim),
        ("l_rec", l_rec),
        ("l_ve", cfg.l_ve),
        ("l_va", cfg.l_va),
    ] {
        if !v.is_finite() {
            return Err(DaeError::NonFinite(name));
        }
    }
    Ok(l_ctc + cfg.l_ve + cfg.alpha * cfg.l_va + l_sim + l_rec)
}

/// Everything the swap-reconstruction forward pass produces.
pub struct DaeForward {
    pub hq: LatentPair,
    pub hk: LatentPair,
    pub h_qk: LatentPair,
    pub h_kq: LatentPair,
    pub f_hat_q: FeatureVec,
    pub f_hat_k: FeatureVec,
    pub l_sim: f64,
    pub l_rec: f64,
    pub(crate) enc_cache: MlpCache,
    pub(crate) dec_cache_q: MlpCache,
    pub(crate) dec_cache_k: MlpCache,
}

/// Forward pass of the DAE pair: student encodes `f_q`, teacher encodes
/// `f_k`, signer halves are swapped, and the student's shared decoder
/// reconstructs both features.
pub fn dae_forward(
    student: &DaeParams,
    teacher: &DaeParams,
    f_q: &FeatureVec,
    f_k: &FeatureVec,
    cfg: &LossConfig,
) -> Result<DaeForward, DaeError> {
    cfg.validate()?;
    let enc_cache = mlp_forward(&student.enc1, &student.enc2, student.activation, f_q.values())?;
    let hq = LatentPair::from_concat(&enc_cache.out);
    let hk = encode(teacher, f_k)?;

    let (h_qk, h_kq) = swap(&hq, &hk);
    let (dec_in_q, dec_in_k) = match cfg.swap_orientation {
        SwapOrientation::KeepOwnBackground => (&h_kq, &h_qk),
        SwapOrientation::KeepOwnSigner => (&h_qk, &h_kq),
    };
    let dec_cache_q = mlp_forward(&student.dec1, &student.dec2, student.activation, &dec_in_q.concat())?;
    let dec_cache_k = mlp_forward(&student.dec1, &student.dec2, student.activation, &dec_in_k.concat())?;
    let f_hat_q = FeatureVec::new(dec_cache_q.out.clone())?;
    let f_hat_k = FeatureVec::new(dec_cache_k.out.clone())?;

    let l_sim = loss_sim(&hq, &hk, cfg.margin)?;
    let l_rec = loss_rec(&f_hat_q, f_q, &f_hat_k, f_k)?;
    Ok(DaeForward {
        hq,
        hk,
        h_qk,
        h_kq,
        f_hat_q,
        f_hat_k,
        l_sim,
        l_rec,
        enc_cache,
        dec_cache_q,
        dec_cache_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;

    fn fv(vals: &[f64]) -> FeatureVec {
        FeatureVec::new(vals.to_vec()).unwrap()
    }

    #[test]
    fn zero_params_give_zero_latent() {
        let p = DaeParams {
            enc1: Linear::zeros(4, 4),
            enc2: Linear::zeros(4, 4),
            dec1: Linear::zeros(4, 4),
            dec2: Linear::zeros(4, 4),
            activation: Activation::Relu,
        };
        let h = encode(&p, &fv(&[0.5, -0.5, 1.0, 2.0])).unwrap();
        assert!(h.signer().iter().all(|&v| v == 0.0));
        assert!(h.background().iter().all(|&v| v == 0.0));
        let f = decode(&p, &h).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_config_roundtrips_exactly() {
        let p = DaeParams::identity(6).unwrap();
        let f = fv(&[0.3, -1.2, 0.0, 2.5, -0.1, 0.9]);
        let h = encode(&p, &f).unwrap();
        assert_eq!(h.signer(), &f.values()[..3]);
        assert_eq!(h.background(), &f.values()[3..]);
        let back = decode(&p, &h).unwrap();
        assert_eq!(back.values(), f.values());
    }

    #[test]
    fn encode_is_deterministic() {
        let mut rng = rng_from(3);
        let p = DaeParams::init(8, 4, &mut rng).unwrap();
        let f = fv(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]);
        assert_eq!(encode(&p, &f).unwrap(), encode(&p, &f).unwrap());
    }

    #[test]
    fn encode_rejects_wrong_dim() {
        let mut rng = rng_from(3);
        let p = DaeParams::init(8, 4, &mut rng).unwrap();
        assert!(matches!(
            encode(&p, &fv(&[0.0; 6])).unwrap_err(),
            DaeError::ShapeMismatch { .. }
        ));
    }

    #[test]
    fn sim_pos_identical_vectors_is_exactly_zero() {
        let x = [0.3, -0.7, 0.2, 1.9];
        assert_eq!(sim_pos(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn sim_pos_scale_invariant() {
        let x = [0.5, 1.0, -2.0];
        let y: Vec<f64> = x.iter().map(|v| v * 3.25).collect();
        assert!(sim_pos(&x, &y).unwrap().abs() < 1e-15);
    }

    #[test]
    fn sim_pos_orthogonal_is_one() {
        assert_eq!(sim_pos(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn sim_neg_cases() {
        let x = [1.0, 2.0, -0.5];
        assert_eq!(sim_neg(&x, &x, 0.5).unwrap(), 0.5);
        assert_eq!(sim_neg(&[1.0, 0.0], &[0.0, 1.0], 0.5).unwrap(), 0.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(sim_neg(&x, &neg, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn near_zero_norm_is_an_error() {
        assert!(matches!(
            sim_pos(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err(),
            DaeError::DegenerateNorm
        ));
        assert!(matches!(
            sim_neg(&[1e-13, 0.0], &[1.0, 0.0], 0.5).unwrap_err(),
            DaeError::DegenerateNorm
        ));
    }

    #[test]
    fn loss_sim_composes_and_is_symmetric() {
        let hq = LatentPair::new(vec![1.0, 0.5], vec![0.3, -0.2]).unwrap();
        // Equal pair: sim_pos = 0, sim_neg = 1 - 0.5.
        assert_eq!(loss_sim(&hq, &hq, 0.5).unwrap(), 0.5);

        let hk = LatentPair::new(vec![0.9, 0.7], vec![-0.1, 0.4]).unwrap();
        let a = loss_sim(&hq, &hk, 0.5).unwrap();
        let b = loss_sim(&hk, &hq, 0.5).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn loss_sim_perfect_disentanglement_is_zero() {
        // Signer halves equal, background halves orthogonal and below margin.
        let hq = LatentPair::new(vec![1.0, 1.0], vec![1.0, 0.0]).unwrap();
        let hk = LatentPair::new(vec![1.0, 1.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(loss_sim(&hq, &hk, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn swap_is_involution_and_tags_move_correctly() {
        let hq = LatentPair::new(vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
        let hk = LatentPair::new(vec![5.0, 6.0], vec![7.0, 8.0]).unwrap();
        let (h_qk, h_kq) = swap(&hq, &hk);
        // Signer tags exchanged between composites, backgrounds fixed.
        assert_eq!(h_qk.signer(), hq.signer());
        assert_eq!(h_qk.background(), hk.background());
        assert_eq!(h_kq.signer(), hk.signer());
        assert_eq!(h_kq.background(), hq.background());
        // Swapping the swapped pair restores the originals.
        let (back_q, back_k) = swap(&h_qk, &h_kq);
        assert_eq!(back_q.signer(), hq.signer());
        assert_eq!(back_k.background(), hk.background());
        // Identical inputs make the swap a no-op.
        let (s1, s2) = swap(&hq, &hq);
        assert_eq!(s1, hq);
        assert_eq!(s2, hq);
    }

    #[test]
    fn loss_rec_cases() {
        let f = fv(&[0.5, -0.5]);
        assert_eq!(loss_rec(&f, &f, &f, &f).unwrap(), 0.0);

        let off = fv(&[1.5, -0.5]);
        assert_eq!(loss_rec(&off, &f, &f, &f).unwrap(), 1.0);

        // f_hat_q - f_q = (0.5, -0.5), k branch exact -> 1.0.
        let fq = fv(&[0.0, 0.0]);
        let fhq = fv(&[0.5, -0.5]);
        assert!((loss_rec(&fhq, &fq, &f, &f).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn momentum_endpoints_and_midpoint() {
        let mut rng = rng_from(4);
        let student = DaeParams::init(4, 2, &mut rng).unwrap();
        let mut teacher = DaeParams::init(4, 2, &mut rng).unwrap();

        let frozen = teacher.clone();
        momentum_update(&mut teacher, &student, 1.0).unwrap();
        assert_eq!(teacher, frozen);

        momentum_update(&mut teacher, &student, 0.0).unwrap();
        assert_eq!(teacher, student);

        let mut t = [2.0];
        momentum_update_flat(&mut t, &[0.0], 0.5).unwrap();
        assert_eq!(t[0], 1.0);
    }

    #[test]
    fn momentum_rejects_bad_m() {
        let mut t = [1.0];
        assert!(momentum_update_flat(&mut t, &[0.0], 1.5).is_err());
    }

    #[test]
    fn total_loss_composition() {
        let cfg = LossConfig::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, &cfg).unwrap(), 0.0);
        assert_eq!(total_loss(1.0, 0.5, 0.25, &cfg).unwrap(), 1.75);
        let with_va = LossConfig {
            l_va: 2.0,
            alpha: 3.0,
            ..LossConfig::default()
        };
        assert_eq!(total_loss(0.0, 0.0, 0.0, &with_va).unwrap(), 6.0);
    }

    #[test]
    fn total_loss_rejects_non_finite() {
        let cfg = LossConfig::default();
        assert!(matches!(
            total_loss(f64::NAN, 0.0, 0.0, &cfg).unwrap_err(),
            DaeError::NonFinite("l_ctc")
        ));
    }

    #[test]
    fn swapped_reconstruction_equals_unswapped_when_branches_agree() {
        // With hq == hk the swap is a no-op, so the swapped reconstructions
        // must equal decoding the original latents.
        let mut rng = rng_from(11);
        let params = DaeParams::init(6, 4, &mut rng).unwrap();
        let f = fv(&[0.4, -0.2, 0.9, 0.1, -0.6, 0.3]);
        let cfg = LossConfig::default();
        let fwd = dae_forward(&params, &params, &f, &f, &cfg).unwrap();
        let h = encode(&params, &f).unwrap();
        let direct = decode(&params, &h).unwrap();
        assert_eq!(fwd.f_hat_q, direct);
        assert_eq!(fwd.f_hat_k, direct);
        let unswapped_rec = loss_rec(&direct, &f, &direct, &f).unwrap();
        assert_eq!(fwd.l_rec, unswapped_rec);
    }

    #[test]
    fn swap_orientation_flag_changes_decoder_inputs() {
        let mut rng = rng_from(12);
        let student = DaeParams::init(6, 4, &mut rng).unwrap();
        let teacher = DaeParams::init(6, 4, &mut rng).unwrap();
        let f_q = fv(&[0.4, -0.2, 0.9, 0.1, -0.6, 0.3]);
        let f_k = fv(&[0.2, 0.2, -0.9, 0.4, 0.6, -0.3]);
        let a = dae_forward(&student, &teacher, &f_q, &f_k, &LossConfig::default()).unwrap();
        let flipped = LossConfig {
            swap_orientation: SwapOrientation::KeepOwnSigner,
            ..LossConfig::default()
        };
        let b = dae_forward(&student, &teacher, &f_q, &f_k, &flipped).unwrap();
        // The two conventions exchange which branch reconstructs from which
        // composite.
        assert_eq!(a.f_hat_q, b.f_hat_k);
        assert_eq!(a.f_hat_k, b.f_hat_q);
    }
}
