//! Hand-derived gradients for the fixed DAE graph.
//!
//! The teacher branch is behind a stop-gradient: nothing here produces
//! derivatives for teacher parameters or teacher inputs. The L1 subgradient
//! at zero is taken as 0, as is the ReLU subgradient at 0 and the clamped
//! region of the negative similarity loss.

use super::{
    cosine_parts, loss_rec, Activation, DaeError, DaeForward, DaeParams, FeatureVec, LatentPair,
    Linear, LossConfig, MlpCache, SwapOrientation,
};

/// Parameter gradients for one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearGrads {
    pub fn zeros_like(l: &Linear) -> Self {
        LinearGrads {
            w: vec![0.0; l.w.len()],
            b: vec![0.0; l.b.len()],
        }
    }

    /// `dW += delta (outer) x`, `db += delta`.
    pub(crate) fn accumulate(&mut self, delta: &[f64], x: &[f64]) {
        let cols = x.len();
        for (r, d) in delta.iter().enumerate() {
            for (i, xv) in x.iter().enumerate() {
                self.w[r * cols + i] += d * xv;
            }
            self.b[r] += d;
        }
    }
}

/// Backward through a two-layer MLP; accumulates parameter gradients and
/// returns the input gradient.
pub(crate) fn mlp_backward(
    l1: &Linear,
    l2: &Linear,
    act: Activation,
    cache: &MlpCache,
    delta_out: &[f64],
    g1: &mut LinearGrads,
    g2: &mut LinearGrads,
) -> Vec<f64> {
    g2.accumulate(delta_out, &cache.a1);
    let delta_a1 = l2.input_grad(delta_out);
    let delta_z1: Vec<f64> = delta_a1
        .iter()
        .zip(&cache.z1)
        .map(|(d, &z)| d * act.derivative(z))
        .collect();
    g1.accumulate(&delta_z1, &cache.input);
    l1.input_grad(&delta_z1)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `d cos(x, y) / dx` and `/ dy`.
fn cosine_grad(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), DaeError> {
    let p = cosine_parts(x, y)?;
    let gx = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| yi / p.denom - p.cos * xi / p.sxx)
        .collect();
    let gy = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| xi / p.denom - p.cos * yi / p.syy)
        .collect();
    Ok((p.cos, gx, gy))
}

/// Value and gradients of `sim_pos` with respect to both arguments.
pub fn sim_pos_grad(x1: &[f64], x2: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), DaeError> {
    let (cos, gx, gy) = cosine_grad(x1, x2)?;
    Ok((
        1.0 - cos,
        gx.into_iter().map(|v| -v).collect(),
        gy.into_iter().map(|v| -v).collect(),
    ))
}

/// Value and gradients of `sim_neg`; zero in the clamped region.
pub fn sim_neg_grad(
    x1: &[f64],
    x2: &[f64],
    margin: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>), DaeError> {
    let (cos, gx, gy) = cosine_grad(x1, x2)?;
    if cos - margin > 0.0 {
        Ok((cos - margin, gx, gy))
    } else {
        Ok((0.0, vec![0.0; x1.len()], vec![0.0; x2.len()]))
    }
}

/// Value of `loss_sim` and its gradient with respect to the query latent;
/// the key latent is behind the stop-gradient.
pub fn loss_sim_grad(
    hq: &LatentPair,
    hk: &LatentPair,
    margin: f64,
) -> Result<(f64, LatentPair), DaeError> {
    let (pos, g_signer, _) = sim_pos_grad(hq.signer(), hk.signer())?;
    let (neg, g_background, _) = sim_neg_grad(hq.background(), hk.background(), margin)?;
    Ok((
        pos + neg,
        LatentPair::new(g_signer, g_background)?,
    ))
}

/// Value of `loss_rec` and its partials in argument order
/// `(f_hat_q, f_q, f_hat_k, f_k)`.
pub fn loss_rec_grad(
    f_hat_q: &FeatureVec,
    f_q: &FeatureVec,
    f_hat_k: &FeatureVec,
    f_k: &FeatureVec,
) -> Result<(f64, [Vec<f64>; 4]), DaeError> {
    let value = loss_rec(f_hat_q, f_q, f_hat_k, f_k)?;
    let d_q: Vec<f64> = f_hat_q
        .values()
        .iter()
        .zip(f_q.values())
        .map(|(a, b)| sign(a - b))
        .collect();
    let d_k: Vec<f64> = f_hat_k
        .values()
        .iter()
        .zip(f_k.values())
        .map(|(a, b)| sign(a - b))
        .collect();
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<f64>>();
    Ok((value, [d_q.clone(), neg(&d_q), d_k.clone(), neg(&d_k)]))
}

/// Gradient set for the student side of the DAE graph.
#[derive(Debug, Clone)]
pub struct DaeGrads {
    pub enc1: LinearGrads,
    pub enc2: LinearGrads,
    pub dec1: LinearGrads,
    pub dec2: LinearGrads,
    /// Total derivative with respect to the student feature `f_q`, including
    /// its role as the L1 reconstruction target.
    pub f_q: Vec<f64>,
}

impl DaeGrads {
    fn zeros_like(p: &DaeParams) -> Self {
        DaeGrads {
            enc1: LinearGrads::zeros_like(&p.enc1),
            enc2: LinearGrads::zeros_like(&p.enc2),
            dec1: LinearGrads::zeros_like(&p.dec1),
            dec2: LinearGrads::zeros_like(&p.dec2),
            f_q: vec![0.0; p.feature_dim()],
        }
    }

    fn check_finite(&self) -> Result<(), DaeError> {
        let all = self
            .enc1
            .w
            .iter()
            .chain(&self.enc1.b)
            .chain(&self.enc2.w)
            .chain(&self.enc2.b)
            .chain(&self.dec1.w)
            .chain(&self.dec1.b)
            .chain(&self.dec2.w)
            .chain(&self.dec2.b)
            .chain(&self.f_q);
        for v in all {
            if !v.is_finite() {
                return Err(DaeError::NonFinite("dae gradient"));
            }
        }
        Ok(())
    }
}

/// Forward pass plus analytic gradients of `scale * (L_sim + L_rec)` (and an
/// optional upstream gradient flowing into the student's signer half) with
/// respect to every student encoder/decoder parameter and `f_q`.
///
/// `upstream_signer`, when present, is `dL_other / d hq_s` from the
/// classifier/CTC path and is added before backpropagating the encoder.
pub fn dae_grads(
    student: &DaeParams,
    teacher: &DaeParams,
    f_q: &FeatureVec,
    f_k: &FeatureVec,
    cfg: &LossConfig,
    scale: f64,
    upstream_signer: Option<&[f64]>,
) -> Result<(DaeForward, DaeGrads), DaeError> {
    let fwd = super::dae_forward(student, teacher, f_q, f_k, cfg)?;
    let mut grads = DaeGrads::zeros_like(student);
    let half = fwd.hq.half_dim();

    // Reconstruction residual signs.
    let delta_fhat_q: Vec<f64> = fwd
        .f_hat_q
        .values()
        .iter()
        .zip(f_q.values())
        .map(|(a, b)| scale * sign(a - b))
        .collect();
    let delta_fhat_k: Vec<f64> = fwd
        .f_hat_k
        .values()
        .iter()
        .zip(f_k.values())
        .map(|(a, b)| scale * sign(a - b))
        .collect();

    // Shared decoder backward on both branches.
    let delta_dec_in_q = mlp_backward(
        &student.dec1,
        &student.dec2,
        student.activation,
        &fwd.dec_cache_q,
        &delta_fhat_q,
        &mut grads.dec1,
        &mut grads.dec2,
    );
    let delta_dec_in_k = mlp_backward(
        &student.dec1,
        &student.dec2,
        student.activation,
        &fwd.dec_cache_k,
        &delta_fhat_k,
        &mut grads.dec1,
        &mut grads.dec2,
    );

    // Route decoder-input gradients to the student's latent halves. The
    // teacher's halves are dropped (stop-gradient).
    let mut delta_hq_s = vec![0.0; half];
    let mut delta_hq_b = vec![0.0; half];
    match cfg.swap_orientation {
        SwapOrientation::KeepOwnBackground => {
            // q branch decoded (hk_s ++ hq_b); k branch decoded (hq_s ++ hk_b).
            for i in 0..half {
                delta_hq_b[i] += delta_dec_in_q[half + i];
                delta_hq_s[i] += delta_dec_in_k[i];
            }
        }
        SwapOrientation::KeepOwnSigner => {
            // q branch decoded (hq_s ++ hk_b); k branch decoded (hk_s ++ hq_b).
            for i in 0..half {
                delta_hq_s[i] += delta_dec_in_q[i];
                delta_hq_b[i] += delta_dec_in_k[half + i];
            }
        }
    }

    // Similarity losses.
    let (_, sim_grad) = loss_sim_grad(&fwd.hq, &fwd.hk, cfg.margin)?;
    for i in 0..half {
        delta_hq_s[i] += scale * sim_grad.signer()[i];
        delta_hq_b[i] += scale * sim_grad.background()[i];
    }

    if let Some(up) = upstream_signer {
        if up.len() != half {
            return Err(DaeError::ShapeMismatch {
                what: "upstream signer gradient",
                expected: half,
                got: up.len(),
            });
        }
        for i in 0..half {
            delta_hq_s[i] += up[i];
        }
    }

    // Student encoder backward.
    let mut delta_h = delta_hq_s;
    delta_h.extend_from_slice(&delta_hq_b);
    let delta_f_enc = mlp_backward(
        &student.enc1,
        &student.enc2,
        student.activation,
        &fwd.enc_cache,
        &delta_h,
        &mut grads.enc1,
        &mut grads.enc2,
    );

    // Total derivative w.r.t. f_q: encoder path plus the reconstruction
    // target term -sign(f_hat_q - f_q).
    for (g, (enc, target)) in grads
        .f_q
        .iter_mut()
        .zip(delta_f_enc.iter().zip(&delta_fhat_q))
    {
        *g = enc - target;
    }

    grads.check_finite()?;
    Ok((fwd, grads))
}

#[cfg(test)]
mod tests {
    use super::super::{dae_forward, loss_sim};
    use super::*;
    use crate::seeding::rng_from;
    use rand::Rng;

    fn fd<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
        let mut g = Vec::with_capacity(x.len());
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let orig = xp[i];
            xp[i] = orig + step;
            let hi = f(&xp);
            xp[i] = orig - step;
            let lo = f(&xp);
            xp[i] = orig;
            g.push((hi - lo) / (2.0 * step));
        }
        g
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            let denom = x.abs().max(y.abs()).max(1e-5);
            assert!(
                ((x - y) / denom).abs() <= tol,
                "component {i}: analytic {x} vs numeric {y}"
            );
        }
    }

    #[test]
    fn sim_pos_grad_matches_fd() {
        let mut rng = rng_from(5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..=1.0)).collect();
            if x.iter().map(|v| v * v).sum::<f64>() < 0.1 || y.iter().map(|v| v * v).sum::<f64>() < 0.1 {
                continue;
            }
            let (_, gx, gy) = sim_pos_grad(&x, &y).unwrap();
            let nx = fd(|p| super::super::sim_pos(p, &y).unwrap(), &x, 1e-5);
            let ny = fd(|p| super::super::sim_pos(&x, p).unwrap(), &y, 1e-5);
            assert_close(&gx, &nx, 1e-6);
            assert_close(&gy, &ny, 1e-6);
        }
    }

    #[test]
    fn sim_pos_grad_orthogonal_to_radial_direction() {
        // Scaling the input leaves the cosine unchanged, so the gradient has
        // no radial component: <g, x> = 0.
        let x = [0.4, -0.9, 1.3, 0.2];
        let y = [1.0, 0.3, -0.5, 0.8];
        let (_, gx, _) = sim_pos_grad(&x, &y).unwrap();
        let radial: f64 = gx.iter().zip(&x).map(|(g, v)| g * v).sum();
        assert!(radial.abs() < 1e-12);
        let scaled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let a = super::super::sim_pos(&x, &y).unwrap();
        let b = super::super::sim_pos(&scaled, &y).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn sim_neg_grad_zero_when_clamped() {
        let x = [1.0, 0.0];
        let y = [-1.0, 0.0];
        let (v, gx, gy) = sim_neg_grad(&x, &y, 0.0).unwrap();
        assert_eq!(v, 0.0);
        assert!(gx.iter().all(|&g| g == 0.0));
        assert!(gy.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_rec_grad_matches_l1_signs() {
        let fhq = FeatureVec::new(vec![0.5, -0.5]).unwrap();
        let fq = FeatureVec::new(vec![0.0, 0.0]).unwrap();
        let fhk = FeatureVec::new(vec![1.0, 1.0]).unwrap();
        let fk = FeatureVec::new(vec![1.0, 2.0]).unwrap();
        let (v, g) = loss_rec_grad(&fhq, &fq, &fhk, &fk).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
        assert_eq!(g[0], vec![1.0, -1.0]);
        assert_eq!(g[1], vec![-1.0, 1.0]);
        assert_eq!(g[2], vec![0.0, -1.0]);
        assert_eq!(g[3], vec![0.0, 1.0]);
    }

    #[test]
    fn loss_rec_grad_zero_at_exact_reconstruction() {
        let f = FeatureVec::new(vec![0.3, 0.7]).unwrap();
        let (v, g) = loss_rec_grad(&f, &f, &f, &f).unwrap();
        assert_eq!(v, 0.0);
        for part in &g {
            assert!(part.iter().all(|&x| x == 0.0));
        }
    }

    fn random_feature<R: Rng>(dim: usize, rng: &mut R) -> FeatureVec {
        FeatureVec::new((0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()).unwrap()
    }

    #[test]
    fn composed_grads_match_fd_on_params_and_input() {
        let mut rng = rng_from(77);
        let cfg = LossConfig::default();
        let d = 6;
        let dh = 4;
        'instance: for _ in 0..10 {
            let student = DaeParams::init(d, dh, &mut rng).unwrap();
            let teacher = DaeParams::init(d, dh, &mut rng).unwrap();
            let f_q = random_feature(d, &mut rng);
            let f_k = random_feature(d, &mut rng);

            // Keep clear of ReLU/L1/clamp kinks so central differences are
            // valid.
            let fwd = dae_forward(&student, &teacher, &f_q, &f_k, &cfg).unwrap();
            let kink = 1e-3;
            for z in fwd
                .enc_cache
                .z1
                .iter()
                .chain(&fwd.dec_cache_q.z1)
                .chain(&fwd.dec_cache_k.z1)
            {
                if z.abs() < kink {
                    continue 'instance;
                }
            }
            for (a, b) in fwd
                .f_hat_q
                .values()
                .iter()
                .zip(f_q.values())
                .chain(fwd.f_hat_k.values().iter().zip(f_k.values()))
            {
                if (a - b).abs() < kink {
                    continue 'instance;
                }
            }

            let (_, grads) = dae_grads(&student, &teacher, &f_q, &f_k, &cfg, 1.0, None).unwrap();

            let loss_at = |s: &DaeParams, fq: &FeatureVec| {
                let fwd = dae_forward(s, &teacher, fq, &f_k, &cfg).unwrap();
                fwd.l_sim + fwd.l_rec
            };

            // Input gradient.
            let num_fq = fd(
                |p| loss_at(&student, &FeatureVec::new(p.to_vec()).unwrap()),
                f_q.values(),
                1e-6,
            );
            assert_close(&grads.f_q, &num_fq, 1e-4);

            // One weight tensor per MLP as a spot check (the gradcheck suite
            // sweeps everything).
            let num_enc1 = fd(
                |p| {
                    let mut s = student.clone();
                    s.enc1.w = p.to_vec();
                    loss_at(&s, &f_q)
                },
                &student.enc1.w,
                1e-6,
            );
            assert_close(&grads.enc1.w, &num_enc1, 1e-4);

            let num_dec2 = fd(
                |p| {
                    let mut s = student.clone();
                    s.dec2.w = p.to_vec();
                    loss_at(&s, &f_q)
                },
                &student.dec2.w,
                1e-6,
            );
            assert_close(&grads.dec2.w, &num_dec2, 1e-4);
            return; // one clean instance is enough here
        }
        panic!("no kink-free instance found");
    }

    #[test]
    fn clamped_and_exact_point_has_vanishing_grads() {
        // Identity params, identical branches, orthogonal background halves
        // below the margin: sim_neg clamps, reconstructions are exact, so all
        // gradients except the sim_pos part vanish; with equal signer halves
        // even that part is zero.
        let params = DaeParams::identity(4).unwrap();
        let f = FeatureVec::new(vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let cfg = LossConfig::default();
        let (fwd, grads) = dae_grads(&params, &params, &f, &f, &cfg, 1.0, None).unwrap();
        assert_eq!(fwd.l_rec, 0.0);
        assert!(grads.f_q.iter().all(|&g| g.abs() < 1e-12));
        assert!(grads.dec1.w.iter().all(|&g| g == 0.0));
        assert!(grads.dec2.w.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_sim_grad_matches_fd_on_query_side() {
        let mut rng = rng_from(31);
        for _ in 0..10 {
            let hq = LatentPair::new(
                (0..4).map(|_| rng.random_range(-1.0..=1.0)).collect(),
                (0..4).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            )
            .unwrap();
            let hk = LatentPair::new(
                (0..4).map(|_| rng.random_range(-1.0..=1.0)).collect(),
                (0..4).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            )
            .unwrap();
            let margin = 0.2;
            let p = cosine_parts(hq.background(), hk.background()).unwrap();
            if (p.cos - margin).abs() < 1e-2 {
                continue;
            }
            let (_, g) = loss_sim_grad(&hq, &hk, margin).unwrap();
            let num_s = fd(
                |p| {
                    let hq2 = LatentPair::new(p.to_vec(), hq.background().to_vec()).unwrap();
                    loss_sim(&hq2, &hk, margin).unwrap()
                },
                hq.signer(),
                1e-5,
            );
            let num_b = fd(
                |p| {
                    let hq2 = LatentPair::new(hq.signer().to_vec(), p.to_vec()).unwrap();
                    loss_sim(&hq2, &hk, margin).unwrap()
                },
                hq.background(),
                1e-5,
            );
            assert_close(g.signer(), &num_s, 1e-5);
            assert_close(g.background(), &num_b, 1e-5);
        }
    }
}
