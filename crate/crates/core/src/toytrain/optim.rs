//! Adam with bias correction and a cosine learning-rate schedule. Weight
//! decay is added to the gradient (no decoupling).

use super::TrainError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// `lr0 * 0.5 * (1 + cos(pi * t / total))`; zero at `t == total`.
pub fn cosine_lr(lr0: f64, t: u64, total: u64) -> f64 {
    let frac = if total == 0 {
        1.0
    } else {
        t as f64 / total as f64
    };
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone, Copy)]
pub struct OptimConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub total_steps: u64,
}

/// First/second moment buffers, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One Adam update over matching parameter/gradient tensor lists; `t` is the
/// 1-based step count.
pub fn adam_step(
    params: &mut [&mut Vec<f64>],
    grads: &[&[f64]],
    state: &mut AdamState,
    t: u64,
    cfg: &OptimConfig,
) -> Result<(), TrainError> {
    assert!(t >= 1, "step count is 1-based");
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::BadConfig(format!(
            "optimizer tensor count mismatch: {} params, {} grads, {} state",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let lr = cosine_lr(cfg.lr0, t, cfg.total_steps);
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);

    for ((tensor, grad), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if tensor.len() != grad.len() {
            return Err(TrainError::BadConfig(
                "optimizer tensor/gradient length mismatch".into(),
            ));
        }
        for i in 0..tensor.len() {
            if !grad[i].is_finite() {
                return Err(TrainError::NonFiniteGradient);
            }
            // Entries with exactly zero loss gradient sit outside the active
            // loss path (e.g. the decoder before the DAE phase starts) and
            // are left in place: Adam would otherwise normalize the bare
            // decay term into full-rate shrinkage and zero them out.
            if grad[i] == 0.0 {
                m[i] *= BETA1;
                v[i] *= BETA2;
                continue;
            }
            let g = grad[i] + cfg.weight_decay * tensor[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            tensor[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
    Ok(())
}
