//! Central finite-difference suites for every analytic gradient in the
//! toolkit. Backs the `grad-check` CLI command and the verification tests.
//!
//! Instances are rejection-sampled away from non-smooth points (ReLU and L1
//! kinks, the similarity clamp boundary) so central differences are valid;
//! the analytic gradients themselves use the fixed subgradient conventions
//! documented in `daecore`.

use rand::Rng;

use crate::ctc::{ctc_grad, ctc_loss, LogitsSeq, TargetSeq};
use crate::daecore::{
    dae_forward, dae_grads, loss_rec, loss_rec_grad, loss_sim, loss_sim_grad, sim_neg,
    sim_neg_grad, sim_pos, sim_pos_grad, DaeParams, FeatureVec, LatentPair, LossConfig,
};
use crate::media::Frame;
use crate::seeding::{self, DetRng};
use crate::toytrain::{video_loss_and_grads, ModelConfig, ModelParams};

/// FD step mandated by the verification contract.
pub const FD_STEP: f64 = 1e-5;
/// Relative-error threshold for individual components.
pub const COMPONENT_TOL: f64 = 1e-4;
/// Relative-error threshold for the composed end-to-end loss.
pub const END_TO_END_TOL: f64 = 1e-3;

/// Distance from any kink below which an instance is resampled.
const KINK_MARGIN: f64 = 1e-3;
const RESAMPLE_LIMIT: usize = 500;

/// Result of one component's sweep.
#[derive(Debug, Clone)]
pub struct ComponentCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub instances: usize,
    pub threshold: f64,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.threshold
    }
}

/// Central difference of `f` at `x`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
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

/// Max relative error between analytic and numeric gradients, floored so
/// FD noise on near-zero entries cannot dominate.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-5))
        .fold(0.0, f64::max)
}

fn random_vec<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn cos_of(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm2(a) * norm2(b)).sqrt()
}

pub fn check_sim_pos(seed: u64, instances: usize) -> ComponentCheck {
    let mut rng = seeding::rng_from(seeding::named_seed(seed, "sim_pos"));
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let dim = rng.random_range(3..=10);
        let (x, y) = loop {
            let x = random_vec(dim, &mut rng);
            let y = random_vec(dim, &mut rng);
            if norm2(&x) > 0.2 && norm2(&y) > 0.2 {
                break (x, y);
            }
        };
        let (_, gx, gy) = sim_pos_grad(&x, &y).expect("healthy norms");
        let nx = central_diff(|p| sim_pos(p, &y).unwrap(), &x, FD_STEP);
        let ny = central_diff(|p| sim_pos(&x, p).unwrap(), &y, FD_STEP);
        worst = worst.max(max_rel_err(&gx, &nx)).max(max_rel_err(&gy, &ny));
    }
    ComponentCheck {
        name: "sim_pos",
        max_rel_err: worst,
        instances,
        threshold: COMPONENT_TOL,
    }
}

pub fn check_sim_neg(seed: u64, instances: usize) -> ComponentCheck {
    let mut rng = seeding::rng_from(seeding::named_seed(seed, "sim_neg"));
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let dim = rng.random_range(3..=10);
        // Off-clamp instances only: the clamped region is flat and checked
        // separately by unit tests.
        let (x, y, margin) = loop {
            let x = random_vec(dim, &mut rng);
            let y = random_vec(dim, &mut rng);
            let margin: f64 = rng.random_range(-0.75..=0.75);
            if norm2(&x) > 0.2 && norm2(&y) > 0.2 && cos_of(&x, &y) - margin > 0.02 {
                break (x, y, margin);
            }
        };
        let (_, gx, gy) = sim_neg_grad(&x, &y, margin).expect("healthy norms");
        let nx = central_diff(|p| sim_neg(p, &y, margin).unwrap(), &x, FD_STEP);
        let ny = central_diff(|p| sim_neg(&x, p, margin).unwrap(), &y, FD_STEP);
        worst = worst.max(max_rel_err(&gx, &nx)).max(max_rel_err(&gy, &ny));
    }
    ComponentCheck {
        name: "sim_neg",
        max_rel_err: worst,
        instances,
        threshold: COMPONENT_TOL,
    }
}

pub fn check_loss_sim(seed: u64, instances: usize) -> ComponentCheck {
    let mut rng = seeding::rng_from(seeding::named_seed(seed, "loss_sim"));
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let half = rng.random_range(2..=6);
        let margin: f64 = rng.random_range(-0.5..=0.75);
        let (hq, hk) = loop {
            let hq = LatentPair::new(random_vec(half, &mut rng), random_vec(half, &mut rng))
                .expect("finite");
            let hk = LatentPair::new(random_vec(half, &mut rng), random_vec(half, &mut rng))
                .expect("finite");
            let healthy = [hq.signer(), hq.background(), hk.signer(), hk.background()]
                .iter()
                .all(|v| norm2(v) > 0.2);
            if healthy && (cos_of(hq.background(), hk.background()) - margin).abs() > 0.02 {
                break (hq, hk);
            }
        };
        let (_, g) = loss_sim_grad(&hq, &hk, margin).expect("healthy norms");
        let num_s = central_diff(
            |p| {
                let hq2 = LatentPair::new(p.to_vec(), hq.background().to_vec()).unwrap();
                loss_sim(&hq2, &hk, margin).unwrap()
            },
            hq.signer(),
            FD_STEP,
        );
        let num_b = central_diff(
            |p| {
                let hq2 = LatentPair::new(hq.signer().to_vec(), p.to_vec()).unwrap();
                loss_sim(&hq2, &hk, margin).unwrap()
            },
            hq.background(),
            FD_STEP,
        );
        worst = worst
            .max(max_rel_err(g.signer(), &num_s))
            .max(max_rel_err(g.background(), &num_b));
    }
    ComponentCheck {
        name: "loss_sim",
        max_rel_err: worst,
        instances,
        threshold: COMPONENT_TOL,
    }
}

pub fn check_loss_rec(seed: u64, instances: usize) -> ComponentCheck {
    let mut rng = seeding::rng_from(seeding::named_seed(seed, "loss_rec"));
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let dim = 2 * rng.random_range(1..=5);
        let vectors: Vec<FeatureVec> = loop {
            let vs: Vec<Vec<f64>> = (0..4).map(|_| random_vec(dim, &mut rng)).collect();
            // Keep residuals away from the L1 kink.
            let q_ok = vs[0].iter().zip(&vs[1]).all(|(a, b)| (a - b).abs() > KINK_MARGIN);
            let k_ok = vs[2].iter().zip(&vs[3]).all(|(a, b)| (a - b).abs() > KINK_MARGIN);
            if q_ok && k_ok {
                break vs.into_iter().map(|v| FeatureVec::new(v).unwrap()).collect();
            }
        };
        let [fhq, fq, fhk, fk] = <[FeatureVec; 4]>::try_from(vectors).expect("four vectors");
        let (_, grads) = loss_rec_grad(&fhq, &fq, &fhk, &fk).expect("matching dims");
        let args = [&fhq, &fq, &fhk, &fk];
        for (i, g) in grads.iter().enumerate() {
            let numeric = central_diff(
                |p| {
                    let mut mine: Vec<&FeatureVec> = args.to_vec();
                    let replaced = FeatureVec::new(p.to_vec()).unwrap();
                    mine[i] = &replaced;
                    loss_rec(mine[0], mine[1], mine[2], mine[3]).unwrap()
                },
                args[i].values(),
                FD_STEP,
            );
            worst = worst.max(max_rel_err(g, &numeric));
        }
    }
    ComponentCheck {
        name: "loss_rec",
        max_rel_err: worst,
        instances,
        threshold: COMPONENT_TOL,
    }
}

pub fn check_ctc_grad(seed: u64, instances: usize) -> ComponentCheck {
    let mut rng = seeding::rng_from(seeding::named_seed(seed, "ctc"));
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < instances {
        let t = rng.random_range(2..=6);
        let v = rng.random_range(2..=4);
        let len = rng.random_range(0..=3.min(t));
        let labels: Vec<usize> = (0..len).map(|_| rng.random_range(1..v)).collect();
        let target = TargetSeq::new(labels).expect("no blanks drawn");
        if target.min_frames() > t {
            continue;
        }
        let vals: Vec<f64> = (0..t * v).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let logits = LogitsSeq::new(t, v, vals.clone()).expect("valid shape");
        let analytic = ctc_grad(&logits, &target).expect("feasible");
        let numeric = central_diff(
            |p| {
                let l = LogitsSeq::new(t, v, p.to_vec()).unwrap();
                ctc_loss(&l, &target).unwrap()
            },
            &vals,
            FD_STEP,
        );
        worst = worst.max(max_rel_err(&analytic, &numeric));
        done += 1;
    }
    ComponentCheck {
        name: "ctc_grad",
        max_rel_err: worst,
        instances,
        threshold: COMPONENT_TOL,
    }
}

struct DaeInstance {
    student: DaeParams,
    teacher: DaeParams,
    f_q: FeatureVec,
    f_k: FeatureVec,
}

/// Sample a DAE instance with every preactivation, residual, clamp margin,
/// and latent norm clear of its kink.
fn sample_dae_instance(cfg: &LossConfig, rng: &mut DetRng) -> DaeInstance {
    let d = 6;
    let dh = 4;
    for _ in 0..RESAMPLE_LIMIT {
        let student = DaeParams::init(d, dh, rng).expect("even dims");
        let teacher = DaeParams::init(d, dh, rng).expect("even dims");
        let f_q = FeatureVec::new(random_vec(d, rng)).expect("finite");
        let f_k = FeatureVec::new(random_vec(d, rng)).expect("finite");
        let Ok(fwd) = dae_forward(&student, &teacher, &f_q, &f_k, cfg) else {
            continue;
        };
        let preacts_clear = fwd
            .enc_cache
            .z1
            .iter()
            .chain(&fwd.dec_cache_q.z1)
            .chain(&fwd.dec_cache_k.z1)
            .all(|z| z.abs() > KINK_MARGIN);
        let residuals_clear = fwd
            .f_hat_q
            .values()
            .iter()
            .zip(f_q.values())
            .chain(fwd.f_hat_k.values().iter().zip(f_k.values()))
            .all(|(a, b)| (a - b).abs() > KINK_MARGIN);
        let halves = [
            fwd.hq.signer(),
            fwd.hq.background(),
            fwd.hk.signer(),
            fwd.hk.background(),
        ];
        let norms_clear = halves.iter().all(|v| norm2(v) > 0.05);
        let clamp_clear =
            (cos_of(fwd.hq.background(), fwd.hk.background()) - cfg.margin).abs() > 0.02;
        if preacts_clear && residuals_clear && norms_clear && clamp_clear {
            return DaeInstance {
                student,
                teacher,
                f_q,
                f_k,
            };
        }
    }
    panic!("no kink-free DAE instance found in {RESAMPLE_LIMIT} tries");
}

/// The composed DAE graph: FD over every encoder/decoder parameter and the
/// student input.
pub fn check_dae_grads(seed: u64, instances: usize) -> ComponentCheck {
    let cfg = LossConfig::default();
    let mut rng = seeding::rng_from(seeding::named_seed(seed, "dae_grads"));
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let inst = sample_dae_instance(&cfg, &mut rng);
        let (_, grads) =
            dae_grads(&inst.student, &inst.teacher, &inst.f_q, &inst.f_k, &cfg, 1.0, None)
                .expect("forward succeeds");

        let loss_with = |student: &DaeParams, f_q: &FeatureVec| {
            let fwd = dae_forward(student, &inst.teacher, f_q, &inst.f_k, &cfg).unwrap();
            fwd.l_sim + fwd.l_rec
        };

        // Parameter tensors.
        type Access = (
            fn(&DaeParams) -> &Vec<f64>,
            fn(&mut DaeParams) -> &mut Vec<f64>,
        );
        let accessors: [Access; 8] = [
            (|p| &p.enc1.w, |p| &mut p.enc1.w),
            (|p| &p.enc1.b, |p| &mut p.enc1.b),
            (|p| &p.enc2.w, |p| &mut p.enc2.w),
            (|p| &p.enc2.b, |p| &mut p.enc2.b),
            (|p| &p.dec1.w, |p| &mut p.dec1.w),
            (|p| &p.dec1.b, |p| &mut p.dec1.b),
            (|p| &p.dec2.w, |p| &mut p.dec2.w),
            (|p| &p.dec2.b, |p| &mut p.dec2.b),
        ];
        let analytic_tensors: [&[f64]; 8] = [
            &grads.enc1.w,
            &grads.enc1.b,
            &grads.enc2.w,
            &grads.enc2.b,
            &grads.dec1.w,
            &grads.dec1.b,
            &grads.dec2.w,
            &grads.dec2.b,
        ];
        for ((read, write), analytic) in accessors.iter().zip(analytic_tensors) {
            let base = read(&inst.student).clone();
            let mut scratch = inst.student.clone();
            let numeric = central_diff(
                |p| {
                    write(&mut scratch).copy_from_slice(p);
                    loss_with(&scratch, &inst.f_q)
                },
                &base,
                FD_STEP,
            );
            worst = worst.max(max_rel_err(analytic, &numeric));
        }

        // Student input.
        let numeric = central_diff(
            |p| loss_with(&inst.student, &FeatureVec::new(p.to_vec()).unwrap()),
            inst.f_q.values(),
            FD_STEP,
        );
        worst = worst.max(max_rel_err(&grads.f_q, &numeric));
    }
    ComponentCheck {
        name: "dae_grads",
        max_rel_err: worst,
        instances,
        threshold: COMPONENT_TOL,
    }
}

/// End-to-end toy loss (CTC through the classifier plus the DAE terms) on a
/// micro model, FD over every trainable tensor.
pub fn check_end_to_end(seed: u64, instances: usize) -> ComponentCheck {
    let model_cfg = ModelConfig {
        frame_height: 8,
        frame_width: 8,
        downsample: 2,
        hidden_dim: 6,
        feature_dim: 8,
        latent_dim: 4,
        vocab: 3,
        dae_enabled: true,
    };
    let loss_cfg = LossConfig::default();
    let mut rng = seeding::rng_from(seeding::named_seed(seed, "end_to_end"));
    let mut worst = 0.0f64;

    for instance in 0..instances {
        let (params, student_frames, teacher_frames, target) = 'sample: {
            for _ in 0..RESAMPLE_LIMIT {
                let init_seed = rng.random::<u64>();
                let params = ModelParams::init(model_cfg, init_seed).expect("valid config");
                let t = 4;
                let frames = |rng: &mut DetRng| -> Vec<Frame> {
                    (0..t)
                        .map(|_| {
                            let data =
                                (0..8 * 8 * 3).map(|_| rng.random_range(0.0..=1.0)).collect();
                            Frame::new(8, 8, data).expect("in range")
                        })
                        .collect()
                };
                let student_frames = frames(&mut rng);
                let teacher_frames = frames(&mut rng);
                let target = TargetSeq::new(vec![1, 2]).expect("no blanks");
                if end_to_end_instance_is_clear(
                    &params,
                    &student_frames,
                    &teacher_frames,
                    &loss_cfg,
                ) {
                    break 'sample (params, student_frames, teacher_frames, target);
                }
            }
            panic!("no kink-free end-to-end instance found (instance {instance})");
        };

        let (_, grads) =
            video_loss_and_grads(&params, &student_frames, &teacher_frames, &target, &loss_cfg)
                .expect("forward succeeds");
        let analytic = grads.slices(true);

        let mut scratch = params.clone();
        let n_tensors = analytic.len();
        for idx in 0..n_tensors {
            let base = scratch.student.tensors_mut(true)[idx].clone();
            let numeric = central_diff(
                |p| {
                    scratch.student.tensors_mut(true)[idx].copy_from_slice(p);
                    let (loss, _) = video_loss_and_grads(
                        &scratch,
                        &student_frames,
                        &teacher_frames,
                        &target,
                        &loss_cfg,
                    )
                    .unwrap();
                    loss
                },
                &base,
                FD_STEP,
            );
            scratch.student.tensors_mut(true)[idx].copy_from_slice(&base);
            worst = worst.max(max_rel_err(analytic[idx], &numeric));
        }
    }
    ComponentCheck {
        name: "end_to_end",
        max_rel_err: worst,
        instances,
        threshold: END_TO_END_TOL,
    }
}

/// Scan every ReLU preactivation, L1 residual, clamp margin, and latent norm
/// in the composed graph.
fn end_to_end_instance_is_clear(
    params: &ModelParams,
    student_frames: &[Frame],
    teacher_frames: &[Frame],
    loss_cfg: &LossConfig,
) -> bool {
    use crate::toytrain::{downsample_frame, forward_student};
    let cfg = &params.cfg;
    let Ok(fwd) = forward_student(&params.student, cfg, student_frames) else {
        return false;
    };
    for cache in &fwd.caches {
        if cache.z1.iter().any(|z| z.abs() < KINK_MARGIN) {
            return false;
        }
    }
    for (t, feature) in fwd.features.iter().enumerate() {
        // Teacher features (fixed during FD, but their DAE branch still runs
        // through shared-decoder ReLUs that must be clear).
        let tx = downsample_frame(&teacher_frames[t], cfg.downsample);
        let Ok(tz1) = params.teacher.backbone.l1.forward(&tx) else {
            return false;
        };
        let ta1: Vec<f64> = tz1.iter().map(|v| v.max(0.0)).collect();
        let Ok(tf) = params.teacher.backbone.l2.forward(&ta1) else {
            return false;
        };
        let Ok(f_k) = FeatureVec::new(tf) else {
            return false;
        };
        let Ok(dfwd) = dae_forward(&params.student.dae, &params.teacher.dae, feature, &f_k, loss_cfg)
        else {
            return false;
        };
        let preacts_clear = dfwd
            .enc_cache
            .z1
            .iter()
            .chain(&dfwd.dec_cache_q.z1)
            .chain(&dfwd.dec_cache_k.z1)
            .all(|z| z.abs() > KINK_MARGIN);
        let residuals_clear = dfwd
            .f_hat_q
            .values()
            .iter()
            .zip(feature.values())
            .chain(dfwd.f_hat_k.values().iter().zip(f_k.values()))
            .all(|(a, b)| (a - b).abs() > KINK_MARGIN);
        let halves = [
            dfwd.hq.signer(),
            dfwd.hq.background(),
            dfwd.hk.signer(),
            dfwd.hk.background(),
        ];
        let norms_clear = halves.iter().all(|v| norm2(v) > 0.05);
        let clamp_clear =
            (cos_of(dfwd.hq.background(), dfwd.hk.background()) - loss_cfg.margin).abs() > 0.02;
        if !(preacts_clear && residuals_clear && norms_clear && clamp_clear) {
            return false;
        }
    }
    true
}

/// Run every suite with its contract threshold.
pub fn run_all(seed: u64, instances: usize) -> Vec<ComponentCheck> {
    vec![
        check_sim_pos(seed, instances),
        check_sim_neg(seed, instances),
        check_loss_sim(seed, instances),
        check_loss_rec(seed, instances),
        check_ctc_grad(seed, instances),
        check_dae_grads(seed, instances),
        check_end_to_end(seed, instances),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_sweep_passes() {
        for check in run_all(12345, 10) {
            assert!(
                check.passed(),
                "{}: {} > {}",
                check.name,
                check.max_rel_err,
                check.threshold
            );
        }
    }

    #[test]
    fn central_diff_of_quadratic() {
        let g = central_diff(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 5.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn rel_err_floor_absorbs_tiny_noise() {
        assert!(max_rel_err(&[0.0], &[1e-10]) < 1e-4);
        assert!(max_rel_err(&[1.0], &[1.1]) > 0.05);
    }
}
