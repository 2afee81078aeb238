//! The desk-scale model: per-frame average-pool downsampling, a two-layer
//! feature MLP, the DAE encoder split, and a linear framewise classifier
//! feeding CTC. With the DAE disabled the classifier consumes the full
//! feature vector (baseline wiring).

use serde::{Deserialize, Serialize};

use crate::ctc::LogitsSeq;
use crate::daecore::{
    self, dae_grads, DaeGrads, DaeParams, FeatureVec, LatentPair, Linear, LinearGrads, LossConfig,
};
use crate::media::Frame;
use crate::seeding;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub frame_height: usize,
    pub frame_width: usize,
    /// Average-pool factor applied per channel before flattening.
    pub downsample: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub latent_dim: usize,
    /// Gesture classes; logits add one blank slot.
    pub vocab: usize,
    pub dae_enabled: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frame_height: 32,
            frame_width: 32,
            downsample: 4,
            hidden_dim: 64,
            feature_dim: 32,
            latent_dim: 16,
            vocab: 5,
            dae_enabled: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::BadConfig(m.to_string()));
        if self.downsample == 0
            || self.frame_height % self.downsample != 0
            || self.frame_width % self.downsample != 0
        {
            return bad("downsample must evenly divide the frame size");
        }
        if self.feature_dim % 2 != 0 || self.latent_dim % 2 != 0 {
            return bad("feature_dim and latent_dim must be even");
        }
        if self.vocab < 2 {
            return bad("vocab must be >= 2");
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        (self.frame_height / self.downsample) * (self.frame_width / self.downsample) * 3
    }

    pub fn n_logits(&self) -> usize {
        self.vocab + 1
    }

    /// Classifier input width: the signer half with the DAE, the full feature
    /// vector without it.
    pub fn classifier_in(&self) -> usize {
        if self.dae_enabled {
            self.latent_dim / 2
        } else {
            self.feature_dim
        }
    }
}

/// Two-layer feature extractor (input -> hidden -> feature).
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub l1: Linear,
    pub l2: Linear,
}

impl Backbone {
    fn init(cfg: &ModelConfig, rng: &mut seeding::DetRng) -> Self {
        Backbone {
            l1: Linear::init(cfg.hidden_dim, cfg.input_dim(), rng),
            l2: Linear::init(cfg.feature_dim, cfg.hidden_dim, rng),
        }
    }
}

/// One network copy: backbone, DAE, framewise classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentParams {
    pub backbone: Backbone,
    pub dae: DaeParams,
    pub classifier: Linear,
}

/// Student plus momentum teacher (an identical-shape copy).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub student: StudentParams,
    pub teacher: StudentParams,
}

impl ModelParams {
    /// Initialize from named seed streams; the teacher starts as an exact
    /// copy of the student. Components draw from independent streams so the
    /// backbone/classifier init is identical whether or not the DAE is
    /// wired in.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self, TrainError> {
        cfg.validate()?;
        let mut bb_rng = seeding::rng_from(seeding::named_seed(seed, "backbone"));
        let backbone = Backbone::init(&cfg, &mut bb_rng);
        let mut dae_rng = seeding::rng_from(seeding::named_seed(seed, "dae"));
        let dae = DaeParams::init(cfg.feature_dim, cfg.latent_dim, &mut dae_rng)?;
        let mut cls_rng = seeding::rng_from(seeding::named_seed(seed, "classifier"));
        let classifier = Linear::init(cfg.n_logits(), cfg.classifier_in(), &mut cls_rng);
        let student = StudentParams {
            backbone,
            dae,
            classifier,
        };
        Ok(ModelParams {
            cfg,
            teacher: student.clone(),
            student,
        })
    }
}

impl StudentParams {
    /// Trainable tensors in optimizer order. Without the DAE only the
    /// backbone and classifier participate, which keeps the baseline wiring
    /// exactly a CTC-only model.
    pub fn tensors_mut(&mut self, dae_enabled: bool) -> Vec<&mut Vec<f64>> {
        let mut v = vec![
            &mut self.backbone.l1.w,
            &mut self.backbone.l1.b,
            &mut self.backbone.l2.w,
            &mut self.backbone.l2.b,
        ];
        if dae_enabled {
            for t in self.dae.tensors_mut() {
                v.push(t);
            }
        }
        v.push(&mut self.classifier.w);
        v.push(&mut self.classifier.b);
        v
    }

    pub fn tensor_sizes(&self, dae_enabled: bool) -> Vec<usize> {
        let mut v = vec![
            self.backbone.l1.w.len(),
            self.backbone.l1.b.len(),
            self.backbone.l2.w.len(),
            self.backbone.l2.b.len(),
        ];
        if dae_enabled {
            v.extend(self.dae.tensors().iter().map(|(t, _, _)| t.len()));
        }
        v.push(self.classifier.w.len());
        v.push(self.classifier.b.len());
        v
    }

    /// All tensors (always including the DAE) for checkpointing.
    pub fn all_tensors(&self) -> Vec<(&[f64], usize, usize)> {
        let mut v: Vec<(&[f64], usize, usize)> = vec![
            (&self.backbone.l1.w, self.backbone.l1.rows, self.backbone.l1.cols),
            (&self.backbone.l1.b, self.backbone.l1.rows, 1),
            (&self.backbone.l2.w, self.backbone.l2.rows, self.backbone.l2.cols),
            (&self.backbone.l2.b, self.backbone.l2.rows, 1),
        ];
        v.extend(self.dae.tensors());
        v.push((&self.classifier.w, self.classifier.rows, self.classifier.cols));
        v.push((&self.classifier.b, self.classifier.rows, 1));
        v
    }
}

/// Average-pool `ds x ds` blocks per channel and flatten.
pub fn downsample_frame(frame: &Frame, ds: usize) -> Vec<f64> {
    let oh = frame.height() / ds;
    let ow = frame.width() / ds;
    let norm = 1.0 / (ds * ds) as f64;
    let mut out = Vec::with_capacity(oh * ow * 3);
    for y in 0..oh {
        for x in 0..ow {
            for c in 0..3 {
                let mut acc = 0.0;
                for dy in 0..ds {
                    for dx in 0..ds {
                        acc += frame.get(y * ds + dy, x * ds + dx, c);
                    }
                }
                out.push(acc * norm);
            }
        }
    }
    out
}

pub(crate) struct FrameCache {
    pub x: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    /// Encoder preactivation/activation, kept only when the DAE is wired in.
    pub enc_z1: Vec<f64>,
    pub enc_a1: Vec<f64>,
}

/// Per-video student forward pass.
pub struct StudentForward {
    pub features: Vec<FeatureVec>,
    /// Latent pairs, empty when the DAE is disabled.
    pub latents: Vec<LatentPair>,
    pub logits: LogitsSeq,
    pub(crate) caches: Vec<FrameCache>,
}

/// Run the student on prepared frames (the caller applies any augmentation
/// or background randomization first). The teacher is never touched here;
/// this is also the inference path.
pub fn forward_student(
    student: &StudentParams,
    cfg: &ModelConfig,
    frames: &[Frame],
) -> Result<StudentForward, TrainError> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(TrainError::BadConfig("no frames to run on".into()));
    }
    let mut features = Vec::with_capacity(frames.len());
    let mut latents = Vec::with_capacity(frames.len());
    let mut caches = Vec::with_capacity(frames.len());
    let mut logit_rows = Vec::with_capacity(frames.len() * cfg.n_logits());
    for frame in frames {
        if frame.height() != cfg.frame_height || frame.width() != cfg.frame_width {
            return Err(TrainError::BadConfig(format!(
                "frame is {}x{}, model expects {}x{}",
                frame.height(),
                frame.width(),
                cfg.frame_height,
                cfg.frame_width
            )));
        }
        let x = downsample_frame(frame, cfg.downsample);
        let z1 = student.backbone.l1.forward(&x)?;
        let a1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let f = student.backbone.l2.forward(&a1)?;
        let feature = FeatureVec::new(f)?;

        let (logits_row, enc_z1, enc_a1) = if cfg.dae_enabled {
            let enc_z1 = student.dae.enc1.forward(feature.values())?;
            let enc_a1 = student.dae.activation.apply(&enc_z1);
            let h = student.dae.enc2.forward(&enc_a1)?;
            let half = h.len() / 2;
            let latent = LatentPair::new(h[..half].to_vec(), h[half..].to_vec())?;
            let row = student.classifier.forward(latent.signer())?;
            latents.push(latent);
            (row, enc_z1, enc_a1)
        } else {
            (
                student.classifier.forward(feature.values())?,
                Vec::new(),
                Vec::new(),
            )
        };
        logit_rows.extend_from_slice(&logits_row);
        features.push(feature);
        caches.push(FrameCache {
            x,
            z1,
            a1,
            enc_z1,
            enc_a1,
        });
    }
    let logits = LogitsSeq::new(frames.len(), cfg.n_logits(), logit_rows)?;
    Ok(StudentForward {
        features,
        latents,
        logits,
        caches,
    })
}

/// Accumulated parameter gradients for one optimizer step.
pub struct StudentGrads {
    pub backbone_l1: LinearGrads,
    pub backbone_l2: LinearGrads,
    pub dae: Option<DaeGradsAccum>,
    pub classifier: LinearGrads,
}

pub struct DaeGradsAccum {
    pub enc1: LinearGrads,
    pub enc2: LinearGrads,
    pub dec1: LinearGrads,
    pub dec2: LinearGrads,
}

impl StudentGrads {
    pub fn zeros_like(p: &StudentParams, dae_enabled: bool) -> Self {
        StudentGrads {
            backbone_l1: LinearGrads::zeros_like(&p.backbone.l1),
            backbone_l2: LinearGrads::zeros_like(&p.backbone.l2),
            dae: dae_enabled.then(|| DaeGradsAccum {
                enc1: LinearGrads::zeros_like(&p.dae.enc1),
                enc2: LinearGrads::zeros_like(&p.dae.enc2),
                dec1: LinearGrads::zeros_like(&p.dae.dec1),
                dec2: LinearGrads::zeros_like(&p.dae.dec2),
            }),
            classifier: LinearGrads::zeros_like(&p.classifier),
        }
    }

    fn add_dae(&mut self, g: &DaeGrads) {
        let acc = self.dae.as_mut().expect("dae grads enabled");
        for (dst, src) in [
            (&mut acc.enc1, &g.enc1),
            (&mut acc.enc2, &g.enc2),
            (&mut acc.dec1, &g.dec1),
            (&mut acc.dec2, &g.dec2),
        ] {
            for (d, s) in dst.w.iter_mut().zip(&src.w) {
                *d += s;
            }
            for (d, s) in dst.b.iter_mut().zip(&src.b) {
                *d += s;
            }
        }
    }

    /// Gradient slices in the same order as `StudentParams::tensors_mut`.
    pub fn slices(&self, dae_enabled: bool) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![
            &self.backbone_l1.w,
            &self.backbone_l1.b,
            &self.backbone_l2.w,
            &self.backbone_l2.b,
        ];
        if dae_enabled {
            let acc = self.dae.as_ref().expect("dae grads enabled");
            for g in [&acc.enc1, &acc.enc2, &acc.dec1, &acc.dec2] {
                v.push(&g.w);
                v.push(&g.b);
            }
        }
        v.push(&self.classifier.w);
        v.push(&self.classifier.b);
        v
    }
}

/// Per-video DAE loss means produced while backpropagating; the CTC value
/// is owned by the caller.
pub struct VideoBackward {
    pub l_sim: f64,
    pub l_rec: f64,
}

/// Backpropagate one video: CTC through the classifier, the DAE losses when
/// active, then the shared backbone. `ctc_scale` and `dae_scale` fold in
/// the batch/frame averaging. With the DAE wired in but `dae_losses_active`
/// false (warmup), the CTC gradient still flows through the encoder but the
/// similarity/reconstruction terms contribute nothing.
#[allow(clippy::too_many_arguments)]
pub fn backward_video(
    params: &ModelParams,
    fwd: &StudentForward,
    teacher_frames: &[Frame],
    dlogits: &[f64],
    loss_cfg: &LossConfig,
    ctc_scale: f64,
    dae_scale: f64,
    dae_losses_active: bool,
    grads: &mut StudentGrads,
) -> Result<VideoBackward, TrainError> {
    let cfg = &params.cfg;
    let t_len = fwd.caches.len();
    let n_logits = cfg.n_logits();
    let mut l_sim_sum = 0.0;
    let mut l_rec_sum = 0.0;

    for t in 0..t_len {
        let dl_row: Vec<f64> = dlogits[t * n_logits..(t + 1) * n_logits]
            .iter()
            .map(|g| g * ctc_scale)
            .collect();

        // Classifier backward.
        let cls_input: &[f64] = if cfg.dae_enabled {
            fwd.latents[t].signer()
        } else {
            fwd.features[t].values()
        };
        grads.classifier.accumulate(&dl_row, cls_input);
        let upstream = params.student.classifier.input_grad(&dl_row);

        let delta_f: Vec<f64> = if cfg.dae_enabled && dae_losses_active {
            // Teacher feature for this frame.
            let tx = downsample_frame(&teacher_frames[t], cfg.downsample);
            let tz1 = params.teacher.backbone.l1.forward(&tx)?;
            let ta1: Vec<f64> = tz1.iter().map(|v| v.max(0.0)).collect();
            let f_k = FeatureVec::new(params.teacher.backbone.l2.forward(&ta1)?)?;

            let (dae_fwd, dae_g) = dae_grads(
                &params.student.dae,
                &params.teacher.dae,
                &fwd.features[t],
                &f_k,
                loss_cfg,
                dae_scale,
                Some(&upstream),
            )?;
            l_sim_sum += dae_fwd.l_sim;
            l_rec_sum += dae_fwd.l_rec;
            grads.add_dae(&dae_g);
            dae_g.f_q
        } else if cfg.dae_enabled {
            // Warmup: CTC only, back through the encoder.
            let cache = &fwd.caches[t];
            let half = fwd.latents[t].half_dim();
            let mut delta_h = upstream;
            delta_h.resize(2 * half, 0.0);
            let enc_cache = crate::daecore::MlpCache {
                input: fwd.features[t].values().to_vec(),
                z1: cache.enc_z1.clone(),
                a1: cache.enc_a1.clone(),
                out: Vec::new(),
            };
            let acc = grads.dae.as_mut().expect("dae grads allocated");
            crate::daecore::mlp_backward(
                &params.student.dae.enc1,
                &params.student.dae.enc2,
                params.student.dae.activation,
                &enc_cache,
                &delta_h,
                &mut acc.enc1,
                &mut acc.enc2,
            )
        } else {
            upstream
        };

        // Backbone backward.
        let cache = &fwd.caches[t];
        grads.backbone_l2.accumulate(&delta_f, &cache.a1);
        let delta_a1 = params.student.backbone.l2.input_grad(&delta_f);
        let delta_z1: Vec<f64> = delta_a1
            .iter()
            .zip(&cache.z1)
            .map(|(d, &z)| if z > 0.0 { *d } else { 0.0 })
            .collect();
        grads.backbone_l1.accumulate(&delta_z1, &cache.x);
    }

    let frame_norm = 1.0 / t_len as f64;
    Ok(VideoBackward {
        l_sim: l_sim_sum * frame_norm,
        l_rec: l_rec_sum * frame_norm,
    })
}

/// Serialize every tensor (student then teacher) in the flat binary format.
pub fn save_checkpoint(
    path: &std::path::Path,
    params: &ModelParams,
    loss_cfg: &LossConfig,
) -> Result<(), TrainError> {
    let mut tensors = params.student.all_tensors();
    tensors.extend(params.teacher.all_tensors());
    let file = std::fs::File::create(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = std::io::BufWriter::new(file);
    daecore::io::write_tensors(&mut w, &tensors).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    use std::io::Write;
    w.flush().map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let side = path.with_extension("json");
    let json = serde_json::to_string_pretty(loss_cfg).expect("loss config serializes");
    std::fs::write(&side, json + "\n").map_err(|source| TrainError::Io {
        path: side.clone(),
        source,
    })?;
    Ok(())
}
