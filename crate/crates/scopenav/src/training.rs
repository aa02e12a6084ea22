//! The training objective and loop: masked reconstruction loss with the
//! centering re-encoding penalty, AdamW with decoupled weight decay, and
//! a linear learning-rate warmup.
//!
//! Per window the loss is
//! `bce(y, y_hat) + sum_i y_i * l1(b_i, b_rot_i) + |z2_reenc| + |z3_reenc|`,
//! where the last two come from re-encoding the centered reconstruction
//! (ground-truth presence, predicted boxes, absent classes zeroed,
//! stacked s times). Gradients flow through that second encoder pass into
//! the shared encoder weights.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamGrads, ParamSet, Tensor};
use crate::data::{sequence_at, windows, FrameRecord, Window};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::model::{DetectionFrame, ModelConfig, ModelOutput, ModelParams};

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` inside the
/// cross-entropy.
pub const PROB_FLOOR: f64 = 1e-7;

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_peak: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: Option<f64>,
    /// Keep every k-th window of the full window set (1 keeps all).
    pub window_sample_stride: usize,
    /// Epochs between periodic checkpoints in a run directory; 0 disables.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_peak: 1e-4,
            warmup_epochs: 60,
            epochs: 2500,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            grad_clip_norm: None,
            window_sample_stride: 1,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_peak <= 0.0 {
            return Err(Error::Config("lr_peak must be positive".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.window_sample_stride == 0 {
            return Err(Error::Config("window_sample_stride must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if self.eps <= 0.0 {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate for an epoch: linear from 0 to `lr_peak` across
/// `warmup_epochs`, constant afterwards.
pub fn learning_rate_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.warmup_epochs == 0 {
        return cfg.lr_peak;
    }
    cfg.lr_peak * (epoch as f64 / cfg.warmup_epochs as f64).min(1.0)
}

/// The three loss terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub bce_term: f64,
    pub box_term: f64,
    pub centering_term: f64,
}

/// Reference (non-differentiable) loss evaluation; the training graph is
/// cross-checked against this in the tests.
pub fn loss(
    output: &ModelOutput,
    z_reenc: (f64, f64),
    target: &DetectionFrame,
) -> Result<LossBreakdown> {
    let n = target.n_classes();
    if output.y_hat.len() != n || output.b_rotated.len() != n {
        return Err(Error::Input(format!(
            "output has {} classes, target {n}",
            output.y_hat.len()
        )));
    }
    for (i, s) in target.slots.iter().enumerate() {
        if s.presence != 0.0 && s.presence != 1.0 {
            return Err(Error::Input(format!(
                "target class {i}: presence {} is not binary",
                s.presence
            )));
        }
    }
    let mut bce = 0.0;
    let mut box_term = 0.0;
    for (i, s) in target.slots.iter().enumerate() {
        let y = s.presence;
        let p = output.y_hat[i].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        bce -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        if y == 1.0 {
            let b = &s.bbox;
            let r = &output.b_rotated[i];
            box_term += (b.cx - r.cx).abs()
                + (b.cy - r.cy).abs()
                + (b.w - r.w).abs()
                + (b.h - r.h).abs();
        }
    }
    let centering = z_reenc.0.abs() + z_reenc.1.abs();
    Ok(LossBreakdown {
        total: bce + box_term + centering,
        bce_term: bce,
        box_term,
        centering_term: centering,
    })
}

/// Re-encodes the centered reconstruction: ground-truth presence with the
/// predicted boxes (absent classes zeroed), stacked `s` times, through
/// the encoder. Returns the predicted `(z2, z3)`.
pub fn center_reencode(
    params: &ModelParams,
    y_true: &[f64],
    b_centered: &[BBox],
) -> Result<(f64, f64)> {
    let n = params.config().n_classes;
    if y_true.len() != n || b_centered.len() != n {
        return Err(Error::Input(format!(
            "expected {n} presences and boxes, got {} and {}",
            y_true.len(),
            b_centered.len()
        )));
    }
    if y_true.iter().any(|y| *y != 0.0 && *y != 1.0) {
        return Err(Error::Input("presence vector is not binary".into()));
    }
    let mut g = Graph::new(params.param_set());
    let presence = g.constant(Tensor::from_vec(1, n, y_true.to_vec()));
    let mut boxes = Tensor::zeros(n, 4);
    for (i, b) in b_centered.iter().enumerate() {
        if y_true[i] == 1.0 {
            boxes.row_mut(i).copy_from_slice(&[b.cx, b.cy, b.w, b.h]);
        }
    }
    let boxes = g.constant(boxes);
    let frame = g.frame_concat(presence, boxes);
    let tiled = g.tile_rows(frame, params.config().seq_len);
    let (_, z2, z3) = params.build_encoder(&mut g, tiled);
    Ok((g.value(z2).item(), g.value(z3).item()))
}

/// Node handles for the per-window training loss graph.
pub struct LossNodes {
    pub total: NodeId,
    pub bce: NodeId,
    pub boxes: NodeId,
    pub centering: NodeId,
}

/// Builds the full differentiable loss for one window on `g`.
pub fn build_loss_graph(
    g: &mut Graph,
    params: &ModelParams,
    features: Tensor,
    target: &DetectionFrame,
) -> Result<LossNodes> {
    let cfg = params.config();
    let n = cfg.n_classes;
    let input = g.constant(features);
    let fwd = params.build_forward(g, input)?;

    let y: Vec<f64> = target.slots.iter().map(|s| s.presence).collect();
    let one_minus_y: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let mut mask4 = Tensor::zeros(n, 4);
    let mut b_target = Tensor::zeros(n, 4);
    for (i, s) in target.slots.iter().enumerate() {
        if s.presence == 1.0 {
            mask4.row_mut(i).fill(1.0);
            b_target
                .row_mut(i)
                .copy_from_slice(&[s.bbox.cx, s.bbox.cy, s.bbox.w, s.bbox.h]);
        }
    }
    let y_node = g.constant(Tensor::from_vec(1, n, y));
    let one_minus_y_node = g.constant(Tensor::from_vec(1, n, one_minus_y));
    let ones = g.constant(Tensor::filled(1, n, 1.0));
    let mask_node = g.constant(mask4);
    let b_target_node = g.constant(b_target);

    // -sum(y log p + (1-y) log(1-p)) with p clamped.
    let p = g.clamp(fwd.y_hat, PROB_FLOOR, 1.0 - PROB_FLOOR);
    let log_p = g.log(p);
    let t1 = g.mul_elem(y_node, log_p);
    let q = g.sub(ones, p);
    let log_q = g.log(q);
    let t2 = g.mul_elem(one_minus_y_node, log_q);
    let t = g.add(t1, t2);
    let t_sum = g.sum(t);
    let bce = g.scale(t_sum, -1.0);

    // Masked l1 on the rotated reconstruction.
    let diff = g.sub(fwd.b_rotated, b_target_node);
    let adiff = g.abs(diff);
    let masked = g.mul_elem(mask_node, adiff);
    let box_term = g.sum(masked);

    // Centering penalty via the second encoder pass.
    let centering = if cfg.rotation_enabled {
        let masked_boxes = g.mul_elem(fwd.b_centered, mask_node);
        let frame = g.frame_concat(y_node, masked_boxes);
        let tiled = g.tile_rows(frame, cfg.seq_len);
        let (_, z2r, z3r) = params.build_encoder(g, tiled);
        let a2 = g.abs(z2r);
        let a3 = g.abs(z3r);
        let s2 = g.sum(a2);
        let s3 = g.sum(a3);
        g.add(s2, s3)
    } else {
        g.scalar(0.0)
    };

    let partial = g.add(bce, box_term);
    let total = g.add(partial, centering);
    Ok(LossNodes {
        total,
        bce,
        boxes: box_term,
        centering,
    })
}

/// AdamW with decoupled weight decay and bias-corrected moments.
pub struct AdamW {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(params: &ParamSet, cfg: &TrainConfig) -> AdamW {
        let zeros = || {
            params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
                .collect()
        };
        AdamW {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamGrads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads.tensor(i).data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.tensor_mut(i).data_mut();
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p[j]);
            }
        }
    }
}

/// Per-epoch progress handed to the observer callback.
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: LossBreakdown,
}

/// Trains a fresh model on the records and returns it with the per-epoch
/// mean loss history.
pub fn train(
    dataset: &[FrameRecord],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<LossBreakdown>)> {
    train_with(dataset, model_cfg, train_cfg, |_, _| Ok(()))
}

/// [`train`] with an observer invoked after every epoch (history sinks,
/// periodic checkpoints).
pub fn train_with(
    dataset: &[FrameRecord],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochStats, &ModelParams) -> Result<()>,
) -> Result<(ModelParams, Vec<LossBreakdown>)> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    for r in dataset {
        if r.detections.n_classes() != model_cfg.n_classes {
            return Err(Error::Input(format!(
                "record {}:{} has {} classes, model expects {}",
                r.video_id,
                r.frame_index,
                r.detections.n_classes(),
                model_cfg.n_classes
            )));
        }
        r.validate()?;
    }

    let all_windows = windows(dataset, model_cfg.seq_len)?;
    let mut pool: Vec<Window> = all_windows
        .into_iter()
        .step_by(train_cfg.window_sample_stride)
        .collect();
    if pool.is_empty() {
        return Err(Error::Input(format!(
            "dataset yields no windows of length {}",
            model_cfg.seq_len
        )));
    }

    let mut params = ModelParams::init(model_cfg.clone())?;
    let mut opt = AdamW::new(params.param_set(), train_cfg);
    let mut pgrads = ParamGrads::zeros_like(params.param_set());
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut history = Vec::with_capacity(train_cfg.epochs);

    for epoch in 0..train_cfg.epochs {
        let lr = learning_rate_at(train_cfg, epoch);
        pool.shuffle(&mut rng);
        let mut sums = LossBreakdown {
            total: 0.0,
            bce_term: 0.0,
            box_term: 0.0,
            centering_term: 0.0,
        };
        for batch in pool.chunks(train_cfg.batch_size) {
            pgrads.reset();
            for &w in batch {
                let seq = sequence_at(dataset, w);
                let target = &dataset[w.end - 1].detections;
                let mut g = Graph::new(params.param_set());
                let nodes = build_loss_graph(&mut g, &params, seq.feature_matrix(), target)?;
                sums.total += g.value(nodes.total).item();
                sums.bce_term += g.value(nodes.bce).item();
                sums.box_term += g.value(nodes.boxes).item();
                sums.centering_term += g.value(nodes.centering).item();
                g.backward(nodes.total, &mut pgrads);
            }
            pgrads.scale(1.0 / batch.len() as f64);
            if let Some(clip) = train_cfg.grad_clip_norm {
                let norm = pgrads.global_norm();
                if norm > clip {
                    pgrads.scale(clip / norm);
                }
            }
            opt.step(params.param_set_mut(), &pgrads, lr);
        }
        let k = pool.len() as f64;
        let mean = LossBreakdown {
            total: sums.total / k,
            bce_term: sums.bce_term / k,
            box_term: sums.box_term / k,
            centering_term: sums.centering_term / k,
        };
        observer(
            &EpochStats {
                epoch,
                learning_rate: lr,
                mean_loss: mean,
            },
            &params,
        )?;
        history.push(mean);
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::records_from_trajectory;
    use crate::geometry::BBox;
    use crate::model::test_support::{random_sequence, tiny_config};
    use crate::model::{LatentCode, Slot};
    use crate::scene::{default_scene, generate_trajectory, TrajectoryConfig};
    use proptest::prelude::*;

    fn quick_train_cfg() -> TrainConfig {
        TrainConfig {
            lr_peak: 3e-3,
            warmup_epochs: 2,
            epochs: 8,
            batch_size: 16,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn warmup_schedule_three_points() {
        let cfg = TrainConfig::default();
        assert_eq!(learning_rate_at(&cfg, 0), 0.0);
        assert_eq!(learning_rate_at(&cfg, 30), 5e-5);
        assert_eq!(learning_rate_at(&cfg, 60), 1e-4);
        assert_eq!(learning_rate_at(&cfg, 2000), 1e-4);
    }

    #[test]
    fn adamw_with_zero_betas_is_sign_descent() {
        let mut params = ParamSet::new();
        params.push("w", Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]));
        let cfg = TrainConfig {
            beta1: 0.0,
            beta2: 0.0,
            weight_decay: 0.0,
            eps: 1e-12,
            ..TrainConfig::default()
        };
        let mut opt = AdamW::new(&params, &cfg);
        let mut grads = ParamGrads::zeros_like(&params);
        grads
            .tensor_mut(0)
            .data_mut()
            .copy_from_slice(&[0.3, -4.0, 0.0]);
        opt.step(&mut params, &grads, 0.1);
        let w = params.tensor(0).data();
        // step = lr * g/(|g| + eps) = lr * sign(g); zero grad stays put.
        assert!((w[0] - (1.0 - 0.1)).abs() < 1e-9);
        assert!((w[1] - (-2.0 + 0.1)).abs() < 1e-9);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn perfect_reconstruction_loss_is_clamp_floor_only() {
        let n = 8;
        let mut target = DetectionFrame::zeroed(n);
        let mut y_hat = vec![0.0; n];
        let mut boxes = vec![BBox::ZERO; n];
        for i in 0..n {
            if i % 2 == 0 {
                let b = BBox {
                    cx: 0.4,
                    cy: 0.6,
                    w: 0.2,
                    h: 0.1,
                };
                target.slots[i] = Slot {
                    presence: 1.0,
                    bbox: b,
                };
                y_hat[i] = 1.0;
                boxes[i] = b;
            }
        }
        let out = ModelOutput {
            z: LatentCode {
                z1: 0.5,
                z2: 0.0,
                z3: 0.0,
            },
            y_hat,
            b_centered: boxes.clone(),
            b_rotated: boxes,
        };
        let l = loss(&out, (0.0, 0.0), &target).unwrap();
        assert!(l.total <= n as f64 * 2.1e-7, "total {}", l.total);
        assert_eq!(l.box_term, 0.0);
        assert_eq!(l.centering_term, 0.0);
    }

    #[test]
    fn absent_classes_never_contribute_box_loss() {
        let n = 4;
        let target = DetectionFrame::zeroed(n);
        let wild = vec![
            BBox {
                cx: 9.0,
                cy: -3.0,
                w: 5.0,
                h: 7.0,
            };
            n
        ];
        let out = ModelOutput {
            z: LatentCode {
                z1: 0.1,
                z2: 0.0,
                z3: 0.0,
            },
            y_hat: vec![0.5; n],
            b_centered: wild.clone(),
            b_rotated: wild,
        };
        let l = loss(&out, (0.0, 0.0), &target).unwrap();
        assert_eq!(l.box_term, 0.0);
    }

    #[test]
    fn hand_summed_l1_example() {
        let mut target = DetectionFrame::zeroed(1);
        target.slots[0] = Slot {
            presence: 1.0,
            bbox: BBox {
                cx: 0.5,
                cy: 0.5,
                w: 0.2,
                h: 0.2,
            },
        };
        let pred = vec![BBox {
            cx: 0.6,
            cy: 0.4,
            w: 0.2,
            h: 0.2,
        }];
        let out = ModelOutput {
            z: LatentCode {
                z1: 0.0,
                z2: 0.0,
                z3: 0.0,
            },
            y_hat: vec![1.0],
            b_centered: pred.clone(),
            b_rotated: pred,
        };
        let l = loss(&out, (0.0, 0.0), &target).unwrap();
        assert!((l.box_term - 0.2).abs() < 1e-12);
    }

    #[test]
    fn non_binary_target_rejected() {
        let mut target = DetectionFrame::zeroed(2);
        target.slots[0].presence = 0.5;
        let out = ModelOutput {
            z: LatentCode {
                z1: 0.0,
                z2: 0.0,
                z3: 0.0,
            },
            y_hat: vec![0.5, 0.5],
            b_centered: vec![BBox::ZERO; 2],
            b_rotated: vec![BBox::ZERO; 2],
        };
        assert!(matches!(
            loss(&out, (0.0, 0.0), &target),
            Err(Error::Input(_))
        ));
    }

    // The training graph must agree with the reference loss evaluation.
    #[test]
    fn graph_loss_matches_reference() {
        let params = ModelParams::init(tiny_config()).unwrap();
        for seed in 0..5 {
            let seq = random_sequence(params.config(), seed);
            let target = seq.last().clone();
            let mut g = Graph::new(params.param_set());
            let nodes =
                build_loss_graph(&mut g, &params, seq.feature_matrix(), &target).unwrap();

            let out = params.forward(&seq).unwrap();
            let y: Vec<f64> = target.slots.iter().map(|s| s.presence).collect();
            let z = center_reencode(&params, &y, &out.b_centered).unwrap();
            let reference = loss(&out, z, &target).unwrap();

            let graph_total = g.value(nodes.total).item();
            assert!(
                (graph_total - reference.total).abs() < 1e-12,
                "graph {graph_total} vs reference {}",
                reference.total
            );
            assert!((g.value(nodes.bce).item() - reference.bce_term).abs() < 1e-12);
            assert!((g.value(nodes.boxes).item() - reference.box_term).abs() < 1e-12);
            assert!(
                (g.value(nodes.centering).item() - reference.centering_term).abs() < 1e-12
            );
        }
    }

    #[test]
    fn zeroed_encoder_centers_to_origin() {
        let mut params = ModelParams::init(tiny_config()).unwrap();
        for i in 0..params.param_set().len() {
            params.param_set_mut().tensor_mut(i).fill(0.0);
        }
        let y = vec![1.0, 0.0, 1.0];
        let boxes = vec![
            BBox {
                cx: 0.2,
                cy: 0.3,
                w: 0.1,
                h: 0.1,
            };
            3
        ];
        let (z2, z3) = center_reencode(&params, &y, &boxes).unwrap();
        assert_eq!((z2, z3), (0.0, 0.0));
    }

    #[test]
    fn center_reencode_outputs_in_range() {
        let params = ModelParams::init(tiny_config()).unwrap();
        let y = vec![1.0, 1.0, 0.0];
        let boxes = vec![
            BBox {
                cx: 0.7,
                cy: 0.2,
                w: 0.3,
                h: 0.4,
            };
            3
        ];
        let (z2, z3) = center_reencode(&params, &y, &boxes).unwrap();
        assert!(z2.abs() < 1.0 && z3.abs() < 1.0);
        assert!(center_reencode(&params, &[0.5, 0.0, 1.0], &boxes).is_err());
    }

    // Central-difference oracle over every parameter of the full loss,
    // including rotation head and centering re-encoding.
    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let mut params = ModelParams::init(tiny_config()).unwrap();
        let seq = random_sequence(params.config(), 21);
        let target = seq.last().clone();

        let mut pgrads = ParamGrads::zeros_like(params.param_set());
        {
            let mut g = Graph::new(params.param_set());
            let nodes =
                build_loss_graph(&mut g, &params, seq.feature_matrix(), &target).unwrap();
            g.backward(nodes.total, &mut pgrads);
        }

        let h = 1e-5;
        let n = params.param_set().n_scalars();
        let mut worst = 0.0f64;
        for i in 0..n {
            let x = params.param_set().get_flat(i);
            params.param_set_mut().set_flat(i, x + h);
            let fp = {
                let mut g = Graph::new(params.param_set());
                let nodes =
                    build_loss_graph(&mut g, &params, seq.feature_matrix(), &target).unwrap();
                g.value(nodes.total).item()
            };
            params.param_set_mut().set_flat(i, x - h);
            let fm = {
                let mut g = Graph::new(params.param_set());
                let nodes =
                    build_loss_graph(&mut g, &params, seq.feature_matrix(), &target).unwrap();
                g.value(nodes.total).item()
            };
            params.param_set_mut().set_flat(i, x);
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = pgrads.get_flat(i);
            let denom = numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(((numeric - analytic) / denom).abs());
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    fn tiny_dataset(n_frames: usize, seed: u64) -> Vec<FrameRecord> {
        let scene = default_scene(3, 2).unwrap();
        let cfg = TrajectoryConfig {
            n_frames,
            n_passes: 1,
            seed,
            ..TrajectoryConfig::default()
        };
        records_from_trajectory("t", &generate_trajectory(&scene, &cfg).unwrap())
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_dataset(24, 3);
        let mcfg = tiny_config();
        let tcfg = TrainConfig {
            epochs: 3,
            ..quick_train_cfg()
        };
        let (pa, ha) = train(&data, &mcfg, &tcfg).unwrap();
        let (pb, hb) = train(&data, &mcfg, &tcfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(pa.param_set(), pb.param_set());
    }

    #[test]
    fn training_reduces_loss() {
        let data = tiny_dataset(48, 4);
        let (_, history) = train(&data, &tiny_config(), &quick_train_cfg()).unwrap();
        let first = history[1].total; // epoch 0 runs at lr 0
        let last = history.last().unwrap().total;
        assert!(
            last < first,
            "loss did not decrease: {first} -> {last}"
        );
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let data = tiny_dataset(3, 5); // shorter than seq_len = 4
        assert!(matches!(
            train(&data, &tiny_config(), &quick_train_cfg()),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            train(&[], &tiny_config(), &quick_train_cfg()),
            Err(Error::Input(_))
        ));
    }

    proptest! {
        // Additivity and non-negativity of the breakdown.
        #[test]
        fn loss_terms_are_nonnegative_and_additive(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..6);
            let mut target = DetectionFrame::zeroed(n);
            let mut y_hat = Vec::new();
            let mut boxes = Vec::new();
            for i in 0..n {
                if rng.gen_bool(0.5) {
                    target.slots[i] = Slot {
                        presence: 1.0,
                        bbox: BBox {
                            cx: rng.gen_range(0.0..1.0),
                            cy: rng.gen_range(0.0..1.0),
                            w: rng.gen_range(0.0..0.5),
                            h: rng.gen_range(0.0..0.5),
                        },
                    };
                }
                y_hat.push(rng.gen_range(0.0..1.0));
                boxes.push(BBox {
                    cx: rng.gen_range(-1.0..2.0),
                    cy: rng.gen_range(-1.0..2.0),
                    w: rng.gen_range(0.0..0.5),
                    h: rng.gen_range(0.0..0.5),
                });
            }
            let out = ModelOutput {
                z: LatentCode { z1: 0.5, z2: 0.0, z3: 0.0 },
                y_hat,
                b_centered: boxes.clone(),
                b_rotated: boxes,
            };
            let z = (rng.gen_range(-0.99..0.99), rng.gen_range(-0.99..0.99));
            let l = loss(&out, z, &target).unwrap();
            prop_assert!(l.bce_term >= 0.0);
            prop_assert!(l.box_term >= 0.0);
            prop_assert!(l.centering_term >= 0.0);
            prop_assert!((l.total - (l.bce_term + l.box_term + l.centering_term)).abs() < 1e-12);
        }

        // Perturbing an absent class's prediction never moves box_term.
        #[test]
        fn masking_is_exact(cx in -2.0..2.0f64, cy in -2.0..2.0f64) {
            let mut target = DetectionFrame::zeroed(2);
            target.slots[0] = Slot {
                presence: 1.0,
                bbox: BBox { cx: 0.5, cy: 0.5, w: 0.1, h: 0.1 },
            };
            let mk = |absent: BBox| ModelOutput {
                z: LatentCode { z1: 0.5, z2: 0.0, z3: 0.0 },
                y_hat: vec![0.9, 0.1],
                b_centered: vec![target.slots[0].bbox, absent],
                b_rotated: vec![target.slots[0].bbox, absent],
            };
            let a = loss(&mk(BBox::ZERO), (0.0, 0.0), &target).unwrap();
            let b = loss(&mk(BBox { cx, cy, w: 0.3, h: 0.4 }), (0.0, 0.0), &target).unwrap();
            prop_assert_eq!(a.box_term, b.box_term);
        }
    }
}
