//! The sequence autoencoder: transformer encoder to a 3-D latent
//! (path position, pitch, yaw), dual decoder from the path coordinate,
//! and the rotation head that re-projects the centered-view boxes.
//!
//! All numerics are f64 and flow through [`crate::autodiff`], so the
//! same graph serves inference and training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::{Graph, NodeId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{latent_to_angle, BBox};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SNAVCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of structure classes n; each frame token has 5n features.
    pub n_classes: usize,
    /// Window length s.
    pub seq_len: usize,
    pub encoder_layers: usize,
    pub attention_heads: usize,
    /// Hidden sizes of the three reduction layers after flattening.
    pub fc_dims: [usize; 3],
    /// Feed-forward expansion inside encoder blocks.
    pub ff_multiplier: usize,
    pub class_dec_hidden: usize,
    pub box_dec_hidden: usize,
    /// Token width override. When unset, tokens stay at 5n and the head
    /// count must divide that; when set, a learned input projection maps
    /// 5n to this width.
    pub token_dim: Option<usize>,
    pub rotation_enabled: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_classes: 15,
            seq_len: 64,
            encoder_layers: 6,
            attention_heads: 5,
            fc_dims: [512, 256, 128],
            ff_multiplier: 4,
            class_dec_hidden: 8,
            box_dec_hidden: 32,
            token_dim: None,
            rotation_enabled: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn token_dim(&self) -> usize {
        self.token_dim.unwrap_or(self.n_classes * 5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::Config("n_classes must be >= 1".into()));
        }
        if self.seq_len == 0 {
            return Err(Error::Config("seq_len must be >= 1".into()));
        }
        if self.encoder_layers == 0
            || self.attention_heads == 0
            || self.ff_multiplier == 0
            || self.class_dec_hidden == 0
            || self.box_dec_hidden == 0
            || self.fc_dims.iter().any(|&d| d == 0)
        {
            return Err(Error::Config("all dimensions must be >= 1".into()));
        }
        let d = self.token_dim();
        if d % self.attention_heads != 0 {
            return Err(Error::Config(format!(
                "attention_heads {} does not divide token dimension {}",
                self.attention_heads, d
            )));
        }
        Ok(())
    }
}

/// One per-class detection slot: presence plus box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub presence: f64,
    pub bbox: BBox,
}

impl Slot {
    pub const ABSENT: Slot = Slot {
        presence: 0.0,
        bbox: BBox::ZERO,
    };
}

/// Fixed-length per-frame detection vector, one slot per structure class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub slots: Vec<Slot>,
}

impl DetectionFrame {
    pub fn zeroed(n_classes: usize) -> DetectionFrame {
        DetectionFrame {
            slots: vec![Slot::ABSENT; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.slots.len()
    }

    /// Input-side invariants: binary presence, absent slots zeroed, boxes
    /// finite and inside the unit square.
    pub fn validate_input(&self) -> Result<()> {
        for (i, s) in self.slots.iter().enumerate() {
            if s.presence != 0.0 && s.presence != 1.0 {
                return Err(Error::Input(format!(
                    "class {i}: presence {} is not binary",
                    s.presence
                )));
            }
            if !s.bbox.is_finite() {
                return Err(Error::Input(format!("class {i}: non-finite box")));
            }
            if s.presence == 0.0 && s.bbox != BBox::ZERO {
                return Err(Error::Input(format!(
                    "class {i}: absent slot has nonzero box"
                )));
            }
            if !s.bbox.in_unit_square() {
                return Err(Error::Input(format!(
                    "class {i}: box {:?} outside the unit square",
                    s.bbox
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.slots
            .iter()
            .all(|s| s.presence.is_finite() && s.bbox.is_finite())
    }

    /// Feature layout `[y_0, cx_0, cy_0, w_0, h_0, y_1, ...]`.
    pub fn features_into(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), 5 * self.slots.len());
        for (i, s) in self.slots.iter().enumerate() {
            out[5 * i] = s.presence;
            out[5 * i + 1] = s.bbox.cx;
            out[5 * i + 2] = s.bbox.cy;
            out[5 * i + 3] = s.bbox.w;
            out[5 * i + 4] = s.bbox.h;
        }
    }
}

/// Time-ordered window of `s` detection frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSequence {
    pub frames: Vec<DetectionFrame>,
}

impl DetectionSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn last(&self) -> &DetectionFrame {
        self.frames.last().expect("non-empty sequence")
    }

    /// s x 5n feature matrix.
    pub fn feature_matrix(&self) -> Tensor {
        let s = self.frames.len();
        let n = self.frames[0].n_classes();
        let mut t = Tensor::zeros(s, 5 * n);
        for (r, f) in self.frames.iter().enumerate() {
            f.features_into(t.row_mut(r));
        }
        t
    }
}

/// The model's 3-D embedding; `z1` in [0,1], angles in (-1,1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
}

/// Everything the forward pass produces for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub z: LatentCode,
    pub y_hat: Vec<f64>,
    pub b_centered: Vec<BBox>,
    pub b_rotated: Vec<BBox>,
}

struct EncoderLayerIdx {
    ln1: (usize, usize),
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2: (usize, usize),
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

struct Layout {
    input_proj: Option<(usize, usize)>,
    layers: Vec<EncoderLayerIdx>,
    reduction: Vec<(usize, usize)>,
    class_dec: [(usize, usize); 2],
    box_dec: [(usize, usize); 2],
}

/// Trainable weights plus the fixed positional encoding.
pub struct ModelParams {
    cfg: ModelConfig,
    set: ParamSet,
    layout: Layout,
    pos_encoding: Tensor,
}

fn sinusoidal_encoding(seq_len: usize, dim: usize) -> Tensor {
    let mut pe = Tensor::zeros(seq_len, dim);
    for pos in 0..seq_len {
        let row = pe.row_mut(pos);
        for (j, v) in row.iter_mut().enumerate() {
            let pair = (j / 2) as f64;
            let rate = (pos as f64) / 10000f64.powf(2.0 * pair / dim as f64);
            *v = if j % 2 == 0 { rate.sin() } else { rate.cos() };
        }
    }
    pe
}

/// Builds the tensor layout for a config; the push order is the
/// checkpoint manifest order.
fn build_layout(cfg: &ModelConfig, mut alloc: impl FnMut(String, usize, usize) -> usize) -> Layout {
    let d = cfg.token_dim();
    let in_dim = cfg.n_classes * 5;
    let input_proj = if d != in_dim {
        Some((
            alloc("input_proj.w".into(), in_dim, d),
            alloc("input_proj.b".into(), 1, d),
        ))
    } else {
        None
    };
    let mut layers = Vec::with_capacity(cfg.encoder_layers);
    for l in 0..cfg.encoder_layers {
        let p = |s: &str| format!("enc.{l}.{s}");
        let ff = d * cfg.ff_multiplier;
        layers.push(EncoderLayerIdx {
            ln1: (alloc(p("ln1.g"), 1, d), alloc(p("ln1.b"), 1, d)),
            wq: alloc(p("attn.wq"), d, d),
            bq: alloc(p("attn.bq"), 1, d),
            wk: alloc(p("attn.wk"), d, d),
            bk: alloc(p("attn.bk"), 1, d),
            wv: alloc(p("attn.wv"), d, d),
            bv: alloc(p("attn.bv"), 1, d),
            wo: alloc(p("attn.wo"), d, d),
            bo: alloc(p("attn.bo"), 1, d),
            ln2: (alloc(p("ln2.g"), 1, d), alloc(p("ln2.b"), 1, d)),
            w1: alloc(p("ff.w1"), d, ff),
            b1: alloc(p("ff.b1"), 1, ff),
            w2: alloc(p("ff.w2"), ff, d),
            b2: alloc(p("ff.b2"), 1, d),
        });
    }
    let mut reduction = Vec::with_capacity(4);
    let mut dims = vec![cfg.seq_len * d];
    dims.extend_from_slice(&cfg.fc_dims);
    dims.push(3);
    for (i, w) in dims.windows(2).enumerate() {
        reduction.push((
            alloc(format!("red.{i}.w"), w[0], w[1]),
            alloc(format!("red.{i}.b"), 1, w[1]),
        ));
    }
    let class_dec = [
        (
            alloc("class_dec.0.w".into(), 1, cfg.class_dec_hidden),
            alloc("class_dec.0.b".into(), 1, cfg.class_dec_hidden),
        ),
        (
            alloc(
                "class_dec.1.w".into(),
                cfg.class_dec_hidden,
                cfg.n_classes,
            ),
            alloc("class_dec.1.b".into(), 1, cfg.n_classes),
        ),
    ];
    let box_dec = [
        (
            alloc("box_dec.0.w".into(), 1, cfg.box_dec_hidden),
            alloc("box_dec.0.b".into(), 1, cfg.box_dec_hidden),
        ),
        (
            alloc(
                "box_dec.1.w".into(),
                cfg.box_dec_hidden,
                cfg.n_classes * 4,
            ),
            alloc("box_dec.1.b".into(), 1, cfg.n_classes * 4),
        ),
    ];
    Layout {
        input_proj,
        layers,
        reduction,
        class_dec,
        box_dec,
    }
}

impl ModelParams {
    /// Seeded fan-in uniform initialization; biases zero, norms identity.
    pub fn init(cfg: ModelConfig) -> Result<ModelParams> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut set = ParamSet::new();
        let layout = build_layout(&cfg, |name, rows, cols| {
            let is_bias = name.ends_with(".b")
                || name.ends_with(".bq")
                || name.ends_with(".bk")
                || name.ends_with(".bv")
                || name.ends_with(".bo");
            let t = if is_bias {
                Tensor::zeros(rows, cols)
            } else if name.ends_with(".g") {
                Tensor::filled(rows, cols, 1.0)
            } else {
                let bound = 1.0 / (rows as f64).sqrt();
                let data = (0..rows * cols)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                Tensor::from_vec(rows, cols, data)
            };
            set.push(name, t)
        });
        let pos_encoding = sinusoidal_encoding(cfg.seq_len, cfg.token_dim());
        Ok(ModelParams {
            cfg,
            set,
            layout,
            pos_encoding,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param_set(&self) -> &ParamSet {
        &self.set
    }

    pub fn param_set_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    /// Total scalar parameter count.
    pub fn n_params(&self) -> usize {
        self.set.n_scalars()
    }

    fn linear(&self, g: &mut Graph, x: NodeId, w: usize, b: usize) -> NodeId {
        let wn = g.param(w);
        let bn = g.param(b);
        let m = g.matmul(x, wn);
        g.add_row(m, bn)
    }

    /// Encoder graph from an s x 5n feature node to the three latent
    /// nodes `(z1, z2, z3)`, each 1x1 and already activated.
    pub(crate) fn build_encoder(
        &self,
        g: &mut Graph,
        features: NodeId,
    ) -> (NodeId, NodeId, NodeId) {
        let cfg = &self.cfg;
        let d = cfg.token_dim();
        let s = cfg.seq_len;
        let heads = cfg.attention_heads;
        let dh = d / heads;

        let mut x = match self.layout.input_proj {
            Some((w, b)) => self.linear(g, features, w, b),
            None => features,
        };
        let pe = g.constant(self.pos_encoding.clone());
        x = g.add(x, pe);

        for layer in &self.layout.layers {
            // Pre-norm self-attention block.
            let g1 = g.param(layer.ln1.0);
            let b1 = g.param(layer.ln1.1);
            let h = g.layer_norm(x, g1, b1);
            let q = self.linear(g, h, layer.wq, layer.bq);
            let k = self.linear(g, h, layer.wk, layer.bk);
            let v = self.linear(g, h, layer.wv, layer.bv);
            let mut ctx = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = g.slice_cols(q, hd * dh, dh);
                let kh = g.slice_cols(k, hd * dh, dh);
                let vh = g.slice_cols(v, hd * dh, dh);
                let scores = g.matmul_nt(qh, kh);
                let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt());
                let attn = g.softmax_rows(scaled);
                ctx.push(g.matmul(attn, vh));
            }
            let cat = g.concat_cols(&ctx);
            let attn_out = self.linear(g, cat, layer.wo, layer.bo);
            x = g.add(x, attn_out);

            // Pre-norm feed-forward block.
            let g2 = g.param(layer.ln2.0);
            let b2 = g.param(layer.ln2.1);
            let h2 = g.layer_norm(x, g2, b2);
            let f1 = self.linear(g, h2, layer.w1, layer.b1);
            let f1r = g.relu(f1);
            let f2 = self.linear(g, f1r, layer.w2, layer.b2);
            x = g.add(x, f2);
        }

        let mut flat = g.reshape(x, 1, s * d);
        let n_red = self.layout.reduction.len();
        for (i, &(w, b)) in self.layout.reduction.iter().enumerate() {
            flat = self.linear(g, flat, w, b);
            if i + 1 < n_red {
                flat = g.relu(flat);
            }
        }
        let z1_raw = g.slice_cols(flat, 0, 1);
        let z2_raw = g.slice_cols(flat, 1, 1);
        let z3_raw = g.slice_cols(flat, 2, 1);
        (g.sigmoid(z1_raw), g.tanh(z2_raw), g.tanh(z3_raw))
    }

    /// Decoder graph from a 1x1 `z1` node: `(y_hat 1xn, b_centered nx4)`.
    pub(crate) fn build_decoder(&self, g: &mut Graph, z1: NodeId) -> (NodeId, NodeId) {
        let n = self.cfg.n_classes;
        let c = &self.layout.class_dec;
        let h = self.linear(g, z1, c[0].0, c[0].1);
        let hr = g.relu(h);
        let logits = self.linear(g, hr, c[1].0, c[1].1);
        let y_hat = g.sigmoid(logits);

        let b = &self.layout.box_dec;
        let bh = self.linear(g, z1, b[0].0, b[0].1);
        let bhr = g.relu(bh);
        let blogits = self.linear(g, bhr, b[1].0, b[1].1);
        let bflat = g.sigmoid(blogits);
        let b_centered = g.reshape(bflat, n, 4);
        (y_hat, b_centered)
    }

    /// Full forward graph. With rotation disabled the angle outputs are
    /// unused and `b_rotated` aliases `b_centered`.
    pub(crate) fn build_forward(&self, g: &mut Graph, features: NodeId) -> Result<ForwardNodes> {
        let (z1, z2, z3) = self.build_encoder(g, features);
        let (y_hat, b_centered) = self.build_decoder(g, z1);
        let (angles, b_rotated) = if self.cfg.rotation_enabled {
            let zcat = g.concat_cols(&[z2, z3]);
            let angles = g.scale(zcat, std::f64::consts::FRAC_PI_2);
            let rot = g.rotate_centers(b_centered, angles)?;
            (Some(angles), rot)
        } else {
            (None, b_centered)
        };
        Ok(ForwardNodes {
            z1,
            z2,
            z3,
            angles,
            y_hat,
            b_centered,
            b_rotated,
        })
    }

    fn check_sequence(&self, seq: &DetectionSequence) -> Result<()> {
        if seq.len() != self.cfg.seq_len {
            return Err(Error::Input(format!(
                "sequence length {} != configured {}",
                seq.len(),
                self.cfg.seq_len
            )));
        }
        for f in &seq.frames {
            if f.n_classes() != self.cfg.n_classes {
                return Err(Error::Input(format!(
                    "frame has {} classes, model expects {}",
                    f.n_classes(),
                    self.cfg.n_classes
                )));
            }
            if !f.is_finite() {
                return Err(Error::Input("non-finite detection input".into()));
            }
        }
        Ok(())
    }

    /// Embed one window into the latent code.
    pub fn encode(&self, seq: &DetectionSequence) -> Result<LatentCode> {
        self.check_sequence(seq)?;
        let mut g = Graph::new(&self.set);
        let input = g.constant(seq.feature_matrix());
        let (z1, z2, z3) = self.build_encoder(&mut g, input);
        Ok(self.latent_from_nodes(&g, z1, z2, z3))
    }

    fn latent_from_nodes(&self, g: &Graph, z1: NodeId, z2: NodeId, z3: NodeId) -> LatentCode {
        if self.cfg.rotation_enabled {
            LatentCode {
                z1: g.value(z1).item(),
                z2: g.value(z2).item(),
                z3: g.value(z3).item(),
            }
        } else {
            LatentCode {
                z1: g.value(z1).item(),
                z2: 0.0,
                z3: 0.0,
            }
        }
    }

    /// Reconstruct presence probabilities and centered-view boxes from a
    /// path coordinate.
    pub fn decode(&self, z1: f64) -> Result<(Vec<f64>, Vec<BBox>)> {
        if !(0.0..=1.0).contains(&z1) {
            return Err(Error::Input(format!("z1 {z1} outside [0, 1]")));
        }
        let mut g = Graph::new(&self.set);
        let z = g.constant(Tensor::scalar(z1));
        let (y_hat, b_centered) = self.build_decoder(&mut g, z);
        Ok((
            g.value(y_hat).data().to_vec(),
            tensor_to_boxes(g.value(b_centered)),
        ))
    }

    /// Full forward pass for one window.
    pub fn forward(&self, seq: &DetectionSequence) -> Result<ModelOutput> {
        self.check_sequence(seq)?;
        let mut g = Graph::new(&self.set);
        let input = g.constant(seq.feature_matrix());
        let nodes = self.build_forward(&mut g, input)?;
        Ok(ModelOutput {
            z: self.latent_from_nodes(&g, nodes.z1, nodes.z2, nodes.z3),
            y_hat: g.value(nodes.y_hat).data().to_vec(),
            b_centered: tensor_to_boxes(g.value(nodes.b_centered)),
            b_rotated: tensor_to_boxes(g.value(nodes.b_rotated)),
        })
    }

    /// Predicted (pitch, yaw) in degrees for one window.
    pub fn predict_angles_deg(&self, seq: &DetectionSequence) -> Result<(f64, f64)> {
        let z = self.encode(seq)?;
        Ok((
            latent_to_angle(z.z2)?.degrees(),
            latent_to_angle(z.z3)?.degrees(),
        ))
    }

    /// Serialize to the checkpoint container: magic, version, manifest
    /// JSON, then the raw little-endian f64 blob in manifest order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut blob = Vec::with_capacity(self.n_params() * 8);
        let mut tensors = Vec::with_capacity(self.set.len());
        for (name, t) in self.set.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                rows: t.rows(),
                cols: t.cols(),
                offset_bytes: blob.len(),
            });
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sha256_hex = hex_digest(&blob);
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            tensors,
            blob_len_bytes: blob.len(),
            sha256_hex,
        };
        let manifest_json = serde_json::to_vec(&manifest).map_err(|e| Error::Format {
            path: path.display().to_string(),
            msg: format!("manifest encoding failed: {e}"),
        })?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(CHECKPOINT_MAGIC)?;
        f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        f.write_all(&(manifest_json.len() as u64).to_le_bytes())?;
        f.write_all(&manifest_json)?;
        f.write_all(&blob)?;
        Ok(())
    }

    /// Load a checkpoint; verifies magic, version, checksum, and that the
    /// tensor manifest matches the config's layout exactly.
    pub fn load(path: &Path) -> Result<ModelParams> {
        let fmt_err = |msg: String| Error::Format {
            path: path.display().to_string(),
            msg,
        };
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(fmt_err("bad magic, not a checkpoint".into()));
        }
        let mut v4 = [0u8; 4];
        f.read_exact(&mut v4)?;
        let version = u32::from_le_bytes(v4);
        if version != CHECKPOINT_VERSION {
            return Err(fmt_err(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let mut l8 = [0u8; 8];
        f.read_exact(&mut l8)?;
        let mlen = u64::from_le_bytes(l8) as usize;
        let mut mjson = vec![0u8; mlen];
        f.read_exact(&mut mjson)?;
        let manifest: Manifest = serde_json::from_slice(&mjson)
            .map_err(|e| fmt_err(format!("manifest decoding failed: {e}")))?;
        let mut blob = Vec::new();
        f.read_to_end(&mut blob)?;
        if blob.len() != manifest.blob_len_bytes {
            return Err(fmt_err(format!(
                "blob length {} != manifest {}",
                blob.len(),
                manifest.blob_len_bytes
            )));
        }
        if hex_digest(&blob) != manifest.sha256_hex {
            return Err(fmt_err("blob checksum mismatch".into()));
        }

        let cfg = manifest.config.clone();
        cfg.validate()?;
        let mut expected: Vec<(String, usize, usize)> = Vec::new();
        let layout = build_layout(&cfg, |name, rows, cols| {
            expected.push((name, rows, cols));
            expected.len() - 1
        });
        if expected.len() != manifest.tensors.len() {
            return Err(fmt_err(format!(
                "manifest has {} tensors, layout expects {}",
                manifest.tensors.len(),
                expected.len()
            )));
        }
        let mut set = ParamSet::new();
        for (entry, (name, rows, cols)) in manifest.tensors.iter().zip(expected) {
            if entry.name != name || entry.rows != rows || entry.cols != cols {
                return Err(fmt_err(format!(
                    "tensor {} ({}x{}) does not match layout {} ({}x{})",
                    entry.name, entry.rows, entry.cols, name, rows, cols
                )));
            }
            let count = rows * cols;
            let end = entry.offset_bytes + count * 8;
            if end > blob.len() {
                return Err(fmt_err(format!("tensor {} overruns blob", entry.name)));
            }
            let data: Vec<f64> = blob[entry.offset_bytes..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            set.push(name, Tensor::from_vec(rows, cols, data));
        }
        let pos_encoding = sinusoidal_encoding(cfg.seq_len, cfg.token_dim());
        Ok(ModelParams {
            cfg,
            set,
            layout,
            pos_encoding,
        })
    }
}

pub(crate) struct ForwardNodes {
    pub z1: NodeId,
    pub z2: NodeId,
    pub z3: NodeId,
    #[allow(dead_code)]
    pub angles: Option<NodeId>,
    pub y_hat: NodeId,
    pub b_centered: NodeId,
    pub b_rotated: NodeId,
}

pub(crate) fn tensor_to_boxes(t: &Tensor) -> Vec<BBox> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            BBox {
                cx: row[0],
                cy: row[1],
                w: row[2],
                h: row[3],
            }
        })
        .collect()
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset_bytes: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    blob_len_bytes: usize,
    sha256_hex: String,
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_classes: 3,
            seq_len: 4,
            encoder_layers: 1,
            attention_heads: 3,
            fc_dims: [16, 12, 8],
            ff_multiplier: 2,
            class_dec_hidden: 4,
            box_dec_hidden: 6,
            token_dim: None,
            rotation_enabled: true,
            seed: 11,
        }
    }

    pub fn random_sequence(cfg: &ModelConfig, seed: u64) -> DetectionSequence {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..cfg.seq_len)
            .map(|_| {
                let slots = (0..cfg.n_classes)
                    .map(|_| {
                        if rng.gen_bool(0.7) {
                            Slot {
                                presence: 1.0,
                                bbox: BBox {
                                    cx: rng.gen_range(0.05..0.95),
                                    cy: rng.gen_range(0.05..0.95),
                                    w: rng.gen_range(0.01..0.4),
                                    h: rng.gen_range(0.01..0.4),
                                },
                            }
                        } else {
                            Slot::ABSENT
                        }
                    })
                    .collect();
                DetectionFrame { slots }
            })
            .collect();
        DetectionSequence { frames }
    }
}
