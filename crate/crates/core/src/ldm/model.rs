//! The toy conditional denoiser.
//!
//! The frozen part is a stack of residual tanh-MLP layers with text
//! cross-attention over a `T' x F'` latent, plus a fixed orthogonal
//! mel/latent projection. The trainable part lifts a control condition to
//! `L x H`, encodes it with a shared MLP plus a per-type CLS vector,
//! downsamples it with one strided convolution per layer, and feeds it
//! into a zero-gated fusion block after every backbone layer.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{ParamId, ParamStore, Role};
use super::schedule::DiffusionSchedule;
use super::tape::{Tape, Var};
use super::{LdmError, Result};
use crate::conditions::{EmbeddingProvider, HashEmbeddings};
use crate::rng::substream;

pub type LatentMel = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlKind {
    Timestamp,
    Pitch,
    Energy,
}

impl ControlKind {
    pub const ALL: [ControlKind; 3] = [ControlKind::Timestamp, ControlKind::Pitch, ControlKind::Energy];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Self::ALL.get(id as usize).copied().ok_or_else(|| LdmError::UnknownControlType(id.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            ControlKind::Timestamp => "timestamp",
            ControlKind::Pitch => "pitch",
            ControlKind::Energy => "energy",
        }
    }
}

impl fmt::Display for ControlKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControlKind {
    type Err = LdmError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| LdmError::UnknownControlType(s.to_string()))
    }
}

/// Caption tokens, `N x text_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub tokens: Array2<f64>,
}

impl TextEmbedding {
    pub fn new(tokens: Array2<f64>) -> Result<Self> {
        if tokens.nrows() == 0 {
            return Err(LdmError::Shape("text embedding has no tokens".into()));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(LdmError::Shape("text embedding is not finite".into()));
        }
        Ok(Self { tokens })
    }

    /// One token per lowercase alphanumeric word, up to `max_tokens`.
    pub fn from_caption(caption: &str, provider: &dyn EmbeddingProvider, max_tokens: usize) -> Result<Self> {
        let words: Vec<String> = caption
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .take(max_tokens)
            .collect();
        if words.is_empty() {
            return Err(LdmError::Shape(format!("caption {caption:?} has no words")));
        }
        let dim = provider.dim();
        let mut tokens = Array2::zeros((words.len(), dim));
        for (i, w) in words.iter().enumerate() {
            let v = provider.embed(w).ok_or_else(|| LdmError::Shape(format!("no embedding for word {w:?}")))?;
            if v.len() != dim {
                return Err(LdmError::Shape(format!("embedding for {w:?} has length {}", v.len())));
            }
            tokens.row_mut(i).assign(&ndarray::ArrayView1::from(&v));
        }
        Self::new(tokens)
    }
}

/// Encoded control condition, `L x H`, tagged with its type.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlEmbedding {
    pub tokens: Array2<f64>,
    pub kind: ControlKind,
}

/// One token group per backbone layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTokenSet {
    pub groups: Vec<Array2<f64>>,
    pub strides: Vec<usize>,
}

/// A control condition before the trainable lifting to `L x H`.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlInput {
    /// `grid` is the `D x L` activity matrix, `class_vectors` the `D x E` frozen class embeddings.
    Timestamp { grid: Array2<f64>, class_vectors: Array2<f64> },
    Pitch(Vec<u16>),
    Energy(Vec<u16>),
}

impl ControlInput {
    pub fn kind(&self) -> ControlKind {
        match self {
            ControlInput::Timestamp { .. } => ControlKind::Timestamp,
            ControlInput::Pitch(_) => ControlKind::Pitch,
            ControlInput::Energy(_) => ControlKind::Energy,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum TextCond<'a> {
    Caption(&'a TextEmbedding),
    Null,
}

#[derive(Debug, Clone, Copy)]
pub enum ControlCond<'a> {
    /// Fusion blocks are skipped entirely.
    Absent,
    /// The learned null control token.
    Null,
    Embedded(&'a ControlEmbedding),
}

/// Weights of one fusion block.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ffn_w1: Array2<f64>,
    pub ffn_b1: Array2<f64>,
    pub ffn_w2: Array2<f64>,
    pub ffn_b2: Array2<f64>,
    pub gate: f64,
}

#[derive(Debug, Clone)]
struct LayerIds {
    mlp_w1: ParamId,
    mlp_b1: ParamId,
    mlp_w2: ParamId,
    cq: ParamId,
    ck: ParamId,
    cv: ParamId,
    co: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct FusionIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    gate: ParamId,
}

#[derive(Debug, Clone)]
struct ModelIds {
    w_in: ParamId,
    b_in: ParamId,
    w_t: ParamId,
    vae: ParamId,
    layers: Vec<LayerIds>,
    w_out: ParamId,
    b_out: ParamId,
    pos: ParamId,
    enc_w1: ParamId,
    enc_b1: ParamId,
    enc_w2: ParamId,
    enc_b2: ParamId,
    cls: ParamId,
    label_proj: ParamId,
    pitch_bins: ParamId,
    energy_bins: ParamId,
    down_w: Vec<ParamId>,
    down_b: Vec<ParamId>,
    fusion: Vec<FusionIds>,
    null_text: ParamId,
    null_control: ParamId,
}

#[derive(Debug, Clone)]
pub struct ToyModel {
    config: ModelConfig,
    params: ParamStore,
    ids: ModelIds,
    schedule: DiffusionSchedule,
    pe_mel: Array2<f64>,
    pe_ctrl: Vec<Array2<f64>>,
}

/// Parameter leaves of one model bound to a tape, indexed like the store.
pub(crate) struct Bound(Vec<Var>);

impl Bound {
    fn v(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

struct FusionVars {
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    gate: Var,
}

fn normal(rng: &mut impl Rng, r: usize, c: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

/// Columns of a Gaussian matrix orthonormalized by modified Gram-Schmidt.
fn orthonormal_columns(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
    let mut m = normal(rng, r, c, 1.0);
    for j in 0..c {
        for k in 0..j {
            let dot = m.column(j).dot(&m.column(k));
            let ck = m.column(k).to_owned();
            m.column_mut(j).scaled_add(-dot, &ck);
        }
        let norm = m.column(j).dot(&m.column(j)).sqrt();
        m.column_mut(j).mapv_inplace(|v| v / norm);
    }
    m
}

/// Sinusoidal encoding of normalized positions in `[0, 1]`.
pub fn position_encoding(positions: &[f64], dim: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((positions.len(), dim));
    for (i, &p) in positions.iter().enumerate() {
        for k in 0..dim / 2 {
            let w = std::f64::consts::PI * (k + 1) as f64;
            pe[[i, 2 * k]] = (w * p).sin();
            pe[[i, 2 * k + 1]] = (w * p).cos();
        }
    }
    pe
}

/// Sinusoidal embedding of a diffusion step as a `1 x dim` row.
pub fn timestep_embedding(t: usize, dim: usize) -> Array2<f64> {
    let half = dim / 2;
    let mut e = Array2::zeros((1, dim));
    for k in 0..half {
        let f = (-(1000f64).ln() * k as f64 / half as f64).exp();
        e[[0, 2 * k]] = (t as f64 * f).sin();
        e[[0, 2 * k + 1]] = (t as f64 * f).cos();
    }
    e
}

/// Ordinal initialization for bin tables: neighbouring bins start close together.
fn bin_table(rng: &mut impl Rng, n_bins: usize, dim: usize) -> Array2<f64> {
    let mut t = normal(rng, n_bins, dim, 0.1);
    for b in 1..n_bins {
        let u = (b - 1) as f64 / (n_bins.saturating_sub(2).max(1)) as f64;
        for k in 0..dim / 2 {
            let w = std::f64::consts::FRAC_PI_2 * (k + 1) as f64 / 2.0;
            t[[b, 2 * k]] += (w * u).sin();
            t[[b, 2 * k + 1]] += (w * u).cos();
        }
    }
    t
}

/// Quarter-turn rotation within each `(2k, 2k+1)` coordinate pair.
///
/// Used as the initial key projection of the fusion attention: being
/// skew-symmetric it gives every token a zero score against itself, while
/// control tokens carry their time code pre-rotated so that each mel token
/// initially attends to the control tokens at the same time.
pub fn pair_rotation(n: usize) -> Array2<f64> {
    let mut j = Array2::zeros((n, n));
    for k in 0..n / 2 {
        j[[2 * k, 2 * k + 1]] = -1.0;
        j[[2 * k + 1, 2 * k]] = 1.0;
    }
    j
}

impl ToyModel {
    /// Deterministically initializes every parameter from `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let (h, ffn, f, e) = (c.hidden, c.ffn_hidden, c.latent_f, c.label_dim);
        let mut store = ParamStore::new();
        let hs = 1.0 / (h as f64).sqrt();

        let mut rng = substream(c.seed, "backbone");
        let fz = Role::Frozen;
        let w_in = store.add("backbone.w_in", fz, normal(&mut rng, f, h, 1.0 / (f as f64).sqrt()));
        let b_in = store.add("backbone.b_in", fz, Array2::zeros((1, h)));
        let w_t = store.add("backbone.w_t", fz, normal(&mut rng, h, h, hs));
        let vae = store.add("vae.projection", fz, orthonormal_columns(&mut rng, c.mel_bins, f));
        let mut layers = Vec::new();
        for i in 0..c.n_layers {
            let p = format!("backbone.layer{i}");
            let text_std = 1.0;
            layers.push(LayerIds {
                mlp_w1: store.add(format!("{p}.mlp_w1"), fz, normal(&mut rng, h, ffn, hs)),
                mlp_b1: store.add(format!("{p}.mlp_b1"), fz, normal(&mut rng, 1, ffn, 0.1)),
                mlp_w2: store.add(format!("{p}.mlp_w2"), fz, normal(&mut rng, ffn, h, 0.5 / (ffn as f64).sqrt())),
                cq: store.add(format!("{p}.cross_q"), fz, normal(&mut rng, h, h, hs)),
                ck: store.add(format!("{p}.cross_k"), fz, normal(&mut rng, c.text_dim, h, text_std)),
                cv: store.add(format!("{p}.cross_v"), fz, normal(&mut rng, c.text_dim, h, text_std)),
                co: store.add(format!("{p}.cross_o"), fz, normal(&mut rng, h, h, 0.5 * hs)),
            });
        }
        let w_out = store.add("backbone.w_out", fz, normal(&mut rng, h, f, hs));
        let b_out = store.add("backbone.b_out", fz, Array2::zeros((1, f)));

        let mut rng = substream(c.seed, "control");
        let tr = Role::Trainable;
        let pos = store.add("encoder.position", tr, Array2::zeros((c.cond_len, h)));
        let enc_w1 = store.add("encoder.w1", tr, normal(&mut rng, h, h, hs));
        let enc_b1 = store.add("encoder.b1", tr, Array2::zeros((1, h)));
        let enc_w2 = store.add("encoder.w2", tr, normal(&mut rng, h, h, hs));
        let enc_b2 = store.add("encoder.b2", tr, Array2::zeros((1, h)));
        let cls = store.add("encoder.cls", tr, normal(&mut rng, 3, h, 0.5));
        let label_proj = store.add("conditions.label_projection", tr, normal(&mut rng, e, h, 1.0));
        let pitch_bins = store.add("conditions.pitch_bins", tr, bin_table(&mut rng, c.n_bins, h));
        let energy_bins = store.add("conditions.energy_bins", tr, bin_table(&mut rng, c.n_bins, h));
        let mut down_w = Vec::new();
        let mut down_b = Vec::new();
        for (i, &st) in c.strides.iter().enumerate() {
            let std = 1.0 / ((st * h) as f64).sqrt();
            down_w.push(store.add(format!("downsample{i}.w"), tr, normal(&mut rng, st * h, h, std)));
            down_b.push(store.add(format!("downsample{i}.b"), tr, Array2::zeros((1, h))));
        }
        let mut fusion = Vec::new();
        for i in 0..c.n_layers {
            let p = format!("fusion{i}");
            fusion.push(FusionIds {
                wq: store.add(format!("{p}.wq"), tr, Array2::eye(h)),
                wk: store.add(format!("{p}.wk"), tr, pair_rotation(h)),
                wv: store.add(format!("{p}.wv"), tr, normal(&mut rng, h, h, hs)),
                wo: store.add(format!("{p}.wo"), tr, normal(&mut rng, h, h, hs)),
                w1: store.add(format!("{p}.ffn_w1"), tr, normal(&mut rng, h, ffn, hs)),
                b1: store.add(format!("{p}.ffn_b1"), tr, Array2::zeros((1, ffn))),
                w2: store.add(format!("{p}.ffn_w2"), tr, normal(&mut rng, ffn, h, 1.0 / (ffn as f64).sqrt())),
                b2: store.add(format!("{p}.ffn_b2"), tr, Array2::zeros((1, h))),
                gate: store.add(format!("{p}.gate"), tr, Array2::zeros((1, 1))),
            });
        }
        let null_text =
            store.add("null.text", tr, normal(&mut rng, 1, c.text_dim, 1.0 / (c.text_dim as f64).sqrt()));
        let null_control = store.add("null.control", tr, normal(&mut rng, 1, h, 0.5));

        let ids = ModelIds {
            w_in,
            b_in,
            w_t,
            vae,
            layers,
            w_out,
            b_out,
            pos,
            enc_w1,
            enc_b1,
            enc_w2,
            enc_b2,
            cls,
            label_proj,
            pitch_bins,
            energy_bins,
            down_w,
            down_b,
            fusion,
            null_text,
            null_control,
        };

        let tp = c.latent_t;
        let mel_pos: Vec<f64> = (0..tp).map(|i| (i as f64 + 0.5) / tp as f64).collect();
        let pe_mel = position_encoding(&mel_pos, h);
        let pe_ctrl = c
            .strides
            .iter()
            .map(|&st| {
                let n = c.cond_len.div_ceil(st);
                let pos: Vec<f64> = (0..n)
                    .map(|j| ((j * st) as f64 + st as f64 / 2.0).min(c.cond_len as f64) / c.cond_len as f64)
                    .collect();
                -(position_encoding(&pos, h) * c.control_position_scale).dot(&pair_rotation(h))
            })
            .collect();
        let schedule = DiffusionSchedule::linear(c.diffusion_steps, c.beta_start, c.beta_end)?;
        Ok(Self { config: c.clone(), params: store, ids, schedule, pe_mel, pe_ctrl })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// The frozen word-embedding provider used for captions.
    pub fn text_provider(&self) -> HashEmbeddings {
        HashEmbeddings::new(self.config.text_dim, self.config.seed)
    }

    pub fn embed_caption(&self, caption: &str) -> Result<TextEmbedding> {
        TextEmbedding::from_caption(caption, &self.text_provider(), self.config.max_text_tokens)
    }

    /// Maps a `T' x mel_bins` mel matrix to the latent space.
    pub fn encode_mel(&self, mel: &Array2<f64>) -> Result<LatentMel> {
        let p = self.params.get(self.ids.vae);
        if mel.ncols() != p.nrows() {
            return Err(LdmError::Shape(format!("mel has {} bins, expected {}", mel.ncols(), p.nrows())));
        }
        Ok(mel.dot(p))
    }

    pub fn decode_latent(&self, latent: &LatentMel) -> Result<Array2<f64>> {
        self.check_latent(latent)?;
        Ok(latent.dot(&self.params.get(self.ids.vae).t()))
    }

    pub(crate) fn bind(&self, tape: &mut Tape, with_grad: bool) -> Bound {
        Bound(
            self.params
                .iter()
                .map(|(id, p)| tape.param(id, p.value.clone(), with_grad && p.role == Role::Trainable))
                .collect(),
        )
    }

    fn check_latent(&self, x: &Array2<f64>) -> Result<()> {
        let want = (self.config.latent_t, self.config.latent_f);
        if x.dim() != want {
            return Err(LdmError::Shape(format!("latent is {:?}, expected {want:?}", x.dim())));
        }
        Ok(())
    }

    fn check_text(&self, text: &TextEmbedding) -> Result<()> {
        if text.tokens.ncols() != self.config.text_dim || text.tokens.nrows() == 0 {
            return Err(LdmError::Shape(format!(
                "text embedding is {:?}, expected N x {}",
                text.tokens.dim(),
                self.config.text_dim
            )));
        }
        Ok(())
    }

    fn check_control(&self, tokens: &Array2<f64>) -> Result<()> {
        let want = (self.config.cond_len, self.config.hidden);
        if tokens.dim() != want {
            return Err(LdmError::Shape(format!("control is {:?}, expected {want:?}", tokens.dim())));
        }
        Ok(())
    }

    pub(crate) fn lift_var(&self, tape: &mut Tape, b: &Bound, input: &ControlInput) -> Result<Var> {
        let c = &self.config;
        match input {
            ControlInput::Timestamp { grid, class_vectors } => {
                if grid.ncols() != c.cond_len || grid.nrows() == 0 {
                    return Err(LdmError::Shape(format!("grid is {:?}, expected D x {}", grid.dim(), c.cond_len)));
                }
                if class_vectors.dim() != (grid.nrows(), c.label_dim) {
                    return Err(LdmError::Shape(format!(
                        "class vectors are {:?}, expected {:?}",
                        class_vectors.dim(),
                        (grid.nrows(), c.label_dim)
                    )));
                }
                let cv = tape.constant(class_vectors.clone());
                let label = tape.matmul(cv, b.v(self.ids.label_proj));
                let gt = tape.constant(grid.t().to_owned());
                Ok(tape.matmul(gt, label))
            }
            ControlInput::Pitch(bins) | ControlInput::Energy(bins) => {
                if bins.len() != c.cond_len {
                    return Err(LdmError::Shape(format!("contour has {} frames, expected {}", bins.len(), c.cond_len)));
                }
                if let Some(&bad) = bins.iter().find(|&&v| v as usize >= c.n_bins) {
                    return Err(LdmError::Shape(format!("bin {bad} outside table of {}", c.n_bins)));
                }
                let table = match input {
                    ControlInput::Pitch(_) => self.ids.pitch_bins,
                    _ => self.ids.energy_bins,
                };
                let idx: Vec<usize> = bins.iter().map(|&v| v as usize).collect();
                Ok(tape.gather_rows(b.v(table), &idx))
            }
        }
    }

    fn encode_var(&self, tape: &mut Tape, b: &Bound, standardized: Var, kind: ControlKind) -> Var {
        let ids = &self.ids;
        let x = tape.add(standardized, b.v(ids.pos));
        let h = tape.matmul(x, b.v(ids.enc_w1));
        let h = tape.add_row(h, b.v(ids.enc_b1));
        let h = tape.silu(h);
        let y = tape.matmul(h, b.v(ids.enc_w2));
        let y = tape.add_row(y, b.v(ids.enc_b2));
        let cls = tape.slice_rows(b.v(ids.cls), kind.id() as usize, 1);
        tape.add_row(y, cls)
    }

    fn downsample_var(&self, tape: &mut Tape, b: &Bound, emb: Var) -> Vec<Var> {
        self.config
            .strides
            .iter()
            .enumerate()
            .map(|(i, &st)| {
                let f = tape.fold_rows(emb, st);
                let m = tape.matmul(f, b.v(self.ids.down_w[i]));
                tape.add_row(m, b.v(self.ids.down_b[i]))
            })
            .collect()
    }

    /// Per-layer control token groups with time encodings, ready for fusion.
    fn control_groups(&self, tape: &mut Tape, b: &Bound, emb: Option<Var>) -> Vec<Var> {
        match emb {
            Some(e) => self
                .downsample_var(tape, b, e)
                .into_iter()
                .zip(&self.pe_ctrl)
                .map(|(g, pe)| {
                    let pe = tape.constant(pe.clone());
                    tape.add(g, pe)
                })
                .collect(),
            None => vec![b.v(self.ids.null_control); self.config.n_layers],
        }
    }

    fn fusion_vars(&self, b: &Bound, layer: usize) -> FusionVars {
        let f = self.ids.fusion[layer];
        FusionVars {
            wq: b.v(f.wq),
            wk: b.v(f.wk),
            wv: b.v(f.wv),
            wo: b.v(f.wo),
            w1: b.v(f.w1),
            b1: b.v(f.b1),
            w2: b.v(f.w2),
            b2: b.v(f.b2),
            gate: b.v(f.gate),
        }
    }

    /// Fixed `(c_in, c_skip, c_out)` coefficients at step `t`.
    pub fn preconditioning(&self, t: usize) -> (f64, f64, f64) {
        let ab = self.schedule.alpha_bar(t);
        let s2 = self.config.sigma_data * self.config.sigma_data;
        let var = ab * s2 + 1.0 - ab;
        (1.0 / var.sqrt(), (1.0 - ab).sqrt() / var, (ab * s2 / var).sqrt())
    }

    fn eps_var(&self, tape: &mut Tape, b: &Bound, x_t: &LatentMel, t: usize, text: Var, ctrl: Option<&[Var]>) -> Var {
        let ids = &self.ids;
        let inv_sqrt_h = 1.0 / (self.config.hidden as f64).sqrt();
        let (c_in, c_skip, c_out) = self.preconditioning(t);
        let x_in = tape.constant(x_t * c_in);
        let h = tape.matmul(x_in, b.v(ids.w_in));
        let h = tape.add_row(h, b.v(ids.b_in));
        let pe = tape.constant(self.pe_mel.clone());
        let h = tape.add(h, pe);
        let temb = tape.constant(timestep_embedding(t, self.config.hidden));
        let temb = tape.matmul(temb, b.v(ids.w_t));
        let mut h = tape.add_row(h, temb);
        for (i, l) in ids.layers.iter().enumerate() {
            let m = tape.matmul(h, b.v(l.mlp_w1));
            let m = tape.add_row(m, b.v(l.mlp_b1));
            let m = tape.tanh(m);
            let m = tape.matmul(m, b.v(l.mlp_w2));
            let a = tape.add(h, m);
            let q = tape.matmul(a, b.v(l.cq));
            let k = tape.matmul(text, b.v(l.ck));
            let v = tape.matmul(text, b.v(l.cv));
            let sc = tape.matmul_t(q, k);
            let sc = tape.scale(sc, inv_sqrt_h);
            let p = tape.softmax_rows(sc);
            let att = tape.matmul(p, v);
            let att = tape.matmul(att, b.v(l.co));
            h = tape.add(a, att);
            if let Some(groups) = ctrl {
                let fv = self.fusion_vars(b, i);
                h = fusion_var(tape, &fv, h, Some(groups[i]), self.config.hidden);
            }
        }
        let out = tape.matmul(h, b.v(ids.w_out));
        let out = tape.add_row(out, b.v(ids.b_out));
        let out = tape.scale(out, c_out);
        let skip = tape.constant(x_t * c_skip);
        tape.add(out, skip)
    }

    fn text_var(&self, tape: &mut Tape, b: &Bound, text: TextCond) -> Result<Var> {
        Ok(match text {
            TextCond::Caption(t) => {
                self.check_text(t)?;
                tape.constant(t.tokens.clone())
            }
            TextCond::Null => b.v(self.ids.null_text),
        })
    }

    /// The per-element squared error of one training example, on a tape.
    pub(crate) fn loss_var(
        &self,
        tape: &mut Tape,
        b: &Bound,
        x0: &LatentMel,
        t: usize,
        noise: &LatentMel,
        text: Option<&TextEmbedding>,
        control: Option<&ControlInput>,
    ) -> Result<Var> {
        self.check_latent(x0)?;
        self.check_latent(noise)?;
        let xt = super::schedule::forward_diffuse(x0, t, noise, &self.schedule)?;
        let text_v = self.text_var(tape, b, text.map_or(TextCond::Null, TextCond::Caption))?;
        let emb = match control {
            Some(input) => {
                let s = self.lift_var(tape, b, input)?;
                Some(self.encode_var(tape, b, s, input.kind()))
            }
            None => None,
        };
        let groups = self.control_groups(tape, b, emb);
        let eps = self.eps_var(tape, b, &xt, t, text_v, Some(&groups));
        let target = tape.constant(noise.clone());
        let d = tape.sub(eps, target);
        Ok(tape.mean_square(d))
    }

    /// Lifts a raw control condition to the `L x H` standardized matrix.
    pub fn standardize_control(&self, input: &ControlInput) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let v = self.lift_var(&mut tape, &b, input)?;
        Ok(tape.value(v).clone())
    }

    /// `MLP(standardized + position) + CLS[kind]`.
    pub fn encode_control(&self, standardized: &Array2<f64>, kind: ControlKind) -> Result<ControlEmbedding> {
        self.check_control(standardized)?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let s = tape.constant(standardized.clone());
        let v = self.encode_var(&mut tape, &b, s, kind);
        Ok(ControlEmbedding { tokens: tape.value(v).clone(), kind })
    }

    pub fn embed_control(&self, input: &ControlInput) -> Result<ControlEmbedding> {
        self.encode_control(&self.standardize_control(input)?, input.kind())
    }

    /// Strided convolution of the embedding, one group per layer.
    pub fn downsample_control(&self, emb: &ControlEmbedding) -> Result<ControlTokenSet> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        if emb.tokens.ncols() != self.config.hidden || emb.tokens.nrows() == 0 {
            return Err(LdmError::Shape(format!("control is {:?}, expected L x {}", emb.tokens.dim(), self.config.hidden)));
        }
        let e = tape.constant(emb.tokens.clone());
        let groups = self.downsample_var(&mut tape, &b, e).into_iter().map(|g| tape.value(g).clone()).collect();
        Ok(ControlTokenSet { groups, strides: self.config.strides.clone() })
    }

    pub fn fusion_params(&self, layer: usize) -> FusionParams {
        let f = self.ids.fusion[layer];
        let g = |id| self.params.get(id).clone();
        FusionParams {
            wq: g(f.wq),
            wk: g(f.wk),
            wv: g(f.wv),
            wo: g(f.wo),
            ffn_w1: g(f.w1),
            ffn_b1: g(f.b1),
            ffn_w2: g(f.w2),
            ffn_b2: g(f.b2),
            gate: self.params.get(f.gate)[[0, 0]],
        }
    }

    /// Noise estimate for `x_t` at step `t`.
    pub fn predict_noise(&self, x_t: &LatentMel, t: usize, text: TextCond, control: ControlCond) -> Result<LatentMel> {
        let groups = self.control_group_values(control)?;
        self.predict_with_groups(x_t, t, text, groups.as_deref())
    }

    /// Fusion inputs for every layer; `None` when the control is absent.
    pub(crate) fn control_group_values(&self, control: ControlCond) -> Result<Option<Vec<Array2<f64>>>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let groups = match control {
            ControlCond::Absent => return Ok(None),
            ControlCond::Null => self.control_groups(&mut tape, &b, None),
            ControlCond::Embedded(e) => {
                self.check_control(&e.tokens)?;
                let v = tape.constant(e.tokens.clone());
                self.control_groups(&mut tape, &b, Some(v))
            }
        };
        Ok(Some(groups.into_iter().map(|g| tape.value(g).clone()).collect()))
    }

    pub(crate) fn predict_with_groups(
        &self,
        x_t: &LatentMel,
        t: usize,
        text: TextCond,
        groups: Option<&[Array2<f64>]>,
    ) -> Result<LatentMel> {
        self.check_latent(x_t)?;
        self.schedule.check_step(t)?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let text_v = self.text_var(&mut tape, &b, text)?;
        let gvars: Option<Vec<Var>> = groups.map(|gs| gs.iter().map(|g| tape.constant(g.clone())).collect());
        let eps = self.eps_var(&mut tape, &b, x_t, t, text_v, gvars.as_deref());
        Ok(tape.value(eps).clone())
    }
}

fn fusion_var(tape: &mut Tape, f: &FusionVars, mel: Var, ctrl: Option<Var>, hidden: usize) -> Var {
    let z = match ctrl {
        Some(c) if tape.value(c).nrows() > 0 => tape.concat_rows(&[c, mel]),
        _ => mel,
    };
    let q = tape.matmul(mel, f.wq);
    let k = tape.matmul(z, f.wk);
    let v = tape.matmul(z, f.wv);
    let sc = tape.matmul_t(q, k);
    let sc = tape.scale(sc, 1.0 / (hidden as f64).sqrt());
    let p = tape.softmax_rows(sc);
    let a = tape.matmul(p, v);
    let a = tape.matmul(a, f.wo);
    let y = tape.add(mel, a);
    let hdn = tape.matmul(y, f.w1);
    let hdn = tape.add_row(hdn, f.b1);
    let hdn = tape.silu(hdn);
    let ff = tape.matmul(hdn, f.w2);
    let ff = tape.add_row(ff, f.b2);
    let g = tape.scale_by(ff, f.gate);
    tape.add(mel, g)
}

/// `mel + gate * FFN(select_mel(SelfAttn([control ; mel])))`.
pub fn fusion_forward(mel: &Array2<f64>, control: &Array2<f64>, params: &FusionParams) -> Result<Array2<f64>> {
    let h = params.wq.nrows();
    if mel.ncols() != h || (control.nrows() > 0 && control.ncols() != h) {
        return Err(LdmError::Shape(format!(
            "token widths {} and {} must equal {h}",
            mel.ncols(),
            control.ncols()
        )));
    }
    let mut tape = Tape::new();
    let mut c = |a: &Array2<f64>| tape.constant(a.clone());
    let f = FusionVars {
        wq: c(&params.wq),
        wk: c(&params.wk),
        wv: c(&params.wv),
        wo: c(&params.wo),
        w1: c(&params.ffn_w1),
        b1: c(&params.ffn_b1),
        w2: c(&params.ffn_w2),
        b2: c(&params.ffn_b2),
        gate: c(&Array2::from_elem((1, 1), params.gate)),
    };
    let m = tape.constant(mel.clone());
    let ctrl = (control.nrows() > 0).then(|| tape.constant(control.clone()));
    let out = fusion_var(&mut tape, &f, m, ctrl, h);
    Ok(tape.value(out).clone())
}

impl ToyModel {
    /// Replaces a parameter by name, checking role and shape.
    pub fn set_param(&mut self, name: &str, role: Role, value: Array2<f64>) -> Result<()> {
        let id = self.params.find(name).ok_or_else(|| LdmError::Checkpoint(format!("unknown parameter {name}")))?;
        let p = self.params.param(id);
        if p.role != role {
            return Err(LdmError::Checkpoint(format!("parameter {name} has role {:?}, file says {role:?}", p.role)));
        }
        if p.value.dim() != value.dim() {
            return Err(LdmError::Checkpoint(format!(
                "parameter {name} is {:?}, file says {:?}",
                p.value.dim(),
                value.dim()
            )));
        }
        *self.params.get_mut(id) = value;
        Ok(())
    }

    /// Gate scalars of every fusion block.
    pub fn gates(&self) -> Vec<f64> {
        self.ids.fusion.iter().map(|f| self.params.get(f.gate)[[0, 0]]).collect()
    }

    /// Positional encodings added to the control groups of `layer`.
    pub fn control_position_encoding(&self, layer: usize) -> Array2<f64> {
        self.pe_ctrl[layer].clone()
    }

    pub fn mel_position_encoding(&self) -> Array2<f64> {
        self.pe_mel.clone()
    }

    /// Sets every fusion gate; used to exercise the fusion path before training.
    pub fn set_gates(&mut self, value: f64) {
        for f in self.ids.fusion.clone() {
            self.params.get_mut(f.gate)[[0, 0]] = value;
        }
    }
}
