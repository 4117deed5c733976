//! The decoder network: a small convolutional encoder, positional queries,
//! room-aware self-attention, deformable-lite cross-attention and per-layer
//! coordinate refinement.

mod params;

use serde::{Deserialize, Serialize};

pub use params::ParamStore;

use crate::autograd::{Graph, Tensor, Var};
use crate::dataio::DensityMap;
use crate::error::{Error, Result};
use crate::query_init::RoomQueries;
use params::{Attn, Cross, DecLayer, EncLayer, Layout, Lin, Ln};

pub const PE_TEMPERATURE: f64 = 10000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    #[default]
    RoomAware,
    Vanilla,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub k_points: usize,
    pub encoder_layers: usize,
    pub feature_stride: usize,
    pub ffn_dim: usize,
    pub attention: AttentionMode,
    /// Upper bound on `m · n · d`.
    pub max_query_elements: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            m: 20,
            n: 40,
            d: 64,
            layers: 6,
            heads: 4,
            k_points: 4,
            encoder_layers: 1,
            feature_stride: 8,
            ffn_dim: 128,
            attention: AttentionMode::RoomAware,
            max_query_elements: 1 << 22,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m == 0 || self.n == 0 || self.layers == 0 || self.k_points == 0 || self.ffn_dim == 0 {
            return bad(format!(
                "m, n, layers, k_points and ffn_dim must be positive (got m={} n={} layers={} k={} ffn={})",
                self.m, self.n, self.layers, self.k_points, self.ffn_dim
            ));
        }
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 || self.d % 4 != 0 {
            return bad(format!(
                "d={} must be a positive multiple of 4 divisible by heads={}",
                self.d, self.heads
            ));
        }
        if self.feature_stride < 2 || !self.feature_stride.is_power_of_two() {
            return bad(format!("feature_stride {} must be a power of two >= 2", self.feature_stride));
        }
        let size = self.m * self.n * self.d;
        if size > self.max_query_elements {
            return bad(format!(
                "m·n·d = {size} exceeds the cap {}",
                self.max_query_elements
            ));
        }
        Ok(())
    }

    fn conv_channels(&self) -> Vec<usize> {
        let count = self.feature_stride.trailing_zeros() as usize;
        (0..count).map(|i| (self.d >> (count - 1 - i)).max(1)).collect()
    }
}

/// Graph handles for every parameter, in store order.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps handles that follow the parameter store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn at(&self, i: usize) -> Var {
        self.vars[i]
    }
}

/// Graph handles produced by one forward pass.
pub struct ForwardOutput {
    /// `Q_0 .. Q_L`, each `[m, n, 2]`.
    pub queries: Vec<Var>,
    /// `[m · n, 2]`.
    pub logits: Var,
    /// Content state after every layer, each `[m, n, d]`.
    pub states: Vec<Var>,
}

/// Plain values of a forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderOutput {
    pub m: usize,
    pub n: usize,
    pub queries: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl DecoderOutput {
    pub fn final_queries(&self) -> &[f64] {
        self.queries.last().expect("at least one snapshot")
    }

    /// Softmax probability of the corner class for every vertex of `room`.
    pub fn corner_probs(&self, room: usize) -> Vec<f64> {
        let n = self.n;
        self.logits[room * n * 2..(room + 1) * n * 2]
            .chunks_exact(2)
            .map(|l| crate::autograd::sigmoid(l[1] - l[0]))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    store: ParamStore,
    layout: Layout,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (store, layout) = params::build(&cfg, seed);
        Ok(Self { cfg, store, layout })
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_store(cfg: ModelConfig, store: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let (fresh, layout) = params::build(&cfg, 0);
        if fresh.names() != store.names() {
            return Err(Error::Config("stored parameter names do not match the configuration".into()));
        }
        for (a, b) in fresh.tensors().iter().zip(store.tensors()) {
            if a.shape != b.shape {
                return Err(Error::Shape(format!(
                    "stored parameter shape {:?}, expected {:?}",
                    b.shape, a.shape
                )));
            }
        }
        Ok(Self { cfg, store, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Parameters as differentiable leaves.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.store.tensors().iter().map(|t| g.leaf(t.clone())).collect(),
        }
    }

    /// Parameters as constants; no gradients are tracked.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.store.tensors().iter().map(|t| g.constant(t.clone())).collect(),
        }
    }

    fn lin(&self, g: &mut Graph, b: &Bound, l: Lin, x: Var) -> Result<Var> {
        g.linear(x, b.at(l.w), b.at(l.b))
    }

    fn ln(&self, g: &mut Graph, b: &Bound, l: Ln, x: Var) -> Result<Var> {
        g.layer_norm(x, b.at(l.g), b.at(l.b))
    }

    /// Density map as a `[h, w, 1]` constant.
    pub fn density_input(g: &mut Graph, dm: &DensityMap) -> Var {
        g.constant(Tensor {
            shape: vec![dm.height, dm.width, 1],
            data: dm.data.iter().map(|&v| v as f64).collect(),
        })
    }

    /// Feature grid `[h / stride, w / stride, d]`.
    pub fn extract_features(&self, g: &mut Graph, b: &Bound, image: Var) -> Result<Var> {
        let shape = g.shape(image).to_vec();
        let s = self.cfg.feature_stride;
        if shape.len() != 3 || shape[2] != 1 || shape[0] != shape[1] || shape[0] % s != 0 || shape[0] == 0 {
            return Err(Error::Shape(format!(
                "density input {shape:?} must be square with side divisible by {s}"
            )));
        }
        let mut x = image;
        for &(w, bias) in &self.layout.convs {
            let y = g.conv2d(x, b.at(w), b.at(bias), 2)?;
            x = g.relu(y);
        }
        let (h, w) = (shape[0] / s, shape[1] / s);
        let d = self.cfg.d;
        let pe = g.constant(Tensor {
            shape: vec![1, h * w, d],
            data: grid_encoding(h, w, d),
        });
        let mut tokens = g.reshape(x, &[1, h * w, d])?;
        for layer in &self.layout.encoder {
            tokens = self.encoder_layer(g, b, layer, tokens, pe)?;
        }
        g.reshape(tokens, &[h, w, d])
    }

    fn encoder_layer(&self, g: &mut Graph, b: &Bound, p: &EncLayer, x: Var, pe: Var) -> Result<Var> {
        let a = self.attention(g, b, &p.attn, x, pe)?;
        let x = g.add(x, a)?;
        let x = self.ln(g, b, p.ln1, x)?;
        let f = self.ffn(g, b, p.ff1, p.ff2, x)?;
        let x = g.add(x, f)?;
        self.ln(g, b, p.ln2, x)
    }

    fn ffn(&self, g: &mut Graph, b: &Bound, l1: Lin, l2: Lin, x: Var) -> Result<Var> {
        let h = self.lin(g, b, l1, x)?;
        let h = g.relu(h);
        self.lin(g, b, l2, h)
    }

    /// Projected multi-head attention over `[batch, tokens, d]` with
    /// `q = k = x + pos` and `v = x`.
    fn attention(&self, g: &mut Graph, b: &Bound, p: &Attn, x: Var, pos: Var) -> Result<Var> {
        let a = g.add(x, pos)?;
        let q = self.lin(g, b, p.q, a)?;
        let k = self.lin(g, b, p.k, a)?;
        let v = self.lin(g, b, p.v, x)?;
        let o = g.scaled_dot_attention(q, k, v, self.cfg.heads)?;
        self.lin(g, b, p.o, o)
    }

    fn check_state(&self, g: &Graph, x: Var, pos: Var) -> Result<()> {
        let want = [self.cfg.m, self.cfg.n, self.cfg.d];
        for v in [x, pos] {
            if g.shape(v) != want {
                return Err(Error::Shape(format!(
                    "decoder state {:?}, expected {want:?}",
                    g.shape(v)
                )));
            }
        }
        Ok(())
    }

    /// `P = MLP(PE(Q))` for queries `[m, n, 2]`.
    pub fn positional_embed(&self, g: &mut Graph, b: &Bound, q: Var) -> Result<Var> {
        let (m, n, d) = (self.cfg.m, self.cfg.n, self.cfg.d);
        let flat = g.reshape(q, &[m * n, 2])?;
        let pe = g.sinusoidal_embed(flat, d, PE_TEMPERATURE)?;
        let h = self.lin(g, b, self.layout.pos1, pe)?;
        let h = g.relu(h);
        let p = self.lin(g, b, self.layout.pos2, h)?;
        g.reshape(p, &[m, n, d])
    }

    /// Attention among the vertices of each room; rooms are the batch.
    pub fn intra_room_attention(&self, g: &mut Graph, b: &Bound, layer: usize, x: Var, pos: Var) -> Result<Var> {
        self.check_state(g, x, pos)?;
        self.attention(g, b, &self.layout.layers[layer].intra, x, pos)
    }

    /// Attention among rooms at each vertex index; indices are the batch.
    pub fn inter_room_attention(&self, g: &mut Graph, b: &Bound, layer: usize, x: Var, pos: Var) -> Result<Var> {
        self.check_state(g, x, pos)?;
        let xt = g.transpose(x)?;
        let pt = g.transpose(pos)?;
        let o = self.attention(g, b, &self.layout.layers[layer].inter, xt, pt)?;
        g.transpose(o)
    }

    /// Intra-room then inter-room attention, each with residual and norm.
    pub fn room_aware_self_attention(&self, g: &mut Graph, b: &Bound, layer: usize, x: Var, pos: Var) -> Result<Var> {
        let p = &self.layout.layers[layer];
        let a = self.intra_room_attention(g, b, layer, x, pos)?;
        let x = g.add(x, a)?;
        let x = self.ln(g, b, p.ln_intra, x)?;
        let a = self.inter_room_attention(g, b, layer, x, pos)?;
        let x = g.add(x, a)?;
        self.ln(g, b, p.ln_inter, x)
    }

    /// Dense attention over all `m · n` tokens, with residual and norm.
    pub fn vanilla_self_attention(&self, g: &mut Graph, b: &Bound, layer: usize, x: Var, pos: Var) -> Result<Var> {
        self.check_state(g, x, pos)?;
        let (m, n, d) = (self.cfg.m, self.cfg.n, self.cfg.d);
        let p = &self.layout.layers[layer];
        let xf = g.reshape(x, &[1, m * n, d])?;
        let pf = g.reshape(pos, &[1, m * n, d])?;
        let a = self.attention(g, b, &p.intra, xf, pf)?;
        let a = g.reshape(a, &[m, n, d])?;
        let x = g.add(x, a)?;
        self.ln(g, b, p.ln_intra, x)
    }

    /// Sampling locations `[m · n · k, 2]` and weights `[m · n, k]` of the
    /// deformable-lite cross-attention.
    pub fn sampling_points(&self, g: &mut Graph, b: &Bound, layer: usize, x: Var, pos: Var, q: Var, feat_side: usize) -> Result<(Var, Var)> {
        let (m, n, k) = (self.cfg.m, self.cfg.n, self.cfg.k_points);
        let p: &Cross = &self.layout.layers[layer].cross;
        let a = g.add(x, pos)?;
        let off = self.lin(g, b, p.offsets, a)?;
        let off = g.reshape(off, &[m * n * k, 2])?;
        let off = g.scale(off, 1.0 / feat_side as f64);
        let refs = g.reshape(q, &[m * n, 2])?;
        let refs = g.broadcast(refs, 1, k)?;
        let refs = g.reshape(refs, &[m * n * k, 2])?;
        let points = g.add(refs, off)?;
        let w = self.lin(g, b, p.weights, a)?;
        let w = g.reshape(w, &[m * n, k])?;
        let w = g.softmax(w, 1)?;
        Ok((points, w))
    }

    /// Deformable-lite cross-attention with residual and norm.
    pub fn cross_attention(&self, g: &mut Graph, b: &Bound, layer: usize, x: Var, pos: Var, q: Var, feats: Var) -> Result<Var> {
        self.check_state(g, x, pos)?;
        let (m, n, k, d) = (self.cfg.m, self.cfg.n, self.cfg.k_points, self.cfg.d);
        let fs = g.shape(feats).to_vec();
        if fs.len() != 3 || fs[2] != d || fs[0] != fs[1] {
            return Err(Error::Shape(format!("feature grid {fs:?} must be [s, s, {d}]")));
        }
        let lp = &self.layout.layers[layer];
        let (points, w) = self.sampling_points(g, b, layer, x, pos, q, fs[0])?;
        let value = self.lin(g, b, lp.cross.value, feats)?;
        let sampled = g.bilinear_sample(value, points)?;
        let sampled = g.reshape(sampled, &[m * n, k, d])?;
        let w = g.reshape(w, &[m * n, 1, k])?;
        let agg = g.bmm(w, sampled)?;
        let agg = g.reshape(agg, &[m, n, d])?;
        let out = self.lin(g, b, lp.cross.out, agg)?;
        let x = g.add(x, out)?;
        self.ln(g, b, lp.ln_cross, x)
    }

    /// One refinement step: returns the new content state and `Q_{i+1}`.
    pub fn decoder_layer(&self, g: &mut Graph, b: &Bound, layer: usize, x: Var, q: Var, feats: Var) -> Result<(Var, Var)> {
        let lp: &DecLayer = &self.layout.layers[layer];
        let pos = self.positional_embed(g, b, q)?;
        let x = match self.cfg.attention {
            AttentionMode::RoomAware => self.room_aware_self_attention(g, b, layer, x, pos)?,
            AttentionMode::Vanilla => self.vanilla_self_attention(g, b, layer, x, pos)?,
        };
        let x = self.cross_attention(g, b, layer, x, pos, q, feats)?;
        let f = self.ffn(g, b, lp.ff1, lp.ff2, x)?;
        let x = g.add(x, f)?;
        let x = self.ln(g, b, lp.ln_ff, x)?;
        let delta = self.ffn(g, b, lp.off1, lp.off2, x)?;
        let moved = g.add(q, delta)?;
        let q_next = g.clamp(moved, 0.0, 1.0);
        Ok((x, q_next))
    }

    /// Full decoder from queries `q0` (`[m, n, 2]`) over encoder features.
    pub fn decode(&self, g: &mut Graph, b: &Bound, feats: Var, q0: Var) -> Result<ForwardOutput> {
        let (m, n, d) = (self.cfg.m, self.cfg.n, self.cfg.d);
        if g.shape(q0) != [m, n, 2] {
            return Err(Error::Shape(format!(
                "queries {:?}, expected [{m}, {n}, 2]",
                g.shape(q0)
            )));
        }
        let mut x = b.at(self.layout.content);
        let mut q = q0;
        let mut queries = vec![q0];
        let mut states = Vec::with_capacity(self.cfg.layers);
        for layer in 0..self.cfg.layers {
            (x, q) = self.decoder_layer(g, b, layer, x, q, feats)?;
            queries.push(q);
            states.push(x);
        }
        let flat = g.reshape(x, &[m * n, d])?;
        let logits = self.lin(g, b, self.layout.cls, flat)?;
        Ok(ForwardOutput { queries, logits, states })
    }

    pub fn query_input(&self, g: &mut Graph, q0: &RoomQueries) -> Result<Var> {
        if q0.m != self.cfg.m || q0.n != self.cfg.n {
            return Err(Error::Shape(format!(
                "{} x {} queries, expected {} x {}",
                q0.m, q0.n, self.cfg.m, self.cfg.n
            )));
        }
        Ok(g.constant(Tensor {
            shape: vec![q0.m, q0.n, 2],
            data: q0.coords.clone(),
        }))
    }

    /// Encoder plus decoder on one scene.
    pub fn forward(&self, g: &mut Graph, b: &Bound, dm: &DensityMap, q0: &RoomQueries) -> Result<ForwardOutput> {
        let q = self.query_input(g, q0)?;
        let image = Self::density_input(g, dm);
        let feats = self.extract_features(g, b, image)?;
        self.decode(g, b, feats, q)
    }

    /// Inference without gradient tracking.
    pub fn predict(&self, dm: &DensityMap, q0: &RoomQueries) -> Result<DecoderOutput> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let out = self.forward(&mut g, &b, dm, q0)?;
        Ok(DecoderOutput {
            m: self.cfg.m,
            n: self.cfg.n,
            queries: out.queries.iter().map(|&q| g.data(q).to_vec()).collect(),
            logits: g.data(out.logits).to_vec(),
        })
    }
}

/// Fixed 2D sinusoidal encoding of the `h × w` cell centers.
pub fn grid_encoding(h: usize, w: usize, d: usize) -> Vec<f64> {
    let mut g = Graph::new();
    let pts: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).flat_map(move |x| [(x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64]))
        .collect();
    let p = g.constant(Tensor {
        shape: vec![h * w, 2],
        data: pts,
    });
    let e = g.sinusoidal_embed(p, d, PE_TEMPERATURE).expect("valid shape");
    g.data(e).to_vec()
}
