use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ModelConfig;
use crate::autograd::Tensor;

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Lin {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ln {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Attn {
    pub q: Lin,
    pub k: Lin,
    pub v: Lin,
    pub o: Lin,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncLayer {
    pub attn: Attn,
    pub ln1: Ln,
    pub ff1: Lin,
    pub ff2: Lin,
    pub ln2: Ln,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Cross {
    pub offsets: Lin,
    pub weights: Lin,
    pub value: Lin,
    pub out: Lin,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecLayer {
    pub intra: Attn,
    pub ln_intra: Ln,
    pub inter: Attn,
    pub ln_inter: Ln,
    pub cross: Cross,
    pub ln_cross: Ln,
    pub ff1: Lin,
    pub ff2: Lin,
    pub ln_ff: Ln,
    pub off1: Lin,
    pub off2: Lin,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub convs: Vec<(usize, usize)>,
    pub encoder: Vec<EncLayer>,
    pub content: usize,
    pub pos1: Lin,
    pub pos2: Lin,
    pub layers: Vec<DecLayer>,
    pub cls: Lin,
}

struct Builder {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl Builder {
    fn xavier(&mut self, name: String, fan_in: usize, fan_out: usize, shape: Vec<usize>) -> usize {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-a..a)).collect();
        self.store.push(name, Tensor { shape, data })
    }

    fn filled(&mut self, name: String, shape: Vec<usize>, v: f64) -> usize {
        let n = shape.iter().product();
        self.store.push(name, Tensor { shape, data: vec![v; n] })
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Lin {
        Lin {
            w: self.xavier(format!("{name}.weight"), fan_in, fan_out, vec![fan_in, fan_out]),
            b: self.filled(format!("{name}.bias"), vec![fan_out], 0.0),
        }
    }

    fn zero_linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Lin {
        Lin {
            w: self.filled(format!("{name}.weight"), vec![fan_in, fan_out], 0.0),
            b: self.filled(format!("{name}.bias"), vec![fan_out], 0.0),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Ln {
        Ln {
            g: self.filled(format!("{name}.gamma"), vec![d], 1.0),
            b: self.filled(format!("{name}.beta"), vec![d], 0.0),
        }
    }

    fn attn(&mut self, name: &str, d: usize) -> Attn {
        Attn {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }
}

/// Fresh parameters for `cfg`. Names and order depend only on `cfg`.
pub(crate) fn build(cfg: &ModelConfig, seed: u64) -> (ParamStore, Layout) {
    let mut b = Builder {
        store: ParamStore::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let d = cfg.d;
    let mut convs = Vec::new();
    let mut cin = 1;
    for (i, cout) in cfg.conv_channels().into_iter().enumerate() {
        let w = b.xavier(format!("backbone.conv{i}.weight"), 9 * cin, 9 * cout, vec![9 * cin, cout]);
        let bias = b.filled(format!("backbone.conv{i}.bias"), vec![cout], 0.0);
        convs.push((w, bias));
        cin = cout;
    }
    let encoder = (0..cfg.encoder_layers)
        .map(|i| {
            let name = format!("encoder.{i}");
            EncLayer {
                attn: b.attn(&format!("{name}.attn"), d),
                ln1: b.norm(&format!("{name}.ln1"), d),
                ff1: b.linear(&format!("{name}.ff1"), d, cfg.ffn_dim),
                ff2: b.linear(&format!("{name}.ff2"), cfg.ffn_dim, d),
                ln2: b.norm(&format!("{name}.ln2"), d),
            }
        })
        .collect();
    let content = {
        let n = cfg.m * cfg.n * d;
        let data = (0..n).map(|_| StandardNormal.sample(&mut b.rng)).collect();
        b.store.push(
            "decoder.content",
            Tensor {
                shape: vec![cfg.m, cfg.n, d],
                data,
            },
        )
    };
    let pos1 = b.linear("decoder.pos.0", d, d);
    let pos2 = b.linear("decoder.pos.1", d, d);
    let k = cfg.k_points;
    let layers = (0..cfg.layers)
        .map(|i| {
            let name = format!("decoder.{i}");
            let intra = b.attn(&format!("{name}.intra"), d);
            let ln_intra = b.norm(&format!("{name}.ln_intra"), d);
            let inter = b.attn(&format!("{name}.inter"), d);
            let ln_inter = b.norm(&format!("{name}.ln_inter"), d);
            let offsets = b.zero_linear(&format!("{name}.cross.offsets"), d, 2 * k);
            // Initial sampling points on a unit ring (in feature cells)
            // around each reference point.
            let bias = &mut b.store.tensors_mut()[offsets.b].data;
            for j in 0..k {
                let a = TAU * j as f64 / k as f64;
                bias[2 * j] = a.cos();
                bias[2 * j + 1] = a.sin();
            }
            let cross = Cross {
                offsets,
                weights: b.zero_linear(&format!("{name}.cross.weights"), d, k),
                value: b.linear(&format!("{name}.cross.value"), d, d),
                out: b.linear(&format!("{name}.cross.out"), d, d),
            };
            DecLayer {
                intra,
                ln_intra,
                inter,
                ln_inter,
                cross,
                ln_cross: b.norm(&format!("{name}.ln_cross"), d),
                ff1: b.linear(&format!("{name}.ff1"), d, cfg.ffn_dim),
                ff2: b.linear(&format!("{name}.ff2"), cfg.ffn_dim, d),
                ln_ff: b.norm(&format!("{name}.ln_ff"), d),
                off1: b.linear(&format!("{name}.offset.0"), d, d),
                off2: b.zero_linear(&format!("{name}.offset.1"), d, 2),
            }
        })
        .collect();
    let cls = b.linear("decoder.cls", d, 2);
    (
        b.store,
        Layout {
            convs,
            encoder,
            content,
            pos1,
            pos2,
            layers,
            cls,
        },
    )
}
