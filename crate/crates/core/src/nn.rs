//! Parameters, convolution layers and the SGD optimizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors. Ids are dense indices in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// FNV-1a over names, shapes and the exact bit patterns of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, t) in self.names.iter().zip(&self.tensors) {
            eat(name.as_bytes());
            for d in t.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// A square-kernel convolution with optional bias and "same" padding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Uniform init in `±1/sqrt(fan_in)` for weights and bias.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_c * kernel * kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let w = Tensor::from_fn(&[out_c, in_c, kernel, kernel], |_| {
            rng.random_range(-bound..bound)
        });
        let b = Tensor::from_fn(&[out_c], |_| rng.random_range(-bound..bound));
        Conv2d {
            weight: store.add(format!("{name}.weight"), w),
            bias: Some(store.add(format!("{name}.bias"), b)),
            stride,
            pad: kernel / 2,
        }
    }

    /// A bias-free 1×1 convolution initialised to the identity (`in_c == out_c`).
    pub fn identity(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let w = Tensor::from_fn(&[channels, channels, 1, 1], |i| {
            if i / channels == i % channels {
                1.0
            } else {
                0.0
            }
        });
        Conv2d {
            weight: store.add(format!("{name}.weight"), w),
            bias: None,
            stride: 1,
            pad: 0,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }

    pub fn out_channels(&self, store: &ParamStore) -> usize {
        store.get(self.weight).shape()[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Per-parameter momentum buffers, created lazily on the first step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentumBuffers {
    buffers: Vec<Option<Tensor>>,
}

impl MomentumBuffers {
    pub fn is_empty(&self) -> bool {
        self.buffers.iter().all(Option::is_none)
    }
}

impl Sgd {
    /// One update with coupled weight decay and heavy-ball momentum:
    /// `d = g + wd·p`, `buf = μ·buf + d`, `p -= lr·buf`.
    pub fn step(&self, store: &mut ParamStore, state: &mut MomentumBuffers, grads: &[(ParamId, Tensor)]) {
        if state.buffers.len() < store.len() {
            state.buffers.resize(store.len(), None);
        }
        for (id, g) in grads {
            let p = store.get_mut(*id);
            let d: Vec<f64> = g
                .data()
                .iter()
                .zip(p.data())
                .map(|(gv, pv)| gv + self.weight_decay * pv)
                .collect();
            let buf = match &mut state.buffers[id.index()] {
                Some(buf) => {
                    buf.data_mut()
                        .iter_mut()
                        .zip(&d)
                        .for_each(|(b, dv)| *b = self.momentum * *b + dv);
                    buf
                }
                slot @ None => slot.insert(Tensor::new(g.shape().to_vec(), d)),
            };
            p.data_mut()
                .iter_mut()
                .zip(buf.data())
                .for_each(|(pv, bv)| *pv -= self.learning_rate * bv);
        }
    }
}
