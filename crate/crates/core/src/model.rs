//! Small classifiers, their parameter sets, parameter EMA and checkpoints.

use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::error::{CheckpointError, Error, Result};
use crate::rng::{Purpose, Streams};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Network family and its sizes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// Fully connected ReLU network with the given hidden widths.
    Mlp { hidden: Vec<usize> },
    /// Two `conv3x3 → relu → 2×2 mean-pool` blocks followed by a dense layer.
    ConvNet { channels: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: Architecture,
    /// Per-example input shape: `[d]` for the MLP, `[C,H,W]` for the ConvNet.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn mlp(input_dim: usize, hidden: Vec<usize>, num_classes: usize) -> Self {
        ModelSpec {
            arch: Architecture::Mlp { hidden },
            input_shape: vec![input_dim],
            num_classes,
        }
    }

    pub fn convnet(input_shape: [usize; 3], channels: usize, num_classes: usize) -> Self {
        ModelSpec {
            arch: Architecture::ConvNet { channels },
            input_shape: input_shape.to_vec(),
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("model: {msg}")));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        match &self.arch {
            Architecture::Mlp { hidden } => {
                if self.input_shape.len() != 1 || self.input_shape[0] == 0 {
                    return bad(format!("mlp input must be [d], got {:?}", self.input_shape));
                }
                if hidden.contains(&0) {
                    return bad("hidden widths must be positive".into());
                }
            }
            Architecture::ConvNet { channels } => {
                let s = &self.input_shape;
                if s.len() != 3
                    || s[0] == 0
                    || !s[1].is_multiple_of(4)
                    || !s[2].is_multiple_of(4)
                    || s[1] == 0
                    || s[2] == 0
                {
                    return bad(format!(
                        "convnet input must be [C,H,W] with H and W multiples of 4, got {s:?}"
                    ));
                }
                if *channels == 0 {
                    return bad("channel count must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// `(name, shape, fan_in)` for every parameter, in forward order.
    fn layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        match &self.arch {
            Architecture::Mlp { hidden } => {
                let mut widths = vec![self.input_shape[0]];
                widths.extend(hidden);
                widths.push(self.num_classes);
                for (i, w) in widths.windows(2).enumerate() {
                    out.push((format!("fc{}.weight", i + 1), vec![w[0], w[1]], w[0]));
                    out.push((format!("fc{}.bias", i + 1), vec![w[1]], w[0]));
                }
            }
            Architecture::ConvNet { channels } => {
                let (c, h, w) = (self.input_shape[0], self.input_shape[1], self.input_shape[2]);
                let ch = *channels;
                out.push(("conv1.weight".into(), vec![ch, c, 3, 3], c * 9));
                out.push(("conv1.bias".into(), vec![ch], c * 9));
                out.push(("conv2.weight".into(), vec![ch, ch, 3, 3], ch * 9));
                out.push(("conv2.bias".into(), vec![ch], ch * 9));
                let flat = ch * (h / 4) * (w / 4);
                out.push(("fc.weight".into(), vec![flat, self.num_classes], flat));
                out.push(("fc.bias".into(), vec![self.num_classes], flat));
            }
        }
        out
    }

    /// Weights ~ N(0, 2/fan_in), biases zero; deterministic in `seed`.
    pub fn init_params<F: Scalar>(&self, seed: u64) -> Result<ParamSet<F>> {
        self.validate()?;
        let streams = Streams::new(seed);
        let params = self
            .layout()
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape, fan_in))| {
                let n: usize = shape.iter().product();
                let data = if is_bias(&name) {
                    vec![F::zero(); n]
                } else {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive standard deviation");
                    let mut rng = streams.stream(Purpose::Init, i as u64, 0);
                    (0..n).map(|_| F::from_f64_lossy(normal.sample(&mut rng))).collect()
                };
                Param {
                    name,
                    value: Tensor::from_parts(shape, data),
                }
            })
            .collect();
        Ok(ParamSet { params })
    }

    /// Logits for a batch `[N, ..input_shape]`.
    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, params: &[Var], input: Var) -> Result<Var> {
        let shape = g.shape(input).to_vec();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            let mut expected = vec![shape.first().copied().unwrap_or(0)];
            expected.extend(&self.input_shape);
            return Err(Error::shape("predict", &shape, &expected));
        }
        if params.len() != self.layout().len() {
            return Err(Error::StructureMismatch(format!(
                "expected {} parameters, got {}",
                self.layout().len(),
                params.len()
            )));
        }
        let n = shape[0];
        match &self.arch {
            Architecture::Mlp { .. } => {
                let mut h = input;
                let layers = params.len() / 2;
                for (i, pair) in params.chunks(2).enumerate() {
                    let z = g.matmul(h, pair[0])?;
                    let b = g.broadcast_rows(pair[1], n)?;
                    h = g.add(z, b)?;
                    if i + 1 < layers {
                        h = g.relu(h);
                    }
                }
                Ok(h)
            }
            Architecture::ConvNet { .. } => {
                let mut h = input;
                for pair in params[..4].chunks(2) {
                    let z = g.conv2d(h, pair[0], 1)?;
                    let zs = g.shape(z).to_vec();
                    let b = g.broadcast_channels(pair[1], &zs)?;
                    let a = g.add(z, b)?;
                    let a = g.relu(a);
                    h = g.mean_pool2(a)?;
                }
                let flat = g.value(h).row_len();
                let h = g.reshape(h, &[n, flat])?;
                let z = g.matmul(h, params[4])?;
                let b = g.broadcast_rows(params[5], n)?;
                g.add(z, b)
            }
        }
    }

    /// Class distribution for each example in `batch`.
    pub fn predict<F: Scalar>(&self, params: &ParamSet<F>, batch: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let vars = params.bind_constants(&mut g);
        let x = g.constant(batch.clone());
        let logits = self.forward(&mut g, &vars, x)?;
        let probs = g.softmax(logits)?;
        Ok(g.value(probs).clone())
    }
}

pub fn is_bias(name: &str) -> bool {
    name.ends_with(".bias")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
}

/// Named parameters in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<F = f32> {
    params: Vec<Param<F>>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn from_params(params: Vec<Param<F>>) -> Self {
        ParamSet { params }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Errors unless both sets have the same names and shapes in the same order.
    pub fn check_structure(&self, other: &ParamSet<F>) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::StructureMismatch(format!(
                "{} vs {} parameters",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::StructureMismatch(format!(
                    "`{}` {:?} vs `{}` {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Adds every parameter to `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<F>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.value.clone())).collect()
    }

    pub fn bind_constants(&self, g: &mut Graph<F>) -> Vec<Var> {
        self.params.iter().map(|p| g.constant(p.value.clone())).collect()
    }

    pub fn cast<G: Scalar>(&self) -> ParamSet<G> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    /// Flattened copy of all values in parameter order.
    pub fn flatten(&self) -> Vec<F> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }
}

/// `ema ← decay·ema + (1−decay)·current`, parameter by parameter.
pub fn ema_update<F: Scalar>(ema: &mut ParamSet<F>, current: &ParamSet<F>, decay: F) -> Result<()> {
    if !(decay >= F::zero() && decay < F::one()) {
        return Err(Error::InvalidArgument(format!(
            "ema decay must be in [0,1), got {decay}"
        )));
    }
    ema.check_structure(current)?;
    let keep = F::one() - decay;
    for (e, c) in ema.params.iter_mut().zip(&current.params) {
        for (ev, &cv) in e.value.data_mut().iter_mut().zip(c.value.data()) {
            *ev = decay * *ev + keep * cv;
        }
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 7] = b"MMCKPT1";

/// Serializes parameters as little-endian `f32` after the `MMCKPT1` header.
///
/// Layout per parameter: `u32` name length, UTF-8 name, `u32` rank,
/// `u32` dims, then the values.
pub fn write_checkpoint<F: Scalar, W: Write>(params: &ParamSet<F>, mut w: W) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    for p in &params.params {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamSet<f32>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
    decode_checkpoint(&bytes).map_err(Error::from)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        let chunk = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or(CheckpointError::Truncated)?;
        self.pos += n;
        Ok(chunk)
    }

    fn u32(&mut self) -> std::result::Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<ParamSet<f32>, CheckpointError> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadHeader);
    }
    let mut cur = Cursor {
        bytes,
        pos: CHECKPOINT_MAGIC.len(),
    };
    let mut params = Vec::new();
    while !cur.done() {
        let name_len = cur.u32()?;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        let rank = cur.u32()?;
        let shape = (0..rank)
            .map(|_| cur.u32())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let data = cur
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let value = Tensor::new(shape, data).map_err(|_| CheckpointError::Truncated)?;
        params.push(Param { name, value });
    }
    Ok(ParamSet { params })
}

pub fn save_checkpoint<F: Scalar>(params: &ParamSet<F>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf).expect("writing to memory cannot fail");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(Error::from)
}
