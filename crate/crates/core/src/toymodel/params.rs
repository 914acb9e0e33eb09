use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ToyConfig;
use crate::{Error, Result};

/// Magic prefix of the binary checkpoint.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VRCK";

/// Affine map `y = x·Wᵀ + b` on row-major activations. `weight` is `[out × in]`,
/// `bias` is `[1 × out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DMatrix<f64>,
    pub bias: DMatrix<f64>,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize, gain: f64, bias_std: f64) -> Self {
        let std = gain / (inputs as f64).sqrt();
        Self {
            weight: normal(rng, outputs, inputs, std),
            bias: normal(rng, 1, outputs, bias_std),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: DMatrix::zeros(self.weight.nrows(), self.weight.ncols()),
            bias: DMatrix::zeros(1, self.bias.ncols()),
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * self.weight.transpose();
        for mut row in y.row_iter_mut() {
            row += &self.bias;
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>, grad: &mut Linear) -> DMatrix<f64> {
        grad.weight += dy.transpose() * x;
        for row in dy.row_iter() {
            grad.bias += row;
        }
        dy * &self.weight
    }
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

/// Weights of one transformer layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub attn_norm: DMatrix<f64>,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub mlp_norm: DMatrix<f64>,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

/// All trainable tensors of the toy model. Gradients and optimizer moments use
/// the same structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams {
    pub embed: Linear,
    pub layers: Vec<LayerParams>,
    pub final_norm: DMatrix<f64>,
    pub head: Linear,
}

impl ToyParams {
    pub fn init(config: &ToyConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim();
        let ones = DMatrix::from_element(1, d, 1.0);
        let residual_gain = 0.5 / (config.layers as f64).sqrt();
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                attn_norm: ones.clone(),
                query: Linear::init(&mut rng, d, d, 1.0, 0.5),
                key: Linear::init(&mut rng, d, d, 1.0, 0.5),
                value: Linear::init(&mut rng, d, d, 1.0, 0.0),
                out: Linear::init(&mut rng, d, d, residual_gain, 0.0),
                mlp_norm: ones.clone(),
                mlp_in: Linear::init(&mut rng, d, config.mlp_hidden, 1.0, 0.0),
                mlp_out: Linear::init(&mut rng, config.mlp_hidden, d, residual_gain, 0.0),
            })
            .collect();
        Self {
            embed: Linear::init(&mut rng, config.input_dim(), d, 1.0, 0.1),
            layers,
            final_norm: ones,
            head: Linear::init(&mut rng, d, config.channels, 0.5, 0.0),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &DMatrix<f64>| DMatrix::zeros(m.nrows(), m.ncols());
        Self {
            embed: self.embed.zeros_like(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_norm: z(&l.attn_norm),
                    query: l.query.zeros_like(),
                    key: l.key.zeros_like(),
                    value: l.value.zeros_like(),
                    out: l.out.zeros_like(),
                    mlp_norm: z(&l.mlp_norm),
                    mlp_in: l.mlp_in.zeros_like(),
                    mlp_out: l.mlp_out.zeros_like(),
                })
                .collect(),
            final_norm: z(&self.final_norm),
            head: self.head.zeros_like(),
        }
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &DMatrix<f64>)> {
        fn lin<'a>(out: &mut Vec<(String, &'a DMatrix<f64>)>, name: String, l: &'a Linear) {
            out.push((format!("{name}.weight"), &l.weight));
            out.push((format!("{name}.bias"), &l.bias));
        }
        let mut out = Vec::new();
        lin(&mut out, "embed".into(), &self.embed);
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.attn_norm"), &l.attn_norm));
            lin(&mut out, format!("layers.{i}.query"), &l.query);
            lin(&mut out, format!("layers.{i}.key"), &l.key);
            lin(&mut out, format!("layers.{i}.value"), &l.value);
            lin(&mut out, format!("layers.{i}.out"), &l.out);
            out.push((format!("layers.{i}.mlp_norm"), &l.mlp_norm));
            lin(&mut out, format!("layers.{i}.mlp_in"), &l.mlp_in);
            lin(&mut out, format!("layers.{i}.mlp_out"), &l.mlp_out);
        }
        out.push(("final_norm".into(), &self.final_norm));
        lin(&mut out, "head".into(), &self.head);
        out
    }

    /// Same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut out: Vec<&mut DMatrix<f64>> = vec![&mut self.embed.weight, &mut self.embed.bias];
        for l in &mut self.layers {
            out.push(&mut l.attn_norm);
            for lin in [&mut l.query, &mut l.key, &mut l.value, &mut l.out] {
                out.push(&mut lin.weight);
                out.push(&mut lin.bias);
            }
            out.push(&mut l.mlp_norm);
            for lin in [&mut l.mlp_in, &mut l.mlp_out] {
                out.push(&mut lin.weight);
                out.push(&mut lin.bias);
            }
        }
        out.push(&mut self.final_norm);
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().map(|(_, m)| m.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for m in self.tensors_mut() {
            *m *= factor;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .map(|((_, a), (_, b))| (*a - b).amax())
            .fold(0.0, f64::max)
    }
}

/// Adam with bias correction and global-norm gradient clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    step: u32,
    m: ToyParams,
    v: ToyParams,
}

impl Adam {
    pub fn new(params: &ToyParams, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// One update; returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut ToyParams, grads: &ToyParams) -> f64 {
        let norm = grads.norm();
        let clip = if norm > self.clip_norm { self.clip_norm / norm } else { 1.0 };
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let g = grads.tensors();
        for (((p, (_, g)), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(g)
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                let gi = g[i] * clip;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        norm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    config: ToyConfig,
    tensors: Vec<TensorEntry>,
}

/// Path of the JSON manifest written next to a checkpoint.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes the tensors as `VRCK`, u32 count, then per tensor: u32 name length,
/// UTF-8 name, u32 rank, u32 dims, row-major f32 values (all little-endian).
/// The config and tensor list go to `<path>.json`.
pub fn save_checkpoint(path: &Path, config: &ToyConfig, params: &ToyParams) -> Result<()> {
    let tensors = params.tensors();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, m) in &tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(m.nrows() as u32).to_le_bytes())?;
        w.write_all(&(m.ncols() as u32).to_le_bytes())?;
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                w.write_all(&(m[(r, c)] as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    let manifest = Manifest {
        config: config.clone(),
        tensors: tensors
            .iter()
            .map(|(name, m)| TensorEntry {
                name: name.clone(),
                dims: vec![m.nrows(), m.ncols()],
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| format_error(path, e.to_string()))?;
    std::fs::write(manifest_path(path), json)?;
    Ok(())
}

fn format_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Loads a checkpoint and its manifest; tensor names and shapes must match the manifest config.
pub fn load_checkpoint(path: &Path) -> Result<(ToyConfig, ToyParams)> {
    let json = std::fs::read_to_string(manifest_path(path))?;
    let manifest: Manifest =
        serde_json::from_str(&json).map_err(|e| format_error(&manifest_path(path), e.to_string()))?;
    manifest.config.validate()?;
    let mut params = ToyParams::init(&manifest.config, 0);
    let expected: Vec<(String, usize, usize)> = params
        .tensors()
        .iter()
        .map(|(n, m)| (n.clone(), m.nrows(), m.ncols()))
        .collect();

    let truncated = |e: std::io::Error| format_error(path, format!("truncated checkpoint: {e}"));
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(format_error(path, "not a checkpoint (bad magic)"));
    }
    let count = read_u32(&mut r).map_err(truncated)? as usize;
    if count != expected.len() {
        return Err(format_error(
            path,
            format!("{count} tensors, config implies {}", expected.len()),
        ));
    }
    for (slot, (name, rows, cols)) in params.tensors_mut().into_iter().zip(expected) {
        let len = read_u32(&mut r).map_err(truncated)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(truncated)?;
        let got = String::from_utf8(buf).map_err(|_| format_error(path, "tensor name is not UTF-8"))?;
        if got != name {
            return Err(format_error(path, format!("expected tensor `{name}`, found `{got}`")));
        }
        let rank = read_u32(&mut r).map_err(truncated)? as usize;
        let dims = (0..rank)
            .map(|_| read_u32(&mut r).map(|x| x as usize))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(truncated)?;
        if dims != [rows, cols] {
            return Err(format_error(path, format!("tensor `{name}` has dims {dims:?}, expected [{rows}, {cols}]")));
        }
        for i in 0..rows {
            for j in 0..cols {
                let mut b = [0u8; 4];
                r.read_exact(&mut b).map_err(truncated)?;
                slot[(i, j)] = f32::from_le_bytes(b) as f64;
            }
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(format_error(path, format!("{} trailing bytes", rest.len())));
    }
    Ok((manifest.config, params))
}
