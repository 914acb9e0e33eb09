use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use super::{LayerParams, ToyConfig, ToyParams};
use crate::attention::{
    apply_block_mask, block_affinity_from_indices, counterfactual_mask, dense_attention, dense_attention_backward,
    sample_block_indices, select_recent, sparse_attention, sparse_attention_backward, topk_select, AttentionMask,
    BlockMask, SelectionStrategy, TokenBlockSet,
};
use crate::tensor::TokenTensor;
use crate::viewrope::{encode_tokens, encode_tokens_adjoint, EncodingFlags, RopePosition};
use crate::{Error, Result};

const NORM_EPS: f64 = 1e-6;

/// How key blocks are chosen inside every attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum SelectionRule {
    /// Every admissible block, evaluated with the dense kernel.
    Dense,
    /// Top-k blocks by estimated affinity.
    TopK,
    /// Top-k replaced by a counterfactual draw.
    Counterfactual(SelectionStrategy),
    /// The `w` most recent admissible blocks.
    Sliding(usize),
}

/// Mixes two words into a seed (splitmix64 finalizer).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(a << 6).wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Token features, positions and patch rotations of the query tokens of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInput {
    /// `[tokens × input_dim]`.
    pub features: DMatrix<f64>,
    pub positions: Vec<RopePosition>,
    pub rotations: Vec<Matrix3<f64>>,
}

impl SequenceInput {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn concat(parts: &[&SequenceInput]) -> Self {
        let rows: usize = parts.iter().map(|p| p.len()).sum();
        let cols = parts.first().map_or(0, |p| p.features.ncols());
        let mut features = DMatrix::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            features.rows_mut(at, p.len()).copy_from(&p.features);
            at += p.len();
        }
        Self {
            features,
            positions: parts.iter().flat_map(|p| p.positions.iter().copied()).collect(),
            rotations: parts.iter().flat_map(|p| p.rotations.iter().copied()).collect(),
        }
    }
}

/// Encoded keys and values of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKV {
    pub keys: TokenTensor<f64>,
    pub values: TokenTensor<f64>,
}

/// Block-level attention constraints of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPlan {
    /// `query blocks × key blocks`, keys = prefix blocks followed by the query blocks.
    pub allowed: BlockMask,
    pub rule: SelectionRule,
    pub flags: EncodingFlags,
    /// Per-call seed; each layer derives its own from it.
    pub seed: u64,
}

enum AttnTape {
    Dense {
        q: TokenTensor<f64>,
        k: TokenTensor<f64>,
        v: TokenTensor<f64>,
        allowed: BlockMask,
    },
    Sparse {
        blocks: TokenBlockSet<f64>,
        mask: BlockMask,
    },
}

struct LayerTape {
    x_in: DMatrix<f64>,
    n1: DMatrix<f64>,
    rms1: Vec<f64>,
    attn: AttnTape,
    attn_flat: DMatrix<f64>,
    x_mid: DMatrix<f64>,
    n2: DMatrix<f64>,
    rms2: Vec<f64>,
    hidden_pre: DMatrix<f64>,
    hidden: DMatrix<f64>,
}

/// Intermediate values kept for the backward pass.
pub struct Tape {
    features: DMatrix<f64>,
    positions: Vec<RopePosition>,
    rotations: Vec<Matrix3<f64>>,
    flags: EncodingFlags,
    layers: Vec<LayerTape>,
    x_final: DMatrix<f64>,
    n_final: DMatrix<f64>,
    rms_final: Vec<f64>,
}

/// Result of a forward pass.
pub struct ForwardOutput {
    /// Predicted clean latents, `[tokens × channels]`.
    pub x0: DMatrix<f64>,
    /// Block mask actually used by each layer.
    pub masks: Vec<BlockMask>,
    /// Encoded keys and values of the query tokens per layer.
    pub kv: Vec<LayerKV>,
    /// Multiply-accumulates spent in attention.
    pub attention_macs: u64,
    pub tape: Option<Tape>,
}

/// Toy diffusion transformer: embedding, pre-norm attention and MLP blocks, linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub config: ToyConfig,
    pub params: ToyParams,
}

fn rms_norm(x: &DMatrix<f64>, gain: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let d = x.ncols() as f64;
    let mut y = x.clone();
    let mut rms = Vec::with_capacity(x.nrows());
    for (i, mut row) in y.row_iter_mut().enumerate() {
        let r = (x.row(i).norm_squared() / d + NORM_EPS).sqrt();
        rms.push(r);
        row /= r;
        row.component_mul_assign(gain);
    }
    (y, rms)
}

fn rms_norm_backward(
    x: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    rms: &[f64],
    dy: &DMatrix<f64>,
    dgain: &mut DMatrix<f64>,
) -> DMatrix<f64> {
    let d = x.ncols() as f64;
    let mut dx = DMatrix::zeros(x.nrows(), x.ncols());
    for (i, &r) in rms.iter().enumerate() {
        let xr = x.row(i);
        let dyr = dy.row(i);
        *dgain += dyr.component_mul(&xr) / r;
        let gdy = dyr.component_mul(gain);
        let proj = gdy.dot(&xr) / (d * r * r * r);
        dx.set_row(i, &(gdy / r - xr * proj));
    }
    dx
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn to_tokens(m: &DMatrix<f64>, heads: usize, d: usize) -> TokenTensor<f64> {
    TokenTensor::from_fn(m.nrows(), heads, d, |l, h, c| m[(l, h * d + c)])
}

fn from_tokens(t: &TokenTensor<f64>) -> DMatrix<f64> {
    let (d, width) = (t.dim(), t.heads() * t.dim());
    DMatrix::from_fn(t.len(), width, |l, j| t.vector(l, j / d)[j % d])
}

impl ToyModel {
    pub fn new(config: ToyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ToyParams::init(&config, seed);
        Ok(Self { config, params })
    }

    /// Runs the network on `input` attending over `prefix` (per-layer cached keys
    /// and values, possibly empty) followed by the query tokens themselves.
    pub fn forward(
        &self,
        input: &SequenceInput,
        prefix: Option<&[LayerKV]>,
        plan: &AttentionPlan,
        keep_tape: bool,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let (b, heads, d) = (cfg.block_size(), cfg.heads, cfg.head_dim);
        let len = input.len();
        if input.features.ncols() != cfg.input_dim() {
            return Err(Error::Dimension(format!(
                "features have {} columns, model expects {}",
                input.features.ncols(),
                cfg.input_dim()
            )));
        }
        if input.positions.len() != len || input.rotations.len() != len {
            return Err(Error::Dimension("positions and rotations must match the token count".into()));
        }
        if len == 0 || !len.is_multiple_of(b) {
            return Err(Error::Dimension(format!("{len} tokens do not form whole blocks of {b}")));
        }
        if let Some(p) = prefix {
            if p.len() != cfg.layers {
                return Err(Error::Dimension(format!("prefix has {} layers, model has {}", p.len(), cfg.layers)));
            }
        }
        let prefix_len = prefix.map_or(0, |p| p[0].keys.len());
        let (rows, cols) = (len / b, (prefix_len + len) / b);
        if plan.allowed.rows() != rows || plan.allowed.cols() != cols {
            return Err(Error::Dimension(format!(
                "plan mask is {}x{}, sequence needs {rows}x{cols}",
                plan.allowed.rows(),
                plan.allowed.cols()
            )));
        }
        if keep_tape && prefix_len > 0 {
            return Err(Error::Config("backward through a cached prefix is not supported".into()));
        }

        let mut x = self.params.embed.forward(&input.features);
        let mut masks = Vec::with_capacity(cfg.layers);
        let mut kv = Vec::with_capacity(cfg.layers);
        let mut tapes = Vec::new();
        let mut macs = 0u64;
        for (li, layer) in self.params.layers.iter().enumerate() {
            let (n1, rms1) = rms_norm(&x, &layer.attn_norm);
            let mut q = to_tokens(&layer.query.forward(&n1), heads, d);
            let mut k = to_tokens(&layer.key.forward(&n1), heads, d);
            let v = to_tokens(&layer.value.forward(&n1), heads, d);
            encode_tokens(&mut q, &input.positions, &input.rotations, &cfg.layout, plan.flags)?;
            encode_tokens(&mut k, &input.positions, &input.rotations, &cfg.layout, plan.flags)?;
            let (k_all, v_all) = match prefix {
                Some(p) if prefix_len > 0 => (
                    TokenTensor::concat(&[&p[li].keys, &k])?,
                    TokenTensor::concat(&[&p[li].values, &v])?,
                ),
                _ => (k.clone(), v.clone()),
            };
            kv.push(LayerKV { keys: k, values: v });

            let seed = mix_seed(plan.seed, li as u64);
            let (out, mask, tape) = self.attend(q, k_all, v_all, plan, seed)?;
            macs += out.macs;
            masks.push(mask);
            let attn_flat = from_tokens(&out.out);
            let x_mid = &x + layer.out.forward(&attn_flat);
            let (n2, rms2) = rms_norm(&x_mid, &layer.mlp_norm);
            let hidden_pre = layer.mlp_in.forward(&n2);
            let hidden = hidden_pre.map(silu);
            let x_out = &x_mid + layer.mlp_out.forward(&hidden);
            if keep_tape {
                tapes.push(LayerTape {
                    x_in: x,
                    n1,
                    rms1,
                    attn: tape,
                    attn_flat,
                    x_mid,
                    n2,
                    rms2,
                    hidden_pre,
                    hidden,
                });
            }
            x = x_out;
        }
        let (n_final, rms_final) = rms_norm(&x, &self.params.final_norm);
        let x0 = self.params.head.forward(&n_final);
        let tape = keep_tape.then(|| Tape {
            features: input.features.clone(),
            positions: input.positions.clone(),
            rotations: input.rotations.clone(),
            flags: plan.flags,
            layers: tapes,
            x_final: x,
            n_final,
            rms_final,
        });
        Ok(ForwardOutput {
            x0,
            masks,
            kv,
            attention_macs: macs,
            tape,
        })
    }

    fn attend(
        &self,
        q: TokenTensor<f64>,
        k: TokenTensor<f64>,
        v: TokenTensor<f64>,
        plan: &AttentionPlan,
        seed: u64,
    ) -> Result<(crate::attention::AttentionOutput<f64>, BlockMask, AttnTape)> {
        let cfg = &self.config;
        let b = cfg.block_size();
        if plan.rule == SelectionRule::Dense {
            let mask = AttentionMask::Blocks {
                mask: &plan.allowed,
                block_size: b,
            };
            let out = dense_attention(&q, &k, &v, mask)?;
            let allowed = plan.allowed.clone();
            return Ok((out, allowed.clone(), AttnTape::Dense { q, k, v, allowed }));
        }
        let blocks = TokenBlockSet::new(q, k, v, b)?;
        let indices = sample_block_indices(b, cfg.sample_count, seed)?;
        let affinity = apply_block_mask(block_affinity_from_indices(&blocks, &indices)?, &plan.allowed)?;
        let selection = topk_select(&affinity, cfg.topk)?;
        let mask = match plan.rule {
            SelectionRule::TopK => selection.mask,
            SelectionRule::Counterfactual(strategy) => {
                counterfactual_mask(&selection, strategy, cfg.topk, mix_seed(seed, 0xC0FF)).mask
            }
            SelectionRule::Sliding(w) => select_recent(&selection.candidates, w).mask,
            SelectionRule::Dense => unreachable!("handled above"),
        };
        let out = sparse_attention(&blocks, &mask)?;
        Ok((out, mask.clone(), AttnTape::Sparse { blocks, mask }))
    }

    /// Gradients of `⟨d_x0, x0⟩` w.r.t. all parameters, from a forward pass run with a tape.
    pub fn backward(&self, tape: &Tape, d_x0: &DMatrix<f64>) -> Result<ToyParams> {
        let cfg = &self.config;
        let (heads, d) = (cfg.heads, cfg.head_dim);
        let p = &self.params;
        let mut g = p.zeros_like();
        let dn = p.head.backward(&tape.n_final, d_x0, &mut g.head);
        let mut dx = rms_norm_backward(&tape.x_final, &p.final_norm, &tape.rms_final, &dn, &mut g.final_norm);
        for ((layer, lt), lg) in p.layers.iter().zip(&tape.layers).zip(g.layers.iter_mut()).rev() {
            dx = self.layer_backward(layer, lt, lg, dx, tape, heads, d)?;
        }
        p.embed.backward(&tape.features, &dx, &mut g.embed);
        Ok(g)
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        layer: &LayerParams,
        lt: &LayerTape,
        lg: &mut LayerParams,
        dx_out: DMatrix<f64>,
        tape: &Tape,
        heads: usize,
        d: usize,
    ) -> Result<DMatrix<f64>> {
        let layout = &self.config.layout;
        let d_hidden = layer.mlp_out.backward(&lt.hidden, &dx_out, &mut lg.mlp_out);
        let d_pre = d_hidden.zip_map(&lt.hidden_pre, |g, x| g * silu_grad(x));
        let dn2 = layer.mlp_in.backward(&lt.n2, &d_pre, &mut lg.mlp_in);
        let dx_mid = dx_out + rms_norm_backward(&lt.x_mid, &layer.mlp_norm, &lt.rms2, &dn2, &mut lg.mlp_norm);

        let d_attn = to_tokens(&layer.out.backward(&lt.attn_flat, &dx_mid, &mut lg.out), heads, d);
        let grads = match &lt.attn {
            AttnTape::Dense { q, k, v, allowed } => dense_attention_backward(
                q,
                k,
                v,
                AttentionMask::Blocks {
                    mask: allowed,
                    block_size: self.config.block_size(),
                },
                &d_attn,
            )?,
            AttnTape::Sparse { blocks, mask } => sparse_attention_backward(blocks, mask, &d_attn)?,
        };
        let (mut dq, mut dk) = (grads.dq, grads.dk);
        encode_tokens_adjoint(&mut dq, &tape.positions, &tape.rotations, layout, tape.flags)?;
        encode_tokens_adjoint(&mut dk, &tape.positions, &tape.rotations, layout, tape.flags)?;
        let mut dn1 = layer.query.backward(&lt.n1, &from_tokens(&dq), &mut lg.query);
        dn1 += layer.key.backward(&lt.n1, &from_tokens(&dk), &mut lg.key);
        dn1 += layer.value.backward(&lt.n1, &from_tokens(&grads.dv), &mut lg.value);
        Ok(dx_mid + rms_norm_backward(&lt.x_in, &layer.attn_norm, &lt.rms1, &dn1, &mut lg.attn_norm))
    }
}
