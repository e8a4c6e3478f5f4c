//! Parameterised layers shared by the frame encoder and the temporal model.

use rand::Rng as _;

use crate::tensor::{Result, Tensor, TensorError};
use crate::Rng;

/// Anything that owns trainable tensors. Parameter order is the
/// declaration order used by checkpoints.
pub trait Module {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>);

    fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn parameters(&self) -> Vec<Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn uniform_param(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::param(data, shape).expect("parameter shape has positive extents")
}

pub(crate) fn const_param(shape: &[usize], value: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::param(vec![value; n], shape).expect("parameter shape has positive extents")
}

/// `y = x·W + b` with `W: [in×out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            weight: uniform_param(&[input, output], bound, rng),
            bias: uniform_param(&[output], bound, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}

impl Module for Linear {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

/// Token lookup table `[vocab×dim]`.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Tensor,
}

impl Embedding {
    pub fn new(vocab: usize, dim: usize, rng: &mut Rng) -> Self {
        Embedding {
            table: uniform_param(&[vocab, dim], 1.0 / (dim as f64).sqrt(), rng),
        }
    }

    pub fn forward(&self, ids: &[usize]) -> Result<Tensor> {
        self.table.gather_rows(ids)
    }
}

impl Module for Embedding {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "table"), self.table.clone()));
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: const_param(&[dim], 1.0),
            bias: const_param(&[dim], 0.0),
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gain, &self.bias, self.eps)
    }
}

impl Module for LayerNorm {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "gain"), self.gain.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

/// Additive attention bias over keys: 0 for real positions, −∞ for padding.
pub fn key_padding_bias(pad_mask: &[bool]) -> Result<Tensor> {
    let data = pad_mask
        .iter()
        .map(|&real| if real { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    Tensor::new(data, &[pad_mask.len()])
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(TensorError::Unsupported(format!(
                "model dim {dim} not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            output: Linear::new(dim, dim, rng),
            heads,
        })
    }

    pub fn forward(&self, x: &Tensor, pad_mask: Option<&[bool]>) -> Result<Tensor> {
        Ok(self.forward_with_weights(x, pad_mask)?.0)
    }

    /// Self-attention over the rows of `x: [len×dim]`. Also returns each
    /// head's `[len×len]` attention matrix.
    pub fn forward_with_weights(
        &self,
        x: &Tensor,
        pad_mask: Option<&[bool]>,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let dim = self.query.out_dim();
        let head_dim = dim / self.heads;
        let len = x.shape()[0];
        let bias = match pad_mask {
            Some(mask) if mask.len() != len => {
                return Err(TensorError::Shape {
                    op: "attention mask",
                    lhs: x.shape().to_vec(),
                    rhs: vec![mask.len()],
                })
            }
            Some(mask) if mask.iter().any(|m| !m) => Some(key_padding_bias(mask)?),
            _ => None,
        };
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut contexts = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.narrow(1, h * head_dim, head_dim)?;
            let kh = k.narrow(1, h * head_dim, head_dim)?;
            let vh = v.narrow(1, h * head_dim, head_dim)?;
            let mut scores = qh.matmul(&kh.t()?)?.scale(scale);
            if let Some(b) = &bias {
                scores = scores.add(b)?;
            }
            let attn = scores.softmax(1)?;
            contexts.push(attn.matmul(&vh)?);
            weights.push(attn);
        }
        let context = if contexts.len() == 1 {
            contexts.pop().expect("one head")
        } else {
            Tensor::concat(&contexts, 1)?
        };
        Ok((self.output.forward(&context)?, weights))
    }
}

impl Module for MultiHeadAttention {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.query.collect_params(&join(prefix, "query"), out);
        self.key.collect_params(&join(prefix, "key"), out);
        self.value.collect_params(&join(prefix, "value"), out);
        self.output.collect_params(&join(prefix, "output"), out);
    }
}

/// Pre-norm transformer layer: `x + attn(ln(x))`, then `x + ffn(ln(x))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub dropout: f64,
}

impl TransformerBlock {
    pub fn new(dim: usize, heads: usize, ffn_dim: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        Ok(TransformerBlock {
            norm1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(dim, heads, rng)?,
            norm2: LayerNorm::new(dim),
            ff_in: Linear::new(dim, ffn_dim, rng),
            ff_out: Linear::new(ffn_dim, dim, rng),
            dropout,
        })
    }

    pub fn forward(&self, x: &Tensor, pad_mask: Option<&[bool]>, mut rng: Option<&mut Rng>) -> Result<Tensor> {
        let a = self.attn.forward(&self.norm1.forward(x)?, pad_mask)?;
        let x = x.add(&a.dropout(self.dropout, rng.as_deref_mut())?)?;
        let f = self
            .ff_out
            .forward(&self.ff_in.forward(&self.norm2.forward(&x)?)?.gelu())?;
        x.add(&f.dropout(self.dropout, rng.as_deref_mut())?)
    }
}

impl Module for TransformerBlock {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.norm1.collect_params(&join(prefix, "norm1"), out);
        self.attn.collect_params(&join(prefix, "attn"), out);
        self.norm2.collect_params(&join(prefix, "norm2"), out);
        self.ff_in.collect_params(&join(prefix, "ff_in"), out);
        self.ff_out.collect_params(&join(prefix, "ff_out"), out);
    }
}

/// A stack of pre-norm blocks followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct TransformerStack {
    pub blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
}

impl TransformerStack {
    pub fn new(
        dim: usize,
        depth: usize,
        heads: usize,
        ffn_dim: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|_| TransformerBlock::new(dim, heads, ffn_dim, dropout, rng))
            .collect::<Result<_>>()?;
        Ok(TransformerStack {
            blocks,
            norm: LayerNorm::new(dim),
        })
    }

    pub fn forward(&self, x: &Tensor, pad_mask: Option<&[bool]>, mut rng: Option<&mut Rng>) -> Result<Tensor> {
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(&h, pad_mask, rng.as_deref_mut())?;
        }
        self.norm.forward(&h)
    }
}

impl Module for TransformerStack {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_params(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.norm.collect_params(&join(prefix, "norm"), out);
    }
}

/// Two-layer perceptron: `out(dropout(gelu(hidden(x))))`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
    pub dropout: f64,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, output: usize, dropout: f64, rng: &mut Rng) -> Self {
        Mlp {
            hidden: Linear::new(input, hidden, rng),
            output: Linear::new(hidden, output, rng),
            dropout,
        }
    }

    pub fn forward(&self, x: &Tensor, rng: Option<&mut Rng>) -> Result<Tensor> {
        let h = self.hidden.forward(x)?.gelu().dropout(self.dropout, rng)?;
        self.output.forward(&h)
    }
}

impl Module for Mlp {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.hidden.collect_params(&join(prefix, "hidden"), out);
        self.output.collect_params(&join(prefix, "output"), out);
    }
}

/// Fixed sinusoidal position table `[len×dim]`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Result<Tensor> {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(data, &[len, dim])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = Rng::seed_from_u64(1);
        let mha = MultiHeadAttention::new(8, 2, &mut rng).unwrap();
        let x = uniform_param(&[5, 8], 1.0, &mut rng);
        let mask = [true, true, true, false, false];
        let (_, weights) = mha.forward_with_weights(&x, Some(&mask)).unwrap();
        for w in weights {
            let w = w.to_vec();
            for row in w.chunks(5) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(row[3], 0.0);
                assert_eq!(row[4], 0.0);
            }
        }
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut rng = Rng::seed_from_u64(1);
        assert!(MultiHeadAttention::new(10, 4, &mut rng).is_err());
    }

    #[test]
    fn positions_start_with_sin_zero_cos_zero() {
        let pe = sinusoidal_positions(3, 4).unwrap().to_vec();
        assert_eq!(&pe[..4], &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn parameter_names_follow_declaration_order() {
        let mut rng = Rng::seed_from_u64(1);
        let stack = TransformerStack::new(4, 1, 2, 8, 0.0, &mut rng).unwrap();
        let names: Vec<String> = stack.named_parameters().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "blocks.0.norm1.gain");
        assert_eq!(names.last().unwrap(), "norm.bias");
        assert_eq!(names.len(), 2 + 8 + 2 + 4 + 2);
    }
}
