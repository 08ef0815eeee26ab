//! Transformer sequence branch.

use textgsl_autodiff::{Scalar, Tensor, TensorError, Var};

use super::layers::{Linear, ParamBuilder};
use super::pass::Pass;
use super::ModelError;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Sinusoidal position table, `n × width`:
/// `PE(pos, 2i) = sin(pos / 10000^(2i/width))`,
/// `PE(pos, 2i+1) = cos(pos / 10000^(2i/width))`.
pub fn positional_encoding<T: Scalar>(n: usize, width: usize) -> Result<Tensor<T>, ModelError> {
    if !width.is_multiple_of(2) {
        return Err(ModelError::Config(format!(
            "positional encoding width must be even, got {width}"
        )));
    }
    let mut data = Vec::with_capacity(n * width);
    for pos in 0..n {
        for i in 0..width / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / width as f64);
            data.push(T::lit(angle.sin()));
            data.push(T::lit(angle.cos()));
        }
    }
    Ok(Tensor::matrix(n, width, data)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm1: (textgsl_autodiff::ParamId, textgsl_autodiff::ParamId),
    pub norm2: (textgsl_autodiff::ParamId, textgsl_autodiff::ParamId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub input: Linear,
    pub layers: Vec<EncoderLayerParams>,
    pub output: Linear,
    pub heads: usize,
    pub positional: bool,
    pub dropout: f64,
}

impl EncoderParams {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        input_dim: usize,
        hidden: usize,
        ff_dim: usize,
        layers: usize,
        heads: usize,
        positional: bool,
    ) -> Result<Self, TensorError> {
        let input = Linear::new(b, "seq.input", input_dim, hidden)?;
        let mut ls = Vec::with_capacity(layers);
        for k in 0..layers {
            let p = format!("seq.layer{k}");
            ls.push(EncoderLayerParams {
                wq: Linear::no_bias(b, &format!("{p}.wq"), hidden, hidden)?,
                wk: Linear::no_bias(b, &format!("{p}.wk"), hidden, hidden)?,
                wv: Linear::no_bias(b, &format!("{p}.wv"), hidden, hidden)?,
                ff1: Linear::new(b, &format!("{p}.ff1"), hidden, ff_dim)?,
                ff2: Linear::new(b, &format!("{p}.ff2"), ff_dim, hidden)?,
                norm1: (
                    b.constant(&format!("{p}.norm1.scale"), &[hidden], 1.0)?,
                    b.constant(&format!("{p}.norm1.shift"), &[hidden], 0.0)?,
                ),
                norm2: (
                    b.constant(&format!("{p}.norm2.scale"), &[hidden], 1.0)?,
                    b.constant(&format!("{p}.norm2.shift"), &[hidden], 0.0)?,
                ),
            });
        }
        let output = Linear::new(b, "seq.output", hidden, hidden)?;
        Ok(Self {
            input,
            layers: ls,
            output,
            heads,
            positional,
            dropout: 0.0,
        })
    }
}

fn attention<T: Scalar>(pass: &mut Pass<'_, T>, layer: &EncoderLayerParams, x: Var, heads: usize) -> Result<Var, TensorError> {
    let q = layer.wq.apply(pass, x)?;
    let k = layer.wk.apply(pass, x)?;
    let v = layer.wv.apply(pass, x)?;
    let width = pass.tape.value(x).cols();
    let dk = width / heads;
    let inv_sqrt = T::lit(1.0 / (dk as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            let (s, e) = (h * dk, (h + 1) * dk);
            (
                pass.tape.slice_cols(q, s, e)?,
                pass.tape.slice_cols(k, s, e)?,
                pass.tape.slice_cols(v, s, e)?,
            )
        };
        let kt = pass.tape.transpose(kh)?;
        let scores = pass.tape.matmul(qh, kt)?;
        let scores = pass.tape.affine(scores, inv_sqrt, T::zero())?;
        let weights = pass.tape.row_softmax(scores);
        outs.push(pass.tape.matmul(weights, vh)?);
    }
    if heads == 1 {
        Ok(outs[0])
    } else {
        pass.tape.concat(&outs)
    }
}

/// Encoder stack on inputs already projected to the hidden width: adds
/// positions, then per layer self-attention, dropout, residual and
/// layer norm, followed by a relu feed-forward block with the same
/// dropout/residual/norm wrapping, and finally the output projection.
pub fn encode_projected<T: Scalar>(pass: &mut Pass<'_, T>, params: &EncoderParams, x: Var) -> Result<Var, ModelError> {
    let (n, width) = {
        let v = pass.tape.value(x);
        (v.rows(), v.cols())
    };
    let mut h = x;
    if params.positional {
        let pe = pass.tape.constant(positional_encoding(n, width)?);
        h = pass.tape.add(h, pe)?;
    }
    for layer in &params.layers {
        let z = attention(pass, layer, h, params.heads)?;
        let z = pass.dropout(z, params.dropout)?;
        let res = pass.tape.add(h, z)?;
        let (g1, b1) = (pass.p(layer.norm1.0), pass.p(layer.norm1.1));
        let hn = pass.tape.layer_norm(res, g1, b1, T::lit(LAYER_NORM_EPS))?;
        let f = layer.ff1.apply(pass, hn)?;
        let f = pass.tape.relu(f);
        let f = layer.ff2.apply(pass, f)?;
        let f = pass.dropout(f, params.dropout)?;
        let res = pass.tape.add(hn, f)?;
        let (g2, b2) = (pass.p(layer.norm2.0), pass.p(layer.norm2.1));
        h = pass.tape.layer_norm(res, g2, b2, T::lit(LAYER_NORM_EPS))?;
    }
    Ok(params.output.apply(pass, h)?)
}

/// Token features (`n_tok × D`) to sequence features (`n_tok × M`).
pub fn transformer_encode<T: Scalar>(pass: &mut Pass<'_, T>, params: &EncoderParams, tokens: Var) -> Result<Var, ModelError> {
    if pass.tape.value(tokens).rows() == 0 {
        return Err(ModelError::Input("sequence encoder needs at least one token".into()));
    }
    let x = params.input.apply(pass, tokens)?;
    encode_projected(pass, params, x)
}
