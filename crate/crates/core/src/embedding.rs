//! Feature map → token sequence: 1×1 channel projection, row-major
//! flattening, quality-token prepend and learned positional embeddings.

use rand_chacha::ChaCha8Rng;

use crate::backbone::FeatureMap;
use crate::error::{IqtError, Result};
use crate::params::{trunc_normal, xavier_uniform, BoundParams, ModelParams};
use crate::tensor::{Graph, Real, Tensor, Var};

pub const PROJ_WEIGHT: &str = "embed.proj.weight";
pub const PROJ_BIAS: &str = "embed.proj.bias";
pub const QUALITY_ENC: &str = "embed.quality_enc";
pub const QUALITY_DEC: &str = "embed.quality_dec";
pub const POS_ENC: &str = "embed.pos_enc";
pub const POS_DEC: &str = "embed.pos_dec";

/// Graph handles for the embedding parameters. The encoder and decoder
/// streams each own a quality token and a positional table; the channel
/// projection is shared.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingParams {
    pub proj_weight: Var,
    pub proj_bias: Var,
    pub quality_enc: Var,
    pub quality_dec: Var,
    pub pos_enc: Var,
    pub pos_dec: Var,
}

impl EmbeddingParams {
    pub fn bind(p: &BoundParams) -> Result<Self> {
        Ok(EmbeddingParams {
            proj_weight: p.var(PROJ_WEIGHT)?,
            proj_bias: p.var(PROJ_BIAS)?,
            quality_enc: p.var(QUALITY_ENC)?,
            quality_dec: p.var(QUALITY_DEC)?,
            pos_enc: p.var(POS_ENC)?,
            pos_dec: p.var(POS_DEC)?,
        })
    }
}

pub fn init_embedding<T: Real>(
    params: &mut ModelParams<T>,
    channels: usize,
    d_model: usize,
    n_patches: usize,
    rng: &mut ChaCha8Rng,
) {
    params.insert(PROJ_WEIGHT, xavier_uniform(channels, d_model, rng));
    params.insert(PROJ_BIAS, Tensor::zeros(&[d_model]));
    params.insert(QUALITY_ENC, trunc_normal(&[1, d_model], 0.02, rng));
    params.insert(QUALITY_DEC, trunc_normal(&[1, d_model], 0.02, rng));
    params.insert(POS_ENC, trunc_normal(&[1 + n_patches, d_model], 0.02, rng));
    params.insert(POS_DEC, trunc_normal(&[1 + n_patches, d_model], 0.02, rng));
}

/// Maps every cell of an `N × C` flattened feature matrix to `D` channels.
pub fn project_and_flatten_var<T: Real>(
    g: &mut Graph<T>,
    cells: Var,
    weight: Var,
    bias: Var,
) -> Result<Var> {
    let (_, c) = g.value(cells).dims2()?;
    let (wc, _) = g.value(weight).dims2()?;
    if c != wc {
        return Err(IqtError::shape("project_and_flatten", g.shape(cells), g.shape(weight)));
    }
    let y = g.matmul(cells, weight)?;
    g.add_row(y, bias)
}

/// `[token + pos₀; x₁ + pos₁; …; x_N + pos_N]`.
pub fn assemble_sequence_var<T: Real>(g: &mut Graph<T>, x: Var, token: Var, pos: Var) -> Result<Var> {
    let (n, d) = g.value(x).dims2()?;
    if g.shape(token) != [1, d] {
        return Err(IqtError::shape("assemble_sequence", g.shape(x), g.shape(token)));
    }
    if g.shape(pos) != [n + 1, d] {
        return Err(IqtError::shape("assemble_sequence", g.shape(x), g.shape(pos)));
    }
    let seq = g.concat_rows(&[token, x])?;
    g.add(seq, pos)
}

/// Transformer input: quality slot at row 0, cells 1..=N in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence<T: Real = f32> {
    pub tokens: Tensor<T>,
}

impl<T: Real> TokenSequence<T> {
    pub fn n_patches(&self) -> usize {
        self.tokens.shape()[0] - 1
    }

    pub fn width(&self) -> usize {
        self.tokens.shape()[1]
    }
}

/// Eager form of [`project_and_flatten_var`].
pub fn project_and_flatten<T: Real>(f: &FeatureMap, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let cells = g.constant(f.to_matrix());
    let w = g.constant(weight.clone());
    let b = g.constant(bias.clone());
    let out = project_and_flatten_var(&mut g, cells, w, b)?;
    Ok(g.value(out).clone())
}

/// Eager form of [`assemble_sequence_var`].
pub fn assemble_sequence<T: Real>(x: &Tensor<T>, token: &Tensor<T>, pos: &Tensor<T>) -> Result<TokenSequence<T>> {
    let mut g = Graph::new();
    let (xv, tv, pv) = (g.constant(x.clone()), g.constant(token.clone()), g.constant(pos.clone()));
    let out = assemble_sequence_var(&mut g, xv, tv, pv)?;
    Ok(TokenSequence {
        tokens: g.value(out).clone(),
    })
}
