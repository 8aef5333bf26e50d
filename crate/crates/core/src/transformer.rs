//! Post-norm transformer encoder/decoder and the MLP prediction head.
//!
//! Encoder layer:  `y' = LN(MHA(y, y, y) + y)`, `y = LN(MLP(y') + y')`.
//! Decoder layer:  `z' = LN(MHA(z, z, z) + z)`,
//!                 `z'' = LN(MHA(z', enc, enc) + z')`,
//!                 `z = LN(MLP(z'') + z'')`.
//! The head reads row 0 (the quality slot) of the decoder output.

use rand_chacha::ChaCha8Rng;

use crate::error::{IqtError, Result};
use crate::params::{xavier_uniform, BoundParams, ModelParams};
use crate::tensor::{Graph, Real, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransformerConfig {
    pub layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_feat: usize,
    pub d_head: usize,
}

impl TransformerConfig {
    /// L=2, heads=4, D=256, D_feat=1024, D_head=512.
    pub const IQT: TransformerConfig = TransformerConfig {
        layers: 2,
        n_heads: 4,
        d_model: 256,
        d_feat: 1024,
        d_head: 512,
    };

    /// L=1, heads=4, D=128, D_feat=1024, D_head=128.
    pub const IQT_C: TransformerConfig = TransformerConfig {
        layers: 1,
        n_heads: 4,
        d_model: 128,
        d_feat: 1024,
        d_head: 128,
    };

    pub fn validate(&self) -> Result<()> {
        let dims = [self.layers, self.n_heads, self.d_model, self.d_feat, self.d_head];
        if dims.contains(&0) {
            return Err(IqtError::Config(format!("transformer extents must be positive: {self:?}")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(IqtError::Config(format!(
                "width {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionStage {
    Encoder,
    DecoderSelf,
    DecoderCross,
}

impl AttentionStage {
    pub fn name(self) -> &'static str {
        match self {
            AttentionStage::Encoder => "encoder",
            AttentionStage::DecoderSelf => "decoder-self",
            AttentionStage::DecoderCross => "decoder-cross",
        }
    }
}

/// Softmax weights of one head in one attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub stage: AttentionStage,
    pub layer: usize,
    pub head: usize,
    /// `queries × keys`, rows sum to one.
    pub weights: Tensor<f64>,
}

/// Where captured attention goes, when tracing is on.
pub struct Trace<'a> {
    pub records: &'a mut Vec<AttentionRecord>,
    pub stage: AttentionStage,
    pub layer: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    fn bind(p: &BoundParams, prefix: &str) -> Result<Self> {
        Ok(Linear {
            weight: p.var(&format!("{prefix}.weight"))?,
            bias: p.var(&format!("{prefix}.bias"))?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let y = g.matmul(x, self.weight)?;
        g.add_row(y, self.bias)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gamma: Var,
    pub beta: Var,
}

impl LayerNormParams {
    fn bind(p: &BoundParams, prefix: &str) -> Result<Self> {
        Ok(LayerNormParams {
            gamma: p.var(&format!("{prefix}.gamma"))?,
            beta: p.var(&format!("{prefix}.beta"))?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        g.layer_norm(x, self.gamma, self.beta, T::from_f64_lossy(LAYER_NORM_EPS))
    }
}

/// Q/K/V/output projections of one attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttentionBlock {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl AttentionBlock {
    fn bind(p: &BoundParams, prefix: &str) -> Result<Self> {
        Ok(AttentionBlock {
            q: Linear::bind(p, &format!("{prefix}.q"))?,
            k: Linear::bind(p, &format!("{prefix}.k"))?,
            v: Linear::bind(p, &format!("{prefix}.v"))?,
            o: Linear::bind(p, &format!("{prefix}.o"))?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    fn bind(p: &BoundParams, prefix: &str) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::bind(p, &format!("{prefix}.fc1"))?,
            fc2: Linear::bind(p, &format!("{prefix}.fc2"))?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.relu(h);
        self.fc2.forward(g, h)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderLayer {
    pub attn: AttentionBlock,
    pub ln1: LayerNormParams,
    pub mlp: Mlp,
    pub ln2: LayerNormParams,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderLayer {
    pub self_attn: AttentionBlock,
    pub ln1: LayerNormParams,
    pub cross_attn: AttentionBlock,
    pub ln2: LayerNormParams,
    pub mlp: Mlp,
    pub ln3: LayerNormParams,
}

/// Graph handles for every transformer and head parameter.
#[derive(Clone, Debug)]
pub struct TransformerParams {
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    pub head: Mlp,
}

impl TransformerParams {
    pub fn bind(p: &BoundParams, cfg: &TransformerConfig) -> Result<Self> {
        let encoder = (0..cfg.layers)
            .map(|l| {
                Ok(EncoderLayer {
                    attn: AttentionBlock::bind(p, &format!("enc.{l}.attn"))?,
                    ln1: LayerNormParams::bind(p, &format!("enc.{l}.ln1"))?,
                    mlp: Mlp::bind(p, &format!("enc.{l}.mlp"))?,
                    ln2: LayerNormParams::bind(p, &format!("enc.{l}.ln2"))?,
                })
            })
            .collect::<Result<_>>()?;
        let decoder = (0..cfg.layers)
            .map(|l| {
                Ok(DecoderLayer {
                    self_attn: AttentionBlock::bind(p, &format!("dec.{l}.self_attn"))?,
                    ln1: LayerNormParams::bind(p, &format!("dec.{l}.ln1"))?,
                    cross_attn: AttentionBlock::bind(p, &format!("dec.{l}.cross_attn"))?,
                    ln2: LayerNormParams::bind(p, &format!("dec.{l}.ln2"))?,
                    mlp: Mlp::bind(p, &format!("dec.{l}.mlp"))?,
                    ln3: LayerNormParams::bind(p, &format!("dec.{l}.ln3"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(TransformerParams {
            encoder,
            decoder,
            head: Mlp::bind(p, "head")?,
        })
    }
}

fn init_linear<T: Real>(p: &mut ModelParams<T>, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    p.insert(format!("{prefix}.weight"), xavier_uniform(fan_in, fan_out, rng));
    p.insert(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]));
}

fn init_layer_norm<T: Real>(p: &mut ModelParams<T>, prefix: &str, d: usize) {
    p.insert(format!("{prefix}.gamma"), Tensor::full(&[d], T::one()));
    p.insert(format!("{prefix}.beta"), Tensor::zeros(&[d]));
}

fn init_attention<T: Real>(p: &mut ModelParams<T>, prefix: &str, d: usize, rng: &mut ChaCha8Rng) {
    for proj in ["q", "k", "v", "o"] {
        init_linear(p, &format!("{prefix}.{proj}"), d, d, rng);
    }
}

/// Adds encoder, decoder and head parameters to `p`.
pub fn init_transformer<T: Real>(p: &mut ModelParams<T>, cfg: &TransformerConfig, rng: &mut ChaCha8Rng) {
    let (d, f) = (cfg.d_model, cfg.d_feat);
    for l in 0..cfg.layers {
        init_attention(p, &format!("enc.{l}.attn"), d, rng);
        init_layer_norm(p, &format!("enc.{l}.ln1"), d);
        init_linear(p, &format!("enc.{l}.mlp.fc1"), d, f, rng);
        init_linear(p, &format!("enc.{l}.mlp.fc2"), f, d, rng);
        init_layer_norm(p, &format!("enc.{l}.ln2"), d);
    }
    for l in 0..cfg.layers {
        init_attention(p, &format!("dec.{l}.self_attn"), d, rng);
        init_layer_norm(p, &format!("dec.{l}.ln1"), d);
        init_attention(p, &format!("dec.{l}.cross_attn"), d, rng);
        init_layer_norm(p, &format!("dec.{l}.ln2"), d);
        init_linear(p, &format!("dec.{l}.mlp.fc1"), d, f, rng);
        init_linear(p, &format!("dec.{l}.mlp.fc2"), f, d, rng);
        init_layer_norm(p, &format!("dec.{l}.ln3"), d);
    }
    init_linear(p, "head.fc1", d, cfg.d_head, rng);
    init_linear(p, "head.fc2", cfg.d_head, 1, rng);
}

/// Scaled dot-product attention over `n_heads` column groups, heads
/// concatenated and passed through the output projection.
pub fn multi_head_attention<T: Real>(
    g: &mut Graph<T>,
    queries: Var,
    keys_values: Var,
    block: &AttentionBlock,
    n_heads: usize,
    mut trace: Option<Trace<'_>>,
) -> Result<Var> {
    let (_, d) = g.value(queries).dims2()?;
    let (_, dk) = g.value(keys_values).dims2()?;
    if d != dk {
        return Err(IqtError::shape("multi_head_attention", g.shape(queries), g.shape(keys_values)));
    }
    if n_heads == 0 || d % n_heads != 0 {
        return Err(IqtError::Config(format!("width {d} is not divisible by {n_heads} heads")));
    }
    let head_dim = d / n_heads;
    let q = block.q.forward(g, queries)?;
    let k = block.k.forward(g, keys_values)?;
    let v = block.v.forward(g, keys_values)?;
    let scale = T::one() / T::from_usize(head_dim).expect("width fits").sqrt();

    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * head_dim, head_dim)?;
        let kh = g.slice_cols(k, h * head_dim, head_dim)?;
        let vh = g.slice_cols(v, h * head_dim, head_dim)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax(scores, 1)?;
        if let Some(t) = trace.as_mut() {
            t.records.push(AttentionRecord {
                stage: t.stage,
                layer: t.layer,
                head: h,
                weights: g.value(attn).cast(),
            });
        }
        heads.push(g.matmul(attn, vh)?);
    }
    let cat = g.concat_cols(&heads)?;
    block.o.forward(g, cat)
}

fn check_width<T: Real>(g: &Graph<T>, x: Var, cfg: &TransformerConfig, op: &'static str) -> Result<()> {
    let (_, d) = g.value(x).dims2()?;
    if d != cfg.d_model {
        return Err(IqtError::shape(op, g.shape(x), &[g.shape(x)[0], cfg.d_model]));
    }
    Ok(())
}

pub fn encoder_forward<T: Real>(
    g: &mut Graph<T>,
    seq: Var,
    layers: &[EncoderLayer],
    cfg: &TransformerConfig,
    mut records: Option<&mut Vec<AttentionRecord>>,
) -> Result<Var> {
    check_width(g, seq, cfg, "encoder_forward")?;
    let mut y = seq;
    for (l, layer) in layers.iter().enumerate() {
        let trace = records.as_deref_mut().map(|r| Trace {
            records: r,
            stage: AttentionStage::Encoder,
            layer: l,
        });
        let a = multi_head_attention(g, y, y, &layer.attn, cfg.n_heads, trace)?;
        let r = g.add(a, y)?;
        let y1 = layer.ln1.forward(g, r)?;
        let m = layer.mlp.forward(g, y1)?;
        let r = g.add(m, y1)?;
        y = layer.ln2.forward(g, r)?;
    }
    Ok(y)
}

pub fn decoder_forward<T: Real>(
    g: &mut Graph<T>,
    seq: Var,
    enc_out: Var,
    layers: &[DecoderLayer],
    cfg: &TransformerConfig,
    mut records: Option<&mut Vec<AttentionRecord>>,
) -> Result<Var> {
    check_width(g, seq, cfg, "decoder_forward")?;
    check_width(g, enc_out, cfg, "decoder_forward")?;
    if g.shape(seq) != g.shape(enc_out) {
        return Err(IqtError::shape("decoder_forward", g.shape(seq), g.shape(enc_out)));
    }
    let mut z = seq;
    for (l, layer) in layers.iter().enumerate() {
        let trace = records.as_deref_mut().map(|r| Trace {
            records: r,
            stage: AttentionStage::DecoderSelf,
            layer: l,
        });
        let a = multi_head_attention(g, z, z, &layer.self_attn, cfg.n_heads, trace)?;
        let r = g.add(a, z)?;
        let z1 = layer.ln1.forward(g, r)?;

        let trace = records.as_deref_mut().map(|r| Trace {
            records: r,
            stage: AttentionStage::DecoderCross,
            layer: l,
        });
        let c = multi_head_attention(g, z1, enc_out, &layer.cross_attn, cfg.n_heads, trace)?;
        let r = g.add(c, z1)?;
        let z2 = layer.ln2.forward(g, r)?;

        let m = layer.mlp.forward(g, z2)?;
        let r = g.add(m, z2)?;
        z = layer.ln3.forward(g, r)?;
    }
    Ok(z)
}

/// `W₂·relu(W₁·f + b₁) + b₂` on the `1 × D` quality row.
pub fn head_forward<T: Real>(g: &mut Graph<T>, quality_row: Var, head: &Mlp) -> Result<Var> {
    head.forward(g, quality_row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{trunc_normal, uniform};
    use rand::SeedableRng;

    fn tiny() -> TransformerConfig {
        TransformerConfig {
            layers: 1,
            n_heads: 2,
            d_model: 8,
            d_feat: 16,
            d_head: 8,
        }
    }

    fn setup(cfg: &TransformerConfig, seed: u64) -> (Graph<f64>, TransformerParams, ModelParams<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::new();
        init_transformer(&mut p, cfg, &mut rng);
        let mut g = Graph::new();
        let bound = p.bind(&mut g, true);
        let tp = TransformerParams::bind(&bound, cfg).unwrap();
        (g, tp, p)
    }

    #[test]
    fn config_validation() {
        assert!(TransformerConfig::IQT.validate().is_ok());
        assert!(TransformerConfig::IQT_C.validate().is_ok());
        let bad = TransformerConfig { d_model: 10, n_heads: 4, ..tiny() };
        assert!(matches!(bad.validate(), Err(IqtError::Config(_))));
        let zero = TransformerConfig { layers: 0, ..tiny() };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn equal_keys_average_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::<f64>::new();
        let d = 4;
        let lin = |g: &mut Graph<f64>, w: Tensor<f64>, b: Tensor<f64>| Linear {
            weight: g.constant(w),
            bias: g.constant(b),
        };
        let block = AttentionBlock {
            q: lin(&mut g, trunc_normal(&[d, d], 1.0, &mut rng), Tensor::zeros(&[d])),
            // zero key weights: every key equals the bias
            k: lin(&mut g, Tensor::zeros(&[d, d]), trunc_normal(&[d], 1.0, &mut rng)),
            v: lin(&mut g, Tensor::eye(d), Tensor::zeros(&[d])),
            o: lin(&mut g, Tensor::eye(d), Tensor::zeros(&[d])),
        };
        let x: Tensor<f64> = uniform(&[5, d], -2.0, 2.0, &mut rng);
        let xv = g.constant(x.clone());
        let mut records = Vec::new();
        let trace = Trace {
            records: &mut records,
            stage: AttentionStage::Encoder,
            layer: 0,
        };
        let out = multi_head_attention(&mut g, xv, xv, &block, 2, Some(trace)).unwrap();
        let mean: Vec<f64> = (0..d).map(|c| (0..5).map(|r| x.row(r)[c]).sum::<f64>() / 5.0).collect();
        for r in 0..5 {
            for (v, m) in g.value(out).row(r).iter().zip(&mean) {
                assert!((v - m).abs() < 1e-12);
            }
        }
        assert_eq!(records.len(), 2);
        for rec in &records {
            assert!(rec.weights.data().iter().all(|&w| (w - 0.2).abs() < 1e-12));
        }
    }

    #[test]
    fn saturated_query_selects_one_value() {
        let mut g = Graph::<f64>::new();
        let d = 2;
        let lin = |g: &mut Graph<f64>, w: Tensor<f64>| Linear {
            weight: g.constant(w),
            bias: g.constant(Tensor::zeros(&[d])),
        };
        let block = AttentionBlock {
            q: lin(&mut g, Tensor::eye(d)),
            k: lin(&mut g, Tensor::eye(d)),
            v: lin(&mut g, Tensor::eye(d)),
            o: lin(&mut g, Tensor::eye(d)),
        };
        let q = g.constant(Tensor::new(vec![1, 2], vec![20.0, 0.0]).unwrap());
        let kv = g.constant(Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0]).unwrap());
        let out = multi_head_attention(&mut g, q, kv, &block, 1, None).unwrap();
        let o = g.value(out).data();
        assert!((o[0] - 1.0).abs() < 1e-3 && o[1].abs() < 1e-3, "{o:?}");
    }

    #[test]
    fn indivisible_heads_rejected() {
        let (mut g, tp, _) = setup(&tiny(), 0);
        let x = g.constant(Tensor::zeros(&[3, 8]));
        let err = multi_head_attention(&mut g, x, x, &tp.encoder[0].attn, 3, None).unwrap_err();
        assert!(matches!(err, IqtError::Config(_)));
    }

    #[test]
    fn tiny_shapes_and_finiteness() {
        let cfg = tiny();
        let (mut g, tp, _) = setup(&cfg, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = g.constant(uniform(&[5, 8], -1.0, 1.0, &mut rng));
        let r = g.constant(uniform(&[5, 8], -1.0, 1.0, &mut rng));
        let y = encoder_forward(&mut g, x, &tp.encoder, &cfg, None).unwrap();
        assert_eq!(g.shape(y), &[5, 8]);
        let z = decoder_forward(&mut g, r, y, &tp.decoder, &cfg, None).unwrap();
        assert_eq!(g.shape(z), &[5, 8]);
        assert!(g.value(z).is_finite());

        let bad = g.constant(Tensor::zeros(&[5, 6]));
        assert!(encoder_forward(&mut g, bad, &tp.encoder, &cfg, None).is_err());
        let short = g.constant(Tensor::zeros(&[4, 8]));
        assert!(decoder_forward(&mut g, r, short, &tp.decoder, &cfg, None).is_err());
    }

    #[test]
    fn decoder_depends_on_encoder_output() {
        let cfg = tiny();
        let (mut g, tp, _) = setup(&cfg, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let r = g.constant(uniform(&[5, 8], -1.0, 1.0, &mut rng));
        let e1 = g.constant(uniform(&[5, 8], -1.0, 1.0, &mut rng));
        let e2 = g.constant(uniform(&[5, 8], -1.0, 1.0, &mut rng));
        let z1 = decoder_forward(&mut g, r, e1, &tp.decoder, &cfg, None).unwrap();
        let z2 = decoder_forward(&mut g, r, e2, &tp.decoder, &cfg, None).unwrap();
        assert_ne!(g.value(z1), g.value(z2));
    }

    #[test]
    fn zeroed_cross_values_keep_shape() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ModelParams::<f64>::new();
        init_transformer(&mut p, &cfg, &mut rng);
        p.get_mut("dec.0.cross_attn.v.weight").unwrap().data_mut().fill(0.0);
        let mut g = Graph::new();
        let tp = TransformerParams::bind(&p.bind(&mut g, false), &cfg).unwrap();
        let r = g.constant(uniform(&[5, 8], -1.0, 1.0, &mut rng));
        let e1 = g.constant(uniform(&[5, 8], -1.0, 1.0, &mut rng));
        let e2 = g.constant(uniform(&[5, 8], -5.0, 5.0, &mut rng));
        let z1 = decoder_forward(&mut g, r, e1, &tp.decoder, &cfg, None).unwrap();
        let z2 = decoder_forward(&mut g, r, e2, &tp.decoder, &cfg, None).unwrap();
        assert_eq!(g.shape(z1), &[5, 8]);
        assert!(g.value(z1).is_finite());
        // with zero value weights the cross block only adds its bias, so the
        // encoder output no longer matters
        assert_eq!(g.value(z1), g.value(z2));
    }

    #[test]
    fn head_cases() {
        let mut g = Graph::<f64>::new();
        let zero_head = Mlp {
            fc1: Linear {
                weight: g.constant(Tensor::zeros(&[4, 3])),
                bias: g.constant(Tensor::zeros(&[3])),
            },
            fc2: Linear {
                weight: g.constant(Tensor::zeros(&[3, 1])),
                bias: g.constant(Tensor::scalar(0.5)),
            },
        };
        let x = g.constant(Tensor::new(vec![1, 4], vec![1.0, -2.0, 3.0, 4.0]).unwrap());
        let s = head_forward(&mut g, x, &zero_head).unwrap();
        assert_eq!(g.value(s).data(), &[0.5]);

        let relu_head = Mlp {
            fc1: Linear {
                weight: g.constant(Tensor::eye(4)),
                bias: g.constant(Tensor::zeros(&[4])),
            },
            fc2: Linear {
                weight: g.constant(Tensor::full(&[4, 1], 1.0)),
                bias: g.constant(Tensor::zeros(&[1])),
            },
        };
        let neg = g.constant(Tensor::full(&[1, 4], -0.7));
        let s = head_forward(&mut g, neg, &relu_head).unwrap();
        assert_eq!(g.value(s).data(), &[0.0]);
    }

    #[test]
    fn head_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (d, h) = (6, 5);
        let w1: Tensor<f64> = uniform(&[d, h], -1.0, 1.0, &mut rng);
        let b1: Tensor<f64> = uniform(&[h], -1.0, 1.0, &mut rng);
        let w2: Tensor<f64> = uniform(&[h, 1], -1.0, 1.0, &mut rng);
        let b2: Tensor<f64> = uniform(&[1], -1.0, 1.0, &mut rng);
        let x: Tensor<f64> = uniform(&[1, d], -1.0, 1.0, &mut rng);

        let mut expected = b2.data()[0];
        for j in 0..h {
            let mut pre = b1.data()[j];
            for i in 0..d {
                pre += x.data()[i] * w1.data()[i * h + j];
            }
            expected += pre.max(0.0) * w2.data()[j];
        }

        let mut g = Graph::new();
        let head = Mlp {
            fc1: Linear {
                weight: g.constant(w1),
                bias: g.constant(b1),
            },
            fc2: Linear {
                weight: g.constant(w2),
                bias: g.constant(b2),
            },
        };
        let xv = g.constant(x);
        let s = head_forward(&mut g, xv, &head).unwrap();
        assert!((g.value(s).data()[0] - expected).abs() < 1e-12);
    }
}
