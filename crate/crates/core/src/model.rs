//! The full quality model: frozen backbone, embedding, encoder over one
//! feature stream, decoder over another, and the scalar head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{diff_features, normalize_image, Backbone, BackboneSpec, FeatureMap};
use crate::embedding::{assemble_sequence_var, init_embedding, project_and_flatten_var, EmbeddingParams};
use crate::error::{IqtError, Result};
use crate::io::ImageBuffer;
use crate::params::{BoundParams, ModelParams};
use crate::tensor::{Graph, Real, Var};
use crate::transformer::{
    decoder_forward, encoder_forward, head_forward, init_transformer, AttentionRecord, TransformerConfig,
    TransformerParams,
};

/// Which feature map feeds a transformer stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Dist,
    Ref,
    Diff,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Dist => "dist",
            Stream::Ref => "ref",
            Stream::Diff => "diff",
        }
    }
}

/// Where the reference/distorted difference is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DiffLevel {
    /// `backbone(ref) − backbone(dist)`.
    Feature,
    /// `backbone(ref − dist)` on normalized RGB.
    Image,
}

impl DiffLevel {
    pub fn name(self) -> &'static str {
        match self {
            DiffLevel::Feature => "feature",
            DiffLevel::Image => "image",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(DiffLevel::Feature),
            "image" => Ok(DiffLevel::Image),
            other => Err(IqtError::Config(format!("unknown diff level `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Routing {
    pub encoder: Stream,
    pub decoder: Stream,
    pub diff_level: DiffLevel,
}

impl Routing {
    /// Difference features into the encoder, reference features into the
    /// decoder.
    pub const DEFAULT: Routing = Routing {
        encoder: Stream::Diff,
        decoder: Stream::Ref,
        diff_level: DiffLevel::Feature,
    };

    pub fn uses(&self, s: Stream) -> bool {
        self.encoder == s || self.decoder == s
    }
}

impl Default for Routing {
    fn default() -> Self {
        Routing::DEFAULT
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub transformer: TransformerConfig,
    pub backbone: BackboneSpec,
    pub patch_size: usize,
    pub routing: Routing,
}

/// Named hyper-parameter sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// L=2, D=256, 4 heads, D_feat=1024, D_head=512, 256 px patches.
    Iqt,
    /// L=1, D=128, 4 heads, D_feat=1024, D_head=128, 192 px patches.
    IqtC,
    /// Desk-scale model on the toy backbone: L=1, D=32, 32 px patches.
    Tiny,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "iqt" => Ok(Preset::Iqt),
            "iqt-c" => Ok(Preset::IqtC),
            "tiny" => Ok(Preset::Tiny),
            other => Err(IqtError::Config(format!("unknown preset `{other}` (iqt, iqt-c, tiny)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Iqt => "iqt",
            Preset::IqtC => "iqt-c",
            Preset::Tiny => "tiny",
        }
    }

    pub fn config(self) -> ModelConfig {
        match self {
            Preset::Iqt => ModelConfig {
                transformer: TransformerConfig::IQT,
                backbone: BackboneSpec::inception_resnet_v2(),
                patch_size: 256,
                routing: Routing::DEFAULT,
            },
            Preset::IqtC => ModelConfig {
                transformer: TransformerConfig::IQT_C,
                backbone: BackboneSpec::inception_resnet_v2(),
                patch_size: 192,
                routing: Routing::DEFAULT,
            },
            Preset::Tiny => ModelConfig {
                transformer: TransformerConfig {
                    layers: 1,
                    n_heads: 4,
                    d_model: 32,
                    d_feat: 64,
                    d_head: 32,
                },
                backbone: BackboneSpec::toy(6, 4, 0),
                patch_size: 32,
                routing: Routing::DEFAULT,
            },
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.transformer.validate()?;
        self.backbone.validate()?;
        if self.backbone.kind == crate::backbone::BackboneKind::ToyCnn
            && !self.patch_size.is_multiple_of(crate::backbone::TOY_DOWNSAMPLE)
        {
            return Err(IqtError::Config(format!(
                "patch size {} is not a multiple of the toy stem's downsampling {}",
                self.patch_size,
                crate::backbone::TOY_DOWNSAMPLE
            )));
        }
        self.grid().map(|_| ())
    }

    /// Feature grid of one patch.
    pub fn grid(&self) -> Result<(usize, usize)> {
        self.backbone.grid(self.patch_size, self.patch_size)
    }

    /// Spatial tokens per sequence, `N = H·W`.
    pub fn n_patches(&self) -> Result<usize> {
        self.grid().map(|(h, w)| h * w)
    }
}

/// Backbone outputs for one reference/distorted pair. Streams the routing
/// does not need are left empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamFeatures {
    pub reference: Option<FeatureMap>,
    pub distorted: Option<FeatureMap>,
    pub difference: Option<FeatureMap>,
}

impl StreamFeatures {
    pub fn get(&self, s: Stream) -> Result<&FeatureMap> {
        let slot = match s {
            Stream::Ref => &self.reference,
            Stream::Dist => &self.distorted,
            Stream::Diff => &self.difference,
        };
        slot.as_ref()
            .ok_or_else(|| IqtError::Contract(format!("{} features were not computed", s.name())))
    }

    /// Feature-level streams computed from two maps.
    pub fn from_maps(f_ref: FeatureMap, f_dist: FeatureMap) -> Result<Self> {
        let diff = diff_features(&f_ref, &f_dist)?;
        Ok(StreamFeatures {
            reference: Some(f_ref),
            distorted: Some(f_dist),
            difference: Some(diff),
        })
    }
}

/// Graph handles for one forward pass.
pub struct ForwardPass {
    pub score: Var,
    /// Embedded encoder input, `(1+N)×D`.
    pub encoder_seq: Var,
    /// Embedded decoder input, `(1+N)×D`.
    pub decoder_seq: Var,
    pub encoder_out: Var,
    pub decoder_out: Var,
    pub bound: BoundParams,
}

/// Everything captured by a traced forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub score: f64,
    pub encoder_input: FeatureMap,
    pub decoder_input: FeatureMap,
    pub attention: Vec<AttentionRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IqtModel<T: Real = f32> {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub params: ModelParams<T>,
}

impl<T: Real> IqtModel<T> {
    /// Fresh parameters drawn from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::from_spec(config.backbone.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        init_embedding(
            &mut params,
            config.backbone.channels(),
            config.transformer.d_model,
            config.n_patches()?,
            &mut rng,
        );
        init_transformer(&mut params, &config.transformer, &mut rng);
        Ok(IqtModel {
            config,
            backbone,
            params,
        })
    }

    pub fn cast<U: Real>(&self) -> IqtModel<U> {
        IqtModel {
            config: self.config.clone(),
            backbone: self.backbone.clone(),
            params: self.params.cast(),
        }
    }

    /// Backbone features for the streams the routing needs.
    pub fn features(&self, reference: &ImageBuffer, distorted: &ImageBuffer) -> Result<StreamFeatures> {
        if (reference.height(), reference.width()) != (distorted.height(), distorted.width()) {
            return Err(IqtError::shape(
                "features",
                &[reference.height(), reference.width()],
                &[distorted.height(), distorted.width()],
            ));
        }
        let r = self.config.routing;
        let (h, w) = (reference.height(), reference.width());
        let need_ref = r.uses(Stream::Ref) || (r.uses(Stream::Diff) && r.diff_level == DiffLevel::Feature);
        let need_dist = r.uses(Stream::Dist) || (r.uses(Stream::Diff) && r.diff_level == DiffLevel::Feature);
        let norm_ref = normalize_image(reference);
        let norm_dist = normalize_image(distorted);
        let mut out = StreamFeatures::default();
        if need_ref {
            out.reference = Some(self.backbone.extract_normalized(h, w, &norm_ref)?);
        }
        if need_dist {
            out.distorted = Some(self.backbone.extract_normalized(h, w, &norm_dist)?);
        }
        if r.uses(Stream::Diff) {
            out.difference = Some(match r.diff_level {
                DiffLevel::Feature => diff_features(
                    out.reference.as_ref().expect("computed above"),
                    out.distorted.as_ref().expect("computed above"),
                )?,
                DiffLevel::Image => {
                    let delta: Vec<f32> = norm_ref.iter().zip(&norm_dist).map(|(a, b)| a - b).collect();
                    self.backbone.extract_normalized(h, w, &delta)?
                }
            });
        }
        Ok(out)
    }

    fn check_grid(&self, f: &FeatureMap) -> Result<()> {
        let (gh, gw) = self.config.grid()?;
        let expected = [gh, gw, self.config.backbone.channels()];
        let got = [f.height(), f.width(), f.channels()];
        if got != expected {
            return Err(IqtError::shape("model input features", &got, &expected));
        }
        Ok(())
    }

    /// Records one forward pass on `g`; parameters become leaves that
    /// require gradients when `trainable` is set.
    pub fn forward_on(
        &self,
        g: &mut Graph<T>,
        feats: &StreamFeatures,
        trainable: bool,
        mut records: Option<&mut Vec<AttentionRecord>>,
    ) -> Result<ForwardPass> {
        let routing = self.config.routing;
        let cfg = &self.config.transformer;
        let enc_feat = feats.get(routing.encoder)?;
        let dec_feat = feats.get(routing.decoder)?;
        self.check_grid(enc_feat)?;
        self.check_grid(dec_feat)?;

        let bound = self.params.bind(g, trainable);
        let emb = EmbeddingParams::bind(&bound)?;
        let tp = TransformerParams::bind(&bound, cfg)?;

        let enc_cells = g.constant(enc_feat.to_matrix());
        let enc_x = project_and_flatten_var(g, enc_cells, emb.proj_weight, emb.proj_bias)?;
        let enc_seq = assemble_sequence_var(g, enc_x, emb.quality_enc, emb.pos_enc)?;

        let dec_cells = g.constant(dec_feat.to_matrix());
        let dec_x = project_and_flatten_var(g, dec_cells, emb.proj_weight, emb.proj_bias)?;
        let dec_seq = assemble_sequence_var(g, dec_x, emb.quality_dec, emb.pos_dec)?;

        let encoder_out = encoder_forward(g, enc_seq, &tp.encoder, cfg, records.as_deref_mut())?;
        let decoder_out = decoder_forward(g, dec_seq, encoder_out, &tp.decoder, cfg, records)?;
        let quality = g.row(decoder_out, 0)?;
        let score = head_forward(g, quality, &tp.head)?;
        Ok(ForwardPass {
            score,
            encoder_seq: enc_seq,
            decoder_seq: dec_seq,
            encoder_out,
            decoder_out,
            bound,
        })
    }

    pub fn score_features(&self, feats: &StreamFeatures) -> Result<f64> {
        let mut g = Graph::new();
        let pass = self.forward_on(&mut g, feats, false, None)?;
        Ok(g.value(pass.score).data()[0].to_f64_lossy())
    }

    /// Score of one patch pair.
    pub fn forward_score(&self, ref_patch: &ImageBuffer, dist_patch: &ImageBuffer) -> Result<f64> {
        let p = self.config.patch_size;
        for img in [ref_patch, dist_patch] {
            if (img.height(), img.width()) != (p, p) {
                return Err(IqtError::shape("forward_score", &[img.height(), img.width()], &[p, p]));
            }
        }
        self.score_features(&self.features(ref_patch, dist_patch)?)
    }

    /// Forward pass that keeps the routed inputs and every attention map.
    pub fn forward_traced(&self, feats: &StreamFeatures) -> Result<ForwardTrace> {
        let mut g = Graph::new();
        let mut attention = Vec::new();
        let pass = self.forward_on(&mut g, feats, false, Some(&mut attention))?;
        Ok(ForwardTrace {
            score: g.value(pass.score).data()[0].to_f64_lossy(),
            encoder_input: feats.get(self.config.routing.encoder)?.clone(),
            decoder_input: feats.get(self.config.routing.decoder)?.clone(),
            attention,
        })
    }
}
