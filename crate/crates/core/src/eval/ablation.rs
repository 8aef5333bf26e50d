//! The stream-routing ablation: every (encoder, decoder) input pairing
//! plus the variant that takes the difference on RGB pixels.

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backbone::{diff_features, normalize_image, FeatureMap};
use crate::error::{IqtError, Result};
use crate::eval::report::{report_table, CorrelationReport, ReportRow};
use crate::eval::evaluate_samples;
use crate::io::ImageBuffer;
use crate::model::{DiffLevel, IqtModel, Routing, Stream, StreamFeatures};
use crate::pipeline::{train_samples, Sample, TrainConfig};
use crate::tensor::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationConfig {
    /// Row label, `"1"` to `"8"` or `"image"`.
    pub id: &'static str,
    pub routing: Routing,
}

const fn feature_routing(encoder: Stream, decoder: Stream) -> Routing {
    Routing {
        encoder,
        decoder,
        diff_level: DiffLevel::Feature,
    }
}

/// Rows 1-8 of the routing comparison followed by the image-level
/// difference variant of the default routing.
pub fn ablation_configs() -> Vec<AblationConfig> {
    use Stream::*;
    let pairs = [
        (Dist, Dist),
        (Dist, Ref),
        (Ref, Dist),
        (Dist, Diff),
        (Ref, Diff),
        (Diff, Dist),
        (Diff, Ref),
        (Diff, Diff),
    ];
    const IDS: [&str; 8] = ["1", "2", "3", "4", "5", "6", "7", "8"];
    let mut out: Vec<AblationConfig> = pairs
        .iter()
        .zip(IDS)
        .map(|(&(e, d), id)| AblationConfig {
            id,
            routing: feature_routing(e, d),
        })
        .collect();
    out.push(AblationConfig {
        id: "image",
        routing: Routing {
            diff_level: DiffLevel::Image,
            ..Routing::DEFAULT
        },
    });
    out
}

/// Streams observed to reach each stack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutingProbe {
    pub encoder: Vec<Stream>,
    pub decoder: Vec<Stream>,
}

fn random_map(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
    let data = (0..h * w * c).map(|_| StandardNormal.sample(rng)).collect();
    FeatureMap::new(h, w, c, data).expect("consistent extents")
}

fn sequences(model: &IqtModel<f32>, feats: &StreamFeatures) -> Result<(Vec<f32>, Vec<f32>)> {
    let mut g = Graph::new();
    let pass = model.forward_on(&mut g, feats, false, None)?;
    Ok((
        g.value(pass.encoder_seq).data().to_vec(),
        g.value(pass.decoder_seq).data().to_vec(),
    ))
}

/// Injects independent random maps for all three streams, then redraws
/// one stream at a time and records which stack inputs change.
pub fn probe_routing(model: &IqtModel<f32>, seed: u64) -> Result<RoutingProbe> {
    let (gh, gw) = model.config.grid()?;
    let c = model.config.backbone.channels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = StreamFeatures {
        reference: Some(random_map(gh, gw, c, &mut rng)),
        distorted: Some(random_map(gh, gw, c, &mut rng)),
        difference: Some(random_map(gh, gw, c, &mut rng)),
    };
    let (enc0, dec0) = sequences(model, &base)?;
    let mut probe = RoutingProbe {
        encoder: Vec::new(),
        decoder: Vec::new(),
    };
    for stream in [Stream::Dist, Stream::Ref, Stream::Diff] {
        let mut feats = base.clone();
        let fresh = Some(random_map(gh, gw, c, &mut rng));
        match stream {
            Stream::Dist => feats.distorted = fresh,
            Stream::Ref => feats.reference = fresh,
            Stream::Diff => feats.difference = fresh,
        }
        let (enc, dec) = sequences(model, &feats)?;
        if enc != enc0 {
            probe.encoder.push(stream);
        }
        if dec != dec0 {
            probe.decoder.push(stream);
        }
    }
    Ok(probe)
}

/// Determines where the model takes the reference/distorted difference by
/// comparing its difference stream against both candidate computations.
pub fn probe_diff_level(model: &IqtModel<f32>, seed: u64) -> Result<DiffLevel> {
    if !model.config.routing.uses(Stream::Diff) {
        return Err(IqtError::Contract("routing does not use a difference stream".into()));
    }
    let p = model.config.patch_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = || {
        let data = (0..p * p * 3)
            .map(|_| rand::Rng::random::<f32>(&mut rng))
            .collect();
        ImageBuffer::new(p, p, data).expect("consistent extents")
    };
    let (r, d) = (image(), image());
    let observed = model.features(&r, &d)?.difference.expect("routing uses the difference stream");
    let (nr, nd) = (normalize_image(&r), normalize_image(&d));
    let f_ref = model.backbone.extract_normalized(p, p, &nr)?;
    let f_dist = model.backbone.extract_normalized(p, p, &nd)?;
    let delta: Vec<f32> = nr.iter().zip(&nd).map(|(a, b)| a - b).collect();
    let feature_level = diff_features(&f_ref, &f_dist)?;
    let image_level = model.backbone.extract_normalized(p, p, &delta)?;
    match (observed == feature_level, observed == image_level) {
        (true, false) => Ok(DiffLevel::Feature),
        (false, true) => Ok(DiffLevel::Image),
        _ => Err(IqtError::Contract(
            "difference stream matches neither or both candidate computations".into(),
        )),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub config: AblationConfig,
    pub outcome: std::result::Result<CorrelationReport, String>,
}

impl AblationResult {
    pub fn row(&self) -> ReportRow {
        ReportRow {
            config_id: self.config.id.to_string(),
            outcome: self.outcome.clone(),
        }
    }
}

fn run_one(config: &AblationConfig, train: &[Sample], eval: &[Sample], base: &TrainConfig) -> Result<CorrelationReport> {
    let mut cfg = base.clone();
    cfg.model.routing = config.routing;
    let outcome = train_samples(train, &cfg)?;
    Ok(evaluate_samples(eval, &outcome.checkpoint.model)?.report)
}

/// Trains and evaluates every ablation configuration with the same seed
/// and budget. A configuration that fails is reported and skipped.
pub fn run_ablation(train: &[Sample], eval: &[Sample], base: &TrainConfig) -> Vec<AblationResult> {
    ablation_configs()
        .into_iter()
        .map(|config| {
            info!(
                "ablation {}: encoder={} decoder={} diff={}",
                config.id,
                config.routing.encoder.name(),
                config.routing.decoder.name(),
                config.routing.diff_level.name()
            );
            let outcome = run_one(&config, train, eval, base).map_err(|e| {
                warn!("ablation {} failed: {e}", config.id);
                e.to_string()
            });
            AblationResult { config, outcome }
        })
        .collect()
}

/// Plain-text table with the encoder, decoder and difference columns.
pub fn ablation_table(results: &[AblationResult]) -> String {
    let rows: Vec<(ReportRow, Vec<String>)> = results
        .iter()
        .map(|r| {
            let routing = r.config.routing;
            (
                r.row(),
                vec![
                    routing.encoder.name().to_string(),
                    routing.decoder.name().to_string(),
                    routing.diff_level.name().to_string(),
                ],
            )
        })
        .collect();
    report_table("Input routing ablation", &["Encoder", "Decoder", "Diff"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    #[test]
    fn table_rows_match_expected_routings() {
        let c = ablation_configs();
        assert_eq!(c.len(), 9);
        assert_eq!(c[0].routing, feature_routing(Stream::Dist, Stream::Dist));
        assert_eq!(c[6].routing, Routing::DEFAULT);
        assert_eq!(c[8].routing.diff_level, DiffLevel::Image);
        assert_eq!((c[8].routing.encoder, c[8].routing.decoder), (Stream::Diff, Stream::Ref));
        let pairs: std::collections::HashSet<_> = c[..8].iter().map(|a| (a.routing.encoder, a.routing.decoder)).collect();
        assert_eq!(pairs.len(), 8);
    }

    #[test]
    fn probe_finds_every_routing() {
        for config in ablation_configs() {
            let mut mc = Preset::Tiny.config();
            mc.routing = config.routing;
            let model = IqtModel::<f32>::init(mc, 0).unwrap();
            let probe = probe_routing(&model, 9).unwrap();
            assert_eq!(probe.encoder, vec![config.routing.encoder], "config {}", config.id);
            assert_eq!(probe.decoder, vec![config.routing.decoder], "config {}", config.id);
            if config.routing.uses(Stream::Diff) {
                assert_eq!(probe_diff_level(&model, 3).unwrap(), config.routing.diff_level);
            }
        }
    }

    #[test]
    fn failing_configuration_is_marked_and_harness_continues() {
        let train = crate::pipeline::synthetic_ladder(32, 0);
        let mut base = TrainConfig::new(Preset::Tiny.config());
        base.total_steps = 1;
        base.batch_size = 2;
        // too few evaluation rows makes every row fail without aborting
        let results = run_ablation(&train, &train[..3], &base);
        assert_eq!(results.len(), 9);
        assert!(results.iter().all(|r| r.outcome.is_err()));
        assert!(ablation_table(&results).contains("failed"));
    }
}
