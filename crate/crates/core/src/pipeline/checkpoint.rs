//! IQTC checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "IQTC" | version u16
//! layers, n_heads, d_model, d_feat, d_head          u32 × 5
//! backbone kind u8 | stages, stage_channels, stem u32 × 3 | seed u64
//! patch_size u32
//! encoder stream u8 | decoder stream u8 | diff level u8
//! step u64 | mos_min f64 | mos_max f64
//! tensor count u32
//! per tensor: name_len u32 | name (UTF-8) | rank u32 | dims u32 × rank | f32 × numel
//! ```
//!
//! Frozen toy-backbone weights are stored as tensors prefixed `backbone.`.

use std::fs;
use std::path::Path;

use crate::backbone::{Backbone, BackboneKind, BackboneSpec, ToyBackbone};
use crate::error::{IqtError, Result};
use crate::model::{DiffLevel, IqtModel, ModelConfig, Routing, Stream};
use crate::params::ModelParams;
use crate::tensor::Tensor;
use crate::transformer::TransformerConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IQTC";
pub const CHECKPOINT_VERSION: u16 = 1;

/// A trained (or freshly initialized) model plus training metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: IqtModel<f32>,
    pub step: u64,
    /// MOS range used to normalize training targets.
    pub mos_range: (f64, f64),
}

impl Checkpoint {
    pub fn new(model: IqtModel<f32>) -> Self {
        Checkpoint {
            model,
            step: 0,
            mos_range: (0.0, 1.0),
        }
    }

    /// Maps a normalized prediction back onto the training MOS scale.
    pub fn to_mos_scale(&self, score: f64) -> f64 {
        let (lo, hi) = self.mos_range;
        lo + score * (hi - lo)
    }
}

fn stream_code(s: Stream) -> u8 {
    match s {
        Stream::Dist => 0,
        Stream::Ref => 1,
        Stream::Diff => 2,
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let cfg = &ckpt.model.config;
    let t = &cfg.transformer;
    let b = &cfg.backbone;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [t.layers, t.n_heads, t.d_model, t.d_feat, t.d_head] {
        push_u32(&mut out, v);
    }
    out.push(match b.kind {
        BackboneKind::ToyCnn => 0,
        BackboneKind::FeatureFile => 1,
    });
    for v in [b.stages, b.stage_channels, b.stem_channels] {
        push_u32(&mut out, v);
    }
    out.extend_from_slice(&b.seed.to_le_bytes());
    push_u32(&mut out, cfg.patch_size);
    out.push(stream_code(cfg.routing.encoder));
    out.push(stream_code(cfg.routing.decoder));
    out.push(match cfg.routing.diff_level {
        DiffLevel::Feature => 0,
        DiffLevel::Image => 1,
    });
    out.extend_from_slice(&ckpt.step.to_le_bytes());
    out.extend_from_slice(&ckpt.mos_range.0.to_le_bytes());
    out.extend_from_slice(&ckpt.mos_range.1.to_le_bytes());

    let backbone = ckpt.model.backbone.tensors();
    let tensors: Vec<(&str, &Tensor<f32>)> = backbone
        .iter()
        .map(|(k, v)| (k.as_str(), v))
        .chain(ckpt.model.params.iter())
        .collect();
    push_u32(&mut out, tensors.len());
    for (name, t) in tensors {
        push_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, t.rank());
        for &d in t.shape() {
            push_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, msg: impl Into<String>) -> IqtError {
        IqtError::Format {
            what: "IQTC checkpoint",
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(
                self.bytes.len(),
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            )),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn stream(&mut self) -> Result<Stream> {
        let at = self.pos;
        match self.u8()? {
            0 => Ok(Stream::Dist),
            1 => Ok(Stream::Ref),
            2 => Ok(Stream::Diff),
            other => Err(self.err(at, format!("invalid stream code {other}"))),
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(r.err(0, "bad magic, expected \"IQTC\""));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.err(4, format!("version {version} unsupported, expected {CHECKPOINT_VERSION}")));
    }
    let transformer = TransformerConfig {
        layers: r.u32()?,
        n_heads: r.u32()?,
        d_model: r.u32()?,
        d_feat: r.u32()?,
        d_head: r.u32()?,
    };
    let kind_at = r.pos;
    let kind = match r.u8()? {
        0 => BackboneKind::ToyCnn,
        1 => BackboneKind::FeatureFile,
        other => return Err(r.err(kind_at, format!("invalid backbone kind {other}"))),
    };
    let backbone_spec = BackboneSpec {
        kind,
        stages: r.u32()?,
        stage_channels: r.u32()?,
        stem_channels: r.u32()?,
        seed: r.u64()?,
    };
    let patch_size = r.u32()?;
    let encoder = r.stream()?;
    let decoder = r.stream()?;
    let diff_at = r.pos;
    let diff_level = match r.u8()? {
        0 => DiffLevel::Feature,
        1 => DiffLevel::Image,
        other => return Err(r.err(diff_at, format!("invalid diff level {other}"))),
    };
    let step = r.u64()?;
    let mos_range = (r.f64()?, r.f64()?);
    let config = ModelConfig {
        transformer,
        backbone: backbone_spec.clone(),
        patch_size,
        routing: Routing {
            encoder,
            decoder,
            diff_level,
        },
    };
    config
        .validate()
        .map_err(|e| r.err(6, format!("invalid configuration block: {e}")))?;

    let count = r.u32()?;
    let mut backbone_tensors = Vec::new();
    let mut params = ModelParams::new();
    for _ in 0..count {
        let at = r.pos;
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| r.err(at + 4, "tensor name is not UTF-8"))?
            .to_string();
        let rank_at = r.pos;
        let rank = r.u32()?;
        if rank == 0 || rank > 8 {
            return Err(r.err(rank_at, format!("tensor `{name}` has unsupported rank {rank}")));
        }
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0 && n <= bytes.len() / 4)
            .ok_or_else(|| r.err(rank_at, format!("tensor `{name}` has invalid dims {dims:?}")))?;
        let payload = r.take(numel * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(dims, data)?;
        if name.starts_with("backbone.") {
            backbone_tensors.push((name, t));
        } else {
            params.insert(name, t);
        }
    }
    if r.pos != bytes.len() {
        return Err(r.err(r.pos, "trailing bytes after last tensor"));
    }

    let backbone = match kind {
        BackboneKind::ToyCnn => Backbone::Toy(ToyBackbone::from_tensors(backbone_spec, |n| {
            backbone_tensors.iter().find(|(k, _)| k == n).map(|(_, t)| t.clone())
        })?),
        BackboneKind::FeatureFile => Backbone::FeatureFile(backbone_spec),
    };
    let model = IqtModel {
        config,
        backbone,
        params,
    };
    check_parameter_shapes(&model)?;
    Ok(Checkpoint {
        model,
        step,
        mos_range,
    })
}

/// Every expected parameter is present with the shape a fresh model has.
fn check_parameter_shapes(model: &IqtModel<f32>) -> Result<()> {
    let reference = IqtModel::<f32>::init(model.config.clone(), 0)?;
    if reference.params.len() != model.params.len() {
        return Err(IqtError::Contract(format!(
            "checkpoint holds {} parameter tensors, the configuration needs {}",
            model.params.len(),
            reference.params.len()
        )));
    }
    for (name, t) in reference.params.iter() {
        let got = model.params.get(name)?;
        if got.shape() != t.shape() {
            return Err(IqtError::shape("checkpoint parameter", got.shape(), t.shape()));
        }
    }
    Ok(())
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| IqtError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| IqtError::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    fn tiny_ckpt() -> Checkpoint {
        let mut cfg = Preset::Tiny.config();
        cfg.transformer.d_model = 8;
        cfg.transformer.d_feat = 8;
        cfg.transformer.d_head = 4;
        cfg.patch_size = 16;
        Checkpoint {
            model: IqtModel::init(cfg, 3).unwrap(),
            step: 42,
            mos_range: (1.0, 9.5),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = tiny_ckpt();
        let bytes = encode_checkpoint(&c);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn feature_file_models_round_trip() {
        let mut cfg = Preset::IqtC.config();
        cfg.transformer.d_feat = 16;
        cfg.transformer.d_model = 8;
        cfg.transformer.d_head = 4;
        cfg.backbone.stage_channels = 2;
        cfg.routing = Routing { encoder: Stream::Dist, decoder: Stream::Diff, diff_level: DiffLevel::Feature };
        let c = Checkpoint::new(IqtModel::init(cfg, 0).unwrap());
        assert_eq!(decode_checkpoint(&encode_checkpoint(&c)).unwrap(), c);
    }

    #[test]
    fn corrupted_files_are_rejected_with_offsets() {
        let bytes = encode_checkpoint(&tiny_ckpt());
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(IqtError::Format { offset: 0, .. })));

        let mut ver = bytes.clone();
        ver[4] = 7;
        let err = decode_checkpoint(&ver).unwrap_err().to_string();
        assert!(err.contains("version 7"), "{err}");

        for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
            match decode_checkpoint(&bytes[..cut]) {
                Err(IqtError::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }

        let mut extra = bytes;
        extra.push(1);
        assert!(decode_checkpoint(&extra).is_err());
    }

    #[test]
    fn missing_tensor_is_an_error() {
        let mut c = tiny_ckpt();
        let mut params = ModelParams::new();
        for (k, v) in c.model.params.iter().skip(1) {
            params.insert(k, v.clone());
        }
        c.model.params = params;
        assert!(decode_checkpoint(&encode_checkpoint(&c)).is_err());
    }

    #[test]
    fn mos_scale_mapping() {
        let c = tiny_ckpt();
        assert_eq!(c.to_mos_scale(0.0), 1.0);
        assert_eq!(c.to_mos_scale(1.0), 9.5);
    }
}
