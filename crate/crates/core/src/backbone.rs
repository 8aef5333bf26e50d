//! Frozen multi-stage feature extraction.
//!
//! A backbone turns an RGB image into a feature map made of `S` equal-shape
//! stage outputs concatenated along channels (stage 0 first). Two kinds
//! exist: a small seeded-random convolutional stem that runs in-process,
//! and a feature-file kind whose maps are produced elsewhere and loaded
//! from IQTF files.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{IqtError, Result};
use crate::io::ImageBuffer;
use crate::tensor::{Real, Tensor};

/// Total per-axis downsampling of the toy stem (three stride-2 convs).
pub const TOY_DOWNSAMPLE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackboneKind {
    ToyCnn,
    FeatureFile,
}

impl BackboneKind {
    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::ToyCnn => "toy-cnn",
            BackboneKind::FeatureFile => "feature-file",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "toy" | "toy-cnn" => Ok(BackboneKind::ToyCnn),
            "feature-file" | "features" => Ok(BackboneKind::FeatureFile),
            other => Err(IqtError::Config(format!(
                "unknown backbone `{other}` (expected toy-cnn or feature-file)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub stages: usize,
    pub stage_channels: usize,
    /// Width of the toy stem; unused by feature files.
    pub stem_channels: usize,
    /// Seed for the toy stem's frozen weights.
    pub seed: u64,
}

impl BackboneSpec {
    pub fn toy(stages: usize, stage_channels: usize, seed: u64) -> Self {
        BackboneSpec {
            kind: BackboneKind::ToyCnn,
            stages,
            stage_channels,
            stem_channels: 8,
            seed,
        }
    }

    pub fn feature_file(stages: usize, stage_channels: usize) -> Self {
        BackboneSpec {
            kind: BackboneKind::FeatureFile,
            stages,
            stage_channels,
            stem_channels: 0,
            seed: 0,
        }
    }

    /// Six 320-channel stages, as produced by the Inception-ResNet-V2
    /// `mixed_5b` and `block35_{2,4,6,8,10}` layers.
    pub fn inception_resnet_v2() -> Self {
        Self::feature_file(6, 320)
    }

    pub fn channels(&self) -> usize {
        self.stages * self.stage_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.stage_channels == 0 {
            return Err(IqtError::Config(format!(
                "backbone needs at least one stage and channel, got S={} c={}",
                self.stages, self.stage_channels
            )));
        }
        if self.kind == BackboneKind::ToyCnn && self.stem_channels == 0 {
            return Err(IqtError::Config("toy stem width must be positive".into()));
        }
        Ok(())
    }

    /// Feature-grid extent for one input axis of length `len`.
    pub fn grid_extent(&self, len: usize) -> Result<usize> {
        let extent = match self.kind {
            BackboneKind::ToyCnn => (len >= TOY_DOWNSAMPLE).then(|| toy_extent(len)),
            BackboneKind::FeatureFile => inception_extent(len),
        };
        extent.ok_or_else(|| IqtError::Size {
            height: len,
            width: len,
            min_height: self.min_input(),
            min_width: self.min_input(),
        })
    }

    pub fn grid(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let too_small = || IqtError::Size {
            height,
            width,
            min_height: self.min_input(),
            min_width: self.min_input(),
        };
        let h = self.grid_extent(height).map_err(|_| too_small())?;
        let w = self.grid_extent(width).map_err(|_| too_small())?;
        Ok((h, w))
    }

    /// Smallest accepted input side.
    pub fn min_input(&self) -> usize {
        match self.kind {
            BackboneKind::ToyCnn => TOY_DOWNSAMPLE,
            BackboneKind::FeatureFile => (1..).find(|&n| inception_extent(n).is_some()).unwrap_or(0),
        }
    }
}

fn toy_extent(len: usize) -> usize {
    (0..3).fold(len, |n, _| n.div_ceil(2))
}

/// Spatial size after the Inception-ResNet-V2 stem up to `mixed_5b`:
/// 3×3/2 valid, 3×3 valid, 3×3 same, maxpool 3/2, 1×1, 3×3 valid, maxpool 3/2.
fn inception_extent(len: usize) -> Option<usize> {
    let valid = |n: usize, k: usize, s: usize| (n >= k).then(|| (n - k) / s + 1);
    let n = valid(len, 3, 2)?;
    let n = valid(n, 3, 1)?;
    let n = valid(n, 3, 2)?;
    let n = valid(n, 3, 1)?;
    valid(n, 3, 2)
}

/// Dense `H × W × C` feature array, row-major with channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(IqtError::Contract(format!(
                "feature map extents must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(IqtError::Contract(format!(
                "{height}x{width}x{channels} feature map needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Cells flattened row-major into an `N × C` matrix, `N = H·W`.
    pub fn to_matrix<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.height * self.width, self.channels],
            self.data.iter().map(|&v| T::from_f32(v).expect("finite")).collect(),
        )
        .expect("extents are positive")
    }
}

/// `f_ref − f_dist`, elementwise.
pub fn diff_features(f_ref: &FeatureMap, f_dist: &FeatureMap) -> Result<FeatureMap> {
    if f_ref.dims() != f_dist.dims() {
        let (a, b) = (f_ref.dims(), f_dist.dims());
        return Err(IqtError::shape("diff_features", &[a.0, a.1, a.2], &[b.0, b.1, b.2]));
    }
    let data = f_ref.data.iter().zip(&f_dist.data).map(|(r, d)| r - d).collect();
    FeatureMap::new(f_ref.height, f_ref.width, f_ref.channels, data)
}

/// Zero-padded 3×3 convolution followed by ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3x3 {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// `[out][ky][kx][in]`
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv3x3 {
    fn seeded(in_channels: usize, out_channels: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / (9 * in_channels) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let weight = (0..out_channels * 9 * in_channels)
            .map(|_| normal.sample(rng) as f32)
            .collect();
        Conv3x3 {
            in_channels,
            out_channels,
            stride,
            weight,
            bias: vec![0.0; out_channels],
        }
    }

    fn forward(&self, h: usize, w: usize, input: &[f32]) -> (usize, usize, Vec<f32>) {
        let (ic, oc, s) = (self.in_channels, self.out_channels, self.stride);
        let (oh, ow) = (h.div_ceil(s), w.div_ceil(s));
        let mut out = vec![0.0f32; oh * ow * oc];
        for oy in 0..oh {
            for ox in 0..ow {
                let cell = &mut out[(oy * ow + ox) * oc..(oy * ow + ox + 1) * oc];
                cell.copy_from_slice(&self.bias);
                for ky in 0..3 {
                    let iy = (oy * s + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * s + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let px = &input[(iy as usize * w + ix as usize) * ic..][..ic];
                        for (o, acc) in cell.iter_mut().enumerate() {
                            let wk = &self.weight[((o * 3 + ky) * 3 + kx) * ic..][..ic];
                            *acc += wk.iter().zip(px).map(|(a, b)| a * b).sum::<f32>();
                        }
                    }
                }
                for v in cell.iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        (oh, ow, out)
    }

    fn tensors(&self, prefix: &str) -> [(String, Tensor<f32>); 2] {
        [
            (
                format!("{prefix}.weight"),
                Tensor::new(
                    vec![self.out_channels, 3, 3, self.in_channels],
                    self.weight.clone(),
                )
                .expect("conv weight shape"),
            ),
            (
                format!("{prefix}.bias"),
                Tensor::new(vec![self.out_channels], self.bias.clone()).expect("conv bias shape"),
            ),
        ]
    }

    fn from_tensors(weight: &Tensor<f32>, bias: &Tensor<f32>, stride: usize) -> Result<Self> {
        match (weight.shape(), bias.shape()) {
            (&[o, 3, 3, i], &[ob]) if o == ob => Ok(Conv3x3 {
                in_channels: i,
                out_channels: o,
                stride,
                weight: weight.data().to_vec(),
                bias: bias.data().to_vec(),
            }),
            (ws, bs) => Err(IqtError::shape("conv3x3", ws, bs)),
        }
    }
}

/// Three stride-2 stem convolutions, then `S` parallel stride-1 stages.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyBackbone {
    spec: BackboneSpec,
    stem: Vec<Conv3x3>,
    stages: Vec<Conv3x3>,
}

impl ToyBackbone {
    pub fn new(spec: BackboneSpec) -> Result<Self> {
        spec.validate()?;
        if spec.kind != BackboneKind::ToyCnn {
            return Err(IqtError::Config("ToyBackbone needs a toy-cnn spec".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let w = spec.stem_channels;
        let stem = vec![
            Conv3x3::seeded(3, w, 2, &mut rng),
            Conv3x3::seeded(w, w, 2, &mut rng),
            Conv3x3::seeded(w, w, 2, &mut rng),
        ];
        let stages = (0..spec.stages)
            .map(|_| Conv3x3::seeded(w, spec.stage_channels, 1, &mut rng))
            .collect();
        Ok(ToyBackbone { spec, stem, stages })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn stage_mut(&mut self, index: usize) -> &mut Conv3x3 {
        &mut self.stages[index]
    }

    /// Runs the stem on an already-normalized `h × w × 3` array.
    pub fn extract_normalized(&self, h: usize, w: usize, input: &[f32]) -> Result<FeatureMap> {
        if h < TOY_DOWNSAMPLE || w < TOY_DOWNSAMPLE {
            return Err(IqtError::Size {
                height: h,
                width: w,
                min_height: TOY_DOWNSAMPLE,
                min_width: TOY_DOWNSAMPLE,
            });
        }
        let (mut ch, mut cw, mut x) = (h, w, input.to_vec());
        for conv in &self.stem {
            (ch, cw, x) = conv.forward(ch, cw, &x);
        }
        let c = self.spec.stage_channels;
        let channels = self.spec.channels();
        let mut out = vec![0.0f32; ch * cw * channels];
        for (s, stage) in self.stages.iter().enumerate() {
            let (_, _, y) = stage.forward(ch, cw, &x);
            for cell in 0..ch * cw {
                out[cell * channels + s * c..cell * channels + (s + 1) * c]
                    .copy_from_slice(&y[cell * c..(cell + 1) * c]);
            }
        }
        FeatureMap::new(ch, cw, channels, out)
    }

    pub fn tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let stem = self
            .stem
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.tensors(&format!("backbone.stem.{i}")));
        let stages = self
            .stages
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.tensors(&format!("backbone.stage.{i}")));
        stem.chain(stages).collect()
    }

    /// Rebuilds a stem from tensors named as in [`ToyBackbone::tensors`].
    pub fn from_tensors(spec: BackboneSpec, lookup: impl Fn(&str) -> Option<Tensor<f32>>) -> Result<Self> {
        spec.validate()?;
        let get = |name: String| {
            lookup(&name).ok_or_else(|| IqtError::Contract(format!("missing backbone tensor `{name}`")))
        };
        let conv = |prefix: String, stride: usize| -> Result<Conv3x3> {
            Conv3x3::from_tensors(&get(format!("{prefix}.weight"))?, &get(format!("{prefix}.bias"))?, stride)
        };
        let stem = (0..3)
            .map(|i| conv(format!("backbone.stem.{i}"), 2))
            .collect::<Result<Vec<_>>>()?;
        let stages = (0..spec.stages)
            .map(|i| conv(format!("backbone.stage.{i}"), 1))
            .collect::<Result<Vec<_>>>()?;
        let expected = [(3, spec.stem_channels), (spec.stem_channels, spec.stem_channels)];
        for (i, c) in stem.iter().enumerate() {
            let (ic, oc) = expected[i.min(1)];
            if c.in_channels != ic || c.out_channels != oc {
                return Err(IqtError::Contract(format!("backbone stem layer {i} has wrong width")));
            }
        }
        if stages
            .iter()
            .any(|c| c.in_channels != spec.stem_channels || c.out_channels != spec.stage_channels)
        {
            return Err(IqtError::Contract("backbone stage width disagrees with spec".into()));
        }
        Ok(ToyBackbone { spec, stem, stages })
    }
}

/// A frozen backbone of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Backbone {
    Toy(ToyBackbone),
    FeatureFile(BackboneSpec),
}

impl Backbone {
    pub fn from_spec(spec: BackboneSpec) -> Result<Self> {
        spec.validate()?;
        match spec.kind {
            BackboneKind::ToyCnn => Ok(Backbone::Toy(ToyBackbone::new(spec)?)),
            BackboneKind::FeatureFile => Ok(Backbone::FeatureFile(spec)),
        }
    }

    pub fn spec(&self) -> &BackboneSpec {
        match self {
            Backbone::Toy(t) => t.spec(),
            Backbone::FeatureFile(s) => s,
        }
    }

    /// Runs the backbone on an array already mapped to network input range.
    pub fn extract_normalized(&self, h: usize, w: usize, input: &[f32]) -> Result<FeatureMap> {
        match self {
            Backbone::Toy(t) => t.extract_normalized(h, w, input),
            Backbone::FeatureFile(_) => Err(IqtError::Config(
                "a feature-file backbone cannot process images; supply IQTF feature files instead".into(),
            )),
        }
    }

    pub fn tensors(&self) -> Vec<(String, Tensor<f32>)> {
        match self {
            Backbone::Toy(t) => t.tensors(),
            Backbone::FeatureFile(_) => Vec::new(),
        }
    }
}

/// Maps `[0, 1]` samples to the `[−1, 1]` network input range.
pub fn normalize_image(img: &ImageBuffer) -> Vec<f32> {
    img.data().iter().map(|&v| v * 2.0 - 1.0).collect()
}

/// Concatenated stage features for one image.
pub fn extract_features(image: &ImageBuffer, backbone: &Backbone) -> Result<FeatureMap> {
    let f = backbone.extract_normalized(image.height(), image.width(), &normalize_image(image))?;
    debug_assert_eq!(f.channels(), backbone.spec().channels());
    Ok(f)
}

pub const IQTF_MAGIC: &[u8; 4] = b"IQTF";
pub const IQTF_VERSION: u16 = 1;
const IQTF_HEADER_LEN: usize = 4 + 2 + 12;

pub fn encode_feature_file(f: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(IQTF_HEADER_LEN + f.data.len() * 4);
    out.extend_from_slice(IQTF_MAGIC);
    out.extend_from_slice(&IQTF_VERSION.to_le_bytes());
    for d in [f.height, f.width, f.channels] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &f.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_feature_file(bytes: &[u8]) -> Result<FeatureMap> {
    let err = |offset: usize, msg: String| IqtError::Format {
        what: "IQTF feature file",
        offset: offset as u64,
        msg,
    };
    if bytes.len() < 4 || &bytes[..4] != IQTF_MAGIC {
        return Err(err(0, "bad magic, expected \"IQTF\"".into()));
    }
    if bytes.len() < IQTF_HEADER_LEN {
        return Err(err(bytes.len(), "truncated header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != IQTF_VERSION {
        return Err(err(4, format!("unsupported version {version}")));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    if h == 0 || w == 0 || c == 0 {
        return Err(err(6, format!("zero extent in {h}x{w}x{c}")));
    }
    let payload_len = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| err(6, format!("dimensions {h}x{w}x{c} overflow")))?;
    let payload = &bytes[IQTF_HEADER_LEN..];
    if payload.len() < payload_len {
        return Err(err(
            bytes.len(),
            format!("truncated payload: expected {payload_len} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > payload_len {
        return Err(err(IQTF_HEADER_LEN + payload_len, "trailing bytes after payload".into()));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    FeatureMap::new(h, w, c, data)
}

pub fn save_feature_file(path: impl AsRef<Path>, f: &FeatureMap) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_feature_file(f)).map_err(|e| IqtError::io(path, e))
}

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| IqtError::io(path, e))?;
    decode_feature_file(&bytes)
}
