//! Attention-map post-processing and triptych rendering.
//!
//! Pipeline order is fixed: channel mean, bilinear resize to the image
//! size, min-max normalisation, jet colouring, alpha overlay.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::metrics::{PredictionRecord, PredictionSet};
use crate::seed;

pub const ATTN_MAGIC: &[u8; 4] = b"ATTN";
pub const ATTN_VERSION: u16 = 1;
pub const DEFAULT_ALPHA: f64 = 0.6;
pub const DEFAULT_SAMPLE: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum AttentionError {
    #[error("bad tensor dimensions {0:?} (need (H, W) or (C, H, W), all >= 1)")]
    BadDims(Vec<usize>),
    #[error("attention tensor format error: {0}")]
    Format(String),
    #[error("heat map {heat_w}x{heat_h} does not match image {img_w}x{img_h}")]
    DimMismatch { heat_w: usize, heat_h: usize, img_w: u32, img_h: u32 },
    #[error("tensor is for {tensor:?} but prediction is for {prediction:?}")]
    IdMismatch { tensor: String, prediction: String },
    #[error("alpha {0} outside [0, 1]")]
    BadAlpha(f64),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("png encoding failed: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    pub dims: Vec<usize>,
    /// Row-major.
    pub data: Vec<f32>,
    pub source_image_id: String,
    pub layer: String,
}

/// JSON sidecar stored next to each `.attn` payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSidecar {
    pub image_id: String,
    pub layer: String,
}

impl AttentionTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>, source_image_id: &str) -> Result<Self, AttentionError> {
        if !(dims.len() == 2 || dims.len() == 3) || dims.iter().any(|&d| d == 0) {
            return Err(AttentionError::BadDims(dims));
        }
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(AttentionError::Format(format!("{} values for dims {dims:?}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AttentionError::Format("non-finite attention value".into()));
        }
        Ok(Self { dims, data, source_image_id: source_image_id.to_string(), layer: "final".into() })
    }

    /// `ATTN` | u16 version | u8 ndims | u32 dims... | f32 payload, all little endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(ATTN_MAGIC);
        out.extend_from_slice(&ATTN_VERSION.to_le_bytes());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], sidecar: &AttentionSidecar) -> Result<Self, AttentionError> {
        let fmt = |m: &str| AttentionError::Format(m.to_string());
        if bytes.len() < 7 || &bytes[..4] != ATTN_MAGIC {
            return Err(fmt("missing ATTN magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != ATTN_VERSION {
            return Err(AttentionError::Format(format!("unsupported version {version}")));
        }
        let ndims = bytes[6] as usize;
        if !(ndims == 2 || ndims == 3) {
            return Err(AttentionError::Format(format!("ndims {ndims} not 2 or 3")));
        }
        let header = 7 + 4 * ndims;
        if bytes.len() < header {
            return Err(fmt("truncated header"));
        }
        let dims: Vec<usize> = bytes[7..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let n: usize = dims.iter().product();
        if bytes.len() != header + 4 * n {
            return Err(AttentionError::Format(format!("payload is {} bytes, expected {}", bytes.len() - header, 4 * n)));
        }
        let data = bytes[header..].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut t = Self::new(dims, data, &sidecar.image_id)?;
        t.layer = sidecar.layer.clone();
        Ok(t)
    }

    pub fn sidecar(&self) -> AttentionSidecar {
        AttentionSidecar { image_id: self.source_image_id.clone(), layer: self.layer.clone() }
    }

    /// Reads `<dir>/<safe id>.attn` and its `.attn.json` sidecar.
    pub fn read(dir: &Path, image_id: &str) -> Result<Self, AttentionError> {
        let (payload, side) = attn_paths(dir, image_id);
        let bytes = std::fs::read(&payload).map_err(|source| AttentionError::Io { path: payload.clone(), source })?;
        let text = std::fs::read_to_string(&side).map_err(|source| AttentionError::Io { path: side.clone(), source })?;
        let sidecar: AttentionSidecar =
            serde_json::from_str(&text).map_err(|e| AttentionError::Format(e.to_string()))?;
        Self::decode(&bytes, &sidecar)
    }

    pub fn write(&self, dir: &Path) -> Result<(), AttentionError> {
        let (payload, side) = attn_paths(dir, &self.source_image_id);
        crate::io_util::write_atomic(&payload, &self.encode()).map_err(|source| AttentionError::Io { path: payload, source })?;
        let json = serde_json::to_string_pretty(&self.sidecar()).expect("sidecar serializes");
        crate::io_util::write_atomic(&side, json.as_bytes()).map_err(|source| AttentionError::Io { path: side, source })
    }
}

/// Id with every character outside `[A-Za-z0-9._-]` replaced by `_`.
/// `<stem>.attn` and `<stem>.attn.json`. Suffixes are appended, not
/// substituted, so `a.png` and `a.jpg` stay distinct.
fn attn_paths(dir: &Path, image_id: &str) -> (PathBuf, PathBuf) {
    let stem = safe_file_stem(image_id);
    (dir.join(format!("{stem}.attn")), dir.join(format!("{stem}.attn.json")))
}

pub fn safe_file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Map2D {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Map2D {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width);
        Self { height, width, data }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Mean over the channel axis; a 2-D tensor passes through.
pub fn collapse(t: &AttentionTensor) -> Result<Map2D, AttentionError> {
    match t.dims.as_slice() {
        &[h, w] => Ok(Map2D::new(h, w, t.data.iter().map(|&v| f64::from(v)).collect())),
        &[c, h, w] => {
            let plane = h * w;
            let mut out = vec![0.0; plane];
            for ch in 0..c {
                for (o, &v) in out.iter_mut().zip(&t.data[ch * plane..(ch + 1) * plane]) {
                    *o += f64::from(v);
                }
            }
            for o in &mut out {
                *o /= c as f64;
            }
            Ok(Map2D::new(h, w, out))
        }
        _ => Err(AttentionError::BadDims(t.dims.clone())),
    }
}

/// Bilinear resize with half-pixel centres: source coordinate
/// `(i + 0.5) * in / out - 0.5`, clamped to the valid range.
pub fn resize_bilinear(map: &Map2D, out_h: usize, out_w: usize) -> Map2D {
    if out_h == map.height && out_w == map.width {
        return map.clone();
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = axis(map.height, out_h);
    let xs = axis(map.width, out_w);
    let mut data = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = map.at(y0, x0) * (1.0 - fx) + map.at(y0, x1) * fx;
            let bottom = map.at(y1, x0) * (1.0 - fx) + map.at(y1, x1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Map2D::new(out_h, out_w, data)
}

/// Min-max scaling to [0, 1]. A constant map becomes all zeros and the
/// returned flag is set.
pub fn normalize01(map: &Map2D) -> (Map2D, bool) {
    let min = map.data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = map.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return (Map2D::new(map.height, map.width, vec![0.0; map.data.len()]), true);
    }
    let range = max - min;
    let data = map.data.iter().map(|&v| if v == max { 1.0 } else { ((v - min) / range).clamp(0.0, 1.0) }).collect();
    (Map2D::new(map.height, map.width, data), false)
}

/// Closed-form jet colormap.
pub fn jet(v: f64) -> (f64, f64, f64) {
    let v = v.clamp(0.0, 1.0);
    let ch = |offset: f64| (1.5 - (4.0 * v - offset).abs()).clamp(0.0, 1.0);
    (ch(3.0), ch(2.0), ch(1.0))
}

fn round_half_up(x: f64) -> u8 {
    // The epsilon absorbs products such as 0.6 * 127.5 landing just under .5.
    (x + 0.5 + 1e-9).floor().clamp(0.0, 255.0) as u8
}

pub fn heatmap_image(heat: &Map2D) -> RgbImage {
    RgbImage::from_fn(heat.width as u32, heat.height as u32, |x, y| {
        let (r, g, b) = jet(heat.at(y as usize, x as usize));
        Rgb([round_half_up(255.0 * r), round_half_up(255.0 * g), round_half_up(255.0 * b)])
    })
}

/// `(1 - alpha) * original + alpha * 255 * jet(heat)`, per channel.
pub fn overlay(original: &RgbImage, heat: &Map2D, alpha: f64) -> Result<RgbImage, AttentionError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AttentionError::BadAlpha(alpha));
    }
    let (w, h) = original.dimensions();
    if heat.width != w as usize || heat.height != h as usize {
        return Err(AttentionError::DimMismatch { heat_w: heat.width, heat_h: heat.height, img_w: w, img_h: h });
    }
    Ok(RgbImage::from_fn(w, h, |x, y| {
        let p = original.get_pixel(x, y);
        let (r, g, b) = jet(heat.at(y as usize, x as usize));
        let mix = |o: u8, c: f64| round_half_up((1.0 - alpha) * f64::from(o) + alpha * 255.0 * c);
        Rgb([mix(p[0], r), mix(p[1], g), mix(p[2], b)])
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedAttention {
    pub heat: Map2D,
    pub degenerate: bool,
}

/// collapse -> resize to (height, width) -> normalize.
pub fn process(tensor: &AttentionTensor, height: usize, width: usize) -> Result<ProcessedAttention, AttentionError> {
    let collapsed = collapse(tensor)?;
    let resized = resize_bilinear(&collapsed, height, width);
    let (heat, degenerate) = normalize01(&resized);
    Ok(ProcessedAttention { heat, degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriptychMeta {
    pub image_id: String,
    pub true_label: String,
    pub predicted_label: String,
    pub true_class_confidence: f64,
    pub predicted_class_confidence: f64,
    pub correct: bool,
    pub alpha: f64,
    pub layer: String,
    pub degenerate_attention: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triptych {
    pub original: RgbImage,
    pub overlay: RgbImage,
    pub heatmap: RgbImage,
    pub meta: TriptychMeta,
}

fn png_bytes(img: &RgbImage) -> Result<Vec<u8>, AttentionError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| AttentionError::Encode(e.to_string()))?;
    Ok(buf.into_inner())
}

impl Triptych {
    /// Encoded panels keyed by output file name.
    pub fn encoded(&self) -> Result<Vec<(String, Vec<u8>)>, AttentionError> {
        let stem = safe_file_stem(&self.meta.image_id);
        Ok(vec![
            (format!("{stem}_original.png"), png_bytes(&self.original)?),
            (format!("{stem}_overlay.png"), png_bytes(&self.overlay)?),
            (format!("{stem}_heatmap.png"), png_bytes(&self.heatmap)?),
            (format!("{stem}_meta.json"), serde_json::to_string_pretty(&self.meta).expect("meta serializes").into_bytes()),
        ])
    }

    /// Writes the three panels and the metadata sidecar atomically.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, AttentionError> {
        let mut out = Vec::new();
        for (name, bytes) in self.encoded()? {
            let path = dir.join(name);
            crate::io_util::write_atomic(&path, &bytes).map_err(|source| AttentionError::Io { path: path.clone(), source })?;
            out.push(path);
        }
        Ok(out)
    }
}

pub fn render_triptych(
    image: &RgbImage,
    tensor: &AttentionTensor,
    predictions: &PredictionSet,
    prediction: &PredictionRecord,
    alpha: f64,
) -> Result<Triptych, AttentionError> {
    if tensor.source_image_id != prediction.image_id {
        return Err(AttentionError::IdMismatch {
            tensor: tensor.source_image_id.clone(),
            prediction: prediction.image_id.clone(),
        });
    }
    let (w, h) = image.dimensions();
    let processed = process(tensor, h as usize, w as usize)?;
    let overlay_img = overlay(image, &processed.heat, alpha)?;
    let meta = TriptychMeta {
        image_id: prediction.image_id.clone(),
        true_label: prediction.true_label.clone(),
        predicted_label: prediction.predicted_label.clone(),
        true_class_confidence: predictions.probability(prediction, &prediction.true_label).unwrap_or(0.0),
        predicted_class_confidence: predictions.probability(prediction, &prediction.predicted_label).unwrap_or(0.0),
        correct: prediction.true_label == prediction.predicted_label,
        alpha,
        layer: tensor.layer.clone(),
        degenerate_attention: processed.degenerate,
    };
    Ok(Triptych { original: image.clone(), overlay: overlay_img, heatmap: heatmap_image(&processed.heat), meta })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSelection {
    pub correct: Vec<String>,
    pub incorrect: Vec<String>,
    pub correct_shortfall: bool,
    pub incorrect_shortfall: bool,
}

/// Seeded uniform sample without replacement from the correct and the
/// incorrect predictions. A short stratum is taken whole and flagged.
pub fn sample_cases(predictions: &[PredictionRecord], n_correct: usize, n_incorrect: usize, seed: u64) -> CaseSelection {
    let mut correct: Vec<&str> = Vec::new();
    let mut incorrect: Vec<&str> = Vec::new();
    for r in predictions {
        if r.true_label == r.predicted_label {
            correct.push(&r.image_id);
        } else {
            incorrect.push(&r.image_id);
        }
    }
    correct.sort_unstable();
    incorrect.sort_unstable();
    let pick = |pool: &[&str], n: usize, tag: &str| -> (Vec<String>, bool) {
        if pool.len() <= n {
            return (pool.iter().map(|s| s.to_string()).collect(), pool.len() < n);
        }
        let mut rng = seed::rng_for(seed, tag);
        let mut idx = sample(&mut rng, pool.len(), n).into_vec();
        idx.sort_unstable();
        (idx.into_iter().map(|i| pool[i].to_string()).collect(), false)
    };
    let (c, cs) = pick(&correct, n_correct, "cases/correct");
    let (i, is) = pick(&incorrect, n_incorrect, "cases/incorrect");
    CaseSelection { correct: c, incorrect: i, correct_shortfall: cs, incorrect_shortfall: is }
}
