//! Raster helpers: decoding, luma, the 64-bit difference hash and the
//! eight dihedral variants used by the leak scanner.

use std::fmt;
use std::path::Path;

use image::{ImageReader, RgbImage};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("undecodable image {source_name}: {reason}")]
    Undecodable { source_name: String, reason: String },
    #[error("image {width}x{height} is too small to hash (need at least 2x2)")]
    TooSmall { width: u32, height: u32 },
}

/// Luma weights for grayscale conversion.
pub const LUMA_R: f64 = 0.299;
pub const LUMA_G: f64 = 0.587;
pub const LUMA_B: f64 = 0.114;

const HASH_W: usize = 9;
const HASH_H: usize = 8;

pub fn luma(r: u8, g: u8, b: u8) -> f64 {
    LUMA_R * f64::from(r) + LUMA_G * f64::from(g) + LUMA_B * f64::from(b)
}

pub fn decode_bytes(bytes: &[u8], source_name: &str) -> Result<RgbImage, RasterError> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| RasterError::Undecodable { source_name: source_name.to_string(), reason: e.to_string() })
}

pub fn decode_path(path: &Path) -> Result<RgbImage, RasterError> {
    let name = path.display().to_string();
    ImageReader::open(path)
        .map_err(|e| RasterError::Undecodable { source_name: name.clone(), reason: e.to_string() })?
        .with_guessed_format()
        .map_err(|e| RasterError::Undecodable { source_name: name.clone(), reason: e.to_string() })?
        .decode()
        .map(|img| img.to_rgb8())
        .map_err(|e| RasterError::Undecodable { source_name: name, reason: e.to_string() })
}

/// Integer overlap weights between `n_in` source cells and `n_out` output
/// cells, in units of `1 / (n_in * n_out)` of the axis: source cell `i`
/// spans `[i * n_out, (i + 1) * n_out)`, output cell `o` spans
/// `[o * n_in, (o + 1) * n_in)`. Entries are `(source index, weight)`.
fn axis_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, u64)>> {
    (0..n_out)
        .map(|o| {
            let (lo, hi) = (o * n_in, (o + 1) * n_in);
            (lo / n_out..hi.div_ceil(n_out).min(n_in))
                .filter_map(|i| {
                    let w = hi.min((i + 1) * n_out).saturating_sub(lo.max(i * n_out));
                    (w > 0).then_some((i, w as u64))
                })
                .collect()
        })
        .collect()
}

/// Box-filter (area-averaging) downsample of a single-channel plane.
///
/// Each output cell averages the source area it covers, with fractional
/// overlap weights at cell boundaries.
pub fn area_resize(plane: &[f64], width: usize, height: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let wx = axis_weights(width, out_w);
    let wy = axis_weights(height, out_h);
    let area = (width * height) as f64;
    let mut out = Vec::with_capacity(out_w * out_h);
    for ys in &wy {
        for xs in &wx {
            let mut acc = 0.0;
            for &(y, a) in ys {
                for &(x, b) in xs {
                    acc += plane[y * width + x] * (a * b) as f64;
                }
            }
            out.push(acc / area);
        }
    }
    out
}

/// Same cells as [`area_resize`] on integer input, left as unnormalised
/// sums. Every cell carries the same total weight, so sums compare exactly.
fn area_sums(plane: &[u64], width: usize, height: usize, out_w: usize, out_h: usize) -> Vec<u64> {
    let wx = axis_weights(width, out_w);
    let wy = axis_weights(height, out_h);
    let mut out = Vec::with_capacity(out_w * out_h);
    for ys in &wy {
        for xs in &wx {
            let mut acc = 0u64;
            for &(y, a) in ys {
                for &(x, b) in xs {
                    acc += plane[y * width + x] * a * b;
                }
            }
            out.push(acc);
        }
    }
    out
}

/// Luma scaled by 1000, exact in integers.
fn luma_milli(r: u8, g: u8, b: u8) -> u64 {
    299 * u64::from(r) + 587 * u64::from(g) + 114 * u64::from(b)
}

pub fn luma_plane(img: &RgbImage) -> Vec<f64> {
    img.pixels().map(|p| luma(p[0], p[1], p[2])).collect()
}

/// 64-bit perceptual difference hash.
///
/// Grayscale, 9x8 area downsample, bit `(row, col)` set iff the cell is
/// strictly darker than its right neighbour; packed row-major, MSB first.
pub fn dhash(img: &RgbImage) -> Result<u64, RasterError> {
    let (w, h) = img.dimensions();
    if w < 2 || h < 2 {
        return Err(RasterError::TooSmall { width: w, height: h });
    }
    let plane: Vec<u64> = img.pixels().map(|p| luma_milli(p[0], p[1], p[2])).collect();
    let small = area_sums(&plane, w as usize, h as usize, HASH_W, HASH_H);
    let mut hash = 0u64;
    for row in 0..HASH_H {
        for col in 0..HASH_W - 1 {
            if small[row * HASH_W + col] < small[row * HASH_W + col + 1] {
                hash |= 1u64 << (63 - (row * 8 + col));
            }
        }
    }
    Ok(hash)
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

pub fn phash_hex(h: u64) -> String {
    format!("{h:016x}")
}

pub fn parse_phash_hex(s: &str) -> Option<u64> {
    if s.len() != 16 {
        return None;
    }
    u64::from_str_radix(s, 16).ok()
}

/// The eight elements of the dihedral group of the square, as transforms
/// mapping an image `x` to `T(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dihedral {
    #[serde(rename = "identity")]
    Identity,
    #[serde(rename = "rot90")]
    Rot90,
    #[serde(rename = "rot180")]
    Rot180,
    #[serde(rename = "rot270")]
    Rot270,
    #[serde(rename = "flip_h")]
    FlipH,
    #[serde(rename = "flip_v")]
    FlipV,
    /// Horizontal flip followed by a 90 degree counter-clockwise rotation.
    #[serde(rename = "flip_h+rot90")]
    FlipHRot90,
    /// Horizontal flip followed by a 270 degree counter-clockwise rotation.
    #[serde(rename = "flip_h+rot270")]
    FlipHRot270,
}

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Dihedral::Identity,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
        Dihedral::FlipH,
        Dihedral::FlipV,
        Dihedral::FlipHRot90,
        Dihedral::FlipHRot270,
    ];

    pub fn inverse(self) -> Dihedral {
        match self {
            Dihedral::Rot90 => Dihedral::Rot270,
            Dihedral::Rot270 => Dihedral::Rot90,
            other => other,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dihedral::Identity => "identity",
            Dihedral::Rot90 => "rot90",
            Dihedral::Rot180 => "rot180",
            Dihedral::Rot270 => "rot270",
            Dihedral::FlipH => "flip_h",
            Dihedral::FlipV => "flip_v",
            Dihedral::FlipHRot90 => "flip_h+rot90",
            Dihedral::FlipHRot270 => "flip_h+rot270",
        }
    }

    /// Compose from a flip/rotation description: horizontal flip (optional),
    /// then vertical flip (optional), then `quarter_turns` counter-clockwise.
    pub fn from_parts(flip_h: bool, flip_v: bool, quarter_turns: u32) -> Dihedral {
        // Track where the unit square's corners go as (flip, rotation) normal form.
        // flip_v == flip_h followed by rot180.
        let (mut flipped, mut rot) = (false, 0u32);
        if flip_h {
            flipped = !flipped;
        }
        if flip_v {
            // flip_v = rot180 . flip_h ; appending flip_h to (flipped, rot) turns
            // rot into -rot.
            flipped = !flipped;
            rot = (4 - rot % 4) % 4;
            rot = (rot + 2) % 4;
        }
        rot = (rot + quarter_turns) % 4;
        match (flipped, rot) {
            (false, 0) => Dihedral::Identity,
            (false, 1) => Dihedral::Rot90,
            (false, 2) => Dihedral::Rot180,
            (false, _) => Dihedral::Rot270,
            (true, 0) => Dihedral::FlipH,
            (true, 1) => Dihedral::FlipHRot90,
            (true, 2) => Dihedral::FlipV,
            (true, _) => Dihedral::FlipHRot270,
        }
    }

    pub fn apply(self, img: &RgbImage) -> RgbImage {
        use image::imageops;
        match self {
            Dihedral::Identity => img.clone(),
            Dihedral::Rot90 => imageops::rotate270(img),
            Dihedral::Rot180 => imageops::rotate180(img),
            Dihedral::Rot270 => imageops::rotate90(img),
            Dihedral::FlipH => imageops::flip_horizontal(img),
            Dihedral::FlipV => imageops::flip_vertical(img),
            Dihedral::FlipHRot90 => imageops::rotate270(&imageops::flip_horizontal(img)),
            Dihedral::FlipHRot270 => imageops::rotate90(&imageops::flip_horizontal(img)),
        }
    }
}

impl fmt::Display for Dihedral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
