//! Image ingestion: IDX datasets, PGM files, area resampling and class-pair
//! subsets.
//!
//! IDX headers are big-endian; gzip-compressed files are detected by their
//! magic bytes and inflated transparently. The binary cache written by
//! [`write_cache`] is documented in the repository README.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A grayscale grid of arbitrary shape, as stored in an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols != pixels.len() {
            return Err(Error::Length(format!(
                "{rows}x{cols} grid needs {} pixels, got {}",
                rows * cols,
                pixels.len()
            )));
        }
        Ok(Self { rows, cols, pixels })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.pixels[y * self.cols + x]
    }
}

/// A `2^n x 2^n` grid of 8-bit intensities in row-major order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    n: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    /// Builds an image of side `2^n`; `pixels` must hold `4^n` values.
    pub fn new(n: u32, pixels: Vec<u8>) -> Result<Self> {
        if n > 15 {
            return Err(Error::Unsupported(format!("level count {n} is too large")));
        }
        let side = 1usize << n;
        if pixels.len() != side * side {
            return Err(Error::Length(format!(
                "side {side} needs {} pixels, got {}",
                side * side,
                pixels.len()
            )));
        }
        Ok(Self { n, pixels })
    }

    /// Builds an image from its side length, which must be a power of two.
    pub fn from_side(side: usize, pixels: Vec<u8>) -> Result<Self> {
        if !side.is_power_of_two() {
            return Err(Error::Unsupported(format!(
                "side {side} is not a power of two"
            )));
        }
        Self::new(side.trailing_zeros(), pixels)
    }

    pub fn constant(n: u32, value: u8) -> Self {
        let side = 1usize << n;
        Self {
            n,
            pixels: vec![value; side * side],
        }
    }

    pub fn from_fn(n: u32, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let side = 1usize << n;
        let mut pixels = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                pixels.push(f(y, x));
            }
        }
        Self { n, pixels }
    }

    /// Level count: the side is `2^n`.
    #[inline]
    pub fn n(&self) -> u32 {
        self.n
    }

    #[inline]
    pub fn side(&self) -> usize {
        1 << self.n
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.pixels[y * self.side() + x]
    }

    pub fn is_zero(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0)
    }

    pub fn to_raw(&self) -> RawImage {
        RawImage {
            rows: self.side(),
            cols: self.side(),
            pixels: self.pixels.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

/// Images with parallel class labels (0-9).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSet<I = GrayImage> {
    pub images: Vec<I>,
    pub labels: Vec<u8>,
    pub role: Role,
}

impl<I> LabeledSet<I> {
    pub fn new(images: Vec<I>, labels: Vec<u8>, role: Role) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self {
            images,
            labels,
            role,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn count_of(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Length(format!("header truncated at byte {offset}")))
}

/// Parses an uncompressed IDX3 image file.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<RawImage>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    let stride = rows * cols;
    if stride == 0 {
        return Err(Error::Format("zero-sized images".into()));
    }
    if body.len() < count * stride {
        return Err(Error::Length(format!(
            "{count} images of {rows}x{cols} need {} bytes, file has {}",
            count * stride,
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(stride)
        .take(count)
        .map(|px| RawImage {
            rows,
            cols,
            pixels: px.to_vec(),
        })
        .collect())
}

/// Parses an uncompressed IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Length(format!(
            "{count} labels declared, {} present",
            body.len()
        )));
    }
    let labels = body[..count].to_vec();
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!("label {bad} outside 0..=9")));
    }
    Ok(labels)
}

/// Loads an IDX image/label file pair, gzip or plain.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    role: Role,
) -> Result<LabeledSet<RawImage>> {
    let images = parse_idx_images(&read_maybe_gz(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path.as_ref())?)?;
    LabeledSet::new(images, labels, role)
}

/// Area (box-filter) downsampling to a `target_side x target_side` image.
///
/// Each output pixel is the coverage-weighted mean of the source pixels its
/// footprint overlaps, with fractional weights at the footprint edges. The
/// arithmetic is done in integers scaled by the source and target sides, so
/// the half-up rounding is exact.
pub fn area_resample(raw: &RawImage, target_side: usize) -> Result<GrayImage> {
    if target_side == 0 || !target_side.is_power_of_two() {
        return Err(Error::Unsupported(format!(
            "target side {target_side} is not a power of two"
        )));
    }
    if target_side > raw.rows || target_side > raw.cols {
        return Err(Error::Unsupported(format!(
            "cannot upsample {}x{} to {target_side}x{target_side}",
            raw.rows, raw.cols
        )));
    }
    let wy = coverage_weights(raw.rows, target_side);
    let wx = coverage_weights(raw.cols, target_side);
    // Weights along each axis sum to the source extent, so the full footprint
    // weight is rows * cols.
    let denom = (raw.rows * raw.cols) as u64;
    let mut pixels = Vec::with_capacity(target_side * target_side);
    for row_weights in &wy {
        for col_weights in &wx {
            let mut acc = 0u64;
            for &(sy, w1) in row_weights {
                for &(sx, w2) in col_weights {
                    acc += w1 * w2 * raw.get(sy, sx) as u64;
                }
            }
            pixels.push(((2 * acc + denom) / (2 * denom)) as u8);
        }
    }
    GrayImage::from_side(target_side, pixels)
}

/// For every output cell along one axis, the overlapping source cells and the
/// overlap length measured in units of `1 / dst` source pixels.
fn coverage_weights(src: usize, dst: usize) -> Vec<Vec<(usize, u64)>> {
    (0..dst)
        .map(|o| {
            // Output cell o spans [o*src, (o+1)*src); source cell s spans
            // [s*dst, (s+1)*dst), both in the common scaled unit.
            let lo = o * src;
            let hi = lo + src;
            (lo / dst..hi.div_ceil(dst))
                .filter_map(|s| {
                    let overlap = hi.min((s + 1) * dst).saturating_sub(lo.max(s * dst));
                    (overlap > 0).then_some((s, overlap as u64))
                })
                .collect()
        })
        .collect()
}

/// Resamples every image of a set, preserving order and labels.
pub fn resample_set(
    set: &LabeledSet<RawImage>,
    target_side: usize,
) -> Result<LabeledSet<GrayImage>> {
    let images = set
        .images
        .par_iter()
        .map(|raw| area_resample(raw, target_side))
        .collect::<Result<Vec<_>>>()?;
    LabeledSet::new(images, set.labels.clone(), set.role)
}

/// Picks `ceil(count/2)` images of `class_a` and `floor(count/2)` of `class_b`.
///
/// Without a seed the first members of each class in dataset order are taken.
/// With a seed each class's members are shuffled by a ChaCha8 stream before
/// taking the prefix. The result always keeps dataset order.
pub fn select_pair<I: Clone>(
    set: &LabeledSet<I>,
    class_a: u8,
    class_b: u8,
    count: usize,
    seed: Option<u64>,
) -> Result<LabeledSet<I>> {
    if class_a == class_b {
        return Err(Error::arg(format!(
            "degenerate class pair ({class_a}, {class_b})"
        )));
    }
    if count == 0 {
        return Err(Error::arg("subset size must be positive"));
    }
    let want_a = count.div_ceil(2);
    let want_b = count / 2;
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let mut pick = |class: u8, want: usize| -> Result<Vec<usize>> {
        let mut members: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == class).collect();
        if members.len() < want {
            return Err(Error::Capacity(format!(
                "class {class} has {} members, {want} requested",
                members.len()
            )));
        }
        if let Some(rng) = rng.as_mut() {
            members.shuffle(rng);
        }
        members.truncate(want);
        Ok(members)
    };
    let mut chosen = pick(class_a, want_a)?;
    chosen.extend(pick(class_b, want_b)?);
    chosen.sort_unstable();
    let images = chosen.iter().map(|&i| set.images[i].clone()).collect();
    let labels = chosen.iter().map(|&i| set.labels[i]).collect();
    LabeledSet::new(images, labels, set.role)
}

/// Reads a binary (P5) PGM with maxval 255 or less.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<RawImage> {
    parse_pgm(&fs::read(path)?)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<RawImage> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Length("PGM header truncated".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Format(format!(
            "expected P5 PGM, found {:?}",
            fields[0]
        )));
    }
    let parse = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
    };
    let (cols, rows, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Unsupported(format!("PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = rows * cols;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Length(format!("PGM raster needs {need} bytes")))?;
    let pixels = if maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .iter()
            .map(|&v| ((v as usize * 255 + maxval / 2) / maxval) as u8)
            .collect()
    };
    RawImage::new(rows, cols, pixels)
}

/// Encodes a P5 PGM; `comments` become `#` lines in the header.
pub fn encode_pgm(rows: usize, cols: usize, pixels: &[u8], comments: &[&str]) -> Vec<u8> {
    let mut out = Vec::with_capacity(pixels.len() + 64);
    out.extend_from_slice(b"P5\n");
    for c in comments {
        for line in c.lines() {
            out.extend_from_slice(format!("# {line}\n").as_bytes());
        }
    }
    out.extend_from_slice(format!("{cols} {rows}\n255\n").as_bytes());
    out.extend_from_slice(pixels);
    out
}

pub fn write_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    let bytes = encode_pgm(image.side(), image.side(), image.pixels(), &[]);
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub const CACHE_MAGIC: &[u8; 4] = b"QIMG";
pub const CACHE_VERSION: u8 = 1;

/// Serializes a resampled set into the `QIMG` cache format.
///
/// Layout: `QIMG`, version byte, role byte (0 train, 1 test), record count as
/// u32 LE, then per record a label byte, payload length as u32 LE and the
/// payload (level count byte followed by the row-major pixels).
pub fn write_cache(set: &LabeledSet<GrayImage>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.push(CACHE_VERSION);
    out.push(match set.role {
        Role::Train => 0,
        Role::Test => 1,
    });
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    for (img, &label) in set.images.iter().zip(&set.labels) {
        out.push(label);
        out.extend_from_slice(&((img.pixels().len() + 1) as u32).to_le_bytes());
        out.push(img.n() as u8);
        out.extend_from_slice(img.pixels());
    }
    out
}

pub fn read_cache(bytes: &[u8]) -> Result<LabeledSet<GrayImage>> {
    if bytes.len() < 10 || &bytes[..4] != CACHE_MAGIC {
        return Err(Error::Format("missing QIMG magic".into()));
    }
    if bytes[4] != CACHE_VERSION {
        return Err(Error::Unsupported(format!("cache version {}", bytes[4])));
    }
    let role = match bytes[5] {
        0 => Role::Train,
        1 => Role::Test,
        r => return Err(Error::Format(format!("unknown role byte {r}"))),
    };
    let count = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let mut pos = 10;
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for k in 0..count {
        let head = bytes
            .get(pos..pos + 5)
            .ok_or_else(|| Error::Length(format!("record {k} header truncated")))?;
        let len = u32::from_le_bytes([head[1], head[2], head[3], head[4]]) as usize;
        let payload = bytes
            .get(pos + 5..pos + 5 + len)
            .ok_or_else(|| Error::Length(format!("record {k} payload truncated")))?;
        if payload.is_empty() {
            return Err(Error::Format(format!("record {k} is empty")));
        }
        labels.push(head[0]);
        images.push(GrayImage::new(payload[0] as u32, payload[1..].to_vec())?);
        pos += 5 + len;
    }
    if pos != bytes.len() {
        return Err(Error::Length(format!(
            "{} trailing bytes",
            bytes.len() - pos
        )));
    }
    LabeledSet::new(images, labels, role)
}
