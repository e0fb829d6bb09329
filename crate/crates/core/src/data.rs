//! RGB-D samples: binary PPM/PGM codec, resizing, geometric augmentation,
//! a synthetic scene generator and tab-separated dataset manifests.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tritrans_tensor::kernels::resize;
use tritrans_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

/// Decoded PNM raster, samples normalized to `[0, 1]` by `maxval`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Interleaved row-major samples.
    pub data: Vec<f64>,
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl HeaderReader<'_> {
    fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::MalformedHeader { path: self.path.to_path_buf(), offset: self.pos, reason: reason.into() }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if is_space(b) {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        let mut value: usize = 0;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            let digit = (self.bytes[self.pos] - b'0') as usize;
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(digit))
                .ok_or(Error::ExtentOverflow { path: self.path.to_path_buf(), offset: start })?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.malformed(format!("expected {what}")));
        }
        Ok(value)
    }
}

/// Decodes binary P5 (gray) or P6 (color) with 8- or 16-bit samples.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut r = HeaderReader { bytes, pos: 0, path };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(r.malformed("expected magic P5 or P6")),
    };
    r.pos = 2;
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval_at = r.pos;
    let maxval = r.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader { path: path.to_path_buf(), offset: maxval_at, reason: "zero extent".into() });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            offset: maxval_at,
            reason: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    match bytes.get(r.pos) {
        Some(&b) if is_space(b) => r.pos += 1,
        _ => return Err(r.malformed("expected a single whitespace byte before the payload")),
    }
    let depth = if maxval > 255 { 2 } else { 1 };
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels * depth))
        .ok_or(Error::ExtentOverflow { path: path.to_path_buf(), offset: 2 })?;
    let payload = &bytes[r.pos..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload { path: path.to_path_buf(), offset: bytes.len(), expected });
    }
    let scale = 1.0 / maxval as f64;
    let data = if depth == 1 {
        payload[..expected].iter().map(|&b| (b as f64 * scale).min(1.0)).collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 * scale).min(1.0))
            .collect()
    };
    Ok(Image { width, height, channels, data })
}

pub fn read_pnm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, path)
}

fn quantize(v: f64, maxval: f64) -> u16 {
    (v.clamp(0.0, 1.0) * maxval).round() as u16
}

/// Encodes interleaved `[0, 1]` samples as P5 (`channels = 1`) or P6 (`channels = 3`).
pub fn encode_pnm(width: usize, height: usize, channels: usize, data: &[f64], sixteen_bit: bool) -> Vec<u8> {
    assert_eq!(data.len(), width * height * channels, "sample count does not match extents");
    let magic = if channels == 3 { "P6" } else { "P5" };
    let maxval = if sixteen_bit { 65535 } else { 255 };
    let mut out = format!("{magic}\n{width} {height}\n{maxval}\n").into_bytes();
    for &v in data {
        let q = quantize(v, maxval as f64);
        if sixteen_bit {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a `[C,H,W]` or `[B=1,C,H,W]` map with one or three channels.
pub fn write_map<T: Scalar>(path: &Path, t: &Tensor<T>, sixteen_bit: bool) -> Result<()> {
    let s = t.shape();
    let (c, h, w) = match *s {
        [c, h, w] | [1, c, h, w] if c == 1 || c == 3 => (c, h, w),
        _ => return Err(Error::Invalid(format!("cannot write a {s:?} map as PNM"))),
    };
    let d = t.data();
    let mut interleaved = vec![0.0; c * h * w];
    for ch in 0..c {
        for i in 0..h * w {
            interleaved[i * c + ch] = d[ch * h * w + i].as_f64();
        }
    }
    write_file(path, &encode_pnm(w, h, c, &interleaved, sixteen_bit))
}

/// Image as a planar `[C,H,W]` tensor.
pub fn planar<T: Scalar>(img: &Image) -> Tensor<T> {
    let (c, hw) = (img.channels, img.width * img.height);
    Tensor::from_fn(&[c, img.height, img.width], |i| T::from_f64(img.data[(i % hw) * c + i / hw]))
}

/// Bilinear resize of a planar `[C,H,W]` tensor.
pub fn resize_bilinear<T: Scalar>(t: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let s = t.shape();
    if s[1] == out_h && s[2] == out_w {
        return t.clone();
    }
    let data = resize::bilinear(t.data(), s[0], s[1], s[2], out_h, out_w);
    Tensor::new(vec![s[0], out_h, out_w], data).expect("resize keeps extents consistent")
}

/// Nearest-neighbour resize (pixel centers) of a planar `[C,H,W]` tensor.
pub fn resize_nearest<T: Scalar>(t: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let src = |o: usize, n: usize, m: usize| (((o as f64 + 0.5) * n as f64 / m as f64) as usize).min(n - 1);
    let d = t.data();
    Tensor::from_fn(&[c, out_h, out_w], |i| {
        let (ch, y, x) = (i / (out_h * out_w), (i / out_w) % out_h, i % out_w);
        d[ch * h * w + src(y, h, out_h) * w + src(x, w, out_w)]
    })
}

fn binarize<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| if v.as_f64() >= 0.5 { T::one() } else { T::zero() })
}

/// Spatially aligned RGB, depth and binary ground truth, each planar.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[3,H,W]` in `[0,1]`.
    pub rgb: Tensor<f32>,
    /// `[1,H,W]` in `[0,1]`.
    pub depth: Tensor<f32>,
    /// `[1,H,W]` of exact zeros and ones.
    pub gt: Tensor<f32>,
}

impl Sample {
    pub fn size(&self) -> (usize, usize) {
        (self.gt.shape()[1], self.gt.shape()[2])
    }

    fn channel(img: Image, want: usize, path: &Path) -> Result<Tensor<f32>> {
        if img.channels != want {
            return Err(Error::Invalid(format!(
                "{}: expected {want} channel(s), found {}",
                path.display(),
                img.channels
            )));
        }
        Ok(planar(&img))
    }

    /// Loads, resizes to `size × size` and binarizes the ground truth.
    pub fn load(rgb: &Path, depth: &Path, gt: &Path, size: usize) -> Result<Self> {
        let rgb_t = Self::channel(read_pnm(rgb)?, 3, rgb)?;
        let depth_t = Self::channel(read_pnm(depth)?, 1, depth)?;
        let gt_t = Self::channel(read_pnm(gt)?, 1, gt)?;
        let extents = |t: &Tensor<f32>| (t.shape()[1], t.shape()[2]);
        if extents(&rgb_t) != extents(&depth_t) || extents(&rgb_t) != extents(&gt_t) {
            return Err(Error::Invalid(format!(
                "{}: rgb {:?}, depth {:?} and gt {:?} are not aligned",
                rgb.display(),
                rgb_t.shape(),
                depth_t.shape(),
                gt_t.shape()
            )));
        }
        Ok(Self {
            rgb: resize_bilinear(&rgb_t, size, size),
            depth: resize_bilinear(&depth_t, size, size),
            gt: binarize(&resize_nearest(&gt_t, size, size)),
        })
    }

    /// Foreground fraction of the ground truth.
    pub fn coverage(&self) -> f64 {
        self.gt.data().iter().map(|&v| v as f64).sum::<f64>() / self.gt.numel() as f64
    }
}

/// Loads one sample; `size` is the square side after resizing.
pub fn load_sample(rgb: &Path, depth: &Path, gt: &Path, size: usize) -> Result<Sample> {
    Sample::load(rgb, depth, gt, size)
}

/// Loads a single-channel map as `[H,W]` in `[0,1]`.
pub fn load_gray(path: &Path) -> Result<Tensor<f64>> {
    let img = read_pnm(path)?;
    if img.channels != 1 {
        return Err(Error::Invalid(format!("{}: expected a grayscale map", path.display())));
    }
    Ok(Tensor::new(vec![img.height, img.width], img.data).expect("decoder checked extents"))
}

// ----- augmentation -----

/// One draw of the geometric augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentParams {
    pub flip: bool,
    /// Counter-clockwise quarter turns, 0..4.
    pub quarter_turns: u8,
    /// Rows/columns removed from top, bottom, left, right.
    pub crop: [usize; 4],
}

/// Upper bound on the border removed from each side, as a fraction of the extent.
pub const MAX_CROP_FRACTION: f64 = 0.1;

impl AugmentParams {
    pub const IDENTITY: Self = Self { flip: false, quarter_turns: 0, crop: [0; 4] };

    pub fn draw(rng: &mut impl Rng, height: usize, width: usize) -> Self {
        let flip = rng.random_bool(0.5);
        let turns = if height == width { rng.random_range(0..4u8) } else { 2 * rng.random_range(0..2u8) };
        let my = (height as f64 * MAX_CROP_FRACTION) as usize;
        let mx = (width as f64 * MAX_CROP_FRACTION) as usize;
        let crop = [rng.random_range(0..=my), rng.random_range(0..=my), rng.random_range(0..=mx), rng.random_range(0..=mx)];
        Self { flip, quarter_turns: turns, crop }
    }
}

fn flip_h<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let (h, w) = (s[1], s[2]);
    let d = t.data();
    Tensor::from_fn(s, |i| {
        let (plane, x) = (i / w, i % w);
        debug_assert!(plane < s[0] * h);
        d[plane * w + (w - 1 - x)]
    })
}

/// One counter-clockwise quarter turn of a planar `[C,H,W]` tensor.
fn rot90<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let d = t.data();
    // Output is [C, W, H]; out[y][x] = in[x][w - 1 - y].
    Tensor::from_fn(&[c, w, h], |i| {
        let (ch, y, x) = (i / (w * h), (i / h) % w, i % h);
        d[ch * h * w + x * w + (w - 1 - y)]
    })
}

fn crop<T: Scalar>(t: &Tensor<T>, [top, bottom, left, right]: [usize; 4]) -> Tensor<T> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let (oh, ow) = (h - top - bottom, w - left - right);
    let d = t.data();
    Tensor::from_fn(&[c, oh, ow], |i| {
        let (ch, y, x) = (i / (oh * ow), (i / ow) % oh, i % ow);
        d[ch * h * w + (y + top) * w + x + left]
    })
}

/// Applies the same flip, rotation and border crop to all three maps; the
/// crop is resized back to the original extent (ground truth by nearest
/// neighbour, so it stays binary).
pub fn apply_augment(sample: &Sample, p: &AugmentParams) -> Sample {
    let (h, w) = sample.size();
    let geo = |t: &Tensor<f32>| {
        let mut t = if p.flip { flip_h(t) } else { t.clone() };
        for _ in 0..p.quarter_turns {
            t = rot90(&t);
        }
        crop(&t, p.crop)
    };
    let cropped = p.crop != [0; 4];
    let (rgb, depth, gt) = (geo(&sample.rgb), geo(&sample.depth), geo(&sample.gt));
    let (oh, ow) = (rgb.shape()[1], rgb.shape()[2]);
    // Rotation of a non-square map swaps the extents; keep them swapped.
    let (th, tw) = if p.quarter_turns % 2 == 1 { (w, h) } else { (h, w) };
    if !cropped && (oh, ow) == (th, tw) {
        return Sample { rgb, depth, gt };
    }
    Sample {
        rgb: resize_bilinear(&rgb, th, tw),
        depth: resize_bilinear(&depth, th, tw),
        gt: binarize(&resize_nearest(&gt, th, tw)),
    }
}

/// Draws parameters from `rng` and applies them.
pub fn augment(sample: &Sample, rng: &mut impl Rng) -> Sample {
    let (h, w) = sample.size();
    apply_augment(sample, &AugmentParams::draw(rng, h, w))
}

/// Mixes a base seed with indices (epoch, sample, ...) into an independent stream seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

// ----- synthetic scenes -----

pub const MIN_COVERAGE: f64 = 0.02;
pub const MAX_COVERAGE: f64 = 0.6;

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect { y0: f64, y1: f64, x0: f64, x1: f64 },
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
}

impl Shape {
    fn draw(rng: &mut impl Rng, size: f64) -> Self {
        let extent = |rng: &mut ChaCha8Rng| rng.random_range(0.12..0.45) * size;
        let mut r = ChaCha8Rng::seed_from_u64(rng.random());
        let (hy, hx) = (extent(&mut r) / 2.0, extent(&mut r) / 2.0);
        let cy = r.random_range(hy..size - hy);
        let cx = r.random_range(hx..size - hx);
        if r.random_bool(0.5) {
            Shape::Rect { y0: cy - hy, y1: cy + hy, x0: cx - hx, x1: cx + hx }
        } else {
            Shape::Ellipse { cy, cx, ry: hy, rx: hx }
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Rect { y0, y1, x0, x1 } => (y0..y1).contains(&y) && (x0..x1).contains(&x),
            Shape::Ellipse { cy, cx, ry, rx } => ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0,
        }
    }
}

fn synth_one(rng: &mut ChaCha8Rng, size: usize) -> Sample {
    let n = size * size;
    let (mask, shapes) = loop {
        let count = rng.random_range(1..=3);
        let shapes: Vec<Shape> = (0..count).map(|_| Shape::draw(rng, size as f64)).collect();
        let mask: Vec<usize> = (0..n)
            .map(|i| {
                let (y, x) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
                shapes.iter().position(|s| s.contains(y, x)).map_or(0, |k| k + 1)
            })
            .collect();
        let fg = mask.iter().filter(|&&m| m > 0).count() as f64 / n as f64;
        if (MIN_COVERAGE..=MAX_COVERAGE).contains(&fg) {
            break (mask, shapes);
        }
    };
    let background: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    let objects: Vec<[f64; 3]> = shapes
        .iter()
        .map(|_| {
            // Keep each object visibly distinct from the background.
            loop {
                let c: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
                let dist: f64 = c.iter().zip(&background).map(|(a, b)| (a - b).abs()).sum();
                if dist > 0.6 {
                    break c;
                }
            }
        })
        .collect();
    let bg_depth = rng.random_range(0.6..0.9);
    let obj_depth: Vec<f64> = shapes.iter().map(|_| rng.random_range(0.1..0.4)).collect();
    let noise = 0.04;
    let mut rgb = vec![0f32; 3 * n];
    let mut depth = vec![0f32; n];
    let mut gt = vec![0f32; n];
    for i in 0..n {
        let m = mask[i];
        for c in 0..3 {
            let base = if m > 0 { objects[m - 1][c] } else { background[c] };
            rgb[c * n + i] = (base + rng.random_range(-noise..noise)).clamp(0.0, 1.0) as f32;
        }
        let d = if m > 0 { obj_depth[m - 1] } else { bg_depth };
        depth[i] = (d + rng.random_range(-noise..noise)).clamp(0.0, 1.0) as f32;
        gt[i] = (m > 0) as u8 as f32;
    }
    Sample {
        rgb: Tensor::new(vec![3, size, size], rgb).expect("extents"),
        depth: Tensor::new(vec![1, size, size], depth).expect("extents"),
        gt: Tensor::new(vec![1, size, size], gt).expect("extents"),
    }
}

/// `n` scenes of 1–3 rectangles/ellipses nearer than the background.
/// Ground-truth coverage lies in `[MIN_COVERAGE, MAX_COVERAGE]` by rejection.
pub fn synth_generate(seed: u64, n: usize, size: usize) -> Result<Vec<Sample>> {
    if size == 0 || size % 32 != 0 {
        return Err(Error::config("size", format!("{size} is not divisible by 32")));
    }
    Ok((0..n)
        .map(|i| synth_one(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64])), size))
        .collect())
}

// ----- manifests -----

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub rgb: PathBuf,
    pub depth: PathBuf,
    /// Absent in inference-only manifests.
    pub gt: Option<PathBuf>,
    /// 1-based line in the manifest.
    pub line: usize,
}

/// Parses `rgb<TAB>depth<TAB>gt` lines (the ground truth column may be
/// omitted), resolving paths against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&fields.len()) || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: n + 1,
                reason: format!("expected 2 or 3 tab-separated paths, found {}", fields.len()),
            });
        }
        let resolve = |f: &str| base.join(f);
        entries.push(ManifestEntry {
            rgb: resolve(fields[0]),
            depth: resolve(fields[1]),
            gt: fields.get(2).map(|f| resolve(f)),
            line: n + 1,
        });
    }
    Ok(entries)
}

/// Loads every entry; each must name a ground truth file.
pub fn load_manifest(path: &Path, size: usize) -> Result<Vec<Sample>> {
    read_manifest(path)?
        .iter()
        .map(|e| {
            let gt = e.gt.as_ref().ok_or_else(|| Error::Manifest {
                path: path.to_path_buf(),
                line: e.line,
                reason: "ground truth path missing".into(),
            })?;
            Sample::load(&e.rgb, &e.depth, gt, size)
        })
        .collect()
}

/// Loads and resizes only the RGB and depth maps of an entry.
pub fn load_inputs(entry: &ManifestEntry, size: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let rgb = Sample::channel(read_pnm(&entry.rgb)?, 3, &entry.rgb)?;
    let depth = Sample::channel(read_pnm(&entry.depth)?, 1, &entry.depth)?;
    if rgb.shape()[1..] != depth.shape()[1..] {
        return Err(Error::Invalid(format!(
            "{}: rgb {:?} and depth {:?} are not aligned",
            entry.rgb.display(),
            rgb.shape(),
            depth.shape()
        )));
    }
    Ok((resize_bilinear(&rgb, size, size), resize_bilinear(&depth, size, size)))
}

/// Writes `rgb/`, `depth/` (16-bit), `gt/` and a `manifest` into `dir`; returns the manifest path.
pub fn write_dataset(samples: &[Sample], dir: &Path) -> Result<PathBuf> {
    for sub in ["rgb", "depth", "gt"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let (rgb, depth, gt) = (format!("rgb/{i:04}.ppm"), format!("depth/{i:04}.pgm"), format!("gt/{i:04}.pgm"));
        write_map(&dir.join(&rgb), &s.rgb, false)?;
        write_map(&dir.join(&depth), &s.depth, true)?;
        write_map(&dir.join(&gt), &s.gt, false)?;
        manifest.push_str(&format!("{rgb}\t{depth}\t{gt}\n"));
    }
    let path = dir.join("manifest");
    write_file(&path, manifest.as_bytes())?;
    Ok(path)
}

/// Stacks samples into `[B,3,H,W]`, `[B,1,H,W]`, `[B,1,H,W]` tensors.
pub fn stack<T: Scalar>(samples: &[&Sample]) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let first = samples.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let (h, w) = first.size();
    if let Some(s) = samples.iter().find(|s| s.size() != (h, w)) {
        return Err(Error::Invalid(format!("batch mixes {h}x{w} with {:?}", s.size())));
    }
    let b = samples.len();
    let gather = |f: &dyn Fn(&Sample) -> &Tensor<f32>, c: usize| {
        let data: Vec<T> = samples.iter().flat_map(|s| f(s).data().iter().map(|&v| T::from_f64(v as f64))).collect();
        Tensor::new(vec![b, c, h, w], data).expect("stacked extents")
    };
    Ok((gather(&|s| &s.rgb, 3), gather(&|s| &s.depth, 1), gather(&|s| &s.gt, 1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(name: &str) -> PathBuf {
        PathBuf::from(name)
    }

    #[test]
    fn eight_bit_gray_normalizes() {
        let img = decode_pnm(b"P5\n2 2\n255\n\x00\xff\xff\x00", &p("a.pgm")).unwrap();
        assert_eq!(img.data, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn sixteen_bit_gray_normalizes() {
        let img = decode_pnm(b"P5 1 1 65535\n\x80\x00", &p("a.pgm")).unwrap();
        assert!((img.data[0] - 32768.0 / 65535.0).abs() < 1e-15);
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let img = decode_pnm(b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03", &p("a.ppm")).unwrap();
        assert_eq!((img.width, img.height, img.channels), (1, 1, 3));
    }

    #[test]
    fn header_errors_are_distinct_and_positioned() {
        let e = decode_pnm(b"P3\n1 1\n255\n", &p("x.pgm")).unwrap_err();
        assert!(matches!(e, Error::MalformedHeader { offset: 0, .. }), "{e}");
        let e = decode_pnm(b"P5\n99999999999999999999999 1\n255\n", &p("x.pgm")).unwrap_err();
        assert!(matches!(e, Error::ExtentOverflow { offset: 3, .. }), "{e}");
        let e = decode_pnm(b"P5\n4 4\n255\n\x00\x00", &p("x.pgm")).unwrap_err();
        assert!(matches!(e, Error::TruncatedPayload { offset: 13, expected: 16, .. }), "{e}");
        assert!(e.to_string().contains("x.pgm"));
    }

    #[test]
    fn gt_threshold_is_half() {
        let t = Tensor::<f32>::from_f64(&[1, 1, 2], &[127.0 / 255.0, 128.0 / 255.0]).unwrap();
        assert_eq!(binarize(&t).data(), &[0.0, 1.0]);
    }

    #[test]
    fn four_quarter_turns_restore() {
        let t = Tensor::<f32>::from_fn(&[2, 3, 3], |i| i as f32);
        let mut r = t.clone();
        for _ in 0..4 {
            r = rot90(&r);
        }
        assert_eq!(r, t);
        assert_ne!(rot90(&t), t);
    }

    #[test]
    fn seeds_differ_per_part() {
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(5, &[2]), derive_seed(5, &[2]));
    }
}
