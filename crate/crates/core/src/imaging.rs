//! RGB rasters, PNG I/O, luma conversion and the bicubic resampler used as
//! the down-sampling operator throughout the crate.

use std::path::Path;
use std::rc::Rc;

use image::{DynamicImage, ImageFormat, ImageReader, RgbImage};
use vaesr_autograd::{Float, Tensor, Var};

use crate::error::{Error, Result};

/// Cubic convolution parameter (Catmull-Rom).
pub const CUBIC_A: f64 = -0.5;

/// Luma weights for R, G, B (BT.601).
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// An `H x W x 3` raster stored row-major with interleaved channels.
///
/// Values are nominally in `[0, 1]`; intermediate results may leave that
/// range and are only clamped when saved or measured.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("image dimensions must be positive, got {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {height}x{width}x3 image",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(height, width, |_, _, c| rgb[c])
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn clamped(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width} at ({top}, {left}) outside {}x{} image",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(height, width, |y, x, c| self.get(top + y, left + x, c)))
    }

    /// Centre crop to the largest dimensions divisible by `multiple`.
    pub fn crop_to_multiple(&self, multiple: usize) -> Result<Self> {
        if multiple == 0 {
            return Err(Error::InvalidArgument("crop multiple must be positive".into()));
        }
        let (h, w) = (self.height / multiple * multiple, self.width / multiple * multiple);
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "{}x{} image is smaller than the factor {multiple}",
                self.height, self.width
            )));
        }
        if (h, w) == self.dims() {
            return Ok(self.clone());
        }
        self.crop((self.height - h) / 2, (self.width - w) / 2, h, w)
    }

    /// Pad bottom/right by edge replication up to the next multiple of `multiple`.
    pub fn pad_to_multiple(&self, multiple: usize) -> Self {
        let h = self.height.div_ceil(multiple) * multiple;
        let w = self.width.div_ceil(multiple) * multiple;
        Self::from_fn(h, w, |y, x, c| self.get(y.min(self.height - 1), x.min(self.width - 1), c))
    }

    pub fn sub(&self, other: &Image) -> Result<Self> {
        self.check_same_dims(other)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub(crate) fn check_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Convert to a `(1, 3, H, W)` tensor.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        images_to_tensor(std::slice::from_ref(self))
    }

    /// Extract sample `index` of an `(N, 3, H, W)` tensor.
    pub fn from_tensor<T: Float>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let (n, c, h, w) = t.dims4();
        if c != 3 || index >= n {
            return Err(Error::DimensionMismatch(format!("cannot take image {index} from tensor {:?}", t.shape())));
        }
        let plane = t.batch_slice(index);
        Self::new(h, w, (0..h * w * 3).map(|i| plane[(i % 3) * h * w + i / 3].as_f64()).collect())
    }
}

/// Stack equally sized images into an `(N, 3, H, W)` tensor.
///
/// # Panics
/// If `images` is empty or the sizes differ.
pub fn images_to_tensor<T: Float>(images: &[Image]) -> Tensor<T> {
    assert!(!images.is_empty(), "no images to stack");
    let (h, w) = images[0].dims();
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        assert_eq!(img.dims(), (h, w), "images differ in size");
        for c in 0..3 {
            data.extend(img.data.iter().skip(c).step_by(3).map(|&v| T::from_f64(v)));
        }
    }
    Tensor::new([images.len(), 3, h, w], data)
}

/// Single-channel plane with the dimensions of its source image.
#[derive(Clone, Debug, PartialEq)]
pub struct LumaPlane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl LumaPlane {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

pub fn rgb_to_luma(img: &Image) -> LumaPlane {
    let [wr, wg, wb] = LUMA_WEIGHTS;
    LumaPlane {
        height: img.height,
        width: img.width,
        data: img.data.chunks_exact(3).map(|p| wr * p[0] + wg * p[1] + wb * p[2]).collect(),
    }
}

/// Read an 8-bit RGB (or grayscale, replicated to RGB) PNG.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(Error::UnsupportedImage { path: path.into(), reason: "not a PNG file".into() });
    }
    let decoded = reader.decode().map_err(|e| Error::Decode { path: path.into(), reason: e.to_string() })?;
    let rgb = match decoded {
        DynamicImage::ImageRgb8(rgb) => rgb,
        DynamicImage::ImageLuma8(_) => decoded.to_rgb8(),
        other => {
            return Err(Error::UnsupportedImage {
                path: path.into(),
                reason: format!("expected 8-bit RGB or grayscale, found {:?}", other.color()),
            })
        }
    };
    let (w, h) = rgb.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::UnsupportedImage { path: path.into(), reason: "zero-sized image".into() });
    }
    let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Image::new(h as usize, w as usize, data)
}

/// PNG files directly inside `dir`, sorted by file name.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(out)
}

/// Quantize `v` to 8 bits: clamp to `[0, 1]` then `round(v * 255)`.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write an 8-bit RGB PNG, clamping and rounding each value.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw = img.data.iter().map(|&v| quantize(v)).collect();
    let buf = RgbImage::from_raw(img.width as u32, img.height as u32, raw)
        .expect("buffer length matches image dimensions");
    buf.save_with_format(path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}

/// Cubic convolution kernel with parameter [`CUBIC_A`].
pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Output length of resampling `len` samples by `scale`.
pub fn scaled_len(len: usize, scale: f64) -> usize {
    (len as f64 * scale).round() as usize
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!("resize scale must be positive and finite, got {scale}")));
    }
    Ok(())
}

/// Per-output-sample source indices and normalized weights along one axis.
#[derive(Clone, Debug)]
pub struct ResampleTaps {
    pub in_len: usize,
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl ResampleTaps {
    pub fn out_len(&self) -> usize {
        self.taps.len()
    }

    /// Dense `(out_len, in_len)` matrix.
    pub fn to_matrix<T: Float>(&self) -> Tensor<T> {
        let mut m = Tensor::zeros([self.out_len(), self.in_len]);
        let data = m.data_mut();
        for (i, row) in self.taps.iter().enumerate() {
            for &(j, w) in row {
                data[i * self.in_len + j] = T::from_f64(w);
            }
        }
        m
    }
}

/// Bicubic taps for resampling `in_len` samples by `scale`.
///
/// Sample centres map as `(i + 0.5) / scale - 0.5`. With `antialias` and
/// `scale < 1` the kernel is stretched by `1 / scale`. Source indices are
/// clamped to the valid range and the weights of each output sample are
/// normalized to sum to one.
pub fn bicubic_taps(in_len: usize, scale: f64, antialias: bool) -> Result<ResampleTaps> {
    check_scale(scale)?;
    let out_len = scaled_len(in_len, scale);
    if in_len == 0 || out_len == 0 {
        return Err(Error::InvalidArgument(format!("resizing {in_len} samples by {scale} leaves nothing")));
    }
    let stretch = if antialias && scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / stretch;
    let taps = (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as i64;
            let hi = (center + support).ceil() as i64;
            let mut row: Vec<(usize, f64)> = Vec::with_capacity((hi - lo + 1) as usize);
            let mut total = 0.0;
            for j in lo..=hi {
                let w = cubic((j as f64 - center) * stretch);
                if w == 0.0 {
                    continue;
                }
                total += w;
                let idx = j.clamp(0, in_len as i64 - 1) as usize;
                match row.iter_mut().find(|(k, _)| *k == idx) {
                    Some(entry) => entry.1 += w,
                    None => row.push((idx, w)),
                }
            }
            for entry in &mut row {
                entry.1 /= total;
            }
            row
        })
        .collect();
    Ok(ResampleTaps { in_len, taps })
}

/// Separable bicubic resize to `round(H * scale) x round(W * scale)`.
///
/// Shares the resampling path of [`bicubic_resize_var`], so both agree bit
/// for bit at `f64`.
pub fn bicubic_resize(img: &Image, scale: f64, antialias: bool) -> Result<Image> {
    let x = Var::constant(img.to_tensor::<f64>());
    Image::from_tensor(bicubic_resize_var(&x, scale, antialias)?.value(), 0)
}

/// Differentiable bicubic resize of an `(N, C, H, W)` batch.
pub fn bicubic_resize_var<T: Float>(x: &Var<T>, scale: f64, antialias: bool) -> Result<Var<T>> {
    let (_, _, h, w) = x.value().dims4();
    let rows = bicubic_taps(h, scale, antialias)?.to_matrix();
    let cols = bicubic_taps(w, scale, antialias)?.to_matrix();
    Ok(x.resample(Rc::new(rows), Rc::new(cols)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn luma_of_primaries() {
        let red = Image::filled(1, 1, [1.0, 0.0, 0.0]);
        assert_eq!(rgb_to_luma(&red).data, vec![0.299]);
        let white = Image::filled(2, 3, [1.0, 1.0, 1.0]);
        assert!(rgb_to_luma(&white).data.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        for g in [0.0, 0.25, 0.5, 0.73, 1.0] {
            let luma = rgb_to_luma(&Image::filled(1, 1, [g; 3])).data[0];
            assert!((luma - g).abs() < 1e-15);
        }
    }

    #[test]
    fn quantization_clamps_and_rounds() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(1.2), 255);
        assert_eq!(quantize(-0.1), 0);
        assert_eq!(quantize(128.0 / 255.0), 128);
    }

    #[test]
    fn unit_scale_is_identity() {
        let img = Image::from_fn(7, 5, |y, x, c| ((y * 31 + x * 7 + c) % 11) as f64 / 10.0);
        assert_eq!(bicubic_resize(&img, 1.0, true).unwrap(), img);
    }

    #[test]
    fn rejects_bad_scales() {
        let img = Image::filled(4, 4, [0.5; 3]);
        assert!(bicubic_resize(&img, 0.0, true).is_err());
        assert!(bicubic_resize(&img, -2.0, true).is_err());
        assert!(bicubic_resize(&img, f64::NAN, true).is_err());
        assert!(bicubic_resize(&img, 0.1, true).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let img = Image::from_fn(3, 4, |y, x, c| (y * 12 + x * 3 + c) as f64 / 64.0);
        let t = img.to_tensor::<f64>();
        assert_eq!(t.shape(), &[1, 3, 3, 4]);
        assert_eq!(t.data()[12], img.get(0, 0, 1));
        assert_eq!(Image::from_tensor(&t, 0).unwrap(), img);
    }

    #[test]
    fn crop_and_pad_to_multiple() {
        let img = Image::from_fn(10, 7, |y, x, _| (y * 7 + x) as f64);
        let cropped = img.crop_to_multiple(4).unwrap();
        assert_eq!(cropped.dims(), (8, 4));
        assert_eq!(cropped.get(0, 0, 0), img.get(1, 1, 0));
        let padded = img.pad_to_multiple(16);
        assert_eq!(padded.dims(), (16, 16));
        assert_eq!(padded.get(15, 15, 2), img.get(9, 6, 2));
        assert!(Image::filled(3, 3, [0.0; 3]).crop_to_multiple(4).is_err());
    }
}
