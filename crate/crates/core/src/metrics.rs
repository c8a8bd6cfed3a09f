//! PSNR and SSIM. Inputs are clamped to `[0, 1]` before measuring.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{list_pngs, load_image, rgb_to_luma, Image, LumaPlane};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// SSIM stabilizers for a dynamic range of 1.
pub const SSIM_C1: f64 = K1 * K1;
pub const SSIM_C2: f64 = K2 * K2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Luma,
    Rgb,
}

pub fn psnr(a: &Image, b: &Image, channel: Channel) -> Result<f64> {
    a.check_same_dims(b)?;
    let (a, b) = (a.clamped(), b.clamped());
    let sq = |x: f64, y: f64| (x - y) * (x - y);
    let mse = match channel {
        Channel::Rgb => a.data().iter().zip(b.data()).map(|(&x, &y)| sq(x, y)).sum::<f64>() / a.data().len() as f64,
        Channel::Luma => {
            let (la, lb) = (rgb_to_luma(&a), rgb_to_luma(&b));
            la.data.iter().zip(&lb.data).map(|(&x, &y)| sq(x, y)).sum::<f64>() / la.data.len() as f64
        }
    };
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> =
        (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable filtering over valid window positions only.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| win[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| win[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of the luma planes over every valid 11x11 window position.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    Ok(ssim_luma(&rgb_to_luma(&a.clamped()), &rgb_to_luma(&b.clamped())))
}

fn ssim_luma(a: &LumaPlane, b: &LumaPlane) -> f64 {
    let (h, w) = (a.height, a.width);
    let win = gaussian_window();
    let prod = |f: fn(f64, f64) -> f64| a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let mu_a = filter_valid(&a.data, h, w, &win);
    let mu_b = filter_valid(&b.data, h, w, &win);
    let aa = filter_valid(&a.data.iter().map(|v| v * v).collect::<Vec<_>>(), h, w, &win);
    let bb = filter_valid(&b.data.iter().map(|v| v * v).collect::<Vec<_>>(), h, w, &win);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &win);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let mab = ma * mb;
        let (va, vb) = (aa[i] - ma * ma, bb[i] - mb * mb);
        let cov = ab[i] - mab;
        total += ((2.0 * mab + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    total / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub filename: String,
    pub psnr_y: f64,
    pub psnr_rgb: f64,
    pub ssim: f64,
}

impl MetricRow {
    pub fn measure(filename: impl Into<String>, pred: &Image, reference: &Image) -> Result<Self> {
        Ok(Self {
            filename: filename.into(),
            psnr_y: psnr(pred, reference, Channel::Luma)?,
            psnr_rgb: psnr(pred, reference, Channel::Rgb)?,
            ssim: ssim(pred, reference)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean_psnr_y: f64,
    pub mean_psnr_rgb: f64,
    pub mean_ssim: f64,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("no metric rows".into()));
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            mean_psnr_y: mean(|r| r.psnr_y),
            mean_psnr_rgb: mean(|r| r.psnr_rgb),
            mean_ssim: mean(|r| r.ssim),
            rows,
        })
    }

    /// `filename,psnr_y,psnr_rgb,ssim` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("filename,psnr_y,psnr_rgb,ssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", r.filename, r.psnr_y, r.psnr_rgb, r.ssim);
        }
        let _ = writeln!(s, "mean,{:.6},{:.6},{:.6}", self.mean_psnr_y, self.mean_psnr_rgb, self.mean_ssim);
        s
    }
}

/// Compare every PNG in `pred_dir` with the same-named file in `ref_dir`.
pub fn evaluate_corpus(pred_dir: impl AsRef<Path>, ref_dir: impl AsRef<Path>) -> Result<MetricReport> {
    let (pred_dir, ref_dir) = (pred_dir.as_ref(), ref_dir.as_ref());
    let names = |dir: &Path| -> Result<BTreeMap<String, std::path::PathBuf>> {
        Ok(list_pngs(dir)?
            .into_iter()
            .map(|p| (p.file_name().expect("listed files have names").to_string_lossy().into_owned(), p))
            .collect())
    };
    let preds = names(pred_dir)?;
    let refs = names(ref_dir)?;
    let missing_ref: Vec<_> = preds.keys().filter(|k| !refs.contains_key(*k)).cloned().collect();
    let missing_pred: Vec<_> = refs.keys().filter(|k| !preds.contains_key(*k)).cloned().collect();
    if missing_ref.len() == preds.len() {
        return Err(Error::Dataset(format!(
            "no matching PNG file names between {} and {}",
            pred_dir.display(),
            ref_dir.display()
        )));
    }
    if !missing_ref.is_empty() || !missing_pred.is_empty() {
        let mut msg = String::from("unmatched files:");
        for n in &missing_ref {
            let _ = write!(msg, " {n} (no reference in {})", ref_dir.display());
        }
        for n in &missing_pred {
            let _ = write!(msg, " {n} (no prediction in {})", pred_dir.display());
        }
        return Err(Error::Dataset(msg));
    }
    let rows = preds
        .iter()
        .map(|(name, path)| {
            let pred = load_image(path)?;
            let reference = load_image(&refs[name])?;
            MetricRow::measure(name.clone(), &pred, &reference).map_err(|e| Error::Dataset(format!("{name}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_rows(rows)
}
