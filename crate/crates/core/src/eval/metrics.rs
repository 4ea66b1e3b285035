use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};

pub const HIST_MIN: f64 = -260.0;
pub const HIST_MAX: f64 = 260.0;
pub const HIST_BINS: usize = 130;
pub const HIST_BIN_WIDTH: f64 = (HIST_MAX - HIST_MIN) / HIST_BINS as f64;
pub const KL_SMOOTHING: f64 = 1e-12;
/// Returned by [`psnr`] for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Fixed-support histogram of noise values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoiseHistogram {
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
    pub total: u64,
}

impl Default for NoiseHistogram {
    fn default() -> Self {
        Self::new()
    }
}

impl NoiseHistogram {
    pub fn new() -> Self {
        NoiseHistogram {
            counts: vec![0; HIST_BINS],
            underflow: 0,
            overflow: 0,
            total: 0,
        }
    }

    /// Bin index for `v`, or `Err(false)` / `Err(true)` for under/overflow.
    pub fn bin_of(v: f64) -> std::result::Result<usize, bool> {
        if v < HIST_MIN {
            return Err(false);
        }
        if v >= HIST_MAX {
            return Err(true);
        }
        Ok((((v - HIST_MIN) / HIST_BIN_WIDTH).floor() as usize).min(HIST_BINS - 1))
    }

    pub fn add(&mut self, v: f64) {
        self.total += 1;
        match Self::bin_of(v) {
            Ok(i) => self.counts[i] += 1,
            Err(false) => self.underflow += 1,
            Err(true) => self.overflow += 1,
        }
    }

    pub fn extend(&mut self, values: impl IntoIterator<Item = f64>) {
        for v in values {
            self.add(v);
        }
    }

    pub fn merge(&mut self, other: &NoiseHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.underflow += other.underflow;
        self.overflow += other.overflow;
        self.total += other.total;
    }

    pub fn in_range(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Smoothed probabilities over the in-range bins.
    pub fn probabilities(&self) -> Vec<f64> {
        let mass = self.in_range() as f64 + KL_SMOOTHING * HIST_BINS as f64;
        self.counts.iter().map(|&c| (c as f64 + KL_SMOOTHING) / mass).collect()
    }
}

/// Histogram of all values; non-finite values are rejected.
pub fn histogram(values: impl IntoIterator<Item = f64>) -> Result<NoiseHistogram> {
    let mut h = NoiseHistogram::new();
    for v in values {
        if !v.is_finite() {
            return Err(Error::validation("histogram input contains a non-finite value"));
        }
        h.add(v);
    }
    Ok(h)
}

/// `KL(real ‖ synth)` between smoothed histograms.
pub fn kl_divergence(real: &NoiseHistogram, synth: &NoiseHistogram) -> Result<f64> {
    if real.total == 0 || synth.total == 0 {
        return Err(Error::validation("cannot compare an empty histogram"));
    }
    Ok(kl_from_probabilities(&real.probabilities(), &synth.probabilities()))
}

/// `Σ p ln(p / q)`; terms with `p = 0` contribute nothing.
pub fn kl_from_probabilities(p: &[f64], q: &[f64]) -> f64 {
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum();
    kl.max(0.0)
}

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::validation(format!(
            "image shapes differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio on the 0..255 scale, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0 * 255.0 / m).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable filtering over the valid region only.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity, Gaussian 11×11 window with σ = 1.5, averaged
/// over the valid window positions of every channel.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::validation(format!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let g = gaussian_window();
    let mut total = 0.0;
    for c in 0..CHANNELS {
        let (pa, pb) = (a.plane(c), b.plane(c));
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect() };
        let mu_a = filter_valid(pa, h, w, &g);
        let mu_b = filter_valid(pb, h, w, &g);
        let aa = filter_valid(&prod(&|x, _| x * x), h, w, &g);
        let bb = filter_valid(&prod(&|_, y| y * y), h, w, &g);
        let ab = filter_valid(&prod(&|x, y| x * y), h, w, &g);
        let mut s = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            s += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += s / mu_a.len() as f64;
    }
    Ok(total / CHANNELS as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_boundaries() {
        assert_eq!(NoiseHistogram::bin_of(-260.0), Ok(0));
        assert_eq!(NoiseHistogram::bin_of(259.99), Ok(129));
        assert_eq!(NoiseHistogram::bin_of(260.0), Err(true));
        assert_eq!(NoiseHistogram::bin_of(-260.01), Err(false));
        assert_eq!(NoiseHistogram::bin_of(0.0), Ok(65));
        assert_eq!(NoiseHistogram::bin_of(-0.5), Ok(64));
        let h = histogram([300.0, -300.0, 1.0]).unwrap();
        assert_eq!((h.overflow, h.underflow, h.in_range(), h.total), (1, 1, 1, 3));
        assert_eq!(HIST_BIN_WIDTH, 4.0);
    }

    #[test]
    fn kl_cases() {
        let p = [0.5, 0.5];
        let q = [0.25, 0.75];
        let want = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_from_probabilities(&p, &q) - want).abs() < 1e-12);
        assert!((want - 0.1438).abs() < 1e-4);
        let h = histogram((0..1000).map(|i| (i % 37) as f64 - 18.0)).unwrap();
        assert_eq!(kl_divergence(&h, &h).unwrap(), 0.0);
        assert!(kl_divergence(&h, &NoiseHistogram::new()).is_err());
    }

    #[test]
    fn psnr_offsets() {
        let a = Image::from_fn(8, 8, |c, y, x| (c * 40 + y * 8 + x) as f64);
        assert!((psnr(&a, &a.map(|v| v + 1.0)).unwrap() - 48.1308).abs() < 1e-4);
        let want16 = 20.0 * (255.0f64 / 16.0).log10();
        assert!((psnr(&a, &a.map(|v| v + 16.0)).unwrap() - want16).abs() < 1e-9);
        assert!((want16 - 24.0484).abs() < 1e-4);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        assert!(psnr(&a, &Image::filled(4, 8, 0.0)).is_err());
    }

    #[test]
    fn ssim_cases() {
        let a = Image::from_fn(16, 20, |c, y, x| ((c * 31 + y * 7 + x * 13) % 256) as f64);
        let b = a.map(|v| (v * 0.7 + 20.0).round());
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let s = ssim(&Image::filled(12, 12, 0.0), &Image::filled(12, 12, 255.0)).unwrap();
        assert!(s < 0.01);
        assert!(ssim(&Image::filled(10, 12, 0.0), &Image::filled(10, 12, 0.0)).is_err());
    }
}
