//! Noise statistics: heteroscedastic fits, std-vs-intensity curves and
//! spatial Pearson correlation.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data_io::ImagePair;
use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};

/// Intensity bin width used by [`estimate_hetero`].
pub const HETERO_BIN_WIDTH: f64 = 8.0;
/// Bins with fewer pixels are left out of fits and marked unreliable.
pub const MIN_BIN_SUPPORT: usize = 100;
const MIN_PIXELS_PER_CHANNEL: usize = 10_000;

/// A clean image and the noise observed on top of it.
pub type NoiseSample<'a> = (&'a Image, &'a Image);

/// `variance = beta_s_sq · intensity + beta_c_sq`, per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroParams {
    pub beta_s_sq: [f64; CHANNELS],
    pub beta_c_sq: [f64; CHANNELS],
    /// Set when a fitted coefficient came out negative and was clamped to 0.
    pub clamped: [bool; CHANNELS],
}

impl HeteroParams {
    pub fn variance(&self, channel: usize, intensity: f64) -> f64 {
        self.beta_s_sq[channel] * intensity + self.beta_c_sq[channel]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StdBin {
    pub center: f64,
    pub std: f64,
    pub count: usize,
    pub reliable: bool,
}

/// Noise standard deviation as a function of clean intensity, one curve per
/// channel over equal-width bins of `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StdIntensityCurve {
    pub channels: Vec<Vec<StdBin>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationPoint {
    pub distance: f64,
    /// `None` when every contributing offset had zero variance.
    pub r: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationProfile {
    pub points: Vec<CorrelationPoint>,
}

/// Pairs the clean image with its noise for every pair that has a noisy
/// image; errors when none do.
pub fn noise_samples(pairs: &[ImagePair]) -> Result<Vec<(Image, Image)>> {
    let out: Vec<(Image, Image)> = pairs
        .iter()
        .filter_map(|p| p.noise().map(|n| (p.clean.clone(), n)))
        .collect();
    if out.is_empty() {
        return Err(Error::InsufficientData("no pair has a noisy image".into()));
    }
    Ok(out)
}

fn as_refs(samples: &[(Image, Image)]) -> Vec<NoiseSample<'_>> {
    samples.iter().map(|(c, n)| (c, n)).collect()
}

#[derive(Clone, Copy, Default)]
struct Moments {
    count: usize,
    sum_x: f64,
    sum_n: f64,
}

/// Per-bin unbiased variance and mean intensity, computed in two passes.
fn binned_stats(samples: &[NoiseSample<'_>], channel: usize, n_bins: usize, width: f64) -> Vec<(usize, f64, f64)> {
    let bin_of = |x: f64| ((x / width).floor().max(0.0) as usize).min(n_bins - 1);
    let mut m = vec![Moments::default(); n_bins];
    for (clean, noise) in samples {
        for (&x, &n) in clean.plane(channel).iter().zip(noise.plane(channel)) {
            let b = &mut m[bin_of(x)];
            b.count += 1;
            b.sum_x += x;
            b.sum_n += n;
        }
    }
    let means: Vec<f64> = m.iter().map(|b| if b.count > 0 { b.sum_n / b.count as f64 } else { 0.0 }).collect();
    let mut ss = vec![0.0; n_bins];
    for (clean, noise) in samples {
        for (&x, &n) in clean.plane(channel).iter().zip(noise.plane(channel)) {
            let b = bin_of(x);
            ss[b] += (n - means[b]).powi(2);
        }
    }
    m.iter()
        .zip(ss)
        .map(|(b, s)| {
            let var = if b.count > 1 { s / (b.count - 1) as f64 } else { 0.0 };
            let mean_x = if b.count > 0 { b.sum_x / b.count as f64 } else { 0.0 };
            (b.count, mean_x, var)
        })
        .collect()
}

fn check_shapes(samples: &[NoiseSample<'_>]) -> Result<()> {
    for (c, n) in samples {
        if c.dims() != n.dims() {
            return Err(Error::validation("clean and noise fields differ in shape"));
        }
    }
    Ok(())
}

/// Least-squares fit of noise variance against mean bin intensity.
pub fn estimate_hetero(pairs: &[ImagePair]) -> Result<HeteroParams> {
    let samples = noise_samples(pairs)?;
    estimate_hetero_from(&as_refs(&samples))
}

pub fn estimate_hetero_from(samples: &[NoiseSample<'_>]) -> Result<HeteroParams> {
    check_shapes(samples)?;
    let pixels: usize = samples.iter().map(|(c, _)| c.height() * c.width()).sum();
    if pixels < MIN_PIXELS_PER_CHANNEL {
        return Err(Error::InsufficientData(format!(
            "{pixels} pixels per channel, need at least {MIN_PIXELS_PER_CHANNEL}"
        )));
    }
    let n_bins = (256.0 / HETERO_BIN_WIDTH).ceil() as usize;
    let mut out = HeteroParams {
        beta_s_sq: [0.0; CHANNELS],
        beta_c_sq: [0.0; CHANNELS],
        clamped: [false; CHANNELS],
    };
    for c in 0..CHANNELS {
        let bins: Vec<(f64, f64)> = binned_stats(samples, c, n_bins, HETERO_BIN_WIDTH)
            .into_iter()
            .filter(|&(count, _, _)| count >= MIN_BIN_SUPPORT)
            .map(|(_, x, v)| (x, v))
            .collect();
        if bins.len() < 2 {
            return Err(Error::Fit(format!(
                "channel {c}: {} qualifying intensity bin(s), need at least 2",
                bins.len()
            )));
        }
        let k = bins.len() as f64;
        let mx = bins.iter().map(|b| b.0).sum::<f64>() / k;
        let my = bins.iter().map(|b| b.1).sum::<f64>() / k;
        let sxx: f64 = bins.iter().map(|b| (b.0 - mx).powi(2)).sum();
        let sxy: f64 = bins.iter().map(|b| (b.0 - mx) * (b.1 - my)).sum();
        if sxx <= 1e-12 * (1.0 + mx * mx) {
            return Err(Error::Fit(format!("channel {c}: intensities do not vary across bins")));
        }
        let mut slope = sxy / sxx;
        let mut intercept = my - slope * mx;
        if !(slope.is_finite() && intercept.is_finite()) {
            return Err(Error::Fit(format!("channel {c}: non-finite fit")));
        }
        if slope < 0.0 {
            slope = 0.0;
            out.clamped[c] = true;
        }
        if intercept < 0.0 {
            intercept = 0.0;
            out.clamped[c] = true;
        }
        out.beta_s_sq[c] = slope;
        out.beta_c_sq[c] = intercept;
    }
    Ok(out)
}

pub fn std_vs_intensity(pairs: &[ImagePair], n_bins: usize) -> Result<StdIntensityCurve> {
    let samples = noise_samples(pairs)?;
    std_vs_intensity_from(&as_refs(&samples), n_bins)
}

pub fn std_vs_intensity_from(samples: &[NoiseSample<'_>], n_bins: usize) -> Result<StdIntensityCurve> {
    if n_bins < 2 {
        return Err(Error::validation("std-vs-intensity needs at least 2 bins"));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientData("no noise samples".into()));
    }
    check_shapes(samples)?;
    let width = 255.0 / n_bins as f64;
    let channels = (0..CHANNELS)
        .map(|c| {
            binned_stats(samples, c, n_bins, width)
                .into_iter()
                .enumerate()
                .map(|(i, (count, _, var))| StdBin {
                    center: (i as f64 + 0.5) * width,
                    std: var.sqrt(),
                    count,
                    reliable: count >= MIN_BIN_SUPPORT,
                })
                .collect()
        })
        .collect();
    Ok(StdIntensityCurve { channels })
}

fn canonical(dx: isize, dy: isize) -> (isize, isize) {
    if dy < 0 || (dy == 0 && dx < 0) {
        (-dx, -dy)
    } else {
        (dx, dy)
    }
}

/// Pearson correlation between a plane and its copy shifted by `(dx, dy)`
/// over the valid overlap, with the pair count. `None` for zero variance.
pub fn pearson_at_offset(plane: &[f64], h: usize, w: usize, dx: isize, dy: isize) -> (Option<f64>, usize) {
    let (dx, dy) = canonical(dx, dy);
    let (adx, ady) = (dx.unsigned_abs(), dy.unsigned_abs());
    if adx >= w || ady >= h {
        return (None, 0);
    }
    let rows = h - ady;
    let cols = w - adx;
    let count = rows * cols;
    // Pixel (y, x) pairs with (y + dy, x + dx); dy >= 0 after canonicalisation.
    let x0 = if dx < 0 { adx } else { 0 };
    let at = |y: usize, x: usize| plane[y * w + x];
    let shifted = |y: usize, x: usize| plane[(y + ady) * w + (x as isize + dx) as usize];
    let (mut sa, mut sb) = (0.0, 0.0);
    for y in 0..rows {
        for x in x0..x0 + cols {
            sa += at(y, x);
            sb += shifted(y, x);
        }
    }
    let (ma, mb) = (sa / count as f64, sb / count as f64);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for y in 0..rows {
        for x in x0..x0 + cols {
            let a = at(y, x) - ma;
            let b = shifted(y, x) - mb;
            cov += a * b;
            va += a * a;
            vb += b * b;
        }
    }
    if va <= 0.0 || vb <= 0.0 {
        return (None, count);
    }
    (Some(cov / (va.sqrt() * vb.sqrt())), count)
}

/// Count-weighted correlation at one offset, averaged over channels.
pub fn lag_correlation(fields: &[Image], dx: isize, dy: isize) -> Option<f64> {
    let mut per_channel = Vec::new();
    for c in 0..CHANNELS {
        let (mut acc, mut weight) = (0.0, 0usize);
        for f in fields {
            let (h, w) = f.dims();
            if let (Some(r), n) = pearson_at_offset(f.plane(c), h, w, dx, dy) {
                acc += r * n as f64;
                weight += n;
            }
        }
        if weight > 0 {
            per_channel.push(acc / weight as f64);
        }
    }
    (!per_channel.is_empty()).then(|| per_channel.iter().sum::<f64>() / per_channel.len() as f64)
}

/// Correlation against Euclidean distance, using every integer offset with
/// `1 <= |offset| <= max_distance`.
pub fn spatial_correlation(fields: &[Image], max_distance: usize) -> Result<CorrelationProfile> {
    if fields.is_empty() {
        return Err(Error::InsufficientData("no noise fields".into()));
    }
    if max_distance == 0 {
        return Err(Error::validation("max_distance must be at least 1"));
    }
    for f in fields {
        let (h, w) = f.dims();
        if h <= max_distance || w <= max_distance {
            return Err(Error::validation(format!(
                "field {h}x{w} too small for max_distance {max_distance}"
            )));
        }
    }
    let m = max_distance as isize;
    let mut by_dist: BTreeMap<isize, Vec<(isize, isize)>> = BTreeMap::new();
    for dy in 0..=m {
        for dx in -m..=m {
            let d2 = dx * dx + dy * dy;
            if d2 == 0 || d2 > m * m || canonical(dx, dy) != (dx, dy) {
                continue;
            }
            by_dist.entry(d2).or_default().push((dx, dy));
        }
    }
    let mut points = Vec::with_capacity(by_dist.len());
    for (d2, offsets) in by_dist {
        let mut channel_r = Vec::new();
        let mut count = 0;
        for c in 0..CHANNELS {
            let (mut acc, mut weight, mut total) = (0.0, 0usize, 0usize);
            for f in fields {
                let (h, w) = f.dims();
                for &(dx, dy) in &offsets {
                    let (r, n) = pearson_at_offset(f.plane(c), h, w, dx, dy);
                    total += n;
                    if let Some(r) = r {
                        acc += r * n as f64;
                        weight += n;
                    }
                }
            }
            count = total;
            if weight > 0 {
                channel_r.push(acc / weight as f64);
            }
        }
        points.push(CorrelationPoint {
            distance: (d2 as f64).sqrt(),
            r: (!channel_r.is_empty()).then(|| channel_r.iter().sum::<f64>() / channel_r.len() as f64),
            count,
        });
    }
    Ok(CorrelationProfile { points })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

pub(crate) fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_hetero_csv(path: &Path, p: &HeteroParams) -> Result<()> {
    write_rows(
        path,
        &["channel", "beta_s_sq", "beta_c_sq"],
        (0..CHANNELS).map(|c| vec![c.to_string(), p.beta_s_sq[c].to_string(), p.beta_c_sq[c].to_string()]),
    )
}

pub fn write_std_curve_csv(path: &Path, curve: &StdIntensityCurve) -> Result<()> {
    let rows = curve.channels.iter().enumerate().flat_map(|(c, bins)| {
        bins.iter()
            .map(move |b| vec![c.to_string(), b.center.to_string(), b.std.to_string(), b.count.to_string()])
    });
    write_rows(path, &["channel", "bin_center", "std", "count"], rows)
}

pub fn write_correlation_csv(path: &Path, profile: &CorrelationProfile) -> Result<()> {
    let rows = profile.points.iter().map(|p| {
        vec![
            p.distance.to_string(),
            p.r.map_or("nan".to_string(), |r| r.to_string()),
            p.count.to_string(),
        ]
    });
    write_rows(path, &["d", "r", "count"], rows)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;

    fn gaussian_field(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * h * w).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Image::new(h, w, data)
    }

    #[test]
    fn zero_noise_fits_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let clean = crate::data_io::uniform_intensity_image(128, 128, 0.0, 255.0, &mut rng);
        let zero = Image::filled(128, 128, 0.0);
        let p = estimate_hetero_from(&[(&clean, &zero)]).unwrap();
        assert_eq!(p.beta_s_sq, [0.0; 3]);
        assert_eq!(p.beta_c_sq, [0.0; 3]);
    }

    #[test]
    fn constant_clean_is_fit_error() {
        let clean = Image::filled(128, 128, 100.0);
        let noise = gaussian_field(128, 128, 1);
        assert!(matches!(estimate_hetero_from(&[(&clean, &noise)]), Err(Error::Fit(_))));
    }

    #[test]
    fn too_few_pixels() {
        let clean = Image::filled(50, 50, 100.0);
        assert!(matches!(estimate_hetero_from(&[(&clean, &clean)]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn constant_field_is_degenerate() {
        let f = Image::filled(16, 16, 3.0);
        let prof = spatial_correlation(&[f], 2).unwrap();
        assert!(prof.points.iter().all(|p| p.r.is_none() && p.count > 0));
        assert!(matches!(spatial_correlation(&[Image::filled(2, 8, 0.0)], 2), Err(Error::Validation(_))));
    }

    #[test]
    fn distances_sorted_and_cover_radius() {
        let prof = spatial_correlation(&[gaussian_field(32, 32, 2)], 2).unwrap();
        let d: Vec<f64> = prof.points.iter().map(|p| p.distance).collect();
        assert_eq!(d, vec![1.0, 2f64.sqrt(), 2.0]);
        // offsets at d=1: (1,0),(0,1) → 32*31 pairs each
        assert_eq!(prof.points[0].count, 2 * 32 * 31);
    }

    #[test]
    fn pearson_matches_direct_formula_on_small_case() {
        let plane = [1.0, 2.0, 4.0, 3.0, 5.0, 9.0];
        // (dx=1, dy=0) pairs: (1,2),(2,4),(3,5),(5,9)
        let a = [1.0, 2.0, 3.0, 5.0];
        let b = [2.0, 4.0, 5.0, 9.0];
        let ma = a.iter().sum::<f64>() / 4.0;
        let mb = b.iter().sum::<f64>() / 4.0;
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let want = cov / (va * vb).sqrt();
        let (r, n) = pearson_at_offset(&plane, 2, 3, 1, 0);
        assert_eq!(n, 4);
        assert!((r.unwrap() - want).abs() < 1e-12);
    }
}
