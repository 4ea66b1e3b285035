use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::analysis::{estimate_hetero_from, write_rows, HeteroParams, NoiseSample};
use crate::data_io::{CameraCondition, ConditionRegistry, ImagePair};
use crate::error::{Error, Result};
use crate::eval::metrics::{kl_divergence, NoiseHistogram};
use crate::gan::end_to_end_synthesize;
use crate::image::{Image, CHANNELS};
use crate::train::NoiseModel;

/// Anything that turns a clean image into an 8-bit noisy one.
pub trait NoiseSynthesizer {
    fn synthesize(&self, clean: &Image, cond: CameraCondition, rng: &mut ChaCha8Rng) -> Result<Image>;
}

impl NoiseSynthesizer for NoiseModel {
    fn synthesize(&self, clean: &Image, cond: CameraCondition, rng: &mut ChaCha8Rng) -> Result<Image> {
        Ok(end_to_end_synthesize(&self.flow, self.generator.as_ref(), clean, cond, rng)?.noisy)
    }
}

fn group_pairs(pairs: &[ImagePair]) -> Result<BTreeMap<CameraCondition, Vec<(Image, Image)>>> {
    let mut groups: BTreeMap<CameraCondition, Vec<(Image, Image)>> = BTreeMap::new();
    for p in pairs {
        groups
            .entry(p.condition)
            .or_default()
            .push((p.clean.clone(), p.require_noise()?));
    }
    if groups.is_empty() {
        return Err(Error::validation("no pairs to fit a baseline on"));
    }
    Ok(groups)
}

fn add_gaussian(clean: &Image, rng: &mut ChaCha8Rng, std: impl Fn(usize, f64) -> f64) -> Image {
    let (h, w) = clean.dims();
    let mut out = clean.clone();
    for c in 0..CHANNELS {
        for v in out.plane_mut(c) {
            let z: f64 = rng.sample(StandardNormal);
            *v += std(c, *v) * z;
        }
    }
    debug_assert_eq!(out.dims(), (h, w));
    out.quantized()
}

/// Signal-independent Gaussian noise, one standard deviation per condition
/// and channel.
#[derive(Clone, Debug, PartialEq)]
pub struct AwgnBaseline {
    pub std: BTreeMap<CameraCondition, [f64; CHANNELS]>,
}

impl AwgnBaseline {
    pub fn fit(pairs: &[ImagePair]) -> Result<Self> {
        let mut std = BTreeMap::new();
        for (cond, items) in group_pairs(pairs)? {
            let mut s = [0.0; CHANNELS];
            for (c, sc) in s.iter_mut().enumerate() {
                let (mut sum, mut sq, mut n) = (0.0, 0.0, 0.0);
                for (_, noise) in &items {
                    for &v in noise.plane(c) {
                        sum += v;
                        sq += v * v;
                        n += 1.0;
                    }
                }
                let mean = sum / n;
                *sc = (sq / n - mean * mean).max(0.0).sqrt();
            }
            std.insert(cond, s);
        }
        Ok(AwgnBaseline { std })
    }
}

impl NoiseSynthesizer for AwgnBaseline {
    fn synthesize(&self, clean: &Image, cond: CameraCondition, rng: &mut ChaCha8Rng) -> Result<Image> {
        let s = self
            .std
            .get(&cond)
            .ok_or_else(|| Error::UnknownCondition(format!("no AWGN fit for condition {cond:?}")))?;
        Ok(add_gaussian(clean, rng, |c, _| s[c]))
    }
}

/// Per-condition `β_s²·x + β_c²` variance model.
#[derive(Clone, Debug)]
pub struct HeteroBaseline {
    pub params: BTreeMap<CameraCondition, HeteroParams>,
}

impl HeteroBaseline {
    pub fn fit(pairs: &[ImagePair]) -> Result<Self> {
        let mut params = BTreeMap::new();
        for (cond, items) in group_pairs(pairs)? {
            let samples: Vec<NoiseSample<'_>> = items.iter().map(|(a, b)| (a, b)).collect();
            params.insert(cond, estimate_hetero_from(&samples)?);
        }
        Ok(HeteroBaseline { params })
    }
}

impl NoiseSynthesizer for HeteroBaseline {
    fn synthesize(&self, clean: &Image, cond: CameraCondition, rng: &mut ChaCha8Rng) -> Result<Image> {
        let p = self
            .params
            .get(&cond)
            .ok_or_else(|| Error::UnknownCondition(format!("no heteroscedastic fit for condition {cond:?}")))?;
        Ok(add_gaussian(clean, rng, |c, x| p.variance(c, x).max(0.0).sqrt()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupKl {
    pub condition: CameraCondition,
    pub kl: f64,
    pub real: NoiseHistogram,
    pub synth: NoiseHistogram,
}

/// KL per (camera, ISO) group, per-camera means of those, and the mean over
/// cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct KlReport {
    pub groups: Vec<GroupKl>,
    pub per_camera: Vec<(usize, f64)>,
    pub overall: f64,
}

/// Pools real and synthesized noise values per condition, synthesizing one
/// noisy image per real pair.
pub fn kl_report(pairs: &[ImagePair], synth: &dyn NoiseSynthesizer, rng: &mut ChaCha8Rng) -> Result<KlReport> {
    let mut hists: BTreeMap<CameraCondition, (NoiseHistogram, NoiseHistogram)> = BTreeMap::new();
    for p in pairs {
        let real = p.require_noise()?;
        let fake = synth.synthesize(&p.clean, p.condition, rng)?;
        let fake_noise = fake.zip_map(&p.clean, |a, b| a - b);
        let e = hists.entry(p.condition).or_default();
        e.0.extend(real.data().iter().copied());
        e.1.extend(fake_noise.data().iter().copied());
    }
    if hists.is_empty() {
        return Err(Error::validation("KL report needs at least one pair"));
    }
    let mut groups = Vec::with_capacity(hists.len());
    for (condition, (real, synth)) in hists {
        groups.push(GroupKl {
            condition,
            kl: kl_divergence(&real, &synth)?,
            real,
            synth,
        });
    }
    let mut cams: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for g in &groups {
        cams.entry(g.condition.camera).or_default().push(g.kl);
    }
    let per_camera: Vec<(usize, f64)> = cams
        .into_iter()
        .map(|(c, v)| (c, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    let overall = per_camera.iter().map(|(_, k)| k).sum::<f64>() / per_camera.len() as f64;
    Ok(KlReport {
        groups,
        per_camera,
        overall,
    })
}

/// One row per group, per camera (`iso = all`) and overall, with one KL
/// column per named report. All reports must cover the same groups.
pub fn write_kl_csv(path: &Path, registry: &ConditionRegistry, reports: &[(&str, &KlReport)]) -> Result<()> {
    let Some((_, first)) = reports.first() else {
        return Err(Error::validation("no KL reports to write"));
    };
    let mut header = vec!["camera", "iso"];
    header.extend(reports.iter().map(|(n, _)| *n));
    let mut rows = Vec::new();
    for (i, g) in first.groups.iter().enumerate() {
        let mut row = vec![
            registry.camera_name(g.condition).to_string(),
            registry.iso_value(g.condition).to_string(),
        ];
        for (_, r) in reports {
            row.push(r.groups.get(i).map_or(f64::NAN, |x| x.kl).to_string());
        }
        rows.push(row);
    }
    for (j, (cam, _)) in first.per_camera.iter().enumerate() {
        let name = registry.cameras.get(*cam).cloned().unwrap_or_default();
        let mut row = vec![name, "all".to_string()];
        for (_, r) in reports {
            row.push(r.per_camera.get(j).map_or(f64::NAN, |x| x.1).to_string());
        }
        rows.push(row);
    }
    let mut row = vec!["overall".to_string(), "all".to_string()];
    row.extend(reports.iter().map(|(_, r)| r.overall.to_string()));
    rows.push(row);
    write_rows(path, &header, rows)
}
