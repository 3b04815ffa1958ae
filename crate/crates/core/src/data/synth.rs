//! Deterministic synthetic nodule corpus.
//!
//! Each nodule is an ellipsoidal blob rendered over a noisy air-like
//! background, with every generative knob tied to exactly one visual trait
//! and one rating, so the labels are a pure, auditable function of the
//! knobs:
//!
//! * in-plane elongation        → sphericity (round = 5)
//! * boundary blur width        → margin, and (with contrast) subtlety
//! * sinusoidal boundary waves  → lobulation
//! * radial spikes              → spiculation
//! * bright +400 HU blobs       → calcification (present lowers the score,
//!                                absent = 6)
//! * interior intensity noise   → texture (solid = 5)
//! * dark interior holes        → internal structure
//! * malignancy                 → clamped affine combination of lobulation,
//!                                spiculation, inverted margin and inverted
//!                                sphericity (see [`malignancy_from`])

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::attributes::{Attribute, ATTRIBUTE_COUNT};
use crate::autodiff::Tensor;

use super::manifest::{DatasetManifest, ManifestEntry, NoduleSample};
use super::volume::{save_volume, NoduleVolume, LATERAL};
use super::DataError;

/// Coefficients of the malignancy label: offset, lobulation, spiculation,
/// inverted margin (6 − margin), inverted sphericity (6 − sphericity).
/// The result is clamped to the 1–5 scale.
pub const MALIGNANCY_WEIGHTS: [f64; 5] = [-1.5, 0.4, 0.4, 0.35, 0.35];

/// The documented label formula, exposed so stored malignancy scores can be
/// regenerated from the other stored attributes.
pub fn malignancy_from(lobulation: f64, spiculation: f64, margin: f64, sphericity: f64) -> f64 {
    let [c0, c1, c2, c3, c4] = MALIGNANCY_WEIGHTS;
    let raw = c0 + c1 * lobulation + c2 * spiculation + c3 * (6.0 - margin) + c4 * (6.0 - sphericity);
    raw.clamp(1.0, 5.0)
}

/// Generative knobs for one nodule. All ranges are inclusive.
#[derive(Clone, Debug)]
pub struct SynthParams {
    /// Base radius in pixels, 8–20.
    pub radius: f64,
    /// In-plane axis ratio, 1.0 (round) – 2.2.
    pub elongation: f64,
    /// Ellipse orientation, 0–π.
    pub orientation: f64,
    /// Boundary blur width in pixels, 0.5–6.0.
    pub edge_blur: f64,
    /// Amplitude of the sinusoidal boundary waves, 0–0.35.
    pub lobulation_amp: f64,
    /// Number of boundary waves, 2–5.
    pub lobulation_waves: u32,
    /// Spike strength, 0–1 (drives spike count and length).
    pub spike_strength: f64,
    /// Number of bright calcification blobs, 0–4.
    pub calc_blobs: u32,
    /// Core intensity in HU, −400–100.
    pub core_hu: f64,
    /// Interior noise level, 0–1.
    pub heterogeneity: f64,
    /// Internal-structure knob, 0–1 (drives dark interior holes).
    pub structure_knob: f64,
    /// Slice count, 1–45, log-normal with mean ≈ 5.6.
    pub slice_count: usize,
}

impl SynthParams {
    pub fn draw(rng: &mut ChaCha8Rng) -> Self {
        let z: f64 = rng.sample(StandardNormal);
        let slice_count = (4.8f64.ln() + 0.55 * z).exp().round().clamp(1.0, 45.0) as usize;
        Self {
            radius: rng.gen_range(8.0..=20.0),
            elongation: rng.gen_range(1.0..=2.2),
            orientation: rng.gen_range(0.0..std::f64::consts::PI),
            edge_blur: rng.gen_range(0.5..=6.0),
            lobulation_amp: rng.gen_range(0.0..=0.35),
            lobulation_waves: rng.gen_range(2..=5),
            spike_strength: rng.gen_range(0.0..=1.0),
            calc_blobs: if rng.gen_bool(0.5) { rng.gen_range(1..=4) } else { 0 },
            core_hu: rng.gen_range(-400.0..=100.0),
            heterogeneity: rng.gen_range(0.0..=1.0),
            structure_knob: rng.gen_range(0.0..=1.0),
            slice_count,
        }
    }

    /// Ratings implied by the knobs, original scales, scoring order.
    pub fn ratings(&self) -> [f64; ATTRIBUTE_COUNT] {
        let blur_norm = (self.edge_blur - 0.5) / 5.5;
        let contrast_norm = (self.core_hu + 400.0) / 500.0;
        let sphericity = (5.0 - 4.0 * (self.elongation - 1.0) / 1.2).clamp(1.0, 5.0);
        let margin = (5.0 - 4.0 * blur_norm).clamp(1.0, 5.0);
        let subtlety =
            (1.0 + 4.0 * (0.6 * contrast_norm + 0.4 * (1.0 - blur_norm))).clamp(1.0, 5.0);
        let lobulation = (1.0 + 4.0 * self.lobulation_amp / 0.35).clamp(1.0, 5.0);
        let spiculation = (1.0 + 4.0 * self.spike_strength).clamp(1.0, 5.0);
        let calcification = if self.calc_blobs == 0 {
            6.0
        } else {
            (6.0 - 1.2 * self.calc_blobs as f64).clamp(1.0, 6.0)
        };
        let texture = (5.0 - 4.0 * self.heterogeneity).clamp(1.0, 5.0);
        let internal_structure = (1.0 + 3.0 * self.structure_knob).clamp(1.0, 4.0);
        let malignancy = malignancy_from(lobulation, spiculation, margin, sphericity);

        let mut out = [0.0; ATTRIBUTE_COUNT];
        out[Attribute::Subtlety.index()] = subtlety;
        out[Attribute::InternalStructure.index()] = internal_structure;
        out[Attribute::Calcification.index()] = calcification;
        out[Attribute::Sphericity.index()] = sphericity;
        out[Attribute::Margin.index()] = margin;
        out[Attribute::Lobulation.index()] = lobulation;
        out[Attribute::Spiculation.index()] = spiculation;
        out[Attribute::Texture.index()] = texture;
        out[Attribute::Malignancy.index()] = malignancy;
        out
    }
}

const BACKGROUND_HU: f64 = -800.0;
const BACKGROUND_NOISE_HU: f64 = 30.0;
const CALCIFICATION_HU: f64 = 400.0;
const HOLE_HU: f64 = -600.0;
const HETEROGENEITY_HU: f64 = 150.0;

struct Renderer {
    params: SynthParams,
    center_x: f64,
    center_y: f64,
    wave_phase: f64,
    spikes: Vec<f64>,
    spike_len: f64,
    spike_width: f64,
    calc_positions: Vec<(f64, f64)>,
    hole_positions: Vec<(f64, f64)>,
}

impl Renderer {
    fn new(params: SynthParams, rng: &mut ChaCha8Rng) -> Self {
        let center_x = LATERAL as f64 / 2.0 + rng.gen_range(-4.0..=4.0);
        let center_y = LATERAL as f64 / 2.0 + rng.gen_range(-4.0..=4.0);
        let wave_phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let spike_count = (12.0 * params.spike_strength).round() as usize;
        let spikes = (0..spike_count)
            .map(|k| {
                k as f64 / spike_count.max(1) as f64 * std::f64::consts::TAU
                    + rng.gen_range(-0.2..=0.2)
            })
            .collect();
        let spike_len = 0.15 + 0.55 * params.spike_strength;
        let calc_positions = (0..params.calc_blobs)
            .map(|_| {
                let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                let rad = rng.gen_range(0.0..=0.6);
                (ang, rad)
            })
            .collect();
        let hole_count = (3.0 * params.structure_knob).round() as usize;
        let hole_positions = (0..hole_count)
            .map(|_| {
                let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                let rad = rng.gen_range(0.1..=0.55);
                (ang, rad)
            })
            .collect();
        Self {
            params,
            center_x,
            center_y,
            wave_phase,
            spikes,
            spike_len,
            spike_width: 0.18,
            calc_positions,
            hole_positions,
        }
    }

    fn render(&self, rng: &mut ChaCha8Rng) -> Tensor<f32> {
        let p = &self.params;
        let m = p.slice_count;
        let mut data = vec![0.0f32; m * LATERAL * LATERAL];
        let (sin_o, cos_o) = p.orientation.sin_cos();
        let sqrt_e = p.elongation.sqrt();
        for s in 0..m {
            // axial position in [-0.9, 0.9]; end slices carry small
            // cross-sections, like real stacks
            let rel = if m == 1 {
                0.0
            } else {
                (s as f64 / (m - 1) as f64 * 2.0 - 1.0) * 0.9
            };
            let slice_scale = (1.0 - rel * rel).sqrt();
            let r_s = p.radius * slice_scale;
            let plane = &mut data[s * LATERAL * LATERAL..(s + 1) * LATERAL * LATERAL];
            for y in 0..LATERAL {
                for x in 0..LATERAL {
                    let dx = x as f64 - self.center_x;
                    let dy = y as f64 - self.center_y;
                    let u = cos_o * dx + sin_o * dy;
                    let v = -sin_o * dx + cos_o * dy;
                    let a = (r_s * sqrt_e).max(0.75);
                    let b = (r_s / sqrt_e).max(0.75);
                    let re = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
                    let theta = v.atan2(u);
                    let boundary =
                        1.0 + p.lobulation_amp * (p.lobulation_waves as f64 * theta + self.wave_phase).sin();
                    let mut q = re / boundary.max(0.4);
                    // spikes: thin angular slivers of extra material
                    for &ang in &self.spikes {
                        let mut delta = (theta - ang).rem_euclid(std::f64::consts::TAU);
                        if delta > std::f64::consts::PI {
                            delta = std::f64::consts::TAU - delta;
                        }
                        if delta < self.spike_width {
                            let reach = 1.0 + self.spike_len * (1.0 - delta / self.spike_width);
                            q = q.min(re / reach);
                        }
                    }
                    let dist_px = (1.0 - q) * r_s;
                    let inside = 1.0 / (1.0 + (-dist_px / p.edge_blur).exp());

                    let noise: f64 = rng.sample(StandardNormal);
                    let mut core = p.core_hu + p.heterogeneity * HETEROGENEITY_HU * noise;
                    // dark holes (fluid/air pockets)
                    for &(ang, rad) in &self.hole_positions {
                        let hx = rad * ang.cos();
                        let hy = rad * ang.sin();
                        let du = u / a - hx;
                        let dv = v / b - hy;
                        if (du * du + dv * dv).sqrt() < 0.18 {
                            core = HOLE_HU;
                        }
                    }
                    // bright calcifications, present through the mid stack
                    if rel.abs() < 0.6 {
                        for &(ang, rad) in &self.calc_positions {
                            let hx = rad * ang.cos();
                            let hy = rad * ang.sin();
                            let du = u / a - hx;
                            let dv = v / b - hy;
                            if (du * du + dv * dv).sqrt() < 0.12 {
                                core = CALCIFICATION_HU;
                            }
                        }
                    }
                    let bg_noise: f64 = rng.sample(StandardNormal);
                    let bg = BACKGROUND_HU + BACKGROUND_NOISE_HU * bg_noise;
                    plane[y * LATERAL + x] = (bg + (core - bg) * inside) as f32;
                }
            }
        }
        Tensor::new(vec![m, LATERAL, LATERAL], data).expect("sizes agree")
    }
}

/// Knobs of the whole corpus draw.
#[derive(Clone, Copy, Debug)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    /// 1 stores the exact label scores; above 1 each simulated rater adds
    /// zero-mean noise (σ = 0.5, clamped to scale) and the stored rating
    /// becomes the rater mean.
    pub rater_count: usize,
}

/// One generated nodule before any disk I/O.
pub struct SynthNodule {
    pub id: String,
    pub volume: Tensor<f32>,
    pub ratings: [f64; ATTRIBUTE_COUNT],
    pub rater_ratings: Option<Vec<[Option<f64>; ATTRIBUTE_COUNT]>>,
}

fn generate_one(index: usize, cfg: &SynthConfig) -> SynthNodule {
    // one stream per nodule, derived from the corpus seed
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64));
    let params = SynthParams::draw(&mut rng);
    let renderer = Renderer::new(params, &mut rng);
    let volume = renderer.render(&mut rng);
    let true_ratings = renderer.params.ratings();

    let (ratings, rater_ratings) = if cfg.rater_count > 1 {
        let mut raters = Vec::with_capacity(cfg.rater_count);
        for _ in 0..cfg.rater_count {
            let mut r = [None; ATTRIBUTE_COUNT];
            for (i, attr) in Attribute::ALL.iter().enumerate() {
                let (lo, hi) = attr.scale();
                let noise: f64 = rng.sample(StandardNormal);
                r[i] = Some((true_ratings[i] + 0.5 * noise).clamp(lo, hi));
            }
            raters.push(r);
        }
        let mut mean = [0.0; ATTRIBUTE_COUNT];
        for (i, m) in mean.iter_mut().enumerate() {
            *m = raters.iter().map(|r| r[i].unwrap()).sum::<f64>() / raters.len() as f64;
        }
        (mean, Some(raters))
    } else {
        (true_ratings, None)
    };

    SynthNodule {
        id: format!("synth{index:05}"),
        volume,
        ratings,
        rater_ratings,
    }
}

/// Generate the corpus in memory.
pub fn synth_nodules(cfg: &SynthConfig) -> Vec<SynthNodule> {
    (0..cfg.count).map(|i| generate_one(i, cfg)).collect()
}

/// Generate the corpus as loaded samples (no disk round trip).
pub fn synth_samples(cfg: &SynthConfig) -> Result<Vec<NoduleSample>, DataError> {
    synth_nodules(cfg)
        .into_iter()
        .map(|n| {
            Ok(NoduleSample {
                id: n.id.clone(),
                volume: NoduleVolume::new(n.id, n.volume)?,
                ratings: n.ratings,
                rater_ratings: n.rater_ratings,
            })
        })
        .collect()
}

/// Generate the corpus on disk: volume files plus `manifest.jsonl`.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest, DataError> {
    if cfg.count == 0 {
        return Err(DataError::Validation("corpus count must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(cfg.count);
    for nodule in synth_nodules(cfg) {
        let file = format!("{}.nvl", nodule.id);
        let vol = NoduleVolume::new(nodule.id.clone(), nodule.volume)?;
        save_volume(&vol, &out_dir.join(&file))?;
        let ratings = Attribute::ALL
            .iter()
            .map(|a| (a.name().to_string(), nodule.ratings[a.index()]))
            .collect();
        let raters = nodule.rater_ratings.map(|rs| {
            rs.iter()
                .map(|r| {
                    Attribute::ALL
                        .iter()
                        .filter_map(|a| r[a.index()].map(|v| (a.name().to_string(), v)))
                        .collect()
                })
                .collect()
        });
        entries.push(ManifestEntry {
            id: vol.id,
            volume: file,
            ratings,
            raters,
        });
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
