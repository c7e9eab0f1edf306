//! Synthetic driving scenarios, the `VAD1` dataset format and train/test splits.
//!
//! Every sequence shows neutral forward driving until its action onset in the
//! second half of the clip. From the onset on, appearance and motion features
//! ramp from a shared neutral vector to a class template, and steering and
//! speed follow a class kinematic profile. Shortly before the onset a weaker
//! preparatory cue appears in appearance and motion (a driver checking
//! mirrors, a pedestrian turning towards the road); its directions are
//! orthogonal to every action template.

mod io;
mod oracle;
mod split;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use io::{
    read_dataset, read_sequence_file, write_dataset, write_sequence_file, ManifestRecord, MANIFEST_FILE, VAD1_MAGIC,
};
pub use oracle::{oracle_accuracy, OracleModality, OracleWindow};
pub use split::{split, Split, SplitKind, SplitSpec};

use crate::{Error, Matrix, Result};

/// Scenario presets. They differ in class names, kinematic profiles and
/// template bank, not in generation code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "DM")]
    DriverManeuver,
    #[serde(rename = "TR")]
    TrafficRule,
    #[serde(rename = "AC")]
    Accident,
    #[serde(rename = "PI")]
    PedestrianIntention,
    #[serde(rename = "FCI")]
    FrontCarIntention,
}

/// Own-vehicle motion after the onset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kinematics {
    Forward,
    Stop,
    Slow,
    TurnLeft,
    TurnRight,
    ChangeLeft,
    ChangeRight,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::DriverManeuver,
        Scenario::TrafficRule,
        Scenario::Accident,
        Scenario::PedestrianIntention,
        Scenario::FrontCarIntention,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Scenario::DriverManeuver => "DM",
            Scenario::TrafficRule => "TR",
            Scenario::Accident => "AC",
            Scenario::PedestrianIntention => "PI",
            Scenario::FrontCarIntention => "FCI",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Scenario> {
        Scenario::ALL.into_iter().find(|s| s.tag().eq_ignore_ascii_case(tag))
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Scenario::DriverManeuver | Scenario::FrontCarIntention => &["FF", "SS", "LL", "RR", "CL", "CR"],
            Scenario::TrafficRule => &["SR", "PR", "WD", "CD", "DO"],
            Scenario::Accident => &["AC", "AP", "AA", "NA"],
            Scenario::PedestrianIntention => &["CR", "SS", "AS", "NP"],
        }
    }

    fn profiles(self) -> &'static [Kinematics] {
        use Kinematics::*;
        match self {
            Scenario::DriverManeuver => &[Forward, Stop, TurnLeft, TurnRight, ChangeLeft, ChangeRight],
            // The ego car reacts to the front car.
            Scenario::FrontCarIntention => &[Forward, Stop, Slow, Slow, Forward, Forward],
            Scenario::TrafficRule => &[Stop, Forward, TurnLeft, Forward, TurnRight],
            Scenario::Accident => &[Stop, Stop, TurnRight, Forward],
            Scenario::PedestrianIntention => &[Stop, Slow, Forward, Forward],
        }
    }

    /// Name of class `c`; classes beyond the preset list are numbered.
    pub fn class_name(self, c: usize) -> String {
        self.class_names()
            .get(c)
            .map_or_else(|| format!("C{c}"), |s| s.to_string())
    }

    pub fn kinematics(self, c: usize) -> Kinematics {
        let p = self.profiles();
        p[c % p.len()]
    }

    fn index(self) -> u64 {
        Scenario::ALL.iter().position(|&s| s == self).expect("listed") as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Daytime {
    Day,
    Night,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weather {
    Clear,
    Adverse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub daytime: Daytime,
    pub weather: Weather,
    pub user: String,
}

/// One labeled clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub scenario: Scenario,
    pub class_label: usize,
    pub frames: usize,
    pub fps: f64,
    /// Appearance then motion, each `frames × dim`.
    pub modality_features: Vec<Matrix>,
    /// Degrees, positive to the left.
    pub raw_steering: Vec<f64>,
    /// km/h.
    pub raw_speed: Vec<f64>,
    pub onset_frame: usize,
    pub metadata: Metadata,
}

impl Sequence {
    pub fn duration(&self) -> f64 {
        self.frames as f64 / self.fps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub scenario: Scenario,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub frames: usize,
    pub fps: f64,
    pub appearance_dim: usize,
    pub motion_dim: usize,
    /// Per-entry standard deviation of the appearance and motion noise.
    pub noise_sigma: f64,
    /// Per-entry standard deviation of action and preparatory templates.
    pub template_scale: f64,
    pub night_snr_penalty: f64,
    pub adverse_weather_snr_penalty: f64,
    pub cross_modal_coding: bool,
    pub seed: u64,
    pub day_fraction: f64,
    pub clear_fraction: f64,
    pub onset_mean_s: f64,
    pub onset_std_s: f64,
    /// Frames over which the action template fades in.
    pub ramp_frames: usize,
    /// How long before the onset the preparatory cue starts.
    pub precursor_lead_s: f64,
    /// Peak preparatory-cue strength relative to an action template.
    pub precursor_gain: f64,
    pub steering_noise: f64,
    pub speed_noise: f64,
    pub num_users: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            scenario: Scenario::DriverManeuver,
            num_classes: 6,
            samples_per_class: 600,
            frames: 150,
            fps: 30.0,
            appearance_dim: 32,
            motion_dim: 32,
            noise_sigma: 1.0,
            template_scale: 0.5,
            night_snr_penalty: 0.6,
            adverse_weather_snr_penalty: 0.75,
            cross_modal_coding: false,
            seed: 0,
            day_fraction: 2.0 / 3.0,
            clear_fraction: 2.0 / 3.0,
            onset_mean_s: 4.0,
            onset_std_s: 0.3,
            ramp_frames: 15,
            precursor_lead_s: 2.5,
            precursor_gain: 0.75,
            steering_noise: 0.5,
            speed_noise: 0.5,
            num_users: 4,
        }
    }
}

impl GeneratorConfig {
    /// Defaults for a scenario, with its class count.
    pub fn for_scenario(scenario: Scenario) -> Self {
        GeneratorConfig {
            scenario,
            num_classes: scenario.class_names().len(),
            ..GeneratorConfig::default()
        }
    }

    pub fn num_sequences(&self) -> usize {
        self.num_classes * self.samples_per_class
    }

    /// Templates per feature modality.
    fn num_templates(&self) -> usize {
        if self.cross_modal_coding {
            self.num_classes.div_ceil(2)
        } else {
            self.num_classes
        }
    }

    /// Template index of class `c` in appearance (`modality = 0`) or motion.
    ///
    /// With cross-modal coding, appearance pairs classes `(0,1), (2,3), …` and
    /// motion pairs `(1,2), (3,4), …, (N−1,0)`, so each modality alone confuses
    /// pairs while the two indices together identify the class.
    pub fn template_index(&self, modality: usize, c: usize) -> usize {
        match (self.cross_modal_coding, modality) {
            (false, _) => c,
            (true, 0) => c / 2,
            (true, _) => ((c + 1) % self.num_classes) / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::config(msg)) };
        check(self.num_classes >= 2, "at least two classes are required")?;
        check(self.samples_per_class >= 1, "samples_per_class must be at least 1")?;
        check(self.frames >= 30, "at least 30 frames per sequence are required")?;
        check(self.fps > 0.0 && self.fps.is_finite(), "fps must be positive")?;
        check(
            self.appearance_dim >= 1 && self.motion_dim >= 1,
            "feature widths must be positive",
        )?;
        check(
            self.noise_sigma >= 0.0 && self.noise_sigma.is_finite(),
            "noise_sigma must be non-negative",
        )?;
        check(
            self.template_scale > 0.0 && self.template_scale.is_finite(),
            "template_scale must be positive",
        )?;
        for p in [self.night_snr_penalty, self.adverse_weather_snr_penalty] {
            check(p > 0.0 && p <= 1.0, "SNR penalties must lie in (0, 1]")?;
        }
        for f in [self.day_fraction, self.clear_fraction] {
            check((0.0..=1.0).contains(&f), "condition fractions must lie in [0, 1]")?;
        }
        check(
            self.onset_std_s >= 0.0 && self.onset_mean_s.is_finite(),
            "invalid onset distribution",
        )?;
        check(self.ramp_frames >= 1, "ramp_frames must be at least 1")?;
        check(
            self.frames / 2 + self.ramp_frames <= self.frames,
            "clip too short for the ramp",
        )?;
        check(
            self.precursor_lead_s >= 0.0 && self.precursor_gain >= 0.0,
            "precursor settings must be non-negative",
        )?;
        check(
            self.steering_noise >= 0.0 && self.speed_noise >= 0.0,
            "sensor noise must be non-negative",
        )?;
        check(self.num_users >= 1, "num_users must be at least 1")?;
        if self.precursor_gain > 0.0 {
            let needed = 1 + 2 * self.num_templates();
            check(
                self.appearance_dim >= needed && self.motion_dim >= needed,
                "feature widths too small for orthogonal preparatory cues",
            )?;
        }
        Ok(())
    }
}

/// Mixes a dataset seed and a sequence index into an independent sub-seed.
pub(crate) fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D1_049B_B133_11EB);
    z ^ (z >> 31)
}

fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

/// Per-modality vectors shared by the whole dataset.
#[derive(Debug, Clone)]
pub(crate) struct TemplateBank {
    /// `[appearance, motion]`.
    pub neutral: [Vec<f64>; 2],
    pub action: [Vec<Vec<f64>>; 2],
    pub precursor: [Vec<Vec<f64>>; 2],
}

impl TemplateBank {
    pub fn new(cfg: &GeneratorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, u64::MAX - cfg.scenario.index()));
        let n = cfg.num_templates();
        let mut bank = |dim: usize| {
            let mut draw = || -> Vec<f64> {
                (0..dim)
                    .map(|_| {
                        cfg.template_scale * {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z
                        }
                    })
                    .collect()
            };
            let neutral = draw();
            let action: Vec<Vec<f64>> = (0..n).map(|_| draw()).collect();
            let mut precursor: Vec<Vec<f64>> = (0..n).map(|_| draw()).collect();
            if cfg.precursor_gain > 0.0 {
                orthogonalize(
                    &neutral,
                    &action,
                    &mut precursor,
                    cfg.template_scale * (dim as f64).sqrt(),
                );
            }
            (neutral, action, precursor)
        };
        let (na, aa, pa) = bank(cfg.appearance_dim);
        let (nm, am, pm) = bank(cfg.motion_dim);
        TemplateBank {
            neutral: [na, nm],
            action: [aa, am],
            precursor: [pa, pm],
        }
    }
}

/// Gram-Schmidt of `targets` against `neutral`, `fixed` and each other; each
/// result is rescaled to `norm`.
fn orthogonalize(neutral: &[f64], fixed: &[Vec<f64>], targets: &mut [Vec<f64>], norm: f64) {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let push = |v: &[f64], basis: &mut Vec<Vec<f64>>| -> Vec<f64> {
        let mut u = v.to_vec();
        for b in basis.iter() {
            let k = dot(&u, b);
            u.iter_mut().zip(b).for_each(|(x, y)| *x -= k * y);
        }
        let len = dot(&u, &u).sqrt();
        let unit: Vec<f64> = u.iter().map(|x| x / len).collect();
        basis.push(unit.clone());
        unit
    };
    push(neutral, &mut basis);
    for v in fixed {
        push(v, &mut basis);
    }
    for t in targets.iter_mut() {
        let unit = push(t, &mut basis);
        *t = unit.iter().map(|x| x * norm).collect();
    }
}

/// Everything random about a sequence except sensor noise.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Latents {
    pub onset: usize,
    pub daytime: Daytime,
    pub weather: Weather,
    pub user: usize,
    /// km/h before the onset.
    pub base_speed: f64,
    /// Peak steering angle, degrees.
    pub steer_amplitude: f64,
}

impl Latents {
    pub fn draw(cfg: &GeneratorConfig, index: usize) -> Latents {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, index as u64));
        let lo = cfg.frames / 2;
        let hi = cfg.frames.saturating_sub(cfg.ramp_frames).max(lo);
        let z: f64 = StandardNormal.sample(&mut rng);
        let onset = ((cfg.onset_mean_s + cfg.onset_std_s * z) * cfg.fps).round();
        let onset = (onset.max(lo as f64) as usize).clamp(lo, hi);
        Latents {
            onset,
            daytime: if rng.random::<f64>() < cfg.day_fraction {
                Daytime::Day
            } else {
                Daytime::Night
            },
            weather: if rng.random::<f64>() < cfg.clear_fraction {
                Weather::Clear
            } else {
                Weather::Adverse
            },
            user: rng.random_range(0..cfg.num_users),
            base_speed: rng.random_range(40.0..60.0),
            steer_amplitude: rng.random_range(15.0..30.0),
        }
    }

    /// Multiplier on the appearance/motion signal.
    pub fn snr(&self, cfg: &GeneratorConfig) -> f64 {
        let mut k = 1.0;
        if self.daytime == Daytime::Night {
            k *= cfg.night_snr_penalty;
        }
        if self.weather == Weather::Adverse {
            k *= cfg.adverse_weather_snr_penalty;
        }
        k
    }
}

/// Smooth 0 → 1 transition over `duration` frames starting at `u = 0`.
fn rise(u: f64, duration: f64) -> f64 {
    let x = (u / duration).clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Noise-free steering and speed at frame `t`.
pub(crate) fn kinematics_at(profile: Kinematics, lat: &Latents, t: usize) -> (f64, f64) {
    let u = t as f64 - lat.onset as f64;
    if u < 0.0 {
        return (0.0, lat.base_speed);
    }
    let (a, v) = (lat.steer_amplitude, lat.base_speed);
    // Turns and lane changes share their first 45 frames of steering.
    let turn = a * rise(u, 45.0);
    let change = a * (rise(u, 45.0) - 2.0 * rise(u - 45.0, 45.0) + rise(u - 90.0, 45.0));
    match profile {
        Kinematics::Forward => (0.0, v),
        Kinematics::Stop => (0.0, v * (1.0 - rise(u, 60.0))),
        Kinematics::Slow => (0.0, v * (1.0 - 0.4 * rise(u, 45.0))),
        Kinematics::TurnLeft => (turn, v * (1.0 - 0.4 * rise(u, 45.0))),
        Kinematics::TurnRight => (-turn, v * (1.0 - 0.4 * rise(u, 45.0))),
        Kinematics::ChangeLeft => (change, v),
        Kinematics::ChangeRight => (-change, v),
    }
}

/// Noise-free appearance (`modality = 0`) or motion features of class `c`.
pub(crate) fn render_features(
    cfg: &GeneratorConfig,
    bank: &TemplateBank,
    lat: &Latents,
    modality: usize,
    c: usize,
    with_precursor: bool,
) -> Matrix {
    let neutral = &bank.neutral[modality];
    let k = cfg.template_index(modality, c);
    let action = &bank.action[modality][k];
    let cue = &bank.precursor[modality][k];
    let snr = lat.snr(cfg);
    let lead = (cfg.precursor_lead_s * cfg.fps).round() as usize;
    let mut out = Matrix::zeros(cfg.frames, neutral.len());
    for t in 0..cfg.frames {
        let r = if t >= lat.onset {
            ((t - lat.onset + 1) as f64 / cfg.ramp_frames as f64).min(1.0)
        } else {
            0.0
        };
        let p = if with_precursor && lead > 0 && t < lat.onset && t + lead >= lat.onset {
            cfg.precursor_gain * (t + lead + 1 - lat.onset) as f64 / lead as f64
        } else {
            0.0
        };
        for (j, o) in out.row_mut(t).iter_mut().enumerate() {
            *o = snr * ((1.0 - r) * neutral[j] + r * action[j] + p * cue[j]);
        }
    }
    out
}

/// Sequence id: scenario tag and zero-padded index.
pub fn sequence_id(scenario: Scenario, index: usize) -> String {
    format!("{}-{index:05}", scenario.tag())
}

fn generate_one(cfg: &GeneratorConfig, bank: &TemplateBank, index: usize) -> Sequence {
    let c = index / cfg.samples_per_class;
    let lat = Latents::draw(cfg, index);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, index as u64));
    noise_rng.set_stream(1);
    let gauss = |rng: &mut ChaCha8Rng, sd: f64| -> f64 {
        if sd == 0.0 {
            0.0
        } else {
            Normal::new(0.0, sd).expect("validated").sample(rng)
        }
    };

    let modality_features = (0..2)
        .map(|m| {
            let mut x = render_features(cfg, bank, &lat, m, c, true);
            for v in x.data_mut() {
                *v = quantize(*v + gauss(&mut noise_rng, cfg.noise_sigma));
            }
            x
        })
        .collect();
    let profile = cfg.scenario.kinematics(c);
    let (mut steering, mut speed) = (Vec::with_capacity(cfg.frames), Vec::with_capacity(cfg.frames));
    for t in 0..cfg.frames {
        let (s, v) = kinematics_at(profile, &lat, t);
        steering.push(quantize(s + gauss(&mut noise_rng, cfg.steering_noise)));
        speed.push(quantize((v + gauss(&mut noise_rng, cfg.speed_noise)).max(0.0)));
    }
    Sequence {
        id: sequence_id(cfg.scenario, index),
        scenario: cfg.scenario,
        class_label: c,
        frames: cfg.frames,
        fps: cfg.fps,
        modality_features,
        raw_steering: steering,
        raw_speed: speed,
        onset_frame: lat.onset,
        metadata: Metadata {
            daytime: lat.daytime,
            weather: lat.weather,
            user: format!("user{}", lat.user),
        },
    }
}

/// `num_classes × samples_per_class` sequences, class-major.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Vec<Sequence>> {
    cfg.validate()?;
    let bank = TemplateBank::new(cfg);
    Ok((0..cfg.num_sequences()).map(|i| generate_one(cfg, &bank, i)).collect())
}

/// Same output as [`generate_dataset`], generated on the rayon pool.
pub fn generate_dataset_parallel(cfg: &GeneratorConfig) -> Result<Vec<Sequence>> {
    cfg.validate()?;
    let bank = TemplateBank::new(cfg);
    Ok((0..cfg.num_sequences())
        .into_par_iter()
        .map(|i| generate_one(cfg, &bank, i))
        .collect())
}

#[cfg(test)]
mod tests;
