//! Synthetic gesture dataset generator.
//!
//! Synthesizes labeled reader logs from a multipath backscatter channel fed
//! by parametric arm-motion trajectories, with per-tag frame dropout and
//! per-reading dropout mirroring the misdetection statistics of a body-worn
//! deployment. The emitted log and manifest formats are exactly what
//! [`crate::ingest`] consumes, so the whole pipeline is testable end to end
//! without real hardware.
//!
//! Per-sample RNG streams are derived from the base seed, the subject, the
//! class, and the repetition, so generation is deterministic and independent
//! of iteration or thread order.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::types::{Environment, GestureSample, Reading};

/// Speed of light in m/s.
const C: f64 = 299_792_458.0;

/// Reader inventory rate in reads per second, all tags combined. Chosen so
/// consecutive same-tag reads stay within half a phase cycle at the default
/// trajectory speeds (no unwrap aliasing).
const READS_PER_SEC: f64 = 200.0;

/// Backscatter channel parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    pub tx_power_dbm: f64,
    pub antenna_gain_dbic: f64,
    /// Multipath component count, dominant path included.
    pub n_paths: usize,
    /// Complex noise variance at the reader.
    pub noise_var: f64,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            wavelength: C / 865e6,
            tx_power_dbm: 30.0,
            antenna_gain_dbic: 9.0,
            n_paths: 3,
            noise_var: 4e-4,
            seed: 42,
        }
    }
}

/// Per-tag and per-reading loss parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutConfig {
    /// Probability that a tag goes entirely unread for a gesture, per EPC.
    pub frame_drop_prob: Vec<f64>,
    /// Per-reading Bernoulli drop probability.
    pub reading_drop_prob: f64,
}

impl Default for DropoutConfig {
    /// Wrist tags lose whole frames often (tag 6 worst at 42%), arm tags
    /// rarely.
    fn default() -> Self {
        DropoutConfig {
            frame_drop_prob: vec![0.09, 0.15, 0.02, 0.02, 0.15, 0.42, 0.02, 0.02],
            reading_drop_prob: 0.2,
        }
    }
}

/// Arm-motion model: per-class, per-tag distance-to-antenna waveforms built
/// from a small set of motion primitives, with subject- and repetition-level
/// amplitude/speed jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryModel {
    /// Resting distance between subject and antenna in meters.
    pub base_distance_m: f64,
    /// Peak motion amplitude of the forearm/upper-arm tags in meters.
    pub arm_amplitude_m: f64,
    /// Peak motion amplitude of the wrist tags in meters.
    pub wrist_amplitude_m: f64,
    /// 0 collapses all classes onto one shared waveform, 1 keeps them fully
    /// distinct.
    pub class_separation: f64,
    /// Relative amplitude/speed spread between subjects.
    pub subject_jitter: f64,
    /// Relative spread between repetitions of one subject.
    pub rep_jitter: f64,
}

impl Default for TrajectoryModel {
    fn default() -> Self {
        TrajectoryModel {
            base_distance_m: 1.5,
            arm_amplitude_m: 0.2,
            wrist_amplitude_m: 0.07,
            class_separation: 1.0,
            subject_jitter: 0.10,
            rep_jitter: 0.03,
        }
    }
}

/// Full generator configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub subjects: u32,
    pub reps: usize,
    pub trajectory: TrajectoryModel,
    pub channel: ChannelConfig,
    pub dropout: DropoutConfig,
    pub environment: Environment,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: crate::types::DEFAULT_CLASS_COUNT,
            subjects: 5,
            reps: 20,
            trajectory: TrajectoryModel::default(),
            channel: ChannelConfig::default(),
            dropout: DropoutConfig::default(),
            environment: Environment::A,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("path distance must be positive, got {0}")]
    BadDistance(f64),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One channel evaluation: complex sum over multipath components plus
/// additive complex Gaussian noise.
///
/// The dominant path's phase is the geometric round-trip value
/// `4π d₁ / λ (mod 2π)`, so tag motion shows up in the reported phase;
/// secondary paths draw their phases uniformly. Returns `(rss dBm, phase in
/// [0, 2π))`.
pub fn channel_sample(
    distances: &[f64],
    cfg: &ChannelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64), SynthError> {
    if distances.is_empty() {
        return Err(SynthError::BadDistance(0.0));
    }
    for &d in distances {
        if !(d > 0.0) {
            return Err(SynthError::BadDistance(d));
        }
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let amp_scale = 10f64.powf(cfg.antenna_gain_dbic / 20.0) * 10f64.powf(cfg.tx_power_dbm / 20.0);
    let mut re = 0.0f64;
    let mut im = 0.0f64;
    for (i, &d) in distances.iter().enumerate() {
        let gain = cfg.wavelength / (4.0 * std::f64::consts::PI * d);
        let theta = if i == 0 {
            (4.0 * std::f64::consts::PI * d / cfg.wavelength).rem_euclid(two_pi)
        } else {
            rng.gen_range(0.0..two_pi)
        };
        re += gain * amp_scale * theta.cos();
        im += gain * amp_scale * theta.sin();
    }
    if cfg.noise_var > 0.0 {
        let normal = Normal::new(0.0, (cfg.noise_var / 2.0).sqrt()).unwrap();
        re += normal.sample(rng);
        im += normal.sample(rng);
    }
    let magnitude = (re * re + im * im).sqrt().max(1e-15);
    let rss = 20.0 * magnitude.log10();
    let phase = im.atan2(re).rem_euclid(two_pi);
    Ok((rss, phase))
}

/// Motion primitive waveforms, normalized to unit amplitude over `u ∈ [0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionPrimitive {
    Raise,
    Push,
    Circle,
    Swipe,
}

impl MotionPrimitive {
    /// Unit-amplitude waveform over normalized time `u ∈ [0,1]`. The four
    /// shapes stay structurally distinct at any tempo: monotone rise /
    /// single big bump, signed sine, rectified sine, decaying sine.
    fn offset(&self, u: f64, freq: f64, phase: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            MotionPrimitive::Raise => 1.0 - (PI * freq * u).cos(),
            MotionPrimitive::Push => (2.0 * PI * freq * u + phase).sin(),
            MotionPrimitive::Circle => (PI * freq * u + phase).sin().abs() - phase.sin().abs(),
            MotionPrimitive::Swipe => (2.0 * PI * freq * u).sin() * (1.0 - u),
        }
    }
}

const PRIMITIVES: [MotionPrimitive; 4] = [
    MotionPrimitive::Raise,
    MotionPrimitive::Push,
    MotionPrimitive::Circle,
    MotionPrimitive::Swipe,
];

/// Class-specific motion signature for one body side.
#[derive(Debug, Clone, Copy)]
struct SidePattern {
    primitive: MotionPrimitive,
    freq: f64,
    phase: f64,
    amp_scale: f64,
}

/// Classes are told apart the way real gestures are: by which arm moves
/// (left / right / both), by the motion primitive, and by its tempo. The
/// triple `(c mod 3, (c/3) mod 4, (c/12) mod 2)` is unique for each of the
/// 21 classes; a per-class phase offset separates same-primitive classes
/// further.
fn class_pattern(class: u8, side: usize) -> SidePattern {
    let c = (class - 1) as usize;
    let active = c % 3; // 0: left, 1: right, 2: both
    let side_active = active == 2 || active == side;
    let idx = (c / 3) % 4;
    let freq = if (c / 12) % 2 == 0 { 1.0 } else { 2.0 };
    let phase = 2.0 * std::f64::consts::PI * ((c * 5 + side * 3) % 7) as f64 / 7.0;
    let amp_scale = if side_active {
        0.9 + 0.1 * ((c * 7 + side) % 3) as f64
    } else {
        // The resting arm barely moves.
        0.15
    };
    SidePattern {
        primitive: PRIMITIVES[idx],
        freq,
        phase,
        amp_scale,
    }
}

/// Shared reference waveform used to dial class separability down.
fn common_pattern(u: f64) -> f64 {
    (std::f64::consts::PI * u).sin()
}

impl TrajectoryModel {
    /// Distance of tag `epc` from the antenna at normalized time `u` for the
    /// given class, after subject/rep jitter has been folded into
    /// `amp_mult`.
    fn distance(&self, epc: u8, class: u8, u: f64, amp_mult: f64) -> f64 {
        // Tags 1-4 sit on the left side, 5-8 on the right; odd/even members
        // of a pair are a couple of centimeters apart on the same limb.
        let side = if epc <= 4 { 0 } else { 1 };
        let is_arm = matches!(epc % 4, 3 | 0); // 3,4,7,8
        let pattern = class_pattern(class, side);
        let class_wave = pattern.primitive.offset(u, pattern.freq, pattern.phase);
        let blended = self.class_separation * class_wave * pattern.amp_scale
            + (1.0 - self.class_separation) * common_pattern(u);
        let motion = if is_arm {
            self.arm_amplitude_m * blended
        } else {
            // Wrists mostly wiggle the same way for every class; only a
            // third of their motion carries the class signature.
            self.wrist_amplitude_m
                * (0.7 * (2.6 * std::f64::consts::PI * u).sin() + 0.3 * blended)
        };
        let static_offset = match epc % 4 {
            1 => 0.00,  // wrist front
            2 => 0.025, // wrist back
            3 => -0.05, // forearm
            _ => -0.08, // upper arm
        };
        let side_offset = if side == 0 { 0.0 } else { 0.03 };
        self.base_distance_m + static_offset + side_offset + motion * amp_mult
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

fn derive_seed(base: u64, subject: u32, class: u8, rep: usize) -> u64 {
    let mut s = splitmix64(base);
    s = splitmix64(s ^ (subject as u64));
    s = splitmix64(s ^ ((class as u64) << 32));
    s ^ splitmix64(rep as u64)
}

fn generate_sample(
    sample_id: usize,
    subject: u32,
    class: u8,
    rep: usize,
    cfg: &SynthConfig,
) -> Result<GestureSample, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.channel.seed, subject, class, rep));
    let n_tags = cfg.dropout.frame_drop_prob.len() as u8;

    // Subject-level jitter drawn from its own derived stream so it is stable
    // across that subject's repetitions.
    let mut subject_rng =
        ChaCha8Rng::seed_from_u64(splitmix64(cfg.channel.seed ^ ((subject as u64) << 17)));
    let sj = cfg.trajectory.subject_jitter;
    let subject_amp = 1.0 + subject_rng.gen_range(-sj..=sj);
    let subject_speed = 1.0 + subject_rng.gen_range(-sj..=sj);

    let rj = cfg.trajectory.rep_jitter;
    let amp_mult = subject_amp * (1.0 + rng.gen_range(-rj..=rj));
    let duration = rng.gen_range(1.6..2.4) / subject_speed;

    let frame_dropped: Vec<bool> = cfg
        .dropout
        .frame_drop_prob
        .iter()
        .map(|&p| rng.gen_bool(p.clamp(0.0, 1.0)))
        .collect();

    // Static multipath geometry for this execution; phases stay random per
    // reading. Reflected paths run a few meters longer than the direct one,
    // which keeps their amplitude well under the dominant path.
    let excess: Vec<f64> = (1..cfg.channel.n_paths)
        .map(|_| rng.gen_range(2.5..8.0))
        .collect();

    let mean_dt = 1.0 / READS_PER_SEC;
    let mut readings = Vec::new();
    let mut first_candidate: Option<Reading> = None;
    let mut t = 0.0f64;
    let mut epc: u8 = 1;
    let mut distances = vec![0.0f64; cfg.channel.n_paths];
    while t < duration {
        t += mean_dt * rng.gen_range(0.8..1.2);
        let u = (t / duration).min(1.0);
        let d1 = cfg.trajectory.distance(epc, class, u, amp_mult);
        distances[0] = d1;
        for (slot, &ex) in distances[1..].iter_mut().zip(excess.iter()) {
            *slot = d1 + ex;
        }
        let (rss, phase) = channel_sample(&distances, &cfg.channel, &mut rng)?;
        let reading = Reading {
            timestamp: t,
            epc,
            rss,
            phase,
        };
        if first_candidate.is_none() {
            first_candidate = Some(reading);
        }
        let dropped = frame_dropped[(epc - 1) as usize] || rng.gen_bool(cfg.dropout.reading_drop_prob);
        if !dropped {
            readings.push(reading);
        }
        epc = if epc == n_tags { 1 } else { epc + 1 };
    }
    if readings.is_empty() {
        // Vanishingly rare under sane dropout settings; keep T >= 1.
        readings.push(first_candidate.expect("at least one inventory slot"));
    }

    Ok(GestureSample {
        sample_id,
        label: class,
        subject,
        environment: cfg.environment,
        distance_m: cfg.trajectory.base_distance_m,
        readings,
    })
}

/// Generate `subjects x classes x reps` labeled samples. Deterministic under
/// the channel seed; samples are generated in parallel but indexed and
/// seeded independently, so the output order and content are stable.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<GestureSample>, SynthError> {
    let mut specs = Vec::new();
    let mut sample_id = 0usize;
    for subject in 1..=cfg.subjects {
        for class in 1..=cfg.classes as u8 {
            for rep in 0..cfg.reps {
                specs.push((sample_id, subject, class, rep));
                sample_id += 1;
            }
        }
    }
    specs
        .par_iter()
        .map(|&(id, subject, class, rep)| generate_sample(id, subject, class, rep, cfg))
        .collect()
}

/// Write samples as one log file each plus a manifest, in the exact format
/// `ingest` reads back. Returns the manifest path.
pub fn write_dataset(samples: &[GestureSample], dir: &Path) -> Result<PathBuf, SynthError> {
    let logs = dir.join("logs");
    std::fs::create_dir_all(&logs)?;
    let mut manifest = String::from("sample_id,label,subject,env,distance,path\n");
    for sample in samples {
        let rel = format!("logs/sample_{:06}.log", sample.sample_id);
        let mut file = std::fs::File::create(dir.join(&rel))?;
        let mut text = String::with_capacity(sample.readings.len() * 48);
        for r in &sample.readings {
            text.push_str(&format!("{},{},{},{}\n", r.timestamp, r.epc, r.rss, r.phase));
        }
        file.write_all(text.as_bytes())?;
        manifest.push_str(&format!(
            "{},{},{},{},{},{}\n",
            sample.sample_id,
            sample.label,
            sample.subject,
            sample.environment,
            sample.distance_m,
            rel
        ));
    }
    let manifest_path = dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest)?;
    Ok(manifest_path)
}
