//! Per-dataframe signal conditioning: phase unwrapping, gesture-level MAD
//! phase normalization, Savitzky-Golay plus Gaussian smoothing, per-dataframe
//! Min-Max RSS normalization, and zero padding with validation.
//!
//! [`preprocess_sample`] chains the steps in the fixed order
//! unwrap → MAD normalize → smooth → Min-Max → zero-pad → validate.
//! Phase normalization is gesture-global (one scale over the concatenated
//! phase of all dataframes); RSS normalization is per-dataframe. That
//! asymmetry is deliberate and load-bearing.

use std::f64::consts::PI;

use crate::ingest::sort_by_epc;
use crate::types::{Dataframe, FrameStatus, GestureSample};

/// Smoothing filter parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    /// Savitzky-Golay window length in samples; odd, >= 3.
    pub sg_window: usize,
    /// Savitzky-Golay polynomial order; < `sg_window`.
    pub sg_polyorder: usize,
    /// Gaussian kernel standard deviation in samples; > 0.
    pub gauss_sigma: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            sg_window: 11,
            sg_polyorder: 3,
            gauss_sigma: 2.0,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.sg_window < 3 || self.sg_window % 2 == 0 {
            return Err(format!("sg_window must be odd and >= 3, got {}", self.sg_window));
        }
        if self.sg_polyorder >= self.sg_window {
            return Err(format!(
                "sg_polyorder {} must be < sg_window {}",
                self.sg_polyorder, self.sg_window
            ));
        }
        if !(self.gauss_sigma > 0.0) {
            return Err(format!("gauss_sigma must be > 0, got {}", self.gauss_sigma));
        }
        Ok(())
    }
}

/// Remove 2π discontinuities so consecutive phase differences satisfy
/// |Δφ| <= π. The first sample is kept as-is; differences strictly greater
/// than π in magnitude are corrected by the nearest multiple of 2π.
/// Frames with fewer than 2 samples are returned unchanged.
pub fn unwrap_phase(mut df: Dataframe) -> Dataframe {
    if df.phase.len() < 2 {
        return df;
    }
    let two_pi = 2.0 * PI;
    let mut correction = 0.0;
    let mut prev_raw = df.phase[0];
    for i in 1..df.phase.len() {
        let raw = df.phase[i];
        let mut delta = raw - prev_raw;
        while delta > PI {
            correction -= two_pi;
            delta -= two_pi;
        }
        while delta < -PI {
            correction += two_pi;
            delta += two_pi;
        }
        prev_raw = raw;
        df.phase[i] = raw + correction;
    }
    df
}

/// Median of a slice (average of the two middle values for even lengths).
/// Empty input returns NaN.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median-absolute-deviation normalization of a gesture's concatenated phase
/// vector: `(x - median) / beta` with `beta = median(|x - median|)`.
///
/// A constant vector has `beta = 0`; the centered deviations (all zeros) are
/// returned unscaled in that case.
pub fn normalize_phase_mad(phases: &[f64]) -> Vec<f64> {
    assert!(!phases.is_empty(), "phase vector must be nonempty");
    let med = median(phases);
    let deviations: Vec<f64> = phases.iter().map(|&p| (p - med).abs()).collect();
    let beta = median(&deviations);
    if beta == 0.0 {
        phases.iter().map(|&p| p - med).collect()
    } else {
        phases.iter().map(|&p| (p - med) / beta).collect()
    }
}

/// Savitzky-Golay coefficients: least-squares fit of a degree-`polyorder`
/// polynomial over a centered window, evaluated at the center.
fn savgol_coefficients(window: usize, polyorder: usize) -> Vec<f64> {
    let half = (window / 2) as i64;
    let n_terms = polyorder + 1;
    // Normal equations A^T A c = A^T e_center, where A[j][k] = x_j^k.
    let mut ata = vec![vec![0.0f64; n_terms]; n_terms];
    for x in -half..=half {
        let xf = x as f64;
        let mut powers = vec![1.0f64; 2 * n_terms - 1];
        for p in 1..powers.len() {
            powers[p] = powers[p - 1] * xf;
        }
        for r in 0..n_terms {
            for c in 0..n_terms {
                ata[r][c] += powers[r + c];
            }
        }
    }
    // Solve (A^T A) m = e_0 by Gaussian elimination with partial pivoting.
    let mut aug = ata;
    let mut rhs = vec![0.0f64; n_terms];
    rhs[0] = 1.0;
    for col in 0..n_terms {
        let pivot = (col..n_terms)
            .max_by(|&a, &b| aug[a][col].abs().partial_cmp(&aug[b][col].abs()).unwrap())
            .unwrap();
        aug.swap(col, pivot);
        rhs.swap(col, pivot);
        let diag = aug[col][col];
        for row in 0..n_terms {
            if row == col {
                continue;
            }
            let factor = aug[row][col] / diag;
            for c in col..n_terms {
                aug[row][c] -= factor * aug[col][c];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let m: Vec<f64> = (0..n_terms).map(|i| rhs[i] / aug[i][i]).collect();
    // weight_j = sum_k m_k x_j^k
    (-half..=half)
        .map(|x| {
            let xf = x as f64;
            let mut acc = 0.0;
            let mut xp = 1.0;
            for &mk in &m {
                acc += mk * xp;
                xp *= xf;
            }
            acc
        })
        .collect()
}

/// Convolve with edge-value extension at the boundaries.
fn convolve_edge_extended(values: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = values.len() as i64;
    let half = (kernel.len() / 2) as i64;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (k, &w) in kernel.iter().enumerate() {
                let idx = (i + k as i64 - half).clamp(0, n - 1);
                acc += w * values[idx as usize];
            }
            acc
        })
        .collect()
}

/// Savitzky-Golay filter with edge-value extension. Windows longer than the
/// input shrink to the largest valid odd length; the polyorder is clamped
/// below the effective window. Length-1 input is returned unchanged.
pub fn savgol_filter(values: &[f64], window: usize, polyorder: usize) -> Vec<f64> {
    if values.len() < 2 {
        return values.to_vec();
    }
    let mut w = window.min(values.len());
    if w % 2 == 0 {
        w -= 1;
    }
    if w < 3 {
        return values.to_vec();
    }
    let p = polyorder.min(w - 1);
    let kernel = savgol_coefficients(w, p);
    convolve_edge_extended(values, &kernel)
}

/// Gaussian filter with a normalized kernel truncated at 4 sigma, edge-value
/// extension at the boundaries.
pub fn gaussian_filter(values: &[f64], sigma: f64) -> Vec<f64> {
    if values.len() < 2 || sigma <= 0.0 {
        return values.to_vec();
    }
    let radius = (4.0 * sigma).ceil() as usize;
    let mut kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-0.5 * (x / sigma).powi(2)).exp()
        })
        .collect();
    let sum: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= sum;
    }
    convolve_edge_extended(values, &kernel)
}

/// Smooth a dataframe's phase: Savitzky-Golay first, Gaussian second.
pub fn smooth_phase(mut df: Dataframe, cfg: &SmoothingConfig) -> Dataframe {
    let sg = savgol_filter(&df.phase, cfg.sg_window, cfg.sg_polyorder);
    df.phase = gaussian_filter(&sg, cfg.gauss_sigma);
    df
}

/// Map a dataframe's RSS onto [0, 1] via `(x - min) / (max - min)`.
/// A constant (or single-sample) RSS trace maps to all zeros.
pub fn normalize_rss_minmax(mut df: Dataframe) -> Dataframe {
    if df.rss.is_empty() {
        return df;
    }
    let min = df.rss.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = df.rss.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        for v in &mut df.rss {
            *v = 0.0;
        }
    } else {
        let span = max - min;
        for v in &mut df.rss {
            *v = (*v - min) / span;
        }
    }
    df
}

/// Expand every dataframe onto the gesture's full timestamp grid, writing 0
/// at missing positions for both RSS and phase and tracking missingness in
/// the presence mask.
///
/// `full_timestamps` must be the ascending union of all frame timestamps of
/// the gesture. Observed values are preserved bit-identically at their
/// timestamps.
pub fn zero_pad(frames: Vec<Dataframe>, full_timestamps: &[f64]) -> Vec<Dataframe> {
    frames
        .into_iter()
        .map(|df| {
            let t_len = full_timestamps.len();
            let mut rss = vec![0.0f64; t_len];
            let mut phase = vec![0.0f64; t_len];
            let mut mask = vec![false; t_len];
            let mut src = 0usize;
            for (i, &t) in full_timestamps.iter().enumerate() {
                if src < df.timestamps.len() && df.timestamps[src] == t {
                    rss[i] = df.rss[src];
                    phase[i] = df.phase[src];
                    mask[i] = true;
                    src += 1;
                }
            }
            debug_assert_eq!(src, df.timestamps.len(), "frame timestamps not in full grid");
            let observed = mask.iter().filter(|&&m| m).count();
            let status = if observed == 0 {
                FrameStatus::Null
            } else if observed == t_len {
                FrameStatus::Complete
            } else {
                FrameStatus::Sparse
            };
            Dataframe {
                epc: df.epc,
                timestamps: full_timestamps.to_vec(),
                rss,
                phase,
                mask,
                status,
            }
        })
        .collect()
}

/// Discard frames too sparse to interpolate: fewer than 2 observed positions
/// zeroes both vectors and flags the frame null. Already-valid frames pass
/// through unchanged.
pub fn validate_padding(mut df: Dataframe) -> Dataframe {
    if df.observed_count() < 2 {
        for v in &mut df.rss {
            *v = 0.0;
        }
        for v in &mut df.phase {
            *v = 0.0;
        }
        for m in &mut df.mask {
            *m = false;
        }
        df.status = FrameStatus::Null;
    }
    df
}

/// Ascending union of all frame timestamps (exact-equality dedup).
pub fn full_timestamp_grid(frames: &[Dataframe]) -> Vec<f64> {
    let mut all: Vec<f64> = frames.iter().flat_map(|f| f.timestamps.iter().cloned()).collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup();
    all
}

/// Full conditioning chain for one gesture sample.
///
/// Splits by EPC, unwraps each frame's phase, MAD-normalizes the
/// concatenated phase gesture-globally, smooths and Min-Max-normalizes each
/// frame, zero-pads onto the gesture grid, and validates. The step order is
/// fixed; `tests` replays it step by step against this function.
pub fn preprocess_sample(
    sample: &GestureSample,
    cfg: &SmoothingConfig,
    n_tags: u8,
) -> Vec<Dataframe> {
    let mut frames: Vec<Dataframe> = sort_by_epc(sample, n_tags)
        .into_iter()
        .map(unwrap_phase)
        .collect();

    // Gesture-level MAD over the concatenation in EPC order.
    let concatenated: Vec<f64> = frames.iter().flat_map(|f| f.phase.iter().cloned()).collect();
    if !concatenated.is_empty() {
        let normalized = normalize_phase_mad(&concatenated);
        let mut offset = 0;
        for frame in &mut frames {
            let len = frame.phase.len();
            frame.phase.copy_from_slice(&normalized[offset..offset + len]);
            offset += len;
        }
    }

    let frames: Vec<Dataframe> = frames
        .into_iter()
        .map(|f| smooth_phase(f, cfg))
        .map(normalize_rss_minmax)
        .collect();

    let grid = full_timestamp_grid(&frames);
    zero_pad(frames, &grid).into_iter().map(validate_padding).collect()
}
