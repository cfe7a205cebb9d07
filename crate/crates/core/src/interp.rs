//! Gap repair for sparse dataframes: linear interpolation/extrapolation for
//! phase, exponential (log-linear) for RSS, then resampling every frame to a
//! common length.
//!
//! Interpolation runs in timestamp space because reader inter-arrival times
//! are irregular; resampling then moves everything onto a uniform grid.

use crate::types::{Dataframe, FrameStatus};

/// Default floor added before taking logs in [`exp_fill`].
pub const DEFAULT_EXP_EPSILON: f64 = 1e-6;

fn line_through(t0: f64, v0: f64, t1: f64, v1: f64, t: f64) -> f64 {
    if t1 == t0 {
        return v0;
    }
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

/// Fill unobserved positions by straight-line interpolation between the
/// bracketing observations; leading (trailing) gaps use the line through the
/// first (last) two observations. Observed positions are returned
/// bit-identically.
///
/// Requires at least 2 observed values; with exactly 2 the single global
/// line covers interior and both edges.
pub fn linear_fill(values: &[f64], mask: &[bool], timestamps: &[f64]) -> Vec<f64> {
    fill_with(values, mask, timestamps, |t0, v0, t1, v1, t| {
        line_through(t0, v0, t1, v1, t)
    })
}

/// Fill unobserved positions by geometric interpolation `y(t) = a·b^t`:
/// linear interpolation of `ln(y + eps)`, exponentiated minus `eps`.
///
/// A segment whose bracketing (or edge-pair) observations include a
/// non-positive value degrades to linear fill for that segment; the `eps`
/// floor keeps the log finite for small positive values.
pub fn exp_fill(values: &[f64], mask: &[bool], timestamps: &[f64], eps: f64) -> Vec<f64> {
    fill_with(values, mask, timestamps, |t0, v0, t1, v1, t| {
        if v0 <= 0.0 || v1 <= 0.0 {
            line_through(t0, v0, t1, v1, t)
        } else {
            let z = line_through(t0, (v0 + eps).ln(), t1, (v1 + eps).ln(), t);
            z.exp() - eps
        }
    })
}

/// Shared gap-walking scaffold: picks the reference observation pair for
/// every unobserved position and delegates the value computation.
fn fill_with<F>(values: &[f64], mask: &[bool], timestamps: &[f64], segment: F) -> Vec<f64>
where
    F: Fn(f64, f64, f64, f64, f64) -> f64,
{
    assert_eq!(values.len(), mask.len());
    assert_eq!(values.len(), timestamps.len());
    let observed: Vec<usize> = (0..values.len()).filter(|&i| mask[i]).collect();
    assert!(
        observed.len() >= 2,
        "fill requires at least 2 observed values, found {}",
        observed.len()
    );

    let mut out = values.to_vec();
    let first = observed[0];
    let second = observed[1];
    let last = observed[observed.len() - 1];
    let penultimate = observed[observed.len() - 2];

    for i in 0..values.len() {
        if mask[i] {
            continue;
        }
        let (lo, hi) = if i < first {
            (first, second)
        } else if i > last {
            (penultimate, last)
        } else {
            // Interior gap: bracketing observations.
            let hi_pos = observed.partition_point(|&o| o < i);
            (observed[hi_pos - 1], observed[hi_pos])
        };
        out[i] = segment(
            timestamps[lo],
            values[lo],
            timestamps[hi],
            values[hi],
            timestamps[i],
        );
    }
    out
}

/// Evaluate a fully-filled vector at `l_rs` equally spaced positions spanning
/// the original index range, by linear interpolation. Endpoints are
/// preserved exactly; single-sample input broadcasts to a constant vector.
pub fn resample(values: &[f64], l_rs: usize) -> Vec<f64> {
    assert!(l_rs >= 2, "resample target length must be >= 2");
    assert!(!values.is_empty(), "resample input must be nonempty");
    let n = values.len();
    if n == 1 {
        return vec![values[0]; l_rs];
    }
    let scale = (n - 1) as f64 / (l_rs - 1) as f64;
    (0..l_rs)
        .map(|j| {
            if j == l_rs - 1 {
                return values[n - 1];
            }
            let pos = j as f64 * scale;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            if frac == 0.0 {
                values[lo]
            } else {
                values[lo] + (values[lo + 1] - values[lo]) * frac
            }
        })
        .collect()
}

/// Repair one frame: exponential fill for RSS, linear fill for phase, then
/// resample both to `l_rs` with a regenerated uniform timestamp grid.
///
/// Null frames are passed through as `l_rs` zeros (imputation handles them);
/// everything else comes out fully observed with status `Complete`.
///
/// Filled RSS positions are clamped to the frame's observed value range:
/// geometric extrapolation behind a steeply decaying edge pair can otherwise
/// run away by orders of magnitude, and a gap fill has no business exceeding
/// the energy the tag actually reported. Observed positions are never
/// touched.
pub fn repair_frame(df: Dataframe, l_rs: usize, eps: f64) -> Dataframe {
    if df.status == FrameStatus::Null {
        return Dataframe {
            epc: df.epc,
            timestamps: uniform_grid(&df.timestamps, l_rs),
            rss: vec![0.0; l_rs],
            phase: vec![0.0; l_rs],
            mask: vec![false; l_rs],
            status: FrameStatus::Null,
        };
    }
    let mut rss_filled = exp_fill(&df.rss, &df.mask, &df.timestamps, eps);
    let mut obs_min = f64::INFINITY;
    let mut obs_max = f64::NEG_INFINITY;
    for (v, &m) in df.rss.iter().zip(df.mask.iter()) {
        if m {
            obs_min = obs_min.min(*v);
            obs_max = obs_max.max(*v);
        }
    }
    for (v, &m) in rss_filled.iter_mut().zip(df.mask.iter()) {
        if !m {
            *v = v.clamp(obs_min, obs_max);
        }
    }
    let phase_filled = linear_fill(&df.phase, &df.mask, &df.timestamps);
    Dataframe {
        epc: df.epc,
        timestamps: uniform_grid(&df.timestamps, l_rs),
        rss: resample(&rss_filled, l_rs),
        phase: resample(&phase_filled, l_rs),
        mask: vec![true; l_rs],
        status: FrameStatus::Complete,
    }
}

/// Repair all frames of a gesture.
pub fn repair_frames(frames: Vec<Dataframe>, l_rs: usize, eps: f64) -> Vec<Dataframe> {
    frames.into_iter().map(|f| repair_frame(f, l_rs, eps)).collect()
}

/// Uniform synthetic grid spanning the original first..last timestamp.
fn uniform_grid(timestamps: &[f64], l_rs: usize) -> Vec<f64> {
    let (start, end) = match (timestamps.first(), timestamps.last()) {
        (Some(&s), Some(&e)) if e > s => (s, e),
        (Some(&s), _) => (s, s + 1.0),
        _ => (0.0, 1.0),
    };
    let step = (end - start) / (l_rs - 1) as f64;
    (0..l_rs).map(|i| start + step * i as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const OBS: bool = true;
    const GAP: bool = false;

    #[test]
    fn linear_fill_exact_on_ramp() {
        let out = linear_fill(
            &[1.0, 0.0, 0.0, 4.0],
            &[OBS, GAP, GAP, OBS],
            &[0.0, 1.0, 2.0, 3.0],
        );
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn linear_fill_extrapolates_leading_edge() {
        let out = linear_fill(&[0.0, 2.0, 3.0], &[GAP, OBS, OBS], &[0.0, 1.0, 2.0]);
        assert!((out[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_fill_piecewise_gaps() {
        let out = linear_fill(
            &[0.0, 0.0, 10.0, 0.0, 20.0],
            &[OBS, GAP, OBS, GAP, OBS],
            &[0.0, 1.0, 2.0, 3.0, 4.0],
        );
        assert_eq!(out, vec![0.0, 5.0, 10.0, 15.0, 20.0]);
    }

    #[test]
    fn exp_fill_exact_on_geometric() {
        let out = exp_fill(&[1.0, 0.0, 4.0], &[OBS, GAP, OBS], &[0.0, 1.0, 2.0], 0.0);
        assert!((out[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn exp_fill_constant_extrapolation() {
        let out = exp_fill(&[0.0, 1.0, 1.0], &[GAP, OBS, OBS], &[0.0, 1.0, 2.0], 0.0);
        assert!((out[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exp_fill_closed_form_ratio() {
        let out = exp_fill(
            &[0.25, 0.0, 0.0, 2.0],
            &[OBS, GAP, GAP, OBS],
            &[0.0, 1.0, 2.0, 3.0],
            0.0,
        );
        // b = (2 / 0.25)^(1/3) = 2
        assert!((out[1] - 0.5).abs() < 1e-9);
        assert!((out[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exp_fill_zero_endpoint_degrades_to_linear() {
        let out = exp_fill(
            &[0.0, 0.0, 1.0],
            &[OBS, GAP, OBS],
            &[0.0, 1.0, 2.0],
            DEFAULT_EXP_EPSILON,
        );
        assert!((out[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fills_never_touch_observed_positions() {
        let values = [0.3, 0.0, 0.9, 0.0, 0.4];
        let mask = [OBS, GAP, OBS, GAP, OBS];
        let ts = [0.0, 0.5, 1.0, 1.5, 2.0];
        let lin = linear_fill(&values, &mask, &ts);
        let exp = exp_fill(&values, &mask, &ts, DEFAULT_EXP_EPSILON);
        for i in [0, 2, 4] {
            assert_eq!(lin[i], values[i]);
            assert_eq!(exp[i], values[i]);
        }
    }

    #[test]
    fn two_observations_use_one_global_line() {
        let out = linear_fill(
            &[0.0, 3.0, 0.0, 9.0, 0.0],
            &[GAP, OBS, GAP, OBS, GAP],
            &[0.0, 1.0, 2.0, 3.0, 4.0],
        );
        assert_eq!(out, vec![0.0, 3.0, 6.0, 9.0, 12.0]);
    }

    #[test]
    fn resample_linear_ramp() {
        let out = resample(&[0.0, 1.0, 2.0, 3.0], 7);
        let expected = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
        for (a, b) in out.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_identity_at_same_length() {
        let values = vec![0.4, -1.0, 2.5, 0.0, 7.7];
        assert_eq!(resample(&values, 5), values);
    }

    #[test]
    fn resample_two_points() {
        let out = resample(&[0.0, 10.0], 5);
        assert_eq!(out, vec![0.0, 2.5, 5.0, 7.5, 10.0]);
    }

    #[test]
    fn resample_single_sample_broadcasts() {
        assert_eq!(resample(&[3.0], 4), vec![3.0; 4]);
    }

    #[test]
    fn repair_produces_uniform_complete_frames() {
        let df = Dataframe {
            epc: 1,
            timestamps: vec![0.0, 0.1, 0.2, 0.3],
            rss: vec![0.2, 0.0, 0.8, 1.0],
            phase: vec![1.0, 0.0, 3.0, 4.0],
            mask: vec![true, false, true, true],
            status: FrameStatus::Sparse,
        };
        let out = repair_frame(df, 10, DEFAULT_EXP_EPSILON);
        assert_eq!(out.len(), 10);
        assert_eq!(out.status, FrameStatus::Complete);
        assert!(out.mask.iter().all(|&m| m));
        assert!((out.timestamps[0] - 0.0).abs() < 1e-12);
        assert!((out.timestamps[9] - 0.3).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn linear_fill_exact_on_affine(
            slope in -5.0f64..5.0,
            intercept in -5.0f64..5.0,
            mask_bits in proptest::collection::vec(any::<bool>(), 4..40),
        ) {
            let n = mask_bits.len();
            let mut mask = mask_bits.clone();
            // Guarantee >= 2 observations.
            mask[0] = true;
            mask[n - 1] = true;
            let ts: Vec<f64> = (0..n).map(|i| i as f64 * 0.37).collect();
            let truth: Vec<f64> = ts.iter().map(|&t| slope * t + intercept).collect();
            let holes: Vec<f64> = truth
                .iter()
                .zip(mask.iter())
                .map(|(&v, &m)| if m { v } else { 0.0 })
                .collect();
            let out = linear_fill(&holes, &mask, &ts);
            for (a, b) in out.iter().zip(truth.iter()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn exp_fill_exact_on_geometric_sequences(
            start in 0.05f64..4.0,
            ratio in 0.5f64..2.0,
            mask_bits in proptest::collection::vec(any::<bool>(), 4..30),
        ) {
            let n = mask_bits.len();
            let mut mask = mask_bits.clone();
            mask[0] = true;
            mask[n - 1] = true;
            let ts: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let truth: Vec<f64> = (0..n).map(|i| start * ratio.powi(i as i32)).collect();
            let holes: Vec<f64> = truth
                .iter()
                .zip(mask.iter())
                .map(|(&v, &m)| if m { v } else { 0.0 })
                .collect();
            let out = exp_fill(&holes, &mask, &ts, 0.0);
            for (a, b) in out.iter().zip(truth.iter()) {
                prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12));
            }
        }

        #[test]
        fn resample_idempotent_and_bounded(
            values in proptest::collection::vec(-10.0f64..10.0, 2..40),
            l_rs in 2usize..50,
        ) {
            let once = resample(&values, l_rs);
            let twice = resample(&once, l_rs);
            prop_assert_eq!(&once, &twice);
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in &once {
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
            prop_assert_eq!(once[0], values[0]);
            prop_assert_eq!(once[l_rs - 1], values[values.len() - 1]);
        }
    }
}
