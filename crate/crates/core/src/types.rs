//! Domain types shared across the processing pipeline.
//!
//! A gesture execution arrives as a stream of reader inventory events
//! ([`Reading`]), is grouped into one [`GestureSample`] per execution, and is
//! then split into one per-tag time series ([`Dataframe`]) per EPC. Dataframes
//! are the unit every later stage works on: normalization, gap repair,
//! imputation, and tensor assembly.

use std::fmt;

/// Number of tags worn on the garment in the reference setup.
pub const DEFAULT_TAG_COUNT: u8 = 8;

/// Number of gesture classes.
pub const DEFAULT_CLASS_COUNT: usize = 21;

/// One inventory event reported by the reader.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading {
    /// Seconds, monotone within a sample.
    pub timestamp: f64,
    /// Numeric tag id in `1..=n_tags`.
    pub epc: u8,
    /// Received signal strength in dBm.
    pub rss: f64,
    /// Phase in `[0, 2π)` before unwrapping.
    pub phase: f64,
}

/// Recording environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Environment {
    A,
    B,
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Environment::A => write!(f, "A"),
            Environment::B => write!(f, "B"),
        }
    }
}

impl std::str::FromStr for Environment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(Environment::A),
            "B" | "b" => Ok(Environment::B),
            other => Err(format!("unknown environment '{other}' (expected A or B)")),
        }
    }
}

/// All readings of one gesture execution plus its metadata.
///
/// `label == 0` marks an unlabeled sample (bare log parse without a manifest
/// or filename metadata); every consumer that needs a class rejects it.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureSample {
    pub sample_id: usize,
    /// Gesture class in `1..=21`, or 0 when unlabeled.
    pub label: u8,
    pub subject: u32,
    pub environment: Environment,
    pub distance_m: f64,
    /// Ordered by timestamp ascending, ties kept in file order.
    pub readings: Vec<Reading>,
}

impl GestureSample {
    /// Total reading count `T`.
    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.label != 0
    }
}

/// Lifecycle of a per-EPC dataframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameStatus {
    /// As extracted from the sample, before zero padding.
    Raw,
    /// Zero-padded with at least one observed and one missing position.
    Sparse,
    /// No usable observations; repaired by imputation.
    Null,
    /// Fully observed (or fully repaired) at every position.
    Complete,
}

/// Per-EPC time series extracted from one gesture execution.
///
/// `mask[t]` records whether position `t` holds a genuine observation. The
/// numeric zero written by padding can collide with a genuine normalized RSS
/// minimum of 0, so missingness is never inferred from the values themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataframe {
    pub epc: u8,
    pub timestamps: Vec<f64>,
    pub rss: Vec<f64>,
    pub phase: Vec<f64>,
    /// Presence mask: `true` at observed positions.
    pub mask: Vec<bool>,
    pub status: FrameStatus,
}

impl Dataframe {
    /// Empty frame for an EPC absent from the sample.
    pub fn null(epc: u8) -> Self {
        Dataframe {
            epc,
            timestamps: Vec::new(),
            rss: Vec::new(),
            phase: Vec::new(),
            mask: Vec::new(),
            status: FrameStatus::Null,
        }
    }

    /// Number of rows currently held.
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Count of genuinely observed positions.
    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_null(&self) -> bool {
        self.status == FrameStatus::Null
    }
}

/// A gesture after conditioning: one dataframe per EPC plus the metadata the
/// evaluation stages need.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedGesture {
    pub sample_id: usize,
    /// Gesture class in `1..=21`, or 0 when unlabeled.
    pub label: u8,
    pub subject: u32,
    pub environment: Environment,
    pub distance_m: f64,
    /// One frame per EPC, in EPC order `1..=n_tags`.
    pub frames: Vec<Dataframe>,
}

impl ProcessedGesture {
    /// EPC ids whose frames hold usable data.
    pub fn available_epcs(&self) -> Vec<u8> {
        self.frames
            .iter()
            .filter(|f| !f.is_null())
            .map(|f| f.epc)
            .collect()
    }

    /// EPC ids whose frames are null.
    pub fn null_epcs(&self) -> Vec<u8> {
        self.frames
            .iter()
            .filter(|f| f.is_null())
            .map(|f| f.epc)
            .collect()
    }

    pub fn frame(&self, epc: u8) -> &Dataframe {
        &self.frames[(epc - 1) as usize]
    }
}

/// Pairing of EPCs that sit physically adjacent on the garment.
///
/// Used for copy-based fallback imputation: when a tag's data is missing and
/// no within-class neighbor covers it, the partner tag's series stands in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProximityMatrix {
    pairs: Vec<[u8; 2]>,
}

impl ProximityMatrix {
    /// Build from explicit pairs; every EPC in `1..=n_tags` must appear in
    /// exactly one pair.
    pub fn new(pairs: Vec<[u8; 2]>, n_tags: u8) -> Result<Self, String> {
        let mut seen = vec![false; n_tags as usize + 1];
        for pair in &pairs {
            for &epc in pair {
                if epc == 0 || epc > n_tags {
                    return Err(format!("EPC {epc} out of range 1..={n_tags}"));
                }
                if seen[epc as usize] {
                    return Err(format!("EPC {epc} appears in more than one pair"));
                }
                seen[epc as usize] = true;
            }
        }
        if let Some(missing) = (1..=n_tags).find(|&e| !seen[e as usize]) {
            return Err(format!("EPC {missing} is not covered by any pair"));
        }
        Ok(ProximityMatrix { pairs })
    }

    pub fn pairs(&self) -> &[[u8; 2]] {
        &self.pairs
    }

    /// The EPC paired with `epc`, if covered.
    pub fn partner_of(&self, epc: u8) -> Option<u8> {
        self.pairs.iter().find_map(|&[a, b]| {
            if a == epc {
                Some(b)
            } else if b == epc {
                Some(a)
            } else {
                None
            }
        })
    }

    /// Whether two EPCs form one proximity pair.
    pub fn same_pair(&self, a: u8, b: u8) -> bool {
        self.pairs
            .iter()
            .any(|&[x, y]| (x == a && y == b) || (x == b && y == a))
    }
}

impl Default for ProximityMatrix {
    /// Wrist and arm pairs of the reference garment layout.
    fn default() -> Self {
        ProximityMatrix {
            pairs: vec![[1, 2], [3, 4], [5, 6], [7, 8]],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_proximity_covers_all_tags() {
        let prox = ProximityMatrix::default();
        for epc in 1..=8 {
            assert!(prox.partner_of(epc).is_some());
        }
        assert_eq!(prox.partner_of(1), Some(2));
        assert_eq!(prox.partner_of(6), Some(5));
        assert!(prox.same_pair(7, 8));
        assert!(!prox.same_pair(2, 3));
    }

    #[test]
    fn proximity_rejects_duplicate_and_missing() {
        assert!(ProximityMatrix::new(vec![[1, 2], [2, 3]], 4).is_err());
        assert!(ProximityMatrix::new(vec![[1, 2]], 4).is_err());
        assert!(ProximityMatrix::new(vec![[1, 2], [3, 4]], 4).is_ok());
    }

    #[test]
    fn null_frame_is_empty_and_null() {
        let df = Dataframe::null(3);
        assert!(df.is_null());
        assert!(df.is_empty());
        assert_eq!(df.observed_count(), 0);
    }
}
