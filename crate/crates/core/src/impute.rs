//! Null-dataframe imputation: within-class nearest-gesture averaging with
//! proximity-based fallback.
//!
//! A gesture that lost an entire tag borrows that tag's series from the most
//! similar same-class training gestures, measured by the mean Euclidean
//! distance (MED) over the stacked (RSS, phase) rows of the shared EPCs.
//! When no neighbor covers the missing tag, the physically adjacent partner
//! tag stands in; as a last resort (training only) the class-wide average is
//! used. A missing proximity pair is repaired as a unit: MED for whichever
//! member has coverage, then partner copy, then class average.
//!
//! Pool gestures are read in their un-imputed form, so per-sample imputation
//! is order-independent and parallel-safe.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::types::{Dataframe, FrameStatus, ProcessedGesture, ProximityMatrix};

/// Imputation parameters.
#[derive(Debug, Clone)]
pub struct ImputeConfig {
    /// Number of nearest same-class gestures to consult.
    pub nu: usize,
    pub proximity: ProximityMatrix,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig {
            nu: 30,
            proximity: ProximityMatrix::default(),
        }
    }
}

/// Whether class labels may be consulted. Test-time gestures have no trusted
/// label, so only the proximity copy is allowed there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputeMode {
    Train,
    Test,
}

/// Which repair filled a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputeBranch {
    /// Element-wise mean over the nearest neighbors that cover the EPC.
    MedAverage,
    /// Copy of the proximity partner's frame.
    ProximityCopy,
    /// Element-wise mean over every pool gesture that covers the EPC.
    ClassAverage,
}

impl ImputeBranch {
    pub fn as_str(&self) -> &'static str {
        match self {
            ImputeBranch::MedAverage => "med_average",
            ImputeBranch::ProximityCopy => "proximity_copy",
            ImputeBranch::ClassAverage => "class_average",
        }
    }
}

/// One imputation event, for the audit log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditRecord {
    pub sample_id: usize,
    pub epc: u8,
    pub branch: ImputeBranch,
    /// Set when the EPC was repaired as part of a missing proximity pair.
    pub pair_cascade: bool,
}

impl AuditRecord {
    /// CSV row matching the header `sample_id,epc,branch,pair_cascade`.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.sample_id,
            self.epc,
            self.branch.as_str(),
            self.pair_cascade
        )
    }
}

#[derive(Debug, Error)]
pub enum ImputeError {
    #[error("sample {sample_id}: too many missing EPCs ({count} > 4)")]
    TooManyMissing { sample_id: usize, count: usize },
    #[error("sample {sample_id}: imputation exhausted for EPC {epc} (no neighbor coverage, partner unavailable)")]
    ImputationExhausted { sample_id: usize, epc: u8 },
}

/// One `(kappa, gesture)` row of the neighbor table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborRow {
    pub kappa: f64,
    pub sample_id: usize,
    /// Position within the pool slice the table was built from.
    pub pool_idx: usize,
}

/// MED values against every admissible pool gesture, the paper's matrix K.
#[derive(Debug, Clone, Default)]
pub struct NeighborTable {
    rows: Vec<NeighborRow>,
}

impl NeighborTable {
    pub fn rows(&self) -> &[NeighborRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Indices of the `nu` nearest gestures: ascending kappa, ties broken by
    /// smaller gesture index.
    pub fn top_nu(&self, nu: usize) -> Vec<NeighborRow> {
        let mut sorted = self.rows.clone();
        sorted.sort_by(|a, b| {
            a.kappa
                .partial_cmp(&b.kappa)
                .unwrap()
                .then(a.sample_id.cmp(&b.sample_id))
        });
        sorted.truncate(nu);
        sorted
    }
}

/// Mean Euclidean distance between two gestures over the reference gesture's
/// available EPCs.
///
/// Returns `None` when `other` does not cover every available EPC of `ref`
/// (the admissibility condition), or when the reference has no available
/// EPCs at all. Rows are accumulated in EPC-ascending, time-ascending order
/// and averaged over the full stacked row count.
pub fn med(reference: &ProcessedGesture, other: &ProcessedGesture) -> Option<f64> {
    let ref_epcs = reference.available_epcs();
    if ref_epcs.is_empty() {
        return None;
    }
    for &epc in &ref_epcs {
        if other.frame(epc).is_null() {
            return None;
        }
    }
    let mut acc = 0.0f64;
    let mut rows = 0usize;
    for &epc in &ref_epcs {
        let a = reference.frame(epc);
        let b = other.frame(epc);
        debug_assert_eq!(a.len(), b.len(), "gestures must share l_rs");
        for q in 0..a.len() {
            let dr = a.rss[q] - b.rss[q];
            let dp = a.phase[q] - b.phase[q];
            acc += (dr * dr + dp * dp).sqrt();
            rows += 1;
        }
    }
    Some(acc / rows as f64)
}

/// MED table of the reference gesture against a same-class pool. The
/// reference itself and inadmissible gestures are left out.
pub fn build_neighbor_table(
    reference: &ProcessedGesture,
    pool: &[&ProcessedGesture],
) -> NeighborTable {
    let mut rows = Vec::new();
    for (pool_idx, other) in pool.iter().enumerate() {
        if other.sample_id == reference.sample_id {
            continue;
        }
        if let Some(kappa) = med(reference, other) {
            rows.push(NeighborRow {
                kappa,
                sample_id: other.sample_id,
                pool_idx,
            });
        }
    }
    NeighborTable { rows }
}

/// Element-wise mean of the named EPC's frame over the given pool gestures,
/// in the given order.
fn mean_frame(epc: u8, sources: &[&ProcessedGesture], template: &Dataframe) -> Dataframe {
    let l = sources[0].frame(epc).len();
    let mut rss = vec![0.0f64; l];
    let mut phase = vec![0.0f64; l];
    for g in sources {
        let f = g.frame(epc);
        for q in 0..l {
            rss[q] += f.rss[q];
            phase[q] += f.phase[q];
        }
    }
    let count = sources.len() as f64;
    for q in 0..l {
        rss[q] /= count;
        phase[q] /= count;
    }
    Dataframe {
        epc,
        timestamps: template.timestamps.clone(),
        rss,
        phase,
        mask: vec![true; l],
        status: FrameStatus::Complete,
    }
}

fn copy_frame(epc: u8, source: &Dataframe) -> Dataframe {
    Dataframe {
        epc,
        timestamps: source.timestamps.clone(),
        rss: source.rss.clone(),
        phase: source.phase.clone(),
        mask: vec![true; source.len()],
        status: FrameStatus::Complete,
    }
}

/// Units of repair work: lone missing EPCs and complete missing pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlanItem {
    Single(u8),
    Pair(u8, u8),
}

fn plan_missing(missing: &[u8], proximity: &ProximityMatrix) -> Vec<PlanItem> {
    let set: BTreeSet<u8> = missing.iter().cloned().collect();
    let mut planned: BTreeSet<u8> = BTreeSet::new();
    let mut plan = Vec::new();
    for &epc in &set {
        if planned.contains(&epc) {
            continue;
        }
        let partner = proximity.partner_of(epc);
        match partner {
            Some(p) if set.contains(&p) => {
                plan.push(PlanItem::Pair(epc.min(p), epc.max(p)));
                planned.insert(epc);
                planned.insert(p);
            }
            _ => {
                plan.push(PlanItem::Single(epc));
                planned.insert(epc);
            }
        }
    }
    plan
}

/// Fill every null dataframe of a gesture. See the module docs for the
/// branch order; `pool` must hold same-class training gestures in their
/// un-imputed form (the reference itself is skipped by `sample_id`).
///
/// Test mode ignores the pool entirely: class labels are unknown at
/// inference, so only the proximity copy applies, and a missing partner is
/// an [`ImputeError::ImputationExhausted`].
pub fn impute_nulls(
    gesture: ProcessedGesture,
    pool: &[&ProcessedGesture],
    cfg: &ImputeConfig,
    mode: ImputeMode,
) -> Result<(ProcessedGesture, Vec<AuditRecord>), ImputeError> {
    impute_nulls_excluding(gesture, pool, cfg, mode, &BTreeSet::new())
}

/// [`impute_nulls`] with a set of EPCs deliberately left unrepaired (tag
/// ablation studies). Excluded EPCs do not count toward the missing budget
/// and keep their all-zero frames.
pub fn impute_nulls_excluding(
    mut gesture: ProcessedGesture,
    pool: &[&ProcessedGesture],
    cfg: &ImputeConfig,
    mode: ImputeMode,
    excluded: &BTreeSet<u8>,
) -> Result<(ProcessedGesture, Vec<AuditRecord>), ImputeError> {
    let missing: Vec<u8> = gesture
        .null_epcs()
        .into_iter()
        .filter(|e| !excluded.contains(e))
        .collect();
    if missing.is_empty() {
        return Ok((gesture, Vec::new()));
    }
    if missing.len() > 4 {
        return Err(ImputeError::TooManyMissing {
            sample_id: gesture.sample_id,
            count: missing.len(),
        });
    }

    let sample_id = gesture.sample_id;
    let mut audit = Vec::new();

    if mode == ImputeMode::Test {
        // Only the proximity copy is trusted without a label.
        for &epc in &missing {
            let partner = cfg.proximity.partner_of(epc);
            let source = match partner {
                Some(p) if !gesture.frame(p).is_null() && !excluded.contains(&p) => {
                    gesture.frame(p).clone()
                }
                _ => {
                    return Err(ImputeError::ImputationExhausted { sample_id, epc });
                }
            };
            gesture.frames[(epc - 1) as usize] = copy_frame(epc, &source);
            audit.push(AuditRecord {
                sample_id,
                epc,
                branch: ImputeBranch::ProximityCopy,
                pair_cascade: false,
            });
        }
        return Ok((gesture, audit));
    }

    // Train mode: neighbor table built once, before the per-EPC loop.
    let table = build_neighbor_table(&gesture, pool);
    let neighbors = table.top_nu(cfg.nu);
    let omega: Vec<&ProcessedGesture> = neighbors.iter().map(|r| pool[r.pool_idx]).collect();

    let omega_for = |epc: u8| -> Vec<&ProcessedGesture> {
        omega
            .iter()
            .filter(|g| !g.frame(epc).is_null())
            .cloned()
            .collect()
    };
    let class_pool_for = |epc: u8| -> Vec<&ProcessedGesture> {
        pool.iter()
            .filter(|g| g.sample_id != sample_id && !g.frame(epc).is_null())
            .cloned()
            .collect()
    };

    let plan = plan_missing(&missing, &cfg.proximity);
    for item in plan {
        match item {
            PlanItem::Single(epc) => {
                let covered = omega_for(epc);
                if !covered.is_empty() {
                    gesture.frames[(epc - 1) as usize] =
                        mean_frame(epc, &covered, gesture.frame(epc));
                    audit.push(AuditRecord {
                        sample_id,
                        epc,
                        branch: ImputeBranch::MedAverage,
                        pair_cascade: false,
                    });
                    continue;
                }
                let partner = cfg.proximity.partner_of(epc);
                if let Some(p) = partner {
                    if !gesture.frame(p).is_null() && !excluded.contains(&p) {
                        gesture.frames[(epc - 1) as usize] =
                            copy_frame(epc, &gesture.frame(p).clone());
                        audit.push(AuditRecord {
                            sample_id,
                            epc,
                            branch: ImputeBranch::ProximityCopy,
                            pair_cascade: false,
                        });
                        continue;
                    }
                }
                let class_pool = class_pool_for(epc);
                if class_pool.is_empty() {
                    return Err(ImputeError::ImputationExhausted { sample_id, epc });
                }
                gesture.frames[(epc - 1) as usize] =
                    mean_frame(epc, &class_pool, gesture.frame(epc));
                audit.push(AuditRecord {
                    sample_id,
                    epc,
                    branch: ImputeBranch::ClassAverage,
                    pair_cascade: false,
                });
            }
            PlanItem::Pair(a, b) => {
                let cov_a = omega_for(a);
                let cov_b = omega_for(b);
                match (cov_a.is_empty(), cov_b.is_empty()) {
                    (false, false) => {
                        gesture.frames[(a - 1) as usize] =
                            mean_frame(a, &cov_a, gesture.frame(a));
                        gesture.frames[(b - 1) as usize] =
                            mean_frame(b, &cov_b, gesture.frame(b));
                        for epc in [a, b] {
                            audit.push(AuditRecord {
                                sample_id,
                                epc,
                                branch: ImputeBranch::MedAverage,
                                pair_cascade: true,
                            });
                        }
                    }
                    (false, true) => {
                        gesture.frames[(a - 1) as usize] =
                            mean_frame(a, &cov_a, gesture.frame(a));
                        gesture.frames[(b - 1) as usize] =
                            copy_frame(b, &gesture.frame(a).clone());
                        audit.push(AuditRecord {
                            sample_id,
                            epc: a,
                            branch: ImputeBranch::MedAverage,
                            pair_cascade: true,
                        });
                        audit.push(AuditRecord {
                            sample_id,
                            epc: b,
                            branch: ImputeBranch::ProximityCopy,
                            pair_cascade: true,
                        });
                    }
                    (true, false) => {
                        gesture.frames[(b - 1) as usize] =
                            mean_frame(b, &cov_b, gesture.frame(b));
                        gesture.frames[(a - 1) as usize] =
                            copy_frame(a, &gesture.frame(b).clone());
                        audit.push(AuditRecord {
                            sample_id,
                            epc: b,
                            branch: ImputeBranch::MedAverage,
                            pair_cascade: true,
                        });
                        audit.push(AuditRecord {
                            sample_id,
                            epc: a,
                            branch: ImputeBranch::ProximityCopy,
                            pair_cascade: true,
                        });
                    }
                    (true, true) => {
                        for epc in [a, b] {
                            let class_pool = class_pool_for(epc);
                            if class_pool.is_empty() {
                                return Err(ImputeError::ImputationExhausted { sample_id, epc });
                            }
                            gesture.frames[(epc - 1) as usize] =
                                mean_frame(epc, &class_pool, gesture.frame(epc));
                            audit.push(AuditRecord {
                                sample_id,
                                epc,
                                branch: ImputeBranch::ClassAverage,
                                pair_cascade: true,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok((gesture, audit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Environment;

    fn frame_with(epc: u8, rss: Vec<f64>, phase: Vec<f64>) -> Dataframe {
        let l = rss.len();
        Dataframe {
            epc,
            timestamps: (0..l).map(|i| i as f64).collect(),
            rss,
            phase,
            mask: vec![true; l],
            status: FrameStatus::Complete,
        }
    }

    fn null_frame(epc: u8, l: usize) -> Dataframe {
        Dataframe {
            epc,
            timestamps: (0..l).map(|i| i as f64).collect(),
            rss: vec![0.0; l],
            phase: vec![0.0; l],
            mask: vec![false; l],
            status: FrameStatus::Null,
        }
    }

    /// Gesture over 8 EPCs, constant value frames except the listed nulls.
    fn gesture(sample_id: usize, fill: f64, l: usize, nulls: &[u8]) -> ProcessedGesture {
        let frames = (1..=8u8)
            .map(|epc| {
                if nulls.contains(&epc) {
                    null_frame(epc, l)
                } else {
                    frame_with(epc, vec![fill; l], vec![fill; l])
                }
            })
            .collect();
        ProcessedGesture {
            sample_id,
            label: 1,
            subject: 1,
            environment: Environment::A,
            distance_m: 1.5,
            frames,
        }
    }

    #[test]
    fn med_zero_on_identical() {
        let a = gesture(1, 0.5, 4, &[]);
        let b = gesture(2, 0.5, 4, &[]);
        assert_eq!(med(&a, &b), Some(0.0));
    }

    #[test]
    fn med_hand_computed_rows() {
        let mut a = gesture(1, 0.0, 2, &[]);
        let mut b = gesture(2, 0.0, 2, &[]);
        // Restrict to one shared EPC by nulling the rest of a.
        for epc in 2..=8u8 {
            a.frames[(epc - 1) as usize] = null_frame(epc, 2);
        }
        a.frames[0] = frame_with(1, vec![0.0, 1.0], vec![0.0, 1.0]);
        b.frames[0] = frame_with(1, vec![3.0, 1.0], vec![4.0, 1.0]);
        // Nulling 4+ frames is out of the impute budget but fine for med().
        let kappa = med(&a, &b).unwrap();
        assert!((kappa - 2.5).abs() < 1e-12);
    }

    #[test]
    fn med_constant_phase_shift() {
        let a = gesture(1, 0.5, 6, &[]);
        let mut b = gesture(2, 0.5, 6, &[]);
        for f in &mut b.frames {
            for p in &mut f.phase {
                *p += 0.75;
            }
        }
        let kappa = med(&a, &b).unwrap();
        assert!((kappa - 0.75).abs() < 1e-12);
    }

    #[test]
    fn med_inadmissible_when_other_lacks_coverage() {
        let a = gesture(1, 0.5, 4, &[]);
        let b = gesture(2, 0.5, 4, &[3]);
        assert_eq!(med(&a, &b), None);
        // But symmetric restriction passes: a missing 3 makes b admissible.
        let a2 = gesture(3, 0.5, 4, &[3]);
        assert!(med(&a2, &b).is_some());
    }

    #[test]
    fn neighbor_table_sorts_and_breaks_ties() {
        let reference = gesture(0, 0.0, 4, &[]);
        let g4 = gesture(4, 3.0, 4, &[]);
        let g7 = gesture(7, 1.0, 4, &[]);
        let g9 = gesture(9, 2.0, 4, &[]);
        let pool = [&g4, &g7, &g9];
        let table = build_neighbor_table(&reference, &pool);
        let top = table.top_nu(2);
        let ids: Vec<usize> = top.iter().map(|r| r.sample_id).collect();
        assert_eq!(ids, vec![7, 9]);

        // Equal kappa: smaller index first.
        let g5 = gesture(5, 1.0, 4, &[]);
        let pool = [&g9, &g7, &g5];
        let table = build_neighbor_table(&reference, &pool);
        let top = table.top_nu(2);
        let ids: Vec<usize> = top.iter().map(|r| r.sample_id).collect();
        assert_eq!(ids, vec![5, 7]);
    }

    #[test]
    fn neighbor_table_singleton_pool() {
        let reference = gesture(0, 0.0, 4, &[]);
        let g1 = gesture(1, 1.0, 4, &[]);
        let pool = [&g1];
        let table = build_neighbor_table(&reference, &pool);
        assert_eq!(table.rows().len(), 1);
        assert_eq!(table.top_nu(10).len(), 1);
    }

    #[test]
    fn impute_mean_over_covering_neighbors() {
        let reference = gesture(0, 1.0, 4, &[3]);
        let n1 = gesture(1, 1.0, 4, &[]);
        let n2 = gesture(2, 3.0, 4, &[]);
        let pool = [&n1, &n2];
        let cfg = ImputeConfig::default();
        let (out, audit) = impute_nulls(reference, &pool, &cfg, ImputeMode::Train).unwrap();
        assert_eq!(out.frame(3).rss, vec![2.0; 4]);
        assert_eq!(out.frame(3).phase, vec![2.0; 4]);
        assert_eq!(audit.len(), 1);
        assert_eq!(audit[0].branch, ImputeBranch::MedAverage);
        assert!(!audit[0].pair_cascade);
    }

    #[test]
    fn impute_falls_back_to_partner_copy() {
        let reference = gesture(0, 1.0, 4, &[3]);
        // Pool gestures all lack EPC 3 as well.
        let n1 = gesture(1, 1.0, 4, &[3]);
        let n2 = gesture(2, 2.0, 4, &[3]);
        let pool = [&n1, &n2];
        let cfg = ImputeConfig::default();
        let (out, audit) = impute_nulls(reference, &pool, &cfg, ImputeMode::Train).unwrap();
        // Partner of 3 is 4.
        assert_eq!(out.frame(3).rss, out.frame(4).rss);
        assert_eq!(out.frame(3).phase, out.frame(4).phase);
        assert_eq!(audit[0].branch, ImputeBranch::ProximityCopy);
    }

    #[test]
    fn impute_no_missing_is_identity() {
        let reference = gesture(0, 1.0, 4, &[]);
        let n1 = gesture(1, 2.0, 4, &[]);
        let pool = [&n1];
        let cfg = ImputeConfig::default();
        let before = reference.clone();
        let (out, audit) = impute_nulls(reference, &pool, &cfg, ImputeMode::Train).unwrap();
        assert_eq!(out, before);
        assert!(audit.is_empty());
    }

    #[test]
    fn impute_never_touches_available_frames() {
        let reference = gesture(0, 1.0, 4, &[6]);
        let n1 = gesture(1, 5.0, 4, &[]);
        let pool = [&n1];
        let cfg = ImputeConfig::default();
        let before = reference.clone();
        let (out, _) = impute_nulls(reference, &pool, &cfg, ImputeMode::Train).unwrap();
        for epc in 1..=8u8 {
            if epc != 6 {
                assert_eq!(out.frame(epc), before.frame(epc));
            }
        }
    }

    #[test]
    fn impute_pair_cascade_med_then_partner_copy() {
        // EPC 5 and its partner 6 both missing from the reference; the
        // neighbors cover 5 but not 6.
        let reference = gesture(0, 1.0, 4, &[5, 6]);
        let n1 = gesture(1, 2.0, 4, &[6]);
        let n2 = gesture(2, 4.0, 4, &[5, 6]);
        let pool = [&n1, &n2];
        let cfg = ImputeConfig {
            nu: 30,
            proximity: ProximityMatrix::default(),
        };
        let (out, audit) = impute_nulls(reference, &pool, &cfg, ImputeMode::Train).unwrap();
        // Pair (5,6): omega covers 5 via n1, not 6; 5 <- med over {n1},
        // 6 <- copy of imputed 5.
        assert_eq!(out.frame(5).rss, vec![2.0; 4]);
        assert_eq!(out.frame(6).rss, vec![2.0; 4]);
        assert!(audit.iter().all(|r| r.pair_cascade));
        assert_eq!(audit[0].branch, ImputeBranch::MedAverage);
        assert_eq!(audit[1].branch, ImputeBranch::ProximityCopy);
    }

    #[test]
    fn impute_pair_class_average_when_nobody_covers() {
        let reference = gesture(0, 1.0, 4, &[7, 8]);
        // Neither pool gesture covers 7 or 8, so omega coverage is empty,
        // and the class pool is empty too -> exhausted even in train mode.
        let n1 = gesture(1, 2.0, 4, &[7, 8]);
        let pool = [&n1];
        let cfg = ImputeConfig::default();
        let err = impute_nulls(reference, &pool, &cfg, ImputeMode::Train).unwrap_err();
        assert!(matches!(err, ImputeError::ImputationExhausted { epc: 7, .. }));

        // With coverage in the wider class pool but not in omega
        // (inadmissible neighbors), the class average fires.
        let reference = gesture(0, 1.0, 4, &[7, 8]);
        let n2 = gesture(2, 3.0, 4, &[1]); // admissible? ref needs {1..6}; n2 lacks 1 -> inadmissible
        let pool = [&n2];
        let (out, audit) = impute_nulls(reference, &pool, &cfg, ImputeMode::Train).unwrap();
        assert_eq!(out.frame(7).rss, vec![3.0; 4]);
        assert_eq!(out.frame(8).rss, vec![3.0; 4]);
        assert!(audit.iter().all(|r| r.branch == ImputeBranch::ClassAverage));
    }

    #[test]
    fn test_mode_uses_partner_only() {
        let reference = gesture(0, 1.0, 4, &[6]);
        let n1 = gesture(1, 9.0, 4, &[]);
        let pool = [&n1];
        let cfg = ImputeConfig::default();
        let (out, audit) = impute_nulls(reference, &pool, &cfg, ImputeMode::Test).unwrap();
        // Copied from partner 5, not averaged from the pool.
        assert_eq!(out.frame(6).rss, vec![1.0; 4]);
        assert_eq!(audit[0].branch, ImputeBranch::ProximityCopy);
    }

    #[test]
    fn test_mode_errors_when_partner_missing() {
        let reference = gesture(0, 1.0, 4, &[5, 6]);
        let n1 = gesture(1, 9.0, 4, &[]);
        let pool = [&n1];
        let cfg = ImputeConfig::default();
        let err = impute_nulls(reference, &pool, &cfg, ImputeMode::Test).unwrap_err();
        assert!(matches!(err, ImputeError::ImputationExhausted { .. }));
    }

    #[test]
    fn too_many_missing_is_rejected() {
        let reference = gesture(0, 1.0, 4, &[1, 3, 5, 7, 8]);
        let n1 = gesture(1, 2.0, 4, &[]);
        let pool = [&n1];
        let cfg = ImputeConfig::default();
        let err = impute_nulls(reference, &pool, &cfg, ImputeMode::Train).unwrap_err();
        assert!(matches!(err, ImputeError::TooManyMissing { count: 5, .. }));
    }

    #[test]
    fn excluded_epcs_stay_null() {
        let reference = gesture(0, 1.0, 4, &[3, 6]);
        let n1 = gesture(1, 2.0, 4, &[]);
        let pool = [&n1];
        let cfg = ImputeConfig::default();
        let excluded: BTreeSet<u8> = [3u8].into_iter().collect();
        let (out, audit) =
            impute_nulls_excluding(reference, &pool, &cfg, ImputeMode::Train, &excluded).unwrap();
        assert!(out.frame(3).is_null());
        assert!(!out.frame(6).is_null());
        assert_eq!(audit.len(), 1);
        assert_eq!(audit[0].epc, 6);
    }

    #[test]
    fn neighbor_selection_invariant_under_uniform_scaling() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let l = 6;
        let mk = |id: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let frames = (1..=8u8)
                .map(|epc| {
                    frame_with(
                        epc,
                        (0..l).map(|_| rng.gen_range(0.0..1.0)).collect(),
                        (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    )
                })
                .collect();
            ProcessedGesture {
                sample_id: id,
                label: 1,
                subject: 1,
                environment: Environment::A,
                distance_m: 1.5,
                frames,
            }
        };
        let reference = mk(0, &mut rng);
        let pool_owned: Vec<ProcessedGesture> = (1..=6).map(|i| mk(i, &mut rng)).collect();
        let pool: Vec<&ProcessedGesture> = pool_owned.iter().collect();
        let base: Vec<usize> = build_neighbor_table(&reference, &pool)
            .top_nu(3)
            .iter()
            .map(|r| r.sample_id)
            .collect();

        let scale = 3.7;
        let scale_gesture = |g: &ProcessedGesture| {
            let mut g = g.clone();
            for f in &mut g.frames {
                for v in &mut f.rss {
                    *v *= scale;
                }
                for v in &mut f.phase {
                    *v *= scale;
                }
            }
            g
        };
        let ref_scaled = scale_gesture(&reference);
        let pool_scaled_owned: Vec<ProcessedGesture> =
            pool_owned.iter().map(scale_gesture).collect();
        let pool_scaled: Vec<&ProcessedGesture> = pool_scaled_owned.iter().collect();
        let scaled: Vec<usize> = build_neighbor_table(&ref_scaled, &pool_scaled)
            .top_nu(3)
            .iter()
            .map(|r| r.sample_id)
            .collect();
        assert_eq!(base, scaled);
    }
}
