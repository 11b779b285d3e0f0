//! Perception quality metrics on BEV grids: semantic IoU, instance
//! matching, and panoptic quality, plus the deterministic geometric proxy
//! perceiver that stands in for a learned segmentation stack.
//!
//! The proxy perceiver lifts the foreground pixels that survive each
//! UAV's Top-K mask onto the shared BEV grid, fuses the per-view grids,
//! marks every hit cell as predicted vehicle, and recovers instances as
//! 4-connected components labeled by their majority instance id.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{fuse_bev, project_view_to_bev, BevGrid, BevSpec};
use crate::scenario::{render_view, Scenario, ScenarioError};
use crate::sparsify::SparseImage;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("BEV specs do not match")]
    SpecMismatch,
    #[error("instance cell sets are not disjoint (cell ({0}, {1}) claimed twice)")]
    OverlappingInstances(usize, usize),
    #[error("empty frame sequence")]
    EmptySequence,
    #[error("no UAV selected")]
    EmptySelection,
    #[error("mask shape {got} does not match view pixel count {want}")]
    MaskShapeMismatch { got: usize, want: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// One labeled instance on the BEV grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BevInstance {
    pub id: u32,
    pub cells: BTreeSet<(usize, usize)>,
}

/// Semantic vehicle mask plus disjoint instances over a BEV grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBev {
    pub spec: BevSpec,
    pub instances: Vec<BevInstance>,
    semantic: Vec<bool>,
}

impl LabeledBev {
    /// Build from instances, validating disjointness; the semantic mask is
    /// the union of all instance cells.
    pub fn from_instances(
        spec: BevSpec,
        instances: Vec<BevInstance>,
    ) -> Result<Self, MetricsError> {
        let (w_cells, h_cells) = (spec.w_cells(), spec.h_cells());
        let mut semantic = vec![false; w_cells * h_cells];
        for inst in &instances {
            for &(w, h) in &inst.cells {
                debug_assert!(w < w_cells && h < h_cells, "cell out of grid");
                let idx = h * w_cells + w;
                if semantic[idx] {
                    return Err(MetricsError::OverlappingInstances(w, h));
                }
                semantic[idx] = true;
            }
        }
        Ok(Self { spec, instances, semantic })
    }

    pub fn empty(spec: BevSpec) -> Self {
        Self::from_instances(spec, Vec::new()).expect("no instances to overlap")
    }

    pub fn semantic_mask(&self) -> &[bool] {
        &self.semantic
    }

    pub fn occupied_cells(&self) -> usize {
        self.semantic.iter().filter(|&&b| b).count()
    }
}

/// Ground-truth BEV labels of a scenario frame.
pub fn ground_truth_bev(scenario: &Scenario, frame: usize) -> Result<LabeledBev, MetricsError> {
    let instances = scenario
        .ground_truth_instances(frame)?
        .into_iter()
        .map(|(id, cells)| BevInstance { id, cells })
        .collect();
    LabeledBev::from_instances(scenario.bev, instances)
}

/// Pixel-level overlap of the vehicle masks: |intersection| / |union|.
/// Two empty masks count as perfect agreement.
pub fn iou_semantic(pred: &LabeledBev, gt: &LabeledBev) -> Result<f64, MetricsError> {
    if pred.spec != gt.spec {
        return Err(MetricsError::SpecMismatch);
    }
    let mut intersection = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.semantic.iter().zip(gt.semantic.iter()) {
        intersection += (p && g) as usize;
        union += (p || g) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(intersection as f64 / union as f64)
}

/// Arithmetic mean of per-frame IoUs.
pub fn mean_iou_over_frames(per_frame: &[f64]) -> Result<f64, MetricsError> {
    if per_frame.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}

fn cell_iou(a: &BTreeSet<(usize, usize)>, b: &BTreeSet<(usize, usize)>) -> f64 {
    let intersection = a.intersection(b).count();
    if intersection == 0 {
        return 0.0;
    }
    let union = a.len() + b.len() - intersection;
    intersection as f64 / union as f64
}

/// Instance matching result. True positives are matched
/// (prediction index, ground-truth index, IoU) triples; matching is
/// greedy on descending IoU with a strict 0.5 threshold, above which it
/// coincides with the optimal assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub true_positives: Vec<(usize, usize, f64)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

/// Match predicted instances to ground-truth instances.
pub fn match_instances(pred: &LabeledBev, gt: &LabeledBev) -> Result<MatchResult, MetricsError> {
    if pred.spec != gt.spec {
        return Err(MetricsError::SpecMismatch);
    }
    let mut candidates = Vec::new();
    for (pi, p) in pred.instances.iter().enumerate() {
        for (gi, g) in gt.instances.iter().enumerate() {
            let iou = cell_iou(&p.cells, &g.cells);
            if iou > 0.5 {
                candidates.push((pi, gi, iou));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut pred_used = vec![false; pred.instances.len()];
    let mut gt_used = vec![false; gt.instances.len()];
    let mut true_positives = Vec::new();
    for (pi, gi, iou) in candidates {
        if !pred_used[pi] && !gt_used[gi] {
            pred_used[pi] = true;
            gt_used[gi] = true;
            true_positives.push((pi, gi, iou));
        }
    }
    Ok(MatchResult {
        true_positives,
        unmatched_pred: (0..pred.instances.len()).filter(|&i| !pred_used[i]).collect(),
        unmatched_gt: (0..gt.instances.len()).filter(|&i| !gt_used[i]).collect(),
    })
}

/// Panoptic quality scores: `pq = sq * rq` with
/// `sq = mean IoU over true positives` and
/// `rq = |TP| / (|TP| + |FP|/2 + |FN|/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PqScores {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// True when there were no predictions and no ground truths at all.
    pub degenerate: bool,
}

pub fn panoptic_quality(matches: &MatchResult) -> PqScores {
    let tp = matches.true_positives.len();
    let fp = matches.unmatched_pred.len();
    let fn_ = matches.unmatched_gt.len();
    let degenerate = tp + fp + fn_ == 0;
    let sq = if tp == 0 {
        0.0
    } else {
        matches.true_positives.iter().map(|&(_, _, iou)| iou).sum::<f64>() / tp as f64
    };
    let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
    let rq = if denom == 0.0 { 0.0 } else { tp as f64 / denom };
    PqScores { pq: sq * rq, sq, rq, tp, fp, fn_, degenerate }
}

/// Predict BEV labels from the sparsified views of the selected UAVs.
///
/// `masks[i]` is the sparse retention of `selected[i]`'s view at `frame`;
/// every retained foreground pixel is lifted onto the BEV grid, the
/// per-view grids are fused, and each hit cell becomes predicted vehicle.
pub fn proxy_perceive(
    scenario: &Scenario,
    frame: usize,
    selected: &[usize],
    masks: &[&SparseImage],
) -> Result<LabeledBev, MetricsError> {
    if selected.is_empty() {
        return Err(MetricsError::EmptySelection);
    }
    assert_eq!(selected.len(), masks.len(), "one mask per selected UAV");
    let mut grids = Vec::with_capacity(selected.len());
    for (&u, sparse) in selected.iter().zip(masks.iter()) {
        let uav = &scenario.uavs[u];
        let mut view = render_view(scenario, uav, frame)?;
        if sparse.mask.len() != view.num_pixels() {
            return Err(MetricsError::MaskShapeMismatch {
                got: sparse.mask.len(),
                want: view.num_pixels(),
            });
        }
        // Drop foreground pixels that did not survive the Top-K mask.
        for (pix, &keep) in sparse.mask.iter().enumerate() {
            if !keep {
                view.instance_ids[pix] = 0;
            }
        }
        let (grid, _) = project_view_to_bev(&view, &uav.intrinsics, &uav.extrinsics(), &scenario.bev);
        grids.push(grid);
    }
    let fused = fuse_bev(&grids).expect("grids share the scenario BEV spec");
    labeled_from_grid(&fused)
}

/// Turn a fused occupancy grid into labeled instances: 4-connected
/// components of hit cells, each carrying the majority instance id among
/// its contributing hits (ties to the smallest id).
pub fn labeled_from_grid(grid: &BevGrid) -> Result<LabeledBev, MetricsError> {
    let spec = grid.spec;
    let (w_cells, h_cells) = (spec.w_cells(), spec.h_cells());
    let mut occupied = vec![false; w_cells * h_cells];
    for (w, h, _) in grid.iter_occupied() {
        occupied[h * w_cells + w] = true;
    }
    let mut visited = vec![false; w_cells * h_cells];
    let mut instances = Vec::new();
    for start in 0..occupied.len() {
        if !occupied[start] || visited[start] {
            continue;
        }
        // Flood fill over the 4-neighborhood.
        let mut stack = vec![start];
        visited[start] = true;
        let mut cells = BTreeSet::new();
        let mut id_votes: std::collections::BTreeMap<u32, u32> = std::collections::BTreeMap::new();
        while let Some(idx) = stack.pop() {
            let (w, h) = (idx % w_cells, idx / w_cells);
            cells.insert((w, h));
            for (&id, &n) in &grid.cell(w, h).hits {
                *id_votes.entry(id).or_insert(0) += n;
            }
            let mut neighbors = Vec::with_capacity(4);
            if w > 0 {
                neighbors.push(idx - 1);
            }
            if w + 1 < w_cells {
                neighbors.push(idx + 1);
            }
            if h > 0 {
                neighbors.push(idx - w_cells);
            }
            if h + 1 < h_cells {
                neighbors.push(idx + w_cells);
            }
            for n in neighbors {
                if occupied[n] && !visited[n] {
                    visited[n] = true;
                    stack.push(n);
                }
            }
        }
        let majority = id_votes
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&id, _)| id)
            .unwrap_or(0);
        instances.push(BevInstance { id: majority, cells });
    }
    LabeledBev::from_instances(spec, instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::DenseImage;
    use crate::scenario::{generate_scenario, ScenarioConfig, VehicleTrack};
    use crate::sparsify::{importance_map, importance_map_with, neighborhood_score, top_k_select};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec_16() -> BevSpec {
        BevSpec::new(0.0, 16.0, 0.0, 16.0, 1.0, 1.0).unwrap()
    }

    fn inst(id: u32, cells: &[(usize, usize)]) -> BevInstance {
        BevInstance { id, cells: cells.iter().copied().collect() }
    }

    #[test]
    fn identical_masks_have_iou_one() {
        let spec = spec_16();
        let bev = LabeledBev::from_instances(
            spec,
            vec![inst(1, &[(1, 1), (1, 2), (2, 1)])],
        )
        .unwrap();
        assert_eq!(iou_semantic(&bev, &bev).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_masks_have_iou_zero() {
        let spec = spec_16();
        let a = LabeledBev::from_instances(spec, vec![inst(1, &[(0, 0)])]).unwrap();
        let b = LabeledBev::from_instances(spec, vec![inst(1, &[(5, 5)])]).unwrap();
        assert_eq!(iou_semantic(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn both_empty_masks_count_as_one() {
        let spec = spec_16();
        let a = LabeledBev::empty(spec);
        assert_eq!(iou_semantic(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn partial_overlap_cell_count() {
        // 2x2 prediction overlapping a 2x2 ground truth in 2 cells:
        // IoU = 2 / 6 = 1/3.
        let spec = spec_16();
        let pred =
            LabeledBev::from_instances(spec, vec![inst(1, &[(0, 0), (1, 0), (0, 1), (1, 1)])])
                .unwrap();
        let gt =
            LabeledBev::from_instances(spec, vec![inst(1, &[(1, 0), (2, 0), (1, 1), (2, 1)])])
                .unwrap();
        // Wait: those overlap in (1,0),(1,1) = 2 cells, union 6.
        assert_relative_eq!(iou_semantic(&pred, &gt).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn iou_is_symmetric() {
        let spec = spec_16();
        let a = LabeledBev::from_instances(spec, vec![inst(1, &[(0, 0), (1, 0)])]).unwrap();
        let b = LabeledBev::from_instances(spec, vec![inst(2, &[(1, 0), (2, 0), (3, 0)])]).unwrap();
        assert_eq!(iou_semantic(&a, &b).unwrap(), iou_semantic(&b, &a).unwrap());
    }

    #[test]
    fn spec_mismatch_is_rejected() {
        let a = LabeledBev::empty(spec_16());
        let b = LabeledBev::empty(BevSpec::new(0.0, 8.0, 0.0, 8.0, 1.0, 1.0).unwrap());
        assert!(matches!(iou_semantic(&a, &b).unwrap_err(), MetricsError::SpecMismatch));
    }

    #[test]
    fn overlapping_instances_rejected() {
        let spec = spec_16();
        let err = LabeledBev::from_instances(
            spec,
            vec![inst(1, &[(3, 3)]), inst(2, &[(3, 3)])],
        )
        .unwrap_err();
        assert!(matches!(err, MetricsError::OverlappingInstances(3, 3)));
    }

    #[test]
    fn mean_iou_cases() {
        assert_eq!(mean_iou_over_frames(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(mean_iou_over_frames(&[0.5, 1.0]).unwrap(), 0.75, epsilon = 1e-15);
        assert!(matches!(
            mean_iou_over_frames(&[]).unwrap_err(),
            MetricsError::EmptySequence
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vals: Vec<f64> = (0..17).map(|_| rng.random_range(0.0..1.0)).collect();
        let want = vals.iter().sum::<f64>() / 17.0;
        assert_relative_eq!(mean_iou_over_frames(&vals).unwrap(), want, epsilon = 1e-15);
    }

    #[test]
    fn perfect_prediction_matches_all_instances() {
        let spec = spec_16();
        let gt = LabeledBev::from_instances(
            spec,
            vec![inst(1, &[(0, 0), (1, 0)]), inst(2, &[(5, 5), (5, 6)])],
        )
        .unwrap();
        let m = match_instances(&gt, &gt).unwrap();
        assert_eq!(m.true_positives.len(), 2);
        assert!(m.unmatched_pred.is_empty());
        assert!(m.unmatched_gt.is_empty());
        for &(_, _, iou) in &m.true_positives {
            assert_eq!(iou, 1.0);
        }
        let pq = panoptic_quality(&m);
        assert_eq!(pq.pq, 1.0);
    }

    #[test]
    fn lone_prediction_is_false_positive() {
        let spec = spec_16();
        let pred = LabeledBev::from_instances(spec, vec![inst(1, &[(0, 0)])]).unwrap();
        let gt = LabeledBev::empty(spec);
        let m = match_instances(&pred, &gt).unwrap();
        assert_eq!(m.true_positives.len(), 0);
        assert_eq!(m.unmatched_pred, vec![0]);
    }

    #[test]
    fn greedy_matching_on_competing_overlaps() {
        // Two predictions overlapping one ground truth at IoU 0.6 and 0.3:
        // one TP (the 0.6 pair), one FP, zero FN.
        let spec = spec_16();
        // gt: 5 cells in a row.
        let gt_cells: Vec<(usize, usize)> = (0..5).map(|w| (w, 8)).collect();
        let gt = LabeledBev::from_instances(spec, vec![inst(1, &gt_cells)]).unwrap();
        // pred A: 4 cells overlapping 4 -> IoU 4/6 = 0.667.
        let a_cells: Vec<(usize, usize)> = (0..4).map(|w| (w, 8)).collect();
        // pred B: 3 cells overlapping 2 (rest off-row) -> IoU 2/6 = 0.333.
        let b_cells = vec![(4, 8), (5, 8), (5, 9)];
        let pred =
            LabeledBev::from_instances(spec, vec![inst(1, &a_cells), inst(2, &b_cells)]).unwrap();
        let m = match_instances(&pred, &gt).unwrap();
        // Enumerated oracle: only pred A clears the 0.5 threshold.
        assert_eq!(m.true_positives.len(), 1);
        assert_eq!(m.true_positives[0].0, 0);
        assert_relative_eq!(m.true_positives[0].2, 4.0 / 5.0, epsilon = 1e-12);
        assert_eq!(m.unmatched_pred, vec![1]);
        assert!(m.unmatched_gt.is_empty());
    }

    #[test]
    fn pq_hand_cases() {
        // One TP at IoU 0.8, nothing else: PQ = 0.8.
        let m = MatchResult {
            true_positives: vec![(0, 0, 0.8)],
            unmatched_pred: vec![],
            unmatched_gt: vec![],
        };
        let pq = panoptic_quality(&m);
        assert_relative_eq!(pq.pq, 0.8, epsilon = 1e-15);
        // Adding one FP: PQ = 0.8 / 1.5.
        let m2 = MatchResult {
            true_positives: vec![(0, 0, 0.8)],
            unmatched_pred: vec![1],
            unmatched_gt: vec![],
        };
        let pq2 = panoptic_quality(&m2);
        assert_relative_eq!(pq2.pq, 0.8 / 1.5, epsilon = 1e-12);
        assert_relative_eq!(pq2.pq, 0.5333, epsilon = 1e-4);
        // Nothing at all: degenerate zero.
        let m3 = MatchResult {
            true_positives: vec![],
            unmatched_pred: vec![],
            unmatched_gt: vec![],
        };
        let pq3 = panoptic_quality(&m3);
        assert_eq!(pq3.pq, 0.0);
        assert!(pq3.degenerate);
    }

    #[test]
    fn pq_equals_sq_times_rq_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let tp_n = rng.random_range(0..5);
            let m = MatchResult {
                true_positives: (0..tp_n)
                    .map(|i| (i, i, rng.random_range(0.5..1.0)))
                    .collect(),
                unmatched_pred: (tp_n..tp_n + rng.random_range(0..4)).collect(),
                unmatched_gt: (tp_n..tp_n + rng.random_range(0..4)).collect(),
            };
            let pq = panoptic_quality(&m);
            assert!((pq.pq - pq.sq * pq.rq).abs() < 1e-12);
        }
    }

    /// Brute-force oracle for IoU and PQ on random 16x16 grids.
    fn random_labeled(spec: BevSpec, rng: &mut ChaCha8Rng, max_instances: usize) -> LabeledBev {
        let mut claimed: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut instances = Vec::new();
        let n = rng.random_range(0..=max_instances);
        for id in 1..=n {
            let w0 = rng.random_range(0..14);
            let h0 = rng.random_range(0..14);
            let dw = rng.random_range(1..3);
            let dh = rng.random_range(1..3);
            let mut cells = BTreeSet::new();
            for w in w0..(w0 + dw).min(16) {
                for h in h0..(h0 + dh).min(16) {
                    if claimed.insert((w, h)) {
                        cells.insert((w, h));
                    }
                }
            }
            if !cells.is_empty() {
                instances.push(BevInstance { id: id as u32, cells });
            }
        }
        LabeledBev::from_instances(spec, instances).unwrap()
    }

    #[test]
    fn iou_matches_counting_oracle_on_random_grids() {
        let spec = spec_16();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let a = random_labeled(spec, &mut rng, 4);
            let b = random_labeled(spec, &mut rng, 4);
            let got = iou_semantic(&a, &b).unwrap();
            // Cell-by-cell counting oracle.
            let mut inter = 0usize;
            let mut union = 0usize;
            for w in 0..16 {
                for h in 0..16 {
                    let pa = a.instances.iter().any(|i| i.cells.contains(&(w, h)));
                    let pb = b.instances.iter().any(|i| i.cells.contains(&(w, h)));
                    inter += (pa && pb) as usize;
                    union += (pa || pb) as usize;
                }
            }
            let want = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
            assert_eq!(got, want);
        }
    }

    fn proxy_config() -> ScenarioConfig {
        // Dense pixel sampling relative to the BEV cells and a vehicle
        // aligned to cell boundaries: with full retention the prediction
        // reproduces the ground truth exactly.
        ScenarioConfig {
            area_width_m: 20.0,
            area_height_m: 20.0,
            num_uavs: 2,
            uav_altitude_m: 50.0,
            num_vehicles: 1,
            frame_rate_hz: 2.0,
            frames: 1,
            input_frames: 1,
            image_height: 60,
            image_width: 72,
            image_channels: 3,
            quant_bits: 8,
            bev_cell_m: 1.0,
            view_span_scale: 1.1,
            rng_seed: 0,
        }
    }

    fn proxy_scenario() -> Scenario {
        let mut scenario = generate_scenario(&proxy_config()).unwrap();
        scenario.vehicles = vec![VehicleTrack {
            id: 1,
            half_length_m: 2.0,
            half_width_m: 1.0,
            centers: vec![[10.0, 9.0]],
            velocities: vec![[0.0, 0.0]],
        }];
        scenario
    }

    #[test]
    fn full_retention_reproduces_ground_truth_exactly() {
        let scenario = proxy_scenario();
        let mut masks = Vec::new();
        for uav in &scenario.uavs {
            let view = render_view(&scenario, uav, 0).unwrap();
            let scores = neighborhood_score(&importance_map(&view));
            masks.push(top_k_select(&view, &scores, 1.0).unwrap());
        }
        let mask_refs: Vec<&SparseImage> = masks.iter().collect();
        let pred = proxy_perceive(&scenario, 0, &[0, 1], &mask_refs).unwrap();
        let gt = ground_truth_bev(&scenario, 0).unwrap();
        assert_eq!(iou_semantic(&pred, &gt).unwrap(), 1.0);
    }

    #[test]
    fn empty_selection_rejected() {
        let scenario = proxy_scenario();
        assert!(matches!(
            proxy_perceive(&scenario, 0, &[], &[]).unwrap_err(),
            MetricsError::EmptySelection
        ));
    }

    #[test]
    fn adversarial_scorer_starves_the_prediction() {
        // A scorer that ranks background above vehicles: at a tiny kappa
        // no foreground pixel survives and the prediction is empty.
        let scenario = proxy_scenario();
        let view = render_view(&scenario, &scenario.uavs[0], 0).unwrap();
        let map = importance_map_with(&view, |im| {
            im.instance_ids.iter().map(|&id| if id == 0 { 1.0 } else { 0.0 }).collect()
        });
        // Use the map itself as the score so backgrounds win directly.
        let sparse = top_k_select(&view, &map.values, 0.05).unwrap();
        let pred = proxy_perceive(&scenario, 0, &[0], &[&sparse]).unwrap();
        assert_eq!(pred.occupied_cells(), 0);
        let gt = ground_truth_bev(&scenario, 0).unwrap();
        assert_eq!(iou_semantic(&pred, &gt).unwrap(), 0.0);
    }

    #[test]
    fn iou_monotone_in_kappa_and_uav_count() {
        let mut cfg = proxy_config();
        cfg.num_vehicles = 3;
        cfg.num_uavs = 4;
        cfg.rng_seed = 11;
        let scenario = generate_scenario(&cfg).unwrap();
        let gt = ground_truth_bev(&scenario, 0).unwrap();
        let views: Vec<DenseImage> = scenario
            .uavs
            .iter()
            .map(|u| render_view(&scenario, u, 0).unwrap())
            .collect();
        let scores: Vec<Vec<f64>> = views
            .iter()
            .map(|v| neighborhood_score(&importance_map(v)))
            .collect();

        // Monotone in kappa with all UAVs.
        let mut last = -1.0;
        for kappa in [0.05, 0.1, 0.2, 0.5, 1.0] {
            let masks: Vec<SparseImage> = views
                .iter()
                .zip(scores.iter())
                .map(|(v, s)| top_k_select(v, s, kappa).unwrap())
                .collect();
            let refs: Vec<&SparseImage> = masks.iter().collect();
            let pred = proxy_perceive(&scenario, 0, &[0, 1, 2, 3], &refs).unwrap();
            let iou = iou_semantic(&pred, &gt).unwrap();
            assert!(iou >= last - 1e-12, "kappa {kappa}: IoU {iou} < {last}");
            last = iou;
        }

        // Monotone in the selected-UAV set under inclusion at fixed kappa.
        let masks: Vec<SparseImage> = views
            .iter()
            .zip(scores.iter())
            .map(|(v, s)| top_k_select(v, s, 0.3).unwrap())
            .collect();
        let mut last = -1.0;
        for count in 1..=4usize {
            let sel: Vec<usize> = (0..count).collect();
            let refs: Vec<&SparseImage> = masks[..count].iter().collect();
            let pred = proxy_perceive(&scenario, 0, &sel, &refs).unwrap();
            let iou = iou_semantic(&pred, &gt).unwrap();
            assert!(iou >= last - 1e-12, "{count} UAVs: IoU {iou} < {last}");
            last = iou;
        }
    }

    #[test]
    fn connected_components_use_4_neighborhood() {
        let spec = BevSpec::new(0.0, 4.0, 0.0, 4.0, 1.0, 1.0).unwrap();
        let mut grid = BevGrid::empty(spec);
        // Two diagonal cells: 8-connected but not 4-connected.
        grid.add_hit(0, 0, 1);
        grid.add_hit(1, 1, 1);
        let labeled = labeled_from_grid(&grid).unwrap();
        assert_eq!(labeled.instances.len(), 2);
    }

    #[test]
    fn majority_id_breaks_ties_to_smallest() {
        let spec = BevSpec::new(0.0, 4.0, 0.0, 4.0, 1.0, 1.0).unwrap();
        let mut grid = BevGrid::empty(spec);
        grid.add_hit(0, 0, 2);
        grid.add_hit(1, 0, 7);
        let labeled = labeled_from_grid(&grid).unwrap();
        assert_eq!(labeled.instances.len(), 1);
        assert_eq!(labeled.instances[0].id, 2);
        // With an extra vote id 7 wins the majority.
        grid.add_hit(1, 0, 7);
        let labeled = labeled_from_grid(&grid).unwrap();
        assert_eq!(labeled.instances[0].id, 7);
    }

    proptest! {
        // PQ = SQ * RQ identity on arbitrary match results.
        #[test]
        fn prop_pq_identity(tp in 0usize..6, fp in 0usize..6, fn_ in 0usize..6, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = MatchResult {
                true_positives: (0..tp).map(|i| (i, i, rng.random_range(0.5..1.0))).collect(),
                unmatched_pred: (tp..tp + fp).collect(),
                unmatched_gt: (tp..tp + fn_).collect(),
            };
            let pq = panoptic_quality(&m);
            prop_assert!((pq.pq - pq.sq * pq.rq).abs() < 1e-12);
        }
    }
}
