//! Sensing: depth rendering, instance masks, a segmentation-error model, and
//! the threshold-averaged mask agreement metric.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::raster::{Mask, RasterFrame};
use crate::scenegen::TrayScene;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub sigma_mm: f64,
    pub quant_mm: f64,
}

/// Orthographic top-down depth: height above the tray floor in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub frame: RasterFrame,
    pub heights: Array2<f64>,
    pub noise: NoiseRecord,
}

impl DepthImage {
    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.heights[[row, col]]
    }

    /// Depth values under a mask, in row-major pixel order.
    pub fn sample(&self, mask: &Mask) -> Vec<f64> {
        mask.pixels().map(|(c, r)| self.heights[[r, c]]).collect()
    }
}

/// Rounds to the nearest multiple of `step`, halves going down.
pub fn quantize(v: f64, step: f64) -> f64 {
    if step > 0.0 {
        step * (v / step - 0.5).ceil()
    } else {
        v
    }
}

/// Heightmap plus per-pixel Gaussian noise, clamped at 0, then quantized.
/// Noise is drawn row-major over the whole canvas; nothing is drawn when
/// `sigma_mm` is 0.
pub fn render_depth<R: Rng + ?Sized>(
    scene: &TrayScene,
    sigma_mm: f64,
    quant_mm: f64,
    rng: &mut R,
) -> Result<DepthImage> {
    if !(sigma_mm >= 0.0 && quant_mm >= 0.0) {
        return Err(param("depth noise sigma and quantization must be >= 0"));
    }
    let mut heights = scene.heightmap_mm();
    if sigma_mm > 0.0 {
        let normal = Normal::new(0.0, sigma_mm).map_err(|e| param(e.to_string()))?;
        for v in heights.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    heights.mapv_inplace(|v| quantize(v.max(0.0), quant_mm));
    Ok(DepthImage {
        frame: scene.frame,
        heights,
        noise: NoiseRecord { sigma_mm, quant_mm },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    GroundTruth,
    Corrupted,
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceMask {
    pub id: u32,
    pub mask: Mask,
    /// Detection confidence, when the producer assigns one.
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceMaskSet {
    pub frame: RasterFrame,
    pub source: MaskSource,
    /// Ordered by id.
    pub masks: Vec<InstanceMask>,
}

impl InstanceMaskSet {
    pub fn new(frame: RasterFrame, source: MaskSource, mut masks: Vec<InstanceMask>) -> Self {
        masks.sort_by_key(|m| m.id);
        Self { frame, source, masks }
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Mask> {
        self.masks.iter().find(|m| m.id == id).map(|m| &m.mask)
    }

    /// True when no pixel belongs to two masks.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = Array2::from_elem(self.frame.shape(), false);
        for m in &self.masks {
            for (c, r) in m.mask.pixels() {
                if std::mem::replace(&mut seen[[r, c]], true) {
                    return false;
                }
            }
        }
        true
    }

    /// Pairs of ids whose masks touch or overlap under 8-connectivity.
    ///
    /// Exact for disjoint sets. For overlapping sets, touching is judged on
    /// the last-painted label per pixel, so contact hidden under a third mask
    /// can be missed; overlaps themselves are always reported.
    pub fn adjacent_pairs(&self) -> BTreeSet<(u32, u32)> {
        let (w, h) = (self.frame.width, self.frame.height);
        let mut labels = Array2::<u32>::zeros((h, w));
        let mut pairs = BTreeSet::new();
        let mut add = |a: u32, b: u32| {
            if a != 0 && b != 0 && a != b {
                pairs.insert((a.min(b), a.max(b)));
            }
        };
        for m in &self.masks {
            for (c, r) in m.mask.pixels() {
                add(labels[[r, c]], m.id);
                labels[[r, c]] = m.id;
            }
        }
        for r in 0..h {
            for c in 0..w {
                let here = labels[[r, c]];
                if here == 0 {
                    continue;
                }
                if c + 1 < w {
                    add(here, labels[[r, c + 1]]);
                }
                if r + 1 < h {
                    add(here, labels[[r + 1, c]]);
                    if c + 1 < w {
                        add(here, labels[[r + 1, c + 1]]);
                    }
                    if c > 0 {
                        add(here, labels[[r + 1, c - 1]]);
                    }
                }
            }
        }
        pairs
    }
}

/// Visible-region masks straight from the owner map. Fully occluded pieces
/// own no pixel and are absent.
pub fn render_masks(scene: &TrayScene) -> InstanceMaskSet {
    let masks = scene
        .pieces
        .iter()
        .filter(|p| !p.fully_occluded())
        .map(|p| InstanceMask {
            id: p.id,
            mask: scene.visible_mask(p.id),
            score: None,
        })
        .collect();
    InstanceMaskSet::new(scene.frame, MaskSource::GroundTruth, masks)
}

/// Segmentation-error model applied to ground-truth masks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionParams {
    /// Each mask is dilated (positive) or eroded (negative) by a uniform
    /// integer in `[-boundary_jitter, boundary_jitter]` pixels.
    pub boundary_jitter: u32,
    /// Probability that an adjacent pair of instances is merged into one.
    pub merge_prob: f64,
    /// Probability that a detection is missed.
    pub drop_prob: f64,
    /// Detections whose confidence (IoU with the best-matching constituent
    /// ground-truth mask) is below this are discarded.
    pub confidence_floor: f64,
}

impl CorruptionParams {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("merge_prob", self.merge_prob),
            ("drop_prob", self.drop_prob),
            ("confidence_floor", self.confidence_floor),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(param(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Emulates an imperfect instance segmenter.
///
/// Steps, in order: boundary jitter per mask (id order), merging of adjacent
/// ground-truth pairs (pair order; a merged group takes its lowest id),
/// confidence scoring and flooring, then independent drops. Random draws are
/// skipped for any parameter that is zero, so zero parameters reproduce the
/// input exactly.
pub fn corrupt_masks<R: Rng + ?Sized>(
    masks: &InstanceMaskSet,
    params: &CorruptionParams,
    rng: &mut R,
) -> Result<InstanceMaskSet> {
    params.validate()?;
    if masks.source != MaskSource::GroundTruth {
        return Err(param("corrupt_masks expects ground-truth masks"));
    }
    let j = params.boundary_jitter as i64;
    let jittered: Vec<Mask> = masks
        .masks
        .iter()
        .map(|m| {
            let k = if j > 0 { rng.random_range(-j..=j) } else { 0 };
            match k {
                k if k > 0 => m.mask.dilate(k as usize),
                k if k < 0 => m.mask.erode((-k) as usize),
                _ => m.mask.clone(),
            }
        })
        .collect();

    let index: BTreeMap<u32, usize> = masks.masks.iter().enumerate().map(|(i, m)| (m.id, i)).collect();
    let mut parent: Vec<usize> = (0..masks.len()).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    if params.merge_prob > 0.0 {
        for (a, b) in masks.adjacent_pairs() {
            if rng.random_bool(params.merge_prob) {
                let ra = root(&mut parent, index[&a]);
                let rb = root(&mut parent, index[&b]);
                // masks are id-ordered, so the smaller index carries the lower id
                let (lo, hi) = (ra.min(rb), ra.max(rb));
                parent[hi] = lo;
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..masks.len() {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }

    let mut out = Vec::with_capacity(groups.len());
    for (r, members) in groups {
        let mut merged = jittered[members[0]].clone();
        for &i in &members[1..] {
            merged = merged.union(&jittered[i]);
        }
        if merged.is_empty() {
            continue;
        }
        let score = members
            .iter()
            .map(|&i| iou(&merged, &masks.masks[i].mask))
            .fold(0.0, f64::max);
        if score < params.confidence_floor {
            continue;
        }
        out.push(InstanceMask {
            id: masks.masks[r].id,
            mask: merged,
            score: None,
        });
    }
    if params.drop_prob > 0.0 {
        out.retain(|_| !rng.random_bool(params.drop_prob));
    }
    Ok(InstanceMaskSet::new(masks.frame, MaskSource::Corrupted, out))
}

fn iou(a: &Mask, b: &Mask) -> f64 {
    let inter = a.intersection_count(b);
    let union = a.count() + b.count() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Intersection over union; 0 when both masks are empty.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(param(format!(
            "mask dimensions differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(iou(a, b))
}

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn default_iou_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementScore {
    pub value: f64,
    pub iou_thresholds: Vec<f64>,
    pub precision_per_threshold: Vec<f64>,
}

/// Threshold-averaged precision of `pred` against `gt`.
///
/// At each threshold, (pred, gt) pairs with IoU ≥ t are matched greedily one
/// to one in descending IoU order (ties: lower pred id, then lower gt id);
/// precision is matches / |pred|, 0 when pred is empty but gt is not, and 1
/// when both are empty.
pub fn agreement(pred: &InstanceMaskSet, gt: &InstanceMaskSet) -> Result<AgreementScore> {
    agreement_at(pred, gt, &default_iou_thresholds())
}

pub fn agreement_at(pred: &InstanceMaskSet, gt: &InstanceMaskSet, thresholds: &[f64]) -> Result<AgreementScore> {
    if pred.frame.width != gt.frame.width || pred.frame.height != gt.frame.height {
        return Err(param("mask sets cover different rasters"));
    }
    if thresholds.is_empty() {
        return Err(param("at least one IoU threshold is required"));
    }
    let mut pairs = Vec::new();
    for p in &pred.masks {
        for g in &gt.masks {
            let v = mask_iou(&p.mask, &g.mask)?;
            if v > 0.0 {
                pairs.push((v, p.id, g.id));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let precision_per_threshold: Vec<f64> = thresholds
        .iter()
        .map(|&t| match (pred.is_empty(), gt.is_empty()) {
            (true, true) => 1.0,
            (true, false) => 0.0,
            _ => {
                let mut used_p = BTreeSet::new();
                let mut used_g = BTreeSet::new();
                for &(v, p, g) in pairs.iter().take_while(|x| x.0 >= t) {
                    debug_assert!(v >= t);
                    if !used_p.contains(&p) && !used_g.contains(&g) {
                        used_p.insert(p);
                        used_g.insert(g);
                    }
                }
                used_p.len() as f64 / pred.len() as f64
            }
        })
        .collect();
    let value = precision_per_threshold.iter().sum::<f64>() / thresholds.len() as f64;
    Ok(AgreementScore {
        value,
        iou_thresholds: thresholds.to_vec(),
        precision_per_threshold,
    })
}

/// Score matrix with `matrix[i][j] = agreement(pred = sets[j], gt = sets[i])`.
pub fn agreement_matrix(sets: &[InstanceMaskSet]) -> Result<Vec<Vec<f64>>> {
    sets.iter()
        .map(|gt| sets.iter().map(|pred| agreement(pred, gt).map(|s| s.value)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archetype::ArchetypeLibrary;
    use crate::scenegen::{generate_scene, PieceStamp, SceneConfig, TrayConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame(w: usize, h: usize) -> RasterFrame {
        RasterFrame {
            width: w,
            height: h,
            resolution_mm: 1.0,
            tray_cols: w,
            tray_rows: h,
        }
    }

    fn rect(w: usize, h: usize, x0: usize, y0: usize, rw: usize, rh: usize) -> Mask {
        Mask::from_fn(w, h, (0, 0, w as i64, h as i64), |c, r| {
            c >= x0 && c < x0 + rw && r >= y0 && r < y0 + rh
        })
    }

    fn set(source: MaskSource, masks: Vec<(u32, Mask)>) -> InstanceMaskSet {
        InstanceMaskSet::new(
            frame(64, 64),
            source,
            masks
                .into_iter()
                .map(|(id, mask)| InstanceMask { id, mask, score: None })
                .collect(),
        )
    }

    fn small_scene() -> TrayScene {
        let cfg = SceneConfig {
            tray: TrayConfig {
                dims_mm: [120.0, 120.0, 50.0],
                canvas_px: [120, 120],
            },
            ..SceneConfig::for_archetype("taro")
        };
        generate_scene(&cfg, &ArchetypeLibrary::default(), 4).unwrap()
    }

    #[test]
    fn quantization_rounds_half_down() {
        assert_eq!(quantize(12.4, 1.0), 12.0);
        assert_eq!(quantize(12.5, 1.0), 12.0);
        assert_eq!(quantize(12.51, 1.0), 13.0);
        assert_eq!(quantize(12.34, 0.0), 12.34);
    }

    #[test]
    fn noiseless_depth_is_the_heightmap() {
        let scene = small_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = render_depth(&scene, 0.0, 0.0, &mut rng).unwrap();
        assert_eq!(d.heights, scene.heightmap_mm());
        assert!(render_depth(&scene, -1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn depth_noise_mean_on_flat_region() {
        let lib = ArchetypeLibrary::default();
        let mut scene = TrayScene::empty(&TrayConfig {
            dims_mm: [100.0, 100.0, 50.0],
            canvas_px: [100, 100],
        });
        let block = PieceStamp::block(100, 100, 30.0, 0.0).unwrap();
        scene.drop_piece(lib.get("taro").unwrap(), block, 50.5, 50.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = render_depth(&scene, 0.5, 0.0, &mut rng).unwrap();
        let mean = d.heights.mean().unwrap();
        assert_eq!(d.heights.len(), 10_000);
        assert!((mean - 30.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn ground_truth_masks_follow_ownership() {
        let scene = small_scene();
        let masks = render_masks(&scene);
        assert!(masks.is_disjoint());
        for m in &masks.masks {
            for (c, r) in m.mask.pixels() {
                assert_eq!(scene.owner_map[[r, c]], m.id);
            }
            assert_eq!(m.mask.count(), scene.piece(m.id).unwrap().visible_px);
        }
        let owned = scene.owner_map.iter().filter(|&&o| o != 0).count();
        assert_eq!(masks.masks.iter().map(|m| m.mask.count()).sum::<usize>(), owned);
        let hidden = scene.pieces.iter().filter(|p| p.fully_occluded()).count();
        assert_eq!(masks.len() + hidden, scene.pieces.len());
    }

    #[test]
    fn iou_examples() {
        let a = rect(64, 64, 10, 10, 10, 10);
        let b = rect(64, 64, 15, 10, 10, 10);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &rect(64, 64, 40, 40, 5, 5)).unwrap(), 0.0);
        assert!((mask_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mask_iou(&Mask::empty(64, 64), &Mask::empty(64, 64)).unwrap(), 0.0);
        assert!(mask_iou(&a, &Mask::empty(32, 64)).is_err());
    }

    #[test]
    fn agreement_fixtures() {
        let g = set(MaskSource::External, vec![(1, rect(64, 64, 0, 0, 10, 10))]);
        assert_eq!(agreement(&g, &g).unwrap().value, 1.0);
        let far = set(MaskSource::External, vec![(1, rect(64, 64, 40, 40, 10, 10))]);
        assert_eq!(agreement(&far, &g).unwrap().value, 0.0);
        // 10×10 square vs a 62-pixel sub-rectangle plus a 38-pixel... IoU 0.62
        let gt = set(MaskSource::External, vec![(1, rect(64, 64, 0, 0, 10, 10))]);
        let hit = Mask::from_fn(64, 64, (0, 0, 64, 64), |c, r| r * 10 + c < 62 && c < 10 && r < 10);
        assert_eq!(hit.count(), 62);
        let pred = set(MaskSource::External, vec![(1, hit), (2, rect(64, 64, 40, 40, 5, 5))]);
        let s = agreement(&pred, &gt).unwrap();
        assert!((s.value - 0.15).abs() < 1e-12, "{}", s.value);
        assert_eq!(&s.precision_per_threshold[..4], &[0.5, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn agreement_empty_sets() {
        let empty = set(MaskSource::External, vec![]);
        let one = set(MaskSource::External, vec![(3, rect(64, 64, 0, 0, 4, 4))]);
        assert_eq!(agreement(&empty, &empty).unwrap().value, 1.0);
        assert_eq!(agreement(&empty, &one).unwrap().value, 0.0);
        assert_eq!(agreement(&one, &empty).unwrap().value, 0.0);
    }

    #[test]
    fn zero_corruption_is_identity() {
        let gt = render_masks(&small_scene());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = corrupt_masks(&gt, &CorruptionParams::default(), &mut rng).unwrap();
        assert_eq!(c.masks, gt.masks);
        assert_eq!(c.source, MaskSource::Corrupted);
        assert!(corrupt_masks(&c, &CorruptionParams::default(), &mut rng).is_err());
    }

    #[test]
    fn full_drop_empties_the_set() {
        let gt = render_masks(&small_scene());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = CorruptionParams {
            drop_prob: 1.0,
            ..Default::default()
        };
        assert!(corrupt_masks(&gt, &p, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn certain_merge_of_touching_pair() {
        let a = rect(64, 64, 10, 10, 5, 5);
        let b = rect(64, 64, 15, 15, 5, 5); // diagonal contact only
        let c = rect(64, 64, 40, 40, 5, 5);
        let gt = set(
            MaskSource::GroundTruth,
            vec![(2, a.clone()), (5, b.clone()), (9, c.clone())],
        );
        assert_eq!(gt.adjacent_pairs().into_iter().collect::<Vec<_>>(), vec![(2, 5)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = CorruptionParams {
            merge_prob: 1.0,
            ..Default::default()
        };
        let out = corrupt_masks(&gt, &p, &mut rng).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.get(2).unwrap(), &a.union(&b));
        assert_eq!(out.get(9).unwrap(), &c);
    }

    #[test]
    fn confidence_floor_removes_merged_blobs() {
        let a = rect(64, 64, 10, 10, 5, 5);
        let b = rect(64, 64, 15, 10, 5, 5);
        let gt = set(MaskSource::GroundTruth, vec![(1, a), (2, b)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = CorruptionParams {
            merge_prob: 1.0,
            confidence_floor: 0.6,
            ..Default::default()
        };
        assert!(corrupt_masks(&gt, &p, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn boundary_jitter_stays_within_bounds() {
        let a = rect(64, 64, 20, 20, 10, 10);
        let gt = set(MaskSource::GroundTruth, vec![(1, a.clone())]);
        let p = CorruptionParams {
            boundary_jitter: 2,
            ..Default::default()
        };
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = corrupt_masks(&gt, &p, &mut rng).unwrap();
            let m = out.get(1).unwrap();
            let side = (m.count() as f64).sqrt() as usize;
            assert!((6..=14).contains(&side));
            assert!(a.dilate(2).intersection_count(m) == m.count());
        }
    }
}
