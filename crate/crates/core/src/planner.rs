//! Grasp planning from instance masks and depth.
//!
//! Each mask is summarized by its moment-equivalent ellipse. The ellipse
//! centre becomes the grasp centre, its minor axis the closing direction and
//! jaw width, and the median depth inside the ellipse (plus a per-food offset)
//! the insertion height. Candidates whose finger contact areas are not both
//! strictly lower than the food area are filtered out, and the tallest
//! survivor is the target.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::archetype::FoodArchetype;
use crate::error::{param, Error, Result};
use crate::perception::{DepthImage, InstanceMaskSet};
use crate::raster::{Mask, RasterFrame};
use crate::stats::median;

/// Moment-equivalent ellipse of a mask, in pixel coordinates (x = column,
/// y = row, pixel centres at integers).
///
/// `theta` is the direction of the minor axis, i.e. the gripper's closing
/// direction, measured from +x towards +y in `[0, π)`. `minor` and `major`
/// are full axis lengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipseFit {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub minor: f64,
    pub major: f64,
}

impl EllipseFit {
    /// Unit vectors along the minor and major axes.
    pub fn axes(&self) -> ((f64, f64), (f64, f64)) {
        let (s, c) = self.theta.sin_cos();
        ((c, s), (-s, c))
    }

    pub fn contains(&self, col: f64, row: f64) -> bool {
        let ((ux, uy), (vx, vy)) = self.axes();
        let (dx, dy) = (col - self.x, row - self.y);
        let t = (dx * ux + dy * uy) / (0.5 * self.minor);
        let s = (dx * vx + dy * vy) / (0.5 * self.major);
        t * t + s * s <= 1.0
    }

    /// Pixels of a `width × height` raster inside the ellipse.
    pub fn region(&self, width: usize, height: usize) -> Mask {
        let r = 0.5 * self.major;
        let rect = (
            (self.x - r).floor() as i64,
            (self.y - r).floor() as i64,
            (self.x + r).ceil() as i64 + 1,
            (self.y + r).ceil() as i64 + 1,
        );
        Mask::from_fn(width, height, rect, |c, r| self.contains(c as f64, r as f64))
    }
}

/// Fits the moment-equivalent ellipse: centroid, and semi-axes of twice the
/// square roots of the pixel covariance eigenvalues.
pub fn fit_ellipse(mask: &Mask) -> Result<EllipseFit> {
    let n = mask.count();
    if n < 5 {
        return Err(Error::Fit(format!("mask has {n} pixels, need at least 5")));
    }
    let nf = n as f64;
    let (sx, sy) = mask
        .pixels()
        .fold((0.0, 0.0), |(sx, sy), (c, r)| (sx + c as f64, sy + r as f64));
    let (mx, my) = (sx / nf, sy / nf);
    let (mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0);
    for (c, r) in mask.pixels() {
        let (dx, dy) = (c as f64 - mx, r as f64 - my);
        cxx += dx * dx;
        cyy += dy * dy;
        cxy += dx * dy;
    }
    let (cxx, cyy, cxy) = (cxx / nf, cyy / nf, cxy / nf);
    let mean = 0.5 * (cxx + cyy);
    let spread = (0.25 * (cxx - cyy).powi(2) + cxy * cxy).sqrt();
    let (l_max, l_min) = (mean + spread, mean - spread);
    if l_min <= 1e-9 * l_max.max(1.0) {
        return Err(Error::Fit("degenerate (rank-deficient) pixel covariance".into()));
    }
    let major_dir = 0.5 * (2.0 * cxy).atan2(cxx - cyy);
    Ok(EllipseFit {
        x: mx,
        y: my,
        theta: (major_dir + 0.5 * PI).rem_euclid(PI),
        minor: 4.0 * l_min.sqrt(),
        major: 4.0 * l_max.sqrt(),
    })
}

/// Finger contact rectangle and jaw clearance, in mm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FingerGeometry {
    /// Extent along the closing axis (rectangle thickness).
    pub width_mm: f64,
    /// Extent across the closing axis.
    pub breadth_mm: f64,
    /// Opening margin beyond half the grasp width on each side.
    pub clearance_mm: f64,
}

impl Default for FingerGeometry {
    fn default() -> Self {
        Self {
            width_mm: 4.0,
            breadth_mm: 20.0,
            clearance_mm: 2.0,
        }
    }
}

impl FingerGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.width_mm > 0.0 && self.breadth_mm > 0.0 && self.clearance_mm > 0.0 {
            Ok(())
        } else {
            Err(param("finger width, breadth and clearance must be > 0"))
        }
    }

    /// Distance from the grasp centre to each finger rectangle's centre.
    pub fn finger_offset_mm(&self, grasp_width_mm: f64) -> f64 {
        0.5 * grasp_width_mm + self.clearance_mm + 0.5 * self.width_mm
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    /// A contact region has no pixel inside the tray.
    OutOfTray,
    /// The named contact medians are not strictly below the food median.
    ContactTooHigh { left: bool, right: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    /// Filtering was not applied.
    Unfiltered,
    Retained,
    Rejected(RejectReason),
}

/// Planar parallel-gripper grasp derived from one ellipse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    pub instance_id: u32,
    /// Grasp centre, pixels.
    pub x: f64,
    pub y: f64,
    /// Closing direction, radians.
    pub theta: f64,
    /// Insertion height above the tray floor, mm.
    pub h: f64,
    /// Grasp (jaw) width, mm.
    pub w: f64,
    /// Major-axis length of the food area, mm.
    pub length: f64,
    pub food_median: f64,
    /// Median depth under the (−θ side, +θ side) contact regions.
    pub contact_medians: Option<[f64; 2]>,
    pub verdict: Verdict,
}

impl GraspCandidate {
    pub fn is_retained(&self) -> bool {
        !matches!(self.verdict, Verdict::Rejected(_))
    }
}

/// Turns an ellipse into a grasp candidate: centre and closing direction from
/// the fit, width from the minor axis, insertion height from the median depth
/// inside the ellipse plus the food's offset (floored at 0).
pub fn derive_grasp(
    fit: &EllipseFit,
    depth: &DepthImage,
    archetype: &FoodArchetype,
    instance_id: u32,
) -> Result<GraspCandidate> {
    let region = fit.region(depth.frame.width, depth.frame.height);
    let mut heights = depth.sample(&region);
    let food_median = median(&mut heights)
        .ok_or_else(|| Error::Fit(format!("ellipse of instance {instance_id} lies outside the raster")))?;
    let res = depth.frame.resolution_mm;
    Ok(GraspCandidate {
        instance_id,
        x: fit.x,
        y: fit.y,
        theta: fit.theta,
        h: (food_median + archetype.grasp_height_offset).max(0.0),
        w: fit.minor * res,
        length: fit.major * res,
        food_median,
        contact_medians: None,
        verdict: Verdict::Unfiltered,
    })
}

/// Integer pixel bounds and membership test of an oriented rectangle centred
/// at `(x, y) + offset·u` pixels, where `u` is the closing direction; it spans
/// `half_t` pixels along `u` and `half_s` across.
fn rect_geometry(
    (x, y): (f64, f64),
    theta: f64,
    offset: f64,
    half_t: f64,
    half_s: f64,
) -> ((i64, i64, i64, i64), impl Fn(i64, i64) -> bool) {
    let (s, c) = theta.sin_cos();
    let (cx, cy) = (x + offset * c, y + offset * s);
    let reach = half_t.hypot(half_s);
    let bounds = (
        (cx - reach).floor() as i64,
        (cy - reach).floor() as i64,
        (cx + reach).ceil() as i64 + 1,
        (cy + reach).ceil() as i64 + 1,
    );
    let inside = move |col: i64, row: i64| {
        let (dx, dy) = (col as f64 - cx, row as f64 - cy);
        let t = dx * c + dy * s;
        let n = -dx * s + dy * c;
        t.abs() <= half_t + 1e-9 && n.abs() <= half_s + 1e-9
    };
    (bounds, inside)
}

/// Pixels within an oriented rectangle (see [`rect_geometry`]), clipped to
/// the tray interior.
pub(crate) fn oriented_rect(
    frame: &RasterFrame,
    centre: (f64, f64),
    theta: f64,
    offset: f64,
    half_t: f64,
    half_s: f64,
) -> Mask {
    let (bounds, inside) = rect_geometry(centre, theta, offset, half_t, half_s);
    Mask::from_fn(frame.width, frame.height, bounds, |col, row| {
        let (col, row) = (col as i64, row as i64);
        inside(col, row) && frame.in_tray(col, row)
    })
}

/// Pixels of each finger rectangle `[−θ side, +θ side]` that fall outside
/// the tray interior, i.e. on or beyond a tray wall.
pub fn wall_overlap(c: &GraspCandidate, fg: &FingerGeometry, frame: &RasterFrame) -> [usize; 2] {
    let res = frame.resolution_mm;
    let d = fg.finger_offset_mm(c.w) / res;
    let half_t = 0.5 * fg.width_mm / res;
    let half_s = 0.5 * fg.breadth_mm / res;
    [-d, d].map(|off| {
        let ((x0, y0, x1, y1), inside) = rect_geometry((c.x, c.y), c.theta, off, half_t, half_s);
        (y0..y1)
            .flat_map(|r| (x0..x1).map(move |c| (c, r)))
            .filter(|&(col, row)| inside(col, row) && !frame.in_tray(col, row))
            .count()
    })
}

/// The two finger contact rectangles `[−θ side, +θ side]`, each
/// `width × breadth`, centred on the closing axis at
/// `w/2 + clearance + width/2` from the grasp centre and clipped to the tray.
pub fn contact_regions(c: &GraspCandidate, fg: &FingerGeometry, frame: &RasterFrame) -> [Mask; 2] {
    let res = frame.resolution_mm;
    let d = fg.finger_offset_mm(c.w) / res;
    let half_t = 0.5 * fg.width_mm / res;
    let half_s = 0.5 * fg.breadth_mm / res;
    [-d, d].map(|off| oriented_rect(frame, (c.x, c.y), c.theta, off, half_t, half_s))
}

/// Median depth under each contact region; `None` when either region is empty.
pub fn contact_medians(c: &GraspCandidate, depth: &DepthImage, fg: &FingerGeometry) -> Option<[f64; 2]> {
    let [l, r] = contact_regions(c, fg, &depth.frame);
    Some([median(&mut depth.sample(&l))?, median(&mut depth.sample(&r))?])
}

/// Measures contact medians and keeps candidates whose two medians are both
/// strictly below the food median. Returns `(retained, rejected)`, each with
/// its verdict set.
pub fn filter_grasps(
    cands: Vec<GraspCandidate>,
    depth: &DepthImage,
    fg: &FingerGeometry,
) -> (Vec<GraspCandidate>, Vec<GraspCandidate>) {
    let mut retained = Vec::new();
    let mut rejected = Vec::new();
    for mut c in cands {
        c.contact_medians = contact_medians(&c, depth, fg);
        c.verdict = match c.contact_medians {
            None => Verdict::Rejected(RejectReason::OutOfTray),
            Some([l, r]) => {
                let (left, right) = (l >= c.food_median, r >= c.food_median);
                if left || right {
                    Verdict::Rejected(RejectReason::ContactTooHigh { left, right })
                } else {
                    Verdict::Retained
                }
            }
        };
        if c.is_retained() {
            retained.push(c);
        } else {
            rejected.push(c);
        }
    }
    (retained, rejected)
}

/// Candidate with the highest food median; ties go to the lower instance id.
pub fn select_grasp<'a, I>(cands: I) -> Option<&'a GraspCandidate>
where
    I: IntoIterator<Item = &'a GraspCandidate>,
{
    cands
        .into_iter()
        .fold(None, |best: Option<&GraspCandidate>, c| match best {
            Some(b)
                if b.food_median > c.food_median
                    || (b.food_median == c.food_median && b.instance_id <= c.instance_id) =>
            {
                Some(b)
            }
            _ => Some(c),
        })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedMask {
    pub instance_id: u32,
    pub reason: String,
}

/// Full planning result with diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub archetype: String,
    pub filtering: bool,
    pub finger_geometry: FingerGeometry,
    pub resolution_mm: f64,
    /// Every derived candidate in instance-id order, with verdicts.
    pub candidates: Vec<GraspCandidate>,
    pub skipped: Vec<SkippedMask>,
    pub target: Option<u32>,
}

impl Plan {
    pub fn target_candidate(&self) -> Option<&GraspCandidate> {
        let id = self.target?;
        self.candidates.iter().find(|c| c.instance_id == id)
    }

    pub fn retained_count(&self) -> usize {
        self.candidates.iter().filter(|c| c.is_retained()).count()
    }
}

/// Segmentation → ellipse fit → grasp derivation → (optional) filtering →
/// target selection.
pub fn plan(
    masks: &InstanceMaskSet,
    depth: &DepthImage,
    archetype: &FoodArchetype,
    fg: &FingerGeometry,
    filtering: bool,
) -> Result<Plan> {
    if masks.frame.width != depth.frame.width || masks.frame.height != depth.frame.height {
        return Err(param("masks and depth cover different rasters"));
    }
    fg.validate()?;
    let mut candidates = Vec::with_capacity(masks.len());
    let mut skipped = Vec::new();
    for m in &masks.masks {
        match fit_ellipse(&m.mask).and_then(|fit| derive_grasp(&fit, depth, archetype, m.id)) {
            Ok(c) => candidates.push(c),
            Err(e) => skipped.push(SkippedMask {
                instance_id: m.id,
                reason: e.to_string(),
            }),
        }
    }
    let candidates = if filtering {
        let (retained, rejected) = filter_grasps(candidates, depth, fg);
        let mut all: Vec<_> = retained.into_iter().chain(rejected).collect();
        all.sort_by_key(|c| c.instance_id);
        all
    } else {
        candidates
            .into_iter()
            .map(|mut c| {
                c.contact_medians = contact_medians(&c, depth, fg);
                c
            })
            .collect()
    };
    let target = select_grasp(candidates.iter().filter(|c| c.is_retained())).map(|c| c.instance_id);
    Ok(Plan {
        archetype: archetype.name.clone(),
        filtering,
        finger_geometry: *fg,
        resolution_mm: depth.frame.resolution_mm,
        candidates,
        skipped,
        target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archetype::ArchetypeLibrary;
    use crate::perception::NoiseRecord;
    use ndarray::Array2;
    use std::f64::consts::FRAC_PI_2;

    fn frame(w: usize, h: usize, res: f64) -> RasterFrame {
        RasterFrame {
            width: w,
            height: h,
            resolution_mm: res,
            tray_cols: w,
            tray_rows: h,
        }
    }

    fn disk(cx: f64, cy: f64, r: f64) -> Mask {
        Mask::from_fn(128, 128, (0, 0, 128, 128), |c, row| {
            (c as f64 - cx).hypot(row as f64 - cy) <= r
        })
    }

    fn flat_depth(w: usize, h: usize, res: f64, f: impl Fn(usize, usize) -> f64) -> DepthImage {
        DepthImage {
            frame: frame(w, h, res),
            heights: Array2::from_shape_fn((h, w), |(r, c)| f(c, r)),
            noise: NoiseRecord::default(),
        }
    }

    fn candidate(x: f64, y: f64, theta: f64, w: f64, food_median: f64, id: u32) -> GraspCandidate {
        GraspCandidate {
            instance_id: id,
            x,
            y,
            theta,
            h: 0.0,
            w,
            length: w,
            food_median,
            contact_medians: None,
            verdict: Verdict::Unfiltered,
        }
    }

    #[test]
    fn disk_fit() {
        let f = fit_ellipse(&disk(50.0, 50.0, 10.0)).unwrap();
        assert!((f.x - 50.0).abs() < 1e-9 && (f.y - 50.0).abs() < 1e-9);
        assert!((f.minor - 20.0).abs() / 20.0 < 0.01, "{}", f.minor);
        assert!((f.major - 20.0).abs() / 20.0 < 0.01, "{}", f.major);
        assert!(f.minor <= f.major);
    }

    #[test]
    fn fit_translation_is_exact() {
        let m = Mask::from_fn(128, 128, (0, 0, 128, 128), |c, r| {
            let (dx, dy) = (c as f64 - 40.0, r as f64 - 30.0);
            (dx * 0.8 + dy * 0.6).powi(2) / 400.0 + (-dx * 0.6 + dy * 0.8).powi(2) / 64.0 <= 1.0
        });
        let shifted = Mask::from_pixels(128, 128, m.pixels().map(|(c, r)| (c + 17, r + 9)));
        let a = fit_ellipse(&m).unwrap();
        let b = fit_ellipse(&shifted).unwrap();
        assert!((b.x - a.x - 17.0).abs() < 1e-9 && (b.y - a.y - 9.0).abs() < 1e-9);
        assert!((a.theta - b.theta).abs() < 1e-9);
        assert!((a.minor - b.minor).abs() < 1e-9 && (a.major - b.major).abs() < 1e-9);
    }

    #[test]
    fn fit_orientation_is_minor_axis() {
        // wide horizontal bar: closes along y
        let m = Mask::from_fn(128, 128, (0, 0, 128, 128), |c, r| {
            (20..80).contains(&c) && (40..50).contains(&r)
        });
        let f = fit_ellipse(&m).unwrap();
        assert!((f.theta - FRAC_PI_2).abs() < 1e-9);
        assert!(f.minor < f.major);
    }

    #[test]
    fn fit_errors() {
        let tiny = Mask::from_pixels(64, 64, [(1, 1), (2, 2), (3, 3), (4, 4)]);
        assert!(matches!(fit_ellipse(&tiny), Err(Error::Fit(_))));
        let line = Mask::from_pixels(64, 64, (0..20).map(|c| (c, 5)));
        assert!(matches!(fit_ellipse(&line), Err(Error::Fit(_))));
        let diag = Mask::from_pixels(64, 64, (0..20).map(|c| (c, c)));
        assert!(matches!(fit_ellipse(&diag), Err(Error::Fit(_))));
    }

    #[test]
    fn grasp_height_from_flat_median() {
        let depth = flat_depth(64, 64, 1.0, |c, r| {
            if (c as f64 - 32.0).hypot(r as f64 - 32.0) <= 12.0 {
                25.0
            } else {
                0.0
            }
        });
        let fit = EllipseFit {
            x: 32.0,
            y: 32.0,
            theta: 0.0,
            minor: 16.0,
            major: 20.0,
        };
        let mut arch = ArchetypeLibrary::default().get("taro").unwrap().clone();
        arch.grasp_height_offset = -10.0;
        let g = derive_grasp(&fit, &depth, &arch, 3).unwrap();
        assert_eq!((g.food_median, g.h, g.w, g.instance_id), (25.0, 15.0, 16.0, 3));
        assert_eq!((g.x, g.y, g.theta), (32.0, 32.0, 0.0));
        arch.grasp_height_offset = -30.0;
        assert_eq!(derive_grasp(&fit, &depth, &arch, 3).unwrap().h, 0.0);
        let outside = EllipseFit { x: -100.0, ..fit };
        assert!(derive_grasp(&outside, &depth, &arch, 3).is_err());
    }

    #[test]
    fn food_median_matches_exhaustive_oracle() {
        let depth = flat_depth(80, 80, 0.5, |c, r| {
            40.0 - 0.3 * (c as f64 - 40.0).hypot(r as f64 - 40.0)
        });
        let fit = EllipseFit {
            x: 38.2,
            y: 41.7,
            theta: 0.4,
            minor: 22.0,
            major: 36.0,
        };
        let arch = ArchetypeLibrary::default().get("taro").unwrap().clone();
        let g = derive_grasp(&fit, &depth, &arch, 1).unwrap();
        let (ux, uy) = (0.4f64.cos(), 0.4f64.sin());
        let mut inside = Vec::new();
        for r in 0..80 {
            for c in 0..80 {
                let (dx, dy) = (c as f64 - 38.2, r as f64 - 41.7);
                let a = (dx * ux + dy * uy) / 11.0;
                let b = (-dx * uy + dy * ux) / 18.0;
                if a * a + b * b <= 1.0 {
                    inside.push(depth.heights[[r, c]]);
                }
            }
        }
        inside.sort_by(f64::total_cmp);
        let n = inside.len();
        let expect = if n % 2 == 1 {
            inside[n / 2]
        } else {
            0.5 * (inside[n / 2 - 1] + inside[n / 2])
        };
        assert_eq!(g.food_median, expect);
        assert!(inside.iter().any(|&v| v < 34.0) && inside.iter().any(|&v| v > 39.0));
    }

    fn region_centre_mm(m: &Mask, res: f64) -> (f64, f64) {
        let n = m.count() as f64;
        let (sx, sy) = m
            .pixels()
            .fold((0.0, 0.0), |a, (c, r)| (a.0 + c as f64, a.1 + r as f64));
        (sx / n * res, sy / n * res)
    }

    #[test]
    fn contact_region_placement() {
        let fr = frame(200, 200, 0.5);
        let fg = FingerGeometry::default();
        let c = candidate(100.0, 100.0, 0.0, 20.0, 10.0, 1);
        let [l, r] = contact_regions(&c, &fg, &fr);
        let (lx, ly) = region_centre_mm(&l, 0.5);
        let (rx, ry) = region_centre_mm(&r, 0.5);
        assert!((lx - (50.0 - 14.0)).abs() < 1e-9 && (ly - 50.0).abs() < 1e-9);
        assert!((rx - (50.0 + 14.0)).abs() < 1e-9 && (ry - 50.0).abs() < 1e-9);
        // 4 × 20 mm at 0.5 mm/px, inclusive borders: 9 × 41 pixels
        assert_eq!(l.count(), 9 * 41);

        let c = candidate(100.0, 100.0, FRAC_PI_2, 20.0, 10.0, 1);
        let [l, r] = contact_regions(&c, &fg, &fr);
        let (lx, ly) = region_centre_mm(&l, 0.5);
        let (rx, ry) = region_centre_mm(&r, 0.5);
        assert!((lx - 50.0).abs() < 1e-9 && (ly - 36.0).abs() < 1e-9);
        assert!((rx - 50.0).abs() < 1e-9 && (ry - 64.0).abs() < 1e-9);
    }

    #[test]
    fn contact_region_diagonal_against_rotation_matrix() {
        let fr = frame(200, 200, 0.5);
        let fg = FingerGeometry::default();
        let th = std::f64::consts::FRAC_PI_4;
        let c = candidate(100.0, 100.0, th, 20.0, 10.0, 1);
        let [l, r] = contact_regions(&c, &fg, &fr);
        // rotate (±14, 0) mm by θ
        let (ex, ey) = (14.0 * th.cos() - 0.0 * th.sin(), 14.0 * th.sin() + 0.0 * th.cos());
        let (lx, ly) = region_centre_mm(&l, 0.5);
        let (rx, ry) = region_centre_mm(&r, 0.5);
        assert!((lx - (50.0 - ex)).abs() < 0.5 && (ly - (50.0 - ey)).abs() < 0.5);
        assert!((rx - (50.0 + ex)).abs() < 0.5 && (ry - (50.0 + ey)).abs() < 0.5);
        // every pixel satisfies the rectangle test in the rotated frame
        for (col, row) in r.pixels() {
            let (dx, dy) = (col as f64 * 0.5 - 50.0 - ex, row as f64 * 0.5 - 50.0 - ey);
            let (t, s) = (dx * th.cos() + dy * th.sin(), -dx * th.sin() + dy * th.cos());
            assert!(t.abs() <= 2.0 + 1e-9 && s.abs() <= 10.0 + 1e-9);
        }
    }

    #[test]
    fn contact_regions_clip_to_tray() {
        let fr = frame(100, 100, 1.0);
        let fg = FingerGeometry::default();
        let c = candidate(2.0, 50.0, 0.0, 10.0, 10.0, 1);
        let [l, r] = contact_regions(&c, &fg, &fr);
        assert!(l.is_empty() && !r.is_empty());
        let depth = flat_depth(100, 100, 1.0, |_, _| 0.0);
        let (kept, gone) = filter_grasps(vec![c], &depth, &fg);
        assert!(kept.is_empty());
        assert_eq!(gone[0].verdict, Verdict::Rejected(RejectReason::OutOfTray));
    }

    #[test]
    fn filter_lone_piece_and_tall_neighbour() {
        let fg = FingerGeometry::default();
        // piece of 20 mm at centre, floor elsewhere
        let lone = flat_depth(100, 100, 1.0, |c, r| {
            if (c as f64 - 50.0).hypot(r as f64 - 50.0) <= 8.0 {
                20.0
            } else {
                0.0
            }
        });
        let c = candidate(50.0, 50.0, 0.0, 16.0, 20.0, 1);
        let (kept, _) = filter_grasps(vec![c.clone()], &lone, &fg);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].contact_medians, Some([0.0, 0.0]));
        assert_eq!(kept[0].verdict, Verdict::Retained);
        // neighbour taller than the target under the left finger
        let crowded = flat_depth(100, 100, 1.0, |col, r| {
            if (col as f64 - 50.0).hypot(r as f64 - 50.0) <= 8.0 {
                20.0
            } else if col < 42 {
                30.0
            } else {
                0.0
            }
        });
        let (kept, gone) = filter_grasps(vec![c], &crowded, &fg);
        assert!(kept.is_empty());
        assert_eq!(
            gone[0].verdict,
            Verdict::Rejected(RejectReason::ContactTooHigh {
                left: true,
                right: false
            })
        );
    }

    #[test]
    fn equal_heights_reject() {
        let fg = FingerGeometry::default();
        let flat = flat_depth(100, 100, 1.0, |_, _| 5.0);
        let c = candidate(50.0, 50.0, 0.3, 10.0, 5.0, 1);
        let (kept, _) = filter_grasps(vec![c], &flat, &fg);
        assert!(kept.is_empty());
    }

    #[test]
    fn selection_rules() {
        assert!(select_grasp(&[]).is_none());
        let a = candidate(0.0, 0.0, 0.0, 1.0, 12.0, 1);
        let b = candidate(0.0, 0.0, 0.0, 1.0, 30.0, 2);
        let c = candidate(0.0, 0.0, 0.0, 1.0, 25.0, 3);
        assert_eq!(select_grasp(std::slice::from_ref(&a)).unwrap().instance_id, 1);
        assert_eq!(select_grasp(&[a, b, c]).unwrap().instance_id, 2);
        let t7 = candidate(0.0, 0.0, 0.0, 1.0, 30.0, 7);
        let t4 = candidate(0.0, 0.0, 0.0, 1.0, 30.0, 4);
        assert_eq!(select_grasp(&[t7.clone(), t4.clone()]).unwrap().instance_id, 4);
        assert_eq!(select_grasp(&[t4, t7]).unwrap().instance_id, 4);
    }
}
