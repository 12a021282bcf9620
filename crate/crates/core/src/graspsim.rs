//! Grasp execution on a tray scene with fixed or spring-loaded adaptive
//! fingers.
//!
//! Insertion is vertical to the commanded height `h`. A fixed fingertip stops
//! at `h` and pierces whatever lies above it; an adaptive fingertip retracts
//! onto the highest surface under it, up to its travel budget, pressing with a
//! force proportional to the retraction. Closing then sweeps the jaw region
//! between the fingers and decides which pieces are carried out of the tray.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::planner::{contact_regions, oriented_rect, wall_overlap, FingerGeometry, GraspCandidate};
use crate::raster::{units_to_mm, Mask};
use crate::scenegen::TrayScene;
use crate::stats::median;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FingerKind {
    Fixed,
    Adaptive,
}

impl std::fmt::Display for FingerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FingerKind::Fixed => "fixed",
            FingerKind::Adaptive => "adaptive",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FingerModel {
    pub kind: FingerKind,
    /// Adaptive fingertip travel, mm.
    pub retraction_budget_mm: f64,
    /// Adaptive contact force at full retraction, N.
    pub max_force_n: f64,
    /// Fixed-finger penetration beyond which the finger is blocked, mm.
    pub pierce_block_mm: f64,
    pub geometry: FingerGeometry,
}

impl Default for FingerModel {
    fn default() -> Self {
        Self::adaptive()
    }
}

impl FingerModel {
    pub fn adaptive() -> Self {
        Self {
            kind: FingerKind::Adaptive,
            retraction_budget_mm: 22.5,
            max_force_n: 4.1,
            pierce_block_mm: 15.0,
            geometry: FingerGeometry::default(),
        }
    }

    pub fn fixed() -> Self {
        Self {
            kind: FingerKind::Fixed,
            ..Self::adaptive()
        }
    }

    pub fn of_kind(kind: FingerKind) -> Self {
        Self {
            kind,
            ..Self::adaptive()
        }
    }

    /// Spring stiffness in N/mm.
    pub fn stiffness(&self) -> f64 {
        self.max_force_n / self.retraction_budget_mm
    }

    /// Spring force at retraction `r` mm (clamped to the budget). Never
    /// exceeds `max_force_n`.
    pub fn force_at(&self, r: f64) -> f64 {
        let r = r.clamp(0.0, self.retraction_budget_mm);
        self.max_force_n * (r / self.retraction_budget_mm)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.kind == FingerKind::Adaptive && !(self.retraction_budget_mm > 0.0 && self.max_force_n > 0.0) {
            return Err(param("adaptive finger needs positive travel and force"));
        }
        if !(self.pierce_block_mm >= 0.0) {
            return Err(param("pierce_block_mm must be >= 0"));
        }
        Ok(())
    }
}

/// Capture rule constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureParams {
    /// Both fingertips must reach at least this far below the food median, mm.
    pub grasp_depth_margin_mm: f64,
    /// Fraction of the target's visible area that must lie in the jaw region.
    pub capture_fraction: f64,
    /// Fraction of another piece's visible area in the jaw region for it to be
    /// carried along.
    pub multi_pick_fraction: f64,
}

impl Default for CaptureParams {
    fn default() -> Self {
        Self {
            grasp_depth_margin_mm: 5.0,
            capture_fraction: 0.6,
            multi_pick_fraction: 0.5,
        }
    }
}

impl CaptureParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.capture_fraction) || !(0.0..=1.0).contains(&self.multi_pick_fraction) {
            return Err(param("capture fractions must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceContact {
    pub piece_id: u32,
    /// Height of the piece's surface above the commanded fingertip height, mm.
    pub penetration_mm: f64,
    /// Spring force applied (adaptive fingers only), N.
    pub force_n: Option<f64>,
    pub damaged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerInsertion {
    pub commanded_mm: f64,
    /// `max(height − h)` over the contact region, floored at 0.
    pub obstruction_mm: f64,
    pub achieved_bottom_mm: f64,
    pub retraction_mm: f64,
    pub contacts: Vec<PieceContact>,
    pub blocked: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InsertionResult {
    pub kind: FingerKind,
    /// `[−θ side, +θ side]`.
    pub fingers: [FingerInsertion; 2],
}

impl InsertionResult {
    pub fn blocked(&self) -> bool {
        self.fingers.iter().any(|f| f.blocked)
    }
}

/// Highest surface (mm) of each topmost piece within `region`.
fn piece_maxima(scene: &TrayScene, region: &Mask) -> BTreeMap<u32, f64> {
    let mut out: BTreeMap<u32, f64> = BTreeMap::new();
    for (c, r) in region.pixels() {
        let id = scene.owner_map[[r, c]];
        if id != 0 {
            let h = units_to_mm(scene.heightmap[[r, c]]);
            out.entry(id).and_modify(|m| *m = m.max(h)).or_insert(h);
        }
    }
    out
}

fn damage_tolerance(scene: &TrayScene, id: u32) -> f64 {
    scene.archetype_of(id).map_or(0.0, |a| a.damage_tolerance)
}

fn fragility(scene: &TrayScene, id: u32) -> f64 {
    scene.archetype_of(id).map_or(f64::INFINITY, |a| a.fragility_force)
}

/// Evaluates vertical insertion of both fingertips at the candidate's height.
///
/// A finger rectangle reaching past the tray interior lands on the tray wall,
/// whose rim stands at the full tray depth.
pub fn insert_fingers(scene: &TrayScene, c: &GraspCandidate, fm: &FingerModel) -> InsertionResult {
    let regions = contact_regions(c, &fm.geometry, &scene.frame);
    let walls = wall_overlap(c, &fm.geometry, &scene.frame);
    let rim = scene.tray.dims_mm[2];
    let h = c.h;
    let fingers = std::array::from_fn(|i| {
        let maxima = piece_maxima(scene, &regions[i]);
        let floor = if walls[i] > 0 { rim - h } else { 0.0 };
        let obstruction = maxima.values().fold(floor.max(0.0), |o, &m| o.max(m - h));
        match fm.kind {
            FingerKind::Fixed => FingerInsertion {
                commanded_mm: h,
                obstruction_mm: obstruction,
                achieved_bottom_mm: h,
                retraction_mm: 0.0,
                contacts: maxima
                    .iter()
                    .filter(|(_, &m)| m > h)
                    .map(|(&id, &m)| PieceContact {
                        piece_id: id,
                        penetration_mm: m - h,
                        force_n: None,
                        damaged: m - h > damage_tolerance(scene, id),
                    })
                    .collect(),
                blocked: obstruction > fm.pierce_block_mm,
            },
            FingerKind::Adaptive => {
                let r = obstruction.min(fm.retraction_budget_mm);
                let bottom = h + r;
                let force = fm.force_at(r);
                FingerInsertion {
                    commanded_mm: h,
                    obstruction_mm: obstruction,
                    achieved_bottom_mm: bottom,
                    retraction_mm: r,
                    // only surfaces the retracted tip rests on are pressed
                    contacts: maxima
                        .iter()
                        .filter(|(_, &m)| m > h && m - h >= r)
                        .map(|(&id, &m)| PieceContact {
                            piece_id: id,
                            penetration_mm: m - h,
                            force_n: Some(force),
                            damaged: force > fragility(scene, id),
                        })
                        .collect(),
                    blocked: obstruction > fm.retraction_budget_mm,
                }
            }
        }
    });
    InsertionResult { kind: fm.kind, fingers }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspClass {
    SuccessSingle,
    SuccessMultiple,
    Failure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DamageCause {
    Insertion,
    Closure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DamageRecord {
    pub piece_id: u32,
    /// Penetration in mm (fixed) or force in N (adaptive); the largest event.
    pub magnitude: f64,
    pub cause: DamageCause,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspOutcome {
    pub classification: GraspClass,
    pub picked: Vec<u32>,
    pub damaged: Vec<DamageRecord>,
    pub insertion: InsertionResult,
    pub closure_contacts: Vec<PieceContact>,
    /// Share of the target's visible area inside the jaw region.
    pub target_fraction: f64,
}

impl GraspOutcome {
    pub fn classify(picked: usize) -> GraspClass {
        match picked {
            0 => GraspClass::Failure,
            1 => GraspClass::SuccessSingle,
            _ => GraspClass::SuccessMultiple,
        }
    }
}

/// Jaw region: the area swept by the fingers while closing, spanning the
/// outer faces of both open fingers along the closing axis and the longer of
/// finger breadth and food length across it.
pub fn jaw_region(scene: &TrayScene, c: &GraspCandidate, fg: &FingerGeometry) -> Mask {
    let res = scene.frame.resolution_mm;
    let half_t = (0.5 * c.w + fg.clearance_mm + fg.width_mm) / res;
    let half_s = 0.5 * fg.breadth_mm.max(c.length) / res;
    oriented_rect(&scene.frame, (c.x, c.y), c.theta, 0.0, half_t, half_s)
}

/// Closes the jaws and lifts.
///
/// The target is carried iff neither finger is blocked, both achieved
/// bottoms are at least the depth margin below the target's food median, and
/// the capture fraction of its visible area is in the jaw region. With the
/// target, any other piece with the multi-pick fraction of its visible area
/// in the jaw and a visible median above both bottoms is carried too.
///
/// Closing sweeps each finger across its half of the jaw at its achieved
/// bottom. Every non-target piece reaching above that bottom is scraped: a
/// fixed finger penetrates by `surface − h`, an adaptive finger retracts to
/// `min(surface − h, travel)` and presses with the matching spring force;
/// damage follows the insertion rules.
pub fn close_and_lift(
    scene: &TrayScene,
    c: &GraspCandidate,
    ins: &InsertionResult,
    fm: &FingerModel,
    capture: &CaptureParams,
) -> GraspOutcome {
    let jaw = jaw_region(scene, c, &fm.geometry);
    let mut in_jaw: BTreeMap<u32, usize> = BTreeMap::new();
    for (col, row) in jaw.pixels() {
        let id = scene.owner_map[[row, col]];
        if id != 0 {
            *in_jaw.entry(id).or_default() += 1;
        }
    }
    let fraction = |id: u32| -> f64 {
        match (scene.piece(id), in_jaw.get(&id)) {
            (Some(p), Some(&n)) if p.visible_px > 0 => n as f64 / p.visible_px as f64,
            _ => 0.0,
        }
    };
    let target = c.instance_id;
    let target_fraction = fraction(target);
    let bottoms = ins.fingers.each_ref().map(|f| f.achieved_bottom_mm);
    let highest_bottom = bottoms[0].max(bottoms[1]);
    let captured = scene.piece(target).is_some()
        && !ins.blocked()
        && highest_bottom <= c.food_median - capture.grasp_depth_margin_mm
        && target_fraction >= capture.capture_fraction;

    let mut picked = Vec::new();
    if captured {
        picked.push(target);
        for (&id, _) in in_jaw.iter().filter(|(&id, _)| id != target) {
            if fraction(id) < capture.multi_pick_fraction {
                continue;
            }
            let mask = scene.visible_mask(id);
            let mut hs: Vec<f64> = mask.pixels().map(|(col, row)| scene.height_mm(col, row)).collect();
            if median(&mut hs).is_some_and(|m| m > highest_bottom) {
                picked.push(id);
            }
        }
    }

    // closure sweep, per jaw half
    let (s, co) = c.theta.sin_cos();
    let mut halves: [BTreeMap<u32, f64>; 2] = [BTreeMap::new(), BTreeMap::new()];
    for (col, row) in jaw.pixels() {
        let id = scene.owner_map[[row, col]];
        if id == 0 || id == target {
            continue;
        }
        let t = (col as f64 - c.x) * co + (row as f64 - c.y) * s;
        let side = usize::from(t >= 0.0);
        let h = scene.height_mm(col, row);
        halves[side].entry(id).and_modify(|m| *m = m.max(h)).or_insert(h);
    }
    let mut closure_contacts = Vec::new();
    for (side, maxima) in halves.iter().enumerate() {
        let bottom = bottoms[side];
        for (&id, &m) in maxima {
            if m <= bottom {
                continue;
            }
            let penetration = m - c.h;
            let contact = match fm.kind {
                FingerKind::Fixed => PieceContact {
                    piece_id: id,
                    penetration_mm: penetration,
                    force_n: None,
                    damaged: penetration > damage_tolerance(scene, id),
                },
                FingerKind::Adaptive => {
                    let force = fm.force_at(penetration);
                    PieceContact {
                        piece_id: id,
                        penetration_mm: penetration,
                        force_n: Some(force),
                        damaged: force > fragility(scene, id),
                    }
                }
            };
            closure_contacts.push(contact);
        }
    }

    let mut damage: BTreeMap<u32, DamageRecord> = BTreeMap::new();
    let events = ins
        .fingers
        .iter()
        .flat_map(|f| f.contacts.iter().map(|k| (k, DamageCause::Insertion)))
        .chain(closure_contacts.iter().map(|k| (k, DamageCause::Closure)));
    for (k, cause) in events.filter(|(k, _)| k.damaged) {
        let magnitude = k.force_n.unwrap_or(k.penetration_mm);
        damage
            .entry(k.piece_id)
            .and_modify(|d| {
                if magnitude > d.magnitude {
                    d.magnitude = magnitude;
                    d.cause = cause;
                }
            })
            .or_insert(DamageRecord {
                piece_id: k.piece_id,
                magnitude,
                cause,
            });
    }

    GraspOutcome {
        classification: GraspOutcome::classify(picked.len()),
        picked,
        damaged: damage.into_values().collect(),
        insertion: ins.clone(),
        closure_contacts,
        target_fraction,
    }
}

/// Inserts, closes and lifts, then applies the result to the scene: damage
/// flags are recorded on pieces and picked pieces leave the tray.
pub fn execute_grasp(
    scene: &mut TrayScene,
    c: &GraspCandidate,
    fm: &FingerModel,
    capture: &CaptureParams,
) -> GraspOutcome {
    let ins = insert_fingers(scene, c, fm);
    let outcome = close_and_lift(scene, c, &ins, fm, capture);
    for d in &outcome.damaged {
        if let Some(p) = scene.piece_mut(d.piece_id) {
            p.damage = Some(p.damage.map_or(d.magnitude, |m| m.max(d.magnitude)));
        }
    }
    scene.remove_pieces(&outcome.picked);
    outcome
}
