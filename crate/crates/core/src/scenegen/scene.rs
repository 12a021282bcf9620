use std::collections::BTreeMap;
use std::f64::consts::TAU;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stamp::{make_stamp, PieceStamp};
use crate::archetype::{ArchetypeLibrary, FoodArchetype};
use crate::error::{param, Error, Result};
use crate::raster::{units_to_mm, Mask, RasterFrame};

/// Placement retries per piece before it is skipped.
pub const MAX_PLACEMENT_RETRIES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrayConfig {
    /// Interior width, depth and wall height in mm.
    pub dims_mm: [f64; 3],
    /// Raster canvas `[width, height]` in pixels.
    pub canvas_px: [usize; 2],
}

impl Default for TrayConfig {
    fn default() -> Self {
        Self {
            dims_mm: [424.0, 308.0, 160.0],
            canvas_px: [600, 600],
        }
    }
}

impl TrayConfig {
    pub fn frame(&self) -> RasterFrame {
        RasterFrame::fit_tray(
            (self.dims_mm[0], self.dims_mm[1]),
            (self.canvas_px[0], self.canvas_px[1]),
        )
    }
}

/// Appearance randomization of the tray image. Recorded for provenance only;
/// nothing is rendered from it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RandomizationRecord {
    pub tray_color: [u8; 3],
    /// Unit vector pointing towards the light.
    pub light_direction: [f64; 3],
    pub specular: f64,
    pub shadows: bool,
    pub camera_tilt_deg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PieceInstance {
    pub id: u32,
    pub archetype: String,
    pub stamp: PieceStamp,
    /// Scene pixel the stamp is anchored to.
    pub anchor: (i64, i64),
    /// Tray-frame position of the anchor pixel centre in mm.
    pub position_mm: (f64, f64),
    /// Base-plane elevation above the tray floor, hundredths of a mm.
    pub rest_height: i32,
    /// Pixels where this piece is topmost.
    pub visible_px: usize,
    /// Damage magnitude (mm of penetration or N of force) once damaged.
    pub damage: Option<f64>,
}

impl PieceInstance {
    pub fn rest_height_mm(&self) -> f64 {
        units_to_mm(self.rest_height)
    }

    pub fn fully_occluded(&self) -> bool {
        self.visible_px == 0
    }

    /// Top surface (hundredths of a mm) at scene pixel `(col, row)`, if the
    /// footprint covers it.
    pub fn top_at(&self, col: i64, row: i64) -> Option<i32> {
        let c = col - self.anchor.0 - self.stamp.offset.0;
        let r = row - self.anchor.1 - self.stamp.offset.1;
        let (rows, cols) = self.stamp.footprint.dim();
        if c < 0 || r < 0 || c as usize >= cols || r as usize >= rows {
            return None;
        }
        let (c, r) = (c as usize, r as usize);
        self.stamp.footprint[[r, c]].then(|| self.rest_height + self.stamp.top[[r, c]])
    }
}

/// The simulated tray: a 2.5-D heightfield with per-pixel ownership.
#[derive(Clone, Debug, PartialEq)]
pub struct TrayScene {
    pub tray: TrayConfig,
    pub frame: RasterFrame,
    /// Height above the tray floor, hundredths of a mm.
    pub heightmap: Array2<i32>,
    /// Topmost piece id per pixel; 0 is the tray floor.
    pub owner_map: Array2<u32>,
    /// Registry in drop order (ids strictly increasing).
    pub pieces: Vec<PieceInstance>,
    pub archetypes: BTreeMap<String, FoodArchetype>,
    pub randomization: RandomizationRecord,
    pub seed: u64,
    pub next_id: u32,
}

impl TrayScene {
    pub fn empty(tray: &TrayConfig) -> Self {
        let frame = tray.frame();
        Self {
            tray: tray.clone(),
            frame,
            heightmap: Array2::zeros(frame.shape()),
            owner_map: Array2::zeros(frame.shape()),
            pieces: Vec::new(),
            archetypes: BTreeMap::new(),
            randomization: RandomizationRecord::default(),
            seed: 0,
            next_id: 1,
        }
    }

    pub fn piece(&self, id: u32) -> Option<&PieceInstance> {
        self.index_of(id).map(|i| &self.pieces[i])
    }

    pub fn piece_mut(&mut self, id: u32) -> Option<&mut PieceInstance> {
        self.index_of(id).map(move |i| &mut self.pieces[i])
    }

    fn index_of(&self, id: u32) -> Option<usize> {
        self.pieces.binary_search_by_key(&id, |p| p.id).ok()
    }

    pub fn archetype_of(&self, id: u32) -> Option<&FoodArchetype> {
        self.piece(id).and_then(|p| self.archetypes.get(&p.archetype))
    }

    pub fn height_mm(&self, col: usize, row: usize) -> f64 {
        units_to_mm(self.heightmap[[row, col]])
    }

    pub fn heightmap_mm(&self) -> Array2<f64> {
        self.heightmap.mapv(units_to_mm)
    }

    /// Pixels where piece `id` is topmost.
    pub fn visible_mask(&self, id: u32) -> Mask {
        let Some(p) = self.piece(id) else {
            return Mask::empty(self.frame.width, self.frame.height);
        };
        let (cols, rows) = p.stamp.extent_px();
        let x0 = p.anchor.0 + p.stamp.offset.0;
        let y0 = p.anchor.1 + p.stamp.offset.1;
        Mask::from_fn(
            self.frame.width,
            self.frame.height,
            (x0, y0, x0 + cols as i64, y0 + rows as i64),
            |c, r| self.owner_map[[r, c]] == id,
        )
    }

    /// Scene pixels covered by `stamp` anchored at `anchor`, clipped to the
    /// tray interior.
    fn clipped_cells<'a>(
        &self,
        stamp: &'a PieceStamp,
        anchor: (i64, i64),
    ) -> impl Iterator<Item = (usize, usize, i32, i32)> + 'a {
        let frame = self.frame;
        stamp.cells().filter_map(move |(dc, dr, top, bottom)| {
            let (c, r) = (anchor.0 + dc, anchor.1 + dr);
            frame.in_tray(c, r).then_some((c as usize, r as usize, top, bottom))
        })
    }

    /// Lowest base elevation at which `stamp` rests on the current surface:
    /// `max(height − bottom)` over the clipped footprint, floored at 0.
    /// `None` when the footprint misses the tray entirely.
    pub fn rest_height_for(&self, stamp: &PieceStamp, anchor: (i64, i64)) -> Option<i32> {
        let mut any = false;
        let mut rest = 0;
        for (c, r, _, bottom) in self.clipped_cells(stamp, anchor) {
            any = true;
            rest = rest.max(self.heightmap[[r, c]] - bottom);
        }
        any.then_some(rest)
    }

    /// Drops `stamp` with its anchor at the pixel containing `(x, y)` mm and
    /// settles it by max-composition. Returns the new piece id.
    pub fn drop_piece(&mut self, archetype: &FoodArchetype, stamp: PieceStamp, x_mm: f64, y_mm: f64) -> Result<u32> {
        let anchor = self.frame.pixel_of(x_mm, y_mm);
        let rest = self
            .rest_height_for(&stamp, anchor)
            .ok_or_else(|| Error::Placement(format!("footprint at ({x_mm:.1}, {y_mm:.1}) mm lies outside the tray")))?;
        let id = self.next_id;
        self.next_id += 1;
        self.archetypes
            .entry(archetype.name.clone())
            .or_insert_with(|| archetype.clone());
        let mut visible = 0;
        let cells: Vec<_> = self.clipped_cells(&stamp, anchor).collect();
        for (c, r, top, _) in cells {
            let new = rest + top;
            if new > self.heightmap[[r, c]] {
                let prev = self.owner_map[[r, c]];
                if prev != 0 {
                    if let Some(i) = self.index_of(prev) {
                        self.pieces[i].visible_px -= 1;
                    }
                }
                self.heightmap[[r, c]] = new;
                self.owner_map[[r, c]] = id;
                visible += 1;
            }
        }
        self.pieces.push(PieceInstance {
            id,
            archetype: archetype.name.clone(),
            stamp,
            anchor,
            position_mm: self.frame.pixel_center_mm(anchor.0, anchor.1),
            rest_height: rest,
            visible_px: visible,
            damage: None,
        });
        Ok(id)
    }

    /// Rebuilds heightmap, ownership and visibility counts from the registry,
    /// composing pieces in drop order at their recorded rest heights.
    pub fn recompose(&mut self) {
        self.heightmap.fill(0);
        self.owner_map.fill(0);
        let frame = self.frame;
        for p in &self.pieces {
            for (dc, dr, top, _) in p.stamp.cells() {
                let (c, r) = (p.anchor.0 + dc, p.anchor.1 + dr);
                if !frame.in_tray(c, r) {
                    continue;
                }
                let (c, r) = (c as usize, r as usize);
                let new = p.rest_height + top;
                if new > self.heightmap[[r, c]] {
                    self.heightmap[[r, c]] = new;
                    self.owner_map[[r, c]] = p.id;
                }
            }
        }
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &id in self.owner_map.iter().filter(|&&id| id != 0) {
            *counts.entry(id).or_default() += 1;
        }
        for p in &mut self.pieces {
            p.visible_px = counts.get(&p.id).copied().unwrap_or(0);
        }
    }

    /// Removes the given pieces and recomposes the surface from the survivors.
    pub fn remove_pieces(&mut self, ids: &[u32]) {
        if ids.is_empty() {
            return;
        }
        self.pieces.retain(|p| !ids.contains(&p.id));
        self.recompose();
    }
}

/// Scene generation settings for one food.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub archetype: String,
    pub tray: TrayConfig,
    /// Overrides the archetype's count range.
    pub count_range: Option<[u32; 2]>,
    /// Overrides the archetype's scale range.
    pub scale_range: Option<[f64; 2]>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            archetype: "fried_chicken".into(),
            tray: TrayConfig::default(),
            count_range: None,
            scale_range: None,
        }
    }
}

impl SceneConfig {
    pub fn for_archetype(name: &str) -> Self {
        Self {
            archetype: name.to_string(),
            ..Self::default()
        }
    }

    /// Archetype with this config's overrides applied.
    pub fn resolve(&self, library: &ArchetypeLibrary) -> Result<FoodArchetype> {
        let mut a = library.get(&self.archetype)?.clone();
        if let Some(c) = self.count_range {
            a.count_range = c;
        }
        if let Some(s) = self.scale_range {
            a.scale_range = s;
        }
        a.validate()?;
        Ok(a)
    }
}

/// Generates a domain-randomized tray. A pure function of
/// `(config, library, seed)`.
///
/// Stream layout: appearance record, piece count, then per piece
/// `scale, rotation`, three stamp-jitter draws, and `(x, y)` per placement
/// attempt.
pub fn generate_scene(config: &SceneConfig, library: &ArchetypeLibrary, seed: u64) -> Result<TrayScene> {
    let archetype = config.resolve(library)?;
    let [w, d, _] = config.tray.dims_mm;
    if !(w > 0.0 && d > 0.0) {
        return Err(param("tray dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = TrayScene::empty(&config.tray);
    scene.seed = seed;
    scene.randomization = randomize_appearance(&mut rng);
    scene.archetypes.insert(archetype.name.clone(), archetype.clone());

    let [cmin, cmax] = archetype.count_range;
    let count = rng.random_range(cmin..=cmax);
    let [slo, shi] = archetype.scale_range;
    let res = scene.frame.resolution_mm;
    for _ in 0..count {
        let scale = if slo == shi { slo } else { rng.random_range(slo..=shi) };
        let rotation = rng.random_range(0.0..TAU);
        let stamp = make_stamp(&archetype, scale, rotation, res, &mut rng)?;
        for _ in 0..MAX_PLACEMENT_RETRIES {
            let x = rng.random_range(0.0..w);
            let y = rng.random_range(0.0..d);
            match scene.drop_piece(&archetype, stamp.clone(), x, y) {
                Ok(_) => break,
                Err(Error::Placement(_)) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(scene)
}

fn randomize_appearance<R: Rng>(rng: &mut R) -> RandomizationRecord {
    let tray_color = [rng.random(), rng.random(), rng.random()];
    let azimuth = rng.random_range(0.0..TAU);
    let elevation = rng.random_range(0.35..1.45f64);
    RandomizationRecord {
        tray_color,
        light_direction: [
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        ],
        specular: rng.random_range(0.0..1.0),
        shadows: rng.random_bool(0.5),
        camera_tilt_deg: rng.random_range(0.0..30.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::mm_to_units;

    fn lib() -> ArchetypeLibrary {
        ArchetypeLibrary::default()
    }

    fn small_tray() -> TrayConfig {
        TrayConfig {
            dims_mm: [100.0, 100.0, 50.0],
            canvas_px: [100, 100],
        }
    }

    #[test]
    fn drop_onto_empty_tray_rests_on_floor() {
        let arch = lib().get("taro").unwrap().clone();
        let mut scene = TrayScene::empty(&small_tray());
        let stamp = PieceStamp::block(6, 4, 10.0, 0.0).unwrap();
        let id = scene.drop_piece(&arch, stamp.clone(), 50.5, 50.5).unwrap();
        let p = scene.piece(id).unwrap();
        assert_eq!(p.rest_height, 0);
        assert_eq!(p.visible_px, 24);
        let owned = scene.owner_map.iter().filter(|&&o| o == id).count();
        assert_eq!(owned, 24);
        for (dc, dr, _, _) in stamp.cells() {
            assert_eq!(scene.owner_map[[(50 + dr) as usize, (50 + dc) as usize]], id);
        }
    }

    #[test]
    fn identical_flats_stack() {
        let arch = lib().get("taro").unwrap().clone();
        let mut scene = TrayScene::empty(&small_tray());
        let stamp = PieceStamp::block(5, 5, 10.0, 0.0).unwrap();
        let a = scene.drop_piece(&arch, stamp.clone(), 30.5, 30.5).unwrap();
        let b = scene.drop_piece(&arch, stamp, 30.5, 30.5).unwrap();
        assert_eq!(scene.piece(b).unwrap().rest_height, mm_to_units(10.0));
        assert!(scene.piece(a).unwrap().fully_occluded());
        assert_eq!(scene.heightmap[[30, 30]], mm_to_units(20.0));
    }

    #[test]
    fn overlapping_domes_rest_on_brute_force_support() {
        let arch = lib().get("meatball").unwrap().clone();
        let mut scene = TrayScene::empty(&small_tray());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s1 = make_stamp(&arch, 1.0, 0.0, 1.0, &mut rng).unwrap();
        let s2 = make_stamp(&arch, 1.0, 0.3, 1.0, &mut rng).unwrap();
        scene.drop_piece(&arch, s1, 40.0, 50.0).unwrap();
        let before = scene.heightmap.clone();
        let id = scene.drop_piece(&arch, s2.clone(), 55.0, 50.0).unwrap();
        let mut expected = 0;
        for (dc, dr, _, bottom) in s2.cells() {
            let (c, r) = (55 + dc, 50 + dr);
            if (0..100).contains(&c) && (0..100).contains(&r) {
                expected = expected.max(before[[r as usize, c as usize]] - bottom);
            }
        }
        assert!(expected > 0);
        assert_eq!(scene.piece(id).unwrap().rest_height, expected);
    }

    #[test]
    fn placement_fully_outside_fails() {
        let arch = lib().get("taro").unwrap().clone();
        let mut scene = TrayScene::empty(&small_tray());
        let stamp = PieceStamp::block(4, 4, 10.0, 0.0).unwrap();
        assert!(matches!(
            scene.drop_piece(&arch, stamp.clone(), 150.0, 50.0),
            Err(Error::Placement(_))
        ));
        // partially outside is clipped
        let id = scene.drop_piece(&arch, stamp, 99.5, 50.5).unwrap();
        assert_eq!(scene.piece(id).unwrap().visible_px, 12);
    }

    #[test]
    fn degenerate_count_range() {
        let cfg = SceneConfig {
            count_range: Some([1, 1]),
            ..SceneConfig::for_archetype("mushroom")
        };
        let s = generate_scene(&cfg, &lib(), 11).unwrap();
        assert_eq!(s.pieces.len(), 1);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SceneConfig::for_archetype("broccoli");
        let a = generate_scene(&cfg, &lib(), 77).unwrap();
        let b = generate_scene(&cfg, &lib(), 77).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&cfg, &lib(), 78).unwrap();
        assert_ne!(a.heightmap, c.heightmap);
    }

    #[test]
    fn mean_piece_count_over_seeds() {
        let cfg = SceneConfig {
            tray: small_tray(),
            ..SceneConfig::for_archetype("mushroom")
        };
        let n = 1000;
        let total: usize = (0..n)
            .map(|s| generate_scene(&cfg, &lib(), s).unwrap().pieces.len())
            .sum();
        let mean = total as f64 / n as f64;
        assert!((33.0..=37.0).contains(&mean), "mean {mean}");
    }

    #[test]
    fn recompose_matches_incremental_composition() {
        let s = generate_scene(&SceneConfig::for_archetype("gyoza"), &lib(), 3).unwrap();
        let mut r = s.clone();
        r.recompose();
        assert_eq!(r, s);
    }

    #[test]
    fn unknown_archetype_is_an_error() {
        let cfg = SceneConfig::for_archetype("pizza");
        assert!(generate_scene(&cfg, &lib(), 0).is_err());
    }
}
