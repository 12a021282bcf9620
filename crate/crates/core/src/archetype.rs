//! Food archetypes: procedural shape and physical parameters for one kind of
//! food, and the library of defaults shipped with the simulator.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hardness {
    Soft,
    Hard,
    VeryHard,
}

/// Superellipse footprint `|u/a|^n + |v/b|^n < 1` in the piece frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    /// Semi-axes `[a, b]` in mm along the piece's local u and v axes.
    pub semi_axes_mm: [f64; 2],
    pub exponent: f64,
    /// Per-piece uniform jitter fraction applied to the semi-axes and dome.
    pub jitter: f64,
}

/// Vertical profile of a piece: an ellipsoidal cap over the footprint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightProfile {
    /// Peak thickness divided by the mean footprint semi-axis.
    pub dome_ratio: f64,
    /// Fraction of the thickness that lies below the rim (rounded underside).
    /// 0 gives a flat-bottomed piece.
    pub underside: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoodArchetype {
    pub name: String,
    pub footprint: Footprint,
    pub height_profile: HeightProfile,
    pub scale_range: [f64; 2],
    pub count_range: [u32; 2],
    pub hardness: Hardness,
    /// Contact force in N above which an adaptive fingertip damages the piece.
    pub fragility_force: f64,
    /// Fixed-finger penetration in mm the piece tolerates without damage.
    pub damage_tolerance: f64,
    /// Offset in mm added to the food-area median height to get the insertion
    /// height.
    pub grasp_height_offset: f64,
}

impl FoodArchetype {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(param(format!("{}: scale_range must satisfy 0 < lo <= hi", self.name)));
        }
        let [cmin, cmax] = self.count_range;
        if !(1 <= cmin && cmin <= cmax && cmax <= 200) {
            return Err(param(format!("{}: count_range must lie within [1, 200]", self.name)));
        }
        if !(self.fragility_force > 0.0) {
            return Err(param(format!("{}: fragility_force must be > 0", self.name)));
        }
        if !(self.damage_tolerance >= 0.0) {
            return Err(param(format!("{}: damage_tolerance must be >= 0", self.name)));
        }
        let [a, b] = self.footprint.semi_axes_mm;
        if !(a > 0.0 && b > 0.0 && self.footprint.exponent > 0.0) {
            return Err(param(format!("{}: footprint axes and exponent must be > 0", self.name)));
        }
        if !(0.0..1.0).contains(&self.footprint.jitter) {
            return Err(param(format!("{}: jitter must lie in [0, 1)", self.name)));
        }
        let hp = &self.height_profile;
        if !(hp.dome_ratio > 0.0 && (0.0..1.0).contains(&hp.underside)) {
            return Err(param(format!(
                "{}: dome_ratio must be > 0 and underside in [0, 1)",
                self.name
            )));
        }
        if !self.grasp_height_offset.is_finite() {
            return Err(param(format!("{}: grasp_height_offset must be finite", self.name)));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn archetype(
    name: &str,
    semi_axes_mm: [f64; 2],
    exponent: f64,
    jitter: f64,
    dome_ratio: f64,
    underside: f64,
    hardness: Hardness,
    fragility_force: f64,
    damage_tolerance: f64,
    grasp_height_offset: f64,
) -> FoodArchetype {
    FoodArchetype {
        name: name.to_string(),
        footprint: Footprint {
            semi_axes_mm,
            exponent,
            jitter,
        },
        height_profile: HeightProfile { dome_ratio, underside },
        scale_range: [0.7, 1.1],
        count_range: [10, 60],
        hardness,
        fragility_force,
        damage_tolerance,
        grasp_height_offset,
    }
}

/// Named collection of archetypes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeLibrary {
    pub archetypes: BTreeMap<String, FoodArchetype>,
}

impl Default for ArchetypeLibrary {
    /// The seven shipped foods. Hardness classes follow the evaluated foods;
    /// every other number is a tunable default.
    fn default() -> Self {
        use Hardness::*;
        let list = [
            archetype("fried_chicken", [30.0, 22.0], 2.2, 0.2, 1.1, 0.4, Soft, 3.0, 4.0, -14.0),
            archetype("broccoli", [22.0, 18.0], 1.8, 0.25, 1.5, 0.35, Soft, 3.0, 5.0, -14.0),
            archetype("mushroom", [13.0, 11.0], 2.0, 0.15, 1.5, 0.35, Soft, 2.5, 3.0, -10.0),
            archetype("meatball", [14.0, 14.0], 2.0, 0.1, 1.8, 0.5, Hard, 6.0, 6.0, -12.0),
            archetype("taro", [18.0, 14.0], 2.0, 0.15, 1.4, 0.45, Hard, 6.0, 6.0, -12.0),
            archetype("sausage", [40.0, 12.0], 2.5, 0.1, 0.9, 0.5, VeryHard, 10.0, 8.0, -11.0),
            archetype("gyoza", [32.0, 18.0], 2.2, 0.15, 0.8, 0.3, Soft, 1.5, 1.0, -9.0),
        ];
        Self {
            archetypes: list.into_iter().map(|a| (a.name.clone(), a)).collect(),
        }
    }
}

impl ArchetypeLibrary {
    pub fn get(&self, name: &str) -> Result<&FoodArchetype> {
        self.archetypes
            .get(name)
            .ok_or_else(|| Error::UnknownArchetype(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.archetypes.keys().map(String::as_str)
    }

    pub fn validate(&self) -> Result<()> {
        for (key, a) in &self.archetypes {
            if key != &a.name {
                return Err(param(format!("library key `{key}` does not match name `{}`", a.name)));
            }
            a.validate()?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let lib: Self = crate::io::read_json(path)?;
        lib.validate()?;
        Ok(lib)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let lib = ArchetypeLibrary::default();
        lib.validate().unwrap();
        assert_eq!(lib.archetypes.len(), 7);
        for a in lib.archetypes.values() {
            assert_eq!(a.scale_range, [0.7, 1.1]);
            assert_eq!(a.count_range, [10, 60]);
        }
        assert_eq!(lib.get("sausage").unwrap().hardness, Hardness::VeryHard);
        assert_eq!(lib.get("meatball").unwrap().hardness, Hardness::Hard);
        assert_eq!(lib.get("fried_chicken").unwrap().hardness, Hardness::Soft);
    }

    #[test]
    fn rejects_bad_ranges() {
        let mut a = ArchetypeLibrary::default().get("taro").unwrap().clone();
        a.scale_range = [1.2, 1.1];
        assert!(a.validate().is_err());
        a.scale_range = [0.7, 1.1];
        a.count_range = [0, 10];
        assert!(a.validate().is_err());
        a.count_range = [10, 201];
        assert!(a.validate().is_err());
        a.count_range = [10, 60];
        a.fragility_force = 0.0;
        assert!(a.validate().is_err());
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(
            ArchetypeLibrary::default().get("pizza"),
            Err(Error::UnknownArchetype(_))
        ));
    }
}
