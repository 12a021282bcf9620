use std::f64::consts::TAU;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archetype::FoodArchetype;
use crate::error::{param, Result};
use crate::raster::mm_to_units;

/// Fully resolved shape of one piece: archetype parameters after scaling and
/// per-piece jitter. Rasterizing the same shape at the same resolution always
/// yields the same stamp, which is how scenes are reloaded from disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StampShape {
    /// Ellipsoidal cap over a superellipse footprint, rotated by `rotation`
    /// (radians, image frame).
    Superellipse {
        semi_axes_mm: [f64; 2],
        exponent: f64,
        peak_mm: f64,
        underside: f64,
        rotation: f64,
        scale: f64,
    },
    /// Axis-aligned rectangular block of uniform thickness. Used for crafted
    /// scenes.
    Block {
        size_px: [usize; 2],
        top_mm: f64,
        bottom_mm: f64,
    },
}

/// Rasterized piece, positioned relative to an anchor pixel.
///
/// Stamp cell `[[r, c]]` lands on scene pixel
/// `(anchor.0 + offset.0 + c, anchor.1 + offset.1 + r)`. Heights are in
/// hundredths of a mm relative to the piece's own base plane; both grids are
/// zero outside `footprint`.
#[derive(Clone, Debug, PartialEq)]
pub struct PieceStamp {
    pub shape: StampShape,
    pub offset: (i64, i64),
    pub top: Array2<i32>,
    pub bottom: Array2<i32>,
    pub footprint: Array2<bool>,
}

impl PieceStamp {
    pub fn rotation(&self) -> f64 {
        match self.shape {
            StampShape::Superellipse { rotation, .. } => rotation,
            StampShape::Block { .. } => 0.0,
        }
    }

    pub fn scale(&self) -> f64 {
        match self.shape {
            StampShape::Superellipse { scale, .. } => scale,
            StampShape::Block { .. } => 1.0,
        }
    }

    /// Number of footprint pixels.
    pub fn area_px(&self) -> usize {
        self.footprint.iter().filter(|&&b| b).count()
    }

    /// Footprint cells as `(d_col, d_row, top, bottom)` offsets from the anchor.
    pub fn cells(&self) -> impl Iterator<Item = (i64, i64, i32, i32)> + '_ {
        let (oc, or) = self.offset;
        self.footprint
            .indexed_iter()
            .filter(|(_, &b)| b)
            .map(move |((r, c), _)| (oc + c as i64, or + r as i64, self.top[[r, c]], self.bottom[[r, c]]))
    }

    /// Footprint bounding box in pixels `(cols, rows)` after trimming.
    pub fn extent_px(&self) -> (usize, usize) {
        let (rows, cols) = self.footprint.dim();
        (cols, rows)
    }

    pub fn block(cols: usize, rows: usize, top_mm: f64, bottom_mm: f64) -> Result<Self> {
        Self::rasterize(
            &StampShape::Block {
                size_px: [cols, rows],
                top_mm,
                bottom_mm,
            },
            1.0,
        )
    }

    /// Rasterizes a shape at `resolution_mm` per pixel.
    pub fn rasterize(shape: &StampShape, resolution_mm: f64) -> Result<Self> {
        match *shape {
            StampShape::Block {
                size_px: [cols, rows],
                top_mm,
                bottom_mm,
            } => {
                if cols == 0 || rows == 0 || !(top_mm > bottom_mm && bottom_mm >= 0.0) {
                    return Err(param("block needs a non-empty size and top > bottom >= 0"));
                }
                Ok(Self {
                    shape: shape.clone(),
                    offset: (-(cols as i64 / 2), -(rows as i64 / 2)),
                    top: Array2::from_elem((rows, cols), mm_to_units(top_mm)),
                    bottom: Array2::from_elem((rows, cols), mm_to_units(bottom_mm)),
                    footprint: Array2::from_elem((rows, cols), true),
                })
            }
            StampShape::Superellipse {
                semi_axes_mm: [a, b],
                exponent,
                peak_mm,
                underside,
                rotation,
                ..
            } => {
                if !(a > 0.0 && b > 0.0 && exponent > 0.0 && peak_mm > 0.0) {
                    return Err(param("superellipse needs positive axes, exponent and peak"));
                }
                Ok(rasterize_superellipse(
                    shape.clone(),
                    [a, b],
                    exponent,
                    peak_mm,
                    underside,
                    rotation,
                    resolution_mm,
                ))
            }
        }
    }
}

fn rasterize_superellipse(
    shape: StampShape,
    [a, b]: [f64; 2],
    n: f64,
    peak: f64,
    k: f64,
    rotation: f64,
    res: f64,
) -> PieceStamp {
    let (sin, cos) = rotation.sin_cos();
    // The superellipse lies inside its [-a, a] × [-b, b] box for any exponent.
    let ex = a * cos.abs() + b * sin.abs();
    let ey = a * sin.abs() + b * cos.abs();
    let hx = (ex / res).ceil() as i64 + 1;
    let hy = (ey / res).ceil() as i64 + 1;
    let (cols, rows) = ((2 * hx + 1) as usize, (2 * hy + 1) as usize);
    let mut top = Array2::zeros((rows, cols));
    let mut bottom = Array2::zeros((rows, cols));
    let mut footprint = Array2::from_elem((rows, cols), false);
    let square = n == 2.0;
    let nf = n as f32;
    for r in 0..rows {
        let dv = (r as i64 - hy) as f64 * res;
        for c in 0..cols {
            let du = (c as i64 - hx) as f64 * res;
            let u = (du * cos + dv * sin) / a;
            let v = (-du * sin + dv * cos) / b;
            if u.abs() >= 1.0 || v.abs() >= 1.0 {
                continue;
            }
            let rho_sq = if square {
                u * u + v * v
            } else {
                // single precision keeps heights well inside one 0.01 mm unit
                let t = (u.abs() as f32).powf(nf) + (v.abs() as f32).powf(nf);
                if t >= 1.0 {
                    continue;
                }
                f64::from(t.powf(2.0 / nf))
            };
            if rho_sq >= 1.0 {
                continue;
            }
            let s = (1.0 - rho_sq).sqrt();
            let t_units = mm_to_units(k * peak + (1.0 - k) * peak * s);
            if t_units <= 0 {
                continue;
            }
            top[[r, c]] = t_units;
            bottom[[r, c]] = mm_to_units(k * peak * (1.0 - s));
            footprint[[r, c]] = true;
        }
    }
    trim(shape, (-hx, -hy), top, bottom, footprint)
}

fn trim(
    shape: StampShape,
    offset: (i64, i64),
    top: Array2<i32>,
    bottom: Array2<i32>,
    footprint: Array2<bool>,
) -> PieceStamp {
    let (rows, cols) = footprint.dim();
    let mut r0 = rows;
    let mut r1 = 0;
    let mut c0 = cols;
    let mut c1 = 0;
    for ((r, c), &b) in footprint.indexed_iter() {
        if b {
            r0 = r0.min(r);
            r1 = r1.max(r + 1);
            c0 = c0.min(c);
            c1 = c1.max(c + 1);
        }
    }
    if r1 == 0 {
        return PieceStamp {
            shape,
            offset,
            top: Array2::zeros((0, 0)),
            bottom: Array2::zeros((0, 0)),
            footprint: Array2::from_elem((0, 0), false),
        };
    }
    let sl = ndarray::s![r0..r1, c0..c1];
    PieceStamp {
        shape,
        offset: (offset.0 + c0 as i64, offset.1 + r0 as i64),
        top: top.slice(sl).to_owned(),
        bottom: bottom.slice(sl).to_owned(),
        footprint: footprint.slice(sl).to_owned(),
    }
}

/// Draws per-piece jitter and rasterizes one piece of `archetype`.
///
/// Always consumes three uniforms from `rng` (two semi-axes, dome), so the
/// stream layout does not depend on the jitter fraction.
pub fn make_stamp<R: Rng + ?Sized>(
    archetype: &FoodArchetype,
    scale: f64,
    rotation: f64,
    resolution_mm: f64,
    rng: &mut R,
) -> Result<PieceStamp> {
    let [lo, hi] = archetype.scale_range;
    if !(scale >= lo && scale <= hi) {
        return Err(param(format!(
            "scale {scale} outside {}'s range [{lo}, {hi}]",
            archetype.name
        )));
    }
    if !(resolution_mm > 0.0) {
        return Err(param("resolution must be > 0"));
    }
    let j = archetype.footprint.jitter;
    let mut jitter = || 1.0 + j * (2.0 * rng.random::<f64>() - 1.0);
    let [a, b] = archetype.footprint.semi_axes_mm;
    let a = a * scale * jitter();
    let b = b * scale * jitter();
    let peak = archetype.height_profile.dome_ratio * 0.5 * (a + b) * jitter();
    let shape = StampShape::Superellipse {
        semi_axes_mm: [a, b],
        exponent: archetype.footprint.exponent,
        peak_mm: peak,
        underside: archetype.height_profile.underside,
        rotation: rotation.rem_euclid(TAU),
        scale,
    };
    PieceStamp::rasterize(&shape, resolution_mm)
}
