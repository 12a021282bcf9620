//! Raster geometry shared by every stage: the pixel frame of a tray image,
//! fixed-point height units, and bounding-box-cropped boolean masks.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Heights are stored as integers in hundredths of a millimetre. Composition
/// and contact checks are exact in this representation, and it is the unit of
/// the 16-bit height rasters on disk.
pub const HEIGHT_UNIT_MM: f64 = 0.01;

pub fn mm_to_units(mm: f64) -> i32 {
    (mm / HEIGHT_UNIT_MM).round() as i32
}

pub fn units_to_mm(units: i32) -> f64 {
    units as f64 * HEIGHT_UNIT_MM
}

/// Pixel frame of a tray raster.
///
/// The tray interior occupies the top-left `tray_cols × tray_rows` pixels of
/// a `width × height` canvas. Pixel `(col, row)` covers the tray-frame square
/// `[col·res, (col+1)·res) × [row·res, (row+1)·res)` in millimetres; planner
/// geometry treats the pixel centre as the integer point `(col, row)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterFrame {
    pub width: usize,
    pub height: usize,
    pub resolution_mm: f64,
    pub tray_cols: usize,
    pub tray_rows: usize,
}

impl RasterFrame {
    /// Frame for a tray of `tray_mm` (width, depth) fitted into a canvas of
    /// `canvas` pixels, with square pixels sized so the longer tray side spans
    /// the canvas.
    pub fn fit_tray(tray_mm: (f64, f64), canvas: (usize, usize)) -> Self {
        let res = (tray_mm.0 / canvas.0 as f64).max(tray_mm.1 / canvas.1 as f64);
        let tray_cols = ((tray_mm.0 / res).round() as usize).min(canvas.0);
        let tray_rows = ((tray_mm.1 / res).round() as usize).min(canvas.1);
        Self {
            width: canvas.0,
            height: canvas.1,
            resolution_mm: res,
            tray_cols,
            tray_rows,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn in_raster(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }

    pub fn in_tray(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.tray_cols && (row as usize) < self.tray_rows
    }

    /// Pixel containing the tray-frame point `(x, y)` mm.
    pub fn pixel_of(&self, x_mm: f64, y_mm: f64) -> (i64, i64) {
        (
            (x_mm / self.resolution_mm).floor() as i64,
            (y_mm / self.resolution_mm).floor() as i64,
        )
    }

    /// Tray-frame centre of pixel `(col, row)` in mm.
    pub fn pixel_center_mm(&self, col: i64, row: i64) -> (f64, f64) {
        (
            (col as f64 + 0.5) * self.resolution_mm,
            (row as f64 + 0.5) * self.resolution_mm,
        )
    }
}

/// A boolean mask over a raster, stored cropped to its tight bounding box.
///
/// Two masks compare equal iff they cover the same pixel set on the same
/// raster dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    raster: (usize, usize),
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            raster: (width, height),
            x0: 0,
            y0: 0,
            w: 0,
            h: 0,
            bits: Vec::new(),
        }
    }

    /// Builds a mask from a predicate evaluated over the pixel rectangle
    /// `[x0, x1) × [y0, y1)`, clipped to the raster.
    pub fn from_fn(
        width: usize,
        height: usize,
        (x0, y0, x1, y1): (i64, i64, i64, i64),
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        let cx0 = x0.clamp(0, width as i64) as usize;
        let cy0 = y0.clamp(0, height as i64) as usize;
        let cx1 = x1.clamp(0, width as i64) as usize;
        let cy1 = y1.clamp(0, height as i64) as usize;
        if cx0 >= cx1 || cy0 >= cy1 {
            return Self::empty(width, height);
        }
        let w = cx1 - cx0;
        let h = cy1 - cy0;
        let mut bits = vec![false; w * h];
        for r in 0..h {
            for c in 0..w {
                bits[r * w + c] = f(cx0 + c, cy0 + r);
            }
        }
        Self {
            raster: (width, height),
            x0: cx0,
            y0: cy0,
            w,
            h,
            bits,
        }
        .trimmed()
    }

    pub fn from_pixels(width: usize, height: usize, pixels: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let pixels: Vec<(usize, usize)> = pixels.into_iter().filter(|&(c, r)| c < width && r < height).collect();
        if pixels.is_empty() {
            return Self::empty(width, height);
        }
        let x0 = pixels.iter().map(|p| p.0).min().unwrap();
        let x1 = pixels.iter().map(|p| p.0).max().unwrap() + 1;
        let y0 = pixels.iter().map(|p| p.1).min().unwrap();
        let y1 = pixels.iter().map(|p| p.1).max().unwrap() + 1;
        let w = x1 - x0;
        let mut bits = vec![false; w * (y1 - y0)];
        for (c, r) in pixels {
            bits[(r - y0) * w + (c - x0)] = true;
        }
        Self {
            raster: (width, height),
            x0,
            y0,
            w,
            h: y1 - y0,
            bits,
        }
    }

    pub fn from_grid(grid: &Array2<bool>) -> Self {
        let (h, w) = grid.dim();
        Self::from_fn(w, h, (0, 0, w as i64, h as i64), |c, r| grid[[r, c]])
    }

    pub fn to_grid(&self) -> Array2<bool> {
        let mut g = Array2::from_elem((self.raster.1, self.raster.0), false);
        for (c, r) in self.pixels() {
            g[[r, c]] = true;
        }
        g
    }

    /// Raster dimensions `(width, height)`.
    pub fn dims(&self) -> (usize, usize) {
        self.raster
    }

    /// Tight bounding box `(x0, y0, x1, y1)` with exclusive upper bounds.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        (!self.is_empty()).then(|| (self.x0, self.y0, self.x0 + self.w, self.y0 + self.h))
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, col: usize, row: usize) -> bool {
        col >= self.x0
            && row >= self.y0
            && col < self.x0 + self.w
            && row < self.y0 + self.h
            && self.bits[(row - self.y0) * self.w + (col - self.x0)]
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (x0, y0, w) = (self.x0, self.y0, self.w);
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (x0 + i % w, y0 + i / w))
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        let (Some(a), Some(b)) = (self.bbox(), other.bbox()) else {
            return 0;
        };
        let (x0, y0) = (a.0.max(b.0), a.1.max(b.1));
        let (x1, y1) = (a.2.min(b.2), a.3.min(b.3));
        let mut n = 0;
        for r in y0..y1 {
            for c in x0..x1 {
                if self.contains(c, r) && other.contains(c, r) {
                    n += 1;
                }
            }
        }
        n
    }

    pub fn union(&self, other: &Mask) -> Mask {
        let (w, h) = self.raster;
        match (self.bbox(), other.bbox()) {
            (None, _) => other.clone(),
            (_, None) => self.clone(),
            (Some(a), Some(b)) => {
                let rect = (
                    a.0.min(b.0) as i64,
                    a.1.min(b.1) as i64,
                    a.2.max(b.2) as i64,
                    a.3.max(b.3) as i64,
                );
                Mask::from_fn(w, h, rect, |c, r| self.contains(c, r) || other.contains(c, r))
            }
        }
    }

    /// Morphological dilation with a `(2r+1)²` square (8-neighbourhood applied
    /// `r` times).
    pub fn dilate(&self, r: usize) -> Mask {
        if r == 0 || self.is_empty() {
            return self.clone();
        }
        self.square_filter(r, r, |count, _| count > 0)
    }

    /// Morphological erosion with a `(2r+1)²` square; pixels outside the
    /// raster count as background.
    pub fn erode(&self, r: usize) -> Mask {
        if r == 0 || self.is_empty() {
            return self.clone();
        }
        let full = 2 * r + 1;
        self.square_filter(0, r, move |count, _| count == full)
    }

    /// Separable box filter over a working window grown by `grow` pixels;
    /// `keep(count, window)` decides each pass's output from the in-window
    /// count.
    fn square_filter(&self, grow: usize, r: usize, keep: impl Fn(usize, usize) -> bool) -> Mask {
        let (rw, rh) = self.raster;
        let wx0 = self.x0.saturating_sub(grow);
        let wy0 = self.y0.saturating_sub(grow);
        let wx1 = (self.x0 + self.w + grow).min(rw);
        let wy1 = (self.y0 + self.h + grow).min(rh);
        let (ww, wh) = (wx1 - wx0, wy1 - wy0);
        let src: Vec<bool> = (0..wh)
            .flat_map(|y| (0..ww).map(move |x| (x, y)))
            .map(|(x, y)| self.contains(wx0 + x, wy0 + y))
            .collect();
        let window = 2 * r + 1;
        // Rows, then columns; prefix sums give each window count.
        let mut rows = vec![false; ww * wh];
        let mut prefix = vec![0usize; ww.max(wh) + 1];
        for y in 0..wh {
            for x in 0..ww {
                prefix[x + 1] = prefix[x] + src[y * ww + x] as usize;
            }
            for x in 0..ww {
                let lo = x.saturating_sub(r);
                let hi = (x + r + 1).min(ww);
                rows[y * ww + x] = keep(prefix[hi] - prefix[lo], window);
            }
        }
        let mut out = vec![false; ww * wh];
        for x in 0..ww {
            for y in 0..wh {
                prefix[y + 1] = prefix[y] + rows[y * ww + x] as usize;
            }
            for y in 0..wh {
                let lo = y.saturating_sub(r);
                let hi = (y + r + 1).min(wh);
                out[y * ww + x] = keep(prefix[hi] - prefix[lo], window);
            }
        }
        Mask {
            raster: self.raster,
            x0: wx0,
            y0: wy0,
            w: ww,
            h: wh,
            bits: out,
        }
        .trimmed()
    }

    fn trimmed(self) -> Mask {
        let mut x0 = usize::MAX;
        let mut y0 = usize::MAX;
        let mut x1 = 0;
        let mut y1 = 0;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            let (c, r) = (i % self.w, i / self.w);
            x0 = x0.min(c);
            y0 = y0.min(r);
            x1 = x1.max(c + 1);
            y1 = y1.max(r + 1);
        }
        if x1 == 0 {
            return Mask::empty(self.raster.0, self.raster.1);
        }
        if x0 == 0 && y0 == 0 && x1 == self.w && y1 == self.h {
            return self;
        }
        let w = x1 - x0;
        let mut bits = Vec::with_capacity(w * (y1 - y0));
        for r in y0..y1 {
            bits.extend_from_slice(&self.bits[r * self.w + x0..r * self.w + x1]);
        }
        Mask {
            raster: self.raster,
            x0: self.x0 + x0,
            y0: self.y0 + y0,
            w,
            h: y1 - y0,
            bits,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: usize, y0: usize, side: usize) -> Mask {
        Mask::from_fn(64, 64, (0, 0, 64, 64), |c, r| {
            c >= x0 && c < x0 + side && r >= y0 && r < y0 + side
        })
    }

    #[test]
    fn default_tray_frame() {
        let f = RasterFrame::fit_tray((424.0, 308.0), (600, 600));
        assert_eq!(f.tray_cols, 600);
        assert_eq!(f.tray_rows, 436);
        assert!((f.resolution_mm - 424.0 / 600.0).abs() < 1e-12);
    }

    #[test]
    fn height_units_round_trip() {
        assert_eq!(mm_to_units(12.34), 1234);
        assert_eq!(units_to_mm(1500), 15.0);
    }

    #[test]
    fn masks_are_canonical() {
        let a = square(10, 10, 5);
        let b = Mask::from_pixels(64, 64, (10..15).flat_map(|c| (10..15).map(move |r| (c, r))));
        assert_eq!(a, b);
        assert_eq!(a.count(), 25);
        assert_eq!(a.bbox(), Some((10, 10, 15, 15)));
    }

    #[test]
    fn dilate_then_erode_square() {
        let a = square(20, 20, 6);
        let d = a.dilate(2);
        assert_eq!(d, square(18, 18, 10));
        assert_eq!(d.erode(2), a);
        assert!(square(20, 20, 3).erode(2).is_empty());
    }

    #[test]
    fn erosion_treats_outside_as_background() {
        let a = square(0, 0, 5);
        assert_eq!(a.erode(1), square(1, 1, 3));
    }

    #[test]
    fn union_and_intersection() {
        let a = square(0, 0, 10);
        let b = square(5, 0, 10);
        assert_eq!(a.intersection_count(&b), 50);
        assert_eq!(a.union(&b).count(), 150);
        assert_eq!(a.union(&Mask::empty(64, 64)), a);
    }
}
