use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::Image;

const DISK_SUPERSAMPLE: usize = 16;

/// A `rows x cols` grid of shapes centered in a `width x height` frame,
/// with `spacing` pixels between neighbouring centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    /// Center of grid node `(row, col)` in pixel-center coordinates.
    pub fn center(&self, row: usize, col: usize) -> (f64, f64) {
        let cx = (self.width as f64 - 1.0) / 2.0 + (col as f64 - (self.cols as f64 - 1.0) / 2.0) * self.spacing;
        let cy = (self.height as f64 - 1.0) / 2.0 + (row as f64 - (self.rows as f64 - 1.0) / 2.0) * self.spacing;
        (cx, cy)
    }

    /// Checks that shapes reaching `extent` pixels from each center stay
    /// inside the frame.
    fn check_fits(&self, extent: f64, what: &str) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("pattern grid and frame must be nonempty".into()));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::InvalidParameter(format!("{what} must be positive")));
        }
        if !(self.spacing >= 0.0 && self.spacing.is_finite()) || (self.spacing == 0.0 && self.rows * self.cols > 1) {
            return Err(Error::InvalidParameter(format!("spacing {} must be positive", self.spacing)));
        }
        let (x0, y0) = self.center(0, 0);
        let (x1, y1) = self.center(self.rows - 1, self.cols - 1);
        if x0 - extent < -0.5 || y0 - extent < -0.5 || x1 + extent > self.width as f64 - 0.5 || y1 + extent > self.height as f64 - 0.5 {
            return Err(Error::InvalidParameter(format!(
                "{}x{} grid of {what} {extent} at spacing {} overflows a {}x{} frame",
                self.rows, self.cols, self.spacing, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// White anti-aliased disks on black. Coverage is estimated with 16x16
/// supersampling per pixel.
pub fn make_disk_pattern(grid: &GridSpec, radius: f64) -> Result<Image> {
    grid.check_fits(radius, "disk radius")?;
    let (w, h) = (grid.width, grid.height);
    let mut img = Image::zeros(w, h, 1)?;
    let n = DISK_SUPERSAMPLE;
    let r2 = radius * radius;
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let (cx, cy) = grid.center(row, col);
            let xa = (cx - radius - 1.0).floor().max(0.0) as usize;
            let xb = ((cx + radius + 1.0).ceil() as usize).min(w - 1);
            let ya = (cy - radius - 1.0).floor().max(0.0) as usize;
            let yb = ((cy + radius + 1.0).ceil() as usize).min(h - 1);
            for y in ya..=yb {
                for x in xa..=xb {
                    let mut hits = 0usize;
                    for j in 0..n {
                        let sy = y as f64 - 0.5 + (j as f64 + 0.5) / n as f64 - cy;
                        for i in 0..n {
                            let sx = x as f64 - 0.5 + (i as f64 + 0.5) / n as f64 - cx;
                            if sx * sx + sy * sy <= r2 {
                                hits += 1;
                            }
                        }
                    }
                    if hits > 0 {
                        let v = img.get(x, y, 0) + hits as f64 / (n * n) as f64;
                        img.set(x, y, 0, v.min(1.0));
                    }
                }
            }
        }
    }
    Ok(img)
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// White axis-aligned squares on black, with exact per-pixel area coverage.
pub fn make_square_pattern(grid: &GridSpec, side: f64) -> Result<Image> {
    grid.check_fits(side / 2.0, "square half-side")?;
    let (w, h) = (grid.width, grid.height);
    let mut img = Image::zeros(w, h, 1)?;
    let half = side / 2.0;
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let (cx, cy) = grid.center(row, col);
            let xa = (cx - half).floor().max(0.0) as usize;
            let xb = ((cx + half).ceil() as usize).min(w - 1);
            let ya = (cy - half).floor().max(0.0) as usize;
            let yb = ((cy + half).ceil() as usize).min(h - 1);
            for y in ya..=yb {
                let oy = overlap(y as f64 - 0.5, y as f64 + 0.5, cy - half, cy + half);
                for x in xa..=xb {
                    let ox = overlap(x as f64 - 0.5, x as f64 + 0.5, cx - half, cx + half);
                    let v = img.get(x, y, 0) + ox * oy;
                    img.set(x, y, 0, v.min(1.0));
                }
            }
        }
    }
    Ok(img)
}
