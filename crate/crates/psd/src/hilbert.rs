//! Hilbert space-filling-curve encoding over a 2^k x 2^k grid.
//!
//! Uses the classic rotate-and-reflect formulation (the convention of Kamel
//! and Faloutsos' packed R-trees): at order 1 the curve visits the quadrants
//! (0,0), (0,1), (1,1), (1,0). The curve is hierarchical, so a contiguous,
//! aligned run of 4^j indices always covers one grid-aligned square of side
//! 2^j; [`HilbertConfig::bounding_box`] exploits this to cover an arbitrary
//! index range with O(k) aligned blocks instead of enumerating cells.

use crate::error::{Error, Result};
use crate::geom::{Point, Rect};

/// Grid order and the data-space rectangle it is mapped onto.
#[derive(Debug, Clone, PartialEq)]
pub struct HilbertConfig {
    order: u32,
    domain: Rect,
}

/// Rotate/flip a quadrant. `n` is the grid size at the current scope; since
/// `n-1` is all ones, the reflection is bitwise and never touches bits that
/// later steps read.
fn rot(n: u64, x: &mut u64, y: &mut u64, rx: u64, ry: u64) {
    if ry == 0 {
        if rx == 1 {
            *x = n - 1 - *x;
            *y = n - 1 - *y;
        }
        std::mem::swap(x, y);
    }
}

/// Grid cell (x, y) to curve index, for a 2^order grid.
fn xy_to_d(order: u32, mut x: u64, mut y: u64) -> u64 {
    let n = 1u64 << order;
    let mut d = 0u64;
    let mut s = n / 2;
    while s > 0 {
        let rx = u64::from(x & s > 0);
        let ry = u64::from(y & s > 0);
        d += s * s * ((3 * rx) ^ ry);
        rot(n, &mut x, &mut y, rx, ry);
        s /= 2;
    }
    d
}

/// Curve index to grid cell (x, y), for a 2^order grid.
fn d_to_xy(order: u32, d: u64) -> (u64, u64) {
    let n = 1u64 << order;
    let (mut x, mut y) = (0u64, 0u64);
    let mut t = d;
    let mut s = 1u64;
    while s < n {
        let rx = 1 & (t / 2);
        let ry = 1 & (t ^ rx);
        rot(s, &mut x, &mut y, rx, ry);
        x += s * rx;
        y += s * ry;
        t /= 4;
        s *= 2;
    }
    (x, y)
}

impl HilbertConfig {
    pub fn new(order: u32, domain: Rect) -> Result<HilbertConfig> {
        if !(1..=31).contains(&order) {
            return Err(Error::invalid(format!("hilbert order must be in 1..=31, got {order}")));
        }
        if domain.is_empty() {
            return Err(Error::DegenerateRegion("hilbert domain must have positive area".into()));
        }
        Ok(HilbertConfig { order, domain })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn domain(&self) -> &Rect {
        &self.domain
    }

    /// Cells per axis (2^order).
    pub fn side(&self) -> u64 {
        1u64 << self.order
    }

    /// Total number of cells (4^order); curve indices live in `[0, total)`.
    pub fn total_cells(&self) -> u64 {
        1u64 << (2 * self.order)
    }

    fn cell_of(&self, p: Point) -> Result<(u64, u64)> {
        if !self.domain.contains(p) {
            return Err(Error::invalid(format!(
                "point ({}, {}) outside hilbert domain",
                p.x, p.y
            )));
        }
        let n = self.side() as f64;
        let fx = (p.x - self.domain.x_lo) / self.domain.width() * n;
        let fy = (p.y - self.domain.y_lo) / self.domain.height() * n;
        // In-domain points map inside the grid; clamp shields the rounding
        // edge where fx lands exactly on n.
        let ix = (fx.floor() as u64).min(self.side() - 1);
        let iy = (fy.floor() as u64).min(self.side() - 1);
        Ok((ix, iy))
    }

    /// Grid edge coordinate along x; `i` ranges over `0..=side`. The last
    /// edge is the exact domain bound so the decoded cells tile the domain.
    fn x_edge(&self, i: u64) -> f64 {
        if i == self.side() {
            self.domain.x_hi
        } else {
            self.domain.x_lo + i as f64 / self.side() as f64 * self.domain.width()
        }
    }

    fn y_edge(&self, i: u64) -> f64 {
        if i == self.side() {
            self.domain.y_hi
        } else {
            self.domain.y_lo + i as f64 / self.side() as f64 * self.domain.height()
        }
    }

    /// Rectangle of a run of cells given in grid units (inclusive cell ranges).
    fn cell_span_rect(&self, x0: u64, x1: u64, y0: u64, y1: u64) -> Rect {
        Rect {
            x_lo: self.x_edge(x0),
            x_hi: self.x_edge(x1 + 1),
            y_lo: self.y_edge(y0),
            y_hi: self.y_edge(y1 + 1),
        }
    }

    /// Hilbert index of the cell containing `p`. Errors when `p` lies outside
    /// the domain (half-open, so the upper edges are outside).
    pub fn encode(&self, p: Point) -> Result<u64> {
        let (ix, iy) = self.cell_of(p)?;
        Ok(xy_to_d(self.order, ix, iy))
    }

    /// Grid-cell rectangle of a curve index, in data coordinates.
    pub fn decode(&self, idx: u64) -> Result<Rect> {
        if idx >= self.total_cells() {
            return Err(Error::invalid(format!(
                "hilbert index {idx} out of range for order {}",
                self.order
            )));
        }
        let (x, y) = d_to_xy(self.order, idx);
        Ok(self.cell_span_rect(x, x, y, y))
    }

    /// Minimal rectangle covering every cell with index in `[idx_lo, idx_hi]`
    /// (inclusive).
    ///
    /// The range is decomposed greedily into maximal aligned blocks of size
    /// 4^j; each such block is one cell of the order `k-j` curve and covers
    /// an axis-aligned square of side 2^j fine cells.
    pub fn bounding_box(&self, idx_lo: u64, idx_hi: u64) -> Result<Rect> {
        if idx_lo > idx_hi {
            return Err(Error::invalid(format!("index range [{idx_lo}, {idx_hi}] is reversed")));
        }
        if idx_hi >= self.total_cells() {
            return Err(Error::invalid(format!(
                "hilbert index {idx_hi} out of range for order {}",
                self.order
            )));
        }
        let mut bbox: Option<(u64, u64, u64, u64)> = None;
        let mut a = idx_lo;
        let end = idx_hi + 1;
        while a < end {
            // Largest aligned block starting at `a` that fits in the range.
            let mut j = 0u32;
            while j < self.order {
                let block = 1u64 << (2 * (j + 1));
                if a % block != 0 || a + block > end {
                    break;
                }
                j += 1;
            }
            let side = 1u64 << j;
            let coarse_cell = a >> (2 * j);
            let (cx, cy) = d_to_xy(self.order - j, coarse_cell);
            let (x0, y0) = (cx * side, cy * side);
            let (x1, y1) = (x0 + side - 1, y0 + side - 1);
            bbox = Some(match bbox {
                None => (x0, x1, y0, y1),
                Some((bx0, bx1, by0, by1)) => {
                    (bx0.min(x0), bx1.max(x1), by0.min(y0), by1.max(y1))
                }
            });
            a += 1u64 << (2 * j);
        }
        let (x0, x1, y0, y1) = bbox.expect("nonempty range");
        Ok(self.cell_span_rect(x0, x1, y0, y1))
    }
}
