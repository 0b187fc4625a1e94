//! 2D points and axis-aligned rectangles with half-open semantics.
//!
//! Every rectangle is the point set `[x_lo, x_hi) × [y_lo, y_hi)`. A point
//! that lands exactly on a split coordinate therefore belongs to the
//! upper/right side, which makes any split of a rectangle into children a
//! disjoint, exhaustive partition.

use crate::error::{Error, Result};

/// A 2D point in data units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Point {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Axis-aligned rectangle `[x_lo, x_hi) × [y_lo, y_hi)`.
///
/// Zero-width or zero-height rectangles denote the empty point set. They
/// arise as intersection results and as children of clamped data-dependent
/// splits; `relation` treats them as disjoint from everything.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

/// How rectangle `b` sits relative to rectangle `a` under half-open semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RectRelation {
    Disjoint,
    /// Every point of `b` is a point of `a`.
    AContainsB,
    PartialOverlap,
}

impl Rect {
    pub fn new(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> Result<Rect> {
        let r = Rect { x_lo, x_hi, y_lo, y_hi };
        if ![x_lo, x_hi, y_lo, y_hi].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("rectangle coordinates must be finite"));
        }
        if x_lo > x_hi || y_lo > y_hi {
            return Err(Error::invalid(format!(
                "rectangle bounds out of order: [{x_lo}, {x_hi}) x [{y_lo}, {y_hi})"
            )));
        }
        Ok(r)
    }

    pub fn width(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    pub fn height(&self) -> f64 {
        self.y_hi - self.y_lo
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// True when the rectangle denotes the empty point set.
    pub fn is_empty(&self) -> bool {
        self.x_lo >= self.x_hi || self.y_lo >= self.y_hi
    }

    /// Membership test: `x_lo <= p.x < x_hi` and `y_lo <= p.y < y_hi`.
    pub fn contains(&self, p: Point) -> bool {
        self.x_lo <= p.x && p.x < self.x_hi && self.y_lo <= p.y && p.y < self.y_hi
    }

    /// Intersection as a rectangle; `None` when the overlap is empty.
    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let r = Rect {
            x_lo: self.x_lo.max(other.x_lo),
            x_hi: self.x_hi.min(other.x_hi),
            y_lo: self.y_lo.max(other.y_lo),
            y_hi: self.y_hi.min(other.y_hi),
        };
        if r.is_empty() {
            None
        } else {
            Some(r)
        }
    }
}

/// Classifies `b` against `a`: disjoint, contained in `a`, or partial.
///
/// Containment is point-set containment of half-open rectangles, so an
/// empty `b` never counts as contained and never counts as overlapping.
pub fn relation(a: &Rect, b: &Rect) -> RectRelation {
    if a.is_empty() || b.is_empty() {
        return RectRelation::Disjoint;
    }
    match a.intersect(b) {
        None => RectRelation::Disjoint,
        Some(i) => {
            if i == *b {
                RectRelation::AContainsB
            } else {
                RectRelation::PartialOverlap
            }
        }
    }
}

/// Fraction of `leaf`'s area covered by `q`: `area(leaf ∩ q) / area(leaf)`.
///
/// This is the uniformity assumption used when a query partially overlaps a
/// leaf region. Errors on a zero-area leaf.
pub fn overlap_fraction(leaf: &Rect, q: &Rect) -> Result<f64> {
    let denom = leaf.area();
    if !(denom > 0.0) {
        return Err(Error::DegenerateRegion(format!(
            "overlap_fraction on zero-area leaf [{}, {}) x [{}, {})",
            leaf.x_lo, leaf.x_hi, leaf.y_lo, leaf.y_hi
        )));
    }
    let inter = match leaf.intersect(q) {
        None => return Ok(0.0),
        Some(i) => i,
    };
    Ok(inter.area() / denom)
}
