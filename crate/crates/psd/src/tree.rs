//! Construction of complete private spatial decomposition trees.
//!
//! All trees here have fanout 4 and a fixed height `h` (leaves at level 0,
//! root at level `h`). Counts are released per level through the Laplace
//! mechanism wherever the budget plan assigns `ε_i^c > 0`. Data-dependent
//! splits are released through a private median mechanism; one flattened
//! level performs a private x-split followed by private y-splits of both
//! halves, so its budget `ε_i^m` is divided evenly between the two
//! constituent binary splits (the two y-splits act on disjoint halves and
//! share one charge).
//!
//! Every node is split even when empty: the post-processing step requires a
//! complete tree, and pruning happens only after it. Split values are
//! released exactly as the mechanism produced them and become part of the
//! public tree description.
//!
//! Randomness discipline: each node derives its own stream from its parent's
//! stream by child index, and separate substreams for median draws and the
//! count draw, so no node's noise depends on what happens elsewhere in the
//! tree.

use std::fmt::Write as _;

use crate::budget::{audit_path_sum, BudgetPlan};
use crate::error::{Error, Result};
use crate::geom::{Point, Rect};
use crate::hilbert::HilbertConfig;
use crate::median::{cell_median, MechanismConfig, MedianKind, ValueSet};
use crate::noise::{noisy_count, RandomSource};

const TAG_MEDIAN: u64 = 1;
const TAG_COUNT: u64 = 2;
const TAG_GRID: u64 = 3;
const TAG_CHILD_BASE: u64 = 0x10;

/// Guard against accidentally gigantic trees: 4^12 leaves is ~17M nodes.
const MAX_HEIGHT: usize = 12;

/// Cap on global noisy-grid size for the cell-based method.
const MAX_GRID_CELLS: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeKind {
    Quadtree,
    KdFlattened,
    Hybrid { switch_level: usize },
    HilbertRtree,
}

impl TreeKind {
    pub fn is_data_dependent(&self) -> bool {
        !matches!(self, TreeKind::Quadtree | TreeKind::Hybrid { switch_level: 0 })
    }
}

/// Released split metadata of an internal node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Split {
    /// Midpoint quadrant split (data-independent).
    Midpoint,
    /// Private x-split then private y-splits of each half.
    Kd { x: f64, y_left: f64, y_right: f64 },
    /// Private cuts of a Hilbert index range: `first` separates the halves,
    /// `second_left`/`second_right` cut each half again.
    Hilbert { first: u64, second_left: u64, second_right: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub region: Rect,
    pub level: u32,
    /// Raw noisy count `Y_v`; absent on levels that release no counts.
    pub raw: Option<f64>,
    /// Post-processed count `β_v`; populated by the OLS pass.
    pub post: Option<f64>,
    pub split: Option<Split>,
    /// Half-open Hilbert index range `[a, b)`; Hilbert R-trees only.
    pub hilbert_range: Option<(u64, u64)>,
    pub children: Vec<Node>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// The count to use when answering queries.
    pub fn count(&self, post: bool) -> Option<f64> {
        if post {
            self.post
        } else {
            self.raw
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(Node::node_count).sum::<usize>()
    }
}

/// A complete private spatial decomposition: the released tree plus the
/// budget plan it was built under.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdTree {
    pub kind: TreeKind,
    pub fanout: usize,
    pub height: usize,
    pub domain: Rect,
    pub plan: BudgetPlan,
    pub mechanism: Option<MechanismConfig>,
    pub hilbert: Option<HilbertConfig>,
    /// Total δ along a root-to-leaf path (nonzero only for smooth-sensitivity
    /// splits; counts and the other mechanisms are pure ε-DP).
    pub delta_total: f64,
    pub root: Node,
}

/// Privacy statement of a released tree.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyReport {
    pub epsilon: f64,
    pub delta: f64,
    pub count_eps: Vec<f64>,
    pub median_eps: Vec<f64>,
}

impl PsdTree {
    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    /// Checks the structural contract of an unpruned tree: every internal
    /// node has exactly `fanout` children and every leaf sits at level 0.
    pub fn validate_complete(&self) -> Result<()> {
        fn walk(node: &Node, fanout: usize) -> Result<()> {
            if node.is_leaf() {
                if node.level != 0 {
                    return Err(Error::InvalidTree(format!(
                        "leaf at level {} in a tree that should be complete",
                        node.level
                    )));
                }
                return Ok(());
            }
            if node.children.len() != fanout {
                return Err(Error::InvalidTree(format!(
                    "internal node at level {} has {} children, expected {fanout}",
                    node.level,
                    node.children.len()
                )));
            }
            for c in &node.children {
                if c.level + 1 != node.level {
                    return Err(Error::InvalidTree("child level must be parent level - 1".into()));
                }
                walk(c, fanout)?;
            }
            Ok(())
        }
        if self.root.level as usize != self.height {
            return Err(Error::InvalidTree(format!(
                "root level {} disagrees with height {}",
                self.root.level, self.height
            )));
        }
        walk(&self.root, self.fanout)
    }

    /// Audits the plan's path sum and the tree's release pattern (a raw count
    /// is present exactly where the plan pays for one).
    pub fn privacy_report(&self) -> Result<PrivacyReport> {
        let epsilon = audit_path_sum(&self.plan)?;
        fn walk(node: &Node, plan: &BudgetPlan) -> Result<()> {
            let expect = plan.count_eps_at(node.level as usize) > 0.0;
            if node.raw.is_some() != expect {
                return Err(Error::BudgetAudit(format!(
                    "level {}: released count {} but the plan {} one",
                    node.level,
                    if node.raw.is_some() { "present" } else { "absent" },
                    if expect { "pays for" } else { "does not pay for" },
                )));
            }
            node.children.iter().try_for_each(|c| walk(c, plan))
        }
        walk(&self.root, &self.plan)?;
        Ok(PrivacyReport {
            epsilon,
            delta: self.delta_total,
            count_eps: self.plan.count_eps().to_vec(),
            median_eps: self.plan.median_eps().to_vec(),
        })
    }
}

fn validate_inputs(points: &[Point], domain: &Rect, h: usize, plan: &BudgetPlan) -> Result<()> {
    if domain.is_empty() {
        return Err(Error::DegenerateRegion("tree domain must have positive area".into()));
    }
    if h > MAX_HEIGHT {
        return Err(Error::invalid(format!("height {h} exceeds the supported maximum {MAX_HEIGHT}")));
    }
    if plan.height() != h {
        return Err(Error::invalid(format!(
            "plan height {} does not match tree height {h}",
            plan.height()
        )));
    }
    if let Some(p) = points.iter().find(|p| !domain.contains(**p)) {
        return Err(Error::invalid(format!("point ({}, {}) lies outside the domain", p.x, p.y)));
    }
    Ok(())
}

/// Partitions `pts` in place so elements satisfying `pred` come first;
/// returns the boundary index.
fn partition_in_place<F: Fn(&Point) -> bool>(pts: &mut [Point], pred: F) -> usize {
    let mut i = 0;
    for j in 0..pts.len() {
        if pred(&pts[j]) {
            pts.swap(i, j);
            i += 1;
        }
    }
    i
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
}

/// Global noisy grid backing the cell-based split method. Counts are
/// privatized once (sensitivity 1 per cell, each point in one cell) and then
/// reused by every node as plain post-processing.
#[derive(Debug, Clone)]
struct NoisyGrid {
    x_edges: Vec<f64>,
    y_edges: Vec<f64>,
    /// Row-major `[ix * ny + iy]`.
    counts: Vec<f64>,
}

impl NoisyGrid {
    fn build(
        points: &[Point],
        domain: &Rect,
        cell_length: f64,
        eps: f64,
        src: &mut RandomSource,
    ) -> Result<NoisyGrid> {
        let nx = (domain.width() / cell_length).ceil().max(1.0) as usize;
        let ny = (domain.height() / cell_length).ceil().max(1.0) as usize;
        if nx.saturating_mul(ny) > MAX_GRID_CELLS {
            return Err(Error::invalid(format!(
                "cell grid {nx}x{ny} exceeds {MAX_GRID_CELLS} cells; increase cell_length"
            )));
        }
        let edge = |lo: f64, hi: f64, n: usize, i: usize| -> f64 {
            if i == n {
                hi
            } else {
                (lo + i as f64 * cell_length).min(hi)
            }
        };
        let x_edges: Vec<f64> = (0..=nx).map(|i| edge(domain.x_lo, domain.x_hi, nx, i)).collect();
        let y_edges: Vec<f64> = (0..=ny).map(|i| edge(domain.y_lo, domain.y_hi, ny, i)).collect();
        let mut counts = vec![0.0f64; nx * ny];
        for p in points {
            let ix = (((p.x - domain.x_lo) / cell_length).floor() as usize).min(nx - 1);
            let iy = (((p.y - domain.y_lo) / cell_length).floor() as usize).min(ny - 1);
            counts[ix * ny + iy] += 1.0;
        }
        for c in counts.iter_mut() {
            *c = noisy_count(src, *c as u64, eps)?;
        }
        Ok(NoisyGrid { x_edges, y_edges, counts })
    }

    fn nx(&self) -> usize {
        self.x_edges.len() - 1
    }

    fn ny(&self) -> usize {
        self.y_edges.len() - 1
    }

    /// Median along `axis` of the grid mass inside `region`, with cells cut
    /// by the region boundary weighted by their overlap fraction.
    fn axis_median(&self, region: &Rect, axis: Axis) -> Result<f64> {
        let (main_edges, cross_edges, stride_main, stride_cross, main_lo, main_hi) = match axis {
            Axis::X => (&self.x_edges, &self.y_edges, self.ny(), 1usize, region.x_lo, region.x_hi),
            Axis::Y => (&self.y_edges, &self.x_edges, 1usize, self.ny(), region.y_lo, region.y_hi),
        };
        let (cross_lo, cross_hi) = match axis {
            Axis::X => (region.y_lo, region.y_hi),
            Axis::Y => (region.x_lo, region.x_hi),
        };
        let span = |edges: &[f64], lo: f64, hi: f64| -> (usize, usize) {
            let n = edges.len() - 1;
            let first = edges[..n].partition_point(|&e| e <= lo).saturating_sub(1);
            let last = edges[1..].partition_point(|&e| e < hi).min(n - 1);
            (first, last.max(first))
        };
        let (m0, m1) = span(main_edges, main_lo, main_hi);
        let (c0, c1) = span(cross_edges, cross_lo, cross_hi);

        let overlap = |a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64| -> f64 {
            (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0)
        };
        let mut proj = Vec::with_capacity(m1 - m0 + 1);
        let mut edges = Vec::with_capacity(m1 - m0 + 2);
        for mi in m0..=m1 {
            let (e_lo, e_hi) = (main_edges[mi], main_edges[mi + 1]);
            let main_frac = overlap(e_lo, e_hi, main_lo, main_hi) / (e_hi - e_lo).max(f64::MIN_POSITIVE);
            let mut mass = 0.0;
            for ci in c0..=c1 {
                let (f_lo, f_hi) = (cross_edges[ci], cross_edges[ci + 1]);
                let cross_frac =
                    overlap(f_lo, f_hi, cross_lo, cross_hi) / (f_hi - f_lo).max(f64::MIN_POSITIVE);
                mass += self.counts[mi * stride_main + ci * stride_cross] * main_frac * cross_frac;
            }
            proj.push(mass);
            edges.push(e_lo.max(main_lo));
        }
        edges.push(main_edges[m1 + 1].min(main_hi));
        cell_median(&proj, &edges)
    }
}

/// Shared state of one tree construction.
struct BuildCtx<'a> {
    h: usize,
    /// Node levels strictly above `h - switch_level` split on private medians.
    switch_level: usize,
    plan: &'a BudgetPlan,
    mechanism: Option<&'a MechanismConfig>,
    grid: Option<NoisyGrid>,
}

impl BuildCtx<'_> {
    fn kd_at(&self, level: u32) -> bool {
        level as usize > self.h - self.switch_level
    }

    /// One private split along `axis` within `[lo, hi]`, paying `eps_split`.
    /// Degenerate extents skip the mechanism and return the boundary.
    fn axis_split(
        &self,
        pts: &[Point],
        region: &Rect,
        axis: Axis,
        eps_split: f64,
        msrc: &mut RandomSource,
    ) -> Result<f64> {
        let (lo, hi) = match axis {
            Axis::X => (region.x_lo, region.x_hi),
            Axis::Y => (region.y_lo, region.y_hi),
        };
        if !(hi > lo) {
            return Ok(lo);
        }
        let value = if let Some(grid) = &self.grid {
            grid.axis_median(region, axis)?
        } else {
            let mech = self.mechanism.expect("data-dependent build without a mechanism");
            let coords: Vec<f64> = pts
                .iter()
                .map(|p| match axis {
                    Axis::X => p.x,
                    Axis::Y => p.y,
                })
                .collect();
            let c = ValueSet::new(coords, lo, hi)?;
            mech.split_value(msrc, &c, eps_split)?
        };
        Ok(value.clamp(lo, hi))
    }

    fn build_node(
        &self,
        pts: &mut [Point],
        region: Rect,
        level: u32,
        src: &RandomSource,
    ) -> Result<Node> {
        let raw = if self.plan.count_eps_at(level as usize) > 0.0 {
            let mut csrc = src.derive(TAG_COUNT);
            Some(noisy_count(&mut csrc, pts.len() as u64, self.plan.count_eps_at(level as usize))?)
        } else {
            None
        };
        if level == 0 {
            return Ok(Node {
                region,
                level,
                raw,
                post: None,
                split: None,
                hilbert_range: None,
                children: Vec::new(),
            });
        }

        let (split, sx, sy_left, sy_right) = if self.kd_at(level) {
            let eps_level = self.plan.median_eps_at(level as usize);
            let eps_split = eps_level / 2.0;
            let mut msrc = src.derive(TAG_MEDIAN);
            let sx = self.axis_split(pts, &region, Axis::X, eps_split, &mut msrc)?;
            let cut = partition_in_place(pts, |p| p.x < sx);
            let left_region = Rect { x_hi: sx, ..region };
            let right_region = Rect { x_lo: sx, ..region };
            let (left, right) = pts.split_at_mut(cut);
            let syl = self.axis_split(left, &left_region, Axis::Y, eps_split, &mut msrc)?;
            let syr = self.axis_split(right, &right_region, Axis::Y, eps_split, &mut msrc)?;
            (Split::Kd { x: sx, y_left: syl, y_right: syr }, sx, syl, syr)
        } else {
            let sx = (region.x_lo + region.x_hi) / 2.0;
            let sy = (region.y_lo + region.y_hi) / 2.0;
            partition_in_place(pts, |p| p.x < sx);
            (Split::Midpoint, sx, sy, sy)
        };

        // Children in fixed order: (x<sx, y<sy_l), (x<sx, y>=sy_l),
        // (x>=sx, y<sy_r), (x>=sx, y>=sy_r).
        let cut_x = partition_in_place(pts, |p| p.x < sx);
        let (left, right) = pts.split_at_mut(cut_x);
        let cut_l = partition_in_place(left, |p| p.y < sy_left);
        let cut_r = partition_in_place(right, |p| p.y < sy_right);
        let regions = [
            Rect { x_hi: sx, y_hi: sy_left, ..region },
            Rect { x_hi: sx, y_lo: sy_left, ..region },
            Rect { x_lo: sx, y_hi: sy_right, ..region },
            Rect { x_lo: sx, y_lo: sy_right, ..region },
        ];
        let (ll, lh) = left.split_at_mut(cut_l);
        let (rl, rh) = right.split_at_mut(cut_r);
        let slices = [ll, lh, rl, rh];

        let mut children = Vec::with_capacity(4);
        for (idx, (sub_region, slice)) in regions.into_iter().zip(slices).enumerate() {
            let child_src = src.derive(TAG_CHILD_BASE + idx as u64);
            children.push(self.build_node(slice, sub_region, level - 1, &child_src)?);
        }
        Ok(Node {
            region,
            level,
            raw,
            post: None,
            split: Some(split),
            hilbert_range: None,
            children,
        })
    }
}

fn build_partitioned(
    kind: TreeKind,
    points: &[Point],
    domain: &Rect,
    h: usize,
    switch_level: usize,
    plan: &BudgetPlan,
    mechanism: Option<&MechanismConfig>,
    src: &RandomSource,
) -> Result<PsdTree> {
    validate_inputs(points, domain, h, plan)?;
    let grid = match mechanism.map(|m| m.kind) {
        Some(MedianKind::CellBased { cell_length }) if switch_level > 0 => {
            let eps = plan.median_total();
            if !(eps > 0.0) {
                return Err(Error::invalid("cell-based splits need a positive median budget"));
            }
            let mut gsrc = src.derive(TAG_GRID);
            Some(NoisyGrid::build(points, domain, cell_length, eps, &mut gsrc)?)
        }
        _ => {
            // Per-level mechanisms draw from the per-level median budget.
            for i in 1..=h {
                let on_kd_level = i > h - switch_level;
                let eps = plan.median_eps_at(i);
                if on_kd_level && !(eps > 0.0) {
                    return Err(Error::invalid(format!(
                        "level {i} performs a private split but has no median budget"
                    )));
                }
                if !on_kd_level && eps != 0.0 {
                    return Err(Error::invalid(format!(
                        "level {i} splits at midpoints but carries median budget {eps}"
                    )));
                }
            }
            None
        }
    };
    let ctx = BuildCtx { h, switch_level, plan, mechanism, grid };
    let mut pts = points.to_vec();
    let root = ctx.build_node(&mut pts, *domain, h as u32, src)?;
    let delta_per_split = mechanism.map_or(0.0, MechanismConfig::delta_per_split);
    Ok(PsdTree {
        kind,
        fanout: 4,
        height: h,
        domain: *domain,
        plan: plan.clone(),
        mechanism: mechanism.cloned(),
        hilbert: None,
        // Two split invocations per data-dependent level lie on any path.
        delta_total: 2.0 * switch_level as f64 * delta_per_split,
        root,
    })
}

/// Complete data-independent quadtree with midpoint splits.
pub fn build_quadtree(
    points: &[Point],
    domain: &Rect,
    h: usize,
    plan: &BudgetPlan,
    src: &RandomSource,
) -> Result<PsdTree> {
    if plan.median_total() != 0.0 {
        return Err(Error::invalid("a quadtree releases no medians; median budget must be zero"));
    }
    build_partitioned(TreeKind::Quadtree, points, domain, h, 0, plan, None, src)
}

/// Flattened kd-tree: every level is a private x-split followed by private
/// y-splits of both halves (fanout 4).
pub fn build_kd_flattened(
    points: &[Point],
    domain: &Rect,
    h: usize,
    plan: &BudgetPlan,
    mechanism: &MechanismConfig,
    src: &RandomSource,
) -> Result<PsdTree> {
    if h == 0 {
        return Err(Error::invalid("a kd-tree needs at least one internal level"));
    }
    build_partitioned(TreeKind::KdFlattened, points, domain, h, h, plan, Some(mechanism), src)
}

/// Hybrid tree: private kd splits for the top `switch_level` levels, then
/// midpoint splits below. `switch_level = 0` degenerates to a quadtree and
/// `switch_level = h` to a flattened kd-tree, under the same seed discipline.
pub fn build_hybrid(
    points: &[Point],
    domain: &Rect,
    h: usize,
    switch_level: usize,
    plan: &BudgetPlan,
    mechanism: &MechanismConfig,
    src: &RandomSource,
) -> Result<PsdTree> {
    if switch_level > h {
        return Err(Error::invalid(format!("switch level {switch_level} exceeds height {h}")));
    }
    if switch_level == 0 && plan.median_total() != 0.0 {
        return Err(Error::invalid("switch level 0 releases no medians; median budget must be zero"));
    }
    let mech = if switch_level == 0 { None } else { Some(mechanism) };
    build_partitioned(TreeKind::Hybrid { switch_level }, points, domain, h, switch_level, plan, mech, src)
}

/// Largest Hilbert order whose indices stay exactly representable as f64
/// (the median mechanisms work on indices as reals).
const MAX_RTREE_ORDER: u32 = 26;

/// Hilbert R-tree: a flattened 1D kd-tree over Hilbert indices. Each node
/// covers a half-open index range; its rectangle is the bounding box of the
/// range's cells, which may overlap between siblings (queries prune by box
/// but count by the disjoint index ranges).
pub fn build_hilbert_rtree(
    points: &[Point],
    domain: &Rect,
    h: usize,
    plan: &BudgetPlan,
    mechanism: &MechanismConfig,
    hilbert: &HilbertConfig,
    src: &RandomSource,
) -> Result<PsdTree> {
    validate_inputs(points, domain, h, plan)?;
    if h == 0 {
        return Err(Error::invalid("a Hilbert R-tree needs at least one internal level"));
    }
    if hilbert.domain() != domain {
        return Err(Error::invalid("hilbert configuration domain must match the tree domain"));
    }
    if hilbert.order() > MAX_RTREE_ORDER {
        return Err(Error::invalid(format!(
            "hilbert order {} too large for exact index arithmetic (max {MAX_RTREE_ORDER})",
            hilbert.order()
        )));
    }
    if matches!(mechanism.kind, MedianKind::CellBased { .. }) {
        return Err(Error::invalid(
            "the cell-based method is not defined over Hilbert index space; use em/ss/nm",
        ));
    }
    for i in 1..=h {
        if !(plan.median_eps_at(i) > 0.0) {
            return Err(Error::invalid(format!(
                "level {i} performs a private split but has no median budget"
            )));
        }
    }

    let mut idx: Vec<u64> = points.iter().map(|p| hilbert.encode(*p)).collect::<Result<_>>()?;
    idx.sort_unstable();

    struct HCtx<'a> {
        plan: &'a BudgetPlan,
        mech: &'a MechanismConfig,
        hilbert: &'a HilbertConfig,
    }

    impl HCtx<'_> {
        fn region_of(&self, a: u64, b: u64) -> Result<Rect> {
            if a >= b {
                // Empty index range: an empty rectangle that every query skips.
                let d = self.hilbert.domain();
                return Ok(Rect { x_lo: d.x_lo, x_hi: d.x_lo, y_lo: d.y_lo, y_hi: d.y_lo });
            }
            self.hilbert.bounding_box(a, b - 1)
        }

        /// One private cut of `[a, b)` on the index values in `vals`.
        fn cut(
            &self,
            vals: &[u64],
            a: u64,
            b: u64,
            eps_split: f64,
            msrc: &mut RandomSource,
        ) -> Result<u64> {
            if b <= a + 1 {
                return Ok(b); // nothing to divide
            }
            let c = ValueSet::new(vals.iter().map(|&v| v as f64).collect(), a as f64, b as f64)?;
            let v = self.mech.split_value(msrc, &c, eps_split)?;
            Ok((v.ceil() as u64).clamp(a, b))
        }

        fn build(
            &self,
            vals: &[u64],
            a: u64,
            b: u64,
            level: u32,
            src: &RandomSource,
        ) -> Result<Node> {
            let raw = if self.plan.count_eps_at(level as usize) > 0.0 {
                let mut csrc = src.derive(TAG_COUNT);
                Some(noisy_count(&mut csrc, vals.len() as u64, self.plan.count_eps_at(level as usize))?)
            } else {
                None
            };
            let region = self.region_of(a, b)?;
            if level == 0 {
                return Ok(Node {
                    region,
                    level,
                    raw,
                    post: None,
                    split: None,
                    hilbert_range: Some((a, b)),
                    children: Vec::new(),
                });
            }
            let eps_split = self.plan.median_eps_at(level as usize) / 2.0;
            let mut msrc = src.derive(TAG_MEDIAN);
            let first = self.cut(vals, a, b, eps_split, &mut msrc)?;
            let mid = vals.partition_point(|&v| v < first);
            let (lo_vals, hi_vals) = vals.split_at(mid);
            let second_left = self.cut(lo_vals, a, first, eps_split, &mut msrc)?;
            let second_right = self.cut(hi_vals, first, b, eps_split, &mut msrc)?;

            let bounds = [a, second_left.min(first), first, second_right.max(first), b];
            let mut children = Vec::with_capacity(4);
            for i in 0..4 {
                let (ca, cb) = (bounds[i], bounds[i + 1].max(bounds[i]));
                let lo = vals.partition_point(|&v| v < ca);
                let hi = vals.partition_point(|&v| v < cb);
                let child_src = src.derive(TAG_CHILD_BASE + i as u64);
                children.push(self.build(&vals[lo..hi], ca, cb, level - 1, &child_src)?);
            }
            Ok(Node {
                region,
                level,
                raw,
                post: None,
                split: Some(Split::Hilbert { first, second_left, second_right }),
                hilbert_range: Some((a, b)),
                children,
            })
        }
    }

    let ctx = HCtx { plan, mech: mechanism, hilbert };
    let root = ctx.build(&idx, 0, hilbert.total_cells(), h as u32, src)?;
    Ok(PsdTree {
        kind: TreeKind::HilbertRtree,
        fanout: 4,
        height: h,
        domain: *domain,
        plan: plan.clone(),
        mechanism: Some(*mechanism),
        hilbert: Some(hilbert.clone()),
        delta_total: 2.0 * h as f64 * mechanism.delta_per_split(),
        root,
    })
}

/// Removes all descendants of any node whose post-processed count falls
/// below `threshold`; such a node becomes a leaf. Counts are unchanged.
/// Errors when called before post-processing.
pub fn prune(tree: &mut PsdTree, threshold: f64) -> Result<()> {
    fn walk(node: &mut Node, threshold: f64) -> Result<()> {
        let beta = node
            .post
            .ok_or_else(|| Error::InvalidTree("prune requires post-processed counts".into()))?;
        if beta < threshold {
            node.children.clear();
            return Ok(());
        }
        node.children.iter_mut().try_for_each(|c| walk(c, threshold))
    }
    walk(&mut tree.root, threshold)
}

// ---------------------------------------------------------------------------
// Serialization: a line-based text format, one record per node in preorder.
// Floats print in shortest round-trip form, so write -> read -> write is
// byte-identical for finite values.
// ---------------------------------------------------------------------------

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        None => "-".to_string(),
        Some(x) => format!("{x}"),
    }
}

fn fmt_split(s: &Option<Split>) -> String {
    match s {
        None => "-".into(),
        Some(Split::Midpoint) => "m".into(),
        Some(Split::Kd { x, y_left, y_right }) => format!("k:{x}:{y_left}:{y_right}"),
        Some(Split::Hilbert { first, second_left, second_right }) => {
            format!("h:{first}:{second_left}:{second_right}")
        }
    }
}

fn write_node(out: &mut String, node: &Node) {
    let hr = match node.hilbert_range {
        None => "-".to_string(),
        Some((a, b)) => format!("{a}:{b}"),
    };
    let _ = writeln!(
        out,
        "n {} {} {} {} {} {} {} {} {} {}",
        node.level,
        node.children.len(),
        node.region.x_lo,
        node.region.x_hi,
        node.region.y_lo,
        node.region.y_hi,
        fmt_opt(node.raw),
        fmt_opt(node.post),
        fmt_split(&node.split),
        hr,
    );
    for c in &node.children {
        write_node(out, c);
    }
}

/// Serializes a tree to the documented text format.
pub fn tree_to_string(tree: &PsdTree) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "psd-tree v1");
    let kind = match tree.kind {
        TreeKind::Quadtree => "quadtree".to_string(),
        TreeKind::KdFlattened => "kd-flattened".to_string(),
        TreeKind::Hybrid { switch_level } => format!("hybrid {switch_level}"),
        TreeKind::HilbertRtree => "hilbert-rtree".to_string(),
    };
    let _ = writeln!(out, "kind {kind}");
    let _ = writeln!(out, "height {}", tree.height);
    let _ = writeln!(out, "fanout {}", tree.fanout);
    let _ = writeln!(out, "epsilon {}", tree.plan.epsilon());
    let _ = writeln!(out, "delta {}", tree.delta_total);
    let _ = writeln!(
        out,
        "domain {} {} {} {}",
        tree.domain.x_lo, tree.domain.x_hi, tree.domain.y_lo, tree.domain.y_hi
    );
    let join = |v: &[f64]| v.iter().map(|e| format!("{e}")).collect::<Vec<_>>().join(" ");
    let _ = writeln!(out, "count-eps {}", join(tree.plan.count_eps()));
    let _ = writeln!(out, "median-eps {}", join(tree.plan.median_eps()));
    let mech = match tree.mechanism {
        None => "none".to_string(),
        Some(MechanismConfig { kind, sample_rate }) => match kind {
            MedianKind::Exponential => format!("em {sample_rate}"),
            MedianKind::SmoothSensitivity { delta } => format!("ss {sample_rate} {delta}"),
            MedianKind::CellBased { cell_length } => format!("cell {sample_rate} {cell_length}"),
            MedianKind::NoisyMean => format!("nm {sample_rate}"),
            MedianKind::LaplaceBaseline => format!("laplace {sample_rate}"),
        },
    };
    let _ = writeln!(out, "mechanism {mech}");
    if let Some(hc) = &tree.hilbert {
        let _ = writeln!(out, "hilbert-order {}", hc.order());
    }
    let _ = writeln!(out, "nodes {}", tree.node_count());
    write_node(&mut out, &tree.root);
    out
}

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> LineReader<'a> {
    fn next(&mut self) -> Result<&'a str> {
        loop {
            self.line_no += 1;
            match self.lines.next() {
                None => {
                    return Err(Error::Parse {
                        line: self.line_no,
                        message: "unexpected end of tree file".into(),
                    })
                }
                Some(l) if l.trim().is_empty() => continue,
                Some(l) => return Ok(l),
            }
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { line: self.line_no, message: message.into() }
    }
}

fn parse_f64(r: &LineReader, tok: &str) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| r.err(format!("expected a number, got {tok:?}")))
}

fn parse_opt(r: &LineReader, tok: &str) -> Result<Option<f64>> {
    if tok == "-" {
        Ok(None)
    } else {
        parse_f64(r, tok).map(Some)
    }
}

fn parse_node(r: &mut LineReader) -> Result<Node> {
    let line = r.next()?;
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != 11 || toks[0] != "n" {
        return Err(r.err(format!("malformed node record: {line:?}")));
    }
    let level: u32 = toks[1].parse().map_err(|_| r.err("bad level"))?;
    let n_children: usize = toks[2].parse().map_err(|_| r.err("bad child count"))?;
    let region = Rect {
        x_lo: parse_f64(r, toks[3])?,
        x_hi: parse_f64(r, toks[4])?,
        y_lo: parse_f64(r, toks[5])?,
        y_hi: parse_f64(r, toks[6])?,
    };
    let raw = parse_opt(r, toks[7])?;
    let post = parse_opt(r, toks[8])?;
    let split = match toks[9] {
        "-" => None,
        "m" => Some(Split::Midpoint),
        s if s.starts_with("k:") => {
            let parts: Vec<&str> = s[2..].split(':').collect();
            if parts.len() != 3 {
                return Err(r.err("malformed kd split"));
            }
            Some(Split::Kd {
                x: parse_f64(r, parts[0])?,
                y_left: parse_f64(r, parts[1])?,
                y_right: parse_f64(r, parts[2])?,
            })
        }
        s if s.starts_with("h:") => {
            let parts: Vec<&str> = s[2..].split(':').collect();
            if parts.len() != 3 {
                return Err(r.err("malformed hilbert split"));
            }
            let q = |t: &str| t.parse::<u64>().map_err(|_| r.err("bad hilbert cut"));
            Some(Split::Hilbert {
                first: q(parts[0])?,
                second_left: q(parts[1])?,
                second_right: q(parts[2])?,
            })
        }
        other => return Err(r.err(format!("unknown split token {other:?}"))),
    };
    let hilbert_range = match toks[10] {
        "-" => None,
        s => {
            let (a, b) = s
                .split_once(':')
                .ok_or_else(|| r.err("malformed hilbert range"))?;
            Some((
                a.parse::<u64>().map_err(|_| r.err("bad hilbert range"))?,
                b.parse::<u64>().map_err(|_| r.err("bad hilbert range"))?,
            ))
        }
    };
    let mut children = Vec::with_capacity(n_children);
    for _ in 0..n_children {
        children.push(parse_node(r)?);
    }
    Ok(Node { region, level, raw, post, split, hilbert_range, children })
}

/// Parses a tree from the documented text format.
pub fn tree_from_str(s: &str) -> Result<PsdTree> {
    let mut r = LineReader { lines: s.lines(), line_no: 0 };
    if r.next()? != "psd-tree v1" {
        return Err(r.err("not a psd-tree v1 file"));
    }
    let mut kind: Option<TreeKind> = None;
    let mut height: Option<usize> = None;
    let mut fanout: usize = 4;
    let mut epsilon: Option<f64> = None;
    let mut delta: f64 = 0.0;
    let mut domain: Option<Rect> = None;
    let mut count_eps: Option<Vec<f64>> = None;
    let mut median_eps: Option<Vec<f64>> = None;
    let mut mechanism: Option<MechanismConfig> = None;
    let mut hilbert_order: Option<u32> = None;
    let nodes_declared: usize;
    loop {
        let line = r.next()?;
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "kind" => {
                let mut it = rest.split_whitespace();
                kind = Some(match it.next() {
                    Some("quadtree") => TreeKind::Quadtree,
                    Some("kd-flattened") => TreeKind::KdFlattened,
                    Some("hybrid") => TreeKind::Hybrid {
                        switch_level: it
                            .next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| r.err("hybrid kind needs a switch level"))?,
                    },
                    Some("hilbert-rtree") => TreeKind::HilbertRtree,
                    other => return Err(r.err(format!("unknown tree kind {other:?}"))),
                });
            }
            "height" => height = Some(rest.trim().parse().map_err(|_| r.err("bad height"))?),
            "fanout" => fanout = rest.trim().parse().map_err(|_| r.err("bad fanout"))?,
            "epsilon" => epsilon = Some(parse_f64(&r, rest.trim())?),
            "delta" => delta = parse_f64(&r, rest.trim())?,
            "domain" => {
                let v: Vec<f64> = rest
                    .split_whitespace()
                    .map(|t| parse_f64(&r, t))
                    .collect::<Result<_>>()?;
                if v.len() != 4 {
                    return Err(r.err("domain needs 4 coordinates"));
                }
                domain = Some(Rect { x_lo: v[0], x_hi: v[1], y_lo: v[2], y_hi: v[3] });
            }
            "count-eps" => {
                count_eps =
                    Some(rest.split_whitespace().map(|t| parse_f64(&r, t)).collect::<Result<_>>()?)
            }
            "median-eps" => {
                median_eps =
                    Some(rest.split_whitespace().map(|t| parse_f64(&r, t)).collect::<Result<_>>()?)
            }
            "mechanism" => {
                let toks: Vec<&str> = rest.split_whitespace().collect();
                mechanism = match toks.first() {
                    Some(&"none") => None,
                    Some(&name) => {
                        let p = parse_f64(&r, toks.get(1).ok_or_else(|| r.err("missing sample rate"))?)?;
                        let kind = match name {
                            "em" => MedianKind::Exponential,
                            "ss" => MedianKind::SmoothSensitivity {
                                delta: parse_f64(
                                    &r,
                                    toks.get(2).ok_or_else(|| r.err("ss needs delta"))?,
                                )?,
                            },
                            "cell" => MedianKind::CellBased {
                                cell_length: parse_f64(
                                    &r,
                                    toks.get(2).ok_or_else(|| r.err("cell needs a length"))?,
                                )?,
                            },
                            "nm" => MedianKind::NoisyMean,
                            "laplace" => MedianKind::LaplaceBaseline,
                            other => return Err(r.err(format!("unknown mechanism {other:?}"))),
                        };
                        Some(MechanismConfig::new(kind, p).map_err(|e| r.err(e.to_string()))?)
                    }
                    None => return Err(r.err("empty mechanism line")),
                };
            }
            "hilbert-order" => {
                hilbert_order = Some(rest.trim().parse().map_err(|_| r.err("bad hilbert order"))?)
            }
            "nodes" => {
                nodes_declared = rest.trim().parse().map_err(|_| r.err("bad node count"))?;
                break;
            }
            other => return Err(r.err(format!("unknown header key {other:?}"))),
        }
    }
    let kind = kind.ok_or_else(|| r.err("missing kind"))?;
    let height = height.ok_or_else(|| r.err("missing height"))?;
    let epsilon = epsilon.ok_or_else(|| r.err("missing epsilon"))?;
    let domain = domain.ok_or_else(|| r.err("missing domain"))?;
    let count_eps = count_eps.ok_or_else(|| r.err("missing count-eps"))?;
    let median_eps = median_eps.ok_or_else(|| r.err("missing median-eps"))?;
    let plan = BudgetPlan::from_parts(height, count_eps, median_eps, epsilon)
        .map_err(|e| r.err(e.to_string()))?;
    let hilbert = match (kind, hilbert_order) {
        (TreeKind::HilbertRtree, Some(order)) => {
            Some(HilbertConfig::new(order, domain).map_err(|e| r.err(e.to_string()))?)
        }
        (TreeKind::HilbertRtree, None) => return Err(r.err("hilbert tree missing hilbert-order")),
        _ => None,
    };
    let root = parse_node(&mut r)?;
    let tree = PsdTree {
        kind,
        fanout,
        height,
        domain,
        plan,
        mechanism,
        hilbert,
        delta_total: delta,
        root,
    };
    if tree.node_count() != nodes_declared {
        return Err(r.err(format!(
            "node count mismatch: header says {nodes_declared}, file has {}",
            tree.node_count()
        )));
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::{CountStrategy, MedianStrategy};
    use crate::geom::RectRelation;

    fn unit_domain() -> Rect {
        Rect::new(0.0, 1.0, 0.0, 1.0).unwrap()
    }

    fn grid_points(per_axis: usize) -> Vec<Point> {
        let mut pts = Vec::new();
        for i in 0..per_axis {
            for j in 0..per_axis {
                pts.push(Point::new(
                    (i as f64 + 0.5) / per_axis as f64,
                    (j as f64 + 0.5) / per_axis as f64,
                ));
            }
        }
        pts
    }

    fn quad_plan(h: usize, eps: f64) -> BudgetPlan {
        BudgetPlan::compose(h, eps, 1.0, &CountStrategy::Uniform, &MedianStrategy::None).unwrap()
    }

    fn kd_plan(h: usize, eps: f64) -> BudgetPlan {
        BudgetPlan::compose(h, eps, 0.7, &CountStrategy::Geometric, &MedianStrategy::UniformInternal)
            .unwrap()
    }

    fn true_count(node_region: &Rect, pts: &[Point]) -> usize {
        pts.iter().filter(|p| node_region.contains(**p)).count()
    }

    #[test]
    fn quadtree_h0_single_node() {
        let pts = grid_points(4);
        let src = RandomSource::new(1);
        let tree = build_quadtree(&pts, &unit_domain(), 0, &quad_plan(0, 1.0), &src).unwrap();
        assert_eq!(tree.node_count(), 1);
        assert!(tree.root.raw.is_some());
    }

    #[test]
    fn quadtree_noiseless_counts_are_exact_and_consistent() {
        let pts = grid_points(8);
        let src = RandomSource::noiseless(1);
        let tree = build_quadtree(&pts, &unit_domain(), 2, &quad_plan(2, 1.0), &src).unwrap();
        fn walk(node: &Node, pts: &[Point]) {
            let t = node.region_true_count(pts);
            assert_eq!(node.raw.unwrap(), t as f64);
            if !node.is_leaf() {
                let child_sum: usize = node.children.iter().map(|c| c.region_true_count(pts)).sum();
                assert_eq!(t, child_sum);
                node.children.iter().for_each(|c| walk(c, pts));
            }
        }
        impl Node {
            fn region_true_count(&self, pts: &[Point]) -> usize {
                pts.iter().filter(|p| self.region.contains(**p)).count()
            }
        }
        walk(&tree.root, &pts);
    }

    #[test]
    fn node_count_formula() {
        let pts = grid_points(4);
        let src = RandomSource::new(2);
        for h in [0usize, 1, 3, 6] {
            let tree = build_quadtree(&pts, &unit_domain(), h, &quad_plan(h, 1.0), &src).unwrap();
            let expect = (4usize.pow(h as u32 + 1) - 1) / 3;
            assert_eq!(tree.node_count(), expect, "h={h}");
        }
        // The closed form at h=10, checked without building the tree.
        assert_eq!((4usize.pow(11) - 1) / 3, 1_398_101);
    }

    #[test]
    fn children_partition_parent_exactly() {
        // Every point lands in exactly one child, including kd splits.
        let mut src_pts = RandomSource::new(3);
        let pts: Vec<Point> =
            (0..2000).map(|_| Point::new(src_pts.uniform(), src_pts.uniform())).collect();
        let mech = MechanismConfig::exponential();
        let tree = build_kd_flattened(
            &pts,
            &unit_domain(),
            3,
            &kd_plan(3, 1.0),
            &mech,
            &RandomSource::new(4),
        )
        .unwrap();
        fn walk(node: &Node, pts: &[Point]) {
            if node.is_leaf() {
                return;
            }
            for p in pts {
                if node.region.contains(*p) {
                    let holders =
                        node.children.iter().filter(|c| c.region.contains(*p)).count();
                    assert_eq!(holders, 1, "point ({}, {})", p.x, p.y);
                }
            }
            node.children.iter().for_each(|c| walk(c, pts));
        }
        walk(&tree.root, &pts);
        tree.validate_complete().unwrap();
        tree.privacy_report().unwrap();
    }

    #[test]
    fn kd_noiseless_splits_equal_exact_medians() {
        // With the noiseless hook the split values are the exact medians of
        // the node's coordinate multiset, so the tree matches an exact-median
        // kd-tree oracle computed independently below.
        let pts = grid_points(16);
        let mech = MechanismConfig::exponential();
        let tree = build_kd_flattened(
            &pts,
            &unit_domain(),
            1,
            &kd_plan(1, 1.0),
            &mech,
            &RandomSource::noiseless(5),
        )
        .unwrap();
        let Split::Kd { x, y_left, y_right } = tree.root.split.unwrap() else {
            panic!("expected kd split")
        };
        let mut xs: Vec<f64> = pts.iter().map(|p| p.x).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let exact_x = xs[(xs.len() + 1) / 2 - 1];
        assert_eq!(x, exact_x);
        let mut ys_left: Vec<f64> = pts.iter().filter(|p| p.x < x).map(|p| p.y).collect();
        ys_left.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(y_left, ys_left[(ys_left.len() + 1) / 2 - 1]);
        let mut ys_right: Vec<f64> = pts.iter().filter(|p| p.x >= x).map(|p| p.y).collect();
        ys_right.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(y_right, ys_right[(ys_right.len() + 1) / 2 - 1]);
    }

    #[test]
    fn kd_noiseless_balances_random_data() {
        // Exact medians split distinct coordinates into quarters within +-1.
        let mut psrc = RandomSource::new(6);
        let pts: Vec<Point> = (0..256).map(|_| Point::new(psrc.uniform(), psrc.uniform())).collect();
        let mech = MechanismConfig::exponential();
        let tree = build_kd_flattened(
            &pts,
            &unit_domain(),
            1,
            &kd_plan(1, 1.0),
            &mech,
            &RandomSource::noiseless(7),
        )
        .unwrap();
        for child in &tree.root.children {
            let c = true_count(&child.region, &pts);
            assert!(
                (63..=65).contains(&c),
                "child count {c} should be within 1 of 64"
            );
        }
    }

    #[test]
    fn identical_points_collapse_but_tree_stays_complete() {
        let pts = vec![Point::new(0.25, 0.75); 100];
        let mech = MechanismConfig::exponential();
        let tree = build_kd_flattened(
            &pts,
            &unit_domain(),
            2,
            &kd_plan(2, 1.0),
            &mech,
            &RandomSource::noiseless(8),
        )
        .unwrap();
        tree.validate_complete().unwrap();
        // Exactly one leaf holds all the mass on every level path.
        fn walk(node: &Node, pts: &[Point]) {
            if node.is_leaf() {
                return;
            }
            let nonempty: Vec<usize> =
                node.children.iter().map(|c| true_count(&c.region, pts)).collect();
            assert_eq!(nonempty.iter().sum::<usize>(), true_count(&node.region, pts));
            node.children.iter().for_each(|c| walk(c, pts));
        }
        walk(&tree.root, &pts);
    }

    #[test]
    fn hybrid_boundary_cases_match_pure_kinds() {
        let mut psrc = RandomSource::new(9);
        let pts: Vec<Point> = (0..500).map(|_| Point::new(psrc.uniform(), psrc.uniform())).collect();
        let mech = MechanismConfig::exponential();
        let seed = RandomSource::new(10);

        let quad = build_quadtree(&pts, &unit_domain(), 3, &quad_plan(3, 1.0), &seed).unwrap();
        let hyb0 = build_hybrid(&pts, &unit_domain(), 3, 0, &quad_plan(3, 1.0), &mech, &seed).unwrap();
        assert_eq!(quad.root, hyb0.root);

        let kd = build_kd_flattened(&pts, &unit_domain(), 3, &kd_plan(3, 1.0), &mech, &seed).unwrap();
        let hyb3 = build_hybrid(&pts, &unit_domain(), 3, 3, &kd_plan(3, 1.0), &mech, &seed).unwrap();
        assert_eq!(kd.root, hyb3.root);
    }

    #[test]
    fn hybrid_splits_kd_on_top_midpoint_below() {
        let mut psrc = RandomSource::new(11);
        let pts: Vec<Point> = (0..500).map(|_| Point::new(psrc.uniform(), psrc.uniform())).collect();
        let mech = MechanismConfig::exponential();
        let plan = BudgetPlan::compose(
            4,
            1.0,
            0.7,
            &CountStrategy::Geometric,
            &MedianStrategy::HybridTop(2),
        )
        .unwrap();
        let tree =
            build_hybrid(&pts, &unit_domain(), 4, 2, &plan, &mech, &RandomSource::new(12)).unwrap();
        fn walk(node: &Node, switch_at: u32) {
            match (&node.split, node.level) {
                (Some(Split::Kd { .. }), l) => assert!(l > switch_at, "kd split at level {l}"),
                (Some(Split::Midpoint), l) => assert!(l <= switch_at, "midpoint at level {l}"),
                (None, 0) => {}
                other => panic!("unexpected split {other:?}"),
            }
            node.children.iter().for_each(|c| walk(c, switch_at));
        }
        walk(&tree.root, 2);
    }

    #[test]
    fn quadtree_structure_depends_only_on_domain_and_height() {
        let a = grid_points(8);
        let mut psrc = RandomSource::new(13);
        let b: Vec<Point> = (0..97).map(|_| Point::new(psrc.uniform(), psrc.uniform())).collect();
        let seed = RandomSource::new(14);
        let ta = build_quadtree(&a, &unit_domain(), 3, &quad_plan(3, 1.0), &seed).unwrap();
        let tb = build_quadtree(&b, &unit_domain(), 3, &quad_plan(3, 1.0), &seed).unwrap();
        fn regions(node: &Node, out: &mut Vec<Rect>) {
            out.push(node.region);
            node.children.iter().for_each(|c| regions(c, out));
        }
        let (mut ra, mut rb) = (Vec::new(), Vec::new());
        regions(&ta.root, &mut ra);
        regions(&tb.root, &mut rb);
        assert_eq!(ra, rb);
    }

    #[test]
    fn same_seed_same_tree() {
        let mut psrc = RandomSource::new(15);
        let pts: Vec<Point> = (0..300).map(|_| Point::new(psrc.uniform(), psrc.uniform())).collect();
        let mech = MechanismConfig::exponential();
        let t1 = build_kd_flattened(
            &pts,
            &unit_domain(),
            3,
            &kd_plan(3, 1.0),
            &mech,
            &RandomSource::new(16),
        )
        .unwrap();
        let t2 = build_kd_flattened(
            &pts,
            &unit_domain(),
            3,
            &kd_plan(3, 1.0),
            &mech,
            &RandomSource::new(16),
        )
        .unwrap();
        assert_eq!(tree_to_string(&t1), tree_to_string(&t2));
    }

    #[test]
    fn hilbert_tree_basics() {
        // Points along a Hilbert-contiguous stretch: the noiseless root split
        // lands at the middle index.
        let domain = unit_domain();
        let hc = HilbertConfig::new(6, domain).unwrap();
        let mut pts = Vec::new();
        for d in 100..300u64 {
            let cell = hc.decode(d).unwrap();
            pts.push(Point::new((cell.x_lo + cell.x_hi) / 2.0, (cell.y_lo + cell.y_hi) / 2.0));
        }
        let mech = MechanismConfig::exponential();
        let tree = build_hilbert_rtree(
            &pts,
            &domain,
            2,
            &kd_plan(2, 1.0),
            &mech,
            &hc,
            &RandomSource::noiseless(17),
        )
        .unwrap();
        let Split::Hilbert { first, .. } = tree.root.split.unwrap() else { panic!() };
        // Exact median of indices 100..300 is index 199 (m = ceil(n/2)), and
        // the cut is its ceiling.
        assert_eq!(first, 199);
        tree.validate_complete().unwrap();

        // Children bounding boxes cover every point of the parent.
        fn walk(node: &Node, hc: &HilbertConfig, pts: &[Point]) {
            if node.is_leaf() {
                return;
            }
            for p in pts {
                let d = hc.encode(*p).unwrap();
                let (a, b) = node.hilbert_range.unwrap();
                if d >= a && d < b {
                    let held = node
                        .children
                        .iter()
                        .filter(|c| {
                            let (ca, cb) = c.hilbert_range.unwrap();
                            d >= ca && d < cb
                        })
                        .count();
                    assert_eq!(held, 1);
                    let child = node
                        .children
                        .iter()
                        .find(|c| {
                            let (ca, cb) = c.hilbert_range.unwrap();
                            d >= ca && d < cb
                        })
                        .unwrap();
                    assert!(child.region.contains(*p), "bbox must cover its points");
                }
            }
            node.children.iter().for_each(|c| walk(c, hc, pts));
        }
        walk(&tree.root, &hc, &pts);
        assert!((tree.privacy_report().unwrap().epsilon - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prune_behavior() {
        let pts = grid_points(8);
        let src = RandomSource::noiseless(18);
        let mut tree = build_quadtree(&pts, &unit_domain(), 2, &quad_plan(2, 1.0), &src).unwrap();
        // Before post-processing, prune must refuse.
        assert!(prune(&mut tree, 1.0).is_err());
        // Stand in for the OLS pass: noiseless raw counts are already
        // consistent.
        fn copy_raw(node: &mut Node) {
            node.post = node.raw;
            node.children.iter_mut().for_each(copy_raw);
        }
        copy_raw(&mut tree.root);
        let full = tree.node_count();
        let mut unchanged = tree.clone();
        prune(&mut unchanged, 0.0).unwrap();
        assert_eq!(unchanged.node_count(), full);
        prune(&mut tree, f64::INFINITY).unwrap();
        assert_eq!(tree.node_count(), 1);
    }

    #[test]
    fn serialization_roundtrip_bytes() {
        let mut psrc = RandomSource::new(19);
        let pts: Vec<Point> = (0..200).map(|_| Point::new(psrc.uniform(), psrc.uniform())).collect();
        let mech = MechanismConfig::exponential();
        let domain = unit_domain();
        let hc = HilbertConfig::new(8, domain).unwrap();
        let trees = vec![
            build_quadtree(&pts, &domain, 2, &quad_plan(2, 0.5), &RandomSource::new(20)).unwrap(),
            build_kd_flattened(&pts, &domain, 2, &kd_plan(2, 0.5), &mech, &RandomSource::new(21))
                .unwrap(),
            build_hilbert_rtree(
                &pts,
                &domain,
                2,
                &kd_plan(2, 0.5),
                &mech,
                &hc,
                &RandomSource::new(22),
            )
            .unwrap(),
        ];
        for tree in trees {
            let text = tree_to_string(&tree);
            let parsed = tree_from_str(&text).unwrap();
            assert_eq!(parsed, tree);
            assert_eq!(tree_to_string(&parsed), text);
        }
    }

    #[test]
    fn empty_rects_are_disjoint_from_queries() {
        // Zero-width node regions behave as empty sets.
        let empty = Rect { x_lo: 0.5, x_hi: 0.5, y_lo: 0.0, y_hi: 1.0 };
        let q = unit_domain();
        assert_eq!(crate::geom::relation(&q, &empty), RectRelation::Disjoint);
    }

    #[test]
    fn builder_validations() {
        let pts = grid_points(2);
        let src = RandomSource::new(23);
        let mech = MechanismConfig::exponential();
        // Quadtree refuses median budget.
        assert!(build_quadtree(&pts, &unit_domain(), 2, &kd_plan(2, 1.0), &src).is_err());
        // Kd refuses a plan without median budget.
        assert!(
            build_kd_flattened(&pts, &unit_domain(), 2, &quad_plan(2, 1.0), &mech, &src).is_err()
        );
        // Out-of-domain points are rejected.
        let outside = vec![Point::new(2.0, 0.5)];
        assert!(build_quadtree(&outside, &unit_domain(), 1, &quad_plan(1, 1.0), &src).is_err());
        // Hilbert refuses the cell mechanism.
        let hc = HilbertConfig::new(8, unit_domain()).unwrap();
        let cell = MechanismConfig::new(MedianKind::CellBased { cell_length: 0.1 }, 1.0).unwrap();
        assert!(build_hilbert_rtree(&pts, &unit_domain(), 2, &kd_plan(2, 1.0), &cell, &hc, &src)
            .is_err());
    }

    #[test]
    fn cell_based_kd_build_works() {
        let mut psrc = RandomSource::new(24);
        let pts: Vec<Point> = (0..2000).map(|_| Point::new(psrc.uniform(), psrc.uniform())).collect();
        let plan = BudgetPlan::compose(
            3,
            1.0,
            0.7,
            &CountStrategy::Geometric,
            &MedianStrategy::GridOnce,
        )
        .unwrap();
        let mech = MechanismConfig::new(MedianKind::CellBased { cell_length: 0.05 }, 1.0).unwrap();
        let tree = build_kd_flattened(
            &pts,
            &unit_domain(),
            3,
            &plan,
            &mech,
            &RandomSource::new(25),
        )
        .unwrap();
        tree.validate_complete().unwrap();
        tree.privacy_report().unwrap();
    }
}
