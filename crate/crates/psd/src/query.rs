//! Range-query answering over a released tree, plus error accounting.
//!
//! The canonical method: starting from the root, skip nodes disjoint from
//! the query, add the count of any node fully contained in it (and do not
//! descend further — this minimizes the number of noisy terms), and recurse
//! into partially overlapped nodes. A partially overlapped leaf contributes
//! `overlap_fraction × count` under the uniformity assumption.
//!
//! Levels that released no counts are transparent: the descent passes
//! through them and uses descendants instead.
//!
//! For Hilbert R-trees node rectangles are bounding boxes of index ranges
//! and may overlap between siblings; since every point belongs to exactly
//! one child's index range, counts still never double, and the boxes serve
//! only to prune and to test containment (box inside the query implies all
//! of the node's points are inside).

use crate::budget::{max_contained_nodes, BudgetPlan, TreeBoundKind};
use crate::error::{Error, Result};
use crate::geom::{overlap_fraction, relation, Point, Rect, RectRelation};
use crate::tree::{Node, PsdTree};

/// Which counts a query reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountsMode {
    Raw,
    Ols,
}

/// Answer of one rectangular range query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryAnswer {
    pub estimate: f64,
    /// Number of maximally contained nodes whose count was added, per level.
    pub nodes_per_level: Vec<usize>,
    /// Total fractional contribution from partially overlapped leaves.
    pub partial_leaf: f64,
}

impl QueryAnswer {
    /// Total number of nodes that contributed a full count.
    pub fn nodes_used(&self) -> usize {
        self.nodes_per_level.iter().sum()
    }
}

/// Canonical maximal-containment range answering.
pub fn answer(tree: &PsdTree, q: &Rect, mode: CountsMode) -> Result<QueryAnswer> {
    if mode == CountsMode::Ols && tree.root.post.is_none() {
        return Err(Error::InvalidTree(
            "query over OLS counts requires post-processing first".into(),
        ));
    }
    let post = mode == CountsMode::Ols;
    let mut ans = QueryAnswer {
        estimate: 0.0,
        nodes_per_level: vec![0; tree.height + 1],
        partial_leaf: 0.0,
    };
    descend(&tree.root, q, post, &mut ans)?;
    Ok(ans)
}

fn descend(node: &Node, q: &Rect, post: bool, ans: &mut QueryAnswer) -> Result<()> {
    match relation(q, &node.region) {
        RectRelation::Disjoint => Ok(()),
        RectRelation::AContainsB => {
            if let Some(c) = node.count(post) {
                ans.estimate += c;
                ans.nodes_per_level[node.level as usize] += 1;
                return Ok(());
            }
            // No count released on this level: use the descendants.
            for c in &node.children {
                descend(c, q, post, ans)?;
            }
            Ok(())
        }
        RectRelation::PartialOverlap => {
            if node.is_leaf() {
                if let Some(c) = node.count(post) {
                    let frac = overlap_fraction(&node.region, q)?;
                    ans.estimate += frac * c;
                    ans.partial_leaf += frac * c;
                }
                return Ok(());
            }
            for c in &node.children {
                descend(c, q, post, ans)?;
            }
            Ok(())
        }
    }
}

/// Exact answer by linear scan; the measurement baseline.
pub fn true_answer(points: &[Point], q: &Rect) -> u64 {
    points.iter().filter(|p| q.contains(**p)).count() as u64
}

/// Worst-case variance bound `Σ_i 2 n_i / ε_i²` with `n_i` from the
/// node-visit bound for the tree kind.
///
/// Levels with `ε_i = 0` push their nodes down: each unanswered node is
/// answered by its `f` children at the level below, on top of that level's
/// own bound. If the leaves themselves release nothing the bound is
/// infinite.
pub fn predicted_error(kind: TreeBoundKind, plan: &BudgetPlan) -> Result<f64> {
    let h = plan.height();
    let f = match kind {
        TreeBoundKind::Quadtree => 4.0,
        TreeBoundKind::Kdtree => 2.0,
    };
    let mut err = 0.0f64;
    let mut deferred = 0.0f64;
    for i in (0..=h).rev() {
        let own = max_contained_nodes(kind, h, i)? as f64;
        let need = own + f * deferred;
        let eps = plan.count_eps_at(i);
        if eps > 0.0 {
            err += 2.0 * need / (eps * eps);
            deferred = 0.0;
        } else {
            deferred = need;
        }
    }
    if deferred > 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(err)
}
