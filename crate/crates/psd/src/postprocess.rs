//! Ordinary-least-squares consistency post-processing of noisy counts.
//!
//! The released counts `Y_v` are independent unbiased observations with
//! per-level precision weights `ε_i²`. The OLS estimate `β` is the unique
//! consistent table (`β_v = Σ_children β_u`) minimizing
//! `Σ_v ε_v² (Y_v − β_v)²`; it is unbiased and has minimum variance among
//! linear unbiased estimators, for every range query at once.
//!
//! Writing `E_l = Σ_{j≤l} f^j ε_j²`, the normal equations summed over the
//! leaves of a subtree collapse to the per-node recurrence
//!
//! ```text
//! E_{h(v)} β_v + f^{h(v)} Σ_{w ∈ anc(v)\{v}} ε_{h(w)}² β_w = Z_v
//! Z_v = Σ_{u ≺ v} Σ_{w ∈ anc(u)} ε_{h(w)}² Y_w
//! ```
//!
//! which three linear traversals solve: a top-down pass accumulates the
//! ancestor sums `α` into leaf `Z` values, a bottom-up pass sums children's
//! `Z`, and a final top-down pass computes `β_root = Z_root / E_h` and then
//! `β_v = (Z_v − f^{h(v)} F_v) / E_{h(v)}` with
//! `F_v = F_parent + β_parent ε²_{h(parent)}`.
//!
//! Levels with `ε_i = 0` carry weight zero: they add nothing to `E`, `Z` or
//! `F`, and where `E_{h(v)} = 0` (the node and everything below it is
//! unobserved) the objective no longer pins `β_v` down, so the minimum-norm
//! completion `β_v = β_parent / f` is used. That is exactly what a dense
//! pseudo-inverse solve of the normal equations produces.

use crate::error::{Error, Result};
use crate::tree::{Node, PsdTree};

/// Work counters returned by [`ols`]; three traversals touch each node a
/// constant number of times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OlsStats {
    pub nodes: usize,
    pub visits: usize,
}

/// Populates `β` (the `post` field) on every node of a complete tree.
pub fn ols(tree: &mut PsdTree) -> Result<OlsStats> {
    tree.validate_complete()?;
    let f = tree.fanout as f64;
    let h = tree.height;
    let weights: Vec<f64> = tree.plan.count_eps().iter().map(|e| e * e).collect();
    let mut e_cum = vec![0.0f64; h + 1];
    let mut fpow = 1.0;
    let mut acc = 0.0;
    for (l, w) in weights.iter().enumerate() {
        acc += fpow * w;
        e_cum[l] = acc;
        fpow *= f;
    }
    if !(e_cum[h] > 0.0) {
        return Err(Error::InvalidTree(
            "post-processing needs at least one level with released counts".into(),
        ));
    }

    // Phases I and II: alpha flows down, Z_v = alpha at leaves, sums of
    // children's Z at internal nodes. Z is parked in `post` until phase III
    // replaces it with beta. Children are summed before touching the parent
    // accumulator.
    fn down(node: &mut Node, alpha_parent: f64, weights: &[f64], visits: &mut usize) -> f64 {
        *visits += 2;
        let alpha = alpha_parent + weights[node.level as usize] * node.raw.unwrap_or(0.0);
        let z = if node.is_leaf() {
            alpha
        } else {
            node.children.iter_mut().map(|c| down(c, alpha, weights, visits)).sum()
        };
        node.post = Some(z);
        z
    }

    // Phase III: beta from the recurrence; unobserved subtrees split the
    // parent estimate evenly.
    #[allow(clippy::too_many_arguments)]
    fn up(
        node: &mut Node,
        f_acc: f64,
        parent_share: f64,
        fpow_level: f64,
        f: f64,
        e_cum: &[f64],
        weights: &[f64],
        visits: &mut usize,
    ) {
        *visits += 1;
        let l = node.level as usize;
        let z = node.post.expect("phase I populated Z");
        let beta =
            if e_cum[l] > 0.0 { (z - fpow_level * f_acc) / e_cum[l] } else { parent_share };
        node.post = Some(beta);
        let f_child = f_acc + beta * weights[l];
        for c in node.children.iter_mut() {
            up(c, f_child, beta / f, fpow_level / f, f, e_cum, weights, visits);
        }
    }

    let mut visits = 0usize;
    down(&mut tree.root, 0.0, &weights, &mut visits);
    let fpow_root = f.powi(h as i32);
    up(&mut tree.root, 0.0, f64::NAN, fpow_root, f, &e_cum, &weights, &mut visits);
    let nodes = tree.node_count();
    Ok(OlsStats { nodes, visits })
}

/// Closed-form root variance of the two-level OLS (root at level 1 with
/// budget `eps_1`, `f` children at level 0 with budget `eps_0`):
/// `Var(β_root) = 2f / (f ε_1² + ε_0²)`, versus `Var(Y_root) = 2/ε_1²`.
pub fn ols_variance_root(f: usize, eps_1: f64, eps_0: f64) -> Result<f64> {
    if !(eps_1 > 0.0) || !(eps_0 >= 0.0) {
        return Err(Error::invalid("variance formula needs eps_1 > 0 and eps_0 >= 0"));
    }
    let ff = f as f64;
    Ok(2.0 * ff / (ff * eps_1 * eps_1 + eps_0 * eps_0))
}
