//! Privacy-budget allocation across tree levels.
//!
//! Levels are numbered with leaves at 0 and the root at `h`. Along any
//! root-to-leaf path the released values compose sequentially, so the total
//! guarantee is
//!
//! ```text
//! ε = Σ_{i=1..h} ε_i^m  +  Σ_{i=0..h} ε_i^c
//! ```
//!
//! where `ε_i^m` pays for the private split (median) at level `i` and
//! `ε_i^c` for the noisy count at level `i`. Nodes off the path touch
//! disjoint data, so they do not add to the cost.
//!
//! For the count share, the uniform strategy `ε_i = ε_cnt/(h+1)` is the
//! baseline. The geometric strategy
//!
//! ```text
//! ε_i = 2^{(h-i)/3} · ε_cnt · (2^{1/3} - 1) / (2^{(h+1)/3} - 1)
//! ```
//!
//! grows by a factor 2^{1/3} per level toward the leaves and minimizes the
//! worst-case query variance bound; see [`worst_case_error`] for the two
//! closed forms being compared.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Tolerance for checking that plan entries sum to the requested budget.
pub const AUDIT_REL_TOL: f64 = 1e-9;

/// How the count share of the budget is spread over levels `0..=h`.
#[derive(Debug, Clone, PartialEq)]
pub enum CountStrategy {
    /// `ε_i = ε_cnt / (h+1)` on every level.
    Uniform,
    /// The closed-form geometric progression (factor 2^{1/3} toward leaves).
    Geometric,
    /// Entire count budget on the leaf level; internal levels release nothing.
    LeafOnly,
    /// Uniform over the non-skipped levels; skipped levels release no counts.
    SkipLevels(BTreeSet<usize>),
    /// Arbitrary nonnegative weights (length h+1), scaled to sum to `ε_cnt`.
    Custom(Vec<f64>),
}

/// How the median share is spread over internal levels `1..=h`.
#[derive(Debug, Clone, PartialEq)]
pub enum MedianStrategy {
    /// No data-dependent splits; the median share must be zero.
    None,
    /// `ε_i^m = ε_median / h` on every internal level.
    UniformInternal,
    /// `ε_i^m = ε_median / ℓ` on the top `ℓ` internal levels, zero below.
    HybridTop(usize),
    /// The whole median share pays once for a global noisy grid (cell-based
    /// splits); accounted at the root level so every path carries it.
    GridOnce,
}

/// Per-level noise parameters for one tree, plus the total they must sum to.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetPlan {
    h: usize,
    count_eps: Vec<f64>,
    median_eps: Vec<f64>,
    epsilon: f64,
}

impl BudgetPlan {
    /// Assembles a plan from explicit per-level vectors (index = level,
    /// leaves at 0). `median_eps[0]` must be zero: leaves are never split.
    pub fn from_parts(
        h: usize,
        count_eps: Vec<f64>,
        median_eps: Vec<f64>,
        epsilon: f64,
    ) -> Result<BudgetPlan> {
        if count_eps.len() != h + 1 || median_eps.len() != h + 1 {
            return Err(Error::invalid(format!(
                "plan vectors must have h+1 = {} entries (got {} counts, {} medians)",
                h + 1,
                count_eps.len(),
                median_eps.len()
            )));
        }
        if count_eps.iter().chain(median_eps.iter()).any(|&e| !(e >= 0.0) || !e.is_finite()) {
            return Err(Error::invalid("plan entries must be finite and >= 0"));
        }
        if median_eps[0] != 0.0 {
            return Err(Error::invalid("median budget at leaf level must be zero"));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid(format!("total epsilon must be finite and > 0, got {epsilon}")));
        }
        let plan = BudgetPlan { h, count_eps, median_eps, epsilon };
        audit_path_sum(&plan)?;
        Ok(plan)
    }

    /// Builds a plan by splitting `epsilon` into count and median shares and
    /// applying the named strategies.
    pub fn compose(
        h: usize,
        epsilon: f64,
        count_share: f64,
        count: &CountStrategy,
        median: &MedianStrategy,
    ) -> Result<BudgetPlan> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid(format!("total epsilon must be finite and > 0, got {epsilon}")));
        }
        let (eps_cnt, eps_median) = split_budget(epsilon, count_share)?;
        let count_eps = match count {
            CountStrategy::Uniform => uniform_count_budget(h, eps_cnt)?,
            CountStrategy::Geometric => geometric_count_budget(h, eps_cnt)?,
            CountStrategy::LeafOnly => {
                let mut v = vec![0.0; h + 1];
                v[0] = eps_cnt;
                v
            }
            CountStrategy::SkipLevels(skip) => {
                if let Some(&bad) = skip.iter().find(|&&i| i > h) {
                    return Err(Error::invalid(format!("skip level {bad} exceeds height {h}")));
                }
                let kept = h + 1 - skip.len();
                if kept == 0 {
                    return Err(Error::invalid("cannot skip every level"));
                }
                (0..=h)
                    .map(|i| if skip.contains(&i) { 0.0 } else { eps_cnt / kept as f64 })
                    .collect()
            }
            CountStrategy::Custom(weights) => {
                if weights.len() != h + 1 {
                    return Err(Error::invalid(format!(
                        "custom weight vector must have h+1 = {} entries, got {}",
                        h + 1,
                        weights.len()
                    )));
                }
                if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                    return Err(Error::invalid("custom weights must be finite and >= 0"));
                }
                let total: f64 = weights.iter().sum();
                if !(total > 0.0) {
                    return Err(Error::invalid("custom weights must not all be zero"));
                }
                weights.iter().map(|w| eps_cnt * w / total).collect()
            }
        };
        let median_eps = match median {
            MedianStrategy::None => {
                if eps_median != 0.0 {
                    return Err(Error::invalid(
                        "median strategy None requires count_share = 1 (no median budget)",
                    ));
                }
                vec![0.0; h + 1]
            }
            MedianStrategy::UniformInternal => {
                if h == 0 {
                    if eps_median != 0.0 {
                        return Err(Error::invalid("h = 0 has no internal levels for a median budget"));
                    }
                    vec![0.0]
                } else {
                    let mut v = vec![0.0; h + 1];
                    for e in v.iter_mut().skip(1) {
                        *e = eps_median / h as f64;
                    }
                    v
                }
            }
            MedianStrategy::HybridTop(l) => {
                let l = *l;
                if l > h {
                    return Err(Error::invalid(format!("switch level {l} exceeds height {h}")));
                }
                let mut v = vec![0.0; h + 1];
                if l == 0 {
                    if eps_median != 0.0 {
                        return Err(Error::invalid(
                            "switch level 0 leaves no data-dependent levels for the median budget",
                        ));
                    }
                } else {
                    // Top l internal levels: h-l < i <= h.
                    for (i, e) in v.iter_mut().enumerate() {
                        if i > h - l {
                            *e = eps_median / l as f64;
                        }
                    }
                }
                v
            }
            MedianStrategy::GridOnce => {
                if h == 0 {
                    return Err(Error::invalid("h = 0 has no internal levels for a median budget"));
                }
                // One global release, carried by every path through the root.
                let mut v = vec![0.0; h + 1];
                v[h] = eps_median;
                v
            }
        };
        BudgetPlan::from_parts(h, count_eps, median_eps, epsilon)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn count_eps(&self) -> &[f64] {
        &self.count_eps
    }

    pub fn median_eps(&self) -> &[f64] {
        &self.median_eps
    }

    pub fn count_eps_at(&self, level: usize) -> f64 {
        self.count_eps[level]
    }

    pub fn median_eps_at(&self, level: usize) -> f64 {
        self.median_eps[level]
    }

    pub fn median_total(&self) -> f64 {
        self.median_eps.iter().sum()
    }

    pub fn count_total(&self) -> f64 {
        self.count_eps.iter().sum()
    }
}

/// `ε_i = ε_cnt/(h+1)` for every level.
pub fn uniform_count_budget(h: usize, eps_cnt: f64) -> Result<Vec<f64>> {
    if !(eps_cnt > 0.0) {
        return Err(Error::invalid(format!("count budget must be > 0, got {eps_cnt}")));
    }
    Ok(vec![eps_cnt / (h + 1) as f64; h + 1])
}

/// The geometric progression `ε_i = 2^{(h-i)/3} ε_cnt (2^{1/3}-1)/(2^{(h+1)/3}-1)`.
///
/// Entries sum to `ε_cnt` and consecutive levels keep the exact ratio
/// `ε_i / ε_{i+1} = 2^{1/3}`, increasing toward the leaves.
pub fn geometric_count_budget(h: usize, eps_cnt: f64) -> Result<Vec<f64>> {
    if !(eps_cnt > 0.0) {
        return Err(Error::invalid(format!("count budget must be > 0, got {eps_cnt}")));
    }
    let cbrt2 = 2f64.powf(1.0 / 3.0);
    let base = eps_cnt * (cbrt2 - 1.0) / (2f64.powf((h + 1) as f64 / 3.0) - 1.0);
    Ok((0..=h).map(|i| 2f64.powf((h - i) as f64 / 3.0) * base).collect())
}

/// Which worst-case error curve to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetStrategyKind {
    Uniform,
    Geometric,
}

/// The ε-independent worst-case error shape of each strategy:
///
/// ```text
/// Err_unif(h) = (h+1)^2 (2^{h+1} - 1)
/// Err_geom(h) = (2^{(h+1)/3} - 1)^3 / (2^{1/3} - 1)^3
/// ```
///
/// The full variance bound for a query touching the maximal number of nodes
/// is `16/ε²` times these values.
pub fn worst_case_error(strategy: BudgetStrategyKind, h: usize) -> f64 {
    let hf = (h + 1) as f64;
    match strategy {
        BudgetStrategyKind::Uniform => hf * hf * (2f64.powf(hf) - 1.0),
        BudgetStrategyKind::Geometric => {
            let cbrt2 = 2f64.powf(1.0 / 3.0);
            ((2f64.powf(hf / 3.0) - 1.0) / (cbrt2 - 1.0)).powi(3)
        }
    }
}

/// Tree shapes with known node-visit bounds for range queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeBoundKind {
    /// Fanout-4 midpoint tree (also valid for flattened kd-trees of the same
    /// height).
    Quadtree,
    /// Binary kd-tree with alternating axes.
    Kdtree,
}

/// Upper bound on the number of level-`i` nodes a range query can maximally
/// contain: `8·2^{h-i}` for quadtrees, `8·2^{⌊(h-i+1)/2⌋}` for binary
/// kd-trees.
///
/// A finer bound `min{8·2^{h-i}, 4^{h-i}}` exists (near the leaves the grid
/// itself has fewer cells than the perimeter argument allows); only the
/// simple form is exposed here since it is the one the error analysis uses.
pub fn max_contained_nodes(kind: TreeBoundKind, h: usize, i: usize) -> Result<u64> {
    if i > h {
        return Err(Error::invalid(format!("level {i} exceeds height {h}")));
    }
    let d = (h - i) as u32;
    let bound = match kind {
        TreeBoundKind::Quadtree => 8u64.checked_shl(d),
        TreeBoundKind::Kdtree => 8u64.checked_shl((d + 1) / 2),
    };
    bound.ok_or_else(|| Error::invalid(format!("bound overflows for h-i = {d}")))
}

/// Splits the total budget into `(ε_cnt, ε_median) = (share·ε, (1-share)·ε)`.
pub fn split_budget(epsilon: f64, count_share: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&count_share) {
        return Err(Error::invalid(format!("count share must be in [0,1], got {count_share}")));
    }
    let cnt = count_share * epsilon;
    Ok((cnt, epsilon - cnt))
}

/// Sums every median and count entry of the plan; this is the privacy cost
/// of any root-to-leaf path and must equal the declared total.
pub fn audit_path_sum(plan: &BudgetPlan) -> Result<f64> {
    let sum: f64 = plan.count_eps.iter().chain(plan.median_eps.iter()).sum();
    let rel = (sum - plan.epsilon).abs() / plan.epsilon.max(f64::MIN_POSITIVE);
    if rel > AUDIT_REL_TOL {
        return Err(Error::BudgetAudit(format!(
            "plan entries sum to {sum}, declared total is {} (relative gap {rel:e})",
            plan.epsilon
        )));
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_count_budget(2, 0.9).unwrap(), vec![0.3, 0.3, 0.3]);
        assert_eq!(uniform_count_budget(0, 1.0).unwrap(), vec![1.0]);
        let v = uniform_count_budget(9, 1.0).unwrap();
        assert_eq!(v.len(), 10);
        assert!(v.iter().all(|&e| (e - 0.1).abs() < 1e-15));
    }

    #[test]
    fn geometric_closed_form_h2() {
        // Independent evaluation of the closed form at h=2, eps=1.
        let cbrt2 = 2f64.powf(1.0 / 3.0);
        let base = (cbrt2 - 1.0) / (2f64 - 1.0); // 2^{(h+1)/3} = 2 at h=2
        let expect = [cbrt2 * cbrt2 * base, cbrt2 * base, base];
        let v = geometric_count_budget(2, 1.0).unwrap();
        for (got, want) in v.iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
        // Spec'd decimals (leaf first): about (0.41260, 0.32748, 0.25992).
        assert!((v[0] - 0.41260).abs() < 5e-5);
        assert!((v[1] - 0.32748).abs() < 5e-5);
        assert!((v[2] - 0.25992).abs() < 5e-5);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_collapses_at_h0() {
        assert_eq!(geometric_count_budget(0, 1.0).unwrap(), vec![1.0]);
    }

    #[test]
    fn geometric_ratio_is_cbrt2() {
        let cbrt2 = 2f64.powf(1.0 / 3.0);
        for h in 1..=20 {
            let v = geometric_count_budget(h, 0.7).unwrap();
            for i in 0..h {
                let ratio = v[i] / v[i + 1];
                assert!((ratio - cbrt2).abs() < 1e-12, "h={h} i={i} ratio={ratio}");
            }
        }
    }

    #[test]
    fn worst_case_error_examples() {
        assert_eq!(worst_case_error(BudgetStrategyKind::Uniform, 10), 121.0 * 2047.0);
        assert!((worst_case_error(BudgetStrategyKind::Geometric, 0) - 1.0).abs() < 1e-12);
        assert!((worst_case_error(BudgetStrategyKind::Uniform, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_beats_uniform() {
        for h in 2..=20 {
            assert!(
                worst_case_error(BudgetStrategyKind::Geometric, h)
                    < worst_case_error(BudgetStrategyKind::Uniform, h),
                "h={h}"
            );
        }
    }

    #[test]
    fn contained_node_bounds() {
        assert_eq!(max_contained_nodes(TreeBoundKind::Quadtree, 3, 3).unwrap(), 8);
        let total: u64 =
            (0..=3).map(|i| max_contained_nodes(TreeBoundKind::Quadtree, 3, i).unwrap()).sum();
        assert_eq!(total, 120); // 8(2^{h+1}-1)
        assert_eq!(max_contained_nodes(TreeBoundKind::Kdtree, 4, 0).unwrap(), 32);
        assert!(max_contained_nodes(TreeBoundKind::Quadtree, 3, 4).is_err());
    }

    #[test]
    fn split_budget_examples() {
        let (c, m) = split_budget(1.0, 0.7).unwrap();
        assert!((c - 0.7).abs() < 1e-15 && (m - 0.3).abs() < 1e-15);
        assert_eq!(split_budget(1.0, 1.0).unwrap(), (1.0, 0.0));
        let (c, m) = split_budget(0.5, 0.7).unwrap();
        assert!((c - 0.35).abs() < 1e-15 && (m - 0.15).abs() < 1e-15);
        assert!(split_budget(1.0, 1.5).is_err());
    }

    #[test]
    fn audit_cases() {
        let plan = BudgetPlan::compose(4, 1.0, 1.0, &CountStrategy::Uniform, &MedianStrategy::None)
            .unwrap();
        assert!((audit_path_sum(&plan).unwrap() - 1.0).abs() < 1e-12);

        let plan = BudgetPlan::compose(
            4,
            1.0,
            0.7,
            &CountStrategy::Geometric,
            &MedianStrategy::UniformInternal,
        )
        .unwrap();
        assert!((audit_path_sum(&plan).unwrap() - 1.0).abs() < 1e-12);

        // Tampered plan: one entry doubled must fail the audit.
        let mut counts = plan.count_eps().to_vec();
        counts[0] *= 2.0;
        let tampered = BudgetPlan::from_parts(4, counts, plan.median_eps().to_vec(), 1.0);
        assert!(matches!(tampered, Err(Error::BudgetAudit(_))));
    }

    #[test]
    fn compose_sums_to_total_across_strategies() {
        let skips: BTreeSet<usize> = [1usize, 3].into_iter().collect();
        let strategies = [
            CountStrategy::Uniform,
            CountStrategy::Geometric,
            CountStrategy::LeafOnly,
            CountStrategy::SkipLevels(skips),
            CountStrategy::Custom(vec![1.0, 0.0, 2.0, 0.5, 1.5, 0.25, 0.75, 1.0, 3.0]),
        ];
        for strat in &strategies {
            for share in [0.5, 0.7, 1.0] {
                let median =
                    if share == 1.0 { MedianStrategy::None } else { MedianStrategy::UniformInternal };
                let plan = BudgetPlan::compose(8, 2.0, share, strat, &median).unwrap();
                let sum: f64 =
                    plan.count_eps().iter().chain(plan.median_eps().iter()).sum();
                assert!((sum - 2.0).abs() / 2.0 < 1e-12, "{strat:?} share={share}");
            }
        }
    }

    #[test]
    fn skip_levels_zeroed() {
        let skips: BTreeSet<usize> = [0usize, 2].into_iter().collect();
        let plan = BudgetPlan::compose(
            4,
            1.0,
            1.0,
            &CountStrategy::SkipLevels(skips),
            &MedianStrategy::None,
        )
        .unwrap();
        assert_eq!(plan.count_eps_at(0), 0.0);
        assert_eq!(plan.count_eps_at(2), 0.0);
        assert!((plan.count_eps_at(1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn hybrid_top_levels_pattern() {
        let plan = BudgetPlan::compose(
            8,
            1.0,
            0.7,
            &CountStrategy::Geometric,
            &MedianStrategy::HybridTop(4),
        )
        .unwrap();
        // eps_i^m = 0.3/4 for i in 5..=8, zero for i <= 4.
        for i in 0..=4 {
            assert_eq!(plan.median_eps_at(i), 0.0, "level {i}");
        }
        for i in 5..=8 {
            assert!((plan.median_eps_at(i) - 0.075).abs() < 1e-15, "level {i}");
        }
    }
}
