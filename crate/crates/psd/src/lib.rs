//! Differentially private spatial decompositions over 2D point data.
//!
//! The library builds complete spatial index trees (quadtrees, flattened
//! kd-trees, hybrids, Hilbert R-trees) whose node counts are released through
//! the Laplace mechanism and whose data-dependent splits are released through
//! private median mechanisms. Budgets compose along root-to-leaf paths;
//! least-squares post-processing restores parent/child consistency and cuts
//! query variance; rectangular range queries are answered by the canonical
//! maximal-containment descent with an area-uniformity correction at partial
//! leaves.

pub mod budget;
pub mod error;
pub mod geom;
pub mod hilbert;
pub mod median;
pub mod noise;
pub mod postprocess;
pub mod query;
pub mod tree;

pub use error::{Error, Result};
pub use geom::{Point, Rect, RectRelation};
pub use noise::RandomSource;
pub use tree::PsdTree;
