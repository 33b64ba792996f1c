//! Terrain-adapted hybrid mesh generation for atmospheric boundary layer domains.
//!
//! The crate covers the full meshing pipeline:
//!
//! 1. [`terrain`] — piecewise-linear topography model with local polynomial
//!    fits for first/second derivative queries.
//! 2. [`metric`] — tangent and curvature metric fields, metric complexity and
//!    metric edge lengths.
//! 3. [`surfmesh`] — region layout, planar Delaunay refinement with a size
//!    field, and the metric-driven adaptive surface loop.
//! 4. [`quality`] / [`optim`] — Jacobian-based shape distortion, quality
//!    statistics, and Gauss-Seidel node optimization (volume, local patch,
//!    and parametric surface variants).
//! 5. [`sweep`] / [`volfill`] — prismatic boundary-layer extrusion along
//!    blended pseudo-normals, tetrahedral column fill, and hybrid merge.
//! 6. [`meshio`] — deterministic exchange format plus VTK legacy export.
//! 7. [`pipeline`] — end-to-end drivers, geometry error measurement and the
//!    convergence-study harness used by the CLI.

pub mod analytic;
pub mod delaunay;
pub mod error;
pub mod geo;
pub mod meshio;
pub mod metric;
pub mod optim;
pub mod pipeline;
pub mod quality;
pub mod surfmesh;
pub mod sweep;
pub mod terrain;
pub mod volfill;

pub use error::{Error, Result};
pub use geo::{Ellipse, Point2, Point3, Rect, Vec2, Vec3};
pub use metric::{Metric2, MetricField2};
pub use quality::{DistortionValue, IdealElement, QualityReport};
pub use surfmesh::{RegionLayout, TriSurfaceMesh};
pub use sweep::{PrismLayerMesh, SweepParams};
pub use terrain::{PolyFit, TerrainModel};
pub use volfill::HybridMesh;
