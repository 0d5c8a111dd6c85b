//! Multi-scale scene recognition with scale-specific feature extractors.
//!
//! The pipeline resizes an image to a set of scales, evaluates a patch
//! extractor densely over each scale, max-pools the patch features within a
//! scale, optionally reduces each scale with PCA, concatenates the scales and
//! trains one-vs-rest linear SVMs on the result. Which extractor runs at which
//! scale is described by a [`ScalePlan`]; the harness searches over plans
//! (single scales, dual pairs, spliced and double-full architectures).
//!
//! Alongside the pipeline the crate carries the dataset-bias instruments:
//! object size and density statistics over polygon annotations, object probe
//! crops at original and canonical scale, and mutual-information based
//! discriminability and redundancy of features.

pub mod classify;
pub mod datastats;
pub mod extract;
pub mod fuse;
pub mod harness;
pub mod metrics;
pub mod pyramid;
pub mod raster;
pub mod variants;

mod binio;

pub use classify::{LabeledSet, SvmConfig, SvmModel};
pub use datastats::{AnnotationRecord, Histogram};
pub use extract::{ExtractorProfile, FeatureStore, PatchFeatureSet};
pub use fuse::{FusedFeature, PcaModel, PooledFeature};
pub use harness::{ExperimentConfig, ResultRow, ResultTable};
pub use metrics::{MiReport, QuantizedFeatures};
pub use pyramid::{PatchGrid, PlanEntry, ScalePlan, ScaleSpec};
pub use raster::Raster;
pub use variants::{Mask, VariantKind, VariantSpec};
