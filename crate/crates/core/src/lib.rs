//! Discovery and route-level presentation of street-view appearance
//! patterns.
//!
//! The pipeline, module by module:
//!
//! 1. [`geo`]: chunk road geometry into ~20 m pieces and place left/right
//!    side-view sample points at each chunk middle.
//! 2. [`features`]: encode images as semantic category histograms (and
//!    carry opaque latent vectors) in dense feature matrices.
//! 3. [`cluster`]: group samples with k-means, Ward agglomerative or
//!    mean-shift clustering, choosing k by silhouette score.
//! 4. [`vapattern`]: summarise each cluster as a named, coloured pattern
//!    with a mean category vector and a representative image.
//! 5. [`routeviz`]: label both sides of candidate routes, split them into
//!    majority-vote segments and summarise pattern shares per side.
//! 6. [`datastore`]: region directories on disk, route providers, fetch
//!    plans and the synthetic region generator.
//! 7. [`service`]: the request handlers behind the CLI and HTTP API.

pub mod cluster;
pub mod datastore;
pub mod features;
pub mod geo;
pub mod routeviz;
pub mod service;
pub mod vapattern;

pub use cluster::{ClusterModel, ClusteringConfig, KStrategy, Method, Metric, SilhouetteReport};
pub use features::{CategoryVector19, CategoryVector6, FeatureKind, FeatureMatrix, LabelMask};
pub use geo::{Chunk, GeoPoint, Polyline, SamplePoint, Side};

pub use routeviz::{PatternDistribution, RouteSegment, RouteTrajectory};
pub use vapattern::{PatternCatalog, VaPattern};
