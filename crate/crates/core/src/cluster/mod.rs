pub mod gmm;
pub mod kmeans;
pub mod map;
pub mod merge;
pub mod pca;

pub use gmm::{gmm_fit, gmm_fit_with, GmmConfig, GmmModel};
pub use kmeans::{kmeans_fit, KMeansResult};
pub use map::{ClusterMap, NO_DATA};
pub use merge::{merge_clusters, min_pairwise_angle, MergeStep};
pub use pca::{pca, Pca};
