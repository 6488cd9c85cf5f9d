//! Deterministic hierarchy engine: power-law algebra, cluster ladders, exit statistics of
//! clusters and the metastable coefficients of each time window.

mod cluster;
mod powerlaw;
mod profile;
mod tree;

pub use cluster::{
    chain_stationary, cluster_exit_stats, distribute, ladder_values, partition_cluster, scale_ladder, singleton_exit_stats,
    ChainLink, ChainStationary, Cluster, Decomposition, Diagnostics, Exit, ExitLaw, Partition, Scale, BALANCE_TOL,
};
pub use powerlaw::{format_exponent, parse_exponent, Exponent, PowerLaw};
pub use profile::{all_profiles, audit, c_sensitivity, metastable_profile, rho_invariance_check, window_index, Audit, MetastableProfile, Window};
pub use tree::{random_tree, Domain, DomainTree, SurfaceEdge};
