//! Credit scoring from smartphone microlending data with pseudo-social network features.
//!
//! Users are linked to the apps they use frequently ([`network::BipartiteNetwork`]);
//! projecting that graph onto users yields a similarity network
//! ([`network::UnipartiteNetwork`]) from which neighborhood, centrality,
//! influence and embedding features are extracted. Those features, together with
//! socio-demographic and calling-behaviour aggregates, feed binary classifiers
//! whose predictive power is compared per feature group.

pub mod data;
pub mod embed;
pub mod eval;
pub mod netfeat;
pub mod network;
pub mod pipeline;
pub mod scoring;
pub mod seed;
