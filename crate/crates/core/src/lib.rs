//! Deterministic simulator for hierarchical federated learning over a
//! two-tier wireless edge network.
//!
//! The crate models a region served by one macro base station and a set of
//! small-cell base stations. User equipments (UEs) train personalized models
//! locally, upload them through a shared wireless uplink, and the edge
//! aggregates them into group and regional models. The pieces:
//!
//! - [`radio`]: topology, path loss, SINR, and uplink rates
//! - [`latency`]: iteration counts and computation/communication delays
//! - [`alloc`]: min-max bandwidth-fraction allocation inside one cell
//! - [`matching`]: UE-to-SBS association via swap matching, plus baselines
//! - [`datagen`]: synthetic and IDX datasets with non-IID partitioning
//! - [`demlearn`]: personalized training, hierarchical averaging, reclustering
//! - [`experiment`]: round orchestration, metrics, and file outputs
//!
//! Every random draw flows from explicit seeds, so any run is reproducible
//! byte for byte.

pub mod alloc;
pub mod datagen;
pub mod demlearn;
pub mod experiment;
pub mod latency;
pub mod matching;
pub mod radio;
pub mod scenario;
pub mod types;
pub mod units;
