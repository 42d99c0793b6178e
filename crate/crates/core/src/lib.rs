//! tickmesh: a desk-scale market-data fabric.
//!
//! The crate is organized as a pipeline plus a mesh:
//!
//! * [`model`] — canonical domain types, the subscription filter algebra
//!   (matching, covering, merging) and the TLV notification codec.
//! * [`feedpipe`] — feed handlers: parse source wire formats, check and
//!   purge invalid events, normalize survivors.
//! * [`enrich`] — per-symbol trading-day state (OHLC, volume), enrichment
//!   blocks and derived-event detection.
//! * [`store`] — append-only event store with filtered replay and
//!   latest-value snapshots.
//! * [`overlay`] — link-state topology maintenance, per-source spanning
//!   trees and subscription-interest aggregation.
//! * [`broker`] — a content-based pub/sub broker node with QoI-aware
//!   delivery (conflated vs complete) and mesh forwarding.
//! * [`simnet`] — deterministic discrete-event simulation of multi-site
//!   broker meshes, driven by scenario files, with an independent
//!   log-based verifier.
//! * [`synth`] — seeded synthetic feed generation shared by the simulator
//!   and the `feedgen` tool.

pub mod broker;
pub mod enrich;
pub mod feedpipe;
pub mod model;
pub mod overlay;
pub mod simnet;
pub mod store;
pub mod synth;
