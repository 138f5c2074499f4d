//! Formation planning and control engine for multi-robot payload escort.
//!
//! The crate simulates a leader (payload) following waypoints through a field
//! of threats and obstacles while a team of agents holds a formation around
//! it. Formations come from one of four methods: an adaptive-weight planner
//! that learns a surrogate cost online, the same planner with static random
//! weights, a fixed box shape, and a leader-aligned box shape.

pub mod controller;
pub mod costs;
pub mod entity;
pub mod env;
pub mod eval;
pub mod geom;
pub mod graph;
pub mod planner;
pub mod qp;
pub mod sim;
pub mod surrogate;

pub use entity::{canonical_order, EntityId, EntityKind, EntityState};
pub use env::{generate_environment, EnvSpec, Environment};
pub use geom::Vec2;
pub use graph::{build_incidence, Edge, FormationGraph, IncidenceMatrix};
