//! Physical entities: agents, the escorted payload, threats, and obstacles.

use crate::geom::Vec2;
use serde::{Deserialize, Serialize};

pub type EntityId = u32;

/// What a physical entity is. Agents are the only controllable kind; the
/// payload is the escorted leader; threats and obstacles are static.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Agent,
    Payload,
    Threat,
    Obstacle,
}

impl EntityKind {
    pub fn is_controllable(self) -> bool {
        matches!(self, EntityKind::Agent)
    }

    /// Sort rank for the canonical entity ordering: agents first, then the
    /// payload, then threats, then obstacles.
    fn rank(self) -> u8 {
        match self {
            EntityKind::Agent => 0,
            EntityKind::Payload => 1,
            EntityKind::Threat => 2,
            EntityKind::Obstacle => 3,
        }
    }
}

/// State of one physical entity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityState {
    pub id: EntityId,
    pub kind: EntityKind,
    pub position: Vec2,
    #[serde(default, skip_serializing_if = "is_zero_velocity")]
    pub velocity: Vec2,
    pub radius: f64,
}

fn is_zero_velocity(v: &Vec2) -> bool {
    *v == Vec2::ZERO
}

/// Default body radius in meters (tabletop-class differential-drive robots).
pub const DEFAULT_RADIUS: f64 = 0.08;

impl EntityState {
    pub fn new(id: EntityId, kind: EntityKind, position: Vec2) -> Self {
        EntityState {
            id,
            kind,
            position,
            velocity: Vec2::ZERO,
            radius: DEFAULT_RADIUS,
        }
    }

    pub fn is_controllable(&self) -> bool {
        self.kind.is_controllable()
    }
}

/// Sort entities into the canonical order used for every matrix column
/// layout and every log: agents ascending by id, then payload, then threats,
/// then obstacles (each group ascending by id).
pub fn canonical_order(entities: &mut [EntityState]) {
    entities.sort_by_key(|e| (e.kind.rank(), e.id));
}

/// Indices of entities of `kind` in the given slice, preserving slice order.
pub fn indices_of(entities: &[EntityState], kind: EntityKind) -> Vec<usize> {
    entities
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == kind)
        .map(|(i, _)| i)
        .collect()
}
