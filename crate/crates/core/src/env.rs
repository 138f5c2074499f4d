//! Arena environments: seeded random generation and the JSON file format.

use crate::entity::{canonical_order, EntityId, EntityKind, EntityState, DEFAULT_RADIUS};
use crate::geom::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default arena width in meters.
pub const DEFAULT_WIDTH: f64 = 3.2;
/// Default arena height in meters.
pub const DEFAULT_HEIGHT: f64 = 2.0;
/// Waypoints are kept at least this far apart (meters).
pub const WAYPOINT_MIN_SEPARATION: f64 = 0.5;
/// All placements stay this far from the arena walls (meters).
const WALL_INSET: f64 = 0.2;
/// Threats and obstacles keep this clearance from every waypoint so the
/// leader track stays open (meters).
const WAYPOINT_CLEARANCE: f64 = 0.3;
/// Agents start on an annulus around the payload with radii in this range.
const AGENT_RING: (f64, f64) = (0.3, 0.6);
/// Rejection-sampling attempts per placed point before giving up.
const RETRY_BUDGET: usize = 10_000;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("could not place {what} after {attempts} attempts (violated: {constraint})")]
    Placement {
        what: String,
        attempts: usize,
        constraint: &'static str,
    },
}

#[derive(Debug, Error)]
pub enum EnvironmentError {
    #[error("entity {id} lies outside the arena bounds")]
    OutOfBounds { id: EntityId },
    #[error("entities {a} and {b} overlap (separation {separation:.4} < {required:.4})")]
    Overlap {
        a: EntityId,
        b: EntityId,
        separation: f64,
        required: f64,
    },
    #[error("environment must contain exactly one payload, found {count}")]
    PayloadCount { count: usize },
    #[error("static entity {id} has nonzero velocity")]
    MovingStatic { id: EntityId },
    #[error("non-finite value in entity {id}")]
    NonFinite { id: EntityId },
}

/// Counts and dimensions used when generating an environment. Obstacle and
/// threat counts are drawn from the inclusive ranges using the environment
/// seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSpec {
    pub width: f64,
    pub height: f64,
    pub num_agents: usize,
    pub obstacle_range: (usize, usize),
    pub threat_range: (usize, usize),
    pub waypoint_count: usize,
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            num_agents: 4,
            obstacle_range: (2, 4),
            threat_range: (2, 3),
            waypoint_count: 5,
        }
    }
}

impl EnvSpec {
    /// Pin the obstacle and threat counts to exact values.
    pub fn with_counts(mut self, obstacles: usize, threats: usize) -> Self {
        self.obstacle_range = (obstacles, obstacles);
        self.threat_range = (threats, threats);
        self
    }
}

/// A fully specified arena: dimensions, entities, and the leader's waypoint
/// loop. Immutable after construction; simulation state lives elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "EnvFile", try_from = "EnvFile")]
pub struct Environment {
    pub width: f64,
    pub height: f64,
    pub seed: u64,
    pub entities: Vec<EntityState>,
    pub waypoints: Vec<Vec2>,
}

impl Environment {
    pub fn agents(&self) -> impl Iterator<Item = &EntityState> {
        self.entities.iter().filter(|e| e.kind == EntityKind::Agent)
    }

    pub fn payload(&self) -> &EntityState {
        self.entities
            .iter()
            .find(|e| e.kind == EntityKind::Payload)
            .expect("validated environment has a payload")
    }

    pub fn num_agents(&self) -> usize {
        self.agents().count()
    }

    /// Check every structural invariant. Generation guarantees these; loaded
    /// files are checked on deserialization.
    pub fn validate(&self) -> Result<(), EnvironmentError> {
        let payloads = self
            .entities
            .iter()
            .filter(|e| e.kind == EntityKind::Payload)
            .count();
        if payloads != 1 {
            return Err(EnvironmentError::PayloadCount { count: payloads });
        }
        for e in &self.entities {
            if !e.position.is_finite() || !e.velocity.is_finite() || !e.radius.is_finite() {
                return Err(EnvironmentError::NonFinite { id: e.id });
            }
            if e.position.x < 0.0
                || e.position.y < 0.0
                || e.position.x > self.width
                || e.position.y > self.height
            {
                return Err(EnvironmentError::OutOfBounds { id: e.id });
            }
            let static_kind = matches!(e.kind, EntityKind::Threat | EntityKind::Obstacle);
            if static_kind && e.velocity != Vec2::ZERO {
                return Err(EnvironmentError::MovingStatic { id: e.id });
            }
        }
        for (i, a) in self.entities.iter().enumerate() {
            for b in &self.entities[i + 1..] {
                let separation = a.position.distance(b.position);
                let required = a.radius + b.radius;
                if separation < required {
                    return Err(EnvironmentError::Overlap {
                        a: a.id,
                        b: b.id,
                        separation,
                        required,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Generate an environment deterministically from `seed`.
///
/// Placement order is fixed (waypoints, payload, agents, threats, obstacles)
/// so a seed always produces the same arena bit for bit. The payload starts
/// on the first waypoint and agents start on a ring around it.
pub fn generate_environment(seed: u64, spec: &EnvSpec) -> Result<Environment, GenerationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_obstacles = sample_count(&mut rng, spec.obstacle_range);
    let num_threats = sample_count(&mut rng, spec.threat_range);

    let x_range = WALL_INSET..=(spec.width - WALL_INSET);
    let y_range = WALL_INSET..=(spec.height - WALL_INSET);

    // Waypoints first; the payload starts on waypoint 0.
    let mut waypoints: Vec<Vec2> = Vec::with_capacity(spec.waypoint_count);
    for w in 0..spec.waypoint_count {
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > RETRY_BUDGET {
                return Err(GenerationError::Placement {
                    what: format!("waypoint {w}"),
                    attempts,
                    constraint: "waypoint pairwise separation >= 0.5 m",
                });
            }
            let candidate = Vec2::new(
                rng.random_range(x_range.clone()),
                rng.random_range(y_range.clone()),
            );
            if waypoints
                .iter()
                .all(|p| p.distance(candidate) >= WAYPOINT_MIN_SEPARATION)
            {
                waypoints.push(candidate);
                break;
            }
        }
    }

    let mut entities: Vec<EntityState> = Vec::new();
    let payload_pos = waypoints[0];
    let payload_id = spec.num_agents as EntityId;
    entities.push(EntityState::new(payload_id, EntityKind::Payload, payload_pos));

    // Agents on an annulus around the payload.
    for a in 0..spec.num_agents {
        let position = place(
            &mut rng,
            &format!("agent {a}"),
            "agent ring inside bounds with pairwise separation",
            |rng| {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let radius = rng.random_range(AGENT_RING.0..AGENT_RING.1);
                payload_pos + Vec2::new(angle.cos(), angle.sin()) * radius
            },
            |p| in_box(p, spec) && separated(p, &entities),
        )?;
        entities.push(EntityState::new(a as EntityId, EntityKind::Agent, position));
    }

    // Threats and obstacles anywhere inset, clear of the leader track.
    let mut next_id = payload_id + 1;
    for (kind, count, label) in [
        (EntityKind::Threat, num_threats, "threat"),
        (EntityKind::Obstacle, num_obstacles, "obstacle"),
    ] {
        for k in 0..count {
            let position = place(
                &mut rng,
                &format!("{label} {k}"),
                "separation from entities and waypoint clearance",
                |rng| {
                    Vec2::new(
                        rng.random_range(x_range.clone()),
                        rng.random_range(y_range.clone()),
                    )
                },
                |p| {
                    separated(p, &entities)
                        && waypoints.iter().all(|w| w.distance(p) >= WAYPOINT_CLEARANCE)
                },
            )?;
            entities.push(EntityState::new(next_id, kind, position));
            next_id += 1;
        }
    }

    canonical_order(&mut entities);
    let env = Environment {
        width: spec.width,
        height: spec.height,
        seed,
        entities,
        waypoints,
    };
    debug_assert!(env.validate().is_ok());
    Ok(env)
}

fn sample_count(rng: &mut ChaCha8Rng, range: (usize, usize)) -> usize {
    if range.0 >= range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}

fn in_box(p: Vec2, spec: &EnvSpec) -> bool {
    p.x >= WALL_INSET
        && p.y >= WALL_INSET
        && p.x <= spec.width - WALL_INSET
        && p.y <= spec.height - WALL_INSET
}

fn separated(p: Vec2, entities: &[EntityState]) -> bool {
    entities
        .iter()
        .all(|e| e.position.distance(p) >= e.radius + DEFAULT_RADIUS)
}

fn place(
    rng: &mut ChaCha8Rng,
    what: &str,
    constraint: &'static str,
    mut sample: impl FnMut(&mut ChaCha8Rng) -> Vec2,
    accept: impl Fn(Vec2) -> bool,
) -> Result<Vec2, GenerationError> {
    for _ in 0..RETRY_BUDGET {
        let candidate = sample(rng);
        if accept(candidate) {
            return Ok(candidate);
        }
    }
    Err(GenerationError::Placement {
        what: what.to_string(),
        attempts: RETRY_BUDGET,
        constraint,
    })
}

// ---------------------------------------------------------------------------
// JSON file format. Field names are part of the interface contract.

#[derive(Clone, Serialize, Deserialize)]
struct EnvFile {
    width: f64,
    height: f64,
    seed: u64,
    entities: Vec<EntityFile>,
    waypoints: Vec<[f64; 2]>,
}

#[derive(Clone, Serialize, Deserialize)]
struct EntityFile {
    id: EntityId,
    kind: EntityKind,
    x: f64,
    y: f64,
    radius: f64,
}

impl From<Environment> for EnvFile {
    fn from(env: Environment) -> Self {
        EnvFile {
            width: env.width,
            height: env.height,
            seed: env.seed,
            entities: env
                .entities
                .iter()
                .map(|e| EntityFile {
                    id: e.id,
                    kind: e.kind,
                    x: e.position.x,
                    y: e.position.y,
                    radius: e.radius,
                })
                .collect(),
            waypoints: env.waypoints.iter().map(|w| [w.x, w.y]).collect(),
        }
    }
}

impl TryFrom<EnvFile> for Environment {
    type Error = EnvironmentError;

    fn try_from(file: EnvFile) -> Result<Self, Self::Error> {
        let mut entities: Vec<EntityState> = file
            .entities
            .iter()
            .map(|e| EntityState {
                id: e.id,
                kind: e.kind,
                position: Vec2::new(e.x, e.y),
                velocity: Vec2::ZERO,
                radius: e.radius,
            })
            .collect();
        canonical_order(&mut entities);
        let env = Environment {
            width: file.width,
            height: file.height,
            seed: file.seed,
            entities,
            waypoints: file.waypoints.iter().map(|w| Vec2::new(w[0], w[1])).collect(),
        };
        env.validate()?;
        Ok(env)
    }
}
