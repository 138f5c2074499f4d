//! Displacement-based formation controller, baseline shape generators, and
//! the velocity-projection safety filter.
//!
//! The controller stacks one condition per formation edge — agent pairs need
//! uᵢ − uⱼ = −e, agent-to-uncontrollable edges need uᵢ = ṡ − e — and solves
//! the whole system in least squares. Driving every edge error toward zero
//! this way makes the quadratic edge-error sum a Lyapunov function.

use crate::entity::{EntityId, EntityKind, EntityState};
use crate::geom::Vec2;
use crate::graph::{build_incidence, FormationGraph, GraphError};
use nalgebra::DMatrix;
use thiserror::Error;

/// Default speed limit (m/s), a small-wheeled-robot hardware ceiling.
pub const DEFAULT_V_MAX: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("controller system is rank deficient; agents without edges: {disconnected:?}")]
    RankDeficient { disconnected: Vec<EntityId> },
    #[error("least-squares solve failed")]
    SolveFailed,
}

/// Per-agent velocity commands in canonical agent order, with flags noting
/// which agents were speed-saturated or altered by the safety filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlCommand {
    pub velocities: Vec<Vec2>,
    pub saturated: Vec<bool>,
    pub filtered: Vec<bool>,
}

impl ControlCommand {
    fn zeros(n: usize) -> Self {
        ControlCommand {
            velocities: vec![Vec2::ZERO; n],
            saturated: vec![false; n],
            filtered: vec![false; n],
        }
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("shape template offsets {a} and {b} coincide")]
    DuplicateOffset { a: usize, b: usize },
    #[error("template has {offsets} offsets but the formation has {agents} agents")]
    SizeMismatch { offsets: usize, agents: usize },
}

/// Named per-agent offsets from the leader defining a rigid shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTemplate {
    offsets: Vec<Vec2>,
}

impl ShapeTemplate {
    pub fn new(offsets: Vec<Vec2>) -> Result<Self, TemplateError> {
        for (a, p) in offsets.iter().enumerate() {
            for (b, q) in offsets.iter().enumerate().skip(a + 1) {
                if p.distance(*q) < 1e-12 {
                    return Err(TemplateError::DuplicateOffset { a, b });
                }
            }
        }
        Ok(ShapeTemplate { offsets })
    }

    /// The default box: agents on the corners of a 0.6 × 0.6 m square with
    /// the leader in the middle.
    pub fn unit_box() -> Self {
        ShapeTemplate::new(vec![
            Vec2::new(0.3, 0.3),
            Vec2::new(-0.3, 0.3),
            Vec2::new(-0.3, -0.3),
            Vec2::new(0.3, -0.3),
        ])
        .expect("box corners are distinct")
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Fixed-shape targets: world-frame template offsets around the leader.
pub fn fs_targets(leader: Vec2, template: &ShapeTemplate) -> Vec<Vec2> {
    template.offsets.iter().map(|&o| leader + o).collect()
}

/// Leader-aligned targets: template offsets rotated by the leader heading,
/// then translated to the leader. The rigid (rotation + translation) subset
/// of leader-driven shape adaptation.
pub fn af_targets(leader: Vec2, heading: f64, template: &ShapeTemplate) -> Vec<Vec2> {
    template
        .offsets
        .iter()
        .map(|&o| leader + o.rotated(heading))
        .collect()
}

/// ½ Σ eᵀe over all formation edges.
pub fn lyapunov_value(graph: &FormationGraph, entities: &[EntityState]) -> Result<f64, GraphError> {
    Ok(graph
        .displacement_errors(entities)?
        .iter()
        .map(|e| 0.5 * e.norm_squared())
        .sum())
}

/// Solve the stacked per-edge velocity conditions in least squares and
/// saturate each agent to `v_max` preserving direction. Uncontrollable
/// velocities are read from the entity states (the leader's current command,
/// zeros for static threats and obstacles).
pub fn compute_control(
    graph: &FormationGraph,
    entities: &[EntityState],
    v_max: f64,
) -> Result<ControlCommand, ControlError> {
    let incidence = build_incidence(graph, entities)?;
    let n = incidence.controllable_ids.len();
    let errors = graph.displacement_errors(entities)?;

    if incidence.b1.rank(1e-10) < n {
        let disconnected = incidence
            .controllable_ids
            .iter()
            .enumerate()
            .filter(|(col, _)| incidence.b1.column(*col).amax() == 0.0)
            .map(|(_, &id)| id)
            .collect();
        return Err(ControlError::RankDeficient { disconnected });
    }

    // Two right-hand-side columns (x and y); the coordinates decouple.
    let error_matrix = DMatrix::from_fn(errors.len(), 2, |r, c| {
        if c == 0 {
            errors[r].x
        } else {
            errors[r].y
        }
    });
    let s_dot = DMatrix::from_fn(incidence.uncontrollable_ids.len(), 2, |r, c| {
        let id = incidence.uncontrollable_ids[r];
        let v = entities
            .iter()
            .find(|e| e.id == id)
            .map(|e| e.velocity)
            .unwrap_or(Vec2::ZERO);
        if c == 0 {
            v.x
        } else {
            v.y
        }
    });
    let rhs = -error_matrix - &incidence.b2 * s_dot;
    let solution = incidence
        .b1
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|_| ControlError::SolveFailed)?;

    let mut command = ControlCommand::zeros(n);
    for i in 0..n {
        let u = Vec2::new(solution[(i, 0)], solution[(i, 1)]);
        let speed = u.norm();
        if speed > v_max {
            command.velocities[i] = u * (v_max / speed);
            command.saturated[i] = true;
        } else {
            command.velocities[i] = u;
        }
    }
    Ok(command)
}

/// Remove approaching velocity components for agents within `margin`
/// (center distance) of an obstacle, another agent, or — when
/// `include_threats` — a threat. Cyclic projections over the violated
/// half-space constraints; an agent that cannot be made safe stops.
pub fn safety_filter(
    mut command: ControlCommand,
    entities: &[EntityState],
    margin: f64,
    include_threats: bool,
) -> ControlCommand {
    let agents: Vec<&EntityState> = entities
        .iter()
        .filter(|e| e.kind == EntityKind::Agent)
        .collect();
    for (i, agent) in agents.iter().enumerate() {
        let neighbors: Vec<Vec2> = entities
            .iter()
            .filter(|e| e.id != agent.id)
            .filter(|e| match e.kind {
                EntityKind::Agent | EntityKind::Obstacle => true,
                EntityKind::Threat => include_threats,
                EntityKind::Payload => false,
            })
            .map(|e| e.position)
            .filter(|p| agent.position.distance(*p) < margin)
            .collect();
        if neighbors.is_empty() {
            continue;
        }
        let original = command.velocities[i];
        let mut u = original;
        let mut safe = false;
        for _ in 0..10 {
            let mut changed = false;
            for &p in &neighbors {
                let toward = p - agent.position;
                let distance = toward.norm();
                if distance < 1e-12 {
                    u = Vec2::ZERO;
                    changed = true;
                    continue;
                }
                let normal = toward / distance;
                let approach = u.dot(normal);
                if approach > 1e-12 {
                    u -= normal * approach;
                    changed = true;
                }
            }
            if !changed {
                safe = true;
                break;
            }
        }
        if !safe {
            let still_approaching = neighbors.iter().any(|&p| {
                let toward = p - agent.position;
                toward.norm() > 1e-12 && u.dot(toward / toward.norm()) > 1e-12
            });
            if still_approaching {
                u = Vec2::ZERO;
            }
        }
        if u != original {
            command.velocities[i] = u;
            command.filtered[i] = true;
        }
    }
    command
}
