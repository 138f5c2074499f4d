//! Formation graphs and incidence matrices.
//!
//! Edges are directed from a controllable agent (tail) to either another
//! agent or an uncontrollable entity (head). The incidence matrix splits by
//! controllability into `B1` (agent columns) and `B2` (everything else), so
//! per-edge displacements are the rows of `B1·X + B2·S`.

use crate::entity::{EntityId, EntityKind, EntityState};
use crate::geom::Vec2;
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge {index} is a self-edge on entity {id}")]
    SelfEdge { index: usize, id: EntityId },
    #[error("edge {index} references unknown entity {id}")]
    UnknownEntity { index: usize, id: EntityId },
    #[error("edge {index} tail {id} is not an agent")]
    TailNotAgent { index: usize, id: EntityId },
    #[error("graph has no edges")]
    Empty,
    #[error("{edges} edges but {displacements} desired displacements")]
    DisplacementMismatch { edges: usize, displacements: usize },
    #[error("{edges} edges cannot constrain {agents} agents")]
    UnderConstrained { edges: usize, agents: usize },
}

/// A directed formation edge. `controllable_head` records whether the head
/// is an agent (true) or an uncontrollable entity such as the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub tail: EntityId,
    pub head: EntityId,
    pub controllable_head: bool,
}

/// Edge list plus the desired displacement (tail − head) for each edge.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationGraph {
    pub edges: Vec<Edge>,
    pub desired_displacements: Vec<Vec2>,
}

impl FormationGraph {
    pub fn new(edges: Vec<Edge>, desired_displacements: Vec<Vec2>) -> Result<Self, GraphError> {
        if edges.is_empty() {
            return Err(GraphError::Empty);
        }
        if edges.len() != desired_displacements.len() {
            return Err(GraphError::DisplacementMismatch {
                edges: edges.len(),
                displacements: desired_displacements.len(),
            });
        }
        for (index, e) in edges.iter().enumerate() {
            if e.tail == e.head {
                return Err(GraphError::SelfEdge { index, id: e.tail });
            }
        }
        Ok(FormationGraph {
            edges,
            desired_displacements,
        })
    }

    /// Default topology: complete graph over the agents (tail = lower id)
    /// plus one edge from every agent to the payload. Displacements start at
    /// zero and are set by the planner or a shape template.
    pub fn complete_with_payload(entities: &[EntityState]) -> Result<Self, GraphError> {
        let agents: Vec<EntityId> = entities
            .iter()
            .filter(|e| e.kind == EntityKind::Agent)
            .map(|e| e.id)
            .collect();
        let payload = entities
            .iter()
            .find(|e| e.kind == EntityKind::Payload)
            .map(|e| e.id);
        let mut edges = Vec::new();
        for (i, &a) in agents.iter().enumerate() {
            for &b in &agents[i + 1..] {
                let (tail, head) = if a < b { (a, b) } else { (b, a) };
                edges.push(Edge {
                    tail,
                    head,
                    controllable_head: true,
                });
            }
        }
        if let Some(p) = payload {
            for &a in &agents {
                edges.push(Edge {
                    tail: a,
                    head: p,
                    controllable_head: false,
                });
            }
        }
        let zeros = vec![Vec2::ZERO; edges.len()];
        let graph = FormationGraph::new(edges, zeros)?;
        graph.validate_against(entities)?;
        Ok(graph)
    }

    /// Check edge endpoints and controllability flags against an entity list,
    /// and that there are enough edges to determine every agent.
    pub fn validate_against(&self, entities: &[EntityState]) -> Result<(), GraphError> {
        let kind_of = |id: EntityId| entities.iter().find(|e| e.id == id).map(|e| e.kind);
        let agents = entities
            .iter()
            .filter(|e| e.kind == EntityKind::Agent)
            .count();
        if self.edges.len() < agents {
            return Err(GraphError::UnderConstrained {
                edges: self.edges.len(),
                agents,
            });
        }
        for (index, e) in self.edges.iter().enumerate() {
            match kind_of(e.tail) {
                None => return Err(GraphError::UnknownEntity { index, id: e.tail }),
                Some(EntityKind::Agent) => {}
                Some(_) => return Err(GraphError::TailNotAgent { index, id: e.tail }),
            }
            match kind_of(e.head) {
                None => return Err(GraphError::UnknownEntity { index, id: e.head }),
                Some(kind) => {
                    debug_assert_eq!(kind.is_controllable(), e.controllable_head);
                }
            }
        }
        Ok(())
    }

    /// Per-edge formation error `(tail − head) − desired`, in edge order.
    pub fn displacement_errors(&self, entities: &[EntityState]) -> Result<Vec<Vec2>, GraphError> {
        let position = |index: usize, id: EntityId| {
            entities
                .iter()
                .find(|e| e.id == id)
                .map(|e| e.position)
                .ok_or(GraphError::UnknownEntity { index, id })
        };
        self.edges
            .iter()
            .zip(&self.desired_displacements)
            .enumerate()
            .map(|(i, (e, desired))| {
                Ok(position(i, e.tail)? - position(i, e.head)? - *desired)
            })
            .collect()
    }

    /// Rebuild the desired displacements from absolute per-agent targets:
    /// agent pairs use target differences, uncontrollable heads use the
    /// head's current position. `targets` is indexed by canonical agent
    /// order (ascending id).
    pub fn set_displacements_from_targets(
        &mut self,
        targets: &[Vec2],
        entities: &[EntityState],
    ) -> Result<(), GraphError> {
        let agent_ids: Vec<EntityId> = entities
            .iter()
            .filter(|e| e.kind == EntityKind::Agent)
            .map(|e| e.id)
            .collect();
        let target_of = |index: usize, id: EntityId| {
            agent_ids
                .iter()
                .position(|&a| a == id)
                .and_then(|i| targets.get(i).copied())
                .ok_or(GraphError::UnknownEntity { index, id })
        };
        let position = |index: usize, id: EntityId| {
            entities
                .iter()
                .find(|e| e.id == id)
                .map(|e| e.position)
                .ok_or(GraphError::UnknownEntity { index, id })
        };
        let mut desired = Vec::with_capacity(self.edges.len());
        for (i, e) in self.edges.iter().enumerate() {
            let d = if e.controllable_head {
                target_of(i, e.tail)? - target_of(i, e.head)?
            } else {
                target_of(i, e.tail)? - position(i, e.head)?
            };
            desired.push(d);
        }
        self.desired_displacements = desired;
        Ok(())
    }
}

/// Incidence matrix split into controllable (`b1`) and uncontrollable (`b2`)
/// column blocks. Column orders follow the canonical entity ordering and are
/// recorded alongside the matrices.
#[derive(Debug, Clone)]
pub struct IncidenceMatrix {
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub controllable_ids: Vec<EntityId>,
    pub uncontrollable_ids: Vec<EntityId>,
}

/// Build the split incidence matrix for `graph` over `entities`.
///
/// Each row carries +1 at the tail column and −1 at the head column; the
/// head lands in `b1` or `b2` according to controllability.
pub fn build_incidence(
    graph: &FormationGraph,
    entities: &[EntityState],
) -> Result<IncidenceMatrix, GraphError> {
    if graph.edges.is_empty() {
        return Err(GraphError::Empty);
    }
    let controllable_ids: Vec<EntityId> = entities
        .iter()
        .filter(|e| e.kind.is_controllable())
        .map(|e| e.id)
        .collect();
    let uncontrollable_ids: Vec<EntityId> = entities
        .iter()
        .filter(|e| !e.kind.is_controllable())
        .map(|e| e.id)
        .collect();
    let rows = graph.edges.len();
    let mut b1 = DMatrix::zeros(rows, controllable_ids.len());
    let mut b2 = DMatrix::zeros(rows, uncontrollable_ids.len());
    for (row, e) in graph.edges.iter().enumerate() {
        let tail_col = controllable_ids
            .iter()
            .position(|&id| id == e.tail)
            .ok_or(GraphError::UnknownEntity {
                index: row,
                id: e.tail,
            })?;
        b1[(row, tail_col)] = 1.0;
        if let Some(col) = controllable_ids.iter().position(|&id| id == e.head) {
            b1[(row, col)] = -1.0;
        } else if let Some(col) = uncontrollable_ids.iter().position(|&id| id == e.head) {
            b2[(row, col)] = -1.0;
        } else {
            return Err(GraphError::UnknownEntity {
                index: row,
                id: e.head,
            });
        }
    }
    Ok(IncidenceMatrix {
        b1,
        b2,
        controllable_ids,
        uncontrollable_ids,
    })
}
