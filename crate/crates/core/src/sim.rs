//! Deterministic discrete-time simulation: waypoint-following leader,
//! single-integrator agents, and the per-step planner → controller → filter
//! → integrate orchestration for each of the four formation methods.

use crate::controller::{
    af_targets, compute_control, fs_targets, lyapunov_value, safety_filter, ControlError,
    ShapeTemplate, TemplateError, DEFAULT_V_MAX,
};
use crate::costs::{
    basis_vector, true_obstacle_cost, true_protection_cost, violation_cost, BasisVector,
    CostConfig, NUM_BASIS,
};
use crate::entity::{EntityId, EntityKind, EntityState};
use crate::env::Environment;
use crate::geom::Vec2;
use crate::graph::{FormationGraph, GraphError};
use crate::planner::{PlanBounds, PlannerConfig, PlannerState};
use crate::surrogate::{AdaptiveConfig, AdaptiveWeights};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The four benchmark formation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Formation planning with adaptive weights (the full algorithm).
    #[serde(rename = "FP_AW")]
    FpAw,
    /// Formation planning with static random weights drawn once per trial.
    #[serde(rename = "FP")]
    Fp,
    /// Fixed box shape around the leader.
    #[serde(rename = "FS")]
    Fs,
    /// Leader-aligned (heading-rotated) box shape.
    #[serde(rename = "AF")]
    Af,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FpAw, Method::Fp, Method::Fs, Method::Af];

    /// Wire name used in logs and file names.
    pub fn name(&self) -> &'static str {
        match self {
            Method::FpAw => "FP_AW",
            Method::Fp => "FP",
            Method::Fs => "FS",
            Method::Af => "AF",
        }
    }

    /// Whether the method computes targets by minimizing a surrogate cost
    /// (as opposed to holding a shape template).
    pub fn is_planning(&self) -> bool {
        matches!(self, Method::FpAw | Method::Fp)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "FP_AW" | "FPAW" => Ok(Method::FpAw),
            "FP" => Ok(Method::Fp),
            "FS" => Ok(Method::Fs),
            "AF" => Ok(Method::Af),
            other => Err(format!("unknown method {other:?} (expected FP_AW, FP, FS, or AF)")),
        }
    }
}

/// Which true cost the adaptive method observes as c*.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ObservedCost {
    Protection,
    Obstacle,
    Violation,
    /// The sum of all three (the full multi-objective cost).
    #[default]
    Total,
}

/// Everything a trial needs beyond the environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub total_steps: usize,
    pub method: Method,
    pub v_max: f64,
    pub leader_gain: f64,
    pub waypoint_tolerance: f64,
    /// Seed of the trial's random draws (adaptive redraws, FP weights).
    pub seed: u64,
    pub observed_cost: ObservedCost,
    pub costs: CostConfig,
    pub adaptive: AdaptiveConfig,
    pub planner: PlannerConfig,
    /// Center-distance margin of the safety filter.
    pub safety_margin: f64,
    /// Whether threats participate in the safety filter.
    pub filter_threats: bool,
    /// Apply the safety filter to the planning methods too (the planner
    /// normally handles avoidance itself).
    pub filter_planning_methods: bool,
    /// Run the planner every k-th step (1 = every step).
    pub plan_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1.0 / 30.0,
            total_steps: 3000,
            method: Method::FpAw,
            v_max: DEFAULT_V_MAX,
            leader_gain: 1.0,
            waypoint_tolerance: 0.05,
            seed: 0,
            observed_cost: ObservedCost::Total,
            costs: CostConfig::default(),
            adaptive: AdaptiveConfig::default(),
            planner: PlannerConfig::default(),
            safety_margin: 0.25,
            filter_threats: true,
            filter_planning_methods: false,
            plan_every: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("environment has no agents")]
    NoAgents,
    #[error("invalid config: {0}")]
    Config(&'static str),
}

/// Everything observed at one step, captured before integration so the
/// record shows the state the commands were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Positions of all entities, canonical order.
    pub positions: Vec<Vec2>,
    /// Agent commands after saturation and (when active) the safety filter.
    pub commands: Vec<Vec2>,
    pub saturated: Vec<bool>,
    pub filtered: Vec<bool>,
    /// Planned absolute targets, canonical agent order.
    pub planned: Vec<Vec2>,
    pub alpha: [f64; NUM_BASIS],
    pub forgetting: f64,
    pub tau_x: f64,
    pub accepted: bool,
    pub adopted: bool,
    pub fit_residual: f64,
    pub surrogate_value: f64,
    pub protection: f64,
    pub obstacle: f64,
    pub violation: f64,
    pub lyapunov: f64,
}

/// Accumulated (summed over steps) true costs of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FinalCosts {
    pub protection: f64,
    pub obstacle: f64,
    pub violation: f64,
}

impl FinalCosts {
    pub fn total(&self) -> f64 {
        self.protection + self.obstacle + self.violation
    }
}

/// Complete record of one trial.
#[derive(Debug, Clone)]
pub struct TrialLog {
    pub env_seed: u64,
    pub method: Method,
    pub trial_index: u32,
    pub aborted: bool,
    pub agent_ids: Vec<EntityId>,
    pub records: Vec<StepRecord>,
    pub final_costs: FinalCosts,
}

/// Machine-readable trial summary, serialized as the JSON sidecar next to
/// the per-step CSV logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub env_seed: u64,
    pub method: Method,
    pub trial_index: u32,
    pub aborted: bool,
    pub final_costs: FinalCosts,
}

impl TrialLog {
    pub fn summary(&self) -> TrialSummary {
        TrialSummary {
            env_seed: self.env_seed,
            method: self.method,
            trial_index: self.trial_index,
            aborted: self.aborted,
            final_costs: self.final_costs,
        }
    }

    /// Per-step weight trace. Only the planning methods carry meaningful
    /// weights, so this is `None` for the shape-based ones.
    pub fn weights_csv(&self) -> Option<String> {
        if !self.method.is_planning() {
            return None;
        }
        let mut out =
            String::from("step,alpha_1,alpha_2,alpha_3,alpha_4,alpha_5,w_t,tau_x,accepted,fit_residual\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.step,
                r.alpha[0],
                r.alpha[1],
                r.alpha[2],
                r.alpha[3],
                r.alpha[4],
                r.forgetting,
                r.tau_x,
                r.accepted,
                r.fit_residual
            ));
        }
        Some(out)
    }

    /// Per-step planned (or template) target of every agent.
    pub fn plan_csv(&self) -> String {
        let mut out = String::from("step,agent_id,x_plan,y_plan,surrogate_value\n");
        for r in &self.records {
            for (id, target) in self.agent_ids.iter().zip(&r.planned) {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.step, id, target.x, target.y, r.surrogate_value
                ));
            }
        }
        out
    }

    /// Per-step applied velocity command of every agent.
    pub fn commands_csv(&self) -> String {
        let mut out = String::from("step,agent_id,ux,uy,saturated,filtered\n");
        for r in &self.records {
            for (k, id) in self.agent_ids.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.step, id, r.commands[k].x, r.commands[k].y, r.saturated[k], r.filtered[k]
                ));
            }
        }
        out
    }
}

/// Proportional leader velocity toward the active waypoint, advancing (and
/// wrapping) the index on arrival. Returns the velocity and the new index.
pub fn leader_step(
    position: Vec2,
    waypoints: &[Vec2],
    active: usize,
    gain: f64,
    tolerance: f64,
    v_max: f64,
) -> (Vec2, usize) {
    if waypoints.is_empty() {
        return (Vec2::ZERO, active);
    }
    let mut index = active % waypoints.len();
    if position.distance(waypoints[index]) < tolerance {
        index = (index + 1) % waypoints.len();
    }
    let velocity = ((waypoints[index] - position) * gain).clamped_norm(v_max);
    (velocity, index)
}

// One instance lives per simulation, so the variant size spread is harmless.
#[allow(clippy::large_enum_variant)]
enum MethodState {
    AdaptivePlanning {
        adaptive: AdaptiveWeights,
        planner: PlannerState,
    },
    StaticPlanning {
        alpha: BasisVector,
        planner: PlannerState,
    },
    FixedShape {
        template: ShapeTemplate,
    },
    AlignedShape {
        template: ShapeTemplate,
        heading: f64,
    },
}

/// One running trial: the mutable world plus per-method state.
pub struct Sim {
    config: SimConfig,
    entities: Vec<EntityState>,
    graph: FormationGraph,
    waypoints: Vec<Vec2>,
    bounds: PlanBounds,
    active_waypoint: usize,
    method_state: MethodState,
    step_index: usize,
    last_targets: Vec<Vec2>,
    pub aborted: bool,
}

impl Sim {
    pub fn new(env: &Environment, config: SimConfig) -> Result<Self, SimError> {
        if config.dt <= 0.0 {
            return Err(SimError::Config("dt must be positive"));
        }
        if config.total_steps == 0 {
            return Err(SimError::Config("total_steps must be positive"));
        }
        if config.plan_every == 0 {
            return Err(SimError::Config("plan_every must be positive"));
        }
        let entities = env.entities.clone();
        let agents: Vec<&EntityState> = entities
            .iter()
            .filter(|e| e.kind == EntityKind::Agent)
            .collect();
        if agents.is_empty() {
            return Err(SimError::NoAgents);
        }
        let agent_positions: Vec<Vec2> = agents.iter().map(|a| a.position).collect();
        let inset = agents.iter().map(|a| a.radius).fold(0.0, f64::max);
        let graph = FormationGraph::complete_with_payload(&entities)?;

        let method_state = match config.method {
            Method::FpAw => MethodState::AdaptivePlanning {
                adaptive: AdaptiveWeights::new(config.adaptive, config.seed),
                planner: PlannerState::new(&agent_positions, config.planner),
            },
            Method::Fp => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                let dirichlet = Dirichlet::<f64, NUM_BASIS>::new([1.0; NUM_BASIS])
                    .expect("uniform Dirichlet parameters are valid");
                let alpha = BasisVector::from(dirichlet.sample(&mut rng));
                MethodState::StaticPlanning {
                    alpha,
                    planner: PlannerState::new(&agent_positions, config.planner),
                }
            }
            Method::Fs => {
                let template = ShapeTemplate::unit_box();
                check_template(&template, agents.len())?;
                MethodState::FixedShape { template }
            }
            Method::Af => {
                let template = ShapeTemplate::unit_box();
                check_template(&template, agents.len())?;
                MethodState::AlignedShape {
                    template,
                    heading: 0.0,
                }
            }
        };

        Ok(Sim {
            bounds: PlanBounds::arena(env.width, env.height, inset),
            config,
            entities,
            graph,
            waypoints: env.waypoints.clone(),
            active_waypoint: 0,
            method_state,
            step_index: 0,
            last_targets: agent_positions,
            aborted: false,
        })
    }

    fn observed_cost(&self, agents: &[Vec2], scene: &crate::costs::SceneView) -> f64 {
        let thresholds = &self.config.costs.thresholds;
        match self.config.observed_cost {
            ObservedCost::Protection => {
                true_protection_cost(agents, &scene.threats, scene.payload)
            }
            ObservedCost::Obstacle => true_obstacle_cost(agents, &scene.obstacles),
            ObservedCost::Violation => violation_cost(
                agents,
                &scene.threats,
                &scene.obstacles,
                scene.payload,
                thresholds,
            ),
            ObservedCost::Total => {
                true_protection_cost(agents, &scene.threats, scene.payload)
                    + true_obstacle_cost(agents, &scene.obstacles)
                    + violation_cost(
                        agents,
                        &scene.threats,
                        &scene.obstacles,
                        scene.payload,
                        thresholds,
                    )
            }
        }
    }

    /// Advance the world by one step. Returns the pre-integration record, or
    /// an error when the controller fails structurally (the caller marks the
    /// trial aborted).
    pub fn step(&mut self) -> Result<StepRecord, ControlError> {
        let step = self.step_index;
        let (scene, agents) = crate::costs::SceneView::from_entities(&self.entities);

        // 1. Leader velocity for this step (written into the payload state
        //    so the controller sees it as the uncontrollable velocity).
        let payload_index = self
            .entities
            .iter()
            .position(|e| e.kind == EntityKind::Payload);
        let leader_velocity = match payload_index {
            Some(i) => {
                let (velocity, next) = leader_step(
                    self.entities[i].position,
                    &self.waypoints,
                    self.active_waypoint,
                    self.config.leader_gain,
                    self.config.waypoint_tolerance,
                    self.config.v_max,
                );
                self.active_waypoint = next;
                self.entities[i].velocity = velocity;
                velocity
            }
            None => Vec2::ZERO,
        };

        // 2. Method-specific targets and bookkeeping.
        let c_star = self.observed_cost(&agents, &scene);
        let plan_now = step.is_multiple_of(self.config.plan_every);
        let mut alpha_used = [0.0; NUM_BASIS];
        let mut forgetting = 0.0;
        let mut tau_x = 0.0;
        let mut accepted = false;
        let mut adopted = false;
        let mut fit_residual = 0.0;
        let mut surrogate_value = 0.0;
        let targets = match &mut self.method_state {
            MethodState::AdaptivePlanning { adaptive, planner } => {
                let f = basis_vector(&agents, &scene, &self.config.costs);
                let outcome = adaptive.adaptive_step(&f, c_star, &agents, step);
                accepted = outcome.accepted;
                adopted = outcome.adopted;
                fit_residual = outcome.fit_residual;
                let alpha = adaptive.alpha();
                alpha_used = alpha.into();
                forgetting = adaptive.model.forgetting;
                tau_x = adaptive.tau_x;
                if plan_now {
                    let plan =
                        planner.plan_formation(&alpha, &scene, &self.config.costs, &self.bounds);
                    surrogate_value = plan.surrogate_value;
                    plan.positions
                } else {
                    surrogate_value =
                        alpha.dot(&basis_vector(&planner.planned, &scene, &self.config.costs));
                    planner.planned.clone()
                }
            }
            MethodState::StaticPlanning { alpha, planner } => {
                alpha_used = (*alpha).into();
                if plan_now {
                    let plan =
                        planner.plan_formation(alpha, &scene, &self.config.costs, &self.bounds);
                    surrogate_value = plan.surrogate_value;
                    plan.positions
                } else {
                    surrogate_value =
                        alpha.dot(&basis_vector(&planner.planned, &scene, &self.config.costs));
                    planner.planned.clone()
                }
            }
            MethodState::FixedShape { template } => fs_targets(scene.payload, template),
            MethodState::AlignedShape { template, heading } => {
                if leader_velocity.norm() > 1e-9 {
                    *heading = leader_velocity.y.atan2(leader_velocity.x);
                }
                af_targets(scene.payload, *heading, template)
            }
        };
        self.graph
            .set_displacements_from_targets(&targets, &self.entities)?;
        self.last_targets = targets.clone();

        // 3–4. Control, then the safety filter for the shape methods.
        let command = compute_control(&self.graph, &self.entities, self.config.v_max)?;
        let filter_active = match self.config.method {
            Method::Fs | Method::Af => true,
            Method::FpAw | Method::Fp => self.config.filter_planning_methods,
        };
        let command = if filter_active {
            safety_filter(
                command,
                &self.entities,
                self.config.safety_margin,
                self.config.filter_threats,
            )
        } else {
            command
        };

        // 5. Record the pre-integration state.
        let record = StepRecord {
            step,
            positions: self.entities.iter().map(|e| e.position).collect(),
            commands: command.velocities.clone(),
            saturated: command.saturated.clone(),
            filtered: command.filtered.clone(),
            planned: targets,
            alpha: alpha_used,
            forgetting,
            tau_x,
            accepted,
            adopted,
            fit_residual,
            surrogate_value,
            protection: true_protection_cost(&agents, &scene.threats, scene.payload),
            obstacle: true_obstacle_cost(&agents, &scene.obstacles),
            violation: violation_cost(
                &agents,
                &scene.threats,
                &scene.obstacles,
                scene.payload,
                &self.config.costs.thresholds,
            ),
            lyapunov: lyapunov_value(&self.graph, &self.entities)?,
        };

        // 6. Euler integration: agents follow commands, the leader follows
        //    its own velocity.
        let dt = self.config.dt;
        let mut agent_index = 0;
        for e in &mut self.entities {
            match e.kind {
                EntityKind::Agent => {
                    e.velocity = command.velocities[agent_index];
                    e.position += command.velocities[agent_index] * dt;
                    agent_index += 1;
                }
                EntityKind::Payload => {
                    e.position += e.velocity * dt;
                }
                EntityKind::Threat | EntityKind::Obstacle => {}
            }
        }
        if self
            .entities
            .iter()
            .any(|e| !e.position.is_finite() || !e.velocity.is_finite())
        {
            self.aborted = true;
        }
        self.step_index += 1;
        Ok(record)
    }
}

fn check_template(template: &ShapeTemplate, agents: usize) -> Result<(), SimError> {
    if template.len() != agents {
        return Err(SimError::Template(TemplateError::SizeMismatch {
            offsets: template.len(),
            agents,
        }));
    }
    Ok(())
}

/// Run a full trial: `total_steps` simulation steps or an abort on the first
/// non-finite state, whichever comes first.
pub fn run_trial(env: &Environment, config: SimConfig) -> Result<TrialLog, SimError> {
    let trial_index = 0;
    run_trial_indexed(env, config, trial_index)
}

/// As [`run_trial`], recording the caller's trial index in the log.
pub fn run_trial_indexed(
    env: &Environment,
    config: SimConfig,
    trial_index: u32,
) -> Result<TrialLog, SimError> {
    let agent_ids: Vec<EntityId> = env
        .entities
        .iter()
        .filter(|e| e.kind == EntityKind::Agent)
        .map(|e| e.id)
        .collect();
    let total_steps = config.total_steps;
    let method = config.method;
    let mut sim = Sim::new(env, config)?;
    let mut records = Vec::with_capacity(total_steps);
    let mut final_costs = FinalCosts::default();
    let mut aborted = false;
    for _ in 0..total_steps {
        match sim.step() {
            Ok(record) => {
                final_costs.protection += record.protection;
                final_costs.obstacle += record.obstacle;
                final_costs.violation += record.violation;
                records.push(record);
            }
            Err(_) => {
                aborted = true;
                break;
            }
        }
        if sim.aborted {
            aborted = true;
            break;
        }
    }
    Ok(TrialLog {
        env_seed: env.seed,
        method,
        trial_index,
        aborted,
        agent_ids,
        records,
        final_costs,
    })
}

/// Deterministic per-trial seed: mixes the environment seed, the method, and
/// the trial index with splitmix-style constants so trials never share RNG
/// streams.
pub fn trial_seed(env_seed: u64, method: Method, trial: u32) -> u64 {
    let method_index = Method::ALL
        .iter()
        .position(|m| *m == method)
        .expect("method listed in ALL") as u64;
    let mut z = env_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(method_index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add((trial as u64).wrapping_mul(0x94D0_49BB_1331_11EB))
        .wrapping_add(1);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
