//! True costs (protection, obstacle, violation) and the five surrogate basis
//! functions with analytic gradients in the agent positions.
//!
//! Basis order everywhere: f1 proximity, f2 protection, f3 obstacle,
//! f4 agent-avoidance, f5 payload-avoidance. f2–f4 restrict their pair sums
//! to a sensing radius; f1 and f5 always include the payload.

use crate::entity::{EntityKind, EntityState};
use crate::geom::Vec2;
use nalgebra::{DMatrix, SVector};
use serde::{Deserialize, Serialize};

/// Number of basis functions.
pub const NUM_BASIS: usize = 5;
/// Vectors shorter than this are treated as degenerate in line-of-sight
/// terms: value 0, gradient 0.
const LOS_EPS: f64 = 1e-9;
/// Distance floor before inversion in the true obstacle cost.
const OBSTACLE_DIST_FLOOR: f64 = 1e-3;

pub type BasisVector = SVector<f64, NUM_BASIS>;

/// Thresholds of the violation cost and the sharpness of the exponential
/// basis kernels.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CostThresholds {
    /// Line-of-sight threshold: a threat whose best (minimum) los across
    /// agents stays above this counts as unprotected.
    pub tau_p: f64,
    /// Obstacle clearance in meters; closer pairs count as violations.
    pub tau_o: f64,
    /// Exponential sharpness in 1/m² for f3, f4, f5.
    pub zeta: f64,
}

impl Default for CostThresholds {
    fn default() -> Self {
        CostThresholds {
            tau_p: -0.5,
            tau_o: 0.2,
            zeta: 10.0,
        }
    }
}

/// Thresholds plus the sensing radius bounding the pair sums of f2–f4.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    pub thresholds: CostThresholds,
    /// Pairs farther apart than this are dropped from f2, f3, f4 (meters).
    pub sensing_radius: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            thresholds: CostThresholds::default(),
            sensing_radius: 1.0,
        }
    }
}

/// One observation for the weight solver: basis values, the observed true
/// cost, and the simulation step it was taken at.
#[derive(Debug, Clone, Copy)]
pub struct BasisSample {
    pub f: BasisVector,
    pub c_star: f64,
    pub timestamp: usize,
}

/// The static part of a world snapshot: everything the costs see except the
/// agent positions, which vary during planning.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneView {
    pub threats: Vec<Vec2>,
    pub obstacles: Vec<Vec2>,
    pub payload: Vec2,
}

impl SceneView {
    /// Split an entity list into the static scene and the agent positions
    /// (canonical agent order).
    pub fn from_entities(entities: &[EntityState]) -> (Self, Vec<Vec2>) {
        let collect = |kind: EntityKind| -> Vec<Vec2> {
            entities
                .iter()
                .filter(|e| e.kind == kind)
                .map(|e| e.position)
                .collect()
        };
        let payload = entities
            .iter()
            .find(|e| e.kind == EntityKind::Payload)
            .map(|e| e.position)
            .unwrap_or(Vec2::ZERO);
        let scene = SceneView {
            threats: collect(EntityKind::Threat),
            obstacles: collect(EntityKind::Obstacle),
            payload,
        };
        (scene, collect(EntityKind::Agent))
    }
}

/// Cosine of the angle between `a` and `b`; 0 when either is degenerate.
pub fn los(a: Vec2, b: Vec2) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na < LOS_EPS || nb < LOS_EPS {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}

/// Gradients of `los(a, b)` with respect to `a` and `b`; zero at the
/// degenerate guard.
fn los_gradients(a: Vec2, b: Vec2) -> (Vec2, Vec2) {
    let na = a.norm();
    let nb = b.norm();
    if na < LOS_EPS || nb < LOS_EPS {
        return (Vec2::ZERO, Vec2::ZERO);
    }
    let inv = 1.0 / (na * nb);
    let cos = a.dot(b) * inv;
    let grad_a = (b - a * (cos * nb / na)) * inv;
    let grad_b = (a - b * (cos * na / nb)) * inv;
    (grad_a, grad_b)
}

// ---------------------------------------------------------------------------
// True costs: evaluated on real states, never differentiated.

/// Sum over threats of the best (minimum over agents) line of sight between
/// threat→agent and payload→agent. −1 per threat means a perfect block.
pub fn true_protection_cost(agents: &[Vec2], threats: &[Vec2], payload: Vec2) -> f64 {
    threats
        .iter()
        .map(|&t| {
            agents
                .iter()
                .map(|&x| los(t - x, payload - x))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Sum of inverse agent–obstacle distances, floored at 1 mm.
pub fn true_obstacle_cost(agents: &[Vec2], obstacles: &[Vec2]) -> f64 {
    obstacles
        .iter()
        .flat_map(|&o| agents.iter().map(move |&x| 1.0 / o.distance(x).max(OBSTACLE_DIST_FLOOR)))
        .sum()
}

/// Count of unprotected threats (min los above `tau_p`) plus agent–obstacle
/// pairs closer than `tau_o`. Integer-valued.
pub fn violation_cost(
    agents: &[Vec2],
    threats: &[Vec2],
    obstacles: &[Vec2],
    payload: Vec2,
    thresholds: &CostThresholds,
) -> f64 {
    let unprotected = threats
        .iter()
        .filter(|&&t| {
            let min_los = agents
                .iter()
                .map(|&x| los(t - x, payload - x))
                .fold(f64::INFINITY, f64::min);
            min_los > thresholds.tau_p
        })
        .count();
    let too_close = obstacles
        .iter()
        .flat_map(|&o| agents.iter().map(move |&x| o.distance(x)))
        .filter(|&d| d < thresholds.tau_o)
        .count();
    (unprotected + too_close) as f64
}

// ---------------------------------------------------------------------------
// Basis functions.

fn within(radius: f64, a: Vec2, b: Vec2) -> bool {
    a.distance(b) <= radius
}

/// f1: Σᵢ ‖payload − xᵢ‖².
pub fn basis_proximity(agents: &[Vec2], payload: Vec2) -> f64 {
    agents.iter().map(|&x| (payload - x).norm_squared()).sum()
}

/// f2: Σᵢ Σⱼ∈Nᵢ los(threatⱼ − xᵢ, payload − xᵢ), sensing-limited.
pub fn basis_protection(agents: &[Vec2], threats: &[Vec2], payload: Vec2, cfg: &CostConfig) -> f64 {
    agents
        .iter()
        .map(|&x| {
            threats
                .iter()
                .filter(|&&t| within(cfg.sensing_radius, t, x))
                .map(|&t| los(t - x, payload - x))
                .sum::<f64>()
        })
        .sum()
}

/// f3: Σᵢ Σₖ∈Nᵢ exp(−ζ‖obstacleₖ − xᵢ‖²), sensing-limited.
pub fn basis_obstacle(agents: &[Vec2], obstacles: &[Vec2], cfg: &CostConfig) -> f64 {
    let zeta = cfg.thresholds.zeta;
    agents
        .iter()
        .map(|&x| {
            obstacles
                .iter()
                .filter(|&&o| within(cfg.sensing_radius, o, x))
                .map(|&o| (-zeta * (o - x).norm_squared()).exp())
                .sum::<f64>()
        })
        .sum()
}

/// f4: Σᵢ Σᵢ′∈Nᵢ exp(−ζ‖xᵢ′ − xᵢ‖²) over ordered pairs i ≠ i′, so each
/// unordered pair contributes twice. Sensing-limited.
pub fn basis_agent_avoid(agents: &[Vec2], cfg: &CostConfig) -> f64 {
    let zeta = cfg.thresholds.zeta;
    let mut total = 0.0;
    for (i, &xi) in agents.iter().enumerate() {
        for (j, &xj) in agents.iter().enumerate() {
            if i != j && within(cfg.sensing_radius, xi, xj) {
                total += (-zeta * (xj - xi).norm_squared()).exp();
            }
        }
    }
    total
}

/// f5: Σᵢ exp(−ζ‖payload − xᵢ‖²).
pub fn basis_payload_avoid(agents: &[Vec2], payload: Vec2, cfg: &CostConfig) -> f64 {
    let zeta = cfg.thresholds.zeta;
    agents
        .iter()
        .map(|&x| (-zeta * (payload - x).norm_squared()).exp())
        .sum()
}

/// All five basis values in canonical order.
pub fn basis_vector(agents: &[Vec2], scene: &SceneView, cfg: &CostConfig) -> BasisVector {
    BasisVector::from([
        basis_proximity(agents, scene.payload),
        basis_protection(agents, &scene.threats, scene.payload, cfg),
        basis_obstacle(agents, &scene.obstacles, cfg),
        basis_agent_avoid(agents, cfg),
        basis_payload_avoid(agents, scene.payload, cfg),
    ])
}

/// Analytic Jacobian of the basis vector: column i is ∇fᵢ stacked over agent
/// coordinates (rows 2k, 2k+1 are agent k's x and y partials).
pub fn basis_gradient(agents: &[Vec2], scene: &SceneView, cfg: &CostConfig) -> DMatrix<f64> {
    let n = agents.len();
    let zeta = cfg.thresholds.zeta;
    let mut grad = DMatrix::zeros(2 * n, NUM_BASIS);
    let add = |grad: &mut DMatrix<f64>, agent: usize, col: usize, g: Vec2| {
        grad[(2 * agent, col)] += g.x;
        grad[(2 * agent + 1, col)] += g.y;
    };
    for (i, &x) in agents.iter().enumerate() {
        // f1: ∇‖p − x‖² = 2(x − p).
        add(&mut grad, i, 0, (x - scene.payload) * 2.0);
        // f2: los(t − x, p − x); chain rule gives −(∇ₐ + ∇_b).
        for &t in scene
            .threats
            .iter()
            .filter(|&&t| within(cfg.sensing_radius, t, x))
        {
            let (ga, gb) = los_gradients(t - x, scene.payload - x);
            add(&mut grad, i, 1, -(ga + gb));
        }
        // f3: ∇exp(−ζ‖o − x‖²) = −2ζ e (x − o).
        for &o in scene
            .obstacles
            .iter()
            .filter(|&&o| within(cfg.sensing_radius, o, x))
        {
            let e = (-zeta * (o - x).norm_squared()).exp();
            add(&mut grad, i, 2, (x - o) * (-2.0 * zeta * e));
        }
        // f4: each unordered pair appears twice in the sum, so the partial
        // with respect to xᵢ is −4ζ e (xᵢ − xⱼ).
        for (j, &xj) in agents.iter().enumerate() {
            if i != j && within(cfg.sensing_radius, x, xj) {
                let e = (-zeta * (xj - x).norm_squared()).exp();
                add(&mut grad, i, 3, (x - xj) * (-4.0 * zeta * e));
            }
        }
        // f5: ∇exp(−ζ‖p − x‖²) = −2ζ e (x − p).
        let e = (-zeta * (scene.payload - x).norm_squared()).exp();
        add(&mut grad, i, 4, (x - scene.payload) * (-2.0 * zeta * e));
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unlimited() -> CostConfig {
        CostConfig {
            sensing_radius: f64::INFINITY,
            ..CostConfig::default()
        }
    }

    fn random_scene(rng: &mut ChaCha8Rng) -> (SceneView, Vec<Vec2>) {
        // Keep every pair at least 0.1 m apart so no epsilon guard is near.
        let mut points: Vec<Vec2> = Vec::new();
        while points.len() < 10 {
            let p = Vec2::new(rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0));
            if points.iter().all(|q| q.distance(p) > 0.1) {
                points.push(p);
            }
        }
        let agents = points[0..4].to_vec();
        let scene = SceneView {
            threats: points[4..6].to_vec(),
            obstacles: points[6..9].to_vec(),
            payload: points[9],
        };
        (scene, agents)
    }

    #[test]
    fn los_reference_values() {
        assert_eq!(los(Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)), 1.0);
        assert_eq!(los(Vec2::new(1.0, 0.0), Vec2::new(0.0, 3.0)), 0.0);
        assert_eq!(los(Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0)), -1.0);
        assert_eq!(los(Vec2::ZERO, Vec2::new(1.0, 0.0)), 0.0);
    }

    #[test]
    fn protection_cost_reference_values() {
        let payload = Vec2::new(-1.0, 0.0);
        let threat = Vec2::new(1.0, 0.0);
        let blocking = vec![Vec2::ZERO];
        assert_relative_eq!(
            true_protection_cost(&blocking, &[threat], payload),
            -1.0,
            epsilon = 1e-12
        );
        // Agent well off the line: los((1,−5),(−1,−5)) = 24/26.
        let off = vec![Vec2::new(0.0, 5.0)];
        assert_relative_eq!(
            true_protection_cost(&off, &[threat], payload),
            24.0 / 26.0,
            epsilon = 1e-12
        );
        // Two threats, one agent sitting on each threat–payload segment:
        // each threat's best los is −1, so the sum is −2.
        let threats = [Vec2::new(1.0, 0.0), Vec2::new(-3.0, 0.0)];
        let payload2 = Vec2::new(-5.0, 0.0);
        let agents2 = vec![Vec2::new(-1.0, 0.0), Vec2::new(-4.0, 0.0)];
        assert_relative_eq!(
            true_protection_cost(&agents2, &threats, payload2),
            -2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn obstacle_cost_reference_values() {
        assert_relative_eq!(
            true_obstacle_cost(&[Vec2::ZERO], &[Vec2::new(2.0, 0.0)]),
            0.5,
            epsilon = 1e-12
        );
        assert_eq!(true_obstacle_cost(&[Vec2::ZERO], &[]), 0.0);
        // Floor keeps coincident placements finite.
        assert_relative_eq!(
            true_obstacle_cost(&[Vec2::ZERO], &[Vec2::ZERO]),
            1000.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn obstacle_cost_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (scene, agents) = random_scene(&mut rng);
        let mut expected = 0.0;
        for o in &scene.obstacles {
            for x in &agents {
                expected += 1.0 / o.distance(*x).max(1e-3);
            }
        }
        assert_relative_eq!(
            true_obstacle_cost(&agents, &scene.obstacles),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn violation_reference_values() {
        let thresholds = CostThresholds::default();
        let payload = Vec2::new(-1.0, 0.0);
        let threat = Vec2::new(1.0, 0.0);
        // Perfect block, generous clearances → 0.
        assert_eq!(
            violation_cost(
                &[Vec2::ZERO],
                &[threat],
                &[Vec2::new(5.0, 5.0)],
                payload,
                &thresholds
            ),
            0.0
        );
        // One obstacle too close, no threats → 1.
        assert_eq!(
            violation_cost(
                &[Vec2::ZERO],
                &[],
                &[Vec2::new(0.1, 0.0)],
                payload,
                &thresholds
            ),
            1.0
        );
        // Unprotected threat (agent far off axis, min los ≈ 0.92 > −0.5)
        // plus a 0.15 m clearance violation → 2.
        assert_eq!(
            violation_cost(
                &[Vec2::new(0.0, 5.0)],
                &[threat],
                &[Vec2::new(0.0, 5.15)],
                payload,
                &thresholds
            ),
            2.0
        );
    }

    #[test]
    fn basis_reference_values() {
        let cfg = unlimited();
        let payload = Vec2::new(0.3, -0.7);
        // Agent coincident with the payload: f1 term 0, f5 term 1.
        assert_eq!(basis_proximity(&[payload], payload), 0.0);
        assert_relative_eq!(
            basis_payload_avoid(&[payload], payload, &cfg),
            1.0,
            epsilon = 1e-12
        );
        // Agent exactly 1 m from an obstacle with ζ = 10.
        let agents = [Vec2::ZERO];
        let obstacles = [Vec2::new(1.0, 0.0)];
        assert_relative_eq!(
            basis_obstacle(&agents, &obstacles, &CostConfig::default()),
            (-10.0f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn basis_matches_loop_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let (scene, agents) = random_scene(&mut rng);
            let cfg = CostConfig::default(); // finite sensing radius
            let zeta = cfg.thresholds.zeta;
            let r = cfg.sensing_radius;

            let mut f2 = 0.0;
            for x in &agents {
                for t in &scene.threats {
                    if t.distance(*x) <= r {
                        f2 += los(*t - *x, scene.payload - *x);
                    }
                }
            }
            let mut f3 = 0.0;
            for x in &agents {
                for o in &scene.obstacles {
                    if o.distance(*x) <= r {
                        f3 += (-zeta * o.distance(*x).powi(2)).exp();
                    }
                }
            }
            let mut f4 = 0.0;
            for (i, xi) in agents.iter().enumerate() {
                for (j, xj) in agents.iter().enumerate() {
                    if i != j && xi.distance(*xj) <= r {
                        f4 += (-zeta * xi.distance(*xj).powi(2)).exp();
                    }
                }
            }
            let f = basis_vector(&agents, &scene, &cfg);
            let f1: f64 = agents
                .iter()
                .map(|x| scene.payload.distance(*x).powi(2))
                .sum();
            let f5: f64 = agents
                .iter()
                .map(|x| (-zeta * scene.payload.distance(*x).powi(2)).exp())
                .sum();
            assert_relative_eq!(f[0], f1, epsilon = 1e-12);
            assert_relative_eq!(f[1], f2, epsilon = 1e-12);
            assert_relative_eq!(f[2], f3, epsilon = 1e-12);
            assert_relative_eq!(f[3], f4, epsilon = 1e-12);
            assert_relative_eq!(f[4], f5, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_reference_block() {
        let cfg = unlimited();
        let scene = SceneView {
            threats: vec![],
            obstacles: vec![],
            payload: Vec2::ZERO,
        };
        let agents = [Vec2::new(1.0, 0.0)];
        let grad = basis_gradient(&agents, &scene, &cfg);
        assert_relative_eq!(grad[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(grad[(1, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gradient_vanishes_far_from_everything() {
        let cfg = unlimited();
        let scene = SceneView {
            threats: vec![Vec2::new(-6.0, 0.0)],
            obstacles: vec![Vec2::new(0.0, -6.0)],
            payload: Vec2::new(6.0, 6.0),
        };
        let agents = [Vec2::ZERO, Vec2::new(20.0, 0.0)];
        let grad = basis_gradient(&agents, &scene, &cfg);
        for row in 0..4 {
            for col in [2usize, 3, 4] {
                assert!(grad[(row, col)].abs() < 1e-10);
            }
        }
    }

    /// Central finite differences against every analytic column. Run with an
    /// unlimited sensing radius so no pair sits on the inclusion boundary.
    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cfg = unlimited();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let (scene, agents) = random_scene(&mut rng);
            let grad = basis_gradient(&agents, &scene, &cfg);
            for i in 0..agents.len() {
                for axis in 0..2 {
                    let mut plus = agents.clone();
                    let mut minus = agents.clone();
                    if axis == 0 {
                        plus[i].x += h;
                        minus[i].x -= h;
                    } else {
                        plus[i].y += h;
                        minus[i].y -= h;
                    }
                    let fp = basis_vector(&plus, &scene, &cfg);
                    let fm = basis_vector(&minus, &scene, &cfg);
                    for col in 0..NUM_BASIS {
                        let fd = (fp[col] - fm[col]) / (2.0 * h);
                        let an = grad[(2 * i + axis, col)];
                        let rel = (fd - an).abs() / an.abs().max(1.0);
                        worst = worst.max(rel);
                    }
                }
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn costs_are_rigid_motion_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let cfg = CostConfig::default();
        for _ in 0..20 {
            let (scene, agents) = random_scene(&mut rng);
            let shift = Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let map = |p: Vec2| p.rotated(angle) + shift;
            let moved = SceneView {
                threats: scene.threats.iter().map(|&t| map(t)).collect(),
                obstacles: scene.obstacles.iter().map(|&o| map(o)).collect(),
                payload: map(scene.payload),
            };
            let moved_agents: Vec<Vec2> = agents.iter().map(|&a| map(a)).collect();

            let f0 = basis_vector(&agents, &scene, &cfg);
            let f1 = basis_vector(&moved_agents, &moved, &cfg);
            for k in 0..NUM_BASIS {
                assert_relative_eq!(f0[k], f1[k], epsilon = 1e-9);
            }
            assert_relative_eq!(
                true_protection_cost(&agents, &scene.threats, scene.payload),
                true_protection_cost(&moved_agents, &moved.threats, moved.payload),
                epsilon = 1e-9
            );
            assert_relative_eq!(
                true_obstacle_cost(&agents, &scene.obstacles),
                true_obstacle_cost(&moved_agents, &moved.obstacles),
                epsilon = 1e-9
            );
            assert_eq!(
                violation_cost(
                    &agents,
                    &scene.threats,
                    &scene.obstacles,
                    scene.payload,
                    &cfg.thresholds
                ),
                violation_cost(
                    &moved_agents,
                    &moved.threats,
                    &moved.obstacles,
                    moved.payload,
                    &cfg.thresholds
                )
            );
        }
    }

    #[test]
    fn permuting_agents_leaves_costs_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (scene, agents) = random_scene(&mut rng);
        let cfg = CostConfig::default();
        let mut permuted = agents.clone();
        permuted.reverse();
        let a = basis_vector(&agents, &scene, &cfg);
        let b = basis_vector(&permuted, &scene, &cfg);
        for k in 0..NUM_BASIS {
            assert_relative_eq!(a[k], b[k], epsilon = 1e-12);
        }
        assert_eq!(
            true_protection_cost(&agents, &scene.threats, scene.payload),
            true_protection_cost(&permuted, &scene.threats, scene.payload)
        );
    }
}
