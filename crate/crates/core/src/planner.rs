//! Formation planner: minimizes the weighted surrogate cost over agent
//! positions with Adam, warm-started across control cycles.

use crate::costs::{basis_gradient, basis_vector, BasisVector, CostConfig, SceneView};
use crate::geom::Vec2;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Adam hyperparameters and the iteration budget of one planning cycle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub iters_per_cycle: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            iters_per_cycle: 50,
        }
    }
}

/// Axis-aligned feasible region for planned positions: the arena inset by
/// the agent radius.
#[derive(Debug, Clone, Copy)]
pub struct PlanBounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl PlanBounds {
    pub fn arena(width: f64, height: f64, inset: f64) -> Self {
        PlanBounds {
            min: Vec2::new(inset, inset),
            max: Vec2::new(width - inset, height - inset),
        }
    }

    fn clip(&self, p: Vec2) -> Vec2 {
        Vec2::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
        )
    }
}

/// One bias-corrected Adam update. Pure: returns the new parameters and
/// moment vectors, leaving the inputs untouched.
pub fn adam_step(
    params: &DVector<f64>,
    grad: &DVector<f64>,
    m: &DVector<f64>,
    v: &DVector<f64>,
    t: usize,
    config: &PlannerConfig,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let m_next = m * config.beta1 + grad * (1.0 - config.beta1);
    let v_next = v * config.beta2 + grad.component_mul(grad) * (1.0 - config.beta2);
    let m_hat = &m_next / (1.0 - config.beta1.powi(t as i32));
    let v_hat = &v_next / (1.0 - config.beta2.powi(t as i32));
    let step = DVector::from_fn(params.len(), |i, _| {
        config.learning_rate * m_hat[i] / (v_hat[i].sqrt() + config.epsilon)
    });
    (params - step, m_next, v_next)
}

/// What a planning cycle produced.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    /// Planned absolute agent positions, canonical agent order.
    pub positions: Vec<Vec2>,
    /// Surrogate value at the returned positions.
    pub surrogate_value: f64,
    /// True when a non-finite gradient aborted the cycle and the previous
    /// plan was returned unchanged.
    pub aborted: bool,
}

/// Per-trial planner state: the warm-started plan and the Adam moments,
/// which persist across cycles.
#[derive(Debug, Clone)]
pub struct PlannerState {
    pub planned: Vec<Vec2>,
    pub config: PlannerConfig,
    m: DVector<f64>,
    v: DVector<f64>,
    step_count: usize,
}

impl PlannerState {
    pub fn new(initial_positions: &[Vec2], config: PlannerConfig) -> Self {
        PlannerState {
            planned: initial_positions.to_vec(),
            config,
            m: DVector::zeros(2 * initial_positions.len()),
            v: DVector::zeros(2 * initial_positions.len()),
            step_count: 0,
        }
    }

    /// Run one planning cycle of `iters_per_cycle` Adam iterations on the
    /// surrogate Σ αᵢfᵢ over agent positions, clipping every iterate to
    /// `bounds` and returning the best iterate seen (including the warm
    /// start, so the output never costs more than the input).
    pub fn plan_formation(
        &mut self,
        alpha: &BasisVector,
        scene: &SceneView,
        costs: &CostConfig,
        bounds: &PlanBounds,
    ) -> PlanOutcome {
        let n = self.planned.len();
        let value_at = |positions: &[Vec2]| alpha.dot(&basis_vector(positions, scene, costs));

        let snapshot = (self.m.clone(), self.v.clone(), self.step_count);
        let mut params = DVector::from_fn(2 * n, |i, _| {
            let p = self.planned[i / 2];
            if i % 2 == 0 {
                p.x
            } else {
                p.y
            }
        });
        let mut best = self.planned.clone();
        let mut best_value = value_at(&best);

        for _ in 0..self.config.iters_per_cycle {
            let positions: Vec<Vec2> =
                (0..n).map(|i| Vec2::new(params[2 * i], params[2 * i + 1])).collect();
            let grad_matrix = basis_gradient(&positions, scene, costs);
            let alpha_vec = DVector::from_fn(alpha.len(), |i, _| alpha[i]);
            let grad = grad_matrix * alpha_vec;
            if grad.iter().any(|g| !g.is_finite()) {
                (self.m, self.v, self.step_count) = snapshot;
                return PlanOutcome {
                    positions: self.planned.clone(),
                    surrogate_value: value_at(&self.planned),
                    aborted: true,
                };
            }
            self.step_count += 1;
            let (next, m, v) = adam_step(
                &params,
                &grad,
                &self.m,
                &self.v,
                self.step_count,
                &self.config,
            );
            self.m = m;
            self.v = v;
            params = next;
            for i in 0..n {
                let clipped = bounds.clip(Vec2::new(params[2 * i], params[2 * i + 1]));
                params[2 * i] = clipped.x;
                params[2 * i + 1] = clipped.y;
            }
            if params.iter().any(|x| !x.is_finite()) {
                (self.m, self.v, self.step_count) = snapshot;
                return PlanOutcome {
                    positions: self.planned.clone(),
                    surrogate_value: value_at(&self.planned),
                    aborted: true,
                };
            }
            let candidate: Vec<Vec2> =
                (0..n).map(|i| Vec2::new(params[2 * i], params[2 * i + 1])).collect();
            let value = value_at(&candidate);
            if value < best_value {
                best_value = value;
                best = candidate;
            }
        }
        self.planned = best.clone();
        PlanOutcome {
            positions: best,
            surrogate_value: best_value,
            aborted: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::NUM_BASIS;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_bounds() -> PlanBounds {
        PlanBounds::arena(3.2, 2.0, 0.08)
    }

    fn scene() -> SceneView {
        SceneView {
            threats: vec![Vec2::new(2.2, 1.0)],
            obstacles: vec![Vec2::new(1.0, 1.0)],
            payload: Vec2::new(1.6, 1.0),
        }
    }

    #[test]
    fn adam_zero_gradient_is_stationary() {
        let config = PlannerConfig::default();
        let params = DVector::from_column_slice(&[1.0, -2.0]);
        let zeros = DVector::zeros(2);
        let (next, m, v) = adam_step(&params, &zeros, &zeros, &zeros, 1, &config);
        assert_eq!(next, params);
        assert_eq!(m, zeros);
        assert_eq!(v, zeros);
    }

    #[test]
    fn adam_minimizes_scalar_quadratic() {
        let config = PlannerConfig::default();
        let mut x = DVector::from_column_slice(&[1.0]);
        let mut m = DVector::zeros(1);
        let mut v = DVector::zeros(1);
        for t in 1..=500 {
            let grad = &x * 2.0;
            let (nx, nm, nv) = adam_step(&x, &grad, &m, &v, t, &config);
            x = nx;
            m = nm;
            v = nv;
        }
        assert!(x[0].abs() < 1e-3, "|x| = {}", x[0].abs());
    }

    #[test]
    fn adam_is_deterministic() {
        let config = PlannerConfig::default();
        let params = DVector::from_column_slice(&[0.3, -0.7, 1.1]);
        let grad = DVector::from_column_slice(&[0.5, -0.2, 0.9]);
        let m = DVector::from_column_slice(&[0.01, 0.02, 0.03]);
        let v = DVector::from_column_slice(&[0.1, 0.2, 0.3]);
        let a = adam_step(&params, &grad, &m, &v, 7, &config);
        let b = adam_step(&params, &grad, &m, &v, 7, &config);
        assert_eq!(a, b);
    }

    #[test]
    fn proximity_dominant_weights_pull_agents_to_payload() {
        let eps = 1e-4;
        let alpha = BasisVector::from([1.0 - 4.0 * eps, eps, eps, eps, eps]);
        let scene = scene();
        let start = vec![Vec2::new(0.3, 0.3), Vec2::new(2.9, 1.7)];
        let mut planner = PlannerState::new(&start, PlannerConfig::default());
        for _ in 0..60 {
            planner.plan_formation(&alpha, &scene, &CostConfig::default(), &default_bounds());
        }
        for p in &planner.planned {
            assert!(
                p.distance(scene.payload) < 0.02,
                "agent stayed {} m away",
                p.distance(scene.payload)
            );
        }
    }

    #[test]
    fn payload_avoidance_repels_until_negligible() {
        let alpha = BasisVector::from([0.0, 0.0, 0.0, 0.0, 1.0]);
        let scene = SceneView {
            threats: vec![],
            obstacles: vec![],
            payload: Vec2::new(1.6, 1.0),
        };
        let cfg = CostConfig::default();
        let start = vec![Vec2::new(1.7, 1.05)];
        let mut planner = PlannerState::new(&start, PlannerConfig::default());
        let mut last_distance = start[0].distance(scene.payload);
        let mut exp_term = (-cfg.thresholds.zeta * last_distance * last_distance).exp();
        for _ in 0..80 {
            let out = planner.plan_formation(&alpha, &scene, &cfg, &default_bounds());
            let d = out.positions[0].distance(scene.payload);
            if exp_term >= 1e-6 {
                assert!(d > last_distance, "repulsion stalled at {d}");
            }
            last_distance = d;
            exp_term = (-cfg.thresholds.zeta * d * d).exp();
        }
        assert!(exp_term < 1e-6, "exp term still {exp_term}");
    }

    #[test]
    fn matches_dense_grid_search_on_single_agent() {
        let alpha = BasisVector::from([0.5, 0.1, 0.3, 0.0, 0.1]);
        let scene = scene();
        let cfg = CostConfig::default();
        let bounds = default_bounds();

        // Dense grid at 5 mm over the arena.
        let mut best = (f64::INFINITY, Vec2::ZERO);
        let mut y = bounds.min.y;
        while y <= bounds.max.y {
            let mut x = bounds.min.x;
            while x <= bounds.max.x {
                let value = alpha.dot(&basis_vector(&[Vec2::new(x, y)], &scene, &cfg));
                if value < best.0 {
                    best = (value, Vec2::new(x, y));
                }
                x += 0.005;
            }
            y += 0.005;
        }

        let mut planner = PlannerState::new(&[Vec2::new(2.6, 1.4)], PlannerConfig::default());
        let mut out = planner.plan_formation(&alpha, &scene, &cfg, &bounds);
        for _ in 0..80 {
            out = planner.plan_formation(&alpha, &scene, &cfg, &bounds);
        }
        assert!(
            out.positions[0].distance(best.1) < 0.02,
            "Adam endpoint {:?} vs grid argmin {:?}",
            out.positions[0],
            best.1
        );
    }

    #[test]
    fn output_never_costs_more_than_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let cfg = CostConfig::default();
        let bounds = default_bounds();
        for _ in 0..20 {
            let scene = SceneView {
                threats: vec![Vec2::new(rng.random_range(0.2..3.0), rng.random_range(0.2..1.8))],
                obstacles: vec![Vec2::new(rng.random_range(0.2..3.0), rng.random_range(0.2..1.8))],
                payload: Vec2::new(rng.random_range(0.5..2.7), rng.random_range(0.5..1.5)),
            };
            let raw: Vec<f64> = (0..NUM_BASIS).map(|_| rng.random_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let alpha = BasisVector::from_fn(|i, _| raw[i] / sum);
            let start: Vec<Vec2> = (0..4)
                .map(|_| Vec2::new(rng.random_range(0.2..3.0), rng.random_range(0.2..1.8)))
                .collect();
            let mut planner = PlannerState::new(&start, PlannerConfig::default());
            for _ in 0..5 {
                let input_value = alpha.dot(&basis_vector(&planner.planned, &scene, &cfg));
                let out = planner.plan_formation(&alpha, &scene, &cfg, &bounds);
                assert!(out.surrogate_value <= input_value + 1e-12);
                for p in &out.positions {
                    assert!(p.x >= bounds.min.x - 1e-12 && p.x <= bounds.max.x + 1e-12);
                    assert!(p.y >= bounds.min.y - 1e-12 && p.y <= bounds.max.y + 1e-12);
                }
            }
        }
    }

    #[test]
    fn permutation_equivariant() {
        let alpha = BasisVector::from([0.3, 0.1, 0.2, 0.3, 0.1]);
        let scene = scene();
        let cfg = CostConfig::default();
        let bounds = default_bounds();
        let start = vec![
            Vec2::new(0.5, 0.5),
            Vec2::new(2.5, 1.5),
            Vec2::new(1.0, 1.7),
            Vec2::new(2.0, 0.4),
        ];
        let mut forward = PlannerState::new(&start, PlannerConfig::default());
        let reversed: Vec<Vec2> = start.iter().rev().copied().collect();
        let mut backward = PlannerState::new(&reversed, PlannerConfig::default());
        for _ in 0..10 {
            forward.plan_formation(&alpha, &scene, &cfg, &bounds);
            backward.plan_formation(&alpha, &scene, &cfg, &bounds);
        }
        for (a, b) in forward.planned.iter().zip(backward.planned.iter().rev()) {
            assert_relative_eq!(a.x, b.x, epsilon = 1e-9);
            assert_relative_eq!(a.y, b.y, epsilon = 1e-9);
        }
    }
}
