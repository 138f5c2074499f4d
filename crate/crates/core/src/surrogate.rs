//! Online surrogate cost model: recursive least-squares statistics with
//! forgetting, simplex-constrained weight estimation, and the adaptive
//! accept/validate gating that decides when to learn.

use crate::costs::{BasisSample, BasisVector, NUM_BASIS};
use crate::geom::Vec2;
use crate::qp::{self, QpError, ALPHA_MIN};
use nalgebra::{DMatrix, DVector, SMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

type BasisMatrix = SMatrix<f64, NUM_BASIS, NUM_BASIS>;

/// Surrogate cost c(x) = αᵀf(x) plus the running statistics that estimate α.
///
/// Only the Gram matrix `r`, the data vector `p`, and the scalar `y` are
/// stored; the ever-growing design matrix behind them never is. The
/// forgetting factor multiplies the whole parenthesized sum on every update,
/// so sample i retains the product of all later factors as its weight.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    pub alpha: BasisVector,
    pub r: BasisMatrix,
    pub p: BasisVector,
    pub y: f64,
    pub sample_count: usize,
    /// Forgetting factor w_t applied at the next statistics update.
    pub forgetting: f64,
}

impl SurrogateModel {
    pub fn new(initial_forgetting: f64) -> Self {
        SurrogateModel {
            alpha: BasisVector::from_element(1.0 / NUM_BASIS as f64),
            r: BasisMatrix::zeros(),
            p: BasisVector::zeros(),
            y: 0.0,
            sample_count: 0,
            forgetting: initial_forgetting,
        }
    }

    /// Surrogate cost at a basis evaluation: αᵀf.
    pub fn surrogate_value(&self, f: &BasisVector) -> f64 {
        self.alpha.dot(f)
    }

    /// Fold one sample into the statistics:
    /// R ← w(R + ffᵀ), p ← w(p + f·c*), y ← w(y + c*²).
    pub fn update_statistics(&mut self, sample: &BasisSample) {
        let w = self.forgetting;
        self.r = (self.r + sample.f * sample.f.transpose()) * w;
        self.p = (self.p + sample.f * sample.c_star) * w;
        self.y = (self.y + sample.c_star * sample.c_star) * w;
        self.sample_count += 1;
    }

    /// Solve min αᵀRα − 2αᵀp on the lower-bounded simplex.
    pub fn solve_weights(&self) -> Result<BasisVector, QpError> {
        let r = DMatrix::from_fn(NUM_BASIS, NUM_BASIS, |i, j| self.r[(i, j)]);
        let p = DVector::from_fn(NUM_BASIS, |i, _| self.p[i]);
        let alpha = qp::solve_simplex_qp(&r, &p, ALPHA_MIN)?;
        Ok(BasisVector::from_fn(|i, _| alpha[i]))
    }

    /// Weighted squared fit residual ‖Fα − c*‖²_W expanded through the
    /// stored statistics: αᵀRα − 2pᵀα + y, clamped at zero against roundoff.
    pub fn fit_residual(&self, alpha: &BasisVector) -> f64 {
        ((alpha.transpose() * self.r * alpha)[(0, 0)] - 2.0 * self.p.dot(alpha) + self.y).max(0.0)
    }
}

/// Tunables of the adaptive gating. All thresholds and bounds are
/// configurable; defaults are scaled to the arena and cost magnitudes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    /// True-cost novelty threshold τ_c.
    pub tau_c: f64,
    /// Fit-error threshold per admitted sample: τ_e = this × sample_count.
    pub tau_e_per_sample: f64,
    /// Initial position novelty threshold τ_x (redrawn by validation).
    pub initial_tau_x: f64,
    /// Initial forgetting factor (redrawn by validation).
    pub initial_forgetting: f64,
    /// Bounds of the forgetting redraw w ~ U(l_w, u_w).
    pub l_w: f64,
    pub u_w: f64,
    /// Bounds of the threshold redraw τ_x ~ U(l_τx, u_τx).
    pub l_tau_x: f64,
    pub u_tau_x: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            tau_c: 1e-3,
            tau_e_per_sample: 0.05,
            initial_tau_x: 0.05,
            initial_forgetting: 0.95,
            l_w: 0.5,
            u_w: 0.99,
            l_tau_x: 0.01,
            u_tau_x: 0.1,
        }
    }
}

/// What one adaptive step did, for the weight-trajectory log.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    /// Sample passed the novelty gate and entered the statistics.
    pub accepted: bool,
    /// A freshly solved candidate replaced the working weights.
    pub adopted: bool,
    /// Fit residual of the candidate (0 when no candidate was solved).
    pub fit_residual: f64,
}

#[derive(Debug, Clone)]
struct PreviousObservation {
    c_star: f64,
    surrogate: f64,
    positions: Vec<Vec2>,
}

/// Full per-trial adaptive-weights state: the model, the accept flag, the
/// novelty thresholds, and the seeded RNG behind the validation redraws.
#[derive(Debug, Clone)]
pub struct AdaptiveWeights {
    pub model: SurrogateModel,
    pub config: AdaptiveConfig,
    /// Accept flag a_t; starts true so the first informative sample can
    /// enter before any validation verdict exists.
    pub accept: bool,
    /// Position novelty threshold τ_x (redrawn by validation).
    pub tau_x: f64,
    previous: Option<PreviousObservation>,
    rng: ChaCha8Rng,
}

impl AdaptiveWeights {
    pub fn new(config: AdaptiveConfig, seed: u64) -> Self {
        AdaptiveWeights {
            model: SurrogateModel::new(config.initial_forgetting),
            config,
            accept: true,
            tau_x: config.initial_tau_x,
            previous: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn alpha(&self) -> BasisVector {
        self.model.alpha
    }

    /// Validation verdict between consecutive observations: the true cost
    /// rose while the surrogate fell means the current weights are
    /// misleading — redraw the forgetting factor and τ_x and re-arm the
    /// accept flag; otherwise disarm it.
    pub fn validation_update(
        &mut self,
        c_star_next: f64,
        c_star_prev: f64,
        c_next: f64,
        c_prev: f64,
    ) {
        if c_star_next >= c_star_prev && c_next <= c_prev {
            self.model.forgetting = self.rng.random_range(self.config.l_w..self.config.u_w);
            self.tau_x = self.rng.random_range(self.config.l_tau_x..self.config.u_tau_x);
            self.accept = true;
        } else {
            self.accept = false;
        }
    }

    /// One full adaptive step on a new observation (basis values, true cost,
    /// agent positions): validate against the stored previous observation,
    /// gate the sample on novelty, and adopt a re-solved candidate when the
    /// data supports it.
    pub fn adaptive_step(
        &mut self,
        f: &BasisVector,
        c_star: f64,
        positions: &[Vec2],
        timestamp: usize,
    ) -> StepOutcome {
        let c = self.model.surrogate_value(f);
        let mut outcome = StepOutcome {
            accepted: false,
            adopted: false,
            fit_residual: 0.0,
        };
        if let Some(prev) = self.previous.take() {
            self.validation_update(c_star, prev.c_star, c, prev.surrogate);

            let novelty_c = (c_star - prev.c_star).abs() > self.config.tau_c;
            let moved: f64 = positions
                .iter()
                .zip(&prev.positions)
                .map(|(a, b)| (*a - *b).norm_squared())
                .sum::<f64>()
                .sqrt();
            if self.accept && novelty_c && moved > self.tau_x {
                outcome.accepted = true;
                self.model.update_statistics(&BasisSample {
                    f: *f,
                    c_star,
                    timestamp,
                });
                if let Ok(candidate) = self.model.solve_weights() {
                    let residual = self.model.fit_residual(&candidate);
                    outcome.fit_residual = residual;
                    let tau_e = self.config.tau_e_per_sample * self.model.sample_count as f64;
                    if self.model.sample_count > NUM_BASIS && residual < tau_e {
                        self.model.alpha = candidate;
                        outcome.adopted = true;
                    }
                }
            }
        }
        // Store the observation with the possibly-updated weights so the
        // next validation compares surrogate values of the same α.
        self.previous = Some(PreviousObservation {
            c_star,
            surrogate: self.model.surrogate_value(f),
            positions: positions.to_vec(),
        });
        outcome
    }
}

/// Result of the linear-dependence diagnostic on the basis gradients.
#[derive(Debug, Clone)]
pub struct DependenceReport {
    /// Smallest singular value of the stacked gradient matrix, counting
    /// structurally missing directions as zero.
    pub sigma_min: f64,
    /// Gradients span all weight directions: changing α changes the planned
    /// formation.
    pub independent: bool,
    /// Explanation when independence fails structurally.
    pub note: Option<&'static str>,
}

/// Smallest singular value of `a` treated as a map from weight space: when
/// the matrix has fewer rows than columns the missing directions count as
/// exact zeros.
pub fn smallest_singular_value(a: &DMatrix<f64>) -> f64 {
    if a.nrows() < a.ncols() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(f64::INFINITY, |m, &s| m.min(s))
}

/// Evaluate whether the basis gradients at the given configuration are
/// linearly independent, i.e. whether re-estimating weights can move the
/// planned formation at all.
pub fn dependence_diagnostic(gradient: &DMatrix<f64>) -> DependenceReport {
    if gradient.nrows() < gradient.ncols() {
        return DependenceReport {
            sigma_min: 0.0,
            independent: false,
            note: Some(
                "fewer than 3 agents: the gradient matrix has fewer rows than basis functions, \
                 so some weight directions cannot move the minimizer",
            ),
        };
    }
    let sigma_min = smallest_singular_value(gradient);
    DependenceReport {
        sigma_min,
        independent: sigma_min > 1e-6,
        note: None,
    }
}
