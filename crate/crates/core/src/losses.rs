//! Time-varying local losses f_{i,t} bound to a target trajectory.
//!
//! Two families are provided. `QuadraticTracking` is the test family
//! f_{i,t}(x) = ½‖x − x*_t‖² with a bounded zero-mean gradient perturbation.
//! `QuarticSensor` is the sensor model where agent i observes
//! z = x*_t(k_i) + w with w ~ U[−1, 1] and pays ¼ E[(z − x(k_i))⁴].

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;

use crate::dynamics::TargetTrajectory;
use crate::error::{Error, Result};
use crate::geometry::{FeasibleSet, MapKind, Vector};

/// E[w⁴] for w ~ U[−1, 1].
pub const UNIFORM_FOURTH_MOMENT: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub enum LossFamily {
    /// ½‖x − x*_t‖₂²; stochastic gradients add U[−a, a] per coordinate.
    QuadraticTracking { amplitude: f64 },
    /// Agent i watches coordinate `coords[i]` (0-based).
    QuarticSensor { coords: Vec<usize> },
}

impl LossFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::QuadraticTracking { .. } => "quadratic",
            Self::QuarticSensor { .. } => "quartic",
        }
    }
}

/// Round-robin coordinate assignment k_i = i mod d, which splits the agents
/// into d groups of near-equal size.
pub fn round_robin_coords(n: usize, dim: usize) -> Vec<usize> {
    (0..n).map(|i| i % dim).collect()
}

/// The canonical observation-noise draw, w ~ U[−1, 1].
pub fn observation_noise<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-1.0..=1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StochasticGradientSample {
    pub g: Vector,
    pub agent: usize,
    pub round: usize,
    /// Whether the raw sample exceeded the clip limit and was rescaled.
    pub clipped: bool,
}

/// Dual norm used to measure (and clip) gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DualNorm {
    L2,
    LInf,
}

impl DualNorm {
    pub fn for_map(kind: MapKind) -> Self {
        match kind {
            MapKind::Euclidean => Self::L2,
            MapKind::NegativeEntropy => Self::LInf,
        }
    }

    pub fn of(self, v: &Vector) -> f64 {
        match self {
            Self::L2 => v.norm(),
            Self::LInf => v.amax(),
        }
    }
}

#[derive(Debug)]
pub struct LossOracle {
    family: LossFamily,
    n: usize,
    trajectory: Arc<TargetTrajectory>,
    dual: DualNorm,
    clip: Option<f64>,
    clip_count: AtomicU64,
}

impl LossOracle {
    pub fn new(family: LossFamily, n: usize, trajectory: Arc<TargetTrajectory>, dual: DualNorm) -> Result<Self> {
        if n == 0 {
            return Err(Error::rejected("loss oracle needs at least one agent"));
        }
        let d = trajectory.dim();
        match &family {
            LossFamily::QuadraticTracking { amplitude } => {
                if !(*amplitude >= 0.0 && amplitude.is_finite()) {
                    return Err(Error::rejected(format!("perturbation amplitude must be nonnegative, got {amplitude}")));
                }
            }
            LossFamily::QuarticSensor { coords } => {
                Error::check_dim("sensor coordinate assignment", n, coords.len())?;
                if let Some(&k) = coords.iter().find(|&&k| k >= d) {
                    return Err(Error::rejected(format!("sensor coordinate {k} out of range for dimension {d}")));
                }
                if let Some(k) = (0..d).find(|k| !coords.contains(k)) {
                    return Err(Error::rejected(format!(
                        "coordinate {k} is observed by no agent; the global minimizer would not be unique"
                    )));
                }
            }
        }
        Ok(Self {
            family,
            n,
            trajectory,
            dual,
            clip: None,
            clip_count: AtomicU64::new(0),
        })
    }

    /// Clip stochastic gradients to dual norm ≤ `limit`.
    pub fn with_clip(mut self, limit: Option<f64>) -> Result<Self> {
        if let Some(l) = limit {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::rejected(format!("clip limit must be positive, got {l}")));
            }
        }
        self.clip = limit;
        Ok(self)
    }

    pub fn family(&self) -> &LossFamily {
        &self.family
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.trajectory.dim()
    }

    pub fn rounds(&self) -> usize {
        self.trajectory.rounds()
    }

    pub fn trajectory(&self) -> &Arc<TargetTrajectory> {
        &self.trajectory
    }

    pub fn dual_norm(&self) -> DualNorm {
        self.dual
    }

    pub fn clip_limit(&self) -> Option<f64> {
        self.clip
    }

    /// Total number of clipped samples served so far.
    pub fn clip_count(&self) -> u64 {
        self.clip_count.load(Ordering::Relaxed)
    }

    fn check(&self, i: usize, t: usize, x: &Vector) -> Result<()> {
        if i >= self.n {
            return Err(Error::rejected(format!("agent {i} out of range for {} agents", self.n)));
        }
        if t == 0 || t > self.rounds() {
            return Err(Error::rejected(format!("round {t} outside 1..={}", self.rounds())));
        }
        Error::check_dim("loss argument", self.dim(), x.len())
    }

    fn target(&self, t: usize) -> &Vector {
        self.trajectory.state(t)
    }

    pub fn local_value(&self, i: usize, t: usize, x: &Vector) -> Result<f64> {
        self.check(i, t, x)?;
        let target = self.target(t);
        Ok(match &self.family {
            LossFamily::QuadraticTracking { .. } => 0.5 * (x - target).norm_squared(),
            LossFamily::QuarticSensor { coords } => {
                let k = coords[i];
                quartic_expected_loss(target[k] - x[k])
            }
        })
    }

    pub fn exact_gradient(&self, i: usize, t: usize, x: &Vector) -> Result<Vector> {
        self.check(i, t, x)?;
        let target = self.target(t);
        Ok(match &self.family {
            LossFamily::QuadraticTracking { .. } => x - target,
            LossFamily::QuarticSensor { coords } => {
                let k = coords[i];
                let u = target[k] - x[k];
                let mut g = Vector::zeros(x.len());
                g[k] = -(u * u * u + u);
                g
            }
        })
    }

    /// One noisy gradient with E[g] = ∇f_{i,t}(x), clipped if configured.
    pub fn stochastic_gradient<R: Rng + ?Sized>(&self, i: usize, t: usize, x: &Vector, rng: &mut R) -> Result<StochasticGradientSample> {
        let mut g = self.raw_stochastic_gradient(i, t, x, rng)?;
        let mut clipped = false;
        if let Some(limit) = self.clip {
            let norm = self.dual.of(&g);
            if norm > limit {
                g *= limit / norm;
                clipped = true;
                self.clip_count.fetch_add(1, Ordering::Relaxed);
            }
        }
        Ok(StochasticGradientSample { g, agent: i, round: t, clipped })
    }

    fn raw_stochastic_gradient<R: Rng + ?Sized>(&self, i: usize, t: usize, x: &Vector, rng: &mut R) -> Result<Vector> {
        self.check(i, t, x)?;
        let target = self.target(t);
        Ok(match &self.family {
            LossFamily::QuadraticTracking { amplitude } => {
                let mut g = x - target;
                if *amplitude > 0.0 {
                    for gk in g.iter_mut() {
                        *gk += amplitude * observation_noise(rng);
                    }
                }
                g
            }
            LossFamily::QuarticSensor { coords } => {
                let k = coords[i];
                let z = target[k] + observation_noise(rng);
                let r = z - x[k];
                let mut g = Vector::zeros(x.len());
                g[k] = -(r * r * r);
                g
            }
        })
    }

    /// f_t(x) = (1/n) Σ_i f_{i,t}(x).
    pub fn global_value(&self, t: usize, x: &Vector) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.n {
            total += self.local_value(i, t, x)?;
        }
        Ok(total / self.n as f64)
    }

    pub fn global_gradient(&self, t: usize, x: &Vector) -> Result<Vector> {
        let mut total = Vector::zeros(self.dim());
        for i in 0..self.n {
            total += self.exact_gradient(i, t, x)?;
        }
        Ok(total / self.n as f64)
    }

    /// Analytic upper bound on the dual norm of every exact and stochastic
    /// gradient over `set` and all rounds.
    pub fn lipschitz_envelope(&self, set: &FeasibleSet) -> Result<f64> {
        Error::check_dim("feasible set", self.dim(), set.dim())?;
        let (lo, hi) = set_bounding_box(set)?;
        let d = self.dim();
        let mut best = 0.0f64;
        for t in 1..=self.rounds() {
            let target = self.target(t);
            // Largest |x*(k) − x(k)| over the box, per coordinate.
            let reach = Vector::from_fn(d, |k, _| (target[k] - lo[k]).abs().max((hi[k] - target[k]).abs()));
            let l = match &self.family {
                LossFamily::QuarticSensor { coords } => {
                    coords.iter().map(|&k| (reach[k] + 1.0).powi(3)).fold(0.0, f64::max)
                }
                LossFamily::QuadraticTracking { amplitude } => {
                    let noise = amplitude * self.dual.of(&Vector::from_element(d, 1.0));
                    let spread = match set {
                        FeasibleSet::Ball { center, radius } => match self.dual {
                            DualNorm::L2 => (center - target).norm() + radius,
                            DualNorm::LInf => (center - target).amax() + radius,
                        },
                        FeasibleSet::Simplex { .. } => set
                            .simplex_vertices()
                            .unwrap_or_default()
                            .iter()
                            .map(|v| self.dual.of(&(v - target)))
                            .fold(0.0, f64::max),
                        _ => self.dual.of(&reach),
                    };
                    spread + noise
                }
            };
            best = best.max(l);
        }
        Ok(best)
    }

    /// Empirical Lipschitz estimate: running supremum of exact and raw
    /// stochastic gradient norms over `budget` random (agent, round, point)
    /// probes.
    pub fn estimate_l<R: Rng + ?Sized>(&self, set: &FeasibleSet, budget: usize, rng: &mut R) -> Result<f64> {
        Error::check_dim("feasible set", self.dim(), set.dim())?;
        if !set.is_compact() {
            return Err(Error::NonCompact("Lipschitz estimation needs a compact set"));
        }
        let mut sup = 0.0f64;
        for _ in 0..budget {
            let i = rng.random_range(0..self.n);
            let t = rng.random_range(1..=self.rounds());
            let x = set.sample(rng)?;
            sup = sup.max(self.dual.of(&self.exact_gradient(i, t, &x)?));
            sup = sup.max(self.dual.of(&self.raw_stochastic_gradient(i, t, &x, rng)?));
        }
        Ok(sup)
    }
}

/// ¼ E[(u + w)⁴] = ¼(u⁴ + 2u² + 1/5) for w ~ U[−1, 1].
pub fn quartic_expected_loss(u: f64) -> f64 {
    let u2 = u * u;
    0.25 * (u2 * u2 + 2.0 * u2 + UNIFORM_FOURTH_MOMENT)
}

fn set_bounding_box(set: &FeasibleSet) -> Result<(Vector, Vector)> {
    match set {
        FeasibleSet::WholeSpace { .. } => Err(Error::NonCompact("Lipschitz envelope needs a compact set")),
        FeasibleSet::Box { lower, upper } => Ok((lower.clone(), upper.clone())),
        FeasibleSet::Ball { center, radius } => Ok((center.add_scalar(-radius), center.add_scalar(*radius))),
        FeasibleSet::Simplex { dim, mix } => {
            let floor = mix / *dim as f64;
            Ok((Vector::from_element(*dim, floor), Vector::from_element(*dim, 1.0 - mix + floor)))
        }
    }
}
