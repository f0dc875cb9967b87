//! Bregman geometries, feasible sets and the mirror-descent step.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;

/// Absolute tolerance for membership and comparison checks.
pub const GEOMETRY_TOL: f64 = 1e-9;

/// Default uniform-mixing weight for the entropic simplex.
pub const DEFAULT_SIMPLEX_MIX: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    /// R(x) = ½‖x‖₂², strongly convex w.r.t. ℓ2.
    Euclidean,
    /// R(x) = Σ x(k) ln x(k) − x(k), strongly convex w.r.t. ℓ1 on the simplex.
    NegativeEntropy,
}

/// A mirror map: the generating function R together with its norm pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MirrorMap {
    kind: MapKind,
    dim: usize,
}

impl MirrorMap {
    pub fn new(kind: MapKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::rejected("mirror map dimension must be positive"));
        }
        Ok(Self { kind, dim })
    }

    pub fn euclidean(dim: usize) -> Result<Self> {
        Self::new(MapKind::Euclidean, dim)
    }

    pub fn negative_entropy(dim: usize) -> Result<Self> {
        Self::new(MapKind::NegativeEntropy, dim)
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Primal norm the map is strongly convex against.
    pub fn norm(&self, v: &Vector) -> f64 {
        match self.kind {
            MapKind::Euclidean => v.norm(),
            MapKind::NegativeEntropy => v.lp_norm(1),
        }
    }

    /// Dual of [`MirrorMap::norm`].
    pub fn dual_norm(&self, v: &Vector) -> f64 {
        match self.kind {
            MapKind::Euclidean => v.norm(),
            MapKind::NegativeEntropy => v.amax(),
        }
    }

    fn check_domain(&self, what: &'static str, x: &Vector) -> Result<()> {
        Error::check_dim(what, self.dim, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::rejected(format!("{what} has a non-finite entry")));
        }
        if self.kind == MapKind::NegativeEntropy && x.iter().any(|&v| v <= 0.0) {
            return Err(Error::rejected(format!(
                "{what} has a nonpositive coordinate under negative entropy"
            )));
        }
        Ok(())
    }

    /// The generating function R(x).
    pub fn generator(&self, x: &Vector) -> Result<f64> {
        self.check_domain("x", x)?;
        Ok(match self.kind {
            MapKind::Euclidean => 0.5 * x.norm_squared(),
            MapKind::NegativeEntropy => x.iter().map(|&v| v * v.ln() - v).sum(),
        })
    }

    /// ∇R(x).
    pub fn generator_gradient(&self, x: &Vector) -> Result<Vector> {
        self.check_domain("x", x)?;
        Ok(match self.kind {
            MapKind::Euclidean => x.clone(),
            MapKind::NegativeEntropy => x.map(f64::ln),
        })
    }

    /// Bregman divergence D_R(x, y) = R(x) − R(y) − ⟨x − y, ∇R(y)⟩.
    pub fn bregman(&self, x: &Vector, y: &Vector) -> Result<f64> {
        self.check_domain("x", x)?;
        self.check_domain("y", y)?;
        Ok(match self.kind {
            MapKind::Euclidean => 0.5 * (x - y).norm_squared(),
            MapKind::NegativeEntropy => x
                .iter()
                .zip(y.iter())
                .map(|(&a, &b)| a * (a / b).ln() - a + b)
                .sum::<f64>()
                .max(0.0),
        })
    }

    /// argmin over `set` of η⟨x, g⟩ + D_R(x, y).
    pub fn mirror_step(&self, set: &FeasibleSet, y: &Vector, g: &Vector, eta: f64) -> Result<Vector> {
        Error::check_dim("feasible set", self.dim, set.dim())?;
        Error::check_dim("gradient", self.dim, g.len())?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::rejected("gradient has a non-finite entry"));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::rejected(format!("step size must be positive, got {eta}")));
        }
        self.check_domain("y", y)?;
        match self.kind {
            MapKind::Euclidean => {
                let mut x = y.clone();
                x.axpy(-eta, g, 1.0);
                Ok(set.project(&x))
            }
            MapKind::NegativeEntropy => match set {
                FeasibleSet::Simplex { mix, .. } => Ok(entropic_step(y, g, eta, *mix)),
                other => Err(Error::Unsupported(format!(
                    "negative entropy requires the simplex, got {}",
                    other.name()
                ))),
            },
        }
    }
}

/// Exponentiated-gradient step on {x : x(k) ≥ mix/d, Σx = 1}.
///
/// The KKT conditions give x(k) = max(mix/d, c · y(k) e^{−η g(k)}) for a
/// single scale c, found exactly by scanning the sorted weights.
fn entropic_step(y: &Vector, g: &Vector, eta: f64, mix: f64) -> Vector {
    let d = y.len();
    let log_w: Vec<f64> = y.iter().zip(g.iter()).map(|(&yk, &gk)| yk.ln() - eta * gk).collect();
    let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|&l| (l - top).exp()).collect();
    let floor = mix / d as f64;
    if floor == 0.0 {
        let total: f64 = w.iter().sum();
        return Vector::from_iterator(d, w.iter().map(|&v| v / total));
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]));
    let mut prefix = vec![0.0; d + 1];
    for (m, &k) in order.iter().enumerate() {
        prefix[m + 1] = prefix[m] + w[k];
    }
    // The free set is a prefix of the sorted order; take the largest consistent one.
    let mut scale = (1.0 - (d as f64 - 1.0) * floor) / prefix[1];
    for m in (1..=d).rev() {
        let c = (1.0 - (d - m) as f64 * floor) / prefix[m];
        let last_free = c * w[order[m - 1]] >= floor;
        let next_clamped = m == d || c * w[order[m]] <= floor;
        if last_free && next_clamped {
            scale = c;
            break;
        }
    }
    Vector::from_iterator(d, w.iter().map(|&v| (scale * v).max(floor)))
}

/// Constraint set X for the estimates.
#[derive(Clone, Debug, PartialEq)]
pub enum FeasibleSet {
    /// ℝ^d; no projection is applied.
    WholeSpace { dim: usize },
    Box { lower: Vector, upper: Vector },
    Ball { center: Vector, radius: f64 },
    /// Probability simplex mixed with the uniform distribution:
    /// {(1 − mix) p + mix/d · 1 : p ∈ Δ_d}.
    Simplex { dim: usize, mix: f64 },
}

impl FeasibleSet {
    pub fn whole(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::rejected("set dimension must be positive"));
        }
        Ok(Self::WholeSpace { dim })
    }

    pub fn boxed(lower: Vector, upper: Vector) -> Result<Self> {
        Error::check_dim("box upper bound", lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::rejected("set dimension must be positive"));
        }
        for (l, u) in lower.iter().zip(upper.iter()) {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(Error::rejected(format!("invalid box side [{l}, {u}]")));
            }
        }
        Ok(Self::Box { lower, upper })
    }

    pub fn ball(center: Vector, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::rejected("set dimension must be positive"));
        }
        if !(radius.is_finite() && radius > 0.0) || center.iter().any(|v| !v.is_finite()) {
            return Err(Error::rejected(format!("invalid ball radius {radius}")));
        }
        Ok(Self::Ball { center, radius })
    }

    pub fn simplex(dim: usize, mix: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::rejected("set dimension must be positive"));
        }
        if !(0.0..1.0).contains(&mix) {
            return Err(Error::rejected(format!("simplex mixing weight must be in [0, 1), got {mix}")));
        }
        Ok(Self::Simplex { dim, mix })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::WholeSpace { .. } => "whole space",
            Self::Box { .. } => "box",
            Self::Ball { .. } => "ball",
            Self::Simplex { .. } => "simplex",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::WholeSpace { dim } | Self::Simplex { dim, .. } => *dim,
            Self::Box { lower, .. } => lower.len(),
            Self::Ball { center, .. } => center.len(),
        }
    }

    pub fn is_compact(&self) -> bool {
        !matches!(self, Self::WholeSpace { .. })
    }

    fn simplex_floor(dim: usize, mix: f64) -> f64 {
        mix / dim as f64
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            Self::WholeSpace { .. } => x.iter().all(|v| v.is_finite()),
            Self::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
            Self::Ball { center, radius } => (x - center).norm() <= radius + tol,
            Self::Simplex { dim, mix } => {
                let floor = Self::simplex_floor(*dim, *mix);
                x.iter().all(|&v| v >= floor - tol) && (x.sum() - 1.0).abs() <= tol.max(1e-12)
            }
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, y: &Vector) -> Vector {
        match self {
            Self::WholeSpace { .. } => y.clone(),
            Self::Box { lower, upper } => {
                Vector::from_iterator(y.len(), y.iter().zip(lower.iter().zip(upper.iter())).map(|(v, (l, u))| v.clamp(*l, *u)))
            }
            Self::Ball { center, radius } => {
                let offset = y - center;
                let r = offset.norm();
                if r <= *radius {
                    y.clone()
                } else {
                    center + offset * (*radius / r)
                }
            }
            Self::Simplex { dim, mix } => {
                let floor = Self::simplex_floor(*dim, *mix);
                let shifted = y.map(|v| v - floor);
                project_scaled_simplex(&shifted, 1.0 - mix).map(|v| v + floor)
            }
        }
    }

    /// A canonical interior point; `None` for the whole space.
    pub fn centroid(&self) -> Option<Vector> {
        match self {
            Self::WholeSpace { .. } => None,
            Self::Box { lower, upper } => Some((lower + upper) * 0.5),
            Self::Ball { center, .. } => Some(center.clone()),
            Self::Simplex { dim, .. } => Some(Vector::from_element(*dim, 1.0 / *dim as f64)),
        }
    }

    /// Vertices of a simplex set (rows of the mixed identity).
    pub fn simplex_vertices(&self) -> Option<Vec<Vector>> {
        let Self::Simplex { dim, mix } = self else {
            return None;
        };
        let floor = Self::simplex_floor(*dim, *mix);
        Some(
            (0..*dim)
                .map(|i| Vector::from_fn(*dim, |k, _| if k == i { 1.0 - mix + floor } else { floor }))
                .collect(),
        )
    }

    /// Euclidean diameter; `None` for the whole space.
    pub fn diameter(&self) -> Option<f64> {
        match self {
            Self::WholeSpace { .. } => None,
            Self::Box { lower, upper } => Some((upper - lower).norm()),
            Self::Ball { radius, .. } => Some(2.0 * radius),
            Self::Simplex { dim, mix } => Some(if *dim > 1 { std::f64::consts::SQRT_2 * (1.0 - mix) } else { 0.0 }),
        }
    }

    /// Uniform sample from the set.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vector> {
        match self {
            Self::WholeSpace { .. } => Err(Error::NonCompact("cannot sample the whole space")),
            Self::Box { lower, upper } => Ok(Vector::from_iterator(
                lower.len(),
                lower.iter().zip(upper.iter()).map(|(l, u)| if u > l { rng.random_range(*l..=*u) } else { *l }),
            )),
            Self::Ball { center, radius } => {
                let d = center.len();
                let dir = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
                let n = dir.norm().max(f64::MIN_POSITIVE);
                let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
                Ok(center + dir * (r / n))
            }
            Self::Simplex { dim, mix } => {
                let e = Vector::from_fn(*dim, |_, _| Exp1.sample(rng));
                let p = &e / e.sum();
                let floor = Self::simplex_floor(*dim, *mix);
                Ok(p.map(|v| (1.0 - mix) * v + floor))
            }
        }
    }
}

/// Sort-based projection onto {z ≥ 0, Σz = total}.
fn project_scaled_simplex(y: &Vector, total: f64) -> Vector {
    let mut u: Vec<f64> = y.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumulative += uj;
        let t = (cumulative - total) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    y.map(|v| (v - theta).max(0.0))
}

/// Geometry constants entering the regret bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BregmanConstants {
    /// sup over X × X of D_R.
    pub rsq: f64,
    /// Lipschitz constant of D_R(·, z) over X, w.r.t. the map's norm.
    pub k: f64,
}

/// Computes R² and K for a compact set.
pub fn constants_of(map: &MirrorMap, set: &FeasibleSet) -> Result<BregmanConstants> {
    Error::check_dim("feasible set", map.dim(), set.dim())?;
    if !set.is_compact() {
        return Err(Error::NonCompact("bound constants need a compact feasible set"));
    }
    let constants = match map.kind() {
        MapKind::Euclidean => {
            let diam = set.diameter().unwrap_or(0.0);
            BregmanConstants {
                rsq: 0.5 * diam * diam,
                k: diam,
            }
        }
        MapKind::NegativeEntropy => {
            let FeasibleSet::Simplex { mix, .. } = set else {
                return Err(Error::Unsupported(format!(
                    "negative entropy requires the simplex, got {}",
                    set.name()
                )));
            };
            if *mix <= 0.0 {
                return Err(Error::rejected(
                    "negative-entropy constants need a positive simplex mixing weight",
                ));
            }
            let vertices = set.simplex_vertices().unwrap_or_default();
            let d = vertices.len();
            // D_R is jointly convex, so its supremum sits on a vertex pair.
            let pairs: Vec<(usize, usize)> = if d <= 64 {
                (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).filter(|(i, j)| i != j).collect()
            } else {
                (0..d).map(|i| (i, (i + 1) % d)).collect()
            };
            let mut rsq = 0.0f64;
            let mut k = 0.0f64;
            for (i, j) in pairs {
                rsq = rsq.max(map.bregman(&vertices[i], &vertices[j])?);
                let grad_gap = vertices[i].map(f64::ln) - vertices[j].map(f64::ln);
                k = k.max(grad_gap.amax());
            }
            BregmanConstants { rsq, k }
        }
    };
    if constants.rsq <= 0.0 || constants.k <= 0.0 {
        return Err(Error::rejected("degenerate feasible set (zero diameter)"));
    }
    Ok(constants)
}
