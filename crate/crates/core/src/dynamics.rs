//! Target dynamics x*_{t+1} = A x*_t + v_t and the noise that drives it.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::Vector;
use crate::rng::StreamRng;
use crate::textio::{fmt_f64, parse_f64, parse_usize, read_to_string, write_atomic};

/// Slack allowed on ‖A‖₂ ≤ 1 before A counts as expansive.
pub const NON_EXPANSIVE_TOL: f64 = 1e-12;

/// A known linear map A with its cached spectral norm.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDynamics {
    a: DMatrix<f64>,
    spectral_norm: f64,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::rejected(format!("dynamics must be square, got {}x{}", a.nrows(), a.ncols())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::rejected("dynamics matrix has a non-finite entry"));
        }
        let spectral_norm = a.clone().svd(false, false).singular_values.max();
        Ok(Self { a, spectral_norm })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn spectral_norm(&self) -> f64 {
        self.spectral_norm
    }

    pub fn is_non_expansive(&self) -> bool {
        self.spectral_norm <= 1.0 + NON_EXPANSIVE_TOL
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        &self.a * x
    }
}

/// Near-constant-velocity model A = I₂ ⊗ [[1, ε], [0, 1]].
///
/// State order is (horizontal position, horizontal velocity, vertical
/// position, vertical velocity).
pub fn ncv_dynamics(epsilon: f64) -> Result<LinearDynamics> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::rejected(format!("sampling interval must be nonnegative, got {epsilon}")));
    }
    let mut a = DMatrix::identity(4, 4);
    a[(0, 1)] = epsilon;
    a[(2, 3)] = epsilon;
    LinearDynamics::new(a)
}

/// Process-noise covariance σ²_ν I₂ ⊗ [[ε³/3, ε²/2], [ε²/2, ε]].
pub fn ncv_covariance(sigma_nu2: f64, epsilon: f64) -> DMatrix<f64> {
    let e = epsilon;
    let block = [[e.powi(3) / 3.0, e * e / 2.0], [e * e / 2.0, e]];
    DMatrix::from_fn(4, 4, |r, c| if r / 2 == c / 2 { sigma_nu2 * block[r % 2][c % 2] } else { 0.0 })
}

/// One raw Gaussian draw ν ~ N(0, Σ) using the closed-form Cholesky factor
/// of each 2×2 block.
pub fn ncv_raw_draw(sigma_nu2: f64, epsilon: f64, rng: &mut StreamRng) -> [f64; 4] {
    let s = sigma_nu2.max(0.0).sqrt();
    let e = epsilon;
    let l11 = s * (e.powi(3) / 3.0).sqrt();
    let l21 = s * (3.0 * e).sqrt() / 2.0;
    let l22 = s * e.sqrt() / 2.0;
    let mut out = [0.0; 4];
    for block in 0..2 {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        out[2 * block] = l11 * z1;
        out[2 * block + 1] = l21 * z1 + l22 * z2;
    }
    out
}

/// Scales a raw draw by its own ℓ∞ norm: v = ν‖ν‖∞.
pub fn ncv_scale(raw: &[f64; 4]) -> Vector {
    let inf = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Vector::from_iterator(4, raw.iter().map(|v| v * inf))
}

pub fn ncv_noise_step(sigma_nu2: f64, epsilon: f64, rng: &mut StreamRng) -> Vector {
    ncv_scale(&ncv_raw_draw(sigma_nu2, epsilon, rng))
}

/// Noise generator: round index (1-based), the states so far, and the stream.
pub type CustomNoiseFn = dyn Fn(usize, &[Vector], &mut StreamRng) -> Vector + Send + Sync;

#[derive(Clone)]
pub enum NoiseProcess {
    Zero,
    /// Explicit sequence v_1, v_2, ...; must cover every round.
    Scripted(Vec<Vector>),
    /// v_t = ν_t‖ν_t‖∞ with ν_t ~ N(0, Σ_ncv).
    NcvScaled { sigma_nu2: f64, epsilon: f64 },
    Custom(Arc<CustomNoiseFn>),
}

impl fmt::Debug for NoiseProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Scripted(v) => write!(f, "Scripted({} steps)", v.len()),
            Self::NcvScaled { sigma_nu2, epsilon } => {
                write!(f, "NcvScaled {{ sigma_nu2: {sigma_nu2}, epsilon: {epsilon} }}")
            }
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Realized target path: states x*_1..x*_{T+1} and noises v_1..v_T.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetTrajectory {
    states: Vec<Vector>,
    noises: Vec<Vector>,
    dynamics: LinearDynamics,
}

impl TargetTrajectory {
    /// Assembles a trajectory from recorded parts, checking x*_{t+1} = A x*_t + v_t.
    pub fn from_parts(dynamics: LinearDynamics, states: Vec<Vector>, noises: Vec<Vector>) -> Result<Self> {
        if states.len() != noises.len() + 1 {
            return Err(Error::rejected(format!(
                "trajectory needs T+1 states for T noises, got {} and {}",
                states.len(),
                noises.len()
            )));
        }
        let d = dynamics.dim();
        for s in states.iter().chain(noises.iter()) {
            Error::check_dim("trajectory vector", d, s.len())?;
        }
        let traj = Self { states, noises, dynamics };
        let residual = traj.reconstruction_residual();
        if residual > 1e-12 {
            return Err(Error::rejected(format!("states do not follow the dynamics (residual {residual:e})")));
        }
        Ok(traj)
    }

    /// Number of rounds T.
    pub fn rounds(&self) -> usize {
        self.noises.len()
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn dynamics(&self) -> &LinearDynamics {
        &self.dynamics
    }

    /// x*_t for 1 ≤ t ≤ T+1.
    pub fn state(&self, t: usize) -> &Vector {
        &self.states[t - 1]
    }

    /// v_t for 1 ≤ t ≤ T.
    pub fn noise(&self, t: usize) -> &Vector {
        &self.noises[t - 1]
    }

    pub fn states(&self) -> &[Vector] {
        &self.states
    }

    pub fn noises(&self) -> &[Vector] {
        &self.noises
    }

    /// max_t ‖x*_{t+1} − (A x*_t + v_t)‖∞, scaled by max(1, ‖x*_{t+1}‖∞).
    pub fn reconstruction_residual(&self) -> f64 {
        (0..self.noises.len())
            .map(|i| {
                let predicted = self.dynamics.apply(&self.states[i]) + &self.noises[i];
                let next = &self.states[i + 1];
                (next - predicted).amax() / next.amax().max(1.0)
            })
            .fold(0.0, f64::max)
    }

    /// Axis-aligned hull of all states.
    pub fn bounding_box(&self) -> (Vector, Vector) {
        let d = self.dim();
        let mut lo = Vector::from_element(d, f64::INFINITY);
        let mut hi = Vector::from_element(d, f64::NEG_INFINITY);
        for s in &self.states {
            for k in 0..d {
                lo[k] = lo[k].min(s[k]);
                hi[k] = hi[k].max(s[k]);
            }
        }
        (lo, hi)
    }

    /// CSV with header `t,x1..xd,v1..vd`; the final row (t = T+1) has empty noise fields.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::from("t");
        for k in 1..=d {
            let _ = write!(out, ",x{k}");
        }
        for k in 1..=d {
            let _ = write!(out, ",v{k}");
        }
        out.push('\n');
        for (i, s) in self.states.iter().enumerate() {
            let _ = write!(out, "{}", i + 1);
            for v in s.iter() {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
            match self.noises.get(i) {
                Some(noise) => {
                    for v in noise.iter() {
                        let _ = write!(out, ",{}", fmt_f64(*v));
                    }
                }
                None => out.push_str(&",".repeat(d)),
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, dynamics: LinearDynamics) -> Result<Self> {
        const WHAT: &str = "trajectory csv";
        let d = dynamics.dim();
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Parse {
            what: WHAT,
            line: 1,
            msg: "empty file".into(),
        })?;
        let expected: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=d).map(|k| format!("x{k}")))
            .chain((1..=d).map(|k| format!("v{k}")))
            .collect();
        if header.split(',').collect::<Vec<_>>() != expected {
            return Err(Error::Parse {
                what: WHAT,
                line: 1,
                msg: format!("expected header {:?}", expected.join(",")),
            });
        }
        let mut states = Vec::new();
        let mut noises = Vec::new();
        let rows: Vec<&str> = lines.filter(|l| !l.is_empty()).collect();
        for (r, line) in rows.iter().enumerate() {
            let lineno = r + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 1 + 2 * d {
                return Err(Error::Parse {
                    what: WHAT,
                    line: lineno,
                    msg: format!("expected {} fields, found {}", 1 + 2 * d, fields.len()),
                });
            }
            if parse_usize(fields[0], WHAT, lineno)? != r + 1 {
                return Err(Error::Parse {
                    what: WHAT,
                    line: lineno,
                    msg: "rounds must be consecutive from 1".into(),
                });
            }
            let x = fields[1..=d].iter().map(|f| parse_f64(f, WHAT, lineno)).collect::<Result<Vec<_>>>()?;
            states.push(Vector::from_vec(x));
            let last = r + 1 == rows.len();
            if last {
                if fields[d + 1..].iter().any(|f| !f.trim().is_empty()) {
                    return Err(Error::Parse {
                        what: WHAT,
                        line: lineno,
                        msg: "final row must have empty noise fields".into(),
                    });
                }
            } else {
                let v = fields[d + 1..].iter().map(|f| parse_f64(f, WHAT, lineno)).collect::<Result<Vec<_>>>()?;
                noises.push(Vector::from_vec(v));
            }
        }
        if states.is_empty() {
            return Err(Error::Parse {
                what: WHAT,
                line: 2,
                msg: "no rows".into(),
            });
        }
        Self::from_parts(dynamics, states, noises)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn read_csv(path: &Path, dynamics: LinearDynamics) -> Result<Self> {
        Self::from_csv(&read_to_string(path)?, dynamics)
    }
}

/// Runs x*_{t+1} = A x*_t + v_t for T rounds from x*_1 = `x0`.
pub fn generate_trajectory(
    dynamics: &LinearDynamics,
    x0: &Vector,
    noise: &NoiseProcess,
    rounds: usize,
    rng: &mut StreamRng,
) -> Result<TargetTrajectory> {
    let d = dynamics.dim();
    Error::check_dim("initial target state", d, x0.len())?;
    match noise {
        NoiseProcess::Scripted(seq) => {
            if seq.len() < rounds {
                return Err(Error::rejected(format!(
                    "scripted noise has {} steps but {rounds} rounds were requested",
                    seq.len()
                )));
            }
            for v in &seq[..rounds] {
                Error::check_dim("scripted noise", d, v.len())?;
            }
        }
        NoiseProcess::NcvScaled { sigma_nu2, epsilon } => {
            Error::check_dim("ncv noise", 4, d)?;
            if !(*sigma_nu2 >= 0.0 && *epsilon >= 0.0) {
                return Err(Error::rejected("ncv noise parameters must be nonnegative"));
            }
        }
        _ => {}
    }

    let mut states = Vec::with_capacity(rounds + 1);
    let mut noises = Vec::with_capacity(rounds);
    states.push(x0.clone());
    for t in 1..=rounds {
        let v = match noise {
            NoiseProcess::Zero => Vector::zeros(d),
            NoiseProcess::Scripted(seq) => seq[t - 1].clone(),
            NoiseProcess::NcvScaled { sigma_nu2, epsilon } => ncv_noise_step(*sigma_nu2, *epsilon, rng),
            NoiseProcess::Custom(f) => {
                let v = f(t, &states, rng);
                Error::check_dim("custom noise", d, v.len())?;
                v
            }
        };
        let next = dynamics.apply(&states[t - 1]) + &v;
        states.push(next);
        noises.push(v);
    }
    Ok(TargetTrajectory {
        states,
        noises,
        dynamics: dynamics.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathNorm {
    L2,
    L1,
}

impl PathNorm {
    pub fn of(self, v: &Vector) -> f64 {
        match self {
            PathNorm::L2 => v.norm(),
            PathNorm::L1 => v.lp_norm(1),
        }
    }
}

/// Σ_t ‖v_t‖, the deviation of the target from its nominal dynamics.
pub fn path_length(traj: &TargetTrajectory, norm: PathNorm) -> f64 {
    traj.noises().iter().map(|v| norm.of(v)).sum()
}
