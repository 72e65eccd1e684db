//! Initial-state presets.

use ndarray::Array3;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid_core::HybridWavefunction;
use crate::lattice::{Axis, ComplexField, Grid};

/// C^∞ step rising from 0 at `t ≤ 0` to 1 at `t ≥ 1`.
pub fn smooth_step(t: f64) -> f64 {
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        f(t) / (f(t) + f(1.0 - t))
    }
}

/// 1 on `|x| ≤ inner`, 0 on `|x| ≥ outer`, smooth in between.
pub fn plateau(x: f64, inner: f64, outer: f64) -> f64 {
    smooth_step((outer - x.abs()) / (outer - inner))
}

/// Signed distance `x − c` reduced to `[−L/2, L/2)`.
pub fn min_image(x: f64, c: f64, length: f64) -> f64 {
    let d = x - c;
    d - length * (d / length + 0.5).floor()
}

/// `exp(−(x−c)²/(4σ²) + i k x)`, so that `|g|²` has standard deviation σ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gauss1D {
    pub center: f64,
    pub width: f64,
    #[serde(default)]
    pub momentum: f64,
}

impl Gauss1D {
    pub fn new(center: f64, width: f64, momentum: f64) -> Self {
        Gauss1D { center, width, momentum }
    }

    pub fn eval(&self, x: f64, length: f64) -> C64 {
        let d = min_image(x, self.center, length);
        C64::from_polar((-d * d / (4.0 * self.width * self.width)).exp(), self.momentum * d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    /// `Υ = g_q(q) g_p(p) φ(x)` with φ a Gaussian on a spatial axis or a
    /// fixed amplitude vector on a level axis.
    Gaussian {
        q: Gauss1D,
        p: Gauss1D,
        #[serde(default)]
        x: Option<Gauss1D>,
        #[serde(default)]
        levels: Option<Vec<C64>>,
    },
    /// `Υ = sqrt(a(q) b(p)) φ(x)` with a Gaussian `a` and the heavy-tailed
    /// `b(p) = w(p)/(1 + p²/σ²)`, w a smooth cutoff; its density is
    /// non-negative outside the cutoff band.
    HeavyTail {
        q: Gauss1D,
        sigma_p: f64,
        plateau: f64,
        ramp: f64,
        #[serde(default)]
        x: Option<Gauss1D>,
        #[serde(default)]
        levels: Option<Vec<C64>>,
    },
}

fn quantum_factor(grid: &Grid, x: &Option<Gauss1D>, levels: &Option<Vec<C64>>) -> Result<Vec<C64>> {
    let nx = grid.n(Axis::X);
    match (x, levels) {
        (Some(g), None) if grid.has_spatial_x() => {
            let l = grid.length(Axis::X);
            Ok(grid.coords(Axis::X).iter().map(|&x| g.eval(x, l)).collect())
        }
        (None, Some(v)) if !grid.has_spatial_x() => {
            if v.len() != nx {
                return Err(Error::Config(format!("{} level amplitudes for {nx} levels", v.len())));
            }
            Ok(v.clone())
        }
        (None, None) if nx == 1 => Ok(vec![C64::new(1.0, 0.0)]),
        _ => Err(Error::Config("quantum factor of the initial state does not match the grid".into())),
    }
}

impl InitialState {
    pub fn build(&self, grid: &Grid, hbar: f64) -> Result<HybridWavefunction> {
        let lq = grid.length(Axis::Q);
        let lp = grid.length(Axis::P);
        let (zpart, phi): (Box<dyn Fn(f64, f64) -> C64>, Vec<C64>) = match self {
            InitialState::Gaussian { q, p, x, levels } => {
                let (q, p) = (*q, *p);
                (Box::new(move |a, b| q.eval(a, lq) * p.eval(b, lp)), quantum_factor(grid, x, levels)?)
            }
            InitialState::HeavyTail { q, sigma_p, plateau: inner, ramp, x, levels } => {
                let (q, s, inner, ramp) = (*q, *sigma_p, *inner, *ramp);
                if !(s > 0.0 && inner > 0.0 && ramp > 0.0) || inner + ramp > 0.5 * lp {
                    return Err(Error::Config("heavy-tail cutoff must fit inside the p box".into()));
                }
                (
                    Box::new(move |a, b| {
                        let w = plateau(b, inner, inner + ramp);
                        q.eval(a, lq) * (w / (1.0 + b * b / (s * s))).sqrt()
                    }),
                    quantum_factor(grid, x, levels)?,
                )
            }
        };
        let v = Array3::from_shape_fn(grid.shape(), |(i, j, k)| {
            zpart(grid.coords(Axis::Q)[i], grid.coords(Axis::P)[j]) * phi[k]
        });
        HybridWavefunction::new(ComplexField::new(grid, v)?, hbar)?.normalized()
    }
}

/// Ground state of `−(ħ²/2m)Δ + ½ k x²` on the spectral x grid, normalized
/// with the x quadrature weight and made real-positive at its peak.
pub fn harmonic_ground_state(grid: &Grid, mass: f64, k: f64, hbar: f64) -> Result<Vec<C64>> {
    if !grid.has_spatial_x() {
        return Err(Error::Config("ground state needs a spatial x axis".into()));
    }
    let lap = crate::densities_currents::laplacian_matrix(grid)?;
    let xs = grid.coords(Axis::X);
    let n = xs.len();
    let h = nalgebra::DMatrix::from_fn(n, n, |a, b| {
        let mut v = lap[(a, b)] * (-hbar * hbar / (2.0 * mass));
        if a == b {
            v += 0.5 * k * xs[a] * xs[a];
        }
        v
    });
    let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let col = eig.eigenvectors.column(imin);
    let (ipk, _) = col.iter().enumerate().fold((0, 0.0), |acc, (i, v)| if v.norm() > acc.1 { (i, v.norm()) } else { acc });
    let ph = col[ipk].conj() / col[ipk].norm();
    let w = grid.weight_x().sqrt();
    Ok(col.iter().map(|v| v * ph / w).collect())
}

/// Discrete ground-state energy of the same Hamiltonian.
pub fn harmonic_ground_energy(grid: &Grid, mass: f64, k: f64, hbar: f64) -> Result<f64> {
    let lap = crate::densities_currents::laplacian_matrix(grid)?;
    let xs = grid.coords(Axis::X);
    let n = xs.len();
    let h = nalgebra::DMatrix::from_fn(n, n, |a, b| {
        let mut v = lap[(a, b)] * (-hbar * hbar / (2.0 * mass));
        if a == b {
            v += 0.5 * k * xs[a] * xs[a];
        }
        v
    });
    let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
    Ok(h.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_limits() {
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(2.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(plateau(0.3, 1.0, 2.0), 1.0);
        assert_eq!(plateau(-2.5, 1.0, 2.0), 0.0);
    }

    #[test]
    fn min_image_range() {
        assert!((min_image(9.0, 1.0, 10.0) + 2.0).abs() < 1e-12);
        assert!((min_image(1.5, 1.0, 10.0) - 0.5).abs() < 1e-12);
    }
}
