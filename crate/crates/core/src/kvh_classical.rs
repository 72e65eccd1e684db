//! Classical Koopman–von Neumann and Koopman–van Hove dynamics.

use ndarray::{Array3, Zip};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::densities_currents::density_raw;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::hybrid_core::{rk4_step, wave_rhs};
use crate::interp::FourierInterpolant;
use crate::lattice::{same_grid, Axis, ComplexField, Grid, ScalarField};
use crate::liouvillian::{HybridObservable, Liouvillian};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassicalPotential {
    Zero,
    /// `½ k q²`
    Harmonic { k: f64 },
    /// `κ cos q`
    Cosine { kappa: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalHamiltonianSpec {
    pub mass: f64,
    pub potential: ClassicalPotential,
    pub include_kinetic: bool,
}

impl ClassicalHamiltonianSpec {
    pub fn new(mass: f64, potential: ClassicalPotential) -> Self {
        ClassicalHamiltonianSpec { mass, potential, include_kinetic: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::Config("mass must be positive".into()));
        }
        let ok = match self.potential {
            ClassicalPotential::Zero => true,
            ClassicalPotential::Harmonic { k } => k.is_finite(),
            ClassicalPotential::Cosine { kappa } => kappa.is_finite(),
        };
        if !ok {
            return Err(Error::Config("non-finite potential parameter".into()));
        }
        Ok(())
    }

    pub fn expr(&self) -> Expr {
        let v = match self.potential {
            ClassicalPotential::Zero => Expr::zero(),
            ClassicalPotential::Harmonic { k } => Expr::power(Axis::Q, 2).scale(0.5 * k),
            ClassicalPotential::Cosine { kappa } => Expr::cos(Axis::Q, 1.0).scale(kappa),
        };
        if self.include_kinetic {
            &Expr::power(Axis::P, 2).scale(0.5 / self.mass) + &v
        } else {
            v
        }
    }
}

fn covariant(grid: &Grid, h: &Expr, hbar: f64) -> Result<Liouvillian> {
    if h.depends_on(Axis::X) {
        return Err(Error::Config("classical Hamiltonian must not depend on x".into()));
    }
    Liouvillian::new(grid, &HybridObservable::scalar(h.clone()), hbar)
}

/// `L̂_H Ψ = iħ{H,Ψ} + (H − p∂_pH)Ψ`, applied slice-wise in x.
pub fn covariant_liouvillian_apply_expr(h: &Expr, psi: &ComplexField, hbar: f64) -> Result<ComplexField> {
    let l = covariant(&psi.grid, h, hbar)?;
    ComplexField::new(&psi.grid, l.apply(&psi.values)?)
}

pub fn covariant_liouvillian_apply(h: &ClassicalHamiltonianSpec, psi: &ComplexField, hbar: f64) -> Result<ComplexField> {
    h.validate()?;
    covariant_liouvillian_apply_expr(&h.expr(), psi, hbar)
}

/// `iħ{H, Ψ}` without the phase term.
pub fn kvn_liouvillian_apply(h: &ClassicalHamiltonianSpec, psi: &ComplexField, hbar: f64) -> Result<ComplexField> {
    h.validate()?;
    let e = h.expr();
    let grid = &psi.grid;
    let hq = grid.sample(|z| e.derivative(Axis::Q).eval(z));
    let hp = grid.sample(|z| e.derivative(Axis::P).eval(z));
    let uq = grid.diff(&psi.values, Axis::Q)?;
    let up = grid.diff(&psi.values, Axis::P)?;
    let ih = C64::new(0.0, hbar);
    let out = Zip::from(&hq).and(&up).and(&hp).and(&uq).map_collect(|a, b, c, d| ih * (a * b - c * d));
    ComplexField::new(grid, out)
}

/// `ρ(Ψ) = |Ψ|² + ∂_p(p|Ψ|²) + iħ{Ψ, Ψ̄}`.
pub fn classical_density(psi: &ComplexField, hbar: f64) -> Result<ScalarField> {
    ScalarField::new(&psi.grid, density_raw(&psi.grid, &psi.values, hbar)?)
}

/// `⟨A⟩ = ∫Ψ̄ L̂_AΨ` for a sampled real observable; derivatives of A are
/// spectral and the symmetrised Liouvillian is used.
pub fn classical_expectation_with_residue(a: &ScalarField, psi: &ComplexField, hbar: f64) -> Result<(f64, f64)> {
    same_grid(&a.grid, &psi.grid)?;
    let grid = &psi.grid;
    let ac = a.values.mapv(|v| C64::new(v, 0.0));
    let aq = grid.diff(&ac, Axis::Q)?;
    let ap = grid.diff(&ac, Axis::P)?;
    let p = grid.sample(|z| C64::new(z[1], 0.0));
    let ih = C64::new(0.0, hbar);
    let u = &psi.values;
    let du_p = grid.diff(u, Axis::P)?;
    let du_q = grid.diff(u, Axis::Q)?;
    let d_aq_u = grid.diff(&(&aq * u), Axis::P)?;
    let d_ap_u = grid.diff(&(&ap * u), Axis::Q)?;
    let mut lu = Array3::zeros(u.dim());
    Zip::from(&mut lu).and(&aq).and(&du_p).and(&d_aq_u).for_each(|o, &aq, &dup, &daqu| {
        *o = 0.5 * ih * (aq * dup + daqu);
    });
    Zip::from(&mut lu).and(&ap).and(&du_q).and(&d_ap_u).for_each(|o, &ap, &duq, &dapu| {
        *o -= 0.5 * ih * (ap * duq + dapu);
    });
    Zip::from(&mut lu).and(&ac).and(&ap).and(&p).and(u).for_each(|o, &a, &ap, &p, &v| *o += (a - p * ap) * v);
    let e = grid.inner(u, &lu);
    Ok((e.re, e.im))
}

pub fn classical_expectation(a: &ScalarField, psi: &ComplexField, hbar: f64) -> Result<f64> {
    Ok(classical_expectation_with_residue(a, psi, hbar)?.0)
}

/// Right-hand sides `(∂_tR, ∂_tS) = ({H,R}, {H,S} + p∂_pH − H)`.
pub fn classical_madelung_rhs(r: &ScalarField, s: &ScalarField, h: &Expr) -> Result<(ScalarField, ScalarField)> {
    same_grid(&r.grid, &s.grid)?;
    if r.values.iter().any(|v| *v < 0.0) {
        return Err(Error::Config("amplitude R must be non-negative".into()));
    }
    let grid = &r.grid;
    let hq = grid.sample_real(|z| h.derivative(Axis::Q).eval_real(z));
    let hp = grid.sample_real(|z| h.derivative(Axis::P).eval_real(z));
    let lag = {
        let e = -h.phase_part();
        grid.sample_real(|z| e.eval_real(z))
    };
    let bracket = |f: &Array3<f64>| -> Result<Array3<f64>> {
        let fq = grid.diff_real(f, Axis::Q)?;
        let fp = grid.diff_real(f, Axis::P)?;
        Ok(&hq * &fp - &hp * &fq)
    };
    let dr = bracket(&r.values)?;
    let ds = bracket(&s.values)? + lag;
    Ok((ScalarField::new(grid, dr)?, ScalarField::new(grid, ds)?))
}

/// RK4 evolution of `iħ∂_tΨ = L̂_HΨ`, returning the state after each step.
pub fn evolve_classical(h: &Expr, psi0: &ComplexField, hbar: f64, t_final: f64, dt: f64) -> Result<Vec<ComplexField>> {
    let l = covariant(&psi0.grid, h, hbar)?;
    let steps = (t_final / dt).round() as usize;
    let dt = if steps > 0 { t_final / steps as f64 } else { 0.0 };
    let mut u = psi0.values.clone();
    let mut out = vec![psi0.clone()];
    for _ in 0..steps {
        u = rk4_step(|v| wave_rhs(&l, v), &u, dt)?;
        out.push(ComplexField { grid: psi0.grid.clone(), values: u.clone() });
    }
    Ok(out)
}

/// RK4 integration of Hamilton's equations `q̇ = ∂_pH, ṗ = −∂_qH` together with
/// the action `∫(p∂_pH − H) dt`.
pub fn characteristic(h: &Expr, z0: [f64; 2], t_final: f64, steps: usize) -> Vec<([f64; 2], f64)> {
    let hq = h.derivative(Axis::Q);
    let hp = h.derivative(Axis::P);
    let lag = -h.phase_part();
    let f = |y: [f64; 3]| {
        let z = [y[0], y[1], 0.0];
        [hp.eval_real(z), -hq.eval_real(z), lag.eval_real(z)]
    };
    let dt = t_final / steps as f64;
    let mut y = [z0[0], z0[1], 0.0];
    let mut out = vec![([y[0], y[1]], y[2])];
    for _ in 0..steps {
        let k1 = f(y);
        let k2 = f([y[0] + 0.5 * dt * k1[0], y[1] + 0.5 * dt * k1[1], 0.0]);
        let k3 = f([y[0] + 0.5 * dt * k2[0], y[1] + 0.5 * dt * k2[1], 0.0]);
        let k4 = f([y[0] + dt * k3[0], y[1] + dt * k3[1], 0.0]);
        for a in 0..3 {
            y[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
        }
        out.push(([y[0], y[1]], y[2]));
    }
    out
}

/// Largest mismatch, over the given seeds, between the phase of
/// `Ψ(η_t z, t)/Ψ(z, 0)` and the action `∫L dτ / ħ` along the characteristic.
pub fn phase_transport_error(
    h: &Expr,
    psi0: &ComplexField,
    hbar: f64,
    t_final: f64,
    dt: f64,
    seeds: &[[f64; 2]],
) -> Result<f64> {
    if !psi0.grid.is_classical() {
        return Err(Error::Config("phase transport check runs on classical grids".into()));
    }
    let states = evolve_classical(h, psi0, hbar, t_final, dt)?;
    let first = FourierInterpolant::new(&psi0.grid, &psi0.values)?;
    let last = FourierInterpolant::new(&psi0.grid, &states.last().expect("nonempty").values)?;
    let steps = states.len() - 1;
    let mut worst: f64 = 0.0;
    for &z0 in seeds {
        let path = characteristic(h, z0, t_final, steps.max(1) * 4);
        let (z1, action) = *path.last().expect("nonempty");
        let a = first.eval(z0[0], z0[1]);
        let b = last.eval(z1[0], z1[1]);
        let got = (b / a).arg();
        let want = action / hbar;
        let d = got - want;
        let d = d - 2.0 * std::f64::consts::PI * (d / (2.0 * std::f64::consts::PI)).round();
        worst = worst.max(d.abs());
    }
    Ok(worst)
}
