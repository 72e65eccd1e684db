//! Hybrid Hamiltonians, the hybrid Liouvillian, RK4 time stepping and the
//! dense matrix-exponential propagator.

use ndarray::{Array2, Array3, Zip};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dense::{expm, size_guard, DenseHybridOperator};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::lattice::{same_grid, Axis, ComplexField, Grid};
use crate::liouvillian::{rows_to_matrix, HybridObservable, Liouvillian};

/// One additive piece of the potential V(q, x).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialTerm {
    /// `½ k q²`
    HarmonicQ { k: f64 },
    /// `κ cos q`
    CosineQ { kappa: f64 },
    /// `½ k x²`
    HarmonicX { k: f64 },
    /// `κ cos x`
    CosineX { kappa: f64 },
    /// `λ sin q sin x`
    Bilinear { lambda: f64 },
    /// `½ λ q² x²`
    Quadratic { lambda: f64 },
}

impl PotentialTerm {
    pub fn expr(&self) -> Expr {
        match *self {
            PotentialTerm::HarmonicQ { k } => Expr::power(Axis::Q, 2).scale(0.5 * k),
            PotentialTerm::CosineQ { kappa } => Expr::cos(Axis::Q, 1.0).scale(kappa),
            PotentialTerm::HarmonicX { k } => Expr::power(Axis::X, 2).scale(0.5 * k),
            PotentialTerm::CosineX { kappa } => Expr::cos(Axis::X, 1.0).scale(kappa),
            PotentialTerm::Bilinear { lambda } => (&Expr::sin(Axis::Q, 1.0) * &Expr::sin(Axis::X, 1.0)).scale(lambda),
            PotentialTerm::Quadratic { lambda } => {
                (&Expr::power(Axis::Q, 2) * &Expr::power(Axis::X, 2)).scale(0.5 * lambda)
            }
        }
    }

    fn parameter(&self) -> f64 {
        match *self {
            PotentialTerm::HarmonicQ { k } | PotentialTerm::HarmonicX { k } => k,
            PotentialTerm::CosineQ { kappa } | PotentialTerm::CosineX { kappa } => kappa,
            PotentialTerm::Bilinear { lambda } | PotentialTerm::Quadratic { lambda } => lambda,
        }
    }
}

/// Phase-space profile multiplying a level coupling matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `sin(k q)`
    SinQ(f64),
    /// `cos(k q)`
    CosQ(f64),
    One,
}

impl Profile {
    pub fn expr(&self) -> Expr {
        match *self {
            Profile::SinQ(k) => Expr::sin(Axis::Q, k),
            Profile::CosQ(k) => Expr::cos(Axis::Q, k),
            Profile::One => Expr::constant(1.0),
        }
    }
}

/// `λ · profile(q) ⊗ α̂` on a level-type quantum factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCoupling {
    pub lambda: f64,
    pub profile: Profile,
    pub matrix: Vec<Vec<C64>>,
}

fn default_true() -> bool {
    true
}

/// `Ĥ = p²/2M + V(q,x) − (ħ²/2m)Δ_x + Σ λ f(q) ⊗ α̂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridHamiltonianSpec {
    pub hbar: f64,
    pub quantum_mass: f64,
    pub classical_mass: f64,
    #[serde(default)]
    pub potential: Vec<PotentialTerm>,
    #[serde(default = "default_true")]
    pub quantum_kinetic: bool,
    #[serde(default = "default_true")]
    pub classical_kinetic: bool,
    #[serde(default)]
    pub level_couplings: Vec<LevelCoupling>,
}

impl HybridHamiltonianSpec {
    pub fn new(hbar: f64, quantum_mass: f64, classical_mass: f64) -> Self {
        HybridHamiltonianSpec {
            hbar,
            quantum_mass,
            classical_mass,
            potential: Vec::new(),
            quantum_kinetic: true,
            classical_kinetic: true,
            level_couplings: Vec::new(),
        }
    }

    /// The null Hamiltonian.
    pub fn zero(hbar: f64) -> Self {
        HybridHamiltonianSpec { quantum_kinetic: false, classical_kinetic: false, ..Self::new(hbar, 1.0, 1.0) }
    }

    pub fn with_potential(mut self, term: PotentialTerm) -> Self {
        self.potential.push(term);
        self
    }

    pub fn with_kinetics(mut self, quantum: bool, classical: bool) -> Self {
        self.quantum_kinetic = quantum;
        self.classical_kinetic = classical;
        self
    }

    pub fn with_level_coupling(mut self, lambda: f64, profile: Profile, matrix: &Array2<C64>) -> Self {
        self.level_couplings.push(LevelCoupling {
            lambda,
            profile,
            matrix: crate::liouvillian::matrix_to_rows(matrix),
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("hbar", self.hbar), ("quantum_mass", self.quantum_mass), ("classical_mass", self.classical_mass)]
        {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite")));
            }
        }
        if self.potential.iter().any(|t| !t.parameter().is_finite()) {
            return Err(Error::Config("non-finite potential parameter".into()));
        }
        for c in &self.level_couplings {
            if !c.lambda.is_finite() {
                return Err(Error::Config("non-finite coupling".into()));
            }
            let m = rows_to_matrix(&c.matrix)?;
            if (&m - &m.t().mapv(|v| v.conj())).iter().any(|v| v.norm() > 1e-12) {
                return Err(Error::Config("level coupling matrix must be Hermitian".into()));
            }
        }
        Ok(())
    }

    pub fn validate_for(&self, grid: &Grid) -> Result<()> {
        self.validate()?;
        let v = self.potential_expr();
        if !grid.has_spatial_x() {
            if self.quantum_kinetic {
                return Err(Error::Config("quantum kinetic term needs a spatial x axis".into()));
            }
            if v.depends_on(Axis::X) {
                return Err(Error::Config("x-dependent potential needs a spatial x axis".into()));
            }
        }
        for c in &self.level_couplings {
            if c.matrix.len() != grid.n(Axis::X) {
                return Err(Error::GridMismatch("level coupling size differs from quantum dimension".into()));
            }
        }
        Ok(())
    }

    /// `V(q, x)`.
    pub fn potential_expr(&self) -> Expr {
        self.potential.iter().fold(Expr::zero(), |acc, t| &acc + &t.expr())
    }

    pub fn kinetic_expr(&self) -> Expr {
        if self.classical_kinetic {
            Expr::power(Axis::P, 2).scale(0.5 / self.classical_mass)
        } else {
            Expr::zero()
        }
    }

    /// `H_I = p²/2M + V`.
    pub fn h_i(&self) -> Expr {
        &self.kinetic_expr() + &self.potential_expr()
    }

    /// `L_I = p²/2M − V`.
    pub fn l_i(&self) -> Expr {
        &self.kinetic_expr() - &self.potential_expr()
    }

    pub fn to_observable(&self) -> Result<HybridObservable> {
        let mut obs = HybridObservable::scalar(self.h_i());
        if self.quantum_kinetic {
            let c = -self.hbar * self.hbar / (2.0 * self.quantum_mass);
            obs = obs.plus(HybridObservable::laplacian(Expr::constant(c)));
        }
        for c in &self.level_couplings {
            let m = rows_to_matrix(&c.matrix)?;
            obs = obs.plus(HybridObservable::matrix(c.profile.expr().scale(c.lambda), &m));
        }
        Ok(obs)
    }

    pub fn liouvillian(&self, grid: &Grid) -> Result<Liouvillian> {
        self.validate_for(grid)?;
        Liouvillian::new(grid, &self.to_observable()?, self.hbar)
    }

    /// `0.5·min(Δq/max|∂_pH_I|, Δp/max|∂_qH_I|, mΔx²/(ħπ²), ħ/max|H_I − p∂_pH_I|)`.
    pub fn stability_dt(&self, grid: &Grid) -> Result<f64> {
        self.validate_for(grid)?;
        let h = self.h_i();
        let max_abs = |e: &Expr| grid.sample(|z| e.eval(z)).iter().map(|v| v.norm()).fold(0.0, f64::max);
        let mut bound = f64::INFINITY;
        let vq = max_abs(&h.derivative(Axis::P));
        if vq > 0.0 {
            bound = bound.min(grid.spacing(Axis::Q) / vq);
        }
        let vp = max_abs(&h.derivative(Axis::Q));
        if vp > 0.0 {
            bound = bound.min(grid.spacing(Axis::P) / vp);
        }
        if self.quantum_kinetic {
            let dx = grid.spacing(Axis::X);
            bound = bound.min(self.quantum_mass * dx * dx / (self.hbar * std::f64::consts::PI.powi(2)));
        }
        let mut phase = max_abs(&h.phase_part());
        for c in &self.level_couplings {
            let m = rows_to_matrix(&c.matrix)?;
            let norm = m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            phase += c.lambda.abs() * norm;
        }
        if phase > 0.0 {
            bound = bound.min(self.hbar / phase);
        }
        Ok(0.5 * bound)
    }
}

/// A hybrid wavefunction Υ(q, p, x) together with ħ.
#[derive(Clone, Debug)]
pub struct HybridWavefunction {
    pub field: ComplexField,
    pub hbar: f64,
}

impl HybridWavefunction {
    pub fn new(field: ComplexField, hbar: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::Config("hbar must be positive".into()));
        }
        if !field.is_finite() {
            return Err(Error::Degenerate("wavefunction has non-finite values".into()));
        }
        Ok(HybridWavefunction { field, hbar })
    }

    pub fn grid(&self) -> &Grid {
        &self.field.grid
    }

    pub fn values(&self) -> &Array3<C64> {
        &self.field.values
    }

    pub fn norm_sq(&self) -> f64 {
        self.field.norm_sq()
    }

    pub fn normalized(self) -> Result<Self> {
        Ok(HybridWavefunction { field: self.field.normalized()?, hbar: self.hbar })
    }
}

fn check_hbar(spec: &HybridHamiltonianSpec, psi: &HybridWavefunction) -> Result<()> {
    if (spec.hbar - psi.hbar).abs() > 1e-14 * spec.hbar {
        return Err(Error::Config(format!("hbar of state ({}) differs from Hamiltonian ({})", psi.hbar, spec.hbar)));
    }
    Ok(())
}

pub fn hybrid_liouvillian_apply(spec: &HybridHamiltonianSpec, psi: &HybridWavefunction) -> Result<ComplexField> {
    check_hbar(spec, psi)?;
    let l = spec.liouvillian(psi.grid())?;
    ComplexField::new(psi.grid(), l.apply(psi.values())?)
}

/// `h(Υ) = ∫⟨Υ|L̂Υ⟩`; the imaginary residue is returned alongside.
pub fn energy_with_residue(psi: &HybridWavefunction, spec: &HybridHamiltonianSpec) -> Result<(f64, f64)> {
    check_hbar(spec, psi)?;
    let l = spec.liouvillian(psi.grid())?;
    let e = psi.grid().inner(psi.values(), &l.apply(psi.values())?);
    Ok((e.re, e.im))
}

pub fn energy(psi: &HybridWavefunction, spec: &HybridHamiltonianSpec) -> Result<f64> {
    Ok(energy_with_residue(psi, spec)?.0)
}

fn nan_check(u: &Array3<C64>, t: f64) -> Result<()> {
    if u.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::NumericalAbort { t, reason: "non-finite value in state".into() });
    }
    Ok(())
}

/// One classical RK4 step of `du/dt = rhs(u)`.
pub fn rk4_step<F>(rhs: F, state: &Array3<C64>, dt: f64) -> Result<Array3<C64>>
where
    F: Fn(&Array3<C64>) -> Result<Array3<C64>>,
{
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("invalid time step {dt}")));
    }
    if dt == 0.0 {
        return Ok(state.clone());
    }
    let h = C64::new(dt, 0.0);
    let k1 = rhs(state)?;
    let mut tmp = state.clone();
    Zip::from(&mut tmp).and(state).and(&k1).for_each(|t, &s, &k| *t = s + 0.5 * h * k);
    let k2 = rhs(&tmp)?;
    Zip::from(&mut tmp).and(state).and(&k2).for_each(|t, &s, &k| *t = s + 0.5 * h * k);
    let k3 = rhs(&tmp)?;
    Zip::from(&mut tmp).and(state).and(&k3).for_each(|t, &s, &k| *t = s + h * k);
    let k4 = rhs(&tmp)?;
    let mut out = state.clone();
    let w = h / 6.0;
    Zip::from(&mut out)
        .and(&k1)
        .and(&k2)
        .and(&k3)
        .and(&k4)
        .for_each(|o, &a, &b, &c, &d| *o += w * (a + 2.0 * b + 2.0 * c + d));
    nan_check(&out, f64::NAN)?;
    Ok(out)
}

/// Right-hand side `−(i/ħ) L̂ u` of the wave equation.
pub fn wave_rhs(l: &Liouvillian, u: &Array3<C64>) -> Result<Array3<C64>> {
    let s = C64::new(0.0, -1.0 / l.hbar());
    let mut out = l.apply(u)?;
    out.mapv_inplace(|v| v * s);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub t_final: f64,
    pub dt: f64,
    /// diagnostics are recorded every `diag_stride` steps and at the end
    pub diag_stride: usize,
    pub energy: bool,
    pub density: bool,
    /// relative norm drift that aborts the run
    pub abort_drift: f64,
    /// skip the stability-bound check
    pub unchecked: bool,
}

impl EvolveOptions {
    pub fn new(t_final: f64, dt: f64) -> Self {
        EvolveOptions { t_final, dt, diag_stride: 1, energy: true, density: true, abort_drift: 1e-4, unchecked: false }
    }

    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite() && self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::Config("t_final and dt must be finite, dt positive".into()));
        }
        let n = (self.t_final / self.dt).round();
        if ((n * self.dt) - self.t_final).abs() > 1e-9 * self.t_final.max(1.0) {
            return Err(Error::Config(format!("t_final {} is not a multiple of dt {}", self.t_final, self.dt)));
        }
        Ok(n as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub norm: f64,
    pub energy: Option<f64>,
    pub min_density: Option<f64>,
    pub boundary_mass: f64,
}

#[derive(Clone, Debug)]
pub struct EvolveResult {
    pub state: HybridWavefunction,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Read-only callback invoked with `(step, t, state)` after every step and at step 0.
pub type Observer<'a> = dyn FnMut(usize, f64, &Array3<C64>) + 'a;

pub fn evolve(
    spec: &HybridHamiltonianSpec,
    psi0: &HybridWavefunction,
    opts: &EvolveOptions,
    observers: &mut [&mut Observer<'_>],
) -> Result<EvolveResult> {
    check_hbar(spec, psi0)?;
    let grid = psi0.grid().clone();
    let l = spec.liouvillian(&grid)?;
    let steps = opts.steps()?;
    if !opts.unchecked && steps > 0 {
        let bound = spec.stability_dt(&grid)?;
        if opts.dt > bound {
            return Err(Error::Config(format!("dt {} exceeds stability bound {bound:.3e}", opts.dt)));
        }
    }
    let dt = if steps > 0 { opts.t_final / steps as f64 } else { 0.0 };
    let norm0 = grid.norm_sq(psi0.values());
    let mut u = psi0.values().clone();
    let mut diags = Vec::new();
    let record = |step: usize, t: f64, u: &Array3<C64>, diags: &mut Vec<StepDiagnostics>| -> Result<()> {
        let norm = grid.norm_sq(u);
        let energy = if opts.energy { Some(grid.inner(u, &l.apply(u)?).re) } else { None };
        let min_density = if opts.density {
            let d = crate::densities_currents::density_raw(&grid, u, spec.hbar)?;
            Some(d.iter().cloned().fold(f64::INFINITY, f64::min))
        } else {
            None
        };
        diags.push(StepDiagnostics { step, t, norm, energy, min_density, boundary_mass: grid.boundary_mass(u) });
        Ok(())
    };
    record(0, 0.0, &u, &mut diags)?;
    for obs in observers.iter_mut() {
        obs(0, 0.0, &u);
    }
    for step in 1..=steps {
        let t = step as f64 * dt;
        u = rk4_step(|v| wave_rhs(&l, v), &u, dt).map_err(|e| match e {
            Error::NumericalAbort { reason, .. } => Error::NumericalAbort { t, reason },
            other => other,
        })?;
        let norm = grid.norm_sq(&u);
        if (norm - norm0).abs() > opts.abort_drift * norm0.max(f64::MIN_POSITIVE) {
            return Err(Error::NumericalAbort { t, reason: format!("norm drift {:.3e}", (norm - norm0) / norm0) });
        }
        for obs in observers.iter_mut() {
            obs(step, t, &u);
        }
        if step % opts.diag_stride.max(1) == 0 || step == steps {
            record(step, t, &u, &mut diags)?;
        }
    }
    Ok(EvolveResult {
        state: HybridWavefunction { field: ComplexField { grid: grid.clone(), values: u }, hbar: psi0.hbar },
        diagnostics: diags,
    })
}

/// `exp(−(i/ħ) t L̂)` from the explicitly assembled matrix of L̂.
pub fn dense_propagator_oracle(spec: &HybridHamiltonianSpec, grid: &Grid, t: f64) -> Result<DenseHybridOperator> {
    size_guard(grid.len())?;
    let l = DenseHybridOperator::from_liouvillian(&spec.liouvillian(grid)?)?;
    let gen = &l.matrix * C64::new(0.0, -t / spec.hbar);
    DenseHybridOperator::new(grid, expm(&gen)?)
}

/// Apply an operator to a wavefunction on the same grid.
pub fn apply_dense(op: &DenseHybridOperator, psi: &HybridWavefunction) -> Result<HybridWavefunction> {
    same_grid(&op.grid, psi.grid())?;
    Ok(HybridWavefunction {
        field: ComplexField { grid: psi.grid().clone(), values: op.apply(psi.values()) },
        hbar: psi.hbar,
    })
}
