//! Dense checks of the Liouvillian operator algebra on small grids.
//!
//! Observables here are finite sums `Σ f_j(q,p) ⊗ M_j` with `M_j` a matrix on
//! the quantum index (levels or the x grid basis).  Identities involving
//! products of Liouvillians are measured on a test subspace `V` of smooth,
//! p-localised fields so that polynomial-in-p coefficients never meet the
//! periodic seam of the p axis.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{flatten, size_guard, unflatten, DenseHybridOperator};
use crate::densities_currents::density_operator_kernel;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::hybrid_core::{HybridHamiltonianSpec, HybridWavefunction};
use crate::lattice::{Axis, ComplexField, Grid};
use crate::liouvillian::{HybridObservable, Liouvillian};

/// `Σ f_j(q,p) ⊗ M_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixObservable {
    pub dim: usize,
    pub terms: Vec<(Expr, Array2<C64>)>,
}

impl MatrixObservable {
    pub fn zero(dim: usize) -> Self {
        MatrixObservable { dim, terms: Vec::new() }
    }

    pub fn term(f: Expr, m: Array2<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Config("quantum factor must be square".into()));
        }
        if f.depends_on(Axis::X) {
            return Err(Error::Config("coefficients must not depend on x".into()));
        }
        Ok(MatrixObservable { dim: m.nrows(), terms: vec![(f, m)] })
    }

    pub fn classical(f: Expr, dim: usize) -> Result<Self> {
        Self::term(f, Array2::eye(dim))
    }

    pub fn quantum(m: Array2<C64>) -> Result<Self> {
        Self::term(Expr::constant(1.0), m)
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::Config(format!("quantum dimensions {} and {}", self.dim, other.dim)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(MatrixObservable { dim: self.dim, terms })
    }

    pub fn scale(&self, s: C64) -> Self {
        MatrixObservable { dim: self.dim, terms: self.terms.iter().map(|(f, m)| (f.scale_complex(s), m.clone())).collect() }
    }

    fn combine(&self, other: &Self, f: impl Fn(&Expr, &Expr) -> Expr) -> Result<Self> {
        self.check(other)?;
        let mut terms = Vec::new();
        for (a, m) in &self.terms {
            for (b, n) in &other.terms {
                let e = f(a, b);
                if !e.is_zero() {
                    terms.push((e, m.dot(n)));
                }
            }
        }
        Ok(MatrixObservable { dim: self.dim, terms })
    }

    /// Pointwise operator product `A(z)B(z)`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a * b)
    }

    /// `[A, B] = AB − BA` pointwise.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.mul(other)?.add(&other.mul(self)?.scale(C64::new(-1.0, 0.0)))
    }

    /// `{A, B} = ∂_qA ∂_pB − ∂_pA ∂_qB` keeping the operator order A then B.
    pub fn poisson(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a.poisson(b))
    }

    /// Entrywise conjugate in the quantum basis.
    pub fn conj(&self) -> Self {
        MatrixObservable { dim: self.dim, terms: self.terms.iter().map(|(f, m)| (f.conj(), m.mapv(|v| v.conj()))).collect() }
    }

    /// `Û†A Û`.
    pub fn conjugate_by(&self, u: &Array2<C64>) -> Result<Self> {
        if u.nrows() != self.dim || u.ncols() != self.dim {
            return Err(Error::Config("unitary size differs from the quantum dimension".into()));
        }
        let ud = u.t().mapv(|v| v.conj());
        Ok(MatrixObservable { dim: self.dim, terms: self.terms.iter().map(|(f, m)| (f.clone(), ud.dot(m).dot(u))).collect() })
    }

    /// `A ∘ η` with `η(q, p) = (q + a, p)`.
    pub fn translate_q(&self, a: f64) -> Self {
        MatrixObservable { dim: self.dim, terms: self.terms.iter().map(|(f, m)| (f.shift(Axis::Q, a), m.clone())).collect() }
    }

    pub fn to_observable(&self) -> HybridObservable {
        self.terms.iter().fold(HybridObservable::zero(), |acc, (f, m)| acc.plus(HybridObservable::matrix(f.clone(), m)))
    }

    pub fn liouvillian(&self, grid: &Grid, hbar: f64) -> Result<Liouvillian> {
        if grid.n(Axis::X) != self.dim {
            return Err(Error::GridMismatch(format!("quantum dimension {} on a grid with {} x points", self.dim, grid.n(Axis::X))));
        }
        Liouvillian::new(grid, &self.to_observable(), hbar)
    }
}

/// Dense matrix of `L̂_A`, built column by column.
pub fn assemble(grid: &Grid, obs: &HybridObservable, hbar: f64) -> Result<DenseHybridOperator> {
    size_guard(grid.len())?;
    DenseHybridOperator::from_liouvillian(&Liouvillian::new(grid, obs, hbar)?)
}

pub fn assemble_spec(grid: &Grid, spec: &HybridHamiltonianSpec) -> Result<DenseHybridOperator> {
    size_guard(grid.len())?;
    DenseHybridOperator::from_liouvillian(&spec.liouvillian(grid)?)
}

/// Largest `|K u − L̂u|` over seeded random fields.
pub fn matvec_consistency(op: &DenseHybridOperator, l: &Liouvillian, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let u = Array3::from_shape_fn(op.grid.shape(), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let a = op.apply(&u);
        let b = l.apply(&u)?;
        worst = a.iter().zip(b.iter()).fold(worst, |w, (x, y)| w.max((x - y).norm()));
    }
    Ok(worst)
}

/// Orthonormal columns `Φ_c ⊗ e_a`, ordered with the quantum index fastest.
#[derive(Clone, Debug)]
pub struct TestSubspace {
    pub grid: Grid,
    pub v: DMatrix<C64>,
    pub classical: usize,
}

fn hermite_function(n: usize, y: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, 2.0 * y);
    if n == 0 {
        return (-y * y / 2.0).exp();
    }
    for k in 1..n {
        let h2 = 2.0 * y * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1 * (-y * y / 2.0).exp()
}

impl TestSubspace {
    fn from_classical(grid: &Grid, phi: DMatrix<C64>) -> Self {
        let nx = grid.n(Axis::X);
        let nc = phi.ncols();
        let nz = grid.nz();
        let v = DMatrix::from_fn(nz * nx, nc * nx, |r, c| if r % nx == c % nx { phi[(r / nx, c / nx)] } else { C64::new(0.0, 0.0) });
        TestSubspace { grid: grid.clone(), v, classical: nc }
    }

    /// The whole space.
    pub fn full(grid: &Grid) -> Result<Self> {
        size_guard(grid.len())?;
        Ok(Self::from_classical(grid, DMatrix::identity(grid.nz(), grid.nz())))
    }

    /// q-Fourier modes `|k| ≤ kmax` times Hermite functions of degree
    /// `≤ nmax` and width `w` in p, orthonormalised on the grid.
    pub fn resolved(grid: &Grid, kmax: i32, nmax: usize, width: f64) -> Result<Self> {
        size_guard(grid.len())?;
        let kq = 2.0 * std::f64::consts::PI / grid.length(Axis::Q);
        let (nq, np, _) = grid.shape();
        let mut cols = Vec::new();
        for k in -kmax..=kmax {
            for n in 0..=nmax {
                cols.push((k, n));
            }
        }
        let phi = DMatrix::from_fn(nq * np, cols.len(), |r, c| {
            let (i, j) = (r / np, r % np);
            let (k, n) = cols[c];
            let q = grid.coords(Axis::Q)[i];
            let p = grid.coords(Axis::P)[j];
            C64::from_polar(hermite_function(n, p / width), k as f64 * kq * q)
        });
        let q = phi.qr().q();
        Ok(Self::from_classical(grid, q))
    }

    pub fn dim(&self) -> usize {
        self.v.ncols()
    }
}

fn apply_cols(l: &Liouvillian, m: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let grid = l.grid();
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for c in 0..m.ncols() {
        let u = unflatten(grid, &m.column(c).into_owned());
        let lu = flatten(&l.apply(&u)?);
        out.set_column(c, &lu);
    }
    Ok(out)
}

/// `[L̂_A, L̂_B] V`.
fn commutator_on(a: &Liouvillian, b: &Liouvillian, v: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    Ok(apply_cols(a, &apply_cols(b, v)?)? - apply_cols(b, &apply_cols(a, v)?)?)
}

/// `(Cᵀ V)` from `C V` for `V = Φ ⊗ I`: `(CᵀV)[(z,x),(c,a)] = (CV)[(z,a),(c,x)]`.
fn quantum_transpose_on(cv: &DMatrix<C64>, nx: usize) -> DMatrix<C64> {
    DMatrix::from_fn(cv.nrows(), cv.ncols(), |r, c| {
        let (z, x) = (r / nx, r % nx);
        let (cc, a) = (c / nx, c % nx);
        cv[(z * nx + a, cc * nx + x)]
    })
}

/// `‖LHS − RHS‖_F / (‖LHS‖_F + ‖RHS‖_F + 1)`.
pub fn normalized_residual(lhs: &DMatrix<C64>, rhs: &DMatrix<C64>) -> f64 {
    (lhs - rhs).norm() / (lhs.norm() + rhs.norm() + 1.0)
}

fn ih(hbar: f64) -> C64 {
    C64::new(0.0, hbar)
}

/// `[L̂_H, L̂_F] = iħ L̂_{{H,F}}` for scalar functions.
pub fn check_classical_commutator(space: &TestSubspace, h: &Expr, f: &Expr, hbar: f64) -> Result<f64> {
    let g = &space.grid;
    let lh = Liouvillian::new(g, &HybridObservable::scalar(h.clone()), hbar)?;
    let lf = Liouvillian::new(g, &HybridObservable::scalar(f.clone()), hbar)?;
    let lb = Liouvillian::new(g, &HybridObservable::scalar(h.poisson(f)), hbar)?;
    let lhs = commutator_on(&lh, &lf, &space.v)?;
    let rhs = apply_cols(&lb, &space.v)? * ih(hbar);
    Ok(normalized_residual(&lhs, &rhs))
}

/// Inputs of the five product rules: a purely quantum `A_Q`, a purely
/// classical `A_C`, a general `B`, and `B_Q`, `B_C` of the same kinds.
#[derive(Clone, Debug)]
pub struct ProductRuleInputs {
    pub a_q: Array2<C64>,
    pub a_c: Expr,
    pub b: MatrixObservable,
    pub b_q: Array2<C64>,
    pub b_c: Expr,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProductRuleResiduals {
    /// `L̂_{Â_Q B̂} = Â_Q L̂_B̂`
    pub product: f64,
    /// `[L̂_{Â_Q}, L̂_B̂] = L̂_{[Â_Q, B̂]}`
    pub quantum_commutator: f64,
    /// `[L̂_{A_C}, L̂_B̂] = iħ L̂_{{A_C, B̂}}`
    pub classical_commutator: f64,
    /// `[L̂_{Â_Q A_C}, L̂_{B̂_Q}] = L̂_{[Â_Q, B̂_Q] A_C}`
    pub mixed_quantum: f64,
    /// `[L̂_{Â_Q A_C}, L̂_{B_C}] = iħ L̂_{{A_C, B_C} Â_Q}`
    pub mixed_classical: f64,
}

impl ProductRuleResiduals {
    pub fn max(&self) -> f64 {
        [self.product, self.quantum_commutator, self.classical_commutator, self.mixed_quantum, self.mixed_classical]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

pub fn check_product_rules(space: &TestSubspace, inp: &ProductRuleInputs, hbar: f64) -> Result<ProductRuleResiduals> {
    let g = &space.grid;
    let d = inp.b.dim;
    let v = &space.v;
    let a_q = MatrixObservable::quantum(inp.a_q.clone())?;
    let a_c = MatrixObservable::classical(inp.a_c.clone(), d)?;
    let b_q = MatrixObservable::quantum(inp.b_q.clone())?;
    let b_c = MatrixObservable::classical(inp.b_c.clone(), d)?;
    let l = |o: &MatrixObservable| o.liouvillian(g, hbar);
    let on = |o: &MatrixObservable| -> Result<DMatrix<C64>> { apply_cols(&l(o)?, v) };

    let lhs = on(&a_q.mul(&inp.b)?)?;
    let rhs = apply_cols(&l(&a_q)?, &on(&inp.b)?)?;
    let product = normalized_residual(&lhs, &rhs);

    let lhs = commutator_on(&l(&a_q)?, &l(&inp.b)?, v)?;
    let rhs = on(&a_q.commutator(&inp.b)?)?;
    let quantum_commutator = normalized_residual(&lhs, &rhs);

    let lhs = commutator_on(&l(&a_c)?, &l(&inp.b)?, v)?;
    let rhs = on(&a_c.poisson(&inp.b)?)? * ih(hbar);
    let classical_commutator = normalized_residual(&lhs, &rhs);

    let aqac = a_q.mul(&a_c)?;
    let lhs = commutator_on(&l(&aqac)?, &l(&b_q)?, v)?;
    let rhs = on(&a_q.commutator(&b_q)?.mul(&a_c)?)?;
    let mixed_quantum = normalized_residual(&lhs, &rhs);

    let lhs = commutator_on(&l(&aqac)?, &l(&b_c)?, v)?;
    let rhs = on(&a_c.poisson(&b_c)?.mul(&a_q)?)? * ih(hbar);
    let mixed_classical = normalized_residual(&lhs, &rhs);

    Ok(ProductRuleResiduals { product, quantum_commutator, classical_commutator, mixed_quantum, mixed_classical })
}

/// `[L̂_Â, L̂_B̂] + [L̂_Ā, L̂_B̄]ᵀ = iħ L̂_{{Â,B̂} − {B̂,Â}}`.
pub fn check_remarkable_relation(space: &TestSubspace, a: &MatrixObservable, b: &MatrixObservable, hbar: f64) -> Result<f64> {
    let g = &space.grid;
    let v = &space.v;
    let l = |o: &MatrixObservable| o.liouvillian(g, hbar);
    let direct = commutator_on(&l(a)?, &l(b)?, v)?;
    let conj = commutator_on(&l(&a.conj())?, &l(&b.conj())?, v)?;
    let lhs = direct + quantum_transpose_on(&conj, g.n(Axis::X));
    let bracket = a.poisson(b)?.add(&b.poisson(a)?.scale(C64::new(-1.0, 0.0)))?;
    let rhs = apply_cols(&l(&bracket)?, v)? * ih(hbar);
    Ok(normalized_residual(&lhs, &rhs))
}

/// `‖U†L̂_ÂU − L̂_{Â∘η}‖_F` for the grid shift `(UΥ)(q) = Υ(q − a)`, `a = s Δq`.
pub fn equivariance_translation(grid: &Grid, a: &MatrixObservable, shift: f64, hbar: f64) -> Result<f64> {
    let dq = grid.spacing(Axis::Q);
    let s = shift / dq;
    if (s - s.round()).abs() > 1e-9 {
        return Err(Error::Config(format!("shift {shift} is not a multiple of the q spacing {dq}")));
    }
    let s = s.round() as i64;
    let l = assemble(grid, &a.to_observable(), hbar)?;
    let lt = assemble(grid, &a.translate_q(shift).to_observable(), hbar)?;
    let (nq, _, _) = grid.shape();
    let per = grid.len() / nq;
    let n = grid.len();
    let move_index = |r: usize| {
        let i = (r / per) as i64;
        let rest = r % per;
        ((i + s).rem_euclid(nq as i64) as usize) * per + rest
    };
    let conj = DMatrix::from_fn(n, n, |r, c| l.matrix[(move_index(r), move_index(c))]);
    Ok((conj - &lt.matrix).norm())
}

/// `‖U†L̂_ÂU − L̂_{Û†ÂÛ}‖_F` for `U = I ⊗ Û`.
pub fn equivariance_quantum_unitary(grid: &Grid, a: &MatrixObservable, u: &Array2<C64>, hbar: f64) -> Result<f64> {
    let nx = grid.n(Axis::X);
    if u.nrows() != nx || u.ncols() != nx {
        return Err(Error::Config("unitary size differs from the quantum dimension".into()));
    }
    let l = assemble(grid, &a.to_observable(), hbar)?;
    let lu = assemble(grid, &a.conjugate_by(u)?.to_observable(), hbar)?;
    let n = grid.len();
    let big = DMatrix::from_fn(n, n, |r, c| if r / nx == c / nx { u[[r % nx, c % nx]] } else { C64::new(0.0, 0.0) });
    let conj = big.adjoint() * &l.matrix * &big;
    Ok((conj - &lu.matrix).norm())
}

/// `(I ⊗ Û) Υ`.
pub fn apply_quantum_unitary(psi: &HybridWavefunction, u: &Array2<C64>) -> Result<HybridWavefunction> {
    let grid = psi.grid();
    if u.nrows() != grid.n(Axis::X) {
        return Err(Error::Config("unitary size differs from the quantum dimension".into()));
    }
    let v = crate::liouvillian::apply_quantum_matrix(u, psi.values());
    HybridWavefunction::new(ComplexField::new(grid, v)?, psi.hbar)
}

/// Largest entrywise `|𝒟̂(ÛΥ) − Û𝒟̂(Υ)Û†|` over the density-operator kernel.
pub fn density_kernel_equivariance(psi: &HybridWavefunction, u: &Array2<C64>) -> Result<f64> {
    let k0 = density_operator_kernel(psi)?;
    let k1 = density_operator_kernel(&apply_quantum_unitary(psi, u)?)?;
    let ud = u.t().mapv(|v| v.conj());
    let (nq, np, _, _) = k0.k.dim();
    let mut worst: f64 = 0.0;
    for i in 0..nq {
        for j in 0..np {
            let m = k0.k.slice(ndarray::s![i, j, .., ..]);
            let want = u.dot(&m).dot(&ud);
            let got = k1.k.slice(ndarray::s![i, j, .., ..]);
            worst = want.iter().zip(got.iter()).fold(worst, |w, (a, b)| w.max((a - b).norm()));
        }
    }
    Ok(worst)
}

/// Seeded Hermitian matrix with entries of order one.
pub fn random_hermitian(d: usize, rng: &mut impl Rng) -> Array2<C64> {
    let a = Array2::from_shape_fn((d, d), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let at = a.t().mapv(|v| v.conj());
    (&a + &at).mapv(|v| v * 0.5)
}

/// Seeded unitary from the QR factor of a random complex matrix.
pub fn random_unitary(d: usize, rng: &mut impl Rng) -> Array2<C64> {
    let m = DMatrix::from_fn(d, d, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let q = m.qr().q();
    Array2::from_shape_fn((d, d), |(i, j)| q[(i, j)])
}

/// Pauli-like 2×2 matrices.
pub fn sigma_x() -> Array2<C64> {
    ndarray::array![[C64::new(0.0, 0.0), C64::new(1.0, 0.0)], [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]]
}

pub fn sigma_y() -> Array2<C64> {
    ndarray::array![[C64::new(0.0, 0.0), C64::new(0.0, -1.0)], [C64::new(0.0, 1.0), C64::new(0.0, 0.0)]]
}

pub fn sigma_z() -> Array2<C64> {
    ndarray::array![[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(-1.0, 0.0)]]
}

/// Real random combination of `{1, cos q, sin q, p, p², p sin q}` with a
/// random Hermitian factor; band-limited in q with `|k| ≤ 1`.
pub fn random_observable(d: usize, terms: usize, rng: &mut impl Rng) -> Result<MatrixObservable> {
    let basis = [
        Expr::constant(1.0),
        Expr::cos(Axis::Q, 1.0),
        Expr::sin(Axis::Q, 1.0),
        Expr::coord(Axis::P),
        Expr::power(Axis::P, 2).scale(0.5),
        &Expr::coord(Axis::P) * &Expr::sin(Axis::Q, 1.0),
    ];
    let mut out = MatrixObservable::zero(d);
    for _ in 0..terms {
        let f = basis[rng.random_range(0..basis.len())].scale(rng.random_range(-1.0..1.0));
        out = out.add(&MatrixObservable::term(f, random_hermitian(d, rng))?)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlgebraRow {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
}

impl AlgebraRow {
    pub fn pass(&self) -> bool {
        self.residual <= self.tolerance
    }
}

/// The algebra identities across the preset matrix (quantum-only,
/// classical-only, mixed and seeded random presets).
pub fn algebra_suite(hbar: f64, seed: u64) -> Result<Vec<AlgebraRow>> {
    use crate::lattice::{AxisSpec, GridSpec};
    let two_pi = 2.0 * std::f64::consts::PI;
    let resolved_grid = Grid::new(GridSpec::levels(AxisSpec::new(8, two_pi, 0.0), AxisSpec::centered(64, 22.0), 2))?;
    let space = TestSubspace::resolved(&resolved_grid, 1, 3, 1.0)?;
    let small = Grid::new(GridSpec::levels(AxisSpec::new(8, two_pi, 0.0), AxisSpec::centered(8, two_pi), 2))?;
    let full = TestSubspace::full(&small)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut push = |name: &str, r: f64, tol: f64| rows.push(AlgebraRow { name: name.into(), residual: r, tolerance: tol });

    let h = &Expr::power(Axis::P, 2).scale(0.5) + &Expr::cos(Axis::Q, 1.0);
    let f = &Expr::coord(Axis::P) * &Expr::sin(Axis::Q, 1.0);
    push("classical commutator", check_classical_commutator(&space, &h, &f, hbar)?, 1e-8);

    let id = Array2::<C64>::eye(2);
    let trivial = ProductRuleInputs {
        a_q: id.clone(),
        a_c: Expr::constant(1.3),
        b: MatrixObservable::term(h.clone(), sigma_x())?,
        b_q: id.clone(),
        b_c: Expr::constant(0.4),
    };
    push("product rules, identity and constant presets", check_product_rules(&space, &trivial, hbar)?.max(), 1e-12);
    let inputs = ProductRuleInputs {
        a_q: random_hermitian(2, &mut rng),
        a_c: Expr::sin(Axis::Q, 1.0),
        b: random_observable(2, 3, &mut rng)?,
        b_q: random_hermitian(2, &mut rng),
        b_c: &Expr::power(Axis::P, 2).scale(0.5) + &Expr::cos(Axis::Q, 1.0),
    };
    let pr = check_product_rules(&space, &inputs, hbar)?;
    push("product rule: L(A_Q B) = A_Q L(B)", pr.product, 1e-8);
    push("product rule: [L(A_Q), L(B)] = L([A_Q, B])", pr.quantum_commutator, 1e-8);
    push("product rule: [L(A_C), L(B)] = ih L({A_C, B})", pr.classical_commutator, 1e-8);
    push("product rule: [L(A_Q A_C), L(B_Q)] = L([A_Q, B_Q] A_C)", pr.mixed_quantum, 1e-8);
    push("product rule: [L(A_Q A_C), L(B_C)] = ih L({A_C, B_C} A_Q)", pr.mixed_classical, 1e-8);

    let qa = MatrixObservable::quantum(sigma_x())?;
    let qb = MatrixObservable::quantum(sigma_y())?;
    push("remarkable relation, quantum-only", check_remarkable_relation(&full, &qa, &qb, hbar)?, 1e-10);
    let ca = MatrixObservable::classical(h.clone(), 2)?;
    let cb = MatrixObservable::classical(f.clone(), 2)?;
    push("remarkable relation, classical-only", check_remarkable_relation(&space, &ca, &cb, hbar)?, 1e-8);
    let ma = MatrixObservable::term(Expr::sin(Axis::Q, 1.0), sigma_x())?;
    let mb = MatrixObservable::classical(Expr::power(Axis::P, 2).scale(0.5), 2)?;
    push("remarkable relation, mixed", check_remarkable_relation(&space, &ma, &mb, hbar)?, 1e-8);
    let ra = random_observable(2, 3, &mut rng)?;
    let rb = random_observable(2, 3, &mut rng)?;
    push("remarkable relation, random", check_remarkable_relation(&space, &ra, &rb, hbar)?, 1e-8);

    let periodic = MatrixObservable::term(&Expr::sin(Axis::Q, 1.0) * &Expr::cos(Axis::P, 1.0), sigma_x())?
        .add(&MatrixObservable::classical(Expr::cos(Axis::Q, 1.0), 2)?)?;
    let dq = small.spacing(Axis::Q);
    push("translation equivariance, a = 0", equivariance_translation(&small, &periodic, 0.0, hbar)?, 1e-10);
    push("translation equivariance, a = 3dq", equivariance_translation(&small, &periodic, 3.0 * dq, hbar)?, 1e-10);
    let u = random_unitary(2, &mut rng);
    push("quantum unitary equivariance", equivariance_quantum_unitary(&small, &periodic, &u, hbar)?, 1e-10);
    let psi = ComplexField::from_fn(&small, |z| {
        C64::from_polar(1.0 + 0.3 * z[0].cos() + 0.2 * z[1].sin(), z[0].sin() + (1.0 + z[2]) * z[1].cos())
    });
    let psi = HybridWavefunction::new(psi, hbar)?.normalized()?;
    push("density kernel equivariance", density_kernel_equivariance(&psi, &u)?, 1e-9);
    Ok(rows)
}
