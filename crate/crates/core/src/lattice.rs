//! Periodic grid on T*Q × M with Fourier differentiation, the canonical
//! Poisson bracket and torus quadrature.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array3, Zip};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Q = 0,
    P = 1,
    X = 2,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Q, Axis::P, Axis::X];
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Q => "q",
            Axis::P => "p",
            Axis::X => "x",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub n: usize,
    pub length: f64,
    #[serde(default)]
    pub origin: f64,
}

impl AxisSpec {
    pub fn new(n: usize, length: f64, origin: f64) -> Self {
        AxisSpec { n, length, origin }
    }

    /// Axis of length `length` centred on zero.
    pub fn centered(n: usize, length: f64) -> Self {
        AxisSpec { n, length, origin: -0.5 * length }
    }
}

/// The quantum factor of the hybrid space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuantumAxis {
    /// Purely classical fields, `n_x = 1`.
    None,
    /// A periodic spatial coordinate x.
    Spatial(AxisSpec),
    /// A d-level system; the index carries no spatial meaning.
    Levels { d: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub q: AxisSpec,
    pub p: AxisSpec,
    pub x: QuantumAxis,
    #[serde(default)]
    pub dealias: bool,
}

impl GridSpec {
    pub fn classical(q: AxisSpec, p: AxisSpec) -> Self {
        GridSpec { q, p, x: QuantumAxis::None, dealias: false }
    }

    pub fn hybrid(q: AxisSpec, p: AxisSpec, x: AxisSpec) -> Self {
        GridSpec { q, p, x: QuantumAxis::Spatial(x), dealias: false }
    }

    pub fn levels(q: AxisSpec, p: AxisSpec, d: usize) -> Self {
        GridSpec { q, p, x: QuantumAxis::Levels { d }, dealias: false }
    }

    pub fn with_dealias(mut self, on: bool) -> Self {
        self.dealias = on;
        self
    }

    pub fn total_points(&self) -> usize {
        let nx = match self.x {
            QuantumAxis::None => 1,
            QuantumAxis::Spatial(a) => a.n,
            QuantumAxis::Levels { d } => d,
        };
        self.q.n * self.p.n * nx
    }
}

type Plan = Arc<dyn Fft<f64>>;

struct AxisData {
    n: usize,
    length: f64,
    origin: f64,
    spacing: f64,
    coords: Vec<f64>,
    k: Vec<f64>,
    d1: Vec<C64>,
    d2: Vec<C64>,
    filter: Vec<C64>,
    plans: Option<(Plan, Plan)>,
}

impl AxisData {
    fn spectral(spec: AxisSpec, name: &str, planner: &mut FftPlanner<f64>) -> Result<Self> {
        let n = spec.n;
        if n % 2 == 1 {
            return Err(Error::InvalidGrid(format!("odd axis size {n} on {name}")));
        }
        if n < 4 {
            return Err(Error::InvalidGrid(format!("axis size {n} on {name} is below 4")));
        }
        if !(spec.length.is_finite() && spec.length > 0.0) {
            return Err(Error::InvalidGrid(format!("nonpositive length on {name}")));
        }
        if !spec.origin.is_finite() {
            return Err(Error::InvalidGrid(format!("non-finite origin on {name}")));
        }
        let spacing = spec.length / n as f64;
        let coords = (0..n).map(|i| spec.origin + i as f64 * spacing).collect();
        let k = wavenumbers(n, spec.length);
        let nyq = n / 2;
        let d1 = k
            .iter()
            .enumerate()
            .map(|(i, &k)| if i == nyq { C64::new(0.0, 0.0) } else { C64::new(0.0, k) })
            .collect();
        let d2 = k.iter().map(|&k| C64::new(-k * k, 0.0)).collect();
        let filter = (0..n)
            .map(|i| {
                let m = if i < nyq { i as i64 } else { i as i64 - n as i64 };
                if 3 * m.unsigned_abs() < n as u64 {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            })
            .collect();
        let plans = Some((planner.plan_fft_forward(n), planner.plan_fft_inverse(n)));
        Ok(AxisData { n, length: spec.length, origin: spec.origin, spacing, coords, k, d1, d2, filter, plans })
    }

    fn discrete(n: usize) -> Self {
        AxisData {
            n,
            length: n as f64,
            origin: 0.0,
            spacing: 1.0,
            coords: (0..n).map(|i| i as f64).collect(),
            k: vec![0.0; n],
            d1: Vec::new(),
            d2: Vec::new(),
            filter: Vec::new(),
            plans: None,
        }
    }
}

/// The (q, p, x) standard FFT wavenumber ordering `(2π/L)·{0,…,n/2−1,−n/2,…,−1}`.
pub fn wavenumbers(n: usize, length: f64) -> Vec<f64> {
    let base = 2.0 * std::f64::consts::PI / length;
    (0..n)
        .map(|i| if i < n / 2 { i as f64 * base } else { (i as f64 - n as f64) * base })
        .collect()
}

struct GridInner {
    spec: GridSpec,
    axes: [AxisData; 3],
    weight: f64,
}

/// Cheaply clonable handle to an immutable grid.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("spec", &self.inner.spec).finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Grid) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner) || self.inner.spec == other.inner.spec
    }
}

pub fn build_grid(spec: GridSpec) -> Result<Grid> {
    Grid::new(spec)
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let mut planner = FftPlanner::new();
        let q = AxisData::spectral(spec.q, "q", &mut planner)?;
        let p = AxisData::spectral(spec.p, "p", &mut planner)?;
        let x = match spec.x {
            QuantumAxis::None => AxisData::discrete(1),
            QuantumAxis::Spatial(a) => AxisData::spectral(a, "x", &mut planner)?,
            QuantumAxis::Levels { d } => {
                if d == 0 {
                    return Err(Error::InvalidGrid("zero quantum levels".into()));
                }
                AxisData::discrete(d)
            }
        };
        let weight = q.spacing * p.spacing * x.spacing;
        Ok(Grid { inner: Arc::new(GridInner { spec, axes: [q, p, x], weight }) })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.inner.spec
    }

    fn axis(&self, a: Axis) -> &AxisData {
        &self.inner.axes[a as usize]
    }

    pub fn n(&self, a: Axis) -> usize {
        self.axis(a).n
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n(Axis::Q), self.n(Axis::P), self.n(Axis::X))
    }

    pub fn len(&self) -> usize {
        let (a, b, c) = self.shape();
        a * b * c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of phase-space points `n_q · n_p`.
    pub fn nz(&self) -> usize {
        self.n(Axis::Q) * self.n(Axis::P)
    }

    pub fn spacing(&self, a: Axis) -> f64 {
        self.axis(a).spacing
    }

    pub fn length(&self, a: Axis) -> f64 {
        self.axis(a).length
    }

    pub fn origin(&self, a: Axis) -> f64 {
        self.axis(a).origin
    }

    pub fn coords(&self, a: Axis) -> &[f64] {
        &self.axis(a).coords
    }

    pub fn wavenumbers(&self, a: Axis) -> &[f64] {
        &self.axis(a).k
    }

    /// Quadrature weight per grid point.
    pub fn weight(&self) -> f64 {
        self.inner.weight
    }

    /// Phase-space quadrature weight `Δq·Δp`.
    pub fn weight_z(&self) -> f64 {
        self.spacing(Axis::Q) * self.spacing(Axis::P)
    }

    pub fn weight_x(&self) -> f64 {
        self.spacing(Axis::X)
    }

    pub fn has_spatial_x(&self) -> bool {
        matches!(self.inner.spec.x, QuantumAxis::Spatial(_))
    }

    pub fn is_classical(&self) -> bool {
        matches!(self.inner.spec.x, QuantumAxis::None)
    }

    pub fn dealias(&self) -> bool {
        self.inner.spec.dealias
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [self.coords(Axis::Q)[i], self.coords(Axis::P)[j], self.coords(Axis::X)[k]]
    }

    /// Flat row-major index of `(i, j, k)`.
    pub fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        let (_, np, nx) = self.shape();
        (i * np + j) * nx + k
    }

    pub fn unflat(&self, f: usize) -> (usize, usize, usize) {
        let (_, np, nx) = self.shape();
        (f / (np * nx), (f / nx) % np, f % nx)
    }

    /// Grid with the same phase-space axes and no quantum factor.
    pub fn classical_part(&self) -> Result<Grid> {
        let s = self.spec();
        Grid::new(GridSpec { x: QuantumAxis::None, ..*s })
    }

    pub fn sample<F: Fn([f64; 3]) -> C64>(&self, f: F) -> Array3<C64> {
        Array3::from_shape_fn(self.shape(), |(i, j, k)| f(self.point(i, j, k)))
    }

    pub fn sample_real<F: Fn([f64; 3]) -> f64>(&self, f: F) -> Array3<f64> {
        Array3::from_shape_fn(self.shape(), |(i, j, k)| f(self.point(i, j, k)))
    }

    fn require_spectral(&self, a: Axis) -> Result<&AxisData> {
        let ax = self.axis(a);
        if ax.plans.is_none() {
            return Err(Error::GridMismatch(format!("axis {a} has no spectral representation")));
        }
        Ok(ax)
    }

    /// Multiply each lane along `a` by a Fourier symbol, in place.
    fn apply_symbol(&self, data: &mut Array3<C64>, a: Axis, symbol: &[C64]) {
        let ax = self.axis(a);
        let (fwd, inv) = ax.plans.as_ref().expect("spectral axis");
        let n = ax.n;
        let scale = 1.0 / n as f64;
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        let work = |buf: &mut Vec<C64>, scratch: &mut Vec<C64>, mut lane: ndarray::ArrayViewMut1<C64>| {
            for (b, v) in buf.iter_mut().zip(lane.iter()) {
                *b = *v;
            }
            fwd.process_with_scratch(buf, scratch);
            for (b, s) in buf.iter_mut().zip(symbol) {
                *b *= s * scale;
            }
            inv.process_with_scratch(buf, scratch);
            for (v, b) in lane.iter_mut().zip(buf.iter()) {
                *v = *b;
            }
        };
        let total = data.len();
        let lanes = data.lanes_mut(ndarray::Axis(a as usize));
        if data_len_small(total) {
            let mut buf = vec![C64::new(0.0, 0.0); n];
            let mut scratch = vec![C64::new(0.0, 0.0); scratch_len];
            for lane in lanes {
                work(&mut buf, &mut scratch, lane);
            }
        } else {
            ndarray::Zip::from(lanes).into_par_iter().for_each_init(
                || (vec![C64::new(0.0, 0.0); n], vec![C64::new(0.0, 0.0); scratch_len]),
                |(buf, scratch), (lane,)| work(buf, scratch, lane),
            );
        }
    }

    /// First spectral derivative of raw samples; Nyquist mode dropped.
    pub fn diff(&self, f: &Array3<C64>, a: Axis) -> Result<Array3<C64>> {
        let ax = self.require_spectral(a)?;
        check_shape(self, f.dim())?;
        let mut out = f.clone();
        if self.dealias() {
            let sym: Vec<C64> = ax.d1.iter().zip(&ax.filter).map(|(d, m)| d * m).collect();
            self.apply_symbol(&mut out, a, &sym);
        } else {
            self.apply_symbol(&mut out, a, &ax.d1);
        }
        Ok(out)
    }

    /// Second spectral derivative of raw samples.
    pub fn diff2(&self, f: &Array3<C64>, a: Axis) -> Result<Array3<C64>> {
        let ax = self.require_spectral(a)?;
        check_shape(self, f.dim())?;
        let mut out = f.clone();
        self.apply_symbol(&mut out, a, &ax.d2);
        Ok(out)
    }

    /// Zero the modes removed by the 2/3 rule along every spectral axis.
    pub fn filter(&self, f: &mut Array3<C64>) {
        for a in Axis::ALL {
            let ax = self.axis(a);
            if ax.plans.is_some() {
                let sym = ax.filter.clone();
                self.apply_symbol(f, a, &sym);
            }
        }
    }

    pub fn diff_real(&self, f: &Array3<f64>, a: Axis) -> Result<Array3<f64>> {
        Ok(self.diff(&f.mapv(|v| C64::new(v, 0.0)), a)?.mapv(|v| v.re))
    }

    /// Pointwise canonical bracket of raw samples.
    pub fn bracket(&self, f: &Array3<C64>, g: &Array3<C64>) -> Result<Array3<C64>> {
        let fq = self.diff(f, Axis::Q)?;
        let fp = self.diff(f, Axis::P)?;
        let gq = self.diff(g, Axis::Q)?;
        let gp = self.diff(g, Axis::P)?;
        let mut out = Array3::zeros(f.dim());
        Zip::from(&mut out).and(&fq).and(&gp).and(&fp).and(&gq).for_each(|o, &a, &b, &c, &d| {
            *o = a * b - c * d;
        });
        if self.dealias() {
            self.filter(&mut out);
        }
        Ok(out)
    }

    pub fn bracket_real(&self, f: &Array3<f64>, g: &Array3<f64>) -> Result<Array3<f64>> {
        let fc = f.mapv(|v| C64::new(v, 0.0));
        let gc = g.mapv(|v| C64::new(v, 0.0));
        Ok(self.bracket(&fc, &gc)?.mapv(|v| v.re))
    }

    pub fn integrate_raw(&self, f: &Array3<C64>) -> C64 {
        f.sum() * self.weight()
    }

    pub fn integrate_real(&self, f: &Array3<f64>) -> f64 {
        f.sum() * self.weight()
    }

    /// `∫ ā b` over the grid.
    pub fn inner(&self, a: &Array3<C64>, b: &Array3<C64>) -> C64 {
        Zip::from(a).and(b).fold(C64::new(0.0, 0.0), |acc, x, y| acc + x.conj() * y) * self.weight()
    }

    pub fn norm_sq(&self, a: &Array3<C64>) -> f64 {
        a.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.weight()
    }

    /// L2 distance `(∫|a − b|²)^{1/2}`.
    pub fn l2_distance(&self, a: &Array3<C64>, b: &Array3<C64>) -> f64 {
        let s: f64 = Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + (x - y).norm_sqr());
        (s * self.weight()).sqrt()
    }

    pub fn l2_distance_real(&self, a: &Array3<f64>, b: &Array3<f64>) -> f64 {
        let s: f64 = Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + (x - y).powi(2));
        (s * self.weight()).sqrt()
    }

    pub fn l2_norm_real(&self, a: &Array3<f64>) -> f64 {
        (a.iter().map(|v| v * v).sum::<f64>() * self.weight()).sqrt()
    }

    /// Mass `∫|f|²` carried by points within 10% of L_p of either p-boundary.
    pub fn boundary_mass(&self, f: &Array3<C64>) -> f64 {
        let ax = self.axis(Axis::P);
        let band = 0.1 * ax.length;
        let lo = ax.origin + band;
        let hi = ax.origin + ax.length - band;
        let mut s = 0.0;
        for ((_, j, _), v) in f.indexed_iter() {
            let p = ax.coords[j];
            if p < lo || p >= hi {
                s += v.norm_sqr();
            }
        }
        s * self.weight()
    }
}

fn data_len_small(n: usize) -> bool {
    n < 8192
}

fn check_shape(grid: &Grid, dim: (usize, usize, usize)) -> Result<()> {
    if dim != grid.shape() {
        return Err(Error::GridMismatch(format!("field shape {dim:?} vs grid {:?}", grid.shape())));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ComplexField {
    pub grid: Grid,
    pub values: Array3<C64>,
}

#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Array3<f64>,
}

impl ComplexField {
    pub fn new(grid: &Grid, values: Array3<C64>) -> Result<Self> {
        check_shape(grid, values.dim())?;
        Ok(ComplexField { grid: grid.clone(), values })
    }

    pub fn zeros(grid: &Grid) -> Self {
        ComplexField { grid: grid.clone(), values: Array3::zeros(grid.shape()) }
    }

    pub fn from_fn<F: Fn([f64; 3]) -> C64>(grid: &Grid, f: F) -> Self {
        ComplexField { grid: grid.clone(), values: grid.sample(f) }
    }

    pub fn norm_sq(&self) -> f64 {
        self.grid.norm_sq(&self.values)
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm_sq();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Degenerate("cannot normalize a zero or non-finite field".into()));
        }
        let s = 1.0 / n.sqrt();
        self.values.mapv_inplace(|v| v * s);
        Ok(self)
    }

    pub fn inner(&self, other: &ComplexField) -> Result<C64> {
        same_grid(&self.grid, &other.grid)?;
        Ok(self.grid.inner(&self.values, &other.values))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

impl ScalarField {
    pub fn new(grid: &Grid, values: Array3<f64>) -> Result<Self> {
        check_shape(grid, values.dim())?;
        Ok(ScalarField { grid: grid.clone(), values })
    }

    pub fn from_fn<F: Fn([f64; 3]) -> f64>(grid: &Grid, f: F) -> Self {
        ScalarField { grid: grid.clone(), values: grid.sample_real(f) }
    }

    pub fn to_complex(&self) -> ComplexField {
        ComplexField { grid: self.grid.clone(), values: self.values.mapv(|v| C64::new(v, 0.0)) }
    }

    pub fn integrate(&self) -> f64 {
        self.grid.integrate_real(&self.values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub(crate) fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", a.spec(), b.spec())));
    }
    Ok(())
}

pub fn spectral_derivative(f: &ComplexField, axis: Axis) -> Result<ComplexField> {
    Ok(ComplexField { grid: f.grid.clone(), values: f.grid.diff(&f.values, axis)? })
}

pub fn poisson_bracket(f: &ComplexField, g: &ComplexField) -> Result<ComplexField> {
    same_grid(&f.grid, &g.grid)?;
    Ok(ComplexField { grid: f.grid.clone(), values: f.grid.bracket(&f.values, &g.values)? })
}

pub fn integrate(f: &ComplexField) -> C64 {
    f.grid.integrate_raw(&f.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cube(n: usize) -> Grid {
        let a = AxisSpec::new(n, 2.0 * PI, 0.0);
        Grid::new(GridSpec::hybrid(a, a, a)).unwrap()
    }

    #[test]
    fn uniform_spacing() {
        let g = cube(8);
        for a in Axis::ALL {
            assert!((g.spacing(a) - 2.0 * PI / 8.0).abs() < 1e-15);
        }
    }

    #[test]
    fn fft_ordering() {
        assert_eq!(wavenumbers(4, 2.0 * PI), vec![0.0, 1.0, -2.0, -1.0]);
    }

    #[test]
    fn rejects_bad_axes() {
        let ok = AxisSpec::new(8, 1.0, 0.0);
        let e = Grid::new(GridSpec::classical(AxisSpec::new(5, 1.0, 0.0), ok)).unwrap_err();
        assert!(e.to_string().contains("odd axis size"));
        assert!(Grid::new(GridSpec::classical(AxisSpec::new(2, 1.0, 0.0), ok)).is_err());
        assert!(Grid::new(GridSpec::classical(ok, AxisSpec::new(8, 0.0, 0.0))).is_err());
        assert!(Grid::new(GridSpec::classical(ok, AxisSpec::new(8, -1.0, 0.0))).is_err());
    }

    #[test]
    fn weights_sum_to_volume() {
        let g = Grid::new(GridSpec::hybrid(
            AxisSpec::new(6, 2.0, 0.0),
            AxisSpec::centered(8, 3.0),
            AxisSpec::new(4, 5.0, 1.0),
        ))
        .unwrap();
        assert!((g.weight() * g.len() as f64 - 30.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_of_sine() {
        let g = cube(16);
        let f = ComplexField::from_fn(&g, |z| C64::new(z[0].sin(), 0.0));
        let d = spectral_derivative(&f, Axis::Q).unwrap();
        let err = d
            .values
            .indexed_iter()
            .map(|((i, j, k), v)| (v - C64::new(g.point(i, j, k)[0].cos(), 0.0)).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn derivative_of_constant_and_mode() {
        let g = cube(8);
        let c = ComplexField::from_fn(&g, |_| C64::new(3.0, -1.0));
        assert!(spectral_derivative(&c, Axis::P).unwrap().values.iter().all(|v| v.norm() < 1e-13));
        let w = ComplexField::from_fn(&g, |z| C64::from_polar(1.0, 2.0 * z[0]));
        let d = spectral_derivative(&w, Axis::Q).unwrap();
        for (a, b) in d.values.iter().zip(w.values.iter()) {
            assert!((a - C64::new(0.0, 2.0) * b).norm() < 1e-12);
        }
    }

    #[test]
    fn bracket_of_sines() {
        let g = cube(16);
        let f = ComplexField::from_fn(&g, |z| C64::new(z[0].sin(), 0.0));
        let h = ComplexField::from_fn(&g, |z| C64::new(z[1].sin(), 0.0));
        let b = poisson_bracket(&f, &h).unwrap();
        for ((i, j, k), v) in b.values.indexed_iter() {
            let z = g.point(i, j, k);
            assert!((v - C64::new(z[0].cos() * z[1].cos(), 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn integrals() {
        let g = cube(8);
        let one = ComplexField::from_fn(&g, |_| C64::new(1.0, 0.0));
        assert!((integrate(&one).re - (2.0 * PI).powi(3)).abs() < 1e-10);
        let s = ComplexField::from_fn(&g, |z| C64::new(z[0].sin(), 0.0));
        assert!(integrate(&s).norm() < 1e-12);
    }

    #[test]
    fn x_derivative_needs_spatial_axis() {
        let a = AxisSpec::new(8, 2.0 * PI, 0.0);
        let g = Grid::new(GridSpec::levels(a, a, 2)).unwrap();
        let f = ComplexField::zeros(&g);
        assert!(spectral_derivative(&f, Axis::X).is_err());
    }

    #[test]
    fn boundary_mass_counts_edges() {
        let g = Grid::new(GridSpec::classical(AxisSpec::new(8, 1.0, 0.0), AxisSpec::centered(10, 10.0)))
            .unwrap();
        let f = ComplexField::from_fn(&g, |_| C64::new(1.0, 0.0));
        // p = -5 and p = 4 fall in the two outer bands
        assert!((g.boundary_mass(&f.values) - 2.0 * 8.0 * g.weight()).abs() < 1e-12);
    }
}
