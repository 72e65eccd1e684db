//! Polar form, hybrid velocity field, Bohmian paths and loop integrals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use ndarray::{Array3, Zip};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities_currents::amplitude_mask;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::hybrid_core::{HybridHamiltonianSpec, HybridWavefunction};
use crate::interp::cubic_periodic;
use crate::lattice::{Axis, Grid};
use crate::states::min_image;

#[derive(Clone, Debug)]
pub struct MadelungFields {
    pub grid: Grid,
    pub hbar: f64,
    pub r: Array3<f64>,
    pub s: Array3<f64>,
    pub mask: Array3<bool>,
    /// `σ_a = R²∂_a𝒮 = ħ Im(Ῡ∂_aΥ)` for a = q, p, x (x is zero without a spatial axis).
    pub sigma: [Array3<f64>; 3],
    /// `D = R²`.
    pub d: Array3<f64>,
}

#[derive(PartialEq)]
struct Node(f64, usize);

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
    }
}

fn neighbours(grid: &Grid, f: usize) -> impl Iterator<Item = usize> + '_ {
    let (i, j, k) = grid.unflat(f);
    let (nq, np, nx) = grid.shape();
    let w = |a: usize, n: usize, up: bool| if up { (a + 1) % n } else { (a + n - 1) % n };
    let mut out = vec![
        grid.flat(w(i, nq, true), j, k),
        grid.flat(w(i, nq, false), j, k),
        grid.flat(i, w(j, np, true), k),
        grid.flat(i, w(j, np, false), k),
    ];
    if nx > 1 {
        out.push(grid.flat(i, j, w(k, nx, true)));
        out.push(grid.flat(i, j, w(k, nx, false)));
    }
    out.into_iter()
}

/// Phase unwrapped by a flood fill that always extends from the
/// largest-amplitude frontier point.  Masked points keep the raw phase.
fn unwrap_phase(grid: &Grid, u: &Array3<C64>, mask: &Array3<bool>, hbar: f64) -> Array3<f64> {
    let raw: Vec<f64> = u.iter().map(|v| hbar * v.arg()).collect();
    let amp: Vec<f64> = u.iter().map(|v| v.norm()).collect();
    let inside: Vec<bool> = mask.iter().cloned().collect();
    let n = raw.len();
    let mut s = raw.clone();
    let mut done = vec![false; n];
    let period = 2.0 * PI * hbar;
    let mut order: Vec<usize> = (0..n).filter(|&f| inside[f]).collect();
    order.sort_by(|a, b| amp[*b].total_cmp(&amp[*a]));
    for &start in &order {
        if done[start] {
            continue;
        }
        done[start] = true;
        let mut heap = BinaryHeap::new();
        heap.push(Node(amp[start], start));
        while let Some(Node(_, f)) = heap.pop() {
            for g in neighbours(grid, f) {
                if done[g] || !inside[g] {
                    continue;
                }
                s[g] = raw[g] + period * ((s[f] - raw[g]) / period).round();
                done[g] = true;
                heap.push(Node(amp[g], g));
            }
        }
    }
    Array3::from_shape_vec(u.dim(), s).expect("shape")
}

fn momentum_map(grid: &Grid, u: &Array3<C64>, hbar: f64) -> Result<[Array3<f64>; 3]> {
    let sig = |a: Axis| -> Result<Array3<f64>> {
        let du = grid.diff(u, a)?;
        Ok(Zip::from(u).and(&du).map_collect(|v, d| hbar * (v.conj() * d).im))
    };
    let sx = if grid.has_spatial_x() { sig(Axis::X)? } else { Array3::zeros(u.dim()) };
    Ok([sig(Axis::Q)?, sig(Axis::P)?, sx])
}

/// `Υ = R e^{i𝒮/ħ}` with mask `R ≥ ε_R·max R`.
pub fn polar_decompose(psi: &HybridWavefunction, eps_r: f64) -> Result<MadelungFields> {
    let grid = psi.grid().clone();
    let u = psi.values();
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite wavefunction".into()));
    }
    let r = u.mapv(|v| v.norm());
    let rmax = r.iter().cloned().fold(0.0, f64::max);
    let mask = r.mapv(|v| rmax > 0.0 && v >= eps_r * rmax);
    if !mask.iter().any(|&m| m) {
        return Err(Error::Degenerate("every amplitude is below the mask threshold".into()));
    }
    let s = unwrap_phase(&grid, u, &mask, psi.hbar);
    let sigma = momentum_map(&grid, u, psi.hbar)?;
    let d = r.mapv(|v| v * v);
    Ok(MadelungFields { grid, hbar: psi.hbar, r, s, mask, sigma, d })
}

impl MadelungFields {
    pub fn recompose(&self) -> Array3<C64> {
        Zip::from(&self.r).and(&self.s).map_collect(|&r, &s| C64::from_polar(r, s / self.hbar))
    }

    /// Largest `|R e^{i𝒮/ħ} − Υ|` over the mask.
    pub fn roundtrip_error(&self, u: &Array3<C64>) -> f64 {
        let back = self.recompose();
        Zip::from(&back)
            .and(u)
            .and(&self.mask)
            .fold(0.0, |acc, a, b, &m| if m { f64::max(acc, (a - b).norm()) } else { acc })
    }
}

/// `X = (∂_pH_I, −∂_qH_I, σ_x/(mD))`; masked points are zero.
#[derive(Clone, Debug)]
pub struct VelocityField {
    pub q: Array3<f64>,
    pub p: Array3<f64>,
    pub x: Array3<f64>,
}

pub fn hybrid_velocity(f: &MadelungFields, spec: &HybridHamiltonianSpec) -> Result<VelocityField> {
    spec.validate_for(&f.grid)?;
    let h = spec.h_i();
    let hp = h.derivative(Axis::P);
    let hq = h.derivative(Axis::Q);
    let g = &f.grid;
    let gate = |m: bool, v: f64| if m { v } else { 0.0 };
    let q = Zip::from(&g.sample_real(|z| hp.eval_real(z))).and(&f.mask).map_collect(|&v, &m| gate(m, v));
    let p = Zip::from(&g.sample_real(|z| -hq.eval_real(z))).and(&f.mask).map_collect(|&v, &m| gate(m, v));
    let x = if g.has_spatial_x() && spec.quantum_kinetic {
        Zip::from(&f.sigma[2])
            .and(&f.d)
            .and(&f.mask)
            .map_collect(|&s, &d, &m| gate(m, s / (spec.quantum_mass * d)))
    } else {
        Array3::zeros(g.shape())
    };
    Ok(VelocityField { q, p, x })
}

fn quantum_velocity(grid: &Grid, u: &Array3<C64>, hbar: f64, mass: f64) -> Result<Array3<f64>> {
    let ux = grid.diff(u, Axis::X)?;
    let mask = amplitude_mask(u);
    Ok(Zip::from(u).and(&ux).and(&mask).map_collect(|v, d, &m| {
        if m {
            hbar * (v.conj() * d).im / (mass * v.norm_sqr())
        } else {
            0.0
        }
    }))
}

/// `𝓛 = L_I + |∂_x𝒮|²/2m + (ħ²/2m)Δ_xR/R` on the mask, zero elsewhere.
pub fn hybrid_lagrangian(psi: &HybridWavefunction, spec: &HybridHamiltonianSpec) -> Result<Array3<f64>> {
    let grid = psi.grid();
    spec.validate_for(grid)?;
    let l = spec.l_i();
    let mut out = grid.sample_real(|z| l.eval_real(z));
    if grid.has_spatial_x() && spec.quantum_kinetic {
        let u = psi.values();
        let m = spec.quantum_mass;
        let hbar = psi.hbar;
        let v = quantum_velocity(grid, u, hbar, m)?;
        let rho = u.mapv(|v| v.norm_sqr());
        let rx = grid.diff_real(&rho, Axis::X)?;
        let rxx = grid.diff2(&rho.mapv(|v| C64::new(v, 0.0)), Axis::X)?.mapv(|v| v.re);
        let mask = amplitude_mask(u);
        Zip::indexed(&mut out).for_each(|idx, o| {
            if !mask[idx] {
                *o = 0.0;
                return;
            }
            let r = rho[idx];
            let lap_r_over_r = rxx[idx] / (2.0 * r) - rx[idx] * rx[idx] / (4.0 * r * r);
            *o += 0.5 * m * v[idx] * v[idx] + hbar * hbar / (2.0 * m) * lap_r_over_r;
        });
    }
    Ok(out)
}

/// Samples of a real field at increasing times, linearly interpolated in time.
#[derive(Clone, Debug)]
pub struct FieldSeries {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub values: Vec<Array3<f64>>,
    pub masks: Vec<Array3<bool>>,
}

impl FieldSeries {
    pub fn new(grid: &Grid) -> Self {
        FieldSeries { grid: grid.clone(), times: Vec::new(), values: Vec::new(), masks: Vec::new() }
    }

    pub fn push(&mut self, t: f64, v: Array3<f64>, mask: Array3<bool>) -> Result<()> {
        if self.times.last().is_some_and(|&l| t <= l) {
            return Err(Error::Config("series times must increase".into()));
        }
        if v.dim() != self.grid.shape() {
            return Err(Error::GridMismatch("series sample shape".into()));
        }
        self.times.push(t);
        self.values.push(v);
        self.masks.push(mask);
        Ok(())
    }

    pub fn span(&self) -> Result<(f64, f64)> {
        match (self.times.first(), self.times.last()) {
            (Some(&a), Some(&b)) if self.times.len() >= 2 => Ok((a, b)),
            _ => Err(Error::Config("series needs at least two samples".into())),
        }
    }

    fn bracket(&self, t: f64) -> Result<(usize, f64)> {
        let (a, b) = self.span()?;
        let tol = 1e-9 * (b - a).max(1.0);
        if t < a - tol || t > b + tol {
            return Err(Error::Config(format!("time {t} outside snapshot range [{a}, {b}]")));
        }
        let i = self.times.partition_point(|&s| s <= t).clamp(1, self.times.len() - 1) - 1;
        let w = ((t - self.times[i]) / (self.times[i + 1] - self.times[i])).clamp(0.0, 1.0);
        Ok((i, w))
    }

    pub fn eval(&self, t: f64, z: [f64; 3]) -> Result<f64> {
        let (i, w) = self.bracket(t)?;
        let a = cubic_periodic(&self.grid, &self.values[i], z);
        let b = cubic_periodic(&self.grid, &self.values[i + 1], z);
        Ok((1.0 - w) * a + w * b)
    }

    /// Mask value at the nearest grid point of the nearest snapshot.
    pub fn masked_at(&self, t: f64, z: [f64; 3]) -> Result<bool> {
        let (i, w) = self.bracket(t)?;
        let m = &self.masks[if w < 0.5 { i } else { i + 1 }];
        let g = &self.grid;
        let idx = |a: Axis, v: f64| {
            let n = g.n(a) as i64;
            (((v - g.origin(a)) / g.spacing(a)).round() as i64).rem_euclid(n) as usize
        };
        let k = if g.has_spatial_x() { idx(Axis::X, z[2]) } else { (z[2].round().max(0.0) as usize).min(g.n(Axis::X) - 1) };
        Ok(!m[[idx(Axis::Q, z[0]), idx(Axis::P, z[1]), k]])
    }
}

/// Velocity data for trajectory integration: `X_{H_I}` is analytic, `ẋ` is sampled.
#[derive(Clone, Debug)]
pub struct VelocitySeries {
    pub h_i: Expr,
    pub hbar: f64,
    pub quantum_mass: f64,
    pub xdot: FieldSeries,
    pub quantum_kinetic: bool,
}

impl VelocitySeries {
    pub fn new(grid: &Grid, spec: &HybridHamiltonianSpec) -> Result<Self> {
        spec.validate_for(grid)?;
        Ok(VelocitySeries {
            h_i: spec.h_i(),
            hbar: spec.hbar,
            quantum_mass: spec.quantum_mass,
            xdot: FieldSeries::new(grid),
            quantum_kinetic: spec.quantum_kinetic && grid.has_spatial_x(),
        })
    }

    pub fn push(&mut self, t: f64, u: &Array3<C64>) -> Result<()> {
        let grid = self.xdot.grid.clone();
        let v = if self.quantum_kinetic {
            quantum_velocity(&grid, u, self.hbar, self.quantum_mass)?
        } else {
            Array3::zeros(grid.shape())
        };
        self.xdot.push(t, v, amplitude_mask(u))
    }

    pub fn grid(&self) -> &Grid {
        &self.xdot.grid
    }

    pub fn velocity(&self, t: f64, z: [f64; 3]) -> Result<[f64; 3]> {
        let z = wrap(self.grid(), z);
        let hp = self.h_i.derivative(Axis::P).eval_real(z);
        let hq = self.h_i.derivative(Axis::Q).eval_real(z);
        let xd = if self.quantum_kinetic { self.xdot.eval(t, z)? } else { 0.0 };
        Ok([hp, -hq, xd])
    }
}

/// `𝓛` samples recorded alongside a run.
#[derive(Clone, Debug)]
pub struct LagrangianSeries {
    pub spec: HybridHamiltonianSpec,
    pub field: FieldSeries,
}

impl LagrangianSeries {
    pub fn new(grid: &Grid, spec: &HybridHamiltonianSpec) -> Result<Self> {
        spec.validate_for(grid)?;
        Ok(LagrangianSeries { spec: spec.clone(), field: FieldSeries::new(grid) })
    }

    pub fn push(&mut self, t: f64, u: &Array3<C64>) -> Result<()> {
        let grid = self.field.grid.clone();
        let psi = HybridWavefunction::new(crate::lattice::ComplexField::new(&grid, u.clone())?, self.spec.hbar)?;
        let l = hybrid_lagrangian(&psi, &self.spec)?;
        self.field.push(t, l, amplitude_mask(u))
    }
}

/// Reduce a point to the grid box `[origin, origin + L)` on spectral axes.
pub fn wrap(grid: &Grid, z: [f64; 3]) -> [f64; 3] {
    let mut out = z;
    for a in Axis::ALL {
        if a == Axis::X && !grid.has_spatial_x() {
            continue;
        }
        let o = grid.origin(a);
        let l = grid.length(a);
        out[a as usize] = o + (z[a as usize] - o).rem_euclid(l);
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    pub seeds: Vec<[f64; 3]>,
    pub times: Vec<f64>,
    /// `paths[s][n]` is seed `s` at `times[n]`, wrapped into the box.
    pub paths: Vec<Vec<[f64; 3]>>,
    /// Seeds listed in loop order, so that consecutive paths close a cycle.
    pub is_loop: bool,
}

fn rk4_path(series: &VelocitySeries, z0: [f64; 3], t0: f64, dt: f64, steps: usize) -> Result<Vec<[f64; 3]>> {
    let grid = series.grid();
    let add = |z: [f64; 3], k: [f64; 3], h: f64| [z[0] + h * k[0], z[1] + h * k[1], z[2] + h * k[2]];
    let mut z = wrap(grid, z0);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(z);
    for n in 0..steps {
        let t = t0 + n as f64 * dt;
        let k1 = series.velocity(t, z)?;
        let k2 = series.velocity(t + 0.5 * dt, add(z, k1, 0.5 * dt))?;
        let k3 = series.velocity(t + 0.5 * dt, add(z, k2, 0.5 * dt))?;
        let k4 = series.velocity(t + dt, add(z, k3, dt))?;
        for a in 0..3 {
            z[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
        }
        z = wrap(grid, z);
        out.push(z);
    }
    Ok(out)
}

/// RK4 integration of `dΦ/dt = X(Φ)` over the full span of the series.
pub fn advect_trajectories(series: &VelocitySeries, seeds: &[[f64; 3]], dt: f64) -> Result<TrajectoryEnsemble> {
    let (t0, t1) = series.xdot.span()?;
    if !(dt > 0.0) {
        return Err(Error::Config("trajectory step must be positive".into()));
    }
    let steps = ((t1 - t0) / dt).round().max(1.0) as usize;
    let dt = (t1 - t0) / steps as f64;
    let paths = seeds.par_iter().map(|&z| rk4_path(series, z, t0, dt, steps)).collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryEnsemble {
        seeds: seeds.to_vec(),
        times: (0..=steps).map(|n| t0 + n as f64 * dt).collect(),
        paths,
        is_loop: false,
    })
}

/// Closed loop of `n` points `c + a cos θ + b sin θ`.
pub fn ellipse_loop(center: [f64; 3], a: [f64; 3], b: [f64; 3], n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / n as f64;
            let (c, s) = (th.cos(), th.sin());
            [0, 1, 2].map(|k| center[k] + a[k] * c + b[k] * s)
        })
        .collect()
}

pub fn advect_loop(series: &VelocitySeries, points: &[[f64; 3]], dt: f64) -> Result<TrajectoryEnsemble> {
    if points.len() < 3 {
        return Err(Error::Config("a loop needs at least 3 points".into()));
    }
    let mut e = advect_trajectories(series, points, dt)?;
    e.is_loop = true;
    Ok(e)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathPhases {
    pub times: Vec<f64>,
    /// Accumulated `∫𝓛 dt` per path and time.
    pub phases: Vec<Vec<f64>>,
    /// Path visited a masked (near-node) region.
    pub flagged: Vec<bool>,
}

/// `𝒮(Φ(t)) − 𝒮(Φ(0)) = ∫𝓛 dt` by composite Simpson over the path samples
/// (trapezoid on a trailing odd interval).
pub fn phase_along_path(ens: &TrajectoryEnsemble, lag: &LagrangianSeries) -> Result<PathPhases> {
    let n = ens.times.len();
    let mut phases = Vec::with_capacity(ens.paths.len());
    let mut flagged = Vec::with_capacity(ens.paths.len());
    for path in &ens.paths {
        let mut vals = Vec::with_capacity(n);
        let mut flag = false;
        for (t, z) in ens.times.iter().zip(path) {
            vals.push(lag.field.eval(*t, *z)?);
            flag |= lag.field.masked_at(*t, *z)?;
        }
        let mut acc = vec![0.0; n];
        for i in 1..n {
            let h = ens.times[i] - ens.times[i - 1];
            acc[i] = if i % 2 == 0 {
                acc[i - 2] + h / 3.0 * (vals[i - 2] + 4.0 * vals[i - 1] + vals[i])
            } else {
                acc[i - 1] + 0.5 * h * (vals[i - 1] + vals[i])
            };
        }
        phases.push(acc);
        flagged.push(flag);
    }
    Ok(PathPhases { times: ens.times.clone(), phases, flagged })
}

/// `∮p dq` over a closed polygon by the trapezoid rule with minimal-image steps.
pub fn loop_action(grid: &Grid, points: &[[f64; 3]]) -> f64 {
    let lq = grid.length(Axis::Q);
    let n = points.len();
    (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            let dp = min_image(b[1], a[1], grid.length(Axis::P));
            0.5 * (2.0 * a[1] + dp) * min_image(b[0], a[0], lq)
        })
        .sum()
}

/// `∮∂_xV dx` over a closed polygon (trapezoid, minimal-image steps).
pub fn loop_source(grid: &Grid, potential: &Expr, points: &[[f64; 3]]) -> f64 {
    let vx = potential.derivative(Axis::X);
    let n = points.len();
    let lx = grid.length(Axis::X);
    (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            0.5 * (vx.eval_real(wrap(grid, a)) + vx.eval_real(wrap(grid, b))) * min_image(b[2], a[2], lx)
        })
        .sum()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoopRate {
    pub times: Vec<f64>,
    /// Centered difference of `∮p dq`.
    pub lhs: Vec<f64>,
    /// `−∮∂_xV dx`.
    pub rhs: Vec<f64>,
    /// `+∮∂_xV dx`, which is what the equations of motion give.
    pub source: Vec<f64>,
    pub action: Vec<f64>,
    /// Some loop edge stretched beyond an eighth of the box.
    pub degenerate: bool,
}

impl LoopRate {
    /// `max |lhs − rhs| / max(|lhs|, |rhs|, 1)`.
    pub fn relative_mismatch(&self) -> f64 {
        Self::mismatch(&self.lhs, &self.rhs)
    }

    pub fn source_mismatch(&self) -> f64 {
        Self::mismatch(&self.lhs, &self.source)
    }

    fn mismatch(a: &[f64], b: &[f64]) -> f64 {
        let scale = a.iter().chain(b).fold(1.0f64, |m, v| m.max(v.abs()));
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
    }
}

pub fn poincare_loop_rate(ens: &TrajectoryEnsemble, potential: &Expr, grid: &Grid) -> Result<LoopRate> {
    if !ens.is_loop {
        return Err(Error::Config("ensemble is not a loop".into()));
    }
    let nt = ens.times.len();
    if nt < 3 {
        return Err(Error::Config("loop rate needs at least 3 times".into()));
    }
    let npts = ens.paths.len();
    let at = |n: usize| -> Vec<[f64; 3]> { ens.paths.iter().map(|p| p[n]).collect() };
    let action: Vec<f64> = (0..nt).map(|n| loop_action(grid, &at(n))).collect();
    let mut degenerate = false;
    for n in 0..nt {
        let pts = at(n);
        for i in 0..npts {
            let (a, b) = (pts[i], pts[(i + 1) % npts]);
            for ax in Axis::ALL {
                if ax == Axis::X && !grid.has_spatial_x() {
                    continue;
                }
                let l = grid.length(ax);
                if min_image(b[ax as usize], a[ax as usize], l).abs() > l / 8.0 {
                    degenerate = true;
                }
            }
        }
    }
    let mut times = Vec::new();
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut source = Vec::new();
    for n in 1..nt - 1 {
        times.push(ens.times[n]);
        lhs.push((action[n + 1] - action[n - 1]) / (ens.times[n + 1] - ens.times[n - 1]));
        let s = if grid.has_spatial_x() { loop_source(grid, potential, &at(n)) } else { 0.0 };
        rhs.push(-s);
        source.push(s);
    }
    Ok(LoopRate { times, lhs, rhs, source, action, degenerate })
}

/// `h(σ, D) = ∫(|σ_x|²/2mD + ħ²|∂_xD|²/8mD − D L_I + σ_q ∂_pH_I − σ_p ∂_qH_I)`.
pub fn madelung_energy(f: &MadelungFields, spec: &HybridHamiltonianSpec) -> Result<f64> {
    let g = &f.grid;
    spec.validate_for(g)?;
    if !spec.level_couplings.is_empty() {
        return Err(Error::Config("level couplings have no Madelung energy density".into()));
    }
    let mass: f64 = f.d.sum();
    if mass == 0.0 {
        return Ok(0.0);
    }
    let h = spec.h_i();
    let l = spec.l_i();
    let hp = h.derivative(Axis::P);
    let hq = h.derivative(Axis::Q);
    let mut dens = g.sample_real(|z| -l.eval_real(z)) * &f.d;
    Zip::indexed(&mut dens).for_each(|(i, j, k), v| {
        let z = g.point(i, j, k);
        *v += f.sigma[0][[i, j, k]] * hp.eval_real(z) - f.sigma[1][[i, j, k]] * hq.eval_real(z);
    });
    if g.has_spatial_x() && spec.quantum_kinetic {
        let m = spec.quantum_mass;
        let dx = g.diff_real(&f.d, Axis::X)?;
        Zip::from(&mut dens).and(&f.sigma[2]).and(&f.d).and(&dx).and(&f.mask).for_each(|v, &s, &d, &dx, &on| {
            if on && d > 0.0 {
                *v += s * s / (2.0 * m * d) + spec.hbar * spec.hbar * dx * dx / (8.0 * m * d);
            }
        });
    }
    Ok(g.integrate_real(&dens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid_core::PotentialTerm;
    use crate::lattice::{AxisSpec, ComplexField, GridSpec};

    fn grid() -> Grid {
        Grid::new(GridSpec::hybrid(
            AxisSpec::new(16, 2.0 * PI, 0.0),
            AxisSpec::centered(32, 12.0),
            AxisSpec::new(16, 2.0 * PI, 0.0),
        ))
        .unwrap()
    }

    fn wave(g: &Grid, hbar: f64) -> HybridWavefunction {
        let f = ComplexField::from_fn(g, |z| {
            let r = (-(z[1] * z[1]) / 2.0).exp() * (1.5 + z[0].cos()) * (1.5 + z[2].sin());
            C64::from_polar(r, (z[0] + z[2]).sin() + 0.2 * z[1])
        });
        HybridWavefunction::new(f, hbar).unwrap().normalized().unwrap()
    }

    #[test]
    fn constant_phase_and_roundtrip() {
        let g = grid();
        let c = C64::from_polar(0.4, PI / 4.0);
        let psi = HybridWavefunction::new(ComplexField::from_fn(&g, |_| c), 0.7).unwrap();
        let f = polar_decompose(&psi, 1e-6).unwrap();
        assert!(f.r.iter().all(|r| (r - 0.4).abs() < 1e-15));
        assert!(f.s.iter().all(|s| (s - 0.7 * PI / 4.0).abs() < 1e-14));
        let psi = wave(&g, 0.7);
        let f = polar_decompose(&psi, 1e-6).unwrap();
        assert!(f.roundtrip_error(psi.values()) < 1e-10);
    }

    #[test]
    fn winding_phase_unwraps_smoothly() {
        let g = grid();
        let hbar = 0.3;
        // arg spans [-π/0.3·…] so the raw phase wraps many times
        let psi = HybridWavefunction::new(
            ComplexField::from_fn(&g, |z| C64::from_polar(1.0, 4.0 * z[0].sin())),
            hbar,
        )
        .unwrap();
        let f = polar_decompose(&psi, 1e-6).unwrap();
        let off = f.s[[0, 0, 0]] - 0.0;
        for ((i, j, k), s) in f.s.indexed_iter() {
            let q = g.point(i, j, k)[0];
            assert!((s - off - hbar * 4.0 * q.sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn fully_masked_field_is_rejected() {
        let g = grid();
        let psi = HybridWavefunction::new(ComplexField::zeros(&g), 1.0).unwrap();
        assert!(polar_decompose(&psi, 1e-6).is_err());
    }

    #[test]
    fn momentum_map_matches_direct_formula() {
        let g = Grid::new(GridSpec::hybrid(
            AxisSpec::new(32, 2.0 * PI, 0.0),
            AxisSpec::centered(32, 12.0),
            AxisSpec::new(32, 2.0 * PI, 0.0),
        ))
        .unwrap();
        let psi = wave(&g, 0.7);
        let f = polar_decompose(&psi, 1e-6).unwrap();
        // σ = R²∂𝒮 with the analytic phase gradient ∂_q𝒮 = ∂_x𝒮 = ħ cos(q + x)
        for ((i, j, k), &m) in f.mask.indexed_iter() {
            let z = g.point(i, j, k);
            let ds = 0.7 * (z[0] + z[2]).cos();
            if m {
                assert!((f.sigma[0][[i, j, k]] - f.d[[i, j, k]] * ds).abs() < 1e-8);
                assert!((f.sigma[2][[i, j, k]] - f.d[[i, j, k]] * ds).abs() < 1e-8);
            }
            assert!((f.d[[i, j, k]] - psi.values()[[i, j, k]].norm_sqr()).abs() < 1e-14);
        }
    }

    #[test]
    fn free_flow_velocity() {
        let g = grid();
        let spec = HybridHamiltonianSpec::new(1.0, 1.0, 2.0).with_kinetics(false, true);
        let psi = HybridWavefunction::new(ComplexField::from_fn(&g, |_| C64::new(1.0, 0.0)), 1.0).unwrap();
        let v = hybrid_velocity(&polar_decompose(&psi, 1e-6).unwrap(), &spec).unwrap();
        for ((i, j, k), &q) in v.q.indexed_iter() {
            assert!((q - g.point(i, j, k)[1] / 2.0).abs() < 1e-14);
        }
        assert!(v.p.iter().chain(v.x.iter()).all(|v| *v == 0.0));
        let spec = spec.with_potential(PotentialTerm::Bilinear { lambda: 0.5 });
        let v = hybrid_velocity(&polar_decompose(&psi, 1e-6).unwrap(), &spec).unwrap();
        for ((i, j, k), &p) in v.p.indexed_iter() {
            let z = g.point(i, j, k);
            assert!((p + 0.5 * z[0].cos() * z[2].sin()).abs() < 1e-14);
        }
    }

    fn constant_series(g: &Grid, spec: &HybridHamiltonianSpec, t1: f64) -> VelocitySeries {
        let mut s = VelocitySeries::new(g, spec).unwrap();
        let u = Array3::from_elem(g.shape(), C64::new(1.0, 0.0));
        s.push(0.0, &u).unwrap();
        s.push(t1, &u).unwrap();
        s
    }

    #[test]
    fn streaming_and_rest() {
        let g = grid();
        let zero = HybridHamiltonianSpec::zero(1.0);
        let seeds = [[1.0, 0.5, 2.0], [5.0, -2.0, 0.3]];
        let e = advect_trajectories(&constant_series(&g, &zero, 1.0), &seeds, 0.1).unwrap();
        for (p, s) in e.paths.iter().zip(&seeds) {
            assert!(p.iter().all(|z| z == s));
        }
        let free = HybridHamiltonianSpec::new(1.0, 1.0, 2.0).with_kinetics(false, true);
        let e = advect_trajectories(&constant_series(&g, &free, 3.0), &seeds, 0.05).unwrap();
        for (p, s) in e.paths.iter().zip(&seeds) {
            let want = wrap(&g, [s[0] + s[1] * 3.0 / 2.0, s[1], s[2]]);
            let last = p.last().unwrap();
            assert!((min_image(last[0], want[0], 2.0 * PI)).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_time_is_an_error() {
        let g = grid();
        let s = constant_series(&g, &HybridHamiltonianSpec::zero(1.0), 1.0);
        assert!(s.xdot.eval(1.5, [0.0; 3]).is_err());
    }

    #[test]
    fn zero_lagrangian_keeps_phase() {
        let g = grid();
        let spec = HybridHamiltonianSpec::zero(1.0);
        let series = constant_series(&g, &spec, 1.0);
        let e = advect_trajectories(&series, &[[1.0, 1.0, 1.0]], 0.1).unwrap();
        let mut lag = LagrangianSeries::new(&g, &spec).unwrap();
        let u = Array3::from_elem(g.shape(), C64::new(1.0, 0.0));
        lag.push(0.0, &u).unwrap();
        lag.push(1.0, &u).unwrap();
        let ph = phase_along_path(&e, &lag).unwrap();
        assert!(ph.phases[0].iter().all(|v| *v == 0.0));
        assert!(!ph.flagged[0]);
    }

    #[test]
    fn loop_action_of_circle() {
        let g = grid();
        let pts = ellipse_loop([3.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 256);
        // counter-clockwise in (q, p) gives ∮p dq = −area
        assert!((loop_action(&g, &pts) + PI).abs() < 1e-3);
    }

    #[test]
    fn madelung_energy_of_flat_state() {
        let g = grid();
        let spec = HybridHamiltonianSpec::new(1.0, 1.0, 1.0).with_kinetics(true, true);
        let psi = HybridWavefunction::new(ComplexField::from_fn(&g, |_| C64::new(0.2, 0.0)), 1.0).unwrap();
        let f = polar_decompose(&psi, 1e-6).unwrap();
        let want = -g.integrate_real(&g.sample_real(|z| 0.04 * z[1] * z[1] / 2.0));
        assert!((madelung_energy(&f, &spec).unwrap() - want).abs() < 1e-12);
        let zero = MadelungFields { d: Array3::zeros(g.shape()), ..f };
        assert_eq!(madelung_energy(&zero, &spec).unwrap(), 0.0);
    }

    #[test]
    fn madelung_energy_matches_wave_energy() {
        let g = grid();
        let spec = HybridHamiltonianSpec::new(0.7, 1.2, 0.9)
            .with_potential(PotentialTerm::CosineQ { kappa: 0.5 })
            .with_potential(PotentialTerm::CosineX { kappa: 0.3 })
            .with_potential(PotentialTerm::Bilinear { lambda: 0.4 });
        let psi = wave(&g, 0.7);
        let f = polar_decompose(&psi, 1e-12).unwrap();
        let h = crate::hybrid_core::energy(&psi, &spec).unwrap();
        let m = madelung_energy(&f, &spec).unwrap();
        assert!((h - m).abs() <= 1e-6 * h.abs().max(1.0), "{h} {m}");
    }
}
