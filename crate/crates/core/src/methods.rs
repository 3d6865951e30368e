//! End-to-end solvers: the fine reference, the ideal and localized combined
//! methods, the pure coarse comparison, and well-bore pressures.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::assembly::{assemble_load_dirac, assemble_load_l2, assemble_point_sources, BrokenField, DiscreteFunction, PointSource};
use crate::coefficient::ElementCoefficients;
use crate::error::{Error, Result};
use crate::lod::{build_multiscale_basis, monolithic_global_correctors, FineSystem, Localization, MultiscaleBasis, RESIDUAL_TOLERANCE};
use crate::mesh::{barycentric, partition_domain, Domain, Point, Region};
use crate::sparse::{CsrMatrix, SparseSymmetricMatrix, SpdFactor};

/// Default bound on `fine Omega_2 unknowns x coarse constraints` for the
/// global corrector solve.
pub const DEFAULT_IDEAL_LIMIT: usize = 60_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodTag {
    Reference,
    Ideal,
    FeLodm { level: usize },
    Lodm { level: usize },
}

impl MethodTag {
    pub fn name(&self) -> String {
        match self {
            MethodTag::Reference => "reference".into(),
            MethodTag::Ideal => "ideal".into(),
            MethodTag::FeLodm { level } => format!("fe-lodm-L{level}"),
            MethodTag::Lodm { level } => format!("lodm-L{level}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub method: MethodTag,
    /// Solution on the fine layout of the system it was computed on.
    pub solution: DiscreteFunction,
    /// Elementwise view for comparisons across partitions.
    pub broken: BrokenField,
    /// Dimension of the linear system actually solved.
    pub system_size: usize,
    pub wall_time: Duration,
    /// Normwise relative residual of the final solve.
    pub residual: f64,
}

/// Right-hand sides.
pub enum Load<'a> {
    Function(&'a (dyn Fn(Point) -> f64 + Sync)),
    Wells(&'a WellSpec),
}

/// A well `q δ_P` with bore radius `radius`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Well {
    pub position: Point,
    pub rate: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WellSpec {
    pub wells: Vec<Well>,
}

impl WellSpec {
    pub fn new(wells: Vec<Well>) -> Result<Self> {
        for w in &wells {
            if !(w.radius > 0.0 && w.radius.is_finite()) {
                return Err(Error::Well(format!("bore radius must be positive, got {}", w.radius)));
            }
            if !w.rate.is_finite() {
                return Err(Error::Well("flow rate must be finite".into()));
            }
        }
        Ok(Self { wells })
    }

    pub fn sources(&self) -> Vec<PointSource> {
        self.wells
            .iter()
            .map(|w| PointSource {
                position: w.position,
                rate: w.rate,
            })
            .collect()
    }
}

/// Fine load vector of `load` on `sys`. Wells must lie in `Omega_1` unless
/// the partition has no fine region.
pub fn fine_load(sys: &FineSystem, load: &Load) -> Result<DiscreteFunction> {
    let (p, l) = (&sys.partition, sys.fine_layout());
    match load {
        Load::Function(f) => assemble_load_l2(p, l, *f),
        Load::Wells(w) if p.omega1_region.is_empty() => assemble_point_sources(p, l, &w.sources()),
        Load::Wells(w) => assemble_load_dirac(p, l, &w.sources()),
    }
}

fn inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn inf_norm_rows(m: &CsrMatrix) -> f64 {
    (0..m.nrows)
        .map(|i| m.row(i).map(|(_, v)| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Normwise backward error `‖b − Ax‖/(‖A‖‖x‖ + ‖b‖)` in the max norm.
pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
    let scale = inf_norm_rows(a) * inf(x) + inf(b);
    if scale == 0.0 {
        0.0
    } else {
        inf(&r) / scale
    }
}

/// SPD solve with one refinement step and a residual check.
fn spd_solve(a: &CsrMatrix, b: &[f64], context: &str) -> Result<(Vec<f64>, f64)> {
    let f = SpdFactor::new(a, context)?;
    let mut x = f.solve(b);
    let ax = a.mul_vec(&x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
    for (xi, d) in x.iter_mut().zip(f.solve(&r)) {
        *xi += d;
    }
    let res = relative_residual(a, &x, b);
    if !(res <= RESIDUAL_TOLERANCE) {
        return Err(Error::Residual {
            context: context.into(),
            residual: res,
            tolerance: RESIDUAL_TOLERANCE,
        });
    }
    Ok((x, res))
}

fn finish(sys: &FineSystem, method: MethodTag, u: Vec<f64>, size: usize, t0: Instant, residual: f64) -> Result<SolveResult> {
    let broken = BrokenField::from_fine(&sys.partition, sys.fine_layout(), &u)?;
    Ok(SolveResult {
        method,
        solution: DiscreteFunction::new(sys.fine_layout(), u)?,
        broken,
        system_size: size,
        wall_time: t0.elapsed(),
        residual,
    })
}

/// Fine interior-penalty solution.
pub fn solve_reference(sys: &FineSystem, load: &DiscreteFunction) -> Result<SolveResult> {
    let t0 = Instant::now();
    let (u, res) = spd_solve(sys.stiffness.csr(), &load.values, "fine reference system")?;
    finish(sys, MethodTag::Reference, u, load.values.len(), t0, res)
}

/// Rebuilds a reference result from stored nodal values, re-checking the
/// residual against `load`.
pub fn reference_from_values(sys: &FineSystem, load: &DiscreteFunction, values: Vec<f64>) -> Result<SolveResult> {
    let t0 = Instant::now();
    if values.len() != load.values.len() {
        return Err(Error::LayoutMismatch(format!(
            "stored solution has {} values, the fine space has {}",
            values.len(),
            load.values.len()
        )));
    }
    let res = relative_residual(sys.stiffness.csr(), &values, &load.values);
    if !(res <= RESIDUAL_TOLERANCE) {
        return Err(Error::Residual {
            context: "stored reference solution".into(),
            residual: res,
            tolerance: RESIDUAL_TOLERANCE,
        });
    }
    finish(sys, MethodTag::Reference, values, load.values.len(), t0, res)
}

/// Coarse Galerkin system of a multiscale basis.
pub struct CoarseSystem {
    pub matrix: SparseSymmetricMatrix,
    /// Largest `|A_ij − A_ji|` relative to the largest entry, before
    /// symmetrization.
    pub asymmetry: f64,
}

pub fn coarse_system(sys: &FineSystem, basis: &MultiscaleBasis) -> CoarseSystem {
    let psi = &basis.matrix;
    let a = psi.transpose().matmul(&sys.stiffness.csr().matmul(psi));
    let t = a.transpose();
    let mut asym = 0.0f64;
    for i in 0..a.nrows {
        for (j, v) in a.row(i) {
            asym = asym.max((v - t.get(i, j)).abs());
        }
    }
    let scale = a.max_abs();
    CoarseSystem {
        matrix: SparseSymmetricMatrix::symmetrize(a),
        asymmetry: if scale > 0.0 { asym / scale } else { 0.0 },
    }
}

/// Galerkin solve in the span of a multiscale basis.
pub fn solve_with_basis(
    sys: &FineSystem,
    basis: &MultiscaleBasis,
    load: &DiscreteFunction,
    method: MethodTag,
) -> Result<SolveResult> {
    let t0 = Instant::now();
    let coarse = coarse_system(sys, basis);
    let rhs = basis.matrix.transpose().mul_vec(&load.values);
    let (c, res) = spd_solve(coarse.matrix.csr(), &rhs, "multiscale coarse system")?;
    let u = basis.matrix.mul_vec(&c);
    finish(sys, method, u, c.len(), t0, res)
}

/// Ideal method with global correctors.
pub fn solve_ideal(sys: &FineSystem, load: &DiscreteFunction, limit: usize) -> Result<(SolveResult, MultiscaleBasis)> {
    let basis = monolithic_global_correctors(sys, limit)?;
    let r = solve_with_basis(sys, &basis, load, MethodTag::Ideal)?;
    Ok((r, basis))
}

/// Localized combined method with patches of level `level`.
pub fn solve_fe_lodm(sys: &FineSystem, load: &DiscreteFunction, level: usize) -> Result<(SolveResult, MultiscaleBasis)> {
    let basis = build_multiscale_basis(sys, Localization::Level(level))?;
    let r = solve_with_basis(sys, &basis, load, MethodTag::FeLodm { level })?;
    Ok((r, basis))
}

/// Pure coarse method: the same machinery on a partition with no fine
/// region. Returns the system so callers can reuse it.
pub fn solve_lodm_baseline(
    domain: Domain,
    coarse_h: f64,
    h: f64,
    coeffs: ElementCoefficients,
    gamma0: f64,
    load: &Load,
    level: usize,
) -> Result<(SolveResult, FineSystem)> {
    let partition = partition_domain(domain, Region::empty(), coarse_h, h)?;
    let sys = FineSystem::new(partition, coeffs, gamma0)?;
    let f = fine_load(&sys, load)?;
    let basis = build_multiscale_basis(&sys, Localization::Level(level))?;
    let r = solve_with_basis(&sys, &basis, &f, MethodTag::Lodm { level })?;
    Ok((r, sys))
}

/// `max_j |a(u_ref − u, ψ_j − Qψ_j)|` relative to `max_j |a(u_ref, ψ_j − Qψ_j)|`.
pub fn galerkin_orthogonality(sys: &FineSystem, basis: &MultiscaleBasis, reference: &[f64], approx: &[f64]) -> f64 {
    let k = sys.stiffness.csr();
    let diff: Vec<f64> = reference.iter().zip(approx).map(|(a, b)| a - b).collect();
    let pt = basis.matrix.transpose();
    let num = inf(&pt.mul_vec(&k.mul_vec(&diff)));
    let den = inf(&pt.mul_vec(&k.mul_vec(reference)));
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Peaceman well-bore pressures `u(P) + q/(2πĀ)·ln(r₀/r_w)` with
/// `r₀ = 0.2h` and `Ā` the geometric mean of the coefficient over the fine
/// triangles touching `P`.
pub fn compute_wbp(result: &SolveResult, coeffs: &ElementCoefficients, wells: &WellSpec) -> Result<Vec<f64>> {
    let field = &result.broken;
    let n = field.resolution;
    let h = 1.0 / n as f64;
    let r0 = 0.2 * h;
    let mut out = Vec::with_capacity(wells.wells.len());
    for w in &wells.wells {
        if w.radius >= r0 {
            return Err(Error::Well(format!(
                "bore radius {} is not below the equivalent radius {r0}",
                w.radius
            )));
        }
        let u = field.eval(w.position).ok_or(Error::Well(format!(
            "well at ({}, {}) is outside the domain",
            w.position[0], w.position[1]
        )))?;
        let mut log_sum = 0.0;
        let mut count = 0usize;
        let ci = (w.position[0] * n as f64).floor() as isize;
        let cj = (w.position[1] * n as f64).floor() as isize;
        for j in cj - 1..=cj + 1 {
            for i in ci - 1..=ci + 1 {
                if i < 0 || j < 0 || i >= n as isize || j >= n as isize {
                    continue;
                }
                let (x, y) = (i as f64 * h, j as f64 * h);
                let tris = [
                    [[x, y], [x + h, y], [x + h, y + h]],
                    [[x, y], [x + h, y + h], [x, y + h]],
                ];
                for (k, pts) in tris.iter().enumerate() {
                    let key = 2 * (j as usize * n + i as usize) + k;
                    if field.values[key].is_none() {
                        continue;
                    }
                    if barycentric(pts, w.position).iter().all(|&b| b >= -1e-12) {
                        log_sum += coeffs.by_key(key).ln();
                        count += 1;
                    }
                }
            }
        }
        let a_bar = (log_sum / count as f64).exp();
        out.push(u + w.rate / (2.0 * PI * a_bar) * (r0 / w.radius).ln());
    }
    Ok(out)
}

/// `i value` per fine unknown.
pub fn solution_text(result: &SolveResult) -> String {
    let mut out = String::new();
    for (i, v) in result.solution.values.iter().enumerate() {
        let _ = writeln!(out, "{i} {v:.16e}");
    }
    out
}

/// `well j: wbp value` per well, numbered from 1.
pub fn wbp_text(wbp: &[f64]) -> String {
    let mut out = String::new();
    for (j, v) in wbp.iter().enumerate() {
        let _ = writeln!(out, "well {}: wbp {v:.10e}", j + 1);
    }
    out
}
