//! Corrector problems on element patches and the multiscale basis built from
//! them.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::assembly::{assemble_combined_element, assemble_system, norm_hh, DofLayout, NormRegion, PenaltyConfig};
use crate::coefficient::ElementCoefficients;
use crate::error::{Error, Result};
use crate::mesh::{DomainPartition, Patch};
use crate::sparse::{CsrMatrix, DenseSpd, SparseSymmetricMatrix, SpdFactor, TripletBuilder};
use crate::transfer::{constraint_rows, ClementWeights, ConstraintMatrix};

/// Tolerance for every a posteriori residual check.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Everything defined on the fine space of one problem: partition,
/// coefficients, penalty, transfer operators and the assembled bilinear form.
pub struct FineSystem {
    pub partition: DomainPartition,
    pub coeffs: ElementCoefficients,
    pub penalty: PenaltyConfig,
    pub weights: ClementWeights,
    pub stiffness: SparseSymmetricMatrix,
    /// Transpose of the prolongation: row `j` holds the fine coefficients of
    /// the `j`-th fine/coarse basis function.
    embedded_basis: CsrMatrix,
}

impl FineSystem {
    pub fn new(partition: DomainPartition, coeffs: ElementCoefficients, gamma0: f64) -> Result<Self> {
        let penalty = PenaltyConfig::new(gamma0, &partition)?;
        let weights = ClementWeights::new(&partition)?;
        let stiffness = assemble_system(&partition, &coeffs, &weights.fine, &penalty)?;
        let embedded_basis = weights.prolongation.transpose();
        Ok(Self {
            partition,
            coeffs,
            penalty,
            weights,
            stiffness,
            embedded_basis,
        })
    }

    pub fn fine_layout(&self) -> &DofLayout {
        &self.weights.fine
    }

    pub fn coarse_layout(&self) -> &DofLayout {
        &self.weights.coarse
    }

    /// Fine coefficients of the `j`-th fine/coarse basis function.
    pub fn embedded(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.embedded_basis.row(j)
    }

    /// Fine/coarse basis functions whose corrector right-hand side on coarse
    /// element `t` can be nonzero: the coarse hats of its vertices and the
    /// `Omega_1` hats touching its interface segments.
    pub fn candidates(&self, t: usize) -> Vec<usize> {
        let coarse = self.coarse_layout();
        let mut out: Vec<usize> = self.partition.coarse_omega2.triangles[t]
            .iter()
            .filter_map(|&v| coarse.omega2[v])
            .collect();
        for e in self.partition.fine_interface_edges_of(t) {
            let tri = self.partition.fine_omega1.triangles[self.partition.gamma_fine[e].omega1_triangle];
            out.extend(tri.iter().filter_map(|&v| coarse.omega1[v]));
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Local form of the combined element `t`, stored as a fine-by-fine
    /// matrix.
    pub fn combined_element_matrix(&self, t: usize) -> Result<CsrMatrix> {
        Ok(assemble_combined_element(&self.partition, &self.coeffs, self.fine_layout(), &self.penalty, t)?.build())
    }
}

/// `w ↦ a_T̃(ψ_j, w)` on every fine unknown, for a symmetric local matrix.
fn apply_to_basis(sys: &FineSystem, local: &CsrMatrix, j: usize) -> HashMap<usize, f64> {
    let mut out = HashMap::new();
    for (i, e) in sys.embedded(j) {
        for (k, a) in local.row(i) {
            *out.entry(k).or_insert(0.0) += a * e;
        }
    }
    out
}

/// Right-hand side of the corrector problem for coarse element `t` and basis
/// function `j`, on every fine `Omega_2` unknown (sparse, sorted).
pub fn corrector_rhs(sys: &FineSystem, t: usize, j: usize) -> Result<Vec<(usize, f64)>> {
    let local = sys.combined_element_matrix(t)?;
    Ok(sorted_omega2(sys, apply_to_basis(sys, &local, j)))
}

fn sorted_omega2(sys: &FineSystem, m: HashMap<usize, f64>) -> Vec<(usize, f64)> {
    let n1 = sys.fine_layout().n_omega1;
    let mut v: Vec<(usize, f64)> = m.into_iter().filter(|&(k, x)| k >= n1 && x != 0.0).collect();
    v.sort_unstable_by_key(|e| e.0);
    v
}

/// The saddle-point problem of one patch (or of all of `Omega_2`).
pub struct CorrectorProblem {
    /// `None` for the global problem.
    pub patch: Option<Patch>,
    pub constraints: ConstraintMatrix,
    /// Stiffness restricted to the patch unknowns `constraints.cols`.
    pub stiffness: CsrMatrix,
}

impl CorrectorProblem {
    pub fn new(sys: &FineSystem, patch: Option<Patch>) -> Self {
        let constraints = constraint_rows(&sys.partition, &sys.weights, patch.as_ref());
        let mut col_map = vec![None; sys.fine_layout().len()];
        for (k, &c) in constraints.cols.iter().enumerate() {
            col_map[c] = Some(k);
        }
        let stiffness = sys
            .stiffness
            .csr()
            .select(&constraints.cols, &col_map, constraints.cols.len());
        Self {
            patch,
            constraints,
            stiffness,
        }
    }

    fn label(&self) -> (usize, usize) {
        self.patch.as_ref().map_or((usize::MAX, usize::MAX), |p| (p.seed_element, p.level))
    }

    /// Local index of each fine unknown (`None` outside the patch).
    pub fn local_index(&self, n_fine: usize) -> Vec<Option<usize>> {
        let mut m = vec![None; n_fine];
        for (k, &c) in self.constraints.cols.iter().enumerate() {
            m[c] = Some(k);
        }
        m
    }
}

/// Factorized saddle-point problem, solved by the Schur complement of the
/// constraint block.
pub struct CorrectorSolver {
    pub problem: CorrectorProblem,
    k: SpdFactor,
    /// Columns of `K⁻¹Bᵀ`.
    y: Vec<Vec<f64>>,
    schur: DenseSpd,
    bt: CsrMatrix,
    k_norm: f64,
    b_norm: f64,
}

fn inf_norm_rows(m: &CsrMatrix) -> f64 {
    (0..m.nrows)
        .map(|i| m.row(i).map(|(_, v)| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl CorrectorSolver {
    pub fn new(problem: CorrectorProblem) -> Result<Self> {
        let (element, level) = problem.label();
        let singular = |reason: String| Error::SingularPatch {
            element,
            level,
            reason,
        };
        let k = SpdFactor::new(&problem.stiffness, "patch stiffness").map_err(|e| singular(e.to_string()))?;
        let b = &problem.constraints.matrix;
        let bt = b.transpose();
        let m = b.nrows;
        let cols: Vec<Vec<f64>> = (0..m)
            .map(|r| {
                let mut c = vec![0.0; b.ncols];
                for (j, v) in b.row(r) {
                    c[j] = v;
                }
                c
            })
            .collect();
        let y = k.solve_many(&cols);
        let mut s = vec![vec![0.0; m]; m];
        for (r, row) in s.iter_mut().enumerate() {
            for (c, yc) in y.iter().enumerate() {
                row[c] = b.row(r).map(|(j, v)| v * yc[j]).sum();
            }
        }
        for r in 0..m {
            for c in 0..r {
                let avg = 0.5 * (s[r][c] + s[c][r]);
                s[r][c] = avg;
                s[c][r] = avg;
            }
        }
        let schur = DenseSpd::new(&s, "constraint Schur complement").map_err(|e| singular(e.to_string()))?;
        let k_norm = inf_norm_rows(&problem.stiffness);
        let b_norm = inf_norm_rows(b);
        Ok(Self {
            problem,
            k,
            y,
            schur,
            bt,
            k_norm,
            b_norm,
        })
    }

    fn saddle_step(&self, f: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let b = &self.problem.constraints.matrix;
        let x0 = self.k.solve(f);
        let mut bx = b.mul_vec(&x0);
        for (a, gi) in bx.iter_mut().zip(g) {
            *a -= gi;
        }
        let lambda = self.schur.solve(&bx);
        let mut q = x0;
        for (yc, l) in self.y.iter().zip(&lambda) {
            for (qi, yi) in q.iter_mut().zip(yc) {
                *qi -= l * yi;
            }
        }
        (q, lambda)
    }

    fn residuals(&self, rhs: &[f64], q: &[f64], lambda: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let kq = self.problem.stiffness.mul_vec(q);
        let btl = self.bt.mul_vec(lambda);
        let r1: Vec<f64> = (0..q.len()).map(|i| rhs[i] - kq[i] - btl[i]).collect();
        let r2: Vec<f64> = self.problem.constraints.matrix.mul_vec(q).iter().map(|x| -x).collect();
        (r1, r2)
    }

    /// Solves `K q + Bᵀλ = rhs`, `B q = 0` on the patch unknowns, with one
    /// step of iterative refinement and a residual check.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.problem.constraints.cols.len();
        assert_eq!(rhs.len(), n);
        if rhs.iter().all(|&x| x == 0.0) {
            return Ok(vec![0.0; n]);
        }
        let zeros = vec![0.0; self.y.len()];
        let (mut q, mut lambda) = self.saddle_step(rhs, &zeros);
        let (r1, r2) = self.residuals(rhs, &q, &lambda);
        let (dq, dl) = self.saddle_step(&r1, &r2);
        for (a, d) in q.iter_mut().zip(&dq) {
            *a += d;
        }
        for (a, d) in lambda.iter_mut().zip(&dl) {
            *a += d;
        }
        let (r1, r2) = self.residuals(rhs, &q, &lambda);
        let qn = max_abs(&q);
        let scale = self.k_norm * qn + inf_norm_rows(&self.bt) * max_abs(&lambda) + max_abs(rhs);
        let primal = max_abs(&r1) / scale;
        let constraint = if qn == 0.0 { 0.0 } else { max_abs(&r2) / (self.b_norm * qn) };
        let res = primal.max(constraint);
        if !(res <= RESIDUAL_TOLERANCE) {
            let (element, level) = self.problem.label();
            return Err(Error::Residual {
                context: format!("corrector on patch of element {element} level {level}"),
                residual: res,
                tolerance: RESIDUAL_TOLERANCE,
            });
        }
        Ok(q)
    }

    /// Relative constraint residual `‖Bq‖/(‖B‖‖q‖)` of a patch vector.
    pub fn constraint_residual(&self, q: &[f64]) -> f64 {
        let qn = max_abs(q);
        if qn == 0.0 {
            return 0.0;
        }
        max_abs(&self.problem.constraints.matrix.mul_vec(q)) / (self.b_norm * qn)
    }
}

/// Solves one corrector problem and returns the corrector on the patch
/// unknowns.
pub fn solve_local_corrector(problem: CorrectorProblem, rhs: &[f64]) -> Result<Vec<f64>> {
    CorrectorSolver::new(problem)?.solve(rhs)
}

/// Patch level from the rule `⌈L0·|log₁₀ √(H h)|⌉`.
pub fn choose_l(coarse_h: f64, h: f64, l0: f64) -> usize {
    (l0 * (coarse_h * h).sqrt().log10().abs()).ceil() as usize
}

/// Patch size used for the localized correctors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Localization {
    Level(usize),
    /// Global correctors (the ideal method).
    Global,
}

/// Corrected basis `ψ_j − Qψ_j` of the fine/coarse space.
#[derive(Clone, Debug)]
pub struct MultiscaleBasis {
    pub localization: Localization,
    /// Corrector of each basis function on fine unknowns (sorted, sparse).
    pub correctors: Vec<Vec<(usize, f64)>>,
    /// Coarse elements of all patches contributing to each corrector.
    pub footprints: Vec<Vec<usize>>,
    /// `E − Q` as a fine-by-coarse matrix.
    pub matrix: CsrMatrix,
    /// Number of distinct patch factorizations performed.
    pub factorizations: usize,
    /// Largest relative constraint residual over all patch solves.
    pub max_constraint_residual: f64,
}

struct ElementResult {
    element: usize,
    footprint: Vec<usize>,
    correctors: Vec<(usize, Vec<(usize, f64)>)>,
    constraint_residual: f64,
}

/// Correctors of every candidate basis function on a group of elements
/// sharing one patch footprint.
fn solve_group(sys: &FineSystem, elements: &[usize], patch: Patch) -> Result<Vec<ElementResult>> {
    let footprint = patch.elements.clone();
    let problem = CorrectorProblem::new(sys, Some(patch));
    let index = problem.local_index(sys.fine_layout().len());
    let cols = problem.constraints.cols.clone();
    let solver = CorrectorSolver::new(problem)?;
    let mut out = Vec::with_capacity(elements.len());
    for &t in elements {
        let local = sys.combined_element_matrix(t)?;
        let mut correctors = Vec::new();
        let mut worst = 0.0f64;
        for j in sys.candidates(t) {
            let full = apply_to_basis(sys, &local, j);
            let mut rhs = vec![0.0; cols.len()];
            let mut any = false;
            for (k, v) in full {
                if let Some(l) = index[k] {
                    if v != 0.0 {
                        rhs[l] += v;
                        any = true;
                    }
                }
            }
            if !any {
                continue;
            }
            let q = solver.solve(&rhs)?;
            worst = worst.max(solver.constraint_residual(&q));
            let sparse: Vec<(usize, f64)> = cols
                .iter()
                .zip(&q)
                .filter(|(_, &v)| v != 0.0)
                .map(|(&c, &v)| (c, v))
                .collect();
            correctors.push((j, sparse));
        }
        out.push(ElementResult {
            element: t,
            footprint: footprint.clone(),
            correctors,
            constraint_residual: worst,
        });
    }
    Ok(out)
}

fn patch_for(sys: &FineSystem, t: usize, loc: Localization) -> Patch {
    match loc {
        Localization::Level(l) => sys.partition.element_patch(t, l),
        Localization::Global => Patch {
            seed_element: t,
            level: usize::MAX,
            elements: (0..sys.partition.coarse_omega2.num_triangles()).collect(),
        },
    }
}

/// Element correctors `Q^{T,L}ψ_j` for one coarse element on its patch, as
/// full fine vectors keyed by basis index.
pub fn element_correctors(
    sys: &FineSystem,
    t: usize,
    loc: Localization,
) -> Result<Vec<(usize, Vec<(usize, f64)>)>> {
    let patch = patch_for(sys, t, loc);
    Ok(solve_group(sys, &[t], patch)?.pop().map(|r| r.correctors).unwrap_or_default())
}

/// Localization error `(Σ_j ‖Q^T ψ_j − Q^{T,L} ψ_j‖²_{h,h})^{1/2}` of one
/// coarse element for every level in `levels`, measured against the global
/// element correctors.
pub fn decay_profile(sys: &FineSystem, t: usize, levels: &[usize]) -> Result<Vec<f64>> {
    let n = sys.fine_layout().len();
    let dense = |c: &[(usize, f64)]| {
        let mut v = vec![0.0; n];
        for &(k, x) in c {
            v[k] = x;
        }
        v
    };
    let global: HashMap<usize, Vec<f64>> = element_correctors(sys, t, Localization::Global)?
        .into_iter()
        .map(|(j, c)| (j, dense(&c)))
        .collect();
    let mut out = Vec::with_capacity(levels.len());
    for &l in levels {
        let local: HashMap<usize, Vec<f64>> = element_correctors(sys, t, Localization::Level(l))?
            .into_iter()
            .map(|(j, c)| (j, dense(&c)))
            .collect();
        let mut keys: Vec<usize> = global.keys().chain(local.keys()).copied().collect();
        keys.sort_unstable();
        keys.dedup();
        let zero = vec![0.0; n];
        let mut sum = 0.0;
        for j in keys {
            let a = global.get(&j).unwrap_or(&zero);
            let b = local.get(&j).unwrap_or(&zero);
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let e = norm_hh(&sys.partition, &sys.coeffs, sys.fine_layout(), &sys.penalty, &d, &NormRegion::Omega)?;
            sum += e * e;
        }
        out.push(sum.sqrt());
    }
    Ok(out)
}

/// Builds `V^{ms}` with patches of the given localization. Elements whose
/// patches coincide share one factorization.
pub fn build_multiscale_basis(sys: &FineSystem, loc: Localization) -> Result<MultiscaleBasis> {
    let nt = sys.partition.coarse_omega2.num_triangles();
    let mut groups: Vec<(Patch, Vec<usize>)> = Vec::new();
    let mut by_footprint: HashMap<Vec<usize>, usize> = HashMap::new();
    for t in 0..nt {
        let patch = patch_for(sys, t, loc);
        match by_footprint.get(&patch.elements) {
            Some(&g) => groups[g].1.push(t),
            None => {
                by_footprint.insert(patch.elements.clone(), groups.len());
                groups.push((patch, vec![t]));
            }
        }
    }
    let factorizations = groups.len();
    let n_basis = sys.coarse_layout().len();
    let mut acc: Vec<HashMap<usize, f64>> = vec![HashMap::new(); n_basis];
    let mut footprints: Vec<Vec<usize>> = vec![Vec::new(); n_basis];
    let mut worst = 0.0f64;
    let chunk = rayon::current_num_threads().max(1) * 4;
    for batch in groups.chunks(chunk) {
        let results: Vec<Result<Vec<ElementResult>>> = batch
            .par_iter()
            .map(|(patch, elements)| solve_group(sys, elements, patch.clone()))
            .collect();
        let mut flat = Vec::new();
        for r in results {
            flat.extend(r?);
        }
        // Sum in element order so the result does not depend on scheduling.
        flat.sort_by_key(|r| r.element);
        for r in flat {
            worst = worst.max(r.constraint_residual);
            for (j, q) in r.correctors {
                for (i, v) in q {
                    *acc[j].entry(i).or_insert(0.0) += v;
                }
                footprints[j].extend_from_slice(&r.footprint);
            }
        }
    }
    let correctors: Vec<Vec<(usize, f64)>> = acc
        .into_iter()
        .map(|m| {
            let mut v: Vec<(usize, f64)> = m.into_iter().collect();
            v.sort_unstable_by_key(|e| e.0);
            v
        })
        .collect();
    for f in &mut footprints {
        f.sort_unstable();
        f.dedup();
    }
    let matrix = corrected_matrix(sys, &correctors);
    Ok(MultiscaleBasis {
        localization: loc,
        correctors,
        footprints,
        matrix,
        factorizations,
        max_constraint_residual: worst,
    })
}

fn corrected_matrix(sys: &FineSystem, correctors: &[Vec<(usize, f64)>]) -> CsrMatrix {
    let n = sys.fine_layout().len();
    let mut b = TripletBuilder::new(n, correctors.len());
    for (j, q) in correctors.iter().enumerate() {
        for (i, e) in sys.embedded(j) {
            b.add(i, j, e);
        }
        for &(i, v) in q {
            b.add(i, j, -v);
        }
    }
    b.build()
}

/// Global correctors `Qψ_j` from a single saddle-point solve on all of
/// `Omega_2` with right-hand side `a(ψ_j, ·)`.
pub fn monolithic_global_correctors(sys: &FineSystem, max_unknowns: usize) -> Result<MultiscaleBasis> {
    let problem = CorrectorProblem::new(sys, None);
    let size = problem.constraints.cols.len() * problem.constraints.rows.len().max(1);
    if size > max_unknowns {
        return Err(Error::SizeLimit {
            unknowns: size,
            limit: max_unknowns,
        });
    }
    let index = problem.local_index(sys.fine_layout().len());
    let cols = problem.constraints.cols.clone();
    let solver = CorrectorSolver::new(problem)?;
    let n_basis = sys.coarse_layout().len();
    let k = sys.stiffness.csr();
    let results: Vec<Result<(Vec<(usize, f64)>, f64)>> = (0..n_basis)
        .into_par_iter()
        .map(|j| {
            let mut rhs = vec![0.0; cols.len()];
            let mut any = false;
            for (i, e) in sys.embedded(j) {
                for (c, a) in k.row(i) {
                    if let Some(l) = index[c] {
                        rhs[l] += a * e;
                        any = true;
                    }
                }
            }
            if !any {
                return Ok((Vec::new(), 0.0));
            }
            let q = solver.solve(&rhs)?;
            let r = solver.constraint_residual(&q);
            Ok((
                cols.iter().zip(&q).filter(|(_, &v)| v != 0.0).map(|(&c, &v)| (c, v)).collect(),
                r,
            ))
        })
        .collect();
    let mut correctors = Vec::with_capacity(n_basis);
    let mut worst = 0.0f64;
    for r in results {
        let (q, res) = r?;
        worst = worst.max(res);
        correctors.push(q);
    }
    let all: Vec<usize> = (0..sys.partition.coarse_omega2.num_triangles()).collect();
    let footprints = correctors
        .iter()
        .map(|q| if q.is_empty() { Vec::new() } else { all.clone() })
        .collect();
    let matrix = corrected_matrix(sys, &correctors);
    Ok(MultiscaleBasis {
        localization: Localization::Global,
        correctors,
        footprints,
        matrix,
        factorizations: 1,
        max_constraint_residual: worst,
    })
}

/// Global corrector of one basis function from a dense solve of the full
/// saddle-point system, for cross-checking on small meshes.
pub fn dense_global_corrector(sys: &FineSystem, j: usize) -> Vec<f64> {
    let problem = CorrectorProblem::new(sys, None);
    let (n, m) = (problem.constraints.cols.len(), problem.constraints.matrix.nrows);
    let index = problem.local_index(sys.fine_layout().len());
    let mut a = vec![vec![0.0; n + m]; n + m];
    for (i, row) in a.iter_mut().enumerate().take(n) {
        for (c, v) in problem.stiffness.row(i) {
            row[c] = v;
        }
    }
    for r in 0..m {
        for (c, v) in problem.constraints.matrix.row(r) {
            a[n + r][c] = v;
            a[c][n + r] = v;
        }
    }
    let mut rhs = vec![0.0; n + m];
    let k = sys.stiffness.csr();
    for (i, e) in sys.embedded(j) {
        for (c, v) in k.row(i) {
            if let Some(l) = index[c] {
                rhs[l] += v * e;
            }
        }
    }
    let x = crate::sparse::dense_lu_solve(&a, &rhs);
    let mut full = vec![0.0; sys.fine_layout().len()];
    for (l, &c) in problem.constraints.cols.iter().enumerate() {
        full[c] = x[l];
    }
    full
}

impl MultiscaleBasis {
    /// Corrector of basis function `j` as a dense fine vector.
    pub fn corrector_dense(&self, j: usize, n_fine: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_fine];
        for &(i, x) in &self.correctors[j] {
            v[i] = x;
        }
        v
    }

    /// Plain-text dump: a `basis j` header followed by `i value` lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (j, q) in self.correctors.iter().enumerate() {
            if q.is_empty() {
                continue;
            }
            let _ = writeln!(out, "basis {j}");
            for &(i, v) in q {
                let _ = writeln!(out, "{i} {v:.16e}");
            }
        }
        out
    }
}
