//! Degree-of-freedom layouts, the interior-penalty bilinear form, load vectors
//! and the norms used to measure errors.

use crate::coefficient::ElementCoefficients;
use crate::error::{Error, Result};
use crate::mesh::{barycentric, signed_area, DomainPartition, InterfaceEdge, Point, Side, TriMesh};
use crate::sparse::{SparseSymmetricMatrix, TripletBuilder};

/// Which discrete space a layout numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    /// Fine P1 on both subdomains, discontinuous across the interface.
    FineFine,
    /// Fine P1 on `Omega_1`, coarse P1 on `Omega_2`.
    FineCoarse,
}

/// Numbering of unknowns. `Omega_1` unknowns come first, then `Omega_2`
/// unknowns; vertices on the outer boundary carry none.
#[derive(Clone, Debug, PartialEq)]
pub struct DofLayout {
    pub space: Space,
    /// Per fine `Omega_1` vertex.
    pub omega1: Vec<Option<usize>>,
    /// Per `Omega_2` vertex of the fine or coarse mesh, depending on `space`.
    pub omega2: Vec<Option<usize>>,
    pub n_omega1: usize,
    pub n_omega2: usize,
}

fn number(mesh: &TriMesh, offset: usize) -> (Vec<Option<usize>>, usize) {
    let mut next = offset;
    let map = mesh
        .on_boundary
        .iter()
        .map(|&b| {
            if b {
                None
            } else {
                next += 1;
                Some(next - 1)
            }
        })
        .collect();
    (map, next - offset)
}

impl DofLayout {
    pub fn fine(partition: &DomainPartition) -> Self {
        let (omega1, n_omega1) = number(&partition.fine_omega1, 0);
        let (omega2, n_omega2) = number(&partition.fine_omega2, n_omega1);
        Self {
            space: Space::FineFine,
            omega1,
            omega2,
            n_omega1,
            n_omega2,
        }
    }

    pub fn coarse(partition: &DomainPartition) -> Self {
        let (omega1, n_omega1) = number(&partition.fine_omega1, 0);
        let (omega2, n_omega2) = number(&partition.coarse_omega2, n_omega1);
        Self {
            space: Space::FineCoarse,
            omega1,
            omega2,
            n_omega1,
            n_omega2,
        }
    }

    pub fn len(&self) -> usize {
        self.n_omega1 + self.n_omega2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dof(&self, side: Side, vertex: usize) -> Option<usize> {
        match side {
            Side::Omega1 => self.omega1[vertex],
            Side::Omega2 => self.omega2[vertex],
        }
    }

    /// Index range of the `Omega_2` unknowns.
    pub fn omega2_range(&self) -> std::ops::Range<usize> {
        self.n_omega1..self.len()
    }

    fn check(&self, partition: &DomainPartition, space: Space) -> Result<()> {
        let n2 = match space {
            Space::FineFine => partition.fine_omega2.num_vertices(),
            Space::FineCoarse => partition.coarse_omega2.num_vertices(),
        };
        if self.space != space
            || self.omega1.len() != partition.fine_omega1.num_vertices()
            || self.omega2.len() != n2
        {
            return Err(Error::LayoutMismatch(format!(
                "expected a {space:?} layout with {} + {n2} vertices",
                partition.fine_omega1.num_vertices()
            )));
        }
        Ok(())
    }
}

/// Interface penalty `gamma0 / h_penalty`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyConfig {
    pub gamma0: f64,
    pub h_penalty: f64,
}

impl PenaltyConfig {
    pub const DEFAULT_GAMMA0: f64 = 10.0;

    pub fn new(gamma0: f64, partition: &DomainPartition) -> Result<Self> {
        if !(gamma0 > 0.0 && gamma0.is_finite()) {
            return Err(Error::Invalid(format!("penalty parameter must be positive, got {gamma0}")));
        }
        Ok(Self {
            gamma0,
            h_penalty: partition.h,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.gamma0 / self.h_penalty
    }
}

/// Coefficient vector tied to a layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteFunction {
    pub space: Space,
    pub values: Vec<f64>,
}

impl DiscreteFunction {
    pub fn new(layout: &DofLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} coefficients for {} unknowns",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self {
            space: layout.space,
            values,
        })
    }

    pub fn zeros(layout: &DofLayout) -> Self {
        Self {
            space: layout.space,
            values: vec![0.0; layout.len()],
        }
    }
}

/// Gradients of the three barycentric coordinates of a triangle.
pub fn p1_gradients(p: &[Point; 3]) -> [Point; 3] {
    let two_area = 2.0 * signed_area(p);
    [
        [(p[1][1] - p[2][1]) / two_area, (p[2][0] - p[1][0]) / two_area],
        [(p[2][1] - p[0][1]) / two_area, (p[0][0] - p[2][0]) / two_area],
        [(p[0][1] - p[1][1]) / two_area, (p[1][0] - p[0][0]) / two_area],
    ]
}

/// Local P1 stiffness `a * ∫ ∇λᵢ·∇λⱼ`.
pub fn element_stiffness(p: &[Point; 3], a: f64) -> [[f64; 3]; 3] {
    let g = p1_gradients(p);
    let w = a * signed_area(p);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = w * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    k
}

/// Exact local P1 mass matrix.
pub fn element_mass(p: &[Point; 3]) -> [[f64; 3]; 3] {
    let w = signed_area(p) / 12.0;
    let mut m = [[w; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 2.0 * w;
    }
    m
}

fn add_mesh_volume(
    b: &mut TripletBuilder,
    mesh: &TriMesh,
    dofs: &[Option<usize>],
    coeffs: &ElementCoefficients,
    triangles: impl Iterator<Item = usize>,
) {
    for t in triangles {
        let k = element_stiffness(&mesh.triangle_points(t), coeffs.on(mesh, t));
        let tri = mesh.triangles[t];
        for a in 0..3 {
            let Some(i) = dofs[tri[a]] else { continue };
            for c in 0..3 {
                if let Some(j) = dofs[tri[c]] {
                    b.add(i, j, k[a][c]);
                }
            }
        }
    }
}

fn check_coeffs(partition: &DomainPartition, coeffs: &ElementCoefficients) -> Result<()> {
    if coeffs.resolution != partition.fine_omega2.resolution {
        return Err(Error::LayoutMismatch(format!(
            "coefficients sampled at resolution {} but the fine mesh has {}",
            coeffs.resolution, partition.fine_omega2.resolution
        )));
    }
    Ok(())
}

/// Volume part `(A∇u, ∇v)` over both fine meshes.
pub fn assemble_volume_stiffness(
    partition: &DomainPartition,
    coeffs: &ElementCoefficients,
    layout: &DofLayout,
) -> Result<SparseSymmetricMatrix> {
    layout.check(partition, Space::FineFine)?;
    check_coeffs(partition, coeffs)?;
    let mut b = TripletBuilder::new(layout.len(), layout.len());
    let (m1, m2) = (&partition.fine_omega1, &partition.fine_omega2);
    add_mesh_volume(&mut b, m1, &layout.omega1, coeffs, 0..m1.num_triangles());
    add_mesh_volume(&mut b, m2, &layout.omega2, coeffs, 0..m2.num_triangles());
    SparseSymmetricMatrix::new(b.build())
}

/// Local interface block of one fine interface edge.
///
/// The six local functions are the barycentric coordinates of the `Omega_1`
/// triangle followed by those of the `Omega_2` triangle; `vertices` names
/// their mesh vertices.
#[derive(Clone, Debug)]
pub struct InterfaceBlock {
    pub omega1_vertices: [usize; 3],
    pub omega2_vertices: [usize; 3],
    pub matrix: [[f64; 6]; 6],
}

const GAUSS2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Values of the six local jump traces and average fluxes for `edge`.
struct EdgeTraces {
    /// `jump[g][k]`: `[φ_k]` at Gauss point `g`.
    jump: [[f64; 6]; 2],
    /// `{A∇φ_k·n}` (constant along the edge).
    flux: [f64; 6],
    length: f64,
}

fn edge_traces(
    partition: &DomainPartition,
    coeffs: &ElementCoefficients,
    edge: &InterfaceEdge,
) -> (EdgeTraces, [usize; 3], [usize; 3]) {
    let (m1, m2) = (&partition.fine_omega1, &partition.fine_omega2);
    let (t1, t2) = (edge.omega1_triangle, edge.omega2_triangle);
    let (p1, p2) = (m1.triangle_points(t1), m2.triangle_points(t2));
    let (g1, g2) = (p1_gradients(&p1), p1_gradients(&p2));
    let (a1, a2) = (coeffs.on(m1, t1), coeffs.on(m2, t2));
    let n = edge.normal;
    let mut flux = [0.0; 6];
    for k in 0..3 {
        flux[k] = 0.5 * a1 * (g1[k][0] * n[0] + g1[k][1] * n[1]);
        flux[k + 3] = 0.5 * a2 * (g2[k][0] * n[0] + g2[k][1] * n[1]);
    }
    let [e0, e1] = edge.endpoints;
    let mut jump = [[0.0; 6]; 2];
    for (g, &s) in GAUSS2.iter().enumerate() {
        let x = [e0[0] + s * (e1[0] - e0[0]), e0[1] + s * (e1[1] - e0[1])];
        let (b1, b2) = (barycentric(&p1, x), barycentric(&p2, x));
        for k in 0..3 {
            jump[g][k] = b1[k];
            jump[g][k + 3] = -b2[k];
        }
    }
    (
        EdgeTraces {
            jump,
            flux,
            length: edge.length,
        },
        m1.triangles[t1],
        m2.triangles[t2],
    )
}

/// `−⟨{A∇u·n},[v]⟩ − ⟨[u],{A∇v·n}⟩ + σ⟨[u],[v]⟩` on one interface edge.
pub fn interface_block(
    partition: &DomainPartition,
    coeffs: &ElementCoefficients,
    edge: usize,
    penalty: &PenaltyConfig,
) -> Result<InterfaceBlock> {
    let e = partition.gamma_fine.get(edge).ok_or(Error::NotInterfaceEdge(edge))?;
    let (tr, v1, v2) = edge_traces(partition, coeffs, e);
    let w = 0.5 * tr.length;
    let mut mean = [0.0; 6];
    for k in 0..6 {
        mean[k] = w * (tr.jump[0][k] + tr.jump[1][k]);
    }
    let sigma = penalty.sigma();
    let mut matrix = [[0.0; 6]; 6];
    for k in 0..6 {
        for l in 0..6 {
            let jj = w * (tr.jump[0][k] * tr.jump[0][l] + tr.jump[1][k] * tr.jump[1][l]);
            matrix[k][l] = -(tr.flux[k] * mean[l] + mean[k] * tr.flux[l]) + sigma * jj;
        }
    }
    Ok(InterfaceBlock {
        omega1_vertices: v1,
        omega2_vertices: v2,
        matrix,
    })
}

impl InterfaceBlock {
    /// Global unknowns of the six local functions.
    pub fn dofs(&self, layout: &DofLayout) -> [Option<usize>; 6] {
        let mut d = [None; 6];
        for k in 0..3 {
            d[k] = layout.omega1[self.omega1_vertices[k]];
            d[k + 3] = layout.omega2[self.omega2_vertices[k]];
        }
        d
    }

    fn scatter(&self, b: &mut TripletBuilder, layout: &DofLayout) {
        let d = self.dofs(layout);
        for k in 0..6 {
            let Some(i) = d[k] else { continue };
            for l in 0..6 {
                if let Some(j) = d[l] {
                    b.add(i, j, self.matrix[k][l]);
                }
            }
        }
    }
}

/// Interface terms over the fine interface edges listed in `edges`.
pub fn assemble_interface_terms(
    partition: &DomainPartition,
    coeffs: &ElementCoefficients,
    layout: &DofLayout,
    penalty: &PenaltyConfig,
    edges: &[usize],
) -> Result<SparseSymmetricMatrix> {
    layout.check(partition, Space::FineFine)?;
    check_coeffs(partition, coeffs)?;
    let mut b = TripletBuilder::new(layout.len(), layout.len());
    for &e in edges {
        interface_block(partition, coeffs, e, penalty)?.scatter(&mut b, layout);
    }
    SparseSymmetricMatrix::new(b.build())
}

/// The full bilinear form on the fine space.
pub fn assemble_system(
    partition: &DomainPartition,
    coeffs: &ElementCoefficients,
    layout: &DofLayout,
    penalty: &PenaltyConfig,
) -> Result<SparseSymmetricMatrix> {
    layout.check(partition, Space::FineFine)?;
    check_coeffs(partition, coeffs)?;
    let mut b = TripletBuilder::new(layout.len(), layout.len());
    let (m1, m2) = (&partition.fine_omega1, &partition.fine_omega2);
    add_mesh_volume(&mut b, m1, &layout.omega1, coeffs, 0..m1.num_triangles());
    add_mesh_volume(&mut b, m2, &layout.omega2, coeffs, 0..m2.num_triangles());
    for e in 0..partition.gamma_fine.len() {
        interface_block(partition, coeffs, e, penalty)?.scatter(&mut b, layout);
    }
    SparseSymmetricMatrix::new(b.build())
}

/// Local form `a_T̃` of coarse element `t` tested only against `Omega_2`
/// functions: the fine volume terms of its children plus the interface terms
/// of its interface segments.
pub fn assemble_combined_element(
    partition: &DomainPartition,
    coeffs: &ElementCoefficients,
    layout: &DofLayout,
    penalty: &PenaltyConfig,
    t: usize,
) -> Result<TripletBuilder> {
    let m2 = &partition.fine_omega2;
    let mut b = TripletBuilder::new(layout.len(), layout.len());
    add_mesh_volume(&mut b, m2, &layout.omega2, coeffs, partition.children[t].iter().copied());
    for e in partition.fine_interface_edges_of(t) {
        interface_block(partition, coeffs, e, penalty)?.scatter(&mut b, layout);
    }
    Ok(b)
}

/// Fine `Omega_2` mass matrix on the fine layout (zero outside the `Omega_2`
/// block).
pub fn assemble_omega2_mass(partition: &DomainPartition, layout: &DofLayout) -> Result<SparseSymmetricMatrix> {
    layout.check(partition, Space::FineFine)?;
    let mesh = &partition.fine_omega2;
    let mut b = TripletBuilder::new(layout.len(), layout.len());
    for t in 0..mesh.num_triangles() {
        let m = element_mass(&mesh.triangle_points(t));
        let tri = mesh.triangles[t];
        for a in 0..3 {
            let Some(i) = layout.omega2[tri[a]] else { continue };
            for c in 0..3 {
                if let Some(j) = layout.omega2[tri[c]] {
                    b.add(i, j, m[a][c]);
                }
            }
        }
    }
    SparseSymmetricMatrix::new(b.build())
}

/// `∫ f φᵢ` with the vertex quadrature rule on every fine triangle.
pub fn assemble_load_l2(
    partition: &DomainPartition,
    layout: &DofLayout,
    f: &(dyn Fn(Point) -> f64 + Sync),
) -> Result<DiscreteFunction> {
    layout.check(partition, Space::FineFine)?;
    let mut load = vec![0.0; layout.len()];
    for (mesh, dofs) in [
        (&partition.fine_omega1, &layout.omega1),
        (&partition.fine_omega2, &layout.omega2),
    ] {
        for t in 0..mesh.num_triangles() {
            let w = signed_area(&mesh.triangle_points(t)) / 3.0;
            for &v in &mesh.triangles[t] {
                if let Some(i) = dofs[v] {
                    load[i] += w * f(mesh.vertices[v]);
                }
            }
        }
    }
    DiscreteFunction::new(layout, load)
}

/// A point source `q δ_P`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointSource {
    pub position: Point,
    pub rate: f64,
}

fn locate_side(partition: &DomainPartition, p: Point) -> Option<(Side, usize, [f64; 3])> {
    if let Some((t, b)) = partition.fine_omega1.locate(p) {
        return Some((Side::Omega1, t, b));
    }
    partition.fine_omega2.locate(p).map(|(t, b)| (Side::Omega2, t, b))
}

/// Dirac load `Σ q_j φᵢ(P_j)`; every source must lie strictly inside
/// `Omega_1`.
pub fn assemble_load_dirac(
    partition: &DomainPartition,
    layout: &DofLayout,
    wells: &[PointSource],
) -> Result<DiscreteFunction> {
    for w in wells {
        if !partition.omega1_region.contains(w.position) {
            return Err(Error::WellOutsideFineRegion {
                x: w.position[0],
                y: w.position[1],
            });
        }
    }
    assemble_point_sources(partition, layout, wells)
}

/// Dirac load for sources anywhere in the domain. Used where no fine region
/// exists, e.g. for the pure coarse comparison runs.
pub fn assemble_point_sources(
    partition: &DomainPartition,
    layout: &DofLayout,
    sources: &[PointSource],
) -> Result<DiscreteFunction> {
    layout.check(partition, Space::FineFine)?;
    let mut load = vec![0.0; layout.len()];
    for s in sources {
        let (side, t, bary) = locate_side(partition, s.position).ok_or(Error::Well(format!(
            "source at ({}, {}) is outside the domain",
            s.position[0], s.position[1]
        )))?;
        let mesh = match side {
            Side::Omega1 => &partition.fine_omega1,
            Side::Omega2 => &partition.fine_omega2,
        };
        for (k, &v) in mesh.triangles[t].iter().enumerate() {
            if let Some(i) = layout.dof(side, v) {
                load[i] += s.rate * bary[k];
            }
        }
    }
    DiscreteFunction::new(layout, load)
}

/// Region over which a norm is taken.
#[derive(Clone, Debug, PartialEq)]
pub enum NormRegion {
    Omega,
    Omega1,
    Omega2,
    /// Union of the listed coarse `Omega_2` elements (sorted).
    Patch(Vec<usize>),
}

impl NormRegion {
    pub fn name(&self) -> &'static str {
        match self {
            NormRegion::Omega => "Omega",
            NormRegion::Omega1 => "Omega1",
            NormRegion::Omega2 => "Omega2",
            NormRegion::Patch(_) => "patch",
        }
    }
}

fn vertex_values(mesh: &TriMesh, dofs: &[Option<usize>], v: &[f64], t: usize) -> [f64; 3] {
    mesh.triangles[t].map(|k| dofs[k].map_or(0.0, |i| v[i]))
}

fn energy_on(mesh: &TriMesh, coeffs: &ElementCoefficients, vals: [f64; 3], t: usize) -> f64 {
    let p = mesh.triangle_points(t);
    let g = p1_gradients(&p);
    let gx = vals[0] * g[0][0] + vals[1] * g[1][0] + vals[2] * g[2][0];
    let gy = vals[0] * g[0][1] + vals[1] * g[1][1] + vals[2] * g[2][1];
    coeffs.on(mesh, t) * signed_area(&p) * (gx * gx + gy * gy)
}

struct NormParts {
    energy: f64,
    jump: f64,
    flux: f64,
}

fn norm_parts(
    partition: &DomainPartition,
    coeffs: &ElementCoefficients,
    layout: &DofLayout,
    v: &[f64],
    region: &NormRegion,
) -> Result<NormParts> {
    layout.check(partition, Space::FineFine)?;
    if v.len() != layout.len() {
        return Err(Error::LayoutMismatch("coefficient vector length".into()));
    }
    let (m1, m2) = (&partition.fine_omega1, &partition.fine_omega2);
    let mut energy = 0.0;
    if matches!(region, NormRegion::Omega | NormRegion::Omega1) {
        for t in 0..m1.num_triangles() {
            energy += energy_on(m1, coeffs, vertex_values(m1, &layout.omega1, v, t), t);
        }
    }
    let in_patch = |coarse: usize| match region {
        NormRegion::Patch(p) => p.binary_search(&coarse).is_ok(),
        NormRegion::Omega1 => false,
        _ => true,
    };
    for t in 0..m2.num_triangles() {
        if in_patch(partition.parent[t]) {
            energy += energy_on(m2, coeffs, vertex_values(m2, &layout.omega2, v, t), t);
        }
    }
    let mut jump = 0.0;
    let mut flux = 0.0;
    for e in &partition.gamma_fine {
        let seg = &partition.gamma_coarse[e.coarse_segment];
        if let NormRegion::Patch(p) = region {
            if p.binary_search(&seg.omega2_triangle).is_err() {
                continue;
            }
        }
        let (tr, v1, v2) = edge_traces(partition, coeffs, e);
        let mut c = [0.0; 6];
        for k in 0..3 {
            c[k] = layout.omega1[v1[k]].map_or(0.0, |i| v[i]);
            c[k + 3] = layout.omega2[v2[k]].map_or(0.0, |i| v[i]);
        }
        for g in 0..2 {
            let j: f64 = (0..6).map(|k| tr.jump[g][k] * c[k]).sum();
            jump += 0.5 * tr.length * j * j;
        }
        let fl: f64 = (0..6).map(|k| tr.flux[k] * c[k]).sum();
        flux += tr.length * fl * fl;
    }
    Ok(NormParts { energy, jump, flux })
}

/// `(‖A^½∇_h v‖² + (γ₀/h)‖[v]‖²_Γ)^½` over `region`; interface contributions
/// count for every region touching the interface and, for patches, for the
/// interface segments of patch elements.
pub fn norm_hh(
    partition: &DomainPartition,
    coeffs: &ElementCoefficients,
    layout: &DofLayout,
    penalty: &PenaltyConfig,
    v: &[f64],
    region: &NormRegion,
) -> Result<f64> {
    let p = norm_parts(partition, coeffs, layout, v, region)?;
    Ok((p.energy + penalty.sigma() * p.jump).sqrt())
}

/// Same as [`norm_hh`] with the penalty weight `γ₀/H`.
#[allow(non_snake_case)]
pub fn norm_hH(
    partition: &DomainPartition,
    coeffs: &ElementCoefficients,
    layout: &DofLayout,
    penalty: &PenaltyConfig,
    v: &[f64],
    region: &NormRegion,
) -> Result<f64> {
    let p = norm_parts(partition, coeffs, layout, v, region)?;
    Ok((p.energy + penalty.gamma0 / partition.coarse_h * p.jump).sqrt())
}

/// Interface flux term `(h/γ₀)‖{A∇v·n}‖²_Γ`, reported as a diagnostic.
pub fn flux_norm_sq(
    partition: &DomainPartition,
    coeffs: &ElementCoefficients,
    layout: &DofLayout,
    penalty: &PenaltyConfig,
    v: &[f64],
) -> Result<f64> {
    let p = norm_parts(partition, coeffs, layout, v, &NormRegion::Omega)?;
    Ok(p.flux / penalty.sigma())
}

/// `‖[v]‖_Γ` in L².
pub fn jump_norm(
    partition: &DomainPartition,
    coeffs: &ElementCoefficients,
    layout: &DofLayout,
    v: &[f64],
) -> Result<f64> {
    Ok(norm_parts(partition, coeffs, layout, v, &NormRegion::Omega)?.jump.sqrt())
}

/// Elementwise P1 vertex values keyed by the lattice triangle key, so that
/// fields from different partitions of the same fine lattice can be compared.
#[derive(Clone, Debug, PartialEq)]
pub struct BrokenField {
    pub resolution: usize,
    /// `Some` for lattice triangles inside the domain.
    pub values: Vec<Option<[f64; 3]>>,
    /// Subdomain of each lattice triangle in the partition the field came from.
    pub side: Vec<Option<Side>>,
}

impl BrokenField {
    pub fn from_fine(partition: &DomainPartition, layout: &DofLayout, v: &[f64]) -> Result<Self> {
        layout.check(partition, Space::FineFine)?;
        let n = partition.fine_omega2.resolution;
        let mut values = vec![None; 2 * n * n];
        let mut side = vec![None; 2 * n * n];
        for (mesh, dofs, s) in [
            (&partition.fine_omega1, &layout.omega1, Side::Omega1),
            (&partition.fine_omega2, &layout.omega2, Side::Omega2),
        ] {
            for t in 0..mesh.num_triangles() {
                let key = mesh.triangle_key(t);
                values[key] = Some(vertex_values(mesh, dofs, v, t));
                side[key] = Some(s);
            }
        }
        Ok(Self {
            resolution: n,
            values,
            side,
        })
    }

    /// Value at `p` by P1 interpolation on the lattice triangle containing
    /// it (the first side found for points on shared edges).
    pub fn eval(&self, p: Point) -> Option<f64> {
        let n = self.resolution;
        let h = 1.0 / n as f64;
        let ci = ((p[0] * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize;
        let cj = ((p[1] * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize;
        let (x, y) = (ci as f64 * h, cj as f64 * h);
        let lower = [[x, y], [x + h, y], [x + h, y + h]];
        let upper = [[x, y], [x + h, y + h], [x, y + h]];
        for (k, pts) in [(0, lower), (1, upper)] {
            let b = barycentric(&pts, p);
            if b.iter().all(|&c| c >= -1e-12) {
                let vals = self.values[2 * (cj * n + ci) + k]?;
                return Some(b[0] * vals[0] + b[1] * vals[1] + b[2] * vals[2]);
            }
        }
        None
    }

    fn points(&self, key: usize) -> [Point; 3] {
        let n = self.resolution;
        let h = 1.0 / n as f64;
        let cell = key / 2;
        let (x, y) = ((cell % n) as f64 * h, (cell / n) as f64 * h);
        if key % 2 == 0 {
            [[x, y], [x + h, y], [x + h, y + h]]
        } else {
            [[x, y], [x + h, y + h], [x, y + h]]
        }
    }
}

/// Norm families reported for errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Energy,
    L2,
    LInf,
}

impl NormKind {
    pub fn name(self) -> &'static str {
        match self {
            NormKind::Energy => "energy",
            NormKind::L2 => "L2",
            NormKind::LInf => "Linf",
        }
    }
}

/// Region used for error reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorRegion {
    Omega,
    Omega1,
    Omega2,
}

impl ErrorRegion {
    pub fn name(self) -> &'static str {
        match self {
            ErrorRegion::Omega => "Omega",
            ErrorRegion::Omega1 => "Omega1",
            ErrorRegion::Omega2 => "Omega2",
        }
    }

    fn includes(self, side: Side) -> bool {
        match self {
            ErrorRegion::Omega => true,
            ErrorRegion::Omega1 => side == Side::Omega1,
            ErrorRegion::Omega2 => side == Side::Omega2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorEntry {
    pub region: ErrorRegion,
    pub norm: NormKind,
    /// Relative error, or the absolute error when `absolute` is set.
    pub value: f64,
    /// Set when the reference norm vanished.
    pub absolute: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorReport {
    pub entries: Vec<ErrorEntry>,
}

impl ErrorReport {
    pub fn get(&self, region: ErrorRegion, norm: NormKind) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.region == region && e.norm == norm)
            .map(|e| e.value)
    }
}

/// Relative energy, L² and L^∞ errors of `approx` against `reference` on each
/// region. Regions are taken from the reference's partition.
pub fn error_report(
    reference: &BrokenField,
    approx: &BrokenField,
    coeffs: &ElementCoefficients,
    regions: &[ErrorRegion],
) -> Result<ErrorReport> {
    if reference.resolution != approx.resolution || coeffs.resolution != reference.resolution {
        return Err(Error::LayoutMismatch("fields live on different fine lattices".into()));
    }
    let mut entries = Vec::new();
    for &region in regions {
        let mut acc = [[0.0f64; 2]; 3];
        for (key, r) in reference.values.iter().enumerate() {
            let Some(r) = r else { continue };
            let Some(side) = reference.side[key] else { continue };
            if !region.includes(side) {
                continue;
            }
            let a = approx.values[key].ok_or_else(|| {
                Error::LayoutMismatch(format!("approximation missing lattice triangle {key}"))
            })?;
            let e = [r[0] - a[0], r[1] - a[1], r[2] - a[2]];
            let p = reference.points(key);
            let g = p1_gradients(&p);
            let area = signed_area(&p);
            let m = element_mass(&p);
            let kcoef = coeffs.by_key(key);
            for (slot, f) in [(0usize, *r), (1, e)] {
                let gx = f[0] * g[0][0] + f[1] * g[1][0] + f[2] * g[2][0];
                let gy = f[0] * g[0][1] + f[1] * g[1][1] + f[2] * g[2][1];
                acc[0][slot] += kcoef * area * (gx * gx + gy * gy);
                let mut l2 = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        l2 += m[i][j] * f[i] * f[j];
                    }
                }
                acc[1][slot] += l2;
                acc[2][slot] = acc[2][slot].max(f.iter().fold(0.0f64, |x, v| x.max(v.abs())));
            }
        }
        for (k, norm) in [NormKind::Energy, NormKind::L2, NormKind::LInf].into_iter().enumerate() {
            let (refn, errn) = if norm == NormKind::LInf {
                (acc[k][0], acc[k][1])
            } else {
                (acc[k][0].sqrt(), acc[k][1].sqrt())
            };
            let absolute = refn == 0.0;
            entries.push(ErrorEntry {
                region,
                norm,
                value: if absolute { errn } else { errn / refn },
                absolute,
            });
        }
    }
    Ok(ErrorReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::CoefficientField;
    use crate::mesh::{partition_domain, Domain, Rect, Region};

    fn example_partition(nc: usize, nf: usize) -> DomainPartition {
        let r = Region::from_rects(vec![Rect::new(0.25, 0.25, 0.5, 0.5).unwrap()]);
        partition_domain(Domain::UnitSquare, r, 1.0 / nc as f64, 1.0 / nf as f64).unwrap()
    }

    #[test]
    fn reference_triangle_stiffness() {
        let k = element_stiffness(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 1.0);
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - expected[i][j]).abs() < 1e-15);
            }
        }
        let k3 = element_stiffness(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 3.0);
        assert_eq!(k3[0][1], 3.0 * k[0][1]);
    }

    #[test]
    fn layouts_exclude_boundary() {
        let p = example_partition(4, 16);
        let l = DofLayout::fine(&p);
        // Omega_1 is a 5x5 vertex block with no boundary vertices.
        assert_eq!(l.n_omega1, 25);
        assert_eq!(l.n_omega2, 15 * 15 - 9);
        let c = DofLayout::coarse(&p);
        assert_eq!(c.n_omega2, 9 + 0);
        assert_eq!(c.n_omega1, 25);
    }

    #[test]
    fn system_is_symmetric_and_spd() {
        let p = example_partition(4, 16);
        let c = ElementCoefficients::sample(&CoefficientField::a1(0.2), 16);
        let l = DofLayout::fine(&p);
        let pen = PenaltyConfig::new(10.0, &p).unwrap();
        let k = assemble_system(&p, &c, &l, &pen).unwrap();
        assert!(k.csr().is_symmetric());
        assert!(k.factor("system").is_ok());
    }

    #[test]
    fn restriction_additivity() {
        let p = example_partition(4, 16);
        let c = ElementCoefficients::sample(&CoefficientField::a1(0.2), 16);
        let l = DofLayout::fine(&p);
        let pen = PenaltyConfig::new(10.0, &p).unwrap();
        let total = assemble_system(&p, &c, &l, &pen).unwrap();
        let vol = assemble_volume_stiffness(&p, &c, &l).unwrap();
        let all: Vec<usize> = (0..p.gamma_fine.len()).collect();
        let (a, b) = all.split_at(all.len() / 3);
        let i1 = assemble_interface_terms(&p, &c, &l, &pen, a).unwrap();
        let i2 = assemble_interface_terms(&p, &c, &l, &pen, b).unwrap();
        let x: Vec<f64> = (0..l.len()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let lhs = total.mul_vec(&x);
        let (v, j1, j2) = (vol.mul_vec(&x), i1.mul_vec(&x), i2.mul_vec(&x));
        for i in 0..l.len() {
            assert!((lhs[i] - v[i] - j1[i] - j2[i]).abs() < 1e-10 * (1.0 + lhs[i].abs()));
        }
    }

    #[test]
    fn penalty_only_block() {
        let p = example_partition(4, 16);
        let c = ElementCoefficients::sample(&CoefficientField::Constant(1.0), 16);
        let pen = PenaltyConfig::new(10.0, &p).unwrap();
        let blk = interface_block(&p, &c, 0, &pen).unwrap();
        // [u] = 1 along the edge: all Omega_1 coefficients 1, Omega_2 zero.
        // The flux of a constant vanishes, so only the penalty remains.
        let u = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let mut q = 0.0;
        for k in 0..6 {
            for l in 0..6 {
                q += u[k] * blk.matrix[k][l] * u[l];
            }
        }
        let e = &p.gamma_fine[0];
        assert!((q - 10.0 * e.length / p.h).abs() < 1e-10);
        assert!(interface_block(&p, &c, usize::MAX, &pen).is_err());
    }

    #[test]
    fn continuous_function_sees_volume_only() {
        let p = example_partition(4, 16);
        let c = ElementCoefficients::sample(&CoefficientField::a1(0.2), 16);
        let l = DofLayout::fine(&p);
        let pen = PenaltyConfig::new(10.0, &p).unwrap();
        let k = assemble_system(&p, &c, &l, &pen).unwrap();
        let f = |x: Point| (3.0 * x[0]).sin() * x[1] * (1.0 - x[0]) * (1.0 - x[1]);
        let mut v = vec![0.0; l.len()];
        for (vt, d) in l.omega1.iter().enumerate() {
            if let Some(i) = d {
                v[*i] = f(p.fine_omega1.vertices[vt]);
            }
        }
        for (vt, d) in l.omega2.iter().enumerate() {
            if let Some(i) = d {
                v[*i] = f(p.fine_omega2.vertices[vt]);
            }
        }
        let a = k.quad_form(&v);
        let vol = assemble_volume_stiffness(&p, &c, &l).unwrap().quad_form(&v);
        assert!((a - vol).abs() <= 1e-13 * vol);
        let n = norm_hh(&p, &c, &l, &pen, &v, &NormRegion::Omega).unwrap();
        assert!((n * n - vol).abs() <= 1e-12 * vol);
        assert!(jump_norm(&p, &c, &l, &v).unwrap() < 1e-15);
    }

    #[test]
    fn interface_hat_norm() {
        let p = example_partition(4, 16);
        let c = ElementCoefficients::sample(&CoefficientField::Constant(1.0), 16);
        let l = DofLayout::fine(&p);
        let pen = PenaltyConfig::new(10.0, &p).unwrap();
        // Omega_2-side hat at the midpoint of the bottom side of Omega_1.
        let v2 = p.fine_omega2.vertex_at(6, 4).unwrap();
        let mut v = vec![0.0; l.len()];
        v[l.omega2[v2].unwrap()] = 1.0;
        // Half of a full hat (three triangles below y = 1/4) has energy 2;
        // the trace on the interface is a hat of width 2h with ∫v² = 2h/3.
        let expected = 2.0 + 10.0 / p.h * (2.0 * p.h / 3.0);
        let n = norm_hh(&p, &c, &l, &pen, &v, &NormRegion::Omega).unwrap();
        assert!((n * n - expected).abs() < 1e-12);
        assert_eq!(norm_hh(&p, &c, &l, &pen, &vec![0.0; l.len()], &NormRegion::Omega).unwrap(), 0.0);
    }

    #[test]
    fn loads() {
        let p = example_partition(4, 16);
        let l = DofLayout::fine(&p);
        let zero = assemble_load_l2(&p, &l, &|_| 0.0).unwrap();
        assert!(zero.values.iter().all(|&x| x == 0.0));
        let one = assemble_load_l2(&p, &l, &|_| 1.0).unwrap();
        let h2 = p.h * p.h;
        // Hats away from the interface cover six triangles of area h²/2; at
        // an interface vertex the two copies share those six triangles.
        for (v2, d2) in l.omega2.iter().enumerate() {
            let Some(i2) = d2 else { continue };
            let [a, b] = p.fine_omega2.lattice[v2];
            let own = one.values[*i2];
            let other = p.fine_omega1.vertex_at(a, b).map_or(0.0, |v1| one.values[l.omega1[v1].unwrap()]);
            assert!((own + other - h2).abs() < 1e-15);
        }
        let v = p.fine_omega1.vertex_at(5, 5).unwrap();
        let at_vertex = assemble_load_dirac(
            &p,
            &l,
            &[PointSource {
                position: p.fine_omega1.vertices[v],
                rate: 1.0,
            }],
        )
        .unwrap();
        assert_eq!(at_vertex.values[l.omega1[v].unwrap()], 1.0);
        assert_eq!(at_vertex.values.iter().sum::<f64>(), 1.0);
        let t = p.fine_omega1.locate([0.3, 0.3]).unwrap().0;
        let bc = p.fine_omega1.centroid(t);
        let at_center = assemble_load_dirac(&p, &l, &[PointSource { position: bc, rate: 1.0 }]).unwrap();
        for &vt in &p.fine_omega1.triangles[t] {
            assert!((at_center.values[l.omega1[vt].unwrap()] - 1.0 / 3.0).abs() < 1e-14);
        }
        let pair = assemble_load_dirac(
            &p,
            &l,
            &[
                PointSource { position: [0.3, 0.3], rate: -1.0 },
                PointSource { position: [0.41, 0.37], rate: 1.0 },
            ],
        )
        .unwrap();
        assert!(pair.values.iter().sum::<f64>().abs() < 1e-15);
        assert!(assemble_load_dirac(&p, &l, &[PointSource { position: [0.8, 0.8], rate: 1.0 }]).is_err());
    }

    #[test]
    fn unit_square_single_interior_hat_load() {
        let p = partition_domain(Domain::UnitSquare, Region::empty(), 1.0, 0.5).unwrap();
        let l = DofLayout::fine(&p);
        assert_eq!(l.len(), 1);
        let one = assemble_load_l2(&p, &l, &|_| 1.0).unwrap();
        assert!((one.values[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn error_report_properties() {
        let p = example_partition(4, 16);
        let c = ElementCoefficients::sample(&CoefficientField::a1(0.2), 16);
        let l = DofLayout::fine(&p);
        let v: Vec<f64> = (0..l.len()).map(|i| (i as f64 * 0.1).sin()).collect();
        let twice: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let b = BrokenField::from_fine(&p, &l, &v).unwrap();
        let b2 = BrokenField::from_fine(&p, &l, &twice).unwrap();
        let regions = [ErrorRegion::Omega, ErrorRegion::Omega1, ErrorRegion::Omega2];
        let same = error_report(&b, &b, &c, &regions).unwrap();
        assert!(same.entries.iter().all(|e| e.value == 0.0 && !e.absolute));
        let r = error_report(&b, &b2, &c, &regions).unwrap();
        for e in &r.entries {
            assert!((e.value - 1.0).abs() < 1e-14, "{e:?}");
        }
        let z = BrokenField::from_fine(&p, &l, &vec![0.0; l.len()]).unwrap();
        let r = error_report(&z, &b, &c, &regions).unwrap();
        assert!(r.entries.iter().all(|e| e.absolute));
    }
}
