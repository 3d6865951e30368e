//! Structured nested triangulations and the fine/coarse domain partition.
//!
//! Every mesh lives on a uniform lattice of `n x n` square cells over the unit
//! square. A cell `(i, j)` covers `[i/n, (i+1)/n] x [j/n, (j+1)/n]` and is split
//! along the diagonal from `(i, j)` to `(i+1, j+1)` into a lower triangle
//! `[(i,j), (i+1,j), (i+1,j+1)]` and an upper triangle
//! `[(i,j), (i+1,j+1), (i,j+1)]`, both counter-clockwise. Because fine and
//! coarse meshes share the diagonal direction, a dyadic refinement of a coarse
//! mesh is nested in it.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

const NONE: u32 = u32::MAX;

/// Closed axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x0 < x1 && y0 < y1) || ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid(format!(
                "degenerate rectangle ({x0}, {y0})-({x1}, {y1})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// Strict interior test; used with cell centers, which never lie on a
    /// grid-aligned edge.
    pub fn contains(&self, p: Point) -> bool {
        p[0] > self.x0 && p[0] < self.x1 && p[1] > self.y0 && p[1] < self.y1
    }

    fn is_aligned(&self, n: usize) -> bool {
        let on_grid = |v: f64| {
            let s = v * n as f64;
            (s - s.round()).abs() < 1e-9 || v <= 0.0 || v >= 1.0
        };
        on_grid(self.x0) && on_grid(self.x1) && on_grid(self.y0) && on_grid(self.y1)
    }
}

/// Union of axis-aligned rectangles. An empty region is legal and denotes a
/// partition without a fine-only subdomain.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Region {
    pub rects: Vec<Rect>,
}

impl Region {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_rects(rects: Vec<Rect>) -> Self {
        Self { rects }
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.rects.iter().any(|r| r.contains(p))
    }
}

/// Computational domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    UnitSquare,
    /// `(0,1)^2` minus `(1/2,1) x (0,1/2)`.
    LShape,
}

impl Domain {
    pub fn contains(&self, p: Point) -> bool {
        let in_square = p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0;
        match self {
            Domain::UnitSquare => in_square,
            Domain::LShape => in_square && !(p[0] > 0.5 && p[1] < 0.5),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Domain::UnitSquare => 1.0,
            Domain::LShape => 0.75,
        }
    }

    fn cell_inside(&self, n: usize, i: isize, j: isize) -> bool {
        if i < 0 || j < 0 || i >= n as isize || j >= n as isize {
            return false;
        }
        let h = 1.0 / n as f64;
        self.contains([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h])
    }

    /// A lattice vertex lies on the boundary when at least one of its four
    /// surrounding cells is outside the domain.
    fn vertex_on_boundary(&self, n: usize, i: usize, j: usize) -> bool {
        let (i, j) = (i as isize, j as isize);
        !(self.cell_inside(n, i - 1, j - 1)
            && self.cell_inside(n, i, j - 1)
            && self.cell_inside(n, i - 1, j)
            && self.cell_inside(n, i, j))
    }

    fn check_resolution(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::Resolution("subdivisions must be at least 1".into()));
        }
        if *self == Domain::LShape && n % 2 != 0 {
            return Err(Error::Resolution(format!(
                "L-shaped domain needs an even subdivision count, got {n}"
            )));
        }
        Ok(())
    }
}

/// Edge of a triangulation with its one or two adjacent triangles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub triangles: [usize; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.triangles[1] == usize::MAX
    }
}

/// Compressed vertex-to-triangle incidence.
#[derive(Clone, Debug)]
pub struct VertexStars {
    offsets: Vec<usize>,
    triangles: Vec<usize>,
}

impl VertexStars {
    pub fn of(&self, v: usize) -> &[usize] {
        &self.triangles[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// Structured triangulation of a union of lattice cells.
#[derive(Clone, Debug)]
pub struct TriMesh {
    /// Lattice resolution: cells per unit length.
    pub resolution: usize,
    pub vertices: Vec<Point>,
    /// Lattice coordinates of each vertex.
    pub lattice: Vec<[usize; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Cells in the order they were triangulated; triangle `2k` is the lower
    /// and `2k + 1` the upper half of cell `k`.
    pub cells: Vec<[usize; 2]>,
    /// Vertex lies on the boundary of the computational domain.
    pub on_boundary: Vec<bool>,
    pub edges: Vec<Edge>,
    vertex_lookup: Vec<u32>,
    cell_lookup: Vec<u32>,
    stars: VertexStars,
}

impl TriMesh {
    fn structured(n: usize, domain: Domain, include: impl Fn(usize, usize) -> bool) -> Self {
        let mut cells = Vec::new();
        for j in 0..n {
            for i in 0..n {
                if include(i, j) {
                    cells.push([i, j]);
                }
            }
        }
        let mut used = vec![false; (n + 1) * (n + 1)];
        for &[i, j] in &cells {
            for (a, b) in [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)] {
                used[b * (n + 1) + a] = true;
            }
        }
        let h = 1.0 / n as f64;
        let mut vertex_lookup = vec![NONE; (n + 1) * (n + 1)];
        let mut vertices = Vec::new();
        let mut lattice = Vec::new();
        let mut on_boundary = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                if used[j * (n + 1) + i] {
                    vertex_lookup[j * (n + 1) + i] = vertices.len() as u32;
                    vertices.push([i as f64 * h, j as f64 * h]);
                    lattice.push([i, j]);
                    on_boundary.push(domain.vertex_on_boundary(n, i, j));
                }
            }
        }
        let v = |i: usize, j: usize| vertex_lookup[j * (n + 1) + i] as usize;
        let mut cell_lookup = vec![NONE; n * n];
        let mut triangles = Vec::with_capacity(2 * cells.len());
        for (k, &[i, j]) in cells.iter().enumerate() {
            cell_lookup[j * n + i] = k as u32;
            triangles.push([v(i, j), v(i + 1, j), v(i + 1, j + 1)]);
            triangles.push([v(i, j), v(i + 1, j + 1), v(i, j + 1)]);
        }
        let edges = build_edges(&triangles);
        let stars = build_stars(vertices.len(), &triangles);
        Self {
            resolution: n,
            vertices,
            lattice,
            triangles,
            cells,
            on_boundary,
            edges,
            vertex_lookup,
            cell_lookup,
            stars,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn mesh_size(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    pub fn vertex_at(&self, i: usize, j: usize) -> Option<usize> {
        let n = self.resolution;
        if i > n || j > n {
            return None;
        }
        match self.vertex_lookup[j * (n + 1) + i] {
            NONE => None,
            k => Some(k as usize),
        }
    }

    pub fn cell_at(&self, i: usize, j: usize) -> Option<usize> {
        let n = self.resolution;
        if i >= n || j >= n {
            return None;
        }
        match self.cell_lookup[j * n + i] {
            NONE => None,
            k => Some(k as usize),
        }
    }

    /// Lattice-wide triangle key: `2 * (j * n + i) + upper`.
    pub fn triangle_key(&self, t: usize) -> usize {
        let [i, j] = self.cells[t / 2];
        2 * (j * self.resolution + i) + (t % 2)
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        signed_area(&self.triangle_points(t))
    }

    pub fn centroid(&self, t: usize) -> Point {
        let p = self.triangle_points(t);
        [
            (p[0][0] + p[1][0] + p[2][0]) / 3.0,
            (p[0][1] + p[1][1] + p[2][1]) / 3.0,
        ]
    }

    pub fn stars(&self) -> &VertexStars {
        &self.stars
    }

    /// Finds a triangle containing `p` and the barycentric coordinates of `p`
    /// in it. Points on shared edges resolve to the first candidate found.
    pub fn locate(&self, p: Point) -> Option<(usize, [f64; 3])> {
        let n = self.resolution as f64;
        let ci = (p[0] * n).floor() as isize;
        let cj = (p[1] * n).floor() as isize;
        for dj in [0isize, -1, 1] {
            for di in [0isize, -1, 1] {
                let (i, j) = (ci + di, cj + dj);
                if i < 0 || j < 0 {
                    continue;
                }
                let Some(k) = self.cell_at(i as usize, j as usize) else {
                    continue;
                };
                for t in [2 * k, 2 * k + 1] {
                    let bary = barycentric(&self.triangle_points(t), p);
                    if bary.iter().all(|&b| b >= -1e-12) {
                        return Some((t, bary));
                    }
                }
            }
        }
        None
    }

    /// Plain-text export: `v x y` per vertex, `t i j k` per triangle.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        write_mesh_lines(&mut out, self, 0);
        out
    }
}

fn write_mesh_lines(out: &mut String, mesh: &TriMesh, offset: usize) {
    for p in &mesh.vertices {
        let _ = writeln!(out, "v {:.17e} {:.17e}", p[0], p[1]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "t {} {} {}", t[0] + offset, t[1] + offset, t[2] + offset);
    }
}

fn build_edges(triangles: &[[usize; 3]]) -> Vec<Edge> {
    let mut index: HashMap<(usize, usize), usize> = HashMap::with_capacity(triangles.len() * 2);
    let mut edges: Vec<Edge> = Vec::with_capacity(triangles.len() * 2);
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            match index.get(&key) {
                Some(&e) => edges[e].triangles[1] = t,
                None => {
                    index.insert(key, edges.len());
                    edges.push(Edge {
                        vertices: [key.0, key.1],
                        triangles: [t, usize::MAX],
                    });
                }
            }
        }
    }
    edges
}

fn build_stars(num_vertices: usize, triangles: &[[usize; 3]]) -> VertexStars {
    let mut counts = vec![0usize; num_vertices + 1];
    for tri in triangles {
        for &v in tri {
            counts[v + 1] += 1;
        }
    }
    for k in 0..num_vertices {
        counts[k + 1] += counts[k];
    }
    let mut fill = counts.clone();
    let mut list = vec![0usize; counts[num_vertices]];
    for (t, tri) in triangles.iter().enumerate() {
        for &v in tri {
            list[fill[v]] = t;
            fill[v] += 1;
        }
    }
    VertexStars {
        offsets: counts,
        triangles: list,
    }
}

pub fn signed_area(p: &[Point; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
}

pub fn barycentric(p: &[Point; 3], x: Point) -> [f64; 3] {
    let area = signed_area(p);
    let l0 = signed_area(&[x, p[1], p[2]]) / area;
    let l1 = signed_area(&[p[0], x, p[2]]) / area;
    [l0, l1, 1.0 - l0 - l1]
}

/// Uniform right-triangle mesh of `domain` with `n` cells per unit length.
pub fn build_uniform_tri_mesh(domain: Domain, n: usize) -> Result<TriMesh> {
    domain.check_resolution(n)?;
    Ok(TriMesh::structured(n, domain, |i, j| {
        domain.cell_inside(n, i as isize, j as isize)
    }))
}

/// Side of the interface a fine triangle or DOF belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Omega1,
    Omega2,
}

/// A fine edge on the interface with its two adjacent fine triangles.
#[derive(Clone, Debug)]
pub struct InterfaceEdge {
    pub endpoints: [Point; 2],
    /// Triangle index in the fine Omega_1 mesh.
    pub omega1_triangle: usize,
    /// Triangle index in the fine Omega_2 mesh.
    pub omega2_triangle: usize,
    /// Endpoint vertex indices in the fine Omega_1 mesh.
    pub omega1_vertices: [usize; 2],
    /// Endpoint vertex indices in the fine Omega_2 mesh.
    pub omega2_vertices: [usize; 2],
    /// Unit normal pointing from Omega_1 into Omega_2.
    pub normal: Point,
    pub length: f64,
    /// Index into [`DomainPartition::gamma_coarse`].
    pub coarse_segment: usize,
}

/// A coarse edge on the interface.
#[derive(Clone, Debug)]
pub struct CoarseSegment {
    pub endpoints: [Point; 2],
    /// Triangle index in the coarse Omega_2 mesh.
    pub omega2_triangle: usize,
    pub normal: Point,
    pub length: f64,
    /// Fine interface edges tiling this segment, in order of construction.
    pub fine_edges: Vec<usize>,
}

/// Nested fine/coarse meshes of the domain split into a fine-only region
/// `Omega_1` and its complement `Omega_2`, plus interface topology.
#[derive(Clone, Debug)]
pub struct DomainPartition {
    pub domain: Domain,
    pub omega1_region: Region,
    /// Fine mesh size `h`.
    pub h: f64,
    /// Coarse mesh size `H`.
    pub coarse_h: f64,
    pub fine_omega1: TriMesh,
    pub fine_omega2: TriMesh,
    pub coarse_omega2: TriMesh,
    /// Fine interface edges `Gamma_h`.
    pub gamma_fine: Vec<InterfaceEdge>,
    /// Coarse interface segments `Gamma_H`.
    pub gamma_coarse: Vec<CoarseSegment>,
    /// Fine Omega_2 triangle -> containing coarse Omega_2 triangle.
    pub parent: Vec<usize>,
    /// Coarse Omega_2 triangle -> fine Omega_2 triangles it contains.
    pub children: Vec<Vec<usize>>,
    /// Coarse Omega_2 triangle -> interface segments on its boundary.
    pub coarse_segments_of: Vec<Vec<usize>>,
}

fn dyadic_resolution(size: f64, what: &str) -> Result<usize> {
    if !(size > 0.0 && size < 1.0 + 1e-12) {
        return Err(Error::MeshSizes(format!("{what} = {size} is not in (0, 1]")));
    }
    let n = (1.0 / size).round();
    if ((1.0 / size) - n).abs() > 1e-9 || !(n as usize).is_power_of_two() {
        return Err(Error::MeshSizes(format!("{what} = {size} is not of the form 2^-k")));
    }
    Ok(n as usize)
}

/// Builds the nested partition for `omega1_region` with coarse size `coarse_h`
/// and fine size `h`.
pub fn partition_domain(
    domain: Domain,
    omega1_region: Region,
    coarse_h: f64,
    h: f64,
) -> Result<DomainPartition> {
    let nc = dyadic_resolution(coarse_h, "H")?;
    let nf = dyadic_resolution(h, "h")?;
    if nf <= nc {
        return Err(Error::MeshSizes(format!(
            "fine size h = {h} must be smaller than coarse size H = {coarse_h}"
        )));
    }
    domain.check_resolution(nc)?;
    for r in &omega1_region.rects {
        if !r.is_aligned(nc) {
            return Err(Error::NotAligned(format!(
                "rectangle ({}, {})-({}, {}) is not on the H = {coarse_h} grid",
                r.x0, r.y0, r.x1, r.y1
            )));
        }
    }
    let ratio = nf / nc;
    let hc = 1.0 / nc as f64;
    let coarse_in_omega1 = |i: usize, j: usize| {
        omega1_region.contains([(i as f64 + 0.5) * hc, (j as f64 + 0.5) * hc])
    };
    let fine_side = |i: usize, j: usize| -> Option<Side> {
        if !domain.cell_inside(nf, i as isize, j as isize) {
            return None;
        }
        Some(if coarse_in_omega1(i / ratio, j / ratio) {
            Side::Omega1
        } else {
            Side::Omega2
        })
    };

    let fine_omega1 = TriMesh::structured(nf, domain, |i, j| fine_side(i, j) == Some(Side::Omega1));
    let fine_omega2 = TriMesh::structured(nf, domain, |i, j| fine_side(i, j) == Some(Side::Omega2));
    let coarse_omega2 = TriMesh::structured(nc, domain, |i, j| {
        domain.cell_inside(nc, i as isize, j as isize) && !coarse_in_omega1(i, j)
    });

    // Nested parent map: a fine triangle lies in the lower coarse triangle
    // exactly when its centroid is below the coarse cell diagonal.
    let mut parent = Vec::with_capacity(fine_omega2.num_triangles());
    let mut children = vec![Vec::new(); coarse_omega2.num_triangles()];
    for t in 0..fine_omega2.num_triangles() {
        let [i, j] = fine_omega2.cells[t / 2];
        let (ci, cj) = (i / ratio, j / ratio);
        let k = coarse_omega2
            .cell_at(ci, cj)
            .expect("fine Omega_2 cell must lie in a coarse Omega_2 cell");
        let c = fine_omega2.centroid(t);
        let lx = c[0] * nc as f64 - ci as f64;
        let ly = c[1] * nc as f64 - cj as f64;
        let coarse_t = if ly < lx { 2 * k } else { 2 * k + 1 };
        parent.push(coarse_t);
        children[coarse_t].push(t);
    }

    // Coarse interface segments.
    let mut gamma_coarse = Vec::new();
    let mut segment_index: HashMap<(bool, usize, usize), usize> = HashMap::new();
    let coarse_side = |i: isize, j: isize| -> Option<Side> {
        if !domain.cell_inside(nc, i, j) {
            return None;
        }
        Some(if coarse_in_omega1(i as usize, j as usize) {
            Side::Omega1
        } else {
            Side::Omega2
        })
    };
    for_each_lattice_edge(nc, |vertical, line, pos, a, b| {
        let (sa, sb) = (coarse_side(a.0, a.1), coarse_side(b.0, b.1));
        let (Some(sa), Some(sb)) = (sa, sb) else {
            return;
        };
        if sa == sb {
            return;
        }
        // `a` is the cell left of / below the edge.
        let omega2_cell = if sa == Side::Omega2 { a } else { b };
        let k = coarse_omega2
            .cell_at(omega2_cell.0 as usize, omega2_cell.1 as usize)
            .unwrap();
        let omega2_triangle = edge_triangle(k, vertical, sa == Side::Omega2);
        let (endpoints, normal) = edge_geometry(nc, vertical, line, pos, sa == Side::Omega1);
        segment_index.insert((vertical, line, pos), gamma_coarse.len());
        gamma_coarse.push(CoarseSegment {
            endpoints,
            omega2_triangle,
            normal,
            length: hc,
            fine_edges: Vec::new(),
        });
    });

    // Fine interface edges, mapped onto their coarse segments.
    let mut gamma_fine = Vec::new();
    let hf = 1.0 / nf as f64;
    for_each_lattice_edge(nf, |vertical, line, pos, a, b| {
        let side = |c: (isize, isize)| {
            if c.0 < 0 || c.1 < 0 {
                None
            } else {
                fine_side(c.0 as usize, c.1 as usize)
            }
        };
        let (Some(sa), Some(sb)) = (side(a), side(b)) else {
            return;
        };
        if sa == sb {
            return;
        }
        let (c1, c2) = if sa == Side::Omega1 { (a, b) } else { (b, a) };
        let k1 = fine_omega1.cell_at(c1.0 as usize, c1.1 as usize).unwrap();
        let k2 = fine_omega2.cell_at(c2.0 as usize, c2.1 as usize).unwrap();
        let omega1_first = sa == Side::Omega1;
        let omega1_triangle = edge_triangle(k1, vertical, omega1_first);
        let omega2_triangle = edge_triangle(k2, vertical, !omega1_first);
        let (endpoints, normal) = edge_geometry(nf, vertical, line, pos, omega1_first);
        let lattice_ends = if vertical {
            [(line, pos), (line, pos + 1)]
        } else {
            [(pos, line), (pos + 1, line)]
        };
        let omega1_vertices = lattice_ends.map(|(i, j)| fine_omega1.vertex_at(i, j).unwrap());
        let omega2_vertices = lattice_ends.map(|(i, j)| fine_omega2.vertex_at(i, j).unwrap());
        let coarse_segment = segment_index[&(vertical, line / ratio, pos / ratio)];
        gamma_coarse[coarse_segment].fine_edges.push(gamma_fine.len());
        gamma_fine.push(InterfaceEdge {
            endpoints,
            omega1_triangle,
            omega2_triangle,
            omega1_vertices,
            omega2_vertices,
            normal,
            length: hf,
            coarse_segment,
        });
    });

    let mut coarse_segments_of = vec![Vec::new(); coarse_omega2.num_triangles()];
    for (s, seg) in gamma_coarse.iter().enumerate() {
        coarse_segments_of[seg.omega2_triangle].push(s);
    }

    Ok(DomainPartition {
        domain,
        omega1_region,
        h: hf,
        coarse_h: hc,
        fine_omega1,
        fine_omega2,
        coarse_omega2,
        gamma_fine,
        gamma_coarse,
        parent,
        children,
        coarse_segments_of,
    })
}

/// Visits every interior lattice edge as `(vertical, line, pos, cell_a, cell_b)`
/// where `cell_a` is left of (vertical) or below (horizontal) the edge.
fn for_each_lattice_edge(
    n: usize,
    mut visit: impl FnMut(bool, usize, usize, (isize, isize), (isize, isize)),
) {
    for line in 1..n {
        for pos in 0..n {
            let (l, p) = (line as isize, pos as isize);
            visit(true, line, pos, (l - 1, p), (l, p));
        }
    }
    for line in 1..n {
        for pos in 0..n {
            let (l, p) = (line as isize, pos as isize);
            visit(false, line, pos, (p, l - 1), (p, l));
        }
    }
}

/// Triangle of cell `k` carrying the given cell side. The lower triangle owns
/// the bottom and right sides, the upper one the top and left sides.
fn edge_triangle(k: usize, vertical: bool, cell_is_first: bool) -> usize {
    // cell_is_first: the cell is left of (vertical) / below (horizontal) the edge,
    // so the edge is its right / top side.
    match (vertical, cell_is_first) {
        (true, true) => 2 * k,      // right side -> lower
        (true, false) => 2 * k + 1, // left side -> upper
        (false, true) => 2 * k + 1, // top side -> upper
        (false, false) => 2 * k,    // bottom side -> lower
    }
}

fn edge_geometry(
    n: usize,
    vertical: bool,
    line: usize,
    pos: usize,
    omega1_first: bool,
) -> ([Point; 2], Point) {
    let h = 1.0 / n as f64;
    let s = if omega1_first { 1.0 } else { -1.0 };
    if vertical {
        let x = line as f64 * h;
        ([[x, pos as f64 * h], [x, (pos + 1) as f64 * h]], [s, 0.0])
    } else {
        let y = line as f64 * h;
        ([[pos as f64 * h, y], [(pos + 1) as f64 * h, y]], [0.0, s])
    }
}

/// Element patch `T_L`: the `level`-fold vertex-adjacency closure of a coarse
/// element within the coarse Omega_2 mesh.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    pub seed_element: usize,
    pub level: usize,
    /// Sorted coarse Omega_2 triangle indices.
    pub elements: Vec<usize>,
}

impl Patch {
    pub fn contains(&self, t: usize) -> bool {
        self.elements.binary_search(&t).is_ok()
    }
}

/// Interface combined element: a coarse interface element together with the
/// fine Omega_1 triangles attached to its interface segments.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedElement {
    pub coarse_element: usize,
    /// Fine Omega_1 triangles whose interface edge lies on `T ∩ Γ`.
    pub fine_omega1_elements: Vec<usize>,
    /// Coarse interface segments making up `T ∩ Γ`.
    pub gamma_segments: Vec<usize>,
}

impl DomainPartition {
    pub fn has_interface(&self) -> bool {
        !self.gamma_fine.is_empty()
    }

    pub fn interface_length(&self) -> f64 {
        self.gamma_fine.iter().map(|e| e.length).sum()
    }

    /// Coarse elements with a positive-length interface segment.
    pub fn interface_elements(&self) -> Vec<usize> {
        (0..self.coarse_omega2.num_triangles())
            .filter(|&t| !self.coarse_segments_of[t].is_empty())
            .collect()
    }

    pub fn element_patch(&self, seed: usize, level: usize) -> Patch {
        let mesh = &self.coarse_omega2;
        let mut inside = vec![false; mesh.num_triangles()];
        inside[seed] = true;
        let mut frontier = vec![seed];
        for _ in 0..level {
            let mut next = Vec::new();
            for &t in &frontier {
                for &v in &mesh.triangles[t] {
                    for &u in mesh.stars().of(v) {
                        if !inside[u] {
                            inside[u] = true;
                            next.push(u);
                        }
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        Patch {
            seed_element: seed,
            level,
            elements: (0..inside.len()).filter(|&t| inside[t]).collect(),
        }
    }

    pub fn combined_element(&self, t: usize) -> Result<CombinedElement> {
        let segments = &self.coarse_segments_of[t];
        if segments.is_empty() {
            return Err(Error::NotInterfaceElement(t));
        }
        let mut fine = Vec::new();
        for &s in segments {
            for &e in &self.gamma_coarse[s].fine_edges {
                fine.push(self.gamma_fine[e].omega1_triangle);
            }
        }
        Ok(CombinedElement {
            coarse_element: t,
            fine_omega1_elements: fine,
            gamma_segments: segments.clone(),
        })
    }

    /// Fine interface edges lying on the boundary of coarse element `t`.
    pub fn fine_interface_edges_of(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        self.coarse_segments_of[t]
            .iter()
            .flat_map(move |&s| self.gamma_coarse[s].fine_edges.iter().copied())
    }

    /// Text export of both fine meshes (Omega_1 vertices first) and the
    /// interface: `g i j side` with `side` 1 for the Omega_1 copy of an
    /// interface edge and 2 for the Omega_2 copy.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let offset = self.fine_omega1.num_vertices();
        write_mesh_lines(&mut out, &self.fine_omega1, 0);
        write_mesh_lines(&mut out, &self.fine_omega2, offset);
        for e in &self.gamma_fine {
            let [a, b] = e.omega1_vertices;
            let _ = writeln!(out, "g {a} {b} 1");
            let [c, d] = e.omega2_vertices;
            let _ = writeln!(out, "g {} {} 2", c + offset, d + offset);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex1_partition(coarse_h: f64, h: f64) -> DomainPartition {
        let region = Region::from_rects(vec![Rect::new(0.25, 0.25, 0.375, 0.375).unwrap()]);
        partition_domain(Domain::UnitSquare, region, coarse_h, h).unwrap()
    }

    #[test]
    fn uniform_mesh_counts() {
        let m = build_uniform_tri_mesh(Domain::UnitSquare, 1).unwrap();
        assert_eq!((m.num_vertices(), m.num_triangles()), (4, 2));
        let m = build_uniform_tri_mesh(Domain::UnitSquare, 2).unwrap();
        assert_eq!((m.num_vertices(), m.num_triangles()), (9, 8));
        let m = build_uniform_tri_mesh(Domain::LShape, 2).unwrap();
        assert_eq!((m.num_vertices(), m.num_triangles()), (8, 6));
        // Closed forms for general n.
        for n in [2usize, 4, 8] {
            let sq = build_uniform_tri_mesh(Domain::UnitSquare, n).unwrap();
            assert_eq!(sq.num_vertices(), (n + 1) * (n + 1));
            assert_eq!(sq.num_triangles(), 2 * n * n);
            let l = build_uniform_tri_mesh(Domain::LShape, n).unwrap();
            assert_eq!(l.num_triangles(), 2 * (3 * n * n / 4));
            assert_eq!(l.num_vertices(), (n + 1) * (n + 1) - (n / 2) * (n / 2));
        }
    }

    #[test]
    fn resolution_errors() {
        assert!(build_uniform_tri_mesh(Domain::UnitSquare, 0).is_err());
        assert!(build_uniform_tri_mesh(Domain::LShape, 3).is_err());
    }

    #[test]
    fn triangles_positive_and_edges_consistent() {
        let m = build_uniform_tri_mesh(Domain::LShape, 8).unwrap();
        for t in 0..m.num_triangles() {
            assert!(m.area(t) > 0.0);
        }
        let mut boundary_len = 0.0;
        for e in &m.edges {
            if e.is_boundary() {
                let a = m.vertices[e.vertices[0]];
                let b = m.vertices[e.vertices[1]];
                boundary_len += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                assert!(m.on_boundary[e.vertices[0]] && m.on_boundary[e.vertices[1]]);
            }
        }
        // Perimeter of the L-shape is 4.
        assert!((boundary_len - 4.0).abs() < 1e-12);
    }

    #[test]
    fn partition_example_geometry() {
        let p = ex1_partition(0.125, 1.0 / 128.0);
        assert!((p.interface_length() - 0.5).abs() < 1e-12);
        assert_eq!(p.gamma_coarse.len(), 4);
        for seg in &p.gamma_coarse {
            assert_eq!(seg.fine_edges.len(), 16);
        }
    }

    #[test]
    fn one_refinement_level_maps_two_fine_edges() {
        let p = ex1_partition(0.125, 0.0625);
        for seg in &p.gamma_coarse {
            assert_eq!(seg.fine_edges.len(), 2);
        }
    }

    #[test]
    fn partition_rejects_bad_input() {
        let region = Region::from_rects(vec![Rect::new(0.25, 0.25, 0.375, 0.375).unwrap()]);
        let e = partition_domain(Domain::UnitSquare, region.clone(), 0.25, 1.0 / 64.0);
        assert!(matches!(e, Err(Error::NotAligned(_))));
        let e = partition_domain(Domain::UnitSquare, region.clone(), 0.125, 0.125);
        assert!(matches!(e, Err(Error::MeshSizes(_))));
        let e = partition_domain(Domain::UnitSquare, region, 0.125, 0.03);
        assert!(matches!(e, Err(Error::MeshSizes(_))));
    }

    #[test]
    fn nestedness_and_tiling() {
        let p = ex1_partition(0.125, 1.0 / 32.0);
        let tol = 1e-12 * p.coarse_h;
        for (t, &c) in p.parent.iter().enumerate() {
            let coarse = p.coarse_omega2.triangle_points(c);
            for v in p.fine_omega2.triangle_points(t) {
                let b = barycentric(&coarse, v);
                assert!(b.iter().all(|&x| x >= -tol), "fine {t} escapes coarse {c}");
            }
        }
        for seg in &p.gamma_coarse {
            let total: f64 = seg.fine_edges.iter().map(|&e| p.gamma_fine[e].length).sum();
            assert!((total - seg.length).abs() < 1e-12);
        }
        for e in &p.gamma_fine {
            assert!((e.normal[0].hypot(e.normal[1]) - 1.0).abs() < 1e-15);
            // Normal points into Omega_2: the Omega_2 centroid is on the positive side.
            let mid = [
                0.5 * (e.endpoints[0][0] + e.endpoints[1][0]),
                0.5 * (e.endpoints[0][1] + e.endpoints[1][1]),
            ];
            let c2 = p.fine_omega2.centroid(e.omega2_triangle);
            let c1 = p.fine_omega1.centroid(e.omega1_triangle);
            let d2 = (c2[0] - mid[0]) * e.normal[0] + (c2[1] - mid[1]) * e.normal[1];
            let d1 = (c1[0] - mid[0]) * e.normal[0] + (c1[1] - mid[1]) * e.normal[1];
            assert!(d2 > 0.0 && d1 < 0.0);
            // Both triangles carry the edge.
            for (mesh, t, vs) in [
                (&p.fine_omega1, e.omega1_triangle, e.omega1_vertices),
                (&p.fine_omega2, e.omega2_triangle, e.omega2_vertices),
            ] {
                for v in vs {
                    assert!(mesh.triangles[t].contains(&v));
                }
            }
        }
    }

    #[test]
    fn lshape_fine_region() {
        let region = Region::from_rects(vec![Rect::new(0.375, 0.375, 0.625, 0.625).unwrap()]);
        let p = partition_domain(Domain::LShape, region, 1.0 / 32.0, 1.0 / 256.0).unwrap();
        // Omega_1 is an L-shaped hexagon; two of its six sides lie on the
        // reentrant edges of the domain boundary, the other four form Gamma.
        assert!((p.interface_length() - 0.75).abs() < 1e-12);
        assert_eq!(p.gamma_coarse.len(), 24);
        let area1: f64 = (0..p.fine_omega1.num_triangles()).map(|t| p.fine_omega1.area(t)).sum();
        assert!((area1 - 3.0 / 64.0).abs() < 1e-12);
        let straight_lines: std::collections::BTreeSet<(bool, i64)> = p
            .gamma_coarse
            .iter()
            .map(|s| {
                let vertical = s.endpoints[0][0] == s.endpoints[1][0];
                let c = if vertical { s.endpoints[0][0] } else { s.endpoints[0][1] };
                (vertical, (c * 64.0).round() as i64)
            })
            .collect();
        assert_eq!(straight_lines.len(), 4);
    }

    /// Brute-force patch: coarse triangles sharing a vertex with the previous
    /// level, by coordinate comparison.
    fn brute_patch(mesh: &TriMesh, seed: usize, level: usize) -> Vec<usize> {
        let mut set = vec![seed];
        for _ in 0..level {
            let pts: Vec<Point> = set.iter().flat_map(|&t| mesh.triangle_points(t)).collect();
            set = (0..mesh.num_triangles())
                .filter(|&u| {
                    mesh.triangle_points(u)
                        .iter()
                        .any(|q| pts.iter().any(|p| (p[0] - q[0]).abs() + (p[1] - q[1]).abs() < 1e-14))
                })
                .collect();
        }
        set
    }

    #[test]
    fn patches() {
        let p = partition_domain(Domain::UnitSquare, Region::empty(), 0.125, 1.0 / 16.0).unwrap();
        let mesh = &p.coarse_omega2;
        let interior = 2 * mesh.cell_at(3, 3).unwrap();
        assert_eq!(p.element_patch(interior, 0).elements, vec![interior]);
        assert_eq!(p.element_patch(interior, 1).elements.len(), 13);
        assert_eq!(p.element_patch(interior + 1, 1).elements.len(), 13);
        for seed in [0, interior, mesh.num_triangles() - 1] {
            let mut prev = p.element_patch(seed, 0).elements;
            for level in 1..5 {
                let patch = p.element_patch(seed, level);
                assert_eq!(patch.elements, brute_patch(mesh, seed, level));
                assert!(prev.iter().all(|t| patch.contains(*t)));
                prev = patch.elements;
            }
            assert_eq!(p.element_patch(seed, 20).elements.len(), mesh.num_triangles());
        }
    }

    #[test]
    fn combined_elements() {
        let p = ex1_partition(0.125, 1.0 / 128.0);
        let mut total = 0.0;
        for t in 0..p.coarse_omega2.num_triangles() {
            match p.combined_element(t) {
                Ok(ce) => {
                    assert_eq!(ce.fine_omega1_elements.len(), 16);
                    total += ce.gamma_segments.iter().map(|&s| p.gamma_coarse[s].length).sum::<f64>();
                }
                Err(Error::NotInterfaceElement(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
        assert!((total - p.interface_length()).abs() < 1e-12);
    }

    #[test]
    fn deterministic_construction() {
        let a = ex1_partition(0.125, 1.0 / 32.0);
        let b = ex1_partition(0.125, 1.0 / 32.0);
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(a.parent, b.parent);
    }

    #[test]
    fn locate_points() {
        let m = build_uniform_tri_mesh(Domain::UnitSquare, 4).unwrap();
        let (t, b) = m.locate([0.25, 0.5]).unwrap();
        let v = m.vertex_at(1, 2).unwrap();
        let k = m.triangles[t].iter().position(|&x| x == v).unwrap();
        assert!((b[k] - 1.0).abs() < 1e-12);
        assert!(m.locate([1.5, 0.5]).is_none());
    }
}
