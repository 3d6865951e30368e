//! Maps between the fine space and the fine/coarse space: coarse-to-fine
//! prolongation, the Clément quasi-interpolation on `Omega_2`, and the
//! kernel constraints used by the corrector problems.

use crate::assembly::{assemble_omega2_mass, element_mass, DofLayout};
use crate::error::{Error, Result};
use crate::mesh::{barycentric, signed_area, DomainPartition, Patch};
use crate::sparse::{dense_singular_values, CsrMatrix, SpdFactor, TripletBuilder};

/// Fine and coarse layouts of one partition together with the operators
/// linking them.
#[derive(Clone, Debug)]
pub struct ClementWeights {
    pub fine: DofLayout,
    pub coarse: DofLayout,
    /// Embedding of the fine/coarse space into the fine space
    /// (`fine.len() x coarse.len()`): identity on `Omega_1`, nodal values of
    /// coarse hats on `Omega_2`.
    pub prolongation: CsrMatrix,
    /// Row `z`: `(φᵢ, Φ_z)_{Omega_2}` for every fine unknown `i`
    /// (`coarse.n_omega2 x fine.len()`).
    pub pairings: CsrMatrix,
    /// `(1, Φ_z)_{Omega_2}` per coarse unknown.
    pub denominators: Vec<f64>,
}

/// Embedding of coarse `Omega_2` hats into the fine space, with the
/// `Omega_1` block as identity.
pub fn prolongation(partition: &DomainPartition, fine: &DofLayout, coarse: &DofLayout) -> CsrMatrix {
    let mut b = TripletBuilder::new(fine.len(), coarse.len());
    for (v, d) in fine.omega1.iter().enumerate() {
        if let (Some(i), Some(j)) = (d, coarse.omega1[v]) {
            b.add(*i, j, 1.0);
        }
    }
    let (fm, cm) = (&partition.fine_omega2, &partition.coarse_omega2);
    for (v, d) in fine.omega2.iter().enumerate() {
        let Some(i) = *d else { continue };
        let t = fm.stars().of(v)[0];
        let ct = partition.parent[t];
        let bary = barycentric(&cm.triangle_points(ct), fm.vertices[v]);
        for (k, &cv) in cm.triangles[ct].iter().enumerate() {
            let w = bary[k];
            if w.abs() > 1e-12 {
                if let Some(j) = coarse.omega2[cv] {
                    b.add(i, j, w);
                }
            }
        }
    }
    b.build()
}

impl ClementWeights {
    pub fn new(partition: &DomainPartition) -> Result<Self> {
        let fine = DofLayout::fine(partition);
        let coarse = DofLayout::coarse(partition);
        let prolongation = prolongation(partition, &fine, &coarse);
        let mass = assemble_omega2_mass(partition, &fine)?;
        // Rows of Eᵀ M for the coarse Omega_2 unknowns.
        let full = prolongation.transpose().matmul(mass.csr());
        let rows: Vec<usize> = coarse.omega2_range().collect();
        let ident: Vec<Option<usize>> = (0..fine.len()).map(Some).collect();
        let pairings = full.select(&rows, &ident, fine.len());
        let cm = &partition.coarse_omega2;
        let mut denominators = vec![0.0; coarse.n_omega2];
        for t in 0..cm.num_triangles() {
            let w = signed_area(&cm.triangle_points(t)) / 3.0;
            for &v in &cm.triangles[t] {
                if let Some(z) = coarse.omega2[v] {
                    denominators[z - coarse.n_omega1] += w;
                }
            }
        }
        Ok(Self {
            fine,
            coarse,
            prolongation,
            pairings,
            denominators,
        })
    }

    /// Coarse `Omega_2` values `(v, Φ_z)/(1, Φ_z)` of a fine-space vector.
    pub fn clement_interpolate(&self, v: &[f64]) -> Vec<f64> {
        self.pairings
            .mul_vec(v)
            .into_iter()
            .zip(&self.denominators)
            .map(|(p, d)| p / d)
            .collect()
    }

    /// The combined quasi-interpolation: `Omega_1` block copied, `Omega_2`
    /// block Clément-interpolated.
    pub fn apply_c_hh(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coarse.len());
        out.extend_from_slice(&v[..self.fine.n_omega1]);
        out.extend(self.clement_interpolate(v));
        out
    }

    /// Embeds a fine/coarse vector into the fine space.
    pub fn embed(&self, u: &[f64]) -> Vec<f64> {
        self.prolongation.mul_vec(u)
    }

    /// Singular values of the combined quasi-interpolation restricted to the
    /// fine/coarse space. Its `Omega_1` block is the identity, so only the
    /// coarse block is decomposed.
    pub fn stability_singular_values(&self) -> Result<Vec<f64>> {
        let n1 = self.coarse.n_omega1;
        let nc = self.coarse.n_omega2;
        let mut rows = vec![vec![0.0; nc]; nc];
        for j in 0..nc {
            let mut e = vec![0.0; self.coarse.len()];
            e[n1 + j] = 1.0;
            let c = self.clement_interpolate(&self.embed(&e));
            for (i, row) in rows.iter_mut().enumerate() {
                row[j] = c[i];
            }
        }
        let mut s = dense_singular_values(&rows)?;
        if n1 > 0 {
            s.push(1.0);
        }
        Ok(s)
    }
}

/// Identity projection onto the fine `Omega_1` space.
pub fn l2_project_fine(v: &[f64]) -> Vec<f64> {
    v.to_vec()
}

/// L² projection onto the fine `Omega_1` space of a function given by its
/// pairings `(f, φᵢ)` against the `Omega_1` hats (ordered by unknown).
pub fn l2_project_fine_from_pairings(
    partition: &DomainPartition,
    layout: &DofLayout,
    pairings: &[f64],
) -> Result<Vec<f64>> {
    if pairings.len() != layout.n_omega1 {
        return Err(Error::LayoutMismatch("one pairing per Omega_1 unknown expected".into()));
    }
    let mesh = &partition.fine_omega1;
    let mut b = TripletBuilder::new(layout.n_omega1, layout.n_omega1);
    for t in 0..mesh.num_triangles() {
        let m = element_mass(&mesh.triangle_points(t));
        let tri = mesh.triangles[t];
        for a in 0..3 {
            let Some(i) = layout.omega1[tri[a]] else { continue };
            for c in 0..3 {
                if let Some(j) = layout.omega1[tri[c]] {
                    b.add(i, j, m[a][c]);
                }
            }
        }
    }
    Ok(SpdFactor::new(&b.build(), "Omega_1 mass matrix")?.solve(pairings))
}

/// Kernel constraints of the corrector problems.
#[derive(Clone, Debug)]
pub struct ConstraintMatrix {
    /// Coarse unknowns (offset into the coarse layout's `Omega_2` block).
    pub rows: Vec<usize>,
    /// Fine unknowns carrying the corrector.
    pub cols: Vec<usize>,
    /// `rows.len() x cols.len()` block of the pairings.
    pub matrix: CsrMatrix,
}

/// Fine `Omega_2` unknowns strictly inside the patch: every fine `Omega_2`
/// triangle around the vertex belongs to a patch element. Interface vertices
/// are kept when their `Omega_2` star lies in the patch.
pub fn patch_unknowns(partition: &DomainPartition, layout: &DofLayout, patch: &Patch) -> Vec<usize> {
    let mut inside = vec![false; partition.coarse_omega2.num_triangles()];
    for &t in &patch.elements {
        inside[t] = true;
    }
    let fm = &partition.fine_omega2;
    let mut out: Vec<usize> = layout
        .omega2
        .iter()
        .enumerate()
        .filter_map(|(v, d)| {
            let i = (*d)?;
            fm.stars().of(v).iter().all(|&t| inside[partition.parent[t]]).then_some(i)
        })
        .collect();
    out.sort_unstable();
    out
}

/// Constraint rows for the whole of `Omega_2`, or for one patch. Patch rows
/// are the coarse nodes whose hat support meets the patch, with rows that
/// vanish on the patch unknowns dropped.
pub fn constraint_rows(
    partition: &DomainPartition,
    weights: &ClementWeights,
    patch: Option<&Patch>,
) -> ConstraintMatrix {
    let fine = &weights.fine;
    let (rows, cols) = match patch {
        None => (
            (0..weights.coarse.n_omega2).collect::<Vec<_>>(),
            fine.omega2_range().collect::<Vec<_>>(),
        ),
        Some(p) => {
            let cm = &partition.coarse_omega2;
            let mut rows = Vec::new();
            for (v, d) in weights.coarse.omega2.iter().enumerate() {
                if let Some(z) = d {
                    if cm.stars().of(v).iter().any(|&t| p.contains(t)) {
                        rows.push(z - weights.coarse.n_omega1);
                    }
                }
            }
            (rows, patch_unknowns(partition, fine, p))
        }
    };
    let mut col_map = vec![None; fine.len()];
    for (k, &c) in cols.iter().enumerate() {
        col_map[c] = Some(k);
    }
    let full = weights.pairings.select(&rows, &col_map, cols.len());
    let keep: Vec<usize> = (0..rows.len())
        .filter(|&r| full.row(r).any(|(_, v)| v != 0.0))
        .collect();
    let ident: Vec<Option<usize>> = (0..cols.len()).map(Some).collect();
    ConstraintMatrix {
        rows: keep.iter().map(|&r| rows[r]).collect(),
        matrix: full.select(&keep, &ident, cols.len()),
        cols,
    }
}
