//! Scalar diffusion coefficients: analytic periodic formulas and
//! piecewise-constant grid fields.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::{Point, Rect, TriMesh};

/// Analytic periodic coefficient formulas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PeriodicFormula {
    /// `(2+1.8 sin(2πx₁/ε))/(2+1.8 cos(2πx₂/ε)) + (2+1.8 sin(2πx₂/ε))/(2+1.8 sin(2πx₁/ε))`
    Oscillating,
    /// `1/((2+1.5 sin(2πx₁/ε))(2+1.5 sin(2πx₂/ε)))`
    Well,
}

/// Piecewise-constant field on an `n x n` cell grid over the unit square,
/// stored row-major (`values[j * n + i]` is cell `(i, j)`).
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub resolution: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CoefficientField {
    Constant(f64),
    Periodic { formula: PeriodicFormula, epsilon: f64 },
    Grid(GridField),
}

pub fn eval_periodic_a1(x: Point, epsilon: f64) -> f64 {
    let s1 = (2.0 * PI * x[0] / epsilon).sin();
    let s2 = (2.0 * PI * x[1] / epsilon).sin();
    let c2 = (2.0 * PI * x[1] / epsilon).cos();
    (2.0 + 1.8 * s1) / (2.0 + 1.8 * c2) + (2.0 + 1.8 * s2) / (2.0 + 1.8 * s1)
}

pub fn eval_periodic_awell(x: Point, epsilon: f64) -> f64 {
    let s1 = (2.0 * PI * x[0] / epsilon).sin();
    let s2 = (2.0 * PI * x[1] / epsilon).sin();
    1.0 / ((2.0 + 1.5 * s1) * (2.0 + 1.5 * s2))
}

impl GridField {
    pub fn constant(resolution: usize, value: f64) -> Self {
        Self {
            resolution,
            values: vec![value; resolution * resolution],
        }
    }

    pub fn cell_value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.resolution + i]
    }

    pub fn eval(&self, x: Point) -> f64 {
        let n = self.resolution;
        let i = ((x[0] * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize;
        let j = ((x[1] * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize;
        self.cell_value(i, j)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn contrast(&self) -> f64 {
        let (lo, hi) = self.min_max();
        hi / lo
    }

    /// Header line `n`, then `n²` values in row-major order.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 24);
        let _ = writeln!(out, "{}", self.resolution);
        for v in &self.values {
            let _ = writeln!(out, "{v:.17e}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let n: usize = tokens
            .next()
            .ok_or_else(|| Error::Parse("empty grid field".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("grid field header: {e}")))?;
        let values = tokens
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("grid value {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if n == 0 || values.len() != n * n {
            return Err(Error::Parse(format!(
                "grid field of resolution {n} needs {} values, found {}",
                n * n,
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Coefficient("grid values must be finite and positive".into()));
        }
        Ok(Self {
            resolution: n,
            values,
        })
    }
}

impl CoefficientField {
    pub fn a1(epsilon: f64) -> Self {
        Self::Periodic {
            formula: PeriodicFormula::Oscillating,
            epsilon,
        }
    }

    pub fn awell(epsilon: f64) -> Self {
        Self::Periodic {
            formula: PeriodicFormula::Well,
            epsilon,
        }
    }

    pub fn eval(&self, x: Point) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Periodic {
                formula: PeriodicFormula::Oscillating,
                epsilon,
            } => eval_periodic_a1(x, *epsilon),
            Self::Periodic {
                formula: PeriodicFormula::Well,
                epsilon,
            } => eval_periodic_awell(x, *epsilon),
            Self::Grid(g) => g.eval(x),
        }
    }
}

/// Parameters of a log-normal random field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomFieldParams {
    /// Variance of the log-permeability.
    pub sigma2: f64,
    pub l1: f64,
    pub l2: f64,
    pub resolution: usize,
    pub seed: u64,
}

impl RandomFieldParams {
    fn validate(&self) -> Result<()> {
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Coefficient(format!("sigma2 = {} must be >= 0", self.sigma2)));
        }
        for l in [self.l1, self.l2] {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::Coefficient(format!("correlation length {l} not in (0, 1)")));
            }
        }
        if (self.resolution as f64) < 1.0 / self.l1.min(self.l2) {
            return Err(Error::Coefficient(format!(
                "resolution {} is too coarse for correlation length {}",
                self.resolution,
                self.l1.min(self.l2)
            )));
        }
        Ok(())
    }
}

/// Standard normal draws by the Box-Muller transform on ChaCha8 uniforms.
fn gaussian_stream(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count + 1);
    while out.len() < count {
        // 1 - u keeps the logarithm finite.
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        out.push(r * (2.0 * PI * u2).cos());
        out.push(r * (2.0 * PI * u2).sin());
    }
    out.truncate(count);
    out
}

/// Log-normal field by the moving ellipse average: i.i.d. normals on the
/// grid are averaged over the ellipse `((x-x0)/l1)² + ((y-y0)/l2)² <= 1`
/// (periodic wrap), rescaled to mean 0 and variance `sigma2`, then
/// exponentiated.
pub fn generate_lognormal_field(params: &RandomFieldParams) -> Result<GridField> {
    params.validate()?;
    let n = params.resolution;
    if params.sigma2 == 0.0 {
        return Ok(GridField::constant(n, 1.0));
    }
    let raw = gaussian_stream(params.seed, n * n);
    let h = 1.0 / n as f64;
    let ri = (params.l1 / h).floor() as isize;
    let rj = (params.l2 / h).floor() as isize;
    let mut offsets = Vec::new();
    for dj in -rj..=rj {
        for di in -ri..=ri {
            let x = di as f64 * h / params.l1;
            let y = dj as f64 * h / params.l2;
            if x * x + y * y <= 1.0 {
                offsets.push((di, dj));
            }
        }
    }
    let ni = n as isize;
    let mut smooth = vec![0.0; n * n];
    for j in 0..ni {
        for i in 0..ni {
            let mut s = 0.0;
            for &(di, dj) in &offsets {
                let a = (i + di).rem_euclid(ni);
                let b = (j + dj).rem_euclid(ni);
                s += raw[(b * ni + a) as usize];
            }
            smooth[(j * ni + i) as usize] = s / offsets.len() as f64;
        }
    }
    let count = smooth.len() as f64;
    let mean = smooth.iter().sum::<f64>() / count;
    let var = smooth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    let scale = (params.sigma2 / var).sqrt();
    let values = smooth.iter().map(|v| ((v - mean) * scale).exp()).collect();
    Ok(GridField {
        resolution: n,
        values,
    })
}

/// High-contrast layout: channels (value 1e5) over inclusions (8e4) over a
/// unit background.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChannelLayout {
    pub channel_rects: Vec<Rect>,
    pub inclusion_rects: Vec<Rect>,
}

pub const CHANNEL_VALUE: f64 = 1e5;
pub const INCLUSION_VALUE: f64 = 8e4;
pub const BACKGROUND_VALUE: f64 = 1.0;

impl ChannelLayout {
    /// Two horizontal channels of short rectangles at heights inside
    /// `(5/16, 3/8)` and `(11/16, 3/4)`, plus a lattice of small square
    /// inclusions away from the channel bands. Aligned to a 1/256 grid.
    pub fn two_channels() -> Self {
        let g = 1.0 / 256.0;
        let mut channel_rects = Vec::new();
        for (base, wobble) in [(86usize, [0isize, 1, 0, -1]), (182usize, [0, -1, 0, 1])] {
            for k in 0..16usize {
                let y0 = (base as isize + wobble[k % 4]) as f64 * g;
                channel_rects.push(Rect {
                    x0: (16 * k) as f64 * g,
                    x1: (16 * (k + 1)) as f64 * g,
                    y0,
                    y1: y0 + 2.0 * g,
                });
            }
        }
        let mut inclusion_rects = Vec::new();
        for a in 0..8usize {
            for b in 0..8usize {
                let cx = 32 * a + 15;
                let cy = 32 * b + 15;
                let y = cy as f64 * g;
                // Keep inclusions one coarse layer clear of the channel bands.
                let near_band = |lo: f64, hi: f64| y > lo - 0.0625 && y < hi + 0.0625;
                if near_band(0.3125, 0.375) || near_band(0.6875, 0.75) {
                    continue;
                }
                inclusion_rects.push(Rect {
                    x0: cx as f64 * g,
                    x1: (cx + 3) as f64 * g,
                    y0: cy as f64 * g,
                    y1: (cy + 3) as f64 * g,
                });
            }
        }
        Self {
            channel_rects,
            inclusion_rects,
        }
    }
}

pub fn build_channel_field(layout: &ChannelLayout, resolution: usize) -> Result<GridField> {
    if resolution == 0 {
        return Err(Error::Coefficient("resolution must be positive".into()));
    }
    let n = resolution as f64;
    let aligned = |v: f64| ((v * n) - (v * n).round()).abs() < 1e-9;
    for r in layout.channel_rects.iter().chain(&layout.inclusion_rects) {
        if ![r.x0, r.x1, r.y0, r.y1].iter().all(|&v| aligned(v)) {
            return Err(Error::Coefficient(format!(
                "rectangle ({}, {})-({}, {}) is not aligned to the {resolution} grid",
                r.x0, r.y0, r.x1, r.y1
            )));
        }
        if r.x0 < 0.0 || r.y0 < 0.0 || r.x1 > 1.0 || r.y1 > 1.0 {
            return Err(Error::Coefficient("rectangle leaves the unit square".into()));
        }
    }
    let mut values = vec![BACKGROUND_VALUE; resolution * resolution];
    for j in 0..resolution {
        for i in 0..resolution {
            let c = [(i as f64 + 0.5) / n, (j as f64 + 0.5) / n];
            let v = if layout.channel_rects.iter().any(|r| r.contains(c)) {
                CHANNEL_VALUE
            } else if layout.inclusion_rects.iter().any(|r| r.contains(c)) {
                INCLUSION_VALUE
            } else {
                BACKGROUND_VALUE
            };
            values[j * resolution + i] = v;
        }
    }
    Ok(GridField { resolution, values })
}

/// Per-triangle coefficient values keyed by the lattice triangle key of the
/// fine resolution (see [`TriMesh::triangle_key`]).
#[derive(Clone, Debug)]
pub struct ElementCoefficients {
    pub resolution: usize,
    values: Vec<f64>,
}

impl ElementCoefficients {
    /// Samples `field` at the barycenter of every lattice triangle of
    /// resolution `n`.
    pub fn sample(field: &CoefficientField, n: usize) -> Self {
        let h = 1.0 / n as f64;
        let mut values = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (x, y) = (i as f64 * h, j as f64 * h);
                values.push(field.eval([x + 2.0 * h / 3.0, y + h / 3.0]));
                values.push(field.eval([x + h / 3.0, y + 2.0 * h / 3.0]));
            }
        }
        Self {
            resolution: n,
            values,
        }
    }

    pub fn by_key(&self, key: usize) -> f64 {
        self.values[key]
    }

    pub fn on(&self, mesh: &TriMesh, t: usize) -> f64 {
        debug_assert_eq!(mesh.resolution, self.resolution);
        self.values[mesh.triangle_key(t)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Coefficient value at the barycenter of every triangle of `mesh`.
pub fn sample_per_element(field: &CoefficientField, mesh: &TriMesh) -> Vec<f64> {
    (0..mesh.num_triangles()).map(|t| field.eval(mesh.centroid(t))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uniform_tri_mesh, Domain};

    #[test]
    fn a1_values() {
        let expected = 2.0 / 3.8 + 1.0;
        assert!((eval_periodic_a1([0.0, 0.0], 0.2) - expected).abs() < 1e-15);
        assert!((expected - 1.526_315_789_473_684).abs() < 1e-14);
        let eps = 0.2;
        for p in [[0.13, 0.41], [0.37, 0.72], [0.05, 0.5]] {
            let a = eval_periodic_a1(p, eps);
            let b = eval_periodic_a1([p[0] + eps, p[1]], eps);
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Exhaustive scan of a 1000 x 1000 grid over one period.
    #[test]
    fn a1_range_scan() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..1000 {
            for j in 0..1000 {
                let v = eval_periodic_a1([i as f64 / 1000.0, j as f64 / 1000.0], 1.0);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        // (0.2/3.8) + (0.2/3.8) bounds the minimum from below.
        assert!(lo > 0.1 && lo < 1.0, "min {lo}");
        assert!(hi < 40.0, "max {hi}");
    }

    #[test]
    fn awell_values() {
        let eps = 1.0 / 64.0;
        assert!((eval_periodic_awell([0.0, 0.0], eps) - 0.25).abs() < 1e-15);
        let v = eval_periodic_awell([eps / 4.0, eps / 4.0], eps);
        assert!((v - 1.0 / 12.25).abs() < 1e-14);
        assert!((v - 0.081_632_653_061_224_49).abs() < 1e-12);
        let v = eval_periodic_awell([3.0 * eps / 4.0, 3.0 * eps / 4.0], eps);
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn lognormal_determinism_and_statistics() {
        let params = RandomFieldParams {
            sigma2: 1.5,
            l1: 0.01,
            l2: 0.01,
            resolution: 512,
            seed: 7,
        };
        let a = generate_lognormal_field(&params).unwrap();
        let b = generate_lognormal_field(&params).unwrap();
        assert_eq!(a, b);
        let logs: Vec<f64> = a.values.iter().map(|v| v.ln()).collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        let var = logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / logs.len() as f64;
        assert!((var - 1.5).abs() < 0.25 * 1.5);
        assert!(a.values.iter().all(|&v| v > 0.0));
        let c = a.contrast();
        assert!((1e2..=1e5).contains(&c), "contrast {c}");
    }

    #[test]
    fn lognormal_degenerate_and_errors() {
        let mut params = RandomFieldParams {
            sigma2: 0.0,
            l1: 0.1,
            l2: 0.1,
            resolution: 16,
            seed: 1,
        };
        let f = generate_lognormal_field(&params).unwrap();
        assert!(f.values.iter().all(|&v| v == 1.0));
        params.sigma2 = 1.0;
        params.resolution = 8;
        assert!(generate_lognormal_field(&params).is_err());
    }

    #[test]
    fn channel_fields() {
        let empty = build_channel_field(&ChannelLayout::default(), 64).unwrap();
        assert!(empty.values.iter().all(|&v| v == 1.0));
        let g = 1.0 / 1024.0;
        let one = ChannelLayout {
            channel_rects: vec![Rect::new(0.0, 0.5 - g, 1.0, 0.5).unwrap()],
            inclusion_rects: vec![],
        };
        let f = build_channel_field(&one, 1024).unwrap();
        assert_eq!(f.contrast(), 1e5);
        let f = build_channel_field(&ChannelLayout::two_channels(), 256).unwrap();
        let mut distinct: Vec<f64> = f.values.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert_eq!(distinct, vec![1.0, 8e4, 1e5]);
        let bad = ChannelLayout {
            channel_rects: vec![Rect::new(0.0, 0.1, 1.0, 0.2).unwrap()],
            inclusion_rects: vec![],
        };
        assert!(build_channel_field(&bad, 16).is_err());
    }

    #[test]
    fn grid_text_round_trip() {
        let f = generate_lognormal_field(&RandomFieldParams {
            sigma2: 1.0,
            l1: 0.2,
            l2: 0.1,
            resolution: 16,
            seed: 3,
        })
        .unwrap();
        assert_eq!(GridField::from_text(&f.to_text()).unwrap(), f);
        assert!(GridField::from_text("2\n1 2 3").is_err());
    }

    #[test]
    fn sampling() {
        let mesh = build_uniform_tri_mesh(Domain::UnitSquare, 8).unwrap();
        assert!(sample_per_element(&CoefficientField::Constant(3.5), &mesh)
            .iter()
            .all(|&v| v == 3.5));
        let grid = generate_lognormal_field(&RandomFieldParams {
            sigma2: 1.0,
            l1: 0.2,
            l2: 0.2,
            resolution: 8,
            seed: 11,
        })
        .unwrap();
        let field = CoefficientField::Grid(grid.clone());
        let per = sample_per_element(&field, &mesh);
        let keyed = ElementCoefficients::sample(&field, 8);
        for t in 0..mesh.num_triangles() {
            let [i, j] = mesh.cells[t / 2];
            assert_eq!(per[t], grid.cell_value(i, j));
            assert_eq!(keyed.on(&mesh, t), per[t]);
        }
        // Oscillating coefficient sampled on a fine mesh stays in the scanned band.
        let fine = build_uniform_tri_mesh(Domain::UnitSquare, 128).unwrap();
        let field = CoefficientField::a1(0.2);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..=1000 {
            for j in 0..=1000 {
                let v = field.eval([i as f64 / 1000.0, j as f64 / 1000.0]);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        for v in sample_per_element(&field, &fine) {
            assert!(v >= lo * (1.0 - 1e-3) && v <= hi * (1.0 + 1e-3));
        }
    }
}
