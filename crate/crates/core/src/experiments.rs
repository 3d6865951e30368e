//! Ready-made model problems and a driver that runs several methods against
//! one fine reference.

use std::time::Duration;

use crate::assembly::{error_report, DiscreteFunction, ErrorRegion, ErrorReport};
use crate::coefficient::{
    build_channel_field, generate_lognormal_field, ChannelLayout, CoefficientField, ElementCoefficients,
    RandomFieldParams,
};
use crate::error::{Error, Result};
use crate::lod::FineSystem;
use crate::methods::{
    compute_wbp, fine_load, solve_fe_lodm, solve_ideal, solve_reference, solve_with_basis, Load, MethodTag,
    SolveResult, Well, WellSpec, DEFAULT_IDEAL_LIMIT,
};
use crate::lod::{build_multiscale_basis, Localization};
use crate::mesh::{partition_domain, Domain, Rect, Region};

/// Right-hand side of a model problem.
#[derive(Clone, Debug, PartialEq)]
pub enum ProblemLoad {
    Constant(f64),
    Wells(WellSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub domain: Domain,
    pub omega1: Region,
    pub field: CoefficientField,
    pub load: ProblemLoad,
}

/// Bore radius of the well problems.
pub const WELL_RADIUS: f64 = 1e-5;

fn square(cx: f64, cy: f64, side: f64) -> Rect {
    let s = side / 2.0;
    Rect {
        x0: cx - s,
        y0: cy - s,
        x1: cx + s,
        y1: cy + s,
    }
}

fn two_wells() -> Result<WellSpec> {
    WellSpec::new(vec![
        Well {
            position: [0.25, 0.75],
            rate: -1.0,
            radius: WELL_RADIUS,
        },
        Well {
            position: [0.75, 0.25],
            rate: 1.0,
            radius: WELL_RADIUS,
        },
    ])
}

fn well_region() -> Region {
    Region::from_rects(vec![square(0.25, 0.75, 1.0 / 16.0), square(0.75, 0.25, 1.0 / 16.0)])
}

impl Problem {
    /// Oscillating coefficient on the unit square with `f ≡ 1`.
    pub fn oscillating(epsilon: f64, omega1: Region) -> Self {
        Self {
            domain: Domain::UnitSquare,
            omega1,
            field: CoefficientField::a1(epsilon),
            load: ProblemLoad::Constant(1.0),
        }
    }

    /// The default fine square `(1/4, 3/8)²`.
    pub fn oscillating_default_region() -> Region {
        Region::from_rects(vec![Rect {
            x0: 0.25,
            y0: 0.25,
            x1: 0.375,
            y1: 0.375,
        }])
    }

    /// L-shaped domain with a log-normal field and an L-shaped fine region
    /// around the reentrant corner.
    pub fn l_shape(params: &RandomFieldParams) -> Result<Self> {
        let field = generate_lognormal_field(params)?;
        let omega1 = Region::from_rects(vec![
            Rect {
                x0: 0.375,
                y0: 0.5,
                x1: 0.625,
                y1: 0.625,
            },
            Rect {
                x0: 0.375,
                y0: 0.375,
                x1: 0.5,
                y1: 0.5,
            },
        ]);
        Ok(Self {
            domain: Domain::LShape,
            omega1,
            field: CoefficientField::Grid(field),
            load: ProblemLoad::Constant(1.0),
        })
    }

    /// Two high-contrast channels; the fine region is the two coarse layers
    /// of size `layer` holding each channel band.
    pub fn channels(resolution: usize, layer: f64) -> Result<Self> {
        let layout = ChannelLayout::two_channels();
        let field = build_channel_field(&layout, resolution)?;
        Ok(Self {
            domain: Domain::UnitSquare,
            omega1: channel_layers(layer),
            field: CoefficientField::Grid(field),
            load: ProblemLoad::Constant(1.0),
        })
    }

    /// Extraction and injection wells on the periodic well coefficient.
    pub fn periodic_wells(epsilon: f64) -> Result<Self> {
        Ok(Self {
            domain: Domain::UnitSquare,
            omega1: well_region(),
            field: CoefficientField::awell(epsilon),
            load: ProblemLoad::Wells(two_wells()?),
        })
    }

    /// The same wells on a log-normal field.
    pub fn random_wells(params: &RandomFieldParams) -> Result<Self> {
        Ok(Self {
            domain: Domain::UnitSquare,
            omega1: well_region(),
            field: CoefficientField::Grid(generate_lognormal_field(params)?),
            load: ProblemLoad::Wells(two_wells()?),
        })
    }

    pub fn wells(&self) -> Option<&WellSpec> {
        match &self.load {
            ProblemLoad::Wells(w) => Some(w),
            ProblemLoad::Constant(_) => None,
        }
    }

    pub fn coefficients(&self, h: f64) -> Result<ElementCoefficients> {
        let n = resolution_of(h)?;
        Ok(ElementCoefficients::sample(&self.field, n))
    }

    /// Fine system on the problem's own partition.
    pub fn fine_system(&self, coarse_h: f64, h: f64, gamma0: f64) -> Result<FineSystem> {
        self.system_on(self.omega1.clone(), coarse_h, h, gamma0)
    }

    /// Fine system with no fine-only region.
    pub fn coarse_only_system(&self, coarse_h: f64, h: f64, gamma0: f64) -> Result<FineSystem> {
        self.system_on(Region::empty(), coarse_h, h, gamma0)
    }

    fn system_on(&self, omega1: Region, coarse_h: f64, h: f64, gamma0: f64) -> Result<FineSystem> {
        let partition = partition_domain(self.domain, omega1, coarse_h, h)?;
        FineSystem::new(partition, self.coefficients(h)?, gamma0)
    }

    pub fn load_vector(&self, sys: &FineSystem) -> Result<DiscreteFunction> {
        match &self.load {
            ProblemLoad::Constant(c) => {
                let c = *c;
                fine_load(sys, &Load::Function(&move |_| c))
            }
            ProblemLoad::Wells(w) => fine_load(sys, &Load::Wells(w)),
        }
    }
}

/// Full-width strips made of the coarse rows of height `layer` that hold
/// each channel band, widened to at least two rows.
pub fn channel_layers(layer: f64) -> Region {
    let mut rects = Vec::new();
    for band in [(0.3125, 0.375), (0.6875, 0.75)] {
        let lo = (band.0 / layer + 1e-9).floor() * layer;
        let hi = ((band.1 / layer - 1e-9).ceil() * layer).max(lo + 2.0 * layer);
        rects.push(Rect {
            x0: 0.0,
            y0: lo,
            x1: 1.0,
            y1: hi.min(1.0),
        });
    }
    Region::from_rects(rects)
}

/// Fine lattice resolution `1/h`, rejecting non-integer inverses.
pub fn resolution_of(h: f64) -> Result<usize> {
    let n = (1.0 / h).round();
    if !(h > 0.0) || n < 1.0 || ((1.0 / h) - n).abs() > 1e-9 * n {
        return Err(Error::MeshSizes(format!("1/h = {} is not an integer", 1.0 / h)));
    }
    Ok(n as usize)
}

/// A method to compare against the reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodSpec {
    Ideal,
    FeLodm(usize),
    Lodm(usize),
}

#[derive(Clone, Debug)]
pub struct MethodRun {
    pub result: SolveResult,
    pub report: ErrorReport,
    pub wbp: Option<Vec<f64>>,
    pub max_constraint_residual: f64,
    /// Basis construction plus coarse solve.
    pub total_time: Duration,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub reference: SolveResult,
    pub reference_wbp: Option<Vec<f64>>,
    pub runs: Vec<MethodRun>,
}

/// Error regions that make sense for the problem.
pub fn default_regions(problem: &Problem) -> Vec<ErrorRegion> {
    if problem.omega1.is_empty() {
        vec![ErrorRegion::Omega]
    } else {
        vec![ErrorRegion::Omega, ErrorRegion::Omega1, ErrorRegion::Omega2]
    }
}

/// Solves the fine reference once and every requested method on the same
/// fine lattice, reporting relative errors on the reference partition.
pub fn compare_methods(
    problem: &Problem,
    coarse_h: f64,
    h: f64,
    gamma0: f64,
    methods: &[MethodSpec],
) -> Result<Comparison> {
    let sys = problem.fine_system(coarse_h, h, gamma0)?;
    let f = problem.load_vector(&sys)?;
    let reference = solve_reference(&sys, &f)?;
    compare_with_reference(problem, &sys, &f, reference, coarse_h, h, gamma0, methods)
}

/// As [`compare_methods`] with a reference solved elsewhere (for instance
/// read from a cache).
#[allow(clippy::too_many_arguments)]
pub fn compare_with_reference(
    problem: &Problem,
    sys: &FineSystem,
    f: &DiscreteFunction,
    reference: SolveResult,
    coarse_h: f64,
    h: f64,
    gamma0: f64,
    methods: &[MethodSpec],
) -> Result<Comparison> {
    let regions = default_regions(problem);
    let wbp_of = |r: &SolveResult, s: &FineSystem| -> Result<Option<Vec<f64>>> {
        problem.wells().map(|w| compute_wbp(r, &s.coeffs, w)).transpose()
    };
    let reference_wbp = wbp_of(&reference, sys)?;
    let mut coarse_only: Option<(FineSystem, DiscreteFunction)> = None;
    let mut runs = Vec::with_capacity(methods.len());
    for &m in methods {
        let start = std::time::Instant::now();
        let (result, residual, own) = match m {
            MethodSpec::Ideal => {
                let (r, b) = solve_ideal(sys, f, DEFAULT_IDEAL_LIMIT)?;
                (r, b.max_constraint_residual, None)
            }
            MethodSpec::FeLodm(level) => {
                let (r, b) = solve_fe_lodm(sys, f, level)?;
                (r, b.max_constraint_residual, None)
            }
            MethodSpec::Lodm(level) => {
                if coarse_only.is_none() {
                    let s = problem.coarse_only_system(coarse_h, h, gamma0)?;
                    let g = problem.load_vector(&s)?;
                    coarse_only = Some((s, g));
                }
                let (s, g) = coarse_only.as_ref().expect("built above");
                let basis = build_multiscale_basis(s, Localization::Level(level))?;
                let r = solve_with_basis(s, &basis, g, MethodTag::Lodm { level })?;
                (r, basis.max_constraint_residual, Some(s))
            }
        };
        let total_time = start.elapsed();
        let report = error_report(&reference.broken, &result.broken, &sys.coeffs, &regions)?;
        let wbp = wbp_of(&result, own.unwrap_or(sys))?;
        runs.push(MethodRun {
            result,
            report,
            wbp,
            max_constraint_residual: residual,
            total_time,
        });
    }
    Ok(Comparison {
        reference,
        reference_wbp,
        runs,
    })
}
