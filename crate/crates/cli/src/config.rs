//! Flat `key = value` experiment configuration.
//!
//! Blank lines and text after `#` are ignored. Every experiment id carries a
//! set of preset keys; keys in the file override them. See `configs/README.md`
//! for the key reference.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use felodm_core::mesh::{Domain, Rect};
use felodm_core::methods::{Well, WellSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentId {
    Ex1LSweep,
    Ex1Convergence,
    Ex2LShape,
    Ex3Channels,
    Ex4WellPeriodic,
    Ex5WellRandom,
    Custom,
}

const WELL_SQUARES: &str = "0.21875 0.71875 0.28125 0.78125; 0.71875 0.21875 0.78125 0.28125";
const WELLS: &str = "0.25 0.75 -1; 0.75 0.25 1";

impl ExperimentId {
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::Ex1LSweep,
        ExperimentId::Ex1Convergence,
        ExperimentId::Ex2LShape,
        ExperimentId::Ex3Channels,
        ExperimentId::Ex4WellPeriodic,
        ExperimentId::Ex5WellRandom,
        ExperimentId::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Ex1LSweep => "ex1-Lsweep",
            ExperimentId::Ex1Convergence => "ex1-convergence",
            ExperimentId::Ex2LShape => "ex2-Lshape",
            ExperimentId::Ex3Channels => "ex3-channels",
            ExperimentId::Ex4WellPeriodic => "ex4-well-periodic",
            ExperimentId::Ex5WellRandom => "ex5-well-random",
            ExperimentId::Custom => "custom",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentId::Ex1LSweep => "oscillating coefficient, errors against the patch level L",
            ExperimentId::Ex1Convergence => "oscillating coefficient, errors against the coarse size H",
            ExperimentId::Ex2LShape => "L-shaped domain with a log-normal field, fine region at the reentrant corner",
            ExperimentId::Ex3Channels => "two high-contrast channels resolved by the fine region",
            ExperimentId::Ex4WellPeriodic => "two wells on a periodic coefficient, well-bore pressures",
            ExperimentId::Ex5WellRandom => "two wells on a log-normal field, well-bore pressures",
            ExperimentId::Custom => "every parameter taken from the config file",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| anyhow!("unknown experiment {s:?}; run `felodm list-experiments`"))
    }

    fn preset(self) -> &'static [(&'static str, &'static str)] {
        match self {
            ExperimentId::Ex1LSweep => &[
                ("coefficient", "a1"),
                ("epsilon", "0.2"),
                ("omega1", "0.25 0.25 0.375 0.375"),
                ("H", "2^-3"),
                ("h", "2^-6"),
                ("levels", "1, 2, 3, 6, 10"),
                ("ideal", "true"),
                ("lodm", "false"),
            ],
            ExperimentId::Ex1Convergence => &[
                ("coefficient", "a1"),
                ("epsilon", "0.05"),
                ("omega1", "0.25 0.25 0.5 0.5"),
                ("H", "2^-2, 2^-3, 2^-4, 2^-5"),
                ("h", "2^-8"),
                ("L0", "1"),
                ("lodm", "false"),
            ],
            ExperimentId::Ex2LShape => &[
                ("domain", "l-shape"),
                ("coefficient", "lognormal"),
                ("sigma2", "1.5"),
                ("correlation_length", "0.01"),
                ("seed", "1"),
                ("omega1", "0.375 0.5 0.625 0.625; 0.375 0.375 0.5 0.5"),
                ("H", "2^-4"),
                ("h", "2^-8"),
                ("L0", "1"),
                ("lodm", "true"),
            ],
            ExperimentId::Ex3Channels => &[
                ("coefficient", "channels"),
                ("field_resolution", "256"),
                ("omega1", "channel-layers"),
                ("H", "2^-5"),
                ("h", "2^-8"),
                ("L0", "1"),
                ("lodm", "true"),
            ],
            ExperimentId::Ex4WellPeriodic => &[
                ("coefficient", "awell"),
                ("epsilon", "0.015625"),
                ("omega1", WELL_SQUARES),
                ("wells", WELLS),
                ("H", "2^-5"),
                ("h", "2^-8"),
                ("L0", "1"),
                ("lodm", "true"),
            ],
            ExperimentId::Ex5WellRandom => &[
                ("coefficient", "lognormal"),
                ("sigma2", "1.5"),
                ("correlation_length", "0.01"),
                ("seed", "1"),
                ("omega1", WELL_SQUARES),
                ("wells", WELLS),
                ("H", "2^-5"),
                ("h", "2^-8"),
                ("L0", "1"),
                ("lodm", "true"),
            ],
            ExperimentId::Custom => &[],
        }
    }
}

const KEYS: [&str; 25] = [
    "experiment",
    "cache",
    "domain",
    "H",
    "h",
    "gamma0",
    "levels",
    "L0",
    "ideal",
    "fe_lodm",
    "lodm",
    "coefficient",
    "value",
    "epsilon",
    "sigma2",
    "correlation_length",
    "field_resolution",
    "field_file",
    "seed",
    "omega1",
    "load",
    "wells",
    "well_radius",
    "export_solution",
    "outdir",
];

/// Keys of which at most one may be set; a file value for one member
/// suppresses the presets of the others.
const EXCLUSIVE: [[&str; 2]; 1] = [["levels", "L0"]];

/// Raw `key = value` pairs with the line each came from.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {line_no}: expected `key = value`"))?;
            let key = key.trim();
            ensure!(
                KEYS.contains(&key),
                "line {line_no}: unknown key {key:?}"
            );
            if entries.insert(key.to_string(), (value.trim().to_string(), line_no)).is_some() {
                bail!("line {line_no}: key {key:?} given twice");
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    fn with_preset(mut self, experiment: ExperimentId) -> Self {
        for &(k, v) in experiment.preset() {
            let overridden = EXCLUSIVE
                .iter()
                .any(|group| group.contains(&k) && group.iter().any(|g| self.entries.contains_key(*g)));
            if !overridden {
                self.entries.entry(k.to_string()).or_insert_with(|| (v.to_string(), 0));
            }
        }
        self
    }

    fn context(&self, key: &str) -> String {
        match self.entries.get(key) {
            Some((_, 0)) => format!("preset value of {key:?}"),
            Some((_, line)) => format!("line {line}: {key:?}"),
            None => format!("{key:?}"),
        }
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| anyhow!("missing key {key:?}"))
    }

    fn number(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| parse_number(v).with_context(|| self.context(key)))
            .transpose()
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => bail!("{}: expected true or false, got {v:?}", self.context(key)),
        }
    }
}

/// Decimal, `a/b` or `2^k` notation.
pub fn parse_number(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = if let Some(exp) = s.strip_prefix("2^") {
        let k: i32 = exp.trim().parse().with_context(|| format!("bad exponent in {s:?}"))?;
        2f64.powi(k)
    } else if let Some((a, b)) = s.split_once('/') {
        let a: f64 = a.trim().parse().with_context(|| format!("bad numerator in {s:?}"))?;
        let b: f64 = b.trim().parse().with_context(|| format!("bad denominator in {s:?}"))?;
        a / b
    } else {
        s.parse().with_context(|| format!("not a number: {s:?}"))?
    };
    ensure!(v.is_finite(), "{s:?} is not finite");
    Ok(v)
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_number).collect()
}

/// `1/size` as a power of two.
pub fn dyadic_exponent(size: f64) -> Result<u32> {
    let n = (1.0 / size).round();
    ensure!(
        size > 0.0 && n >= 1.0 && ((1.0 / size) - n).abs() < 1e-9 * n && (n as u64).is_power_of_two(),
        "mesh size {size} is not of the form 2^-k"
    );
    Ok((n as u64).trailing_zeros())
}

#[derive(Clone, Debug, PartialEq)]
pub enum LevelRule {
    Fixed(Vec<usize>),
    FromL0(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum CoefficientSpec {
    Constant(f64),
    Oscillating { epsilon: f64 },
    WellPeriodic { epsilon: f64 },
    LogNormal { sigma2: f64, correlation_length: f64, resolution: Option<usize> },
    Channels { resolution: usize },
    GridFile(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum RegionSpec {
    Empty,
    Rects(Vec<Rect>),
    /// Two coarse layers around each channel band, depending on `H`.
    ChannelLayers,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentId,
    pub domain: Domain,
    pub coarse: Vec<f64>,
    pub h: f64,
    pub gamma0: f64,
    pub levels: LevelRule,
    pub ideal: bool,
    pub fe_lodm: bool,
    pub lodm: bool,
    pub coefficient: CoefficientSpec,
    pub seed: u64,
    pub omega1: RegionSpec,
    pub load: f64,
    pub wells: Option<WellSpec>,
    pub export_solution: bool,
    pub cache: bool,
    pub outdir: PathBuf,
}

fn parse_rects(s: &str) -> Result<RegionSpec> {
    match s.trim() {
        "none" | "" => return Ok(RegionSpec::Empty),
        "channel-layers" => return Ok(RegionSpec::ChannelLayers),
        _ => {}
    }
    let mut rects = Vec::new();
    for part in s.split(';') {
        let v: Vec<f64> = part.split_whitespace().map(parse_number).collect::<Result<_>>()?;
        ensure!(v.len() == 4, "a rectangle needs `x0 y0 x1 y1`, got {part:?}");
        rects.push(Rect::new(v[0], v[1], v[2], v[3])?);
    }
    Ok(RegionSpec::Rects(rects))
}

fn parse_wells(s: &str, radius: f64) -> Result<WellSpec> {
    let mut wells = Vec::new();
    for part in s.split(';') {
        let v: Vec<f64> = part.split_whitespace().map(parse_number).collect::<Result<_>>()?;
        ensure!(v.len() == 3, "a well needs `x y rate`, got {part:?}");
        wells.push(Well {
            position: [v[0], v[1]],
            rate: v[2],
            radius,
        });
    }
    Ok(WellSpec::new(wells)?)
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    ensure!(v >= 0.0 && v.fract() == 0.0, "{what} must be a nonnegative integer, got {v}");
    Ok(v as usize)
}

impl RunConfig {
    /// Parses a config file; relative file references resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base).with_context(|| format!("in {}", path.display()))
    }

    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let raw = RawConfig::parse(text)?;
        let experiment = ExperimentId::parse(raw.required("experiment")?)?;
        let raw = raw.with_preset(experiment);

        let domain = match raw.get("domain").unwrap_or("unit-square") {
            "unit-square" => Domain::UnitSquare,
            "l-shape" => Domain::LShape,
            d => bail!("unknown domain {d:?}; use unit-square or l-shape"),
        };
        let coarse = parse_list(raw.required("H")?).with_context(|| raw.context("H"))?;
        ensure!(!coarse.is_empty(), "H needs at least one value");
        let h = raw.number("h")?.ok_or_else(|| anyhow!("missing key \"h\""))?;
        dyadic_exponent(h).with_context(|| raw.context("h"))?;
        for &c in &coarse {
            dyadic_exponent(c).with_context(|| raw.context("H"))?;
            ensure!(h < c, "fine size h = {h} must be below every coarse size (H = {c})");
        }
        let gamma0 = raw.number("gamma0")?.unwrap_or(10.0);
        ensure!(gamma0 > 0.0, "gamma0 must be positive");

        let levels = match (raw.get("levels"), raw.number("L0")?) {
            (Some(_), Some(_)) => bail!("set either \"levels\" or \"L0\", not both"),
            (Some(list), None) => {
                let v = parse_list(list)
                    .and_then(|v| v.into_iter().map(|x| as_count(x, "a level")).collect::<Result<Vec<_>>>())
                    .with_context(|| raw.context("levels"))?;
                ensure!(!v.is_empty(), "levels needs at least one value");
                LevelRule::Fixed(v)
            }
            (None, Some(l0)) => {
                ensure!(l0 > 0.0, "L0 must be positive");
                LevelRule::FromL0(l0)
            }
            (None, None) => bail!("missing key \"levels\" or \"L0\""),
        };

        let epsilon = || -> Result<f64> {
            let e = raw.number("epsilon")?.ok_or_else(|| anyhow!("missing key \"epsilon\""))?;
            ensure!(e > 0.0, "epsilon must be positive");
            Ok(e)
        };
        let field_resolution = raw
            .number("field_resolution")?
            .map(|v| as_count(v, "field_resolution"))
            .transpose()?;
        let coefficient = match raw.required("coefficient")? {
            "constant" => CoefficientSpec::Constant(raw.number("value")?.unwrap_or(1.0)),
            "a1" => CoefficientSpec::Oscillating { epsilon: epsilon()? },
            "awell" => CoefficientSpec::WellPeriodic { epsilon: epsilon()? },
            "lognormal" => CoefficientSpec::LogNormal {
                sigma2: raw.number("sigma2")?.ok_or_else(|| anyhow!("missing key \"sigma2\""))?,
                correlation_length: raw
                    .number("correlation_length")?
                    .ok_or_else(|| anyhow!("missing key \"correlation_length\""))?,
                resolution: field_resolution,
            },
            "channels" => CoefficientSpec::Channels {
                resolution: field_resolution.unwrap_or(256),
            },
            "grid" => {
                let file = base.join(raw.required("field_file")?);
                ensure!(file.is_file(), "field file {} does not exist", file.display());
                CoefficientSpec::GridFile(file)
            }
            c => bail!("unknown coefficient {c:?}"),
        };
        let seed = raw.number("seed")?.map(|v| as_count(v, "seed")).transpose()?.unwrap_or(0) as u64;
        let omega1 = parse_rects(raw.get("omega1").unwrap_or("none")).with_context(|| raw.context("omega1"))?;
        let radius = raw.number("well_radius")?.unwrap_or(1e-5);
        let wells = raw
            .get("wells")
            .map(|w| parse_wells(w, radius))
            .transpose()
            .with_context(|| raw.context("wells"))?;
        let load = raw.number("load")?.unwrap_or(1.0);
        let empty = omega1 == RegionSpec::Empty;
        Ok(Self {
            experiment,
            domain,
            coarse,
            h,
            gamma0,
            levels,
            ideal: raw.flag("ideal", false)?,
            fe_lodm: raw.flag("fe_lodm", true)? && !empty,
            lodm: raw.flag("lodm", false)? || empty,
            coefficient,
            seed,
            omega1,
            load,
            wells,
            export_solution: raw.flag("export_solution", false)?,
            cache: raw.flag("cache", true)?,
            outdir: PathBuf::from(raw.get("outdir").unwrap_or("out")),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers() {
        assert_eq!(parse_number("2^-3").unwrap(), 0.125);
        assert_eq!(parse_number("1/8").unwrap(), 0.125);
        assert_eq!(parse_number(" 0.5 ").unwrap(), 0.5);
        assert!(parse_number("abc").is_err());
        assert_eq!(dyadic_exponent(1.0 / 256.0).unwrap(), 8);
        assert!(dyadic_exponent(0.3).is_err());
        assert!(dyadic_exponent(1.0 / 12.0).is_err());
    }

    #[test]
    fn presets_fill_missing_keys() {
        let c = RunConfig::from_text("experiment = ex1-Lsweep\n", Path::new(".")).unwrap();
        assert_eq!(c.coarse, vec![0.125]);
        assert_eq!(c.levels, LevelRule::Fixed(vec![1, 2, 3, 6, 10]));
        assert!(c.ideal && c.fe_lodm && !c.lodm);
    }

    #[test]
    fn file_values_override_presets() {
        let c = RunConfig::from_text("experiment = ex1-Lsweep\nL0 = 2\nh = 2^-5 # coarse test\n", Path::new(".")).unwrap();
        assert_eq!(c.levels, LevelRule::FromL0(2.0));
        assert_eq!(c.h, 1.0 / 32.0);
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new(".");
        assert!(RunConfig::from_text("experiment = nope\n", base).is_err());
        assert!(RunConfig::from_text("experiment = ex1-Lsweep\ntypo = 1\n", base).is_err());
        assert!(RunConfig::from_text("experiment = ex1-Lsweep\nh = 2^-2\n", base).is_err());
        assert!(RunConfig::from_text("experiment = ex1-Lsweep\nh = 0.3\n", base).is_err());
        assert!(RunConfig::from_text("experiment = ex1-Lsweep\nh = 2^-6\nh = 2^-7\n", base).is_err());
        assert!(RunConfig::from_text("experiment = custom\nH = 2^-2\nh = 2^-4\nlevels = 1\n", base).is_err());
        assert!(RunConfig::from_text(
            "experiment = custom\nH = 2^-2\nh = 2^-4\nlevels = 1\nL0 = 1\ncoefficient = constant\n",
            base
        )
        .is_err());
    }

    #[test]
    fn empty_fine_region_runs_coarse_method_only() {
        let c = RunConfig::from_text(
            "experiment = custom\nH = 2^-2\nh = 2^-4\nlevels = 1\ncoefficient = constant\nomega1 = none\n",
            Path::new("."),
        )
        .unwrap();
        assert!(!c.fe_lodm && c.lodm);
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut seen = Vec::new();
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_none_or(|e| e != "conf") {
                continue;
            }
            let c = RunConfig::from_file(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            assert!(name.starts_with(c.experiment.name()), "{name}");
            if name.ends_with(".desk.conf") {
                assert!(dyadic_exponent(c.h).unwrap() <= 8, "{name}");
            }
            seen.push(c.experiment);
        }
        for e in ExperimentId::ALL {
            assert!(seen.contains(&e), "no config for {}", e.name());
        }
    }
}
