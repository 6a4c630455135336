//! Run configuration: one TOML grammar for every subcommand.
//!
//! ```toml
//! seed = 7
//! convention = "balanced"          # or "paper"
//! resolution = 21
//! radii = [0.4, 0.2, 0.1, 0.05]
//! epsilons = [0.4, 0.2, 0.1, 0.05]
//!
//! [domain]
//! center = [0, 0, 0]               # optional, defaults to the identity
//! radius = 1.0
//!
//! [[algebra]]
//! name = "H1"
//! layer_dims = [2, 1]
//! brackets = [{ i = 1, j = 2, k = 3, c = 1 }]   # [X_i, X_j] = c X_k, 1-based
//!
//! [[map]]
//! name = "x1"
//! source = "H1"
//! target = "R1"
//! components = ["u1"]
//! ```
//!
//! Algebras named `R<n>` need not be declared: they resolve to abelian `ℝ^n`.
//! Diagnostics carry `line:column` positions into the document.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Spanned;

use crate::algebra::{validate_definition, AlgebraError, BracketEntry, GradedNilpotentAlgebra};
use crate::group::{CarnotGroup, GroupError};
use crate::maps::{MapError, PolynomialContactMap};
use crate::measures::ConventionMode;
use crate::metrics::Box2Ball;
use crate::omega::Normalization;

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_RESOLUTION: usize = 21;
pub const DEFAULT_RADII: [f64; 4] = [0.4, 0.2, 0.1, 0.05];
pub const DEFAULT_EPSILONS: [f64; 4] = [0.4, 0.2, 0.1, 0.05];

/// `line:column`, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Location {
    pub line: usize,
    pub column: usize,
}

impl Location {
    fn at(doc: &str, offset: usize) -> Self {
        let offset = offset.min(doc.len());
        let before = &doc[..offset];
        let line = before.matches('\n').count() + 1;
        let column = before.rfind('\n').map_or(offset, |p| offset - p - 1) + 1;
        Self { line, column }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{}: {message}", location.map_or_else(|| "?".to_string(), |l| l.to_string()))]
    Syntax { location: Option<Location>, message: String },
    #[error("{location}: algebra {name:?} is not defined")]
    UnknownAlgebra { location: Location, name: String },
    #[error("{location}: duplicate {what} name {name:?}")]
    Duplicate { location: Location, what: &'static str, name: String },
    #[error("{location}: algebra {name:?}: {message}")]
    InvalidAlgebra { location: Location, name: String, message: String },
    #[error("{location}: map {name:?}: {message}")]
    InvalidMap { location: Location, name: String, message: String },
    #[error("{location}: {message}")]
    Invalid { location: Location, message: String },
    #[error("domain: {0}")]
    Domain(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<Spanned<i64>>,
    convention: Option<Spanned<String>>,
    omega: Option<Spanned<String>>,
    resolution: Option<Spanned<i64>>,
    radii: Option<Spanned<Vec<f64>>>,
    epsilons: Option<Spanned<Vec<f64>>>,
    point: Option<Spanned<Vec<f64>>>,
    output: Option<String>,
    domain: Option<Spanned<RawDomain>>,
    #[serde(default)]
    algebra: Vec<Spanned<RawAlgebra>>,
    #[serde(default)]
    map: Vec<Spanned<RawMap>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    center: Option<Vec<f64>>,
    radius: Spanned<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlgebra {
    name: Spanned<String>,
    layer_dims: Spanned<Vec<i64>>,
    #[serde(default)]
    brackets: Vec<Spanned<RawBracket>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBracket {
    i: i64,
    j: i64,
    k: i64,
    c: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMap {
    name: Spanned<String>,
    source: Spanned<String>,
    target: Spanned<String>,
    components: Vec<Spanned<String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DomainSpec {
    /// `None` means the identity of whichever group the domain is used in.
    pub center: Option<Vec<f64>>,
    pub radius: f64,
}

impl DomainSpec {
    pub fn ball(&self, dim: usize) -> Result<Box2Ball, ConfigError> {
        let center = self.center.clone().unwrap_or_else(|| vec![0.0; dim]);
        if center.len() != dim {
            return Err(ConfigError::Domain(format!(
                "center has {} coordinates, the group has dimension {dim}",
                center.len()
            )));
        }
        let point = crate::group::GroupPoint::new(center).map_err(|e| ConfigError::Domain(e.to_string()))?;
        Box2Ball::new(point, self.radius).map_err(|e| ConfigError::Domain(e.to_string()))
    }
}

/// A fully resolved and validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub groups: BTreeMap<String, Arc<CarnotGroup>>,
    /// Declaration order is kept.
    pub maps: Vec<PolynomialContactMap>,
    pub domain: DomainSpec,
    pub radii: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub point: Option<Vec<f64>>,
    pub resolution: usize,
    pub seed: u64,
    pub convention: ConventionMode,
    pub normalization: Normalization,
    pub output: Option<String>,
}

impl RunConfig {
    pub fn group(&self, name: &str) -> Option<&Arc<CarnotGroup>> {
        self.groups.get(name)
    }

    pub fn map(&self, name: &str) -> Option<&PolynomialContactMap> {
        self.maps.iter().find(|m| m.name() == name)
    }

    /// Declared and implicit algebras, in name order.
    pub fn algebras(&self) -> impl Iterator<Item = &GradedNilpotentAlgebra> {
        self.groups.values().map(|g| g.algebra())
    }
}

impl FromStr for ConventionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" | "paper_literal" => Ok(ConventionMode::PaperLiteral),
            "balanced" => Ok(ConventionMode::Balanced),
            other => Err(format!("unknown convention {other:?} (expected \"paper\" or \"balanced\")")),
        }
    }
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unit-ball-volume" => Ok(Normalization::UnitBall),
            "dyadic" => Ok(Normalization::Dyadic),
            other => Err(format!("unknown omega normalization {other:?} (expected \"unit-ball-volume\" or \"dyadic\")")),
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let doc = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&doc)
}

/// Parses, resolves and validates a configuration document. Every algebra is
/// validated and every map is built (and thereby checked) eagerly.
pub fn parse_config(doc: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(doc).map_err(|e| ConfigError::Syntax {
        location: e.span().map(|s| Location::at(doc, s.start)),
        message: e.message().to_string(),
    })?;
    let at = |span: Range<usize>| Location::at(doc, span.start);

    let mut groups: BTreeMap<String, Arc<CarnotGroup>> = BTreeMap::new();
    for entry in &raw.algebra {
        let a = entry.get_ref();
        let name = a.name.get_ref().clone();
        if groups.contains_key(&name) {
            return Err(ConfigError::Duplicate {
                location: at(a.name.span()),
                what: "algebra",
                name,
            });
        }
        let invalid = |location: Location, message: String| ConfigError::InvalidAlgebra {
            location,
            name: name.clone(),
            message,
        };
        let dims = a
            .layer_dims
            .get_ref()
            .iter()
            .map(|&d| usize::try_from(d).map_err(|_| invalid(at(a.layer_dims.span()), format!("negative layer dimension {d}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().sum();
        let mut entries = Vec::with_capacity(a.brackets.len());
        for b in &a.brackets {
            let r = b.get_ref();
            let index = |v: i64| -> Option<usize> { usize::try_from(v).ok().filter(|&v| (1..=n).contains(&v)).map(|v| v - 1) };
            match (index(r.i), index(r.j), index(r.k)) {
                (Some(i), Some(j), Some(k)) => entries.push(BracketEntry::new(i, j, k, r.c)),
                _ => {
                    return Err(invalid(
                        at(b.span()),
                        format!("bracket ({}, {}, {}) has an index outside 1..{n}", r.i, r.j, r.k),
                    ))
                }
            }
        }
        let report = validate_definition(&dims, &entries).map_err(|e| invalid(at(a.layer_dims.span()), e.to_string()))?;
        if !report.is_valid() {
            return Err(invalid(at(entry.span()), report.to_string()));
        }
        let alg = GradedNilpotentAlgebra::new(name.clone(), &dims, &entries).map_err(|e: AlgebraError| invalid(at(entry.span()), e.to_string()))?;
        let group = CarnotGroup::new(alg).map_err(|e: GroupError| invalid(at(entry.span()), e.to_string()))?;
        groups.insert(name, Arc::new(group));
    }

    let mut implicit: BTreeMap<String, Arc<CarnotGroup>> = BTreeMap::new();
    let mut resolve = |name: &Spanned<String>| -> Result<Arc<CarnotGroup>, ConfigError> {
        let key = name.get_ref();
        if let Some(g) = groups.get(key).or_else(|| implicit.get(key)) {
            return Ok(g.clone());
        }
        if let Some(n) = key.strip_prefix('R').and_then(|d| d.parse::<usize>().ok()).filter(|&n| n > 0) {
            let g = Arc::new(CarnotGroup::new(GradedNilpotentAlgebra::abelian(n)).expect("abelian groups build"));
            implicit.insert(key.clone(), g.clone());
            return Ok(g);
        }
        Err(ConfigError::UnknownAlgebra {
            location: at(name.span()),
            name: key.clone(),
        })
    };
    let mut maps: Vec<PolynomialContactMap> = Vec::new();
    for entry in &raw.map {
        let m = entry.get_ref();
        let name = m.name.get_ref().clone();
        if maps.iter().any(|x| x.name() == name) {
            return Err(ConfigError::Duplicate {
                location: at(m.name.span()),
                what: "map",
                name,
            });
        }
        let source = resolve(&m.source)?;
        let target = resolve(&m.target)?;
        let components: Vec<&str> = m.components.iter().map(|c| c.get_ref().as_str()).collect();
        let map = PolynomialContactMap::parse(name.clone(), source, target, &components).map_err(|e| {
            let location = match &e {
                MapError::Parse { index, source } => {
                    // point inside the string literal; +1 skips the quote
                    let span = m.components[*index].span();
                    Location::at(doc, span.start + 1 + parse_offset(source).unwrap_or(0))
                }
                MapError::ComponentCount { .. } => at(entry.span()),
                _ => at(m.name.span()),
            };
            ConfigError::InvalidMap {
                location,
                name: name.clone(),
                message: e.to_string(),
            }
        })?;
        maps.push(map);
    }
    groups.extend(implicit);

    let domain = match &raw.domain {
        Some(d) => {
            let r = d.get_ref();
            if !(*r.radius.get_ref() > 0.0 && r.radius.get_ref().is_finite()) {
                return Err(ConfigError::Invalid {
                    location: at(r.radius.span()),
                    message: format!("domain radius must be positive, got {}", r.radius.get_ref()),
                });
            }
            DomainSpec {
                center: r.center.clone(),
                radius: *r.radius.get_ref(),
            }
        }
        None => DomainSpec {
            center: None,
            radius: 1.0,
        },
    };
    for m in &maps {
        if let Some(c) = &domain.center {
            if c.len() != m.source().dim() {
                return Err(ConfigError::Invalid {
                    location: raw.domain.as_ref().map_or(Location { line: 1, column: 1 }, |d| at(d.span())),
                    message: format!(
                        "domain center has {} coordinates but map {:?} has source dimension {}",
                        c.len(),
                        m.name(),
                        m.source().dim()
                    ),
                });
            }
        }
    }

    let seed = match &raw.seed {
        Some(s) => u64::try_from(*s.get_ref()).map_err(|_| ConfigError::Invalid {
            location: at(s.span()),
            message: format!("seed must be a non-negative 64-bit integer, got {}", s.get_ref()),
        })?,
        None => DEFAULT_SEED,
    };
    let convention = match &raw.convention {
        Some(c) => c.get_ref().parse().map_err(|message| ConfigError::Invalid {
            location: at(c.span()),
            message,
        })?,
        None => ConventionMode::default(),
    };
    let normalization = match &raw.omega {
        Some(c) => c.get_ref().parse().map_err(|message| ConfigError::Invalid {
            location: at(c.span()),
            message,
        })?,
        None => Normalization::default(),
    };
    let resolution = match &raw.resolution {
        Some(r) => usize::try_from(*r.get_ref()).ok().filter(|&r| r >= 2).ok_or_else(|| ConfigError::Invalid {
            location: at(r.span()),
            message: format!("resolution must be at least 2, got {}", r.get_ref()),
        })?,
        None => DEFAULT_RESOLUTION,
    };
    let positive_list = |list: &Option<Spanned<Vec<f64>>>, what: &str, default: &[f64]| -> Result<Vec<f64>, ConfigError> {
        match list {
            Some(l) => {
                if l.get_ref().iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(ConfigError::Invalid {
                        location: at(l.span()),
                        message: format!("{what} must be positive"),
                    });
                }
                Ok(l.get_ref().clone())
            }
            None => Ok(default.to_vec()),
        }
    };
    let radii = positive_list(&raw.radii, "radii", &DEFAULT_RADII)?;
    let epsilons = positive_list(&raw.epsilons, "epsilons", &DEFAULT_EPSILONS)?;

    Ok(RunConfig {
        groups,
        maps,
        domain,
        radii,
        epsilons,
        point: raw.point.map(|p| p.into_inner()),
        resolution,
        seed,
        convention,
        normalization,
        output: raw.output,
    })
}

fn parse_offset(e: &crate::poly::ParseError) -> Option<usize> {
    use crate::poly::ParseError::*;
    match *e {
        UnexpectedChar { offset, .. } | UnknownVariable { offset, .. } | BadExponent { offset } | NonPolynomialDivision { offset } | BadNumber { offset } => Some(offset),
        UnexpectedEnd => None,
    }
}
