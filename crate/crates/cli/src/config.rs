//! Flat `section.key = value` configuration files.

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};
use symcrit::grid::{DomainKind, DomainSpec};
use symcrit::solver::{Mode, SolveConfig};
use symcrit::{Error, GroupLabel, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Number(f64),
    Str(String),
    Bool(bool),
}

impl Value {
    fn type_name(&self) -> &'static str {
        match self {
            Value::Number(_) => "number",
            Value::Str(_) => "string",
            Value::Bool(_) => "boolean",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(v) if v.fract() == 0.0 && v.abs() < 1e15 => write!(f, "{}", *v as i64),
            Value::Number(v) => write!(f, "{v:?}"),
            Value::Str(s) => write!(f, "\"{s}\""),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}

/// Ordered key-value view of a configuration file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlatConfig {
    entries: BTreeMap<String, Value>,
}

fn valid_key(key: &str) -> bool {
    let mut parts = key.split('.');
    let ok = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
    matches!((parts.next(), parts.next(), parts.next()), (Some(a), Some(b), None) if ok(a) && ok(b))
}

/// Drops a `#` comment that is not inside a quoted string.
fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (k, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..k],
            _ => {}
        }
    }
    line
}

fn parse_value(raw: &str) -> Option<Value> {
    if raw == "true" {
        return Some(Value::Bool(true));
    }
    if raw == "false" {
        return Some(Value::Bool(false));
    }
    if let Some(inner) = raw.strip_prefix('"') {
        let inner = inner.strip_suffix('"')?;
        return (!inner.contains('"')).then(|| Value::Str(inner.to_string()));
    }
    if let Ok(v) = raw.parse::<f64>() {
        return v.is_finite().then_some(Value::Number(v));
    }
    let bare = raw.chars().all(|c| c.is_ascii_alphanumeric() || "-_./".contains(c));
    (bare && !raw.is_empty()).then(|| Value::Str(raw.to_string()))
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = strip_comment(line).trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), "expected `section.key = value`"))?;
            let (key, raw) = (key.trim(), raw.trim());
            if !valid_key(key) {
                return Err(Error::config(key, "keys have the form `section.key` in lower case"));
            }
            let value = parse_value(raw).ok_or_else(|| Error::config(key, format!("cannot parse value `{raw}`")))?;
            if entries.insert(key.to_string(), value).is_some() {
                return Err(Error::config(key, "key given more than once"));
            }
        }
        Ok(FlatConfig { entries })
    }

    /// Canonical text: keys sorted, one `key = value` per line.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.entries.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Number,
    Str,
    Bool,
}

const SCHEMA: &[(&str, Kind)] = &[
    ("domain.kind", Kind::Str),
    ("domain.dimension", Kind::Number),
    ("domain.resolution", Kind::Number),
    ("domain.angular", Kind::Number),
    ("domain.extent", Kind::Number),
    ("domain.inner_radius", Kind::Number),
    ("domain.max_rotation_order", Kind::Number),
    ("group.label", Kind::Str),
    ("group.order", Kind::Number),
    ("integrand.name", Kind::Str),
    ("integrand.p", Kind::Number),
    ("integrand.q", Kind::Number),
    ("integrand.delta", Kind::Number),
    ("integrand.positivity", Kind::Bool),
    ("solver.mode", Kind::Str),
    ("solver.path_points", Kind::Number),
    ("solver.max_iterations", Kind::Number),
    ("solver.tolerance", Kind::Number),
    ("solver.initial_step", Kind::Number),
    ("solver.shrink", Kind::Number),
    ("solver.armijo", Kind::Number),
    ("solver.w1p_ceiling", Kind::Number),
    ("solver.log", Kind::Bool),
    ("verify.tau_tan", Kind::Number),
    ("verify.tau_trans", Kind::Number),
    ("verify.cauchy_tol", Kind::Number),
    ("verify.level_tol", Kind::Number),
    ("verify.axiom_samples", Kind::Number),
    ("run.seed", Kind::Number),
];

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyConfig {
    pub tau_tan: f64,
    pub tau_trans: f64,
    pub cauchy_tol: f64,
    pub level_tol: f64,
    pub axiom_samples: usize,
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub group: GroupLabel,
    pub group_order: usize,
    pub integrand: String,
    pub p: f64,
    pub q: f64,
    pub delta: Option<f64>,
    pub positivity: bool,
    pub solver: SolveConfig,
    pub verify: VerifyConfig,
    pub seed: u64,
}

struct Reader<'a>(&'a FlatConfig);

impl Reader<'_> {
    fn number(&self, key: &str) -> Option<f64> {
        match self.0.get(key) {
            Some(Value::Number(v)) => Some(*v),
            _ => None,
        }
    }
    fn need_number(&self, key: &str) -> Result<f64> {
        self.number(key).ok_or_else(|| Error::config(key, "required"))
    }
    fn count(&self, key: &str, default: usize) -> Result<usize> {
        match self.number(key) {
            None => Ok(default),
            Some(v) if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 => Ok(v as usize),
            Some(v) => Err(Error::config(key, format!("expected a non-negative integer, got {v}"))),
        }
    }
    fn string(&self, key: &str) -> Option<&str> {
        match self.0.get(key) {
            Some(Value::Str(s)) => Some(s),
            _ => None,
        }
    }
    fn boolean(&self, key: &str, default: bool) -> bool {
        match self.0.get(key) {
            Some(Value::Bool(b)) => *b,
            _ => default,
        }
    }
}

impl RunConfig {
    pub fn from_flat(flat: &FlatConfig) -> Result<Self> {
        for key in flat.keys() {
            let Some(&(_, kind)) = SCHEMA.iter().find(|(k, _)| *k == key) else {
                return Err(Error::config(key, "unknown key"));
            };
            let v = flat.get(key).expect("key listed");
            let found = match v {
                Value::Number(_) => Kind::Number,
                Value::Str(_) => Kind::Str,
                Value::Bool(_) => Kind::Bool,
            };
            if found != kind {
                return Err(Error::config(key, format!("expected {kind:?}, found {}", v.type_name()).to_lowercase()));
            }
        }
        let r = Reader(flat);
        let kind = DomainKind::parse(r.string("domain.kind").ok_or_else(|| Error::config("domain.kind", "required"))?)?;
        let extent = r.need_number("domain.extent")?;
        let resolution = r.count("domain.resolution", 0)?;
        if flat.get("domain.resolution").is_none() {
            return Err(Error::config("domain.resolution", "required"));
        }
        let mut domain = match kind {
            DomainKind::Square => DomainSpec::square(extent, resolution),
            DomainKind::DiskPolar => DomainSpec::disk(extent, resolution, r.count("domain.angular", 16)?),
            DomainKind::AnnulusPolar => DomainSpec::annulus(
                r.number("domain.inner_radius").unwrap_or(0.5 * extent),
                extent,
                resolution,
                r.count("domain.angular", 16)?,
            ),
            DomainKind::RadialBall1d => DomainSpec::radial_ball(r.count("domain.dimension", 3)?, extent, resolution),
        };
        if kind != DomainKind::RadialBall1d && flat.get("domain.dimension").is_some() && r.count("domain.dimension", 2)? != 2 {
            return Err(Error::config("domain.dimension", "planar domains have dimension 2"));
        }
        domain.max_rotation_order = r.count("domain.max_rotation_order", domain.max_rotation_order)?;

        let group = GroupLabel::parse(r.string("group.label").unwrap_or("trivial"))?;
        let group_order = r.count("group.order", 1)?;
        let integrand = r.string("integrand.name").unwrap_or("plaplace").to_string();
        let defaults = SolveConfig::default();
        let solver = SolveConfig {
            mode: Mode::parse(r.string("solver.mode").unwrap_or("restricted"))?,
            path_points: r.count("solver.path_points", defaults.path_points)?,
            max_iterations: r.count("solver.max_iterations", defaults.max_iterations)?,
            tolerance: r.number("solver.tolerance").unwrap_or(defaults.tolerance),
            initial_step: r.number("solver.initial_step").unwrap_or(defaults.initial_step),
            shrink: r.number("solver.shrink").unwrap_or(defaults.shrink),
            armijo: r.number("solver.armijo").unwrap_or(defaults.armijo),
            seed: 0,
            log: r.boolean("solver.log", false),
            w1p_ceiling: r.number("solver.w1p_ceiling").unwrap_or(defaults.w1p_ceiling),
        };
        let tau_tan = r.number("verify.tau_tan").unwrap_or(1e-8);
        let verify = VerifyConfig {
            tau_tan,
            tau_trans: r.number("verify.tau_trans").unwrap_or(10.0 * tau_tan),
            cauchy_tol: r.number("verify.cauchy_tol").unwrap_or(1e-6),
            level_tol: r.number("verify.level_tol").unwrap_or(1e-4),
            axiom_samples: r.count("verify.axiom_samples", 200)?,
        };
        for (k, v) in [
            ("verify.tau_tan", verify.tau_tan),
            ("verify.tau_trans", verify.tau_trans),
            ("verify.cauchy_tol", verify.cauchy_tol),
            ("verify.level_tol", verify.level_tol),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(k, "must be positive"));
            }
        }
        let seed = r.count("run.seed", 0)? as u64;
        let mut rc = RunConfig {
            domain,
            group,
            group_order,
            integrand,
            p: r.need_number("integrand.p")?,
            q: r.need_number("integrand.q")?,
            delta: r.number("integrand.delta"),
            positivity: r.boolean("integrand.positivity", false),
            solver,
            verify,
            seed,
        };
        rc.solver.seed = seed;
        rc.solver.validate()?;
        Ok(rc)
    }

    /// Every resolved value as a flat configuration, defaults included.
    pub fn to_flat(&self) -> FlatConfig {
        let mut f = FlatConfig::default();
        let num = |v: f64| Value::Number(v);
        let d = &self.domain;
        f.set("domain.kind", Value::Str(d.kind.as_str().into()));
        f.set("domain.dimension", num(d.dimension as f64));
        f.set("domain.resolution", num(d.resolution as f64));
        f.set("domain.extent", num(d.extent));
        f.set("domain.max_rotation_order", num(d.max_rotation_order as f64));
        if d.kind.is_polar() {
            f.set("domain.angular", num(d.angular as f64));
        }
        if d.kind == DomainKind::AnnulusPolar {
            f.set("domain.inner_radius", num(d.inner_radius));
        }
        f.set("group.label", Value::Str(self.group.as_str().into()));
        f.set("group.order", num(self.group_order as f64));
        f.set("integrand.name", Value::Str(self.integrand.clone()));
        f.set("integrand.p", num(self.p));
        f.set("integrand.q", num(self.q));
        if let Some(delta) = self.delta {
            f.set("integrand.delta", num(delta));
        }
        f.set("integrand.positivity", Value::Bool(self.positivity));
        let s = &self.solver;
        f.set("solver.mode", Value::Str(s.mode.as_str().into()));
        f.set("solver.path_points", num(s.path_points as f64));
        f.set("solver.max_iterations", num(s.max_iterations as f64));
        f.set("solver.tolerance", num(s.tolerance));
        f.set("solver.initial_step", num(s.initial_step));
        f.set("solver.shrink", num(s.shrink));
        f.set("solver.armijo", num(s.armijo));
        f.set("solver.w1p_ceiling", num(s.w1p_ceiling));
        f.set("solver.log", Value::Bool(s.log));
        let v = &self.verify;
        f.set("verify.tau_tan", num(v.tau_tan));
        f.set("verify.tau_trans", num(v.tau_trans));
        f.set("verify.cauchy_tol", num(v.cauchy_tol));
        f.set("verify.level_tol", num(v.level_tol));
        f.set("verify.axiom_samples", num(v.axiom_samples as f64));
        f.set("run.seed", num(self.seed as f64));
        f
    }

    pub fn hash(&self) -> String {
        self.to_flat().hash()
    }
}
