//! Builtin example systems and the TOML scenario format.
//!
//! ```toml
//! [system]
//! d1 = 1
//! d2 = 1
//! A = [[1.0, 1.0], [1.0, 1.0]]
//! D = [[1.0]]
//! K = [[0.0, 0.0], [0.0, 0.0]]
//! M = [[1.0, 0.0], [0.0, 1.0]]
//!
//! [geometry]
//! omega = [[0.0, 3.141592653589793]]
//!
//! [experiment]
//! kind = "obstruct"
//! T_factor = 0.5
//! nmax = 16
//! seed = 7
//! ```
//!
//! Matrix entries are numbers or `[re, im]` pairs. `[system]` may instead
//! hold `builtin = "nscl(1,1,1,1.4,1)"`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use toml::{Table, Value};

use crate::algebra::{minimal_time, validate_system, SystemMatrices, TorusSubset};
use crate::numerics::{c, real_mat, CMat, C};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Experiment {
    Simulate,
    Spectrum,
    Obstruct,
    Control,
    Pipeline,
    Kalman,
    Counterexample,
    AppendixA,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Simulate,
        Experiment::Spectrum,
        Experiment::Obstruct,
        Experiment::Control,
        Experiment::Pipeline,
        Experiment::Kalman,
        Experiment::Counterexample,
        Experiment::AppendixA,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Spectrum => "spectrum",
            Experiment::Obstruct => "obstruct",
            Experiment::Control => "control",
            Experiment::Pipeline => "pipeline",
            Experiment::Kalman => "kalman",
            Experiment::Counterexample => "counterexample",
            Experiment::AppendixA => "appendix-a",
        }
    }

    /// Horizon in units of `T*` when the scenario gives none.
    pub fn default_factor(self) -> Option<f64> {
        match self {
            Experiment::Obstruct => Some(0.5),
            Experiment::Pipeline => Some(1.5),
            _ => None,
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .iter()
            .copied()
            .find(|e| e.name() == s || (s == "appendixA" && *e == Experiment::AppendixA))
            .ok_or_else(|| Error::Parse {
                field: "experiment.kind".into(),
                line: None,
                message: format!("unknown experiment `{s}`"),
            })
    }
}

/// A resolved system, geometry and run parameters.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub sys: SystemMatrices,
    pub omega: TorusSubset,
    /// Absolute horizon; takes precedence over `t_factor`.
    pub t: Option<f64>,
    /// Horizon as a multiple of `T*`.
    pub t_factor: Option<f64>,
    pub tprime: Option<f64>,
    pub nmax: usize,
    pub n0: Option<usize>,
    pub experiment: Experiment,
    pub seed: u64,
    /// Witness orders of the obstruction sweep.
    pub orders: Vec<usize>,
}

pub const DEFAULT_NMAX: usize = 16;
pub const DEFAULT_ORDERS: [usize; 4] = [8, 16, 32, 64];

impl Scenario {
    fn with_system(name: &str, sys: SystemMatrices) -> Self {
        Scenario {
            name: name.into(),
            sys,
            omega: TorusSubset::arc(0.0, PI).expect("valid arc"),
            t: None,
            t_factor: None,
            tprime: None,
            nmax: DEFAULT_NMAX,
            n0: None,
            experiment: Experiment::Simulate,
            seed: 0,
            orders: DEFAULT_ORDERS.to_vec(),
        }
    }

    pub fn tstar(&self) -> Result<f64> {
        minimal_time(&self.sys, &self.omega)
    }

    /// Horizon for `kind`: explicit `T`, else a multiple of a finite `T*`, else 1.
    pub fn horizon(&self, kind: Experiment) -> Result<f64> {
        if let Some(t) = self.t {
            return Ok(t);
        }
        let factor = self.t_factor.or(kind.default_factor());
        match factor {
            Some(f) => {
                let ts = self.tstar()?;
                if ts.is_finite() {
                    Ok(f * ts)
                } else {
                    Err(Error::Precondition(format!(
                        "T = {f} T* requested but T* is infinite for `{}`",
                        self.name
                    )))
                }
            }
            None => Ok(1.0),
        }
    }

    /// Canonical config text; loading it gives back the same scenario.
    pub fn to_config(&self) -> String {
        let mut s = String::new();
        let s_ = &mut s;
        let _ = writeln!(s_, "[system]\nname = {:?}", self.name);
        let _ = writeln!(s_, "d1 = {}\nd2 = {}", self.sys.d1, self.sys.d2);
        for (key, m) in [("A", &self.sys.a), ("D", &self.sys.diff), ("K", &self.sys.k), ("M", &self.sys.m)] {
            let _ = writeln!(s_, "{key} = {}", matrix_literal(m));
        }
        let segs: Vec<String> = self.omega.segments().iter().map(|(a, b)| format!("[{a:?}, {b:?}]")).collect();
        let _ = writeln!(s_, "\n[geometry]\nomega = [{}]", segs.join(", "));
        let _ = writeln!(s_, "\n[experiment]\nkind = {:?}", self.experiment.name());
        if let Some(t) = self.t {
            let _ = writeln!(s_, "T = {t:?}");
        }
        if let Some(f) = self.t_factor {
            let _ = writeln!(s_, "T_factor = {f:?}");
        }
        if let Some(t) = self.tprime {
            let _ = writeln!(s_, "Tprime = {t:?}");
        }
        let _ = writeln!(s_, "nmax = {}", self.nmax);
        if let Some(n0) = self.n0 {
            let _ = writeln!(s_, "n0 = {n0}");
        }
        let _ = writeln!(s_, "seed = {}", self.seed);
        let _ = writeln!(
            s_,
            "orders = [{}]",
            self.orders.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(", ")
        );
        s
    }
}

fn matrix_literal(m: &CMat) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let e: Vec<String> = (0..m.ncols())
                .map(|j| {
                    let z = m[(i, j)];
                    if z.im == 0.0 {
                        format!("{:?}", z.re)
                    } else {
                        format!("[{:?}, {:?}]", z.re, z.im)
                    }
                })
                .collect();
            format!("[{}]", e.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

fn parse_err(field: &str, line: Option<usize>, message: impl Into<String>) -> Error {
    Error::Parse {
        field: field.into(),
        line,
        message: message.into(),
    }
}

/// `K = (1, 1 - b; -1, b - 1)`, no transport, control on the first component.
pub fn damped_wave(b: f64) -> SystemMatrices {
    SystemMatrices::new(
        1,
        1,
        CMat::zeros(2, 2),
        real_mat(1, 1, &[1.0]),
        real_mat(2, 2, &[1.0, 1.0 - b, -1.0, b - 1.0]),
        real_mat(2, 1, &[1.0, 0.0]),
    )
    .expect("fixed shapes")
}

/// Damped wave written in a frame moving with speed `c`: `A = -c I`.
pub fn moving_wave(c: f64, b: f64) -> SystemMatrices {
    let mut s = damped_wave(b);
    s.a = real_mat(2, 2, &[-c, 0.0, 0.0, -c]);
    s
}

/// Heat equation with memory, `A = (0 1; 1 0)`, `K = 0`, both components controlled.
pub fn heat_memory() -> SystemMatrices {
    SystemMatrices::new(
        1,
        1,
        real_mat(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        real_mat(1, 1, &[1.0]),
        CMat::zeros(2, 2),
        CMat::identity(2, 2),
    )
    .expect("fixed shapes")
}

/// Compressible Navier-Stokes linearized at `(rho, v)` with pressure `a rho^gamma`
/// and viscosity `mu`; both equations controlled.
pub fn nscl(rho: f64, v: f64, a: f64, gamma: f64, mu: f64) -> Result<SystemMatrices> {
    if !(rho > 0.0 && a > 0.0 && gamma > 0.0 && mu > 0.0 && v != 0.0) {
        return Err(Error::Precondition(format!(
            "nscl needs rho, a, gamma, mu > 0 and v != 0, got ({rho}, {v}, {a}, {gamma}, {mu})"
        )));
    }
    SystemMatrices::new(
        1,
        1,
        real_mat(2, 2, &[v, rho, a * rho.powf(gamma - 2.0), v]),
        real_mat(1, 1, &[mu / rho]),
        CMat::zeros(2, 2),
        CMat::identity(2, 2),
    )
}

/// `damped-wave(b)`, `moving-wave(c,b)`, `heat-memory`, `nscl(rho,v,a,gamma,mu)`.
pub fn builtin(spec: &str) -> Result<Scenario> {
    let spec = spec.trim();
    let (head, args) = match spec.find('(') {
        Some(i) => {
            if !spec.ends_with(')') {
                return Err(parse_err("scenario", None, format!("unbalanced parenthesis in `{spec}`")));
            }
            let inner = &spec[i + 1..spec.len() - 1];
            let args = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner
                    .split(',')
                    .map(|a| {
                        a.trim()
                            .parse::<f64>()
                            .map_err(|_| parse_err("scenario", None, format!("`{}` is not a number in `{spec}`", a.trim())))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            (spec[..i].trim(), args)
        }
        None => (spec, Vec::new()),
    };
    let arity = |n: usize| -> Result<()> {
        if args.len() == n {
            Ok(())
        } else {
            Err(parse_err("scenario", None, format!("`{head}` takes {n} arguments, got {}", args.len())))
        }
    };
    let sys = match head {
        "damped-wave" => {
            arity(1)?;
            damped_wave(args[0])
        }
        "moving-wave" => {
            arity(2)?;
            moving_wave(args[0], args[1])
        }
        "heat-memory" => {
            arity(0)?;
            heat_memory()
        }
        "nscl" => {
            arity(5)?;
            nscl(args[0], args[1], args[2], args[3], args[4])?
        }
        _ => return Err(parse_err("scenario", None, format!("unknown builtin `{head}`"))),
    };
    validate_system(&sys)?.into_result()?;
    Ok(Scenario::with_system(spec, sys))
}

/// A builtin name or the path of a config file.
pub fn load_scenario(spec: &str) -> Result<Scenario> {
    let path = std::path::Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        parse_scenario(&text)
    } else {
        builtin(spec)
    }
}

/// 1-based line of `key` inside `[section]`.
fn line_of(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in src.lines().enumerate() {
        let l = line.trim();
        if l.starts_with('[') && !l.starts_with("[[") {
            current = l.trim_matches(|ch| ch == '[' || ch == ']').trim().to_string();
            if key.is_empty() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some(rest) = l.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

struct Fields<'a> {
    src: &'a str,
    section: &'static str,
    table: Option<&'a Table>,
}

impl<'a> Fields<'a> {
    fn err(&self, key: &str, message: impl Into<String>) -> Error {
        parse_err(&format!("{}.{key}", self.section), line_of(self.src, self.section, key), message)
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn float(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(x)) => Ok(Some(*x as f64)),
            Some(v) => Err(self.err(key, format!("expected a number, found {}", v.type_str()))),
        }
    }

    fn uint(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(x)) if *x >= 0 => Ok(Some(*x as u64)),
            Some(v) => Err(self.err(key, format!("expected a non-negative integer, found {v}"))),
        }
    }

    fn string(&self, key: &str) -> Result<Option<&'a str>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(self.err(key, format!("expected a string, found {}", v.type_str()))),
        }
    }

    fn entry(&self, key: &str, i: usize, j: usize, v: &Value) -> Result<C> {
        let num = |x: &Value| match x {
            Value::Float(f) => Some(*f),
            Value::Integer(k) => Some(*k as f64),
            _ => None,
        };
        if let Some(x) = num(v) {
            return Ok(c(x, 0.0));
        }
        if let Value::Array(p) = v {
            if p.len() == 2 {
                if let (Some(re), Some(im)) = (num(&p[0]), num(&p[1])) {
                    return Ok(c(re, im));
                }
            }
        }
        Err(self.err(key, format!("entry ({i}, {j}) must be a number or an [re, im] pair, found {v}")))
    }

    fn matrix(&self, key: &str, rows: usize, cols: Option<usize>) -> Result<CMat> {
        let v = self.get(key).ok_or_else(|| self.err(key, "missing matrix"))?;
        let Value::Array(rs) = v else {
            return Err(self.err(key, "expected an array of rows"));
        };
        if rs.len() != rows {
            return Err(self.err(key, format!("expected {rows} rows, found {}", rs.len())));
        }
        let mut data: Vec<Vec<C>> = Vec::with_capacity(rows);
        for (i, r) in rs.iter().enumerate() {
            let Value::Array(es) = r else {
                return Err(self.err(key, format!("row {i} is not an array")));
            };
            let want = cols.or(data.first().map(|d| d.len())).unwrap_or(es.len());
            if es.len() != want {
                return Err(self.err(key, format!("row {i} has {} entries, expected {want}", es.len())));
            }
            data.push(es.iter().enumerate().map(|(j, e)| self.entry(key, i, j, e)).collect::<Result<_>>()?);
        }
        let ncols = data.first().map(|d| d.len()).unwrap_or(0);
        Ok(CMat::from_fn(rows, ncols, |i, j| data[i][j]))
    }
}

/// Parse the TOML scenario format.
pub fn parse_scenario(src: &str) -> Result<Scenario> {
    let doc: Table = toml::from_str(src).map_err(|e| {
        let line = e.span().map(|s| src[..s.start.min(src.len())].lines().count().max(1));
        parse_err("config", line, e.message().to_string())
    })?;
    let section = |name: &'static str| -> Result<Fields> {
        let table = match doc.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => return Err(parse_err(name, line_of(src, name, ""), "expected a table")),
        };
        Ok(Fields { src, section: name, table })
    };
    let system = section("system")?;
    let geometry = section("geometry")?;
    let experiment = section("experiment")?;
    if system.table.is_none() {
        return Err(parse_err("system", None, "missing [system] section"));
    }

    let mut sc = if let Some(b) = system.string("builtin")? {
        builtin(b).map_err(|e| match e {
            Error::Parse { message, .. } => system.err("builtin", message),
            other => other,
        })?
    } else {
        let d1 = system.uint("d1")?.ok_or_else(|| system.err("d1", "missing"))? as usize;
        let d2 = system.uint("d2")?.ok_or_else(|| system.err("d2", "missing"))? as usize;
        let d = d1 + d2;
        let a = system.matrix("A", d, Some(d))?;
        let diff = system.matrix("D", d2, Some(d2))?;
        let k = match system.get("K") {
            Some(_) => system.matrix("K", d, Some(d))?,
            None => CMat::zeros(d, d),
        };
        let m = match system.get("M") {
            Some(_) => system.matrix("M", d, None)?,
            None => CMat::identity(d, d),
        };
        let sys = SystemMatrices::new(d1, d2, a, diff, k, m)
            .map_err(|e| system.err("A", e.to_string()))?;
        validate_system(&sys)?.into_result()?;
        let name = system.string("name")?.unwrap_or("custom");
        Scenario::with_system(name, sys)
    };
    if let Some(n) = system.string("name")? {
        sc.name = n.to_string();
    }

    match geometry.get("omega") {
        None => {}
        Some(Value::String(s)) if s == "full" => sc.omega = TorusSubset::full(),
        Some(Value::Array(arcs)) => {
            let mut v = Vec::new();
            for (i, a) in arcs.iter().enumerate() {
                let pair = match a {
                    Value::Array(p) if p.len() == 2 => p
                        .iter()
                        .map(|x| match x {
                            Value::Float(f) => Some(*f),
                            Value::Integer(k) => Some(*k as f64),
                            _ => None,
                        })
                        .collect::<Option<Vec<f64>>>(),
                    _ => None,
                };
                let p = pair.ok_or_else(|| geometry.err("omega", format!("arc {i} must be a pair of numbers")))?;
                v.push((p[0], p[1]));
            }
            sc.omega = TorusSubset::new(&v).map_err(|e| geometry.err("omega", e.to_string()))?;
        }
        Some(v) => return Err(geometry.err("omega", format!("expected \"full\" or a list of arcs, found {v}"))),
    }

    if let Some(k) = experiment.string("kind")? {
        sc.experiment = k.parse().map_err(|_| experiment.err("kind", format!("unknown experiment `{k}`")))?;
    }
    sc.t = experiment.float("T")?;
    sc.t_factor = experiment.float("T_factor")?;
    sc.tprime = experiment.float("Tprime")?;
    for (key, v) in [("T", sc.t), ("T_factor", sc.t_factor), ("Tprime", sc.tprime)] {
        if let Some(x) = v {
            if !(x > 0.0 && x.is_finite()) {
                return Err(experiment.err(key, format!("must be positive and finite, got {x}")));
            }
        }
    }
    if let Some(n) = experiment.uint("nmax")? {
        if n == 0 {
            return Err(experiment.err("nmax", "must be at least 1"));
        }
        sc.nmax = n as usize;
    }
    sc.n0 = experiment.uint("n0")?.map(|n| n as usize);
    if let Some(s) = experiment.uint("seed")? {
        sc.seed = s;
    }
    if let Some(v) = experiment.get("orders") {
        let Value::Array(os) = v else {
            return Err(experiment.err("orders", "expected an array of integers"));
        };
        sc.orders = os
            .iter()
            .map(|o| match o {
                Value::Integer(k) if *k > 0 => Ok(*k as usize),
                _ => Err(experiment.err("orders", format!("`{o}` is not a positive integer"))),
            })
            .collect::<Result<_>>()?;
    }
    Ok(sc)
}
