//! Scenario files: JSON parsed into typed, validated task inputs. Every
//! validation failure names the offending field by its dotted path.

use std::fmt;

use num_complex::Complex64;
use serde::Serialize;
use serde_json::{Map, Value};

use jeq_core::cusp_model::{background_coefficients, CuspGeometry, CuspSolveOptions, DivisorModel};
use jeq_core::geom_core::ddc;
use jeq_core::path_solver::PathConfig;
use jeq_core::surface_classes::{parse_rational, Rational, SurfaceClassData};
use jeq_core::{Grid, HermitianField, Mat, PotentialField};

use crate::expr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    SolveTorus,
    SolveCusp,
    CheckSubsolution,
    Classes,
    Energies,
    Sweep,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::SolveTorus => "solve-torus",
            Task::SolveCusp => "solve-cusp",
            Task::CheckSubsolution => "check-subsolution",
            Task::Classes => "classes",
            Task::Energies => "energies",
            Task::Sweep => "sweep",
        }
    }

    pub fn from_name(s: &str) -> Option<Task> {
        [
            Task::SolveTorus,
            Task::SolveCusp,
            Task::CheckSubsolution,
            Task::Classes,
            Task::Energies,
            Task::Sweep,
        ]
        .into_iter()
        .find(|t| t.name() == s)
    }
}

/// ConfigInvalid: a scenario that cannot be run, with the field (and, for syntax
/// errors, the line and column) at fault.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ConfigInvalid: {}: {}", self.field, self.msg)
    }
}

impl std::error::Error for ConfigError {}

type Res<T> = std::result::Result<T, ConfigError>;

fn invalid<T>(field: &str, msg: impl Into<String>) -> Res<T> {
    Err(ConfigError {
        field: field.to_string(),
        msg: msg.into(),
    })
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// A JSON object being read, remembering its dotted path.
struct Obj<'a> {
    path: String,
    map: &'a Map<String, Value>,
}

impl<'a> Obj<'a> {
    fn new(path: &str, v: &'a Value) -> Res<Self> {
        match v.as_object() {
            Some(map) => Ok(Obj {
                path: path.to_string(),
                map,
            }),
            None => invalid(path, "expected an object"),
        }
    }

    fn field(&self, key: &str) -> String {
        join(&self.path, key)
    }

    fn allow(&self, keys: &[&str]) -> Res<()> {
        for k in self.map.keys() {
            if !keys.contains(&k.as_str()) {
                return invalid(
                    &self.field(k),
                    format!("unknown field (expected one of: {})", keys.join(", ")),
                );
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn req(&self, key: &str) -> Res<&'a Value> {
        match self.get(key) {
            Some(v) => Ok(v),
            None => invalid(&self.field(key), "missing required field"),
        }
    }

    fn f64_of(&self, key: &str, v: &Value) -> Res<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Ok(x),
            _ => invalid(
                &self.field(key),
                format!("expected a finite number, got {v}"),
            ),
        }
    }

    fn req_f64(&self, key: &str) -> Res<f64> {
        self.f64_of(key, self.req(key)?)
    }

    fn opt_f64(&self, key: &str) -> Res<Option<f64>> {
        self.get(key).map(|v| self.f64_of(key, v)).transpose()
    }

    fn usize_of(&self, key: &str, v: &Value) -> Res<usize> {
        match v.as_u64() {
            Some(x) => Ok(x as usize),
            None => invalid(
                &self.field(key),
                format!("expected a non-negative integer, got {v}"),
            ),
        }
    }

    fn req_usize(&self, key: &str) -> Res<usize> {
        self.usize_of(key, self.req(key)?)
    }

    fn opt_usize(&self, key: &str) -> Res<Option<usize>> {
        self.get(key).map(|v| self.usize_of(key, v)).transpose()
    }

    fn opt_bool(&self, key: &str) -> Res<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Bool(b)) => Ok(Some(*b)),
            Some(v) => invalid(&self.field(key), format!("expected true or false, got {v}")),
        }
    }

    fn str_of(&self, key: &str, v: &'a Value) -> Res<&'a str> {
        match v.as_str() {
            Some(s) => Ok(s),
            None => invalid(&self.field(key), format!("expected a string, got {v}")),
        }
    }

    fn sub(&self, key: &str) -> Res<Option<Obj<'a>>> {
        self.get(key)
            .map(|v| Obj::new(&self.field(key), v))
            .transpose()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub n: usize,
    #[serde(rename = "N")]
    pub points: usize,
    pub periods: Vec<f64>,
}

impl GridSpec {
    pub fn build(&self) -> Grid {
        Grid::with_periods(self.n, self.points, self.periods.clone()).expect("validated grid")
    }
}

fn parse_grid(o: &Obj) -> Res<GridSpec> {
    o.allow(&["n", "N", "periods"])?;
    let n = o.req_usize("n")?;
    if !(1..=3).contains(&n) {
        return invalid(
            &o.field("n"),
            format!("complex dimension must be 1, 2 or 3, got {n}"),
        );
    }
    let points = o.req_usize("N")?;
    let periods = match o.get("periods") {
        None => vec![2.0 * std::f64::consts::PI; 2 * n],
        Some(Value::Array(a)) => {
            let p: Vec<f64> = a
                .iter()
                .enumerate()
                .map(|(i, v)| o.f64_of(&format!("periods[{i}]"), v))
                .collect::<Res<_>>()?;
            if p.len() != 2 * n {
                return invalid(
                    &o.field("periods"),
                    format!("expected {} periods, got {}", 2 * n, p.len()),
                );
            }
            p
        }
        Some(v) => vec![o.f64_of("periods", v)?; 2 * n],
    };
    let spec = GridSpec { n, points, periods };
    if let Err(e) = Grid::with_periods(n, points, spec.periods.clone()) {
        return invalid(&o.path, e.to_string());
    }
    Ok(spec)
}

/// A metric given as a constant matrix, or as base + dd^c f for an expression f.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSpec {
    raw: Value,
    base: Mat,
    potential: Option<expr::Expr>,
}

impl Serialize for MetricSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.raw.serialize(s)
    }
}

fn parse_matrix(path: &str, v: &Value, n: usize) -> Res<Mat> {
    let rows = match v.as_array() {
        Some(r) if r.len() == n => r,
        _ => {
            return invalid(
                path,
                format!("expected an {n}x{n} matrix as a list of rows"),
            )
        }
    };
    let mut entries = Vec::with_capacity(n * n);
    for (i, row) in rows.iter().enumerate() {
        let row = match row.as_array() {
            Some(r) if r.len() == n => r,
            _ => {
                return invalid(
                    &format!("{path}[{i}]"),
                    format!("expected a row of {n} entries"),
                )
            }
        };
        for (j, e) in row.iter().enumerate() {
            let f = format!("{path}[{i}][{j}]");
            let z = match e {
                Value::Number(x) => Complex64::new(x.as_f64().unwrap_or(f64::NAN), 0.0),
                Value::Array(p) if p.len() == 2 && p.iter().all(Value::is_number) => {
                    Complex64::new(
                        p[0].as_f64().unwrap_or(f64::NAN),
                        p[1].as_f64().unwrap_or(f64::NAN),
                    )
                }
                _ => return invalid(&f, format!("expected a number or [re, im], got {e}")),
            };
            if !(z.re.is_finite() && z.im.is_finite()) {
                return invalid(&f, "entries must be finite");
            }
            entries.push(z);
        }
    }
    let m = Mat::from_rows(n, &entries);
    if m.hermitian_defect() > 1e-12 * m.max_abs().max(1.0) {
        return invalid(path, "matrix is not Hermitian");
    }
    if !(m.min_eigenvalue() > 0.0) {
        return invalid(path, "matrix is not positive definite");
    }
    Ok(m)
}

fn parse_expr(path: &str, v: &Value, vars: usize) -> Res<expr::Expr> {
    match v {
        Value::String(s) => expr::parse(s, vars).map_err(|e| ConfigError {
            field: path.to_string(),
            msg: e.to_string(),
        }),
        Value::Number(x) => Ok(expr::Expr::Num(x.as_f64().unwrap_or(f64::NAN))),
        _ => invalid(path, format!("expected an expression string, got {v}")),
    }
}

fn parse_metric(path: &str, v: &Value, n: usize) -> Res<MetricSpec> {
    match v {
        Value::Array(_) => Ok(MetricSpec {
            raw: v.clone(),
            base: parse_matrix(path, v, n)?,
            potential: None,
        }),
        Value::String(_) => Ok(MetricSpec {
            raw: v.clone(),
            base: Mat::identity(n),
            potential: Some(parse_expr(path, v, 2 * n)?),
        }),
        Value::Object(_) => {
            let o = Obj::new(path, v)?;
            o.allow(&["flat", "potential"])?;
            let base = match o.get("flat") {
                Some(m) => parse_matrix(&o.field("flat"), m, n)?,
                None => Mat::identity(n),
            };
            let potential = o
                .get("potential")
                .map(|p| parse_expr(&o.field("potential"), p, 2 * n))
                .transpose()?;
            Ok(MetricSpec {
                raw: v.clone(),
                base,
                potential,
            })
        }
        _ => invalid(
            path,
            "expected a flat matrix, a potential expression, or {flat, potential}",
        ),
    }
}

impl MetricSpec {
    /// Evaluates the metric on the grid; positivity is checked by the caller.
    pub fn build(&self, grid: &Grid) -> HermitianField {
        let base = HermitianField::constant(grid, self.base);
        match &self.potential {
            None => base,
            Some(e) => base.add(&ddc(&PotentialField::from_fn(grid, |x| e.eval(x)))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsSpec {
    pub omega: MetricSpec,
    pub chi: MetricSpec,
    /// Rescale to ∫ω^n = ∫ω^{n−1}∧χ = 1 before solving.
    pub normalize: bool,
}

fn parse_metrics(o: &Obj, n: usize) -> Res<MetricsSpec> {
    o.allow(&["omega", "chi", "normalize"])?;
    Ok(MetricsSpec {
        omega: parse_metric(&o.field("omega"), o.req("omega")?, n)?,
        chi: parse_metric(&o.field("chi"), o.req("chi")?, n)?,
        normalize: o.opt_bool("normalize")?.unwrap_or(true),
    })
}

fn parse_path(o: &Obj) -> Res<PathConfig> {
    o.allow(&[
        "eps0",
        "eps_floor",
        "t_step",
        "newton_tol",
        "max_newton_iters",
        "delta0_monitor",
        "backtrack",
        "min_step",
        "min_dt",
        "positivity_floor",
        "krylov_rel_tol",
        "krylov_restart",
        "krylov_max_iters",
    ])?;
    let d = PathConfig::default();
    let c = PathConfig {
        eps0: o.opt_f64("eps0")?.unwrap_or(d.eps0),
        eps_floor: o.req_f64("eps_floor")?,
        t_step: o.opt_f64("t_step")?.unwrap_or(d.t_step),
        newton_tol: o.opt_f64("newton_tol")?.unwrap_or(d.newton_tol),
        max_newton_iters: o
            .opt_usize("max_newton_iters")?
            .unwrap_or(d.max_newton_iters),
        backtrack: o.opt_f64("backtrack")?.unwrap_or(d.backtrack),
        min_step: o.opt_f64("min_step")?.unwrap_or(d.min_step),
        delta0_monitor: o.opt_f64("delta0_monitor")?.unwrap_or(d.delta0_monitor),
        min_dt: o.opt_f64("min_dt")?.unwrap_or(d.min_dt),
        positivity_floor: o.opt_f64("positivity_floor")?.unwrap_or(d.positivity_floor),
        krylov_rel_tol: o.opt_f64("krylov_rel_tol")?.unwrap_or(d.krylov_rel_tol),
        krylov_restart: o.opt_usize("krylov_restart")?.unwrap_or(d.krylov_restart),
        krylov_max_iters: o.opt_usize("krylov_max_iters")?,
    };
    if let Err(e) = c.validate() {
        return invalid(&o.path, e.to_string());
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivisorSpec {
    #[serde(rename = "N")]
    pub points: usize,
    #[serde(rename = "g_D")]
    pub g_d: f64,
    /// χ_D = s · g_D · shape(x1, x2).
    pub shape: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CuspSpec {
    #[serde(rename = "A")]
    pub a_cut: f64,
    #[serde(rename = "T")]
    pub t_max: f64,
    #[serde(rename = "Mt")]
    pub mt: usize,
    pub n: usize,
    /// Fiber coefficient; derived from b and C_D or s_D when absent.
    pub a: f64,
    pub b: f64,
    #[serde(rename = "CD", skip_serializing_if = "Option::is_none")]
    pub c_d: Option<f64>,
    #[serde(rename = "sD")]
    pub s_d: f64,
    pub boundary: f64,
    pub beta: f64,
    pub window: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divisor: Option<DivisorSpec>,
    pub solver: CuspSolveOptions,
    #[serde(skip)]
    shape: Option<expr::Expr>,
}

fn parse_cusp(o: &Obj) -> Res<CuspSpec> {
    o.allow(&[
        "A",
        "T",
        "Mt",
        "n",
        "a",
        "b",
        "CD",
        "sD",
        "boundary",
        "beta",
        "window",
        "divisor",
        "newton_tol",
    ])?;
    let a_cut = o.req_f64("A")?;
    let t_max = o.req_f64("T")?;
    let mt = o.req_usize("Mt")?;
    let b = o.req_f64("b")?;
    if !(b > 0.0) {
        return invalid(&o.field("b"), "must be positive");
    }
    let divisor_obj = o.sub("divisor")?;
    let n = match (o.opt_usize("n")?, &divisor_obj) {
        (Some(n), Some(_)) if n != 2 => {
            return invalid(&o.field("n"), "a divisor torus requires n = 2")
        }
        (Some(0), None) => return invalid(&o.field("n"), "must be at least 1"),
        (Some(n), _) => n,
        (None, _) => 2,
    };
    let c_d = o.opt_f64("CD")?;
    let s_given = o.opt_f64("sD")?;
    let a_given = o.opt_f64("a")?;
    let nf = n as f64;
    let (a, s_d) = match (c_d, s_given) {
        (Some(_), Some(_)) => return invalid(&o.field("sD"), "give either CD or sD, not both"),
        (None, None) => return invalid(&o.field("CD"), "missing required field (or give sD)"),
        (Some(cd), None) => {
            let a = match a_given {
                Some(a) => a,
                None => background_coefficients(b, cd, n)
                    .or_else(|e| invalid(&o.field("CD"), e.to_string()))?,
            };
            (a, nf - b / a)
        }
        (None, Some(s)) => {
            let a = match a_given {
                Some(a) => a,
                None if s < nf => b / (nf - s),
                None => return invalid(&o.field("sD"), format!("must be below n = {n}")),
            };
            (a, s)
        }
    };
    if !(a > 0.0) {
        return invalid(
            &o.field("a"),
            format!("fiber coefficient must be positive, got {a}"),
        );
    }
    let divisor = match &divisor_obj {
        None => None,
        Some(d) => {
            d.allow(&["N", "g_D", "shape"])?;
            let shape = match d.get("shape") {
                None => "1".to_string(),
                Some(v) => match v {
                    Value::Number(x) => x.to_string(),
                    _ => d.str_of("shape", v)?.to_string(),
                },
            };
            Some(DivisorSpec {
                points: d.req_usize("N")?,
                g_d: d.req_f64("g_D")?,
                shape,
            })
        }
    };
    let shape = match (&divisor, &divisor_obj) {
        (Some(ds), Some(d)) => Some(parse_expr(
            &d.field("shape"),
            &Value::String(ds.shape.clone()),
            2,
        )?),
        _ => None,
    };
    let defaults = CuspSolveOptions::default();
    let spec = CuspSpec {
        a_cut,
        t_max,
        mt,
        n,
        a,
        b,
        c_d,
        s_d,
        boundary: o.opt_f64("boundary")?.unwrap_or(0.0),
        beta: o.opt_f64("beta")?.unwrap_or(0.0),
        window: o.opt_f64("window")?.unwrap_or(2.0),
        divisor,
        solver: CuspSolveOptions {
            newton_tol: o.opt_f64("newton_tol")?.unwrap_or(defaults.newton_tol),
            ..defaults
        },
        shape,
    };
    if !(spec.window > 0.0 && spec.window < t_max - a_cut) {
        return invalid(&o.field("window"), "must lie in (0, T − A)");
    }
    if let Err(e) = spec
        .geometry()
        .and_then(|g| g.validate().map_err(|e| e.to_string()))
    {
        return invalid(&o.path, e);
    }
    Ok(spec)
}

impl CuspSpec {
    pub fn geometry(&self) -> std::result::Result<CuspGeometry, String> {
        let divisor = match (&self.divisor, &self.shape) {
            (Some(d), Some(shape)) => {
                let grid = Grid::new(1, d.points).map_err(|e| format!("divisor: {e}"))?;
                let chi_d = (0..grid.len())
                    .map(|i| self.s_d * d.g_d * shape.eval(&grid.coords(i)))
                    .collect();
                DivisorModel::FlatTorus {
                    grid,
                    g_d: d.g_d,
                    chi_d,
                }
            }
            _ => DivisorModel::Point {
                n: self.n,
                s: self.s_d,
            },
        };
        Ok(CuspGeometry {
            a_cut: self.a_cut,
            t_max: self.t_max,
            mt: self.mt,
            a: self.a,
            b: self.b,
            tail_beta: self.beta,
            divisor,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassesSpec {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<String>>,
    pub omega: Vec<String>,
    pub chi: Vec<String>,
    #[serde(rename = "D", skip_serializing_if = "Option::is_none")]
    pub divisor: Option<Vec<String>>,
    #[serde(rename = "KX", skip_serializing_if = "Option::is_none")]
    pub kx: Option<Vec<String>>,
    pub no_negative_curves: bool,
    /// Fiber coefficient a for the b computation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<String>,
    #[serde(skip)]
    pub data: Option<SurfaceClassData>,
    #[serde(skip)]
    pub a_value: Option<Rational>,
}

fn rational_of(path: &str, v: &Value) -> Res<(String, Rational)> {
    let s = match v {
        Value::Number(x) if x.is_i64() || x.is_u64() => x.to_string(),
        Value::String(s) => s.clone(),
        _ => {
            return invalid(
                path,
                format!("expected an integer or a \"p/q\" string, got {v}"),
            )
        }
    };
    match parse_rational(&s) {
        Ok(r) => Ok((s, r)),
        Err(e) => invalid(path, e.to_string()),
    }
}

fn rational_vec(path: &str, v: &Value) -> Res<(Vec<String>, Vec<Rational>)> {
    match v.as_array() {
        Some(a) => Ok(a
            .iter()
            .enumerate()
            .map(|(i, e)| rational_of(&format!("{path}[{i}]"), e))
            .collect::<Res<Vec<_>>>()?
            .into_iter()
            .unzip()),
        None => invalid(path, "expected a list"),
    }
}

fn parse_classes(o: &Obj) -> Res<ClassesSpec> {
    o.allow(&["Q", "omega", "chi", "D", "KX", "no_negative_curves", "a"])?;
    let q_path = o.field("Q");
    let rows = match o.req("Q")?.as_array() {
        Some(r) => r,
        None => return invalid(&q_path, "expected a list of rows"),
    };
    let (q_str, q): (Vec<Vec<String>>, Vec<Vec<Rational>>) = rows
        .iter()
        .enumerate()
        .map(|(i, r)| rational_vec(&format!("{q_path}[{i}]"), r))
        .collect::<Res<Vec<_>>>()?
        .into_iter()
        .unzip();
    let (omega_s, omega) = rational_vec(&o.field("omega"), o.req("omega")?)?;
    let (chi_s, chi) = rational_vec(&o.field("chi"), o.req("chi")?)?;
    let d = o
        .get("D")
        .map(|v| rational_vec(&o.field("D"), v))
        .transpose()?;
    let kx = o
        .get("KX")
        .map(|v| rational_vec(&o.field("KX"), v))
        .transpose()?;
    let a = o
        .get("a")
        .map(|v| rational_of(&o.field("a"), v))
        .transpose()?;
    let no_negative_curves = o.opt_bool("no_negative_curves")?.unwrap_or(false);
    let data = SurfaceClassData::new(
        q,
        omega,
        chi,
        d.as_ref().map(|x| x.1.clone()),
        kx.as_ref().map(|x| x.1.clone()),
        no_negative_curves,
    )
    .or_else(|e| invalid(&o.path, e.to_string()))?;
    Ok(ClassesSpec {
        q: q_str,
        omega: omega_s,
        chi: chi_s,
        divisor: d.map(|x| x.0),
        kx: kx.map(|x| x.0),
        no_negative_curves,
        a: a.as_ref().map(|x| x.0.clone()),
        data: Some(data),
        a_value: a.map(|x| x.1),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubsolutionSpec {
    /// Weight ρ for the asymptotic deviation; omitted when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<String>,
    pub eta: f64,
    #[serde(skip)]
    rho_expr: Option<expr::Expr>,
}

impl SubsolutionSpec {
    pub fn rho(&self, grid: &Grid) -> Option<PotentialField> {
        self.rho_expr
            .as_ref()
            .map(|e| PotentialField::from_fn(grid, |x| e.eval(x)))
    }
}

fn parse_subsolution(o: Option<Obj>, n: usize) -> Res<SubsolutionSpec> {
    let Some(o) = o else {
        return Ok(SubsolutionSpec {
            rho: None,
            eta: 1.0,
            rho_expr: None,
        });
    };
    o.allow(&["rho", "eta"])?;
    let rho_v = o.get("rho");
    let rho_expr = rho_v
        .map(|v| parse_expr(&o.field("rho"), v, 2 * n))
        .transpose()?;
    let eta = o.opt_f64("eta")?.unwrap_or(1.0);
    if !(eta >= 0.0) {
        return invalid(&o.field("eta"), "must be non-negative");
    }
    Ok(SubsolutionSpec {
        rho: rho_v.map(|v| v.as_str().map(str::to_string).unwrap_or(v.to_string())),
        eta,
        rho_expr,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergiesSpec {
    pub states: Vec<String>,
    #[serde(skip)]
    exprs: Vec<expr::Expr>,
}

impl EnergiesSpec {
    pub fn states(&self, grid: &Grid) -> Vec<PotentialField> {
        self.exprs
            .iter()
            .map(|e| PotentialField::from_fn(grid, |x| e.eval(x)))
            .collect()
    }
}

fn parse_energies(o: Option<Obj>, n: usize) -> Res<EnergiesSpec> {
    let Some(o) = o else {
        return Ok(EnergiesSpec {
            states: vec!["0".into()],
            exprs: vec![expr::Expr::Num(0.0)],
        });
    };
    o.allow(&["states"])?;
    let path = o.field("states");
    let list = match o.req("states")?.as_array() {
        Some(l) if !l.is_empty() => l,
        _ => return invalid(&path, "expected a non-empty list of potential expressions"),
    };
    let mut states = Vec::new();
    let mut exprs = Vec::new();
    for (i, v) in list.iter().enumerate() {
        let f = format!("{path}[{i}]");
        exprs.push(parse_expr(&f, v, 2 * n)?);
        states.push(v.as_str().map(str::to_string).unwrap_or(v.to_string()));
    }
    Ok(EnergiesSpec { states, exprs })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSpec {
    pub task: Task,
    /// Dotted scenario path of the swept parameter, e.g. "path.eps0".
    pub parameter: String,
    pub values: Vec<Value>,
    /// Fully substituted member scenarios.
    #[serde(skip)]
    pub members: Vec<Scenario>,
}

/// A validated scenario. `raw` is the input JSON; the typed sections are what runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub task: Task,
    /// Echoed for provenance; all solvers are deterministic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cusp: Option<CuspSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<ClassesSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsolution: Option<SubsolutionSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energies: Option<EnergiesSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

/// Parses scenario text for the given subcommand. JSON syntax errors carry line and column.
pub fn parse_scenario(text: &str, task: Task) -> Res<Scenario> {
    let raw: Value = serde_json::from_str(text).map_err(|e| ConfigError {
        field: format!("line {}, column {}", e.line(), e.column()),
        msg: format!("malformed JSON: {e}"),
    })?;
    from_value(&raw, task)
}

fn require<'a, T>(o: &Obj, key: &str, v: Option<T>) -> Res<T> {
    v.map_or_else(|| invalid(&o.field(key), "missing required section"), Ok)
}

pub fn from_value(raw: &Value, task: Task) -> Res<Scenario> {
    let top = Obj::new("", raw)?;
    top.allow(&[
        "task",
        "seed",
        "grid",
        "metrics",
        "path",
        "cusp",
        "classes",
        "subsolution",
        "energies",
        "sweep",
    ])?;
    if let Some(v) = top.get("task") {
        let declared = top.str_of("task", v)?;
        if declared != task.name() {
            return invalid(
                "task",
                format!(
                    "scenario declares {declared:?} but the subcommand is {:?}",
                    task.name()
                ),
            );
        }
    }
    let seed = match top.get("seed") {
        None => None,
        Some(v) => Some(top.usize_of("seed", v)? as u64),
    };
    let mut s = Scenario {
        task,
        seed,
        grid: None,
        metrics: None,
        path: None,
        cusp: None,
        classes: None,
        subsolution: None,
        energies: None,
        sweep: None,
    };
    let needs_torus = matches!(
        task,
        Task::SolveTorus | Task::CheckSubsolution | Task::Energies
    );
    if needs_torus {
        let grid = parse_grid(&require(&top, "grid", top.sub("grid")?)?)?;
        let n = grid.n;
        s.metrics = Some(parse_metrics(
            &require(&top, "metrics", top.sub("metrics")?)?,
            n,
        )?);
        match task {
            Task::SolveTorus => {
                s.path = Some(parse_path(&require(&top, "path", top.sub("path")?)?)?)
            }
            Task::CheckSubsolution => {
                s.subsolution = Some(parse_subsolution(top.sub("subsolution")?, n)?)
            }
            Task::Energies => s.energies = Some(parse_energies(top.sub("energies")?, n)?),
            _ => {}
        }
        s.grid = Some(grid);
    }
    match task {
        Task::SolveCusp => s.cusp = Some(parse_cusp(&require(&top, "cusp", top.sub("cusp")?)?)?),
        Task::Classes => {
            s.classes = Some(parse_classes(&require(
                &top,
                "classes",
                top.sub("classes")?,
            )?)?)
        }
        Task::Sweep => {
            s.sweep = Some(parse_sweep(
                raw,
                &require(&top, "sweep", top.sub("sweep")?)?,
            )?)
        }
        _ => {}
    }
    Ok(s)
}

fn parse_sweep(raw: &Value, o: &Obj) -> Res<SweepSpec> {
    o.allow(&["task", "parameter", "values"])?;
    let tname = o.str_of("task", o.req("task")?)?;
    let task = match Task::from_name(tname) {
        Some(Task::Sweep) | None => {
            return invalid(
                &o.field("task"),
                format!("{tname:?} is not a runnable member task"),
            );
        }
        Some(t) => t,
    };
    let parameter = o.str_of("parameter", o.req("parameter")?)?.to_string();
    let values = match o.req("values")?.as_array() {
        Some(v) if !v.is_empty() => v.clone(),
        _ => return invalid(&o.field("values"), "expected a non-empty list"),
    };
    let mut members = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        let mut m = raw.clone();
        let obj = m.as_object_mut().expect("top level is an object");
        obj.remove("sweep");
        obj.insert("task".into(), Value::String(task.name().into()));
        set_path(&mut m, &parameter)
            .map_err(|msg| ConfigError {
                field: o.field("parameter"),
                msg,
            })?
            .clone_from(v);
        let member = from_value(&m, task).map_err(|e| ConfigError {
            field: format!("sweep.values[{i}] -> {}", e.field),
            msg: e.msg,
        })?;
        members.push(member);
    }
    Ok(SweepSpec {
        task,
        parameter,
        values,
        members,
    })
}

/// The slot at a dotted path, creating intermediate objects.
fn set_path<'a>(v: &'a mut Value, path: &str) -> std::result::Result<&'a mut Value, String> {
    let mut cur = v;
    for key in path.split('.') {
        if key.is_empty() {
            return Err(format!("malformed parameter path {path:?}"));
        }
        let obj = match cur {
            Value::Object(m) => m,
            _ => return Err(format!("{path:?} does not address an object field")),
        };
        cur = obj.entry(key.to_string()).or_insert(Value::Null);
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn torus(path: Value) -> Value {
        json!({
            "task": "solve-torus",
            "grid": {"n": 2, "N": 8},
            "metrics": {"omega": [[1, 0], [0, 1]], "chi": "0.05*cos(x1)"},
            "path": path,
        })
    }

    #[test]
    fn minimal_torus_scenario() {
        let s = from_value(&torus(json!({"eps_floor": 1e-3})), Task::SolveTorus).unwrap();
        let p = s.path.unwrap();
        assert_eq!(p.eps_floor, 1e-3);
        assert_eq!(p.eps0, PathConfig::default().eps0);
        assert_eq!(s.grid.unwrap().periods.len(), 4);
    }

    #[test]
    fn missing_floor_is_named() {
        let e = from_value(&torus(json!({"eps0": 0.5})), Task::SolveTorus).unwrap_err();
        assert_eq!(e.field, "path.eps_floor");
        let e = from_value(
            &torus(json!({"eps_floor": 1e-3, "epsilon": 1})),
            Task::SolveTorus,
        )
        .unwrap_err();
        assert_eq!(e.field, "path.epsilon");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e =
            parse_scenario("{\n  \"task\": \"classes\",\n  oops\n}", Task::Classes).unwrap_err();
        assert!(e.field.starts_with("line 3"), "{e}");
    }

    #[test]
    fn bad_metric_entries() {
        let mut v = torus(json!({"eps_floor": 1e-3}));
        v["metrics"]["omega"] = json!([[1, 2], [2, 1]]);
        assert_eq!(
            from_value(&v, Task::SolveTorus).unwrap_err().field,
            "metrics.omega"
        );
        v["metrics"]["omega"] = json!([[1, [0, 1]], [[0, -1], "a"]]);
        assert_eq!(
            from_value(&v, Task::SolveTorus).unwrap_err().field,
            "metrics.omega[1][1]"
        );
        v["metrics"]["omega"] = json!("cos(x5)");
        assert_eq!(
            from_value(&v, Task::SolveTorus).unwrap_err().field,
            "metrics.omega"
        );
    }

    #[test]
    fn task_mismatch() {
        let e = from_value(&torus(json!({"eps_floor": 1e-3})), Task::Energies).unwrap_err();
        assert_eq!(e.field, "task");
    }

    #[test]
    fn cusp_coefficients() {
        let v = json!({"cusp": {"A": 1, "T": 20, "Mt": 200, "b": 1, "CD": 1}});
        let c = from_value(&v, Task::SolveCusp).unwrap().cusp.unwrap();
        assert_eq!((c.a, c.s_d), (2.0, 1.5));
        let v = json!({"cusp": {"A": 1, "T": 20, "Mt": 200, "b": 1, "sD": 1.5}});
        let c = from_value(&v, Task::SolveCusp).unwrap().cusp.unwrap();
        assert_eq!((c.a, c.s_d), (2.0, 1.5));
        let v = json!({"cusp": {"A": 1, "T": 20, "Mt": 200, "b": 1, "CD": 2}});
        assert_eq!(
            from_value(&v, Task::SolveCusp).unwrap_err().field,
            "cusp.CD"
        );
        let v = json!({"cusp": {"A": 1, "T": 20, "Mt": 200, "b": 1}});
        assert_eq!(
            from_value(&v, Task::SolveCusp).unwrap_err().field,
            "cusp.CD"
        );
    }

    #[test]
    fn classes_reject_decimals() {
        let v = json!({"classes": {"Q": [[1, 0], [0, -1]], "omega": [2, 1], "chi": ["1/2", 0.5]}});
        assert_eq!(
            from_value(&v, Task::Classes).unwrap_err().field,
            "classes.chi[1]"
        );
    }

    #[test]
    fn sweep_members_are_substituted() {
        let mut v = torus(json!({"eps_floor": 1e-3}));
        v["task"] = json!("sweep");
        v["sweep"] =
            json!({"task": "solve-torus", "parameter": "path.eps0", "values": [0.5, 0.25]});
        let s = from_value(&v, Task::Sweep).unwrap().sweep.unwrap();
        assert_eq!(s.members.len(), 2);
        assert_eq!(s.members[1].path.as_ref().unwrap().eps0, 0.25);
        v["sweep"]["values"] = json!([0.5, 1e-5]);
        let e = from_value(&v, Task::Sweep).unwrap_err();
        assert!(e.field.starts_with("sweep.values[1]"), "{e}");
    }
}
