//! Longitudinal panels, model configuration and coefficient state.
//!
//! Arrays are dense and row-major with the individual as the leading axis:
//! `y[i*m + t]`, `x[(i*m + t)*p + k]`, `z[(i*m + t)*q + j]`. The block-diagonal
//! grand design is never formed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MdspError, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Balanced panel of `N` individuals observed `m` times each.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset<T> {
    ids: Vec<String>,
    m: usize,
    p: usize,
    q: usize,
    y: Vec<T>,
    x: Vec<T>,
    z: Vec<T>,
}

/// A single broken dataset invariant, with its location.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    NoIndividuals,
    TooFewMeasurements { m: usize },
    NoHeterogeneousCovariates,
    DuplicateId { id: String },
    NonFiniteValue {
        array: &'static str,
        individual: usize,
        time: usize,
        column: usize,
    },
}

impl<T: Scalar> LongitudinalDataset<T> {
    /// Builds a dataset and checks every invariant.
    pub fn new(
        ids: Vec<String>,
        m: usize,
        p: usize,
        q: usize,
        y: Vec<T>,
        x: Vec<T>,
        z: Vec<T>,
    ) -> Result<Self> {
        let ds = Self::from_parts_unchecked(ids, m, p, q, y, x, z)?;
        let violations = ds.validate();
        match violations.into_iter().next() {
            None => Ok(ds),
            Some(Violation::NonFiniteValue {
                array,
                individual,
                time,
                column,
            }) => Err(MdspError::NonFiniteValue {
                row: individual * ds.m + time,
                column: column_label(array, column),
            }),
            Some(v) => Err(MdspError::InvalidDataset(format!("{v:?}"))),
        }
    }

    /// Builds a dataset checking only that array lengths agree. Used for
    /// single-individual problems (fewer than two measurements is legal
    /// there) and for exercising [`Self::validate`].
    pub fn from_parts_unchecked(
        ids: Vec<String>,
        m: usize,
        p: usize,
        q: usize,
        y: Vec<T>,
        x: Vec<T>,
        z: Vec<T>,
    ) -> Result<Self> {
        let n = ids.len();
        if y.len() != n * m || x.len() != n * m * p || z.len() != n * m * q {
            return Err(MdspError::ShapeMismatch(format!(
                "N={n}, m={m}, p={p}, q={q} but |y|={}, |x|={}, |z|={}",
                y.len(),
                x.len(),
                z.len()
            )));
        }
        Ok(Self {
            ids,
            m,
            p,
            q,
            y,
            x,
            z,
        })
    }

    /// Lists every broken invariant; empty iff the dataset is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.ids.is_empty() {
            out.push(Violation::NoIndividuals);
        }
        if self.m < 2 {
            out.push(Violation::TooFewMeasurements { m: self.m });
        }
        if self.p == 0 {
            out.push(Violation::NoHeterogeneousCovariates);
        }
        let mut seen = HashSet::new();
        for id in &self.ids {
            if !seen.insert(id.as_str()) {
                out.push(Violation::DuplicateId { id: id.clone() });
            }
        }
        let m = self.m.max(1);
        let mut scan = |array: &'static str, data: &[T], width: usize| {
            for (idx, v) in data.iter().enumerate() {
                if !v.is_finite() {
                    let row = idx / width;
                    out.push(Violation::NonFiniteValue {
                        array,
                        individual: row / m,
                        time: row % m,
                        column: idx % width,
                    });
                }
            }
        };
        scan("y", &self.y, 1);
        scan("x", &self.x, self.p.max(1));
        scan("z", &self.z, self.q.max(1));
        out
    }

    #[inline]
    pub fn n_individuals(&self) -> usize {
        self.ids.len()
    }

    #[inline]
    pub fn measurements(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn n_obs(&self) -> usize {
        self.ids.len() * self.m
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    pub fn x(&self) -> &[T] {
        &self.x
    }

    pub fn z(&self) -> &[T] {
        &self.z
    }

    #[inline]
    pub fn y_i(&self, i: usize) -> &[T] {
        &self.y[i * self.m..(i + 1) * self.m]
    }

    /// The `m × p` covariate block of individual `i`, row-major.
    #[inline]
    pub fn x_i(&self, i: usize) -> &[T] {
        let w = self.m * self.p;
        &self.x[i * w..(i + 1) * w]
    }

    /// The `m × q` covariate block of individual `i`, row-major.
    #[inline]
    pub fn z_i(&self, i: usize) -> &[T] {
        let w = self.m * self.q;
        &self.z[i * w..(i + 1) * w]
    }

    /// Column `k` of `X_i`.
    pub fn x_col(&self, i: usize, k: usize) -> Vec<T> {
        let xi = self.x_i(i);
        (0..self.m).map(|t| xi[t * self.p + k]).collect()
    }

    /// Column `j` of `Z_i`.
    pub fn z_col(&self, i: usize, j: usize) -> Vec<T> {
        let zi = self.z_i(i);
        (0..self.m).map(|t| zi[t * self.q + j]).collect()
    }

    /// Fitted means `X_i β_i + Z_i α` for all individuals, flattened like `y`.
    pub fn fitted(&self, alpha: &[T], beta: &Matrix<T>) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_obs());
        for i in 0..self.n_individuals() {
            let (xi, zi, bi) = (self.x_i(i), self.z_i(i), beta.row(i));
            for t in 0..self.m {
                let mut mu = T::zero();
                for k in 0..self.p {
                    mu += xi[t * self.p + k] * bi[k];
                }
                for j in 0..self.q {
                    mu += zi[t * self.q + j] * alpha[j];
                }
                out.push(mu);
            }
        }
        out
    }

    /// Residual sum of squares `‖Y − Ŷ‖²`.
    pub fn rss(&self, alpha: &[T], beta: &Matrix<T>) -> T {
        self.fitted(alpha, beta)
            .iter()
            .zip(&self.y)
            .map(|(&mu, &y)| (y - mu) * (y - mu))
            .sum()
    }

    /// Residual matrix `y − Xβ − Zα` as `N × m`.
    pub fn residuals(&self, alpha: &[T], beta: &Matrix<T>) -> Matrix<T> {
        let fitted = self.fitted(alpha, beta);
        let r = self.y.iter().zip(&fitted).map(|(&y, &f)| y - f).collect();
        Matrix::from_vec(self.n_individuals(), self.m, r)
    }

    /// Subset of individuals, in the given order.
    pub fn select(&self, individuals: &[usize]) -> Self {
        let mut out = Self {
            ids: Vec::with_capacity(individuals.len()),
            m: self.m,
            p: self.p,
            q: self.q,
            y: Vec::new(),
            x: Vec::new(),
            z: Vec::new(),
        };
        for &i in individuals {
            out.ids.push(self.ids[i].clone());
            out.y.extend_from_slice(self.y_i(i));
            out.x.extend_from_slice(self.x_i(i));
            out.z.extend_from_slice(self.z_i(i));
        }
        out
    }

    /// Keeps only the heterogeneous covariate `k` and moves the contribution
    /// of every other heterogeneous covariate into the response as a fixed
    /// offset `Σ_{k'≠k} x_{k'} β_{ik'}`.
    pub fn isolate_covariate(&self, k: usize, fixed_beta: &Matrix<T>) -> Self {
        let (m, p) = (self.m, self.p);
        let mut y = self.y.clone();
        let mut x = Vec::with_capacity(self.n_obs());
        for i in 0..self.n_individuals() {
            let xi = self.x_i(i);
            for t in 0..m {
                let mut offset = T::zero();
                for kk in 0..p {
                    if kk != k {
                        offset += xi[t * p + kk] * fixed_beta[(i, kk)];
                    }
                }
                y[i * m + t] -= offset;
                x.push(xi[t * p + k]);
            }
        }
        Self {
            ids: self.ids.clone(),
            m,
            p: 1,
            q: self.q,
            y,
            x,
            z: self.z.clone(),
        }
    }
}

fn column_label(array: &str, column: usize) -> String {
    match array {
        "y" => "y".to_string(),
        other => format!("{other}{}", column + 1),
    }
}

/// Column names of the long-format CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub id: String,
    pub time: String,
    pub y: String,
    /// Heterogeneous-effect columns. Empty means "every `x<k>` column".
    pub x: Vec<String>,
    /// Shared-effect columns. Empty means "every `z<j>` column".
    pub z: Vec<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            time: "time".into(),
            y: "y".into(),
            x: Vec::new(),
            z: Vec::new(),
        }
    }
}

impl ColumnSchema {
    /// Resolves empty `x`/`z` lists against a header by collecting the
    /// `x1, x2, …` and `z1, z2, …` columns in numeric order.
    fn resolve(&self, header: &[String]) -> Self {
        let numbered = |prefix: char| {
            let mut cols: Vec<(u32, String)> = header
                .iter()
                .filter_map(|h| {
                    let rest = h.strip_prefix(prefix)?;
                    rest.parse::<u32>().ok().map(|n| (n, h.clone()))
                })
                .collect();
            cols.sort();
            cols.into_iter().map(|(_, h)| h).collect::<Vec<_>>()
        };
        let mut out = self.clone();
        if out.x.is_empty() {
            out.x = numbered('x');
        }
        if out.z.is_empty() {
            out.z = numbered('z');
        }
        out
    }
}

#[derive(Debug, Clone)]
enum TimeKey {
    Num(f64),
    Text(String),
}

fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

/// Reads a long-format panel from a CSV file.
pub fn load_dataset<T: Scalar>(
    path: impl AsRef<Path>,
    schema: &ColumnSchema,
) -> Result<LongitudinalDataset<T>> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, schema)
}

/// Reads a long-format panel from any reader. Rows are grouped by id and
/// ordered by time within each id; ids are ordered numerically when they all
/// parse as integers, lexically otherwise.
pub fn read_dataset<T: Scalar, R: Read>(
    reader: R,
    schema: &ColumnSchema,
) -> Result<LongitudinalDataset<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let schema = schema.resolve(&header);
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MdspError::MissingColumn(name.to_string()))
    };
    let id_col = find(&schema.id)?;
    let time_col = find(&schema.time)?;
    let y_col = find(&schema.y)?;
    if schema.x.is_empty() {
        return Err(MdspError::MissingColumn("x1".into()));
    }
    let x_cols = schema.x.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let z_cols = schema.z.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let (p, q) = (x_cols.len(), z_cols.len());

    struct Row<T> {
        time: TimeKey,
        values: Vec<T>,
    }
    let mut groups: HashMap<String, Vec<Row<T>>> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut numeric_time = true;
    for (line, record) in rdr.records().enumerate() {
        // header is line 1
        let row = line + 2;
        let record = record?;
        let field = |c: usize| {
            record.get(c).ok_or_else(|| MdspError::Parse {
                row,
                message: format!("missing field {}", header[c]),
            })
        };
        let id = field(id_col)?.to_string();
        let time_raw = field(time_col)?;
        let time = match time_raw.parse::<f64>() {
            Ok(t) if t.is_finite() => TimeKey::Num(t),
            _ => {
                numeric_time = false;
                TimeKey::Text(time_raw.to_string())
            }
        };
        let mut values = Vec::with_capacity(1 + p + q);
        for &c in std::iter::once(&y_col).chain(&x_cols).chain(&z_cols) {
            let raw = field(c)?;
            let v: T = raw.parse().map_err(|_| MdspError::Parse {
                row,
                message: format!("cannot parse `{raw}` in column {}", header[c]),
            })?;
            if !v.is_finite() {
                return Err(MdspError::NonFiniteValue {
                    row,
                    column: header[c].clone(),
                });
            }
            values.push(v);
        }
        let entry = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            Vec::new()
        });
        entry.push(Row { time, values });
    }
    if order.is_empty() {
        return Err(MdspError::InvalidDataset("no data rows".into()));
    }
    order.sort_by(|a, b| compare_ids(a, b));

    let m = groups[&order[0]].len();
    for id in &order {
        let found = groups[id].len();
        if found != m {
            return Err(MdspError::UnbalancedPanel {
                id: id.clone(),
                found,
                expected: m,
            });
        }
    }

    let key_cmp = |a: &TimeKey, b: &TimeKey| match (a, b) {
        (TimeKey::Num(x), TimeKey::Num(y)) if numeric_time => x.total_cmp(y),
        _ => time_text(a).cmp(&time_text(b)),
    };
    let n = order.len();
    let mut y = Vec::with_capacity(n * m);
    let mut x = Vec::with_capacity(n * m * p);
    let mut z = Vec::with_capacity(n * m * q);
    for id in &order {
        let rows = groups.get_mut(id).expect("grouped id");
        rows.sort_by(|a, b| key_cmp(&a.time, &b.time));
        for w in rows.windows(2) {
            if key_cmp(&w[0].time, &w[1].time) == Ordering::Equal {
                return Err(MdspError::InvalidDataset(format!(
                    "id `{id}` has repeated time `{}`",
                    time_text(&w[0].time)
                )));
            }
        }
        for r in rows.iter() {
            y.push(r.values[0]);
            x.extend_from_slice(&r.values[1..1 + p]);
            z.extend_from_slice(&r.values[1 + p..]);
        }
    }
    LongitudinalDataset::new(order, m, p, q, y, x, z)
}

fn time_text(t: &TimeKey) -> String {
    match t {
        TimeKey::Num(v) => format!("{v}"),
        TimeKey::Text(s) => s.clone(),
    }
}

/// Writes the dataset as long-format CSV with header `id,time,y,x1..,z1..`.
/// Time is the 1-based measurement index.
pub fn write_dataset<T: Scalar, W: Write>(ds: &LongitudinalDataset<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "time".to_string(), "y".to_string()];
    header.extend((1..=ds.p).map(|k| format!("x{k}")));
    header.extend((1..=ds.q).map(|j| format!("z{j}")));
    w.write_record(&header)?;
    for i in 0..ds.n_individuals() {
        let (xi, zi, yi) = (ds.x_i(i), ds.z_i(i), ds.y_i(i));
        for t in 0..ds.m {
            let mut rec = vec![ds.ids[i].clone(), (t + 1).to_string(), yi[t].to_string()];
            rec.extend(xi[t * ds.p..(t + 1) * ds.p].iter().map(T::to_string));
            rec.extend(zi[t * ds.q..(t + 1) * ds.q].iter().map(T::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset<T: Scalar>(ds: &LongitudinalDataset<T>, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(ds, std::fs::File::create(path)?)
}

/// Working-correlation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    Independence,
    Exchangeable,
    Ar1,
}

impl std::str::FromStr for CorrelationKind {
    type Err = MdspError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ind" | "independence" => Ok(Self::Independence),
            "exch" | "exchangeable" => Ok(Self::Exchangeable),
            "ar1" | "ar-1" => Ok(Self::Ar1),
            other => Err(MdspError::InvalidConfig(format!(
                "unknown correlation `{other}` (expected ind, exch or ar1)"
            ))),
        }
    }
}

impl std::fmt::Display for CorrelationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Independence => "ind",
            Self::Exchangeable => "exch",
            Self::Ar1 => "ar1",
        })
    }
}

/// Sign requirement on one non-zero group effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SignConstraint {
    #[default]
    Free,
    Positive,
    Negative,
}

impl SignConstraint {
    #[inline]
    pub fn admits<T: Scalar>(self, v: T) -> bool {
        match self {
            Self::Free => true,
            Self::Positive => v > T::zero(),
            Self::Negative => v < T::zero(),
        }
    }
}

/// How the `(ν, γ)` block of each ADMM iteration is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GammaUpdate {
    /// Exact joint minimization: every group effect is located by a
    /// one-dimensional search over the profile objective with `ν` eliminated.
    #[default]
    Profile,
    /// Alternate the closed-form `ν` prox with a penalty-only search for `γ`
    /// over the distinct non-zero `ν` values.
    Alternating,
}

/// How `ModelConfig::kappa` is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KappaScale {
    /// Multiplier of the average diagonal of `X_iᵀWX_i`, so the augmented
    /// term keeps pace with the loss curvature as `m` grows.
    #[default]
    Gram,
    /// Used as given.
    Absolute,
}

/// Tuning and algorithm settings for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "")]
pub struct ModelConfig<T: Scalar> {
    pub lambda: T,
    pub kappa: T,
    pub kappa_scale: KappaScale,
    pub correlation: CorrelationKind,
    /// Fixed working-correlation parameter; estimated when absent.
    pub rho: Option<T>,
    /// Number of subgroups per covariate, zero group included. Empty means
    /// two groups for every covariate.
    pub groups_per_covariate: Vec<usize>,
    /// Optional per-covariate sign requirements on the `B_k − 1` group effects.
    pub sign_constraints: Vec<Option<Vec<SignConstraint>>>,
    pub eps_primal: T,
    pub eps_residual: T,
    pub max_iterations: usize,
    /// Grid size of the fallback γ search used when a sign-constrained
    /// candidate set is empty.
    pub gamma_grid_resolution: usize,
    /// Random restarts after the warm start.
    pub n_restarts: usize,
    pub seed: u64,
    pub gamma_update: GammaUpdate,
    /// Re-solve the identified face exactly after ADMM terminates.
    pub polish: bool,
}

impl<T: Scalar> Default for ModelConfig<T> {
    fn default() -> Self {
        Self {
            lambda: T::zero(),
            kappa: T::lit(2.0),
            kappa_scale: KappaScale::Gram,
            correlation: CorrelationKind::Independence,
            rho: None,
            groups_per_covariate: Vec::new(),
            sign_constraints: Vec::new(),
            eps_primal: T::lit(1e-5),
            eps_residual: T::lit(1e-4),
            max_iterations: 2000,
            gamma_grid_resolution: 200,
            n_restarts: 3,
            seed: 0,
            gamma_update: GammaUpdate::Profile,
            polish: true,
        }
    }
}

impl<T: Scalar> ModelConfig<T> {
    pub fn with_lambda(mut self, lambda: T) -> Self {
        self.lambda = lambda;
        self
    }

    /// `B_k` for covariate `k`.
    pub fn groups(&self, k: usize) -> usize {
        self.groups_per_covariate.get(k).copied().unwrap_or(2)
    }

    /// Sign requirement of group `l` (1-based) of covariate `k`.
    pub fn constraint(&self, k: usize, l: usize) -> SignConstraint {
        self.sign_constraints
            .get(k)
            .and_then(Option::as_ref)
            .and_then(|c| c.get(l - 1).copied())
            .unwrap_or_default()
    }

    pub fn constraints_for(&self, k: usize) -> Vec<SignConstraint> {
        (1..self.groups(k)).map(|l| self.constraint(k, l)).collect()
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let bad = |msg: String| Err(MdspError::InvalidConfig(msg));
        if !(self.lambda >= T::zero()) || !self.lambda.is_finite() {
            return bad(format!("lambda must be a finite non-negative number, got {}", self.lambda));
        }
        if !(self.kappa > T::zero()) || !self.kappa.is_finite() {
            return bad(format!("kappa must be positive, got {}", self.kappa));
        }
        if !(self.eps_primal > T::zero()) || !(self.eps_residual > T::zero()) {
            return bad("tolerances must be positive".into());
        }
        if !self.groups_per_covariate.is_empty() && self.groups_per_covariate.len() != p {
            return bad(format!(
                "{} group counts given for {p} covariates",
                self.groups_per_covariate.len()
            ));
        }
        if let Some(b) = self.groups_per_covariate.iter().find(|&&b| b < 2) {
            return bad(format!("every covariate needs at least 2 groups, got {b}"));
        }
        if self.sign_constraints.len() > p {
            return bad("more sign-constraint entries than covariates".into());
        }
        for (k, c) in self.sign_constraints.iter().enumerate() {
            if let Some(c) = c {
                if c.len() != self.groups(k) - 1 {
                    return bad(format!(
                        "covariate {k}: {} sign constraints for {} groups",
                        c.len(),
                        self.groups(k)
                    ));
                }
            }
        }
        if let Some(rho) = self.rho {
            if !rho.is_finite() {
                return bad("rho must be finite".into());
            }
        }
        Ok(())
    }
}

/// ADMM variables `(α, β, ν, γ, Λ)` at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CoefficientState<T: Scalar> {
    pub alpha: Vec<T>,
    pub beta: Matrix<T>,
    pub nu: Matrix<T>,
    /// Per covariate, the `B_k − 1` non-zero group effects.
    pub gamma: Vec<Vec<T>>,
    pub lambda_dual: Matrix<T>,
}

impl<T: Scalar> CoefficientState<T> {
    pub fn zeros(n: usize, p: usize, q: usize, groups: &[usize]) -> Self {
        Self {
            alpha: vec![T::zero(); q],
            beta: Matrix::zeros(n, p),
            nu: Matrix::zeros(n, p),
            gamma: groups.iter().map(|&b| vec![T::zero(); b - 1]).collect(),
            lambda_dual: Matrix::zeros(n, p),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.iter().all(|v| v.is_finite())
            && self.beta.as_slice().iter().all(|v| v.is_finite())
            && self.nu.as_slice().iter().all(|v| v.is_finite())
            && self.lambda_dual.as_slice().iter().all(|v| v.is_finite())
            && self.gamma.iter().flatten().all(|v| v.is_finite())
    }

    pub fn gamma_flat(&self) -> Vec<T> {
        self.gamma.iter().flatten().copied().collect()
    }
}

/// Per covariate, the subgroup label of every individual: `Some(0)` is the
/// zero-effect group, `Some(l)` means the coefficient equals `γ_k^{(l)}`
/// exactly, and `None` marks a free value that sits on no direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupAssignment {
    pub labels: Vec<Vec<Option<usize>>>,
}

impl SubgroupAssignment {
    /// Reads labels off coefficients that have been snapped to directions.
    pub fn from_coefficients<T: Scalar>(beta: &Matrix<T>, gamma: &[Vec<T>]) -> Self {
        let labels = (0..beta.cols())
            .map(|k| {
                (0..beta.rows())
                    .map(|i| {
                        let b = beta[(i, k)];
                        if b == T::zero() {
                            Some(0)
                        } else {
                            gamma[k].iter().position(|&g| g == b).map(|l| l + 1)
                        }
                    })
                    .collect()
            })
            .collect();
        Self { labels }
    }

    /// Every cell carries a group label (no free values).
    pub fn is_complete(&self) -> bool {
        self.labels.iter().flatten().all(Option::is_some)
    }

    /// Signal set `𝒜_i`: covariates with a non-zero label for individual `i`.
    pub fn active_set(&self, i: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, col)| col[i] != Some(0))
            .map(|(k, _)| k)
            .collect()
    }

    /// Members of each group of covariate `k`, keyed by label.
    pub fn partition(&self, k: usize) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, l) in self.labels[k].iter().enumerate() {
            if let Some(l) = l {
                out.entry(*l).or_default().push(i);
            }
        }
        out
    }
}
