//! Linear structural-equation-model discovery via continuous optimization:
//! minimize (1/2n)·||X - XW||² + lambda1·||W||₁ subject to the smooth
//! acyclicity constraint h(W) = tr(exp(W∘W)) - d = 0, solved with an
//! augmented Lagrangian whose inner step is proximal gradient descent with
//! L1 soft-thresholding. Incoming edges to treatment columns and all
//! self-loops are tabu: hard-fixed at zero in every iterate.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NotearsError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NonSquare { rows: usize, cols: usize },
    #[error("{0}")]
    ShapeMismatch(String),
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("{rows} row(s) for {cols} column(s); need rows > columns")]
    TooFewRows { rows: usize, cols: usize },
    #[error("column {0:?} contains a non-finite value")]
    NonFinite(String),
    #[error("column {0:?} is constant; drop it before building the dataset")]
    ConstantColumn(String),
    #[error("treatment column {0:?} is not in the dataset")]
    UnknownTreatment(String),
    #[error("did not converge: h = {h_final} after exhausting the penalty schedule")]
    DidNotConverge {
        h_final: f64,
        /// Best iterate, flagged `converged: false`.
        best: Box<WeightedDag>,
    },
}

/// Column-standardized design matrix with declared treatment columns.
/// Standardization snaps a mean within 1e-12 of 0 and a standard deviation
/// within 1e-12 of 1 to those values exactly, so standardizing twice is a
/// bit-exact no-op.
#[derive(Debug, Clone)]
pub struct CausalDataset {
    column_names: Vec<String>,
    data: Array2<f64>,
    raw: Array2<f64>,
    treatment_columns: Vec<String>,
}

impl CausalDataset {
    pub fn new(
        column_names: Vec<String>,
        raw: Array2<f64>,
        treatment_columns: Vec<String>,
    ) -> Result<Self, NotearsError> {
        let (n, d) = raw.dim();
        if column_names.len() != d {
            return Err(NotearsError::ShapeMismatch(format!(
                "{} column name(s) for {d} data column(s)",
                column_names.len()
            )));
        }
        if n <= d {
            return Err(NotearsError::TooFewRows { rows: n, cols: d });
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &column_names {
            if !seen.insert(name) {
                return Err(NotearsError::DuplicateColumn(name.clone()));
            }
        }
        for t in &treatment_columns {
            if !column_names.contains(t) {
                return Err(NotearsError::UnknownTreatment(t.clone()));
            }
        }
        if n < 10 * d {
            log::warn!("causal dataset has {n} rows for {d} columns; 10x is recommended");
        }

        let mut data = raw.clone();
        for (j, name) in column_names.iter().enumerate() {
            let mut column = data.column_mut(j);
            if column.iter().any(|v| !v.is_finite()) {
                return Err(NotearsError::NonFinite(name.clone()));
            }
            let mut mean = column.sum() / n as f64;
            if mean.abs() < 1e-12 {
                mean = 0.0;
            }
            let variance =
                column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let mut sd = variance.sqrt();
            if sd < 1e-12 {
                return Err(NotearsError::ConstantColumn(name.clone()));
            }
            if (sd - 1.0).abs() < 1e-12 {
                sd = 1.0;
            }
            if mean != 0.0 || sd != 1.0 {
                column.map_inplace(|v| *v = (*v - mean) / sd);
            }
        }

        Ok(Self {
            column_names,
            data,
            raw,
            treatment_columns,
        })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Standardized matrix used for structure learning.
    pub fn standardized(&self) -> &Array2<f64> {
        &self.data
    }

    /// Original values (e.g. binary treatment indicators) for estimators
    /// that must not standardize.
    pub fn raw(&self) -> &Array2<f64> {
        &self.raw
    }

    pub fn treatment_columns(&self) -> &[String] {
        &self.treatment_columns
    }

    pub fn is_treatment(&self, index: usize) -> bool {
        self.treatment_columns
            .iter()
            .any(|t| self.column_names[index] == *t)
    }
}

/// Matrix exponential by scaling-and-squaring with a truncated Taylor
/// series; the input is scaled until its 1-norm is below 0.5, where the
/// series truncation error is far below 1e-12.
pub fn matrix_exponential(a: &Array2<f64>) -> Result<Array2<f64>, NotearsError> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(NotearsError::NonSquare { rows, cols });
    }
    let norm = one_norm(a);
    let squarings = if norm > 0.5 {
        ((norm / 0.5).log2().ceil() as i32).max(0)
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);

    let mut result = Array2::eye(rows);
    let mut term = Array2::eye(rows);
    for k in 1..=24 {
        term = term.dot(&scaled) / k as f64;
        result += &term;
        if one_norm(&term) < 1e-17 {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    Ok(result)
}

fn one_norm(a: &Array2<f64>) -> f64 {
    a.axis_iter(Axis(1))
        .map(|col| col.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// h(W) = tr(exp(W∘W)) - d; zero exactly when W's support is acyclic.
pub fn acyclicity(w: &Array2<f64>) -> Result<f64, NotearsError> {
    let squared = w * w;
    let e = matrix_exponential(&squared)?;
    Ok(e.diag().sum() - w.nrows() as f64)
}

/// Analytic gradient of `acyclicity`: exp(W∘W)ᵀ ∘ 2W.
pub fn acyclicity_gradient(w: &Array2<f64>) -> Result<Array2<f64>, NotearsError> {
    let squared = w * w;
    let e = matrix_exponential(&squared)?;
    Ok(&e.t().to_owned() * &(w * 2.0))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NotearsConfig {
    pub lambda1: f64,
    pub omega: f64,
    pub h_tol: f64,
    pub rho0: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub inner_tol: f64,
}

/// Threshold used for headline edge lists, versus the reporting default.
pub const HEADLINE_OMEGA: f64 = 0.3;

impl Default for NotearsConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            omega: 0.05,
            h_tol: 1e-8,
            rho0: 1.0,
            rho_growth: 10.0,
            rho_max: 1e16,
            max_outer: 100,
            max_inner: 100,
            inner_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub weight: f64,
}

/// Fitted weight matrix plus its thresholded edge list. `weights[i][j]` is
/// the effect of column i on column j on the standardized scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedDag {
    pub column_names: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub edges: Vec<Edge>,
    pub lambda1: f64,
    /// Effective threshold; above `requested_omega` only when the
    /// thresholded graph had to be pruned back to acyclicity.
    pub omega: f64,
    pub requested_omega: f64,
    pub omega_raised: bool,
    pub h_final: f64,
    pub converged: bool,
}

impl WeightedDag {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn weight(&self, from: &str, to: &str) -> Option<f64> {
        Some(self.weights[self.index_of(from)?][self.index_of(to)?])
    }
}

/// Fit with the default tabu rule: self-loops and every edge into a
/// treatment column are blocked.
pub fn fit(dataset: &CausalDataset, config: &NotearsConfig) -> Result<WeightedDag, NotearsError> {
    fit_with_tabu(dataset, config, |_, _| false)
}

/// Fit with extra blocked edges on top of the default tabu rule;
/// `extra_tabu(i, j)` blocks the edge from column i to column j.
pub fn fit_with_tabu(
    dataset: &CausalDataset,
    config: &NotearsConfig,
    extra_tabu: impl Fn(usize, usize) -> bool,
) -> Result<WeightedDag, NotearsError> {
    let d = dataset.d();
    let n = dataset.n() as f64;
    let x = dataset.standardized();
    let gram = x.t().dot(x);

    let mut mask = Array2::from_elem((d, d), false);
    for i in 0..d {
        for j in 0..d {
            mask[[i, j]] = i == j || dataset.is_treatment(j) || extra_tabu(i, j);
        }
    }

    let mut w = Array2::zeros((d, d));
    let mut rho = config.rho0;
    let mut alpha = 0.0;
    let mut h = f64::INFINITY;
    let mut converged = false;

    for _outer in 0..config.max_outer {
        let mut w_next = w.clone();
        let mut h_next = h;
        while rho <= config.rho_max {
            let (candidate, _trace) = inner_solve(
                &w,
                &gram,
                n,
                rho,
                alpha,
                config.lambda1,
                &mask,
                config.max_inner,
                config.inner_tol,
            );
            h_next = acyclicity(&candidate)?;
            w_next = candidate;
            if h_next > 0.25 * h {
                rho *= config.rho_growth;
            } else {
                break;
            }
        }
        w = w_next;
        h = h_next;
        alpha += rho * h;
        if h <= config.h_tol || rho > config.rho_max {
            converged = h <= config.h_tol;
            break;
        }
    }

    let dag = package(dataset, config, &w, h, converged);
    if converged {
        Ok(dag)
    } else {
        Err(NotearsError::DidNotConverge {
            h_final: h,
            best: Box::new(dag),
        })
    }
}

/// Minimize loss + 0.5·rho·h² + alpha·h + lambda1·||W||₁ from `w0` by
/// proximal gradient with backtracking. Returns the iterate and the
/// objective value after each accepted step (nonincreasing).
#[allow(clippy::too_many_arguments)]
fn inner_solve(
    w0: &Array2<f64>,
    gram: &Array2<f64>,
    n: f64,
    rho: f64,
    alpha: f64,
    lambda1: f64,
    mask: &Array2<bool>,
    max_inner: usize,
    inner_tol: f64,
) -> (Array2<f64>, Vec<f64>) {
    let d = w0.nrows();
    let eye: Array2<f64> = Array2::eye(d);

    let smooth = |w: &Array2<f64>| -> (f64, Array2<f64>) {
        let h = acyclicity(w).expect("square by construction");
        let grad_h = acyclicity_gradient(w).expect("square by construction");
        let m = &eye - w;
        let gm = gram.dot(&m);
        let loss = (&m * &gm).sum() / (2.0 * n);
        let value = loss + 0.5 * rho * h * h + alpha * h;
        let grad = &gm * (-1.0 / n) + &(&grad_h * (rho * h + alpha));
        (value, grad)
    };
    let l1 = |w: &Array2<f64>| -> f64 { w.iter().map(|v| v.abs()).sum::<f64>() * lambda1 };

    let mut w = w0.clone();
    apply_mask(&mut w, mask);
    let (mut value, mut grad) = smooth(&w);
    let mut step = 1.0;
    let mut trace = vec![value + l1(&w)];

    for _ in 0..max_inner {
        let mut accepted: Option<(Array2<f64>, f64, Array2<f64>, f64)> = None;
        while step >= 1e-13 {
            let mut candidate = &w - &(&grad * step);
            soft_threshold(&mut candidate, step * lambda1);
            apply_mask(&mut candidate, mask);
            let diff = &candidate - &w;
            let diff_sq = diff.iter().map(|v| v * v).sum::<f64>();
            let model = value + (&grad * &diff).sum() + diff_sq / (2.0 * step);
            let (cand_value, cand_grad) = smooth(&candidate);
            if cand_value <= model + 1e-12 {
                let delta = diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                accepted = Some((candidate, cand_value, cand_grad, delta));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, cand_value, cand_grad, delta)) = accepted else {
            break;
        };
        w = candidate;
        value = cand_value;
        grad = cand_grad;
        trace.push(value + l1(&w));
        if delta < inner_tol {
            break;
        }
        step = (step * 2.0).min(1e4);
    }
    (w, trace)
}

fn apply_mask(w: &mut Array2<f64>, mask: &Array2<bool>) {
    for ((i, j), v) in w.indexed_iter_mut() {
        if mask[[i, j]] {
            *v = 0.0;
        }
    }
}

fn soft_threshold(w: &mut Array2<f64>, threshold: f64) {
    w.map_inplace(|v| {
        *v = if v.abs() <= threshold {
            0.0
        } else {
            *v - threshold * v.signum()
        }
    });
}

fn is_acyclic(d: usize, edges: &[(usize, usize)]) -> bool {
    let mut indegree = vec![0usize; d];
    let mut adjacency = vec![Vec::new(); d];
    for &(from, to) in edges {
        indegree[to] += 1;
        adjacency[from].push(to);
    }
    let mut queue: Vec<usize> = (0..d).filter(|&i| indegree[i] == 0).collect();
    let mut visited = 0;
    while let Some(node) = queue.pop() {
        visited += 1;
        for &next in &adjacency[node] {
            indegree[next] -= 1;
            if indegree[next] == 0 {
                queue.push(next);
            }
        }
    }
    visited == d
}

/// Smallest threshold at or above `omega` whose surviving edges form a
/// DAG; returns (threshold, raised?).
pub(crate) fn resolve_threshold(weights: &Array2<f64>, omega: f64) -> (f64, bool) {
    let d = weights.nrows();
    let survivors = |threshold: f64| -> Vec<(usize, usize)> {
        weights
            .indexed_iter()
            .filter(|(_, v)| v.abs() > threshold)
            .map(|((i, j), _)| (i, j))
            .collect()
    };
    if is_acyclic(d, &survivors(omega)) {
        return (omega, false);
    }
    let mut magnitudes: Vec<f64> = weights
        .iter()
        .map(|v| v.abs())
        .filter(|&m| m > omega)
        .collect();
    magnitudes.sort_by(f64::total_cmp);
    for m in magnitudes {
        if is_acyclic(d, &survivors(m)) {
            return (m, true);
        }
    }
    unreachable!("the empty edge set is acyclic");
}

fn package(
    dataset: &CausalDataset,
    config: &NotearsConfig,
    w: &Array2<f64>,
    h_final: f64,
    converged: bool,
) -> WeightedDag {
    let (omega, omega_raised) = resolve_threshold(w, config.omega);
    if omega_raised {
        log::warn!(
            "thresholded graph was cyclic at omega {}; raised to {omega}",
            config.omega
        );
    }
    let names = dataset.column_names();
    let mut edges: Vec<Edge> = w
        .indexed_iter()
        .filter(|(_, v)| v.abs() > omega)
        .map(|((i, j), &v)| Edge {
            from: names[i].clone(),
            to: names[j].clone(),
            weight: v,
        })
        .collect();
    edges.sort_by(|a, b| (&a.from, &a.to).cmp(&(&b.from, &b.to)));

    WeightedDag {
        column_names: names.to_vec(),
        weights: w.rows().into_iter().map(|r| r.to_vec()).collect(),
        edges,
        lambda1: config.lambda1,
        omega,
        requested_omega: config.omega,
        omega_raised,
        h_final,
        converged,
    }
}

/// Frozen CSV column order for DAG edge lists.
pub const SEM_EDGE_CSV_HEADER: [&str; 3] = ["from", "to", "weight"];

pub fn export_edges_csv<W: std::io::Write>(
    dag: &WeightedDag,
    writer: W,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(SEM_EDGE_CSV_HEADER)?;
    for edge in &dag.edges {
        out.write_record([
            edge.from.as_str(),
            edge.to.as_str(),
            &edge.weight.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn export_dag_json(dag: &WeightedDag) -> String {
    serde_json::to_string_pretty(dag).expect("dag serializes")
}
