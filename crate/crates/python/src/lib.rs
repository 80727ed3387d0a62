//! Python bindings for the `kikuchi` crate.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use kikuchi::bounds::make_bound_spec;
use kikuchi::experiment::{build_region_graph, cmd_check, Recipe};
use kikuchi::model::{generate, parse_observe, Family};
use kikuchi::propagation::InnerSettings;
use kikuchi::{Error, ModelSpec, Variant};

fn err(e: Error) -> PyErr {
    match e {
        Error::DescentViolation { .. } | Error::Io(_) | Error::StateSpaceTooLarge { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

/// A discrete factor model with log-potential tables.
#[pyclass(name = "FactorModel", module = "kikuchi", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFactorModel(kikuchi::FactorModel);

#[pymethods]
impl PyFactorModel {
    #[new]
    fn new(cards: Vec<usize>) -> PyResult<Self> {
        Ok(PyFactorModel(kikuchi::FactorModel::new(cards).map_err(err)?))
    }

    /// Seeded Boltzmann grid with ±1 spins.
    #[staticmethod]
    #[pyo3(signature = (rows, cols, w, seed=0))]
    fn grid(rows: usize, cols: usize, w: f64, seed: u64) -> PyResult<Self> {
        Ok(PyFactorModel(generate(&ModelSpec::grid(rows, cols, w, seed)).map_err(err)?))
    }

    /// Seeded fully connected Boltzmann machine.
    #[staticmethod]
    #[pyo3(signature = (n, w, seed=0))]
    fn full(n: usize, w: f64, seed: u64) -> PyResult<Self> {
        Ok(PyFactorModel(generate(&ModelSpec::full(n, w, seed)).map_err(err)?))
    }

    /// Seeded noisy-OR network with observed findings.
    #[staticmethod]
    #[pyo3(signature = (diseases, findings, parents=3, observe="", seed=0))]
    fn qmr(diseases: usize, findings: usize, parents: usize, observe: &str, seed: u64) -> PyResult<Self> {
        let family = Family::Qmr { diseases, findings, parents, observe: parse_observe(observe).map_err(err)? };
        Ok(PyFactorModel(generate(&ModelSpec { family, w: 0.0, seed }).map_err(err)?))
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PyFactorModel(kikuchi::FactorModel::from_text(text).map_err(err)?))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyFactorModel(kikuchi::FactorModel::load(path).map_err(err)?))
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    /// Copy with one more factor; the scope must be strictly increasing.
    fn with_factor(&self, scope: Vec<usize>, log_table: Vec<f64>) -> PyResult<Self> {
        let mut m = self.0.clone();
        m.add_factor(scope, log_table).map_err(err)?;
        Ok(PyFactorModel(m))
    }

    #[getter]
    fn num_vars(&self) -> usize {
        self.0.num_vars()
    }

    #[getter]
    fn cards(&self) -> Vec<usize> {
        self.0.cards().to_vec()
    }

    #[getter]
    fn clusters(&self) -> Vec<Vec<usize>> {
        self.0.clusters()
    }

    #[getter]
    fn meta(&self) -> BTreeMap<String, String> {
        self.0.meta().clone()
    }

    /// `(scope, log_table)` pairs.
    fn factors(&self) -> Vec<(Vec<usize>, Vec<f64>)> {
        self.0.factors().iter().map(|f| (f.scope().to_vec(), f.log_table().to_vec())).collect()
    }

    fn __repr__(&self) -> String {
        format!("FactorModel(num_vars={}, factors={})", self.0.num_vars(), self.0.factors().len())
    }
}

/// Region graph with overcounting numbers.
#[pyclass(name = "RegionGraph", module = "kikuchi", frozen)]
struct PyRegionGraph {
    graph: kikuchi::RegionGraph,
    /// Model regrouped onto the outer clusters.
    model: kikuchi::FactorModel,
}

#[pymethods]
impl PyRegionGraph {
    /// Build the recipe's graph for `model`: `bethe`, `grid-plaquettes`,
    /// `all-triplets` or `cvm`.
    #[new]
    #[pyo3(signature = (model, recipe="bethe"))]
    fn new(model: &PyFactorModel, recipe: &str) -> PyResult<Self> {
        let (model, graph) = build_region_graph(&model.0, parse::<Recipe>(recipe)?).map_err(err)?;
        Ok(PyRegionGraph { graph, model })
    }

    fn __len__(&self) -> usize {
        self.graph.len()
    }

    #[getter]
    fn num_outer(&self) -> usize {
        self.graph.num_outer()
    }

    /// `(vars, c)` per region, outer clusters first.
    fn regions(&self) -> Vec<(Vec<usize>, f64)> {
        let c = self.graph.overcounting();
        self.graph.regions().iter().map(|r| (r.vars.clone(), c[r.id])).collect()
    }

    fn overcounting(&self) -> Vec<f64> {
        self.graph.overcounting()
    }

    fn hasse_edges(&self) -> Vec<(usize, usize)> {
        self.graph.hasse_edges().to_vec()
    }

    fn v_minus(&self) -> Vec<usize> {
        self.graph.v_minus()
    }

    fn v_plus(&self) -> Vec<usize> {
        self.graph.v_plus()
    }

    /// Regrouped model the graph's outer clusters carry.
    #[getter]
    fn model(&self) -> PyFactorModel {
        PyFactorModel(self.model.clone())
    }

    fn is_convex(&self) -> bool {
        kikuchi::check_convex_over_constraints(&self.graph, &self.graph.overcounting()).is_some()
    }

    /// Inner-loop overcounting numbers of a bound variant.
    fn c_tilde(&self, variant: &str) -> PyResult<Vec<f64>> {
        Ok(make_bound_spec(&self.graph, parse::<Variant>(variant)?).map_err(err)?.c_tilde)
    }

    fn to_text(&self) -> String {
        self.graph.to_text()
    }
}

/// Result of a double-loop run.
#[pyclass(name = "RunTrace", module = "kikuchi", frozen)]
struct PyRunTrace(kikuchi::RunTrace);

#[pymethods]
impl PyRunTrace {
    #[getter]
    fn variant(&self) -> &'static str {
        self.0.variant.name()
    }

    #[getter]
    fn termination(&self) -> String {
        format!("{:?}", self.0.termination).to_lowercase()
    }

    #[getter]
    fn outer_iterations(&self) -> usize {
        self.0.outer_iterations()
    }

    #[getter]
    fn total_inner_sweeps(&self) -> usize {
        self.0.total_inner_sweeps()
    }

    #[getter]
    fn final_f(&self) -> f64 {
        self.0.final_f()
    }

    /// `F_Kik` after every outer iteration, starting with the uniform beliefs.
    fn f_values(&self) -> Vec<f64> {
        self.0.records.iter().map(|r| r.f_kik).collect()
    }

    fn inner_sweeps(&self) -> Vec<usize> {
        self.0.records.iter().map(|r| r.inner_sweeps).collect()
    }

    /// Final belief table of every region.
    fn beliefs(&self) -> Vec<Vec<f64>> {
        self.0.final_beliefs.tables().to_vec()
    }

    fn to_csv(&self) -> String {
        self.0.to_csv()
    }
}

/// Minimize the Kikuchi free energy of `graph` with the given bound variant.
#[pyfunction]
#[pyo3(signature = (graph, variant="conv3", inner_tol=None, max_outer=None, warm_start=true))]
fn minimize(
    py: Python<'_>,
    graph: &PyRegionGraph,
    variant: &str,
    inner_tol: Option<f64>,
    max_outer: Option<usize>,
    warm_start: bool,
) -> PyResult<PyRunTrace> {
    let spec = make_bound_spec(&graph.graph, parse::<Variant>(variant)?).map_err(err)?;
    let mut settings = kikuchi::OuterSettings { warm_start, ..Default::default() };
    if let Some(t) = inner_tol {
        settings.inner = InnerSettings { tol: t, ..settings.inner };
    }
    if let Some(n) = max_outer {
        settings.max_outer = n;
    }
    let trace = py
        .detach(|| kikuchi::minimize(&graph.model, &graph.graph, &spec, &settings))
        .map_err(err)?;
    Ok(PyRunTrace(trace))
}

/// Exact `(log Z, node marginals)` by enumeration.
#[pyfunction]
fn exact(model: &PyFactorModel) -> PyResult<(f64, Vec<Vec<f64>>)> {
    kikuchi::oracle::exact_node_marginals(&model.0).map_err(err)
}

/// Convexity report text and verdict.
#[pyfunction]
#[pyo3(signature = (model, recipe="bethe"))]
fn check(model: &PyFactorModel, recipe: &str) -> PyResult<(String, bool)> {
    let r = cmd_check(&model.0, parse::<Recipe>(recipe)?).map_err(err)?;
    Ok((r.text, r.convex))
}

#[pymodule]
#[pyo3(name = "kikuchi")]
fn kikuchi_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFactorModel>()?;
    m.add_class::<PyRegionGraph>()?;
    m.add_class::<PyRunTrace>()?;
    m.add_function(wrap_pyfunction!(minimize, m)?)?;
    m.add_function(wrap_pyfunction!(exact, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add("VARIANTS", ["conv3", "conv2", "conv1", "cccp", "none"])?;
    Ok(())
}
