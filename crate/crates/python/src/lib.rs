//! Python bindings. Structured results cross the boundary as plain Python
//! dicts and lists (serialized through `json`).

use std::path::PathBuf;

use localcontrol::cluster::{self, ClusterAssignment, LinkageMethod};
use localcontrol::confirm::{confirm as confirm_d, ksperm_from_columns, null_ensemble_from_columns};
use localcontrol::dataset::{self, AnalysisFrame, VariableSchema};
use localcontrol::embed::{self, DEFAULT_TOLERANCE};
use localcontrol::explore::{self, ExploreOptions};
use localcontrol::forest::{self, FeatureMatrix, ForestOptions};
use localcontrol::lrc;
use localcontrol::mob::{self, MobData, MobOptions};
use localcontrol::{pipeline, LcError, RunConfig};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: LcError) -> PyErr {
    match e {
        LcError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: for<'de> serde::Deserialize<'de>>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn method(name: &str) -> PyResult<LinkageMethod> {
    name.parse().map_err(err)
}

/// Validated unit-by-variable table.
#[pyclass(name = "Frame", module = "localcontrol_py", frozen)]
struct PyFrame {
    inner: AnalysisFrame,
}

#[pymethods]
impl PyFrame {
    /// Load a CSV. `schema` is a list of `{"name", "role"}` dicts; the
    /// county layout is used when omitted.
    #[staticmethod]
    #[pyo3(signature = (path, schema=None))]
    fn from_csv(path: PathBuf, schema: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let schema: VariableSchema = match schema {
            Some(s) => from_py(s)?,
            None => localcontrol::config::default_schema(),
        };
        Ok(PyFrame {
            inner: dataset::load_csv(path, &schema).map_err(err)?,
        })
    }

    /// Build from columns; `columns` maps every non-id schema name to values.
    #[staticmethod]
    fn from_columns(schema: &Bound<'_, PyAny>, ids: Vec<u64>, columns: &Bound<'_, PyAny>) -> PyResult<Self> {
        let schema: VariableSchema = from_py(schema)?;
        let cols = schema
            .variables()
            .iter()
            .filter(|v| v.name != schema.id())
            .map(|v| columns.get_item(&v.name)?.extract::<Vec<f64>>())
            .collect::<PyResult<Vec<_>>>()?;
        Ok(PyFrame {
            inner: AnalysisFrame::from_columns(schema, &ids, &cols).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n_dropped(&self) -> usize {
        self.inner.n_dropped()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings().to_vec()
    }

    fn ids(&self) -> Vec<u64> {
        self.inner.ids()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner.column(name).map_err(err)
    }

    fn exposure(&self) -> String {
        self.inner.schema().exposure().to_string()
    }

    fn outcome(&self) -> String {
        self.inner.schema().outcome().to_string()
    }

    fn confounders(&self) -> Vec<String> {
        self.inner.schema().confounders().into_iter().map(String::from).collect()
    }

    fn __repr__(&self) -> String {
        format!("Frame({} units, {} dropped)", self.inner.len(), self.inner.n_dropped())
    }
}

/// Agglomerative merge history.
#[pyclass(name = "Dendrogram", module = "localcontrol_py", frozen)]
struct PyDendrogram {
    inner: cluster::Dendrogram,
}

#[pymethods]
impl PyDendrogram {
    #[getter]
    fn method(&self) -> String {
        self.inner.method().to_string()
    }

    #[getter]
    fn leaf_count(&self) -> usize {
        self.inner.leaf_count()
    }

    /// `(left, right, height, size)` per merge, node ids scipy-style.
    fn merges(&self) -> Vec<(usize, usize, f64, usize)> {
        self.inner
            .merges()
            .iter()
            .map(|m| (m.left, m.right, m.height, m.size))
            .collect()
    }

    /// 1-based cluster labels for `k` clusters.
    fn cut(&self, k: usize) -> PyResult<Vec<usize>> {
        Ok(cluster::cut(&self.inner, k).map_err(err)?.labels().to_vec())
    }
}

/// Cluster the frame's units on its confounders.
#[pyfunction]
#[pyo3(signature = (frame, method_name="ward.D", confounders=None))]
fn aggregate(frame: &PyFrame, method_name: &str, confounders: Option<Vec<String>>) -> PyResult<PyDendrogram> {
    let names: Vec<String> = confounders.unwrap_or_else(|| {
        frame.inner.schema().confounders().into_iter().map(String::from).collect()
    });
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let emb = embed::principal_coordinates(&frame.inner, &refs, DEFAULT_TOLERANCE).map_err(err)?;
    let d = embed::pairwise_distances(&emb).map_err(err)?;
    Ok(PyDendrogram {
        inner: cluster::agglomerate(&d, method(method_name)?).map_err(err)?,
    })
}

/// Eigenvalues and whitened scores of the confounder correlation matrix.
#[pyfunction]
fn principal_coordinates(
    py: Python<'_>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
) -> PyResult<Py<PyAny>> {
    let e = embed::principal_coordinates_from_columns(&names, &columns, DEFAULT_TOLERANCE).map_err(err)?;
    let scores: Vec<Vec<f64>> = (0..e.n_units())
        .map(|i| (0..e.retained()).map(|k| e.scores[(i, k)]).collect())
        .collect();
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("eigenvalues", e.eigenvalues.clone())?;
    dict.set_item("scores", scores)?;
    Ok(dict.into_any().unbind())
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    dataset::pearson(&x, &y).map_err(err)
}

/// Midrank Spearman correlation; `None` when undefined.
#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<Option<f64>> {
    lrc::spearman(&x, &y).map_err(err)
}

/// Per-cluster local rank correlations for 1-based `labels`.
#[pyfunction]
fn local_rank_correlations(py: Python<'_>, exposure: Vec<f64>, outcome: Vec<f64>, labels: Vec<usize>) -> PyResult<Py<PyAny>> {
    let a = ClusterAssignment::from_labels(labels).map_err(err)?;
    let d = lrc::lrc_from_columns(&exposure, &outcome, &a).map_err(err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("per_cluster", to_py(py, &d.per_cluster)?)?;
    dict.set_item("unit_lrc", d.unit_lrc.clone())?;
    dict.set_item("negative_clusters", d.negative_clusters())?;
    dict.set_item("n_undefined", d.n_undefined)?;
    Ok(dict.into_any().unbind())
}

/// KS distance against the pseudo-cluster null plus permutation p-value.
#[pyfunction]
#[pyo3(signature = (exposure, outcome, labels, replicates=100, permutations=1000, seed=1))]
fn confirm(
    py: Python<'_>,
    exposure: Vec<f64>,
    outcome: Vec<f64>,
    labels: Vec<usize>,
    replicates: usize,
    permutations: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let a = ClusterAssignment::from_labels(labels).map_err(err)?;
    let result = py
        .detach(|| -> localcontrol::Result<_> {
            let dist = lrc::lrc_from_columns(&exposure, &outcome, &a)?;
            let null = null_ensemble_from_columns(&exposure, &outcome, a.sizes(), replicates, seed)?;
            let d = confirm_d(&dist, &null)?;
            ksperm_from_columns(&exposure, &outcome, a.sizes(), &null, &d, permutations, seed)
        })
        .map_err(err)?;
    Ok(to_py(py, &result)?.unbind())
}

/// LRC summaries across a grid of cluster counts.
#[pyfunction]
#[pyo3(signature = (frame, dendrogram, grid, replicates=100, permutations=None, seed=1))]
fn compare_k(
    py: Python<'_>,
    frame: &PyFrame,
    dendrogram: &PyDendrogram,
    grid: Vec<usize>,
    replicates: usize,
    permutations: Option<usize>,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let opts = ExploreOptions {
        replicates,
        permutations,
        seed,
        ..Default::default()
    };
    let s = &frame.inner.schema();
    let summary = py
        .detach(|| explore::compare_k(&frame.inner, &dendrogram.inner, &grid, s.exposure(), s.outcome(), &opts))
        .map_err(err)?;
    Ok(to_py(py, &summary)?.unbind())
}

/// Fitted regression forest.
#[pyclass(name = "Forest", module = "localcontrol_py", frozen)]
struct PyForest {
    forest: forest::Forest,
    x: FeatureMatrix,
    y: Vec<f64>,
}

#[pymethods]
impl PyForest {
    #[new]
    #[pyo3(signature = (names, columns, response, trees=500, mtry=None, min_leaf=5, seed=1))]
    fn new(
        py: Python<'_>,
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        response: Vec<f64>,
        trees: usize,
        mtry: Option<usize>,
        min_leaf: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let x = FeatureMatrix::new(names, columns).map_err(err)?;
        let opts = ForestOptions {
            trees,
            mtry,
            min_leaf,
            seed,
        };
        let forest = py.detach(|| forest::fit_forest(&x, &response, &opts)).map_err(err)?;
        Ok(PyForest {
            forest,
            x,
            y: response,
        })
    }

    #[getter]
    fn degenerate_response(&self) -> bool {
        self.forest.degenerate_response
    }

    fn predict(&self, columns: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = FeatureMatrix::new(self.x.names().to_vec(), columns).map_err(err)?;
        Ok(self.forest.predict(&x))
    }

    fn importance(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let r = py
            .detach(|| forest::oob_importance(&self.forest, &self.x, &self.y))
            .map_err(err)?;
        Ok(to_py(py, &r)?.unbind())
    }

    #[pyo3(signature = (variable, grid_size=25))]
    fn partial_dependence(&self, py: Python<'_>, variable: &str, grid_size: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let pd = py
            .detach(|| forest::partial_dependence(&self.forest, &self.x, variable, grid_size))
            .map_err(err)?;
        Ok((pd.grid, pd.values))
    }
}

/// Piecewise-linear partitioning tree; returns `{"tree": ..., "table": ...}`.
#[pyfunction]
#[pyo3(signature = (response, regressor, partition, min_size=100, max_depth=3, min_gain=0.02))]
fn fit_mob(
    py: Python<'_>,
    response: Vec<f64>,
    regressor: Vec<f64>,
    partition: Vec<f64>,
    min_size: usize,
    max_depth: usize,
    min_gain: f64,
) -> PyResult<Py<PyAny>> {
    let tree = mob::fit_mob(
        MobData {
            response_name: "response",
            regressor_name: "regressor",
            partition_name: "partition",
            response: &response,
            regressor: &regressor,
            partition: &partition,
        },
        &MobOptions {
            min_size,
            max_depth,
            min_gain,
        },
    )
    .map_err(err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("tree", to_py(py, &tree)?)?;
    dict.set_item("table", to_py(py, &mob::mob_table(&tree))?)?;
    Ok(dict.into_any().unbind())
}

/// Run every stage for a config (dict) and return the manifest.
#[pyfunction]
fn run_all(py: Python<'_>, config: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
    let cfg: RunConfig = from_py(config)?;
    cfg.validate().map_err(err)?;
    let out = py.detach(|| pipeline::run_all(&cfg)).map_err(err)?;
    Ok(to_py(py, &out.manifest)?.unbind())
}

/// Default run configuration as a dict.
#[pyfunction]
fn default_config(py: Python<'_>) -> PyResult<Py<PyAny>> {
    Ok(to_py(py, &RunConfig::default())?.unbind())
}

#[pymodule]
fn localcontrol_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFrame>()?;
    m.add_class::<PyDendrogram>()?;
    m.add_class::<PyForest>()?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(principal_coordinates, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(local_rank_correlations, m)?)?;
    m.add_function(wrap_pyfunction!(confirm, m)?)?;
    m.add_function(wrap_pyfunction!(compare_k, m)?)?;
    m.add_function(wrap_pyfunction!(fit_mob, m)?)?;
    m.add_function(wrap_pyfunction!(run_all, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
