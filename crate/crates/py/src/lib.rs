use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use irpg_core::model::{self, mat_rows};
use irpg_core::{lyapcare, optimize, verify, Algorithm, Error, ExtReal, Mat, OptimizerConfig};

type Rows = Vec<Vec<f64>>;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::DimensionMismatch(_) | Error::Config(_) | Error::Json { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn mat(rows: Rows, what: &str) -> PyResult<Mat> {
    mat_rows::from_rows(&rows).map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn ext(x: ExtReal) -> f64 {
    x.to_f64()
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Output-estimation instance (A, C, G, W1, W2) as nested row lists.
#[pyclass(name = "OEInstance", module = "irpg", from_py_object)]
#[derive(Clone)]
pub struct PyInstance {
    inner: model::OEInstance,
}

#[pymethods]
impl PyInstance {
    #[new]
    #[pyo3(signature = (a, c, w1, w2, g=None))]
    fn new(a: Rows, c: Rows, w1: Rows, w2: Rows, g: Option<Rows>) -> PyResult<Self> {
        let a = mat(a, "A")?;
        let g = match g {
            Some(g) => mat(g, "G")?,
            None => Mat::identity(a.nrows(), a.nrows()),
        };
        let inner = model::OEInstance::new(a, mat(c, "C")?, g, mat(w1, "W1")?, mat(w2, "W2")?)
            .map_err(to_py_err)?;
        Ok(PyInstance { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: model::OEInstance = serde_json::from_str(text).map_err(json_err)?;
        inner.check_dims().map_err(to_py_err)?;
        Ok(PyInstance { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    #[staticmethod]
    fn peril() -> Self {
        PyInstance { inner: irpg_core::examples::peril_instance() }
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn a(&self) -> Rows {
        mat_rows::to_rows(&self.inner.a)
    }

    #[getter]
    fn c(&self) -> Rows {
        mat_rows::to_rows(&self.inner.c)
    }

    fn __repr__(&self) -> String {
        format!("OEInstance(n={}, m={}, p={})", self.inner.n(), self.inner.m(), self.inner.p())
    }
}

/// Dynamic filter (A_K, B_K, C_K).
#[pyclass(name = "Filter", module = "irpg", from_py_object)]
#[derive(Clone)]
pub struct PyFilter {
    inner: model::Filter,
}

#[pymethods]
impl PyFilter {
    #[new]
    fn new(a_k: Rows, b_k: Rows, c_k: Rows) -> PyResult<Self> {
        Ok(PyFilter {
            inner: model::Filter::new(mat(a_k, "A_K")?, mat(b_k, "B_K")?, mat(c_k, "C_K")?),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(json_err)?;
        Ok(PyFilter { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    #[getter]
    fn a_k(&self) -> Rows {
        mat_rows::to_rows(&self.inner.a_k)
    }

    #[getter]
    fn b_k(&self) -> Rows {
        mat_rows::to_rows(&self.inner.b_k)
    }

    #[getter]
    fn c_k(&self) -> Rows {
        mat_rows::to_rows(&self.inner.c_k)
    }

    fn is_stable(&self) -> bool {
        self.inner.is_stable()
    }

    fn __repr__(&self) -> String {
        format!("Filter(n={})", self.inner.n())
    }
}

#[pyfunction]
fn kalman(inst: &PyInstance) -> PyResult<PyFilter> {
    let (inner, _) = model::kalman(&inst.inner).map_err(to_py_err)?;
    Ok(PyFilter { inner })
}

#[pyfunction]
fn loss_oe(inst: &PyInstance, k: &PyFilter) -> f64 {
    ext(model::loss_oe(&inst.inner, &k.inner))
}

#[pyfunction]
fn reg_info(inst: &PyInstance, k: &PyFilter) -> f64 {
    ext(model::reg_info(&inst.inner, &k.inner))
}

#[pyfunction]
#[pyo3(signature = (inst, k, lam=1e-4))]
fn loss_total(inst: &PyInstance, k: &PyFilter, lam: f64) -> f64 {
    ext(model::loss_total(&inst.inner, &k.inner, lam))
}

#[pyfunction]
fn normalized_suboptimality(inst: &PyInstance, k: &PyFilter) -> PyResult<f64> {
    model::normalized_suboptimality(&inst.inner, &k.inner).map_err(to_py_err)
}

/// Gradient of the regularized loss as a filter-shaped triple.
#[pyfunction]
#[pyo3(signature = (inst, k, lam=1e-4))]
fn grad_total(inst: &PyInstance, k: &PyFilter, lam: f64) -> PyResult<(Rows, Rows, Rows)> {
    let g = irpg_core::gradients::grad_total(&inst.inner, &k.inner, lam).map_err(to_py_err)?;
    Ok((mat_rows::to_rows(&g.da), mat_rows::to_rows(&g.db), mat_rows::to_rows(&g.dc)))
}

#[pyfunction]
fn recondition(inst: &PyInstance, k: &PyFilter) -> PyResult<PyFilter> {
    let inner = model::recondition(&inst.inner, &k.inner).map_err(to_py_err)?;
    Ok(PyFilter { inner })
}

#[pyfunction]
fn clyap(a: Rows, q: Rows) -> PyResult<Rows> {
    let x = lyapcare::clyap(&mat(a, "A")?, &mat(q, "Q")?).map_err(to_py_err)?;
    Ok(mat_rows::to_rows(&x))
}

/// Returns `(P, L, A - L C)`.
#[pyfunction]
fn care(inst: &PyInstance) -> PyResult<(Rows, Rows, Rows)> {
    let i = &inst.inner;
    let s = lyapcare::care(&i.a, &i.c, &i.w1, &i.w2).map_err(to_py_err)?;
    Ok((mat_rows::to_rows(&s.p), mat_rows::to_rows(&s.l), mat_rows::to_rows(&s.closed_loop)))
}

/// Runs one optimizer; returns a dict with the termination, the final
/// filter, and per-iteration columns.
#[pyfunction]
#[pyo3(signature = (inst, init, alg="irpg-backtrack", lam=None, eta=None, max_iters=None, lambda_turnoff=false))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    inst: &PyInstance,
    init: &PyFilter,
    alg: &str,
    lam: Option<f64>,
    eta: Option<f64>,
    max_iters: Option<usize>,
    lambda_turnoff: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let alg: Algorithm = alg.parse().map_err(to_py_err)?;
    let mut cfg = OptimizerConfig::with_algorithm(alg);
    if let Some(l) = lam {
        cfg.lambda = l;
    }
    if let Some(e) = eta {
        cfg.eta = e;
    }
    if let Some(m) = max_iters {
        cfg.max_iters = m;
    }
    cfg.lambda_turnoff = lambda_turnoff;
    let res = py
        .detach(|| optimize::run(&inst.inner, &init.inner, &cfg))
        .map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("termination", format!("{:?}", res.termination))?;
    out.set_item("iters", res.iters())?;
    out.set_item("final_filter", PyFilter { inner: res.final_filter.clone() })?;
    let col = |f: &dyn Fn(&optimize::IterationRecord) -> f64| -> Vec<f64> {
        res.records.iter().map(f).collect()
    };
    out.set_item("loss_oe", col(&|r| ext(r.loss_oe)))?;
    out.set_item("loss_total", col(&|r| ext(r.loss_total)))?;
    out.set_item("grad_norm", col(&|r| r.grad_norm))?;
    out.set_item("step", col(&|r| r.step))?;
    out.set_item("sigma_min_12", col(&|r| r.sigma_min_12))?;
    out.set_item("sigma_min_22", col(&|r| r.sigma_min_22))?;
    out.set_item("subopt_norm", col(&|r| r.subopt_norm))?;
    Ok(out)
}

/// Example verification checks as `(name, passed, measured)` tuples.
#[pyfunction]
fn verify_all(py: Python<'_>) -> Vec<(String, bool, f64)> {
    py.detach(verify::verify_all)
        .into_iter()
        .map(|r| (r.name, r.passed, r.measured))
        .collect()
}

#[pymodule]
fn irpg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_class::<PyFilter>()?;
    m.add_function(wrap_pyfunction!(kalman, m)?)?;
    m.add_function(wrap_pyfunction!(loss_oe, m)?)?;
    m.add_function(wrap_pyfunction!(reg_info, m)?)?;
    m.add_function(wrap_pyfunction!(loss_total, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_suboptimality, m)?)?;
    m.add_function(wrap_pyfunction!(grad_total, m)?)?;
    m.add_function(wrap_pyfunction!(recondition, m)?)?;
    m.add_function(wrap_pyfunction!(clyap, m)?)?;
    m.add_function(wrap_pyfunction!(care, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(verify_all, m)?)?;
    Ok(())
}
