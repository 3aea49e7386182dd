//! Python bindings. Tensors cross the boundary as a flat value list in
//! column-major order (first index fastest) together with a shape; all
//! indices and modes are 1-based, as in the Rust API.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ttwopt::eval;
use ttwopt::io;
use ttwopt::tensorize::TensorizationPlan;
use ttwopt::wopt::{self, InitScheme, Method, ObservedProblem, OptimizerConfig};
use ttwopt::{DenseTensor, RankChain, Shape};

fn to_py(e: ttwopt::Error) -> PyErr {
    match e {
        ttwopt::Error::Io(err) => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for ttwopt::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

#[pyclass(name = "Tensor", module = "ttwopt_py")]
pub struct PyTensor {
    inner: DenseTensor,
}

impl PyTensor {
    fn wrap(inner: DenseTensor) -> Self {
        PyTensor { inner }
    }
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(data: Vec<f64>, shape: Vec<usize>) -> PyResult<Self> {
        let shape = Shape::new(shape).py_err()?;
        Ok(Self::wrap(DenseTensor::new(shape, data).py_err()?))
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> PyResult<Self> {
        Ok(Self::wrap(DenseTensor::zeros(Shape::new(shape).py_err()?)))
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.dims().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.numel()
    }

    fn get(&self, index: Vec<usize>) -> PyResult<f64> {
        self.inner.get(&index).py_err()
    }

    fn set(&mut self, index: Vec<usize>, value: f64) -> PyResult<()> {
        self.inner.set(&index, value).py_err()
    }

    fn norm(&self) -> f64 {
        self.inner.norm()
    }

    fn inner_product(&self, other: &PyTensor) -> PyResult<f64> {
        self.inner.inner(&other.inner).py_err()
    }

    /// Mode-`n` unfolding as `(rows, cols, column-major values)`.
    fn unfold(&self, n: usize) -> PyResult<(usize, usize, Vec<f64>)> {
        let m = self.inner.unfold(n).py_err()?;
        Ok((m.rows(), m.cols(), m.into_data()))
    }

    fn permute(&self, order: Vec<usize>) -> PyResult<Self> {
        Ok(Self::wrap(self.inner.permute(&order).py_err()?))
    }

    fn reshape(&self, shape: Vec<usize>) -> PyResult<Self> {
        Ok(Self::wrap(
            self.inner.reshape(Shape::new(shape).py_err()?).py_err()?,
        ))
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={})", self.inner.shape())
    }
}

#[pyclass(name = "TTCores", module = "ttwopt_py")]
pub struct PyTTCores {
    inner: ttwopt::TTCores,
}

#[pymethods]
impl PyTTCores {
    /// Builds a train from cores of shape `(r_{n-1}, I_n, r_n)`.
    #[new]
    fn new(cores: Vec<PyRef<'_, PyTensor>>) -> PyResult<Self> {
        let cores = cores.iter().map(|c| c.inner.clone()).collect();
        Ok(PyTTCores {
            inner: ttwopt::TTCores::new(cores).py_err()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (shape, ranks, seed = 0, sigma = 1.0))]
    fn random(shape: Vec<usize>, ranks: Vec<usize>, seed: u64, sigma: f64) -> PyResult<Self> {
        let config = OptimizerConfig {
            init: InitScheme::Gaussian { sigma },
            seed,
            ..OptimizerConfig::default()
        };
        let shape = Shape::new(shape).py_err()?;
        let ranks = RankChain::new(ranks).py_err()?;
        Ok(PyTTCores {
            inner: wopt::init_cores(&shape, &ranks, &config).py_err()?,
        })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().dims().to_vec()
    }

    #[getter]
    fn ranks(&self) -> Vec<usize> {
        self.inner.ranks().ranks().to_vec()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn core(&self, n: usize) -> PyResult<PyTensor> {
        if n == 0 || n > self.inner.order() {
            return Err(to_py(ttwopt::Error::ModeOutOfRange {
                mode: n,
                order: self.inner.order(),
            }));
        }
        Ok(PyTensor::wrap(self.inner.core(n).clone()))
    }

    fn eval_element(&self, index: Vec<usize>) -> PyResult<f64> {
        self.inner.eval_element(&index).py_err()
    }

    fn full(&self) -> PyResult<PyTensor> {
        Ok(PyTensor::wrap(self.inner.full().py_err()?))
    }

    fn __repr__(&self) -> String {
        format!(
            "TTCores(shape={}, ranks={:?})",
            self.inner.shape(),
            self.inner.ranks().ranks()
        )
    }
}

fn parse_ranks(ranks: &str, order: usize) -> PyResult<RankChain> {
    ranks
        .parse::<io::RankSpec>()
        .py_err()?
        .resolve(order)
        .py_err()
}

fn problem(x: &PyTensor, w: &PyTensor) -> PyResult<ObservedProblem> {
    ObservedProblem::new(x.inner.clone(), w.inner.clone()).py_err()
}

/// Fits a tensor train to the observed entries of `x` (where `w` is 1).
/// `ranks` is a single interior rank or a full chain such as "1,5,5,1".
/// Returns the fitted cores and a trace dict.
#[pyfunction]
#[pyo3(signature = (x, w, ranks, method = "ncg", max_iters = 1000, rel_tol = 1e-10, grad_tol = 1e-8, seed = 0, init = "scaled"))]
#[allow(clippy::too_many_arguments)]
fn optimize<'py>(
    py: Python<'py>,
    x: &PyTensor,
    w: &PyTensor,
    ranks: &str,
    method: &str,
    max_iters: usize,
    rel_tol: f64,
    grad_tol: f64,
    seed: u64,
    init: &str,
) -> PyResult<(PyTTCores, Bound<'py, PyDict>)> {
    let p = problem(x, w)?;
    let ranks = parse_ranks(ranks, p.shape().order())?;
    let config = OptimizerConfig {
        method: method.parse::<Method>().py_err()?,
        max_iters,
        rel_tol,
        grad_tol,
        init: io::parse_init(init).py_err()?,
        seed,
    };
    let (tt, trace) = py.detach(|| wopt::optimize(&p, &ranks, &config)).py_err()?;
    let d = PyDict::new(py);
    d.set_item("initial_f", trace.initial_f)?;
    d.set_item("final_f", trace.final_f())?;
    d.set_item("termination", trace.termination.to_string())?;
    d.set_item("f", trace.records.iter().map(|r| r.f).collect::<Vec<_>>())?;
    d.set_item(
        "gnorm",
        trace.records.iter().map(|r| r.gnorm).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "step",
        trace.records.iter().map(|r| r.step).collect::<Vec<_>>(),
    )?;
    Ok((PyTTCores { inner: tt }, d))
}

/// Observed entries of `x` kept, missing ones filled from the train.
#[pyfunction]
fn complete(x: &PyTensor, w: &PyTensor, tt: &PyTTCores) -> PyResult<PyTensor> {
    let p = problem(x, w)?;
    Ok(PyTensor::wrap(wopt::complete(&p, &tt.inner).py_err()?))
}

#[pyfunction]
fn objective(x: &PyTensor, w: &PyTensor, tt: &PyTTCores) -> PyResult<f64> {
    wopt::objective(&problem(x, w)?, &tt.inner).py_err()
}

/// Gradients of the objective with respect to each core.
#[pyfunction]
fn gradient(x: &PyTensor, w: &PyTensor, tt: &PyTTCores) -> PyResult<Vec<PyTensor>> {
    let g = wopt::gradient(&problem(x, w)?, &tt.inner).py_err()?;
    Ok(g.grads().iter().cloned().map(PyTensor::wrap).collect())
}

#[pyfunction]
#[pyo3(signature = (dims, rank, seed = 0))]
fn gen_cp_problem(dims: Vec<usize>, rank: usize, seed: u64) -> PyResult<PyTensor> {
    Ok(PyTensor::wrap(
        eval::gen_cp_problem(&dims, rank, seed).py_err()?,
    ))
}

#[pyfunction]
#[pyo3(signature = (dims, missing_rate, seed = 0))]
fn gen_mask(dims: Vec<usize>, missing_rate: f64, seed: u64) -> PyResult<PyTensor> {
    Ok(PyTensor::wrap(
        eval::gen_mask(&dims, missing_rate, seed).py_err()?,
    ))
}

#[pyfunction]
fn rse(x: &PyTensor, xhat: &PyTensor) -> PyResult<f64> {
    eval::rse(&x.inner, &xhat.inner).py_err()
}

#[pyfunction]
#[pyo3(signature = (x, xhat, peak = 255.0))]
fn psnr(x: &PyTensor, xhat: &PyTensor, peak: f64) -> PyResult<f64> {
    eval::psnr(&x.inner, &xhat.inner, peak).py_err()
}

/// `(H, H, C)` image to a `(4, ..., 4, C)` tensor.
#[pyfunction]
fn tensorize_image(img: &PyTensor) -> PyResult<PyTensor> {
    let d = img.inner.dims();
    if d.len() != 3 {
        return Err(PyValueError::new_err("expected an (H, W, C) image"));
    }
    let plan = TensorizationPlan::new(d[0], d[1], d[2]).py_err()?;
    Ok(PyTensor::wrap(plan.tensorize(&img.inner).py_err()?))
}

#[pyfunction]
fn detensorize_image(t: &PyTensor) -> PyResult<PyTensor> {
    let plan = TensorizationPlan::from_stage2(t.inner.dims()).py_err()?;
    Ok(PyTensor::wrap(plan.detensorize(&t.inner).py_err()?))
}

#[pyfunction]
fn read_tensor(path: &str) -> PyResult<PyTensor> {
    Ok(PyTensor::wrap(io::read_tensor(path).py_err()?))
}

#[pyfunction]
fn write_tensor(path: &str, t: &PyTensor) -> PyResult<()> {
    io::write_tensor(path, &t.inner).py_err()
}

#[pyfunction]
fn read_ppm(path: &str) -> PyResult<PyTensor> {
    Ok(PyTensor::wrap(io::read_ppm(path).py_err()?))
}

#[pyfunction]
fn write_ppm(path: &str, img: &PyTensor) -> PyResult<()> {
    io::write_ppm(path, &img.inner).py_err()
}

#[pymodule]
fn ttwopt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyTTCores>()?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(complete, m)?)?;
    m.add_function(wrap_pyfunction!(objective, m)?)?;
    m.add_function(wrap_pyfunction!(gradient, m)?)?;
    m.add_function(wrap_pyfunction!(gen_cp_problem, m)?)?;
    m.add_function(wrap_pyfunction!(gen_mask, m)?)?;
    m.add_function(wrap_pyfunction!(rse, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(tensorize_image, m)?)?;
    m.add_function(wrap_pyfunction!(detensorize_image, m)?)?;
    m.add_function(wrap_pyfunction!(read_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(write_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(read_ppm, m)?)?;
    m.add_function(wrap_pyfunction!(write_ppm, m)?)?;
    Ok(())
}
