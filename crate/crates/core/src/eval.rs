//! Metrics, synthetic data and the finite-difference gradient oracle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Matrix, Shape};
use crate::tt::TTCores;
use crate::wopt::{objective, GradientSet, ObservedProblem};

/// CP factors: factor `n` is `I_n x R`, all sharing the rank `R`.
#[derive(Clone, Debug, PartialEq)]
pub struct CpFactors {
    factors: Vec<Matrix>,
}

impl CpFactors {
    pub fn new(factors: Vec<Matrix>) -> Result<Self> {
        let Some(first) = factors.first() else {
            return Err(Error::InvalidShape("no CP factors".into()));
        };
        let rank = first.cols();
        if let Some(bad) = factors.iter().find(|f| f.cols() != rank) {
            return Err(Error::InvalidShape(format!(
                "CP factors disagree on rank: {} vs {}",
                rank,
                bad.cols()
            )));
        }
        Ok(CpFactors { factors })
    }

    /// Standard Gaussian factors drawn from `seed`.
    pub fn random(dims: &[usize], rank: usize, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidConfig("CP rank must be at least 1".into()));
        }
        Shape::new(dims.to_vec())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = dims
            .iter()
            .map(|&d| {
                let data = (0..d * rank)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect::<Vec<f64>>();
                Matrix::new(d, rank, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(factors)
    }

    pub fn rank(&self) -> usize {
        self.factors[0].cols()
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    /// `X(i_1, ..., i_N) = sum_r prod_n A_n(i_n, r)`.
    pub fn to_dense(&self) -> Result<DenseTensor> {
        let dims: Vec<usize> = self.factors.iter().map(|f| f.rows()).collect();
        let shape = Shape::new(dims.clone())?;
        let mut out = vec![0.0; shape.numel()];
        let mut term = vec![0.0; shape.numel()];
        for r in 0..self.rank() {
            // Outer product of the r-th columns, built mode by mode.
            let mut len = 1;
            term[0] = 1.0;
            for (f, &d) in self.factors.iter().zip(&dims) {
                let col = &f.data()[f.rows() * r..f.rows() * (r + 1)];
                for i in (0..d).rev() {
                    for k in 0..len {
                        term[i * len + k] = term[k] * col[i];
                    }
                }
                len *= d;
            }
            for (o, t) in out.iter_mut().zip(&term) {
                *o += t;
            }
        }
        DenseTensor::new(shape, out)
    }
}

/// Synthetic ground truth: a random CP tensor of the given rank.
pub fn gen_cp_problem(dims: &[usize], rank: usize, seed: u64) -> Result<DenseTensor> {
    CpFactors::random(dims, rank, seed)?.to_dense()
}

/// Mask with exactly `round(missing_rate * numel)` zeros at uniformly random
/// positions.
pub fn gen_mask(dims: &[usize], missing_rate: f64, seed: u64) -> Result<DenseTensor> {
    if !(0.0..=1.0).contains(&missing_rate) {
        return Err(Error::InvalidConfig(format!(
            "missing rate {missing_rate} outside [0, 1]"
        )));
    }
    let shape = Shape::new(dims.to_vec())?;
    let numel = shape.numel();
    let n_missing = (missing_rate * numel as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = DenseTensor::ones(shape);
    let data = mask.data_mut();
    for k in rand::seq::index::sample(&mut rng, numel, n_missing) {
        data[k] = 0.0;
    }
    Ok(mask)
}

/// `||x - xhat|| / ||x||`.
pub fn rse(x: &DenseTensor, xhat: &DenseTensor) -> Result<f64> {
    let reference = x.norm();
    if reference == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(x.sub(xhat)?.norm() / reference)
}

/// `10 log10(peak^2 / MSE)` over every entry; `+inf` when the tensors agree.
pub fn psnr(x: &DenseTensor, xhat: &DenseTensor, peak: f64) -> Result<f64> {
    let diff = x.sub(xhat)?;
    let mse = diff.data().iter().map(|d| d * d).sum::<f64>() / diff.numel() as f64;
    Ok(psnr_from_mse(mse, peak))
}

/// PSNR restricted to entries where `w` is zero.
pub fn psnr_missing(
    x: &DenseTensor,
    xhat: &DenseTensor,
    w: &DenseTensor,
    peak: f64,
) -> Result<f64> {
    let diff = x.sub(xhat)?;
    if w.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            expected: x.dims().to_vec(),
            actual: w.dims().to_vec(),
        });
    }
    let (sum, count) = diff
        .data()
        .iter()
        .zip(w.data())
        .filter(|(_, &m)| m == 0.0)
        .fold((0.0, 0usize), |(s, c), (d, _)| (s + d * d, c + 1));
    if count == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(psnr_from_mse(sum / count as f64, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rse: f64,
    pub psnr: Option<f64>,
    pub n_observed: usize,
    pub n_missing: usize,
}

/// Central differences `(f(θ + h e_k) - f(θ - h e_k)) / 2h` of [`objective`]
/// for every core parameter.
pub fn finite_diff_gradient(p: &ObservedProblem, tt: &TTCores, h: f64) -> Result<GradientSet> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidConfig(format!("step {h} must be positive")));
    }
    objective(p, tt)?;
    let base = tt.params();
    let diffs = (0..base.len())
        .into_par_iter()
        .map(|k| {
            let mut probe = tt.clone();
            let mut params = base.clone();
            params[k] = base[k] + h;
            probe.set_params(&params);
            let up = objective(p, &probe)?;
            params[k] = base[k] - h;
            probe.set_params(&params);
            let down = objective(p, &probe)?;
            Ok((up - down) / (2.0 * h))
        })
        .collect::<Result<Vec<f64>>>()?;
    let grads = TTCores::from_params(tt.shape(), tt.ranks(), &diffs)?
        .cores()
        .to_vec();
    Ok(GradientSet::new(grads))
}
