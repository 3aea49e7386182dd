//! Weighted tensor-train optimization: fit TT cores to the observed entries
//! of a tensor, then read the missing entries off the model.
//!
//! The objective is `f = 1/2 ||W * (X - full(G))||^2` where `W` is the 0/1
//! observation mask. Its gradient with respect to core `n` is
//! `(Z_(n) - Y_(n)) (G^{>n}_(1) kron G^{<n}_(n))^T`; [`gradient`] evaluates it
//! by contracting the masked residual with the two subchains directly, and
//! [`gradient_kronecker`] builds the Kronecker factor explicitly for checking.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{dot, gemm, DenseTensor, MatRef, Matrix, Shape};
use crate::tt::{RankChain, TTCores};

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK_SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

/// Observed data `X`, mask `W` and the cached masked data `Y = W * X`.
#[derive(Clone, Debug)]
pub struct ObservedProblem {
    x: DenseTensor,
    w: DenseTensor,
    y: DenseTensor,
    half_y_sq: f64,
    n_observed: usize,
}

impl ObservedProblem {
    /// `w` must hold only 0.0 and 1.0. Values of `x` under a zero weight are
    /// never read.
    pub fn new(x: DenseTensor, w: DenseTensor) -> Result<Self> {
        if x.shape() != w.shape() {
            return Err(Error::ShapeMismatch {
                expected: x.dims().to_vec(),
                actual: w.dims().to_vec(),
            });
        }
        if let Some(&bad) = w.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidWeight(bad));
        }
        let y_data: Vec<f64> = x
            .data()
            .iter()
            .zip(w.data())
            .map(|(&xv, &wv)| if wv == 0.0 { 0.0 } else { xv })
            .collect();
        let y = DenseTensor::new(x.shape().clone(), y_data)?;
        let half_y_sq = 0.5 * dot(y.data(), y.data());
        let n_observed = w.data().iter().filter(|&&v| v == 1.0).count();
        Ok(ObservedProblem {
            x,
            w,
            y,
            half_y_sq,
            n_observed,
        })
    }

    /// Problem with every entry observed.
    pub fn fully_observed(x: DenseTensor) -> Self {
        let w = DenseTensor::ones(x.shape().clone());
        Self::new(x, w).expect("ones mask is valid")
    }

    pub fn x(&self) -> &DenseTensor {
        &self.x
    }

    pub fn w(&self) -> &DenseTensor {
        &self.w
    }

    pub fn y(&self) -> &DenseTensor {
        &self.y
    }

    pub fn shape(&self) -> &Shape {
        self.x.shape()
    }

    pub fn n_observed(&self) -> usize {
        self.n_observed
    }

    /// Root mean square of the observed entries (0 when nothing is observed).
    pub fn observed_rms(&self) -> f64 {
        if self.n_observed == 0 {
            0.0
        } else {
            (2.0 * self.half_y_sq / self.n_observed as f64).sqrt()
        }
    }

    /// Problem with all modes reversed, for equivariance checks.
    pub fn reversed(&self) -> ObservedProblem {
        let order: Vec<usize> = (1..=self.x.order()).rev().collect();
        let x = self.x.permute(&order).expect("valid permutation");
        let w = self.w.permute(&order).expect("valid permutation");
        ObservedProblem::new(x, w).expect("permuted problem stays valid")
    }

    fn check_tt(&self, tt: &TTCores) -> Result<()> {
        if tt.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape().dims().to_vec(),
                actual: tt.shape().dims().to_vec(),
            });
        }
        Ok(())
    }

    /// `W * (full - Y)`, exactly zero wherever `W` is zero.
    fn residual(&self, full: &[f64]) -> Vec<f64> {
        full.iter()
            .zip(self.y.data())
            .zip(self.w.data())
            .map(|((&z, &y), &w)| if w == 0.0 { 0.0 } else { z - y })
            .collect()
    }
}

/// Per-core gradients, each shaped like its core.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    grads: Vec<DenseTensor>,
}

impl GradientSet {
    pub fn new(grads: Vec<DenseTensor>) -> Self {
        GradientSet { grads }
    }

    pub fn grads(&self) -> &[DenseTensor] {
        &self.grads
    }

    /// Gradient for core `n` (1-based).
    pub fn grad(&self, n: usize) -> &DenseTensor {
        &self.grads[n - 1]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter().copied())
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| dot(g.data(), g.data()))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest componentwise relative difference, with `floor` as the smallest
    /// denominator so near-zero components are compared absolutely.
    pub fn max_rel_error(&self, other: &GradientSet, floor: f64) -> f64 {
        self.grads
            .iter()
            .zip(&other.grads)
            .flat_map(|(a, b)| a.data().iter().zip(b.data()))
            .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
            .fold(0.0, f64::max)
    }

    /// Whether this set is shaped for `tt`.
    pub fn matches(&self, tt: &TTCores) -> bool {
        self.grads.len() == tt.order()
            && self
                .grads
                .iter()
                .zip(tt.cores())
                .all(|(g, c)| g.shape() == c.shape())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Steepest descent with Armijo backtracking.
    GradientDescent,
    /// Polak-Ribiere+ nonlinear conjugate gradient with Armijo backtracking.
    NonlinearCg,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gd" | "gradient-descent" => Ok(Method::GradientDescent),
            "ncg" | "cg" | "nonlinear-cg" => Ok(Method::NonlinearCg),
            _ => Err(Error::InvalidConfig(format!("unknown method {s:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::GradientDescent => "gd",
            Method::NonlinearCg => "ncg",
        })
    }
}

/// How initial core entries are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    Gaussian {
        sigma: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// Gaussian with `sigma = (s / sqrt(r_1 ... r_{N-1}))^(1/N)` where `s` is
    /// the RMS of the observed entries, so reconstructed entries start at the
    /// data's magnitude.
    Scaled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub method: Method,
    pub max_iters: usize,
    /// Stop when `|f_k - f_{k-1}| / max(f_{k-1}, eps) < rel_tol`.
    pub rel_tol: f64,
    /// Stop when `||grad|| / num_params < grad_tol`.
    pub grad_tol: f64,
    pub init: InitScheme,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: Method::NonlinearCg,
            max_iters: 1000,
            rel_tol: 1e-10,
            grad_tol: 1e-8,
            init: InitScheme::Scaled,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.rel_tol, self.grad_tol]
            .iter()
            .any(|t| t.is_nan() || *t <= 0.0)
        {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        match self.init {
            InitScheme::Gaussian { sigma } if sigma.is_nan() || sigma < 0.0 => {
                Err(Error::InvalidConfig(format!("gaussian sigma {sigma} < 0")))
            }
            InitScheme::Uniform { low, high } if low.is_nan() || high.is_nan() || low > high => {
                Err(Error::InvalidConfig(format!(
                    "uniform bounds {low} > {high}"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub f: f64,
    pub gnorm: f64,
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    IterationBudget,
    RelativeChange,
    GradientNorm,
    LineSearchFailed,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::IterationBudget => "iteration budget",
            Termination::RelativeChange => "relative objective change",
            Termination::GradientNorm => "gradient norm",
            Termination::LineSearchFailed => "line search failed",
        })
    }
}

/// Objective values after each accepted step.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerTrace {
    pub initial_f: f64,
    pub initial_gnorm: f64,
    pub records: Vec<IterRecord>,
    pub termination: Termination,
}

impl OptimizerTrace {
    pub fn final_f(&self) -> f64 {
        self.records.last().map_or(self.initial_f, |r| r.f)
    }

    /// CSV with header `iter,f,gnorm,step`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,f,gnorm,step\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                r.iter, r.f, r.gnorm, r.step
            ));
        }
        out
    }
}

/// Random cores for `shape` and `ranks`. [`InitScheme::Scaled`] targets unit
/// magnitude here; use [`init_cores_for`] to scale to a problem's data.
pub fn init_cores(shape: &Shape, ranks: &RankChain, config: &OptimizerConfig) -> Result<TTCores> {
    init_with_target(shape, ranks, config, 1.0)
}

pub fn init_cores_for(
    problem: &ObservedProblem,
    ranks: &RankChain,
    config: &OptimizerConfig,
) -> Result<TTCores> {
    let target = problem.observed_rms();
    init_with_target(
        problem.shape(),
        ranks,
        config,
        if target > 0.0 { target } else { 1.0 },
    )
}

fn init_with_target(
    shape: &Shape,
    ranks: &RankChain,
    config: &OptimizerConfig,
    target: f64,
) -> Result<TTCores> {
    ranks.check_order(shape)?;
    config.validate()?;
    let n = ranks.num_params(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params: Vec<f64> = match config.init {
        InitScheme::Gaussian { sigma } => (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma * z
            })
            .collect::<Vec<f64>>(),
        InitScheme::Uniform { low, high } => {
            if low == high {
                vec![low; n]
            } else {
                let dist = Uniform::new(low, high)
                    .map_err(|e| Error::InvalidConfig(format!("uniform init: {e}")))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
        }
        InitScheme::Scaled => {
            let sigma = scaled_sigma(shape, ranks, target);
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma * z
                })
                .collect::<Vec<f64>>()
        }
    };
    TTCores::from_params(shape, ranks, &params)
}

fn scaled_sigma(shape: &Shape, ranks: &RankChain, target: f64) -> f64 {
    let order = shape.order() as f64;
    let r = ranks.ranks();
    let log_paths: f64 = r[1..r.len() - 1].iter().map(|&v| (v as f64).ln()).sum();
    ((target.ln() - 0.5 * log_paths) / order).exp()
}

/// `1/2 ||Y - W * full(tt)||^2`, accumulated from the masked residual.
pub fn objective(p: &ObservedProblem, tt: &TTCores) -> Result<f64> {
    p.check_tt(tt)?;
    let full = tt.full()?;
    let e = p.residual(full.data());
    Ok(0.5 * dot(&e, &e))
}

/// The three-term expansion `1/2||Y||^2 - <Y, Z> + 1/2||Z||^2` with `Z = W * full(tt)`.
pub fn objective_expanded(p: &ObservedProblem, tt: &TTCores) -> Result<f64> {
    p.check_tt(tt)?;
    let z = tt.full()?.hadamard(p.w())?;
    Ok(p.half_y_sq - p.y().inner(&z)? + 0.5 * dot(z.data(), z.data()))
}

pub fn gradient(p: &ObservedProblem, tt: &TTCores) -> Result<GradientSet> {
    Ok(objective_and_gradient(p, tt)?.1)
}

/// Objective and all core gradients from one pass over the subchains.
pub fn objective_and_gradient(p: &ObservedProblem, tt: &TTCores) -> Result<(f64, GradientSet)> {
    p.check_tt(tt)?;
    let numel = tt.shape().numel();
    if numel > crate::tt::DEFAULT_FULL_CAP {
        return Err(Error::TooLarge {
            requested: numel,
            cap: crate::tt::DEFAULT_FULL_CAP,
        });
    }
    let lefts = tt.all_left_chains();
    let rights = tt.all_right_chains();
    let e = p.residual(&lefts[tt.order()]);
    let f = 0.5 * dot(&e, &e);
    let dims = tt.shape().dims();
    let grads = (1..=tt.order())
        .into_par_iter()
        .map(|n| core_gradient(tt, n, dims, &e, &lefts[n - 1], &rights[n - 1]))
        .collect::<Vec<_>>();
    Ok((f, GradientSet { grads }))
}

/// `grad(a, i, b) = sum_{l, r} L(l, a) E(l, i, r) R(b, r)` with `E` viewed as
/// `(prod I_{<n}) x I_n x (prod I_{>n})`.
fn core_gradient(
    tt: &TTCores,
    n: usize,
    dims: &[usize],
    residual: &[f64],
    left: &[f64],
    right: &[f64],
) -> DenseTensor {
    let (before, size, after) = DenseTensor::split_at_mode(dims, n);
    let r = tt.ranks().ranks();
    let (rl, rr) = (r[n - 1], r[n]);
    let mut out = vec![0.0; rl * size * rr];
    // Contract the larger side against the residual first.
    if before >= after {
        // T = L^T E : rl x (size * after)
        let mut t = vec![0.0; rl * size * after];
        gemm(
            rl,
            before,
            size * after,
            MatRef::transposed(left, before),
            MatRef::col_major(residual, before),
            &mut t,
        );
        // out = T (rl*size x after) R^T (after x rr)
        gemm(
            rl * size,
            after,
            rr,
            MatRef::col_major(&t, rl * size),
            MatRef::transposed(right, rr),
            &mut out,
        );
    } else {
        // T = E R^T : (before * size) x rr
        let mut t = vec![0.0; before * size * rr];
        gemm(
            before * size,
            after,
            rr,
            MatRef::col_major(residual, before * size),
            MatRef::transposed(right, rr),
            &mut t,
        );
        // out = L^T (rl x before) T (before x size*rr)
        gemm(
            rl,
            before,
            size * rr,
            MatRef::transposed(left, before),
            MatRef::col_major(&t, before),
            &mut out,
        );
    }
    let shape = tt.core(n).shape().clone();
    DenseTensor::new(shape, out).expect("gradient matches core shape")
}

/// Gradient built literally as `(Z_(n) - Y_(n)) (G^{>n}_(1) kron G^{<n}_(n))^T`,
/// folded back into core shape. Materializes the Kronecker factor, so only
/// for small instances.
pub fn gradient_kronecker(p: &ObservedProblem, tt: &TTCores) -> Result<GradientSet> {
    p.check_tt(tt)?;
    let z = tt.full()?.hadamard(p.w())?;
    let diff = z.sub(p.y())?;
    let mut grads = Vec::with_capacity(tt.order());
    for n in 1..=tt.order() {
        let k = Matrix::kronecker(
            &tt.subchain_right(n)?.rank_unfolding(),
            &tt.subchain_left(n)?.rank_unfolding(),
        );
        let g2 = diff.unfold(n)?.matmul(&k.transpose())?;
        grads.push(DenseTensor::fold(&g2, 2, tt.core(n).shape())?);
    }
    Ok(GradientSet { grads })
}

/// Observed entries pass through; missing ones come from the model.
pub fn complete(p: &ObservedProblem, tt: &TTCores) -> Result<DenseTensor> {
    p.check_tt(tt)?;
    let full = tt.full()?;
    let data = full
        .data()
        .iter()
        .zip(p.x().data())
        .zip(p.w().data())
        .map(|((&m, &x), &w)| if w == 1.0 { x } else { m })
        .collect();
    DenseTensor::new(p.shape().clone(), data)
}

/// Initializes cores per `config` and runs [`optimize_from`].
pub fn optimize(
    p: &ObservedProblem,
    ranks: &RankChain,
    config: &OptimizerConfig,
) -> Result<(TTCores, OptimizerTrace)> {
    ranks.check_order(p.shape())?;
    let init = init_cores_for(p, ranks, config)?;
    optimize_from(p, init, config)
}

/// Runs the first-order loop from the given cores until a stopping rule fires.
pub fn optimize_from(
    p: &ObservedProblem,
    init: TTCores,
    config: &OptimizerConfig,
) -> Result<(TTCores, OptimizerTrace)> {
    config.validate()?;
    p.check_tt(&init)?;
    let mut tt = init;
    let num_params = tt.num_params() as f64;

    let (mut f, g) = objective_and_gradient(p, &tt)?;
    let mut g = g.flatten();
    let mut gnorm = dot(&g, &g).sqrt();
    let mut trace = OptimizerTrace {
        initial_f: f,
        initial_gnorm: gnorm,
        records: Vec::new(),
        termination: Termination::IterationBudget,
    };
    if !f.is_finite() || !gnorm.is_finite() {
        return Err(Error::Diverged {
            iteration: 0,
            trace: Box::new(trace),
        });
    }
    if config.max_iters == 0 {
        return Ok((tt, trace));
    }
    if gnorm == 0.0 {
        return Err(Error::ZeroGradient);
    }

    let mut x = tt.params();
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut gd = -gnorm * gnorm;
    let mut step = 1.0 / gnorm;
    let mut prev_g;

    for iter in 1..=config.max_iters {
        let Some((alpha, x_new, f_new)) = backtrack(p, &mut tt, &x, &d, f, gd, step) else {
            trace.termination = Termination::LineSearchFailed;
            break;
        };
        tt.set_params(&x_new);
        let (_, g_set) = objective_and_gradient(p, &tt)?;
        let g_new = g_set.flatten();
        let gnorm_new = dot(&g_new, &g_new).sqrt();
        if !gnorm_new.is_finite() {
            return Err(Error::Diverged {
                iteration: iter,
                trace: Box::new(trace),
            });
        }
        trace.records.push(IterRecord {
            iter,
            f: f_new,
            gnorm: gnorm_new,
            step: alpha,
        });

        let rel_change = (f - f_new).abs() / f.max(f64::EPSILON);
        x = x_new;
        prev_g = std::mem::replace(&mut g, g_new);
        f = f_new;
        gnorm = gnorm_new;

        if gnorm / num_params < config.grad_tol || f == 0.0 {
            trace.termination = Termination::GradientNorm;
            break;
        }
        if rel_change < config.rel_tol {
            trace.termination = Termination::RelativeChange;
            break;
        }

        let beta = match config.method {
            Method::GradientDescent => 0.0,
            Method::NonlinearCg => {
                let num = g.iter().zip(&prev_g).map(|(a, b)| a * (a - b)).sum::<f64>();
                (num / dot(&prev_g, &prev_g)).max(0.0)
            }
        };
        let prev_gd = gd;
        for (di, gi) in d.iter_mut().zip(&g) {
            *di = -gi + beta * *di;
        }
        gd = dot(&g, &d);
        if gd >= 0.0 {
            // Not a descent direction: restart along the negative gradient.
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            gd = -gnorm * gnorm;
        }
        // Expect the same first-order decrease as the last accepted step.
        step = alpha * prev_gd / gd;
    }
    tt.set_params(&x);
    Ok((tt, trace))
}

/// Armijo backtracking from `alpha0`, halving on failure. Once a step is
/// accepted, the minimizer of the quadratic through `f0`, `gd` and the
/// accepted value is tried once and kept if it does better.
fn backtrack(
    p: &ObservedProblem,
    scratch: &mut TTCores,
    x: &[f64],
    d: &[f64],
    f0: f64,
    gd: f64,
    alpha0: f64,
) -> Option<(f64, Vec<f64>, f64)> {
    let mut eval = |alpha: f64, trial: &mut Vec<f64>| -> Option<f64> {
        for ((t, &xi), &di) in trial.iter_mut().zip(x).zip(d) {
            *t = xi + alpha * di;
        }
        if trial.iter().zip(x).all(|(a, b)| a == b) {
            return None;
        }
        scratch.set_params(trial);
        Some(objective(p, scratch).unwrap_or(f64::NAN))
    };
    let sufficient = |alpha: f64, f: f64| f.is_finite() && f <= f0 + ARMIJO_C * alpha * gd;
    let mut alpha = alpha0;
    let mut trial = vec![0.0; x.len()];
    for _ in 0..MAX_BACKTRACKS {
        let f = eval(alpha, &mut trial)?;
        if !sufficient(alpha, f) {
            alpha *= BACKTRACK_SHRINK;
            continue;
        }
        let curvature = (f - f0 - gd * alpha) / (alpha * alpha);
        if curvature > 0.0 {
            let aq = (-gd / (2.0 * curvature)).clamp(0.1 * alpha, 4.0 * alpha);
            if (aq - alpha).abs() > 0.1 * alpha {
                let mut probe = vec![0.0; x.len()];
                if let Some(fq) = eval(aq, &mut probe) {
                    if fq < f && sufficient(aq, fq) {
                        return Some((aq, probe, fq));
                    }
                }
            }
        }
        return Some((alpha, trial, f));
    }
    None
}
