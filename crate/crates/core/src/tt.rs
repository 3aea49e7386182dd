//! Tensor-train representation.
//!
//! Core `n` has shape `(r_{n-1}, I_n, r_n)` with `r_0 = r_N = 1`. Element
//! `(i_1, ..., i_N)` of the represented tensor is the matrix product of the
//! lateral slices `G^(1)[:, i_1, :] ... G^(N)[:, i_N, :]`.
//!
//! Subchains are stored in the layouts that make the unfolding identity
//! `X_(n) = G^(n)_(2) (G^{>n}_(1) kron G^{<n}_(n))` hold under the
//! colexicographic unfolding of [`crate::tensor`]:
//! - left chain `G^{<n}` has shape `(I_1, ..., I_{n-1}, r_{n-1})`,
//! - right chain `G^{>n}` has shape `(r_n, I_{n+1}, ..., I_N)`.

use crate::error::{Error, Result};
use crate::tensor::{gemm, DenseTensor, MatRef, Matrix, Shape};

/// Largest tensor [`TTCores::full`] materializes unless told otherwise.
pub const DEFAULT_FULL_CAP: usize = 100_000_000;

/// TT-ranks `(1, r_1, ..., r_{N-1}, 1)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RankChain(Vec<usize>);

impl RankChain {
    pub fn new(ranks: impl Into<Vec<usize>>) -> Result<Self> {
        let ranks = ranks.into();
        if ranks.len() < 2 {
            return Err(Error::InvalidRanks(format!(
                "need at least two ranks, got {ranks:?}"
            )));
        }
        if ranks.contains(&0) {
            return Err(Error::InvalidRanks(format!("zero rank in {ranks:?}")));
        }
        let border = if ranks[0] != 1 {
            ranks[0]
        } else {
            ranks[ranks.len() - 1]
        };
        if border != 1 {
            return Err(Error::BorderRank(border));
        }
        Ok(RankChain(ranks))
    }

    /// `(1, r, ..., r, 1)` for an `order`-way tensor.
    pub fn uniform(order: usize, r: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidRanks("order must be positive".into()));
        }
        let mut ranks = vec![r; order + 1];
        ranks[0] = 1;
        ranks[order] = 1;
        Self::new(ranks)
    }

    pub fn ranks(&self) -> &[usize] {
        &self.0
    }

    /// Number of cores this chain describes.
    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn check_order(&self, shape: &Shape) -> Result<()> {
        if self.order() != shape.order() {
            return Err(Error::InvalidRanks(format!(
                "{} ranks do not fit a {}-way tensor",
                self.0.len(),
                shape.order()
            )));
        }
        Ok(())
    }

    /// Number of core parameters for the given mode sizes.
    pub fn num_params(&self, shape: &Shape) -> usize {
        shape
            .dims()
            .iter()
            .enumerate()
            .map(|(k, &d)| self.0[k] * d * self.0[k + 1])
            .sum()
    }
}

/// A contracted run of cores; see the module docs for its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Subchain {
    tensor: DenseTensor,
    left: bool,
}

impl Subchain {
    fn boundary(left: bool) -> Self {
        let shape = Shape::new(vec![1, 1]).expect("1x1 shape");
        Subchain {
            tensor: DenseTensor::ones(shape),
            left,
        }
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> DenseTensor {
        self.tensor
    }

    /// The unfolding used in the Kronecker factor: mode 1 for right chains,
    /// the trailing rank mode for left chains.
    pub fn rank_unfolding(&self) -> Matrix {
        let mode = if self.left { self.tensor.order() } else { 1 };
        self.tensor.unfold(mode).expect("mode within order")
    }
}

/// Validated sequence of TT cores.
#[derive(Clone, Debug, PartialEq)]
pub struct TTCores {
    cores: Vec<DenseTensor>,
    shape: Shape,
    ranks: RankChain,
}

impl TTCores {
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::InvalidShape("a TT needs at least one core".into()));
        }
        for c in &cores {
            if c.order() != 3 {
                return Err(Error::InvalidShape(format!(
                    "cores must be 3-way, got shape {}",
                    c.shape()
                )));
            }
        }
        let mut ranks = vec![cores[0].dims()[0]];
        for (k, pair) in cores.windows(2).enumerate() {
            let (left, right) = (pair[0].dims()[2], pair[1].dims()[0]);
            if left != right {
                return Err(Error::RankMismatch {
                    core: k + 1,
                    next: k + 2,
                    left,
                    right,
                });
            }
        }
        ranks.extend(cores.iter().map(|c| c.dims()[2]));
        let ranks = RankChain::new(ranks)?;
        let shape = Shape::new(cores.iter().map(|c| c.dims()[1]).collect::<Vec<_>>())?;
        Ok(TTCores {
            cores,
            shape,
            ranks,
        })
    }

    /// Builds cores of the given shape and ranks from a flat parameter vector
    /// laid out as in [`TTCores::params`].
    pub fn from_params(shape: &Shape, ranks: &RankChain, params: &[f64]) -> Result<Self> {
        ranks.check_order(shape)?;
        let total = ranks.num_params(shape);
        if params.len() != total {
            return Err(Error::InvalidShape(format!(
                "{} parameters given, {total} needed",
                params.len()
            )));
        }
        let r = ranks.ranks();
        let mut cores = Vec::with_capacity(shape.order());
        let mut pos = 0;
        for (k, &d) in shape.dims().iter().enumerate() {
            let len = r[k] * d * r[k + 1];
            let core_shape = Shape::new(vec![r[k], d, r[k + 1]])?;
            cores.push(DenseTensor::new(
                core_shape,
                params[pos..pos + len].to_vec(),
            )?);
            pos += len;
        }
        Ok(TTCores {
            cores,
            shape: shape.clone(),
            ranks: ranks.clone(),
        })
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    /// Core `n` (1-based).
    pub fn core(&self, n: usize) -> &DenseTensor {
        &self.cores[n - 1]
    }

    /// Mutable values of core `n` (1-based); the core's shape is fixed.
    pub fn core_values_mut(&mut self, n: usize) -> &mut [f64] {
        self.cores[n - 1].data_mut()
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn ranks(&self) -> &RankChain {
        &self.ranks
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn num_params(&self) -> usize {
        self.cores.iter().map(|c| c.numel()).sum()
    }

    /// All core values concatenated in core order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for c in &self.cores {
            out.extend_from_slice(c.data());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params());
        let mut pos = 0;
        for c in &mut self.cores {
            let len = c.numel();
            c.data_mut().copy_from_slice(&params[pos..pos + len]);
            pos += len;
        }
    }

    /// TT of the tensor with its mode order reversed: cores in reverse order,
    /// each with its two rank modes swapped.
    pub fn reversed(&self) -> TTCores {
        let cores = self
            .cores
            .iter()
            .rev()
            .map(|c| c.permute(&[3, 2, 1]).expect("valid permutation"))
            .collect();
        TTCores::new(cores).expect("reversal preserves validity")
    }

    /// Element at the 1-based `index` as an ordered product of core slices.
    pub fn eval_element(&self, index: &[usize]) -> Result<f64> {
        let dims = self.shape.dims();
        if index.len() != dims.len() || index.iter().zip(dims).any(|(&i, &d)| i == 0 || i > d) {
            return Err(Error::IndexOutOfRange {
                index: index.to_vec(),
                shape: dims.to_vec(),
            });
        }
        let mut row = vec![1.0];
        for (core, &i) in self.cores.iter().zip(index) {
            let [rl, size, rr] = [core.dims()[0], core.dims()[1], core.dims()[2]];
            let g = core.data();
            let mut next = vec![0.0; rr];
            for (b, out) in next.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (a, &v) in row.iter().enumerate() {
                    acc += v * g[a + rl * ((i - 1) + size * b)];
                }
                *out = acc;
            }
            row = next;
        }
        Ok(row[0])
    }

    /// Dense reconstruction, refusing anything above [`DEFAULT_FULL_CAP`] elements.
    pub fn full(&self) -> Result<DenseTensor> {
        self.full_capped(DEFAULT_FULL_CAP)
    }

    pub fn full_capped(&self, cap: usize) -> Result<DenseTensor> {
        let numel = self.shape.numel();
        if numel > cap {
            return Err(Error::TooLarge {
                requested: numel,
                cap,
            });
        }
        let mut acc = vec![1.0];
        let mut rows = 1;
        for n in 1..=self.order() {
            acc = self.extend_left(&acc, rows, n);
            rows *= self.shape.dim(n);
        }
        DenseTensor::new(self.shape.clone(), acc)
    }

    /// Left chain `G^{<n}` contracted forward over cores `1..n-1`.
    pub fn subchain_left(&self, n: usize) -> Result<Subchain> {
        self.check_core_index(n)?;
        if n == 1 {
            return Ok(Subchain::boundary(true));
        }
        let r = self.ranks.ranks();
        let mut acc = vec![1.0];
        let mut rows = 1;
        for k in 1..n {
            acc = self.extend_left(&acc, rows, k);
            rows *= self.shape.dim(k);
        }
        let mut dims = self.shape.dims()[..n - 1].to_vec();
        dims.push(r[n - 1]);
        Ok(Subchain {
            tensor: DenseTensor::new(Shape::new(dims)?, acc)?,
            left: true,
        })
    }

    /// Right chain `G^{>n}` contracted backward over cores `N..n+1`.
    pub fn subchain_right(&self, n: usize) -> Result<Subchain> {
        self.check_core_index(n)?;
        let big_n = self.order();
        if n == big_n {
            return Ok(Subchain::boundary(false));
        }
        let r = self.ranks.ranks();
        let mut acc = vec![1.0];
        let mut cols = 1;
        for k in (n + 1..=big_n).rev() {
            acc = self.extend_right(&acc, cols, k);
            cols *= self.shape.dim(k);
        }
        let mut dims = vec![r[n]];
        dims.extend_from_slice(&self.shape.dims()[n..]);
        Ok(Subchain {
            tensor: DenseTensor::new(Shape::new(dims)?, acc)?,
            left: false,
        })
    }

    fn check_core_index(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.order() {
            return Err(Error::ModeOutOfRange {
                mode: n,
                order: self.order(),
            });
        }
        Ok(())
    }

    /// `left (rows x r_{n-1})` times core `n` viewed as `r_{n-1} x (I_n r_n)`.
    pub(crate) fn extend_left(&self, left: &[f64], rows: usize, n: usize) -> Vec<f64> {
        let core = &self.cores[n - 1];
        let rl = core.dims()[0];
        let k = core.dims()[1] * core.dims()[2];
        let mut out = vec![0.0; rows * k];
        gemm(
            rows,
            rl,
            k,
            MatRef::col_major(left, rows),
            MatRef::col_major(core.data(), rl),
            &mut out,
        );
        out
    }

    /// Core `n` viewed as `(r_{n-1} I_n) x r_n` times `right (r_n x cols)`.
    pub(crate) fn extend_right(&self, right: &[f64], cols: usize, n: usize) -> Vec<f64> {
        let core = &self.cores[n - 1];
        let m = core.dims()[0] * core.dims()[1];
        let rr = core.dims()[2];
        let mut out = vec![0.0; m * cols];
        gemm(
            m,
            rr,
            cols,
            MatRef::col_major(core.data(), m),
            MatRef::col_major(right, rr),
            &mut out,
        );
        out
    }

    /// Every left chain as a flat `(prod I_{<n}) x r_{n-1}` buffer, for
    /// `n = 1..=N+1`; entry `N` (0-based) is the full tensor.
    pub(crate) fn all_left_chains(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.order() + 1);
        out.push(vec![1.0]);
        let mut rows = 1;
        for n in 1..=self.order() {
            let next = self.extend_left(&out[n - 1], rows, n);
            out.push(next);
            rows *= self.shape.dim(n);
        }
        out
    }

    /// Every right chain as a flat `r_n x (prod I_{>n})` buffer, for `n = 1..=N`.
    pub(crate) fn all_right_chains(&self) -> Vec<Vec<f64>> {
        let big_n = self.order();
        let mut out = vec![Vec::new(); big_n];
        out[big_n - 1] = vec![1.0];
        let mut cols = 1;
        for n in (1..big_n).rev() {
            out[n - 1] = self.extend_right(&out[n], cols, n + 1);
            cols *= self.shape.dim(n + 1);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn core(rl: usize, d: usize, rr: usize, f: impl Fn(usize) -> f64) -> DenseTensor {
        let s = Shape::new(vec![rl, d, rr]).unwrap();
        let n = s.numel();
        DenseTensor::new(s, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn construction_validates_rank_chain() {
        let single = TTCores::new(vec![core(1, 5, 1, |i| i as f64)]).unwrap();
        assert_eq!(single.shape().dims(), &[5]);

        let tt = TTCores::new(vec![core(1, 2, 3, |_| 1.0), core(3, 2, 1, |_| 1.0)]).unwrap();
        assert_eq!(tt.shape().dims(), &[2, 2]);
        assert_eq!(tt.ranks().ranks(), &[1, 3, 1]);

        let err = TTCores::new(vec![core(1, 2, 3, |_| 1.0), core(4, 2, 1, |_| 1.0)]).unwrap_err();
        assert!(matches!(
            err,
            Error::RankMismatch {
                left: 3,
                right: 4,
                ..
            }
        ));
        assert!(matches!(
            TTCores::new(vec![core(2, 2, 1, |_| 1.0)]),
            Err(Error::BorderRank(2))
        ));
        assert!(matches!(
            TTCores::new(vec![core(1, 2, 2, |_| 1.0)]),
            Err(Error::BorderRank(2))
        ));
    }

    #[test]
    fn rank_one_elements_are_products() {
        let tt = TTCores::new(vec![
            core(1, 2, 1, |i| i as f64 + 1.0),
            core(1, 3, 1, |i| i as f64 + 2.0),
        ])
        .unwrap();
        assert_eq!(tt.eval_element(&[2, 3]).unwrap(), 2.0 * 4.0);
        let full = tt.full().unwrap();
        for i in 1..=2 {
            for j in 1..=3 {
                assert_eq!(full.get(&[i, j]).unwrap(), i as f64 * (j as f64 + 1.0));
            }
        }
        assert!(tt.eval_element(&[3, 1]).is_err());
        assert!(tt.eval_element(&[1]).is_err());
    }

    #[test]
    fn zero_core_gives_zero() {
        let tt = TTCores::new(vec![
            core(1, 2, 2, |i| i as f64),
            core(2, 2, 2, |_| 0.0),
            core(2, 2, 1, |i| i as f64),
        ])
        .unwrap();
        assert!(tt.full().unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(tt.eval_element(&[2, 2, 2]).unwrap(), 0.0);
    }

    #[test]
    fn single_core_full_is_vector() {
        let tt = TTCores::new(vec![core(1, 5, 1, |i| i as f64 * 0.5)]).unwrap();
        assert_eq!(tt.full().unwrap().data(), tt.core(1).data());
        assert_eq!(tt.num_params(), 5);
    }

    #[test]
    fn full_matches_elements_small() {
        let tt = TTCores::new(vec![
            core(1, 2, 2, |i| 0.3 * i as f64 - 0.2),
            core(2, 3, 1, |i| 1.0 / (i as f64 + 1.5)),
        ])
        .unwrap();
        let full = tt.full().unwrap();
        for i in 1..=2 {
            for j in 1..=3 {
                let a = full.get(&[i, j]).unwrap();
                let b = tt.eval_element(&[i, j]).unwrap();
                assert!((a - b).abs() <= 1e-13 * b.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn full_cap_is_enforced() {
        let tt = TTCores::new(vec![core(1, 10, 1, |_| 1.0), core(1, 10, 1, |_| 1.0)]).unwrap();
        assert!(matches!(
            tt.full_capped(99),
            Err(Error::TooLarge {
                requested: 100,
                cap: 99
            })
        ));
        assert!(tt.full_capped(100).is_ok());
    }

    #[test]
    fn boundary_subchains_are_unit() {
        let tt = TTCores::new(vec![core(1, 2, 2, |_| 1.0), core(2, 3, 1, |_| 2.0)]).unwrap();
        let r = tt.subchain_right(2).unwrap();
        let l = tt.subchain_left(1).unwrap();
        assert_eq!(r.tensor().dims(), &[1, 1]);
        assert_eq!(r.tensor().data(), &[1.0]);
        assert_eq!(l.tensor().dims(), &[1, 1]);
        assert_eq!(l.tensor().data(), &[1.0]);
        assert_eq!(tt.subchain_left(2).unwrap().tensor().dims(), &[2, 2]);
        assert_eq!(tt.subchain_right(1).unwrap().tensor().dims(), &[2, 3]);
        assert!(tt.subchain_left(3).is_err());
    }

    #[test]
    fn num_params_examples() {
        let s = Shape::new(vec![30, 30, 30]).unwrap();
        let r = RankChain::new(vec![1, 20, 20, 1]).unwrap();
        assert_eq!(r.num_params(&s), 600 + 12000 + 600);
        let s7 = Shape::new(vec![4; 7]).unwrap();
        assert_eq!(RankChain::uniform(7, 1).unwrap().num_params(&s7), 28);
    }

    #[test]
    fn params_round_trip() {
        let tt = TTCores::new(vec![
            core(1, 2, 2, |i| i as f64),
            core(2, 3, 1, |i| -(i as f64)),
        ])
        .unwrap();
        let p = tt.params();
        let back = TTCores::from_params(tt.shape(), tt.ranks(), &p).unwrap();
        assert_eq!(back, tt);
    }
}
