//! Block tensorization of square `2^k x 2^k x C` images.
//!
//! The row and column indices are each split into `k` binary digits (least
//! significant first), the digits are interleaved row/column, and each
//! row/column digit pair is merged into one mode of size 4. Mode 1 of the
//! result then walks a 2x2 pixel block, mode 2 the 2x2 arrangement of those
//! blocks, and so on; the channel mode stays last.

use crate::error::{Error, Result};
use crate::tensor::{inverse_permutation, DenseTensor, Shape};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorizationPlan {
    pub source_shape: Shape,
    pub stage1_shape: Shape,
    /// 1-based mode order applied to the stage-1 tensor.
    pub perm: Vec<usize>,
    pub stage2_shape: Shape,
    pub levels: usize,
}

impl TensorizationPlan {
    pub fn new(h: usize, w: usize, c: usize) -> Result<Self> {
        if h != w || h < 2 || !h.is_power_of_two() {
            return Err(Error::NotPowerOfTwo { h, w });
        }
        if c == 0 {
            return Err(Error::InvalidShape("zero channels".into()));
        }
        let k = h.trailing_zeros() as usize;
        let mut stage1 = vec![2; 2 * k];
        stage1.push(c);
        let mut perm = Vec::with_capacity(2 * k + 1);
        for j in 1..=k {
            perm.push(j);
            perm.push(k + j);
        }
        perm.push(2 * k + 1);
        let mut stage2 = vec![4; k];
        stage2.push(c);
        Ok(TensorizationPlan {
            source_shape: Shape::new(vec![h, w, c])?,
            stage1_shape: Shape::new(stage1)?,
            perm,
            stage2_shape: Shape::new(stage2)?,
            levels: k,
        })
    }

    /// Recovers the plan whose output has the given shape `(4, ..., 4, C)`.
    pub fn from_stage2(dims: &[usize]) -> Result<Self> {
        let (&c, blocks) = dims
            .split_last()
            .ok_or_else(|| Error::InvalidShape("empty shape".into()))?;
        if blocks.is_empty() || blocks.iter().any(|&d| d != 4) {
            return Err(Error::InvalidShape(format!(
                "{dims:?} is not a block-tensorized image shape"
            )));
        }
        let side = 1usize << blocks.len();
        Self::new(side, side, c)
    }

    pub fn tensorize(&self, img: &DenseTensor) -> Result<DenseTensor> {
        if img.shape() != &self.source_shape {
            return Err(Error::ShapeMismatch {
                expected: self.source_shape.dims().to_vec(),
                actual: img.dims().to_vec(),
            });
        }
        img.reshape(self.stage1_shape.clone())?
            .permute(&self.perm)?
            .into_reshaped(self.stage2_shape.clone())
    }

    pub fn detensorize(&self, t: &DenseTensor) -> Result<DenseTensor> {
        if t.shape() != &self.stage2_shape {
            return Err(Error::ShapeMismatch {
                expected: self.stage2_shape.dims().to_vec(),
                actual: t.dims().to_vec(),
            });
        }
        // Every stage-1 mode except the last has size 2, so the permuted
        // stage-1 shape equals the stage-1 shape itself.
        t.reshape(self.stage1_shape.clone())?
            .permute(&inverse_permutation(&self.perm))?
            .into_reshaped(self.source_shape.clone())
    }
}
