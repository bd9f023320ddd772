//! Class splits into four disjoint folds.

use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FoldRule {
    /// Fold `i` holds the `i`-th contiguous block of `total / 4` class ids.
    Contiguous,
    /// Fold `i` holds ids `4x - 3 + i` for `x = 1..=total / 4`.
    CocoStride,
}

/// Class ids are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FoldSpec {
    pub total_classes: usize,
    pub fold_index: usize,
    pub rule: FoldRule,
}

impl FoldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.total_classes == 0 || self.total_classes % 4 != 0 {
            return Err(Error::ClassCount(self.total_classes));
        }
        if self.fold_index > 3 {
            return Err(Error::FoldIndex(self.fold_index));
        }
        Ok(())
    }

    /// Class ids of the held-out fold, ascending.
    pub fn test_classes(&self) -> Result<Vec<usize>> {
        self.validate()?;
        let per = self.total_classes / 4;
        let i = self.fold_index;
        Ok(match self.rule {
            FoldRule::Contiguous => (i * per + 1..=(i + 1) * per).collect(),
            FoldRule::CocoStride => (1..=per).map(|x| 4 * x - 3 + i).collect(),
        })
    }
}

/// `(train_classes, test_classes)`, both ascending.
pub fn split_folds(spec: &FoldSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let test = spec.test_classes()?;
    let train = (1..=spec.total_classes)
        .filter(|c| !test.contains(c))
        .collect();
    Ok((train, test))
}
