use crate::error::{Result, SpnError};
use crate::spn::Evidence;

/// Labelled data `(x, y)` plus unlabelled data `u` with one soft-label row per datum.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, F> {
    pub x: &'a [Vec<F>],
    pub y: &'a [usize],
    pub u: &'a [Vec<F>],
    pub q: &'a [Vec<F>],
}

impl<'a, F> Batch<'a, F> {
    pub fn new(x: &'a [Vec<F>], y: &'a [usize], u: &'a [Vec<F>], q: &'a [Vec<F>]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(SpnError::LengthMismatch(x.len(), y.len()));
        }
        if u.len() != q.len() {
            return Err(SpnError::SoftLabelShape(q.len(), u.len()));
        }
        Ok(Self { x, y, u, q })
    }

    pub fn supervised(x: &'a [Vec<F>], y: &'a [usize]) -> Result<Self> {
        Self::new(x, y, &[], &[])
    }

    /// Same labelled part, no unlabelled data.
    pub fn labelled_only(&self) -> Self {
        Self { x: self.x, y: self.y, u: &[], q: &[] }
    }

    pub fn len(&self) -> usize {
        self.x.len() + self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Datum `i`: labelled rows first (one-hot), then unlabelled rows (soft).
    #[inline]
    pub fn evidence(&self, i: usize) -> Evidence<'a, F> {
        if i < self.x.len() {
            Evidence::labelled(&self.x[i], self.y[i])
        } else {
            let m = i - self.x.len();
            Evidence::soft(&self.u[m], &self.q[m])
        }
    }

    /// Datum `i` with every class indicator set to one.
    #[inline]
    pub fn marginal_evidence(&self, i: usize) -> Evidence<'a, F> {
        if i < self.x.len() {
            Evidence::marginal(&self.x[i])
        } else {
            Evidence::marginal(&self.u[i - self.x.len()])
        }
    }
}
