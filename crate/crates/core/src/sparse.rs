//! Compressed adjacency lists for hypergraph incidence plus the symmetric
//! linear-operator abstraction used by both the diffusion code and the tape.

use crate::mat::Mat;

/// One orientation of a binary incidence matrix in compressed row form:
/// row `i` lists the column indices with a 1 entry.
#[derive(Debug, Clone, Default)]
pub struct Incidence {
    ptr: Vec<usize>,
    idx: Vec<u32>,
}

impl Incidence {
    pub fn from_lists(lists: &[Vec<u32>]) -> Self {
        let mut ptr = Vec::with_capacity(lists.len() + 1);
        let mut idx = Vec::new();
        ptr.push(0);
        for l in lists {
            idx.extend_from_slice(l);
            ptr.push(idx.len());
        }
        Incidence { ptr, idx }
    }

    /// Transpose within a known column count (`cols` rows in the result).
    pub fn transposed(&self, cols: usize) -> Incidence {
        let mut counts = vec![0usize; cols];
        for &j in &self.idx {
            counts[j as usize] += 1;
        }
        let mut ptr = Vec::with_capacity(cols + 1);
        ptr.push(0);
        for c in &counts {
            ptr.push(ptr.last().unwrap() + c);
        }
        let mut fill = ptr.clone();
        let mut idx = vec![0u32; self.idx.len()];
        for row in 0..self.num_rows() {
            for &j in self.row(row) {
                idx[fill[j as usize]] = row as u32;
                fill[j as usize] += 1;
            }
        }
        Incidence { ptr, idx }
    }

    #[inline]
    pub fn num_rows(&self) -> usize {
        self.ptr.len().saturating_sub(1)
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        &self.idx[self.ptr[i]..self.ptr[i + 1]]
    }

    #[inline]
    pub fn row_len(&self, i: usize) -> usize {
        self.ptr[i + 1] - self.ptr[i]
    }
}

/// Symmetric linear operator on row-major feature matrices. Both the sparse
/// Eq.-style propagation over the original hypergraph and the dense condensed
/// propagation implement this, so diffusion and the HGNN are written once.
pub trait SymOp: std::fmt::Debug {
    fn dim(&self) -> usize;
    /// `P * x` for `x` of shape (dim, d).
    fn apply(&self, x: &Mat) -> Mat;
}

/// Dense symmetric operator: wraps an explicit matrix.
#[derive(Debug, Clone)]
pub struct DenseSym(pub Mat);

impl SymOp for DenseSym {
    fn dim(&self) -> usize {
        self.0.rows()
    }

    fn apply(&self, x: &Mat) -> Mat {
        self.0.matmul(x).expect("dimension checked by caller")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_round_trips() {
        let inc = Incidence::from_lists(&[vec![0, 2], vec![1], vec![0, 1, 2]]);
        let t = inc.transposed(3);
        assert_eq!(t.row(0), &[0, 2]);
        assert_eq!(t.row(1), &[1, 2]);
        assert_eq!(t.row(2), &[0, 2]);
        let back = t.transposed(3);
        for i in 0..3 {
            assert_eq!(back.row(i), inc.row(i));
        }
    }
}
