use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

/// One transition `(s, a, s', r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub r: f64,
}

/// N stacked contexts with fixed state and action widths.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBatch {
    pub s: Matrix,
    pub a: Matrix,
    pub s_next: Matrix,
    pub r: Matrix,
}

impl ContextBatch {
    pub fn empty(d_s: usize, d_a: usize) -> Self {
        Self {
            s: Matrix::zeros(0, d_s),
            a: Matrix::zeros(0, d_a),
            s_next: Matrix::zeros(0, d_s),
            r: Matrix::zeros(0, 1),
        }
    }

    pub fn from_contexts(d_s: usize, d_a: usize, contexts: &[Context]) -> Self {
        let mut b = Self::empty(d_s, d_a);
        for c in contexts {
            b.push(c);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.s.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_s(&self) -> usize {
        self.s.cols()
    }

    pub fn d_a(&self) -> usize {
        self.a.cols()
    }

    /// Panics if the context widths disagree with the batch.
    pub fn push(&mut self, c: &Context) {
        assert_eq!(c.s.len(), self.d_s(), "state width mismatch");
        assert_eq!(c.a.len(), self.d_a(), "action width mismatch");
        assert_eq!(c.s_next.len(), self.d_s(), "next-state width mismatch");
        self.s.push_row(&c.s);
        self.a.push_row(&c.a);
        self.s_next.push_row(&c.s_next);
        self.r.push_row(&[c.r]);
    }

    pub fn get(&self, i: usize) -> Context {
        Context {
            s: self.s.row(i).to_vec(),
            a: self.a.row(i).to_vec(),
            s_next: self.s_next.row(i).to_vec(),
            r: self.r[(i, 0)],
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            s: self.s.select_rows(idx),
            a: self.a.select_rows(idx),
            s_next: self.s_next.select_rows(idx),
            r: self.r.select_rows(idx),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.a.is_finite() && self.s_next.is_finite() && self.r.is_finite()
    }
}
