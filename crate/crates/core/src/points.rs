use crate::error::{Error, Result};

/// A set of `n` points in `d` dimensions, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Points {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl Points {
    pub fn new(data: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("d", "dimension must be positive"));
        }
        if data.len() % d != 0 {
            return Err(Error::invalid("data", format!("length {} is not a multiple of {d}", data.len())));
        }
        let n = data.len() / d;
        Ok(Points { data, n, d })
    }

    pub fn empty(d: usize) -> Self {
        Points { data: Vec::new(), n: 0, d }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Points::new(data, d)
    }

    /// One-dimensional points.
    pub fn from_column(values: &[f64]) -> Self {
        Points { data: values.to_vec(), n: values.len(), d: 1 }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Points {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Points { data, n: idx.len(), d: self.d }
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.d, "row dimension");
        self.data.extend_from_slice(row);
        self.n += 1;
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Points) -> Result<Points> {
        if other.d != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: other.d });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Points::new(data, self.d)
    }

    /// Per-column (min, max).
    pub fn column_ranges(&self) -> Vec<(f64, f64)> {
        let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); self.d];
        for r in self.rows() {
            for (k, &v) in r.iter().enumerate() {
                out[k].0 = out[k].0.min(v);
                out[k].1 = out[k].1.max(v);
            }
        }
        out
    }

    /// Column `k` divided by `divisors[k]`.
    pub fn divide_columns(&self, divisors: &[f64]) -> Points {
        assert_eq!(divisors.len(), self.d);
        let mut data = self.data.clone();
        for r in data.chunks_exact_mut(self.d) {
            for (v, s) in r.iter_mut().zip(divisors) {
                *v /= s;
            }
        }
        Points { data, n: self.n, d: self.d }
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.d];
        for r in self.rows() {
            for (a, b) in c.iter_mut().zip(r) {
                *a += b;
            }
        }
        for a in &mut c {
            *a /= self.n as f64;
        }
        c
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
