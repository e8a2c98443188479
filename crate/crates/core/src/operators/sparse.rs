use nalgebra::DMatrix;

/// Symmetric matrix in compressed sparse row form, columns sorted per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym {
    pub n: usize,
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseSym {
    /// Sum duplicate triplets and drop off-diagonal entries below
    /// `rel_drop · max|value|`.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)], rel_drop: f64) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            rows[i].push((j, v));
        }
        let mut merged: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut vmax = 0.0f64;
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut out: Vec<(usize, f64)> = Vec::with_capacity(r.len());
            for (j, v) in r {
                match out.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => out.push((j, v)),
                }
            }
            for &(_, v) in &out {
                vmax = vmax.max(v.abs());
            }
            merged.push(out);
        }
        let cut = rel_drop * vmax;
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for (i, r) in merged.into_iter().enumerate() {
            for (j, v) in r {
                if i == j || v.abs() > cut {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseSym { n, row_offsets, col_indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                s += self.values[k] * x[self.col_indices[k]];
            }
            *yi = s;
        }
    }

    /// Replace the diagonal with the negated sum of off-diagonal entries.
    pub fn with_negated_row_sum_diagonal(&self) -> SparseSym {
        let mut triplets = Vec::with_capacity(self.nnz() + self.n);
        for i in 0..self.n {
            let mut s = 0.0;
            for (j, v) in self.row(i) {
                if j != i {
                    triplets.push((i, j, v));
                    s += v;
                }
            }
            triplets.push((i, i, -s));
        }
        SparseSym::from_triplets(self.n, &triplets, 0.0)
    }

    /// `beta · self + diag(d)`.
    pub fn scaled_plus_diag(&self, beta: f64, d: &[f64]) -> SparseSym {
        let mut triplets = Vec::with_capacity(self.nnz() + self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                triplets.push((i, j, beta * v));
            }
            triplets.push((i, i, d[i]));
        }
        SparseSym::from_triplets(self.n, &triplets, 0.0)
    }

    /// `P A Pᵀ` where new index `perm[i]` is old index `i`.
    pub fn permuted(&self, perm: &[usize]) -> SparseSym {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                triplets.push((perm[i], perm[j], v));
            }
        }
        SparseSym::from_triplets(self.n, &triplets, 0.0)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (self.get(j, i) - v).abs() <= tol))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// Matrix Market coordinate dump (upper triangle, symmetric header).
    pub fn to_matrix_market(&self) -> String {
        use std::fmt::Write;
        let upper: Vec<(usize, usize, f64)> = (0..self.n)
            .flat_map(|i| self.row(i).filter(move |&(j, _)| j >= i).map(move |(j, v)| (i, j, v)))
            .collect();
        let mut s = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
        writeln!(s, "{} {} {}", self.n, self.n, upper.len()).unwrap();
        for (i, j, v) in upper {
            // Lower-triangle convention: row ≥ column.
            writeln!(s, "{} {} {:e}", j + 1, i + 1, v).unwrap();
        }
        s
    }
}
