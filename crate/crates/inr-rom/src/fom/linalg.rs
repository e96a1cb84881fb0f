//! Sparse Jacobian storage and a banded direct solver.
//!
//! The backward-Euler Jacobian is assembled in compressed sparse row form.
//! Under the natural interleaved unknown ordering the matrix is banded, so
//! the direct solve is an LU factorization with partial pivoting confined to
//! the band (LAPACK `dgbtrf`/`dgbtrs` layout).

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Builds a square CSR matrix from per-row entry lists; entries within a
    /// row are sorted by column and duplicates are summed.
    pub fn from_rows(n: usize, mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        debug_assert_eq!(rows.len(), n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Csr {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Maximum of `row - col` (lower) and `col - row` (upper) over all
    /// stored entries.
    #[cfg(test)]
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for r in 0..self.n {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[idx];
                if r > c {
                    kl = kl.max(r - c);
                } else {
                    ku = ku.max(c - r);
                }
            }
        }
        (kl, ku)
    }

    /// Dense `y = A x`, used by tests.
    #[cfg(test)]
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for r in 0..self.n {
            let mut acc = 0.0;
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[idx] * x[self.cols[idx]];
            }
            y[r] = acc;
        }
        y
    }
}

/// LU factors of a banded matrix, ready for repeated solves.
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Column-major working array, `ldab = 2*kl + ku + 1` rows per column;
    /// entry (i, j) lives at row `kl + ku + i - j`.
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    /// Factors a CSR matrix whose entries all lie within the stated band.
    pub fn factor(a: &Csr, kl: usize, ku: usize) -> Result<Self> {
        let n = a.n;
        let ldab = 2 * kl + ku + 1;
        let kv = kl + ku;
        let mut ab = vec![0.0; ldab * n];
        for r in 0..n {
            for idx in a.row_ptr[r]..a.row_ptr[r + 1] {
                let c = a.cols[idx];
                debug_assert!(
                    (r <= c + kl) && (c <= r + ku),
                    "entry ({r},{c}) outside band kl={kl} ku={ku}"
                );
                ab[c * ldab + (kv + r - c)] = a.vals[idx];
            }
        }

        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            // Pivot search within the column band.
            let mut jp = 0;
            let mut best = ab[j * ldab + kv].abs();
            for p in 1..=km {
                let v = ab[j * ldab + kv + p].abs();
                if v > best {
                    best = v;
                    jp = p;
                }
            }
            ipiv[j] = j + jp;
            let piv = ab[j * ldab + kv + jp];
            if piv == 0.0 {
                return Err(Error::Domain(format!(
                    "singular banded matrix at column {j}"
                )));
            }
            let last_col = (j + kv).min(n - 1);
            if jp != 0 {
                for c in j..=last_col {
                    let r1 = c * ldab + (kv + j - c);
                    let r2 = c * ldab + (kv + j + jp - c);
                    ab.swap(r1, r2);
                }
            }
            let inv = 1.0 / ab[j * ldab + kv];
            for p in 1..=km {
                ab[j * ldab + kv + p] *= inv;
            }
            for c in j + 1..=last_col {
                let u = ab[c * ldab + (kv + j - c)];
                if u != 0.0 {
                    for p in 1..=km {
                        ab[c * ldab + (kv + j + p - c)] -= ab[j * ldab + kv + p] * u;
                    }
                }
            }
        }
        Ok(BandLu {
            n,
            kl,
            ku,
            ab,
            ipiv,
        })
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let ldab = 2 * kl + ku + 1;
        let kv = kl + ku;
        // Forward elimination with row interchanges.
        for j in 0..n {
            let jp = self.ipiv[j];
            if jp != j {
                b.swap(j, jp);
            }
            let km = kl.min(n - 1 - j);
            let bj = b[j];
            if bj != 0.0 {
                for p in 1..=km {
                    b[j + p] -= self.ab[j * ldab + kv + p] * bj;
                }
            }
        }
        // Back substitution against U (bandwidth kl + ku).
        for j in (0..n).rev() {
            b[j] /= self.ab[j * ldab + kv];
            let bj = b[j];
            if bj != 0.0 {
                let lo = j.saturating_sub(kv);
                for i in lo..j {
                    b[i] -= self.ab[j * ldab + (kv + i - j)] * bj;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> Csr {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n);
        for r in 0..n {
            let mut row = Vec::new();
            let lo = r.saturating_sub(kl);
            let hi = (r + ku).min(n - 1);
            for c in lo..=hi {
                let mut v: f64 = rng.random_range(-1.0..1.0);
                if c == r {
                    v += 4.0; // keep well conditioned
                }
                row.push((c, v));
            }
            rows.push(row);
        }
        Csr::from_rows(n, rows)
    }

    #[test]
    fn banded_lu_matches_dense_reference() {
        for seed in 0..4u64 {
            let (n, kl, ku) = (37, 5, 3);
            let a = random_banded(n, kl, ku, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x_true: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut b = a.matvec(&x_true);

            // Dense reference via nalgebra LU.
            let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
            for r in 0..n {
                for idx in a.row_ptr[r]..a.row_ptr[r + 1] {
                    dense[(r, a.cols[idx])] = a.vals[idx];
                }
            }
            let rhs = nalgebra::DVector::from_column_slice(&b);
            let x_dense = dense.clone().lu().solve(&rhs).unwrap();

            let lu = BandLu::factor(&a, kl, ku).unwrap();
            lu.solve(&mut b);
            for i in 0..n {
                assert!((b[i] - x_true[i]).abs() < 1e-10, "seed {seed} i {i}");
                assert!((b[i] - x_dense[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // [[0, 1], [1, 0]] needs the row swap.
        let a = Csr::from_rows(2, vec![vec![(1, 1.0)], vec![(0, 1.0)]]);
        let lu = BandLu::factor(&a, 1, 1).unwrap();
        let mut b = vec![2.0, 3.0];
        lu.solve(&mut b);
        assert_eq!(b, vec![3.0, 2.0]);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = Csr::from_rows(2, vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0)]]);
        assert!(BandLu::factor(&a, 1, 1).is_err());
    }

    #[test]
    fn duplicate_entries_are_summed() {
        let a = Csr::from_rows(1, vec![vec![(0, 1.5), (0, 2.5)]]);
        assert_eq!(a.vals, vec![4.0]);
    }

    #[test]
    fn bandwidths_reflect_the_stored_pattern() {
        let a = random_banded(20, 4, 2, 0);
        assert_eq!(a.bandwidths(), (4, 2));
    }
}
