//! Sparse symmetric matrices and a direct solver for them.
//!
//! Assembly goes through [`TripletBuilder`], which sums duplicate entries when
//! it is turned into a [`CsrMatrix`]. Linear solves use an envelope `LDLᵀ`
//! factorization after a reverse Cuthill-McKee reordering. Shifted complex
//! systems are indefinite, so they go through a banded LU with partial
//! pivoting instead.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::ops::Neg;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::NumAssign;

use crate::error::{Error, Result};

/// Field scalar accepted by the factorization.
pub trait Scalar: Copy + NumAssign + Neg<Output = Self> + From<f64> + Send + Sync + std::fmt::Debug {
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// Coordinate-format accumulator.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    /// Scatter a dense local block through the given global indices.
    pub fn add_block(&mut self, rows: &[usize], cols: &[usize], block: &DMatrix<f64>) {
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                self.push(r, c, block[(i, j)]);
            }
        }
    }

    pub fn build(mut self) -> CsrMatrix {
        // stable sort keeps the insertion order of duplicates, so the summation
        // order (and hence the floating point result) is reproducible
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, values }
    }
}

/// Compressed sparse row matrix with sorted, unique column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        TripletBuilder::new(nrows, ncols).build()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A - Aᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.nrows == self.ncols && self.asymmetry() <= rel_tol * self.max_abs()
    }

    /// `self + alpha * other`; both must share dimensions.
    pub fn add_scaled(&self, alpha: f64, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut b = TripletBuilder::new(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                b.push(i, j, v);
            }
            for (j, v) in other.row(i) {
                b.push(i, j, alpha * v);
            }
        }
        b.build()
    }

    pub fn scale(&self, alpha: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// Principal submatrix on the rows/columns `keep` (in that order).
    pub fn submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.ncols];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut b = TripletBuilder::new(keep.len(), keep.len());
        for (new_i, &old_i) in keep.iter().enumerate() {
            for (j, v) in self.row(old_i) {
                if map[j] != usize::MAX {
                    b.push(new_i, map[j], v);
                }
            }
        }
        b.build()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// Coordinate text dump: `row col value` per stored entry.
    pub fn to_coordinate_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                let _ = writeln!(out, "{i} {j} {v:e}");
            }
        }
        out
    }
}

/// Reverse Cuthill-McKee ordering of the symmetric sparsity graph.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows;
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).filter(|&(j, _)| j != i).count()).collect();
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    let mut visited = vec![false; n];
    let mut scratch = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut cursor = 0;
    while order.len() < n {
        while visited[by_degree[cursor]] {
            cursor += 1;
        }
        let start = pseudo_peripheral(a, by_degree[cursor], &degree, &mut scratch);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = a.row(v).map(|(j, _)| j).filter(|&j| !visited[j]).collect();
            next.sort_by_key(|&j| (degree[j], j));
            for j in next {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

/// Breadth-first search from `start`; returns the visited nodes in order and
/// leaves their distances in `level` (the caller resets them).
fn bfs_levels(a: &CsrMatrix, start: usize, level: &mut [usize]) -> Vec<usize> {
    level[start] = 0;
    let mut seen = vec![start];
    let mut head = 0;
    while head < seen.len() {
        let v = seen[head];
        head += 1;
        for (j, _) in a.row(v) {
            if level[j] == usize::MAX {
                level[j] = level[v] + 1;
                seen.push(j);
            }
        }
    }
    seen
}

fn pseudo_peripheral(a: &CsrMatrix, start: usize, degree: &[usize], level: &mut [usize]) -> usize {
    let mut node = start;
    let mut ecc = 0;
    for _ in 0..8 {
        let seen = bfs_levels(a, node, level);
        let far = seen.iter().map(|&i| level[i]).max().unwrap_or(0);
        let candidate = seen
            .iter()
            .copied()
            .filter(|&i| level[i] == far)
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
        for &i in &seen {
            level[i] = usize::MAX;
        }
        if far <= ecc {
            break;
        }
        ecc = far;
        node = candidate;
    }
    node
}

/// Envelope `LDLᵀ` factorization of a symmetric matrix (no pivoting).
#[derive(Debug, Clone)]
pub struct LdlFactor<T: Scalar> {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    lower: Vec<T>,
    diag: Vec<T>,
}

impl<T: Scalar> LdlFactor<T> {
    /// Factor the matrix given by its sparsity pattern and an entry map
    /// `value(i, j)` (called for stored entries with `j <= i` in the original
    /// numbering).
    pub fn factor_with(pattern: &CsrMatrix, perm: Vec<usize>, value: impl Fn(usize, usize, f64) -> T) -> Result<Self> {
        let n = pattern.nrows;
        let mut inverse = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut first = vec![0usize; n];
        for new_i in 0..n {
            let old_i = perm[new_i];
            first[new_i] = pattern
                .row(old_i)
                .map(|(j, _)| inverse[j])
                .filter(|&j| j <= new_i)
                .min()
                .unwrap_or(new_i);
        }
        let mut offset = vec![0usize; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + (i - first[i]);
        }
        let mut lower = vec![T::zero(); offset[n]];
        let mut diag = vec![T::zero(); n];
        for new_i in 0..n {
            let old_i = perm[new_i];
            for (old_j, v) in pattern.row(old_i) {
                let new_j = inverse[old_j];
                let x = value(old_i, old_j, v);
                if new_j < new_i {
                    lower[offset[new_i] + new_j - first[new_i]] += x;
                } else if new_j == new_i {
                    diag[new_i] += x;
                }
            }
        }

        let mut scale = 0.0f64;
        for i in 0..n {
            scale = scale.max(diag[i].modulus());
            let fi = first[i];
            let (head, row_i) = lower.split_at_mut(offset[i]);
            // row_i[k - fi] holds a_ik; transform it into L_ik D_k in place
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let row_j = &head[offset[j]..offset[j] + (j - fj)];
                let mut s = row_i[j - fi];
                for k in lo..j {
                    s -= row_i[k - fi] * row_j[k - fj];
                }
                row_i[j - fi] = s;
            }
            let mut d = diag[i];
            for j in fi..i {
                let u = row_i[j - fi];
                let l = u / diag[j];
                d -= u * l;
                row_i[j - fi] = l;
            }
            if d.modulus() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::SingularPivot(perm[i]));
            }
            diag[i] = d;
        }
        Ok(Self { n, perm, first, offset, lower, diag })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn diagonal(&self) -> &[T] {
        &self.diag
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<T> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..self.n {
            let fi = self.first[i];
            let row = &self.lower[self.offset[i]..self.offset[i + 1]];
            let mut s = y[i];
            for (k, l) in row.iter().enumerate() {
                s -= *l * y[fi + k];
            }
            y[i] = s;
        }
        for i in 0..self.n {
            y[i] /= self.diag[i];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let yi = y[i];
            let row = &self.lower[self.offset[i]..self.offset[i + 1]];
            for (k, l) in row.iter().enumerate() {
                y[fi + k] -= *l * yi;
            }
        }
        let mut x = vec![T::zero(); self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

impl LdlFactor<f64> {
    /// Factor a real symmetric matrix.
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let perm = reverse_cuthill_mckee(a);
        Self::factor_with(a, perm, |_, _, v| v)
    }

    /// Factor and require every pivot to be positive.
    pub fn new_positive_definite(a: &CsrMatrix) -> Result<Self> {
        let f = Self::new(a)?;
        if let Some((i, &d)) = f.diag.iter().enumerate().find(|(_, &d)| d <= 0.0) {
            return Err(Error::NotPositiveDefinite { row: f.perm[i], pivot: d });
        }
        Ok(f)
    }
}

/// Banded LU factorization with partial pivoting, in the reverse
/// Cuthill-McKee ordering of the pattern.
#[derive(Debug, Clone)]
pub struct BandLu<T: Scalar> {
    n: usize,
    perm: Vec<usize>,
    kl: usize,
    width: usize,
    /// Row `r` stores columns `r - kl ..= r + 2 kl`.
    rows: Vec<T>,
    pivots: Vec<usize>,
}

impl<T: Scalar> BandLu<T> {
    pub fn factor_with(pattern: &CsrMatrix, perm: Vec<usize>, value: impl Fn(usize, usize, f64) -> T) -> Result<Self> {
        let n = pattern.nrows;
        let mut inverse = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let kl = (0..n)
            .flat_map(|i| pattern.row(i).map(move |(j, _)| (i, j)))
            .map(|(i, j)| inverse[i].abs_diff(inverse[j]))
            .max()
            .unwrap_or(0);
        let width = 3 * kl + 1;
        let mut lu = Self { n, perm, kl, width, rows: vec![T::zero(); n * width], pivots: vec![0; n] };
        for old_i in 0..n {
            for (old_j, v) in pattern.row(old_i) {
                let (i, j) = (inverse[old_i], inverse[old_j]);
                *lu.at(i, j) += value(old_i, old_j, v);
            }
        }
        let mut scale = 0.0f64;
        for v in &lu.rows {
            scale = scale.max(v.modulus());
        }
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + 2 * kl).min(n - 1);
            let p = (k..=last_row)
                .max_by(|&a, &b| lu.get(a, k).modulus().total_cmp(&lu.get(b, k).modulus()))
                .expect("nonempty pivot range");
            if lu.get(p, k).modulus() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::SingularPivot(lu.perm[k]));
            }
            lu.pivots[k] = p;
            if p != k {
                for c in k..=last_col {
                    let t = lu.get(k, c);
                    *lu.at(k, c) = lu.get(p, c);
                    *lu.at(p, c) = t;
                }
            }
            let pivot = lu.get(k, k);
            for r in k + 1..=last_row {
                let l = lu.get(r, k) / pivot;
                *lu.at(r, k) = l;
                if l.modulus() == 0.0 {
                    continue;
                }
                for c in k + 1..=last_col {
                    let u = lu.get(k, c);
                    *lu.at(r, c) -= l * u;
                }
            }
        }
        Ok(lu)
    }

    fn at(&mut self, r: usize, c: usize) -> &mut T {
        debug_assert!(c + self.kl >= r && c <= r + 2 * self.kl);
        &mut self.rows[r * self.width + c + self.kl - r]
    }

    fn get(&self, r: usize, c: usize) -> T {
        self.rows[r * self.width + c + self.kl - r]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut y: Vec<T> = self.perm.iter().map(|&old| b[old]).collect();
        for k in 0..n {
            y.swap(k, self.pivots[k]);
            let yk = y[k];
            for r in k + 1..=(k + self.kl).min(n - 1) {
                y[r] -= self.get(r, k) * yk;
            }
        }
        for k in (0..n).rev() {
            let mut s = y[k];
            for c in k + 1..=(k + 2 * self.kl).min(n - 1) {
                s -= self.get(k, c) * y[c];
            }
            y[k] = s / self.get(k, k);
        }
        let mut x = vec![T::zero(); n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Factor `alpha * A + beta * M`; the combination may be indefinite.
pub fn factor_combination<T: Scalar>(a: &CsrMatrix, alpha: T, m: &CsrMatrix, beta: T) -> Result<BandLu<T>> {
    let pattern = a.add_scaled(1.0, m);
    let perm = reverse_cuthill_mckee(&pattern);
    BandLu::factor_with(&pattern, perm, |i, j, _| {
        alpha * T::from(a.get(i, j)) + beta * T::from(m.get(i, j))
    })
}

/// `true` when the number of negative pivots of `A` is zero, i.e. `A` is
/// positive definite (Sylvester's law of inertia).
pub fn is_positive_definite(a: &CsrMatrix) -> bool {
    match LdlFactor::new(a) {
        Ok(f) => f.diag.iter().all(|&d| d > 0.0),
        Err(_) => false,
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 2.0);
            if i > 0 {
                b.push(i, i - 1, -1.0);
                b.push(i - 1, i, -1.0);
            }
        }
        b.build()
    }

    fn random_spd(n: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 4.0 + rng.gen::<f64>());
            for _ in 0..2 {
                let j = rng.gen_range(0..n);
                if j != i {
                    let v = rng.gen_range(-0.5..0.5);
                    b.push(i, j, v);
                    b.push(j, i, v);
                }
            }
        }
        b.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let mut b = TripletBuilder::new(2, 2);
        b.push(0, 0, 1.0);
        b.push(0, 0, 2.5);
        b.push(1, 0, -1.0);
        let a = b.build();
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(0, 0), 3.5);
        assert_eq!(a.get(1, 0), -1.0);
        assert_eq!(a.get(0, 1), 0.0);
    }

    #[test]
    fn ldl_solves_real_systems() {
        for (seed, n) in [(1u64, 7usize), (2, 40), (3, 120)] {
            let a = random_spd(n, seed);
            let f = LdlFactor::new_positive_definite(&a).unwrap();
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let b = a.mul_vec(&x);
            let y = f.solve(&b);
            let err = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "err {err}");
        }
    }

    #[test]
    fn band_lu_solves_complex_shifted_systems() {
        let a = laplacian_1d(30);
        let m = random_spd(30, 9);
        let z = Complex64::new(0.3, 0.7);
        let f = factor_combination(&m, Complex64::from(1.0), &a, -z.inv()).unwrap();
        let x: Vec<Complex64> = (0..30).map(|i| Complex64::new(i as f64, 1.0 - i as f64 * 0.1)).collect();
        // b = (M - A/z) x
        let ax_re = a.mul_vec(&x.iter().map(|v| v.re).collect::<Vec<_>>());
        let ax_im = a.mul_vec(&x.iter().map(|v| v.im).collect::<Vec<_>>());
        let mx_re = m.mul_vec(&x.iter().map(|v| v.re).collect::<Vec<_>>());
        let mx_im = m.mul_vec(&x.iter().map(|v| v.im).collect::<Vec<_>>());
        let b: Vec<Complex64> = (0..30)
            .map(|i| Complex64::new(mx_re[i], mx_im[i]) - Complex64::new(ax_re[i], ax_im[i]) / z)
            .collect();
        let y = f.solve(&b);
        let err = x.iter().zip(&y).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "err {err}");
    }

    #[test]
    fn band_lu_pivots_on_zero_diagonal() {
        // tridiagonal with zero diagonal: unpivoted elimination breaks down
        let n = 8;
        let mut b = TripletBuilder::new(n, n);
        for i in 1..n {
            b.push(i, i - 1, 1.0 + i as f64);
            b.push(i - 1, i, 1.0 + i as f64);
        }
        let a = b.build();
        assert!(LdlFactor::new(&a).is_err());
        let lu = BandLu::factor_with(&a, (0..n).collect(), |_, _, v| v).unwrap();
        let x: Vec<f64> = (0..n).map(|i| 1.0 - 0.3 * i as f64).collect();
        let y = lu.solve(&a.mul_vec(&x));
        assert!(x.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-13));
    }

    #[test]
    fn inertia_detects_indefinite() {
        let a = laplacian_1d(10);
        assert!(is_positive_definite(&a));
        let mut eye = TripletBuilder::new(10, 10);
        (0..10).for_each(|i| eye.push(i, i, 1.0));
        let shifted = a.add_scaled(-3.0, &eye.build());
        assert!(!is_positive_definite(&shifted));
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = random_spd(50, 4);
        let mut p = reverse_cuthill_mckee(&a);
        p.sort();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn submatrix_and_dense() {
        let a = laplacian_1d(4);
        let s = a.submatrix(&[1, 2]);
        assert_eq!(s.to_dense(), DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]));
        assert!(a.is_symmetric(1e-15));
        assert_eq!(a.to_coordinate_text().lines().count(), a.nnz());
    }
}
