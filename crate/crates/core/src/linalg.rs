//! Small row-major dense and CSR matrices plus the two norms the reservoir
//! initializer needs: spectral radius and operator 2-norm.
//!
//! Matrix-vector products here sum in a fixed order so state trajectories are
//! bit-reproducible across runs, thread counts and call sites.

use nalgebra::{Complex, DMatrix};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EsnError, Result};

/// Iteration cap per power-iteration attempt.
pub const POWER_MAX_ITERS: usize = 1000;
/// Fresh random starts allowed when power iteration hits the null space.
pub const POWER_RESTARTS: usize = 5;
/// At or below this dimension the dense eigensolver is used directly.
pub const DENSE_EIGEN_DIM: usize = 64;
/// At or below this smaller-side dimension the operator norm comes from an SVD.
pub const DENSE_SVD_DIM: usize = 512;

/// Deflation tolerances tried in turn by the dense eigensolver.
const SCHUR_TOLERANCES: [f64; 4] = [f64::EPSILON, 1e-14, 1e-12, 1e-10];

const RESIDUAL_TOL: f64 = 1e-10;
/// Krylov subspace dimension per Arnoldi cycle.
const KRYLOV_DIM: usize = 80;
/// Restart cap for the Arnoldi stage.
const ARNOLDI_CYCLES: usize = 60;
const RESTART_SEED: u64 = 0x05ee_d0f5_ca1e;

/// Dot product with four interleaved partial sums. Order is fixed.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Anything that can be applied to a vector.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `out = self * x`
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(EsnError::Dimension(format!(
                "{} values for a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(EsnError::Dimension(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero; an empty matrix has no rows to yield anyway
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    /// Adds `x` to every diagonal entry of a square matrix.
    pub fn add_diagonal(&mut self, x: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += x;
        }
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// `x^T` applied as `out = self^T * x`.
    pub fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.rows);
        assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(r)) {
                *o += m * xr;
            }
        }
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(EsnError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.data[r * m.ncols() + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl LinearOperator for DenseMatrix {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "dense matvec: input length");
        assert_eq!(out.len(), self.rows, "dense matvec: output length");
        for (o, row) in out.iter_mut().zip(self.row_iter()) {
            *o = dot(row, x);
        }
    }
}

/// Compressed sparse row matrix. Column indices are sorted within each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets. Duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(EsnError::Dimension(format!(
                    "entry ({r}, {c}) outside {rows}x{cols}"
                )));
            }
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut triplets = Vec::new();
        for r in 0..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        Self::from_triplets(m.rows(), m.cols(), &triplets).expect("indices come from the matrix itself")
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m.set(r, self.col_idx[k], self.values[k]);
            }
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self * alpha + beta * I` for a square matrix, keeping sparsity plus the diagonal.
    pub fn affine_identity(&self, alpha: f64, beta: f64) -> Self {
        assert_eq!(self.rows, self.cols, "affine_identity needs a square matrix");
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(self.nnz() + self.rows);
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                triplets.push((r, self.col_idx[k], alpha * self.values[k]));
            }
            if beta != 0.0 {
                triplets.push((r, r, beta));
            }
        }
        Self::from_triplets(self.rows, self.cols, &triplets).expect("indices already valid")
    }
}

impl LinearOperator for CsrMatrix {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "csr matvec: input length");
        assert_eq!(out.len(), self.rows, "csr matvec: output length");
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *o = acc;
        }
    }
}

/// `(1 - a) I + a M` without materializing anything.
pub struct LeakyEffective<'a, M: LinearOperator> {
    pub inner: &'a M,
    pub leaky_rate: f64,
}

impl<M: LinearOperator> LinearOperator for LeakyEffective<'_, M> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.inner.apply(x, out);
        let a = self.leaky_rate;
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = (1.0 - a) * xi + a * *o;
        }
    }
}

fn materialize<M: LinearOperator>(op: &M) -> DMatrix<f64> {
    let (n, m) = (op.nrows(), op.ncols());
    let mut dense = DMatrix::zeros(n, m);
    let mut e = vec![0.0; m];
    let mut col = vec![0.0; n];
    for j in 0..m {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        for i in 0..n {
            dense[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    dense
}

/// All eigenvalues of a square operator as (re, im) pairs.
///
/// The matrix is split into the diagonal blocks of its block-triangular form
/// (strongly connected components of the sparsity graph), and each block goes
/// through a dense real Schur decomposition. Very sparse reservoirs fall apart
/// into many tiny blocks, some cyclic, which is where plain QR stalls.
pub fn eigenvalues<M: LinearOperator>(op: &M) -> Result<Vec<(f64, f64)>> {
    if op.nrows() != op.ncols() {
        return Err(EsnError::Dimension(format!(
            "eigenvalues of a non-square {}x{} matrix",
            op.nrows(),
            op.ncols()
        )));
    }
    let dense = materialize(op);
    let n = dense.nrows();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && dense[(i, j)] != 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    for component in tarjan_scc(&graph) {
        let idx: Vec<usize> = component.iter().map(|v| v.index()).collect();
        if let [i] = idx[..] {
            out.push((dense[(i, i)], 0.0));
            continue;
        }
        let block = DMatrix::from_fn(idx.len(), idx.len(), |r, c| dense[(idx[r], idx[c])]);
        out.extend(block_eigenvalues(block)?);
    }
    Ok(out)
}

fn block_eigenvalues(block: DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    let max_iters = 100 * block.nrows().max(10);
    for eps in SCHUR_TOLERANCES {
        if let Some(schur) = block.clone().try_schur(eps, max_iters) {
            return Ok(schur.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect());
        }
    }
    Err(EsnError::Numerical(format!(
        "Schur decomposition of a {0}x{0} block did not converge",
        block.nrows()
    )))
}

fn dense_spectral_radius<M: LinearOperator>(op: &M) -> Result<f64> {
    Ok(eigenvalues(op)?
        .into_iter()
        .map(|(re, im)| re.hypot(im))
        .fold(0.0, f64::max))
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nrm = norm2(&v);
        if nrm > 0.0 {
            v.iter_mut().for_each(|x| *x /= nrm);
            return v;
        }
    }
}

enum PowerOutcome {
    Converged(f64),
    /// The iterate fell into the null space; another start may work.
    NullStart,
    /// Iteration cap reached, typically a small gap below the dominant eigenvalues.
    Stalled,
}

/// One power-iteration attempt. The dominant part of the spectrum is modelled
/// either as one real eigenvalue (`A y ≈ λ y`) or as a pair satisfying the
/// two-term recurrence `A² y ≈ p A y + q y`, which covers complex-conjugate
/// and ±λ pairs.
fn power_attempt<M: LinearOperator>(op: &M, start: Vec<f64>) -> PowerOutcome {
    let n = op.nrows();
    let mut y0 = start;
    let mut y1 = vec![0.0; n];
    let mut y2 = vec![0.0; n];
    op.apply(&y0, &mut y1);

    for _ in 0..POWER_MAX_ITERS {
        let n1 = norm2(&y1);
        if n1 == 0.0 {
            return PowerOutcome::NullStart;
        }

        // real dominant eigenvalue
        let lambda = dot(&y0, &y1);
        let res_real = y1
            .iter()
            .zip(&y0)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if res_real <= RESIDUAL_TOL * n1 {
            return PowerOutcome::Converged(lambda.abs());
        }

        op.apply(&y1, &mut y2);

        // dominant pair
        let g11 = dot(&y1, &y1);
        let g10 = dot(&y1, &y0);
        let g00 = dot(&y0, &y0);
        let r1 = dot(&y1, &y2);
        let r0 = dot(&y0, &y2);
        let det = g11 * g00 - g10 * g10;
        if det > 1e-14 * g11 * g00 {
            let p = (r1 * g00 - r0 * g10) / det;
            let q = (g11 * r0 - g10 * r1) / det;
            let n2 = norm2(&y2);
            let res_pair = y2
                .iter()
                .zip(y1.iter().zip(&y0))
                .map(|(c, (b, a))| (c - p * b - q * a).powi(2))
                .sum::<f64>()
                .sqrt();
            if n2 > 0.0 && res_pair <= RESIDUAL_TOL * n2 {
                let disc = p * p + 4.0 * q;
                let rho = if disc < 0.0 {
                    (-q).sqrt()
                } else {
                    let s = disc.sqrt();
                    ((p + s) / 2.0).abs().max(((p - s) / 2.0).abs())
                };
                return PowerOutcome::Converged(rho);
            }
        }

        // shift: y0 <- y1 / |y1|, y1 <- y2 / |y1|
        for i in 0..n {
            y0[i] = y1[i] / n1;
            y1[i] = y2[i] / n1;
        }
    }
    PowerOutcome::Stalled
}

/// Largest eigenvalue modulus of a square operator.
///
/// Dimensions up to [`DENSE_EIGEN_DIM`] go straight to the dense eigensolver.
/// Larger operators use power iteration, restarted from a new random vector
/// (up to [`POWER_RESTARTS`] times) only when the iterate hits the null space.
/// If it stalls, a restarted Arnoldi iteration takes over, and the dense
/// eigensolver is the last resort.
pub fn spectral_radius<M: LinearOperator>(op: &M) -> Result<f64> {
    let n = op.nrows();
    if n != op.ncols() {
        return Err(EsnError::Dimension(format!(
            "spectral radius of a non-square {}x{} matrix",
            n,
            op.ncols()
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    if n <= DENSE_EIGEN_DIM {
        return dense_spectral_radius(op);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED ^ n as u64);
    for _ in 0..=POWER_RESTARTS {
        match power_attempt(op, random_unit(&mut rng, n)) {
            PowerOutcome::Converged(rho) if rho.is_finite() => return Ok(rho),
            PowerOutcome::NullStart => continue,
            _ => break,
        }
    }
    if let Some(rho) = arnoldi_spectral_radius(op, random_unit(&mut rng, n)) {
        return Ok(rho);
    }
    log::debug!("Krylov iterations did not converge for n={n}; using dense eigensolver");
    let rho = dense_spectral_radius(op)?;
    if rho.is_finite() {
        Ok(rho)
    } else {
        Err(EsnError::Numerical("spectral radius is not finite".into()))
    }
}

/// Explicitly restarted Arnoldi for the largest-modulus eigenvalue. Each
/// cycle builds a Krylov basis of dimension [`KRYLOV_DIM`], takes the
/// largest-modulus Ritz pair of the projected Hessenberg matrix and accepts it
/// once the true residual `‖A x − θ x‖` is below `RESIDUAL_TOL · |θ| · ‖x‖`.
/// Otherwise it restarts from the Ritz vector.
fn arnoldi_spectral_radius<M: LinearOperator>(op: &M, start: Vec<f64>) -> Option<f64> {
    let n = op.nrows();
    let m = KRYLOV_DIM.min(n);
    let mut v0 = start;
    for _ in 0..ARNOLDI_CYCLES {
        let (basis, h) = arnoldi_basis(op, &v0, m)?;
        let k = basis.len().min(h.ncols());
        let hk = h.view((0, 0), (k, k)).into_owned();
        let theta = block_eigenvalues(hk.clone())
            .ok()?
            .into_iter()
            .map(|(re, im)| Complex::new(re, im))
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))?;
        if theta.norm() == 0.0 || !theta.norm().is_finite() {
            return None;
        }
        if h[(k, k - 1)] == 0.0 {
            // the Krylov space is invariant, so the Ritz values are exact
            return Some(theta.norm());
        }
        let y = ritz_vector(&hk, theta)?;
        let mut xr = vec![0.0; n];
        let mut xi = vec![0.0; n];
        for (vj, yj) in basis.iter().zip(y.iter()) {
            for i in 0..n {
                xr[i] += yj.re * vj[i];
                xi[i] += yj.im * vj[i];
            }
        }
        let mut axr = vec![0.0; n];
        let mut axi = vec![0.0; n];
        op.apply(&xr, &mut axr);
        op.apply(&xi, &mut axi);
        // (A - θ) (xr + i xi), real and imaginary parts
        let mut res2 = 0.0;
        for i in 0..n {
            let re = axr[i] - (theta.re * xr[i] - theta.im * xi[i]);
            let im = axi[i] - (theta.re * xi[i] + theta.im * xr[i]);
            res2 += re * re + im * im;
        }
        let xnorm = (dot(&xr, &xr) + dot(&xi, &xi)).sqrt();
        if res2.sqrt() <= RESIDUAL_TOL * theta.norm() * xnorm {
            return Some(theta.norm());
        }
        v0 = xr.iter().zip(&xi).map(|(a, b)| a + b).collect();
        let nrm = norm2(&v0);
        if nrm == 0.0 || !nrm.is_finite() {
            return None;
        }
        v0.iter_mut().for_each(|x| *x /= nrm);
    }
    None
}

/// Orthonormal Krylov basis `v0, A v0, …` (at most `m` vectors) and the
/// `(m+1) × m` Hessenberg matrix. Stops early on an invariant subspace.
fn arnoldi_basis<M: LinearOperator>(op: &M, v0: &[f64], m: usize) -> Option<(Vec<Vec<f64>>, DMatrix<f64>)> {
    let n = op.nrows();
    let mut basis = vec![v0.to_vec()];
    let mut h = DMatrix::zeros(m + 1, m);
    let mut w = vec![0.0; n];
    for j in 0..m {
        op.apply(&basis[j], &mut w);
        let wnorm0 = norm2(&w);
        // classical Gram-Schmidt, twice
        for _ in 0..2 {
            for (i, vi) in basis.iter().enumerate() {
                let c = dot(vi, &w);
                h[(i, j)] += c;
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= c * vk;
                }
            }
        }
        let hn = norm2(&w);
        if !hn.is_finite() {
            return None;
        }
        if hn <= 1e-12 * wnorm0.max(f64::MIN_POSITIVE) {
            h[(j + 1, j)] = 0.0;
            return Some((basis, h.resize(j + 2, j + 1, 0.0)));
        }
        h[(j + 1, j)] = hn;
        if j + 1 < m {
            basis.push(w.iter().map(|x| x / hn).collect());
        }
    }
    Some((basis, h))
}

/// Eigenvector of the small matrix `h` for eigenvalue `theta`, by two steps
/// of inverse iteration.
fn ritz_vector(h: &DMatrix<f64>, theta: Complex<f64>) -> Option<nalgebra::DVector<Complex<f64>>> {
    let k = h.nrows();
    let shift = theta * (1.0 + 1e-10) + Complex::new(1e-14, 0.0);
    let a = DMatrix::from_fn(k, k, |i, j| {
        Complex::new(h[(i, j)], 0.0) - if i == j { shift } else { Complex::new(0.0, 0.0) }
    });
    let lu = a.lu();
    let mut y = nalgebra::DVector::from_element(k, Complex::new(1.0, 0.0));
    for _ in 0..2 {
        y = lu.solve(&y)?;
        let nrm = y.norm();
        if nrm == 0.0 || !nrm.is_finite() {
            return None;
        }
        y /= Complex::new(nrm, 0.0);
    }
    // rotate so the largest entry is real; for a real θ this makes y real
    let (imax, _) = y.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))?;
    let phase = y[imax] / Complex::new(y[imax].norm(), 0.0);
    Some(y.map(|z| z / phase))
}

/// Largest singular value. Matrices whose smaller side is at most
/// [`DENSE_SVD_DIM`] go straight to a singular-values-only SVD; larger ones
/// use power iteration on `MᵀM` with the SVD as fallback.
pub fn operator_norm(m: &DenseMatrix) -> Result<f64> {
    if !m.is_finite() {
        return Err(EsnError::Numerical("operator norm of a non-finite matrix".into()));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 || m.as_slice().iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    if rows.min(cols) > DENSE_SVD_DIM {
        let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED ^ (rows * 31 + cols) as u64);
        if let Some(sigma) = power_operator_norm(m, random_unit(&mut rng, cols)) {
            return Ok(sigma);
        }
        log::debug!("operator-norm power iteration did not converge; using SVD");
    }
    svd_operator_norm(m)
}

fn svd_operator_norm(m: &DenseMatrix) -> Result<f64> {
    let svd = m
        .to_nalgebra()
        .try_svd(false, false, f64::EPSILON, 0)
        .ok_or_else(|| EsnError::Numerical("SVD did not converge".into()))?;
    Ok(svd.singular_values.iter().cloned().fold(0.0, f64::max))
}

fn power_operator_norm(m: &DenseMatrix, mut x: Vec<f64>) -> Option<f64> {
    let mut mx = vec![0.0; m.rows()];
    let mut mtmx = vec![0.0; m.cols()];
    for _ in 0..POWER_MAX_ITERS {
        m.apply(&x, &mut mx);
        m.apply_transpose(&mx, &mut mtmx);
        // Rayleigh quotient of MᵀM at unit x
        let sigma2 = dot(&mx, &mx);
        let nrm = norm2(&mtmx);
        if nrm == 0.0 {
            return None;
        }
        let res = mtmx
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - sigma2 * b).powi(2))
            .sum::<f64>()
            .sqrt();
        // eigenvalue error of a symmetric matrix is quadratic in the residual
        if res <= 1e-7 * sigma2 {
            return Some(sigma2.sqrt());
        }
        for (xi, v) in x.iter_mut().zip(&mtmx) {
            *xi = v / nrm;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rand_dense(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        let data = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseMatrix::from_row_major(r, c, data).unwrap()
    }

    #[test]
    fn spectral_radius_small_cases() {
        assert_relative_eq!(spectral_radius(&DenseMatrix::identity(3)).unwrap(), 1.0, max_relative = 1e-12);
        let rot = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        assert_relative_eq!(spectral_radius(&rot).unwrap(), 1.0, max_relative = 1e-12);
        let d = DenseMatrix::from_diagonal(&[0.3, -0.8]);
        assert_relative_eq!(spectral_radius(&d).unwrap(), 0.8, max_relative = 1e-12);
    }

    #[test]
    fn power_path_handles_rotation_blocks() {
        // 100x100 block-diagonal: one rotation block scaled by 0.9 dominates
        let n = 100;
        let mut m = DenseMatrix::zeros(n, n);
        m.set(0, 1, 0.9);
        m.set(1, 0, -0.9);
        for i in 2..n {
            m.set(i, i, 0.5 * (i as f64 / n as f64));
        }
        let rho = spectral_radius(&m).unwrap();
        assert_relative_eq!(rho, 0.9, max_relative = 1e-6);
        // and on the identity (power path, n > dense cutoff)
        assert_relative_eq!(spectral_radius(&DenseMatrix::identity(n)).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn power_path_matches_dense_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let m = rand_dense(&mut rng, 120, 120);
            let eff = LeakyEffective { inner: &m, leaky_rate: 0.3 };
            let fast = spectral_radius(&eff).unwrap();
            let exact = dense_spectral_radius(&eff).unwrap();
            assert_relative_eq!(fast, exact, max_relative = 1e-6);
        }
    }

    #[test]
    fn arnoldi_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for a in [0.1, 0.6, 1.0] {
            let m = rand_dense(&mut rng, 150, 150);
            let eff = LeakyEffective { inner: &m, leaky_rate: a };
            let krylov = arnoldi_spectral_radius(&eff, random_unit(&mut rng, 150)).unwrap();
            assert_relative_eq!(krylov, dense_spectral_radius(&eff).unwrap(), max_relative = 1e-8);
        }
    }

    #[test]
    fn eigenvalues_of_cycles_with_large_diagonal() {
        // (1-a) I + a c P for a 7-cycle P plus a 3-cycle and isolated nodes
        let (a, c) = (0.1, 0.8);
        let n = 150;
        let mut triplets: Vec<(usize, usize, f64)> = (0..7).map(|i| (i, (i + 1) % 7, c)).collect();
        triplets.extend((0..3).map(|i| (10 + i, 10 + (i + 1) % 3, 0.5)));
        let p = CsrMatrix::from_triplets(n, n, &triplets).unwrap();
        let eff = LeakyEffective { inner: &p, leaky_rate: a };
        let eig = eigenvalues(&eff).unwrap();
        assert_eq!(eig.len(), n);
        let rho = eig.iter().map(|(re, im)| re.hypot(*im)).fold(0.0, f64::max);
        assert_relative_eq!(rho, 1.0 - a + a * c, max_relative = 1e-12);
        assert_relative_eq!(spectral_radius(&eff).unwrap(), 1.0 - a + a * c, max_relative = 1e-9);
    }

    #[test]
    fn operator_norm_cases() {
        assert_relative_eq!(operator_norm(&DenseMatrix::from_diagonal(&[2.0, 1.0])).unwrap(), 2.0, max_relative = 1e-9);
        let col = DenseMatrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_relative_eq!(operator_norm(&col).unwrap(), 5.0, max_relative = 1e-9);
        assert_eq!(operator_norm(&DenseMatrix::zeros(3, 2)).unwrap(), 0.0);
    }

    #[test]
    fn operator_norm_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = rand_dense(&mut rng, 150, 40);
        let svd = m.to_nalgebra().svd(false, false);
        let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        assert_relative_eq!(operator_norm(&m).unwrap(), top, max_relative = 1e-6);
    }

    #[test]
    fn power_operator_norm_matches_svd() {
        // rank-one spike on top of noise gives a clear gap
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut m = rand_dense(&mut rng, 90, 60);
        for r in 0..90 {
            for c in 0..60 {
                m.set(r, c, m.get(r, c) * 0.1 + 1.0);
            }
        }
        let power = power_operator_norm(&m, random_unit(&mut rng, 60)).unwrap();
        assert_relative_eq!(power, svd_operator_norm(&m).unwrap(), max_relative = 1e-9);
    }

    #[test]
    fn csr_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut d = rand_dense(&mut rng, 30, 20);
        for v in d.as_mut_slice() {
            if rng.gen_bool(0.8) {
                *v = 0.0;
            }
        }
        let s = CsrMatrix::from_dense(&d);
        assert_eq!(s.to_dense(), d);
        let x: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; 30];
        let mut b = vec![0.0; 30];
        d.apply(&x, &mut a);
        s.apply(&x, &mut b);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn csr_sums_duplicates_and_rejects_out_of_range() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.to_dense().get(0, 1), 3.0);
        assert!(CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn affine_identity_adds_diagonal() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 2.0)]).unwrap();
        let e = m.affine_identity(0.5, 0.25).to_dense();
        assert_eq!(e.as_slice(), &[0.25, 1.0, 0.0, 0.25]);
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (1..=7).map(f64::from).collect();
        assert_eq!(dot(&a, &a), 140.0);
        assert_eq!(dot(&[], &[]), 0.0);
    }
}
