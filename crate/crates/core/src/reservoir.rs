//! Echo-state reservoir core: fixed random matrices, tanh state advance,
//! state augmentation, ridge-regression readout training, open-loop driving.

use crate::error::{CoreError, Result};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POWER_ITER_CAP: usize = 10_000;
pub const POWER_ITER_RTOL: f64 = 1e-10;

/// Reservoir hyperparameters. Defaults follow the hyperparameter study
/// optimum (r_dim = 400, rho = 0.5, beta = 1e-6); kappa is not pinned by the
/// study and defaults to 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReservoirSpec {
    pub r_dim: usize,
    pub kappa: usize,
    pub rho: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for ReservoirSpec {
    fn default() -> Self {
        ReservoirSpec {
            r_dim: 400,
            kappa: 3,
            rho: 0.5,
            beta: 1e-6,
            seed: 0,
        }
    }
}

impl ReservoirSpec {
    pub fn validate(&self) -> Result<()> {
        if self.r_dim < 1 {
            return Err(CoreError::InvalidParam("r_dim must be >= 1".into()));
        }
        if self.kappa < 1 || self.kappa >= self.r_dim {
            return Err(CoreError::InvalidParam(format!(
                "kappa = {} must satisfy 1 <= kappa < r_dim = {}",
                self.kappa, self.r_dim
            )));
        }
        if self.rho <= 0.0 {
            return Err(CoreError::InvalidParam("rho must be > 0".into()));
        }
        if self.beta < 0.0 {
            return Err(CoreError::InvalidParam("beta must be >= 0".into()));
        }
        Ok(())
    }
}

/// CSR sparse square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                cols.push(j);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        SparseMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.vals {
            *v *= c;
        }
    }

    /// out = A * x
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            out[i] = acc;
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[[i, self.cols[k]]] = self.vals[k];
            }
        }
        m
    }
}

/// Input matrix with exactly one nonzero per row: row i reads column
/// `entries[i].0` with weight `entries[i].1`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMatrix {
    x_dim: usize,
    entries: Vec<(usize, f64)>,
}

impl InputMatrix {
    #[inline]
    pub fn r_dim(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }
}

/// Fixed random matrices shared by every advance of one reservoir.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirMatrices {
    pub a: SparseMatrix,
    pub w_in: InputMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState(pub Vec<f64>);

impl ReservoirState {
    pub fn zeros(r_dim: usize) -> Self {
        ReservoirState(vec![0.0; r_dim])
    }
}

/// Trained linear readout, y_dim x h_dim.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub w_out: Array2<f64>,
}

// ---------------------------------------------------------------------------
// Spectral radius
// ---------------------------------------------------------------------------

/// Power iteration generalized to a small subspace (Rayleigh-Ritz) so that
/// complex conjugate dominant pairs and clustered magnitudes — the generic
/// case for random real matrices — still converge. The estimate is the
/// largest eigenvalue magnitude of the projected block matrix; for n no
/// larger than the block the projection is a full similarity transform and
/// the result is exact up to roundoff.
fn spectral_radius_op(n: usize, mul: impl Fn(&[f64], &mut [f64])) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_CAFE);
    let block = n.min(8);
    let mut q: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..n).map(|_| rng.gen::<f64>() - 0.5).collect())
        .collect();
    orthonormalize(&mut q, &mut rng);
    let mut z: Vec<Vec<f64>> = vec![vec![0.0; n]; block];
    let mut prev = f64::NAN;
    for iter in 0..POWER_ITER_CAP {
        for (qi, zi) in q.iter().zip(z.iter_mut()) {
            mul(qi, zi);
        }
        let collapsed = z.iter().all(|zi| norm(zi) < 1e-300);
        if collapsed {
            return Ok(0.0);
        }
        // projected block matrix T[a][b] = q_a . z_b
        let est = if block == 1 {
            Some(dot(&q[0], &z[0]).abs())
        } else {
            let t = nalgebra::DMatrix::from_fn(block, block, |a, b| dot(&q[a], &z[b]));
            max_eig_mag_small(t)
        };
        match est {
            Some(est) => {
                if !prev.is_nan()
                    && (est - prev).abs() <= POWER_ITER_RTOL * est.max(1e-300)
                    && iter > 1
                {
                    return Ok(est);
                }
                prev = est;
            }
            // the projected QR iteration stalled this round; keep subspace
            // iteration going and retry against a fresh projection
            None => prev = f64::NAN,
        }
        std::mem::swap(&mut q, &mut z);
        orthonormalize(&mut q, &mut rng);
    }
    Err(CoreError::NoConvergence(POWER_ITER_CAP))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn orthonormalize(q: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    let n = q[0].len();
    for k in 0..q.len() {
        loop {
            for m in 0..k {
                let (head, tail) = q.split_at_mut(k);
                let proj = dot(&head[m], &tail[0]);
                for (t, h) in tail[0].iter_mut().zip(head[m].iter()) {
                    *t -= proj * h;
                }
            }
            let nk = norm(&q[k]);
            if nk > 1e-300 {
                for v in q[k].iter_mut() {
                    *v /= nk;
                }
                break;
            }
            // degenerate direction (rank-1 image); redraw deterministically
            for v in q[k].iter_mut() {
                *v = rng.gen::<f64>() - 0.5;
            }
            let _ = n;
        }
    }
}

/// Largest eigenvalue magnitude of a small dense matrix through a
/// bounded-iteration Schur decomposition. The matrix is normalized first;
/// the unbounded library eigensolver can spin forever on degenerate inputs
/// (an all-zero matrix, for one), so a stalled decomposition returns `None`
/// instead of hanging.
fn max_eig_mag_small(t: nalgebra::DMatrix<f64>) -> Option<f64> {
    let maxabs = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if maxabs == 0.0 {
        return Some(0.0);
    }
    if !maxabs.is_finite() {
        return None;
    }
    let scaled = t.unscale(maxabs);
    nalgebra::Schur::try_new(scaled, f64::EPSILON, 1000).map(|s| {
        s.complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
            * maxabs
    })
}

/// Largest absolute eigenvalue magnitude of a dense square matrix.
pub fn spectral_radius(m: &ArrayView2<f64>) -> Result<f64> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(CoreError::DimMismatch {
            expected: n,
            got: m.ncols(),
            context: "spectral_radius on non-square matrix",
        });
    }
    spectral_radius_op(n, |x, out| {
        for (i, row) in m.outer_iter().enumerate() {
            out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    })
}

/// Sparse variant used on adjacency matrices.
pub fn spectral_radius_sparse(a: &SparseMatrix) -> Result<f64> {
    spectral_radius_op(a.n(), |x, out| a.mul_vec(x, out))
}

/// Rescales `m` in place so its spectral radius equals `rho`.
pub fn scale_to_spectral_radius(m: &mut SparseMatrix, rho: f64) -> Result<()> {
    let sr = spectral_radius_sparse(m)?;
    if sr == 0.0 {
        return Err(CoreError::ZeroSpectralRadius);
    }
    m.scale(rho / sr);
    Ok(())
}

// ---------------------------------------------------------------------------
// Matrix construction
// ---------------------------------------------------------------------------

/// Erdos-Renyi-style sparse adjacency: every entry nonzero with probability
/// kappa / r_dim, values uniform in [-1, 1], rescaled to spectral radius rho.
pub fn build_adjacency(spec: &ReservoirSpec) -> Result<SparseMatrix> {
    spec.validate()?;
    let n = spec.r_dim;
    let p = spec.kappa as f64 / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if rng.gen::<f64>() < p {
                triplets.push((i, j, rng.gen::<f64>() * 2.0 - 1.0));
            }
        }
    }
    let mut m = SparseMatrix::from_triplets(n, &triplets);
    scale_to_spectral_radius(&mut m, spec.rho)?;
    Ok(m)
}

/// One nonzero per row at a uniformly drawn column, value uniform in [-1, 1].
pub fn build_input_matrix(r_dim: usize, x_dim: usize, seed: u64) -> InputMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..r_dim)
        .map(|_| {
            let col = rng.gen_range(0..x_dim);
            let val = rng.gen::<f64>() * 2.0 - 1.0;
            (col, val)
        })
        .collect();
    InputMatrix { x_dim, entries }
}

// ---------------------------------------------------------------------------
// State updates
// ---------------------------------------------------------------------------

/// r' = tanh(A r + W_in x) over plain slices.
pub fn advance_slices(m: &ReservoirMatrices, state: &[f64], x: &[f64], next: &mut [f64]) -> Result<()> {
    if x.len() != m.w_in.x_dim() {
        return Err(CoreError::DimMismatch {
            expected: m.w_in.x_dim(),
            got: x.len(),
            context: "input vector vs W_in",
        });
    }
    m.a.mul_vec(state, next);
    for (acc, &(col, w)) in next.iter_mut().zip(m.w_in.entries()) {
        *acc = (*acc + w * x[col]).tanh();
    }
    Ok(())
}

/// r' = tanh(A r + W_in x), written into `next`.
pub fn advance_into(
    state: &ReservoirState,
    m: &ReservoirMatrices,
    x: &[f64],
    next: &mut ReservoirState,
) -> Result<()> {
    advance_slices(m, &state.0, x, &mut next.0)
}

pub fn advance(state: &ReservoirState, m: &ReservoirMatrices, x: &[f64]) -> Result<ReservoirState> {
    let mut next = ReservoirState::zeros(state.0.len());
    advance_into(state, m, x, &mut next)?;
    Ok(next)
}

/// [r, r^2] concatenation used to break reservoir symmetry.
pub fn augment(r: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * r.len());
    out.extend_from_slice(r);
    out.extend(r.iter().map(|v| v * v));
    out
}

/// Iterates `advance` over the given inputs; returns the state after each step.
pub fn drive_open_loop(
    m: &ReservoirMatrices,
    inputs: &[Vec<f64>],
    r0: &ReservoirState,
) -> Result<Vec<ReservoirState>> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut cur = r0.clone();
    for x in inputs {
        cur = advance(&cur, m, x)?;
        out.push(cur.clone());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Ridge training
// ---------------------------------------------------------------------------

fn neumaier_add(sum: &mut f64, comp: &mut f64, v: f64) {
    let t = *sum + v;
    if sum.abs() >= v.abs() {
        *comp += (*sum - t) + v;
    } else {
        *comp += (v - t) + *sum;
    }
    *sum = t;
}

/// Solves W = Y H^T (H H^T + beta I)^{-1} via diagonally-equilibrated Cholesky
/// with two rounds of compensated iterative refinement. Returns the readout and
/// the per-feature RMS (sqrt of diag(H H^T) / T), used by activity-weighted
/// contribution analysis.
pub fn train_readout_with_stats(
    features: &ArrayView2<f64>,
    targets: &ArrayView2<f64>,
    beta: f64,
) -> Result<(Readout, Vec<f64>)> {
    train_readout_anchored(features, targets, beta, None)
}

/// As [`train_readout_with_stats`], but `anchor_cols` marks a block of feature
/// rows (e.g. the KBM block of a hybrid feature vector) that the beta = 0
/// least-squares path should prefer when the system is rank-deficient and a
/// basic solution has to choose between interchangeable columns. Ignored by
/// the regularized (beta > 0) path, where the solution is unique.
pub fn train_readout_anchored(
    features: &ArrayView2<f64>,
    targets: &ArrayView2<f64>,
    beta: f64,
    anchor_cols: Option<std::ops::Range<usize>>,
) -> Result<(Readout, Vec<f64>)> {
    let h_dim = features.nrows();
    let t_len = features.ncols();
    if t_len < 1 || targets.ncols() != t_len {
        return Err(CoreError::DimMismatch {
            expected: t_len,
            got: targets.ncols(),
            context: "feature vs target sample count",
        });
    }
    if beta < 0.0 {
        return Err(CoreError::InvalidParam("beta must be >= 0".into()));
    }
    if beta == 0.0 {
        return train_lstsq_qr(features, targets, anchor_cols);
    }
    let gram = features.dot(&features.t());
    let cross = targets.dot(&features.t());
    let rms: Vec<f64> = (0..h_dim)
        .map(|i| (gram[[i, i]] / t_len as f64).max(0.0).sqrt())
        .collect();

    // M = G + beta I, equilibrated by D = diag(M)^{-1/2}
    let mut scale = vec![0.0; h_dim];
    let mut any_signal = false;
    for i in 0..h_dim {
        let d = gram[[i, i]] + beta;
        if d <= 0.0 {
            scale[i] = 1.0;
        } else {
            scale[i] = 1.0 / d.sqrt();
            any_signal = true;
        }
    }
    if !any_signal {
        return Err(CoreError::SingularRidge { point: None });
    }
    let mut m_eq = nalgebra::DMatrix::<f64>::zeros(h_dim, h_dim);
    for i in 0..h_dim {
        for j in 0..h_dim {
            let mij = gram[[i, j]] + if i == j { beta } else { 0.0 };
            m_eq[(i, j)] = scale[i] * mij * scale[j];
        }
    }
    // Positive-definite solve; when beta = 0 the gram can be exactly
    // rank-deficient (e.g. duplicated features from boundary-clamped
    // patches), in which case the minimum-norm solution is taken via a
    // truncated symmetric eigendecomposition.
    let solve: Box<dyn Fn(&nalgebra::DVector<f64>) -> nalgebra::DVector<f64>> =
        match m_eq.clone().cholesky() {
            Some(chol) => Box::new(move |rhs| chol.solve(rhs)),
            None => {
                let eig = nalgebra::SymmetricEigen::new(m_eq.clone());
                let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
                if max_eig <= 0.0 {
                    return Err(CoreError::SingularRidge { point: None });
                }
                let tol = h_dim as f64 * f64::EPSILON * max_eig;
                let inv: nalgebra::DVector<f64> = eig
                    .eigenvalues
                    .map(|l| if l > tol { 1.0 / l } else { 0.0 });
                let q = eig.eigenvectors;
                Box::new(move |rhs| {
                    let mut proj = q.transpose() * rhs;
                    proj.component_mul_assign(&inv);
                    &q * proj
                })
            }
        };

    let y_dim = targets.nrows();
    let mut w_out = Array2::zeros((y_dim, h_dim));
    for row in 0..y_dim {
        let rhs = nalgebra::DVector::from_fn(h_dim, |i, _| scale[i] * cross[[row, i]]);
        let mut z = solve(&rhs);
        // compensated iterative refinement against the equilibrated system
        for _ in 0..2 {
            let mut resid = nalgebra::DVector::zeros(h_dim);
            for i in 0..h_dim {
                let mut s = 0.0;
                let mut c = 0.0;
                for j in 0..h_dim {
                    neumaier_add(&mut s, &mut c, -m_eq[(i, j)] * z[j]);
                }
                neumaier_add(&mut s, &mut c, rhs[i]);
                resid[i] = s + c;
            }
            let corr = solve(&resid);
            z += corr;
        }
        for i in 0..h_dim {
            w_out[[row, i]] = scale[i] * z[i];
        }
    }
    Ok((Readout { w_out }, rms))
}

/// A column-pivoted QR factorization of a column-equilibrated block of
/// features, with its numerical rank. Pivots whose remaining norm has fallen
/// below `tol` carry only rounding noise relative to the columns already
/// factored; including them would amplify that noise through the
/// back-substitution, so they are truncated and their weights set to zero.
struct BlockQr {
    qr: nalgebra::ColPivQR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    r: nalgebra::DMatrix<f64>,
    rank: usize,
}

impl BlockQr {
    fn factor(a: nalgebra::DMatrix<f64>, tol: f64) -> Self {
        let min_dim = a.nrows().min(a.ncols());
        let qr = a.col_piv_qr();
        let r = qr.r();
        let mut rank = 0;
        while rank < min_dim && r[(rank, rank)].abs() > tol {
            rank += 1;
        }
        BlockQr { qr, r, rank }
    }

    /// Basic least-squares solution for `A z ~ y`: back-substitution over the
    /// leading `rank` pivots, zero weight on the truncated columns.
    fn solve(&self, y: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        let mut qty = y.clone();
        self.qr.q_tr_mul(&mut qty);
        let mut z = nalgebra::DVector::<f64>::zeros(self.r.ncols());
        for i in (0..self.rank).rev() {
            let mut s = qty[i];
            for j in i + 1..self.rank {
                s -= self.r[(i, j)] * z[j];
            }
            z[i] = s / self.r[(i, i)];
        }
        self.qr.p().inv_permute_rows(&mut z);
        z
    }
}

/// Unregularized least squares W H ~ Y solved row-wise through column-pivoted
/// QR factorizations of H^T. The normal-equations route squares the
/// conditioning of H and scrambles near-exact readouts, so the beta = 0 path
/// stays on the backward-stable factorization. Columns are equilibrated to
/// unit norm before factoring. With an anchored block, the joint solution is
/// computed by block elimination: the anchored columns are factored first,
/// projected out of the remaining columns and the targets, and the remainder
/// is solved on the projected system — so whenever the system is
/// rank-deficient (e.g. duplicated features from boundary-clamped patches, or
/// a target already captured by the anchored block) the redundant unanchored
/// columns receive zero weight instead of stealing the anchored block's.
fn train_lstsq_qr(
    features: &ArrayView2<f64>,
    targets: &ArrayView2<f64>,
    anchor_cols: Option<std::ops::Range<usize>>,
) -> Result<(Readout, Vec<f64>)> {
    let h_dim = features.nrows();
    let t_len = features.ncols();
    let rms: Vec<f64> = (0..h_dim)
        .map(|i| {
            let s: f64 = features.row(i).iter().map(|v| v * v).sum();
            (s / t_len as f64).sqrt()
        })
        .collect();
    if rms.iter().all(|&r| r == 0.0) {
        return Err(CoreError::SingularRidge { point: None });
    }
    let scale: Vec<f64> = rms
        .iter()
        .map(|&r| {
            if r == 0.0 {
                1.0
            } else {
                1.0 / (r * (t_len as f64).sqrt())
            }
        })
        .collect();
    // Unit-norm columns: truncation threshold relative to the best column.
    let tol = f64::EPSILON.sqrt();

    let anchor = anchor_cols
        .filter(|a| !a.is_empty() && a.len() < h_dim && a.end <= h_dim);
    let y_dim = targets.nrows();
    let mut w_out = Array2::zeros((y_dim, h_dim));

    let Some(anchor) = anchor else {
        let a =
            nalgebra::DMatrix::<f64>::from_fn(t_len, h_dim, |t, i| features[[i, t]] * scale[i]);
        let block = BlockQr::factor(a, tol);
        if block.rank == 0 {
            return Err(CoreError::SingularRidge { point: None });
        }
        for row in 0..y_dim {
            let y = nalgebra::DVector::from_fn(t_len, |t, _| targets[[row, t]]);
            let z = block.solve(&y);
            for i in 0..h_dim {
                w_out[[row, i]] = z[i] * scale[i];
            }
        }
        return Ok((Readout { w_out }, rms));
    };

    let k_idx: Vec<usize> = anchor.clone().collect();
    let r_idx: Vec<usize> = (0..h_dim).filter(|i| !anchor.contains(i)).collect();
    let a_k = nalgebra::DMatrix::<f64>::from_fn(t_len, k_idx.len(), |t, c| {
        features[[k_idx[c], t]] * scale[k_idx[c]]
    });
    let a_r = nalgebra::DMatrix::<f64>::from_fn(t_len, r_idx.len(), |t, c| {
        features[[r_idx[c], t]] * scale[r_idx[c]]
    });
    let qr_k = BlockQr::factor(a_k, tol);
    if qr_k.rank == 0 {
        // dead anchored block: fall back to the plain factorization
        return train_lstsq_qr(features, targets, None);
    }
    let q1 = qr_k.qr.q().columns(0, qr_k.rank).into_owned();
    let a_rp = &a_r - &q1 * (q1.transpose() * &a_r);
    let qr_r = BlockQr::factor(a_rp, tol);

    for row in 0..y_dim {
        let y = nalgebra::DVector::from_fn(t_len, |t, _| targets[[row, t]]);
        let y_p = &y - &q1 * (q1.transpose() * &y);
        let z_r = qr_r.solve(&y_p);
        let z_k = qr_k.solve(&(&y - &a_r * &z_r));
        for (c, &i) in r_idx.iter().enumerate() {
            w_out[[row, i]] = z_r[c] * scale[i];
        }
        for (c, &i) in k_idx.iter().enumerate() {
            w_out[[row, i]] = z_k[c] * scale[i];
        }
    }
    Ok((Readout { w_out }, rms))
}

/// Ridge-regression readout: argmin ||W H - Y||^2 + beta ||W||^2.
pub fn train_readout(
    features: &ArrayView2<f64>,
    targets: &ArrayView2<f64>,
    beta: f64,
) -> Result<Readout> {
    train_readout_with_stats(features, targets, beta).map(|(r, _)| r)
}
