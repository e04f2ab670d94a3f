//! Invertible transform pair `T = D±·(P1 ⊗ P2)` and its fitting tools.
//!
//! Activations are mapped as `X ← X·T` and weights as `W' = W·D±·P⁻ᵀ`, so
//! `X·Wᵀ = (X·T)·W'ᵀ` in exact arithmetic. The Kronecker product is never
//! materialized: a row `x` reshaped to `d1 × d2` as `Xr` satisfies
//! `x·(A ⊗ B) = vec(Aᵀ·Xr·B)`.

use crate::error::{Error, Result};
use crate::linalg::{self, column_norm_ratio, invert};
use crate::matrix::{matmul, DenseMatrix, PackedBinaryMatrix};

/// Largest accepted column-norm ratio of a Kronecker factor.
pub const MAX_CONDITION: f64 = 1e8;
/// Largest accepted `max |P·P⁻¹ − I|` entry of the Kronecker product.
pub const INVERSE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformPair {
    sigma: Vec<i8>,
    p1: DenseMatrix,
    p2: DenseMatrix,
    p1_inv: DenseMatrix,
    p2_inv: DenseMatrix,
}

/// Most balanced factorization `d = d1·d2` with `d1` the largest divisor ≤ √d.
pub fn balanced_factors(d: usize) -> (usize, usize) {
    let mut d1 = 1;
    let mut k = 1;
    while k * k <= d {
        if d % k == 0 {
            d1 = k;
        }
        k += 1;
    }
    (d1, d / d1.max(1))
}

impl TransformPair {
    pub fn new(sigma: Vec<i8>, p1: DenseMatrix, p2: DenseMatrix) -> Result<Self> {
        if p1.rows() != p1.cols() || p2.rows() != p2.cols() {
            return Err(Error::Shape("Kronecker factors must be square".into()));
        }
        let d = p1.rows() * p2.rows();
        if sigma.len() != d {
            return Err(Error::Shape(format!("sign vector length {} != {d}", sigma.len())));
        }
        if let Some(bad) = sigma.iter().find(|s| s.abs() != 1) {
            return Err(Error::Argument(format!("sign entry {bad} is not ±1")));
        }
        for (name, f) in [("P1", &p1), ("P2", &p2)] {
            let cond = column_norm_ratio(f);
            if !(cond <= MAX_CONDITION) {
                return Err(Error::Singular(format!("{name} condition estimate {cond:e} exceeds {MAX_CONDITION:e}")));
            }
        }
        let p1_inv = invert(&p1)?;
        let p2_inv = invert(&p2)?;
        let t = Self {
            sigma,
            p1,
            p2,
            p1_inv,
            p2_inv,
        };
        let residual = t.kronecker_inverse_residual()?;
        if !(residual <= INVERSE_TOLERANCE) {
            return Err(Error::Singular(format!(
                "Kronecker inverse residual {residual:e} exceeds {INVERSE_TOLERANCE:e}"
            )));
        }
        Ok(t)
    }

    pub fn identity(d1: usize, d2: usize) -> Self {
        Self::new(vec![1; d1 * d2], DenseMatrix::identity(d1), DenseMatrix::identity(d2))
            .expect("identity is invertible")
    }

    pub fn with_sigma(&self, sigma: Vec<i8>) -> Result<Self> {
        if sigma.len() != self.sigma.len() || sigma.iter().any(|s| s.abs() != 1) {
            return Err(Error::Argument("sign vector must keep length and be ±1".into()));
        }
        Ok(Self { sigma, ..self.clone() })
    }

    pub fn d(&self) -> usize {
        self.sigma.len()
    }

    pub fn d1(&self) -> usize {
        self.p1.rows()
    }

    pub fn d2(&self) -> usize {
        self.p2.rows()
    }

    pub fn sigma(&self) -> &[i8] {
        &self.sigma
    }

    pub fn p1(&self) -> &DenseMatrix {
        &self.p1
    }

    pub fn p2(&self) -> &DenseMatrix {
        &self.p2
    }

    pub fn p1_inv(&self) -> &DenseMatrix {
        &self.p1_inv
    }

    pub fn p2_inv(&self) -> &DenseMatrix {
        &self.p2_inv
    }

    /// `max |(P1⊗P2)·(P1⁻¹⊗P2⁻¹) − I|`, via `(A⊗B)(C⊗D) = AC⊗BD`.
    pub fn kronecker_inverse_residual(&self) -> Result<f64> {
        let a = linalg::mul(&self.p1, &self.p1_inv)?;
        let b = linalg::mul(&self.p2, &self.p2_inv)?;
        let mut worst = 0.0f64;
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                let aij = a.get(i, j);
                for k in 0..b.rows() {
                    for l in 0..b.cols() {
                        let target = if i == j && k == l { 1.0 } else { 0.0 };
                        worst = worst.max((aij * b.get(k, l) - target).abs());
                    }
                }
            }
        }
        Ok(worst)
    }

    /// Dense `D±·(P1⊗P2)`, for oracles and small `d` only.
    pub fn to_dense(&self) -> DenseMatrix {
        let d2 = self.d2();
        let d = self.d();
        DenseMatrix::from_fn(d, d, |r, c| {
            f64::from(self.sigma[r]) * self.p1.get(r / d2, c / d2) * self.p2.get(r % d2, c % d2)
        })
        .expect("finite factors")
    }
}

/// `y = x·(A⊗B)` for a row `x` of length `a.rows()·b.rows()`.
fn kron_row(x: &[f64], a: &DenseMatrix, b: &DenseMatrix, out: &mut [f64]) {
    let (d1, d2) = (a.rows(), b.rows());
    // tmp = Aᵀ·Xr   (d1 × d2)
    let mut tmp = vec![0.0; d1 * d2];
    for c in 0..d1 {
        for e in 0..d2 {
            let mut acc = 0.0;
            for r in 0..d1 {
                acc += a.get(r, c) * x[r * d2 + e];
            }
            tmp[c * d2 + e] = acc;
        }
    }
    // out = tmp·B
    for c in 0..d1 {
        for e in 0..d2 {
            let mut acc = 0.0;
            for k in 0..d2 {
                acc += tmp[c * d2 + k] * b.get(k, e);
            }
            out[c * d2 + e] = acc;
        }
    }
}

fn map_rows(x: &DenseMatrix, t: &TransformPair, a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if x.cols() != t.d() {
        return Err(Error::Shape(format!(
            "input width {} != transform size {} = {} x {}",
            x.cols(),
            t.d(),
            t.d1(),
            t.d2()
        )));
    }
    let d = t.d();
    let mut out = vec![0.0; x.rows() * d];
    let mut flipped = vec![0.0; d];
    for (row, dst) in x.row_iter().zip(out.chunks_exact_mut(d.max(1))) {
        for ((f, &v), &s) in flipped.iter_mut().zip(row).zip(&t.sigma) {
            *f = if s < 0 { -v } else { v };
        }
        kron_row(&flipped, a, b, dst);
    }
    DenseMatrix::new(x.rows(), d, out)
}

/// `X·D±·(P1⊗P2)`.
pub fn apply_transform(x: &DenseMatrix, t: &TransformPair) -> Result<DenseMatrix> {
    map_rows(x, t, &t.p1, &t.p2)
}

/// `W' = W·D±·(P1⁻¹⊗P2⁻¹)ᵀ`, the row layout of `T⁻¹·Wᵀ`.
pub fn inverse_transform_weight(w: &DenseMatrix, t: &TransformPair) -> Result<DenseMatrix> {
    map_rows(w, t, &t.p1_inv.transpose(), &t.p2_inv.transpose())
}

/// Maps transformed-space weights back: `W = W'·(P1⊗P2)ᵀ·D±`.
pub fn forward_transform_weight(w_prime: &DenseMatrix, t: &TransformPair) -> Result<DenseMatrix> {
    if w_prime.cols() != t.d() {
        return Err(Error::Shape("weight width != transform size".into()));
    }
    let d = t.d();
    let (p1t, p2t) = (t.p1.transpose(), t.p2.transpose());
    let mut out = vec![0.0; w_prime.rows() * d];
    for (row, dst) in w_prime.row_iter().zip(out.chunks_exact_mut(d.max(1))) {
        kron_row(row, &p1t, &p2t, dst);
        for (v, &s) in dst.iter_mut().zip(&t.sigma) {
            if s < 0 {
                *v = -*v;
            }
        }
    }
    DenseMatrix::new(w_prime.rows(), d, out)
}

/// Largest entry-wise deviation between `X·Wᵀ` and `(X·T)·W'ᵀ`, relative to
/// the largest entry of `X·Wᵀ`.
pub fn equivalence_check(x: &DenseMatrix, w: &DenseMatrix, t: &TransformPair) -> Result<f64> {
    let reference = matmul(x, w)?;
    let transformed = matmul(&apply_transform(x, t)?, &inverse_transform_weight(w, t)?)?;
    let scale = reference.max_abs();
    let worst = reference
        .data()
        .iter()
        .zip(transformed.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if worst == 0.0 {
        return Ok(0.0);
    }
    Ok(worst / scale.max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxLossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub top_k: usize,
}

impl Default for AuxLossConfig {
    fn default() -> Self {
        Self {
            lambda1: 1e-2,
            lambda2: 1e-1,
            top_k: 16,
        }
    }
}

/// `Tr(G) − Σ top-K λ(G)` with `G = M·Mᵀ / v` over the rows of `m`.
///
/// `M·Mᵀ` and `Mᵀ·M` share their nonzero spectrum, so the smaller Gram
/// matrix is diagonalized. Trailing eigenvalues within the Jacobi tolerance
/// of zero count as zero, which keeps rank-deficient inputs at exactly 0.
pub fn gram_similarity_loss(m: &PackedBinaryMatrix, k: usize) -> Result<f64> {
    let (rows, v) = (m.rows(), m.cols());
    if k == 0 || k > rows {
        return Err(Error::Argument(format!("top-K {k} not in 1..={rows}")));
    }
    if v == 0 {
        return Ok(0.0);
    }
    let inv_v = 1.0 / v as f64;
    let gram = if rows <= v {
        DenseMatrix::from_fn(rows, rows, |a, b| {
            let h = crate::matrix::hamming_unchecked(m.row_words(a), m.row_words(b));
            (v as f64 - 2.0 * f64::from(h)) * inv_v
        })?
    } else {
        // column co-occurrence counts: (Mᵀ·M)[s,t] = Σ_rows m_s·m_t
        let mut agree = vec![0i64; v * v];
        for r in 0..rows {
            for s in 0..v {
                let ms = m.bit(r, s);
                for t in s..v {
                    agree[s * v + t] += if ms == m.bit(r, t) { 1 } else { -1 };
                }
            }
        }
        DenseMatrix::from_fn(v, v, |s, t| {
            let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
            agree[lo * v + hi] as f64 * inv_v
        })?
    };
    let eig = linalg::symmetric_eigenvalues(&gram)?;
    let trace = rows as f64;
    let tail: f64 = eig.iter().skip(k).map(|&l| l.max(0.0)).sum();
    let floor = linalg::JACOBI_TOLERANCE * trace.max(1.0);
    Ok(if tail <= floor { 0.0 } else { tail })
}

/// Square of the global sign mean.
pub fn balance_loss(m: &PackedBinaryMatrix) -> f64 {
    let total = m.rows() * m.cols();
    if total == 0 {
        return 0.0;
    }
    let plus = m.count_ones() as f64;
    let mean = (2.0 * plus - total as f64) / total as f64;
    mean * mean
}

/// Output of a quantized block: its forward result and the binary vectors
/// the auxiliary losses regularize.
#[derive(Debug, Clone)]
pub struct QuantizedForward {
    pub output: DenseMatrix,
    pub binary_vectors: Option<PackedBinaryMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveBreakdown {
    pub mismatch: f64,
    pub similarity: f64,
    pub balance: f64,
    pub total: f64,
}

/// `‖F(X) − F̂(X; T)‖²_F + λ₁·L_sim + λ₂·L_bal`.
pub fn block_objective<F, G>(
    original: F,
    quantized: G,
    x: &DenseMatrix,
    t: &TransformPair,
    aux: &AuxLossConfig,
) -> Result<ObjectiveBreakdown>
where
    F: Fn(&DenseMatrix) -> Result<DenseMatrix>,
    G: Fn(&DenseMatrix, &TransformPair) -> Result<QuantizedForward>,
{
    if aux.lambda1 < 0.0 || aux.lambda2 < 0.0 {
        return Err(Error::Argument("aux loss weights must be non-negative".into()));
    }
    let reference = original(x)?;
    let q = quantized(x, t)?;
    if reference.shape() != q.output.shape() {
        return Err(Error::Shape("original and quantized outputs differ in shape".into()));
    }
    let mismatch: f64 = reference
        .data()
        .iter()
        .zip(q.output.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let (similarity, balance) = match &q.binary_vectors {
        Some(m) if m.rows() > 0 => {
            let k = aux.top_k.clamp(1, m.rows());
            let sim = if aux.lambda1 > 0.0 { gram_similarity_loss(m, k)? } else { 0.0 };
            (sim, balance_loss(m))
        }
        _ => (0.0, 0.0),
    };
    Ok(ObjectiveBreakdown {
        mismatch,
        similarity,
        balance,
        total: mismatch + aux.lambda1 * similarity + aux.lambda2 * balance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignFlipResult {
    pub sigma: Vec<i8>,
    /// Objective before any flip, then after each accepted flip.
    pub trace: Vec<f64>,
    pub sweeps: usize,
}

/// Greedy coordinate descent over signs: flip `σᵢ` when that strictly lowers
/// the objective, sweeping in index order until a sweep changes nothing.
pub fn optimize_sign_flips<F>(mut objective: F, sigma0: &[i8], max_sweeps: usize) -> Result<SignFlipResult>
where
    F: FnMut(&[i8]) -> Result<f64>,
{
    if max_sweeps == 0 {
        return Err(Error::Argument("max_sweeps must be at least 1".into()));
    }
    let mut sigma = sigma0.to_vec();
    let mut current = objective(&sigma)?;
    let mut trace = vec![current];
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut flipped = false;
        for i in 0..sigma.len() {
            sigma[i] = -sigma[i];
            let candidate = objective(&sigma)?;
            if candidate < current {
                current = candidate;
                trace.push(current);
                flipped = true;
            } else {
                sigma[i] = -sigma[i];
            }
        }
        if !flipped {
            break;
        }
    }
    Ok(SignFlipResult { sigma, trace, sweeps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Completed,
    /// Ten step halvings all produced a singular factor; the best transform so far is returned.
    Singular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PFitResult {
    pub transform: TransformPair,
    /// Objective at the start and after each iteration.
    pub trace: Vec<f64>,
    pub accepted_steps: usize,
    pub termination: Termination,
}

const MAX_HALVINGS: usize = 10;

fn perturbed(t: &TransformPair, param: usize, delta: f64) -> Result<TransformPair> {
    let n1 = t.d1() * t.d1();
    let (mut p1, mut p2) = (t.p1.data().to_vec(), t.p2.data().to_vec());
    if param < n1 {
        p1[param] += delta;
    } else {
        p2[param - n1] += delta;
    }
    TransformPair::new(
        t.sigma.clone(),
        DenseMatrix::new(t.d1(), t.d1(), p1)?,
        DenseMatrix::new(t.d2(), t.d2(), p2)?,
    )
}

/// Central-difference gradient over the entries of `P1` then `P2`.
pub fn central_difference_gradient<F>(objective: &F, t: &TransformPair, eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&TransformPair) -> Result<f64>,
{
    let params = t.d1() * t.d1() + t.d2() * t.d2();
    (0..params)
        .map(|p| {
            let up = objective(&perturbed(t, p, eps)?)?;
            let down = objective(&perturbed(t, p, -eps)?)?;
            Ok((up - down) / (2.0 * eps))
        })
        .collect()
}

fn stepped(t: &TransformPair, grad: &[f64], lr: f64) -> Result<TransformPair> {
    let n1 = t.d1() * t.d1();
    let p1: Vec<f64> = t.p1.data().iter().zip(&grad[..n1]).map(|(p, g)| p - lr * g).collect();
    let p2: Vec<f64> = t.p2.data().iter().zip(&grad[n1..]).map(|(p, g)| p - lr * g).collect();
    TransformPair::new(
        t.sigma.clone(),
        DenseMatrix::new(t.d1(), t.d1(), p1).map_err(|_| Error::Singular("non-finite step".into()))?,
        DenseMatrix::new(t.d2(), t.d2(), p2).map_err(|_| Error::Singular("non-finite step".into()))?,
    )
}

/// Finite-difference gradient descent on the Kronecker factors.
///
/// A step that raises the objective or produces an ill-conditioned factor is
/// retried with half the rate, up to ten times; if nothing is acceptable the
/// iteration leaves the transform unchanged. The objective never increases.
pub fn optimize_p<F>(objective: F, t0: &TransformPair, lr: f64, iters: usize, fd_eps: f64) -> Result<PFitResult>
where
    F: Fn(&TransformPair) -> Result<f64>,
{
    if !(lr > 0.0) || !(fd_eps > 0.0) {
        return Err(Error::Argument("learning rate and finite-difference step must be positive".into()));
    }
    let mut current = t0.clone();
    let mut value = objective(&current)?;
    let mut trace = vec![value];
    let mut accepted_steps = 0;
    for _ in 0..iters {
        let grad = match central_difference_gradient(&objective, &current, fd_eps) {
            Ok(g) => g,
            // a probe left the well-conditioned region; nothing to learn from here
            Err(Error::Singular(_)) => {
                trace.push(value);
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut rate = lr;
        let mut accepted = false;
        let mut all_singular = true;
        for _ in 0..=MAX_HALVINGS {
            match stepped(&current, &grad, rate) {
                Ok(candidate) => {
                    all_singular = false;
                    let v = objective(&candidate)?;
                    if v <= value {
                        current = candidate;
                        value = v;
                        accepted = true;
                        break;
                    }
                }
                Err(Error::Singular(_)) => {}
                Err(e) => return Err(e),
            }
            rate *= 0.5;
        }
        trace.push(value);
        if accepted {
            accepted_steps += 1;
        } else if all_singular {
            return Ok(PFitResult {
                transform: current,
                trace,
                accepted_steps,
                termination: Termination::Singular,
            });
        }
    }
    Ok(PFitResult {
        transform: current,
        trace,
        accepted_steps,
        termination: Termination::Completed,
    })
}
