//! Row-wise binarization with scale and bias, alternating refinement (ARB),
//! salient-weight selection with residual binarization, and split-point
//! grouping of non-salient magnitudes.

use crate::error::{Error, Result};
use crate::matrix::{BoolMatrix, DenseMatrix, PackedBinaryMatrix};

/// `sign` with `sign(0) = +1`, as a bit (true ↔ +1).
#[inline]
pub(crate) fn sign_bit(x: f64) -> bool {
    x >= 0.0
}

#[inline]
fn as_sign(bit: bool) -> f64 {
    if bit {
        1.0
    } else {
        -1.0
    }
}

/// Binary signs plus per-row scale and bias: `Ŵ[i,j] = alpha[i]·B[i,j] + mu[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarizedRowSet {
    pub signs: PackedBinaryMatrix,
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    /// Number of times a refined scale came out negative and was clamped to 0.
    pub alpha_clamps: usize,
}

impl BinarizedRowSet {
    pub fn rows(&self) -> usize {
        self.signs.rows()
    }

    pub fn cols(&self) -> usize {
        self.signs.cols()
    }

    #[inline]
    pub fn dequantize_at(&self, i: usize, j: usize) -> f64 {
        self.alpha[i] * self.signs.sign(i, j) + self.mu[i]
    }

    pub fn dequantize(&self) -> DenseMatrix {
        let (n, m) = (self.rows(), self.cols());
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                out.push(self.dequantize_at(i, j));
            }
        }
        DenseMatrix::from_vec_unchecked(n, m, out)
    }

    /// `‖W − αB − μ‖²`, optionally restricted to `mask`-true positions.
    pub fn objective(&self, w: &DenseMatrix, mask: Option<&BoolMatrix>) -> f64 {
        let mut total = 0.0;
        for i in 0..w.rows() {
            for j in 0..w.cols() {
                if mask.is_none_or(|m| m.get(i, j)) {
                    total += (w.get(i, j) - self.dequantize_at(i, j)).powi(2);
                }
            }
        }
        total
    }
}

/// Second-order binarization of the residual at salient positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SalientOverlay {
    pub mask: BoolMatrix,
    /// One bit per salient position, in row-major order of `mask`.
    pub signs: PackedBinaryMatrix,
    pub alpha2: Vec<f64>,
}

impl SalientOverlay {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            mask: BoolMatrix::filled(rows, cols, false),
            signs: PackedBinaryMatrix::negative(1, 0),
            alpha2: vec![0.0; rows],
        }
    }

    pub fn count(&self) -> usize {
        self.signs.cols()
    }

    /// `(row, col, alpha2[row]·sign)` for every salient position.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let cols = self.mask.cols();
        self.mask
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .enumerate()
            .map(move |(k, (pos, _))| {
                let (i, j) = (pos / cols, pos % cols);
                (i, j, self.alpha2[i] * self.signs.sign(0, k))
            })
    }

    pub fn add_to(&self, target: &mut [f64]) {
        let cols = self.mask.cols();
        for (i, j, v) in self.entries() {
            target[i * cols + j] += v;
        }
    }
}

/// Magnitude thresholds that split non-salient weights into groups.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitGrouping {
    pub thresholds: Vec<f64>,
    /// Group index for each value passed to [`search_split_points`], in input order.
    pub group_of: Vec<u8>,
    /// Total squared error of group-wise binarization under these thresholds.
    pub error: f64,
    /// Set when fewer groups than requested were possible.
    pub reduced: bool,
}

impl SplitGrouping {
    pub fn group_count(&self) -> usize {
        self.thresholds.len() + 1
    }
}

/// Subtracts each row's mean.
pub fn row_center(w: &DenseMatrix) -> (DenseMatrix, Vec<f64>) {
    let m = w.cols();
    let mut mu = Vec::with_capacity(w.rows());
    let mut out = Vec::with_capacity(w.rows() * m);
    for row in w.row_iter() {
        let mean = if m == 0 {
            0.0
        } else {
            row.iter().sum::<f64>() / m as f64
        };
        mu.push(mean);
        out.extend(row.iter().map(|x| x - mean));
    }
    (DenseMatrix::from_vec_unchecked(w.rows(), m, out), mu)
}

/// `alpha[i] = mean |W̃[i,·]|`, `B = sign(W̃)`, `mu = 0`.
pub fn binarize_rowwise(w_tilde: &DenseMatrix) -> BinarizedRowSet {
    binarize_masked(w_tilde, None)
}

fn binarize_masked(w: &DenseMatrix, keep: Option<&BoolMatrix>) -> BinarizedRowSet {
    let (n, m) = w.shape();
    let alpha = (0..n)
        .map(|i| {
            let (sum, count) = (0..m)
                .filter(|&j| keep.is_none_or(|k| k.get(i, j)))
                .fold((0.0, 0usize), |(s, c), j| (s + w.get(i, j).abs(), c + 1));
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect();
    BinarizedRowSet {
        signs: PackedBinaryMatrix::from_fn(n, m, |i, j| sign_bit(w.get(i, j))),
        alpha,
        mu: vec![0.0; n],
        alpha_clamps: 0,
    }
}

/// ARB refinement over all positions. See [`arb_refine_traced`].
pub fn arb_refine(w: &DenseMatrix, state: &BinarizedRowSet, iters: u64) -> Result<BinarizedRowSet> {
    arb_refine_traced(w, state, iters, None).map(|(s, _)| s)
}

/// Alternating refinement of bias, scale and signs.
///
/// Per iteration and row: `μ ← mean(W − αB)` (equal to `μ + mean(R)`),
/// `α ← mean(B·(W − μ))` clamped at zero, `B ← sign(W − μ)`. When `keep` is
/// given, only `keep`-true positions enter the means and the objective;
/// signs are still refreshed everywhere.
///
/// Returns the refined state and the objective trace `‖W − αB − μ‖²`, with
/// `trace[0]` for the input state and `trace[k]` after iteration `k`.
pub fn arb_refine_traced(
    w: &DenseMatrix,
    state: &BinarizedRowSet,
    iters: u64,
    keep: Option<&BoolMatrix>,
) -> Result<(BinarizedRowSet, Vec<f64>)> {
    let iters = u32::try_from(iters)
        .map_err(|_| Error::Argument(format!("ARB iteration count {iters} exceeds u32 range")))?;
    let (n, m) = w.shape();
    if state.rows() != n || state.cols() != m || state.alpha.len() != n || state.mu.len() != n {
        return Err(Error::Shape("ARB state does not match weight shape".into()));
    }
    if let Some(k) = keep {
        if k.shape() != (n, m) {
            return Err(Error::Shape("ARB mask does not match weight shape".into()));
        }
    }

    let mut signs: Vec<bool> = (0..n * m).map(|p| state.signs.bit(p / m.max(1), p % m.max(1))).collect();
    let mut alpha = state.alpha.clone();
    let mut mu = state.mu.clone();
    let mut clamps = state.alpha_clamps;
    let kept = |i: usize, j: usize| keep.is_none_or(|k| k.get(i, j));

    let row_objective = |i: usize, signs: &[bool], alpha: f64, mu: f64| -> f64 {
        let row = w.row(i);
        let mut total = 0.0;
        for j in 0..m {
            if kept(i, j) {
                let r = row[j] - alpha * as_sign(signs[j]) - mu;
                total += r * r;
            }
        }
        total
    };

    let mut row_err: Vec<f64> = (0..n)
        .map(|i| row_objective(i, &signs[i * m..(i + 1) * m], alpha[i], mu[i]))
        .collect();
    let mut trace = vec![row_err.iter().sum()];
    let mut candidate = vec![false; m];
    for _ in 0..iters {
        for i in 0..n {
            let row = w.row(i);
            let count = (0..m).filter(|&j| kept(i, j)).count();
            if count == 0 {
                for j in 0..m {
                    signs[i * m + j] = sign_bit(row[j] - mu[i]);
                }
                continue;
            }
            let current = &signs[i * m..(i + 1) * m];
            let inv = 1.0 / count as f64;
            let bias: f64 = (0..m)
                .filter(|&j| kept(i, j))
                .map(|j| row[j] - alpha[i] * as_sign(current[j]))
                .sum::<f64>()
                * inv;
            let raw_scale: f64 = (0..m)
                .filter(|&j| kept(i, j))
                .map(|j| as_sign(current[j]) * (row[j] - bias))
                .sum::<f64>()
                * inv;
            let scale = raw_scale.max(0.0);
            for (j, c) in candidate.iter_mut().enumerate() {
                *c = sign_bit(row[j] - bias);
            }
            let err = row_objective(i, &candidate, scale, bias);
            // the updates are exact minimizers, so a rise here is rounding noise
            if err <= row_err[i] {
                if raw_scale < 0.0 {
                    clamps += 1;
                }
                mu[i] = bias;
                alpha[i] = scale;
                signs[i * m..(i + 1) * m].copy_from_slice(&candidate);
                row_err[i] = err;
            }
        }
        trace.push(row_err.iter().sum());
    }

    let refined = BinarizedRowSet {
        signs: PackedBinaryMatrix::from_fn(n, m, |i, j| signs[i * m + j]),
        alpha,
        mu,
        alpha_clamps: clamps,
    };
    Ok((refined, trace))
}

/// Binarizes `r` at `mask`-true positions: per row `alpha2 = mean |R|`,
/// `B2 = sign(R)`. Rows without salient positions get `alpha2 = 0`.
pub fn residual_binarize(r: &DenseMatrix, mask: &BoolMatrix) -> Result<SalientOverlay> {
    if r.shape() != mask.shape() {
        return Err(Error::Shape("residual and mask shapes differ".into()));
    }
    let (n, m) = r.shape();
    let mut alpha2 = vec![0.0; n];
    let mut bits = Vec::with_capacity(mask.count_true());
    for i in 0..n {
        let mut sum = 0.0;
        let mut count = 0usize;
        for j in 0..m {
            if mask.get(i, j) {
                let x = r.get(i, j);
                sum += x.abs();
                count += 1;
                bits.push(sign_bit(x));
            }
        }
        if count > 0 {
            alpha2[i] = sum / count as f64;
        }
    }
    Ok(SalientOverlay {
        mask: mask.clone(),
        signs: PackedBinaryMatrix::from_fn(1, bits.len(), |_, k| bits[k]),
        alpha2,
    })
}

/// Marks the top `⌈fraction·m⌉` positions of each row by
/// `|W[i,j]|²·col_stats[j]`, breaking ties by lower column index.
pub fn select_salient(w: &DenseMatrix, col_stats: &[f64], fraction: f64) -> Result<BoolMatrix> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Argument(format!("salient fraction {fraction} outside [0, 1]")));
    }
    let (n, m) = w.shape();
    if col_stats.len() != m {
        return Err(Error::Shape(format!(
            "column statistics length {} != {m}",
            col_stats.len()
        )));
    }
    let per_row = ((fraction * m as f64).ceil() as usize).min(m);
    let mut mask = vec![false; n * m];
    let mut order: Vec<usize> = Vec::with_capacity(m);
    for i in 0..n {
        let row = w.row(i);
        order.clear();
        order.extend(0..m);
        let score = |j: usize| row[j] * row[j] * col_stats[j];
        // stable sort keeps lower column first among equal scores
        order.sort_by(|&a, &b| score(b).total_cmp(&score(a)));
        for &j in &order[..per_row] {
            mask[i * m + j] = true;
        }
    }
    BoolMatrix::new(n, m, mask)
}

/// Squared error of binarizing sorted magnitudes `[lo, hi)` with one scale.
fn group_error(prefix: &[f64], prefix_sq: &[f64], lo: usize, hi: usize) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let s = prefix[hi] - prefix[lo];
    let sq = prefix_sq[hi] - prefix_sq[lo];
    (sq - s * s / (hi - lo) as f64).max(0.0)
}

/// Grid search for split thresholds over magnitudes.
///
/// Candidates are the magnitudes at `grid` evenly spaced percentiles
/// `k/(grid+1)`, excluding the minimum (which would leave an empty group).
/// Each candidate set of `n_points` strictly increasing thresholds is scored
/// by the total squared error of binarizing every group with its own
/// `α = mean|·|`; the lexicographically smallest arg-min wins. A value `x`
/// falls in group `#{t : t ≤ x}`.
pub fn search_split_points(values: &[f64], n_points: usize, grid: usize) -> Result<SplitGrouping> {
    if !(1..=3).contains(&n_points) {
        return Err(Error::Argument(format!("split points {n_points} not in 1..=3")));
    }
    if grid < 2 {
        return Err(Error::Argument(format!("grid {grid} < 2")));
    }
    if let Some(bad) = values.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::Argument(format!("magnitude {bad} is not a finite non-negative value")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let len = sorted.len();

    let mut prefix = vec![0.0; len + 1];
    let mut prefix_sq = vec![0.0; len + 1];
    for (k, x) in sorted.iter().enumerate() {
        prefix[k + 1] = prefix[k] + x;
        prefix_sq[k + 1] = prefix_sq[k] + x * x;
    }

    let mut candidates: Vec<f64> = Vec::new();
    if len > 0 {
        let min = sorted[0];
        for k in 1..=grid {
            let idx = (k * len / (grid + 1)).min(len - 1);
            let t = sorted[idx];
            if t > min && candidates.last() != Some(&t) {
                candidates.push(t);
            }
        }
    }
    let points = n_points.min(candidates.len());
    let reduced = points < n_points;
    let cut = |t: f64| sorted.partition_point(|&x| x < t);

    let score = |ts: &[f64]| -> f64 {
        let mut bounds = Vec::with_capacity(ts.len() + 2);
        bounds.push(0);
        bounds.extend(ts.iter().map(|&t| cut(t)));
        bounds.push(len);
        bounds
            .windows(2)
            .map(|b| group_error(&prefix, &prefix_sq, b[0], b[1]))
            .sum()
    };

    let mut best: (f64, Vec<f64>) = (score(&[]), Vec::new());
    if points > 0 {
        let mut first = true;
        let mut idx: Vec<usize> = (0..points).collect();
        loop {
            let ts: Vec<f64> = idx.iter().map(|&k| candidates[k]).collect();
            let e = score(&ts);
            if first || e < best.0 {
                best = (e, ts);
                first = false;
            }
            // next combination in lexicographic order
            let mut pos = points;
            while pos > 0 && idx[pos - 1] == candidates.len() - points + pos - 1 {
                pos -= 1;
            }
            if pos == 0 {
                break;
            }
            idx[pos - 1] += 1;
            for k in pos..points {
                idx[k] = idx[k - 1] + 1;
            }
        }
    }

    let thresholds = best.1;
    let group_of = values
        .iter()
        .map(|&x| thresholds.iter().filter(|&&t| t <= x).count() as u8)
        .collect();
    Ok(SplitGrouping {
        thresholds,
        group_of,
        error: best.0,
        reduced,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryQuantConfig {
    pub salient_fraction: f64,
    pub split_points: usize,
    pub split_grid: usize,
    pub arb_iters: u64,
    /// Per-column saliency weights; `None` means all ones.
    pub col_stats: Option<Vec<f64>>,
}

impl Default for BinaryQuantConfig {
    fn default() -> Self {
        Self {
            salient_fraction: 0.0,
            split_points: 0,
            split_grid: 64,
            arb_iters: 15,
            col_stats: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryQuantOutput {
    pub base: BinarizedRowSet,
    pub overlay: SalientOverlay,
    pub grouping: Option<SplitGrouping>,
    /// `‖W − Ŵ‖²` over non-salient positions.
    pub non_salient_error: f64,
    /// `‖W − Ŵ‖²` over salient positions, after the overlay.
    pub salient_error: f64,
    /// ARB objective trace over non-salient positions.
    pub arb_trace: Vec<f64>,
}

impl BinaryQuantOutput {
    pub fn total_error(&self) -> f64 {
        self.non_salient_error + self.salient_error
    }

    pub fn dequantize(&self) -> DenseMatrix {
        let mut out = self.base.dequantize().into_data();
        self.overlay.add_to(&mut out);
        DenseMatrix::from_vec_unchecked(self.base.rows(), self.base.cols(), out)
    }
}

/// Squared error at salient positions of `W − (base + overlay)`.
pub(crate) fn salient_error(w: &DenseMatrix, base_at: impl Fn(usize, usize) -> f64, overlay: &SalientOverlay) -> f64 {
    overlay
        .entries()
        .map(|(i, j, v)| (w.get(i, j) - base_at(i, j) - v).powi(2))
        .sum()
}

/// Residual overlay of `W − base` at the mask positions.
pub(crate) fn overlay_for(
    w: &DenseMatrix,
    base_at: impl Fn(usize, usize) -> f64,
    mask: &BoolMatrix,
) -> Result<SalientOverlay> {
    let residual = DenseMatrix::from_fn(w.rows(), w.cols(), |i, j| {
        if mask.get(i, j) {
            w.get(i, j) - base_at(i, j)
        } else {
            0.0
        }
    })?;
    residual_binarize(&residual, mask)
}

/// Center → select salient → split non-salient → binarize → ARB → residual
/// overlay on salient positions.
///
/// Salient positions are excluded from the scale/bias statistics and from
/// split grouping; they keep a first-order sign and get a residual
/// binarization `α₂B₂` on top.
pub fn quantize_layer_binary(w: &DenseMatrix, cfg: &BinaryQuantConfig) -> Result<BinaryQuantOutput> {
    let (n, m) = w.shape();
    if n == 0 || m == 0 {
        return Err(Error::Shape("cannot binarize an empty matrix".into()));
    }
    let (w_tilde, mu0) = row_center(w);
    let ones;
    let stats = match &cfg.col_stats {
        Some(s) => s.as_slice(),
        None => {
            ones = vec![1.0; m];
            &ones
        }
    };
    let salient = select_salient(&w_tilde, stats, cfg.salient_fraction)?;
    let keep = salient.not();

    let grouping = if cfg.split_points > 0 {
        let magnitudes: Vec<f64> = w_tilde
            .data()
            .iter()
            .zip(keep.data())
            .filter(|(_, &k)| k)
            .map(|(x, _)| x.abs())
            .collect();
        Some(search_split_points(&magnitudes, cfg.split_points, cfg.split_grid)?)
    } else {
        None
    };

    let mut initial = binarize_masked(&w_tilde, Some(&keep));
    initial.mu = mu0;
    let (base, arb_trace) = arb_refine_traced(w, &initial, cfg.arb_iters, Some(&keep))?;

    let overlay = overlay_for(w, |i, j| base.dequantize_at(i, j), &salient)?;
    let non_salient_error = base.objective(w, Some(&keep));
    let salient_error = salient_error(w, |i, j| base.dequantize_at(i, j), &overlay);
    Ok(BinaryQuantOutput {
        base,
        overlay,
        grouping,
        non_salient_error,
        salient_error,
        arb_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{frobenius_norm_sq, pack_signs};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0)).unwrap()
    }

    #[test]
    fn row_center_examples() {
        let w = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 5.0, 5.0, 5.0]]).unwrap();
        let (wt, mu) = row_center(&w);
        assert_eq!(mu, vec![2.5, 5.0]);
        assert_eq!(wt.row(0), &[-1.5, -0.5, 0.5, 1.5]);
        assert_eq!(wt.row(1), &[0.0; 4]);
    }

    #[test]
    fn centered_rows_sum_to_zero() {
        let (wt, _) = row_center(&random(16, 32, 1));
        for row in wt.row_iter() {
            assert!(row.iter().sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn binarize_examples() {
        let wt = DenseMatrix::from_rows(&[vec![-1.5, -0.5, 0.5, 1.5], vec![0.0; 4]]).unwrap();
        let b = binarize_rowwise(&wt);
        assert_eq!(b.alpha, vec![1.0, 0.0]);
        assert_eq!(b.mu, vec![0.0, 0.0]);
        assert_eq!(b.signs.row_words(0), &[0b1100]);
        assert_eq!(b.signs.row_words(1), &[0b1111]);
    }

    #[test]
    fn binarize_is_optimal_against_every_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let m = rng.random_range(1..=10);
            let row: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
            let wt = DenseMatrix::new(1, m, row.clone()).unwrap();
            let ours = binarize_rowwise(&wt).objective(&wt, None);
            let mut best = f64::INFINITY;
            for pattern in 0u32..(1 << m) {
                let b: Vec<f64> = (0..m).map(|j| if pattern >> j & 1 == 1 { 1.0 } else { -1.0 }).collect();
                let a = b.iter().zip(&row).map(|(b, w)| b * w).sum::<f64>() / m as f64;
                let e: f64 = b.iter().zip(&row).map(|(b, w)| (w - a * b).powi(2)).sum();
                best = best.min(e);
            }
            assert!(ours <= best + 1e-12);
        }
    }

    #[test]
    fn arb_zero_iterations_is_identity() {
        let w = random(4, 8, 2);
        let (wt, _) = row_center(&w);
        let s = binarize_rowwise(&wt);
        assert_eq!(arb_refine(&w, &s, 0).unwrap(), s);
    }

    #[test]
    fn arb_rejects_huge_iteration_count() {
        let w = random(2, 4, 2);
        let s = binarize_rowwise(&w);
        assert!(matches!(arb_refine(&w, &s, u64::from(u32::MAX) + 1), Err(Error::Argument(_))));
    }

    #[test]
    fn arb_exact_representation_is_a_fixed_point() {
        let signs = [[1.0, -1.0, -1.0, 1.0, 1.0, 1.0], [-1.0, -1.0, 1.0, -1.0, 1.0, 1.0]];
        let (alpha, mu) = ([0.5, 2.0], [1.0, -3.0]);
        let w = DenseMatrix::from_fn(2, 6, |i, j| alpha[i] * signs[i][j] + mu[i]).unwrap();
        let exact = BinarizedRowSet {
            signs: pack_signs(&DenseMatrix::from_fn(2, 6, |i, j| signs[i][j]).unwrap()).unwrap(),
            alpha: alpha.to_vec(),
            mu: mu.to_vec(),
            alpha_clamps: 0,
        };
        let (s, trace) = arb_refine_traced(&w, &exact, 3, None).unwrap();
        assert_eq!(trace, vec![0.0; 4]);
        assert_eq!(s, exact);

        let start = BinarizedRowSet {
            alpha: vec![0.1, 0.1],
            mu: vec![0.0, 0.0],
            ..exact
        };
        let (_, trace) = arb_refine_traced(&w, &start, 10, None).unwrap();
        assert!(trace[10] < 1e-6 * trace[0], "{trace:?}");
    }

    #[test]
    fn arb_trace_is_monotone() {
        let w = random(8, 64, 9);
        let (wt, mu) = row_center(&w);
        let mut s = binarize_rowwise(&wt);
        s.mu = mu;
        let (_, trace) = arb_refine_traced(&w, &s, 15, None).unwrap();
        assert_eq!(trace.len(), 16);
        assert!(trace.windows(2).all(|p| p[1] <= p[0]), "{trace:?}");
    }

    #[test]
    fn residual_examples() {
        let r = DenseMatrix::from_rows(&[vec![2.0, -2.0]]).unwrap();
        let o = residual_binarize(&r, &BoolMatrix::filled(1, 2, true)).unwrap();
        assert_eq!(o.alpha2, vec![2.0]);
        let entries: Vec<_> = o.entries().collect();
        assert_eq!(entries, vec![(0, 0, 2.0), (0, 1, -2.0)]);

        let o = residual_binarize(&r, &BoolMatrix::filled(1, 2, false)).unwrap();
        assert_eq!(o.alpha2, vec![0.0]);
        assert_eq!(o.count(), 0);
    }

    #[test]
    fn residual_never_worse_than_zero_on_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random(6, 20, 8);
        let mask = BoolMatrix::new(6, 20, (0..120).map(|_| rng.random_bool(0.3)).collect()).unwrap();
        let o = residual_binarize(&r, &mask).unwrap();
        let mut before = 0.0;
        let mut after = 0.0;
        for (i, j, v) in o.entries() {
            before += r.get(i, j).powi(2);
            after += (r.get(i, j) - v).powi(2);
        }
        assert!(after <= before);
    }

    #[test]
    fn salient_selection() {
        let w = DenseMatrix::from_rows(&[vec![1.0, -3.0, 2.0]]).unwrap();
        let ones = [1.0; 3];
        assert_eq!(select_salient(&w, &ones, 0.0).unwrap().count_true(), 0);
        assert_eq!(select_salient(&w, &ones, 1.0).unwrap().count_true(), 3);
        let mask = select_salient(&w, &ones, 1.0 / 3.0).unwrap();
        assert_eq!(mask.data(), &[false, true, false]);
        assert!(select_salient(&w, &ones, 1.5).is_err());
        assert!(select_salient(&w, &[1.0], 0.5).is_err());
    }

    #[test]
    fn salient_ties_prefer_lower_column() {
        let w = DenseMatrix::from_rows(&[vec![2.0, -2.0, 2.0, 1.0]]).unwrap();
        let mask = select_salient(&w, &[1.0; 4], 0.5).unwrap();
        assert_eq!(mask.data(), &[true, true, false, false]);
    }

    #[test]
    fn salient_density_per_row() {
        let w = random(7, 33, 12);
        let mask = select_salient(&w, &vec![1.0; 33], 0.1).unwrap();
        for i in 0..7 {
            assert_eq!(mask.row_count(i), 4);
        }
    }

    #[test]
    fn split_all_equal_falls_back() {
        let g = search_split_points(&[0.7; 10], 1, 16).unwrap();
        assert!(g.thresholds.is_empty());
        assert!(g.reduced);
        assert_eq!(g.error, 0.0);
    }

    #[test]
    fn split_tie_takes_lowest_threshold() {
        // {1} | {2,3} and {1,2} | {3} both cost 0.5
        let g = search_split_points(&[1.0, 2.0, 3.0], 1, 8).unwrap();
        assert_eq!(g.thresholds, vec![2.0]);
        assert!((g.error - 0.5).abs() < 1e-12);
        assert_eq!(g.group_of, vec![0, 1, 1]);
    }

    #[test]
    fn split_recovers_mixture_gap() {
        let mut values = vec![0.1; 40];
        values.extend(vec![5.0; 24]);
        let g = search_split_points(&values, 1, 64).unwrap();
        assert_eq!(g.thresholds.len(), 1);
        assert!(g.thresholds[0] > 0.1 && g.thresholds[0] <= 5.0);
        assert!(g.error < 1e-20);
        // brute force over every distinct cut of the sorted values
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let err = |a: &[f64]| {
            if a.is_empty() {
                return 0.0;
            }
            let mean = a.iter().sum::<f64>() / a.len() as f64;
            a.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
        };
        let brute = (1..sorted.len())
            .map(|k| err(&sorted[..k]) + err(&sorted[k..]))
            .fold(f64::INFINITY, f64::min);
        assert!(g.error <= brute + 1e-12);
    }

    #[test]
    fn more_split_points_never_hurt() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let values: Vec<f64> = (0..300).map(|_| rng.random_range(-3.0f64..3.0).abs().powi(2)).collect();
            let e1 = search_split_points(&values, 1, 32).unwrap().error;
            let e2 = search_split_points(&values, 2, 32).unwrap().error;
            let e3 = search_split_points(&values, 3, 32).unwrap().error;
            assert!(e2 <= e1 && e3 <= e2);
        }
    }

    #[test]
    fn split_argument_errors() {
        assert!(search_split_points(&[1.0], 0, 8).is_err());
        assert!(search_split_points(&[1.0], 4, 8).is_err());
        assert!(search_split_points(&[1.0], 1, 1).is_err());
        assert!(search_split_points(&[-1.0], 1, 8).is_err());
    }

    #[test]
    fn composition_reduces_to_plain_binarization() {
        let w = random(5, 12, 30);
        let cfg = BinaryQuantConfig {
            arb_iters: 0,
            ..Default::default()
        };
        let out = quantize_layer_binary(&w, &cfg).unwrap();
        let (wt, mu) = row_center(&w);
        let plain = binarize_rowwise(&wt);
        assert_eq!(out.base.signs, plain.signs);
        assert_eq!(out.base.alpha, plain.alpha);
        assert_eq!(out.base.mu, mu);
        assert_eq!(out.overlay.count(), 0);
        assert!(out.grouping.is_none());
    }

    #[test]
    fn composition_exact_matrix_has_zero_error() {
        let w = DenseMatrix::from_fn(3, 8, |i, j| {
            let s = if (i * 7 + j * 3) % 2 == 0 { 1.0 } else { -1.0 };
            0.5 * (i + 1) as f64 * s + i as f64
        })
        .unwrap();
        let out = quantize_layer_binary(&w, &BinaryQuantConfig::default()).unwrap();
        assert!(out.total_error() < 1e-24);
    }

    #[test]
    fn arb_improves_composed_error() {
        let w = random(32, 128, 44);
        let plain = quantize_layer_binary(&w, &BinaryQuantConfig { arb_iters: 0, ..Default::default() }).unwrap();
        let refined = quantize_layer_binary(&w, &BinaryQuantConfig::default()).unwrap();
        assert!(refined.total_error() <= plain.total_error());
    }

    #[test]
    fn composition_with_salient_and_splits() {
        let w = random(16, 40, 45);
        let cfg = BinaryQuantConfig {
            salient_fraction: 0.1,
            split_points: 2,
            ..Default::default()
        };
        let out = quantize_layer_binary(&w, &cfg).unwrap();
        assert_eq!(out.overlay.count(), 16 * 4);
        let g = out.grouping.as_ref().unwrap();
        assert_eq!(g.group_of.len(), 16 * 36);
        let direct = frobenius_norm_sq(
            &DenseMatrix::new(16, 40, w.data().iter().zip(out.dequantize().data()).map(|(a, b)| a - b).collect())
                .unwrap(),
        );
        assert!((direct - out.total_error()).abs() <= 1e-9 * direct.max(1.0));
        // salient positions are better served than with the base alone
        let base_only: f64 = out
            .overlay
            .entries()
            .map(|(i, j, _)| (w.get(i, j) - out.base.dequantize_at(i, j)).powi(2))
            .sum();
        assert!(out.salient_error <= base_only);
        // deterministic
        assert_eq!(quantize_layer_binary(&w, &cfg).unwrap(), out);
    }
}
