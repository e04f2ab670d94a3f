//! End-to-end layer compression, storage accounting and compressed forward.

use crate::binarize::{overlay_for, quantize_layer_binary, salient_error, BinaryQuantConfig, SalientOverlay};
use crate::codebook::{optimize_codebook, BinaryCodebook, CodebookConfig, InitStrategy, MAX_VECTOR_LEN};
use crate::error::{Error, Result};
use crate::lut::{lut_gemm, LutGemmPlan};
use crate::matrix::{matmul, unpack_signs, DenseMatrix, PackedBinaryMatrix};
use crate::transform::{
    apply_transform, block_objective, equivalence_check, forward_transform_weight, inverse_transform_weight,
    optimize_p, optimize_sign_flips, AuxLossConfig, QuantizedForward, Termination, TransformPair,
};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeConfig {
    pub v: usize,
    pub c: usize,
    pub salient_fraction: f64,
    pub split_points: usize,
    pub split_grid: usize,
    pub arb_iters: u64,
    pub codebook_iters: usize,
    pub freq_threshold: f64,
    pub init: InitStrategy,
    pub col_stats: Option<Vec<f64>>,
}

impl Default for QuantizeConfig {
    fn default() -> Self {
        let cb = CodebookConfig::default();
        let bq = BinaryQuantConfig::default();
        Self {
            v: cb.v,
            c: cb.c,
            salient_fraction: bq.salient_fraction,
            split_points: bq.split_points,
            split_grid: bq.split_grid,
            arb_iters: bq.arb_iters,
            codebook_iters: cb.max_iter,
            freq_threshold: cb.freq_threshold,
            init: cb.init,
            col_stats: None,
        }
    }
}

impl QuantizeConfig {
    fn validate(&self) -> Result<()> {
        if self.v == 0 || self.v > MAX_VECTOR_LEN {
            return Err(Error::Config(format!("v={} not in 1..={MAX_VECTOR_LEN}", self.v)));
        }
        if self.c == 0 || self.c > u32::MAX as usize {
            return Err(Error::Config(format!("c={} out of range", self.c)));
        }
        if self.codebook_iters == 0 {
            return Err(Error::Config("codebook_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// A compressed weight matrix.
///
/// Signs of all `n·m` entries are cut row-major into `⌈n·m/v⌉` vectors and
/// stored as codebook indices. Scales are kept at single precision. When a
/// transform is fused, every field describes the transformed-space weights
/// `W·D±·P⁻ᵀ`; callers pair them with activations mapped by
/// [`apply_transform`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub n: usize,
    pub m: usize,
    pub v: usize,
    pub codebook: BinaryCodebook,
    pub indices: Vec<u32>,
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    pub overlay: Option<SalientOverlay>,
    pub transform: Option<TransformPair>,
    pub split_thresholds: Option<Vec<f64>>,
}

pub fn index_count(n: usize, m: usize, v: usize) -> usize {
    (n * m).div_ceil(v)
}

impl QuantizedLayer {
    pub fn c(&self) -> usize {
        self.codebook.c()
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook.v() != self.v {
            return Err(Error::Integrity(format!("codebook width {} != v={}", self.codebook.v(), self.v)));
        }
        if self.indices.len() != index_count(self.n, self.m, self.v) {
            return Err(Error::Integrity(format!(
                "{} indices for {}x{} weights at v={}",
                self.indices.len(),
                self.n,
                self.m,
                self.v
            )));
        }
        if let Some((position, &k)) = self.indices.iter().enumerate().find(|(_, &k)| k as usize >= self.c()) {
            return Err(Error::IndexOutOfRange {
                position,
                index: u64::from(k),
                c: self.c(),
            });
        }
        if self.alpha.len() != self.n || self.mu.len() != self.n {
            return Err(Error::Integrity("scale or bias length != rows".into()));
        }
        if let Some(o) = &self.overlay {
            if o.mask.shape() != (self.n, self.m) || o.alpha2.len() != self.n || o.count() != o.mask.count_true() {
                return Err(Error::Integrity("overlay does not match layer shape".into()));
            }
        }
        if let Some(t) = &self.transform {
            if t.d() != self.m {
                return Err(Error::Integrity(format!("transform size {} != input width {}", t.d(), self.m)));
            }
        }
        Ok(())
    }

    /// Sign of weight `(i, j)` as stored by the codebook.
    #[inline]
    fn sign_at(&self, i: usize, j: usize) -> f64 {
        let p = i * self.m + j;
        let word = self.codebook.word(self.indices[p / self.v] as usize);
        if word >> (p % self.v) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// `B̂` as a packed `n × m` sign matrix.
    pub fn signs(&self) -> Result<PackedBinaryMatrix> {
        self.validate()?;
        Ok(PackedBinaryMatrix::from_fn(self.n, self.m, |i, j| self.sign_at(i, j) > 0.0))
    }

    pub fn has_lut_layout(&self, mu_seg: usize) -> bool {
        self.m % self.v == 0 && self.v % mu_seg == 0
    }
}

/// `Ŵ = α⊙B̂ + μ + overlay`, in the layer's own (possibly transformed) space.
pub fn dequantize(layer: &QuantizedLayer) -> Result<DenseMatrix> {
    layer.validate()?;
    let mut out = Vec::with_capacity(layer.n * layer.m);
    for i in 0..layer.n {
        for j in 0..layer.m {
            out.push(layer.alpha[i] * layer.sign_at(i, j) + layer.mu[i]);
        }
    }
    if let Some(o) = &layer.overlay {
        o.add_to(&mut out);
    }
    DenseMatrix::new(layer.n, layer.m, out)
}

/// Dequantized weights mapped back to the original input space.
pub fn dequantize_original(layer: &QuantizedLayer) -> Result<DenseMatrix> {
    let w = dequantize(layer)?;
    match &layer.transform {
        Some(t) => forward_transform_weight(&w, t),
        None => Ok(w),
    }
}

/// `X·Ŵᵀ` through LUT-GEMM, with the transform applied to `X` and the
/// salient overlay added as a sparse correction.
pub fn layer_forward(layer: &QuantizedLayer, x: &DenseMatrix, mu_seg: usize) -> Result<DenseMatrix> {
    layer.validate()?;
    let xt = match &layer.transform {
        Some(t) => apply_transform(x, t)?,
        None => x.clone(),
    };
    let plan = LutGemmPlan::new(&layer.codebook, &layer.indices, layer.n, layer.m, mu_seg)?;
    let y = lut_gemm(&xt, &plan, &layer.alpha, &layer.mu)?;
    let Some(o) = &layer.overlay else {
        return Ok(y);
    };
    let mut data = y.into_data();
    for b in 0..xt.rows() {
        let xrow = xt.row(b);
        let yrow = &mut data[b * layer.n..(b + 1) * layer.n];
        for (i, j, val) in o.entries() {
            yrow[i] += xrow[j] * val;
        }
    }
    DenseMatrix::new(x.rows(), layer.n, data)
}

/// Dense reference for [`layer_forward`].
pub fn layer_forward_dense(layer: &QuantizedLayer, x: &DenseMatrix) -> Result<DenseMatrix> {
    let xt = match &layer.transform {
        Some(t) => apply_transform(x, t)?,
        None => x.clone(),
    };
    matmul(&xt, &dequantize(layer)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeReport {
    /// Squared error of the binarized layer before codebook compression.
    pub pre_codebook_error: f64,
    /// Squared error of the final layer, `non_salient_error + salient_error`.
    pub post_codebook_error: f64,
    pub non_salient_error: f64,
    pub salient_error: f64,
    /// `‖W − Ŵ‖²` after mapping back through the transform, when one is fused.
    pub original_space_error: Option<f64>,
    pub salient_count: usize,
    pub codebook_exact: bool,
    pub codebook_iterations: usize,
    pub codebook_trace: Vec<u64>,
    pub arb_trace: Vec<f64>,
    pub alpha_clamps: usize,
    /// Group-wise binarization error under the chosen split thresholds.
    pub grouped_error: Option<f64>,
    pub grouping_reduced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeOutput {
    pub layer: QuantizedLayer,
    pub report: QuantizeReport,
}

#[inline]
fn single(x: f64) -> f64 {
    x as f32 as f64
}

fn single_precision(values: &[f64], what: &str) -> Result<Vec<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let y = single(x);
            if y.is_finite() {
                Ok(y)
            } else {
                Err(Error::Domain {
                    row: i,
                    col: 0,
                    msg: format!("{what} {x} does not fit in single precision"),
                })
            }
        })
        .collect()
}

fn rounded_overlay(mut o: SalientOverlay) -> Result<SalientOverlay> {
    o.alpha2 = single_precision(&o.alpha2, "salient scale")?;
    Ok(o)
}

/// Transform → binarize → codebook → assembled layer.
pub fn btc_quantize(w: &DenseMatrix, transform: Option<&TransformPair>, cfg: &QuantizeConfig) -> Result<QuantizeOutput> {
    cfg.validate()?;
    let (n, m) = w.shape();
    let wq = match transform {
        Some(t) => inverse_transform_weight(w, t)?,
        None => w.clone(),
    };
    let bq = quantize_layer_binary(
        &wq,
        &BinaryQuantConfig {
            salient_fraction: cfg.salient_fraction,
            split_points: cfg.split_points,
            split_grid: cfg.split_grid,
            arb_iters: cfg.arb_iters,
            col_stats: cfg.col_stats.clone(),
        },
    )?;
    let mut base = bq.base;
    base.alpha = single_precision(&base.alpha, "scale")?;
    base.mu = single_precision(&base.mu, "bias")?;
    let salient = bq.overlay.mask;
    let keep = salient.not();
    let salient_count = salient.count_true();

    let pre_overlay = rounded_overlay(overlay_for(&wq, |i, j| base.dequantize_at(i, j), &salient)?)?;
    let pre_codebook_error =
        base.objective(&wq, Some(&keep)) + salient_error(&wq, |i, j| base.dequantize_at(i, j), &pre_overlay);

    let cb = optimize_codebook(
        &unpack_signs(&base.signs),
        &wq,
        &keep,
        &base.mu,
        &base.alpha,
        &CodebookConfig {
            v: cfg.v,
            c: cfg.c,
            max_iter: cfg.codebook_iters,
            freq_threshold: cfg.freq_threshold,
            init: cfg.init,
        },
    )?;
    let bhat_at = |i: usize, j: usize| base.alpha[i] * cb.b_hat.get(i, j) + base.mu[i];
    let overlay = rounded_overlay(overlay_for(&wq, bhat_at, &salient)?)?;
    let salient_err = salient_error(&wq, bhat_at, &overlay);

    let layer = QuantizedLayer {
        n,
        m,
        v: cfg.v,
        codebook: cb.codebook,
        indices: cb.assignment.z,
        alpha: base.alpha,
        mu: base.mu,
        overlay: (salient_count > 0).then_some(overlay),
        transform: transform.cloned(),
        split_thresholds: bq.grouping.as_ref().map(|g| g.thresholds.clone()),
    };
    layer.validate()?;
    let original_space_error = match transform {
        Some(_) => {
            let back = dequantize_original(&layer)?;
            Some(w.data().iter().zip(back.data()).map(|(a, b)| (a - b).powi(2)).sum())
        }
        None => None,
    };
    Ok(QuantizeOutput {
        report: QuantizeReport {
            pre_codebook_error,
            post_codebook_error: cb.loss + salient_err,
            non_salient_error: cb.loss,
            salient_error: salient_err,
            original_space_error,
            salient_count,
            codebook_exact: cb.exact,
            codebook_iterations: cb.iterations,
            codebook_trace: cb.trace,
            arb_trace: bq.arb_trace,
            alpha_clamps: base.alpha_clamps,
            grouped_error: bq.grouping.as_ref().map(|g| g.error),
            grouping_reduced: bq.grouping.as_ref().is_some_and(|g| g.reduced),
        },
        layer,
    })
}

/// `⌈log₂ c⌉`, with `c = 1` needing no index bits.
pub fn ceil_log2(c: u64) -> u32 {
    if c <= 1 {
        0
    } else {
        64 - (c - 1).leading_zeros()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveBits {
    pub index_bits_per_weight: f64,
    pub codebook_bits: f64,
    pub total_bits: f64,
    pub bits_per_weight: f64,
    /// Same quantities with `log₂ c` in place of its ceiling.
    pub fractional_index_bits_per_weight: f64,
    pub fractional_bits_per_weight: f64,
}

/// Storage of a `n × m` layer coded with `c` centroids of length `v`:
/// `v·c + ⌈log₂c⌉·n·m/v` bits.
pub fn effective_bits(v: usize, c: usize, n: usize, m: usize) -> Result<EffectiveBits> {
    if v == 0 || c == 0 {
        return Err(Error::Argument("v and c must be at least 1".into()));
    }
    let idx = f64::from(ceil_log2(c as u64));
    let frac = (c as f64).log2();
    let (v, c, weights) = (v as f64, c as f64, (n * m) as f64);
    let codebook_bits = v * c;
    let total_bits = codebook_bits + idx * weights / v;
    let fractional_total = codebook_bits + frac * weights / v;
    Ok(EffectiveBits {
        index_bits_per_weight: idx / v,
        codebook_bits,
        total_bits,
        bits_per_weight: total_bits / weights,
        fractional_index_bits_per_weight: frac / v,
        fractional_bits_per_weight: fractional_total / weights,
    })
}

/// Exact binomial coefficient, `None` on overflow.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc·(n−i) is divisible by (i+1) at every step
        acc = acc.checked_mul(u128::from(n - i))? / u128::from(i + 1);
    }
    Some(acc)
}

/// Per-weight cost of a `keep`-of-`group` sparsity mask plus the kept signs:
/// `(keep + ⌈log₂ C(group, keep)⌉) / group`.
pub fn nm_mask_bits(keep: u64, group: u64) -> Result<f64> {
    if keep == 0 || keep > group {
        return Err(Error::Argument(format!("need 0 < keep ≤ group, got {keep} of {group}")));
    }
    let configs = binomial(group, keep).ok_or_else(|| Error::Argument("binomial coefficient overflows".into()))?;
    let mask_bits = if configs <= 1 { 0 } else { 128 - (configs - 1).leading_zeros() };
    Ok((keep as f64 + f64::from(mask_bits)) / group as f64)
}

/// Bits of the index and codebook sections of a layer, before byte padding.
pub fn payload_bits(layer: &QuantizedLayer) -> u64 {
    let idx = u64::from(ceil_log2(layer.c() as u64)) * layer.indices.len() as u64;
    idx + (layer.v * layer.c()) as u64
}

/// Bits spent on the salient overlay: count, positions, signs and per-row scales.
pub fn overlay_bits(layer: &QuantizedLayer) -> u64 {
    match &layer.overlay {
        Some(o) => 32 + 64 * o.count() as u64 + o.count() as u64 + 32 * layer.n as u64,
        None => 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformFitConfig {
    pub quant: QuantizeConfig,
    pub aux: AuxLossConfig,
    pub sign_sweeps: usize,
    pub p_iters: usize,
    pub lr: f64,
    pub fd_eps: f64,
}

impl Default for TransformFitConfig {
    fn default() -> Self {
        Self {
            quant: QuantizeConfig {
                v: 8,
                c: 64,
                ..QuantizeConfig::default()
            },
            aux: AuxLossConfig::default(),
            sign_sweeps: 1,
            p_iters: 3,
            lr: 1e-2,
            fd_eps: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformFitResult {
    pub transform: TransformPair,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Sign-flip trace followed by the factor-descent trace.
    pub trace: Vec<f64>,
    pub sign_flips: usize,
    pub p_steps: usize,
    pub termination: Termination,
    pub equivalence_error: f64,
}

/// Block objective of quantizing `w` under `t`, measured on calibration rows `x`.
///
/// The auxiliary losses see the reconstructed sign matrix `B̂`, one row per
/// output feature.
pub fn transform_objective(
    w: &DenseMatrix,
    x: &DenseMatrix,
    t: &TransformPair,
    quant: &QuantizeConfig,
    aux: &AuxLossConfig,
) -> Result<f64> {
    let parts = block_objective(
        |x| matmul(x, w),
        |x, t| {
            let q = btc_quantize(w, Some(t), quant)?;
            Ok(QuantizedForward {
                output: layer_forward_dense(&q.layer, x)?,
                binary_vectors: Some(q.layer.signs()?),
            })
        },
        x,
        t,
        aux,
    )?;
    Ok(parts.total)
}

/// Greedy sign flips, then finite-difference descent on the Kronecker
/// factors, starting from the identity transform.
pub fn transform_fit(w: &DenseMatrix, x: &DenseMatrix, cfg: &TransformFitConfig) -> Result<TransformFitResult> {
    let d = w.cols();
    if x.cols() != d {
        return Err(Error::Shape(format!("calibration width {} != weight width {d}", x.cols())));
    }
    let (d1, d2) = crate::transform::balanced_factors(d);
    let t0 = TransformPair::identity(d1, d2);
    let objective = |t: &TransformPair| transform_objective(w, x, t, &cfg.quant, &cfg.aux);

    let signs = optimize_sign_flips(|s| objective(&t0.with_sigma(s.to_vec())?), t0.sigma(), cfg.sign_sweeps)?;
    let t1 = t0.with_sigma(signs.sigma.clone())?;
    let fit = optimize_p(objective, &t1, cfg.lr, cfg.p_iters, cfg.fd_eps)?;

    let equivalence_error = equivalence_check(x, w, &fit.transform)?;
    if !(equivalence_error <= 1e-8) {
        return Err(Error::Singular(format!("fitted transform breaks equivalence: {equivalence_error:e}")));
    }
    let mut trace = signs.trace.clone();
    trace.extend_from_slice(&fit.trace[1..]);
    Ok(TransformFitResult {
        initial_objective: trace[0],
        final_objective: *trace.last().expect("trace starts with the initial value"),
        trace,
        sign_flips: signs.trace.len() - 1,
        p_steps: fit.accepted_steps,
        termination: fit.termination,
        transform: fit.transform,
        equivalence_error,
    })
}
