//! Binary codebook LUT-GEMM.
//!
//! Stage I builds, per activation block and segment, a table of signed sums
//! over every `μ`-bit sign pattern. Stage II stores each centroid as one
//! `μ`-bit key per segment, so `⟨x_j, C_k⟩` becomes `P` table loads. The
//! product is then an index gather over per-block tables, with the row
//! scale and bias applied once per output element.

use std::ops::Add;
use std::time::Instant;

use rayon::prelude::*;

use crate::codebook::BinaryCodebook;
use crate::error::{Error, Result};
use crate::matrix::{matmul, DenseMatrix, PackedBinaryMatrix};

/// Segment widths accepted by plans.
pub const SUPPORTED_SEGMENTS: [usize; 2] = [4, 8];
pub const DEFAULT_SEGMENT: usize = 8;

fn check_segment(mu_seg: usize) -> Result<()> {
    if SUPPORTED_SEGMENTS.contains(&mu_seg) {
        Ok(())
    } else {
        Err(Error::Config(format!("segment width {mu_seg} not in {SUPPORTED_SEGMENTS:?}")))
    }
}

/// `table[s] = Σₜ σₜ(s)·x[t]` with `σₜ(s) = +1` iff bit `t` of `s` is set.
///
/// Works for any segment length up to 16; plans restrict it to 4 or 8.
pub fn signed_sum_table(segment: &[f64]) -> Vec<f64> {
    let mu = segment.len();
    assert!(mu <= 16, "segment of length {mu} is too long for a table");
    let mut table = vec![0.0; 1 << mu];
    table[0] = -segment.iter().sum::<f64>();
    for s in 1..table.len() {
        // flip the lowest set bit from -1 to +1
        let t = s.trailing_zeros() as usize;
        table[s] = table[s & (s - 1)] + segment[t] + segment[t];
    }
    table
}

/// Stage-I tables for one activation block.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationLut {
    pub mu_seg: usize,
    /// `segments × 2^μ`, segment-major.
    pub tables: Vec<f64>,
}

impl ActivationLut {
    pub fn segments(&self) -> usize {
        self.tables.len() >> self.mu_seg
    }

    #[inline]
    pub fn lookup(&self, segment: usize, key: u16) -> f64 {
        self.tables[(segment << self.mu_seg) + usize::from(key)]
    }
}

pub fn build_activation_lut(x_block: &[f64], mu_seg: usize) -> Result<ActivationLut> {
    check_segment(mu_seg)?;
    if x_block.len() % mu_seg != 0 {
        return Err(Error::Shape(format!(
            "block length {} is not a multiple of segment width {mu_seg}",
            x_block.len()
        )));
    }
    let tables = x_block.chunks_exact(mu_seg).flat_map(signed_sum_table).collect();
    Ok(ActivationLut { mu_seg, tables })
}

/// `key[k·P + p]` is the `μ`-bit code of centroid `k`, segment `p`.
pub fn codebook_keys(codebook: &BinaryCodebook, mu_seg: usize) -> Result<Vec<u16>> {
    check_segment(mu_seg)?;
    let v = codebook.v();
    if v % mu_seg != 0 {
        return Err(Error::Shape(format!("vector length {v} is not a multiple of {mu_seg}")));
    }
    let segs = v / mu_seg;
    let seg_mask = (1u64 << mu_seg) - 1;
    let mut keys = Vec::with_capacity(codebook.c() * segs);
    for k in 0..codebook.c() {
        let w = codebook.word(k);
        keys.extend((0..segs).map(|p| ((w >> (p * mu_seg)) & seg_mask) as u16));
    }
    Ok(keys)
}

/// Inverse of [`codebook_keys`].
pub fn decode_keys(keys: &[u16], c: usize, v: usize, mu_seg: usize) -> Result<BinaryCodebook> {
    let segs = v / mu_seg;
    if keys.len() != c * segs {
        return Err(Error::Shape("key count does not match codebook shape".into()));
    }
    let words: Vec<u64> = keys
        .chunks_exact(segs)
        .map(|ks| ks.iter().enumerate().fold(0u64, |w, (p, &k)| w | u64::from(k) << (p * mu_seg)))
        .collect();
    BinaryCodebook::from_words(v, &words)
}

/// Sum of table values selected by `indices`. The bound admits only
/// addition, so this loop cannot multiply.
#[inline]
pub fn gather_accumulate<T: Copy + Add<Output = T>>(tables: &[T], stride: usize, indices: &[u32], zero: T) -> T {
    indices
        .iter()
        .enumerate()
        .fold(zero, |acc, (j, &k)| acc + tables[j * stride + k as usize])
}

/// Per-centroid sums of segment table entries, again addition only.
pub fn cblut_from_tables<T: Copy + Add<Output = T>>(
    segment_tables: &[T],
    table_len: usize,
    keys: &[u16],
    segments: usize,
    zero: T,
) -> Vec<T> {
    keys.chunks_exact(segments)
        .map(|ks| {
            ks.iter()
                .enumerate()
                .fold(zero, |acc, (p, &k)| acc + segment_tables[p * table_len + usize::from(k)])
        })
        .collect()
}

/// `CBLUT[k] = ⟨x_block, C_k⟩` from stage-I tables and stage-II keys.
pub fn build_cblut(keys: &[u16], lut: &ActivationLut) -> Vec<f64> {
    let segs = lut.segments();
    cblut_from_tables(&lut.tables, 1 << lut.mu_seg, keys, segs, 0.0)
}

/// Precomputed keys and the block index matrix of a codebook layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LutGemmPlan {
    pub v: usize,
    pub mu_seg: usize,
    pub c: usize,
    pub out_features: usize,
    pub in_features: usize,
    /// `c × P` keys.
    pub keys: Vec<u16>,
    /// `out_features × (in_features / v)` centroid indices.
    pub indices: Vec<u32>,
}

impl LutGemmPlan {
    /// Plans a `out_features × in_features` sign matrix whose row-major
    /// length-`v` blocks were coded as `indices`. Blocks must not straddle
    /// rows, so `in_features` must be a multiple of `v`.
    pub fn new(
        codebook: &BinaryCodebook,
        indices: &[u32],
        out_features: usize,
        in_features: usize,
        mu_seg: usize,
    ) -> Result<Self> {
        let v = codebook.v();
        if in_features % v != 0 {
            return Err(Error::Shape(format!(
                "input width {in_features} is not a multiple of vector length {v}"
            )));
        }
        if indices.len() != out_features * (in_features / v) {
            return Err(Error::Shape(format!(
                "{} indices for a {out_features} x {} block grid",
                indices.len(),
                in_features / v
            )));
        }
        if let Some((pos, &k)) = indices.iter().enumerate().find(|(_, &k)| k as usize >= codebook.c()) {
            return Err(Error::IndexOutOfRange {
                position: pos,
                index: u64::from(k),
                c: codebook.c(),
            });
        }
        Ok(Self {
            v,
            mu_seg,
            c: codebook.c(),
            out_features,
            in_features,
            keys: codebook_keys(codebook, mu_seg)?,
            indices: indices.to_vec(),
        })
    }

    pub fn blocks(&self) -> usize {
        self.in_features / self.v
    }

    pub fn segments(&self) -> usize {
        self.v / self.mu_seg
    }

    /// All per-block CBLUTs for one activation row, `blocks × c`.
    pub fn cbluts(&self, x: &[f64]) -> Vec<f64> {
        let table_len = 1 << self.mu_seg;
        let segs = self.segments();
        let mut tables = Vec::with_capacity(segs * table_len);
        let mut out = Vec::with_capacity(self.blocks() * self.c);
        for block in x.chunks_exact(self.v) {
            tables.clear();
            for seg in block.chunks_exact(self.mu_seg) {
                tables.extend(signed_sum_table(seg));
            }
            out.extend(cblut_from_tables(&tables, table_len, &self.keys, segs, 0.0));
        }
        out
    }
}

/// `Y[b, r] = alpha[r]·Σⱼ CBLUT_j[I[r, j]] + mu[r]·Σ x_b`, i.e. `X·(αB̂ + μ)ᵀ`.
pub fn lut_gemm(x: &DenseMatrix, plan: &LutGemmPlan, alpha: &[f64], mu: &[f64]) -> Result<DenseMatrix> {
    if x.cols() != plan.in_features {
        return Err(Error::Shape(format!(
            "activation width {} != plan input width {}",
            x.cols(),
            plan.in_features
        )));
    }
    if alpha.len() != plan.out_features || mu.len() != plan.out_features {
        return Err(Error::Shape("scale/bias length != output rows".into()));
    }
    let blocks = plan.blocks();
    let rows: Vec<Vec<f64>> = x
        .row_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|xrow| {
            let tables = plan.cbluts(xrow);
            let total: f64 = xrow.iter().sum();
            (0..plan.out_features)
                .map(|r| {
                    let idx = &plan.indices[r * blocks..(r + 1) * blocks];
                    let raw = gather_accumulate(&tables, plan.c, idx, 0.0);
                    alpha[r] * raw + mu[r] * total
                })
                .collect()
        })
        .collect();
    Ok(DenseMatrix::from_vec_unchecked(x.rows(), plan.out_features, rows.concat()))
}

/// `X·(αB + μ)ᵀ` straight from packed signs, one add or subtract per weight.
pub fn sign_gemm(x: &DenseMatrix, signs: &PackedBinaryMatrix, alpha: &[f64], mu: &[f64]) -> Result<DenseMatrix> {
    if x.cols() != signs.cols() {
        return Err(Error::Shape("activation width != sign matrix width".into()));
    }
    let out_rows = signs.rows();
    let mut out = Vec::with_capacity(x.rows() * out_rows);
    for xrow in x.row_iter() {
        let total: f64 = xrow.iter().sum();
        for r in 0..out_rows {
            let mut acc = 0.0;
            for (w, chunk) in signs.row_words(r).iter().zip(xrow.chunks(64)) {
                for (t, &xv) in chunk.iter().enumerate() {
                    if (w >> t) & 1 == 1 {
                        acc += xv;
                    } else {
                        acc -= xv;
                    }
                }
            }
            out.push(alpha[r] * acc + mu[r] * total);
        }
    }
    Ok(DenseMatrix::from_vec_unchecked(x.rows(), out_rows, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchSize {
    pub batch: usize,
    pub out_features: usize,
    pub in_features: usize,
}

impl std::str::FromStr for BenchSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Argument(format!("bad size `{s}`: {e}")))?;
        match parts[..] {
            [batch, out_features, in_features] => Ok(Self {
                batch,
                out_features,
                in_features,
            }),
            _ => Err(Error::Argument(format!("size `{s}` must look like BxOxI"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub size: BenchSize,
    pub kernel: &'static str,
    pub median_ns: u128,
}

impl std::fmt::Display for BenchRow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}\t{}\t{}",
            self.size.batch, self.size.out_features, self.size.in_features, self.kernel, self.median_ns
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchParams {
    pub v: usize,
    pub c: usize,
    pub mu_seg: usize,
    pub seed: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            v: 16,
            c: 256,
            mu_seg: DEFAULT_SEGMENT,
            seed: 0,
        }
    }
}

fn median_ns(reps: usize, mut f: impl FnMut()) -> u128 {
    let mut times: Vec<u128> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_nanos()
        })
        .collect();
    times.sort_unstable();
    times[times.len() / 2]
}

/// Wall-clock medians of the dense product, packed sign-GEMM and LUT-GEMM on
/// random operands. Three rows per size; nothing for `reps == 0`.
pub fn bench_lut_vs_dense(sizes: &[BenchSize], reps: usize, params: BenchParams) -> Result<Vec<BenchRow>> {
    use rand::{Rng, SeedableRng};
    if reps == 0 {
        return Ok(Vec::new());
    }
    check_segment(params.mu_seg)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(params.seed);
    let mut report = Vec::with_capacity(sizes.len() * 3);
    for &size in sizes {
        let BenchSize {
            batch,
            out_features,
            in_features,
        } = size;
        if params.v > 64 || params.v % params.mu_seg != 0 {
            return Err(Error::Config(format!("v={} incompatible with mu_seg={}", params.v, params.mu_seg)));
        }
        let c = params.c.min(if params.v >= 64 { usize::MAX } else { 1 << params.v }).max(1);
        let vmask = if params.v == 64 { u64::MAX } else { (1u64 << params.v) - 1 };
        let words: Vec<u64> = (0..c).map(|_| rng.random::<u64>() & vmask).collect();
        let codebook = BinaryCodebook::from_words(params.v, &words)?;
        let blocks = in_features / params.v;
        let indices: Vec<u32> = (0..out_features * blocks).map(|_| rng.random_range(0..c as u32)).collect();
        let plan = LutGemmPlan::new(&codebook, &indices, out_features, in_features, params.mu_seg)?;
        let signs = PackedBinaryMatrix::from_fn(out_features, in_features, |r, col| {
            let k = indices[r * blocks + col / params.v] as usize;
            codebook.centroids.bit(k, col % params.v)
        });
        let dense_w = crate::matrix::unpack_signs(&signs);
        let alpha: Vec<f64> = (0..out_features).map(|_| rng.random_range(0.1..1.0)).collect();
        let mu: Vec<f64> = (0..out_features).map(|_| rng.random_range(-0.1..0.1)).collect();
        let x = DenseMatrix::from_fn(batch, in_features, |_, _| rng.random_range(-1.0..1.0))?;

        let dense = median_ns(reps, || {
            std::hint::black_box(matmul(&x, &dense_w).expect("shapes checked"));
        });
        let packed = median_ns(reps, || {
            std::hint::black_box(sign_gemm(&x, &signs, &alpha, &mu).expect("shapes checked"));
        });
        let lut = median_ns(reps, || {
            std::hint::black_box(lut_gemm(&x, &plan, &alpha, &mu).expect("shapes checked"));
        });
        for (kernel, median_ns) in [("dense", dense), ("sign_gemm", packed), ("lut_gemm", lut)] {
            report.push(BenchRow {
                size,
                kernel,
                median_ns,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_wide_table_by_enumeration() {
        // s = 0b00 → -1-2, 0b01 → +1-2, 0b10 → -1+2, 0b11 → +1+2
        assert_eq!(signed_sum_table(&[1.0, 2.0]), vec![-3.0, -1.0, 1.0, 3.0]);
    }

    #[test]
    fn all_ones_key_is_plain_sum() {
        let x = [0.5, -1.25, 2.0, 3.5];
        let lut = build_activation_lut(&x, 4).unwrap();
        assert_eq!(lut.lookup(0, 0b1111), x.iter().sum::<f64>());
    }

    #[test]
    fn tables_are_antisymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mu in SUPPORTED_SEGMENTS {
            let x: Vec<f64> = (0..mu).map(|_| rng.random_range(-4.0..4.0)).collect();
            let t = signed_sum_table(&x);
            let full = (1usize << mu) - 1;
            for s in 0..=full {
                assert!((t[s] + t[s ^ full]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn segment_width_is_validated() {
        assert!(matches!(build_activation_lut(&[0.0; 6], 3), Err(Error::Config(_))));
        assert!(matches!(build_activation_lut(&[0.0; 6], 4), Err(Error::Shape(_))));
    }

    #[test]
    fn key_convention() {
        let cb = BinaryCodebook::from_words(4, &[0b1111, 0]).unwrap();
        assert_eq!(codebook_keys(&cb, 4).unwrap(), vec![15, 0]);
    }

    #[test]
    fn keys_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (v, mu) in [(8, 4), (16, 8), (16, 4), (64, 8)] {
            let mask = if v == 64 { u64::MAX } else { (1u64 << v) - 1 };
            let words: Vec<u64> = (0..12).map(|_| rng.random::<u64>() & mask).collect();
            let cb = BinaryCodebook::from_words(v, &words).unwrap();
            let keys = codebook_keys(&cb, mu).unwrap();
            assert_eq!(decode_keys(&keys, 12, v, mu).unwrap(), cb);
        }
    }

    #[test]
    fn cblut_examples() {
        let cb = BinaryCodebook::from_words(8, &[0xff]).unwrap();
        let keys = codebook_keys(&cb, 8).unwrap();
        let zero = build_activation_lut(&[0.0; 8], 8).unwrap();
        assert_eq!(build_cblut(&keys, &zero), vec![0.0]);
        let x = [1.0, 2.0, -3.0, 0.5, 0.25, -1.0, 4.0, 2.0];
        let lut = build_activation_lut(&x, 8).unwrap();
        assert_eq!(build_cblut(&keys, &lut), vec![x.iter().sum::<f64>()]);
    }

    #[test]
    fn cblut_matches_dense_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let words: Vec<u64> = (0..16).map(|_| rng.random::<u64>() & 0xffff).collect();
        let cb = BinaryCodebook::from_words(16, &words).unwrap();
        let keys = codebook_keys(&cb, 8).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..16).map(|_| rng.random_range(-10.0..10.0)).collect();
            let lut = build_activation_lut(&x, 8).unwrap();
            let table = build_cblut(&keys, &lut);
            let l1: f64 = x.iter().map(|v| v.abs()).sum();
            for k in 0..16 {
                let dot: f64 = (0..16).map(|t| x[t] * cb.centroids.sign(k, t)).sum();
                assert!((table[k] - dot).abs() <= 1e-9 * l1);
            }
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let neg_table = build_cblut(&keys, &build_activation_lut(&neg, 8).unwrap());
            for (a, b) in table.iter().zip(&neg_table) {
                assert!((a + b).abs() <= 1e-12 * l1);
            }
        }
    }

    /// A value type with addition and nothing else.
    #[derive(Debug, Clone, Copy, PartialEq)]
    struct AddOnly(i64);

    impl Add for AddOnly {
        type Output = Self;
        fn add(self, o: Self) -> Self {
            AddOnly(self.0 + o.0)
        }
    }

    #[test]
    fn accumulation_is_add_only() {
        let tables: Vec<AddOnly> = (0..6).map(AddOnly).collect();
        // two blocks of three entries, pick entry 2 then entry 1
        assert_eq!(gather_accumulate(&tables, 3, &[2, 1], AddOnly(0)), AddOnly(2 + 4));
        let seg = vec![AddOnly(1), AddOnly(10), AddOnly(100), AddOnly(1000)];
        assert_eq!(cblut_from_tables(&seg, 2, &[1, 0], 2, AddOnly(0)), vec![AddOnly(10 + 100)]);
    }

    fn layer_parts(rng: &mut ChaCha8Rng, out_f: usize, in_f: usize, v: usize, c: usize) -> (BinaryCodebook, Vec<u32>, Vec<f64>, Vec<f64>) {
        let mask = if v == 64 { u64::MAX } else { (1u64 << v) - 1 };
        let words: Vec<u64> = (0..c).map(|_| rng.random::<u64>() & mask).collect();
        let cb = BinaryCodebook::from_words(v, &words).unwrap();
        let idx = (0..out_f * in_f / v).map(|_| rng.random_range(0..c as u32)).collect();
        let alpha = (0..out_f).map(|_| rng.random_range(0.0..2.0)).collect();
        let mu = (0..out_f).map(|_| rng.random_range(-1.0..1.0)).collect();
        (cb, idx, alpha, mu)
    }

    fn dense_weights(cb: &BinaryCodebook, idx: &[u32], alpha: &[f64], mu: &[f64], out_f: usize, in_f: usize) -> DenseMatrix {
        let v = cb.v();
        DenseMatrix::from_fn(out_f, in_f, |r, col| {
            alpha[r] * cb.centroids.sign(idx[r * (in_f / v) + col / v] as usize, col % v) + mu[r]
        })
        .unwrap()
    }

    #[test]
    fn lut_gemm_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (cb, idx, alpha, mu) = layer_parts(&mut rng, 8, 32, 8, 16);
        let plan = LutGemmPlan::new(&cb, &idx, 8, 32, 8).unwrap();
        let x = DenseMatrix::from_fn(4, 32, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let got = lut_gemm(&x, &plan, &alpha, &mu).unwrap();
        let want = matmul(&x, &dense_weights(&cb, &idx, &alpha, &mu, 8, 32)).unwrap();
        let scale = want.max_abs();
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() <= 1e-6 * scale);
        }
    }

    #[test]
    fn lut_gemm_unit_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (cb, idx, alpha, mu) = layer_parts(&mut rng, 4, 16, 8, 4);
        let plan = LutGemmPlan::new(&cb, &idx, 4, 16, 4).unwrap();
        let w = dense_weights(&cb, &idx, &alpha, &mu, 4, 16);
        for j in 0..16 {
            let x = DenseMatrix::from_fn(1, 16, |_, t| if t == j { 1.0 } else { 0.0 }).unwrap();
            let y = lut_gemm(&x, &plan, &alpha, &mu).unwrap();
            for r in 0..4 {
                assert!((y.get(0, r) - w.get(r, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_block_zero_indices() {
        let cb = BinaryCodebook::from_words(8, &[0b1010_0110, 0xff]).unwrap();
        let plan = LutGemmPlan::new(&cb, &[0, 0, 0], 3, 8, 8).unwrap();
        let x = DenseMatrix::from_rows(&[vec![1.0, -2.0, 0.5, 3.0, 1.0, 1.0, -1.0, 2.0]]).unwrap();
        let y = lut_gemm(&x, &plan, &[1.0; 3], &[0.0; 3]).unwrap();
        let cblut = plan.cbluts(x.row(0));
        for r in 0..3 {
            assert_eq!(y.get(0, r), cblut[0]);
        }
    }

    #[test]
    fn plan_validation() {
        let cb = BinaryCodebook::from_words(8, &[1, 2]).unwrap();
        assert!(matches!(LutGemmPlan::new(&cb, &[0], 1, 12, 4), Err(Error::Shape(_))));
        assert!(matches!(LutGemmPlan::new(&cb, &[0, 0], 1, 8, 4), Err(Error::Shape(_))));
        assert!(matches!(LutGemmPlan::new(&cb, &[2], 1, 8, 4), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(LutGemmPlan::new(&cb, &[1], 1, 8, 2), Err(Error::Config(_))));
        let plan = LutGemmPlan::new(&cb, &[1], 1, 8, 4).unwrap();
        assert!(lut_gemm(&DenseMatrix::zeros(1, 4), &plan, &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn sign_gemm_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let signs = PackedBinaryMatrix::from_fn(5, 70, |_, _| rng.random_bool(0.5));
        let alpha: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        let mu: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = DenseMatrix::from_fn(3, 70, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let w = DenseMatrix::from_fn(5, 70, |r, c| alpha[r] * signs.sign(r, c) + mu[r]).unwrap();
        let got = sign_gemm(&x, &signs, &alpha, &mu).unwrap();
        let want = matmul(&x, &w).unwrap();
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-9);
        }
    }

    #[test]
    fn bench_report_shape() {
        let sizes = [BenchSize {
            batch: 2,
            out_features: 16,
            in_features: 32,
        }];
        assert!(bench_lut_vs_dense(&sizes, 0, BenchParams::default()).unwrap().is_empty());
        let report = bench_lut_vs_dense(&sizes, 3, BenchParams::default()).unwrap();
        assert_eq!(report.len(), 3);
        let two = [sizes[0], sizes[0]];
        assert_eq!(bench_lut_vs_dense(&two, 1, BenchParams::default()).unwrap().len(), 6);
        assert!(report[0].to_string().starts_with("2x16x32\tdense\t"));
        assert_eq!("64x256x256".parse::<BenchSize>().unwrap().in_features, 256);
        assert!("64x256".parse::<BenchSize>().is_err());
    }
}
