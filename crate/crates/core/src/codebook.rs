//! Binary codebook: vector extraction, frequency initialization, popcount
//! E-step, sign-majority M-step and reconstruction.
//!
//! Vectors are at most 64 entries long, so every vector and centroid is a
//! single `u64` word under the crate-wide bit convention.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{BoolMatrix, DenseMatrix, PackedBinaryMatrix};

pub const MAX_VECTOR_LEN: usize = 64;

/// Binary vectors cut from the non-zero entries of a sign matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryVectorSet {
    pub vectors: PackedBinaryMatrix,
    pub pad_len: usize,
    pub origin_mask: BoolMatrix,
}

impl BinaryVectorSet {
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn v(&self) -> usize {
        self.vectors.cols()
    }

    #[inline]
    pub fn word(&self, i: usize) -> u64 {
        self.vectors.row_words(i)[0]
    }

    fn check(&self) -> Result<()> {
        let v = self.v();
        let sources = self.origin_mask.count_true();
        if self.len() * v != sources + self.pad_len || (self.len() > 0 && self.pad_len >= v) {
            return Err(Error::Integrity(format!(
                "{} vectors of length {v} cannot hold {sources} entries plus {} pads",
                self.len(),
                self.pad_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCodebook {
    pub centroids: PackedBinaryMatrix,
}

impl BinaryCodebook {
    pub fn new(centroids: PackedBinaryMatrix) -> Result<Self> {
        let (c, v) = (centroids.rows(), centroids.cols());
        if c == 0 {
            return Err(Error::Argument("codebook needs at least one centroid".into()));
        }
        if v == 0 || v > MAX_VECTOR_LEN {
            return Err(Error::Argument(format!("vector length {v} not in 1..={MAX_VECTOR_LEN}")));
        }
        if v < 64 && c as u128 > 1u128 << v {
            return Err(Error::Argument(format!("{c} centroids exceed 2^{v} patterns")));
        }
        Ok(Self { centroids })
    }

    pub fn from_words(v: usize, words: &[u64]) -> Result<Self> {
        Self::new(PackedBinaryMatrix::from_words(words.len(), v, words.to_vec())?)
    }

    pub fn c(&self) -> usize {
        self.centroids.rows()
    }

    pub fn v(&self) -> usize {
        self.centroids.cols()
    }

    #[inline]
    pub fn word(&self, k: usize) -> u64 {
        self.centroids.row_words(k)[0]
    }

    pub fn words(&self) -> &[u64] {
        self.centroids.words()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub z: Vec<u32>,
}

fn vector_mask(v: usize) -> u64 {
    if v == 64 {
        u64::MAX
    } else {
        (1u64 << v) - 1
    }
}

/// Extracts non-zero entries of `b_masked` in row-major order, pads with
/// alternating `+1, -1, …` to a multiple of `v`, and cuts length-`v` vectors.
pub fn weight_to_vector(b_masked: &DenseMatrix, v: usize) -> Result<BinaryVectorSet> {
    if v == 0 || v > MAX_VECTOR_LEN {
        return Err(Error::Argument(format!("vector length {v} not in 1..={MAX_VECTOR_LEN}")));
    }
    let (n, m) = b_masked.shape();
    let mut origin = Vec::with_capacity(n * m);
    let mut bits = Vec::with_capacity(n * m);
    for i in 0..n {
        for (j, &x) in b_masked.row(i).iter().enumerate() {
            match x {
                1.0 => bits.push(true),
                -1.0 => bits.push(false),
                0.0 => {
                    origin.push(false);
                    continue;
                }
                other => {
                    return Err(Error::Domain {
                        row: i,
                        col: j,
                        msg: format!("expected -1, 0 or +1, found {other}"),
                    })
                }
            }
            origin.push(true);
        }
    }
    let pad_len = (v - bits.len() % v) % v;
    bits.extend((0..pad_len).map(|k| k % 2 == 0));
    let count = bits.len() / v;
    Ok(BinaryVectorSet {
        vectors: PackedBinaryMatrix::from_fn(count, v, |r, t| bits[r * v + t]),
        pad_len,
        origin_mask: BoolMatrix::new(n, m, origin)?,
    })
}

/// Inverse of [`weight_to_vector`]: drops pads and scatters entries back to
/// their source positions, zeros elsewhere.
pub fn vector_to_weight(set: &BinaryVectorSet) -> Result<DenseMatrix> {
    set.check()?;
    let (n, m) = set.origin_mask.shape();
    let v = set.v();
    let mut out = vec![0.0; n * m];
    let mut k = 0usize;
    for (pos, &src) in set.origin_mask.data().iter().enumerate() {
        if src {
            out[pos] = set.vectors.sign(k / v, k % v);
            k += 1;
        }
    }
    Ok(DenseMatrix::from_vec_unchecked(n, m, out))
}

/// Distinct patterns with multiplicities, sorted by descending count, then
/// ascending pattern value.
pub fn unique_vectors(set: &BinaryVectorSet) -> (Vec<u64>, Vec<usize>) {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for i in 0..set.len() {
        *counts.entry(set.word(i)).or_default() += 1;
    }
    let mut pairs: Vec<(u64, usize)> = counts.into_iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    pairs.into_iter().unzip()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InitStrategy {
    /// Top-`c` most frequent patterns.
    #[default]
    Frequency,
    /// `c` patterns sampled without replacement from the frequency-filtered candidates.
    Random { seed: u64 },
}

/// Initial centroids from unique patterns.
///
/// With `|U| ≤ c` the codebook is `U` itself (exact mode). Otherwise
/// patterns with relative frequency below `freq_threshold` are dropped,
/// unless that would leave fewer than `c` candidates.
pub fn init_codebook(
    v: usize,
    unique: &[u64],
    counts: &[usize],
    c: usize,
    freq_threshold: f64,
    strategy: InitStrategy,
) -> Result<BinaryCodebook> {
    if unique.is_empty() {
        return Err(Error::Argument("no vectors to build a codebook from".into()));
    }
    if c == 0 {
        return Err(Error::Argument("codebook size must be at least 1".into()));
    }
    if unique.len() != counts.len() {
        return Err(Error::Shape("unique patterns and counts differ in length".into()));
    }
    if unique.len() <= c {
        return BinaryCodebook::from_words(v, unique);
    }
    let total: usize = counts.iter().sum();
    let filtered: Vec<u64> = unique
        .iter()
        .zip(counts)
        .filter(|(_, &n)| n as f64 / total as f64 >= freq_threshold)
        .map(|(&u, _)| u)
        .collect();
    let pool: &[u64] = if filtered.len() >= c { &filtered } else { unique };
    let chosen: Vec<u64> = match strategy {
        InitStrategy::Frequency => pool[..c].to_vec(),
        InitStrategy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            pool.choose_multiple(&mut rng, c).copied().collect()
        }
    };
    BinaryCodebook::from_words(v, &chosen)
}

/// Nearest centroid by Hamming distance, lowest index on ties. Exact
/// matches short-circuit through a pattern lookup.
pub fn assign(set: &BinaryVectorSet, codebook: &BinaryCodebook) -> Result<Assignment> {
    if set.v() != codebook.v() {
        return Err(Error::Shape(format!(
            "vector length {} vs codebook length {}",
            set.v(),
            codebook.v()
        )));
    }
    let mut exact: HashMap<u64, u32> = HashMap::with_capacity(codebook.c());
    for k in 0..codebook.c() {
        exact.entry(codebook.word(k)).or_insert(k as u32);
    }
    let centroids = codebook.words();
    let z = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let b = set.word(i);
            if let Some(&k) = exact.get(&b) {
                return k;
            }
            let mut best = (u32::MAX, 0u32);
            for (k, c) in centroids.iter().enumerate() {
                let d = (b ^ c).count_ones();
                if d < best.0 {
                    best = (d, k as u32);
                }
            }
            best.1
        })
        .collect();
    Ok(Assignment { z })
}

/// Per-coordinate majority of each cluster (`sign(mean)`, ties to `+1`).
/// Empty clusters keep their previous centroid.
pub fn update_centroids(set: &BinaryVectorSet, z: &Assignment, previous: &BinaryCodebook) -> Result<BinaryCodebook> {
    let (c, v) = (previous.c(), previous.v());
    if z.z.len() != set.len() {
        return Err(Error::Shape("assignment length differs from vector count".into()));
    }
    let mut ones = vec![0u32; c * v];
    let mut sizes = vec![0u32; c];
    for (i, &k) in z.z.iter().enumerate() {
        let k = k as usize;
        if k >= c {
            return Err(Error::Integrity(format!("assignment {k} >= codebook size {c}")));
        }
        sizes[k] += 1;
        let mut word = set.word(i);
        while word != 0 {
            let t = word.trailing_zeros() as usize;
            ones[k * v + t] += 1;
            word &= word - 1;
        }
    }
    let words: Vec<u64> = (0..c)
        .map(|k| {
            if sizes[k] == 0 {
                return previous.word(k);
            }
            (0..v).fold(0u64, |acc, t| {
                // mean ≥ 0  ⇔  2·ones ≥ size
                if 2 * ones[k * v + t] >= sizes[k] {
                    acc | 1 << t
                } else {
                    acc
                }
            })
        })
        .collect();
    BinaryCodebook::from_words(v, &words)
}

/// `Σᵢ d_H(bᵢ, c_{zᵢ})`.
pub fn clustering_objective(set: &BinaryVectorSet, codebook: &BinaryCodebook, z: &Assignment) -> u64 {
    z.z.iter()
        .enumerate()
        .map(|(i, &k)| u64::from((set.word(i) ^ codebook.word(k as usize)).count_ones()))
        .sum()
}

/// Gathers `C[z]` and scatters back to the source layout.
pub fn reconstruct(codebook: &BinaryCodebook, z: &Assignment, origin: &BinaryVectorSet) -> Result<DenseMatrix> {
    if z.z.len() != origin.len() {
        return Err(Error::Integrity(format!(
            "{} indices for {} vectors",
            z.z.len(),
            origin.len()
        )));
    }
    let mut words = Vec::with_capacity(z.z.len());
    for (pos, &k) in z.z.iter().enumerate() {
        if k as usize >= codebook.c() {
            return Err(Error::IndexOutOfRange {
                position: pos,
                index: u64::from(k),
                c: codebook.c(),
            });
        }
        words.push(codebook.word(k as usize) & vector_mask(codebook.v()));
    }
    let gathered = BinaryVectorSet {
        vectors: PackedBinaryMatrix::from_words(words.len(), codebook.v(), words)?,
        pad_len: origin.pad_len,
        origin_mask: origin.origin_mask.clone(),
    };
    vector_to_weight(&gathered)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookConfig {
    pub v: usize,
    pub c: usize,
    pub max_iter: usize,
    pub freq_threshold: f64,
    pub init: InitStrategy,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            v: 10,
            c: 256,
            max_iter: 5,
            freq_threshold: 0.01,
            init: InitStrategy::Frequency,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookResult {
    pub codebook: BinaryCodebook,
    pub assignment: Assignment,
    pub vectors: BinaryVectorSet,
    pub b_hat: DenseMatrix,
    /// `‖W − (αB̂ + μ)‖²` over mask-true positions.
    pub loss: f64,
    /// Clustering objective after every E- and M-step.
    pub trace: Vec<u64>,
    /// True when the unique patterns fit in the codebook and no clustering ran.
    pub exact: bool,
    pub iterations: usize,
}

/// Codebook optimization over the non-zero entries of `b_masked`.
///
/// Runs initialization, then alternates E and M steps until assignments
/// stop changing or `max_iter` rounds have run. A closing E-step keeps the
/// returned indices consistent with the returned centroids.
pub fn optimize_codebook(
    b_masked: &DenseMatrix,
    w: &DenseMatrix,
    mask: &BoolMatrix,
    mu: &[f64],
    alpha: &[f64],
    cfg: &CodebookConfig,
) -> Result<CodebookResult> {
    let (n, m) = b_masked.shape();
    if w.shape() != (n, m) || mask.shape() != (n, m) || mu.len() != n || alpha.len() != n {
        return Err(Error::Shape("codebook inputs have inconsistent shapes".into()));
    }
    if cfg.max_iter == 0 {
        return Err(Error::Argument("max_iter must be at least 1".into()));
    }
    let set = weight_to_vector(b_masked, cfg.v)?;
    if set.is_empty() {
        let codebook = BinaryCodebook::from_words(cfg.v, &[0])?;
        return finish(set, codebook, Assignment { z: vec![] }, w, mask, mu, alpha, vec![], true, 0);
    }
    let (unique, counts) = unique_vectors(&set);
    let mut codebook = init_codebook(cfg.v, &unique, &counts, cfg.c, cfg.freq_threshold, cfg.init)?;

    if unique.len() <= cfg.c {
        let z = assign(&set, &codebook)?;
        let trace = vec![clustering_objective(&set, &codebook, &z)];
        return finish(set, codebook, z, w, mask, mu, alpha, trace, true, 0);
    }

    let mut trace = Vec::new();
    let mut previous: Option<Assignment> = None;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let z = assign(&set, &codebook)?;
        trace.push(clustering_objective(&set, &codebook, &z));
        if previous.as_ref() == Some(&z) {
            converged = true;
            previous = Some(z);
            break;
        }
        codebook = update_centroids(&set, &z, &codebook)?;
        trace.push(clustering_objective(&set, &codebook, &z));
        previous = Some(z);
    }
    let z = if converged {
        previous.expect("converged implies an assignment")
    } else {
        let z = assign(&set, &codebook)?;
        trace.push(clustering_objective(&set, &codebook, &z));
        z
    };
    debug_assert!(trace.windows(2).all(|p| p[1] <= p[0]), "EM trace increased: {trace:?}");
    finish(set, codebook, z, w, mask, mu, alpha, trace, false, iterations)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    set: BinaryVectorSet,
    codebook: BinaryCodebook,
    assignment: Assignment,
    w: &DenseMatrix,
    mask: &BoolMatrix,
    mu: &[f64],
    alpha: &[f64],
    trace: Vec<u64>,
    exact: bool,
    iterations: usize,
) -> Result<CodebookResult> {
    let b_hat = reconstruct(&codebook, &assignment, &set)?;
    let mut loss = 0.0;
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            if mask.get(i, j) {
                loss += (w.get(i, j) - (alpha[i] * b_hat.get(i, j) + mu[i])).powi(2);
            }
        }
    }
    Ok(CodebookResult {
        codebook,
        assignment,
        vectors: set,
        b_hat,
        loss,
        trace,
        exact,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn signs(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn set_of(v: usize, patterns: &[&[f64]]) -> BinaryVectorSet {
        weight_to_vector(&signs(patterns), v).unwrap()
    }

    fn word(pattern: &[f64]) -> u64 {
        pattern
            .iter()
            .enumerate()
            .fold(0, |acc, (t, &s)| if s > 0.0 { acc | 1 << t } else { acc })
    }

    #[test]
    fn hand_trace_of_extraction() {
        let b = signs(&[&[1.0, -1.0, 1.0, -1.0, 0.0, 1.0]]);
        let set = weight_to_vector(&b, 3).unwrap();
        assert_eq!(set.pad_len, 1);
        assert_eq!(set.len(), 2);
        assert_eq!(set.word(0), word(&[1.0, -1.0, 1.0]));
        assert_eq!(set.word(1), word(&[-1.0, 1.0, 1.0]));
        assert_eq!(vector_to_weight(&set).unwrap(), b);
    }

    #[test]
    fn pure_reshape_without_zeros() {
        let b = signs(&[&[1.0, -1.0, -1.0, 1.0], &[1.0, 1.0, -1.0, -1.0]]);
        let set = weight_to_vector(&b, 4).unwrap();
        assert_eq!(set.pad_len, 0);
        assert_eq!(set.word(0), 0b1001);
        assert_eq!(set.word(1), 0b0011);
    }

    #[test]
    fn alternating_pad_phase() {
        let b = signs(&[&[-1.0]]);
        let set = weight_to_vector(&b, 5).unwrap();
        assert_eq!(set.pad_len, 4);
        // -1 then pads +1, -1, +1, -1
        assert_eq!(set.word(0), 0b01010);
    }

    #[test]
    fn all_masked_input() {
        let b = DenseMatrix::zeros(2, 3);
        let set = weight_to_vector(&b, 4).unwrap();
        assert!(set.is_empty());
        assert_eq!(set.pad_len, 0);
        assert_eq!(vector_to_weight(&set).unwrap(), b);
    }

    #[test]
    fn extraction_errors() {
        assert!(matches!(weight_to_vector(&signs(&[&[1.0]]), 0), Err(Error::Argument(_))));
        assert!(matches!(weight_to_vector(&signs(&[&[0.5]]), 2), Err(Error::Domain { .. })));
        let mut set = weight_to_vector(&signs(&[&[1.0, 1.0]]), 2).unwrap();
        set.pad_len = 1;
        assert!(matches!(vector_to_weight(&set), Err(Error::Integrity(_))));
    }

    #[test]
    fn unique_examples() {
        let set = set_of(2, &[&[1.0, 1.0, 1.0, 1.0, -1.0, 1.0]]);
        let (u, counts) = unique_vectors(&set);
        assert_eq!(u, vec![0b11, 0b10]);
        assert_eq!(counts, vec![2, 1]);

        let same = set_of(3, &[&[1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 1.0, -1.0, 1.0]]);
        assert_eq!(unique_vectors(&same), (vec![0b101], vec![3]));
    }

    #[test]
    fn unique_covers_multiset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = DenseMatrix::from_fn(20, 30, |_, _| if rng.random_bool(0.7) { 1.0 } else { -1.0 }).unwrap();
        let set = weight_to_vector(&b, 10).unwrap();
        let (u, counts) = unique_vectors(&set);
        assert_eq!(counts.iter().sum::<usize>(), set.len());
        let mut oracle: HashMap<u64, usize> = HashMap::new();
        for i in 0..set.len() {
            *oracle.entry(set.word(i)).or_default() += 1;
        }
        assert_eq!(oracle.len(), u.len());
        for (p, n) in u.iter().zip(&counts) {
            assert_eq!(oracle[p], *n);
        }
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn init_exact_mode_shrinks_codebook() {
        let cb = init_codebook(4, &[3, 5, 9], &[4, 2, 1], 8, 0.01, InitStrategy::Frequency).unwrap();
        assert_eq!(cb.c(), 3);
        assert_eq!(cb.words(), &[3, 5, 9]);
        assert!(init_codebook(4, &[], &[], 8, 0.01, InitStrategy::Frequency).is_err());
    }

    #[test]
    fn init_dominant_pattern_first() {
        let unique: Vec<u64> = (0..100).collect();
        let mut counts = vec![1usize; 100];
        counts[0] = 90;
        let cb = init_codebook(8, &unique, &counts, 4, 0.01, InitStrategy::Frequency).unwrap();
        assert_eq!(cb.word(0), 0);
    }

    #[test]
    fn threshold_never_starves_initialization() {
        // only two patterns clear a 10% threshold but four centroids are wanted
        let unique: Vec<u64> = (0..20).collect();
        let mut counts = vec![1usize; 20];
        counts[0] = 50;
        counts[1] = 30;
        for strategy in [InitStrategy::Frequency, InitStrategy::Random { seed: 9 }] {
            let cb = init_codebook(8, &unique, &counts, 4, 0.1, strategy).unwrap();
            assert_eq!(cb.c(), 4);
        }
    }

    #[test]
    fn random_init_is_seeded() {
        let unique: Vec<u64> = (0..50).collect();
        let counts = vec![5usize; 50];
        let a = init_codebook(8, &unique, &counts, 6, 0.0, InitStrategy::Random { seed: 1 }).unwrap();
        let b = init_codebook(8, &unique, &counts, 6, 0.0, InitStrategy::Random { seed: 1 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn assign_examples() {
        let cb = BinaryCodebook::from_words(3, &[0b000, 0b011, 0b101]).unwrap();
        let set = set_of(3, &[&[1.0, -1.0, 1.0]]);
        assert_eq!(assign(&set, &cb).unwrap().z, vec![2]);
        // 0b110 is at distance 2 from every centroid → lowest index
        let cb2 = BinaryCodebook::from_words(3, &[0b000, 0b101]).unwrap();
        let set = set_of(3, &[&[-1.0, 1.0, 1.0]]);
        assert_eq!(assign(&set, &cb2).unwrap().z, vec![0]);
    }

    #[test]
    fn assign_matches_dense_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let v = rng.random_range(1..=16);
            let c = rng.random_range(1..=8usize.min(1 << v));
            let words: Vec<u64> = (0..c).map(|_| rng.random::<u64>() & vector_mask(v)).collect();
            let cb = BinaryCodebook::from_words(v, &words).unwrap();
            let b = DenseMatrix::from_fn(12, v, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).unwrap();
            let set = weight_to_vector(&b, v).unwrap();
            let z = assign(&set, &cb).unwrap();
            for i in 0..12 {
                let mut best = (f64::INFINITY, 0);
                for k in 0..c {
                    let d: f64 = (0..v).map(|t| (b.get(i, t) - cb.centroids.sign(k, t)).powi(2)).sum();
                    if d < best.0 {
                        best = (d, k as u32);
                    }
                }
                assert_eq!(z.z[i], best.1);
            }
        }
    }

    #[test]
    fn update_examples() {
        let set = set_of(3, &[&[1.0, 1.0, -1.0], &[1.0, -1.0, -1.0], &[1.0, 1.0, 1.0]]);
        let prev = BinaryCodebook::from_words(3, &[0, 7]).unwrap();
        let cb = update_centroids(&set, &Assignment { z: vec![0, 0, 0] }, &prev).unwrap();
        assert_eq!(cb.word(0), word(&[1.0, 1.0, -1.0]));
        assert_eq!(cb.word(1), 7, "empty cluster keeps its centroid");

        let set = set_of(2, &[&[1.0, -1.0], &[-1.0, 1.0]]);
        let prev = BinaryCodebook::from_words(2, &[0]).unwrap();
        let cb = update_centroids(&set, &Assignment { z: vec![0, 0] }, &prev).unwrap();
        assert_eq!(cb.word(0), 0b11);
    }

    #[test]
    fn majority_is_the_binary_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..30 {
            let v = rng.random_range(1..=10);
            let members = rng.random_range(1..=9);
            let b = DenseMatrix::from_fn(members, v, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).unwrap();
            let set = weight_to_vector(&b, v).unwrap();
            let prev = BinaryCodebook::from_words(v, &[0]).unwrap();
            let cb = update_centroids(&set, &Assignment { z: vec![0; members] }, &prev).unwrap();
            let cost = |c: u64| -> u32 { (0..members).map(|i| (set.word(i) ^ c).count_ones()).sum() };
            let best = (0..1u64 << v).map(cost).min().unwrap();
            assert_eq!(cost(cb.word(0)), best);
        }
    }

    #[test]
    fn reconstruct_examples() {
        let b = signs(&[&[1.0, -1.0, 1.0, 1.0], &[-1.0, -1.0, 1.0, -1.0]]);
        let set = weight_to_vector(&b, 2).unwrap();
        let (u, counts) = unique_vectors(&set);
        let cb = init_codebook(2, &u, &counts, 8, 0.0, InitStrategy::Frequency).unwrap();
        let z = assign(&set, &cb).unwrap();
        assert_eq!(reconstruct(&cb, &z, &set).unwrap(), b);

        let zeros = Assignment { z: vec![0; set.len()] };
        let all0 = reconstruct(&cb, &zeros, &set).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                assert_eq!(all0.get(i, j), cb.centroids.sign(0, j % 2));
            }
        }
        let bad = Assignment { z: vec![9; set.len()] };
        assert!(matches!(reconstruct(&cb, &bad, &set), Err(Error::IndexOutOfRange { .. })));
    }

    fn run(b: &DenseMatrix, v: usize, c: usize, max_iter: usize) -> CodebookResult {
        let (n, m) = b.shape();
        let cfg = CodebookConfig {
            v,
            c,
            max_iter,
            ..Default::default()
        };
        optimize_codebook(b, b, &BoolMatrix::filled(n, m, true), &vec![0.0; n], &vec![1.0; n], &cfg).unwrap()
    }

    #[test]
    fn exact_mode_reproduces_input() {
        let b = signs(&[&[1.0, 1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0]]);
        let r = run(&b, 2, 4, 5);
        assert!(r.exact);
        assert_eq!(r.b_hat, b);
        assert_eq!(r.loss, 0.0);
    }

    #[test]
    fn single_centroid_is_global_majority() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let v = rng.random_range(2..=8);
            let b = DenseMatrix::from_fn(16, v, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).unwrap();
            let r = run(&b, v, 1, 5);
            let set = &r.vectors;
            let cost = |c: u64| -> u64 { (0..set.len()).map(|i| u64::from((set.word(i) ^ c).count_ones())).sum() };
            let best = (0..1u64 << v).map(cost).min().unwrap();
            assert_eq!(*r.trace.last().unwrap(), best);
            // loss is 4 × mismatches when alpha = 1, mu = 0 and W = B
            assert_eq!(r.loss, 4.0 * best as f64);
        }
    }

    #[test]
    fn em_trace_is_monotone_and_counts_mismatches() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let b = DenseMatrix::from_fn(24, 40, |_, _| if rng.random_bool(0.6) { 1.0 } else { -1.0 }).unwrap();
            let r = run(&b, 8, 16, 10);
            assert!(!r.exact);
            assert!(r.trace.windows(2).all(|p| p[1] <= p[0]), "{:?}", r.trace);
            let mismatches = b.data().iter().zip(r.b_hat.data()).filter(|(a, b)| a != b).count() as u64;
            assert_eq!(mismatches, clustering_objective(&r.vectors, &r.codebook, &r.assignment));
        }
    }

    #[test]
    fn loss_only_counts_mask_positions() {
        let b = signs(&[&[1.0, -1.0, 1.0, -1.0]]);
        let w = DenseMatrix::from_rows(&[vec![1.0, -1.0, 100.0, -1.0]]).unwrap();
        let mut mask = BoolMatrix::filled(1, 4, true);
        let cfg = CodebookConfig { v: 2, c: 4, ..Default::default() };
        let full = optimize_codebook(&b, &w, &mask, &[0.0], &[1.0], &cfg).unwrap();
        assert_eq!(full.loss, 99.0 * 99.0);
        mask = BoolMatrix::new(1, 4, vec![true, true, false, true]).unwrap();
        let masked = optimize_codebook(&b, &w, &mask, &[0.0], &[1.0], &cfg).unwrap();
        assert_eq!(masked.loss, 0.0);
    }

    #[test]
    fn optimize_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let b = DenseMatrix::from_fn(16, 32, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).unwrap();
        assert_eq!(run(&b, 8, 8, 5), run(&b, 8, 8, 5));
    }

    proptest! {
        #[test]
        fn extraction_round_trips(
            (rows, cols, cells) in (1usize..6, 1usize..12).prop_flat_map(|(r, c)| {
                (Just(r), Just(c), proptest::collection::vec(0u8..3, r * c))
            }),
            v in 1usize..9,
        ) {
            let data: Vec<f64> = cells.iter().map(|&k| [0.0, 1.0, -1.0][k as usize]).collect();
            let b = DenseMatrix::new(rows, cols, data).unwrap();
            let set = weight_to_vector(&b, v).unwrap();
            prop_assert!(set.pad_len < v);
            prop_assert_eq!(vector_to_weight(&set).unwrap(), b);
        }
    }
}
