//! Label-privacy leakage of shuffled batch uploads.
//!
//! A client's batch of `K` one-hot labels over `N` classes is summarized by
//! its unordered type: the length-`N` count vector summing to `K`. The
//! adversary's prior uncertainty is the entropy of the multinomial type
//! distribution; after seeing all `U` shuffled batches its best guess for
//! any one client is the empirical type frequency, and leakage is the drop
//! in entropy between the two.

use std::collections::BTreeMap;

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedMul};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Enumeration cap on the number of batch types.
pub const DEFAULT_TYPE_CAP: u128 = 10_000_000;

/// Label counts of one unordered batch.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct BatchType(Vec<u32>);

impl BatchType {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid("batch type needs at least one class"));
        }
        Ok(Self(counts))
    }

    /// Tallies a batch of labels in `0..classes`.
    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self> {
        let mut counts = vec![0u32; classes];
        for &l in labels {
            *counts
                .get_mut(l)
                .ok_or_else(|| Error::invalid(format!("label {l} outside {classes} classes")))? += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    /// Batch size `K`.
    pub fn size(&self) -> u64 {
        self.0.iter().map(|&c| u64::from(c)).sum()
    }
}

/// `C(n, k)` in `u128`, `None` on overflow.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = acc.checked_mul(u128::from(n - i))? / u128::from(i + 1);
    }
    Some(acc)
}

/// `|B| = C(N + K - 1, K)`.
pub fn batch_type_count(classes: usize, batch: u64) -> Option<u128> {
    if classes == 0 {
        return Some(0);
    }
    binomial(classes as u64 + batch - 1, batch)
}

/// Every composition of `batch` into `classes` non-negative parts, in
/// descending lexicographic order: `(K,0,..)` first, `(..,0,K)` last.
pub fn enumerate_batch_types(classes: usize, batch: u64, cap: u128) -> Result<Vec<BatchType>> {
    if classes == 0 {
        return Err(Error::invalid("need at least one class"));
    }
    let count = batch_type_count(classes, batch).unwrap_or(u128::MAX);
    if count > cap {
        return Err(Error::CapExceeded { count, cap });
    }
    let batch = u32::try_from(batch).map_err(|_| Error::invalid("batch size too large"))?;
    let mut out = Vec::with_capacity(count as usize);
    let mut cur = vec![0u32; classes];
    fill(&mut cur, 0, batch, &mut out);
    Ok(out)
}

fn fill(cur: &mut Vec<u32>, pos: usize, left: u32, out: &mut Vec<BatchType>) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(BatchType(cur.clone()));
        return;
    }
    for take in (0..=left).rev() {
        cur[pos] = take;
        fill(cur, pos + 1, left - take, out);
    }
    cur[pos] = 0;
}

/// Class probabilities of a single label.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelDistribution(Vec<f64>);

impl LabelDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("label distribution is empty"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("label probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("label probabilities sum to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    /// `y0 = [1/N, ..., 1/N]`.
    pub fn uniform(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::invalid("need at least one class"));
        }
        Ok(Self(vec![1.0 / classes as f64; classes]))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    /// Draws one batch of `batch` i.i.d. labels and returns its type.
    pub fn sample_type<R: Rng + ?Sized>(&self, batch: u64, rng: &mut R) -> BatchType {
        let dist = WeightedIndex::new(&self.0).expect("validated weights");
        let mut counts = vec![0u32; self.0.len()];
        for _ in 0..batch {
            counts[dist.sample(rng)] += 1;
        }
        BatchType(counts)
    }
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|i| f64::from(i).ln()).sum()
}

/// Natural log of the multinomial probability of `b`; `-inf` when `b`
/// needs a class of zero probability.
fn ln_type_prob(b: &BatchType, y: &LabelDistribution) -> f64 {
    let k: u32 = b.0.iter().sum();
    let mut ln = ln_factorial(k);
    for (&n, &p) in b.0.iter().zip(&y.0) {
        if n == 0 {
            continue;
        }
        if p == 0.0 {
            return f64::NEG_INFINITY;
        }
        ln += f64::from(n) * p.ln() - ln_factorial(n);
    }
    ln
}

/// `K! / prod(n_a!) * prod(y_a^{n_a})`. For uniform `y` this is
/// `K! / (N^K prod(n_a!))`.
pub fn batch_type_prob(b: &BatchType, y: &LabelDistribution) -> Result<f64> {
    if b.classes() != y.classes() {
        return Err(Error::invalid(format!(
            "batch type has {} classes, label distribution {}",
            b.classes(),
            y.classes()
        )));
    }
    Ok(ln_type_prob(b, y).exp())
}

/// Probability map over batch types.
#[derive(Clone, Debug, PartialEq, Default, Serialize)]
pub struct BatchDistribution(BTreeMap<BatchType, f64>);

impl BatchDistribution {
    pub fn new(map: BTreeMap<BatchType, f64>) -> Result<Self> {
        if map.values().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("batch probabilities must be finite and non-negative"));
        }
        let total: f64 = map.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("batch probabilities sum to {total}, not 1")));
        }
        Ok(Self(map))
    }

    /// Exact type distribution of `K`-label batches drawn from `y`.
    pub fn prior(y: &LabelDistribution, batch: u64, cap: u128) -> Result<Self> {
        let types = enumerate_batch_types(y.classes(), batch, cap)?;
        let map = types
            .into_iter()
            .map(|b| {
                let p = ln_type_prob(&b, y).exp();
                (b, p)
            })
            .collect();
        Self::new(map)
    }

    pub fn get(&self, b: &BatchType) -> f64 {
        self.0.get(b).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BatchType, f64)> {
        self.0.iter().map(|(b, p)| (b, *p))
    }

    pub fn entropy_bits(&self) -> f64 {
        entropy_bits(self.0.values().copied())
    }

    /// Half the L1 distance between two distributions.
    pub fn total_variation(&self, other: &BatchDistribution) -> f64 {
        let mut sum = 0.0;
        for (b, p) in &self.0 {
            sum += (p - other.get(b)).abs();
        }
        for (b, q) in &other.0 {
            if !self.0.contains_key(b) {
                sum += q;
            }
        }
        0.5 * sum
    }
}

/// `-sum p log2 p` with `0 log 0 = 0`.
pub fn entropy_bits(probs: impl IntoIterator<Item = f64>) -> f64 {
    let h: f64 = probs.into_iter().filter(|&p| p > 0.0).map(|p| -p * p.log2()).sum();
    // a point mass evaluates to -0.0
    h.max(0.0)
}

/// Type counts `s(b)` over `U` shuffled batches.
#[derive(Clone, Debug, PartialEq, Default, Serialize)]
pub struct ShuffleObservation {
    counts: BTreeMap<BatchType, u64>,
    total: u64,
}

impl ShuffleObservation {
    pub fn from_batches<I: IntoIterator<Item = BatchType>>(batches: I) -> Self {
        let mut obs = Self::default();
        for b in batches {
            obs.push(b);
        }
        obs
    }

    pub fn from_counts(counts: BTreeMap<BatchType, u64>) -> Self {
        let total = counts.values().sum();
        Self { counts, total }
    }

    pub fn push(&mut self, b: BatchType) {
        *self.counts.entry(b).or_insert(0) += 1;
        self.total += 1;
    }

    /// `U`.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, b: &BatchType) -> u64 {
        self.counts.get(b).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<BatchType, u64> {
        &self.counts
    }

    /// Posterior entropy straight from the counts.
    pub fn entropy_bits(&self) -> f64 {
        let u = self.total as f64;
        entropy_bits(self.counts.values().map(|&s| s as f64 / u))
    }
}

/// `[s(1)/U, s(2)/U, ...]`.
pub fn empirical_distribution(obs: &ShuffleObservation) -> Result<BatchDistribution> {
    if obs.total == 0 {
        return Err(Error::invalid("observation holds no batches"));
    }
    let u = obs.total as f64;
    let map = obs
        .counts
        .iter()
        .filter(|(_, &s)| s > 0)
        .map(|(b, &s)| (b.clone(), s as f64 / u))
        .collect();
    BatchDistribution::new(map)
}

/// Prior entropy `H(B | Y = y)` in bits, exact or estimated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PriorEntropy {
    pub bits: f64,
    /// Zero for the exact enumeration.
    pub stderr: f64,
    pub exact: bool,
}

/// Exact enumeration when the type count is within `cap`, otherwise a
/// Monte Carlo estimate of `E[-log2 p(B)]` from `samples` drawn batches.
pub fn prior_entropy(y: &LabelDistribution, batch: u64, cap: u128, samples: usize, seed: u64) -> Result<PriorEntropy> {
    match BatchDistribution::prior(y, batch, cap) {
        Ok(dist) => Ok(PriorEntropy {
            bits: dist.entropy_bits(),
            stderr: 0.0,
            exact: true,
        }),
        Err(Error::CapExceeded { .. }) => {
            if samples < 2 {
                return Err(Error::invalid("Monte Carlo prior entropy needs at least two samples"));
            }
            let mut rng = rng_for(seed, "prior-entropy", &[]);
            let draws: Vec<f64> = (0..samples)
                .map(|_| -ln_type_prob(&y.sample_type(batch, &mut rng), y) / std::f64::consts::LN_2)
                .collect();
            let (mean, stderr) = mean_and_stderr(&draws);
            Ok(PriorEntropy {
                bits: mean,
                stderr,
                exact: false,
            })
        }
        Err(e) => Err(e),
    }
}

/// `H(B | Y = y) - H(B | S = s)`. May be negative for a single draw.
pub fn leakage_bits(prior_bits: f64, obs: &ShuffleObservation) -> Result<f64> {
    Ok(prior_bits - empirical_distribution(obs)?.entropy_bits())
}

/// [`leakage_bits`] with the prior computed by exact enumeration.
pub fn leakage_bits_exact(y: &LabelDistribution, obs: &ShuffleObservation, batch: u64) -> Result<f64> {
    for b in obs.counts.keys() {
        if b.classes() != y.classes() || b.size() != batch {
            return Err(Error::invalid("observation contains a batch outside the (N, K) space"));
        }
    }
    let prior = BatchDistribution::prior(y, batch, DEFAULT_TYPE_CAP)?;
    leakage_bits(prior.entropy_bits(), obs)
}

/// Outcome of the exhaustive posterior check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PosteriorCheck {
    /// Distinct observations `s` reachable from some type sequence.
    pub observations: usize,
    /// `(s, b)` pairs with `s(b) >= 1` compared.
    pub comparisons: usize,
    pub mismatches: usize,
}

impl PosteriorCheck {
    pub fn holds(&self) -> bool {
        self.mismatches == 0 && self.comparisons > 0
    }
}

/// Exhaustive Bayes check, with uniform labels, that the posterior of one
/// client's batch type given the prior and the shuffled observation equals
/// its frequency `s(b) / U`.
pub fn posterior_identity_check(classes: usize, batch: u64, clients: u32) -> Result<PosteriorCheck> {
    let denom = i128::try_from(classes).map_err(|_| Error::invalid("too many classes"))?;
    let y = vec![Ratio::new(1, denom); classes];
    posterior_identity_check_with(&y, batch, clients)
}

/// Largest number of ordered type sequences the exhaustive check visits.
pub const POSTERIOR_SEQUENCE_CAP: u128 = 5_000_000;

/// [`posterior_identity_check`] for an arbitrary rational label
/// distribution. All arithmetic is exact.
pub fn posterior_identity_check_with(y: &[Ratio<i128>], batch: u64, clients: u32) -> Result<PosteriorCheck> {
    if y.is_empty() || clients == 0 {
        return Err(Error::invalid("need at least one class and one client"));
    }
    let one = Ratio::from_integer(1);
    if y.iter().sum::<Ratio<i128>>() != one || y.iter().any(|p| *p < Ratio::from_integer(0)) {
        return Err(Error::invalid("label distribution must be non-negative and sum to 1"));
    }
    let types = enumerate_batch_types(y.len(), batch, DEFAULT_TYPE_CAP)?;
    let sequences = (types.len() as u128)
        .checked_pow(clients)
        .filter(|&n| n <= POSTERIOR_SEQUENCE_CAP)
        .ok_or_else(|| Error::invalid("too many type sequences for exhaustive enumeration"))?;

    let overflow = || Error::invalid("exact posterior arithmetic overflows i128");
    let probs: Vec<Ratio<i128>> = types.iter().map(|b| exact_type_prob(b, y)).collect::<Result<_>>()?;

    // joint[s][b] = P(B_1 = b, S = s); marginal[s] = P(S = s)
    let mut joint: BTreeMap<Vec<u32>, Vec<Ratio<i128>>> = BTreeMap::new();
    let zero = Ratio::from_integer(0);
    let mut seq = vec![0usize; clients as usize];
    for _ in 0..sequences {
        let mut p = one;
        let mut s = vec![0u32; types.len()];
        for &t in &seq {
            p = p.checked_mul(&probs[t]).ok_or_else(overflow)?;
            s[t] += 1;
        }
        let row = joint.entry(s).or_insert_with(|| vec![zero; types.len()]);
        row[seq[0]] = row[seq[0]].checked_add(&p).ok_or_else(overflow)?;
        // odometer increment
        for digit in seq.iter_mut() {
            *digit += 1;
            if *digit < types.len() {
                break;
            }
            *digit = 0;
        }
    }

    let u = i128::from(clients);
    let mut check = PosteriorCheck {
        observations: 0,
        comparisons: 0,
        mismatches: 0,
    };
    for (s, row) in &joint {
        let marginal: Ratio<i128> = row.iter().sum();
        if marginal == zero {
            continue;
        }
        check.observations += 1;
        for (b, &count) in s.iter().enumerate() {
            if count == 0 {
                continue;
            }
            check.comparisons += 1;
            if row[b] / marginal != Ratio::new(i128::from(count), u) {
                check.mismatches += 1;
            }
        }
    }
    Ok(check)
}

fn exact_type_prob(b: &BatchType, y: &[Ratio<i128>]) -> Result<Ratio<i128>> {
    let overflow = || Error::invalid("exact type probability overflows i128");
    let k: u32 = b.counts().iter().sum();
    let fact = |n: u32| -> Result<i128> {
        (1..=i128::from(n))
            .try_fold(1i128, |a, i| a.checked_mul(i))
            .ok_or_else(overflow)
    };
    let mut p = Ratio::from_integer(fact(k)?);
    for (&n, q) in b.counts().iter().zip(y) {
        p /= Ratio::from_integer(fact(n)?);
        for _ in 0..n {
            p = p.checked_mul(q).ok_or_else(overflow)?;
        }
    }
    Ok(p)
}

/// One point of a leakage-versus-clients curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LeakagePoint {
    pub clients: u64,
    pub mean_bits: f64,
    pub stderr_bits: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeakageCurve {
    pub prior: PriorEntropy,
    pub points: Vec<LeakagePoint>,
}

impl LeakageCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("U,mean_bits,stderr_bits\n");
        for p in &self.points {
            out.push_str(&format!("{},{:.6},{:.6}\n", p.clients, p.mean_bits, p.stderr_bits));
        }
        out
    }
}

/// Settings for [`expected_leakage_curve`].
#[derive(Clone, Debug)]
pub struct CurveConfig {
    pub batch: u64,
    pub clients: Vec<u64>,
    pub repetitions: usize,
    pub seed: u64,
    pub cap: u128,
    /// Batches drawn for the Monte Carlo prior when enumeration is capped.
    pub prior_samples: usize,
}

/// Mean leakage and its standard error over independent repetitions for
/// every client count. Repetition `r` at `U` clients draws from a stream
/// keyed by `(seed, U, r)`.
pub fn expected_leakage_curve(y: &LabelDistribution, cfg: &CurveConfig) -> Result<LeakageCurve> {
    if cfg.repetitions == 0 {
        return Err(Error::invalid("need at least one repetition"));
    }
    if cfg.clients.contains(&0) {
        return Err(Error::invalid("client counts must be positive"));
    }
    let prior = prior_entropy(y, cfg.batch, cfg.cap, cfg.prior_samples, cfg.seed)?;
    let mut points = Vec::with_capacity(cfg.clients.len());
    for &u in &cfg.clients {
        let draws: Vec<f64> = (0..cfg.repetitions)
            .map(|r| {
                let mut rng = rng_for(cfg.seed, "leakage", &[u, r as u64]);
                let obs = ShuffleObservation::from_batches((0..u).map(|_| y.sample_type(cfg.batch, &mut rng)));
                prior.bits - obs.entropy_bits()
            })
            .collect();
        let (mean, stderr) = mean_and_stderr(&draws);
        points.push(LeakagePoint {
            clients: u,
            mean_bits: mean,
            stderr_bits: stderr,
        });
    }
    Ok(LeakageCurve { prior, points })
}

/// A single shuffled draw of `U` batches and its leakage.
pub fn single_draw_leakage<R: Rng + ?Sized>(
    y: &LabelDistribution,
    batch: u64,
    clients: u64,
    prior_bits: f64,
    rng: &mut R,
) -> f64 {
    let obs = ShuffleObservation::from_batches((0..clients).map(|_| y.sample_type(batch, rng)));
    prior_bits - obs.entropy_bits()
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Raw input information per batch: `K * H * W * C * bits_per_pixel`.
pub fn input_information_bits(batch: u64, height: u64, width: u64, channels: u64, bits_per_pixel: u64) -> u128 {
    [batch, height, width, channels, bits_per_pixel]
        .iter()
        .map(|&v| u128::from(v))
        .product()
}
