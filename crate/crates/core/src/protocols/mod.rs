//! Frequency oracles: client-side perturbation and server-side estimation.
//!
//! Six protocols are supported:
//!
//! * `GRR` generalized randomized response over the full domain.
//! * `BLH` binary local hashing (hash range 2).
//! * `OLH` optimized local hashing (hash range `round(e^eps) + 1`).
//! * `RAPPOR` one-time symmetric unary encoding.
//! * `OUE` optimized unary encoding.
//! * `SS` subset selection.
//!
//! Every protocol decodes a report into a *support set*, the domain values
//! the report votes for. The server only needs per-value support counts,
//! collected in a mergeable [`Sketch`], and the unbiased estimator
//! `(count / n - q*) / (p* - q*)`.

mod hash;

pub use hash::{hash_universal, prime_for_domain, MIN_PRIME_FLOOR};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value domain `0..size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomainSpec {
    size: usize,
}

impl DomainSpec {
    /// Largest supported domain; keeps hash arithmetic inside 64 bits.
    pub const MAX_SIZE: usize = 1 << 31;

    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::param(format!(
                "domain size must be at least 2, got {size}"
            )));
        }
        if size > Self::MAX_SIZE {
            return Err(Error::param(format!(
                "domain size {size} exceeds {}",
                Self::MAX_SIZE
            )));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn check(&self, value: usize) -> Result<()> {
        if value < self.size {
            Ok(())
        } else {
            Err(Error::Domain {
                value,
                size: self.size,
            })
        }
    }
}

/// Privacy budget epsilon: positive and finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct PrivacyBudget(f64);

impl PrivacyBudget {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon.is_finite() && epsilon > 0.0 {
            Ok(Self(epsilon))
        } else {
            Err(Error::param(format!(
                "privacy budget must be positive and finite, got {epsilon}"
            )))
        }
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProtocolKind {
    Grr,
    Blh,
    Olh,
    Rappor,
    Oue,
    Ss,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 6] = [
        ProtocolKind::Grr,
        ProtocolKind::Blh,
        ProtocolKind::Olh,
        ProtocolKind::Rappor,
        ProtocolKind::Oue,
        ProtocolKind::Ss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Grr => "GRR",
            ProtocolKind::Blh => "BLH",
            ProtocolKind::Olh => "OLH",
            ProtocolKind::Rappor => "RAPPOR",
            ProtocolKind::Oue => "OUE",
            ProtocolKind::Ss => "SS",
        }
    }

    fn is_hashing(self) -> bool {
        matches!(self, ProtocolKind::Blh | ProtocolKind::Olh)
    }

    fn is_unary(self) -> bool {
        matches!(self, ProtocolKind::Rappor | ProtocolKind::Oue)
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        ProtocolKind::ALL
            .into_iter()
            .find(|k| k.name() == upper)
            .or(match upper.as_str() {
                "SUE" => Some(ProtocolKind::Rappor),
                _ => None,
            })
            .ok_or_else(|| Error::param(format!("unknown protocol '{s}'")))
    }
}

/// Fully parameterized protocol instance.
///
/// `p` and `q` follow each protocol's own mechanism:
///
/// | kind        | `p`                          | `q`                                    |
/// |-------------|------------------------------|----------------------------------------|
/// | GRR         | keep the true value          | report one specific other value        |
/// | BLH / OLH   | keep the true hash bucket    | report one specific other bucket       |
/// | RAPPOR, OUE | bit of the true value is set | bit of any other value is set          |
/// | SS          | true value is in the subset  | a given other value is in the subset   |
///
/// The estimator uses the *support* probabilities from
/// [`ProtocolSpec::support_probs`], which differ from `(p, q)` only for the
/// hashing protocols (`q* = 1/g`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    kind: ProtocolKind,
    domain: DomainSpec,
    epsilon: PrivacyBudget,
    p: f64,
    q: f64,
    g: Option<u32>,
    k: Option<usize>,
    prime: Option<u64>,
}

/// Builds the canonical parameterization of `kind` for domain size `d` and budget `epsilon`.
pub fn build_protocol(kind: ProtocolKind, d: usize, epsilon: f64) -> Result<ProtocolSpec> {
    let domain = DomainSpec::new(d)?;
    let budget = PrivacyBudget::new(epsilon)?;
    let e = epsilon.exp();
    let df = d as f64;
    let (p, q, g, k) = match kind {
        ProtocolKind::Grr => (e / (e + df - 1.0), 1.0 / (e + df - 1.0), None, None),
        ProtocolKind::Blh | ProtocolKind::Olh => {
            let g = hash_range(kind, epsilon)?;
            let gf = g as f64;
            (e / (e + gf - 1.0), 1.0 / (e + gf - 1.0), Some(g), None)
        }
        ProtocolKind::Rappor => {
            let half = (epsilon / 2.0).exp();
            (half / (half + 1.0), 1.0 / (half + 1.0), None, None)
        }
        ProtocolKind::Oue => (0.5, 1.0 / (e + 1.0), None, None),
        ProtocolKind::Ss => {
            let k = ((df / (e + 1.0)).round() as usize).max(1);
            let kf = k as f64;
            let p = kf * e / (kf * e + df - kf);
            let q = p * (kf - 1.0) / (df - 1.0) + (1.0 - p) * kf / (df - 1.0);
            (p, q, None, Some(k))
        }
    };
    let spec = ProtocolSpec {
        kind,
        domain,
        epsilon: budget,
        p,
        q,
        g,
        k,
        prime: kind.is_hashing().then(|| prime_for_domain(d)),
    };
    spec.validate()?;
    Ok(spec)
}

fn hash_range(kind: ProtocolKind, epsilon: f64) -> Result<u32> {
    match kind {
        ProtocolKind::Blh => Ok(2),
        ProtocolKind::Olh => {
            let g = (epsilon.exp().round() + 1.0).max(2.0);
            if g > u32::MAX as f64 {
                return Err(Error::param(format!(
                    "epsilon {epsilon} gives an unrepresentable OLH hash range"
                )));
            }
            Ok(g as u32)
        }
        _ => unreachable!("hash range requested for {kind}"),
    }
}

impl ProtocolSpec {
    /// Overrides the perturbation probabilities of a non-SS protocol.
    ///
    /// Allows `q = 0` so noiseless pipelines can be assembled for testing;
    /// such instances carry no privacy guarantee. Hashing protocols keep the
    /// hash range implied by `epsilon`, and `q` is the per-bucket flip
    /// probability.
    pub fn with_probabilities(
        kind: ProtocolKind,
        d: usize,
        epsilon: f64,
        p: f64,
        q: f64,
    ) -> Result<Self> {
        if kind == ProtocolKind::Ss {
            return Err(Error::param(
                "SS probabilities are determined by the subset size",
            ));
        }
        let mut spec = build_protocol(kind, d, epsilon)?;
        if !(0.0..1.0).contains(&q) || !(q < p && p <= 1.0) {
            return Err(Error::param(format!(
                "need 0 <= q < p <= 1, got p={p} q={q}"
            )));
        }
        if let Some(g) = spec.g {
            let total = p + q * (g as f64 - 1.0);
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::param(format!(
                    "p + (g-1)q must equal 1 for g={g}, got {total}"
                )));
            }
        }
        if kind == ProtocolKind::Grr {
            let total = p + q * (d as f64 - 1.0);
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::param(format!(
                    "p + (d-1)q must equal 1 for GRR, got {total}"
                )));
            }
        }
        spec.p = p;
        spec.q = q;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < self.p && self.p <= 1.0) {
            return Err(Error::param(format!(
                "{} with eps={} yields p={} q={}, violating 0 < q < p <= 1",
                self.kind,
                self.epsilon.value(),
                self.p,
                self.q
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> ProtocolKind {
        self.kind
    }

    pub fn domain(&self) -> DomainSpec {
        self.domain
    }

    pub fn d(&self) -> usize {
        self.domain.size()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon.value()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Hash range for BLH/OLH.
    pub fn g(&self) -> Option<u32> {
        self.g
    }

    /// Subset size for SS.
    pub fn k(&self) -> Option<usize> {
        self.k
    }

    /// Hash modulus for BLH/OLH.
    pub fn prime(&self) -> Option<u64> {
        self.prime
    }

    /// `(p*, q*)`: probability that a report supports the true value, and
    /// that it supports a given other value.
    pub fn support_probs(&self) -> (f64, f64) {
        match self.g {
            Some(g) => (self.p, 1.0 / g as f64),
            None => (self.p, self.q),
        }
    }

    /// Draws one perturbed report for the true value `v`.
    pub fn perturb<R: Rng + ?Sized>(&self, v: usize, rng: &mut R) -> Result<Report> {
        self.domain.check(v)?;
        let mut scratch = Vec::new();
        Ok(match self.draw(v, rng, &mut scratch) {
            Draw::Value(y) => Report::Value(y),
            Draw::Hashed { a, b, bucket } => Report::Hashed { a, b, bucket },
            Draw::Set => {
                if self.kind.is_unary() {
                    let mut bits = vec![false; self.d()];
                    for &i in &scratch {
                        bits[i as usize] = true;
                    }
                    Report::Bits(bits)
                } else {
                    scratch.sort_unstable();
                    Report::Subset(scratch)
                }
            }
        })
    }

    /// Perturbs `v` and adds the report's support straight into `counts`.
    ///
    /// Consumes the random stream exactly like [`ProtocolSpec::perturb`], so
    /// `aggregate(perturb(..))` and this fused path produce identical counts.
    pub fn perturb_into<R: Rng + ?Sized>(
        &self,
        v: usize,
        rng: &mut R,
        scratch: &mut Vec<u32>,
        counts: &mut [u64],
    ) -> Result<()> {
        self.domain.check(v)?;
        debug_assert_eq!(counts.len(), self.d());
        match self.draw(v, rng, scratch) {
            Draw::Value(y) => counts[y as usize] += 1,
            Draw::Hashed { a, b, bucket } => hash::accumulate_preimage(
                a,
                b,
                self.prime.unwrap(),
                self.g.unwrap(),
                bucket,
                counts,
            ),
            Draw::Set => {
                for &i in scratch.iter() {
                    counts[i as usize] += 1;
                }
            }
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, v: usize, rng: &mut R, scratch: &mut Vec<u32>) -> Draw {
        let d = self.d();
        match self.kind {
            ProtocolKind::Grr => {
                if rng.gen::<f64>() < self.p {
                    Draw::Value(v as u32)
                } else {
                    Draw::Value(skip_index(rng.gen_range(0..d - 1), v) as u32)
                }
            }
            ProtocolKind::Blh | ProtocolKind::Olh => {
                let prime = self.prime.unwrap();
                let g = self.g.unwrap();
                let a = rng.gen_range(1..prime);
                let b = rng.gen_range(0..prime);
                let true_bucket = hash::hash_unchecked(a, b, prime, g, v as u64);
                let bucket = if rng.gen::<f64>() < self.p {
                    true_bucket
                } else {
                    skip_index(rng.gen_range(0..g as usize - 1), true_bucket as usize) as u32
                };
                Draw::Hashed { a, b, bucket }
            }
            ProtocolKind::Rappor | ProtocolKind::Oue => {
                scratch.clear();
                let own = rng.gen::<f64>() < self.p;
                sample_bernoulli_positions(rng, self.q, d - 1, |i| {
                    scratch.push(skip_index(i, v) as u32)
                });
                if own {
                    scratch.push(v as u32);
                }
                Draw::Set
            }
            ProtocolKind::Ss => {
                scratch.clear();
                let k = self.k.unwrap();
                let include = rng.gen::<f64>() < self.p;
                let others = if include { k - 1 } else { k };
                let picked = rand::seq::index::sample(rng, d - 1, others);
                scratch.extend(picked.into_iter().map(|i| skip_index(i, v) as u32));
                if include {
                    scratch.push(v as u32);
                }
                Draw::Set
            }
        }
    }
}

enum Draw {
    Value(u32),
    Hashed { a: u64, b: u64, bucket: u32 },
    Set,
}

/// Maps an index over `domain \ {excluded}` back onto the full domain.
#[inline]
fn skip_index(i: usize, excluded: usize) -> usize {
    if i >= excluded {
        i + 1
    } else {
        i
    }
}

/// Visits the positions in `0..len` of independent Bernoulli(`prob`) successes
/// in increasing order, drawing geometric gaps instead of one coin per position.
fn sample_bernoulli_positions<R: Rng + ?Sized>(
    rng: &mut R,
    prob: f64,
    len: usize,
    mut visit: impl FnMut(usize),
) {
    if prob <= 0.0 {
        return;
    }
    if prob >= 1.0 {
        (0..len).for_each(visit);
        return;
    }
    let log_fail = (-prob).ln_1p();
    let mut pos = 0usize;
    loop {
        // U in (0, 1]
        let u = 1.0 - rng.gen::<f64>();
        let gap = (u.ln() / log_fail).floor();
        if gap >= (len - pos) as f64 {
            return;
        }
        pos += gap as usize;
        visit(pos);
        pos += 1;
        if pos >= len {
            return;
        }
    }
}

/// One user's perturbed output.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Report {
    /// GRR: the reported domain value.
    Value(u32),
    /// BLH/OLH: hash seed pair and the perturbed bucket.
    Hashed { a: u64, b: u64, bucket: u32 },
    /// RAPPOR/OUE: one bit per domain value.
    Bits(Vec<bool>),
    /// SS: sorted distinct domain values.
    Subset(Vec<u32>),
}

/// Server-side aggregate: per-value support counts over `n` reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sketch {
    pub support_counts: Vec<u64>,
    pub n: u64,
}

impl Sketch {
    pub fn empty(d: usize) -> Self {
        Self {
            support_counts: vec![0; d],
            n: 0,
        }
    }

    pub fn d(&self) -> usize {
        self.support_counts.len()
    }

    pub fn merge(&mut self, other: &Sketch) -> Result<()> {
        if self.d() != other.d() {
            return Err(Error::LengthMismatch {
                left: self.d(),
                right: other.d(),
            });
        }
        for (a, b) in self.support_counts.iter_mut().zip(&other.support_counts) {
            *a += b;
        }
        self.n += other.n;
        Ok(())
    }

    pub fn merged(mut self, other: &Sketch) -> Result<Self> {
        self.merge(other)?;
        Ok(self)
    }
}

/// Counts the support of every report.
pub fn aggregate<'a, I>(spec: &ProtocolSpec, reports: I) -> Result<Sketch>
where
    I: IntoIterator<Item = &'a Report>,
{
    let d = spec.d();
    let mut sketch = Sketch::empty(d);
    for report in reports {
        match (spec.kind, report) {
            (ProtocolKind::Grr, Report::Value(y)) => {
                spec.domain.check(*y as usize)?;
                sketch.support_counts[*y as usize] += 1;
            }
            (ProtocolKind::Blh | ProtocolKind::Olh, Report::Hashed { a, b, bucket }) => {
                let prime = spec.prime.unwrap();
                let g = spec.g.unwrap();
                if *a == 0 || *a >= prime || *b >= prime || *bucket >= g {
                    return Err(Error::Shape(format!(
                        "hashed report ({a}, {b}, {bucket}) out of range"
                    )));
                }
                hash::accumulate_preimage(*a, *b, prime, g, *bucket, &mut sketch.support_counts);
            }
            (ProtocolKind::Rappor | ProtocolKind::Oue, Report::Bits(bits)) => {
                if bits.len() != d {
                    return Err(Error::Shape(format!(
                        "bit vector of length {} for domain {d}",
                        bits.len()
                    )));
                }
                for (c, &bit) in sketch.support_counts.iter_mut().zip(bits) {
                    *c += bit as u64;
                }
            }
            (ProtocolKind::Ss, Report::Subset(items)) => {
                let k = spec.k.unwrap();
                if items.len() != k {
                    return Err(Error::Shape(format!(
                        "subset of size {} for k={k}",
                        items.len()
                    )));
                }
                if items.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Shape("subset must be sorted and distinct".into()));
                }
                for &i in items {
                    spec.domain.check(i as usize)?;
                    sketch.support_counts[i as usize] += 1;
                }
            }
            (kind, other) => {
                return Err(Error::Shape(format!("{other:?} is not a {kind} report")));
            }
        }
        sketch.n += 1;
    }
    Ok(sketch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrequencyKind {
    True,
    Estimated,
    PostProcessed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyVector {
    pub values: Vec<f64>,
    pub kind: FrequencyKind,
}

impl FrequencyVector {
    /// Wraps a true distribution: non-negative entries summing to one.
    pub fn true_distribution(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::input("true frequencies must be non-negative"));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::input(format!(
                "true frequencies sum to {sum}, not 1"
            )));
        }
        Ok(Self {
            values,
            kind: FrequencyKind::True,
        })
    }

    pub fn estimated(values: Vec<f64>) -> Self {
        Self {
            values,
            kind: FrequencyKind::Estimated,
        }
    }

    pub fn post_processed(values: Vec<f64>) -> Self {
        Self {
            values,
            kind: FrequencyKind::PostProcessed,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Unbiased frequency estimate `(count / n - q*) / (p* - q*)`.
pub fn estimate(spec: &ProtocolSpec, sketch: &Sketch) -> Result<FrequencyVector> {
    if sketch.n == 0 {
        return Err(Error::EmptySketch);
    }
    if sketch.d() != spec.d() {
        return Err(Error::LengthMismatch {
            left: sketch.d(),
            right: spec.d(),
        });
    }
    let (ps, qs) = spec.support_probs();
    let n = sketch.n as f64;
    let scale = ps - qs;
    Ok(FrequencyVector::estimated(
        sketch
            .support_counts
            .iter()
            .map(|&c| (c as f64 / n - qs) / scale)
            .collect(),
    ))
}

/// Value-independent approximation of `Var[f_hat(v)]` for `n` reports:
/// `q*(1 - q*) / (n (p* - q*)^2)`.
pub fn estimator_variance(spec: &ProtocolSpec, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::param("estimator variance needs n >= 1"));
    }
    let (ps, qs) = spec.support_probs();
    Ok(qs * (1.0 - qs) / (n as f64 * (ps - qs).powi(2)))
}
