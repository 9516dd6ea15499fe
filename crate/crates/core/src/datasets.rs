//! User populations: synthetic generators and loaders for the real datasets.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::protocols::{DomainSpec, FrequencyVector};
use crate::seed::mix64;

/// Users generated per independently seeded block.
pub const GENERATION_BLOCK: usize = 1 << 16;

/// Adult ages span 17..=90.
pub const ADULT_MIN_AGE: i64 = 17;
pub const ADULT_DOMAIN: usize = 74;

/// Loaders give up when more than this fraction of rows is unusable.
pub const MAX_SKIP_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Population {
    pub values: Vec<u32>,
    pub domain: DomainSpec,
    pub name: String,
}

impl Population {
    pub fn new(name: impl Into<String>, values: Vec<u32>, domain: DomainSpec) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("population must contain at least one user"));
        }
        if let Some(&bad) = values.iter().find(|&&v| v as usize >= domain.size()) {
            return Err(Error::Domain {
                value: bad as usize,
                size: domain.size(),
            });
        }
        Ok(Self {
            values,
            domain,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn d(&self) -> usize {
        self.domain.size()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Gaussian,
    #[serde(alias = "zipf")]
    Zipfian,
    Uniform,
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorKind::Gaussian => "gaussian",
            GeneratorKind::Zipfian => "zipf",
            GeneratorKind::Uniform => "uniform",
        })
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(GeneratorKind::Gaussian),
            "zipf" | "zipfian" => Ok(GeneratorKind::Zipfian),
            "uniform" => Ok(GeneratorKind::Uniform),
            other => Err(Error::param(format!("unknown generator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_sd")]
    pub sd: f64,
    #[serde(default = "default_s")]
    pub s: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_n() -> usize {
    100_000
}
fn default_d() -> usize {
    100
}
fn default_mu() -> f64 {
    50.0
}
fn default_sd() -> f64 {
    10.0
}
fn default_s() -> f64 {
    1.5
}

impl GeneratorConfig {
    pub fn new(kind: GeneratorKind) -> Self {
        Self {
            kind,
            n: default_n(),
            d: default_d(),
            mu: default_mu(),
            sd: default_sd(),
            s: default_s(),
            seed: 0,
        }
    }

    pub fn gaussian(n: usize, d: usize, mu: f64, sd: f64, seed: u64) -> Self {
        Self {
            n,
            d,
            mu,
            sd,
            seed,
            ..Self::new(GeneratorKind::Gaussian)
        }
    }

    pub fn zipf(n: usize, d: usize, s: f64, seed: u64) -> Self {
        Self {
            n,
            d,
            s,
            seed,
            ..Self::new(GeneratorKind::Zipfian)
        }
    }

    pub fn uniform(n: usize, d: usize, seed: u64) -> Self {
        Self {
            n,
            d,
            seed,
            ..Self::new(GeneratorKind::Uniform)
        }
    }

    fn validate(&self) -> Result<DomainSpec> {
        let domain = DomainSpec::new(self.d)?;
        if self.n == 0 {
            return Err(Error::param("population size must be at least 1"));
        }
        match self.kind {
            GeneratorKind::Gaussian
                if !(self.sd > 0.0 && self.sd.is_finite() && self.mu.is_finite()) =>
            {
                Err(Error::param(format!(
                    "Gaussian needs finite mu and sd > 0, got mu={} sd={}",
                    self.mu, self.sd
                )))
            }
            GeneratorKind::Zipfian if !(self.s > 0.0 && self.s.is_finite()) => Err(Error::param(
                format!("Zipfian skew must be positive, got {}", self.s),
            )),
            _ => Ok(domain),
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            GeneratorKind::Gaussian => {
                format!("gaussian(d={},mu={},sd={})", self.d, self.mu, self.sd)
            }
            GeneratorKind::Zipfian => format!("zipf(d={},s={})", self.d, self.s),
            GeneratorKind::Uniform => format!("uniform(d={})", self.d),
        }
    }
}

/// Draws `n` values in fixed-size blocks, each with its own seed, so the
/// output does not depend on how blocks are scheduled.
fn generate_blocks<F>(n: usize, seed: u64, exec: &ExecPolicy, sample: F) -> Vec<u32>
where
    F: Fn(&mut Xoshiro256PlusPlus) -> u32 + Sync,
{
    let blocks = n.div_ceil(GENERATION_BLOCK);
    let parts = exec.map_indices(blocks, |b| {
        let len = GENERATION_BLOCK.min(n - b * GENERATION_BLOCK);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(mix64(seed ^ mix64(b as u64 + 1)));
        (0..len).map(|_| sample(&mut rng)).collect::<Vec<u32>>()
    });
    parts.concat()
}

pub fn gen_gaussian(config: &GeneratorConfig) -> Result<Population> {
    gen_gaussian_with(config, &ExecPolicy::default())
}

pub fn gen_gaussian_with(config: &GeneratorConfig, exec: &ExecPolicy) -> Result<Population> {
    expect_kind(config, GeneratorKind::Gaussian)?;
    let domain = config.validate()?;
    let normal = Normal::new(config.mu, config.sd).map_err(|e| Error::param(e.to_string()))?;
    let top = (config.d - 1) as f64;
    let values = generate_blocks(config.n, config.seed, exec, |rng| {
        normal.sample(rng).round().clamp(0.0, top) as u32
    });
    Population::new(config.label(), values, domain)
}

/// Zipfian pmf over `0..d`: `Pr[i] = (i + 1)^-s / Z`.
pub fn zipf_pmf(d: usize, s: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=d).map(|r| (r as f64).powf(-s)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

pub fn gen_zipf(config: &GeneratorConfig) -> Result<Population> {
    gen_zipf_with(config, &ExecPolicy::default())
}

pub fn gen_zipf_with(config: &GeneratorConfig, exec: &ExecPolicy) -> Result<Population> {
    expect_kind(config, GeneratorKind::Zipfian)?;
    let domain = config.validate()?;
    let mut cdf = zipf_pmf(config.d, config.s);
    let mut acc = 0.0;
    for x in cdf.iter_mut() {
        acc += *x;
        *x = acc;
    }
    let last = config.d - 1;
    let values = generate_blocks(config.n, config.seed, exec, |rng| {
        let u = rng.gen::<f64>() * acc;
        cdf.partition_point(|&c| c <= u).min(last) as u32
    });
    Population::new(config.label(), values, domain)
}

pub fn gen_uniform(config: &GeneratorConfig) -> Result<Population> {
    gen_uniform_with(config, &ExecPolicy::default())
}

pub fn gen_uniform_with(config: &GeneratorConfig, exec: &ExecPolicy) -> Result<Population> {
    expect_kind(config, GeneratorKind::Uniform)?;
    let domain = config.validate()?;
    let d = config.d as u32;
    let values = generate_blocks(config.n, config.seed, exec, |rng| rng.gen_range(0..d));
    Population::new(config.label(), values, domain)
}

pub fn generate(config: &GeneratorConfig, exec: &ExecPolicy) -> Result<Population> {
    match config.kind {
        GeneratorKind::Gaussian => gen_gaussian_with(config, exec),
        GeneratorKind::Zipfian => gen_zipf_with(config, exec),
        GeneratorKind::Uniform => gen_uniform_with(config, exec),
    }
}

fn expect_kind(config: &GeneratorConfig, kind: GeneratorKind) -> Result<()> {
    if config.kind == kind {
        Ok(())
    } else {
        Err(Error::param(format!(
            "expected a {kind} config, got {}",
            config.kind
        )))
    }
}

pub fn true_frequencies(pop: &Population) -> FrequencyVector {
    let mut counts = vec![0u64; pop.d()];
    for &v in &pop.values {
        counts[v as usize] += 1;
    }
    let n = pop.len() as f64;
    FrequencyVector {
        values: counts.into_iter().map(|c| c as f64 / n).collect(),
        kind: crate::protocols::FrequencyKind::True,
    }
}

/// Row accounting from a loader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadStats {
    pub rows: usize,
    pub skipped: usize,
}

fn check_skip_tolerance(stats: &LoadStats, what: &str) -> Result<()> {
    if stats.rows == 0 {
        return Err(Error::input(format!("{what}: no data rows")));
    }
    if stats.skipped as f64 > MAX_SKIP_FRACTION * stats.rows as f64 {
        return Err(Error::input(format!(
            "{what}: {} of {} rows unusable, above the {MAX_SKIP_FRACTION} tolerance",
            stats.skipped, stats.rows
        )));
    }
    Ok(())
}

/// Reads the `age` column of an Adult-style CSV (with header) into values
/// `age - 17` over a domain of 74.
pub fn load_adult(path: impl AsRef<Path>) -> Result<(Population, LoadStats)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::input(format!("{}: empty file", path.display())));
    }
    let age_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("age"))
        .ok_or_else(|| Error::input(format!("{}: no 'age' column", path.display())))?;

    let mut stats = LoadStats::default();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        stats.rows += 1;
        let age = record.get(age_col).and_then(|a| a.parse::<i64>().ok());
        match age.map(|a| a - ADULT_MIN_AGE) {
            Some(v) if (0..ADULT_DOMAIN as i64).contains(&v) => values.push(v as u32),
            _ => stats.skipped += 1,
        }
    }
    check_skip_tolerance(&stats, &path.display().to_string())?;
    let pop = Population::new("adult", values, DomainSpec::new(ADULT_DOMAIN)?)?;
    Ok((pop, stats))
}

fn parse_items(line: &str) -> Option<Vec<u64>> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u64>().ok())
        .collect()
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path)?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(Error::from)
}

/// One transaction per line, items separated by whitespace or commas
/// (Kosarak layout).
pub fn load_transactions(path: impl AsRef<Path>, top_k: usize) -> Result<(Population, LoadStats)> {
    let path = path.as_ref();
    let (transactions, stats) = per_line_transactions(&read_lines(path)?);
    check_skip_tolerance(&stats, &path.display().to_string())?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok((
        population_from_transactions(&transactions, top_k, name)?,
        stats,
    ))
}

fn per_line_transactions(lines: &[String]) -> (Vec<Vec<u64>>, LoadStats) {
    let mut stats = LoadStats::default();
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        stats.rows += 1;
        match parse_items(line) {
            Some(items) if !items.is_empty() => out.push(items),
            _ => stats.skipped += 1,
        }
    }
    (out, stats)
}

/// `(transaction id, item id)` pairs grouped by transaction id (BMS-POS
/// layout), with an optional header. Falls back to one transaction per line
/// when the rows are not all pairs.
pub fn load_bms_pos(path: impl AsRef<Path>, top_k: usize) -> Result<(Population, LoadStats)> {
    let path = path.as_ref();
    let lines = read_lines(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut body: Vec<&String> = lines.iter().filter(|l| !l.trim().is_empty()).collect();
    if body.first().is_some_and(|l| parse_items(l).is_none()) {
        body.remove(0);
    }
    let pairs: Option<Vec<(u64, u64)>> = body
        .iter()
        .map(|l| match parse_items(l)?.as_slice() {
            [t, i] => Some((*t, *i)),
            _ => None,
        })
        .collect();

    let (transactions, stats) = match pairs {
        Some(pairs) if !pairs.is_empty() => {
            let mut order: Vec<u64> = Vec::new();
            let mut grouped: HashMap<u64, Vec<u64>> = HashMap::new();
            for (t, i) in pairs.iter().copied() {
                grouped
                    .entry(t)
                    .or_insert_with(|| {
                        order.push(t);
                        Vec::new()
                    })
                    .push(i);
            }
            let tx = order
                .into_iter()
                .map(|t| grouped.remove(&t).unwrap())
                .collect();
            (
                tx,
                LoadStats {
                    rows: pairs.len(),
                    skipped: 0,
                },
            )
        }
        _ => per_line_transactions(&lines),
    };
    check_skip_tolerance(&stats, &path.display().to_string())?;
    Ok((
        population_from_transactions(&transactions, top_k, name)?,
        stats,
    ))
}

/// Keeps the `top_k` most frequent items (ties to the smaller id), renumbers
/// them by descending count and maps each transaction to its most frequent
/// kept item (ties to the smaller new id). Transactions without a kept item
/// are dropped.
pub fn population_from_transactions(
    transactions: &[Vec<u64>],
    top_k: usize,
    name: impl Into<String>,
) -> Result<Population> {
    let mut global: HashMap<u64, u64> = HashMap::new();
    for tx in transactions {
        for &item in tx {
            *global.entry(item).or_default() += 1;
        }
    }
    if top_k == 0 || top_k > global.len() {
        return Err(Error::param(format!(
            "top_k={top_k} but only {} distinct items are present",
            global.len()
        )));
    }
    let mut ranked: Vec<(u64, u64)> = global.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let remap: HashMap<u64, u32> = ranked
        .iter()
        .take(top_k)
        .enumerate()
        .map(|(new_id, &(item, _))| (item, new_id as u32))
        .collect();

    let mut values = Vec::with_capacity(transactions.len());
    let mut local = vec![0u32; top_k];
    let mut touched = Vec::new();
    for tx in transactions {
        for item in tx {
            if let Some(&id) = remap.get(item) {
                if local[id as usize] == 0 {
                    touched.push(id);
                }
                local[id as usize] += 1;
            }
        }
        if let Some(best) = touched
            .iter()
            .copied()
            .max_by(|&a, &b| local[a as usize].cmp(&local[b as usize]).then(b.cmp(&a)))
        {
            values.push(best);
        }
        for id in touched.drain(..) {
            local[id as usize] = 0;
        }
    }
    // a single kept item still needs a two-value domain
    let domain = DomainSpec::new(top_k.max(2))?;
    Population::new(name, values, domain)
}

/// Writes a population as `# name=<name> d=<d>` followed by one value per line.
pub fn write_population(pop: &Population, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# name={} d={}", pop.name, pop.d())?;
    for v in &pop.values {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_population(path: impl AsRef<Path>) -> Result<Population> {
    let path = path.as_ref();
    let lines = read_lines(path)?;
    let header = lines
        .first()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::input(format!("{}: missing population header", path.display())))?;
    let mut name = String::new();
    let mut d = None;
    for field in header.split_whitespace() {
        if let Some(v) = field.strip_prefix("name=") {
            name = v.to_string();
        } else if let Some(v) = field.strip_prefix("d=") {
            d = v.parse::<usize>().ok();
        }
    }
    let d = d.ok_or_else(|| Error::input(format!("{}: header lacks d=", path.display())))?;
    let values = lines[1..]
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<u32>()
                .map_err(|e| Error::input(format!("bad value '{l}': {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Population::new(name, values, DomainSpec::new(d)?)
}
