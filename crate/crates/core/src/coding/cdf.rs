//! Quantised cumulative frequency tables for the range coder.

use crate::error::{CoreError, Result};
use crate::math;

/// Table precision: counts sum to `2^PRECISION`.
pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;

/// Half-width of a trimmed Gaussian table, in standard deviations.
pub const ESCAPE_SIGMAS: f64 = 6.0;

/// Cumulative counts over an integer support `[offset, offset + n)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    cdf: Vec<u32>,
    offset: i32,
    escape: Option<Escape>,
}

/// Full-support Gaussian that codes the exact value behind a trimmed edge bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Escape {
    mu: u64,
    sigma: u64,
    support: (i32, i32),
}

impl CdfTable {
    /// Validates raw cumulative counts: first 0, last `2^16`, strictly increasing.
    pub fn from_cdf(cdf: Vec<u32>, offset: i32) -> Result<Self> {
        if cdf.len() < 2 || cdf[0] != 0 || *cdf.last().unwrap() != TOTAL {
            return Err(CoreError::InvalidArgument("cdf must run from 0 to 65536".into()));
        }
        if cdf.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CoreError::InvalidArgument("cdf must be strictly increasing".into()));
        }
        Ok(CdfTable { cdf, offset, escape: None })
    }

    /// Quantises bin probabilities by rounding the running total to the
    /// nearest count, then forcing every bin to at least one count: a forward
    /// pass lifts `cdf[i]` to `cdf[i-1] + 1`, a backward pass caps it at
    /// `2^16 - (n - i)`. Rounding the cumulative rather than each bin keeps
    /// mirror-image distributions mirror-image tables.
    pub fn from_probabilities(probs: &[f64], offset: i32) -> Result<Self> {
        let mut acc = 0.0;
        let mut edges = Vec::with_capacity(probs.len() + 1);
        edges.push(0.0);
        for &p in probs {
            acc += p.max(0.0);
            edges.push(acc);
        }
        let total = acc;
        if !(total > 0.0) || !total.is_finite() {
            return Err(CoreError::InvalidArgument("probabilities must have positive finite mass".into()));
        }
        let normalised: Vec<f64> = edges.iter().map(|e| e / total).collect();
        Self::from_edges(&normalised, offset)
    }

    /// `edges` are CDF values at the bin boundaries, from 0 to 1 inclusive.
    fn from_edges(edges: &[f64], offset: i32) -> Result<Self> {
        let n = edges.len().saturating_sub(1);
        if n == 0 {
            return Err(CoreError::InvalidArgument("empty support".into()));
        }
        if n > TOTAL as usize / 2 {
            return Err(CoreError::InvalidArgument("support too wide for table precision".into()));
        }
        let mut cdf: Vec<i64> = edges
            .iter()
            .map(|&e| (e.clamp(0.0, 1.0) * TOTAL as f64).round() as i64)
            .collect();
        cdf[0] = 0;
        cdf[n] = TOTAL as i64;
        for i in 1..n {
            cdf[i] = cdf[i].max(cdf[i - 1] + 1);
        }
        for i in (1..n).rev() {
            cdf[i] = cdf[i].min(cdf[i + 1] - 1);
        }
        Ok(CdfTable {
            cdf: cdf.into_iter().map(|c| c as u32).collect(),
            offset,
            escape: None,
        })
    }

    /// Discretised `N(mu, sigma^2)` on the integers `support.0..=support.1`,
    /// with the tails folded into the edge bins.
    pub fn gaussian(mu: f64, sigma: f64, support: (i32, i32)) -> Result<Self> {
        if !(sigma > 0.0) || !mu.is_finite() || !sigma.is_finite() {
            return Err(CoreError::InvalidArgument(format!("bad gaussian ({mu}, {sigma})")));
        }
        Self::from_boundary_cdf(support, |b| math::normal_cdf((b - mu) / sigma))
    }

    /// Like [`CdfTable::gaussian`] but trimmed to about `ESCAPE_SIGMAS`
    /// deviations around `mu`. A trimmed edge bin is an escape: the exact
    /// value follows, coded under the full-support table. Every bin needs at
    /// least one count, so a narrow table wastes far less mass on bins that
    /// never occur.
    pub fn gaussian_escaped(mu: f64, sigma: f64, support: (i32, i32)) -> Result<Self> {
        let full = Self::gaussian(mu, sigma, support)?;
        let k = (ESCAPE_SIGMAS * sigma).ceil().min(1e6) as i32 + 1;
        let lo = support.0.max(mu.floor() as i32 - k);
        let hi = support.1.min(mu.ceil() as i32 + k);
        if (lo, hi) == support || hi <= lo {
            return Ok(full);
        }
        let mut t = Self::gaussian(mu, sigma, (lo, hi))?;
        t.escape = Some(Escape {
            mu: mu.to_bits(),
            sigma: sigma.to_bits(),
            support,
        });
        Ok(t)
    }

    /// The table that follows bin `idx`, if that bin is a trimmed edge.
    pub fn escape_table(&self, idx: usize) -> Option<CdfTable> {
        let e = self.escape?;
        let (lo, hi) = self.support();
        let escapes = (idx == 0 && lo > e.support.0) || (idx + 1 == self.num_symbols() && hi < e.support.1);
        escapes.then(|| Self::gaussian(f64::from_bits(e.mu), f64::from_bits(e.sigma), e.support).expect("validated on construction"))
    }

    /// Discretised logistic with the given location and scale.
    pub fn logistic(location: f64, scale: f64, support: (i32, i32)) -> Result<Self> {
        if !(scale > 0.0) || !location.is_finite() || !scale.is_finite() {
            return Err(CoreError::InvalidArgument(format!("bad logistic ({location}, {scale})")));
        }
        Self::from_boundary_cdf(support, |b| math::sigmoid((b - location) / scale))
    }

    fn from_boundary_cdf(support: (i32, i32), cdf: impl Fn(f64) -> f64) -> Result<Self> {
        let (lo, hi) = support;
        if hi < lo {
            return Err(CoreError::InvalidArgument(format!("empty support [{lo}, {hi}]")));
        }
        let n = (hi - lo + 1) as usize;
        let mut edges = Vec::with_capacity(n + 1);
        edges.push(0.0);
        for i in 1..n {
            edges.push(cdf(lo as f64 + i as f64 - 0.5));
        }
        edges.push(1.0);
        Self::from_edges(&edges, lo)
    }

    pub fn offset(&self) -> i32 {
        self.offset
    }

    pub fn num_symbols(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn support(&self) -> (i32, i32) {
        (self.offset, self.offset + self.num_symbols() as i32 - 1)
    }

    pub fn cdf(&self) -> &[u32] {
        &self.cdf
    }

    /// Count of `symbol`; symbols outside the support count as the nearest edge.
    pub fn count(&self, symbol: i32) -> u32 {
        let i = self.index(symbol);
        self.cdf[i + 1] - self.cdf[i]
    }

    /// Clamps a symbol to the support and returns its bin index.
    pub fn index(&self, symbol: i32) -> usize {
        let (lo, hi) = self.support();
        (symbol.clamp(lo, hi) - lo) as usize
    }

    /// Ideal code length of `symbol` in bits under the quantised table,
    /// escape included.
    pub fn bits(&self, symbol: i32) -> f64 {
        let own = PRECISION as f64 - math::log2(self.count(symbol) as f64);
        match self.escape_table(self.index(symbol)) {
            Some(t) => own + t.bits(symbol),
            None => own,
        }
    }

    /// Bin index whose cumulative range contains `value < 2^16`.
    pub fn lookup(&self, value: u32) -> usize {
        self.cdf.partition_point(|&c| c <= value) - 1
    }
}
