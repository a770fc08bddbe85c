//! Piecewise-constant flux time series for Neumann patches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Diagnostic, Error, Result};

/// Mandatory header of a flux-series CSV file.
pub const CSV_HEADER: &str = "t_start_seconds,flux_m_per_s";

const DAY: f64 = 86_400.0;

/// Ordered `(t_start, flux)` records; record `i` applies on
/// `[t_start_i, t_start_{i+1})` and the last one up to `end`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxSeries {
    starts: Vec<f64>,
    values: Vec<f64>,
    end: f64,
}

impl FluxSeries {
    pub fn new(records: Vec<(f64, f64)>, end: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidInput("flux series needs at least one record".into()));
        }
        for w in records.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidInput(format!(
                    "flux series start times must increase strictly ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(t, q)) = records.iter().find(|(t, q)| !t.is_finite() || !q.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite flux record ({t}, {q})")));
        }
        let last = records.last().unwrap().0;
        if !(end > last) || !end.is_finite() {
            return Err(Error::InvalidInput(format!("coverage end {end} must exceed the last start time {last}")));
        }
        let (starts, values) = records.into_iter().unzip();
        Ok(FluxSeries { starts, values, end })
    }

    /// Series whose last record lasts as long as the one before it (or
    /// `fallback` seconds for a single record).
    pub fn with_uniform_tail(records: Vec<(f64, f64)>, fallback: f64) -> Result<Self> {
        let end = match records.as_slice() {
            [] => 0.0,
            [(t, _)] => t + fallback,
            [.., (a, _), (b, _)] => b + (b - a),
        };
        Self::new(records, end)
    }

    pub fn start(&self) -> f64 {
        self.starts[0]
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.starts.iter().copied().zip(self.values.iter().copied())
    }

    /// Record start times after the first, where the flux may jump.
    pub fn breakpoints(&self) -> &[f64] {
        &self.starts[1..]
    }

    /// Flux of the record containing `t` (left-closed intervals).
    pub fn flux_at(&self, t: f64) -> Result<f64> {
        if !(t >= self.starts[0] && t <= self.end) {
            return Err(Error::OutOfRange { t, start: self.starts[0], end: self.end });
        }
        let i = self.starts.partition_point(|&s| s <= t);
        Ok(self.values[i - 1])
    }

    /// Parses the CSV format; `end` defaults to a uniform tail.
    pub fn parse_csv(text: &str, end: Option<f64>) -> Result<Self> {
        let mut diags = Vec::new();
        let mut records = Vec::new();
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == CSV_HEADER => {}
            Some((i, l)) => diags.push(Diagnostic {
                line: i + 1,
                message: format!("expected header `{CSV_HEADER}`, found `{}`", l.trim()),
            }),
            None => diags.push(Diagnostic { line: 0, message: format!("empty flux series (header `{CSV_HEADER}` required)") }),
        }
        for (i, l) in lines {
            let fields: Vec<&str> = l.split(',').map(str::trim).collect();
            let parsed = match fields.as_slice() {
                [t, q] => t.parse::<f64>().ok().zip(q.parse::<f64>().ok()),
                _ => None,
            };
            match parsed {
                Some(r) => records.push(r),
                None => diags.push(Diagnostic { line: i + 1, message: format!("expected `t,flux`, found `{}`", l.trim()) }),
            }
        }
        if !diags.is_empty() {
            return Err(Error::Parse(diags));
        }
        match end {
            Some(end) => Self::new(records, end),
            None => Self::with_uniform_tail(records, DAY),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for (t, q) in self.records() {
            s.push_str(&format!("{t},{q:e}\n"));
        }
        s
    }
}

/// Synthetic daily forcing for one year: a dry season with weak
/// evaporation and a wet season with noisy rainfall (fluxes outward-positive,
/// so rain is negative). Deterministic for a given seed.
pub fn synthetic_monsoon(days: usize, seed: u64) -> FluxSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let records = (0..days)
        .map(|d| {
            let doy = d % 365;
            let wet = (152..274).contains(&doy);
            let z: f64 = noise.sample(&mut rng);
            let q = if wet {
                // ~12 mm/day median rain, lognormal day-to-day spread
                -1.4e-7 * (0.8 * z).exp()
            } else {
                // ~2 mm/day evaporation
                (2.3e-8 * (1.0 + 0.3 * z)).max(0.0)
            };
            (d as f64 * DAY, q)
        })
        .collect();
    FluxSeries::with_uniform_tail(records, DAY).expect("generated series is valid")
}
