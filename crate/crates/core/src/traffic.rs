//! Packet-size sample entropy and a synthetic flow generator.
//!
//! Each observation of a flow is the Shannon entropy (natural log) of the
//! packet-size proportions within one interval. Entropies are modeled as
//! Gaussian with separate parameters for normal and abnormal flows.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{EnvConfig, Family, Param};
use crate::simulator::ObservationModel;

/// Packet sizes used when synthesizing histograms.
pub const PACKET_SIZES: [u32; 16] = [
    40, 64, 128, 192, 256, 320, 384, 512, 576, 640, 768, 896, 1024, 1280, 1420, 1500,
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowInterval {
    pub flow_id: u64,
    pub interval: u64,
    /// Packet size → packet count.
    pub histogram: BTreeMap<u32, u64>,
}

/// `−Σ q ln q` over the packet-size proportions.
pub fn interval_entropy(interval: &FlowInterval) -> Result<f64> {
    histogram_entropy(interval.histogram.values().copied())
}

pub fn histogram_entropy(counts: impl IntoIterator<Item = u64> + Clone) -> Result<f64> {
    let total: u64 = counts.clone().into_iter().sum();
    if total == 0 {
        return Err(Error::domain("interval contains no packets"));
    }
    let total = total as f64;
    let h = counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let q = c as f64 / total;
            -q * q.ln()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

/// Gaussian entropy model of normal and abnormal flows, as `(μ, σ)` pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyModel {
    pub normal: Param,
    pub abnormal: Param,
}

impl Default for EntropyModel {
    fn default() -> Self {
        EntropyModel {
            normal: Param::pair(1.0, 0.2),
            abnormal: Param::pair(1.8, 0.3),
        }
    }
}

impl EntropyModel {
    pub fn validate(&self) -> Result<()> {
        for (key, p) in [("traffic.normal", self.normal), ("traffic.abnormal", self.abnormal)] {
            if p.dim() != 2 || !p.get(0).is_finite() || !(p.get(1) > 0.0 && p.get(1).is_finite()) {
                return Err(Error::config(
                    key,
                    format!("need a finite mean and positive deviation, got {p}"),
                ));
            }
        }
        Ok(())
    }

    pub fn side(&self, anomalous: bool) -> Param {
        if anomalous {
            self.abnormal
        } else {
            self.normal
        }
    }

    /// Search environment over `flows` flows observed through the two-parameter
    /// Gaussian family.
    pub fn env(&self, flows: usize, probes: usize) -> Result<EnvConfig> {
        self.validate()?;
        EnvConfig::symmetric(Family::GaussianMeanVar, flows, probes, self.normal, self.abnormal)
    }
}

/// How entropy observations are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntropySource {
    /// Direct Gaussian draws.
    Gaussian,
    /// Entropy of a synthesized histogram with this many packets.
    Packets(u32),
}

/// Observation model for flow search.
#[derive(Clone, Copy, Debug)]
pub struct FlowObservations {
    pub model: EntropyModel,
    pub source: EntropySource,
}

impl FlowObservations {
    pub fn draw<R: Rng + ?Sized>(&self, anomalous: bool, rng: &mut R) -> f64 {
        let p = self.model.side(anomalous);
        let target = Normal::new(p.get(0), p.get(1)).expect("validated model").sample(rng);
        match self.source {
            EntropySource::Gaussian => target,
            EntropySource::Packets(packets) => {
                let counts = synthesize_histogram(target, packets, rng);
                histogram_entropy(counts.iter().copied()).unwrap_or(0.0)
            }
        }
    }
}

impl ObservationModel for FlowObservations {
    fn sample(&self, _env: &EnvConfig, _cell: usize, anomalous: bool, rng: &mut ChaCha8Rng) -> f64 {
        self.draw(anomalous, rng)
    }
}

/// Entropy of the geometric distribution `w_i ∝ r^i` over the packet sizes.
fn geometric_entropy(r: f64) -> f64 {
    let weights: Vec<f64> = (0..PACKET_SIZES.len()).map(|i| r.powi(i as i32)).collect();
    let total: f64 = weights.iter().sum();
    weights
        .iter()
        .map(|w| w / total)
        .filter(|&q| q > 0.0)
        .map(|q| -q * q.ln())
        .sum()
}

/// Packet counts over [`PACKET_SIZES`] whose population entropy equals
/// `target` (clamped to the attainable range).
pub fn synthesize_histogram<R: Rng + ?Sized>(target: f64, packets: u32, rng: &mut R) -> Vec<u64> {
    let max = (PACKET_SIZES.len() as f64).ln();
    let target = target.clamp(0.0, max);
    // Entropy increases with the ratio on (0, 1].
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if geometric_entropy(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = 0.5 * (lo + hi);
    let weights: Vec<f64> = (0..PACKET_SIZES.len()).map(|i| r.powi(i as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cdf.push(acc);
    }
    let mut counts = vec![0u64; PACKET_SIZES.len()];
    for _ in 0..packets.max(1) {
        let u: f64 = rng.random();
        let i = cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1);
        counts[i] += 1;
    }
    counts
}

/// `intervals` entropy observations per flow; flow `anomalous_id`
/// (1-based) follows the abnormal model.
pub fn generate_flows(
    flows: usize,
    anomalous_id: usize,
    model: &EntropyModel,
    intervals: usize,
    source: EntropySource,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    model.validate()?;
    if anomalous_id == 0 || anomalous_id > flows {
        return Err(Error::config("traffic.anomalous_id", format!("must be in 1..={flows}")));
    }
    let obs = FlowObservations { model: *model, source };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((1..=flows)
        .map(|id| (0..intervals).map(|_| obs.draw(id == anomalous_id, &mut rng)).collect())
        .collect())
}

/// Synthetic packet-mode intervals, for producing flow CSV files.
pub fn generate_intervals(
    flows: usize,
    anomalous_id: usize,
    model: &EntropyModel,
    intervals: usize,
    packets: u32,
    seed: u64,
) -> Result<Vec<FlowInterval>> {
    model.validate()?;
    if anomalous_id == 0 || anomalous_id > flows {
        return Err(Error::config("traffic.anomalous_id", format!("must be in 1..={flows}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(flows * intervals);
    for id in 1..=flows {
        let p = model.side(id == anomalous_id);
        let normal = Normal::new(p.get(0), p.get(1)).expect("validated model");
        for interval in 0..intervals {
            let counts = synthesize_histogram(normal.sample(&mut rng), packets, &mut rng);
            let histogram = PACKET_SIZES
                .iter()
                .zip(counts)
                .filter(|(_, c)| *c > 0)
                .map(|(&s, c)| (s, c))
                .collect();
            out.push(FlowInterval {
                flow_id: id as u64,
                interval: interval as u64,
                histogram,
            });
        }
    }
    Ok(out)
}

fn parse_histogram(text: &str) -> std::result::Result<BTreeMap<u32, u64>, String> {
    let mut histogram = BTreeMap::new();
    for pair in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (size, count) = pair
            .split_once(':')
            .ok_or_else(|| format!("expected size:count, got {pair:?}"))?;
        let size: u32 = size
            .trim()
            .parse()
            .map_err(|_| format!("invalid packet size {size:?}"))?;
        let count: u64 = count
            .trim()
            .parse()
            .map_err(|_| format!("invalid packet count {count:?}"))?;
        *histogram.entry(size).or_insert(0) += count;
    }
    if histogram.values().all(|&c| c == 0) {
        return Err("interval contains no packets".into());
    }
    Ok(histogram)
}

/// Parses flow intervals from CSV text with header `flow_id,interval,hist`.
/// `path` is used only in error messages.
pub fn parse_flow_csv<R: Read>(input: R, path: &Path) -> Result<Vec<FlowInterval>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out = Vec::new();
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (index, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(index as u64 + 1, |p| p.line());
        if index == 0 {
            let header: Vec<&str> = record.iter().collect();
            if header != ["flow_id", "interval", "hist"] {
                return Err(parse_err(
                    line,
                    format!("expected header flow_id,interval,hist, got {header:?}"),
                ));
            }
            continue;
        }
        if record.len() != 3 {
            return Err(parse_err(line, format!("expected 3 columns, got {}", record.len())));
        }
        let flow_id = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid flow_id {:?}", &record[0])))?;
        let interval = record[1]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid interval {:?}", &record[1])))?;
        let histogram = parse_histogram(&record[2]).map_err(|m| parse_err(line, m))?;
        out.push(FlowInterval {
            flow_id,
            interval,
            histogram,
        });
    }
    Ok(out)
}

pub fn ingest_flow_csv(path: &Path) -> Result<Vec<FlowInterval>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_flow_csv(file, path)
}

pub fn write_flow_csv<W: Write>(out: W, intervals: &[FlowInterval]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["flow_id", "interval", "hist"])?;
    for iv in intervals {
        let hist = iv
            .histogram
            .iter()
            .map(|(s, c)| format!("{s}:{c}"))
            .collect::<Vec<_>>()
            .join(";");
        writer.write_record([iv.flow_id.to_string(), iv.interval.to_string(), hist])?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: "<csv output>".into(),
        source,
    })
}

/// Writes `flow_id,interval,entropy` rows.
pub fn write_entropy_csv<W: Write>(out: W, intervals: &[FlowInterval]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["flow_id", "interval", "entropy"])?;
    for iv in intervals {
        writer.write_record([
            iv.flow_id.to_string(),
            iv.interval.to_string(),
            interval_entropy(iv)?.to_string(),
        ])?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: "<csv output>".into(),
        source,
    })
}
