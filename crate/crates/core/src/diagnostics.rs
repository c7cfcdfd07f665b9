//! Chunk-length similarity diagnostics.
//!
//! All unordered pairs of indexed units are scored and split into three
//! buckets by word count (both short, one long, both long). Each bucket's
//! score distribution is smoothed with a Gaussian KDE and checked for a
//! second mode. A separate probe measures how keyword position inside a
//! sentence affects whether that sentence is retrieved.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::tokenize;
use crate::embedding::{self, EmbedError, EmbeddingProvider};
use crate::index::{Index, IndexError, UnitKind};

pub const DEFAULT_THRESHOLD_WORDS: usize = 200;
pub const DEFAULT_GRID_SIZE: usize = 512;
pub const DEFAULT_VALLEY_RATIO: f64 = 0.8;
/// Local maxima below this fraction of the curve's peak are ignored.
pub const DEFAULT_MIN_PEAK_FRACTION: f64 = 0.05;
/// Grid extends this many bandwidths beyond the sample range on each side.
pub const GRID_PAD_BANDWIDTHS: f64 = 3.0;
/// Samples farther than this many bandwidths from a grid point are skipped;
/// their kernel weight is below 1e-31.
const KERNEL_CUTOFF_BANDWIDTHS: f64 = 12.0;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("need at least 2 samples, found {found}")]
    InsufficientData { found: usize },
    #[error("all samples equal {value}; distribution is a point mass")]
    DegenerateDistribution { value: f64 },
    #[error("grid size must be at least 2, got {0}")]
    InvalidGrid(usize),
    #[error("probe {index} is invalid: {reason}")]
    ProbeInvalid { index: usize, reason: String },
    #[error("no curves to emit")]
    NoCurves,
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("invalid json")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

pub type Result<T, E = DiagnosticsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthBucket {
    BothShort,
    Mixed,
    BothLong,
}

impl LengthBucket {
    pub const ALL: [LengthBucket; 3] = [
        LengthBucket::BothShort,
        LengthBucket::Mixed,
        LengthBucket::BothLong,
    ];

    /// A text is long when it has more than `threshold_words` words.
    pub fn classify(words_a: usize, words_b: usize, threshold_words: usize) -> Self {
        match (words_a > threshold_words, words_b > threshold_words) {
            (false, false) => LengthBucket::BothShort,
            (true, true) => LengthBucket::BothLong,
            _ => LengthBucket::Mixed,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LengthBucket::BothShort => "both-short",
            LengthBucket::Mixed => "mixed",
            LengthBucket::BothLong => "both-long",
        }
    }
}

impl fmt::Display for LengthBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySample {
    /// Lexicographically smaller unit id of the pair.
    pub id_a: String,
    pub id_b: String,
    pub score: f64,
    pub bucket: LengthBucket,
}

fn selected(index: &Index, kinds: &[UnitKind]) -> Vec<usize> {
    index
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| kinds.contains(&e.kind))
        .map(|(i, _)| i)
        .collect()
}

fn pair_score(index: &Index, i: usize, j: usize) -> f64 {
    let (a, b) = (&index.entries()[i], &index.entries()[j]);
    let (va, vb) = (a.vector.values(), b.vector.values());
    embedding::cosine_with_norms(va, embedding::norm_sq(va), vb, embedding::norm_sq(vb))
}

/// Scores every unordered pair of entries whose kind is in `kinds`.
///
/// Materializes one sample per pair; for large indexes prefer
/// [`bucket_scores`], which keeps only the scores.
pub fn pairwise_similarities(
    index: &Index,
    kinds: &[UnitKind],
    threshold_words: usize,
) -> Result<Vec<SimilaritySample>> {
    let sel = selected(index, kinds);
    if sel.len() < 2 {
        return Err(DiagnosticsError::InsufficientData { found: sel.len() });
    }
    let entries = index.entries();
    let mut out = Vec::with_capacity(sel.len() * (sel.len() - 1) / 2);
    for (p, &i) in sel.iter().enumerate() {
        for &j in &sel[p + 1..] {
            let (a, b) = (&entries[i], &entries[j]);
            let (id_a, id_b) = if a.unit_id <= b.unit_id {
                (&a.unit_id, &b.unit_id)
            } else {
                (&b.unit_id, &a.unit_id)
            };
            out.push(SimilaritySample {
                id_a: id_a.clone(),
                id_b: id_b.clone(),
                score: pair_score(index, i, j),
                bucket: LengthBucket::classify(a.word_count, b.word_count, threshold_words),
            });
        }
    }
    Ok(out)
}

/// Pair scores grouped by bucket, in a fixed pair order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BucketScores {
    pub threshold_words: usize,
    pub both_short: Vec<f64>,
    pub mixed: Vec<f64>,
    pub both_long: Vec<f64>,
}

impl BucketScores {
    pub fn get(&self, bucket: LengthBucket) -> &[f64] {
        match bucket {
            LengthBucket::BothShort => &self.both_short,
            LengthBucket::Mixed => &self.mixed,
            LengthBucket::BothLong => &self.both_long,
        }
    }

    fn get_mut(&mut self, bucket: LengthBucket) -> &mut Vec<f64> {
        match bucket {
            LengthBucket::BothShort => &mut self.both_short,
            LengthBucket::Mixed => &mut self.mixed,
            LengthBucket::BothLong => &mut self.both_long,
        }
    }

    pub fn total(&self) -> usize {
        self.both_short.len() + self.mixed.len() + self.both_long.len()
    }
}

/// All-pairs scores streamed straight into per-bucket vectors.
///
/// Rows are scored in parallel and concatenated in row order, so the output
/// is bit-identical for any worker count. Memory is 8 bytes per pair; no
/// similarity matrix is built.
pub fn bucket_scores(
    index: &Index,
    kinds: &[UnitKind],
    threshold_words: usize,
) -> Result<BucketScores> {
    let sel = selected(index, kinds);
    if sel.len() < 2 {
        return Err(DiagnosticsError::InsufficientData { found: sel.len() });
    }
    let entries = index.entries();
    let norms: Vec<f64> = sel
        .iter()
        .map(|&i| embedding::norm_sq(entries[i].vector.values()))
        .collect();
    let rows: Vec<BucketScores> = (0..sel.len())
        .into_par_iter()
        .map(|p| {
            let mut row = BucketScores::default();
            let a = &entries[sel[p]];
            for q in p + 1..sel.len() {
                let b = &entries[sel[q]];
                let s = embedding::cosine_with_norms(
                    a.vector.values(),
                    norms[p],
                    b.vector.values(),
                    norms[q],
                );
                row.get_mut(LengthBucket::classify(
                    a.word_count,
                    b.word_count,
                    threshold_words,
                ))
                .push(s);
            }
            row
        })
        .collect();
    let mut out = BucketScores {
        threshold_words,
        ..Default::default()
    };
    for row in rows {
        for b in LengthBucket::ALL {
            out.get_mut(b).extend_from_slice(row.get(b));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub n_samples: usize,
}

impl KdeCurve {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| (x[1] - x[0]) * (d[0] + d[1]) / 2.0)
            .sum()
    }
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev(samples: &[f64]) -> f64 {
    let m = mean(samples);
    let ss: f64 = samples.iter().map(|s| (s - m) * (s - m)).sum();
    (ss / (samples.len() as f64 - 1.0)).sqrt()
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule: `0.9 · min(sd, IQR / 1.34) · n^(-1/5)`.
///
/// Falls back to the standard deviation alone when the IQR is zero.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(DiagnosticsError::InsufficientData {
            found: samples.len(),
        });
    }
    let sd = std_dev(samples);
    if sd.is_nan() || sd <= 0.0 {
        return Err(DiagnosticsError::DegenerateDistribution { value: samples[0] });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * (samples.len() as f64).powf(-0.2))
}

/// Gaussian KDE with Silverman bandwidth on `grid_size` evenly spaced points
/// spanning `[min − 3h, max + 3h]`.
pub fn kde(samples: &[f64], grid_size: usize) -> Result<KdeCurve> {
    if grid_size < 2 {
        return Err(DiagnosticsError::InvalidGrid(grid_size));
    }
    let h = silverman_bandwidth(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0] - GRID_PAD_BANDWIDTHS * h;
    let hi = sorted[sorted.len() - 1] + GRID_PAD_BANDWIDTHS * h;
    let step = (hi - lo) / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size).map(|i| lo + step * i as f64).collect();
    let density = grid
        .par_iter()
        .map(|&x| density_at(&sorted, h, x))
        .collect();
    Ok(KdeCurve {
        grid,
        density,
        bandwidth: h,
        n_samples: samples.len(),
    })
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `(1 / (n h)) Σ φ((x − s) / h)` over the sorted samples near `x`.
fn density_at(sorted: &[f64], h: f64, x: f64) -> f64 {
    let reach = KERNEL_CUTOFF_BANDWIDTHS * h;
    let start = sorted.partition_point(|&s| s < x - reach);
    let mut acc = 0.0;
    for &s in &sorted[start..] {
        if s > x + reach {
            break;
        }
        let u = (x - s) / h;
        acc += INV_SQRT_2PI * (-0.5 * u * u).exp();
    }
    acc / (sorted.len() as f64 * h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bimodality {
    pub is_bimodal: bool,
    /// Local maxima that clear the peak-fraction floor, in grid order.
    pub modes: Vec<(f64, f64)>,
    /// Deepest qualifying valley between two adjacent modes, if any.
    pub valley: Option<(f64, f64)>,
}

/// Valley-between-peaks test.
///
/// A curve is bimodal when two adjacent local maxima (each at least
/// `min_peak_fraction` of the global maximum) are separated by a valley whose
/// density is below `valley_ratio` times the lower of the two peaks.
pub fn detect_bimodality(
    curve: &KdeCurve,
    valley_ratio: f64,
    min_peak_fraction: f64,
) -> Bimodality {
    let d = &curve.density;
    let peak = d.iter().copied().fold(0.0, f64::max);
    let floor = min_peak_fraction * peak;

    // Local maxima; a plateau counts once, at its first point.
    let mut maxima = Vec::new();
    let mut i = 1;
    while i + 1 < d.len() {
        if d[i] > d[i - 1] {
            let mut j = i;
            while j + 1 < d.len() && d[j + 1] == d[i] {
                j += 1;
            }
            if j + 1 < d.len() && d[j + 1] < d[i] && d[i] >= floor {
                maxima.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    let mut best: Option<(f64, usize)> = None;
    for w in maxima.windows(2) {
        let (a, b) = (w[0], w[1]);
        let v = (a..=b).min_by(|&x, &y| d[x].total_cmp(&d[y])).unwrap();
        let lower = d[a].min(d[b]);
        let ratio = d[v] / lower;
        if ratio < valley_ratio && best.is_none_or(|(r, _)| ratio < r) {
            best = Some((ratio, v));
        }
    }

    Bimodality {
        is_bimodal: best.is_some(),
        modes: maxima.iter().map(|&i| (curve.grid[i], d[i])).collect(),
        valley: best.map(|(_, v)| (curve.grid[v], d[v])),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordProbe {
    pub keyword: String,
    pub gold_sentence_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub keyword: String,
    pub gold_sentence_id: String,
    /// Token index of the keyword's first occurrence over the sentence's
    /// token count; 0.0 for the first token.
    pub normalized_position: f64,
    pub hit: bool,
    pub gold_rank: Option<usize>,
}

fn keyword_position(keyword: &[String], sentence: &[String]) -> Option<usize> {
    if keyword.is_empty() || keyword.len() > sentence.len() {
        return None;
    }
    sentence.windows(keyword.len()).position(|w| w == keyword)
}

/// Queries the sentence index with each keyword and records whether its gold
/// sentence lands in the top `k`, alongside where the keyword sits in it.
pub fn keyword_position_profile(
    index: &Index,
    provider: &dyn EmbeddingProvider,
    probes: &[KeywordProbe],
    k: usize,
) -> Result<Vec<ProbeResult>> {
    probes
        .iter()
        .enumerate()
        .map(|(pi, probe)| {
            let invalid = |reason: String| DiagnosticsError::ProbeInvalid { index: pi, reason };
            let gold = index
                .get(&probe.gold_sentence_id)
                .filter(|e| e.kind == UnitKind::Sentence)
                .ok_or_else(|| {
                    invalid(format!(
                        "`{}` is not an indexed sentence",
                        probe.gold_sentence_id
                    ))
                })?;
            let kw: Vec<String> = tokenize(&probe.keyword).collect();
            let toks: Vec<String> = tokenize(&gold.text).collect();
            let pos = keyword_position(&kw, &toks).ok_or_else(|| {
                invalid(format!(
                    "keyword `{}` does not occur in `{}`",
                    probe.keyword, gold.unit_id
                ))
            })?;
            let q = provider.embed(&probe.keyword)?;
            let hits = index.search(&q, k, Some(&[UnitKind::Sentence]))?;
            let gold_rank = hits
                .iter()
                .find(|h| h.entry.unit_id == probe.gold_sentence_id)
                .map(|h| h.rank);
            Ok(ProbeResult {
                keyword: probe.keyword.clone(),
                gold_sentence_id: probe.gold_sentence_id.clone(),
                normalized_position: pos as f64 / toks.len() as f64,
                hit: gold_rank.is_some(),
                gold_rank,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    pub threshold_words: usize,
    pub grid_size: usize,
    pub valley_ratio: f64,
    pub min_peak_fraction: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            threshold_words: DEFAULT_THRESHOLD_WORDS,
            grid_size: DEFAULT_GRID_SIZE,
            valley_ratio: DEFAULT_VALLEY_RATIO,
            min_peak_fraction: DEFAULT_MIN_PEAK_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub bucket: LengthBucket,
    pub n_samples: usize,
    pub mean: Option<f64>,
    pub bandwidth: Option<f64>,
    /// Set when every sample in the bucket has the same score.
    pub point_mass: Option<f64>,
    pub bimodality: Option<Bimodality>,
    #[serde(skip)]
    pub curve: Option<KdeCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub config: DiagnosticsConfig,
    pub n_units: usize,
    pub n_pairs: usize,
    pub buckets: Vec<BucketSummary>,
}

impl DistributionReport {
    pub fn bucket(&self, bucket: LengthBucket) -> Option<&BucketSummary> {
        self.buckets.iter().find(|b| b.bucket == bucket)
    }
}

/// Full chunk-length study: bucketed pair scores, a KDE per bucket and a
/// bimodality verdict per curve. Buckets with fewer than two pairs get no
/// curve.
pub fn chunk_length_study(
    index: &Index,
    kinds: &[UnitKind],
    config: DiagnosticsConfig,
) -> Result<DistributionReport> {
    let scores = bucket_scores(index, kinds, config.threshold_words)?;
    let n_units = selected(index, kinds).len();
    let mut buckets = Vec::new();
    for bucket in LengthBucket::ALL {
        let s = scores.get(bucket);
        let mut summary = BucketSummary {
            bucket,
            n_samples: s.len(),
            mean: (!s.is_empty()).then(|| mean(s)),
            bandwidth: None,
            point_mass: None,
            bimodality: None,
            curve: None,
        };
        if s.len() >= 2 {
            match kde(s, config.grid_size) {
                Ok(curve) => {
                    summary.bandwidth = Some(curve.bandwidth);
                    summary.bimodality = Some(detect_bimodality(
                        &curve,
                        config.valley_ratio,
                        config.min_peak_fraction,
                    ));
                    summary.curve = Some(curve);
                }
                Err(DiagnosticsError::DegenerateDistribution { value }) => {
                    summary.point_mass = Some(value)
                }
                Err(e) => return Err(e),
            }
        }
        buckets.push(summary);
    }
    Ok(DistributionReport {
        config,
        n_units,
        n_pairs: scores.total(),
        buckets,
    })
}

/// JSON sidecar path written next to the CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `bucket,x,density` rows for every curve plus a JSON sidecar with
/// bandwidths, sample counts, means and bimodality verdicts.
pub fn emit_distribution_data(report: &DistributionReport, csv_path: &Path) -> Result<()> {
    if report.buckets.iter().all(|b| b.curve.is_none()) {
        return Err(DiagnosticsError::NoCurves);
    }
    let mut csv = String::from("bucket,x,density\n");
    for b in &report.buckets {
        if let Some(curve) = &b.curve {
            for (x, d) in curve.grid.iter().zip(&curve.density) {
                csv.push_str(&format!("{},{x:.9},{d:.9}\n", b.bucket));
            }
        }
    }
    fs::write(csv_path, csv)?;
    fs::write(
        sidecar_path(csv_path),
        serde_json::to_string_pretty(report)? + "\n",
    )?;
    Ok(())
}
