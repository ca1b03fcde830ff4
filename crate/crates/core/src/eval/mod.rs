//! Metrics, aggregation and reports.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::MixtureExample;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{si_sdr, snr, SiSdrSingularity};
use crate::streaming::{stream_utterance, RtfReport, StreamConfig};

/// A dB value that may be infinite; infinities are kept out of means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Db {
    Value(f64),
    PlusInf,
    MinusInf,
}

impl Db {
    fn from_f64(v: f64) -> Result<Self> {
        if v.is_nan() {
            Err(Error::invalid("metric difference of two infinities is undefined"))
        } else if v == f64::INFINITY {
            Ok(Db::PlusInf)
        } else if v == f64::NEG_INFINITY {
            Ok(Db::MinusInf)
        } else {
            Ok(Db::Value(v))
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Db::Value(v) => v,
            Db::PlusInf => f64::INFINITY,
            Db::MinusInf => f64::NEG_INFINITY,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Db::Value(v) => Some(v),
            _ => None,
        }
    }

    fn sub(self, other: Db) -> Result<Db> {
        Db::from_f64(self.to_f64() - other.to_f64())
    }
}

fn as_db(r: Result<f64>) -> Result<Db> {
    match r {
        Ok(v) => Ok(Db::Value(v)),
        Err(Error::SiSdr(SiSdrSingularity::Perfect)) => Ok(Db::PlusInf),
        Err(Error::SiSdr(SiSdrSingularity::Orthogonal)) => Ok(Db::MinusInf),
        Err(e) => Err(e),
    }
}

fn check_lengths(s: &[f32], est: &[f32], x: &[f32]) -> Result<()> {
    if s.len() != est.len() || s.len() != x.len() {
        return Err(Error::Shape {
            op: "metric",
            lhs: vec![s.len()],
            rhs: vec![est.len(), x.len()],
        });
    }
    Ok(())
}

pub fn si_sdr_db(s: &[f32], est: &[f32]) -> Result<Db> {
    as_db(si_sdr(s, est))
}

/// `si_sdr(s, ŝ) − si_sdr(s, x)`.
pub fn si_sdri(s: &[f32], est: &[f32], x: &[f32]) -> Result<Db> {
    check_lengths(s, est, x)?;
    si_sdr_db(s, est)?.sub(si_sdr_db(s, x)?)
}

/// Plain SNR improvement `snr(s, ŝ) − snr(s, x)`; scale-sensitive, not BSS-eval SDR.
pub fn sdri_plain(s: &[f32], est: &[f32], x: &[f32]) -> Result<Db> {
    check_lengths(s, est, x)?;
    as_db(snr(s, est))?.sub(as_db(snr(s, x))?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Offline,
    Online,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceResult {
    pub id: String,
    pub mode: EvalMode,
    pub length_s: f64,
    pub si_sdr_in: Db,
    pub si_sdr_out: Db,
    pub si_sdri: Db,
    pub sdr_plain_in: Db,
    pub sdr_plain_out: Db,
    pub sdri_plain: Db,
    /// SI-SDRi measured against the interferer instead of the target.
    pub si_sdri_vs_interferer: Db,
    /// PPR criterion (i): SI-SDRi strictly positive.
    pub positive: bool,
    /// PPR criterion (ii): higher SI-SDRi for the target than for the interferer.
    pub beats_interferer: bool,
    pub config_fingerprint: String,
}

/// Scores one extraction of `ex`.
pub fn score(ex: &MixtureExample, est: &[f32], mode: EvalMode, fingerprint: &str) -> Result<UtteranceResult> {
    let (s, x, b) = (&ex.target, &ex.mixture, &ex.interferer);
    check_lengths(s, est, x)?;
    let si_in = si_sdr_db(s, x)?;
    let si_out = si_sdr_db(s, est)?;
    let gain = si_out.sub(si_in)?;
    let sdr_in = as_db(snr(s, x))?;
    let sdr_out = as_db(snr(s, est))?;
    let vs_b = si_sdri(b, est, x)?;
    Ok(UtteranceResult {
        id: ex.id.clone(),
        mode,
        length_s: ex.seconds(),
        si_sdr_in: si_in,
        si_sdr_out: si_out,
        si_sdri: gain,
        sdr_plain_in: sdr_in,
        sdr_plain_out: sdr_out,
        sdri_plain: sdr_out.sub(sdr_in)?,
        si_sdri_vs_interferer: vs_b,
        positive: gain.to_f64() > 0.0,
        beats_interferer: gain.to_f64() > vs_b.to_f64(),
        config_fingerprint: fingerprint.to_string(),
    })
}

/// Percentage of utterances meeting both PPR criteria.
pub fn ppr(results: &[UtteranceResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::invalid("PPR of an empty result set"));
    }
    let pass = results.iter().filter(|r| r.positive && r.beats_interferer).count();
    Ok(100.0 * pass as f64 / results.len() as f64)
}

/// Mean of the finite values with counts of excluded infinities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStat {
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub finite: usize,
    pub plus_inf: usize,
    pub minus_inf: usize,
}

pub fn mean_stat(values: impl IntoIterator<Item = Db>) -> MeanStat {
    let (mut xs, mut p, mut m) = (Vec::new(), 0, 0);
    for v in values {
        match v {
            Db::Value(x) => xs.push(x),
            Db::PlusInf => p += 1,
            Db::MinusInf => m += 1,
        }
    }
    let n = xs.len() as f64;
    let mean = (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / n);
    let variance = mean.map(|mu| xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n);
    MeanStat {
        mean,
        variance,
        finite: xs.len(),
        plus_inf: p,
        minus_inf: m,
    }
}

/// Linear-interpolated quantiles of the finite values at `qs`.
pub fn quantiles(values: &[f64], qs: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return Vec::new();
    }
    qs.iter()
        .map(|&q| {
            let pos = q * (v.len() - 1) as f64;
            let (i, f) = (pos.floor() as usize, pos.fract());
            let hi = v[(i + 1).min(v.len() - 1)];
            (q, v[i] + f * (hi - v[i]))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo_s: f64,
    pub hi_s: f64,
    pub count: usize,
    /// Mean finite SI-SDRi; absent when the bucket has no finite value.
    pub mean_si_sdri: Option<f64>,
}

/// Default length bucket edges: every 2 s over [1, 15] s.
pub fn default_edges() -> Vec<f64> {
    (0..=7).map(|i| 1.0 + 2.0 * i as f64).collect()
}

/// Mean SI-SDRi per half-open length bucket `[edges[i], edges[i+1])`; the last
/// bucket also holds lengths equal to its upper edge.
pub fn bucket_by_length(results: &[UtteranceResult], edges: &[f64]) -> Vec<Bucket> {
    let last = edges.len().saturating_sub(2);
    edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let inside = |r: &&UtteranceResult| r.length_s >= w[0] && (r.length_s < w[1] || (i == last && r.length_s == w[1]));
            let rs: Vec<&UtteranceResult> = results.iter().filter(inside).collect();
            Bucket {
                lo_s: w[0],
                hi_s: w[1],
                count: rs.len(),
                mean_si_sdri: mean_stat(rs.iter().map(|r| r.si_sdri)).mean,
            }
        })
        .collect()
}

/// Aggregates over a report's records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub si_sdri: MeanStat,
    pub sdri_plain: MeanStat,
    pub si_sdri_quantiles: Vec<(f64, f64)>,
    pub ppr: Option<f64>,
    pub buckets: Vec<Bucket>,
    pub rtf: Option<RtfReport>,
    pub sdr_note: String,
}

pub const SDR_NOTE: &str = "sdr_plain is a plain SNR improvement, not BSS-eval SDR";

pub fn summarize(records: &[UtteranceResult], rtf: Option<RtfReport>) -> Summary {
    let si = mean_stat(records.iter().map(|r| r.si_sdri));
    let finite: Vec<f64> = records.iter().filter_map(|r| r.si_sdri.finite()).collect();
    Summary {
        count: records.len(),
        si_sdri: si,
        sdri_plain: mean_stat(records.iter().map(|r| r.sdri_plain)),
        si_sdri_quantiles: quantiles(&finite, &[0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0]),
        ppr: ppr(records).ok(),
        buckets: bucket_by_length(records, &default_edges()),
        rtf,
        sdr_note: SDR_NOTE.into(),
    }
}

/// Per-utterance records plus their summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<UtteranceResult>,
    pub summary: Summary,
}

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

impl EvalReport {
    pub fn new(records: Vec<UtteranceResult>, rtf: Option<RtfReport>) -> Self {
        let summary = summarize(&records, rtf);
        Self { records, summary }
    }

    /// Writes `records.jsonl` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RECORDS_FILE);
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|e| Error::invalid(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        f.flush().map_err(|e| Error::io(&path, e))?;
        let spath = dir.join(SUMMARY_FILE);
        let text = serde_json::to_string_pretty(&self.summary).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(&spath, text).map_err(|e| Error::io(&spath, e))
    }

    /// Reads a report and checks that the stored summary matches its records.
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(RECORDS_FILE);
        let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        for line in std::io::BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line).map_err(|e| Error::data(path.display().to_string(), e.to_string()))?);
            }
        }
        let spath = dir.join(SUMMARY_FILE);
        let text = std::fs::read_to_string(&spath).map_err(|e| Error::io(&spath, e))?;
        let summary: Summary =
            serde_json::from_str(&text).map_err(|e| Error::data(spath.display().to_string(), e.to_string()))?;
        let again = summarize(&records, summary.rtf.clone());
        if again != summary {
            return Err(Error::data(
                spath.display().to_string(),
                "summary does not match the per-utterance records",
            ));
        }
        Ok(Self { records, summary })
    }
}

/// Extracts every example offline or through the streaming engine and scores it.
pub fn evaluate(
    model: &Model<f32>,
    examples: &[MixtureExample],
    mode: EvalMode,
    stream: &StreamConfig,
    fingerprint: &str,
) -> Result<(EvalReport, Vec<Vec<f32>>)> {
    let mut records = Vec::with_capacity(examples.len());
    let mut outputs = Vec::with_capacity(examples.len());
    let mut rtf: Option<(f64, f64, Vec<RtfReport>)> = None;
    for ex in examples {
        let est = match mode {
            EvalMode::Offline => model.infer_offline(&ex.mixture, &ex.eeg)?,
            EvalMode::Online => {
                let out = stream_utterance(model, stream, &ex.mixture, &ex.eeg)?;
                let acc = rtf.get_or_insert((0.0, 0.0, Vec::new()));
                acc.0 += out.report.emitted_seconds;
                acc.1 += out.report.processing_seconds;
                acc.2.push(out.report);
                out.audio
            }
        };
        records.push(score(ex, &est, mode, fingerprint)?);
        outputs.push(est);
    }
    let rtf = rtf.map(|(emitted, processing, reports)| merge_rtf(emitted, processing, &reports));
    Ok((EvalReport::new(records, rtf), outputs))
}

fn merge_rtf(emitted: f64, processing: f64, reports: &[RtfReport]) -> RtfReport {
    let max = |f: fn(&RtfReport) -> f64| reports.iter().map(f).fold(0.0, f64::max);
    let steps: usize = reports.iter().map(|r| r.steps).sum();
    RtfReport {
        steps,
        emitted_seconds: emitted,
        processing_seconds: processing,
        rtf: emitted / processing.max(f64::MIN_POSITIVE),
        mean_latency_ms: reports.iter().map(|r| r.mean_latency_ms * r.steps as f64).sum::<f64>() / steps.max(1) as f64,
        p95_latency_ms: max(|r| r.p95_latency_ms),
        max_latency_ms: max(|r| r.max_latency_ms),
        budget_ms: reports.first().map_or(0.0, |r| r.budget_ms),
        violations: reports.iter().map(|r| r.violations).sum(),
    }
}
