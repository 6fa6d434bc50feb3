//! Report bundle: CSV and JSON files built in memory and written in one go.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::kalman::{KalmanRun, Variant};
use crate::linalg::Matrix;
use crate::pipeline::{PipelineOutput, SegmentModel, VariantScore};

pub const NM_FILE: &str = "nm.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const ESTIMATES_DIR: &str = "estimates";
pub const ESTIMATES_META: &str = "estimates/meta.json";

/// Relative path → contents, ordered by path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportBundle {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl ReportBundle {
    pub fn insert(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.insert(name.into(), contents.into());
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, data) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, data).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub name: String,
    pub correlation: f64,
    pub median_nm_db: f64,
    pub mean_nm_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub index: usize,
    pub l_start: usize,
    pub l_end: usize,
    pub velocity: f64,
    pub dtw_cost: f64,
    /// Integer shift of each detected reflection over the segment, samples.
    pub offsets: Vec<i64>,
    /// `[τ_min, τ_max]` per reflection, s.
    pub intervals: Vec<[f64; 2]>,
    pub overlapping_intervals: usize,
    pub overlapping_rows: usize,
    pub occupied_rows: usize,
    pub bandwidth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub sample_rate: f64,
    pub rir_length: usize,
    pub locations: usize,
    pub evaluation_points: usize,
    pub transition_matrices: usize,
    pub variants: Vec<VariantSummary>,
    pub segments: Vec<SegmentSummary>,
    pub warnings: Vec<String>,
}

fn segment_summary(m: &SegmentModel) -> SegmentSummary {
    let band = m.transition.matrix.band_rows();
    let occupied = band
        .iter()
        .enumerate()
        .filter(|(n, r)| !(r.start == *n && r.values == [1.0]))
        .count();
    SegmentSummary {
        index: m.segment.index,
        l_start: m.segment.l_start,
        l_end: m.segment.l_end,
        velocity: m.segment.velocity,
        dtw_cost: m.alignment.cost.total(),
        offsets: m.alignment.map.reflections.iter().map(|r| r.offset).collect(),
        intervals: m.alignment.map.reflections.iter().map(|r| [r.tau_min, r.tau_max]).collect(),
        overlapping_intervals: m.alignment.map.overlaps.len(),
        overlapping_rows: m.transition.overlapping_rows.len(),
        occupied_rows: occupied,
        bandwidth: m.transition.matrix.bandwidth(),
    }
}

fn warnings(segments: &[SegmentModel]) -> Vec<String> {
    let mut out = Vec::new();
    for m in segments {
        let s = m.segment.index;
        if m.alignment.map.reflections.is_empty() {
            out.push(format!("segment {s}: no reflections detected; transition is identity"));
        }
        for &(a, b) in &m.alignment.map.overlaps {
            out.push(format!("segment {s}: reflection intervals {a} and {b} overlap"));
        }
    }
    out
}

pub fn summarize(cfg: &ScenarioConfig, out: &PipelineOutput) -> Summary {
    Summary {
        seed: cfg.seed,
        sample_rate: cfg.sample_rate,
        rir_length: cfg.rir_length,
        locations: out.prepared.locations(),
        evaluation_points: out.prepared.references.len(),
        transition_matrices: out.estimation.segments.len(),
        variants: out.scores.iter().map(variant_summary).collect(),
        segments: out.estimation.segments.iter().map(segment_summary).collect(),
        warnings: warnings(&out.estimation.segments),
    }
}

fn variant_summary(s: &VariantScore) -> VariantSummary {
    let values = s.curve.values();
    VariantSummary {
        variant: s.variant,
        name: s.variant.to_string(),
        correlation: s.correlation,
        median_nm_db: s.median_nm_db,
        mean_nm_db: values.iter().sum::<f64>() / values.len().max(1) as f64,
    }
}

/// `p,l_p,lambda_<v>,nm_db_<v>,…` with one row per evaluation point.
pub fn nm_csv(scores: &[VariantScore]) -> String {
    let mut s = String::from("p,l_p");
    for v in scores {
        let _ = write!(s, ",lambda_{0},nm_db_{0}", v.variant.key());
    }
    s.push('\n');
    if let Some(first) = scores.first() {
        for (i, pt) in first.curve.points.iter().enumerate() {
            let _ = write!(s, "{},{}", pt.p, pt.l_p);
            for v in scores {
                let q = &v.curve.points[i];
                let _ = write!(s, ",{},{}", q.lambda, q.nm_db);
            }
            s.push('\n');
        }
    }
    s
}

pub fn summary_text(summary: &Summary) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} locations, {} taps at {} Hz, seed {}",
        summary.locations, summary.rir_length, summary.sample_rate, summary.seed
    );
    let _ = writeln!(s, "{} transition matrices", summary.transition_matrices);
    for seg in &summary.segments {
        let _ = writeln!(
            s,
            "  segment {}: l {}..{}, {:.3} m/s, {} reflections, offsets {:?}",
            seg.index,
            seg.l_start,
            seg.l_end,
            seg.velocity,
            seg.offsets.len(),
            seg.offsets
        );
    }
    let _ = writeln!(s, "{:<10} {:>12} {:>16}", "variant", "correlation", "median NM [dB]");
    for v in &summary.variants {
        let _ = writeln!(s, "{:<10} {:>12.4} {:>16.2}", v.name, v.correlation, v.median_nm_db);
    }
    for w in &summary.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

fn traces_csv(run: &KalmanRun) -> String {
    let mut s = String::from("l,gain_norm,innovation,trace_p_post\n");
    for (l, t) in run.traces.iter().enumerate() {
        let _ = writeln!(s, "{l},{},{},{}", t.gain_norm, t.innovation, t.trace_p_post);
    }
    s
}

pub fn matrix_csv(m: &Matrix) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn debug_files(bundle: &mut ReportBundle, m: &SegmentModel) {
    let s = m.segment.index;
    bundle.insert(format!("debug/segment_{s}_cost.csv"), matrix_csv(&m.alignment.cost.to_matrix()));
    let mut path = String::from("n_en,n_st\n");
    for (n, k) in &m.alignment.path.pairs {
        let _ = writeln!(path, "{n},{k}");
    }
    bundle.insert(format!("debug/segment_{s}_path.csv"), path);
    bundle.insert(format!("debug/segment_{s}_w.csv"), matrix_csv(&m.alignment.warp.w));
    bundle.insert(format!("debug/segment_{s}_a.csv"), matrix_csv(&m.transition.matrix.to_dense()));
}

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v).map_err(|e| Error::Numeric(format!("json encoding: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Metrics, summaries, and optional traces and debug dumps.
pub fn build_bundle(cfg: &ScenarioConfig, out: &PipelineOutput) -> Result<ReportBundle> {
    let mut bundle = ReportBundle::default();
    let summary = summarize(cfg, out);
    bundle.insert(NM_FILE, nm_csv(&out.scores));
    bundle.insert(SUMMARY_JSON, json(&summary)?);
    bundle.insert(SUMMARY_TXT, summary_text(&summary));
    if cfg.output.traces {
        for r in &out.estimation.runs {
            bundle.insert(format!("traces_{}.csv", r.variant.key()), traces_csv(r));
        }
    }
    if cfg.output.debug {
        for m in &out.estimation.segments {
            debug_files(&mut bundle, m);
        }
    }
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatesMeta {
    pub variants: Vec<Variant>,
    pub locations: usize,
    pub taps: usize,
    pub sample_offset: usize,
}

/// Estimates as little-endian `f64`, one file per variant, location-major.
pub fn estimates_bundle(runs: &[KalmanRun], sample_offset: usize) -> Result<ReportBundle> {
    let mut bundle = ReportBundle::default();
    let locations = runs.first().map_or(0, |r| r.estimates.len());
    let taps = runs.first().and_then(|r| r.estimates.first()).map_or(0, Vec::len);
    for r in runs {
        let mut bytes = Vec::with_capacity(locations * taps * 8);
        for h in &r.estimates {
            for v in h {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bundle.insert(format!("{ESTIMATES_DIR}/{}.f64", r.variant.key()), bytes);
    }
    let meta = EstimatesMeta {
        variants: runs.iter().map(|r| r.variant).collect(),
        locations,
        taps,
        sample_offset,
    };
    bundle.insert(ESTIMATES_META, json(&meta)?);
    Ok(bundle)
}

pub fn read_estimates(dir: &Path) -> Result<(EstimatesMeta, Vec<KalmanRun>)> {
    let meta_path = dir.join(ESTIMATES_META);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: EstimatesMeta = serde_json::from_str(&text).map_err(|e| Error::data(&meta_path, e.to_string()))?;
    let runs = meta
        .variants
        .iter()
        .map(|&variant| {
            let path = dir.join(format!("{ESTIMATES_DIR}/{}.f64", variant.key()));
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() != meta.locations * meta.taps * 8 {
                return Err(Error::data(&path, format!("expected {} values", meta.locations * meta.taps)));
            }
            let values: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(KalmanRun {
                variant,
                estimates: values.chunks(meta.taps.max(1)).map(<[f64]>::to_vec).collect(),
                traces: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;
    Ok((meta, runs))
}

/// Plot-ready long-format tables from a written report.
pub fn plot_tables(dir: &Path) -> Result<ReportBundle> {
    let nm_path = dir.join(NM_FILE);
    let mut rdr = csv::Reader::from_path(&nm_path).map_err(|e| Error::data(&nm_path, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| Error::data(&nm_path, e.to_string()))?.clone();
    let keys: Vec<String> = headers
        .iter()
        .filter_map(|h| h.strip_prefix("nm_db_").map(str::to_owned))
        .collect();
    let mut nm = String::from("variant,p,l_p,lambda,nm_db\n");
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::data(&nm_path, e.to_string()))?;
        for (i, key) in keys.iter().enumerate() {
            let _ = writeln!(nm, "{key},{},{},{},{}", &rec[0], &rec[1], &rec[2 + 2 * i], &rec[3 + 2 * i]);
        }
    }
    let sum_path = dir.join(SUMMARY_JSON);
    let text = fs::read_to_string(&sum_path).map_err(|e| Error::io(&sum_path, e))?;
    let summary: Summary = serde_json::from_str(&text).map_err(|e| Error::data(&sum_path, e.to_string()))?;
    let mut corr = String::from("variant,name,correlation,median_nm_db\n");
    for v in &summary.variants {
        let _ = writeln!(corr, "{},{},{},{}", v.variant.key(), v.name, v.correlation, v.median_nm_db);
    }
    let mut bundle = ReportBundle::default();
    bundle.insert("plots/nm_curves.csv", nm);
    bundle.insert("plots/correlation.csv", corr);
    bundle.insert(SUMMARY_TXT, summary_text(&summary));
    Ok(bundle)
}
