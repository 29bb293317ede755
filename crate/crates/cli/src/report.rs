//! Run manifests, metric tables, and plot emission.
//!
//! Reports come in two forms: machine-readable JSON at full float precision
//! and a human-readable CSV keyed like the benchmark table columns. Plots are
//! standalone SVG files, each accompanied by a raw-curve CSV so every figure
//! can be recomputed offline.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dbea_core::jsonx;
use dbea_core::metrics::{roc_curve, OODBenchmarkResult, ScoredSample};
use dbea_core::monitor::SceneScore;

use crate::error::{CliError, Result};
use crate::evalrun::DetectionMetrics;
use crate::train::EpochStats;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One row of the benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub map: Option<f64>,
    pub ap50: Option<f64>,
    pub pcorr_all: Option<f64>,
    pub pcorr_tp: Option<f64>,
    pub auroc: Option<f64>,
    pub aupr_in: Option<f64>,
    pub aupr_out: Option<f64>,
    pub fpr_at_95: Option<f64>,
    pub de_at_95: Option<f64>,
}

impl ReportRow {
    pub fn named(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            map: None,
            ap50: None,
            pcorr_all: None,
            pcorr_tp: None,
            auroc: None,
            aupr_in: None,
            aupr_out: None,
            fpr_at_95: None,
            de_at_95: None,
        }
    }

    pub fn with_detection(mut self, metrics: &DetectionMetrics) -> Self {
        self.map = metrics.map;
        self.ap50 = metrics.ap50;
        self.pcorr_all = metrics.pcorr_all;
        self.pcorr_tp = metrics.pcorr_tp;
        self
    }

    pub fn with_ood(mut self, result: &OODBenchmarkResult) -> Self {
        self.auroc = Some(result.auroc);
        self.aupr_in = Some(result.aupr_in);
        self.aupr_out = Some(result.aupr_out);
        self.fpr_at_95 = Some(result.fpr_at_95);
        self.de_at_95 = Some(result.de_at_95);
        self
    }
}

/// Everything a finished run leaves behind, minus the artifact files
/// themselves. Wall-clock timings live only here, keeping every other output
/// byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub wall_seconds: f64,
    pub epochs: Vec<EpochStats>,
    pub rows: Vec<ReportRow>,
    pub files: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes bytes and records the file digest.
pub struct OutputTracker {
    dir: PathBuf,
    files: Vec<FileDigest>,
}

impl OutputTracker {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.files.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn record_existing(&mut self, name: &str) -> Result<()> {
        let bytes = std::fs::read(self.dir.join(name))?;
        self.files.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn into_files(self) -> Vec<FileDigest> {
        self.files
    }
}

fn opt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => String::new(),
    }
}

/// Renders the benchmark table as CSV with the standard column set.
pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(
        "model,mAP,AP50,PCorr-all,PCorr-tp,AUROC,AUPR-In,AUPR-Out,FPR@95,DE@95\n",
    );
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            row.model,
            opt_cell(row.map),
            opt_cell(row.ap50),
            opt_cell(row.pcorr_all),
            opt_cell(row.pcorr_tp),
            opt_cell(row.auroc),
            opt_cell(row.aupr_in),
            opt_cell(row.aupr_out),
            opt_cell(row.fpr_at_95),
            opt_cell(row.de_at_95),
        ));
    }
    out
}

/// Emits report.json (full precision) and report.csv.
pub fn emit_report(tracker: &mut OutputTracker, rows: &[ReportRow]) -> Result<()> {
    let json: Vec<String> = rows
        .iter()
        .map(|r| jsonx::to_json_line(r))
        .collect::<dbea_core::Result<_>>()
        .map_err(CliError::from)?;
    let mut payload = json.join("\n");
    payload.push('\n');
    tracker.write("report.json", payload.as_bytes())?;
    tracker.write("report.csv", rows_to_csv(rows).as_bytes())?;
    Ok(())
}

/// Serializes score dumps as JSON lines.
pub fn scores_to_jsonl(scores: &[SceneScore]) -> Result<String> {
    let mut out = String::new();
    for s in scores {
        out.push_str(&jsonx::to_json_line(s).map_err(CliError::from)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn scores_from_jsonl(text: &str) -> Result<Vec<SceneScore>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(jsonx::from_json_line(line, i + 1).map_err(CliError::from)?);
    }
    Ok(out)
}

/// Histogram of two score sets over a common linear binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    pub counts_id: Vec<usize>,
    pub counts_ood: Vec<usize>,
}

pub fn histogram(id_scores: &[f64], ood_scores: &[f64], bins: usize) -> Result<Histogram> {
    if id_scores.is_empty() || ood_scores.is_empty() || bins == 0 {
        return Err(CliError::Data("histogram needs non-empty inputs and bins".into()));
    }
    let all = id_scores.iter().chain(ood_scores);
    let lo = all.clone().cloned().fold(f64::INFINITY, f64::min);
    let hi = all.cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut counts_id = vec![0usize; bins];
    let mut counts_ood = vec![0usize; bins];
    let place = |v: f64| -> usize {
        let t = ((v - lo) / span * bins as f64).floor() as isize;
        t.clamp(0, bins as isize - 1) as usize
    };
    for &v in id_scores {
        counts_id[place(v)] += 1;
    }
    for &v in ood_scores {
        counts_ood[place(v)] += 1;
    }
    Ok(Histogram {
        lo,
        hi,
        bins,
        counts_id,
        counts_ood,
    })
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_lo,bin_hi,count_id,count_ood\n");
    let width = (h.hi - h.lo).max(1e-300) / h.bins as f64;
    for i in 0..h.bins {
        out.push_str(&format!(
            "{:.17e},{:.17e},{},{}\n",
            h.lo + i as f64 * width,
            h.lo + (i + 1) as f64 * width,
            h.counts_id[i],
            h.counts_ood[i]
        ));
    }
    out
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 48.0;

fn svg_header(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"24\" text-anchor=\"middle\" ",
            "font-family=\"sans-serif\" font-size=\"15\">{title}</text>\n"
        ),
        w = SVG_W,
        h = SVG_H,
        tx = SVG_W / 2.0,
        title = title
    )
}

/// Two-series histogram as side-by-side bars.
pub fn histogram_svg(h: &Histogram, title: &str, id_label: &str, ood_label: &str) -> String {
    let plot_w = SVG_W - 2.0 * MARGIN;
    let plot_h = SVG_H - 2.0 * MARGIN;
    let max_count = h
        .counts_id
        .iter()
        .chain(&h.counts_ood)
        .cloned()
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let bin_w = plot_w / h.bins as f64;
    let mut svg = svg_header(title);
    for (i, (&cid, &cood)) in h.counts_id.iter().zip(&h.counts_ood).enumerate() {
        let x = MARGIN + i as f64 * bin_w;
        let hid = cid as f64 / max_count * plot_h;
        let hood = cood as f64 / max_count * plot_h;
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#3465a4\" fill-opacity=\"0.6\"/>\n",
            x,
            SVG_H - MARGIN - hid,
            bin_w * 0.45,
            hid
        ));
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#cc0000\" fill-opacity=\"0.6\"/>\n",
            x + bin_w * 0.45,
            SVG_H - MARGIN - hood,
            bin_w * 0.45,
            hood
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#3465a4\">{id_label}</text>\n",
        MARGIN,
        MARGIN - 8.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#cc0000\">{ood_label}</text>\n",
        MARGIN + 120.0,
        MARGIN - 8.0
    ));
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = SVG_H - MARGIN,
        r = SVG_W - MARGIN
    ));
    svg.push_str("</svg>\n");
    svg
}

/// ROC polyline.
pub fn roc_svg(points: &[(f64, f64)], title: &str) -> String {
    let plot_w = SVG_W - 2.0 * MARGIN;
    let plot_h = SVG_H - 2.0 * MARGIN;
    let mut svg = svg_header(title);
    let to_xy = |fpr: f64, tpr: f64| {
        (
            MARGIN + fpr * plot_w,
            SVG_H - MARGIN - tpr * plot_h,
        )
    };
    let path: Vec<String> = points
        .iter()
        .map(|&(f, t)| {
            let (x, y) = to_xy(f, t);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#3465a4\" stroke-width=\"2\" points=\"{}\"/>\n",
        path.join(" ")
    ));
    let (x0, y0) = to_xy(0.0, 0.0);
    let (x1, y1) = to_xy(1.0, 1.0);
    svg.push_str(&format!(
        "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y1:.2}\" stroke=\"#888\" stroke-dasharray=\"4\"/>\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"{m}\" y=\"{m2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"none\" stroke=\"black\"/>\n",
        m = MARGIN,
        m2 = MARGIN,
        w = plot_w,
        h = plot_h
    ));
    svg.push_str("</svg>\n");
    svg
}

pub fn roc_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (f, t) in points {
        out.push_str(&format!("{f:.17e},{t:.17e}\n"));
    }
    out
}

/// Emits histogram + ROC SVG/CSV pairs for one ID-vs-OOD score set.
pub fn emit_ood_plots(
    tracker: &mut OutputTracker,
    stem: &str,
    id_scores: &[f64],
    ood_scores: &[f64],
    samples: &[ScoredSample],
) -> Result<()> {
    let h = histogram(id_scores, ood_scores, 30)?;
    tracker.write(&format!("{stem}_hist.csv"), histogram_csv(&h).as_bytes())?;
    tracker.write(
        &format!("{stem}_hist.svg"),
        histogram_svg(&h, stem, "in-distribution", "ood").as_bytes(),
    )?;
    let points = roc_curve(samples).map_err(CliError::from)?;
    tracker.write(&format!("{stem}_roc.csv"), roc_csv(&points).as_bytes())?;
    tracker.write(&format!("{stem}_roc.svg"), roc_svg(&points, stem).as_bytes())?;
    Ok(())
}

/// Re-integrates a ROC CSV with the trapezoid rule; used by the consistency
/// check between reported AUROC and emitted curves.
pub fn auroc_from_roc_csv(text: &str) -> Result<f64> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let fpr: f64 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Data(format!("roc csv line {}", i + 1)))?;
        let tpr: f64 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Data(format!("roc csv line {}", i + 1)))?;
        points.push((fpr, tpr));
    }
    let mut auc = 0.0;
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(auc)
}

/// Writes the manifest; timestamps live only here.
pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::Data(format!("manifest: {e}")))?;
    let mut file = std::fs::File::create(dir.join("manifest.json"))?;
    file.write_all(json.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn now_unix_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dbea_core::metrics::SampleLabel;

    #[test]
    fn histogram_conserves_counts() {
        let id = vec![0.1, 0.2, 0.3, 0.35];
        let ood = vec![0.8, 0.9, 0.95];
        let h = histogram(&id, &ood, 10).unwrap();
        assert_eq!(h.counts_id.iter().sum::<usize>(), id.len());
        assert_eq!(h.counts_ood.iter().sum::<usize>(), ood.len());
        let csv = histogram_csv(&h);
        assert_eq!(csv.lines().count(), 11);
    }

    #[test]
    fn roc_csv_roundtrip_matches_auroc() {
        let samples: Vec<ScoredSample> = [0.9, 0.8, 0.7]
            .iter()
            .map(|&s| ScoredSample::new(s, SampleLabel::Ood))
            .chain([0.4, 0.5, 0.6].iter().map(|&s| ScoredSample::new(s, SampleLabel::InDistribution)))
            .collect();
        let points = roc_curve(&samples).unwrap();
        let csv = roc_csv(&points);
        let auc = auroc_from_roc_csv(&csv).unwrap();
        let want = dbea_core::metrics::auroc(&samples).unwrap();
        assert!((auc - want).abs() < 1e-12);
    }

    #[test]
    fn perfect_separation_roc_hugs_corner() {
        let samples: Vec<ScoredSample> = [0.9, 0.8]
            .iter()
            .map(|&s| ScoredSample::new(s, SampleLabel::Ood))
            .chain([0.1, 0.2].iter().map(|&s| ScoredSample::new(s, SampleLabel::InDistribution)))
            .collect();
        let points = roc_curve(&samples).unwrap();
        assert!(points.contains(&(0.0, 1.0)));
    }

    #[test]
    fn csv_has_expected_header() {
        let rows = vec![ReportRow::named("dbea")];
        let csv = rows_to_csv(&rows);
        assert!(csv.starts_with("model,mAP,AP50,PCorr-all,PCorr-tp,AUROC,AUPR-In,AUPR-Out,FPR@95,DE@95"));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn empty_report_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let mut tracker = OutputTracker::new(dir.path()).unwrap();
        emit_report(&mut tracker, &[]).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn report_json_roundtrips() {
        let row = ReportRow {
            model: "dbea".into(),
            map: Some(0.5),
            ap50: Some(0.75),
            pcorr_all: Some(0.3),
            pcorr_tp: None,
            auroc: Some(0.9321),
            aupr_in: Some(0.95),
            aupr_out: Some(0.91),
            fpr_at_95: Some(0.102),
            de_at_95: Some(0.076),
        };
        let line = jsonx::to_json_line(&row).unwrap();
        let back: ReportRow = jsonx::from_json_line(&line, 1).unwrap();
        assert_eq!(back, row);
    }
}
