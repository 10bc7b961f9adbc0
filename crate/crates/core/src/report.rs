//! Report tables and SVG figures built from an experiment results directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::{
    fmt_opt, predictions_file, subjects_file, SUMMARY_FILE, TASK_FILE,
};
use crate::kv::KvMap;
use crate::signal_model::ValveClass;
use crate::stats;

/// One row of a per-pulse or per-subject prediction table.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub iteration: usize,
    pub subject_id: String,
    pub truth: f64,
    pub outputs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsDir {
    pub task: String,
    pub iterations: usize,
    pub pulses: Vec<PredictionRow>,
    pub subjects: Vec<PredictionRow>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_table(path: &Path, truth_col: usize, first_output: usize, iteration: usize) -> Result<Vec<PredictionRow>> {
    let text = read(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() <= first_output {
            return Err(Error::RaggedRow {
                line: i + 1,
                expected: first_output + 1,
                found: f.len(),
            });
        }
        let num = |k: usize| {
            f[k].trim().parse::<f64>().map_err(|_| Error::BadNumber {
                line: i + 1,
                field: k,
                value: f[k].to_string(),
            })
        };
        rows.push(PredictionRow {
            iteration,
            subject_id: f[0].trim().to_string(),
            truth: num(truth_col)?,
            outputs: (first_output..f.len()).map(num).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

impl ResultsDir {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let kv = KvMap::load(dir.join(TASK_FILE))?;
        let task = kv
            .get_str("task")
            .ok_or_else(|| Error::Format(format!("{}: no task", dir.join(TASK_FILE).display())))?
            .to_string();
        let iterations: usize = kv
            .get("iterations")?
            .ok_or_else(|| Error::Format(format!("{}: no iterations", dir.join(TASK_FILE).display())))?;
        let mut pulses = Vec::new();
        let mut subjects = Vec::new();
        for k in 0..iterations {
            // predictions: subject_id,beat_index,truth,outputs...
            pulses.extend(parse_table(&dir.join(predictions_file(k)), 2, 3, k)?);
            // subjects: subject_id,truth,n_pulses,outputs...
            subjects.extend(parse_table(&dir.join(subjects_file(k)), 1, 3, k)?);
        }
        Ok(Self {
            task,
            iterations,
            pulses,
            subjects,
        })
    }

    pub fn is_regression(&self) -> bool {
        self.pulses.first().is_none_or(|p| p.outputs.len() == 1)
    }
}

/// Minimal SVG scatter/line chart.
pub struct Svg {
    width: f64,
    height: f64,
    margin: f64,
    x: (f64, f64),
    y: (f64, f64),
    body: String,
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = if hi > lo { hi - lo } else { 1.0 };
    (lo - 0.05 * span, hi + 0.05 * span)
}

impl Svg {
    pub fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        Self {
            width: 480.0,
            height: 400.0,
            margin: 50.0,
            x,
            y,
            body: String::new(),
        }
    }

    fn px(&self, x: f64) -> f64 {
        self.margin + (x - self.x.0) / (self.x.1 - self.x.0) * (self.width - 2.0 * self.margin)
    }

    fn py(&self, y: f64) -> f64 {
        self.height - self.margin - (y - self.y.0) / (self.y.1 - self.y.0) * (self.height - 2.0 * self.margin)
    }

    pub fn points(&mut self, pts: &[(f64, f64)], color: &str) {
        for &(x, y) in pts {
            let _ = writeln!(
                self.body,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.7"/>"#,
                self.px(x),
                self.py(y)
            );
        }
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], color: &str, dashed: bool) {
        let d: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let dash = if dashed { r#" stroke-dasharray="5,4""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            d.join(" ")
        );
    }

    pub fn label(&mut self, x: f64, y: f64, text: &str, color: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" fill="{color}">{}</text>"#,
            self.px(x),
            self.py(y),
            escape(text)
        );
    }

    pub fn finish(&self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let (w, h, m) = (self.width, self.height, self.margin);
        let mut s = format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="white"/>
<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>
<text x="{}" y="24" font-size="14" text-anchor="middle">{}</text>
<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>
<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>
"#,
            w - 2.0 * m,
            h - 2.0 * m,
            w / 2.0,
            escape(title),
            w / 2.0,
            h - 12.0,
            escape(xlabel),
            h / 2.0,
            h / 2.0,
            escape(ylabel)
        );
        for k in 0..=4 {
            let fx = self.x.0 + (self.x.1 - self.x.0) * k as f64 / 4.0;
            let fy = self.y.0 + (self.y.1 - self.y.0) * k as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
                self.px(fx),
                h - m + 14.0,
                tick(fx)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
                m - 4.0,
                self.py(fy) + 3.0,
                tick(fy)
            );
        }
        s.push_str(&self.body);
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    format!("{:.2}", v)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub const CORRELATION_CSV: &str = "correlation.csv";
pub const CORRELATION_SVG: &str = "correlation.svg";
pub const BLAND_ALTMAN_CSV: &str = "bland_altman.csv";
pub const BLAND_ALTMAN_SVG: &str = "bland_altman.svg";
pub const ROC_CSV: &str = "roc.csv";
pub const ROC_SVG: &str = "roc.svg";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const VOTE_CSV: &str = "subject_vote.csv";

/// Per-subject correlation and agreement of pooled held-out predictions.
fn regression_report(r: &ResultsDir, out: &Path) -> Result<Vec<PathBuf>> {
    let truth: Vec<f64> = r.subjects.iter().map(|s| s.truth).collect();
    let pred: Vec<f64> = r.subjects.iter().map(|s| s.outputs[0]).collect();
    let r_val = stats::pearson(&truth, &pred).ok();
    let slope0 = stats::fit_through_origin(&truth, &pred).ok();
    let fit = stats::fit_linear(&truth, &pred).ok();
    let mse = (!truth.is_empty())
        .then(|| truth.iter().zip(&pred).map(|(t, p)| (p - t).powi(2)).sum::<f64>() / truth.len() as f64);

    let mut csv = String::from("iteration,subject_id,true_vmax,pred_vmax\n");
    for s in &r.subjects {
        let _ = writeln!(csv, "{},{},{},{}", s.iteration, s.subject_id, s.truth, s.outputs[0]);
    }
    let _ = writeln!(csv, "# pearson_r={}", fmt_opt(r_val));
    let _ = writeln!(csv, "# slope_origin={}", fmt_opt(slope0));
    let _ = writeln!(csv, "# fit_slope={}", fmt_opt(fit.map(|f| f.0)));
    let _ = writeln!(csv, "# fit_intercept={}", fmt_opt(fit.map(|f| f.1)));
    let _ = writeln!(csv, "# mse={}", fmt_opt(mse));
    let _ = writeln!(csv, "# rmse={}", fmt_opt(mse.map(f64::sqrt)));
    let mut files = vec![write(out.join(CORRELATION_CSV), &csv)?];

    let lo = truth.iter().chain(&pred).copied().fold(f64::INFINITY, f64::min);
    let hi = truth.iter().chain(&pred).copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { padded(lo, hi) } else { (0.0, 1.0) };
    let mut svg = Svg::new((lo, hi), (lo, hi));
    svg.polyline(&[(lo, lo), (hi, hi)], "#888888", true);
    if let Some(k) = slope0 {
        svg.polyline(&[(lo, k * lo), (hi, k * hi)], COLORS[1], false);
        svg.label(lo + 0.05 * (hi - lo), hi - 0.08 * (hi - lo), &format!("y = {k:.2}x, r = {}", r_val.map_or("n/a".into(), |v| format!("{v:.2}"))), COLORS[1]);
    }
    let pts: Vec<(f64, f64)> = truth.iter().copied().zip(pred.iter().copied()).collect();
    svg.points(&pts, COLORS[0]);
    files.push(write(
        out.join(CORRELATION_SVG),
        &svg.finish("Per-subject V_max", "true V_max (m/s)", "predicted V_max (m/s)"),
    )?);

    let ba = stats::bland_altman(&pred, &truth).ok();
    let mut csv = String::from("iteration,subject_id,mean,difference\n");
    let pts: Vec<(f64, f64)> = truth.iter().zip(&pred).map(|(t, p)| (0.5 * (t + p), p - t)).collect();
    for (s, (m, d)) in r.subjects.iter().zip(&pts) {
        let _ = writeln!(csv, "{},{},{m},{d}", s.iteration, s.subject_id);
    }
    if let Some(b) = &ba {
        let _ = writeln!(csv, "# n={}", b.n);
        let _ = writeln!(csv, "# bias={}", b.bias);
        let _ = writeln!(csv, "# sd={}", b.sd);
        let _ = writeln!(csv, "# loa={}", b.loa);
        let _ = writeln!(csv, "# t={}", b.t_statistic);
        let _ = writeln!(csv, "# p={}", b.p_value);
        let _ = writeln!(csv, "# fixed_bias={}", b.fixed_bias);
    }
    files.push(write(out.join(BLAND_ALTMAN_CSV), &csv)?);

    let xs = pts.iter().map(|p| p.0);
    let (xlo, xhi) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let spread = ba.map_or(0.0, |b| b.bias.abs() + b.loa);
    let dmax = pts.iter().map(|p| p.1.abs()).fold(spread, f64::max).max(1e-6);
    let (xlo, xhi) = if xlo.is_finite() { padded(xlo, xhi) } else { (0.0, 1.0) };
    let mut svg = Svg::new((xlo, xhi), padded(-dmax, dmax));
    if let Some(b) = ba {
        svg.polyline(&[(xlo, b.bias), (xhi, b.bias)], COLORS[1], false);
        for l in [b.bias + b.loa, b.bias - b.loa] {
            svg.polyline(&[(xlo, l), (xhi, l)], COLORS[1], true);
        }
        svg.label(xlo + 0.02 * (xhi - xlo), b.bias + b.loa, &format!("bias {:.2}, LOA ±{:.2}", b.bias, b.loa), COLORS[1]);
    }
    svg.points(&pts, COLORS[0]);
    files.push(write(
        out.join(BLAND_ALTMAN_SVG),
        &svg.finish("Bland-Altman", "mean of true and predicted (m/s)", "predicted - true (m/s)"),
    )?);
    Ok(files)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Per-pulse one-vs-rest ROC curves, the confusion matrix and a
/// supplementary per-subject majority vote.
fn classification_report(r: &ResultsDir, out: &Path) -> Result<Vec<PathBuf>> {
    let truth: Vec<usize> = r.pulses.iter().map(|p| p.truth as usize).collect();
    let mut roc_csv = String::from("class,threshold,fpr,tpr\n");
    let mut svg = Svg::new((0.0, 1.0), (0.0, 1.0));
    svg.polyline(&[(0.0, 0.0), (1.0, 1.0)], "#888888", true);
    for c in ValveClass::ALL {
        let k = c.index();
        let scores: Vec<f64> = r.pulses.iter().map(|p| p.outputs[k]).collect();
        let labels: Vec<bool> = truth.iter().map(|&t| t == k).collect();
        match stats::roc_auc(&scores, &labels) {
            Ok(roc) => {
                for ((t, f), p) in roc.thresholds.iter().zip(&roc.fpr).zip(&roc.tpr) {
                    let _ = writeln!(roc_csv, "{},{t},{f},{p}", c.name());
                }
                let _ = writeln!(roc_csv, "# auc_{}={}", c.name(), roc.auc);
                let pts: Vec<(f64, f64)> = roc.fpr.iter().copied().zip(roc.tpr.iter().copied()).collect();
                svg.polyline(&pts, COLORS[k], false);
                svg.label(0.55, 0.05 + 0.07 * (3 - k) as f64, &format!("{} AUC {:.3}", c.name(), roc.auc), COLORS[k]);
            }
            Err(_) => {
                let _ = writeln!(roc_csv, "# auc_{}=", c.name());
            }
        }
    }
    let mut files = vec![write(out.join(ROC_CSV), &roc_csv)?];
    files.push(write(
        out.join(ROC_SVG),
        &svg.finish("One-vs-rest ROC (per pulse)", "false positive rate", "true positive rate"),
    )?);

    let pred: Vec<usize> = r.pulses.iter().map(|p| argmax(&p.outputs)).collect();
    let cm = stats::confusion(&pred, &truth, ValveClass::COUNT)?;
    let names: Vec<&str> = ValveClass::ALL.iter().map(|c| c.name()).collect();
    let mut csv = format!("true\\pred,{}\n", names.join(","));
    for (c, row) in cm.matrix.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(csv, "{},{}", names[c], cells.join(","));
    }
    csv.push_str("class,precision,recall\n");
    for (c, name) in names.iter().enumerate() {
        let _ = writeln!(csv, "{name},{},{}", fmt_opt(cm.precision[c]), fmt_opt(cm.recall[c]));
    }
    files.push(write(out.join(CONFUSION_CSV), &csv)?);

    let mut vote = String::from("iteration,subject_id,true_class,voted_class,votes,n_pulses\n");
    let mut keys: Vec<(usize, &str)> = r.pulses.iter().map(|p| (p.iteration, p.subject_id.as_str())).collect();
    keys.dedup();
    for (it, id) in keys {
        let mine: Vec<&PredictionRow> = r
            .pulses
            .iter()
            .filter(|p| p.iteration == it && p.subject_id == id)
            .collect();
        let mut counts = [0usize; ValveClass::COUNT];
        for p in &mine {
            counts[argmax(&p.outputs)] += 1;
        }
        // ties go to the lowest class index
        let (best, votes) = counts
            .iter()
            .enumerate()
            .fold((0, 0), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        let t = mine[0].truth as usize;
        let _ = writeln!(vote, "{it},{id},{},{},{votes},{}", names[t], names[best], mine.len());
    }
    files.push(write(out.join(VOTE_CSV), &vote)?);
    Ok(files)
}

/// Writes the report for one results directory; returns the files written.
pub fn write_report(results: impl AsRef<Path>, out: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let (results, out) = (results.as_ref(), out.as_ref());
    let r = ResultsDir::load(results)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = if r.is_regression() {
        regression_report(&r, out)?
    } else {
        classification_report(&r, out)?
    };
    let summary = results.join(SUMMARY_FILE);
    let dst = out.join(format!("summary_{}.csv", r.task));
    fs::copy(&summary, &dst).map_err(|e| Error::io(&summary, e))?;
    files.push(dst);
    Ok(files)
}
