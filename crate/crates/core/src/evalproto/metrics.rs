use std::fmt::Write as _;

use super::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::numerics::Rng;
use crate::skeleton::Condition;

fn check_pair(gallery: &EmbeddingSet, probe: &EmbeddingSet) -> Result<()> {
    if gallery.is_empty() {
        return Err(Error::Protocol("gallery is empty".into()));
    }
    if probe.is_empty() {
        return Err(Error::Protocol("probe set is empty".into()));
    }
    if gallery.dim() != probe.dim() {
        return Err(Error::Protocol(format!(
            "gallery dimension {} differs from probe dimension {}",
            gallery.dim(),
            probe.dim()
        )));
    }
    Ok(())
}

/// Index of the nearest gallery row (squared Euclidean); ties keep the lowest index.
pub fn nearest(gallery: &EmbeddingSet, query: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for g in 0..gallery.len() {
        let d: f64 = gallery.row(g).iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (g, d);
        }
    }
    best.0
}

/// Fraction of probes whose nearest gallery clip has the same label.
pub fn rank1(gallery: &EmbeddingSet, probe: &EmbeddingSet) -> Result<f64> {
    check_pair(gallery, probe)?;
    let hits = (0..probe.len())
        .filter(|&i| gallery.labels[nearest(gallery, probe.row(i))] == probe.labels[i])
        .count();
    Ok(hits as f64 / probe.len() as f64)
}

/// Accuracy matrix of one probe condition.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    pub condition: Condition,
    /// `matrix[g][p]`: gallery view `g`, probe view `p`, identical views included.
    pub matrix: Vec<Vec<f64>>,
    /// Per probe view, mean over gallery views other than itself.
    pub view_averages: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `view_averages`.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossViewReport {
    pub views: Vec<i32>,
    pub conditions: Vec<ConditionReport>,
}

impl CrossViewReport {
    pub fn condition(&self, c: Condition) -> Option<&ConditionReport> {
        self.conditions.iter().find(|r| r.condition == c)
    }
}

/// `(mean of averages excluding g == p per probe view, their mean, population std)`.
pub fn summarize(matrix: &[Vec<f64>]) -> (Vec<f64>, f64, f64) {
    let n = matrix.len();
    let averages: Vec<f64> = (0..n)
        .map(|p| (0..n).filter(|&g| g != p).map(|g| matrix[g][p]).sum::<f64>() / (n - 1) as f64)
        .collect();
    let mean = averages.iter().sum::<f64>() / n as f64;
    let var = averages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    (averages, mean, var.sqrt())
}

/// Gallery clips at view `g` against probe clips of each condition at view `p`,
/// for every ordered pair of `views`. Conditions without probes are skipped.
pub fn cross_view_eval(
    gallery: &EmbeddingSet,
    probe: &EmbeddingSet,
    views: &[i32],
    exec: Execution,
) -> Result<CrossViewReport> {
    if views.len() < 2 {
        return Err(Error::Protocol(format!(
            "cross-view evaluation needs at least two views, got {views:?}"
        )));
    }
    check_pair(gallery, probe)?;
    let galleries: Vec<EmbeddingSet> = views
        .iter()
        .map(|&v| gallery.filter(|i| gallery.views[i] == v))
        .collect();
    if let Some(i) = galleries.iter().position(EmbeddingSet::is_empty) {
        return Err(Error::Protocol(format!("no gallery clips at view {}", views[i])));
    }
    let mut conditions = Vec::new();
    for condition in Condition::ALL {
        let probes: Vec<EmbeddingSet> = views
            .iter()
            .map(|&v| probe.filter(|i| probe.views[i] == v && probe.conditions[i] == condition))
            .collect();
        if probes.iter().all(EmbeddingSet::is_empty) {
            continue;
        }
        if let Some(i) = probes.iter().position(EmbeddingSet::is_empty) {
            return Err(Error::Protocol(format!(
                "no {condition} probe clips at view {}",
                views[i]
            )));
        }
        let n = views.len();
        let cells = exec::map(exec, n * n, |k| rank1(&galleries[k / n], &probes[k % n]));
        let mut matrix = vec![vec![0.0; n]; n];
        for (k, cell) in cells.into_iter().enumerate() {
            matrix[k / n][k % n] = cell?;
        }
        let (view_averages, mean, std) = summarize(&matrix);
        conditions.push(ConditionReport {
            condition,
            matrix,
            view_averages,
            mean,
            std,
        });
    }
    if conditions.is_empty() {
        return Err(Error::Protocol("no probe clips at the requested views".into()));
    }
    Ok(CrossViewReport {
        views: views.to_vec(),
        conditions,
    })
}

/// Mean rank-1 over `trials` random draws of `size` gallery identities per size.
/// Probes are restricted to the drawn identities.
pub fn gallery_size_sweep(
    gallery: &EmbeddingSet,
    probe: &EmbeddingSet,
    sizes: &[usize],
    trials: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    check_pair(gallery, probe)?;
    let mut ids = gallery.labels.clone();
    ids.sort_unstable();
    ids.dedup();
    if let Some(&s) = sizes.iter().find(|&&s| s == 0 || s > ids.len()) {
        return Err(Error::Protocol(format!(
            "gallery size {s} outside 1..={} identities",
            ids.len()
        )));
    }
    if trials == 0 {
        return Err(Error::Protocol("gallery size sweep needs at least one trial".into()));
    }
    sizes
        .iter()
        .map(|&size| {
            let mut total = 0.0;
            for _ in 0..trials {
                let mut chosen: Vec<u32> = rng.sample_indices(ids.len(), size).into_iter().map(|i| ids[i]).collect();
                chosen.sort_unstable();
                let keep = |l: &u32| chosen.binary_search(l).is_ok();
                let g = gallery.filter(|i| keep(&gallery.labels[i]));
                let p = probe.filter(|i| keep(&probe.labels[i]));
                total += rank1(&g, &p)?;
            }
            Ok(total / trials as f64)
        })
        .collect()
}

/// Long-form CSV: `kind,condition,gallery_view,probe_view,value` with kinds
/// `cell`, `view_average`, `mean` and `std`.
pub fn report_csv(report: &CrossViewReport) -> String {
    let mut s = String::from("kind,condition,gallery_view,probe_view,value\n");
    for c in &report.conditions {
        let name = c.condition.as_str();
        for (gi, g) in report.views.iter().enumerate() {
            for (pi, p) in report.views.iter().enumerate() {
                let _ = writeln!(s, "cell,{name},{g},{p},{}", c.matrix[gi][pi]);
            }
        }
        for (p, a) in report.views.iter().zip(&c.view_averages) {
            let _ = writeln!(s, "view_average,{name},,{p},{a}");
        }
        let _ = writeln!(s, "mean,{name},,,{}", c.mean);
        let _ = writeln!(s, "std,{name},,,{}", c.std);
    }
    s
}

/// Aligned table of per-probe-view averages (percent), one row per condition.
pub fn report_text(report: &CrossViewReport) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<10}", "probe");
    for v in &report.views {
        let _ = write!(s, "{:>8}", format!("{v}°"));
    }
    let _ = writeln!(s, "{:>9}{:>8}", "Average", "Std");
    for c in &report.conditions {
        let _ = write!(s, "{:<10}", c.condition.as_str());
        for a in &c.view_averages {
            let _ = write!(s, "{:>8.1}", 100.0 * a);
        }
        let _ = writeln!(s, "{:>9.1}{:>8.1}", 100.0 * c.mean, 100.0 * c.std);
    }
    s
}

/// Full gallery x probe matrix of one condition, percent.
pub fn matrix_text(report: &CrossViewReport, c: &ConditionReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} (rows: gallery view, columns: probe view)", c.condition);
    let _ = write!(s, "{:<8}", "");
    for v in &report.views {
        let _ = write!(s, "{:>8}", v);
    }
    s.push('\n');
    for (g, row) in report.views.iter().zip(&c.matrix) {
        let _ = write!(s, "{:<8}", g);
        for x in row {
            let _ = write!(s, "{:>8.1}", 100.0 * x);
        }
        s.push('\n');
    }
    s
}
