//! Post-hoc analysis of training runs: emergence-step detection, cross-run
//! monotonicity, and curve collapse under `(|V| * K)^e` step scaling.

use crate::train::MetricsRecord;
use crate::vocab::KSpec;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Plot(#[from] crate::plot::PlotError),
    #[error("curve is empty")]
    EmptyCurve,
    #[error("steps must be strictly increasing")]
    UnsortedCurve,
    #[error("need at least {need} groups with emergence steps, found {found}")]
    InsufficientData { need: usize, found: usize },
    #[error("threshold must be positive and finite")]
    BadThreshold,
    #[error("run directory {0} is missing {1}")]
    MissingRunFile(String, String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// First logged step whose accuracy exceeds `threshold`; `None` if the curve
/// never crosses it.
pub fn emergence_step(
    curve: &[(u64, f64)],
    threshold: f64,
) -> Result<Option<u64>, AnalysisError> {
    if curve.is_empty() {
        return Err(AnalysisError::EmptyCurve);
    }
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(AnalysisError::BadThreshold);
    }
    for w in curve.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(AnalysisError::UnsortedCurve);
        }
    }
    Ok(curve.iter().find(|(_, acc)| *acc > threshold).map(|(s, _)| *s))
}

/// One emergence point for collapse analysis.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GroupPoint {
    pub vocab_size: u64,
    pub k: u32,
    pub t_c: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CollapseStats {
    /// Exponent used for `scaled_dispersion` (the caller's choice).
    pub exponent: f64,
    /// Coefficient of variation of the raw emergence steps.
    pub raw_dispersion: f64,
    /// Coefficient of variation after dividing steps by `(|V|*K)^exponent`.
    pub scaled_dispersion: f64,
    /// Exponent in [0, 1] (grid step 0.05) minimizing the scaled CV; ties
    /// break toward 0.
    pub best_exponent: f64,
    pub best_dispersion: f64,
}

fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

fn scaled_cv(points: &[GroupPoint], exponent: f64) -> f64 {
    let scaled: Vec<f64> = points
        .iter()
        .map(|p| p.t_c / ((p.vocab_size * p.k as u64) as f64).powf(exponent))
        .collect();
    coefficient_of_variation(&scaled)
}

/// Collapse statistics over emergence points grouped by `(|V|, K)`.
pub fn collapse(points: &[GroupPoint], exponent: f64) -> Result<CollapseStats, AnalysisError> {
    if points.len() < 2 {
        return Err(AnalysisError::InsufficientData {
            need: 2,
            found: points.len(),
        });
    }
    let raw: Vec<f64> = points.iter().map(|p| p.t_c).collect();
    let raw_dispersion = coefficient_of_variation(&raw);
    let scaled_dispersion = scaled_cv(points, exponent);
    let mut best_exponent = 0.0;
    let mut best_dispersion = f64::INFINITY;
    for step in 0..=20 {
        let e = step as f64 * 0.05;
        let cv = scaled_cv(points, e);
        // ties (up to fp noise) break toward the lower exponent
        if cv < best_dispersion * (1.0 - 1e-9) {
            best_dispersion = cv;
            best_exponent = e;
        }
    }
    Ok(CollapseStats {
        exponent,
        raw_dispersion,
        scaled_dispersion,
        best_exponent,
        best_dispersion,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Monotonicity {
    pub spearman: f64,
    pub non_decreasing: bool,
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation between vocabulary size and emergence step, with
/// missing emergence treated as later than everything else. Requires at
/// least three vocabulary sizes.
pub fn monotonicity(entries: &[(u64, Option<u64>)]) -> Result<Monotonicity, AnalysisError> {
    if entries.len() < 3 {
        return Err(AnalysisError::InsufficientData {
            need: 3,
            found: entries.len(),
        });
    }
    let xs: Vec<f64> = entries.iter().map(|(v, _)| *v as f64).collect();
    let ys: Vec<f64> = entries
        .iter()
        .map(|(_, s)| s.map(|x| x as f64).unwrap_or(f64::INFINITY))
        .collect();
    let spearman = pearson(&ranks(&xs), &ranks(&ys));
    let mut sorted: Vec<(f64, f64)> = xs.iter().cloned().zip(ys.iter().cloned()).collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let non_decreasing = sorted.windows(2).all(|w| w[1].1 >= w[0].1);
    Ok(Monotonicity {
        spearman,
        non_decreasing,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmergenceEntry {
    pub run_id: String,
    pub vocab_size: u64,
    pub k: u32,
    /// Task code or "mean_word"/"mean_char".
    pub task: String,
    pub emergence_step: Option<u64>,
    pub threshold: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveEntry {
    pub run_id: String,
    pub vocab_size: u64,
    pub k: u32,
    pub task: String,
    pub steps: Vec<u64>,
    pub accuracy: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmergenceReport {
    pub threshold: f64,
    pub entries: Vec<EmergenceEntry>,
    /// Collapse over the per-run `mean_char` emergence points.
    pub collapse: Option<CollapseStats>,
    /// Monotonicity of `mean_char` emergence vs `|V|` within each K.
    pub monotonicity_char: Vec<(u32, Monotonicity)>,
    pub monotonicity_word: Vec<(u32, Monotonicity)>,
    pub curves: Vec<CurveEntry>,
}

/// Minimal view of a run directory: its manifest identifiers plus metrics.
pub struct RunData {
    pub run_id: String,
    pub vocab_size: u64,
    pub k: u32,
    pub records: Vec<MetricsRecord>,
}

/// Reads `manifest.json` + `metrics.jsonl` from a run directory.
pub fn read_run_dir(dir: &Path) -> Result<RunData, AnalysisError> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(AnalysisError::MissingRunFile(
            dir.display().to_string(),
            "manifest.json".to_string(),
        ));
    }
    #[derive(Deserialize)]
    struct ManifestView {
        run_id: String,
        vocab_size: u64,
        k: KSpec,
    }
    let manifest: ManifestView = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
    let metrics_path = dir.join("metrics.jsonl");
    if !metrics_path.exists() {
        return Err(AnalysisError::MissingRunFile(
            dir.display().to_string(),
            "metrics.jsonl".to_string(),
        ));
    }
    let mut records = Vec::new();
    for line in std::fs::read_to_string(metrics_path)?.lines() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line)?);
    }
    let k = match manifest.k {
        KSpec::Fixed(k) => k,
        KSpec::Mixed => 0,
    };
    Ok(RunData {
        run_id: manifest.run_id,
        vocab_size: manifest.vocab_size,
        k,
        records,
    })
}

/// Per-task accuracy curves of one run, keyed by task label.
pub fn curves_by_task(records: &[MetricsRecord]) -> BTreeMap<String, Vec<(u64, f64)>> {
    let mut map: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
    for r in records {
        map.entry(r.task.clone()).or_default().push((r.step, r.accuracy));
    }
    for curve in map.values_mut() {
        curve.sort_by_key(|(s, _)| *s);
        curve.dedup_by_key(|(s, _)| *s);
    }
    map
}

/// Full analysis over a set of runs.
pub fn analyze(runs: &[RunData], threshold: f64) -> Result<EmergenceReport, AnalysisError> {
    let mut entries = Vec::new();
    let mut curves = Vec::new();
    let mut char_points = Vec::new();
    // (k -> vec of (vocab_size, step)) for the level means
    let mut char_mono: BTreeMap<u32, Vec<(u64, Option<u64>)>> = BTreeMap::new();
    let mut word_mono: BTreeMap<u32, Vec<(u64, Option<u64>)>> = BTreeMap::new();
    for run in runs {
        let by_task = curves_by_task(&run.records);
        for (task, curve) in &by_task {
            let step = emergence_step(curve, threshold)?;
            entries.push(EmergenceEntry {
                run_id: run.run_id.clone(),
                vocab_size: run.vocab_size,
                k: run.k,
                task: task.clone(),
                emergence_step: step,
                threshold,
            });
            if task == "mean_char" || task == "mean_word" {
                curves.push(CurveEntry {
                    run_id: run.run_id.clone(),
                    vocab_size: run.vocab_size,
                    k: run.k,
                    task: task.clone(),
                    steps: curve.iter().map(|(s, _)| *s).collect(),
                    accuracy: curve.iter().map(|(_, a)| *a).collect(),
                });
            }
            if task == "mean_char" {
                if let Some(s) = step {
                    char_points.push(GroupPoint {
                        vocab_size: run.vocab_size,
                        k: run.k,
                        t_c: s as f64,
                    });
                }
                char_mono.entry(run.k).or_default().push((run.vocab_size, step));
            }
            if task == "mean_word" {
                word_mono.entry(run.k).or_default().push((run.vocab_size, step));
            }
        }
    }
    let collapse_stats = if char_points.len() >= 2 {
        Some(collapse(&char_points, 0.5)?)
    } else {
        None
    };
    let mono = |m: BTreeMap<u32, Vec<(u64, Option<u64>)>>| {
        m.into_iter()
            .filter(|(_, v)| v.len() >= 3)
            .map(|(k, v)| monotonicity(&v).map(|r| (k, r)))
            .collect::<Result<Vec<_>, _>>()
    };
    Ok(EmergenceReport {
        threshold,
        entries,
        collapse: collapse_stats,
        monotonicity_char: mono(char_mono)?,
        monotonicity_word: mono(word_mono)?,
        curves,
    })
}

/// CSV of emergence points: `vocab_size,k,task,emergence_step,scaled_step`.
pub fn report_csv(report: &EmergenceReport) -> String {
    let exponent = report.collapse.map(|c| c.exponent).unwrap_or(0.5);
    let mut out = String::from("vocab_size,k,task,emergence_step,scaled_step\n");
    for e in &report.entries {
        let (step, scaled) = match e.emergence_step {
            Some(s) => {
                let scale = ((e.vocab_size * e.k as u64) as f64).powf(exponent);
                (s.to_string(), format!("{}", s as f64 / scale))
            }
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.vocab_size, e.k, e.task, step, scaled
        ));
    }
    out
}

/// Renders the report's standard plot set (SVG + CSV) into a directory:
/// accuracy-vs-step per level mean, emergence-step vs vocabulary size, and
/// the raw-vs-collapsed emergence scatter.
pub fn emit_plots(report: &EmergenceReport, dir: &Path) -> Result<Vec<std::path::PathBuf>, AnalysisError> {
    use crate::plot::{csv_table, line_chart, scatter_chart, ChartOptions, Series};
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    for level in ["mean_char", "mean_word"] {
        let series: Vec<Series> = report
            .curves
            .iter()
            .filter(|c| c.task == level)
            .map(|c| Series {
                label: format!("{} (|V|={}, K={})", c.run_id, c.vocab_size, c.k),
                points: c
                    .steps
                    .iter()
                    .zip(&c.accuracy)
                    .map(|(&s, &a)| (s as f64, a))
                    .collect(),
            })
            .collect();
        if series.is_empty() {
            continue;
        }
        let svg = line_chart(
            &ChartOptions {
                title: format!("Exact-match accuracy vs training step ({level})"),
                x_label: "training step".to_string(),
                y_label: "accuracy".to_string(),
                ..ChartOptions::default()
            },
            &series,
        )?;
        let path = dir.join(format!("accuracy_vs_step_{level}.svg"));
        std::fs::write(&path, svg)?;
        written.push(path);
        let rows: Vec<Vec<String>> = report
            .curves
            .iter()
            .filter(|c| c.task == level)
            .flat_map(|c| {
                c.steps.iter().zip(&c.accuracy).map(|(&s, &a)| {
                    vec![c.run_id.clone(), s.to_string(), a.to_string()]
                })
            })
            .collect();
        let path = dir.join(format!("accuracy_vs_step_{level}.csv"));
        std::fs::write(&path, csv_table(&["run_id", "step", "accuracy"], &rows))?;
        written.push(path);
    }

    // emergence step vs vocabulary size, one series per K
    let mut by_k: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
    for e in &report.entries {
        if e.task == "mean_char" {
            if let Some(s) = e.emergence_step {
                by_k.entry(e.k).or_default().push((e.vocab_size as f64, s as f64));
            }
        }
    }
    if !by_k.is_empty() {
        let series: Vec<Series> = by_k
            .iter()
            .map(|(k, pts)| {
                let mut pts = pts.clone();
                pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                Series {
                    label: format!("K={k}"),
                    points: pts,
                }
            })
            .collect();
        let svg = line_chart(
            &ChartOptions {
                title: "Character-level emergence step vs vocabulary size".to_string(),
                x_label: "|V|".to_string(),
                y_label: "emergence step".to_string(),
                log_x: true,
                ..ChartOptions::default()
            },
            &series,
        )?;
        let path = dir.join("emergence_vs_vocab.svg");
        std::fs::write(&path, svg)?;
        written.push(path);
    }

    // raw vs collapsed scatter
    if let Some(stats) = &report.collapse {
        let raw: Vec<(f64, f64)> = report
            .entries
            .iter()
            .filter(|e| e.task == "mean_char")
            .filter_map(|e| {
                e.emergence_step
                    .map(|s| ((e.vocab_size * e.k as u64) as f64, s as f64))
            })
            .collect();
        let scaled: Vec<(f64, f64)> = raw
            .iter()
            .map(|&(vk, s)| (vk, s / vk.powf(stats.exponent)))
            .collect();
        let series = [
            Series { label: "raw emergence step".to_string(), points: raw },
            Series {
                label: format!("step / (|V|K)^{}", stats.exponent),
                points: scaled,
            },
        ];
        let svg = scatter_chart(
            &ChartOptions {
                title: "Emergence points before and after step scaling".to_string(),
                x_label: "|V| * K".to_string(),
                y_label: "step".to_string(),
                log_x: true,
                caption: Some(format!(
                    "scaled CV {:.4} vs raw CV {:.4} (best exponent {:.2})",
                    stats.scaled_dispersion, stats.raw_dispersion, stats.best_exponent
                )),
            },
            &series,
        )?;
        let path = dir.join("collapse_scatter.svg");
        std::fs::write(&path, svg)?;
        written.push(path);
    }

    let path = dir.join("emergence.csv");
    std::fs::write(&path, report_csv(report))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emergence_first_crossing() {
        let curve = vec![(0, 0.0), (100, 0.004), (200, 0.02)];
        assert_eq!(emergence_step(&curve, 0.005).unwrap(), Some(200));
        let zero = vec![(0, 0.0), (100, 0.0)];
        assert_eq!(emergence_step(&zero, 0.005).unwrap(), None);
        let pos = vec![(0, 0.0), (50, 0.001), (70, 0.3)];
        assert_eq!(emergence_step(&pos, 0.0).unwrap(), Some(50));
        assert!(matches!(
            emergence_step(&[], 0.005),
            Err(AnalysisError::EmptyCurve)
        ));
        assert!(matches!(
            emergence_step(&[(5, 0.0), (5, 0.1)], 0.005),
            Err(AnalysisError::UnsortedCurve)
        ));
    }

    #[test]
    fn emergence_monotone_in_threshold() {
        let mut rng = crate::rng::Rng::from_seed(4);
        for _ in 0..200 {
            let mut curve = Vec::new();
            let mut acc: f64 = 0.0;
            for s in 0..20 {
                acc = (acc + rng.uniform() * 0.1).min(1.0);
                curve.push((s * 10, acc));
            }
            let lo = emergence_step(&curve, 0.1).unwrap();
            let hi = emergence_step(&curve, 0.3).unwrap();
            match (lo, hi) {
                (Some(a), Some(b)) => assert!(a <= b),
                (None, Some(_)) => panic!("higher threshold crossed but lower did not"),
                _ => {}
            }
        }
    }

    #[test]
    fn collapse_on_sqrt_fixture() {
        let mut points = Vec::new();
        for vexp in 8..=12u32 {
            for k in [4u32, 6, 8] {
                let vs = 1u64 << vexp;
                points.push(GroupPoint {
                    vocab_size: vs,
                    k,
                    t_c: 7.0 * ((vs * k as u64) as f64).sqrt(),
                });
            }
        }
        let stats = collapse(&points, 0.5).unwrap();
        assert!(stats.scaled_dispersion < 1e-9, "{}", stats.scaled_dispersion);
        assert!((stats.best_exponent - 0.5).abs() < 1e-12);
        assert!(stats.raw_dispersion > 0.1);
    }

    #[test]
    fn collapse_degenerate_ties_toward_zero() {
        let points: Vec<GroupPoint> = [(256u64, 4u32), (1024, 4), (4096, 8)]
            .iter()
            .map(|&(v, k)| GroupPoint {
                vocab_size: v,
                k,
                t_c: 500.0,
            })
            .collect();
        let stats = collapse(&points, 0.5).unwrap();
        assert_eq!(stats.raw_dispersion, 0.0);
        assert_eq!(stats.best_exponent, 0.0);
    }

    #[test]
    fn collapse_recovers_planted_exponent() {
        let mut points = Vec::new();
        for vexp in 8..=14u32 {
            for k in [4u32, 6, 8] {
                let vs = 1u64 << vexp;
                points.push(GroupPoint {
                    vocab_size: vs,
                    k,
                    t_c: 3.0 * ((vs * k as u64) as f64).powf(0.8),
                });
            }
        }
        let stats = collapse(&points, 0.5).unwrap();
        assert!(
            (stats.best_exponent - 0.8).abs() < 0.05 + 1e-12,
            "{}",
            stats.best_exponent
        );
    }

    #[test]
    fn collapse_is_scale_invariant() {
        let points: Vec<GroupPoint> = vec![
            GroupPoint { vocab_size: 256, k: 4, t_c: 130.0 },
            GroupPoint { vocab_size: 1024, k: 4, t_c: 260.0 },
            GroupPoint { vocab_size: 4096, k: 8, t_c: 810.0 },
        ];
        let a = collapse(&points, 0.5).unwrap();
        let scaled: Vec<GroupPoint> = points
            .iter()
            .map(|p| GroupPoint { t_c: p.t_c * 37.0, ..*p })
            .collect();
        let b = collapse(&scaled, 0.5).unwrap();
        assert!((a.raw_dispersion - b.raw_dispersion).abs() < 1e-12);
        assert!((a.scaled_dispersion - b.scaled_dispersion).abs() < 1e-12);
        assert_eq!(a.best_exponent, b.best_exponent);
    }

    proptest::proptest! {
        #[test]
        fn collapse_invariant_under_step_rescaling(
            factor in 1e-3f64..1e3,
            raw in proptest::collection::vec((8u32..15, 2u32..9, 1.0f64..1e5), 2..12),
        ) {
            let points: Vec<GroupPoint> = raw
                .iter()
                .map(|&(vexp, k, t)| GroupPoint { vocab_size: 1 << vexp, k, t_c: t })
                .collect();
            let scaled: Vec<GroupPoint> = points
                .iter()
                .map(|p| GroupPoint { t_c: p.t_c * factor, ..*p })
                .collect();
            let a = collapse(&points, 0.5).unwrap();
            let b = collapse(&scaled, 0.5).unwrap();
            proptest::prop_assert!((a.raw_dispersion - b.raw_dispersion).abs() < 1e-9);
            proptest::prop_assert!((a.scaled_dispersion - b.scaled_dispersion).abs() < 1e-9);
            proptest::prop_assert_eq!(a.best_exponent, b.best_exponent);
        }
    }

    #[test]
    fn insufficient_groups_is_an_error() {
        let one = vec![GroupPoint { vocab_size: 256, k: 4, t_c: 100.0 }];
        assert!(matches!(
            collapse(&one, 0.5),
            Err(AnalysisError::InsufficientData { .. })
        ));
    }

    #[test]
    fn emitted_plots_have_expected_structure() {
        let mk_curve = |run: &str, vs: u64, scale: f64| CurveEntry {
            run_id: run.to_string(),
            vocab_size: vs,
            k: 4,
            task: "mean_char".to_string(),
            steps: (0..10).map(|i| i * 100).collect(),
            accuracy: (0..10).map(|i| (i as f64 * scale / 10.0).min(1.0)).collect(),
        };
        let points = vec![
            GroupPoint { vocab_size: 256, k: 4, t_c: 7.0 * (256.0f64 * 4.0).sqrt() },
            GroupPoint { vocab_size: 1024, k: 4, t_c: 7.0 * (1024.0f64 * 4.0).sqrt() },
            GroupPoint { vocab_size: 4096, k: 4, t_c: 7.0 * (4096.0f64 * 4.0).sqrt() },
        ];
        let report = EmergenceReport {
            threshold: 0.005,
            entries: points
                .iter()
                .map(|p| EmergenceEntry {
                    run_id: format!("r{}", p.vocab_size),
                    vocab_size: p.vocab_size,
                    k: p.k,
                    task: "mean_char".to_string(),
                    emergence_step: Some(p.t_c as u64),
                    threshold: 0.005,
                })
                .collect(),
            collapse: Some(collapse(&points, 0.5).unwrap()),
            monotonicity_char: vec![],
            monotonicity_word: vec![],
            curves: vec![mk_curve("r256", 256, 1.0), mk_curve("r1024", 1024, 0.6)],
        };
        let dir = tempfile::tempdir().unwrap();
        let written = emit_plots(&report, dir.path()).unwrap();
        assert!(!written.is_empty());
        let svg =
            std::fs::read_to_string(dir.path().join("accuracy_vs_step_mean_char.svg")).unwrap();
        // one polyline per curve
        assert_eq!(svg.matches("<polyline").count(), 2);
        let csv =
            std::fs::read_to_string(dir.path().join("accuracy_vs_step_mean_char.csv")).unwrap();
        // header plus one row per (step, accuracy) point
        assert_eq!(csv.lines().count(), 1 + 2 * 10);
        let scatter = std::fs::read_to_string(dir.path().join("collapse_scatter.svg")).unwrap();
        assert!(scatter.contains("scaled CV"));
        assert!(scatter.contains("raw CV"));
        // the sqrt fixture collapses: caption shows scaled below raw
        let stats = report.collapse.unwrap();
        assert!(stats.scaled_dispersion < stats.raw_dispersion);
        // re-running the analysis pipeline is pure
        let again = emit_plots(&report, dir.path()).unwrap();
        assert_eq!(written.len(), again.len());
        let svg2 =
            std::fs::read_to_string(dir.path().join("accuracy_vs_step_mean_char.svg")).unwrap();
        assert_eq!(svg, svg2);
    }

    #[test]
    fn monotonicity_examples() {
        let up = vec![(256u64, Some(100u64)), (1024, Some(300)), (4096, Some(900))];
        let m = monotonicity(&up).unwrap();
        assert!((m.spearman - 1.0).abs() < 1e-12);
        assert!(m.non_decreasing);
        let down = vec![(256u64, Some(900u64)), (1024, Some(300)), (4096, Some(100))];
        let m = monotonicity(&down).unwrap();
        assert!((m.spearman + 1.0).abs() < 1e-12);
        assert!(!m.non_decreasing);
        // never-emerged ranks last
        let with_none = vec![(256u64, Some(100u64)), (1024, Some(300)), (4096, None)];
        let m = monotonicity(&with_none).unwrap();
        assert!((m.spearman - 1.0).abs() < 1e-12);
        assert!(m.non_decreasing);
    }
}
