//! Confusion matrices, precision/recall/F1, accuracy with a Wald interval,
//! and one-vs-rest ROC curves.

use std::fmt::Write;

use crate::error::{arg_err, dim_err, Result};

pub const Z_95: f64 = 1.96;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    /// Row-major; row = true class, column = predicted class.
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    /// One-vs-rest counts for class `k`.
    pub fn class_counts(&self, k: usize) -> ClassCounts {
        let tp = self.get(k, k);
        let row: u64 = (0..self.classes).map(|j| self.get(k, j)).sum();
        let col: u64 = (0..self.classes).map(|i| self.get(i, k)).sum();
        ClassCounts {
            tp,
            fp: col - tp,
            fn_: row - tp,
            tn: self.total() + tp - row - col,
        }
    }
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(dim_err!(
            "{} true labels but {} predictions",
            truth.len(),
            pred.len()
        ));
    }
    let mut counts = vec![0u64; classes * classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= classes || p >= classes {
            return Err(arg_err!("label pair ({t}, {p}) outside {classes} classes"));
        }
        counts[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// Precision, recall and F1 in percent. A zero denominator yields 0 and
/// sets the matching flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn prf1(c: &ClassCounts) -> Prf1 {
    let (p, p_undef) = ratio(c.tp, c.tp + c.fp);
    let (r, r_undef) = ratio(c.tp, c.tp + c.fn_);
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    Prf1 {
        precision: 100.0 * p,
        recall: 100.0 * r,
        f1: 100.0 * f1,
        precision_undefined: p_undef,
        recall_undefined: r_undef,
    }
}

/// Accuracy and normal-approximation (Wald) half-width, both in percent.
pub fn accuracy_ci(correct: u64, total: u64, z: f64) -> Result<(f64, f64)> {
    if total == 0 {
        return Err(arg_err!("accuracy over zero samples"));
    }
    if correct > total {
        return Err(arg_err!("{correct} correct out of {total}"));
    }
    let acc = correct as f64 / total as f64;
    let half = z * (acc * (1.0 - acc) / total as f64).sqrt();
    Ok((100.0 * acc, 100.0 * half))
}

/// ROC curve as `(fpr, tpr)` points from `(0, 0)` to `(1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Sweeps a threshold down through every distinct score. `None` when either
/// class of the binary problem is absent.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Option<RocCurve> {
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = trapezoid(&points);
    Some(RocCurve { points, auc })
}

/// Linear interpolation of a monotone curve at `x`, taking the highest TPR
/// on vertical segments.
fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let mut y = 0.0;
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x1 < x {
            continue;
        }
        if x0 > x {
            break;
        }
        y = if x1 == x0 { y1 } else { y0 + (y1 - y0) * (x - x0) / (x1 - x0) };
    }
    y
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocReport {
    /// One-vs-rest curve per class; `None` if the class never occurs (or
    /// every sample belongs to it).
    pub per_class: Vec<Option<RocCurve>>,
    /// Pooled over all (sample, class) decisions.
    pub micro: Option<RocCurve>,
    /// Mean TPR of the defined per-class curves on the union of their FPRs.
    pub macro_points: Vec<(f64, f64)>,
    /// Unweighted mean of the defined per-class AUCs.
    pub macro_auc: Option<f64>,
}

/// One-vs-rest ROC analysis. `scores` is row-major `N×C`.
pub fn roc_auc(truth: &[usize], scores: &[f64], classes: usize) -> Result<RocReport> {
    if classes == 0 || scores.len() != truth.len() * classes {
        return Err(dim_err!(
            "{} scores for {} samples and {classes} classes",
            scores.len(),
            truth.len()
        ));
    }
    if let Some(&bad) = truth.iter().find(|&&t| t >= classes) {
        return Err(arg_err!("label {bad} outside {classes} classes"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(arg_err!("scores must be finite"));
    }
    let per_class: Vec<Option<RocCurve>> = (0..classes)
        .map(|k| {
            let s: Vec<f64> = scores.iter().skip(k).step_by(classes).copied().collect();
            let p: Vec<bool> = truth.iter().map(|&t| t == k).collect();
            roc_curve(&s, &p)
        })
        .collect();
    let pooled_pos: Vec<bool> = truth
        .iter()
        .flat_map(|&t| (0..classes).map(move |k| t == k))
        .collect();
    let micro = roc_curve(scores, &pooled_pos);
    let defined: Vec<&RocCurve> = per_class.iter().flatten().collect();
    let macro_auc = (!defined.is_empty())
        .then(|| defined.iter().map(|c| c.auc).sum::<f64>() / defined.len() as f64);
    let mut grid: Vec<f64> = defined
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let macro_points = if defined.is_empty() {
        Vec::new()
    } else {
        grid.iter()
            .map(|&x| {
                let y = defined.iter().map(|c| interpolate(&c.points, x)).sum::<f64>()
                    / defined.len() as f64;
                (x, y)
            })
            .collect()
    };
    Ok(RocReport {
        per_class,
        micro,
        macro_points,
        macro_auc,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub counts: ClassCounts,
    pub scores: Prf1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub ci_halfwidth: f64,
    pub roc: RocReport,
}

impl EvaluationReport {
    /// `scores` is row-major `N×C` (class probabilities).
    pub fn new(truth: &[usize], pred: &[usize], scores: &[f64], class_names: &[String]) -> Result<Self> {
        let classes = class_names.len();
        let confusion = confusion_matrix(truth, pred, classes)?;
        let per_class = (0..classes)
            .map(|k| {
                let counts = confusion.class_counts(k);
                ClassMetrics {
                    counts,
                    scores: prf1(&counts),
                }
            })
            .collect();
        let (accuracy, ci_halfwidth) = accuracy_ci(confusion.trace(), confusion.total(), Z_95)?;
        let roc = roc_auc(truth, scores, classes)?;
        Ok(EvaluationReport {
            class_names: class_names.to_vec(),
            confusion,
            per_class,
            accuracy,
            ci_halfwidth,
            roc,
        })
    }

    /// Confusion matrix, per-class table and summary as blank-line separated
    /// CSV blocks.
    pub fn to_csv(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |a| format!("{a:.6}"));
        let mut s = String::new();
        s.push_str("true\\pred");
        for n in &self.class_names {
            write!(s, ",{n}").unwrap();
        }
        s.push('\n');
        for (i, n) in self.class_names.iter().enumerate() {
            s.push_str(n);
            for j in 0..self.class_names.len() {
                write!(s, ",{}", self.confusion.get(i, j)).unwrap();
            }
            s.push('\n');
        }
        s.push_str("\nclass,tp,fp,fn,tn,precision,recall,f1,auc,flags\n");
        for (k, (n, m)) in self.class_names.iter().zip(&self.per_class).enumerate() {
            let mut flags = Vec::new();
            if m.scores.precision_undefined {
                flags.push("precision_0/0");
            }
            if m.scores.recall_undefined {
                flags.push("recall_0/0");
            }
            writeln!(
                s,
                "{n},{},{},{},{},{:.2},{:.2},{:.2},{},{}",
                m.counts.tp,
                m.counts.fp,
                m.counts.fn_,
                m.counts.tn,
                m.scores.precision,
                m.scores.recall,
                m.scores.f1,
                fmt_opt(self.roc.per_class[k].as_ref().map(|c| c.auc)),
                flags.join(";")
            )
            .unwrap();
        }
        s.push_str("\nsamples,accuracy,ci_halfwidth,micro_auc,macro_auc\n");
        writeln!(
            s,
            "{},{:.2},{:.2},{},{}",
            self.confusion.total(),
            self.accuracy,
            self.ci_halfwidth,
            fmt_opt(self.roc.micro.as_ref().map(|c| c.auc)),
            fmt_opt(self.roc.macro_auc)
        )
        .unwrap();
        s
    }

    /// `fpr,tpr` CSV for class `k`; `None` if that curve is undefined.
    pub fn roc_csv(&self, k: usize) -> Option<String> {
        self.roc.per_class.get(k)?.as_ref().map(|c| points_csv(&c.points))
    }

    pub fn micro_roc_csv(&self) -> Option<String> {
        self.roc.micro.as_ref().map(|c| points_csv(&c.points))
    }

    pub fn macro_roc_csv(&self) -> Option<String> {
        (!self.roc.macro_points.is_empty()).then(|| points_csv(&self.roc.macro_points))
    }
}

fn points_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("fpr,tpr\n");
    for (x, y) in points {
        writeln!(s, "{x:.6},{y:.6}").unwrap();
    }
    s
}
