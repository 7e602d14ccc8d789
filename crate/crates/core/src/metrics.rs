//! Evaluation protocol: border erosion, confusion counts, accuracy and F1.

use crate::error::{Error, Result};
use crate::tensor::IGNORE_LABEL;

/// Valid-pixel mask after discarding a radius around ground-truth class
/// boundaries.
///
/// A boundary pixel is one with an 8-neighbor of a different class; every
/// pixel within Euclidean distance `radius` of a boundary pixel becomes
/// invalid (the discrete disc `{(dy, dx) : dy^2 + dx^2 <= r^2}`), as do
/// ignore-labeled pixels. At radius 0 the disc is the single boundary pixel
/// itself, so exactly the boundary pixels are removed.
pub fn erode_borders(labels: &[u8], height: usize, width: usize, radius: usize) -> Vec<bool> {
    assert_eq!(labels.len(), height * width, "label plane length");
    let mut boundary = vec![false; labels.len()];
    for y in 0..height {
        for x in 0..width {
            let center = labels[y * width + x];
            'neigh: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let ny = y as i64 + dy;
                    let nx = x as i64 + dx;
                    if ny < 0 || nx < 0 || ny >= height as i64 || nx >= width as i64 {
                        continue;
                    }
                    if labels[ny as usize * width + nx as usize] != center {
                        boundary[y * width + x] = true;
                        break 'neigh;
                    }
                }
            }
        }
    }

    // disc offsets once, then dilate the boundary set
    let r = radius as i64;
    let mut disc = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                disc.push((dy, dx));
            }
        }
    }
    let mut valid = vec![true; labels.len()];
    for y in 0..height {
        for x in 0..width {
            if !boundary[y * width + x] {
                continue;
            }
            for &(dy, dx) in &disc {
                let ny = y as i64 + dy;
                let nx = x as i64 + dx;
                if ny >= 0 && nx >= 0 && ny < height as i64 && nx < width as i64 {
                    valid[ny as usize * width + nx as usize] = false;
                }
            }
        }
    }
    for (v, &l) in valid.iter_mut().zip(labels) {
        if l == IGNORE_LABEL {
            *v = false;
        }
    }
    valid
}

/// k x k counts; rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn at(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Accumulates counts over valid pixels only.
    pub fn accumulate(
        &mut self,
        truth: &[u8],
        pred: &[u8],
        valid: &[bool],
    ) -> Result<()> {
        if truth.len() != pred.len() || truth.len() != valid.len() {
            return Err(Error::Shape(format!(
                "confusion: plane lengths disagree ({}, {}, {})",
                truth.len(),
                pred.len(),
                valid.len()
            )));
        }
        for ((&t, &p), &ok) in truth.iter().zip(pred).zip(valid) {
            if !ok {
                continue;
            }
            let (t, p) = (t as usize, p as usize);
            if t >= self.k {
                return Err(Error::Data(format!(
                    "confusion: ground-truth label {t} out of range for {} classes",
                    self.k
                )));
            }
            if p >= self.k {
                return Err(Error::Data(format!(
                    "confusion: predicted label {p} out of range for {} classes",
                    self.k
                )));
            }
            self.counts[t * self.k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.k != other.k {
            return Err(Error::Shape("confusion: class counts differ".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Per-class precision/recall/F1, their unweighted mean over classes present
/// in the ground truth, and overall accuracy.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub average_f1: f64,
    pub overall_accuracy: f64,
    pub valid_pixels: u64,
}

#[derive(Clone, Debug)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Ground-truth pixel count (`C_i`).
    pub support: u64,
}

/// `precision = tp/P`, `recall = tp/C`, `F1 = 2pr/(p+r)`; divisions by zero
/// yield 0 so absent classes cannot poison the averages. The average F1
/// runs over classes with ground-truth support only.
pub fn f1_scores(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::UndefinedMetrics(
            "empty confusion matrix (no valid pixels)".into(),
        ));
    }
    let k = cm.classes();
    let mut per_class = Vec::with_capacity(k);
    let mut f1_sum = 0.0f64;
    let mut present = 0usize;
    let mut trace = 0u64;
    for i in 0..k {
        let tp = cm.at(i, i);
        trace += tp;
        let truth_count: u64 = (0..k).map(|j| cm.at(i, j)).sum();
        let pred_count: u64 = (0..k).map(|j| cm.at(j, i)).sum();
        let precision = if pred_count == 0 {
            0.0
        } else {
            tp as f64 / pred_count as f64
        };
        let recall = if truth_count == 0 {
            0.0
        } else {
            tp as f64 / truth_count as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        if truth_count > 0 {
            f1_sum += f1;
            present += 1;
        }
        per_class.push(ClassMetrics {
            class: i,
            precision,
            recall,
            f1,
            support: truth_count,
        });
    }
    Ok(MetricsReport {
        per_class,
        average_f1: if present == 0 { 0.0 } else { f1_sum / present as f64 },
        overall_accuracy: trace as f64 / total as f64,
        valid_pixels: total,
    })
}

impl MetricsReport {
    /// Human-readable table followed by a machine-readable key=value block.
    pub fn render(&self, class_names: &[&str]) -> String {
        let mut out = String::new();
        out.push_str("class            precision   recall       f1    support\n");
        for m in &self.per_class {
            let name = class_names
                .get(m.class)
                .copied()
                .unwrap_or("?");
            out.push_str(&format!(
                "{:<16} {:>9.4} {:>8.4} {:>8.4} {:>10}\n",
                format!("{} ({})", m.class, name),
                m.precision,
                m.recall,
                m.f1,
                m.support
            ));
        }
        out.push_str(&format!(
            "\naverage F1       {:.4}\noverall accuracy {:.4}\nvalid pixels     {}\n",
            self.average_f1, self.overall_accuracy, self.valid_pixels
        ));
        out.push('\n');
        out.push_str(&format!("average_f1={:.6}\n", self.average_f1));
        out.push_str(&format!("overall_accuracy={:.6}\n", self.overall_accuracy));
        out.push_str(&format!("valid_pixels={}\n", self.valid_pixels));
        for m in &self.per_class {
            out.push_str(&format!("f1_{}={:.6}\n", m.class, m.f1));
        }
        out
    }
}
