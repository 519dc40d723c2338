//! Evaluation outputs: confusion matrix, overall and per-class accuracy,
//! machine-readable reports and the comparison table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{batch_iterator, EmotionClass, LabeledDataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::model::{Mode, ResEmoteNet};
use crate::train::argmax;

/// 7x7 counts; rows are true class, columns predicted class, class-code order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        Self {
            counts: vec![vec![0; NUM_CLASSES]; NUM_CLASSES],
        }
    }
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Overall accuracy in percent; integer arithmetic until the division.
    pub fn overall_accuracy(&self) -> f64 {
        100.0 * self.trace() as f64 / self.total() as f64
    }

    /// Per-class recall in percent; `None` for classes absent from the set.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..NUM_CLASSES)
            .map(|c| {
                let row = self.row_sum(c);
                (row > 0).then(|| 100.0 * self.counts[c][c] as f64 / row as f64)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub augmentation: String,
    pub overall_accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
    pub sample_count: usize,
    pub checkpoint: String,
}

/// Run the model over a test set and accumulate the confusion matrix.
/// Predictions are the logit argmax, ties to the lowest class code.
pub fn evaluate(
    model: &mut ResEmoteNet,
    test_ds: &LabeledDataset,
    batch_size: usize,
    augmentation: impl Into<String>,
    checkpoint: impl Into<String>,
) -> Result<EvalReport> {
    let previous = model.mode();
    model.set_mode(Mode::Eval);
    let mut confusion = ConfusionMatrix::default();
    for (images, labels) in batch_iterator(test_ds, batch_size, false, 0)? {
        let logits = model.forward(&images)?;
        let (n, k) = logits.dims2("evaluate")?;
        for row in 0..n {
            confusion.record(labels[row], argmax(&logits.data()[row * k..(row + 1) * k]));
        }
    }
    model.set_mode(previous);
    Ok(report_from_confusion(
        test_ds.name.clone(),
        augmentation.into(),
        checkpoint.into(),
        confusion,
    ))
}

/// Derive the accuracy fields from a finished confusion matrix.
pub fn report_from_confusion(
    dataset: String,
    augmentation: String,
    checkpoint: String,
    confusion: ConfusionMatrix,
) -> EvalReport {
    EvalReport {
        dataset,
        augmentation,
        overall_accuracy: confusion.overall_accuracy(),
        per_class_accuracy: confusion.per_class_accuracy(),
        sample_count: confusion.total() as usize,
        confusion,
        checkpoint,
    }
}

/// CSV with a header row/column of class names and integer cells.
pub fn confusion_to_csv(matrix: &ConfusionMatrix) -> String {
    let mut out = String::from("true\\predicted");
    for class in EmotionClass::ALL {
        write!(out, ",{}", class.name()).unwrap();
    }
    out.push('\n');
    for (i, class) in EmotionClass::ALL.iter().enumerate() {
        write!(out, "{}", class.name()).unwrap();
        for j in 0..NUM_CLASSES {
            write!(out, ",{}", matrix.counts[i][j]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn confusion_from_csv(text: &str) -> Result<ConfusionMatrix> {
    let bad = |detail: String| Error::shape("confusion_csv", detail);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    if !header.starts_with("true\\predicted") {
        return Err(bad(format!("unexpected header `{header}`")));
    }
    let mut matrix = ConfusionMatrix::default();
    for (i, class) in EmotionClass::ALL.iter().enumerate() {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("missing row for {}", class.name())))?;
        let mut fields = line.split(',');
        let name = fields.next().unwrap_or("");
        if name != class.name() {
            return Err(bad(format!("row {i} labeled `{name}`, expected {}", class.name())));
        }
        for j in 0..NUM_CLASSES {
            let cell = fields
                .next()
                .ok_or_else(|| bad(format!("row {name} has too few cells")))?;
            matrix.counts[i][j] = cell
                .parse()
                .map_err(|_| bad(format!("bad cell `{cell}` in row {name}")))?;
        }
    }
    Ok(matrix)
}

pub fn emit_confusion_csv(matrix: &ConfusionMatrix, path: &Path) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::io(
            "emit_confusion_csv",
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty path"),
        ));
    }
    std::fs::write(path, confusion_to_csv(matrix))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn emit_report_json(report: &EvalReport, path: &Path) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::io(
            "emit_report_json",
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty path"),
        ));
    }
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn parse_report_json(text: &str) -> Result<EvalReport> {
    serde_json::from_str(text).map_err(|e| Error::json("eval report", e))
}

/// Rows sorted by (dataset, augmentation tag) with `Original` ahead of the
/// `Aug*` tags; overall accuracy to two decimals.
pub fn comparison_table(reports: &[EvalReport]) -> (String, String) {
    let mut rows: Vec<&EvalReport> = reports.iter().collect();
    rows.sort_by(|a, b| {
        (&a.dataset, aug_rank(&a.augmentation), &a.augmentation)
            .cmp(&(&b.dataset, aug_rank(&b.augmentation), &b.augmentation))
    });

    let mut csv = String::from("dataset,augmentation,overall_accuracy\n");
    for r in &rows {
        writeln!(csv, "{},{},{:.2}", r.dataset, r.augmentation, r.overall_accuracy).unwrap();
    }

    let width_ds = rows
        .iter()
        .map(|r| r.dataset.len())
        .chain(["dataset".len()])
        .max()
        .unwrap();
    let width_aug = rows
        .iter()
        .map(|r| r.augmentation.len())
        .chain(["augmentation".len()])
        .max()
        .unwrap();
    let mut text = format!(
        "{:width_ds$}  {:width_aug$}  accuracy\n",
        "dataset", "augmentation"
    );
    for r in &rows {
        writeln!(
            text,
            "{:width_ds$}  {:width_aug$}  {:>8.2}",
            r.dataset, r.augmentation, r.overall_accuracy
        )
        .unwrap();
    }
    (text, csv)
}

fn aug_rank(tag: &str) -> u8 {
    if tag.eq_ignore_ascii_case("original") {
        0
    } else {
        1
    }
}
