//! Weighted fusion of two models' class-probability tables, argmax score
//! prediction, and the weight grid sweep that maximizes macro F1.

use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{CLASS_COUNT, SCORE_OFFSET};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

/// Per-image class probabilities for scores 2..=9, keyed by image id.
/// Row order is preserved from construction; ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTable {
    model: String,
    ids: Vec<String>,
    rows: Vec<[f64; CLASS_COUNT]>,
}

/// Row-sum tolerance for tables built in code.
pub const TABLE_SUM_TOLERANCE: f64 = 1e-6;
/// Looser row-sum tolerance for imported files, whose values may have been
/// rounded by the producer.
pub const IMPORT_SUM_TOLERANCE: f64 = 1e-4;

pub const PROBABILITY_HEADER: &str = "id,p2,p3,p4,p5,p6,p7,p8,p9";

impl ProbabilityTable {
    pub fn from_rows(model: &str, rows: Vec<(String, [f64; CLASS_COUNT])>) -> Result<Self> {
        Self::build(model, rows, TABLE_SUM_TOLERANCE)
    }

    fn build(model: &str, rows: Vec<(String, [f64; CLASS_COUNT])>, sum_tolerance: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data(format!("probability table {model} has no rows")));
        }
        let mut ids = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len());
        let mut seen = HashMap::with_capacity(rows.len());
        for (i, (id, row)) in rows.into_iter().enumerate() {
            crate::dataio::validate_id(&id)?;
            if let Some(prev) = seen.insert(id.clone(), i) {
                return Err(Error::Data(format!("duplicate id {id} (rows {} and {})", prev + 1, i + 1)));
            }
            validate_row(&id, &row, sum_tolerance)?;
            ids.push(id);
            values.push(row);
        }
        Ok(ProbabilityTable { model: model.to_string(), ids, rows: values })
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    pub fn get(&self, id: &str) -> Option<&[f64; CLASS_COUNT]> {
        self.ids.iter().position(|x| x == id).map(|i| &self.rows[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64; CLASS_COUNT])> {
        self.ids.iter().map(String::as_str).zip(self.rows.iter())
    }
}

fn validate_row(id: &str, row: &[f64; CLASS_COUNT], sum_tolerance: f64) -> Result<()> {
    let mut sum = 0.0f64;
    for &p in row {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::Data(format!("row {id}: probability {p} is not a finite nonnegative value")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > sum_tolerance {
        return Err(Error::Data(format!("row {id}: probabilities sum to {sum}, expected 1 within {sum_tolerance}")));
    }
    Ok(())
}

/// Convex pair of fusion weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleWeights {
    pub w1: f64,
    pub w2: f64,
}

impl EnsembleWeights {
    pub fn new(w1: f64, w2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w1) || !(0.0..=1.0).contains(&w2) {
            return Err(Error::Config(format!("weights ({w1}, {w2}) must lie in [0, 1]")));
        }
        if (w1 + w2 - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("weights ({w1}, {w2}) must sum to 1")));
        }
        Ok(EnsembleWeights { w1, w2 })
    }

    pub fn from_w1(w1: f64) -> Result<Self> {
        Self::new(w1, 1.0 - w1)
    }
}

/// Pointwise fusion: p = w1 * p_a + w2 * p_b per id and class. Both tables
/// must cover the same id set; output rows follow `a`'s order.
pub fn fuse(a: &ProbabilityTable, b: &ProbabilityTable, w: EnsembleWeights) -> Result<ProbabilityTable> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "tables {} and {} differ in size: {} vs {} rows",
            a.model,
            b.model,
            a.len(),
            b.len()
        )));
    }
    let b_index: HashMap<&str, usize> = b.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut rows = Vec::with_capacity(a.len());
    for (id, row_a) in a.iter() {
        let bi = *b_index
            .get(id)
            .ok_or_else(|| Error::Data(format!("id {id} present in {} but not in {}", a.model, b.model)))?;
        let row_b = &b.rows[bi];
        let mut fused = [0.0f64; CLASS_COUNT];
        for (f, (&pa, &pb)) in fused.iter_mut().zip(row_a.iter().zip(row_b)) {
            *f = w.w1 * pa + w.w2 * pb;
        }
        rows.push((id.to_string(), fused));
    }
    // Fused sums inherit the input tolerance, so skip strict revalidation.
    ProbabilityTable::build(&format!("{}+{}", a.model, b.model), rows, IMPORT_SUM_TOLERANCE)
}

/// Argmax score for one probability row; ties resolve to the lowest score.
pub fn predict_row(row: &[f64; CLASS_COUNT]) -> u8 {
    let mut best = 0usize;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    best as u8 + SCORE_OFFSET
}

/// Scores for every row of the table, in table order.
pub fn predict(table: &ProbabilityTable) -> Result<Vec<(String, u8)>> {
    if table.is_empty() {
        return Err(Error::Data("cannot predict from an empty probability table".into()));
    }
    Ok(table.iter().map(|(id, row)| (id.to_string(), predict_row(row))).collect())
}

/// Grid values and the argmax of a weight sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// (w1, macro F1) per grid point, in grid order.
    pub grid: Vec<(f64, f64)>,
    pub best: EnsembleWeights,
    pub best_f1: f64,
}

/// Sweeps w1 over {0, step, 2*step, ..., 1}, fusing, predicting, and scoring
/// macro F1 against `truth` at each point. Ties resolve to the smaller w1.
pub fn sweep(
    a: &ProbabilityTable,
    b: &ProbabilityTable,
    truth: &BTreeMap<String, u8>,
    step: f64,
) -> Result<SweepResult> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("sweep step {step} outside (0, 1]")));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("sweep step {step} does not divide 1 evenly")));
    }
    let n = n as usize;
    let classes: Vec<u8> = (0..CLASS_COUNT as u8).map(|i| i + SCORE_OFFSET).collect();
    let mut grid = Vec::with_capacity(n + 1);
    let mut best_idx = 0usize;
    for i in 0..=n {
        let w = EnsembleWeights::from_w1(i as f64 / n as f64)?;
        let fused = fuse(a, b, w)?;
        let mut truth_vec = Vec::with_capacity(fused.len());
        let mut pred_vec = Vec::with_capacity(fused.len());
        for (id, score) in predict(&fused)? {
            let t = truth
                .get(&id)
                .ok_or_else(|| Error::Data(format!("no truth label for id {id}")))?;
            truth_vec.push(*t);
            pred_vec.push(score);
        }
        let f1 = metrics::evaluate(&truth_vec, &pred_vec, &classes)?.macro_f1;
        grid.push((w.w1, f1));
        if f1 > grid[best_idx].1 {
            best_idx = i;
        }
    }
    Ok(SweepResult {
        best: EnsembleWeights::from_w1(grid[best_idx].0)?,
        best_f1: grid[best_idx].1,
        grid,
    })
}

/// Reads a probability table from a comma-separated text file. The header
/// must be exactly `id,p2,p3,p4,p5,p6,p7,p8,p9`; each row sum is checked
/// against 1 within 1e-4 and rejected with its line number otherwise. The
/// table's model tag is the file stem.
pub fn import_probabilities(path: &Path) -> Result<ProbabilityTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model = path.file_stem().and_then(|s| s.to_str()).unwrap_or("table").to_string();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == PROBABILITY_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Format(format!(
                "{}: expected header {PROBABILITY_HEADER:?}, found {header:?}",
                path.display()
            )))
        }
        None => return Err(Error::Format(format!("{}: empty probability file", path.display()))),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + CLASS_COUNT {
            return Err(Error::Format(format!(
                "{} line {}: expected {} fields, found {}",
                path.display(),
                lineno + 1,
                1 + CLASS_COUNT,
                fields.len()
            )));
        }
        let mut row = [0.0f64; CLASS_COUNT];
        for (slot, field) in row.iter_mut().zip(&fields[1..]) {
            *slot = field.parse::<f64>().map_err(|_| {
                Error::Format(format!("{} line {}: bad probability {field:?}", path.display(), lineno + 1))
            })?;
        }
        validate_row(fields[0], &row, IMPORT_SUM_TOLERANCE)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), lineno + 1)))?;
        rows.push((fields[0].to_string(), row));
    }
    ProbabilityTable::build(&model, rows, IMPORT_SUM_TOLERANCE)
}

/// Writes a table in the import format. Values use Rust's shortest exact
/// decimal rendering, so an import of the written file reproduces every
/// cell bit for bit.
pub fn export_probabilities(table: &ProbabilityTable, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(32 * (table.len() + 1));
    out.push_str(PROBABILITY_HEADER);
    out.push('\n');
    for (id, row) in table.iter() {
        out.push_str(id);
        for p in row {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
