//! Dataset ingestion, preprocessing to model resolution, stratified
//! splitting, and a synthetic dataset generator for desk-scale runs.
//!
//! Labels live in a comma-separated file with header `path,score`; paths are
//! relative to the dataset root, scores are integers in 2..=9. Entries are
//! kept sorted by id so every downstream consumer sees one canonical order.

use crate::error::{Error, Result};
use crate::model::{CLASS_COUNT, SCORE_OFFSET};
use crate::rng::{derive_seed_indexed, rng_from_seed};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const LABELS_HEADER: &str = "path,score";
pub const LABELS_FILE: &str = "labels.csv";

/// Ids double as relative paths and as keys in text formats (probability
/// tables, drop logs), so the charset is restricted to keep every format
/// unambiguous and the paths jail-safe.
pub fn validate_id(id: &str) -> Result<()> {
    if id.is_empty() {
        return Err(Error::Data("empty id".into()));
    }
    if !id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-' | b'/')) {
        return Err(Error::Data(format!(
            "id {id:?} contains characters outside [A-Za-z0-9._/-]"
        )));
    }
    if id.starts_with('/') || id.split('/').any(|seg| seg.is_empty() || seg == "..") {
        return Err(Error::Data(format!("id {id:?} must be a plain relative path")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Full,
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Full => "full",
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    /// Image path relative to the dataset root.
    pub id: String,
    /// Aesthetic score, 2..=9.
    pub score: u8,
}

/// An ordered list of labeled image references plus bookkeeping. Pixels are
/// loaded separately by [`materialize`], so splits and drop lists stay cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    root: PathBuf,
    entries: Vec<DatasetEntry>,
    class_counts: [usize; CLASS_COUNT],
    pub split: SplitTag,
}

impl LabeledDataset {
    /// Builds a dataset from in-memory entries: ids are validated and
    /// deduplicated, scores range-checked, entries sorted by id. `root` is
    /// where the image files are expected to live; nothing is read here.
    pub fn from_entries(root: PathBuf, mut entries: Vec<DatasetEntry>, split: SplitTag) -> Result<Self> {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        let mut class_counts = [0usize; CLASS_COUNT];
        for pair in entries.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::Data(format!("duplicate id {}", pair[0].id)));
            }
        }
        for e in &entries {
            validate_id(&e.id)?;
            if !(2..=9).contains(&e.score) {
                return Err(Error::Data(format!("score {} for {} outside 2..=9", e.score, e.id)));
            }
            class_counts[(e.score - SCORE_OFFSET) as usize] += 1;
        }
        Ok(LabeledDataset { root, entries, class_counts, split })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Per-class entry counts, indexed by score - 2.
    pub fn class_counts(&self) -> [usize; CLASS_COUNT] {
        self.class_counts
    }

    pub fn count_of(&self, score: u8) -> usize {
        self.class_counts[(score - SCORE_OFFSET) as usize]
    }

    /// Copy without the listed ids (used by the likelihood-based drop loop).
    pub fn without_ids(&self, drop: &HashSet<String>) -> Result<LabeledDataset> {
        let entries = self.entries.iter().filter(|e| !drop.contains(&e.id)).cloned().collect();
        LabeledDataset::from_entries(self.root.clone(), entries, self.split)
    }

    /// Stratified split into train/val/test. Each class is shuffled with its
    /// own seed-derived stream, then train takes floor(f_train * n), val
    /// floor(f_val * n), and test the remainder. Splits are disjoint,
    /// exhaustive, and identical for identical seeds.
    pub fn split(&self, fractions: (f64, f64, f64), seed: u64) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
        let (ft, fv, fs) = fractions;
        for f in [ft, fv, fs] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("split fraction {f} outside [0, 1]")));
            }
        }
        if (ft + fv + fs - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions ({ft}, {fv}, {fs}) must sum to 1")));
        }
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut test = Vec::new();
        for class in 0..CLASS_COUNT {
            let mut members: Vec<&DatasetEntry> = self
                .entries
                .iter()
                .filter(|e| (e.score - SCORE_OFFSET) as usize == class)
                .collect();
            let mut rng = rng_from_seed(derive_seed_indexed(seed, "split-class", class as u64));
            members.shuffle(&mut rng);
            let n = members.len();
            let n_train = (ft * n as f64 + 1e-9).floor() as usize;
            let n_val = (fv * n as f64 + 1e-9).floor() as usize;
            for (i, e) in members.into_iter().enumerate() {
                if i < n_train {
                    train.push(e.clone());
                } else if i < n_train + n_val {
                    val.push(e.clone());
                } else {
                    test.push(e.clone());
                }
            }
        }
        Ok((
            LabeledDataset::from_entries(self.root.clone(), train, SplitTag::Train)?,
            LabeledDataset::from_entries(self.root.clone(), val, SplitTag::Val)?,
            LabeledDataset::from_entries(self.root.clone(), test, SplitTag::Test)?,
        ))
    }
}

/// Reads a labels file and pairs every row with an image under `root`.
/// Entries come back sorted by id with per-class counts filled in.
pub fn load_dataset(root: &Path, labels_file: &Path) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(labels_file).map_err(|e| Error::io(labels_file, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == LABELS_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Format(format!(
                "{}: expected header {LABELS_HEADER:?}, found {h:?}",
                labels_file.display()
            )))
        }
        None => return Err(Error::Format(format!("{}: empty labels file", labels_file.display()))),
    }
    let mut entries = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let at = |msg: String| Error::Format(format!("{} line {}: {msg}", labels_file.display(), lineno + 1));
        let (id, score) = line
            .split_once(',')
            .ok_or_else(|| at(format!("expected path,score, found {line:?}")))?;
        let score: u8 = score
            .trim()
            .parse()
            .map_err(|_| at(format!("bad score {score:?}")))?;
        if !(2..=9).contains(&score) {
            return Err(at(format!("score {score} outside 2..=9")));
        }
        validate_id(id).map_err(|e| at(e.to_string()))?;
        let path = root.join(id);
        if !path.is_file() {
            return Err(Error::Data(format!("image {} referenced by labels is missing", path.display())));
        }
        entries.push(DatasetEntry { id: id.to_string(), score });
    }
    if entries.is_empty() {
        return Err(Error::Data(format!("{}: no labeled entries", labels_file.display())));
    }
    LabeledDataset::from_entries(root.to_path_buf(), entries, SplitTag::Full)
}

/// How raw image bytes become model input.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSpec {
    /// Target square side. Images are squashed, not cropped.
    pub resolution: usize,
    /// Optional per-channel (mean, std) applied after scaling to [0, 1].
    pub normalize: Option<[(f64, f64); 3]>,
}

impl PreprocessSpec {
    pub fn plain(resolution: usize) -> Self {
        PreprocessSpec { resolution, normalize: None }
    }
}

/// Decoded, resized pixel data aligned index-for-index with the dataset
/// entries it came from.
#[derive(Debug, Clone)]
pub struct MaterializedDataset<T> {
    /// `(n, 3, r, r)`, values in [0, 1] unless a normalizer was requested.
    pub images: Tensor<T>,
    pub scores: Vec<u8>,
    pub ids: Vec<String>,
    pub resolution: usize,
}

impl<T: Scalar> MaterializedDataset<T> {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Zero-based class index of sample `i`.
    pub fn class_index(&self, i: usize) -> usize {
        (self.scores[i] - SCORE_OFFSET) as usize
    }
}

/// Decodes, squash-resizes (bilinear) and scales every image of a dataset.
pub fn materialize<T: Scalar>(data: &LabeledDataset, spec: &PreprocessSpec) -> Result<MaterializedDataset<T>> {
    if data.is_empty() {
        return Err(Error::Data("cannot materialize an empty dataset".into()));
    }
    if spec.resolution == 0 {
        return Err(Error::Config("preprocess resolution must be positive".into()));
    }
    let r = spec.resolution;
    let mut images = Tensor::<T>::zeros([data.len(), 3, r, r]);
    let mut scores = Vec::with_capacity(data.len());
    let mut ids = Vec::with_capacity(data.len());
    for (i, entry) in data.entries().iter().enumerate() {
        let path = data.root().join(&entry.id);
        let img = image::open(&path)
            .map_err(|e| Error::Data(format!("cannot decode {}: {e}", path.display())))?
            .to_rgb8();
        let resized = image::imageops::resize(&img, r as u32, r as u32, image::imageops::FilterType::Triangle);
        let sample = images.sample_mut(i);
        let plane = r * r;
        for (p, px) in resized.pixels().enumerate() {
            for ch in 0..3 {
                let mut v = px.0[ch] as f64 / 255.0;
                if let Some(norm) = spec.normalize {
                    let (mean, std) = norm[ch];
                    v = (v - mean) / std;
                }
                sample[ch * plane + p] = T::real(v);
            }
        }
        scores.push(entry.score);
        ids.push(entry.id.clone());
    }
    Ok(MaterializedDataset { images, scores, ids, resolution: r })
}

/// Requested class skew for synthetic datasets: score -> fraction of the
/// total count. Profiled classes get floor(fraction * count) samples each;
/// the remainder spreads over the unprofiled classes, lowest scores first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImbalanceProfile(pub BTreeMap<u8, f64>);

impl ImbalanceProfile {
    pub fn validate(&self) -> Result<()> {
        let mut sum = 0.0;
        for (&score, &frac) in &self.0 {
            if !(2..=9).contains(&score) {
                return Err(Error::Config(format!("imbalance profile score {score} outside 2..=9")));
            }
            if !(0.0..=1.0).contains(&frac) {
                return Err(Error::Config(format!("imbalance fraction {frac} outside [0, 1]")));
            }
            sum += frac;
        }
        if sum > 1.0 + 1e-9 {
            return Err(Error::Config(format!("imbalance fractions sum to {sum} > 1")));
        }
        Ok(())
    }

    /// Exact per-class counts for a total of `count` samples. The floor uses
    /// a 1e-9 guard so fractions like 1/12 survive binary rounding.
    pub fn class_counts(&self, count: usize) -> Result<[usize; CLASS_COUNT]> {
        self.validate()?;
        let mut counts = [0usize; CLASS_COUNT];
        let mut assigned = 0usize;
        for (&score, &frac) in &self.0 {
            let n = (frac * count as f64 + 1e-9).floor() as usize;
            counts[(score - SCORE_OFFSET) as usize] = n;
            assigned += n;
        }
        if assigned > count {
            return Err(Error::Config(format!("imbalance profile assigns {assigned} of {count} samples")));
        }
        let rest = count - assigned;
        let unprofiled: Vec<usize> = (0..CLASS_COUNT)
            .filter(|c| !self.0.contains_key(&(*c as u8 + SCORE_OFFSET)))
            .collect();
        if unprofiled.is_empty() {
            if rest != 0 {
                return Err(Error::Config(format!(
                    "profile covers every class but leaves {rest} of {count} samples unassigned"
                )));
            }
        } else {
            let base = rest / unprofiled.len();
            let extra = rest % unprofiled.len();
            for (i, &c) in unprofiled.iter().enumerate() {
                counts[c] = base + usize::from(i < extra);
            }
        }
        Ok(counts)
    }
}

/// Per-class disc colors for the synthetic generator, in [0, 1] RGB.
const DISC_COLORS: [[f64; 3]; CLASS_COUNT] = [
    [0.95, 0.35, 0.35],
    [0.35, 0.95, 0.35],
    [0.35, 0.35, 0.95],
    [0.95, 0.95, 0.35],
    [0.95, 0.35, 0.95],
    [0.35, 0.95, 0.95],
    [0.95, 0.65, 0.30],
    [0.85, 0.85, 0.85],
];

/// Generates a synthetic dataset on disk: `count` PNG images plus a labels
/// file, then loads them back through the ordinary ingestion path.
///
/// Each class renders a colored disc in its own cell of a 4x2 layout grid,
/// over a noisy vertical-gradient background, so classes are separable from
/// composition alone. A given (count, resolution, seed, profile) always
/// produces identical bytes. Balanced generation requires count % 8 == 0.
pub fn synthesize(
    dir: &Path,
    count: usize,
    resolution: usize,
    seed: u64,
    profile: Option<&ImbalanceProfile>,
) -> Result<LabeledDataset> {
    if !(32..=4096).contains(&resolution) {
        return Err(Error::Config(format!("synthetic resolution {resolution} outside 32..=4096")));
    }
    if count < CLASS_COUNT {
        return Err(Error::Config(format!("synthetic count {count} smaller than {CLASS_COUNT}")));
    }
    let counts = match profile {
        Some(p) => p.class_counts(count)?,
        None => {
            if count % CLASS_COUNT != 0 {
                return Err(Error::Config(format!(
                    "balanced synthetic count {count} must be divisible by {CLASS_COUNT}"
                )));
            }
            [count / CLASS_COUNT; CLASS_COUNT]
        }
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut scores = Vec::with_capacity(count);
    for (class, &n) in counts.iter().enumerate() {
        scores.extend(std::iter::repeat(class as u8 + SCORE_OFFSET).take(n));
    }
    let mut labels = String::from(LABELS_HEADER);
    labels.push('\n');
    let r = resolution as f64;
    for (i, &score) in scores.iter().enumerate() {
        let class = (score - SCORE_OFFSET) as usize;
        let mut rng = rng_from_seed(derive_seed_indexed(seed, "synth-image", i as u64));
        let col = (class % 4) as f64;
        let row = (class / 4) as f64;
        let jitter = r / 64.0;
        let cx = (col + 0.5) / 4.0 * r + rng.gen_range(-jitter..=jitter);
        let cy = (row + 0.5) / 2.0 * r + rng.gen_range(-jitter..=jitter);
        let radius = r / 10.0;
        let color = DISC_COLORS[class];
        let mut img = image::RgbImage::new(resolution as u32, resolution as u32);
        for y in 0..resolution {
            let grad = 0.15 + 0.20 * (y as f64 / r);
            for x in 0..resolution {
                let noise: f64 = rng.gen_range(-0.04..=0.04);
                let bg = grad + noise;
                let dist = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                // Soft 1.5-pixel rim keeps the disc stable under resizing.
                let t = ((radius + 1.5 - dist) / 1.5).clamp(0.0, 1.0);
                let mut px = [0u8; 3];
                for ch in 0..3 {
                    let v = bg + t * (color[ch] - bg);
                    px[ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        let name = format!("img_{i:05}.png");
        img.save(dir.join(&name))
            .map_err(|e| Error::Data(format!("cannot write {}: {e}", dir.join(&name).display())))?;
        let _ = writeln!(labels, "{name},{score}");
    }
    let labels_path = dir.join(LABELS_FILE);
    std::fs::write(&labels_path, labels).map_err(|e| Error::io(&labels_path, e))?;
    load_dataset(dir, &labels_path)
}
