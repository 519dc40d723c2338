//! Dataset ingestion: FER2013-style CSV and class-per-directory image trees,
//! normalized to 64x64 RGB samples, with deterministic batch iteration.

pub mod pnm;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The seven emotion labels with their stable integer codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EmotionClass {
    Angry = 0,
    Disgust = 1,
    Fear = 2,
    Happy = 3,
    Sad = 4,
    Surprise = 5,
    Neutral = 6,
}

pub const NUM_CLASSES: usize = 7;

impl EmotionClass {
    pub const ALL: [EmotionClass; NUM_CLASSES] = [
        EmotionClass::Angry,
        EmotionClass::Disgust,
        EmotionClass::Fear,
        EmotionClass::Happy,
        EmotionClass::Sad,
        EmotionClass::Surprise,
        EmotionClass::Neutral,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionClass::Angry => "Angry",
            EmotionClass::Disgust => "Disgust",
            EmotionClass::Fear => "Fear",
            EmotionClass::Happy => "Happy",
            EmotionClass::Sad => "Sad",
            EmotionClass::Surprise => "Surprise",
            EmotionClass::Neutral => "Neutral",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(name))
    }

    /// First emotion keyword found in a free-form prompt.
    pub fn from_prompt(prompt: &str) -> Option<Self> {
        let lower = prompt.to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|c| lower.contains(&c.name().to_ascii_lowercase()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One normalized 64x64 RGB image with its label and provenance.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor,
    pub label: EmotionClass,
    pub origin: Origin,
    pub source_id: String,
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub samples: Vec<Sample>,
    pub split: Split,
    pub name: String,
}

/// Target side of all samples.
pub const IMAGE_SIZE: usize = 64;

/// Pixels map 0..=255 to [0,1], then per-channel (x - 0.5) / 0.5.
pub fn normalize_pixel(byte: u8) -> f32 {
    (byte as f32 / 255.0 - 0.5) / 0.5
}

pub fn denormalize_pixel(v: f32) -> u8 {
    ((v * 0.5 + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, split: Split) -> Self {
        Self {
            samples: Vec::new(),
            split,
            name: name.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0usize; NUM_CLASSES];
        for s in &self.samples {
            counts[s.label.code()] += 1;
        }
        counts
    }

    pub fn merge(&mut self, other: LabeledDataset) {
        self.samples.extend(other.samples);
    }
}

/// Maps raw partition tags (the FER2013 `Usage` column) onto splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub tags: BTreeMap<String, Split>,
}

impl Default for SplitSpec {
    /// The FER2013 convention: public test is validation, private test is the
    /// reporting split.
    fn default() -> Self {
        let mut tags = BTreeMap::new();
        tags.insert("Training".to_string(), Split::Train);
        tags.insert("PublicTest".to_string(), Split::Val);
        tags.insert("PrivateTest".to_string(), Split::Test);
        Self { tags }
    }
}

/// Parse a FER2013 CSV (`emotion,pixels,Usage`) into per-split datasets.
pub fn load_fer2013_csv(
    path: &Path,
    spec: &SplitSpec,
) -> Result<BTreeMap<Split, LabeledDataset>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let path_str = path.display().to_string();
    let row_err = |row: usize, detail: String| Error::CsvRow {
        path: path_str.clone(),
        row,
        detail,
    };

    let mut datasets: BTreeMap<Split, LabeledDataset> = BTreeMap::new();
    for &split in spec.tags.values() {
        datasets
            .entry(split)
            .or_insert_with(|| LabeledDataset::new(format!("fer2013-{split:?}").to_lowercase(), split));
    }

    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| row_err(1, "empty file".to_string()))?;
    let header = header.map_err(|e| Error::io(path_str.clone(), e))?;
    if header.trim_end_matches('\r').trim() != "emotion,pixels,Usage" {
        return Err(row_err(1, format!("unexpected header `{header}`")));
    }

    for (idx, line) in lines {
        let row = idx + 1; // 1-based line number
        let line = line.map_err(|e| Error::io(path_str.clone(), e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, ',');
        let (Some(emotion), Some(pixels), Some(tag)) =
            (fields.next(), fields.next(), fields.next())
        else {
            return Err(row_err(row, "expected 3 comma-separated fields".to_string()));
        };

        let code: usize = emotion
            .parse()
            .map_err(|_| row_err(row, format!("non-integer emotion `{emotion}`")))?;
        let label = EmotionClass::from_code(code)
            .ok_or_else(|| row_err(row, format!("unknown emotion code {code}")))?;
        let split = *spec
            .tags
            .get(tag.trim())
            .ok_or_else(|| row_err(row, format!("unknown usage tag `{tag}`")))?;

        let mut gray = Vec::with_capacity(48 * 48);
        for tok in pixels.split_ascii_whitespace() {
            let v: u16 = tok
                .parse()
                .map_err(|_| row_err(row, format!("non-integer pixel `{tok}`")))?;
            if v > 255 {
                return Err(row_err(row, format!("pixel value {v} out of range")));
            }
            gray.push(v as u8);
        }
        if gray.len() != 48 * 48 {
            return Err(row_err(
                row,
                format!("expected 2304 pixels, got {}", gray.len()),
            ));
        }

        let image = grayscale_to_sample_image(&gray, 48, 48)?;
        datasets
            .entry(split)
            .or_insert_with(|| LabeledDataset::new("fer2013", split))
            .samples
            .push(Sample {
                image,
                label,
                origin: Origin::Real,
                source_id: format!("{path_str}:{row}"),
            });
    }
    Ok(datasets)
}

/// Load `<root>/<ClassName>/<file>` trees of binary PGM/PPM images,
/// deterministically ordered by lexicographic path.
pub fn load_image_folder(root: &Path, split: Split, origin: Origin) -> Result<LabeledDataset> {
    let mut dataset = LabeledDataset::new(
        root.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image-folder".to_string()),
        split,
    );

    let mut class_dirs = Vec::new();
    let entries =
        fs::read_dir(root).map_err(|e| Error::io(root.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root.display().to_string(), e))?;
        if !entry.path().is_dir() {
            continue;
        }
        let dir_name = entry.file_name().to_string_lossy().into_owned();
        let class = EmotionClass::from_name(&dir_name)
            .ok_or_else(|| Error::UnknownClassDir(entry.path().display().to_string()))?;
        class_dirs.push((entry.path(), class));
    }
    class_dirs.sort_by(|a, b| a.0.cmp(&b.0));

    for (dir, class) in class_dirs {
        let mut files: Vec<_> = fs::read_dir(&dir)
            .map_err(|e| Error::io(dir.display().to_string(), e))?
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(dir.display().to_string(), e))?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            let image = load_pnm_sample_image(&file)?;
            dataset.samples.push(Sample {
                image,
                label: class,
                origin,
                source_id: file.display().to_string(),
            });
        }
    }
    Ok(dataset)
}

/// Decode one PGM/PPM file into a normalized [3, 64, 64] tensor.
pub fn load_pnm_sample_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let raster = pnm::decode(&bytes, &path.display().to_string())?;
    let planar = raster.to_planar_tensor();
    let resized = resize_bilinear(&planar, IMAGE_SIZE, IMAGE_SIZE)?;
    let rgb = replicate_to_rgb(resized)?;
    Ok(rgb.map(|v| normalize_pixel(v.round().clamp(0.0, 255.0) as u8)))
}

fn grayscale_to_sample_image(gray: &[u8], h: usize, w: usize) -> Result<Tensor> {
    let data: Vec<f32> = gray.iter().map(|&b| b as f32).collect();
    let image = Tensor::new(vec![1, h, w], data)?;
    let resized = resize_bilinear(&image, IMAGE_SIZE, IMAGE_SIZE)?;
    let rgb = replicate_to_rgb(resized)?;
    Ok(rgb.map(|v| normalize_pixel(v.round().clamp(0.0, 255.0) as u8)))
}

fn replicate_to_rgb(image: Tensor) -> Result<Tensor> {
    match image.shape() {
        [3, _, _] => Ok(image),
        [1, h, w] => {
            let (h, w) = (*h, *w);
            let mut data = Vec::with_capacity(3 * h * w);
            for _ in 0..3 {
                data.extend_from_slice(image.data());
            }
            Tensor::new(vec![3, h, w], data)
        }
        other => Err(Error::shape(
            "replicate_to_rgb",
            format!("expected 1 or 3 channels, got {other:?}"),
        )),
    }
}

/// Bilinear interpolation with half-pixel-center coordinate mapping.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [c, h, w] = image.shape() else {
        return Err(Error::shape(
            "resize_bilinear",
            format!("expected [C,H,W], got {:?}", image.shape()),
        ));
    };
    let (c, h, w) = (*c, *h, *w);
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize_bilinear", "zero target dimension".to_string()));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(image.clone());
    }

    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    let mut out = vec![0f32; c * out_h * out_w];
    for oy in 0..out_h {
        let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let at = |y: usize, x: usize| image.data()[(ch * h + y) * w + x] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out[(ch * out_h + oy) * out_w + ox] = (top * (1.0 - fy) + bottom * fy) as f32;
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// One minibatch: stacked images plus the label codes.
pub type Batch = (Tensor, Vec<usize>);

/// Seeded per-epoch batch iteration. Every sample appears exactly once; the
/// final partial batch is emitted.
pub fn batch_iterator(
    dataset: &LabeledDataset,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> Result<BatchIter<'_>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    assert!(batch_size >= 1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(BatchIter {
        dataset,
        order,
        batch_size,
        cursor: 0,
    })
}

#[derive(Debug)]
pub struct BatchIter<'a> {
    dataset: &'a LabeledDataset,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = &self.order[self.cursor..end];
        self.cursor = end;

        let per = 3 * IMAGE_SIZE * IMAGE_SIZE;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.dataset.samples[i];
            data.extend_from_slice(s.image.data());
            labels.push(s.label.code());
        }
        let batch =
            Tensor::new(vec![indices.len(), 3, IMAGE_SIZE, IMAGE_SIZE], data).expect("stacked batch");
        Some((batch, labels))
    }
}
