//! Class-rebalancing planner: per-class synthetic deficits, prompt manifests,
//! generation through a pluggable image generator, and post-merge
//! verification of the resulting distribution.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    self, load_image_folder, EmotionClass, LabeledDataset, Origin, Split, NUM_CLASSES,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentationScheme {
    /// Bring every class up to the current maximum count.
    Equalize,
    /// Bring every class up to a fixed per-class target.
    FixedTarget(usize),
}

impl AugmentationScheme {
    /// Accepts `equalize` or `fixed:<n>`.
    pub fn parse(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("equalize") {
            return Ok(Self::Equalize);
        }
        if let Some(n) = s.strip_prefix("fixed:") {
            let n: usize = n
                .parse()
                .map_err(|_| Error::Config(format!("bad fixed target `{n}`")))?;
            if n == 0 {
                return Err(Error::Config("fixed target must be >= 1".into()));
            }
            return Ok(Self::FixedTarget(n));
        }
        Err(Error::Config(format!(
            "unknown scheme `{s}`, expected `equalize` or `fixed:<n>`"
        )))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassPlan {
    pub class: EmotionClass,
    pub original: usize,
    pub target: usize,
    pub deficit: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub dataset: String,
    pub scheme: AugmentationScheme,
    pub classes: Vec<ClassPlan>,
}

impl AugmentationPlan {
    pub fn total_deficit(&self) -> usize {
        self.classes.iter().map(|c| c.deficit).sum()
    }

    pub fn deficit_for(&self, class: EmotionClass) -> usize {
        self.classes[class.code()].deficit
    }
}

/// Per-class targets and deficits for a scheme. Overfull classes keep their
/// samples; their deficit clamps to zero.
pub fn compute_plan(
    histogram: &[usize; NUM_CLASSES],
    scheme: AugmentationScheme,
    dataset: impl Into<String>,
) -> Result<AugmentationPlan> {
    let target = match scheme {
        AugmentationScheme::Equalize => {
            let max = *histogram.iter().max().unwrap();
            if max == 0 {
                return Err(Error::Config(
                    "cannot equalize an all-zero histogram".into(),
                ));
            }
            max
        }
        AugmentationScheme::FixedTarget(n) => n,
    };
    let classes = EmotionClass::ALL
        .iter()
        .map(|&class| {
            let original = histogram[class.code()];
            ClassPlan {
                class,
                original,
                target,
                deficit: target.saturating_sub(original),
            }
        })
        .collect();
    Ok(AugmentationPlan {
        dataset: dataset.into(),
        scheme,
        classes,
    })
}

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub class: EmotionClass,
    pub prompt: String,
    pub keywords: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptManifest {
    pub version: u32,
    pub dataset: String,
    pub scheme: AugmentationScheme,
    pub entries: Vec<ManifestEntry>,
}

/// A prompt pattern with an `{emotion}` slot (or `{Emotion}` for sentence
/// position) and optional `{subject}` / `{age}` slots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub pattern: String,
    /// Tag appended to the keyword list when the pattern asks for realism.
    pub realistic: bool,
}

pub fn default_templates() -> Vec<PromptTemplate> {
    let t = |pattern: &str, realistic| PromptTemplate {
        pattern: pattern.to_string(),
        realistic,
    };
    vec![
        t("A {subject}'s face with {emotion} emotion", false),
        t("A face of a {subject} in their {age} expressing {emotion} emotion", false),
        t("{Emotion} expression on a {subject}, realistic photo", true),
        t("A {subject} in their {age} expressing {emotion} emotions on their face", false),
    ]
}

const SUBJECTS: [&str; 5] = ["man", "woman", "kid", "old man", "old woman"];
const AGES: [&str; 7] = ["20's", "30's", "40's", "50's", "60's", "70's", "80's"];

/// Deterministic expansion of a plan into prompts: templates, subjects and
/// age bands cycle round-robin until each class's deficit is covered. Every
/// entry carries a distinct generation seed derived from `seed`.
pub fn emit_manifest(
    plan: &AugmentationPlan,
    templates: &[PromptTemplate],
    seed: u64,
) -> Result<PromptManifest> {
    if templates.is_empty() {
        return Err(Error::Config("template set is empty".into()));
    }
    for t in templates {
        if !t.pattern.contains("{emotion}") && !t.pattern.contains("{Emotion}") {
            return Err(Error::Config(format!(
                "template `{}` has no emotion slot",
                t.pattern
            )));
        }
    }

    let mut entries = Vec::with_capacity(plan.total_deficit());
    let mut counter = 0u64;
    for class in &plan.classes {
        let emotion = class.class.name().to_ascii_lowercase();
        for i in 0..class.deficit {
            let template = &templates[i % templates.len()];
            let subject = SUBJECTS[(i / templates.len()) % SUBJECTS.len()];
            let age = AGES[(i / (templates.len() * SUBJECTS.len())) % AGES.len()];
            let mut capitalized = emotion.clone();
            capitalized[..1].make_ascii_uppercase();
            let prompt = template
                .pattern
                .replace("{subject}", subject)
                .replace("{age}", age)
                .replace("{emotion}", &emotion)
                .replace("{Emotion}", &capitalized);

            let mut keywords = Vec::new();
            // keywords follow slot order of appearance in the pattern
            let mut slots: Vec<(usize, String)> = Vec::new();
            for (marker, value) in [
                ("{subject}", subject.to_string()),
                ("{age}", age.to_string()),
                ("{emotion}", emotion.clone()),
                ("{Emotion}", emotion.clone()),
            ] {
                if let Some(idx) = template.pattern.find(marker) {
                    slots.push((idx, value));
                }
            }
            slots.sort();
            keywords.extend(slots.into_iter().map(|(_, v)| v));
            if template.realistic {
                keywords.push("realistic".to_string());
            }

            entries.push(ManifestEntry {
                class: class.class,
                prompt,
                keywords,
                seed: seed.wrapping_add(counter),
            });
            counter += 1;
        }
    }
    Ok(PromptManifest {
        version: MANIFEST_VERSION,
        dataset: plan.dataset.clone(),
        scheme: plan.scheme,
        entries,
    })
}

/// Produces raster image bytes (PGM/PPM) for a prompt and seed.
pub trait Generator {
    fn request(&self, prompt: &str, seed: u64) -> Result<Vec<u8>>;
}

/// Deterministic desk-scale stand-in for a diffusion service: a 64x64
/// procedural pattern whose base color and stripe frequency are a function of
/// the emotion class named in the prompt, with seed-driven jitter.
pub struct StubGenerator;

const STUB_BASE_COLORS: [[u8; 3]; NUM_CLASSES] = [
    [220, 40, 40],   // Angry
    [40, 200, 40],   // Disgust
    [40, 40, 220],   // Fear
    [220, 220, 40],  // Happy
    [40, 220, 220],  // Sad
    [220, 40, 220],  // Surprise
    [128, 128, 128], // Neutral
];

impl Generator for StubGenerator {
    fn request(&self, prompt: &str, seed: u64) -> Result<Vec<u8>> {
        let class = EmotionClass::from_prompt(prompt)
            .ok_or_else(|| Error::Generator(format!("no emotion keyword in prompt `{prompt}`")))?;
        let base = STUB_BASE_COLORS[class.code()];
        let freq = (class.code() + 1) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((class.code() as u64) << 56));

        let side = data::IMAGE_SIZE;
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut rgb = Vec::with_capacity(side * side * 3);
        for y in 0..side {
            for x in 0..side {
                let stripe =
                    (freq * std::f64::consts::TAU * (x as f64 + y as f64) / side as f64 + phase)
                        .sin()
                        * 25.0;
                let jitter: f64 = rng.gen_range(-8.0..8.0);
                for ch in 0..3 {
                    let v = base[ch] as f64 + stripe + jitter;
                    rgb.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Ok(data::pnm::encode_ppm(side, side, &rgb))
    }
}

/// Adapter that shells out to an external generator: the prompt and seed are
/// appended as the last two arguments and the image is read from stdout.
pub struct CommandGenerator {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandGenerator {
    pub fn parse(spec: &str) -> Result<Self> {
        let mut parts = spec.split_whitespace().map(String::from);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("empty generator command".into()))?;
        Ok(Self {
            program,
            args: parts.collect(),
        })
    }
}

impl Generator for CommandGenerator {
    fn request(&self, prompt: &str, seed: u64) -> Result<Vec<u8>> {
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(prompt)
            .arg(seed.to_string())
            .output()
            .map_err(|e| Error::Generator(format!("spawn {}: {e}", self.program)))?;
        if !output.status.success() {
            return Err(Error::Generator(format!(
                "{} exited with {}: {}",
                self.program,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        Ok(output.stdout)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClassGenerationReport {
    pub requested: usize,
    pub succeeded: usize,
    pub skipped: usize,
    pub failed: Vec<FailedEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailedEntry {
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenerationReport {
    pub classes: BTreeMap<String, ClassGenerationReport>,
}

impl GenerationReport {
    pub fn total_requested(&self) -> usize {
        self.classes.values().map(|c| c.requested).sum()
    }

    pub fn total_failed(&self) -> usize {
        self.classes.values().map(|c| c.failed.len()).sum()
    }

    pub fn all_failed(&self) -> bool {
        let requested = self.total_requested();
        requested > 0 && self.total_failed() == requested
    }
}

/// Run every manifest entry through the generator, writing
/// `<out_dir>/<ClassName>/<seed>.ppm`. Existing files are skipped, failures
/// are recorded and the run continues.
pub fn run_generation(
    manifest: &PromptManifest,
    generator: &dyn Generator,
    out_dir: &Path,
) -> Result<GenerationReport> {
    let mut report = GenerationReport::default();
    for class in EmotionClass::ALL {
        report
            .classes
            .insert(class.name().to_string(), ClassGenerationReport::default());
    }

    for entry in &manifest.entries {
        let class_report = report
            .classes
            .get_mut(entry.class.name())
            .expect("all classes present");
        class_report.requested += 1;

        let dir = out_dir.join(entry.class.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let path = dir.join(format!("{}.ppm", entry.seed));
        if path.exists() {
            class_report.skipped += 1;
            continue;
        }

        match generate_one(generator, entry, &path) {
            Ok(()) => class_report.succeeded += 1,
            Err(e) => class_report.failed.push(FailedEntry {
                seed: entry.seed,
                reason: e.to_string(),
            }),
        }
    }
    Ok(report)
}

fn generate_one(
    generator: &dyn Generator,
    entry: &ManifestEntry,
    path: &Path,
) -> Result<()> {
    let bytes = generator.request(&entry.prompt, entry.seed)?;
    let raster = data::pnm::decode(&bytes, &format!("generator output for seed {}", entry.seed))?;
    let planar = raster.to_planar_tensor();
    let resized = data::resize_bilinear(&planar, data::IMAGE_SIZE, data::IMAGE_SIZE)?;
    // store as 8-bit RGB regardless of generator channel count
    let hw = data::IMAGE_SIZE * data::IMAGE_SIZE;
    let channels = resized.shape()[0];
    let mut rgb = Vec::with_capacity(hw * 3);
    for p in 0..hw {
        for c in 0..3 {
            let src = if channels == 3 { c } else { 0 };
            rgb.push(resized.data()[src * hw + p].round().clamp(0.0, 255.0) as u8);
        }
    }
    let encoded = data::pnm::encode_ppm(data::IMAGE_SIZE, data::IMAGE_SIZE, &rgb);
    fs::write(path, encoded).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Merge generated images into the real training set and assert each class
/// lands exactly on its plan target (or keeps its original count where the
/// deficit clamped to zero).
pub fn merge_and_verify(
    real: &LabeledDataset,
    synth_dir: &Path,
    plan: &AugmentationPlan,
) -> Result<LabeledDataset> {
    let mut merged = real.clone();
    if synth_dir.exists() {
        let synth = load_image_folder(synth_dir, Split::Train, Origin::Synthetic)?;
        merged.merge(synth);
    }
    let histogram = merged.class_histogram();
    for class_plan in &plan.classes {
        let expected = class_plan.original + class_plan.deficit;
        let actual = histogram[class_plan.class.code()];
        if actual != expected {
            return Err(Error::CountMismatch {
                class: class_plan.class,
                expected,
                actual,
            });
        }
    }
    Ok(merged)
}
