//! CSV ingestion, PNM parsing, image folders and batch iteration.

use std::collections::BTreeMap;
use std::fs;

use fer_core::data::{
    self, batch_iterator, load_fer2013_csv, load_image_folder, normalize_pixel, EmotionClass,
    LabeledDataset, Origin, Sample, Split, SplitSpec, IMAGE_SIZE,
};
use fer_core::error::Error;
use fer_core::tensor::Tensor;

fn pixel_row(value: u8) -> String {
    vec![value.to_string(); 48 * 48].join(" ")
}

fn write_csv(dir: &std::path::Path, rows: &[(usize, u8, &str)]) -> std::path::PathBuf {
    let mut text = String::from("emotion,pixels,Usage\n");
    for &(emotion, value, usage) in rows {
        text.push_str(&format!("{emotion},{},{usage}\n", pixel_row(value)));
    }
    let path = dir.join("fer.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn csv_rows_route_to_their_splits() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_csv(
        dir.path(),
        &[
            (0, 0, "Training"),
            (3, 128, "Training"),
            (3, 255, "Training"),
            (6, 10, "PublicTest"),
            (2, 20, "PrivateTest"),
        ],
    );
    let splits = load_fer2013_csv(&path, &SplitSpec::default()).unwrap();
    assert_eq!(splits[&Split::Train].len(), 3);
    assert_eq!(splits[&Split::Val].len(), 1);
    assert_eq!(splits[&Split::Test].len(), 1);

    let hist = splits[&Split::Train].class_histogram();
    assert_eq!(hist, [1, 0, 0, 2, 0, 0, 0]);
    assert_eq!(splits[&Split::Val].samples[0].label, EmotionClass::Neutral);

    // constant-0 image normalizes to -1, constant-255 to +1, replicated to RGB
    let black = &splits[&Split::Train].samples[0].image;
    assert_eq!(black.shape(), [3, IMAGE_SIZE, IMAGE_SIZE]);
    assert!(black.data().iter().all(|&v| v == normalize_pixel(0)));
    assert_eq!(normalize_pixel(0), -1.0);
    assert_eq!(normalize_pixel(255), 1.0);
    assert_eq!(normalize_pixel(128), (128.0 / 255.0 - 0.5) / 0.5);
}

#[test]
fn csv_errors_carry_row_numbers() {
    let dir = tempfile::tempdir().unwrap();

    let path = dir.path().join("bad_header.csv");
    fs::write(&path, "emotion,Usage\n").unwrap();
    let err = load_fer2013_csv(&path, &SplitSpec::default()).unwrap_err();
    assert!(matches!(err, Error::CsvRow { row: 1, .. }), "{err}");

    let path = dir.path().join("bad_code.csv");
    fs::write(&path, format!("emotion,pixels,Usage\n9,{},Training\n", pixel_row(0))).unwrap();
    let err = load_fer2013_csv(&path, &SplitSpec::default()).unwrap_err();
    assert!(matches!(err, Error::CsvRow { row: 2, .. }), "{err}");

    let path = dir.path().join("short_pixels.csv");
    fs::write(&path, "emotion,pixels,Usage\n0,1 2 3,Training\n").unwrap();
    let err = load_fer2013_csv(&path, &SplitSpec::default()).unwrap_err();
    match err {
        Error::CsvRow { row, detail, .. } => {
            assert_eq!(row, 2);
            assert!(detail.contains("2304"), "{detail}");
        }
        other => panic!("unexpected {other}"),
    }

    let path = dir.path().join("bad_tag.csv");
    fs::write(
        &path,
        format!("emotion,pixels,Usage\n0,{},Validation\n", pixel_row(0)),
    )
    .unwrap();
    let err = load_fer2013_csv(&path, &SplitSpec::default()).unwrap_err();
    assert!(matches!(err, Error::CsvRow { row: 2, .. }), "{err}");
}

#[test]
fn custom_split_spec_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_csv(dir.path(), &[(0, 0, "train"), (1, 0, "holdout")]);
    let mut tags = BTreeMap::new();
    tags.insert("train".to_string(), Split::Train);
    tags.insert("holdout".to_string(), Split::Test);
    let splits = load_fer2013_csv(&path, &SplitSpec { tags }).unwrap();
    assert_eq!(splits[&Split::Train].len(), 1);
    assert_eq!(splits[&Split::Test].len(), 1);
    assert!(!splits.contains_key(&Split::Val));
}

#[test]
fn pnm_decode_handles_both_formats_and_comments() {
    let pgm = b"P5\n# a comment\n2 2\n255\n\x00\x40\x80\xff";
    let img = data::pnm::decode(pgm, "test.pgm").unwrap();
    assert_eq!((img.width, img.height, img.channels), (2, 2, 1));
    assert_eq!(img.pixels, vec![0x00, 0x40, 0x80, 0xff]);

    let rgb: Vec<u8> = (0..12).collect();
    let encoded = data::pnm::encode_ppm(2, 2, &rgb);
    let img = data::pnm::decode(&encoded, "test.ppm").unwrap();
    assert_eq!((img.width, img.height, img.channels), (2, 2, 3));
    assert_eq!(img.pixels, rgb);
}

#[test]
fn pnm_rejects_malformed_input() {
    assert!(data::pnm::decode(b"P3\n2 2\n255\n", "ascii.ppm").is_err());
    assert!(data::pnm::decode(b"P5\n2 2\n65535\n\x00\x00", "deep.pgm").is_err());
    assert!(data::pnm::decode(b"P5\n2 2\n255\n\x00", "short.pgm").is_err());
}

#[test]
fn image_folder_loads_sorted_and_rejects_unknown_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for class in ["Happy", "Sad"] {
        fs::create_dir(root.join(class)).unwrap();
    }
    let gray = vec![100u8; 4];
    for (class, names) in [("Happy", &["b.pgm", "a.pgm"][..]), ("Sad", &["x.pgm"][..])] {
        for &name in names {
            let mut bytes = b"P5\n2 2\n255\n".to_vec();
            bytes.extend_from_slice(&gray);
            fs::write(root.join(class).join(name), bytes).unwrap();
        }
    }
    let ds = load_image_folder(root, Split::Train, Origin::Synthetic).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.class_histogram(), [0, 0, 0, 2, 1, 0, 0]);
    assert!(ds.samples[0].source_id.ends_with("a.pgm"));
    assert!(ds.samples.iter().all(|s| s.origin == Origin::Synthetic));

    fs::create_dir(root.join("Bored")).unwrap();
    assert!(matches!(
        load_image_folder(root, Split::Train, Origin::Synthetic).unwrap_err(),
        Error::UnknownClassDir(_)
    ));
}

fn toy_dataset(n: usize) -> LabeledDataset {
    let mut ds = LabeledDataset::new("toy", Split::Train);
    for i in 0..n {
        ds.samples.push(Sample {
            image: Tensor::full(&[3, IMAGE_SIZE, IMAGE_SIZE], i as f32),
            label: EmotionClass::from_code(i % 7).unwrap(),
            origin: Origin::Real,
            source_id: format!("toy:{i}"),
        });
    }
    ds
}

#[test]
fn batches_cover_every_sample_exactly_once() {
    let ds = toy_dataset(10);
    let mut seen: Vec<f32> = Vec::new();
    let mut sizes = Vec::new();
    for (images, labels) in batch_iterator(&ds, 4, true, 42).unwrap() {
        let (n, _, _, _) = images.dims4("test").unwrap();
        assert_eq!(n, labels.len());
        sizes.push(n);
        for row in 0..n {
            // constant fill value identifies the source sample
            seen.push(images.data()[row * 3 * IMAGE_SIZE * IMAGE_SIZE]);
        }
    }
    assert_eq!(sizes, [4, 4, 2]);
    seen.sort_by(f32::total_cmp);
    let want: Vec<f32> = (0..10).map(|i| i as f32).collect();
    assert_eq!(seen, want);
}

#[test]
fn shuffle_is_seed_deterministic() {
    let ds = toy_dataset(16);
    let order = |seed| -> Vec<usize> {
        batch_iterator(&ds, 16, true, seed)
            .unwrap()
            .flat_map(|(_, labels)| labels)
            .collect()
    };
    assert_eq!(order(7), order(7));
    assert_ne!(order(7), order(8));
    // unshuffled iteration preserves dataset order
    let unshuffled: Vec<usize> = batch_iterator(&ds, 16, false, 0)
        .unwrap()
        .flat_map(|(_, labels)| labels)
        .collect();
    assert_eq!(unshuffled, (0..16).map(|i| i % 7).collect::<Vec<_>>());
}

#[test]
fn empty_dataset_is_an_error() {
    let ds = LabeledDataset::new("empty", Split::Train);
    assert!(matches!(
        batch_iterator(&ds, 4, false, 0).unwrap_err(),
        Error::EmptyDataset
    ));
}

proptest::proptest! {
    #[test]
    fn histogram_sums_to_dataset_length(labels in proptest::collection::vec(0usize..7, 0..40)) {
        let mut ds = LabeledDataset::new("prop", Split::Train);
        for (i, &code) in labels.iter().enumerate() {
            ds.samples.push(Sample {
                image: Tensor::zeros(&[3, IMAGE_SIZE, IMAGE_SIZE]),
                label: EmotionClass::from_code(code).unwrap(),
                origin: Origin::Real,
                source_id: format!("prop:{i}"),
            });
        }
        let hist = ds.class_histogram();
        proptest::prop_assert_eq!(hist.iter().sum::<usize>(), labels.len());
        for c in 0..7 {
            proptest::prop_assert_eq!(hist[c], labels.iter().filter(|&&l| l == c).count());
        }
    }

    #[test]
    fn pixel_normalization_round_trips(byte in 0u8..=255) {
        let v = normalize_pixel(byte);
        proptest::prop_assert!((-1.0..=1.0).contains(&v));
        proptest::prop_assert_eq!(data::denormalize_pixel(v), byte);
    }
}

#[test]
fn merge_adds_histograms() {
    let mut a = toy_dataset(9);
    let b = toy_dataset(5);
    let ha = a.class_histogram();
    let hb = b.class_histogram();
    a.merge(b);
    let merged = a.class_histogram();
    for c in 0..7 {
        assert_eq!(merged[c], ha[c] + hb[c]);
    }
}
