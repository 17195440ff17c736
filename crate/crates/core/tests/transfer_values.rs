use std::path::Path;

use trafficnet::analysis::extract_transfer_values;
use trafficnet::data::dataset::{load_directory_dataset, DatasetIndex};
use trafficnet::data::image::PreprocessMode;
use trafficnet::synth::{generate_corpus, CorpusConfig};
use trafficnet::{Arch, ArchParams, Error, Model, Rng};

fn corpus(root: &Path, seed: u64) -> DatasetIndex {
    generate_corpus(
        &CorpusConfig {
            videos_per_class: [1; 3],
            frames_per_video: 2,
            seed,
            ..Default::default()
        },
        root,
    )
    .unwrap();
    load_directory_dataset(root).unwrap()
}

fn build(arch: Arch, seed: u64) -> Model<f32> {
    arch.build(&ArchParams::default(), &Rng::new(seed)).unwrap()
}

#[test]
fn flatten_widths() {
    let dir = tempfile::tempdir().unwrap();
    let index = corpus(dir.path(), 1);
    let mode = PreprocessMode::ScalePm1;
    let vgg = build(Arch::Vgg19Trunc, 3);
    let tv = extract_transfer_values(&vgg, "flatten", &index, &[0, 3], (224, 224), &mode, None).unwrap();
    assert_eq!((tv.rows(), tv.width()), (2, 25088));
    assert_eq!(tv.labels, vec![index.samples[0].label, index.samples[3].label]);

    let cnn = build(Arch::Cnn5, 3);
    let all: Vec<usize> = (0..index.len()).collect();
    let tv = extract_transfer_values(&cnn, "flatten", &index, &all, (224, 224), &mode, None).unwrap();
    assert_eq!((tv.rows(), tv.width()), (6, 12544));
    assert!(tv.values.data().iter().all(|v| v.is_finite()));
}

#[test]
fn cache_round_trip_and_staleness() {
    let dir = tempfile::tempdir().unwrap();
    let index = corpus(&dir.path().join("a"), 1);
    let other = corpus(&dir.path().join("b"), 2);
    let cache = dir.path().join("cache").join("tv.nnwt");
    let mode = PreprocessMode::ScalePm1;
    let all: Vec<usize> = (0..index.len()).collect();
    let model = build(Arch::Cnn5, 4);

    let fresh = extract_transfer_values(&model, "flatten", &index, &all, (224, 224), &mode, Some(&cache)).unwrap();
    assert!(cache.exists());
    let cached = extract_transfer_values(&model, "flatten", &index, &all, (224, 224), &mode, Some(&cache)).unwrap();
    let bits = |t: &trafficnet::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&fresh.values), bits(&cached.values));
    assert_eq!(fresh.labels, cached.labels);

    let changed = build(Arch::Cnn5, 5);
    let e = extract_transfer_values(&changed, "flatten", &index, &all, (224, 224), &mode, Some(&cache)).unwrap_err();
    assert!(matches!(e, Error::StaleCache { .. }), "{e}");
    let e = extract_transfer_values(&model, "flatten", &other, &all, (224, 224), &mode, Some(&cache)).unwrap_err();
    assert!(matches!(e, Error::StaleCache { .. }), "{e}");
    let e = extract_transfer_values(&model, "pool5", &index, &all, (224, 224), &mode, Some(&cache)).unwrap_err();
    assert!(matches!(e, Error::StaleCache { .. }), "{e}");
}
