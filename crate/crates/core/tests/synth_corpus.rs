use std::collections::BTreeMap;
use std::path::Path;

use trafficnet::baseline::{connected_components, luma};
use trafficnet::data::dataset::load_directory_dataset;
use trafficnet::synth::{
    generate_corpus, generate_corpus_videos, generate_video, CorpusConfig, SceneConfig, Weather, WeatherMix,
};
use trafficnet::Label;

fn small(videos: usize, frames: usize, seed: u64) -> CorpusConfig {
    CorpusConfig {
        videos_per_class: [videos; 3],
        frames_per_video: frames,
        seed,
        ..Default::default()
    }
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn corpus_layout_manifest_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    generate_corpus(&small(2, 5, 11), dir.path()).unwrap();
    let all = files(dir.path());
    assert_eq!(all.keys().filter(|k| k.ends_with(".ppm")).count(), 30);
    let manifest = String::from_utf8(all["manifest.csv"].clone()).unwrap();
    let mut lines = manifest.lines();
    assert_eq!(lines.next(), Some("video_id,class,true_count,weather"));
    assert_eq!(lines.count(), 6);

    let index = load_directory_dataset(dir.path()).unwrap();
    assert_eq!(index.class_counts, [10, 10, 10]);
    assert_eq!(index.videos.len(), 6);
}

#[test]
fn regeneration_is_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small(2, 3, 5);
    generate_corpus(&cfg, a.path()).unwrap();
    generate_corpus(&cfg, b.path()).unwrap();
    assert_eq!(files(a.path()), files(b.path()));
    let c = tempfile::tempdir().unwrap();
    generate_corpus(&small(2, 3, 6), c.path()).unwrap();
    assert_ne!(files(a.path()), files(c.path()));
}

#[test]
fn heavy_counts_in_range_and_constant() {
    let cfg = SceneConfig::default();
    for seed in 0..8 {
        let v = generate_video("h", Label::Heavy, 6, &cfg, Weather::Clear, seed, None).unwrap();
        assert!((18..=35).contains(&v.count), "{}", v.count);
        assert!(v.positions.iter().all(|p| p.len() == v.count));
    }
}

#[test]
fn class_count_means_are_ordered() {
    let cfg = CorpusConfig {
        weather: WeatherMix {
            fraction: 0.0,
            ..Default::default()
        },
        ..small(30, 1, 21)
    };
    let videos = generate_corpus_videos(&cfg).unwrap();
    let mut sums = [0.0f64; 3];
    for v in &videos {
        sums[v.label.index()] += v.count as f64 / 30.0;
    }
    assert!(sums[0] < sums[1] && sums[1] < sums[2], "{sums:?}");
}

#[test]
fn weather_leaves_ground_truth_alone() {
    let cfg = SceneConfig::default();
    for (i, w) in ["fog:0.7", "rain:60:220", "corrupt:2:0.5"].iter().enumerate() {
        let w: Weather = w.parse().unwrap();
        let clear = generate_video("v", Label::Medium, 4, &cfg, Weather::Clear, i as u64, None).unwrap();
        let wet = generate_video("v", Label::Medium, 4, &cfg, w, i as u64, None).unwrap();
        assert_eq!(clear.count, wet.count);
        assert_eq!(clear.positions, wet.positions);
        assert_eq!(clear.label, wet.label);
    }
}

#[test]
fn low_scenes_keep_vehicles_apart() {
    let cfg = SceneConfig::default();
    for seed in 0..10 {
        let v = generate_video("l", Label::Low, 3, &cfg, Weather::Clear, seed, None).unwrap();
        for (t, frame) in v.frames.iter().enumerate() {
            let y = luma(frame).unwrap();
            let mask: Vec<bool> = y.iter().map(|&p| (p - cfg.road_level).abs() >= 40.0).collect();
            let blobs = connected_components(&mask, cfg.height, cfg.width);
            assert_eq!(blobs.len(), v.count, "seed {seed} frame {t}");
        }
    }
}
