//! Labeled frame datasets on disk: `<root>/{low,medium,heavy}/<video>_f<index>.ppm`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::image::{preprocess, resize_bilinear, PreprocessMode};
use crate::data::netpbm::read_image;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::optim::Examples;
use crate::par;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    /// `[h, w, 3]`, raw 0-255 values.
    pub image: Tensor<f32>,
    pub label: Label,
    pub video_id: String,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetIndex {
    pub samples: Vec<FrameSample>,
    pub class_counts: [usize; 3],
    /// Video id to sample indices, in sample order.
    pub videos: BTreeMap<String, Vec<usize>>,
}

/// Split `{video_id}_f{frame_index}.ppm` into its parts.
pub fn parse_frame_name(name: &str) -> Option<(String, usize)> {
    let stem = name.strip_suffix(".ppm")?;
    let (video, idx) = stem.rsplit_once("_f")?;
    if video.is_empty() || idx.is_empty() || !idx.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((video.to_string(), idx.parse().ok()?))
}

pub fn frame_file_name(video_id: &str, frame_index: usize) -> String {
    format!("{video_id}_f{frame_index:04}.ppm")
}

impl DatasetIndex {
    /// Index in-memory samples; a video may not span two classes.
    pub fn from_samples(samples: Vec<FrameSample>) -> Result<Self> {
        let mut class_counts = [0; 3];
        let mut videos: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut video_label: BTreeMap<&str, Label> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            class_counts[s.label.index()] += 1;
            if let Some(&l) = video_label.get(s.video_id.as_str()) {
                if l != s.label {
                    return Err(Error::Dataset {
                        path: PathBuf::from(&s.video_id),
                        msg: format!("video appears under both {l} and {}", s.label),
                    });
                }
            }
            video_label.insert(&s.video_id, s.label);
            videos.entry(s.video_id.clone()).or_default().push(i);
        }
        Ok(Self {
            samples,
            class_counts,
            videos,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn video_label(&self, video_id: &str) -> Option<Label> {
        self.videos.get(video_id).map(|idx| self.samples[idx[0]].label)
    }

    /// Resize, normalize and stack the given samples.
    pub fn examples(&self, indices: &[usize], size: (usize, usize), mode: &PreprocessMode) -> Result<Examples<f32>> {
        if indices.is_empty() {
            return Err(Error::Empty("no samples selected".into()));
        }
        let images = par::try_map_range(indices.len(), |k| {
            let s = &self.samples[indices[k]];
            let img = resize_bilinear(&s.image, size)?;
            preprocess(&img, mode).map(Tensor::into_data)
        })?;
        let c = self.samples[indices[0]].image.dims()[2];
        let x = Tensor::stack(&[size.0, size.1, c], &images)?;
        Examples::new(x, indices.iter().map(|&i| self.samples[i].label.index()).collect())
    }

    /// SHA-256 over every sample's identity, label and pixels.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for s in &self.samples {
            h.update(s.video_id.as_bytes());
            h.update([0, s.label.index() as u8]);
            h.update((s.frame_index as u64).to_le_bytes());
            for d in s.image.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in s.image.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

/// Load every frame under `root`. Files directly under `root` are ignored;
/// subdirectories must be class names.
pub fn load_directory_dataset(root: &Path) -> Result<DatasetIndex> {
    let dataset_err = |path: &Path, msg: String| Error::Dataset {
        path: path.to_path_buf(),
        msg,
    };
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut class_dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let label = Label::ALL
            .into_iter()
            .find(|l| l.dir_name() == name)
            .ok_or_else(|| dataset_err(&path, format!("unknown class directory `{name}`")))?;
        class_dirs.push((name, label, path));
    }
    class_dirs.sort();

    let mut files = Vec::new();
    for (_, label, dir) in &class_dirs {
        let mut names = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            names.push(entry.path());
        }
        names.sort();
        for path in names {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let (video_id, frame_index) = parse_frame_name(&name)
                .ok_or_else(|| dataset_err(&path, format!("file name `{name}` is not <video>_f<index>.ppm")))?;
            files.push((path, *label, video_id, frame_index));
        }
    }
    let images = par::try_map_range(files.len(), |i| {
        read_image(&files[i].0).map_err(|e| dataset_err(&files[i].0, e.to_string()))
    })?;
    let mut samples = Vec::with_capacity(files.len());
    for ((path, label, video_id, frame_index), image) in files.into_iter().zip(images) {
        if image.dims()[2] != 3 {
            return Err(dataset_err(&path, "expected an RGB (P6) frame".into()));
        }
        samples.push(FrameSample {
            image,
            label,
            video_id,
            frame_index,
        });
    }
    DatasetIndex::from_samples(samples)
}
