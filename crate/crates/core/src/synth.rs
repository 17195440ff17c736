//! Synthetic highway scenes with weather and signal corruption.
//!
//! A scene is a top-down road with horizontal lanes. Each video draws its
//! vehicle count once from the class range; vehicles are rounded rectangles
//! that drift along their lane at a per-lane speed. The whole lane moves as
//! one block and its travel is limited so that no vehicle leaves the frame.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::dataset::{frame_file_name, DatasetIndex, FrameSample};
use crate::data::netpbm::write_ppm;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::par;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Gray level fog blends toward.
pub const FOG_GRAY: f32 = 200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub lanes: usize,
    pub lane_pitch: usize,
    /// Inclusive vehicle count ranges for Low, Medium, Heavy.
    pub count_ranges: [(usize, usize); 3],
    pub vehicle_height: (usize, usize),
    pub vehicle_length: (usize, usize),
    pub road_level: f32,
    pub road_noise: f32,
    pub mark_level: f32,
    pub light_palette: (f32, f32),
    pub dark_palette: (f32, f32),
    pub dark_fraction: f64,
    /// Largest lane speed in pixels per frame.
    pub max_speed: f64,
    /// Keep vehicles at least one pixel apart in every class (validation
    /// mode). Low scenes are always kept apart.
    pub non_overlapping: bool,
    /// Otherwise neighbours in a lane queue bumper to bumper with this
    /// probability, touching or overlapping by up to `max_overlap` pixels.
    pub overlap_probability: f64,
    pub max_overlap: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            lanes: 8,
            lane_pitch: 8,
            count_ranges: [(1, 8), (9, 20), (18, 35)],
            vehicle_height: (5, 5),
            vehicle_length: (7, 9),
            road_level: 90.0,
            road_noise: 3.0,
            mark_level: 110.0,
            light_palette: (190.0, 250.0),
            dark_palette: (10.0, 35.0),
            dark_fraction: 0.35,
            max_speed: 1.5,
            non_overlapping: false,
            overlap_probability: 0.5,
            max_overlap: 3,
        }
    }
}

impl SceneConfig {
    /// Vehicles that fit in one lane with one-pixel gaps at maximum length.
    pub fn lane_capacity(&self) -> usize {
        (self.width + 1) / (self.vehicle_length.1 + 1)
    }

    pub fn capacity(&self) -> usize {
        self.lanes * self.lane_capacity()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.height == 0 || self.width == 0 || self.lanes == 0 || self.lane_pitch == 0 {
            return bad("scene dimensions must be >= 1".into());
        }
        if self.lanes * self.lane_pitch > self.height {
            return bad(format!(
                "{} lanes of pitch {} exceed image height {}",
                self.lanes, self.lane_pitch, self.height
            ));
        }
        let (hl, hh) = self.vehicle_height;
        let (ll, lh) = self.vehicle_length;
        if hl == 0 || hl > hh || hh > self.lane_pitch.saturating_sub(2) {
            return bad(format!("vehicle height range {hl}..={hh} must fit a lane of pitch {} with margins", self.lane_pitch));
        }
        if ll == 0 || ll > lh || lh > self.width {
            return bad(format!("vehicle length range {ll}..={lh} invalid for width {}", self.width));
        }
        if self.max_overlap >= ll {
            return bad(format!("max_overlap {} must be below the shortest vehicle length {ll}", self.max_overlap));
        }
        if !(0.0..=1.0).contains(&self.overlap_probability) {
            return bad("overlap_probability must lie in [0, 1]".into());
        }
        for (l, &(lo, hi)) in Label::ALL.iter().zip(&self.count_ranges) {
            if lo > hi {
                return bad(format!("{l} count range {lo}..={hi} is empty"));
            }
            if hi > self.capacity() {
                return bad(format!(
                    "{l} count {hi} exceeds lane capacity {} ({} lanes x {})",
                    self.capacity(),
                    self.lanes,
                    self.lane_capacity()
                ));
            }
        }
        for (lo, hi) in [self.light_palette, self.dark_palette] {
            if !(0.0..=255.0).contains(&lo) || !(lo..=255.0).contains(&hi) {
                return bad(format!("palette {lo}..{hi} outside 0..255"));
            }
        }
        if !(0.0..=1.0).contains(&self.dark_fraction) {
            return bad("dark_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weather {
    Clear,
    Fog { density: f64 },
    Rain { streaks: usize, intensity: f32 },
    Corrupt { blocks: usize, jump_probability: f64 },
}

impl Weather {
    pub fn kind(&self) -> &'static str {
        match self {
            Weather::Clear => "clear",
            Weather::Fog { .. } => "fog",
            Weather::Rain { .. } => "rain",
            Weather::Corrupt { .. } => "corrupt",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Weather::Fog { density } if !(0.0..=1.0).contains(&density) => {
                Err(Error::InvalidParam(format!("fog density {density} outside [0, 1]")))
            }
            Weather::Rain { intensity, .. } if !(0.0..=255.0).contains(&intensity) => {
                Err(Error::InvalidParam(format!("rain intensity {intensity} outside [0, 255]")))
            }
            Weather::Corrupt { jump_probability, .. } if !(0.0..=1.0).contains(&jump_probability) => {
                Err(Error::InvalidParam(format!("jump probability {jump_probability} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Weather {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Weather::Clear => f.write_str("clear"),
            Weather::Fog { density } => write!(f, "fog:{density:.3}"),
            Weather::Rain { streaks, intensity } => write!(f, "rain:{streaks}:{intensity}"),
            Weather::Corrupt { blocks, jump_probability } => write!(f, "corrupt:{blocks}:{jump_probability:.3}"),
        }
    }
}

impl FromStr for Weather {
    type Err = Error;

    /// `clear`, `fog:<density>`, `rain:<streaks>:<intensity>`,
    /// `corrupt:<blocks>:<jump_probability>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::InvalidParam(format!("bad weather `{s}`"));
        let w = match parts[..] {
            ["clear"] => Weather::Clear,
            ["fog", d] => Weather::Fog {
                density: d.parse().map_err(|_| bad())?,
            },
            ["rain", n, i] => Weather::Rain {
                streaks: n.parse().map_err(|_| bad())?,
                intensity: i.parse().map_err(|_| bad())?,
            },
            ["corrupt", b, p] => Weather::Corrupt {
                blocks: b.parse().map_err(|_| bad())?,
                jump_probability: p.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        w.validate()?;
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VehicleBox {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub video_id: String,
    pub label: Label,
    pub weather: Weather,
    /// Vehicle count, constant over the video.
    pub count: usize,
    /// `[h, w, 3]` frames with integer values in 0..=255.
    pub frames: Vec<Tensor<f32>>,
    /// Vehicle boxes per frame.
    pub positions: Vec<Vec<VehicleBox>>,
}

struct Vehicle {
    lane: usize,
    row_offset: usize,
    x0: usize,
    height: usize,
    length: usize,
    color: [f32; 3],
}

/// Split `total` into `parts` random non-negative integers.
fn random_partition(rng: &mut Rng, total: usize, parts: usize) -> Vec<usize> {
    let mut cuts: Vec<usize> = (0..parts - 1).map(|_| rng.int_range(0, total)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(total - prev);
    out
}

fn place_vehicles(cfg: &SceneConfig, apart: bool, count: usize, rng: &mut Rng) -> Vec<Vehicle> {
    let cap = cfg.lane_capacity();
    let mut per_lane = vec![0usize; cfg.lanes];
    for _ in 0..count {
        let open: Vec<usize> = (0..cfg.lanes).filter(|&l| per_lane[l] < cap).collect();
        let lane = open[rng.int_range(0, open.len() - 1)];
        per_lane[lane] += 1;
    }
    let mut out = Vec::with_capacity(count);
    for (lane, &k) in per_lane.iter().enumerate() {
        if k == 0 {
            continue;
        }
        let lengths: Vec<usize> = (0..k).map(|_| rng.int_range(cfg.vehicle_length.0, cfg.vehicle_length.1)).collect();
        let heights: Vec<usize> = (0..k).map(|_| rng.int_range(cfg.vehicle_height.0, cfg.vehicle_height.1)).collect();
        // Neighbours either queue bumper to bumper (touching or overlapping
        // by up to `max_overlap`) or are separated by a one-pixel gap plus a
        // share of the free road.
        let queued: Vec<Option<isize>> = (0..k - 1)
            .map(|_| {
                (!apart && rng.bernoulli(cfg.overlap_probability)).then(|| -(rng.int_range(0, cfg.max_overlap) as isize))
            })
            .collect();
        let used = lengths.iter().sum::<usize>() as isize + queued.iter().map(|q| q.unwrap_or(1)).sum::<isize>();
        let open_gaps = queued.iter().filter(|q| q.is_none()).count();
        let gaps = random_partition(rng, (cfg.width as isize - used) as usize, open_gaps + 2);
        let mut next_gap = gaps[1..].iter();
        let mut xs = Vec::with_capacity(k);
        let mut x = gaps[0] as isize;
        for i in 0..k {
            xs.push(x as usize);
            if i + 1 < k {
                x += lengths[i] as isize
                    + match queued[i] {
                        Some(s) => s,
                        None => 1 + *next_gap.next().expect("one gap per open pair") as isize,
                    };
            }
        }
        for i in 0..k {
            let h = heights[i];
            let row_offset = if apart {
                (cfg.lane_pitch - h) / 2
            } else {
                rng.int_range(0, cfg.lane_pitch - h)
            };
            let (lo, hi) = if rng.bernoulli(cfg.dark_fraction) {
                cfg.dark_palette
            } else {
                cfg.light_palette
            };
            let base = rng.uniform_range(lo as f64, hi as f64) as f32;
            let color = [0, 1, 2].map(|_| (base + rng.uniform_range(-8.0, 8.0) as f32).clamp(lo, hi));
            out.push(Vehicle {
                lane,
                row_offset,
                x0: xs[i],
                height: h,
                length: lengths[i],
                color,
            });
        }
    }
    out
}

/// Per-lane integer shift at each frame; lanes move as rigid blocks.
fn lane_shifts(cfg: &SceneConfig, vehicles: &[Vehicle], frames: usize, rng: &mut Rng) -> Vec<Vec<isize>> {
    (0..cfg.lanes)
        .map(|lane| {
            let speed = rng.uniform_range(-cfg.max_speed, cfg.max_speed);
            let in_lane: Vec<&Vehicle> = vehicles.iter().filter(|v| v.lane == lane).collect();
            if in_lane.is_empty() || frames == 1 {
                return vec![0; frames];
            }
            let min_x = in_lane.iter().map(|v| v.x0).min().unwrap_or(0) as f64;
            let max_end = in_lane.iter().map(|v| v.x0 + v.length).max().unwrap_or(0) as f64;
            let travel = (speed * (frames - 1) as f64).clamp(-min_x, cfg.width as f64 - max_end);
            (0..frames)
                .map(|t| (travel * t as f64 / (frames - 1) as f64).round() as isize)
                .collect()
        })
        .collect()
}

fn render_background(cfg: &SceneConfig, rng: &mut Rng) -> Vec<f32> {
    let (h, w) = (cfg.height, cfg.width);
    let mut img = vec![0.0f32; h * w * 3];
    for y in 0..h {
        let marked = y % cfg.lane_pitch == 0 && y > 0 && y < cfg.lanes * cfg.lane_pitch;
        for x in 0..w {
            let base = if marked && (x / 4) % 2 == 0 {
                cfg.mark_level
            } else {
                cfg.road_level
            };
            let v = base + (rng.normal(0.0, cfg.road_noise as f64) as f32);
            img[(y * w + x) * 3..(y * w + x) * 3 + 3].fill(v);
        }
    }
    img
}

fn draw_vehicle(img: &mut [f32], w: usize, b: &VehicleBox, color: [f32; 3]) {
    for dy in 0..b.height {
        for dx in 0..b.width {
            let corner = (dy == 0 || dy + 1 == b.height) && (dx == 0 || dx + 1 == b.width);
            if corner && b.height > 2 && b.width > 2 {
                continue;
            }
            let o = ((b.row + dy) * w + b.col + dx) * 3;
            img[o..o + 3].copy_from_slice(&color);
        }
    }
}

/// `p' = (1 - d) p + 200 d` on every value.
pub fn apply_fog(frame: &Tensor<f32>, density: f64) -> Tensor<f32> {
    let d = density as f32;
    let mut out = frame.clone();
    out.data_mut().iter_mut().for_each(|p| *p = (1.0 - d) * *p + d * FOG_GRAY);
    out
}

/// Overdraw short bright diagonal streaks.
pub fn apply_rain(frame: &Tensor<f32>, streaks: usize, intensity: f32, rng: &mut Rng) -> Tensor<f32> {
    let [h, w, c] = frame.dims()[..] else {
        return frame.clone();
    };
    let mut out = frame.clone();
    let data = out.data_mut();
    for _ in 0..streaks {
        let len = rng.int_range(2, 5);
        let y0 = rng.int_range(0, h - 1);
        let x0 = rng.int_range(0, w - 1);
        for k in 0..len {
            let (y, x) = (y0 + k, x0 + k / 2);
            if y >= h || x >= w {
                break;
            }
            data[(y * w + x) * c..(y * w + x + 1) * c].fill(intensity);
        }
    }
    out
}

/// Noise blocks on every frame; with probability `jump_probability` a frame
/// after the first is replaced by a repeat of its predecessor.
pub fn apply_corruption(frames: &[Tensor<f32>], blocks: usize, jump_probability: f64, rng: &mut Rng) -> Vec<Tensor<f32>> {
    let mut out: Vec<Tensor<f32>> = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        if i > 0 && rng.bernoulli(jump_probability) {
            let prev = out[i - 1].clone();
            out.push(prev);
            continue;
        }
        let mut g = f.clone();
        let [h, w, c] = g.dims()[..] else {
            out.push(g);
            continue;
        };
        let size = 6.min(h).min(w);
        let data = g.data_mut();
        for _ in 0..blocks {
            let y0 = rng.int_range(0, h - size);
            let x0 = rng.int_range(0, w - size);
            for y in y0..y0 + size {
                for x in x0..x0 + size {
                    for ch in 0..c {
                        data[(y * w + x) * c + ch] = rng.int_range(0, 255) as f32;
                    }
                }
            }
        }
        out.push(g);
    }
    out
}

/// Render one video. `count` overrides the draw from the class range.
pub fn generate_video(
    video_id: &str,
    label: Label,
    frames: usize,
    cfg: &SceneConfig,
    weather: Weather,
    seed: u64,
    count: Option<usize>,
) -> Result<Video> {
    cfg.validate()?;
    weather.validate()?;
    if frames == 0 {
        return Err(Error::InvalidParam("frames must be >= 1".into()));
    }
    let root = Rng::new(seed);
    let mut rng = root.derive_str("layout");
    let (lo, hi) = cfg.count_ranges[label.index()];
    let count = match count {
        Some(c) if c > cfg.capacity() => {
            return Err(Error::InvalidParam(format!("count {c} exceeds lane capacity {}", cfg.capacity())))
        }
        Some(c) => c,
        None => rng.int_range(lo, hi),
    };
    let apart = cfg.non_overlapping || label == Label::Low;
    let vehicles = place_vehicles(cfg, apart, count, &mut rng);
    let shifts = lane_shifts(cfg, &vehicles, frames, &mut rng);

    let mut clear = Vec::with_capacity(frames);
    let mut positions = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut frng = root.derive_str("frame").derive(t as u64);
        let mut img = render_background(cfg, &mut frng);
        let mut boxes = Vec::with_capacity(vehicles.len());
        for v in &vehicles {
            let b = VehicleBox {
                row: v.lane * cfg.lane_pitch + v.row_offset,
                col: (v.x0 as isize + shifts[v.lane][t]) as usize,
                height: v.height,
                width: v.length,
            };
            draw_vehicle(&mut img, cfg.width, &b, v.color);
            boxes.push(b);
        }
        clear.push(Tensor::new(vec![cfg.height, cfg.width, 3], img)?);
        positions.push(boxes);
    }

    let mut wrng = root.derive_str("weather");
    let mut frames_out = match weather {
        Weather::Clear => clear,
        Weather::Fog { density } => clear.iter().map(|f| apply_fog(f, density)).collect(),
        Weather::Rain { streaks, intensity } => clear
            .iter()
            .map(|f| apply_rain(f, streaks, intensity, &mut wrng))
            .collect(),
        Weather::Corrupt { blocks, jump_probability } => apply_corruption(&clear, blocks, jump_probability, &mut wrng),
    };
    for f in &mut frames_out {
        f.data_mut().iter_mut().for_each(|p| *p = p.round().clamp(0.0, 255.0));
    }
    Ok(Video {
        video_id: video_id.to_string(),
        label,
        weather,
        count,
        frames: frames_out,
        positions,
    })
}

/// Weather assignment for a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherMix {
    /// Fraction of each class's videos that get a non-clear condition,
    /// spread evenly over fog, rain and corruption.
    pub fraction: f64,
    pub fog_density: (f64, f64),
    pub rain_streaks: (usize, usize),
    pub rain_intensity: (f32, f32),
    pub corrupt_blocks: (usize, usize),
    pub jump_probability: f64,
}

impl Default for WeatherMix {
    fn default() -> Self {
        Self {
            fraction: 0.2,
            fog_density: (0.4, 0.8),
            rain_streaks: (40, 80),
            rain_intensity: (200.0, 235.0),
            corrupt_blocks: (1, 3),
            jump_probability: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub videos_per_class: [usize; 3],
    pub frames_per_video: usize,
    pub scene: SceneConfig,
    pub weather: WeatherMix,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            videos_per_class: [60, 60, 60],
            frames_per_video: 12,
            scene: SceneConfig::default(),
            weather: WeatherMix::default(),
            seed: 7,
        }
    }
}

fn weather_plan(cfg: &CorpusConfig) -> Result<Vec<(Label, usize, Weather)>> {
    let mix = &cfg.weather;
    if !(0.0..=1.0).contains(&mix.fraction) {
        return Err(Error::InvalidParam(format!("weather fraction {} outside [0, 1]", mix.fraction)));
    }
    let root = Rng::new(cfg.seed).derive_str("weather-plan");
    let mut plan = Vec::new();
    for label in Label::ALL {
        let n = cfg.videos_per_class[label.index()];
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = root.derive(label.index() as u64);
        rng.shuffle(&mut order);
        let affected = (mix.fraction * n as f64).round() as usize;
        let mut weather = vec![Weather::Clear; n];
        for (k, &v) in order.iter().take(affected).enumerate() {
            weather[v] = match k % 3 {
                0 => Weather::Fog {
                    density: rng.uniform_range(mix.fog_density.0, mix.fog_density.1),
                },
                1 => Weather::Rain {
                    streaks: rng.int_range(mix.rain_streaks.0, mix.rain_streaks.1),
                    intensity: rng.uniform_range(mix.rain_intensity.0 as f64, mix.rain_intensity.1 as f64).round() as f32,
                },
                _ => Weather::Corrupt {
                    blocks: rng.int_range(mix.corrupt_blocks.0, mix.corrupt_blocks.1),
                    jump_probability: mix.jump_probability,
                },
            };
        }
        plan.extend(weather.into_iter().enumerate().map(|(i, w)| (label, i, w)));
    }
    Ok(plan)
}

pub fn video_id(label: Label, i: usize) -> String {
    format!("{}{i:03}", label.dir_name())
}

/// Generate every video of a corpus in memory; the result does not depend on
/// the thread schedule.
pub fn generate_corpus_videos(cfg: &CorpusConfig) -> Result<Vec<Video>> {
    cfg.scene.validate()?;
    let plan = weather_plan(cfg)?;
    let root = Rng::new(cfg.seed);
    par::try_map_range(plan.len(), |k| {
        let (label, i, weather) = plan[k];
        let id = video_id(label, i);
        let seed = root.derive_str(&id).seed();
        generate_video(&id, label, cfg.frames_per_video, &cfg.scene, weather, seed, None)
    })
}

/// Label of `count` by equal-width terciles of the inclusive range `lo..=hi`.
pub fn tercile_label(count: usize, (lo, hi): (usize, usize)) -> Label {
    let width = (hi - lo + 1) as f64;
    let pos = (count.saturating_sub(lo)) as f64 / width;
    if pos < 1.0 / 3.0 {
        Label::Low
    } else if pos < 2.0 / 3.0 {
        Label::Medium
    } else {
        Label::Heavy
    }
}

/// Source-task corpus: counts drawn uniformly over the union of the class
/// ranges and labelled by count tercile. Weather follows the corpus mix, drawn
/// per video.
pub fn generate_tercile_videos(cfg: &CorpusConfig, videos: usize) -> Result<Vec<Video>> {
    cfg.scene.validate()?;
    let lo = cfg.scene.count_ranges.iter().map(|r| r.0).min().unwrap_or(1);
    let hi = cfg.scene.count_ranges.iter().map(|r| r.1).max().unwrap_or(lo);
    let mix = &cfg.weather;
    let root = Rng::new(cfg.seed).derive_str("tercile");
    par::try_map_range(videos, |i| {
        let mut rng = root.derive(i as u64);
        let count = rng.int_range(lo, hi);
        let label = tercile_label(count, (lo, hi));
        let weather = if rng.bernoulli(mix.fraction) {
            match rng.int_range(0, 2) {
                0 => Weather::Fog {
                    density: rng.uniform_range(mix.fog_density.0, mix.fog_density.1),
                },
                1 => Weather::Rain {
                    streaks: rng.int_range(mix.rain_streaks.0, mix.rain_streaks.1),
                    intensity: rng.uniform_range(mix.rain_intensity.0 as f64, mix.rain_intensity.1 as f64).round() as f32,
                },
                _ => Weather::Corrupt {
                    blocks: rng.int_range(mix.corrupt_blocks.0, mix.corrupt_blocks.1),
                    jump_probability: mix.jump_probability,
                },
            }
        } else {
            Weather::Clear
        };
        let id = format!("src{i:04}");
        let seed = rng.next_u64();
        generate_video(&id, label, cfg.frames_per_video, &cfg.scene, weather, seed, Some(count))
    })
}

/// `video_id,class,true_count,weather`.
pub fn manifest_csv(videos: &[Video]) -> String {
    let mut s = String::from("video_id,class,true_count,weather\n");
    for v in videos {
        let _ = writeln!(s, "{},{},{},{}", v.video_id, v.label.dir_name(), v.count, v.weather);
    }
    s
}

/// Write frames in the dataset layout plus `manifest.csv` under `root`.
pub fn write_corpus(videos: &[Video], root: &Path) -> Result<()> {
    for l in Label::ALL {
        let d = root.join(l.dir_name());
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let jobs: Vec<(&Video, usize)> = videos
        .iter()
        .flat_map(|v| (0..v.frames.len()).map(move |t| (v, t)))
        .collect();
    par::try_map_range(jobs.len(), |k| {
        let (v, t) = jobs[k];
        let path = root.join(v.label.dir_name()).join(frame_file_name(&v.video_id, t));
        write_ppm(&v.frames[t], &path)
    })?;
    let mpath = root.join("manifest.csv");
    std::fs::write(&mpath, manifest_csv(videos)).map_err(|e| Error::io(&mpath, e))
}

pub fn generate_corpus(cfg: &CorpusConfig, root: &Path) -> Result<Vec<Video>> {
    let videos = generate_corpus_videos(cfg)?;
    write_corpus(&videos, root)?;
    Ok(videos)
}

/// In-memory dataset index over generated videos.
pub fn videos_to_index(videos: &[Video]) -> Result<DatasetIndex> {
    let samples = videos
        .iter()
        .flat_map(|v| {
            v.frames.iter().enumerate().map(|(t, f)| FrameSample {
                image: f.clone(),
                label: v.label,
                video_id: v.video_id.clone(),
                frame_index: t,
            })
        })
        .collect();
    DatasetIndex::from_samples(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_dev(x: &[f32]) -> f64 {
        let n = x.len() as f64;
        let m = x.iter().map(|&v| v as f64).sum::<f64>() / n;
        (x.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n).sqrt()
    }

    #[test]
    fn same_seed_same_frames() {
        let cfg = SceneConfig::default();
        let a = generate_video("v", Label::Heavy, 4, &cfg, Weather::Clear, 3, None).unwrap();
        let b = generate_video("v", Label::Heavy, 4, &cfg, Weather::Clear, 3, None).unwrap();
        assert_eq!(a, b);
        assert!((18..=35).contains(&a.count));
        assert!(a.positions.iter().all(|p| p.len() == a.count));
        let c = generate_video("v", Label::Heavy, 4, &cfg, Weather::Clear, 4, None).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn frames_are_integral_and_in_range() {
        let v = generate_video(
            "v",
            Label::Medium,
            3,
            &SceneConfig::default(),
            Weather::Rain { streaks: 50, intensity: 220.0 },
            1,
            None,
        )
        .unwrap();
        for f in &v.frames {
            assert!(f.data().iter().all(|&p| p.fract() == 0.0 && (0.0..=255.0).contains(&p)));
        }
    }

    #[test]
    fn vehicles_stay_in_frame_and_lane() {
        let cfg = SceneConfig {
            max_speed: 5.0,
            ..Default::default()
        };
        for seed in 0..20 {
            let v = generate_video("v", Label::Heavy, 12, &cfg, Weather::Clear, seed, None).unwrap();
            for boxes in &v.positions {
                for b in boxes {
                    assert!(b.col + b.width <= cfg.width);
                    assert!(b.row + b.height <= cfg.lanes * cfg.lane_pitch);
                }
            }
        }
    }

    #[test]
    fn non_overlapping_keeps_gaps_throughout() {
        let cfg = SceneConfig {
            non_overlapping: true,
            max_speed: 3.0,
            ..Default::default()
        };
        for seed in 0..10 {
            let v = generate_video("v", Label::Heavy, 8, &cfg, Weather::Clear, seed, Some(35)).unwrap();
            for boxes in &v.positions {
                for (i, a) in boxes.iter().enumerate() {
                    for b in &boxes[i + 1..] {
                        let apart_x = a.col + a.width < b.col || b.col + b.width < a.col;
                        let apart_y = a.row + a.height < b.row || b.row + b.height < a.row;
                        assert!(apart_x || apart_y, "touching vehicles {a:?} {b:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn infeasible_counts_rejected() {
        let cfg = SceneConfig {
            count_ranges: [(1, 8), (9, 20), (18, 100)],
            ..Default::default()
        };
        assert!(generate_video("v", Label::Low, 1, &cfg, Weather::Clear, 0, None).is_err());
        assert!(generate_video("v", Label::Low, 1, &SceneConfig::default(), Weather::Clear, 0, Some(1000)).is_err());
        assert!(generate_video("v", Label::Low, 0, &SceneConfig::default(), Weather::Clear, 0, None).is_err());
    }

    #[test]
    fn fog_endpoints_and_contrast() {
        let v = generate_video("v", Label::Medium, 1, &SceneConfig::default(), Weather::Clear, 5, None).unwrap();
        let f = &v.frames[0];
        assert_eq!(&apply_fog(f, 0.0), f);
        assert!(apply_fog(f, 1.0).data().iter().all(|&p| p == 200.0));
        let half = apply_fog(f, 0.5);
        let ratio = std_dev(half.data()) / std_dev(f.data());
        assert!((ratio - 0.5).abs() < 1e-6, "{ratio}");
    }

    #[test]
    fn corruption_repeats_frames() {
        let frames: Vec<Tensor<f32>> = (0..6).map(|i| Tensor::full(&[8, 8, 3], i as f32).unwrap()).collect();
        let out = apply_corruption(&frames, 0, 1.0, &mut Rng::new(1));
        assert!(out.iter().all(|f| f == &frames[0]));
        let out = apply_corruption(&frames, 1, 0.0, &mut Rng::new(1));
        assert_ne!(out[0], frames[0]);
        assert_ne!(out[1], frames[1]);
    }

    #[test]
    fn weather_strings() {
        for w in [
            Weather::Clear,
            Weather::Fog { density: 0.7 },
            Weather::Rain { streaks: 40, intensity: 210.0 },
            Weather::Corrupt { blocks: 2, jump_probability: 0.25 },
        ] {
            assert_eq!(w.to_string().parse::<Weather>().unwrap(), w);
        }
        assert!("fog:1.5".parse::<Weather>().is_err());
        assert!("snow".parse::<Weather>().is_err());
    }

    #[test]
    fn terciles_of_count_range() {
        let r = (1, 35);
        assert_eq!(tercile_label(1, r), Label::Low);
        assert_eq!(tercile_label(12, r), Label::Low);
        assert_eq!(tercile_label(13, r), Label::Medium);
        assert_eq!(tercile_label(24, r), Label::Medium);
        assert_eq!(tercile_label(25, r), Label::Heavy);
        assert_eq!(tercile_label(35, r), Label::Heavy);
    }

    #[test]
    fn tercile_corpus_labels_follow_counts() {
        let cfg = CorpusConfig {
            frames_per_video: 2,
            ..Default::default()
        };
        let v = generate_tercile_videos(&cfg, 12).unwrap();
        assert_eq!(v, generate_tercile_videos(&cfg, 12).unwrap());
        for x in &v {
            assert_eq!(x.label, tercile_label(x.count, (1, 35)));
        }
    }

    #[test]
    fn weather_plan_proportions() {
        let cfg = CorpusConfig {
            videos_per_class: [10, 10, 10],
            ..Default::default()
        };
        let plan = weather_plan(&cfg).unwrap();
        for l in Label::ALL {
            let n = plan.iter().filter(|(pl, _, w)| *pl == l && *w != Weather::Clear).count();
            assert_eq!(n, 2);
        }
    }
}
