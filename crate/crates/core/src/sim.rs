//! Synthetic multi-frame scenes and noisy box proposals.
//!
//! Tracks move at constant velocity inside a rectangular field of view and
//! exist over one contiguous frame interval. Occlusion follows a two-state
//! Markov chain per track. Proposals jitter visible objects, add
//! near-duplicates and low-scored clutter, and miss occluded objects more
//! often.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{center_distance_bev, BevBox3D};
use crate::selection::QuerySet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [Self::Vehicle, Self::Pedestrian, Self::Cyclist];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Mean `(l, w, h)` in meters.
    pub fn dims(self) -> [f64; 3] {
        match self {
            Self::Vehicle => [4.5, 1.9, 1.6],
            Self::Pedestrian => [0.8, 0.7, 1.75],
            Self::Cyclist => [1.8, 0.7, 1.7],
        }
    }

    /// Speed cap in m/s.
    pub fn max_speed(self) -> f64 {
        match self {
            Self::Vehicle => 15.0,
            Self::Pedestrian => 2.0,
            Self::Cyclist => 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub frames: usize,
    pub dt: f64,
    pub tracks: usize,
    /// Field of view is `[-x_range, x_range] x [-y_range, y_range]`.
    pub x_range: f64,
    pub y_range: f64,
    /// Relative class frequencies: vehicle, pedestrian, cyclist.
    pub class_weights: [f64; 3],
    pub parked_fraction: f64,
    /// Fraction of tracks present in every frame.
    pub persistent_fraction: f64,
    pub min_track_frames: usize,
    /// Per-frame probability that a visible track becomes occluded.
    pub occlusion_prob: f64,
    /// Per-frame probability that an occluded track becomes visible again.
    pub recover_prob: f64,
    /// Minimum BEV center gap between any two objects in a frame.
    pub min_gap: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            frames: 16,
            dt: 0.1,
            tracks: 14,
            x_range: 30.0,
            y_range: 30.0,
            class_weights: [0.5, 0.3, 0.2],
            parked_fraction: 0.3,
            persistent_fraction: 0.6,
            min_track_frames: 4,
            occlusion_prob: 0.15,
            recover_prob: 0.3,
            min_gap: 5.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.parked_fraction,
            self.persistent_fraction,
            self.occlusion_prob,
            self.recover_prob,
        ];
        if !(self.x_range > 0.0 && self.y_range > 0.0) {
            return Err(Error::Config("field of view must have positive area".into()));
        }
        if !(self.dt > 0.0) || !(self.min_gap >= 0.0) {
            return Err(Error::Config("dt must be positive and min_gap non-negative".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        if self.class_weights.iter().any(|w| !(*w >= 0.0)) || self.class_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("class weights must be non-negative with a positive sum".into()));
        }
        if self.min_track_frames == 0 {
            return Err(Error::Config("min_track_frames must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u64,
    pub class: ObjectClass,
    pub velocity: [f64; 2],
    /// Box per frame, `None` outside the track's interval.
    pub boxes: Vec<Option<BevBox3D>>,
    pub occluded: Vec<bool>,
}

/// Ground truth of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub t: usize,
    pub boxes: Vec<BevBox3D>,
    pub ids: Vec<u64>,
    pub classes: Vec<ObjectClass>,
    pub occluded: Vec<bool>,
}

impl Frame {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.boxes.len();
        if self.ids.len() != n || self.classes.len() != n || self.occluded.len() != n {
            return Err(Error::Config(format!("frame {}: field lengths differ", self.t)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSequence {
    pub dt: f64,
    pub frames: Vec<Frame>,
}

impl SceneSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// One JSON object per frame.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for f in &self.frames {
            serde_json::to_writer(&mut w, f)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf8")
    }

    pub fn read_jsonl(r: impl BufRead, dt: f64) -> Result<Self> {
        let mut frames = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Frame = serde_json::from_str(&line)?;
            f.validate()?;
            frames.push(f);
        }
        Ok(Self { dt, frames })
    }
}

/// Generates tracks; deterministic in `seed`.
pub fn simulate_tracks(cfg: &SimConfig, seed: u64) -> Result<Vec<Track>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_len = cfg.frames;
    let mut tracks: Vec<Track> = Vec::with_capacity(cfg.tracks);
    let total_w: f64 = cfg.class_weights.iter().sum();
    for id in 0..cfg.tracks as u64 {
        for _attempt in 0..200 {
            let mut u = rng.random::<f64>() * total_w;
            let mut class = ObjectClass::Cyclist;
            for (c, w) in ObjectClass::ALL.iter().zip(cfg.class_weights) {
                if u < w {
                    class = *c;
                    break;
                }
                u -= w;
            }
            let [ml, mw, mh] = class.dims();
            let l = ml * (1.0 + 0.1 * (rng.random::<f64>() - 0.5));
            let w = mw * (1.0 + 0.1 * (rng.random::<f64>() - 0.5));
            let h = mh * (1.0 + 0.1 * (rng.random::<f64>() - 0.5));
            let (start, end) = if t_len == 0 || rng.random::<f64>() < cfg.persistent_fraction {
                (0, t_len)
            } else {
                let min_len = cfg.min_track_frames.min(t_len);
                let len = rng.random_range(min_len..=t_len);
                let start = rng.random_range(0..=t_len - len);
                (start, start + len)
            };
            let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let speed = if rng.random::<f64>() < cfg.parked_fraction {
                0.0
            } else {
                rng.random_range(0.2 * class.max_speed()..=class.max_speed())
            };
            let vel = [speed * heading.cos(), speed * heading.sin()];
            let span = (end - start) as f64 * cfg.dt;
            // sample the first center so the whole path stays in view
            let margin = l.max(w);
            let lo_x = -cfg.x_range + margin - vel[0].min(0.0) * span;
            let hi_x = cfg.x_range - margin - vel[0].max(0.0) * span;
            let lo_y = -cfg.y_range + margin - vel[1].min(0.0) * span;
            let hi_y = cfg.y_range - margin - vel[1].max(0.0) * span;
            if !(lo_x < hi_x && lo_y < hi_y) {
                continue;
            }
            let x0 = rng.random_range(lo_x..hi_x);
            let y0 = rng.random_range(lo_y..hi_y);
            let mut boxes = vec![None; t_len];
            for (k, slot) in boxes.iter_mut().enumerate().take(end).skip(start) {
                let dt = (k - start) as f64 * cfg.dt;
                *slot = Some(BevBox3D::new(x0 + vel[0] * dt, y0 + vel[1] * dt, h / 2.0, l, w, h, heading)?);
            }
            let clash = tracks.iter().any(|other| {
                boxes.iter().zip(&other.boxes).any(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => center_distance_bev(a, b) < cfg.min_gap,
                    _ => false,
                })
            });
            if clash {
                continue;
            }
            let mut occluded = vec![false; t_len];
            let mut state = false;
            for flag in occluded.iter_mut().take(end).skip(start) {
                let r: f64 = rng.random();
                state = if state { r >= cfg.recover_prob } else { r < cfg.occlusion_prob };
                *flag = state;
            }
            tracks.push(Track {
                id,
                class,
                velocity: vel,
                boxes,
                occluded,
            });
            break;
        }
    }
    Ok(tracks)
}

pub fn frames_from_tracks(tracks: &[Track], frames: usize) -> Vec<Frame> {
    (0..frames)
        .map(|t| {
            let mut f = Frame {
                t,
                boxes: vec![],
                ids: vec![],
                classes: vec![],
                occluded: vec![],
            };
            for tr in tracks {
                if let Some(b) = tr.boxes[t] {
                    f.boxes.push(b);
                    f.ids.push(tr.id);
                    f.classes.push(tr.class);
                    f.occluded.push(tr.occluded[t]);
                }
            }
            f
        })
        .collect()
}

pub fn simulate(cfg: &SimConfig, seed: u64) -> Result<SceneSequence> {
    let tracks = simulate_tracks(cfg, seed)?;
    Ok(SceneSequence {
        dt: cfg.dt,
        frames: frames_from_tracks(&tracks, cfg.frames),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Center jitter standard deviation, meters.
    pub center_sigma: f64,
    /// Relative size jitter standard deviation.
    pub size_sigma: f64,
    pub heading_sigma: f64,
    pub miss_prob: f64,
    pub occluded_miss_prob: f64,
    /// Extra proposals per detected object, drawn uniformly in `0..=max`.
    pub max_duplicates: usize,
    /// Center jitter of duplicates, meters.
    pub duplicate_sigma: f64,
    /// Mean clutter proposals per frame.
    pub clutter: f64,
    /// Clutter is added until at least this many proposals exist.
    pub min_total: usize,
    /// Score range of detected visible objects.
    pub true_score: [f64; 2],
    /// Score range of detected occluded objects.
    pub occluded_score: [f64; 2],
    /// Duplicate scores are the object score times a factor in this range.
    pub duplicate_factor: [f64; 2],
    pub clutter_score: [f64; 2],
    /// Clutter lies in `[-x_range, x_range] x [-y_range, y_range]`.
    pub x_range: f64,
    pub y_range: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            center_sigma: 0.15,
            size_sigma: 0.05,
            heading_sigma: 0.05,
            miss_prob: 0.05,
            occluded_miss_prob: 0.7,
            max_duplicates: 2,
            duplicate_sigma: 0.35,
            clutter: 30.0,
            min_total: 80,
            true_score: [0.45, 0.95],
            occluded_score: [0.15, 0.5],
            duplicate_factor: [0.4, 0.95],
            clutter_score: [0.02, 0.45],
            x_range: 30.0,
            y_range: 30.0,
        }
    }
}

impl NoiseModel {
    /// Proposals equal ground truth with score 1.
    pub fn zero() -> Self {
        Self {
            center_sigma: 0.0,
            size_sigma: 0.0,
            heading_sigma: 0.0,
            miss_prob: 0.0,
            occluded_miss_prob: 0.0,
            max_duplicates: 0,
            duplicate_sigma: 0.0,
            clutter: 0.0,
            min_total: 0,
            true_score: [1.0, 1.0],
            occluded_score: [1.0, 1.0],
            duplicate_factor: [1.0, 1.0],
            clutter_score: [0.0, 0.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sig = [self.center_sigma, self.size_sigma, self.heading_sigma, self.duplicate_sigma, self.clutter];
        if sig.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("noise scales must be finite and non-negative".into()));
        }
        if ![self.miss_prob, self.occluded_miss_prob].iter().all(|p| (0.0..=1.0).contains(p)) {
            return Err(Error::Config("miss probabilities must lie in [0, 1]".into()));
        }
        for r in [self.true_score, self.occluded_score, self.clutter_score, self.duplicate_factor] {
            if !(0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0) {
                return Err(Error::Config(format!("bad score range {r:?}")));
            }
        }
        if !(self.x_range > 0.0 && self.y_range > 0.0) {
            return Err(Error::Config("clutter region must have positive area".into()));
        }
        Ok(())
    }
}

/// Random stream for frame `t` of a run seeded with `seed`.
pub fn frame_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64 + 1);
    rng
}

fn in_range(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn jitter(rng: &mut ChaCha8Rng, b: &BevBox3D, center: f64, size: f64, heading: f64) -> BevBox3D {
    let mut g = |s: f64| if s > 0.0 { Normal::new(0.0, s).expect("sigma").sample(rng) } else { 0.0 };
    let (dx, dy, dz) = (g(center), g(center), g(center * 0.5));
    let (sl, sw, sh) = (g(size), g(size), g(size));
    let dh = g(heading);
    BevBox3D::new(
        b.x() + dx,
        b.y() + dy,
        b.z() + dz,
        b.l() * sl.exp(),
        b.w() * sw.exp(),
        b.h() * sh.exp(),
        b.heading() + dh,
    )
    .expect("jittered box stays valid")
}

/// Noisy proposals for one frame. Embeddings are empty (`[n, 0]`); the
/// query path encodes them later.
pub fn propose(frame: &Frame, noise: &NoiseModel, rng: &mut ChaCha8Rng) -> QuerySet {
    let mut boxes = Vec::new();
    let mut scores = Vec::new();
    for (b, &occ) in frame.boxes.iter().zip(&frame.occluded) {
        let miss = if occ { noise.occluded_miss_prob } else { noise.miss_prob };
        if rng.random::<f64>() < miss {
            continue;
        }
        let s = in_range(rng, if occ { noise.occluded_score } else { noise.true_score });
        boxes.push(jitter(rng, b, noise.center_sigma, noise.size_sigma, noise.heading_sigma));
        scores.push(s);
        let dups = if noise.max_duplicates > 0 {
            rng.random_range(0..=noise.max_duplicates)
        } else {
            0
        };
        for _ in 0..dups {
            boxes.push(jitter(rng, b, noise.duplicate_sigma, 2.0 * noise.size_sigma, 2.0 * noise.heading_sigma));
            scores.push(s * in_range(rng, noise.duplicate_factor));
        }
    }
    let mut clutter = if noise.clutter > 0.0 {
        let lo = (noise.clutter * 0.5).floor() as usize;
        let hi = (noise.clutter * 1.5).ceil() as usize;
        rng.random_range(lo..=hi)
    } else {
        0
    };
    clutter = clutter.max(noise.min_total.saturating_sub(boxes.len()));
    for _ in 0..clutter {
        let class = ObjectClass::ALL[rng.random_range(0..3)];
        let [l, w, h] = class.dims();
        let b = BevBox3D::new(
            rng.random_range(-noise.x_range..noise.x_range),
            rng.random_range(-noise.y_range..noise.y_range),
            h / 2.0,
            l,
            w,
            h,
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        )
        .expect("clutter box");
        boxes.push(b);
        scores.push(in_range(rng, noise.clutter_score));
    }
    let n = boxes.len();
    QuerySet::new(boxes, scores, Tensor::zeros(&[n, 0])).expect("consistent proposals")
}
