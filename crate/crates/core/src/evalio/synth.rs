use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::embeddings::{format_embeddings, read_embeddings};
use super::mot::{format_mot, read_mot, MotRecord};
use super::raster::{read_raster, write_raster};
use crate::error::{Error, Result};
use crate::geometry::{BBox, ImageSize};
use crate::numerics::{l2_normalize, DenseArray};

/// Interval `[start, end]` (frames, inclusive) during which object `object`
/// (1-based id) is hidden.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occlusion {
    pub object: u32,
    pub start: u32,
    pub end: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_objects: usize,
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    /// Speed range in pixels per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Frames between velocity changes; 0 keeps one velocity throughout.
    pub segment_frames: u32,
    pub box_width: (f64, f64),
    pub box_height: (f64, f64),
    /// Appearance vector length (also the raster channel count).
    pub emb_dim: usize,
    /// Per-frame Gaussian noise on emitted detection embeddings.
    pub emb_noise: f64,
    /// Pixels per raster cell side.
    pub raster_scale: u32,
    /// Std of the global per-frame camera translation, in pixels.
    pub jitter_std: f64,
    /// Std of detector box perturbation, in pixels.
    pub det_noise_std: f64,
    /// Probability of one false positive per frame.
    pub fp_rate: f64,
    /// Probability that a visible object is missed in a frame.
    pub miss_rate: f64,
    /// Probability that an object receives one random occlusion interval.
    pub occlusion_rate: f64,
    /// Length range of random occlusion intervals, in frames.
    pub occlusion_len: (u32, u32),
    /// Extra fixed occlusions.
    pub occlusions: Vec<Occlusion>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_objects: 6,
            width: 320,
            height: 256,
            frames: 60,
            speed_min: 1.0,
            speed_max: 4.0,
            segment_frames: 20,
            box_width: (20.0, 36.0),
            box_height: (40.0, 72.0),
            emb_dim: 8,
            emb_noise: 0.05,
            raster_scale: 4,
            jitter_std: 0.0,
            det_noise_std: 1.0,
            fp_rate: 0.05,
            miss_rate: 0.02,
            occlusion_rate: 0.0,
            occlusion_len: (5, 15),
            occlusions: Vec::new(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fp_rate", self.fp_rate),
            ("miss_rate", self.miss_rate),
            ("occlusion_rate", self.occlusion_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0,1]")));
            }
        }
        for (name, v) in [
            ("emb_noise", self.emb_noise),
            ("jitter_std", self.jitter_std),
            ("det_noise_std", self.det_noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be non-negative")));
            }
        }
        if self.width == 0 || self.height == 0 || self.frames == 0 || self.emb_dim == 0 {
            return Err(Error::Config("width, height, frames and emb_dim must be positive".into()));
        }
        if self.raster_scale == 0
            || !self.width.is_multiple_of(self.raster_scale)
            || !self.height.is_multiple_of(self.raster_scale)
        {
            return Err(Error::Config(format!(
                "raster_scale {} must divide the image size {}x{}",
                self.raster_scale, self.width, self.height
            )));
        }
        if !(0.0 <= self.speed_min && self.speed_min <= self.speed_max) {
            return Err(Error::Config("need 0 <= speed_min <= speed_max".into()));
        }
        let range_ok = |r: (f64, f64)| 1.0 <= r.0 && r.0 <= r.1;
        if !range_ok(self.box_width) || !range_ok(self.box_height) {
            return Err(Error::Config("box size ranges must satisfy 1 <= min <= max".into()));
        }
        if self.box_width.1 >= self.width as f64 || self.box_height.1 >= self.height as f64 {
            return Err(Error::Config("boxes must fit inside the image".into()));
        }
        if self.occlusion_len.0 > self.occlusion_len.1 {
            return Err(Error::Config("occlusion_len min exceeds max".into()));
        }
        Ok(())
    }

    pub fn image(&self) -> ImageSize {
        ImageSize {
            width: self.width,
            height: self.height,
        }
    }
}

/// A sequence on disk or in memory: ground truth, detections with
/// embeddings, and optionally one raster per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub image: ImageSize,
    pub frames: u32,
    pub raster_scale: u32,
    pub gt: Vec<MotRecord>,
    pub detections: Vec<MotRecord>,
    /// Aligned with `detections`.
    pub embeddings: Vec<Vec<f64>>,
    /// `[H/scale, W/scale, emb_dim]` per frame, frame 1 first.
    pub rasters: Vec<DenseArray>,
}

struct Object {
    center: [f64; 2],
    velocity: [f64; 2],
    size: [f64; 2],
    appearance: Vec<f64>,
    hidden: Vec<(u32, u32)>,
}

fn random_velocity(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> [f64; 2] {
    let speed = rng.random_range(cfg.speed_min..=cfg.speed_max);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    [speed * angle.cos(), speed * angle.sin()]
}

fn unit_gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        if let Some(u) = l2_normalize(&v) {
            return u;
        }
    }
}

/// Deterministic synthetic sequence. Objects move with piecewise-constant
/// velocity and bounce off the image borders; a global per-frame camera
/// offset shifts everything; hidden or missed objects emit no detection.
pub fn synthesize(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let mut objects: Vec<Object> = (0..cfg.num_objects)
        .map(|_| {
            let size = [
                rng.random_range(cfg.box_width.0..=cfg.box_width.1),
                rng.random_range(cfg.box_height.0..=cfg.box_height.1),
            ];
            let center = [
                rng.random_range(size[0] / 2.0..=w - size[0] / 2.0),
                rng.random_range(size[1] / 2.0..=h - size[1] / 2.0),
            ];
            let velocity = random_velocity(&mut rng, cfg);
            let appearance: Vec<f64> = unit_gaussian(&mut rng, cfg.emb_dim).iter().map(|v| v.abs()).collect();
            let mut hidden = Vec::new();
            if rng.random_bool(cfg.occlusion_rate) {
                let len = rng.random_range(cfg.occlusion_len.0..=cfg.occlusion_len.1);
                let start = rng.random_range(1..=cfg.frames);
                hidden.push((start, start + len.max(1) - 1));
            }
            Object {
                center,
                velocity,
                size,
                appearance,
                hidden,
            }
        })
        .collect();
    for o in &cfg.occlusions {
        if let Some(obj) = objects.get_mut(o.object as usize - 1) {
            obj.hidden.push((o.start, o.end));
        }
    }

    let jitter = Normal::new(0.0, cfg.jitter_std.max(0.0)).unwrap();
    let box_noise = Normal::new(0.0, cfg.det_noise_std.max(0.0)).unwrap();
    let emb_noise = Normal::new(0.0, cfg.emb_noise.max(0.0)).unwrap();
    let scale = cfg.raster_scale as usize;
    let (rh, rw) = (cfg.height as usize / scale, cfg.width as usize / scale);

    let mut ds = Dataset {
        image: cfg.image(),
        frames: cfg.frames,
        raster_scale: cfg.raster_scale,
        gt: Vec::new(),
        detections: Vec::new(),
        embeddings: Vec::new(),
        rasters: Vec::new(),
    };
    for t in 1..=cfg.frames {
        if t > 1 {
            for o in objects.iter_mut() {
                if cfg.segment_frames > 0 && (t - 1) % cfg.segment_frames == 0 {
                    o.velocity = random_velocity(&mut rng, cfg);
                }
                for k in 0..2 {
                    let lim = [w, h][k];
                    let half = o.size[k] / 2.0;
                    let mut c = o.center[k] + o.velocity[k];
                    if c < half {
                        c = 2.0 * half - c;
                        o.velocity[k] = -o.velocity[k];
                    } else if c > lim - half {
                        c = 2.0 * (lim - half) - c;
                        o.velocity[k] = -o.velocity[k];
                    }
                    o.center[k] = c.clamp(half, lim - half);
                }
            }
        }
        let shift = if cfg.jitter_std > 0.0 {
            [jitter.sample(&mut rng), jitter.sample(&mut rng)]
        } else {
            [0.0, 0.0]
        };
        let mut raster = DenseArray::zeros(&[rh, rw, cfg.emb_dim]);
        for (k, o) in objects.iter().enumerate() {
            let id = k as i64 + 1;
            let b = BBox::from_cxcywh(o.center[0] + shift[0], o.center[1] + shift[1], o.size[0], o.size[1])?;
            ds.gt.push(MotRecord::new(t, id, &b, 1.0));
            let hidden = o.hidden.iter().any(|&(s, e)| (s..=e).contains(&t));
            if hidden {
                continue;
            }
            paint(&mut raster, &b, &o.appearance, cfg.raster_scale as f64);
            if rng.random_bool(cfg.miss_rate) {
                continue;
            }
            let noisy = if cfg.det_noise_std > 0.0 {
                let d: Vec<f64> = (0..4).map(|_| box_noise.sample(&mut rng)).collect();
                BBox::from_ltwh(
                    b.x1 + d[0],
                    b.y1 + d[1],
                    (b.width() + d[2]).max(1.0),
                    (b.height() + d[3]).max(1.0),
                )?
            } else {
                b
            };
            let emb: Vec<f64> = o
                .appearance
                .iter()
                .map(|v| v + if cfg.emb_noise > 0.0 { emb_noise.sample(&mut rng) } else { 0.0 })
                .collect();
            let score = if cfg.det_noise_std > 0.0 || cfg.miss_rate > 0.0 {
                rng.random_range(0.5..=1.0)
            } else {
                1.0
            };
            ds.detections.push(MotRecord::new(t, -1, &noisy, score));
            ds.embeddings.push(l2_normalize(&emb).unwrap_or(emb));
        }
        if rng.random_bool(cfg.fp_rate) {
            let bw = rng.random_range(cfg.box_width.0..=cfg.box_width.1);
            let bh = rng.random_range(cfg.box_height.0..=cfg.box_height.1);
            let b = BBox::from_ltwh(rng.random_range(0.0..=w - bw), rng.random_range(0.0..=h - bh), bw, bh)?;
            ds.detections.push(MotRecord::new(t, -1, &b, rng.random_range(0.3..=0.8)));
            ds.embeddings.push(unit_gaussian(&mut rng, cfg.emb_dim));
        }
        ds.rasters.push(raster);
    }
    Ok(ds)
}

/// Blends the object's appearance into each raster cell by the fraction of
/// the cell the box covers, so later objects partly hide earlier ones.
fn paint(raster: &mut DenseArray, b: &BBox, appearance: &[f64], scale: f64) {
    let (rh, rw, c) = (raster.shape()[0], raster.shape()[1], raster.shape()[2]);
    let span = |lo: f64, hi: f64, n: usize| {
        let a = ((lo / scale).floor().max(0.0)) as usize;
        let z = ((hi / scale).ceil().max(0.0) as usize).min(n);
        a..z
    };
    let overlap = |lo: f64, hi: f64, k: usize| {
        let (c0, c1) = (k as f64 * scale, (k + 1) as f64 * scale);
        ((hi.min(c1) - lo.max(c0)) / scale).max(0.0)
    };
    let v = raster.values_mut();
    for i in span(b.y1, b.y2, rh) {
        let fy = overlap(b.y1, b.y2, i);
        for j in span(b.x1, b.x2, rw) {
            let cover = fy * overlap(b.x1, b.x2, j);
            if cover <= 0.0 {
                continue;
            }
            for (cell, a) in v[(i * rw + j) * c..(i * rw + j + 1) * c].iter_mut().zip(appearance) {
                *cell = (1.0 - cover) * *cell + cover * a;
            }
        }
    }
}

fn frame_path(dir: &Path, t: u32) -> PathBuf {
    dir.join("frames").join(format!("{t:06}.bin"))
}

/// Writes `gt.txt`, `det.txt`, `emb.txt`, `meta.txt` and `frames/NNNNNN.bin`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir.join("frames"))?;
    fs::write(dir.join("gt.txt"), format_mot(&ds.gt, None))?;
    fs::write(dir.join("det.txt"), format_mot(&ds.detections, None))?;
    fs::write(dir.join("emb.txt"), format_embeddings(&ds.detections, &ds.embeddings))?;
    let meta = format!(
        "width={}\nheight={}\nframes={}\nraster_scale={}\n",
        ds.image.width, ds.image.height, ds.frames, ds.raster_scale
    );
    fs::write(dir.join("meta.txt"), meta)?;
    for (k, r) in ds.rasters.iter().enumerate() {
        write_raster(&frame_path(dir, k as u32 + 1), r)?;
    }
    Ok(())
}

/// Reads a dataset directory. `gt.txt` and `frames/` are optional; rasters
/// are loaded only when `with_rasters`.
pub fn read_dataset(dir: &Path, with_rasters: bool) -> Result<Dataset> {
    let meta_path = dir.join("meta.txt");
    let meta = fs::read_to_string(&meta_path)?;
    let get = |key: &str| -> Result<u32> {
        meta.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .and_then(|(_, v)| v.trim().parse().ok())
            .ok_or_else(|| Error::Data(format!("{}: missing or bad {key}", meta_path.display())))
    };
    let image = ImageSize::new(get("width")?, get("height")?)?;
    let frames = get("frames")?;
    let raster_scale = get("raster_scale")?;
    let gt_path = dir.join("gt.txt");
    let gt = if gt_path.exists() { read_mot(&gt_path)? } else { Vec::new() };
    let detections = read_mot(&dir.join("det.txt"))?;
    let embeddings = read_embeddings(&dir.join("emb.txt"), &detections)?;
    let mut rasters = Vec::new();
    if with_rasters {
        for t in 1..=frames {
            let p = frame_path(dir, t);
            if !p.exists() {
                return Err(Error::Data(format!("missing raster {}", p.display())));
            }
            rasters.push(read_raster(&p)?);
        }
    }
    Ok(Dataset {
        image,
        frames,
        raster_scale,
        gt,
        detections,
        embeddings,
        rasters,
    })
}
