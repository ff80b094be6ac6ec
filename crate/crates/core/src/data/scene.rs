use std::fmt;

use lgcd_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BiTemporalPair;
use crate::error::{Error, Result};

/// Prompt used for scenes without any event.
pub const NO_CHANGE_PROMPT: &str = "change";

/// Minimum gap, in pixels, between the footprints of two objects.
const GAP: usize = 2;

const NOISE: f32 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    /// Drawn as a filled square.
    Building,
    /// Drawn as a thick straight segment.
    Road,
    /// Drawn as a filled disk.
    Tank,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [ObjectClass::Building, ObjectClass::Road, ObjectClass::Tank];

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Building => "building",
            ObjectClass::Road => "road",
            ObjectClass::Tank => "tank",
        }
    }

    fn colour(self) -> [f32; 3] {
        match self {
            ObjectClass::Building => [0.78, 0.36, 0.30],
            ObjectClass::Road => [0.58, 0.58, 0.62],
            ObjectClass::Tank => [0.90, 0.90, 0.84],
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Geometry {
    Square { top: usize, left: usize, side: usize },
    Line { y0: f32, x0: f32, y1: f32, x1: f32, width: f32 },
    Disk { cy: f32, cx: f32, radius: f32 },
}

impl Geometry {
    fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Geometry::Square { top, left, side } => (top..top + side).contains(&y) && (left..left + side).contains(&x),
            Geometry::Line { y0, x0, y1, x1, width } => {
                let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
                let (dy, dx) = (y1 - y0, x1 - x0);
                let len2 = dy * dy + dx * dx;
                let t = if len2 > 0.0 {
                    (((py - y0) * dy + (px - x0) * dx) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (ey, ex) = (py - (y0 + t * dy), px - (x0 + t * dx));
                ey * ey + ex * ex <= 0.25 * width * width
            }
            Geometry::Disk { cy, cx, radius } => {
                let (ey, ex) = (y as f32 + 0.5 - cy, x as f32 + 0.5 - cx);
                ey * ey + ex * ex <= radius * radius
            }
        }
    }

    /// Row-major footprint on an `h × w` grid.
    pub fn rasterize(&self, h: usize, w: usize) -> Vec<bool> {
        (0..h * w).map(|i| self.contains(i / w, i % w)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    /// Absent in the first image, present in the second.
    Appear,
    /// Present in the first image, absent in the second.
    Disappear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEvent {
    pub class: ObjectClass,
    pub geometry: Geometry,
    pub event: EventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub id: String,
    /// Drives the background texture and sensor noise.
    pub seed: u64,
    pub events: Vec<ObjectEvent>,
}

fn dilate(fp: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let mut out = vec![false; fp.len()];
    for y in 0..h {
        for x in 0..w {
            if !fp[y * w + x] {
                continue;
            }
            for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    out[yy * w + xx] = true;
                }
            }
        }
    }
    out
}

fn overlaps(a: &[bool], b: &[bool]) -> bool {
    a.iter().zip(b).any(|(&p, &q)| p && q)
}

/// Renders the two images and emits one pair per class with events, each
/// masked to that class only. A scene without events yields a single
/// all-zero pair prompted with [`NO_CHANGE_PROMPT`].
pub fn generate_scene(spec: &SceneSpec, h: usize, w: usize) -> Result<Vec<BiTemporalPair>> {
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(Error::Config(format!("scene size {h}x{w} is not a positive multiple of 32")));
    }
    let footprints: Vec<Vec<bool>> = spec.events.iter().map(|e| e.geometry.rasterize(h, w)).collect();
    for (i, fp) in footprints.iter().enumerate() {
        if !fp.iter().any(|&v| v) {
            return Err(Error::Generation(format!("{}: object {i} lies outside the image", spec.id)));
        }
        let grown = dilate(fp, h, w, GAP);
        if let Some(j) = (0..i).find(|&j| overlaps(&grown, &footprints[j])) {
            return Err(Error::Generation(format!("{}: objects {j} and {i} overlap", spec.id)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = [
        rng.gen_range(0.30..0.45f32),
        rng.gen_range(0.38..0.52f32),
        rng.gen_range(0.22..0.34f32),
    ];
    let (fy, fx, phase) = (
        rng.gen_range(0.05..0.2f32),
        rng.gen_range(0.05..0.2f32),
        rng.gen_range(0.0..std::f32::consts::TAU),
    );
    let texture = |c: usize, y: usize, x: usize| {
        base[c] + 0.05 * ((y as f32 * fy + phase).sin() * (x as f32 * fx + c as f32).cos())
    };
    let mut img_a = vec![0f32; 3 * h * w];
    let mut img_b = vec![0f32; 3 * h * w];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let t = texture(c, y, x);
                img_a[(c * h + y) * w + x] = t;
                img_b[(c * h + y) * w + x] = t;
            }
        }
    }
    for (e, fp) in spec.events.iter().zip(&footprints) {
        let target = match e.event {
            EventKind::Appear => &mut img_b,
            EventKind::Disappear => &mut img_a,
        };
        let colour = e.class.colour();
        for (p, _) in fp.iter().enumerate().filter(|(_, &v)| v) {
            for c in 0..3 {
                target[c * h * w + p] = colour[c];
            }
        }
    }
    for v in img_a.iter_mut().chain(img_b.iter_mut()) {
        *v = (*v + rng.gen_range(-NOISE..=NOISE)).clamp(0.0, 1.0);
    }
    let img_a = Tensor::new([3, h, w], img_a)?;
    let img_b = Tensor::new([3, h, w], img_b)?;

    let mut classes: Vec<ObjectClass> = spec.events.iter().map(|e| e.class).collect();
    classes.sort();
    classes.dedup();
    let pair = |prompt: &str, mask: Vec<f32>| -> Result<BiTemporalPair> {
        Ok(BiTemporalPair {
            id: format!("{}_{prompt}", spec.id),
            img_a: img_a.clone(),
            img_b: img_b.clone(),
            prompt: prompt.to_owned(),
            mask: Tensor::new([1, h, w], mask)?,
            scene_id: spec.id.clone(),
            seed: spec.seed,
        })
    };
    if classes.is_empty() {
        return Ok(vec![pair(NO_CHANGE_PROMPT, vec![0.0; h * w])?]);
    }
    classes
        .into_iter()
        .map(|class| {
            let mut mask = vec![0f32; h * w];
            for (e, fp) in spec.events.iter().zip(&footprints) {
                if e.class == class {
                    for (m, &f) in mask.iter_mut().zip(fp) {
                        if f {
                            *m = 1.0;
                        }
                    }
                }
            }
            pair(class.name(), mask)
        })
        .collect()
}

/// How many events of each class a sampled scene gets, and how large the
/// objects are.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub size: usize,
    /// Inclusive `(min, max)` event count per class, in [`ObjectClass::ALL`]
    /// order.
    pub events: [(usize, usize); 3],
    /// Building side range as a fraction of the image side.
    pub building_side: (f32, f32),
    /// Road width range as a fraction of the image side.
    pub road_width: (f32, f32),
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            size: 64,
            events: [(1, 1), (1, 1), (0, 0)],
            building_side: (0.2, 0.35),
            road_width: (0.12, 0.18),
        }
    }
}

fn sample_geometry<R: Rng + ?Sized>(class: ObjectClass, cfg: &SamplerConfig, rng: &mut R) -> Geometry {
    let size = cfg.size;
    let s = size as f32;
    match class {
        ObjectClass::Building => {
            let (lo, hi) = cfg.building_side;
            let side = (rng.gen_range(lo * s..=hi * s).round() as usize).clamp(3, size - 3);
            Geometry::Square {
                top: rng.gen_range(1..size - side),
                left: rng.gen_range(1..size - side),
                side,
            }
        }
        ObjectClass::Road => {
            let len = rng.gen_range(0.4 * s..0.75 * s);
            let angle = rng.gen_range(0.0..std::f32::consts::PI);
            let (cy, cx) = (rng.gen_range(0.25 * s..0.75 * s), rng.gen_range(0.25 * s..0.75 * s));
            let (dy, dx) = (0.5 * len * angle.sin(), 0.5 * len * angle.cos());
            Geometry::Line {
                y0: cy - dy,
                x0: cx - dx,
                y1: cy + dy,
                x1: cx + dx,
                width: rng.gen_range(cfg.road_width.0 * s..=cfg.road_width.1 * s).max(2.0),
            }
        }
        ObjectClass::Tank => {
            let radius = rng.gen_range(0.06 * s..0.11 * s).max(2.0);
            Geometry::Disk {
                cy: rng.gen_range(radius + 1.0..s - radius - 1.0),
                cx: rng.gen_range(radius + 1.0..s - radius - 1.0),
                radius,
            }
        }
    }
}

/// Draws a scene with non-overlapping objects by rejection sampling. When an
/// object finds no free spot the whole layout is redrawn.
pub fn sample_spec<R: Rng + ?Sized>(id: &str, cfg: &SamplerConfig, rng: &mut R) -> Result<SceneSpec> {
    const LAYOUTS: usize = 50;
    for (name, (lo, hi)) in [("building_side", cfg.building_side), ("road_width", cfg.road_width)] {
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!("{name} ({lo}, {hi}) must satisfy 0 < min <= max < 1")));
        }
    }
    let counts: Vec<usize> = cfg.events.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi.max(lo))).collect();
    let mut failed = ObjectClass::Building;
    for _ in 0..LAYOUTS {
        match place_objects(&counts, cfg, rng) {
            Ok(events) => {
                return Ok(SceneSpec {
                    id: id.to_owned(),
                    seed: rng.gen(),
                    events,
                })
            }
            Err(class) => failed = class,
        }
    }
    Err(Error::Generation(format!("{id}: could not place a {failed}")))
}

fn place_objects<R: Rng + ?Sized>(
    counts: &[usize],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> std::result::Result<Vec<ObjectEvent>, ObjectClass> {
    const ATTEMPTS: usize = 200;
    let n = cfg.size;
    let mut events = Vec::new();
    let mut taken: Vec<Vec<bool>> = Vec::new();
    for (class, &count) in ObjectClass::ALL.iter().zip(counts) {
        for _ in 0..count {
            let spot = (0..ATTEMPTS).find_map(|_| {
                let geometry = sample_geometry(*class, cfg, rng);
                let fp = geometry.rasterize(n, n);
                let grown = dilate(&fp, n, n, GAP);
                let free = fp.iter().any(|&v| v) && !taken.iter().any(|t| overlaps(&grown, t));
                free.then_some((geometry, fp))
            });
            let (geometry, fp) = spot.ok_or(*class)?;
            let event = if rng.gen_bool(0.5) {
                EventKind::Appear
            } else {
                EventKind::Disappear
            };
            events.push(ObjectEvent {
                class: *class,
                geometry,
                event,
            });
            taken.push(fp);
        }
    }
    Ok(events)
}

/// Samples `count` scenes from `seed` and renders them. Specs are drawn
/// sequentially; rendering may run in parallel and does not affect output.
pub fn generate_scenes(count: usize, cfg: &SamplerConfig, seed: u64) -> Result<Vec<BiTemporalPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = (0..count)
        .map(|i| sample_spec(&format!("scene{i:05}"), cfg, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let render = |s: &SceneSpec| generate_scene(s, cfg.size, cfg.size);
    #[cfg(feature = "parallel")]
    let rendered: Vec<Result<Vec<BiTemporalPair>>> = {
        use rayon::prelude::*;
        specs.par_iter().map(render).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rendered: Vec<Result<Vec<BiTemporalPair>>> = specs.iter().map(render).collect();
    let mut out = Vec::new();
    for r in rendered {
        out.extend(r?);
    }
    Ok(out)
}
