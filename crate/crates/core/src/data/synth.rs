//! Procedural multimodal scenes for desk-scale experiments.
//!
//! Each scene is a triple of tiles: an IR/R/G optical image, a
//! DSM/nDSM/NDVI composite, and a 6-class label map (0 impervious,
//! 1 building, 2 low vegetation, 3 tree, 4 car, 5 clutter).
//!
//! Two class pairs are constructed to be separable only through the
//! composite channels: buildings are painted with the exact road gray
//! distribution and differ from roads only in nDSM, and trees share the
//! low-vegetation spectrum (same NDVI) while standing taller in nDSM.
//! Conversely, clutter is optically distinctive (green-channel paint) but
//! has road-like height and NDVI, so it is invisible to the composite.
//! Cars are bright in the optical image and leave only a faint nDSM bump.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::composite::{build_composite, compute_ndvi};
use crate::data::raster::{ChannelRole, Plane, RasterTile};
use crate::error::{Error, Result};
use crate::init::{rng_from_seed, SeededRng};

pub const CLASS_IMPERVIOUS: u8 = 0;
pub const CLASS_BUILDING: u8 = 1;
pub const CLASS_LOW_VEG: u8 = 2;
pub const CLASS_TREE: u8 = 3;
pub const CLASS_CAR: u8 = 4;
pub const CLASS_CLUTTER: u8 = 5;
pub const NUM_CLASSES: usize = 6;

const BUILDING_HEIGHT: f32 = 7.5;
const TREE_HEIGHT: f32 = 5.5;
const CAR_HEIGHT: f32 = 0.35;

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub optical: RasterTile,
    pub composite: RasterTile,
    pub label: RasterTile,
}

struct Canvas {
    size: usize,
    ir: Vec<f32>,
    red: Vec<f32>,
    green: Vec<f32>,
    ndsm: Vec<f32>,
    label: Vec<u8>,
}

impl Canvas {
    fn idx(&self, y: usize, x: usize) -> usize {
        y * self.size + x
    }
}

fn gauss(rng: &mut SeededRng, mean: f32, std: f32) -> f32 {
    Normal::new(mean as f64, std as f64)
        .expect("finite std")
        .sample(rng) as f32
}

/// Gray paint used for roads, building roofs, and (lighter) background.
/// IR and R move together so NDVI stays near zero.
fn paint_gray(canvas: &mut Canvas, i: usize, base: f32, rng: &mut SeededRng) {
    let v = gauss(rng, base, 0.03);
    canvas.ir[i] = v + gauss(rng, 0.0, 0.008);
    canvas.red[i] = v + gauss(rng, 0.0, 0.008);
    canvas.green[i] = v + gauss(rng, 0.0, 0.008);
}

/// Vegetation spectrum shared by low vegetation and trees (high NDVI).
fn paint_vegetation(canvas: &mut Canvas, i: usize, rng: &mut SeededRng) {
    canvas.ir[i] = gauss(rng, 0.62, 0.045);
    canvas.red[i] = gauss(rng, 0.22, 0.025);
    canvas.green[i] = gauss(rng, 0.46, 0.035);
}

/// Clutter pops in the green channel only; IR == R keeps NDVI ~ 0.
fn paint_clutter(canvas: &mut Canvas, i: usize, rng: &mut SeededRng) {
    let v = gauss(rng, 0.42, 0.025);
    canvas.ir[i] = v + gauss(rng, 0.0, 0.008);
    canvas.red[i] = v + gauss(rng, 0.0, 0.008);
    canvas.green[i] = gauss(rng, 0.72, 0.03);
}

fn paint_car(canvas: &mut Canvas, i: usize, brightness: f32, rng: &mut SeededRng) {
    canvas.ir[i] = gauss(rng, brightness, 0.02);
    canvas.red[i] = gauss(rng, brightness, 0.02);
    canvas.green[i] = gauss(rng, brightness, 0.02);
}

/// One gray distribution shared by background, road ribbons, and building
/// roofs: buildings are optically indistinguishable from roads by
/// construction.
const IMPERVIOUS_GRAY: f32 = 0.38;

fn stamp_ellipse(
    canvas: &mut Canvas,
    rng: &mut SeededRng,
    center: (f32, f32),
    radii: (f32, f32),
    label: u8,
    height: f32,
    paint: fn(&mut Canvas, usize, &mut SeededRng),
) {
    let size = canvas.size as f32;
    let y_lo = ((center.0 - radii.0).floor().max(0.0)) as usize;
    let y_hi = ((center.0 + radii.0).ceil().min(size - 1.0)) as usize;
    let x_lo = ((center.1 - radii.1).floor().max(0.0)) as usize;
    let x_hi = ((center.1 + radii.1).ceil().min(size - 1.0)) as usize;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let dy = (y as f32 - center.0) / radii.0;
            let dx = (x as f32 - center.1) / radii.1;
            if dy * dy + dx * dx <= 1.0 {
                let i = canvas.idx(y, x);
                paint(canvas, i, rng);
                canvas.label[i] = label;
                canvas.ndsm[i] = if height > 0.0 {
                    height + gauss(rng, 0.0, 0.25)
                } else {
                    0.0
                };
            }
        }
    }
}

fn stamp_rect(
    canvas: &mut Canvas,
    rng: &mut SeededRng,
    origin: (usize, usize),
    extent: (usize, usize),
    label: u8,
    height: f32,
    gray_base: Option<f32>,
) {
    let y_hi = (origin.0 + extent.0).min(canvas.size);
    let x_hi = (origin.1 + extent.1).min(canvas.size);
    for y in origin.0..y_hi {
        for x in origin.1..x_hi {
            let i = canvas.idx(y, x);
            if let Some(base) = gray_base {
                paint_gray(canvas, i, base, rng);
            }
            canvas.label[i] = label;
            if height > 0.0 {
                canvas.ndsm[i] = height + gauss(rng, 0.0, 0.15);
            }
        }
    }
}

/// Deterministic procedural scene. `size` must be divisible by 32 and `k`
/// must be 6, the class set the generator produces.
pub fn synth_scene(seed: u64, size: usize, k: usize) -> Result<SynthScene> {
    if size % 32 != 0 || size == 0 {
        return Err(Error::Arg(format!(
            "synth_scene: size {size} is not divisible by 32"
        )));
    }
    if k != NUM_CLASSES {
        return Err(Error::Arg(format!(
            "synth_scene: generator produces {NUM_CLASSES} classes, got k={k}"
        )));
    }
    if size < 96 {
        return Err(Error::Arg(format!(
            "synth_scene: size {size} too small for the feature geometry (min 96)"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let n = size * size;
    let mut canvas = Canvas {
        size,
        ir: vec![0.0; n],
        red: vec![0.0; n],
        green: vec![0.0; n],
        ndsm: vec![0.0; n],
        label: vec![CLASS_IMPERVIOUS; n],
    };

    // background: impervious surface
    for i in 0..n {
        paint_gray(&mut canvas, i, IMPERVIOUS_GRAY, &mut rng);
    }

    // ground elevation: a gentle ramp the nDSM sits on
    let mut dsm_ground = vec![0.0f32; n];
    for y in 0..size {
        for x in 0..size {
            dsm_ground[y * size + x] =
                10.0 + 8.0 * (x + y) as f32 / (2 * size) as f32 + gauss(&mut rng, 0.0, 0.05);
        }
    }

    // roads: two wavy ribbons, one per axis (same gray as the rest of the
    // impervious class; they only shape the geometry)
    for vertical in [true, false] {
        let center = rng.gen_range(0.15 * size as f32..0.85 * size as f32);
        let halfwidth = rng.gen_range(5.0..8.0f32);
        let amplitude = rng.gen_range(4.0..10.0f32);
        let phase = rng.gen_range(0.0..std::f32::consts::TAU);
        for t in 0..size {
            let along = t as f32 / size as f32;
            let c = center + amplitude * (std::f32::consts::TAU * along + phase).sin();
            let lo = (c - halfwidth).max(0.0) as usize;
            let hi = ((c + halfwidth) as usize).min(size - 1);
            for u in lo..=hi {
                let i = if vertical {
                    canvas.idx(t, u)
                } else {
                    canvas.idx(u, t)
                };
                paint_gray(&mut canvas, i, IMPERVIOUS_GRAY, &mut rng);
                canvas.label[i] = CLASS_IMPERVIOUS;
            }
        }
    }

    // low vegetation: large high-NDVI blobs at ground level
    for _ in 0..6 {
        let cy = rng.gen_range(0.0..size as f32);
        let cx = rng.gen_range(0.0..size as f32);
        let ry = rng.gen_range(16.0..30.0f32);
        let rx = rng.gen_range(16.0..30.0f32);
        stamp_ellipse(
            &mut canvas,
            &mut rng,
            (cy, cx),
            (ry, rx),
            CLASS_LOW_VEG,
            0.0,
            paint_vegetation,
        );
    }

    // trees: same spectrum, smaller, tall
    for _ in 0..7 {
        let cy = rng.gen_range(0.0..size as f32);
        let cx = rng.gen_range(0.0..size as f32);
        let r = rng.gen_range(8.0..15.0f32);
        stamp_ellipse(
            &mut canvas,
            &mut rng,
            (cy, cx),
            (r, r),
            CLASS_TREE,
            TREE_HEIGHT,
            paint_vegetation,
        );
    }

    // buildings: road-gray rectangles that only the nDSM separates from roads
    for _ in 0..4 {
        let h = rng.gen_range(20..40usize);
        let w = rng.gen_range(20..40usize);
        let y = rng.gen_range(0..size.saturating_sub(h));
        let x = rng.gen_range(0..size.saturating_sub(w));
        stamp_rect(
            &mut canvas,
            &mut rng,
            (y, x),
            (h, w),
            CLASS_BUILDING,
            BUILDING_HEIGHT,
            Some(IMPERVIOUS_GRAY),
        );
    }

    // clutter: optically loud, composite-invisible
    for _ in 0..5 {
        let cy = rng.gen_range(0.0..size as f32);
        let cx = rng.gen_range(0.0..size as f32);
        let ry = rng.gen_range(9.0..14.0f32);
        let rx = rng.gen_range(9.0..14.0f32);
        stamp_ellipse(
            &mut canvas,
            &mut rng,
            (cy, cx),
            (ry, rx),
            CLASS_CLUTTER,
            0.0,
            paint_clutter,
        );
    }

    // cars: small bright boxes on impervious ground, faint in the nDSM
    let mut cars_placed = 0;
    for _ in 0..40 {
        if cars_placed >= 9 {
            break;
        }
        let (h, w) = if rng.gen_bool(0.5) {
            (rng.gen_range(6..9usize), rng.gen_range(10..15usize))
        } else {
            (rng.gen_range(10..15usize), rng.gen_range(6..9usize))
        };
        let y = rng.gen_range(0..size - h);
        let x = rng.gen_range(0..size - w);
        let mut clear = true;
        for yy in y..y + h {
            for xx in x..x + w {
                if canvas.label[yy * size + xx] != CLASS_IMPERVIOUS {
                    clear = false;
                }
            }
        }
        if !clear {
            continue;
        }
        let brightness = rng.gen_range(0.75..0.88f32);
        for yy in y..y + h {
            for xx in x..x + w {
                let i = canvas.idx(yy, xx);
                paint_car(&mut canvas, i, brightness, &mut rng);
                canvas.label[i] = CLASS_CAR;
                canvas.ndsm[i] = CAR_HEIGHT + gauss(&mut rng, 0.0, 0.05);
            }
        }
        cars_placed += 1;
    }

    // guarantee every class appears at least once
    let mut histogram = [0u64; NUM_CLASSES];
    for &l in &canvas.label {
        histogram[l as usize] += 1;
    }
    for class in 0..NUM_CLASSES as u8 {
        if histogram[class as usize] > 0 {
            continue;
        }
        let y = 4 + 18 * class as usize;
        match class {
            CLASS_BUILDING => stamp_rect(
                &mut canvas,
                &mut rng,
                (y, 4),
                (12, 12),
                class,
                BUILDING_HEIGHT,
                Some(IMPERVIOUS_GRAY),
            ),
            CLASS_LOW_VEG => stamp_ellipse(
                &mut canvas,
                &mut rng,
                (y as f32 + 6.0, 10.0),
                (6.0, 6.0),
                class,
                0.0,
                paint_vegetation,
            ),
            CLASS_TREE => stamp_ellipse(
                &mut canvas,
                &mut rng,
                (y as f32 + 6.0, 10.0),
                (6.0, 6.0),
                class,
                TREE_HEIGHT,
                paint_vegetation,
            ),
            CLASS_CLUTTER => stamp_ellipse(
                &mut canvas,
                &mut rng,
                (y as f32 + 6.0, 10.0),
                (6.0, 6.0),
                class,
                0.0,
                paint_clutter,
            ),
            CLASS_CAR => stamp_rect(
                &mut canvas,
                &mut rng,
                (y, 4),
                (7, 12),
                class,
                CAR_HEIGHT,
                None,
            ),
            _ => stamp_rect(&mut canvas, &mut rng, (y, 4), (12, 12), class, 0.0, Some(IMPERVIOUS_GRAY)),
        }
    }

    // global nDSM sensor noise, clamped to physical range
    for v in &mut canvas.ndsm {
        *v = (*v + gauss(&mut rng, 0.0, 0.12)).max(0.0);
    }
    for plane in [&mut canvas.ir, &mut canvas.red, &mut canvas.green] {
        for v in plane.iter_mut() {
            *v = v.clamp(0.01, 0.99);
        }
    }

    let dsm: Vec<f32> = dsm_ground
        .iter()
        .zip(&canvas.ndsm)
        .map(|(&g, &h)| g + h)
        .collect();
    let ndvi = compute_ndvi(&canvas.ir, &canvas.red)?;
    let composite = build_composite(&dsm, &canvas.ndsm, &ndvi, size, size)?;

    let mut optical = RasterTile::new(size, size);
    optical.push_channel(ChannelRole::Ir, Plane::F32(canvas.ir))?;
    optical.push_channel(ChannelRole::Red, Plane::F32(canvas.red))?;
    optical.push_channel(ChannelRole::Green, Plane::F32(canvas.green))?;

    let mut label = RasterTile::new(size, size);
    label.push_channel(ChannelRole::Label, Plane::U8(canvas.label))?;

    Ok(SynthScene {
        optical,
        composite,
        label,
    })
}

/// Mean per-class value of a plane under the label map (generator audits).
pub fn class_mean(plane: &[f32], labels: &[u8], class: u8) -> Option<f64> {
    let mut sum = 0.0f64;
    let mut count = 0u64;
    for (&v, &l) in plane.iter().zip(labels) {
        if l == class {
            sum += v as f64;
            count += 1;
        }
    }
    if count == 0 {
        None
    } else {
        Some(sum / count as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_seed_regenerates_bit_identically() {
        let a = synth_scene(7, 128, 6).unwrap();
        let b = synth_scene(7, 128, 6).unwrap();
        assert_eq!(a.optical, b.optical);
        assert_eq!(a.composite, b.composite);
        assert_eq!(a.label, b.label);
    }

    #[test]
    fn different_seeds_differ() {
        let a = synth_scene(7, 128, 6).unwrap();
        let b = synth_scene(8, 128, 6).unwrap();
        assert_ne!(a.label, b.label);
    }

    #[test]
    fn histogram_contains_all_six_classes() {
        for seed in 0..8 {
            let scene = synth_scene(seed, 256, 6).unwrap();
            let labels = scene.label.channel(ChannelRole::Label).unwrap().as_u8().unwrap();
            let mut hist = [0u64; NUM_CLASSES];
            for &l in labels {
                hist[l as usize] += 1;
            }
            assert!(hist.iter().all(|&c| c > 0), "seed {seed}: {hist:?}");
        }
    }

    #[test]
    fn indivisible_size_rejected() {
        assert!(matches!(synth_scene(7, 250, 6), Err(Error::Arg(_))));
    }

    #[test]
    fn wrong_class_count_rejected() {
        assert!(matches!(synth_scene(7, 128, 5), Err(Error::Arg(_))));
    }

    /// The constructed ambiguity: building and road pixels share optical
    /// statistics but sit far apart in the (scaled) nDSM.
    #[test]
    fn building_road_ambiguity_audit() {
        let scene = synth_scene(3, 256, 6).unwrap();
        let labels = scene.label.channel(ChannelRole::Label).unwrap().as_u8().unwrap();
        let ndsm = scene.composite.channel(ChannelRole::Ndsm).unwrap().as_f32().unwrap();

        let mut optical_diff_acc = 0.0f64;
        for role in [ChannelRole::Ir, ChannelRole::Red, ChannelRole::Green] {
            let plane = scene.optical.channel(role).unwrap().as_f32().unwrap();
            let b = class_mean(plane, labels, CLASS_BUILDING).unwrap();
            let r = class_mean(plane, labels, CLASS_IMPERVIOUS).unwrap();
            optical_diff_acc += b - r;
        }
        let optical_diff = (optical_diff_acc / 3.0).abs();
        assert!(optical_diff < 0.02, "optical paint leaked: {optical_diff}");
        let b_h = class_mean(ndsm, labels, CLASS_BUILDING).unwrap();
        let r_h = class_mean(ndsm, labels, CLASS_IMPERVIOUS).unwrap();
        assert!(b_h - r_h > 0.5, "nDSM separation too weak: {b_h} vs {r_h}");
    }

    #[test]
    fn ndvi_bounds_hold() {
        let scene = synth_scene(11, 128, 6).unwrap();
        let ndvi = scene.composite.channel(ChannelRole::Ndvi).unwrap().as_f32().unwrap();
        assert!(ndvi.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn trees_and_low_veg_share_spectrum_but_not_height() {
        let scene = synth_scene(5, 256, 6).unwrap();
        let labels = scene.label.channel(ChannelRole::Label).unwrap().as_u8().unwrap();
        let ndvi = scene.composite.channel(ChannelRole::Ndvi).unwrap().as_f32().unwrap();
        let ndsm = scene.composite.channel(ChannelRole::Ndsm).unwrap().as_f32().unwrap();
        let tree_ndvi = class_mean(ndvi, labels, CLASS_TREE).unwrap();
        let veg_ndvi = class_mean(ndvi, labels, CLASS_LOW_VEG).unwrap();
        assert!((tree_ndvi - veg_ndvi).abs() < 0.05, "{tree_ndvi} vs {veg_ndvi}");
        let tree_h = class_mean(ndsm, labels, CLASS_TREE).unwrap();
        let veg_h = class_mean(ndsm, labels, CLASS_LOW_VEG).unwrap();
        assert!(tree_h - veg_h > 0.3, "{tree_h} vs {veg_h}");
    }
}
