//! Deterministic synthetic core generator for tests and demos.
//!
//! Each synthetic core imitates the geometry of a stained tissue
//! microarray core: a large pink "tissue" disc on pale glass, with purple
//! "cancer" discs, a darker necrotic spot, and a small excluded region.
//! The annotation layer paints the standard palette with a small color
//! jitter (Chebyshev radius ≤ 8) so downstream nearest-color decoding is
//! exercised, and the image colors are class-separable enough for a small
//! network to overfit quickly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::{decode_annotation, encode_labels, palette_color, Label};
use crate::dataset::DatasetError;
use crate::imaging::{save_rgb, ImageRGB};
use crate::seeding::derive_seed;

/// One generated core: the stained image and its painted annotation layer.
#[derive(Clone, Debug)]
pub struct SyntheticCore {
    pub image: ImageRGB,
    pub annotation: ImageRGB,
}

struct Disc {
    cy: f64,
    cx: f64,
    r: f64,
}

impl Disc {
    fn contains(&self, y: usize, x: usize) -> bool {
        let dy = y as f64 - self.cy;
        let dx = x as f64 - self.cx;
        dy * dy + dx * dx <= self.r * self.r
    }
}

fn disc_in_tissue(rng: &mut ChaCha8Rng, tissue: &Disc, max_center_dist: f64, r: f64) -> Disc {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let dist = rng.random_range(0.0..max_center_dist);
    Disc { cy: tissue.cy + dist * angle.sin(), cx: tissue.cx + dist * angle.cos(), r }
}

/// Mean stain color per label; per-pixel noise of ±12 is added on top.
fn image_color(label: Label, x: usize, tissue_cx: f64) -> [u8; 3] {
    match label {
        Label::Cancer => [152, 78, 160],
        Label::Necrosis => [110, 88, 74],
        Label::Exclude => [186, 186, 186],
        // Benign tissue: stroma on the left of the core, normal on the right.
        Label::Stroma | Label::NormalLung => {
            if (x as f64) < tissue_cx {
                [226, 170, 206]
            } else {
                [212, 182, 224]
            }
        }
        Label::Unannotated => [244, 241, 246],
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [u8; 3], radius: i32) -> [u8; 3] {
    let mut out = [0u8; 3];
    for (o, &b) in out.iter_mut().zip(&base) {
        let v = b as i32 + rng.random_range(-radius..=radius);
        *o = v.clamp(0, 255) as u8;
    }
    out
}

/// Paints one `size x size` synthetic core from the given RNG stream.
pub fn generate_core(size: usize, rng: &mut ChaCha8Rng) -> SyntheticCore {
    let n = size as f64;
    let tissue = Disc {
        cy: n * rng.random_range(0.47..0.53),
        cx: n * rng.random_range(0.47..0.53),
        r: n * 0.42,
    };
    let cancer_count = rng.random_range(1..=3);
    let cancers: Vec<Disc> = (0..cancer_count)
        .map(|_| {
            let r = n * rng.random_range(0.09..0.16);
            disc_in_tissue(rng, &tissue, tissue.r * 0.55, r)
        })
        .collect();
    let necrosis_r = n * rng.random_range(0.03..0.05);
    let necrosis = disc_in_tissue(rng, &tissue, tissue.r * 0.6, necrosis_r);
    let exclude_r = n * rng.random_range(0.03..0.05);
    let exclude = disc_in_tissue(rng, &tissue, tissue.r * 0.6, exclude_r);

    let mut image = ImageRGB::filled(size, size, [0, 0, 0]);
    let mut annotation = ImageRGB::filled(size, size, [0, 0, 0]);
    for y in 0..size {
        for x in 0..size {
            let label = if exclude.contains(y, x) {
                Label::Exclude
            } else if necrosis.contains(y, x) {
                Label::Necrosis
            } else if cancers.iter().any(|c| c.contains(y, x)) {
                Label::Cancer
            } else if tissue.contains(y, x) {
                if (x as f64) < tissue.cx {
                    Label::Stroma
                } else {
                    Label::NormalLung
                }
            } else {
                Label::Unannotated
            };
            image.set_pixel(y, x, jitter(rng, image_color(label, x, tissue.cx), 12));
            annotation.set_pixel(y, x, jitter(rng, palette_color(label), 8));
        }
    }
    SyntheticCore { image, annotation }
}

/// Core ids used by [`write_dataset`]: `core00`, `core01`, ...
pub fn core_id(index: usize) -> String {
    format!("core{index:02}")
}

/// Generates `count` cores into `dir`: `<id>.png` (image) and
/// `<id>.annotation.png` (painted annotation). With `with_masks`, also
/// writes the decoded palette-exact `<id>.mask.png` each core store
/// expects (the same output the annotation-conversion step produces).
/// Returns the core ids. Each core depends only on `seed` and its index.
pub fn write_dataset(
    dir: &Path,
    count: usize,
    size: usize,
    seed: u64,
    with_masks: bool,
) -> Result<Vec<String>, DatasetError> {
    let mut ids = Vec::with_capacity(count);
    for i in 0..count {
        let id = core_id(i);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let core = generate_core(size, &mut rng);
        save_rgb(&core.image, &dir.join(format!("{id}.png")))?;
        save_rgb(&core.annotation, &dir.join(format!("{id}.annotation.png")))?;
        if with_masks {
            let mask = encode_labels(&decode_annotation(&core.annotation));
            save_rgb(&mask, &dir.join(format!("{id}.mask.png")))?;
        }
        ids.push(id);
    }
    Ok(ids)
}
