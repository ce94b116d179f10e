//! Annotation decoding contracts: exact palette mapping, Chebyshev
//! nearest-color tolerance with fallback to Exclude, binary-target
//! collapse with class-area accounting, and the encode/decode identity.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmaseg::annotation::{
    decode_annotation, decode_color, encode_labels, palette_color, to_binary_target, ClassAreas,
    Label, LabelMask, MAX_PALETTE_DISTANCE, PALETTE,
};
use tmaseg::imaging::ImageRGB;

#[test]
fn exact_palette_colors_decode_to_their_labels() {
    assert_eq!(decode_color([255, 0, 0]), Label::Cancer);
    assert_eq!(decode_color([0, 0, 255]), Label::Stroma);
    assert_eq!(decode_color([0, 0, 0]), Label::Necrosis);
    assert_eq!(decode_color([0, 255, 0]), Label::NormalLung);
    assert_eq!(decode_color([255, 255, 0]), Label::Exclude);
    assert_eq!(decode_color([255, 255, 255]), Label::Unannotated);
}

#[test]
fn near_red_decodes_to_cancer() {
    // Chebyshev distance to red is max(5, 6, 3) = 6, well inside the
    // tolerance; every other palette color is >= 249 away.
    assert_eq!(decode_color([250, 6, 3]), Label::Cancer);
}

#[test]
fn mid_gray_is_too_far_from_every_color_and_becomes_exclude() {
    // Nearest palette color is white at Chebyshev distance 127 > 32.
    assert_eq!(decode_color([128, 128, 128]), Label::Exclude);
}

#[test]
fn tolerance_boundary_is_inclusive_at_32() {
    // (223, 0, 0) is exactly 32 from red -> still Cancer.
    assert_eq!(decode_color([223, 0, 0]), Label::Cancer);
    // (222, 0, 0) is 33 from red and > 32 from everything else -> Exclude.
    assert_eq!(decode_color([222, 0, 0]), Label::Exclude);
}

/// Reference decoder: scan the palette in order, keep the first strict
/// improvement, apply the distance cutoff. This is the documented rule
/// verbatim, used as an oracle against the shipping implementation.
fn oracle_decode(rgb: [u8; 3]) -> Label {
    let mut best: Option<(Label, u8)> = None;
    for (label, color) in PALETTE {
        let d = (0..3).map(|i| rgb[i].abs_diff(color[i])).max().unwrap();
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((label, d));
        }
    }
    let (label, d) = best.unwrap();
    if d > MAX_PALETTE_DISTANCE {
        Label::Exclude
    } else {
        label
    }
}

#[test]
fn decoder_matches_first_nearest_oracle_on_random_colors() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20_000 {
        let rgb = [rng.random::<u8>(), rng.random::<u8>(), rng.random::<u8>()];
        assert_eq!(decode_color(rgb), oracle_decode(rgb), "color {rgb:?}");
    }
}

#[test]
fn every_color_within_tolerance_of_one_entry_decodes_to_it() {
    // Palette entries are pairwise >= 255 apart in Chebyshev distance, so
    // a jitter of <= 32 can never flip a pixel to another label.
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..5_000 {
        let (label, color) = PALETTE[rng.random_range(0..PALETTE.len())];
        let mut rgb = [0u8; 3];
        for (o, &c) in rgb.iter_mut().zip(&color) {
            let jitter: i32 = rng.random_range(-(MAX_PALETTE_DISTANCE as i32)..=MAX_PALETTE_DISTANCE as i32);
            *o = (c as i32 + jitter).clamp(0, 255) as u8;
        }
        assert_eq!(decode_color(rgb), label, "jittered {color:?} -> {rgb:?}");
    }
}

#[test]
fn uniform_cancer_mask_yields_all_ones_and_full_cancer_area() {
    let mask = LabelMask::from_raw(2, 2, vec![Label::Cancer; 4]);
    let t = to_binary_target(&mask);
    assert_eq!(t.values(), &[1, 1, 1, 1]);
    assert_eq!(
        t.areas(),
        ClassAreas { cancer: 4, stroma: 0, necrosis: 0, normal: 0 }
    );
}

#[test]
fn uniform_exclude_mask_yields_all_ignore_and_zero_areas() {
    let mask = LabelMask::from_raw(2, 2, vec![Label::Exclude; 4]);
    let t = to_binary_target(&mask);
    assert_eq!(t.values(), &[-1, -1, -1, -1]);
    assert_eq!(t.areas().total(), 0);
}

#[test]
fn mixed_mask_maps_labels_and_counts_areas() {
    let mask = LabelMask::from_raw(1, 3, vec![Label::Cancer, Label::Stroma, Label::Exclude]);
    let t = to_binary_target(&mask);
    assert_eq!(t.values(), &[1, 0, -1]);
    assert_eq!(t.areas().cancer, 1);
    assert_eq!(t.areas().stroma, 1);
    assert_eq!(t.areas().necrosis, 0);
    assert_eq!(t.areas().normal, 0);
}

#[test]
fn unannotated_is_benign_but_not_counted_as_tissue() {
    let mask = LabelMask::from_raw(
        1,
        4,
        vec![Label::Unannotated, Label::NormalLung, Label::Necrosis, Label::Unannotated],
    );
    let t = to_binary_target(&mask);
    assert_eq!(t.values(), &[0, 0, 0, 0]);
    assert_eq!(
        t.areas(),
        ClassAreas { cancer: 0, stroma: 0, necrosis: 1, normal: 1 }
    );
}

#[test]
fn decode_of_encode_is_the_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let all = [
        Label::Cancer,
        Label::Stroma,
        Label::Necrosis,
        Label::NormalLung,
        Label::Exclude,
        Label::Unannotated,
    ];
    for _ in 0..20 {
        let (h, w) = (rng.random_range(1..24), rng.random_range(1..24));
        let labels: Vec<Label> = (0..h * w).map(|_| all[rng.random_range(0..6)]).collect();
        let mask = LabelMask::from_raw(h, w, labels);
        assert_eq!(decode_annotation(&encode_labels(&mask)), mask);
    }
}

#[test]
fn encode_uses_exact_palette_colors() {
    let mask = LabelMask::from_raw(1, 2, vec![Label::Cancer, Label::NormalLung]);
    let img = encode_labels(&mask);
    assert_eq!(img.pixel(0, 0), [255, 0, 0]);
    assert_eq!(img.pixel(0, 1), [0, 255, 0]);
    assert_eq!(palette_color(Label::Unannotated), [255, 255, 255]);
}

proptest! {
    /// Every pixel lands in exactly one of {1, 0, -1}:
    /// #(1) + #(0) + #(-1) = height * width, and the four class areas plus
    /// exclude plus unannotated cover the raster exactly.
    #[test]
    fn pixel_count_conservation(
        h in 1usize..24,
        w in 1usize..24,
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<u8> = (0..h * w * 3).map(|_| rng.random()).collect();
        let img = ImageRGB::from_raw(h, w, data);
        let mask = decode_annotation(&img);
        let t = to_binary_target(&mask);

        let ones = t.values().iter().filter(|&&v| v == 1).count();
        let zeros = t.values().iter().filter(|&&v| v == 0).count();
        let ignores = t.values().iter().filter(|&&v| v == -1).count();
        prop_assert_eq!(ones + zeros + ignores, h * w);

        let unannotated =
            mask.labels().iter().filter(|&&l| l == Label::Unannotated).count();
        let excluded = mask.labels().iter().filter(|&&l| l == Label::Exclude).count();
        prop_assert_eq!(t.areas().total() + unannotated + excluded, h * w);
        prop_assert_eq!(t.areas().cancer, ones);
        prop_assert_eq!(ignores, excluded);
    }
}
