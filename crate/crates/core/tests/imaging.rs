//! Raster I/O contracts: lossless RGB round trips, alpha discarding,
//! decode failures that name the offending file, and half-up grayscale
//! quantization of probability heatmaps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmaseg::imaging::{
    load_heatmap, load_rgb, quantize_probability, save_heatmap, save_rgb, Heatmap, ImageRGB,
    ImagingError,
};

fn random_image(height: usize, width: usize, seed: u64) -> ImageRGB {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..height * width * 3).map(|_| rng.random::<u8>()).collect();
    ImageRGB::from_raw(height, width, data)
}

#[test]
fn rgb_save_load_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    for (h, w, seed) in [(1, 1, 1), (37, 23, 2), (64, 64, 3), (5, 200, 4)] {
        let img = random_image(h, w, seed);
        let path = dir.path().join(format!("img_{h}x{w}.png"));
        save_rgb(&img, &path).unwrap();
        let back = load_rgb(&path).unwrap();
        assert_eq!(back, img, "{h}x{w} round trip changed pixel bytes");
    }
}

#[test]
fn single_red_pixel_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let img = ImageRGB::from_raw(1, 1, vec![255, 0, 0]);
    let path = dir.path().join("red.png");
    save_rgb(&img, &path).unwrap();
    let back = load_rgb(&path).unwrap();
    assert_eq!((back.height(), back.width()), (1, 1));
    assert_eq!(back.pixel(0, 0), [255, 0, 0]);
}

#[test]
fn rgba_alpha_is_discarded() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rgba.png");
    // 2x1 RGBA with distinct alphas, saved through the codec directly.
    let buf: image::RgbaImage =
        image::ImageBuffer::from_raw(2, 1, vec![10, 20, 30, 128, 200, 100, 50, 0]).unwrap();
    buf.save_with_format(&path, image::ImageFormat::Png).unwrap();
    let img = load_rgb(&path).unwrap();
    assert_eq!((img.height(), img.width()), (1, 2));
    assert_eq!(img.pixel(0, 0), [10, 20, 30]);
    assert_eq!(img.pixel(0, 1), [200, 100, 50]);
}

#[test]
fn missing_file_error_names_the_path() {
    let err = load_rgb(std::path::Path::new("/nonexistent/core17.png")).unwrap_err();
    match &err {
        ImagingError::FileNotFound { path } => {
            assert!(path.to_string_lossy().contains("core17.png"));
        }
        other => panic!("expected FileNotFound, got {other:?}"),
    }
    assert!(err.to_string().contains("core17.png"));
}

#[test]
fn corrupt_bytes_are_a_decode_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("garbage.png");
    std::fs::write(&path, b"this is not a png").unwrap();
    let err = load_rgb(&path).unwrap_err();
    assert!(matches!(err, ImagingError::Decode { .. }), "got {err:?}");
    assert!(err.to_string().contains("garbage.png"));
}

#[test]
fn truncated_png_is_a_decode_error() {
    let dir = tempfile::tempdir().unwrap();
    let whole = dir.path().join("whole.png");
    save_rgb(&random_image(16, 16, 5), &whole).unwrap();
    let bytes = std::fs::read(&whole).unwrap();
    let cut = dir.path().join("cut.png");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let err = load_rgb(&cut).unwrap_err();
    assert!(matches!(err, ImagingError::Decode { .. }), "got {err:?}");
}

#[test]
fn sixteen_bit_png_is_rejected_as_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("deep.png");
    let buf: image::ImageBuffer<image::Rgb<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(2, 2, vec![1000u16; 12]).unwrap();
    buf.save_with_format(&path, image::ImageFormat::Png).unwrap();
    let err = load_rgb(&path).unwrap_err();
    match &err {
        ImagingError::Decode { path, detail } => {
            assert!(path.to_string_lossy().contains("deep.png"));
            assert!(detail.contains("unsupported"), "detail: {detail}");
        }
        other => panic!("expected Decode, got {other:?}"),
    }
}

#[test]
fn quantization_rounds_half_up() {
    assert_eq!(quantize_probability(0.0), 0);
    assert_eq!(quantize_probability(1.0), 255);
    // 0.5 * 255 = 127.5, half-up -> 128.
    assert_eq!(quantize_probability(0.5), 128);
    // 254.49 rounds down.
    assert_eq!(quantize_probability(0.998), 254);
}

#[test]
fn heatmap_png_dimensions_follow_height_then_width() {
    let dir = tempfile::tempdir().unwrap();
    let map = Heatmap::from_raw(2, 3, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    let path = dir.path().join("map.png");
    save_heatmap(&map, &path).unwrap();
    let back = load_heatmap(&path).unwrap();
    assert_eq!((back.height(), back.width()), (2, 3));
}

#[test]
fn heatmap_endpoints_map_to_black_and_white() {
    let dir = tempfile::tempdir().unwrap();
    let map = Heatmap::from_raw(1, 2, vec![0.0, 1.0]);
    let path = dir.path().join("bw.png");
    save_heatmap(&map, &path).unwrap();
    let back = load_heatmap(&path).unwrap();
    assert_eq!(back.get(0, 0), 0.0);
    assert_eq!(back.get(0, 1), 1.0);
}

#[test]
fn heatmap_reload_reproduces_probabilities_within_half_quantum() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data: Vec<f32> = (0..64 * 64).map(|_| rng.random_range(0.0..=1.0)).collect();
    let map = Heatmap::from_raw(64, 64, data);
    let path = dir.path().join("rand.png");
    save_heatmap(&map, &path).unwrap();
    let back = load_heatmap(&path).unwrap();
    // Quantizing to 1/255 steps moves a value by at most 1/510, plus a
    // float rounding hair.
    let bound = 1.0 / 510.0 + 1e-6;
    for (i, (&p, &q)) in map.data().iter().zip(back.data()).enumerate() {
        assert!((p - q).abs() <= bound, "pixel {i}: wrote {p}, reloaded {q}");
    }
}

#[test]
fn heatmap_io_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data: Vec<f32> = (0..32 * 32).map(|_| rng.random_range(0.0..=1.0)).collect();
    let map = Heatmap::from_raw(32, 32, data);
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    save_heatmap(&map, &a).unwrap();
    save_heatmap(&map, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}
