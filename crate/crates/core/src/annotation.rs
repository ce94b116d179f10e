//! Color-coded annotation rasters: decoding painted masks into tissue
//! labels and binary training targets.
//!
//! Annotations arrive as RGB paint layers using a fixed six-color palette.
//! Decoding is tolerant of anti-aliasing and lossy re-encoding: each pixel
//! takes the palette label with the smallest Chebyshev (max-channel)
//! distance, but a pixel further than [`MAX_PALETTE_DISTANCE`] from every
//! palette color is treated as [`Label::Exclude`] rather than silently
//! assigned to tissue.

use crate::imaging::ImageRGB;

/// Tissue label of one annotated pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Label {
    /// Cancerous tissue (the positive segmentation class).
    Cancer = 0,
    /// Connective tissue.
    Stroma = 1,
    /// Necrotic tissue.
    Necrosis = 2,
    /// Normal lung tissue.
    NormalLung = 3,
    /// Regions the annotator marked as unusable; zero loss weight and
    /// excluded from evaluation.
    Exclude = 4,
    /// Pixels nobody painted (background glass); treated as benign.
    Unannotated = 5,
}

/// The annotation palette, in tie-breaking order: when two palette colors
/// are equally close, the earlier entry wins.
pub const PALETTE: [(Label, [u8; 3]); 6] = [
    (Label::Cancer, [255, 0, 0]),
    (Label::Stroma, [0, 0, 255]),
    (Label::Necrosis, [0, 0, 0]),
    (Label::NormalLung, [0, 255, 0]),
    (Label::Exclude, [255, 255, 0]),
    (Label::Unannotated, [255, 255, 255]),
];

/// Chebyshev radius around a palette color that still decodes to it; any
/// pixel further than this from every entry decodes to [`Label::Exclude`].
pub const MAX_PALETTE_DISTANCE: u8 = 32;

/// The exact palette color for a label (used when re-encoding masks).
pub fn palette_color(label: Label) -> [u8; 3] {
    PALETTE
        .iter()
        .find(|(l, _)| *l == label)
        .map(|(_, c)| *c)
        .expect("every label has a palette entry")
}

fn chebyshev(a: [u8; 3], b: [u8; 3]) -> u8 {
    a[0].abs_diff(b[0])
        .max(a[1].abs_diff(b[1]))
        .max(a[2].abs_diff(b[2]))
}

/// Decodes one RGB triple to its label: nearest palette color by Chebyshev
/// distance, ties broken by palette order, distance > [`MAX_PALETTE_DISTANCE`]
/// mapped to [`Label::Exclude`].
pub fn decode_color(rgb: [u8; 3]) -> Label {
    let mut best = Label::Exclude;
    let mut best_dist = u8::MAX;
    for (label, color) in PALETTE {
        let d = chebyshev(rgb, color);
        if d < best_dist {
            best_dist = d;
            best = label;
        }
    }
    if best_dist > MAX_PALETTE_DISTANCE {
        Label::Exclude
    } else {
        best
    }
}

/// A per-pixel label raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<Label>,
}

impl LabelMask {
    /// Builds a mask from row-major labels (`height * width` of them).
    pub fn from_raw(height: usize, width: usize, labels: Vec<Label>) -> Self {
        assert!(
            labels.len() == height * width,
            "LabelMask::from_raw: expected {} labels for {}x{}, got {}",
            height * width,
            height,
            width,
            labels.len()
        );
        Self { height, width, labels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Row-major labels.
    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> Label {
        self.labels[y * self.width + x]
    }
}

/// Pixel counts of the four tissue classes in one core's annotation
/// (excluded and unannotated pixels are not tissue and are not counted).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassAreas {
    pub cancer: usize,
    pub stroma: usize,
    pub necrosis: usize,
    pub normal: usize,
}

impl ClassAreas {
    pub fn from_array(a: [usize; 4]) -> Self {
        Self { cancer: a[0], stroma: a[1], necrosis: a[2], normal: a[3] }
    }

    /// `[cancer, stroma, necrosis, normal]`.
    pub fn as_array(&self) -> [usize; 4] {
        [self.cancer, self.stroma, self.necrosis, self.normal]
    }

    pub fn total(&self) -> usize {
        self.cancer + self.stroma + self.necrosis + self.normal
    }
}

/// A binary training target: per-pixel `1` (cancer), `0` (benign tissue or
/// unannotated), or `-1` (ignore), plus the four-class area histogram.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryTarget {
    height: usize,
    width: usize,
    target: Vec<i8>,
    areas: ClassAreas,
}

impl BinaryTarget {
    /// Builds a target from row-major values in `{-1, 0, 1}` and its areas.
    pub fn from_raw(height: usize, width: usize, target: Vec<i8>, areas: ClassAreas) -> Self {
        assert!(
            target.len() == height * width,
            "BinaryTarget::from_raw: expected {} values for {}x{}, got {}",
            height * width,
            height,
            width,
            target.len()
        );
        debug_assert!(target.iter().all(|&t| (-1..=1).contains(&t)));
        Self { height, width, target, areas }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Row-major target values in `{-1, 0, 1}`.
    pub fn values(&self) -> &[i8] {
        &self.target
    }

    pub fn get(&self, y: usize, x: usize) -> i8 {
        self.target[y * self.width + x]
    }

    pub fn areas(&self) -> ClassAreas {
        self.areas
    }
}

/// Decodes a painted annotation raster into per-pixel labels.
pub fn decode_annotation(img: &ImageRGB) -> LabelMask {
    let labels = img.data().chunks_exact(3).map(|c| decode_color([c[0], c[1], c[2]])).collect();
    LabelMask::from_raw(img.height(), img.width(), labels)
}

/// Collapses a label mask to the binary cancer-segmentation target:
/// cancer is `1`, the benign classes and unannotated background are `0`,
/// and excluded pixels are `-1`. Also tallies the four-class areas.
pub fn to_binary_target(mask: &LabelMask) -> BinaryTarget {
    let mut areas = ClassAreas::default();
    let target = mask
        .labels()
        .iter()
        .map(|&label| match label {
            Label::Cancer => {
                areas.cancer += 1;
                1
            }
            Label::Stroma => {
                areas.stroma += 1;
                0
            }
            Label::Necrosis => {
                areas.necrosis += 1;
                0
            }
            Label::NormalLung => {
                areas.normal += 1;
                0
            }
            Label::Unannotated => 0,
            Label::Exclude => -1,
        })
        .collect();
    BinaryTarget::from_raw(mask.height(), mask.width(), target, areas)
}

/// Renders a label mask back to an RGB raster using the exact palette
/// colors. `decode_annotation(encode_labels(m)) == m` for every mask.
pub fn encode_labels(mask: &LabelMask) -> ImageRGB {
    let mut data = Vec::with_capacity(mask.labels().len() * 3);
    for &label in mask.labels() {
        data.extend_from_slice(&palette_color(label));
    }
    ImageRGB::from_raw(mask.height(), mask.width(), data)
}
