//! Dataset discovery, splitting and decoding for image/mask folders.

mod synthetic;

pub use synthetic::{synthetic_rectangles, write_generic_dataset};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{GrayImage, ImageReader, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::DOWNSAMPLE;
use crate::tensor::{bilinear_resize, LabelMap, Tensor};

const EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "tif", "tiff"];

/// Folder convention of a dataset root.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// CVC-ClinicDB: `Original/` and `Ground Truth/`.
    Cvc,
    /// ISIC 2018 task 1: input and ground-truth folders, masks named `<stem>_segmentation`.
    Skin,
    /// Kaggle lung CT slices: `2d_images/` and `2d_masks/`.
    Luna,
    /// `images/` and `masks/` with identical stems.
    Generic,
}

impl Layout {
    pub fn as_str(self) -> &'static str {
        match self {
            Layout::Cvc => "cvc",
            Layout::Skin => "skin",
            Layout::Luna => "luna",
            Layout::Generic => "generic",
        }
    }

    /// `(image folder, mask folder)` relative to the dataset root.
    pub fn folders(self) -> (&'static str, &'static str) {
        match self {
            Layout::Cvc => ("Original", "Ground Truth"),
            Layout::Skin => (
                "ISIC2018_Task1-2_Training_Input",
                "ISIC2018_Task1_Training_GroundTruth",
            ),
            Layout::Luna => ("2d_images", "2d_masks"),
            Layout::Generic => ("images", "masks"),
        }
    }

    /// Suffix stripped from mask stems before pairing.
    pub fn mask_suffix(self) -> &'static str {
        match self {
            Layout::Skin => "_segmentation",
            _ => "",
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cvc" => Ok(Layout::Cvc),
            "skin" => Ok(Layout::Skin),
            "luna" => Ok(Layout::Luna),
            "generic" => Ok(Layout::Generic),
            other => Err(Error::InvalidArgument(format!(
                "unknown layout {other:?} (expected cvc, skin, luna or generic)"
            ))),
        }
    }
}

/// Spatial size as `(height, width)`. Parsed from and printed as `WxH`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size {
    pub h: usize,
    pub w: usize,
}

impl Size {
    pub fn new(h: usize, w: usize) -> Self {
        Size { h, w }
    }
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.w, self.h)
    }
}

impl FromStr for Size {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("size {s:?} is not of the form WxH"));
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let w: usize = w.trim().parse().map_err(|_| bad())?;
        let h: usize = h.trim().parse().map_err(|_| bad())?;
        if w == 0 || h == 0 {
            return Err(bad());
        }
        Ok(Size { h, w })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub root: PathBuf,
    pub layout: Layout,
    /// `None` keeps each image's native size.
    pub target_size: Option<Size>,
    pub split_fraction: f64,
    pub split_seed: u64,
}

impl DatasetSpec {
    pub fn new(root: impl Into<PathBuf>, layout: Layout) -> Self {
        DatasetSpec {
            root: root.into(),
            layout,
            target_size: None,
            split_fraction: 0.8,
            split_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.target_size {
            if s.h % DOWNSAMPLE != 0 || s.w % DOWNSAMPLE != 0 {
                return Err(Error::InvalidArgument(format!(
                    "target size {s} must have both dims divisible by {DOWNSAMPLE}"
                )));
            }
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "split fraction {} must lie in (0, 1)",
                self.split_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    /// Shared stem used for pairing and in reports.
    pub name: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    /// `(h, w)` of the image file.
    pub original_size: (usize, usize),
    /// `None` until [`split_dataset`] assigns it.
    pub split: Option<Split>,
}

#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub records: Vec<SampleRecord>,
    /// One line per unpaired file that was skipped.
    pub warnings: Vec<String>,
}

fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

/// Pairs images with masks by file stem, in lexicographic stem order.
pub fn index_dataset(spec: &DatasetSpec) -> Result<DatasetIndex> {
    spec.validate()?;
    if !spec.root.is_dir() {
        return Err(Error::Data(format!(
            "dataset root {} does not exist",
            spec.root.display()
        )));
    }
    let (image_dir, mask_dir) = spec.layout.folders();
    let (image_dir, mask_dir) = (spec.root.join(image_dir), spec.root.join(mask_dir));
    for dir in [&image_dir, &mask_dir] {
        if !dir.is_dir() {
            return Err(Error::Data(format!(
                "expected folder {} for the {} layout",
                dir.display(),
                spec.layout
            )));
        }
    }
    let images = list_images(&image_dir)?;
    let suffix = spec.layout.mask_suffix();
    let mut masks: BTreeMap<String, PathBuf> = list_images(&mask_dir)?
        .into_iter()
        .map(|(stem, p)| (stem.strip_suffix(suffix).unwrap_or(&stem).to_string(), p))
        .collect();

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (stem, image_path) in images {
        let Some(mask_path) = masks.remove(&stem) else {
            warnings.push(format!(
                "image {} has no mask; skipped",
                image_path.display()
            ));
            continue;
        };
        let (w, h) = image::image_dimensions(&image_path).map_err(|source| Error::Image {
            path: image_path.clone(),
            source,
        })?;
        records.push(SampleRecord {
            name: stem,
            image_path,
            mask_path,
            original_size: (h as usize, w as usize),
            split: None,
        });
    }
    for (_, mask_path) in masks {
        warnings.push(format!(
            "mask {} has no image; skipped",
            mask_path.display()
        ));
    }
    if records.is_empty() {
        return Err(Error::Data(format!(
            "no image/mask pairs found under {}",
            spec.root.display()
        )));
    }
    Ok(DatasetIndex { records, warnings })
}

/// Number of training records for `n` records: `floor(fraction * n)`.
pub fn train_count(n: usize, fraction: f64) -> usize {
    // The nudge keeps exact products such as 0.8 * 10 from landing just below an integer.
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Seeded shuffle, then the first `floor(fraction * n)` records train. Each side
/// is returned in stem order.
pub fn split_dataset(
    records: &[SampleRecord],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    let n_train = train_count(records.len(), fraction);
    if n_train == 0 || n_train >= records.len() {
        return Err(Error::Data(format!(
            "split of {} records at fraction {fraction} leaves an empty side",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, test_idx) = order.split_at(n_train);
    let pick = |idx: &[usize], split| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter()
            .map(|i| SampleRecord {
                split: Some(split),
                ..records[i].clone()
            })
            .collect::<Vec<_>>()
    };
    Ok((pick(train_idx, Split::Train), pick(test_idx, Split::Test)))
}

/// A decoded image `(1, 3, h, w)` in `[0, 1]` and its `{0, 1}` label map.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: Tensor,
    pub mask: LabelMap,
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    let reader = ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// RGB bytes to a `(1, 3, h, w)` tensor scaled by 1/255.
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros([1, 3, h, w]);
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            t.plane_mut(0, c)[i] = px[c] as f32 / 255.0;
        }
    }
    t
}

/// Nearest-neighbour resize with half-pixel centers, then `>= 128` is foreground.
pub fn binarize_mask(mask: &GrayImage, size: Size) -> LabelMap {
    let (in_w, in_h) = (mask.width() as usize, mask.height() as usize);
    let src = |dst: usize, out: usize, inp: usize| {
        (((dst as f64 + 0.5) * inp as f64 / out as f64) as usize).min(inp - 1)
    };
    let mut data = Vec::with_capacity(size.h * size.w);
    for y in 0..size.h {
        let sy = src(y, size.h, in_h);
        for x in 0..size.w {
            let sx = src(x, size.w, in_w);
            data.push(u32::from(mask.get_pixel(sx as u32, sy as u32)[0] >= 128));
        }
    }
    LabelMap::new(1, size.h, size.w, data).expect("sized to match")
}

/// Decodes one record into model-ready tensors.
pub fn load_sample(record: &SampleRecord, spec: &DatasetSpec) -> Result<Sample> {
    let image = open(&record.image_path)?.to_rgb8();
    let mask = open(&record.mask_path)?.to_luma8();
    let native = Size::new(image.height() as usize, image.width() as usize);
    let size = match spec.target_size {
        Some(s) => s,
        None => {
            if (mask.height() as usize, mask.width() as usize) != (native.h, native.w) {
                return Err(Error::Data(format!(
                    "{}: mask is {}x{} but image is {native}; set a target size",
                    record.mask_path.display(),
                    mask.width(),
                    mask.height()
                )));
            }
            if !native.h.is_multiple_of(DOWNSAMPLE) || !native.w.is_multiple_of(DOWNSAMPLE) {
                return Err(Error::Data(format!(
                    "{}: native size {native} is not divisible by {DOWNSAMPLE}; set a target size such as {}",
                    record.image_path.display(),
                    Size::new(
                        (native.h / DOWNSAMPLE).max(1) * DOWNSAMPLE,
                        (native.w / DOWNSAMPLE).max(1) * DOWNSAMPLE
                    )
                )));
            }
            native
        }
    };
    let image = bilinear_resize(&rgb_to_tensor(&image), size.h, size.w)?;
    let mask = binarize_mask(&mask, size);
    debug_assert!(mask.data().iter().all(|&v| v <= 1));
    Ok(Sample {
        name: record.name.clone(),
        image,
        mask,
    })
}

pub fn load_samples(records: &[SampleRecord], spec: &DatasetSpec) -> Result<Vec<Sample>> {
    records.iter().map(|r| load_sample(r, spec)).collect()
}
