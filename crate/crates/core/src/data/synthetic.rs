//! Seeded toy data: one filled rectangle per image as foreground.

use std::path::Path;

use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Sample, Size};
use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Tensor};

/// `count` images of `size`, each with one axis-aligned filled rectangle whose
/// corners are multiples of `align` pixels and whose sides span 1/4 to 3/4 of
/// the image. Background and foreground get distinct random colours plus noise.
pub fn synthetic_rectangles(count: usize, size: Size, align: usize, seed: u64) -> Vec<Sample> {
    assert!(
        align >= 1 && size.h.is_multiple_of(align) && size.w.is_multiple_of(align),
        "alignment must divide the size"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let (y0, y1) = span(&mut rng, size.h, align);
            let (x0, x1) = span(&mut rng, size.w, align);
            let bg: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.05..0.4));
            let fg: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.6..0.95));
            let mut image = Tensor::zeros([1, 3, size.h, size.w]);
            let mut labels = vec![0u32; size.h * size.w];
            for y in 0..size.h {
                for x in 0..size.w {
                    let inside = (y0..y1).contains(&y) && (x0..x1).contains(&x);
                    labels[y * size.w + x] = u32::from(inside);
                    for c in 0..3 {
                        let base = if inside { fg[c] } else { bg[c] };
                        image.plane_mut(0, c)[y * size.w + x] = base + rng.gen_range(-0.05..0.05);
                    }
                }
            }
            Sample {
                name: format!("rect{i:03}"),
                image,
                mask: LabelMap::new(1, size.h, size.w, labels).expect("sized to match"),
            }
        })
        .collect()
}

fn span(rng: &mut impl Rng, len: usize, align: usize) -> (usize, usize) {
    let cells = len / align;
    let extent = rng.gen_range((cells / 4).max(1)..=(3 * cells / 4).max(1));
    let start = rng.gen_range(0..=cells - extent);
    (start * align, (start + extent) * align)
}

/// Writes samples as `images/<name>.png` and `masks/<name>.png` (0 / 255) under `root`.
pub fn write_generic_dataset(samples: &[Sample], root: &Path) -> Result<()> {
    let (images, masks) = (root.join("images"), root.join("masks"));
    for dir in [&images, &masks] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for s in samples {
        let [_, _, h, w] = s.image.shape();
        let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let i = y as usize * w + x as usize;
            image::Rgb(std::array::from_fn(|c| {
                (s.image.plane(0, c)[i].clamp(0.0, 1.0) * 255.0).round() as u8
            }))
        });
        let gray = GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([if s.mask.data()[y as usize * w + x as usize] == 1 {
                255
            } else {
                0
            }])
        });
        let image_path = images.join(format!("{}.png", s.name));
        rgb.save(&image_path).map_err(|source| Error::Image {
            path: image_path,
            source,
        })?;
        let mask_path = masks.join(format!("{}.png", s.name));
        gray.save(&mask_path).map_err(|source| Error::Image {
            path: mask_path,
            source,
        })?;
    }
    Ok(())
}
