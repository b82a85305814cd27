use std::path::Path;

use image::imageops::FilterType;
use ndarray::{s, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::StudyRecord;
use crate::error::{Error, Result};
use crate::exec;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Preprocessing recipe. Augmentation applies only to training loads;
/// evaluation loads resize and normalize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Output (height, width).
    pub resize_hw: (usize, usize),
    pub horizontal_flip_prob: f32,
    pub rotation_degrees_max: f32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            resize_hw: (320, 320),
            horizontal_flip_prob: 0.5,
            rotation_degrees_max: 10.0,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("augmentation: {m}")));
        if self.resize_hw.0 == 0 || self.resize_hw.1 == 0 {
            return bad("resize_hw must be positive");
        }
        if !(0.0..=1.0).contains(&self.horizontal_flip_prob) {
            return bad("horizontal_flip_prob must be in [0, 1]");
        }
        if !(self.rotation_degrees_max >= 0.0 && self.rotation_degrees_max.is_finite()) {
            return bad("rotation_degrees_max must be finite and >= 0");
        }
        if self.std.iter().any(|s| !(*s > 0.0 && s.is_finite()))
            || self.mean.iter().any(|m| !m.is_finite())
        {
            return bad("mean must be finite and std positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Resize and normalize only.
    Eval,
    /// Random flip and rotation drawn from a stream seeded by `seed`.
    Train { seed: u64 },
}

/// Seed for one record's augmentation in one epoch. Depends only on its
/// arguments, so results do not vary with worker count or load order.
pub fn record_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z = seed
        ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Decodes an image file into a (3, H, W) tensor. Grayscale sources are
/// replicated across the three channels.
pub fn load_image_file(
    path: &Path,
    config: &AugmentationConfig,
    mode: LoadMode,
) -> Result<Array3<f32>> {
    let load_err = |message: String| Error::ImageLoad {
        path: path.to_path_buf(),
        message,
    };
    let img = image::ImageReader::open(path)
        .map_err(|e| load_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| load_err(e.to_string()))?
        .decode()
        .map_err(|e| load_err(e.to_string()))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(load_err("decoded image has zero size".into()));
    }
    let (h, w) = config.resize_hw;
    let rgb = img.to_rgb8();
    let rgb = if (rgb.height() as usize, rgb.width() as usize) == (h, w) {
        rgb
    } else {
        image::imageops::resize(&rgb, w as u32, h as u32, FilterType::Triangle)
    };
    let mut t = Array3::from_shape_fn((3, h, w), |(c, y, x)| {
        f32::from(rgb.get_pixel(x as u32, y as u32)[c]) / 255.0
    });

    if let LoadMode::Train { seed } = mode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flip = rng.random::<f32>() < config.horizontal_flip_prob;
        let angle = if config.rotation_degrees_max > 0.0 {
            rng.random_range(-config.rotation_degrees_max..=config.rotation_degrees_max)
        } else {
            0.0
        };
        if flip {
            t.invert_axis(ndarray::Axis(2));
            t = t.as_standard_layout().into_owned();
        }
        if angle != 0.0 {
            t = rotate(&t, angle);
        }
    }
    for c in 0..3 {
        let (m, sd) = (config.mean[c], config.std[c]);
        t.slice_mut(s![c, .., ..]).mapv_inplace(|v| (v - m) / sd);
    }
    Ok(t)
}

/// Loads the image of `record` relative to `data_root`.
pub fn load_image(
    data_root: &Path,
    record: &StudyRecord,
    config: &AugmentationConfig,
    mode: LoadMode,
) -> Result<Array3<f32>> {
    load_image_file(&data_root.join(&record.image_path), config, mode)
}

/// Loads `records[i]` for each `i` in `indices` into one (N, 3, H, W) batch.
/// In training mode each record's augmentation is seeded by
/// [`record_seed`]`(seed, epoch, i)`.
pub fn load_batch(
    data_root: &Path,
    records: &[StudyRecord],
    indices: &[usize],
    config: &AugmentationConfig,
    train: Option<(u64, usize)>,
) -> Result<Array4<f32>> {
    let (h, w) = config.resize_hw;
    let loaded = exec::map_indexed(indices.len(), |j| {
        let i = indices[j];
        let mode = match train {
            Some((seed, epoch)) => LoadMode::Train {
                seed: record_seed(seed, epoch, i),
            },
            None => LoadMode::Eval,
        };
        load_image(data_root, &records[i], config, mode)
    });
    let mut batch = Array4::zeros((indices.len(), 3, h, w));
    for (j, img) in loaded.into_iter().enumerate() {
        batch.slice_mut(s![j, .., .., ..]).assign(&img?);
    }
    Ok(batch)
}

/// Rotates each channel by `degrees` counter-clockwise about the image
/// centre with bilinear sampling; samples outside the source are 0.
pub fn rotate(img: &Array3<f32>, degrees: f32) -> Array3<f32> {
    let (c, h, w) = img.dim();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;
    let mut out = Array3::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let dx = x as f32 - cx;
            let dy = y as f32 - cy;
            // Inverse map: destination pixel back to its source position.
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            for ch in 0..c {
                let at = |yy: f32, xx: f32| {
                    if yy < 0.0 || xx < 0.0 || yy >= h as f32 || xx >= w as f32 {
                        0.0
                    } else {
                        img[[ch, yy as usize, xx as usize]]
                    }
                };
                let v = at(y0, x0) * (1.0 - fx) * (1.0 - fy)
                    + at(y0, x0 + 1.0) * fx * (1.0 - fy)
                    + at(y0 + 1.0, x0) * (1.0 - fx) * fy
                    + at(y0 + 1.0, x0 + 1.0) * fx * fy;
                out[[ch, y, x]] = v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma};

    fn write_gray(
        dir: &Path,
        name: &str,
        w: u32,
        h: u32,
        f: impl Fn(u32, u32) -> u8,
    ) -> std::path::PathBuf {
        let img = GrayImage::from_fn(w, h, |x, y| Luma([f(x, y)]));
        let p = dir.join(name);
        img.save(&p).unwrap();
        p
    }

    #[test]
    fn grayscale_resized_to_three_channels() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_gray(dir.path(), "a.png", 64, 64, |x, y| {
            ((x * 3 + y) % 256) as u8
        });
        let t = load_image_file(&p, &AugmentationConfig::default(), LoadMode::Eval).unwrap();
        assert_eq!(t.dim(), (3, 320, 320));
        assert!(t.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn constant_image_normalizes_in_closed_form() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_gray(dir.path(), "c.png", 20, 12, |_, _| 153);
        let cfg = AugmentationConfig {
            resize_hw: (12, 20),
            ..Default::default()
        };
        let t = load_image_file(&p, &cfg, LoadMode::Eval).unwrap();
        for c in 0..3 {
            let want = (153.0 / 255.0 - cfg.mean[c]) / cfg.std[c];
            assert!(t
                .slice(s![c, .., ..])
                .iter()
                .all(|&v| (v - want).abs() < 1e-6));
        }
    }

    #[test]
    fn eval_is_deterministic_and_train_varies_by_seed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_gray(dir.path(), "g.png", 32, 32, |x, y| (x * 8 + y) as u8);
        let cfg = AugmentationConfig {
            resize_hw: (32, 32),
            horizontal_flip_prob: 0.5,
            ..Default::default()
        };
        let a = load_image_file(&p, &cfg, LoadMode::Eval).unwrap();
        assert_eq!(a, load_image_file(&p, &cfg, LoadMode::Eval).unwrap());
        let t1 = load_image_file(&p, &cfg, LoadMode::Train { seed: 1 }).unwrap();
        assert_eq!(
            t1,
            load_image_file(&p, &cfg, LoadMode::Train { seed: 1 }).unwrap()
        );
        let differs =
            (0..8).any(|s| load_image_file(&p, &cfg, LoadMode::Train { seed: s }).unwrap() != a);
        assert!(differs);
    }

    #[test]
    fn unreadable_file_carries_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("broken.png");
        std::fs::write(&p, b"not an image").unwrap();
        match load_image_file(&p, &AugmentationConfig::default(), LoadMode::Eval) {
            Err(Error::ImageLoad { path, .. }) => assert_eq!(path, p),
            other => panic!("{other:?}"),
        }
        assert!(load_image_file(
            &dir.path().join("missing.png"),
            &AugmentationConfig::default(),
            LoadMode::Eval
        )
        .is_err());
    }

    #[test]
    fn rotation_quarter_turn_and_identity() {
        let img = Array3::from_shape_fn((1, 3, 3), |(_, y, x)| (y * 3 + x) as f32);
        assert_eq!(rotate(&img, 0.0), img);
        let r = rotate(&img, 90.0);
        // Counter-clockwise: the top-right corner moves to the top-left.
        assert!((r[[0, 0, 0]] - img[[0, 0, 2]]).abs() < 1e-4);
        assert!((r[[0, 1, 1]] - img[[0, 1, 1]]).abs() < 1e-4);
    }

    #[test]
    fn record_seeds_differ() {
        assert_ne!(record_seed(1, 0, 0), record_seed(1, 0, 1));
        assert_ne!(record_seed(1, 0, 0), record_seed(1, 1, 0));
        assert_eq!(record_seed(5, 3, 9), record_seed(5, 3, 9));
    }
}
