use std::path::Path;

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Projection, Sex, StudyRecord, ViewPosition};
use crate::error::{Error, Result};
use crate::labels::{resolve_targets, PolicyConfig, RawLabel, RawLabelVector, N_LABELS};

pub const FIXTURE_MANIFEST: &str = "train.csv";

/// Relative frequencies of raw label states; need not sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMix {
    pub positive: f64,
    pub negative: f64,
    pub uncertain: f64,
    pub blank: f64,
}

impl Default for LabelMix {
    fn default() -> Self {
        LabelMix {
            positive: 0.3,
            negative: 0.3,
            uncertain: 0.15,
            blank: 0.25,
        }
    }
}

impl LabelMix {
    fn draw(&self, rng: &mut impl Rng) -> RawLabel {
        let total = self.positive + self.negative + self.uncertain + self.blank;
        let u = rng.random::<f64>() * total;
        if u < self.positive {
            RawLabel::Positive
        } else if u < self.positive + self.negative {
            RawLabel::Negative
        } else if u < self.positive + self.negative + self.uncertain {
            RawLabel::Uncertain
        } else {
            RawLabel::Blank
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub n_records: usize,
    pub n_patients: usize,
    pub seed: u64,
    /// Side length of the square images.
    pub image_size: u32,
    pub mix: LabelMix,
}

impl FixtureConfig {
    pub fn new(n_records: usize, n_patients: usize, seed: u64) -> Self {
        FixtureConfig {
            n_records,
            n_patients,
            seed,
            image_size: 64,
            mix: LabelMix::default(),
        }
    }
}

/// Pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Rect {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Where label `k` is planted in a `size x size` image: one horizontal
/// band per label, stacked top to bottom with a one-band margin.
pub fn label_rect(k: usize, size: u32) -> Rect {
    assert!(k < N_LABELS);
    let band = size as f32 / (N_LABELS as f32 + 2.0);
    let y0 = ((k as f32 + 1.0) * band).round() as u32;
    let y1 = (((k as f32 + 2.0) * band).round() as u32 - 1).max(y0 + 1);
    let half = size * 13 / 32;
    Rect {
        x0: size / 2 - half,
        y0,
        x1: size / 2 + half,
        y1,
    }
}

const BACKGROUND: u8 = 40;
const NOISE: u8 = 24;
const SIGNAL: u8 = 230;

/// Draws the image for a resolved target vector.
pub fn render_fixture_image(targets: &[u8; N_LABELS], size: u32, rng: &mut impl Rng) -> GrayImage {
    let mut img = GrayImage::from_fn(size, size, |_, _| {
        Luma([BACKGROUND + rng.random_range(0..NOISE)])
    });
    for (k, &t) in targets.iter().enumerate() {
        if t == 1 {
            let r = label_rect(k, size);
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    img.put_pixel(x, y, Luma([SIGNAL]));
                }
            }
        }
    }
    img
}

/// Writes a planted-signal dataset: one PNG per record under
/// `out_dir/train/patientNNNNN/studyS/` and the manifest `out_dir/train.csv`.
/// Label `k` is drawn iff its target under the default policy is positive.
pub fn make_synthetic_fixture(config: &FixtureConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let FixtureConfig {
        n_records,
        n_patients,
        seed,
        image_size,
        mix,
    } = *config;
    if n_patients < 2 || n_records < n_patients {
        return Err(Error::Config(format!(
            "fixture needs n_records >= n_patients >= 2, got {n_records} records and {n_patients} patients"
        )));
    }
    if image_size < 16 {
        return Err(Error::Config(
            "fixture image_size must be at least 16".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = PolicyConfig::default();

    let mut owners: Vec<usize> = (0..n_records)
        .map(|i| {
            if i < n_patients {
                i
            } else {
                rng.random_range(0..n_patients)
            }
        })
        .collect();
    owners.sort_unstable();
    let patients: Vec<(Sex, u32)> = (0..n_patients)
        .map(|_| {
            let sex = if rng.random::<bool>() {
                Sex::Male
            } else {
                Sex::Female
            };
            (sex, rng.random_range(18..90))
        })
        .collect();

    let mut records = Vec::with_capacity(n_records);
    let mut study = vec![0usize; n_patients];
    for &p in &owners {
        study[p] += 1;
        let image_path = format!(
            "train/patient{:05}/study{}/view1_frontal.png",
            p + 1,
            study[p]
        );
        let mut raw = [RawLabel::Blank; N_LABELS];
        for cell in raw.iter_mut() {
            *cell = mix.draw(&mut rng);
        }
        let labels = RawLabelVector(raw);
        let targets = resolve_targets(&labels, &policy);
        let img = render_fixture_image(&targets.0, image_size, &mut rng);
        let full = out_dir.join(&image_path);
        std::fs::create_dir_all(full.parent().expect("image path has a parent"))?;
        img.save(&full)
            .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", full.display()))))?;
        let projection = if rng.random::<bool>() {
            Projection::AP
        } else {
            Projection::PA
        };
        records.push(StudyRecord {
            patient_id: format!("patient{:05}", p + 1),
            study_id: format!("study{}", study[p]),
            image_path,
            sex: patients[p].0,
            age: Some(patients[p].1),
            view_position: ViewPosition::Frontal,
            view_projection: projection,
            labels,
        });
    }
    let csv_path = out_dir.join(FIXTURE_MANIFEST);
    let manifest = DatasetManifest {
        records,
        source_path: csv_path.clone(),
    };
    manifest.save(&csv_path)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rects_are_disjoint_and_inside() {
        for size in [16u32, 48, 64, 320] {
            for a in 0..N_LABELS {
                let ra = label_rect(a, size);
                assert!(ra.x1 <= size && ra.y1 <= size && ra.x0 < ra.x1 && ra.y0 < ra.y1);
                for b in a + 1..N_LABELS {
                    let rb = label_rect(b, size);
                    assert!(
                        ra.y1 <= rb.y0 || rb.y1 <= ra.y0,
                        "size {size}: {a} and {b} overlap"
                    );
                }
            }
        }
    }

    #[test]
    fn label_three_is_brightest_inside_its_rect() {
        let mut targets = [0u8; N_LABELS];
        targets[3] = 1;
        let size = 64;
        let img = render_fixture_image(&targets, size, &mut ChaCha8Rng::seed_from_u64(5));
        let r = label_rect(3, size);
        let (mut inside, mut outside) = (0u8, 0u8);
        for (x, y, p) in img.enumerate_pixels() {
            let v = p.0[0];
            if r.contains(x, y) {
                inside = inside.max(v);
            } else {
                outside = outside.max(v);
            }
        }
        assert!(inside > outside, "{inside} vs {outside}");
    }

    #[test]
    fn deterministic_and_round_trips() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = FixtureConfig::new(200, 100, 3);
        let ma = make_synthetic_fixture(&cfg, a.path()).unwrap();
        make_synthetic_fixture(&cfg, b.path()).unwrap();
        let csv_a = std::fs::read(a.path().join(FIXTURE_MANIFEST)).unwrap();
        assert_eq!(
            csv_a,
            std::fs::read(b.path().join(FIXTURE_MANIFEST)).unwrap()
        );
        let first = &ma.records[0].image_path;
        assert_eq!(
            std::fs::read(a.path().join(first)).unwrap(),
            std::fs::read(b.path().join(first)).unwrap()
        );

        let parsed = crate::data::parse_manifest(&a.path().join(FIXTURE_MANIFEST)).unwrap();
        assert_eq!(parsed.len(), 200);
        assert_eq!(parsed.patients().len(), 100);
        assert_eq!(parsed.records, ma.records);
    }

    #[test]
    fn planted_bands_follow_default_targets() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_synthetic_fixture(&FixtureConfig::new(12, 4, 9), dir.path()).unwrap();
        let policy = PolicyConfig::default();
        for rec in &m.records {
            let img = image::open(dir.path().join(&rec.image_path))
                .unwrap()
                .to_luma8();
            let targets = resolve_targets(&rec.labels, &policy);
            for (k, &t) in targets.0.iter().enumerate() {
                let r = label_rect(k, 64);
                let lit = img.get_pixel((r.x0 + r.x1) / 2, r.y0).0[0] == SIGNAL;
                assert_eq!(lit, t == 1, "label {k} of {}", rec.image_path);
            }
        }
    }

    #[test]
    fn rejects_too_few_patients() {
        let dir = tempfile::tempdir().unwrap();
        assert!(make_synthetic_fixture(&FixtureConfig::new(5, 1, 0), dir.path()).is_err());
        assert!(make_synthetic_fixture(&FixtureConfig::new(3, 4, 0), dir.path()).is_err());
    }
}
