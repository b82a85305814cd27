use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{RawLabel, RawLabelVector, LABEL_NAMES, N_LABELS};

pub const PATH_COLUMN: &str = "Path";
pub const SEX_COLUMN: &str = "Sex";
pub const AGE_COLUMN: &str = "Age";
pub const VIEW_COLUMN: &str = "Frontal/Lateral";
pub const PROJECTION_COLUMN: &str = "AP/PA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    Male,
    Female,
    Unknown,
}

impl Sex {
    fn parse(s: &str) -> Sex {
        match s {
            "Male" => Sex::Male,
            "Female" => Sex::Female,
            _ => Sex::Unknown,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "Male",
            Sex::Female => "Female",
            Sex::Unknown => "Unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewPosition {
    Frontal,
    Lateral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Projection {
    AP,
    PA,
    Unknown,
    /// Any other code in the column, kept verbatim.
    Other(String),
}

impl Projection {
    fn parse(s: &str) -> Projection {
        match s {
            "AP" => Projection::AP,
            "PA" => Projection::PA,
            "" => Projection::Unknown,
            other => Projection::Other(other.to_string()),
        }
    }

    fn as_str(&self) -> &str {
        match self {
            Projection::AP => "AP",
            Projection::PA => "PA",
            Projection::Unknown => "",
            Projection::Other(s) => s,
        }
    }
}

/// One radiograph row of a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub image_path: String,
    pub patient_id: String,
    pub study_id: String,
    pub sex: Sex,
    pub age: Option<u32>,
    pub view_position: ViewPosition,
    pub view_projection: Projection,
    pub labels: RawLabelVector,
}

fn path_segment<'a>(path: &'a str, prefix: &str) -> Option<&'a str> {
    path.split(['/', '\\']).find(|seg| {
        seg.len() > prefix.len()
            && seg.starts_with(prefix)
            && seg[prefix.len()..].bytes().all(|b| b.is_ascii_digit())
    })
}

/// Patient identity from a `.../patientNNNNN/...` path segment. Paths
/// without one fall back to the parent of the study directory, or the
/// path itself.
pub fn patient_id_from_path(path: &str) -> String {
    if let Some(seg) = path_segment(path, "patient") {
        return seg.to_string();
    }
    let p = Path::new(path);
    p.parent()
        .and_then(Path::parent)
        .filter(|d| !d.as_os_str().is_empty())
        .map(|d| d.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

pub fn study_id_from_path(path: &str) -> String {
    path_segment(path, "study").unwrap_or_default().to_string()
}

/// Parsed manifest rows, in file order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<StudyRecord>,
    pub source_path: PathBuf,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn patients(&self) -> HashSet<&str> {
        self.records.iter().map(|r| r.patient_id.as_str()).collect()
    }

    /// Writes the manifest in the same CSV layout it was parsed from.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().from_writer(w);
        let mut header = vec![
            PATH_COLUMN,
            SEX_COLUMN,
            AGE_COLUMN,
            VIEW_COLUMN,
            PROJECTION_COLUMN,
        ];
        header.extend(LABEL_NAMES);
        out.write_record(&header)?;
        for r in &self.records {
            let age = r.age.map(|a| a.to_string()).unwrap_or_default();
            let view = match r.view_position {
                ViewPosition::Frontal => "Frontal",
                ViewPosition::Lateral => "Lateral",
            };
            let mut row = vec![
                r.image_path.as_str(),
                r.sex.as_str(),
                &age,
                view,
                r.view_projection.as_str(),
            ];
            row.extend(r.labels.0.iter().map(|l| l.as_cell()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Reads a CheXpert-format CSV file.
pub fn parse_manifest(csv_path: &Path) -> Result<DatasetManifest> {
    let file = std::fs::File::open(csv_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(csv_path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_manifest_from(file, csv_path)
}

pub fn parse_manifest_from<R: Read>(reader: R, source: &Path) -> Result<DatasetManifest> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().all(str::is_empty) {
        return Err(Error::EmptyManifest(source.to_path_buf()));
    }
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let path_i = col(PATH_COLUMN)?;
    let sex_i = col(SEX_COLUMN)?;
    let age_i = col(AGE_COLUMN)?;
    let view_i = col(VIEW_COLUMN)?;
    let proj_i = col(PROJECTION_COLUMN)?;
    let label_i = LABEL_NAMES
        .iter()
        .map(|n| col(n))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (row, result) in rdr.records().enumerate() {
        let rec = result.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let row_err = |message: String| Error::Row { row, message };

        let image_path = field(path_i).to_string();
        if image_path.is_empty() {
            return Err(row_err("empty Path".into()));
        }
        if !seen.insert(image_path.clone()) {
            return Err(row_err(format!("duplicate Path `{image_path}`")));
        }
        let age = match field(age_i) {
            "" => None,
            s => {
                let v: f64 = s
                    .parse()
                    .map_err(|_| row_err(format!("invalid Age `{s}`")))?;
                if !(v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX)) {
                    return Err(row_err(format!("invalid Age `{s}`")));
                }
                Some(v as u32)
            }
        };
        let view_position = match field(view_i) {
            "Frontal" => ViewPosition::Frontal,
            "Lateral" => ViewPosition::Lateral,
            s => return Err(row_err(format!("invalid {VIEW_COLUMN} `{s}`"))),
        };
        let mut labels = [RawLabel::Blank; N_LABELS];
        for (k, &i) in label_i.iter().enumerate() {
            labels[k] = RawLabel::parse_cell(field(i)).ok_or_else(|| {
                row_err(format!("invalid {} cell `{}`", LABEL_NAMES[k], field(i)))
            })?;
        }
        records.push(StudyRecord {
            patient_id: patient_id_from_path(&image_path),
            study_id: study_id_from_path(&image_path),
            image_path,
            sex: Sex::parse(field(sex_i)),
            age,
            view_position,
            view_projection: Projection::parse(field(proj_i)),
            labels: RawLabelVector(labels),
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyManifest(source.to_path_buf()));
    }
    Ok(DatasetManifest {
        records,
        source_path: source.to_path_buf(),
    })
}

/// Per-label tally of raw label states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    #[serde(rename = "Label")]
    pub label: String,
    #[serde(rename = "minusOneVal")]
    pub minus_one: usize,
    #[serde(rename = "oneVal")]
    pub one: usize,
    #[serde(rename = "zeroVal")]
    pub zero: usize,
    #[serde(rename = "nanVal")]
    pub blank: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.minus_one + self.one + self.zero + self.blank
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub rows: Vec<LabelCounts>,
}

impl LabelDistribution {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.rows)?)
    }
}

impl fmt::Display for LabelDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<28}{:>12}{:>12}{:>12}{:>12}",
            "Label", "minusOneVal", "oneVal", "zeroVal", "nanVal"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<28}{:>12}{:>12}{:>12}{:>12}",
                r.label, r.minus_one, r.one, r.zero, r.blank
            )?;
        }
        Ok(())
    }
}

pub fn summarize_labels(manifest: &DatasetManifest) -> Result<LabelDistribution> {
    if manifest.is_empty() {
        return Err(Error::EmptyManifest(manifest.source_path.clone()));
    }
    let mut rows: Vec<LabelCounts> = LABEL_NAMES
        .iter()
        .map(|n| LabelCounts {
            label: n.to_string(),
            minus_one: 0,
            one: 0,
            zero: 0,
            blank: 0,
        })
        .collect();
    for r in &manifest.records {
        for (row, label) in rows.iter_mut().zip(r.labels.0) {
            match label {
                RawLabel::Uncertain => row.minus_one += 1,
                RawLabel::Positive => row.one += 1,
                RawLabel::Negative => row.zero += 1,
                RawLabel::Blank => row.blank += 1,
            }
        }
    }
    Ok(LabelDistribution { rows })
}

/// Patient-disjoint split. Patients are shuffled with `seed` and assigned
/// to validation while that moves its record count closer to
/// `round(val_fraction * len)`. Both halves keep manifest order.
pub fn split_train_val(
    manifest: &DatasetManifest,
    val_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut sizes: HashMap<&str, usize> = HashMap::new();
    for r in &manifest.records {
        let n = sizes.entry(r.patient_id.as_str()).or_insert_with(|| {
            order.push(r.patient_id.as_str());
            0
        });
        *n += 1;
    }
    if order.len() < 2 {
        return Err(Error::CannotSplit { found: order.len() });
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let target = (val_fraction * manifest.len() as f64).round() as usize;
    let mut val_patients = HashSet::new();
    let mut val_count = 0usize;
    for &p in &order {
        let n = sizes[p];
        if val_count < target && (val_count + n).abs_diff(target) <= val_count.abs_diff(target) {
            val_patients.insert(p);
            val_count += n;
        }
    }
    if val_patients.is_empty() {
        val_patients.insert(order[0]);
    } else if val_patients.len() == order.len() {
        val_patients.remove(order[order.len() - 1]);
    }

    let (val, train): (Vec<_>, Vec<_>) = manifest
        .records
        .iter()
        .cloned()
        .partition(|r| val_patients.contains(r.patient_id.as_str()));
    let part = |records| DatasetManifest {
        records,
        source_path: manifest.source_path.clone(),
    };
    Ok((part(train), part(val)))
}
