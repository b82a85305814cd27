use std::collections::HashSet;
use std::path::Path;

use chestxr::data::{
    parse_manifest, parse_manifest_from, split_train_val, summarize_labels, DatasetManifest,
    Projection, Sex, StudyRecord, ViewPosition,
};
use chestxr::labels::{label_index, RawLabel, RawLabelVector, N_LABELS};
use chestxr::Error;
use proptest::prelude::*;

fn five_rows() -> DatasetManifest {
    parse_manifest(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/five_rows.csv")).unwrap()
}

fn raw(pairs: &[(&str, RawLabel)]) -> RawLabelVector {
    let mut v = RawLabelVector::blank();
    for (name, state) in pairs {
        v.0[label_index(name).unwrap()] = *state;
    }
    v
}

#[test]
fn five_row_fixture_matches_hand_parse() {
    use RawLabel::{Negative as N, Positive as P, Uncertain as U};
    let m = five_rows();
    assert_eq!(m.len(), 5);
    let expected = [
        raw(&[
            ("No Finding", P),
            ("Pneumothorax", N),
            ("Support Devices", P),
        ]),
        raw(&[
            ("Cardiomegaly", P),
            ("Lung Opacity", P),
            ("Edema", U),
            ("Consolidation", U),
            ("Atelectasis", U),
            ("Pleural Effusion", U),
            ("Fracture", P),
        ]),
        raw(&[
            ("Cardiomegaly", U),
            ("Lung Opacity", P),
            ("Consolidation", U),
            ("Fracture", P),
        ]),
        raw(&[("Lung Opacity", P), ("Consolidation", U), ("Fracture", P)]),
        raw(&[
            ("Cardiomegaly", N),
            ("Edema", P),
            ("Pneumothorax", N),
            ("Pleural Effusion", N),
        ]),
    ];
    for (i, (rec, want)) in m.records.iter().zip(&expected).enumerate() {
        assert_eq!(&rec.labels, want, "row {}", i + 1);
    }
    // record 3 (third data row) carries the only uncertain Cardiomegaly cell
    let cardio = label_index("Cardiomegaly").unwrap();
    assert_eq!(m.records[2].labels.get(cardio), RawLabel::Uncertain);
    assert_eq!(
        m.records
            .iter()
            .filter(|r| r.labels.get(cardio) == RawLabel::Uncertain)
            .count(),
        1
    );

    let ids: Vec<&str> = m.records.iter().map(|r| r.patient_id.as_str()).collect();
    assert_eq!(
        ids,
        [
            "patient00001",
            "patient00002",
            "patient00002",
            "patient00002",
            "patient00003"
        ]
    );
    assert_eq!(m.records[1].study_id, "study2");
    assert_eq!(m.records[0].sex, Sex::Female);
    assert_eq!(m.records[4].sex, Sex::Male);
    assert_eq!(m.records[1].age, Some(87));
    assert_eq!(m.records[3].view_position, ViewPosition::Lateral);
    assert_eq!(m.records[3].view_projection, Projection::Unknown);
    assert_eq!(m.records[4].view_projection, Projection::PA);
}

#[test]
fn five_row_distribution() {
    let d = summarize_labels(&five_rows()).unwrap();
    let row = |name: &str| d.rows.iter().find(|r| r.label == name).unwrap().clone();
    let c = row("Cardiomegaly");
    assert_eq!((c.minus_one, c.one, c.zero, c.blank), (1, 1, 1, 2));
    let c = row("Consolidation");
    assert_eq!((c.minus_one, c.one, c.zero, c.blank), (3, 0, 0, 2));
    let c = row("Lung Lesion");
    assert_eq!((c.minus_one, c.one, c.zero, c.blank), (0, 0, 0, 5));
}

#[test]
fn missing_file_is_not_found() {
    assert!(matches!(
        parse_manifest(Path::new("/no/such/train.csv")),
        Err(Error::NotFound(_))
    ));
}

#[test]
fn seed_seven_split_is_repeatable_and_disjoint() {
    let m = synthetic(
        &(0..250)
            .map(|i| (i % 100, [0u8; N_LABELS]))
            .collect::<Vec<_>>(),
    );
    let (a_tr, a_va) = split_train_val(&m, 0.2, 7).unwrap();
    let (b_tr, b_va) = split_train_val(&m, 0.2, 7).unwrap();
    assert_eq!(a_tr.records, b_tr.records);
    assert_eq!(a_va.records, b_va.records);
    assert!(a_tr.patients().is_disjoint(&a_va.patients()));
    assert_eq!(a_tr.patients().len() + a_va.patients().len(), 100);
}

fn state(code: u8) -> RawLabel {
    RawLabel::ALL[usize::from(code % 4)]
}

/// Manifest with one record per `(patient, label codes)` entry.
fn synthetic(rows: &[(usize, [u8; N_LABELS])]) -> DatasetManifest {
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, (p, codes))| StudyRecord {
            patient_id: format!("patient{:05}", p + 1),
            study_id: format!("study{}", i + 1),
            image_path: format!("train/patient{:05}/study{}/view1_frontal.jpg", p + 1, i + 1),
            sex: [Sex::Male, Sex::Female, Sex::Unknown][i % 3],
            age: (i % 4 != 0).then_some(20 + i as u32),
            view_position: ViewPosition::Frontal,
            view_projection: [Projection::AP, Projection::PA, Projection::Unknown][i % 3].clone(),
            labels: RawLabelVector(codes.map(state)),
        })
        .collect();
    DatasetManifest {
        records,
        source_path: "mem.csv".into(),
    }
}

fn rows_strategy(max: usize) -> impl Strategy<Value = Vec<(usize, [u8; N_LABELS])>> {
    prop::collection::vec((0usize..40, prop::array::uniform14(0u8..4)), 1..max)
}

proptest! {
    #[test]
    fn csv_round_trip_preserves_records(rows in rows_strategy(40)) {
        let m = synthetic(&rows);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = parse_manifest_from(buf.as_slice(), Path::new("mem.csv")).unwrap();
        prop_assert_eq!(back.records, m.records);
    }

    #[test]
    fn distribution_rows_sum_to_length(rows in rows_strategy(60)) {
        let m = synthetic(&rows);
        let d = summarize_labels(&m).unwrap();
        prop_assert_eq!(d.rows.len(), N_LABELS);
        for (k, r) in d.rows.iter().enumerate() {
            prop_assert_eq!(r.minus_one + r.one + r.zero + r.blank, m.len());
            let tally = m.records.iter().filter(|x| x.labels.get(k) == RawLabel::Uncertain).count();
            prop_assert_eq!(r.minus_one, tally);
        }
    }

    #[test]
    fn split_is_a_patient_partition(rows in rows_strategy(80), frac in 0.05f64..0.95, seed in 0u64..1000) {
        let m = synthetic(&rows);
        let patients = m.patients().len();
        match split_train_val(&m, frac, seed) {
            Err(Error::CannotSplit { found }) => prop_assert!(patients < 2 && found == patients),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
            Ok((tr, va)) => {
                prop_assert!(!tr.is_empty() && !va.is_empty());
                prop_assert!(tr.patients().is_disjoint(&va.patients()));
                let mut all: Vec<&str> = tr.records.iter().chain(&va.records).map(|r| r.image_path.as_str()).collect();
                all.sort_unstable();
                let mut want: Vec<&str> = m.records.iter().map(|r| r.image_path.as_str()).collect();
                want.sort_unstable();
                prop_assert_eq!(all, want);
                let (tr2, va2) = split_train_val(&m, frac, seed).unwrap();
                prop_assert_eq!(tr2.records, tr.records);
                prop_assert_eq!(va2.records, va.records);
            }
        }
    }

    #[test]
    fn split_fraction_within_three_points(seed in 0u64..500, frac in 0.1f64..0.5) {
        // many small patients, as in the real dataset
        let rows: Vec<(usize, [u8; N_LABELS])> =
            (0..3000).map(|i| ((i * 7919) % 1200, [0u8; N_LABELS])).collect();
        let m = synthetic(&rows);
        let (_, va) = split_train_val(&m, frac, seed).unwrap();
        let got = va.len() as f64 / m.len() as f64;
        prop_assert!((got - frac).abs() <= 0.03, "fraction {got} vs {frac}");
    }
}

#[test]
fn every_record_has_fourteen_labels_in_order() {
    let m = five_rows();
    let header = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/five_rows.csv"),
    )
    .unwrap()
    .lines()
    .next()
    .unwrap()
    .to_string();
    let label_cols: Vec<&str> = header.split(',').skip(5).collect();
    assert_eq!(label_cols, chestxr::labels::LABEL_NAMES);
    let distinct: HashSet<usize> = m.records.iter().map(|r| r.labels.0.len()).collect();
    assert_eq!(distinct, HashSet::from([N_LABELS]));
}
