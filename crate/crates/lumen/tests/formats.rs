use std::fs;

use lumen::config::Config;
use lumen::image_io::{decode_label_png, decode_png, encode_label_png, encode_png, read_image, sidecar_path, write_image};
use lumen::maskio::{header_path, read_masks, write_masks, MaskIoError};
use lumen::store::{blob_key, LedgerEntry, RunStore, StoreError};
use lumen_core::saliency::generate_masks;
use lumen_core::textmetrics::{aggregate, SampleScores};
use lumen_core::{ImageTensor, LabelMap, TaskKind};
use proptest::prelude::*;

fn report(task: TaskKind, bleu: f64) -> lumen_core::textmetrics::MetricReport {
    let row = SampleScores {
        sample_id: "s".into(),
        bleu,
        meteor: 0.5,
        rouge_l_precision: 0.5,
        bertscore_precision: 0.5,
    };
    aggregate(vec![row], task).unwrap()
}

#[test]
fn blobs_are_content_addressed() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path()).unwrap();
    let k1 = store.put_blob(b"hello").unwrap();
    let k2 = store.put_blob(b"hello").unwrap();
    assert_eq!(k1, k2);
    // SHA-256 of "hello".
    assert_eq!(k1, "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
    assert_eq!(blob_key(b"hello"), k1);
    assert_eq!(store.get_blob(&k1).unwrap(), b"hello");
    assert!(store.has_blob(&k1));

    let path = dir.path().join("blobs").join(&k1[..2]).join(&k1);
    fs::write(&path, b"tampered").unwrap();
    assert!(matches!(store.get_blob(&k1), Err(StoreError::BlobCorrupt(_))));
    assert!(matches!(store.get_blob(&"f".repeat(64)), Err(StoreError::BlobNotFound(_))));
    assert!(matches!(store.get_blob("../etc/passwd"), Err(StoreError::InvalidKey(_))));
}

#[test]
fn ledger_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = RunStore::open(dir.path()).unwrap();
        for (i, task) in [TaskKind::Classification, TaskKind::Detection, TaskKind::Classification]
            .into_iter()
            .enumerate()
        {
            let rec = store.append_report(report(task, i as f64 / 10.0), format!("t{i}")).unwrap();
            assert_eq!(rec.record_id, i as u64 + 1);
        }
    }
    let store = RunStore::open(dir.path()).unwrap();
    assert_eq!(store.count(), 3);
    let ids: Vec<u64> = store.list(Some(TaskKind::Classification), 10).iter().map(LedgerEntry::record_id).collect();
    assert_eq!(ids, [3, 1]);
    assert_eq!(store.list(None, 1)[0].record_id(), 3);
    let next = store.append_report(report(TaskKind::Segmentation, 0.0), "t3".into()).unwrap();
    assert_eq!(next.record_id, 4);
    match store.get(2).unwrap() {
        LedgerEntry::MetricReport(r) => assert_eq!(r.report.task, TaskKind::Detection),
        other => panic!("{other:?}"),
    }
    assert!(matches!(store.get(9), Err(StoreError::RecordNotFound(9))));
}

#[test]
fn corrupt_ledger_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = RunStore::open(dir.path()).unwrap();
        store.append_report(report(TaskKind::Detection, 0.1), "t".into()).unwrap();
    }
    let ledger = dir.path().join("ledger.jsonl");
    let mut text = fs::read_to_string(&ledger).unwrap();
    text.push_str("{\"kind\": \"explanation\", \"record_id\": \n");
    fs::write(&ledger, text).unwrap();
    assert!(matches!(RunStore::open(dir.path()), Err(StoreError::LedgerCorrupt { line: 2, .. })));
}

#[test]
fn image_sidecar_records_shape_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.png");
    let img = ImageTensor::from_gray_rows(&[[0.0, 1.0], [0.2, 0.6]]).unwrap();
    let meta = write_image(&path, &img).unwrap();
    assert_eq!((meta.height, meta.width, meta.channels, meta.bit_depth), (2, 2, 1, 8));
    assert_eq!(meta.sha256, blob_key(&fs::read(&path).unwrap()));
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
    assert_eq!(side["sha256"], meta.sha256);
    let back = read_image(&path).unwrap();
    assert_eq!(back.data(), [0.0, 1.0, 51.0 / 255.0, 153.0 / 255.0]);
}

#[test]
fn mask_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.gz");
    let masks = generate_masks(3, (2, 2), 0.5, (4, 4), 1).unwrap();
    let header = write_masks(&path, &masks).unwrap();
    assert_eq!(header.count, 3);
    let text = fs::read_to_string(header_path(&path)).unwrap();

    fs::write(header_path(&path), text.replace("\"count\": 3", "\"count\": 4").replace("\"count\":3", "\"count\":4")).unwrap();
    assert!(matches!(read_masks(&path), Err(MaskIoError::CountMismatch { declared: 4, actual: 3 })));

    fs::write(header_path(&path), text.replacen('{', "{\"extra\": 1, ", 1)).unwrap();
    assert!(matches!(read_masks(&path), Err(MaskIoError::Header { .. })));
}

#[test]
fn config_file_with_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lumen.toml");
    fs::write(
        &path,
        "store = \"s\"\n[perturbation]\nn_masks = 100\n[lvm]\nprovider = \"openai\"\nendpoint = \"http://x\"\ncredential_ref = \"OPENAI_API_KEY\"\n",
    )
    .unwrap();
    let mut c = Config::load(&path).unwrap();
    assert_eq!(c.perturbation.n_masks, 100);
    assert_eq!(c.perturbation.grid, (7, 7), "unset fields keep defaults");
    c.apply_env([("LUMEN_SEED".into(), "9".into()), ("LUMEN_LVM_TIMEOUT".into(), "2.5".into())])
        .unwrap();
    assert_eq!((c.perturbation.seed, c.lvm.timeout), (9, 2.5));
    assert!(c.apply_env([("LUMEN_LVM_CREDENTIAL_REF".into(), "sk-live-abc".into())]).is_err());
    assert!(c.apply_env([("LUMEN_OVERLAY_ALPHA".into(), "1.5".into())]).is_err());
}

proptest! {
    #[test]
    fn quantized_images_round_trip(
        h in 1usize..6,
        w in 1usize..6,
        rgb in any::<bool>(),
        seed in proptest::collection::vec(0u8..=255, 108),
    ) {
        let c = if rgb { 3 } else { 1 };
        let data: Vec<f64> = seed[..h * w * c].iter().map(|&b| b as f64 / 255.0).collect();
        let img = ImageTensor::new(h, w, c, data.clone()).unwrap();
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        prop_assert_eq!(back.channels(), c);
        prop_assert_eq!(back.data(), &data[..]);
    }

    #[test]
    fn label_maps_round_trip(h in 1usize..8, w in 1usize..8, labels in proptest::collection::vec(0u32..256, 64)) {
        let map = LabelMap::new(h, w, labels[..h * w].to_vec()).unwrap();
        prop_assert_eq!(decode_label_png(&encode_label_png(&map).unwrap()).unwrap(), map);
    }

    #[test]
    fn mask_files_round_trip(n in 1usize..6, g in 1usize..4, size in 4usize..9, seed in any::<u64>(), p in 0.05f64..0.95) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gz");
        let masks = generate_masks(n, (g, g), p, (size, size), seed).unwrap();
        write_masks(&path, &masks).unwrap();
        prop_assert_eq!(read_masks(&path).unwrap(), masks);
    }
}
