use std::path::PathBuf;

use legan::data::{load_cifar10_binary, synth_blobs, write_cifar10_binary, CIFAR_RECORD_BYTES};
use legan::LeganError;

fn write(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

#[test]
fn two_records_give_two_images() {
    let dir = tempfile::tempdir().unwrap();
    let mut raw = vec![0u8; 2 * CIFAR_RECORD_BYTES];
    raw[1] = 255;
    raw[CIFAR_RECORD_BYTES] = 9; // label byte of the second record
    let p = write(&dir, "two.bin", &raw);
    let d = load_cifar10_binary::<f64>(&[p], 0).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.image(0).len(), 3 * 32 * 32);
    assert_eq!(d.image(0)[0], 1.0);
    assert!(d.image(0)[1..].iter().all(|&v| v == 0.0));
    assert!(d.image(1).iter().all(|&v| v == 0.0));
}

#[test]
fn all_128_bytes_read_as_128_over_255() {
    let dir = tempfile::tempdir().unwrap();
    let mut raw = Vec::new();
    for label in 0..3u8 {
        raw.push(label);
        raw.extend(std::iter::repeat_n(128u8, 3072));
    }
    let p = write(&dir, "gray.bin", &raw);
    let d = load_cifar10_binary::<f64>(&[p], 0).unwrap();
    let t = d.to_tensor();
    assert_eq!(t.shape(), &[3, 3, 32, 32]);
    assert!(t.data().iter().all(|&v| v == 128.0 / 255.0));
}

#[test]
fn channel_planes_follow_record_layout() {
    let dir = tempfile::tempdir().unwrap();
    let mut raw = vec![0u8];
    for c in 0..3u8 {
        raw.extend(std::iter::repeat_n(50 * (c + 1), 1024));
    }
    let d = load_cifar10_binary::<f64>(&[write(&dir, "rgb.bin", &raw)], 0).unwrap();
    let img = d.image(0);
    for c in 0..3 {
        assert_eq!(img[c * 1024 + 517], f64::from(50 * (c as u8 + 1)) / 255.0);
    }
}

#[test]
fn several_files_are_concatenated() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(&dir, "a.bin", &vec![0u8; CIFAR_RECORD_BYTES]);
    let b = write(&dir, "b.bin", &vec![0u8; 3 * CIFAR_RECORD_BYTES]);
    assert_eq!(load_cifar10_binary::<f32>(&[a, b], 0).unwrap().len(), 4);
}

#[test]
fn truncated_file_reports_the_byte_offset() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "short.bin", &vec![0u8; CIFAR_RECORD_BYTES + 100]);
    match load_cifar10_binary::<f64>(std::slice::from_ref(&p), 0) {
        Err(LeganError::Format { path, location, .. }) => {
            assert_eq!(path, p);
            assert_eq!(location, format!("byte {CIFAR_RECORD_BYTES}"));
        }
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn missing_file_is_an_io_error_naming_the_path() {
    let p = PathBuf::from("/nonexistent/data_batch_1.bin");
    let err = load_cifar10_binary::<f64>(&[p], 0).unwrap_err();
    assert!(err.to_string().contains("data_batch_1.bin"), "{err}");
}

#[test]
fn exported_synthetic_set_round_trips_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let src = synth_blobs::<f64>(20, 32, 4).unwrap();
    let p = dir.path().join("synth.bin");
    write_cifar10_binary(&p, &src).unwrap();
    assert_eq!(
        std::fs::metadata(&p).unwrap().len() as usize,
        20 * CIFAR_RECORD_BYTES
    );
    let back = load_cifar10_binary::<f64>(&[p], 0).unwrap();
    assert_eq!(back.len(), 20);
    for i in 0..20 {
        for (a, b) in src.image(i).iter().zip(back.image(i)) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn export_requires_32x32() {
    let dir = tempfile::tempdir().unwrap();
    let small = synth_blobs::<f64>(2, 8, 0).unwrap();
    assert!(write_cifar10_binary(&dir.path().join("x.bin"), &small).is_err());
}
