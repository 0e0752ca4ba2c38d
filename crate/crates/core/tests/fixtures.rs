use gud_core::data::{dequantize_and_center, RawImages};
use sha2::{Digest, Sha256};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/tiny8x8.gudimgs");
const FIXTURE_SHA256: &str = "60ffe6171e35084ff536bf9d36d73dbf4470e7900017aefdc9023c09ada4d5ec";

#[test]
fn packaged_images_match_checksum() {
    let bytes = std::fs::read(FIXTURE).unwrap();
    let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(digest, FIXTURE_SHA256);
    let raw = RawImages::read_from(bytes.as_slice()).unwrap();
    assert_eq!(raw.len(), 16);
    assert_eq!((raw.shape().height, raw.shape().width, raw.shape().channels), (8, 8, 1));
    let mut out = Vec::new();
    raw.write_to(&mut out).unwrap();
    assert_eq!(out, bytes);
}

#[test]
fn fixture_preprocessing_inverts() {
    let raw = RawImages::load(FIXTURE).unwrap();
    let ds = dequantize_and_center(&raw, 256, 11, 4).unwrap();
    for (i, x) in ds.samples.iter().enumerate() {
        assert_eq!(ds.requantize(x).unwrap(), raw.image(i));
        assert!(x.iter().all(|v| v.abs() <= 2.0 + 1.0 / 128.0));
    }
}
