use climvar::dataset::{compute_stats, Dataset, NormalizationReference, RescalingConfig};
use climvar::models::{Checkpoint, ModelSpec, TrainConfig};
use climvar::synth::{generate_dataset, SynthConfig};
use climvar::thermo::{ClimateTag, Constants};
use climvar::Error;
use proptest::prelude::*;

fn dataset_bytes() -> Vec<u8> {
    let cfg = SynthConfig { n_levels: 8, ..Default::default() };
    generate_dataset(&cfg, ClimateTag::Minus4K, 3, 5).unwrap().to_bytes().unwrap()
}

fn checkpoint_bytes() -> Vec<u8> {
    let cfg = SynthConfig { n_levels: 8, ..Default::default() };
    let d = generate_dataset(&cfg, ClimateTag::Minus4K, 20, 1).unwrap();
    let r = RescalingConfig::climate_invariant();
    let stats = compute_stats(&[&d], &r, NormalizationReference::Training, &Constants::default()).unwrap();
    let spec = ModelSpec::Nn { hidden: vec![4], dropout: 0.1, batch_norm: true };
    let model = spec.build(36, 32, 0).unwrap();
    Checkpoint::new(model, r, TrainConfig::default(), ClimateTag::Minus4K, stats, "h".into(), 0).to_bytes().unwrap()
}

fn header_end(bytes: &[u8]) -> usize {
    8 + u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize
}

#[test]
fn every_truncation_is_a_format_error() {
    let bytes = dataset_bytes();
    for n in 0..bytes.len() {
        assert!(matches!(Dataset::from_bytes(&bytes[..n]), Err(Error::Format { .. })), "length {n}");
    }
    let bytes = checkpoint_bytes();
    for n in 0..bytes.len() {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..n]), Err(Error::Format { .. })), "length {n}");
    }
}

#[test]
fn trailing_bytes_are_rejected() {
    let mut bytes = dataset_bytes();
    bytes.push(0);
    assert!(matches!(Dataset::from_bytes(&bytes), Err(Error::Format { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn dataset_header_mutation_never_panics(pos in any::<prop::sample::Index>(), val in any::<u8>()) {
        let mut bytes = dataset_bytes();
        let i = pos.index(header_end(&bytes));
        bytes[i] = val;
        match Dataset::from_bytes(&bytes) {
            Ok(d) => prop_assert_eq!(Dataset::from_bytes(&d.to_bytes().unwrap()).unwrap(), d),
            Err(e) => prop_assert!(matches!(e, Error::Format { .. }), "{e}"),
        }
    }

    #[test]
    fn checkpoint_header_mutation_never_panics(pos in any::<prop::sample::Index>(), val in any::<u8>()) {
        let mut bytes = checkpoint_bytes();
        let i = pos.index(header_end(&bytes));
        bytes[i] = val;
        if let Err(e) = Checkpoint::from_bytes(&bytes) {
            prop_assert!(matches!(e, Error::Format { .. }), "{e}");
        }
    }
}

#[test]
fn oversized_architecture_is_rejected_before_allocation() {
    let bytes = checkpoint_bytes();
    let end = header_end(&bytes);
    let mut header: serde_json::Value = serde_json::from_slice(&bytes[8..end]).unwrap();
    header["model"]["architecture"]["hidden"] = serde_json::json!([usize::MAX / 2, 1u64 << 40]);
    let text = serde_json::to_vec(&header).unwrap();
    let mut forged = b"CIVM".to_vec();
    forged.extend_from_slice(&(text.len() as u32).to_le_bytes());
    forged.extend_from_slice(&text);
    forged.extend_from_slice(&bytes[end..]);
    assert!(matches!(Checkpoint::from_bytes(&forged), Err(Error::Format { .. })));
}
