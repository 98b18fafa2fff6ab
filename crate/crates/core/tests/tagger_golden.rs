use std::path::Path;

use sha2::{Digest, Sha256};

use pii_forge::corpus::read_conll;
use pii_forge::tagger::{featurize, train, TaggerError, TaggerModel, TrainConfig, DEFAULT_HASH_SEED, MODEL_VERSION};

fn fixture_gold() -> pii_forge::corpus::Corpus {
    read_conll(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/bio20/gold.conll")).unwrap()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn feature_hashes_are_frozen() {
    let toks = ["Ann", "married", "Bo", "."];
    let got = featurize(&toks, 1, 1 << 18, DEFAULT_HASH_SEED);
    assert_eq!(got, GOLDEN_FEATURES);
}

#[test]
fn trained_model_bytes_are_frozen() {
    let mut model = TaggerModel::new(1 << 14, DEFAULT_HASH_SEED).unwrap();
    let config = TrainConfig { epochs: 2, seed: 5, ..Default::default() };
    train(&mut model, &fixture_gold(), &config).unwrap();
    let digest = hex(&Sha256::digest(model.to_bytes()));
    assert_eq!(digest, GOLDEN_MODEL_SHA256);
}

#[test]
fn save_load_round_trip_and_version_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let mut model = TaggerModel::new(1 << 10, 3).unwrap();
    model.weights[7] = 1.5;
    model.save(&path).unwrap();
    assert_eq!(TaggerModel::load(&path).unwrap(), model);

    let mut bytes = model.to_bytes();
    bytes[6..10].copy_from_slice(&(MODEL_VERSION + 1).to_le_bytes());
    assert!(matches!(TaggerModel::from_bytes(&bytes), Err(TaggerError::Version { .. })));
    let mut bytes = model.to_bytes();
    bytes.push(0);
    assert!(TaggerModel::from_bytes(&bytes).is_err());
}

// Python: xxhash.xxh3_64_intdigest(name.encode(), seed=0x504949544147) & (2**18 - 1)
// over w=married, shape=x, p2=ma, s2=ed, p3=mar, s3=ied, w-2=<s>, w-1=ann, w+1=bo, w+2=., bias
const GOLDEN_FEATURES: &[u32] = &[222120, 49216, 193546, 22425, 26530, 149400, 35553, 30545, 54591, 130088, 207978];
// Any change to featurization, batching, the update rule or the file layout moves this.
const GOLDEN_MODEL_SHA256: &str = "b5891dd20554f604bbf13757e1c1e3315516663ee1fa23f112f540274c42e8b1";
