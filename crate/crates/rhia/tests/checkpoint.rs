mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhia::checkpoint::{self, Checkpoint};
use rhia_core::instance::Instance;
use rhia_core::model::Model;
use rhia_core::Real;

fn snapshot<T: Real>(f: &common::Fixture, model: Model<T>) -> Checkpoint<T> {
    Checkpoint {
        model,
        hierarchy: f.hierarchy.clone(),
        vocab: f.vocab.clone(),
        train_counts: f.train.stats.relation_counts.clone(),
        epoch: 4,
        seed: 99,
    }
}

fn outputs<T: Real>(m: &Model<T>, f: &common::Fixture) -> Vec<Vec<f64>> {
    let views: Vec<&[Instance]> = f.test.bags.iter().map(|b| b.instances.as_slice()).collect();
    m.predict(&views).unwrap().into_iter().map(|p| p.probs).collect()
}

fn round_trip<T: Real>() {
    let f = common::fixture(1);
    let s = common::small_settings();
    let c = snapshot(&f, common::small_model::<T>(&f, &s, 5));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&c, &path).unwrap();
    assert_eq!(checkpoint::stored_precision(&path).unwrap(), T::BYTES);
    let back: Checkpoint<T> = checkpoint::load(&path).unwrap();
    assert_eq!(back.model.params(), c.model.params());
    assert_eq!(back.model.config(), c.model.config());
    assert_eq!(back.hierarchy, c.hierarchy);
    assert_eq!(back.vocab, c.vocab);
    assert_eq!(back.train_counts, c.train_counts);
    assert_eq!((back.epoch, back.seed), (4, 99));
    assert_eq!(outputs(&back.model, &f), outputs(&c.model, &f));
    assert_eq!(checkpoint::to_bytes(&back), std::fs::read(&path).unwrap());
}

#[test]
fn round_trip_is_bit_exact_in_single_precision() {
    round_trip::<f32>();
}

#[test]
fn round_trip_is_bit_exact_in_double_precision() {
    round_trip::<f64>();
}

#[test]
fn truncated_and_padded_files_are_rejected() {
    let f = common::fixture(1);
    let c = snapshot(&f, common::small_model::<f32>(&f, &common::small_settings(), 5));
    let bytes = checkpoint::to_bytes(&c);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cuts: Vec<usize> = (0..60).map(|_| rng.random_range(0..bytes.len())).collect();
    cuts.extend([0, 7, 12, 45, bytes.len() - 1]);
    for cut in cuts {
        let err = checkpoint::from_bytes::<f32>(&bytes[..cut]).unwrap_err();
        assert_eq!(err.exit_code(), 2, "cut {cut}: {err}");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(checkpoint::from_bytes::<f32>(&longer).is_err());
}

#[test]
fn metadata_tampering_fails_the_digest() {
    let f = common::fixture(1);
    let c = snapshot(&f, common::small_model::<f32>(&f, &common::small_settings(), 5));
    let mut bytes = checkpoint::to_bytes(&c);
    let at = 8 + 4 + 1 + 32 + 8 + 10;
    bytes[at] ^= 1;
    let err = checkpoint::from_bytes::<f32>(&bytes).unwrap_err();
    assert!(err.to_string().contains("digest"), "{err}");
    let mut bad_magic = checkpoint::to_bytes(&c);
    bad_magic[0] = b'X';
    assert!(checkpoint::from_bytes::<f32>(&bad_magic).is_err());
}

/// Round-to-nearest-even narrowing done on the bit patterns.
fn narrow_oracle(v: f64) -> f32 {
    let bits = v.to_bits();
    let sign = (bits >> 63) as u32;
    if v == 0.0 {
        return f32::from_bits(sign << 31);
    }
    let exp = ((bits >> 52) & 0x7ff) as i32 - 1023;
    assert!((-126..=127).contains(&exp), "oracle covers normal f32 range only");
    let mant = bits & ((1u64 << 52) - 1);
    let mut top = (mant >> 29) as u32;
    let rest = mant & ((1u64 << 29) - 1);
    let half = 1u64 << 28;
    let mut e = (exp + 127) as u32;
    if rest > half || (rest == half && top & 1 == 1) {
        top += 1;
        if top == 1 << 23 {
            top = 0;
            e += 1;
        }
    }
    f32::from_bits((sign << 31) | (e << 23) | top)
}

#[test]
fn narrowing_oracle_agrees_on_ties() {
    let one_ulp = 2f64.powi(-23);
    assert_eq!(narrow_oracle(1.0 + one_ulp / 2.0), 1.0);
    assert_eq!(narrow_oracle(1.0 + 1.5 * one_ulp), 1.0 + 2.0 * one_ulp as f32);
    assert_eq!(narrow_oracle(-(1.0 + one_ulp / 2.0 + 1e-12)), -(1.0 + one_ulp as f32));
}

#[test]
fn double_checkpoint_narrows_to_nearest_even_single() {
    let f = common::fixture(1);
    let s = common::small_settings();
    let mut model = common::small_model::<f64>(&f, &s, 8);
    let one_ulp = 2f64.powi(-23);
    let id = model.ids().classifier_b;
    let n = model.params().get(id).len();
    let ties: Vec<f64> = (0..n)
        .map(|i| match i % 4 {
            0 => 1.0 + one_ulp / 2.0,
            1 => 1.0 + 1.5 * one_ulp,
            2 => -(0.75 + 2f64.powi(-25)),
            _ => 0.1,
        })
        .collect();
    model.params_mut().set_values(id, &ties).unwrap();
    let c = snapshot(&f, model);
    let narrowed: Checkpoint<f32> = checkpoint::from_bytes(&checkpoint::to_bytes(&c)).unwrap();
    for ((_, name, wide), (_, _, narrow)) in c.model.params().iter().zip(narrowed.model.params().iter()) {
        for (a, b) in wide.values().iter().zip(narrow.values()) {
            assert_eq!(b.to_bits(), narrow_oracle(*a).to_bits(), "{name}: {a}");
        }
    }
}

proptest! {
    #[test]
    fn narrowing_matches_the_oracle_on_random_values(neg in any::<bool>(), exp in -120i32..120, mant in 0u64..(1 << 52)) {
        let v = f64::from_bits((u64::from(neg) << 63) | (((exp + 1023) as u64) << 52) | mant);
        prop_assert_eq!(<f32 as Real>::lit(v).to_bits(), narrow_oracle(v).to_bits());
    }
}
