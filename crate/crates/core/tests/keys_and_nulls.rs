use std::collections::HashSet;

use featuremark_core::detect::{check_alignment, detect_observed, score_key};
use featuremark_core::keying::{
    enumerate_keys, message_to_key, targets_from_key, TARGET_HI, TARGET_LO,
};
use featuremark_core::rng::CounterRng;
use featuremark_core::stats::ks_sorted;
use featuremark_core::{AlignmentThresholds, DetectConfig, Message, Secret};
use proptest::prelude::*;

fn secret() -> Secret {
    Secret::new(*b"keys-and-nulls!!")
}

#[test]
fn all_ten_bit_messages_get_distinct_seeds() {
    let keys = enumerate_keys(10, &secret()).unwrap();
    assert_eq!(keys.len(), 1024);
    let seeds: HashSet<u64> = keys.iter().map(|k| k.seed).collect();
    assert_eq!(seeds.len(), 1024);

    let zero = message_to_key(&Message::parse("0000000000").unwrap(), &secret());
    let one = message_to_key(&Message::parse("0000000001").unwrap(), &secret());
    assert_ne!(zero.seed, one.seed);
}

#[test]
fn targets_are_bounded_and_uniform_over_many_keys() {
    let mut values = Vec::with_capacity(100_000);
    for v in 0..10_000u64 {
        let s = Secret::new((v as u128 * 0x9E37_79B9_7F4A_7C15).to_le_bytes());
        let key = message_to_key(&Message::from_value(v & 0xFF, 8).unwrap(), &s);
        for &t in targets_from_key(&key, 10).iter() {
            assert!((TARGET_LO..=TARGET_HI).contains(&t));
            values.push(t);
        }
    }
    values.sort_by(f64::total_cmp);
    let d = ks_sorted(&values, |x| ((x - TARGET_LO) / (TARGET_HI - TARGET_LO)).clamp(0.0, 1.0));
    assert!(d < 0.02, "KS {d}");
}

fn uniform(rng: &mut CounterRng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.next_f64()).collect()
}

#[test]
fn random_observations_rarely_align() {
    let th = AlignmentThresholds::default();
    let keys = enumerate_keys(8, &secret()).unwrap();
    let mut rng = CounterRng::new(404);
    let trials = 10_000;
    let mut passed = 0;
    for i in 0..trials {
        let z = uniform(&mut rng, 10);
        let targets = targets_from_key(&keys[i % keys.len()], 10);
        if check_alignment(&targets, &z, &th).unwrap() {
            passed += 1;
        }
    }
    let rate = passed as f64 / trials as f64;
    assert!(rate < 0.05, "null alignment rate {rate}");
}

#[test]
fn aligned_null_keys_are_accepted_at_most_alpha() {
    let th = AlignmentThresholds::default();
    let keys = enumerate_keys(8, &secret()).unwrap();
    let mut rng = CounterRng::new(405);
    let (mut aligned, mut accepted, mut i) = (0u32, 0u32, 0usize);
    while aligned < 10_000 {
        let z = uniform(&mut rng, 10);
        let s = score_key(&z, &keys[i % keys.len()], &th, 0.01).unwrap();
        i += 1;
        if s.alignment_passed {
            aligned += 1;
            accepted += u32::from(s.accepted);
        }
    }
    // With uniform rather than normal z the t-test's true level at M = 10 is
    // about 1.075%, so the bound allows three standard errors above alpha.
    let n = f64::from(aligned);
    let rate = f64::from(accepted) / n;
    let bound = 0.01 + 3.0 * (0.01 * 0.99 / n).sqrt();
    assert!(rate <= bound, "conditional acceptance {rate} over {aligned} aligned draws");
}

#[test]
fn truncated_targets_are_prefixes() {
    for key in enumerate_keys(4, &secret()).unwrap() {
        let full = targets_from_key(&key, 10);
        assert_eq!(&full[..7], &targets_from_key(&key, 7)[..]);
    }
}

proptest! {
    #[test]
    fn decision_is_independent_of_key_order(
        seed in any::<u64>(),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 1..6),
        rotate in 0usize..64,
    ) {
        let keys = enumerate_keys(6, &secret()).unwrap();
        let mut rng = CounterRng::new(seed);
        // Mix pure noise with noisy copies of a few keys' targets so that
        // some draws accept one or more keys.
        let mut z = uniform(&mut rng, 10);
        for p in &picks {
            let t = targets_from_key(&keys[p.index(keys.len())], 10);
            if rng.below(2) == 0 {
                for (zi, ti) in z.iter_mut().zip(t.iter()) {
                    *zi = ti + 0.02 * (rng.next_f64() - 0.5);
                }
            }
        }
        let cfg = DetectConfig::default();
        let a = detect_observed(&z, &keys, &cfg).unwrap();
        let mut shuffled = keys.clone();
        shuffled.rotate_left(rotate);
        shuffled.reverse();
        let b = detect_observed(&z, &shuffled, &cfg).unwrap();
        prop_assert_eq!(&a.decision, &b.decision);
        prop_assert_eq!(a.score(), b.score());
        if let Some(m) = a.decision.message() {
            let best = a.accepted_keys().map(|k| k.t.unwrap()).fold(f64::NEG_INFINITY, f64::max);
            let winners: Vec<_> = a.accepted_keys().filter(|k| k.t == Some(best)).collect();
            prop_assert_eq!(&winners.iter().map(|k| k.message.value()).min().unwrap(), &m.value());
        }
    }

    #[test]
    fn targets_depend_only_on_key(bits in 1usize..12, v in any::<u64>(), n in 1usize..40) {
        let m = Message::from_value(v & ((1 << bits) - 1), bits).unwrap();
        let k1 = message_to_key(&m, &secret());
        let k2 = message_to_key(&m, &secret());
        prop_assert_eq!(targets_from_key(&k1, n), targets_from_key(&k2, n));
        prop_assert_eq!(&targets_from_key(&k1, n + 5)[..n], &targets_from_key(&k1, n)[..]);
    }
}
