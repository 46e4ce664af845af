use featuremark_core::features::{
    compute_fcs, salient_set, statistic, ActivationMatrix, BackgroundMask, BuiltinConfig,
    BuiltinExtractor, FeatureExtractor, SparseRow,
};
use featuremark_core::rng::CounterRng;
use featuremark_core::sim::simulated_corpus;
use proptest::prelude::*;

// A from-scratch rendition of the built-in extractor's hashing rule, written
// out step by step so it shares no code with the library.
mod reference {
    pub fn splitmix_finalize(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    pub struct Stream {
        key: u64,
        next: u64,
    }

    impl Stream {
        pub fn seeded(seed: u64) -> Stream {
            Stream {
                key: splitmix_finalize(seed ^ 0x5EEDCAFEF00DD00D),
                next: 0,
            }
        }

        pub fn u64(&mut self) -> u64 {
            self.next += 1;
            splitmix_finalize(self.key.wrapping_add(self.next.wrapping_mul(0x9E3779B97F4A7C15)))
        }

        pub fn below(&mut self, n: u64) -> u64 {
            loop {
                let wide = (self.u64() as u128) * (n as u128);
                let low = wide as u64;
                if low >= n.wrapping_neg() % n {
                    return (wide >> 64) as u64;
                }
            }
        }

        pub fn open_closed(&mut self) -> f64 {
            (((self.u64() >> 11) + 1) as f64) / 9007199254740992.0
        }
    }

    pub fn fnv(seed: u64, pieces: &[&[u8]]) -> u64 {
        let mut h = 0xCBF29CE484222325u64 ^ seed;
        for p in pieces {
            for &b in *p {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001B3);
            }
        }
        h
    }

    /// Rows as `(index, value)` lists in ascending index order, for
    /// whitespace-only ASCII text, context window 1 and background band 8.
    pub fn extract(text: &str, dim: u64, active: usize) -> Vec<Vec<(u32, f64)>> {
        const CONTENT: u64 = 0x636f6e74656e7431;
        const BACKGROUND: u64 = 0x6261636b67726431;
        const BAND: u64 = 8;
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let mut rows = Vec::new();
        let mut prefix: Vec<u8> = Vec::new();
        for j in 0..tokens.len() {
            prefix.extend_from_slice(tokens[j].as_bytes());
            prefix.push(0xFF);
            let mut bg = Stream::seeded(fnv(BACKGROUND, &[&prefix]));
            let bg_index = bg.below(BAND) as u32;
            let bg_value = 0.5 + 0.5 * bg.open_closed();
            let mut row = vec![(bg_index, bg_value)];

            let seed = if j == 0 {
                fnv(CONTENT, &[tokens[0].as_bytes()])
            } else {
                fnv(CONTENT, &[tokens[j - 1].as_bytes(), &[0xFF], tokens[j].as_bytes()])
            };
            let mut content = Stream::seeded(seed);
            while row.len() < active {
                let index = (BAND + content.below(dim - BAND)) as u32;
                if row.iter().any(|&(i, _)| i == index) {
                    continue;
                }
                let value = content.open_closed();
                row.push((index, value));
            }
            row.sort_by_key(|&(i, _)| i);
            rows.push(row);
        }
        rows
    }
}

fn parse_golden(text: &str) -> Vec<Vec<(u32, f64)>> {
    let mut rows: Vec<Vec<(u32, f64)>> = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let row: usize = f[0].parse().unwrap();
        let index: u32 = f[1].parse().unwrap();
        let bits = u64::from_str_radix(f[2].trim_start_matches("0x"), 16).unwrap();
        if rows.len() <= row {
            rows.resize(row + 1, Vec::new());
        }
        rows[row].push((index, f64::from_bits(bits)));
    }
    rows
}

fn rows_of(m: &ActivationMatrix) -> Vec<Vec<(u32, f64)>> {
    m.rows().iter().map(|r| r.iter().collect()).collect()
}

#[test]
fn builtin_matches_golden_file() {
    let golden = parse_golden(include_str!("golden/builtin_the_quick_fox.txt"));
    assert_eq!(golden.len(), 3);
    assert!(golden.iter().all(|r| r.len() == 8));

    let by_reference = reference::extract("the quick fox", 1024, 8);
    assert_eq!(by_reference, golden);

    let ex = BuiltinExtractor::new(BuiltinConfig::default()).unwrap();
    assert_eq!(rows_of(&ex.extract("the quick fox").unwrap()), golden);
}

#[test]
fn builtin_matches_reference_on_corpus() {
    let ex = BuiltinExtractor::new(BuiltinConfig::default()).unwrap();
    for text in simulated_corpus(200, 3) {
        assert_eq!(
            rows_of(&ex.extract(&text).unwrap()),
            reference::extract(&text, 1024, 8),
            "{text}"
        );
    }
}

#[test]
fn builtin_rows_are_sparse() {
    let ex = BuiltinExtractor::new(BuiltinConfig::default()).unwrap();
    for text in simulated_corpus(100, 9) {
        let acts = ex.extract(&text).unwrap();
        for row in acts.rows() {
            assert!(row.len() as f64 <= 0.05 * ex.dim() as f64);
        }
    }
}

/// Densify every token and follow the concentration-score algorithm one
/// line at a time.
fn dense_fcs(dim: usize, rows: &[Vec<(u32, f64)>], masked: &[bool]) -> Option<f64> {
    let dense: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![0.0; dim];
            for &(i, x) in r {
                v[i as usize] = x;
            }
            v
        })
        .collect();
    let mut salient = vec![false; dim];
    let mut total_norm = 0.0;
    for phi in &dense {
        let mut best: Option<usize> = None;
        for i in 0..dim {
            if masked[i] || phi[i] == 0.0 {
                continue;
            }
            match best {
                Some(b) if phi[b] >= phi[i] => {}
                _ => best = Some(i),
            }
        }
        if let Some(b) = best {
            salient[b] = true;
        }
        total_norm += phi.iter().map(|x| x.abs()).sum::<f64>();
    }
    if !salient.iter().any(|&s| s) {
        return None;
    }
    let mut sub_norm = 0.0;
    for phi in &dense {
        for i in 0..dim {
            if salient[i] {
                sub_norm += phi[i].abs();
            }
        }
    }
    Some(sub_norm / total_norm)
}

fn random_case(rng: &mut CounterRng) -> (usize, Vec<Vec<(u32, f64)>>, Vec<bool>) {
    let dim = 8 + rng.below(120) as usize;
    let tokens = 1 + rng.below(20) as usize;
    let rows = (0..tokens)
        .map(|_| {
            let k = 1 + rng.below(dim.min(12) as u64) as usize;
            let mut idx: Vec<u32> = (0..dim as u32).collect();
            rng.partial_shuffle(&mut idx, k);
            let mut row: Vec<(u32, f64)> = idx[..k]
                .iter()
                .map(|&i| {
                    // A few coarse values so argmax ties actually happen.
                    let v = if rng.below(4) == 0 {
                        1.0 + rng.below(3) as f64
                    } else {
                        0.01 + 5.0 * rng.next_f64()
                    };
                    (i, v)
                })
                .collect();
            row.sort_by_key(|&(i, _)| i);
            row
        })
        .collect();
    let masked = (0..dim).map(|_| rng.below(10) == 0).collect();
    (dim, rows, masked)
}

fn build(dim: usize, rows: &[Vec<(u32, f64)>], masked: &[bool]) -> (ActivationMatrix, BackgroundMask) {
    let m = ActivationMatrix::new(
        dim,
        rows.iter()
            .map(|r| SparseRow::from_pairs(r.clone()).unwrap())
            .collect(),
    )
    .unwrap();
    let excluded = (0..dim as u32).filter(|&i| masked[i as usize]);
    (m, BackgroundMask::new(dim, excluded).unwrap())
}

#[test]
fn fcs_equals_dense_oracle_on_random_matrices() {
    let mut rng = CounterRng::new(0xFC5);
    let mut compared = 0;
    while compared < 100 {
        let (dim, rows, masked) = random_case(&mut rng);
        let (m, mask) = build(dim, &rows, &masked);
        match dense_fcs(dim, &rows, &masked) {
            Some(expected) => {
                let got = compute_fcs(&m, &mask).unwrap();
                assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
                compared += 1;
            }
            None => assert!(compute_fcs(&m, &mask).is_err()),
        }
    }
}

#[test]
fn fcs_hand_computed_fixtures() {
    let one = build(4, &[vec![(2, 1.0)]], &[false; 4]);
    assert_eq!(compute_fcs(&one.0, &one.1).unwrap(), 1.0);
    let rows = [vec![(0, 2.0), (1, 1.0), (2, 1.0)]];
    let half = build(4, &rows, &[false; 4]);
    assert_eq!(compute_fcs(&half.0, &half.1).unwrap(), 0.5);
    let quarter = build(4, &rows, &[true, false, false, false]);
    assert_eq!(compute_fcs(&quarter.0, &quarter.1).unwrap(), 0.25);
}

fn arb_case() -> impl Strategy<Value = (usize, Vec<Vec<(u32, f64)>>, Vec<bool>)> {
    (any::<u64>()).prop_map(|seed| random_case(&mut CounterRng::new(seed)))
}

proptest! {
    #[test]
    fn fcs_lies_in_unit_interval((dim, rows, masked) in arb_case()) {
        let (m, mask) = build(dim, &rows, &masked);
        if let Ok(f) = compute_fcs(&m, &mask) {
            prop_assert!((0.0..=1.0).contains(&f));
            let all_in_s = {
                let s = salient_set(&m, &mask);
                m.rows().iter().all(|r| r.indices().iter().all(|i| s.contains(i)))
            };
            prop_assert_eq!(f == 1.0, all_in_s);
        }
    }

    #[test]
    fn fcs_is_scale_invariant((dim, rows, masked) in arb_case(), c in 1e-3f64..1e3) {
        let (m, mask) = build(dim, &rows, &masked);
        if let Ok(f) = compute_fcs(&m, &mask) {
            let g = compute_fcs(&m.scaled(c), &mask).unwrap();
            prop_assert!((f - g).abs() < 1e-12);
        }
    }

    #[test]
    fn enlarging_the_mask_keeps_masked_indices_out_of_s(
        (dim, rows, masked) in arb_case(),
        extra in prop::collection::vec(any::<prop::sample::Index>(), 0..8),
    ) {
        let mut bigger = masked.clone();
        for e in &extra {
            bigger[e.index(dim)] = true;
        }
        let (m, mask) = build(dim, &rows, &bigger);
        for i in salient_set(&m, &mask) {
            prop_assert!(!bigger[i as usize]);
        }
    }

    #[test]
    fn statistic_is_deterministic(seed in any::<u64>()) {
        let ex = BuiltinExtractor::new(BuiltinConfig::default()).unwrap();
        let mask = BackgroundMask::new(1024, 0..8).unwrap();
        let text = &simulated_corpus(1, seed)[0];
        let a = statistic(text, &ex, &mask).unwrap();
        let b = statistic(&text.clone(), &ex, &mask).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}
