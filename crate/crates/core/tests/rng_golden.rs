use modalbench::numerics::Rng;
use rand::RngCore;

/// First 1000 outputs of seed 42, produced by the C program in `tests/data`.
const GOLDEN: &str = include_str!("data/xoshiro256pp_seed42.txt");

#[test]
fn raw_stream_matches_c_reference() {
    let mut rng = Rng::new(42);
    let expected: Vec<u64> = GOLDEN.lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(expected.len(), 1000);
    for (i, &want) in expected.iter().enumerate() {
        assert_eq!(rng.next_u64(), want, "draw {i}");
    }
}

#[test]
fn uniform_uses_top_53_bits() {
    let mut rng = Rng::new(42);
    let first: u64 = GOLDEN.lines().next().unwrap().parse().unwrap();
    assert_eq!(rng.uniform(), (first >> 11) as f64 / (1u64 << 53) as f64);
}
