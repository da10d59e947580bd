use ctmap_scan::{scan, sequential_scan, try_scan_with_stats, Direction, ScanError, ScanPlan};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat2 = [f64; 4];

fn matmul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

fn random_mats(len: usize, seed: u64) -> Vec<Mat2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            // close to a rotation so long products stay bounded
            let th: f64 = rng.random_range(-1.0..1.0);
            let s: f64 = 1.0 + rng.random_range(-1e-3..1e-3);
            [s * th.cos(), -s * th.sin(), s * th.sin(), s * th.cos()]
        })
        .collect()
}

fn max_rel_diff(a: &[Mat2], b: &[Mat2]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs() / (1.0 + q.abs())))
        .fold(0.0, f64::max)
}

#[test]
fn matrix_products_parallel_match_sequential() {
    let mats = random_mats(1000, 7);
    for dir in [Direction::Forward, Direction::Reversed] {
        let plan = ScanPlan { direction: dir, ..ScanPlan::forward() };
        let par = scan(mats.clone(), matmul, &plan).unwrap();
        let seq = sequential_scan(mats.clone(), matmul, dir).unwrap();
        let diff = max_rel_diff(&par, &seq);
        assert!(diff < 1e-10, "{dir:?}: {diff}");
    }
}

#[test]
fn every_length_up_to_1025_matches_and_respects_structure() {
    let mats = random_mats(1025, 11);
    for len in 1..=1025 {
        for dir in [Direction::Forward, Direction::Reversed] {
            let plan = ScanPlan { direction: dir, ..ScanPlan::forward() }.with_cutoff(0);
            let (par, stats) =
                try_scan_with_stats(mats[..len].to_vec(), |a, b| Ok::<_, ScanError>(matmul(a, b)), &plan).unwrap();
            let seq = sequential_scan(mats[..len].to_vec(), matmul, dir).unwrap();
            assert!(max_rel_diff(&par, &seq) < 1e-10, "len {len}");
            assert!(stats.combines <= 2 * len, "len {len}: {} combines", stats.combines);
            let log2 = (len as f64).log2().ceil() as usize;
            assert!(stats.depth <= log2 + 1, "len {len}: depth {}", stats.depth);
        }
    }
}

#[test]
fn sequential_plan_counts_linear_work() {
    let plan = ScanPlan::forward().sequential();
    let (_, stats) =
        try_scan_with_stats((0..100i64).collect(), |a, b| Ok::<_, ScanError>(a + b), &plan).unwrap();
    assert_eq!(stats.combines, 99);
    assert_eq!(stats.depth, 0);
}

#[test]
fn results_are_bitwise_identical_across_worker_counts() {
    let mats = random_mats(777, 3);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| scan(mats.clone(), matmul, &ScanPlan::reversed().with_cutoff(4)).unwrap())
    };
    let one = run(1);
    for threads in [2, 8] {
        let other = run(threads);
        assert!(one.iter().zip(&other).all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())));
    }
}

proptest! {
    #[test]
    fn integer_sums_agree(values in prop::collection::vec(-1000i64..1000, 1..300), cutoff in 0usize..80) {
        for dir in [Direction::Forward, Direction::Reversed] {
            let plan = ScanPlan { direction: dir, ..ScanPlan::forward() }.with_cutoff(cutoff);
            let tree = scan(values.clone(), |a, b| a + b, &plan).unwrap();
            let seq = sequential_scan(values.clone(), |a, b| a + b, dir).unwrap();
            prop_assert_eq!(tree, seq);
        }
    }

    #[test]
    fn string_concatenation_keeps_order(len in 1usize..200) {
        let words: Vec<String> = (0..len).map(|i| format!("{i},")).collect();
        let expected: Vec<String> = (0..len).map(|k| (0..=k).map(|i| format!("{i},")).collect()).collect();
        let tree = scan(words, |a, b| format!("{a}{b}"), &ScanPlan::forward().with_cutoff(0)).unwrap();
        prop_assert_eq!(tree, expected);
    }
}
