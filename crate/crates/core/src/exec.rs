//! Batch evaluation with deterministic per-item randomness.
//!
//! Monte Carlo validation, feasibility sampling, and population evaluation
//! all reduce to "apply `f` to indices `0..n`". With the `parallel` feature
//! (default) the map runs on rayon; without it the same code runs
//! sequentially. Results are identical either way because every item that
//! needs randomness derives its own RNG from `(seed, index)` instead of
//! sharing a stream, so the output never depends on scheduling or thread
//! count.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Map `f` over `0..n`, in parallel when the `parallel` feature is enabled.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential version of [`map_indexed`], always single-threaded. Exists so
/// benchmarks can compare the two paths in the same build.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Mix a master seed with an item index into an independent stream seed
/// (splitmix64 finalizer over the combined words).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(index.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(0x94d049bb133111eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// RNG for item `index` of a batch run with master seed `master`.
pub fn rng_for(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for master in 0..8u64 {
            for idx in 0..1024u64 {
                assert!(seen.insert(derive_seed(master, idx)));
            }
        }
    }

    #[test]
    fn map_indexed_matches_sequential() {
        let f = |i: usize| {
            let mut rng = rng_for(42, i as u64);
            rng.random::<f64>() + i as f64
        };
        let par = map_indexed(1000, f);
        let seq = map_indexed_seq(1000, f);
        assert_eq!(par, seq);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn results_do_not_depend_on_thread_count() {
        let f = |i: usize| {
            let mut rng = rng_for(7, i as u64);
            rng.random::<u64>()
        };
        let baseline = map_indexed(512, f);
        for threads in [1, 2, 4] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let got = pool.install(|| map_indexed(512, f));
            assert_eq!(got, baseline, "thread count {threads}");
        }
    }
}
