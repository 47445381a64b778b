use isf::client::info_int;
use isf::store::{shard_for_key, StoreConfig};
use isf::wire::{Dtype, Tensor};

mod suites;

use suites::store::{connect, start};

#[test]
fn linearizable_per_key_under_eight_connections() {
    println!("{}", suites::store::linearizable(8, 10_000).unwrap());
}

#[test]
fn bytes_used_matches_shadow_map() {
    println!("{}", suites::store::bytes_oracle(4000).unwrap());
}

#[test]
fn malformed_frames_stay_on_their_connection() {
    suites::store::malformed_isolated().unwrap();
}

#[test]
fn info_counters() {
    let server = start(StoreConfig::default());
    let mut c = connect(&server);
    let info = c.info(0).unwrap();
    assert_eq!(info_int(&info, "keys"), Some(0));
    assert_eq!(info_int(&info, "bytes_used"), Some(0));
    for name in ["max_bytes", "requests_served", "uptime_ms"] {
        assert!(info_int(&info, name).is_some(), "{name}");
    }
    let t = Tensor::new(Dtype::U8, vec![1024], vec![1; 1024]).unwrap();
    c.put_tensor("0.sol.0", &t).unwrap();
    let mut served = 0;
    for _ in 0..3 {
        let info = c.info(0).unwrap();
        assert_eq!(info_int(&info, "bytes_used"), Some(1024));
        let now = info_int(&info, "requests_served").unwrap();
        assert!(now >= served);
        served = now;
    }
}

#[test]
fn keys_spread_evenly_over_four_shards() {
    let mut counts = [0u32; 4];
    let mut rng = isf::prng::SplitMix64::new(5);
    for _ in 0..10_000 {
        let key = format!("{}.sol.{}", rng.below(1 << 20), rng.below(1 << 20));
        counts[shard_for_key(key.as_bytes(), 4)] += 1;
    }
    for c in counts {
        assert!((2350..=2650).contains(&c), "{counts:?}");
    }
}
