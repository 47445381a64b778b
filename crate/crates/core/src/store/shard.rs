use std::fmt;
use std::str::FromStr;

const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Ordered list of shard addresses; position is the shard index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardMap {
    shards: Vec<String>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("shard map must list at least one address")]
pub struct EmptyShardMap;

impl ShardMap {
    pub fn new(shards: Vec<String>) -> Result<Self, EmptyShardMap> {
        if shards.is_empty() {
            return Err(EmptyShardMap);
        }
        Ok(ShardMap { shards })
    }

    pub fn count(&self) -> usize {
        self.shards.len()
    }

    pub fn addresses(&self) -> &[String] {
        &self.shards
    }

    pub fn address(&self, index: usize) -> &str {
        &self.shards[index]
    }

    pub fn shard_for(&self, key: &[u8]) -> usize {
        shard_for_key(key, self.count())
    }
}

impl FromStr for ShardMap {
    type Err = EmptyShardMap;

    /// Comma-separated `host:port` list, as carried by `ISF_SHARD_MAP`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ShardMap::new(
            s.split(',')
                .map(str::trim)
                .filter(|a| !a.is_empty())
                .map(String::from)
                .collect(),
        )
    }
}

impl fmt::Display for ShardMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.shards.join(","))
    }
}

/// `fnv1a64(key) mod count`. `count` must be at least 1.
pub fn shard_for_key(key: &[u8], count: usize) -> usize {
    assert!(count >= 1, "shard count must be >= 1");
    (fnv1a64(key) % count as u64) as usize
}
