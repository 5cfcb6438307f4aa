//! Seed resolution: `RCE_SEED`, when set, overrides every configured seed.

pub const SEED_VAR: &str = "RCE_SEED";

#[derive(Debug, thiserror::Error)]
#[error("{SEED_VAR} must be an unsigned integer, got {0:?}")]
pub struct SeedError(String);

pub fn resolve(configured: u64) -> Result<u64, SeedError> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v.trim().parse().map_err(|_| SeedError(v)),
        Err(_) => Ok(configured),
    }
}
