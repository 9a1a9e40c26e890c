//! Acceptance checks for `gmpid`; see `tests/acceptance.rs`.
