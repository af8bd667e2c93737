//! Acceptance suite for `failprob`; everything lives in `tests/acceptance.rs`.
//!
//! Kept in its own package so that it runs after the unit and integration tests of the other
//! workspace members: its expected failures would otherwise stop `cargo test` early.
