//! Acceptance checks for the prosign toolkit. The checks live in
//! `tests/acceptance.rs` and run with `cargo test -p prosign-verification`;
//! each prints one PASS/FAIL line with the measured value and its tolerance.
//!
//! This is a separate package so that the checks run after the unit and
//! integration suites of the other crates.
