//! Nothing here; the checks live in `tests/acceptance.rs`.
