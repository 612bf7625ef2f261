//! Home of the long-running acceptance suite; see `tests/acceptance.rs`.
