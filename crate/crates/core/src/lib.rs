//! Core library for a quantum secure time transfer (QSTT) laboratory.
//!
//! The crate simulates entangled-photon time-tag acquisition at two stations,
//! encrypts the resulting timing data under a strict quantum-key budget,
//! authenticates it with an information-theoretic MAC, and recovers the
//! relative clock offset and drift between the stations by coincidence
//! cross-correlation.
//!
//! Module map:
//!
//! * [`bits`] — packed bit strings, the common currency of keys and wire fields
//! * [`timebase`] — seeded simulation of pair births, detection, and polarization
//! * [`keystore`] — QKD/PSK/PQC key reservoirs, single-use ledger, budget math
//! * [`codec`] — diff-time-tag transform, partitioning, shuffling, bit packing
//! * [`crypto`] — one-time pad, AES/Ascon keystream cascade, Wegman-Carter MAC
//! * [`protocol`] — the secure timing message: build, invert, wire format
//! * [`sync`] — coincidence histograms, coarse/fine alignment, drift fitting
//! * [`qkd`] — sifting, QBER estimation, and key-yield modeling

pub mod bits;
pub mod codec;
pub mod crypto;
pub mod keystore;
pub mod protocol;
pub mod qkd;
pub mod rng;
pub mod sync;
pub mod timebase;

/// Picoseconds per second; the library's internal time unit is the picosecond
/// held in `i64`, which covers roughly ±106 days.
pub const PS_PER_SEC: i64 = 1_000_000_000_000;
