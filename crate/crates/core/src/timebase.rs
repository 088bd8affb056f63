//! Seeded simulation of entangled-pair births and per-station detection.
//!
//! A station's detection time for a surviving pair is the affine map
//! `t = t^o + L/c + δt` plus Gaussian jitter from the source, detector, and
//! time tagger, quantized to the tagger grid. Dark counts arrive as an
//! independent Poisson stream. All randomness is drawn from a caller-supplied
//! seed, so identical inputs give bit-identical outputs.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use thiserror::Error;

use crate::rng::seeded;
use crate::PS_PER_SEC;

/// Vacuum speed of light, m/s.
pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;

#[derive(Debug, Error, PartialEq)]
pub enum TimebaseError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

fn check(ok: bool, name: &'static str, reason: String) -> Result<(), TimebaseError> {
    if ok {
        Ok(())
    } else {
        Err(TimebaseError::InvalidParameter { name, reason })
    }
}

/// Local clock error model: `local(t) = t + offset + drift_rate * t`.
///
/// `drift_ps_per_s` is picoseconds of accumulated error per second of true
/// time (0.25 ns/s is 250.0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockModel {
    pub offset_ps: i64,
    pub drift_ps_per_s: f64,
}

impl ClockModel {
    pub fn identity() -> Self {
        Self { offset_ps: 0, drift_ps_per_s: 0.0 }
    }

    pub fn apply(&self, true_time_ps: f64) -> f64 {
        true_time_ps + self.offset_ps as f64
            + self.drift_ps_per_s * (true_time_ps / PS_PER_SEC as f64)
    }

    fn validate(&self) -> Result<(), TimebaseError> {
        check(
            self.drift_ps_per_s.is_finite(),
            "drift_ps_per_s",
            format!("must be finite, got {}", self.drift_ps_per_s),
        )
    }
}

/// Optical channel and receiver model for one station.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub path_length_m: f64,
    /// Survival probability per photon, in [0, 1].
    pub transmittance: f64,
    pub dark_count_rate_hz: f64,
    pub detector_jitter_ps: f64,
    pub tagger_jitter_ps: f64,
    /// Quantization grid of the time tagger, > 0.
    pub tagger_resolution_ps: i64,
}

impl ChannelModel {
    /// Loss in dB to transmittance via `10^(-dB/10)`.
    pub fn transmittance_from_loss_db(loss_db: f64) -> f64 {
        10f64.powf(-loss_db / 10.0)
    }

    /// One-way propagation delay `L/c` in picoseconds.
    pub fn propagation_delay_ps(&self) -> f64 {
        self.path_length_m / SPEED_OF_LIGHT_M_PER_S * PS_PER_SEC as f64
    }

    /// A lossless, noiseless, zero-length channel at the given grid.
    pub fn ideal(tagger_resolution_ps: i64) -> Self {
        Self {
            path_length_m: 0.0,
            transmittance: 1.0,
            dark_count_rate_hz: 0.0,
            detector_jitter_ps: 0.0,
            tagger_jitter_ps: 0.0,
            tagger_resolution_ps,
        }
    }

    fn validate(&self) -> Result<(), TimebaseError> {
        check(
            (0.0..=1.0).contains(&self.transmittance),
            "transmittance",
            format!("must be in [0, 1], got {}", self.transmittance),
        )?;
        check(
            self.dark_count_rate_hz >= 0.0 && self.dark_count_rate_hz.is_finite(),
            "dark_count_rate_hz",
            format!("must be finite and >= 0, got {}", self.dark_count_rate_hz),
        )?;
        check(
            self.detector_jitter_ps >= 0.0 && self.tagger_jitter_ps >= 0.0,
            "jitter",
            "jitter sigmas must be >= 0".into(),
        )?;
        check(
            self.tagger_resolution_ps > 0,
            "tagger_resolution_ps",
            format!("must be > 0, got {}", self.tagger_resolution_ps),
        )?;
        check(
            self.path_length_m.is_finite() && self.path_length_m >= 0.0,
            "path_length_m",
            format!("must be finite and >= 0, got {}", self.path_length_m),
        )
    }
}

/// Biphoton birth times in picosecond ticks, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEventStream {
    pub birth_times_ps: Vec<i64>,
    /// Spread of the signal-idler birth-time difference (σ_int).
    pub source_jitter_ps: f64,
    pub duration_ps: i64,
}

impl PairEventStream {
    pub fn len(&self) -> usize {
        self.birth_times_ps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.birth_times_ps.is_empty()
    }
}

/// Photon detection times for one station: strictly increasing integer
/// picosecond ticks on the tagger grid, all within `[0, duration_ps]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeTagArray {
    pub tags_ps: Vec<i64>,
    pub duration_ps: i64,
}

impl TimeTagArray {
    pub fn len(&self) -> usize {
        self.tags_ps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags_ps.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.duration_ps as f64 / PS_PER_SEC as f64
    }

    /// Mean detection rate over the covered duration, in events per second.
    pub fn mean_rate_hz(&self) -> f64 {
        if self.duration_ps == 0 {
            return 0.0;
        }
        self.tags_ps.len() as f64 / self.duration_secs()
    }

    /// Tags inside `[start_ps, end_ps)` rebased to start at zero.
    pub fn window(&self, start_ps: i64, end_ps: i64) -> TimeTagArray {
        let lo = self.tags_ps.partition_point(|&t| t < start_ps);
        let hi = self.tags_ps.partition_point(|&t| t < end_ps);
        TimeTagArray {
            tags_ps: self.tags_ps[lo..hi].iter().map(|t| t - start_ps).collect(),
            duration_ps: end_ps - start_ps,
        }
    }
}

/// Homogeneous Poisson process of pair births over `duration_s`.
///
/// Inter-arrival times are exponential with mean `1/rate_hz`; the stream is
/// deterministic for a fixed seed.
pub fn generate_pairs(
    rate_hz: f64,
    duration_s: f64,
    source_jitter_ps: f64,
    seed: u64,
) -> Result<PairEventStream, TimebaseError> {
    check(
        rate_hz > 0.0 && rate_hz.is_finite(),
        "rate_hz",
        format!("must be > 0, got {rate_hz}"),
    )?;
    check(
        duration_s > 0.0 && duration_s.is_finite(),
        "duration_s",
        format!("must be > 0, got {duration_s}"),
    )?;
    check(
        source_jitter_ps >= 0.0,
        "source_jitter_ps",
        format!("must be >= 0, got {source_jitter_ps}"),
    )?;

    let mut rng = seeded(seed);
    let exp = Exp::new(rate_hz).expect("rate checked above");
    let duration_ps = (duration_s * PS_PER_SEC as f64).round() as i64;
    let mut births = Vec::with_capacity((rate_hz * duration_s * 1.1) as usize + 16);
    let mut t_s = 0.0f64;
    let mut prev = i64::MIN;
    loop {
        t_s += exp.sample(&mut rng);
        if t_s >= duration_s {
            break;
        }
        // Round to the picosecond grid; collisions at sane rates are
        // vanishingly rare but monotonicity is an invariant.
        let mut tick = (t_s * PS_PER_SEC as f64).round() as i64;
        if tick <= prev {
            tick = prev + 1;
        }
        births.push(tick);
        prev = tick;
    }
    Ok(PairEventStream {
        birth_times_ps: births,
        source_jitter_ps,
        duration_ps,
    })
}

/// Detects a pair stream at one station.
///
/// Each birth survives with probability `transmittance`; a surviving event is
/// stamped at `t^o + L/c + jitter`, mapped through the local clock, quantized
/// to the tagger grid, and kept if it falls inside the run. The source jitter
/// is split evenly across the two arms so the arrival-time *difference*
/// between stations has spread `sqrt(σ_int² + 2σ_det² + 2σ_t.t²)`.
pub fn detect(
    stream: &PairEventStream,
    channel: &ChannelModel,
    clock: &ClockModel,
    seed: u64,
) -> Result<TimeTagArray, TimebaseError> {
    channel.validate()?;
    clock.validate()?;

    let mut rng = seeded(seed);
    let delay_ps = channel.propagation_delay_ps();
    let res = channel.tagger_resolution_ps;
    let arm_source_sigma = stream.source_jitter_ps / std::f64::consts::SQRT_2;
    let gauss = |sigma: f64| Normal::new(0.0, sigma).expect("sigma checked above");
    let src = gauss(arm_source_sigma);
    let det = gauss(channel.detector_jitter_ps);
    let tt = gauss(channel.tagger_jitter_ps);

    let mut tags = Vec::with_capacity(
        (stream.birth_times_ps.len() as f64 * channel.transmittance) as usize + 16,
    );
    for &birth in &stream.birth_times_ps {
        if !rng.random_bool(channel.transmittance) {
            continue;
        }
        let arrival = birth as f64
            + delay_ps
            + src.sample(&mut rng)
            + det.sample(&mut rng)
            + tt.sample(&mut rng);
        let local = clock.apply(arrival);
        let tick = quantize(local, res);
        if (0..=stream.duration_ps).contains(&tick) {
            tags.push(tick);
        }
    }

    // Dark counts: uniform over the run in true time, stamped through the
    // same local clock as real detections.
    let mean_dark = channel.dark_count_rate_hz * stream.duration_ps as f64 / PS_PER_SEC as f64;
    if mean_dark > 0.0 {
        let n_dark = Poisson::new(mean_dark)
            .expect("rate checked above")
            .sample(&mut rng) as u64;
        for _ in 0..n_dark {
            let t = rng.random_range(0..=stream.duration_ps);
            let tick = quantize(clock.apply(t as f64), res);
            if (0..=stream.duration_ps).contains(&tick) {
                tags.push(tick);
            }
        }
    }

    tags.sort_unstable();
    tags.dedup();
    Ok(TimeTagArray {
        tags_ps: tags,
        duration_ps: stream.duration_ps,
    })
}

fn quantize(t_ps: f64, resolution_ps: i64) -> i64 {
    (t_ps / resolution_ps as f64).round() as i64 * resolution_ps
}

/// Measurement basis for polarization analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// Horizontal/vertical.
    Linear,
    /// Diagonal/anti-diagonal.
    Diagonal,
}

/// Joint polarization measurement for one coincident pair.
///
/// `bob_bit` is already mapped to the key-bit convention (Bob flips his raw
/// anticorrelated outcome), so matched-basis pairs agree except for errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairOutcome {
    pub alice_basis: Basis,
    pub bob_basis: Basis,
    pub alice_bit: bool,
    pub bob_bit: bool,
}

impl PairOutcome {
    pub fn bases_match(&self) -> bool {
        self.alice_basis == self.bob_basis
    }
}

/// Polarization outcomes for `n` coincident pairs.
///
/// Bases are independent and uniform at both stations. In matched bases the
/// key bits disagree with probability `(1 - visibility) / 2`; in mismatched
/// bases Bob's outcome is uniform.
pub fn polarization_outcomes(
    n: usize,
    visibility: f64,
    seed: u64,
) -> Result<Vec<PairOutcome>, TimebaseError> {
    check(
        (0.0..=1.0).contains(&visibility),
        "visibility",
        format!("must be in [0, 1], got {visibility}"),
    )?;
    let mut rng = seeded(seed);
    let error_p = (1.0 - visibility) / 2.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let alice_basis = if rng.random_bool(0.5) { Basis::Linear } else { Basis::Diagonal };
        let bob_basis = if rng.random_bool(0.5) { Basis::Linear } else { Basis::Diagonal };
        let alice_bit = rng.random_bool(0.5);
        let bob_bit = if alice_basis == bob_basis {
            alice_bit ^ rng.random_bool(error_p)
        } else {
            rng.random_bool(0.5)
        };
        out.push(PairOutcome { alice_basis, bob_basis, alice_bit, bob_bit });
    }
    Ok(out)
}
