//! Saw-tooth variable-delay operator.
//!
//! Fed with a signal history `u` and the profile `t_d(t)`, the readout
//! `u(t − t_d(t))` holds the previous packet on `[AT_{n−1}, AT_n)` and
//! switches to packet `n` exactly at `AT_n`.

use super::{DelayError, Packet, TIME_EPS};

/// Linear piece of the profile on `[t0, t1)`, ramping from `d0` towards `d1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdSegment {
    pub t0: f64,
    pub t1: f64,
    pub d0: f64,
    pub d1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdProfile {
    segments: Vec<TdSegment>,
    /// `(AT_N, τ_N)`; the delay is held at `τ_N` from there on.
    last: (f64, f64),
}

impl TdProfile {
    pub fn segments(&self) -> &[TdSegment] {
        &self.segments
    }

    pub fn final_point(&self) -> (f64, f64) {
        self.last
    }

    /// `t_d(t)`.
    pub fn eval(&self, t: f64) -> f64 {
        if t >= self.last.0 {
            return self.last.1;
        }
        // Segments start at 0 and tile [0, AT_N); before 0 the first value holds.
        let idx = self.segments.partition_point(|s| s.t0 <= t);
        let seg = &self.segments[idx.saturating_sub(1)];
        if seg.t1 > seg.t0 {
            let w = ((t - seg.t0) / (seg.t1 - seg.t0)).clamp(0.0, 1.0);
            seg.d0 + (seg.d1 - seg.d0) * w
        } else {
            seg.d0
        }
    }
}

/// Builds the saw-tooth profile from FIFO-ordered packets departing at a
/// uniform interval.
pub fn build_td_profile<P>(packets: &[Packet<P>]) -> Result<TdProfile, DelayError> {
    let first = packets.first().ok_or(DelayError::Empty)?;
    for p in packets {
        if !(p.delay > 0.0) {
            return Err(DelayError::NonPositiveDelay {
                seq: p.seq,
                delay: p.delay,
            });
        }
    }
    let interval = match packets.get(1) {
        Some(second) => second.departure - first.departure,
        None => 0.0,
    };
    for w in packets.windows(2) {
        if w[1].seq <= w[0].seq {
            return Err(DelayError::SequenceRegression {
                seq: w[1].seq,
                previous: w[0].seq,
            });
        }
        if ((w[1].departure - w[0].departure) - interval).abs() > TIME_EPS {
            return Err(DelayError::NonUniformDepartures { seq: w[1].seq });
        }
        if w[1].arrival < w[0].arrival - TIME_EPS {
            return Err(DelayError::NonFifo {
                seq: w[1].seq,
                arrival: w[1].arrival,
                previous: w[0].arrival,
            });
        }
    }

    let mut segments = Vec::with_capacity(packets.len());
    segments.push(TdSegment {
        t0: 0.0,
        t1: first.arrival,
        d0: first.delay,
        d1: first.delay,
    });
    for w in packets.windows(2) {
        let (prev, next) = (&w[0], &w[1]);
        // Packets arriving together leave an empty interval; the later one
        // supersedes the earlier.
        if next.arrival - prev.arrival <= TIME_EPS {
            continue;
        }
        segments.push(TdSegment {
            t0: prev.arrival,
            t1: next.arrival,
            d0: prev.delay,
            d1: interval + next.delay,
        });
    }
    let last = packets.last().expect("non-empty");
    Ok(TdProfile {
        segments,
        last: (last.arrival, last.delay),
    })
}

/// Zero-order-hold record of a signal, appended in time order.
#[derive(Debug, Clone)]
pub struct SignalHistory<T> {
    samples: Vec<(f64, T)>,
    initial: T,
}

impl<T: Clone> SignalHistory<T> {
    /// `initial` is returned for queries before the first record.
    pub fn new(initial: T) -> Self {
        SignalHistory {
            samples: Vec::new(),
            initial,
        }
    }

    pub fn record(&mut self, t: f64, value: T) {
        if let Some(&(last, _)) = self.samples.last() {
            assert!(t >= last, "signal history must be appended in time order");
        }
        self.samples.push((t, value));
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Value held at time `t`.
    pub fn at(&self, t: f64) -> &T {
        let idx = self.samples.partition_point(|(ts, _)| *ts <= t + TIME_EPS);
        match idx {
            0 => &self.initial,
            i => &self.samples[i - 1].1,
        }
    }
}

/// `u(t − t_d(t))` with zero-order hold.
pub fn delayed_signal_eval<'a, T: Clone>(
    history: &'a SignalHistory<T>,
    profile: &TdProfile,
    t: f64,
) -> &'a T {
    history.at(t - profile.eval(t))
}
