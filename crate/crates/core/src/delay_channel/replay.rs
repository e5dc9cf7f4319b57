//! Replays a recorded packet trace through both delay realizations and
//! compares the delivery times against the recorded arrivals.

use super::{build_td_profile, delayed_signal_eval, DelayError, EventChannel, Packet, SignalHistory};

#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalCheck {
    pub seq: u64,
    pub expected: f64,
    /// Poll time at which the event channel released the packet.
    pub channel: f64,
    /// First sweep time at which the operator shows the packet; `None` when
    /// a packet arriving at the same instant supersedes it.
    pub operator: Option<f64>,
}

impl ArrivalCheck {
    pub fn channel_error(&self) -> f64 {
        self.channel - self.expected
    }

    pub fn operator_error(&self) -> Option<f64> {
        self.operator.map(|t| t - self.expected)
    }
}

/// Delivers `packets` through an [`EventChannel`] polled at every recorded
/// arrival, and sweeps the saw-tooth operator at `step` seconds.
pub fn replay_trace(packets: &[Packet<u64>], step: f64) -> Result<Vec<ArrivalCheck>, DelayError> {
    if !(step > 0.0) {
        return Err(DelayError::InvalidConfig("sweep step must be > 0"));
    }
    let profile = build_td_profile(packets)?;

    let mut channel = EventChannel::new();
    for p in packets {
        channel.push(p.clone())?;
    }
    let mut instants: Vec<f64> = packets.iter().map(|p| p.arrival).collect();
    instants.dedup();
    let mut released = Vec::with_capacity(packets.len());
    for t in instants {
        for p in channel.poll(t)? {
            released.push((p.seq, t));
        }
    }

    // The operator reads back the index of the packet it currently shows.
    let mut history = SignalHistory::new(None);
    for (i, p) in packets.iter().enumerate() {
        history.record(p.departure, Some(i));
    }
    let end = profile.final_point().0 + step;
    let mut shown = vec![None; packets.len()];
    let mut k = 0u64;
    loop {
        let t = k as f64 * step;
        if t > end {
            break;
        }
        if let Some(i) = *delayed_signal_eval(&history, &profile, t) {
            shown[i].get_or_insert(t);
        }
        k += 1;
    }

    Ok(packets
        .iter()
        .zip(shown)
        .map(|(p, operator)| ArrivalCheck {
            seq: p.seq,
            expected: p.arrival,
            channel: released
                .iter()
                .find(|(s, _)| *s == p.seq)
                .map_or(f64::NAN, |(_, t)| *t),
            operator,
        })
        .collect())
}
