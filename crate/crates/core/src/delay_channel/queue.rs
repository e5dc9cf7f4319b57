use std::collections::VecDeque;

use super::{DelayError, Packet};

/// Discrete-event channel: packets are released once the poll time reaches
/// their arrival time.
#[derive(Debug, Clone)]
pub struct EventChannel<P> {
    in_flight: VecDeque<Packet<P>>,
    next_seq: u64,
    last_seq: Option<u64>,
    last_poll: f64,
}

impl<P> Default for EventChannel<P> {
    fn default() -> Self {
        EventChannel {
            in_flight: VecDeque::new(),
            next_seq: 1,
            last_seq: None,
            last_poll: f64::NEG_INFINITY,
        }
    }
}

impl<P> EventChannel<P> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sends `payload` with the next sequence number and returns it.
    pub fn send(&mut self, departure: f64, delay: f64, payload: P) -> u64 {
        let seq = self.next_seq;
        self.push(Packet::new(seq, payload, departure, delay))
            .expect("internally assigned sequence numbers increase");
        seq
    }

    /// Enqueues a pre-stamped packet (trace replay).
    pub fn push(&mut self, packet: Packet<P>) -> Result<(), DelayError> {
        if let Some(prev) = self.last_seq {
            if packet.seq <= prev {
                return Err(DelayError::SequenceRegression {
                    seq: packet.seq,
                    previous: prev,
                });
            }
        }
        if !(packet.delay > 0.0) {
            return Err(DelayError::NonPositiveDelay {
                seq: packet.seq,
                delay: packet.delay,
            });
        }
        self.last_seq = Some(packet.seq);
        self.next_seq = packet.seq + 1;
        self.in_flight.push_back(packet);
        Ok(())
    }

    /// Removes and returns, in sequence order, every packet with arrival time
    /// `<= t`.
    pub fn poll(&mut self, t: f64) -> Result<Vec<Packet<P>>, DelayError> {
        if t < self.last_poll {
            return Err(DelayError::TimeRegression {
                last: self.last_poll,
                requested: t,
            });
        }
        self.last_poll = t;
        let mut out = Vec::new();
        // FIFO traffic only ever releases a prefix; the scan keeps the
        // contract for arbitrary input too.
        let mut i = 0;
        while i < self.in_flight.len() {
            if self.in_flight[i].arrival <= t {
                out.push(self.in_flight.remove(i).expect("index in range"));
            } else {
                i += 1;
            }
        }
        Ok(out)
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.in_flight.is_empty()
    }
}

/// True iff the delivered sequence number advanced.
pub fn freshness_gate(previous: Option<u64>, current: Option<u64>) -> bool {
    match (previous, current) {
        (_, None) => false,
        (None, Some(_)) => true,
        (Some(p), Some(c)) => c > p,
    }
}

/// Stateful wrapper around [`freshness_gate`] used to enable the control
/// station only on new observations.
#[derive(Debug, Clone, Default)]
pub struct FreshnessGate {
    last: Option<u64>,
}

impl FreshnessGate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, current: Option<u64>) -> bool {
        let fresh = freshness_gate(self.last, current);
        if fresh {
            self.last = current;
        }
        fresh
    }
}
