//! Online misalignment detection from the stream of detected shaft lengths.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub const N_RING: usize = 25;
pub const T_MIS: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorParams {
    pub n_ring: usize,
    pub t_mis: f64,
}

impl Default for MonitorParams {
    fn default() -> Self {
        Self {
            n_ring: N_RING,
            t_mis: T_MIS,
        }
    }
}

impl MonitorParams {
    pub fn validate(&self) -> bool {
        self.n_ring >= 1 && self.t_mis > 0.0 && self.t_mis < 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorState {
    Warmup,
    Tracking,
    Misaligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub frame: usize,
    pub average: f64,
    pub current: f64,
}

/// Ring buffer of recent shaft lengths with a running sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ShaftLengthBuffer {
    capacity: usize,
    values: VecDeque<f64>,
    sum: f64,
}

impl ShaftLengthBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            values: VecDeque::with_capacity(capacity),
            sum: 0.0,
        }
    }

    pub fn push(&mut self, x: f64) {
        if self.values.len() == self.capacity {
            if let Some(old) = self.values.pop_front() {
                self.sum -= old;
            }
        }
        self.values.push_back(x);
        self.sum += x;
    }

    pub fn clear(&mut self) {
        self.values.clear();
        self.sum = 0.0;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.values.len() == self.capacity
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn average(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.sum / self.values.len() as f64
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.values.iter()
    }
}

#[derive(Debug, Clone)]
pub struct AlignmentMonitor {
    params: MonitorParams,
    buffer: ShaftLengthBuffer,
    frame: usize,
    events: Vec<TriggerEvent>,
}

impl AlignmentMonitor {
    pub fn new(params: MonitorParams) -> Self {
        Self {
            buffer: ShaftLengthBuffer::new(params.n_ring.max(1)),
            params,
            frame: 0,
            events: Vec::new(),
        }
    }

    /// Invalid detections count as length 0. On a trigger the sample is not
    /// pushed, so the average keeps describing the aligned state.
    pub fn push_and_check(&mut self, len_px: f64, valid: bool) -> MonitorState {
        let len = if valid { len_px.max(0.0) } else { 0.0 };
        let frame = self.frame;
        self.frame += 1;
        if self.buffer.is_full() {
            let avg = self.buffer.average();
            if avg > 0.0 && (avg - len) / avg > self.params.t_mis {
                self.events.push(TriggerEvent {
                    frame,
                    average: avg,
                    current: len,
                });
                return MonitorState::Misaligned;
            }
        }
        self.buffer.push(len);
        if self.buffer.is_full() {
            MonitorState::Tracking
        } else {
            MonitorState::Warmup
        }
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
    }

    pub fn average(&self) -> f64 {
        self.buffer.average()
    }

    pub fn buffer(&self) -> &ShaftLengthBuffer {
        &self.buffer
    }

    pub fn events(&self) -> &[TriggerEvent] {
        &self.events
    }
}

impl Default for AlignmentMonitor {
    fn default() -> Self {
        Self::new(MonitorParams::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn filled(v: f64) -> AlignmentMonitor {
        let mut m = AlignmentMonitor::default();
        for _ in 0..N_RING {
            m.push_and_check(v, true);
        }
        m
    }

    #[test]
    fn threshold_arithmetic() {
        assert_eq!(filled(100.0).push_and_check(59.0, true), MonitorState::Misaligned);
        assert_eq!(filled(100.0).push_and_check(61.0, true), MonitorState::Tracking);
        assert_eq!(filled(100.0).push_and_check(60.0, true), MonitorState::Tracking);
    }

    #[test]
    fn warmup_lasts_until_full() {
        let mut m = AlignmentMonitor::default();
        for i in 0..24 {
            assert_eq!(m.push_and_check(0.0, true), MonitorState::Warmup, "frame {i}");
        }
        assert_eq!(m.push_and_check(0.0, true), MonitorState::Tracking);
    }

    #[test]
    fn trigger_freezes_reference_and_logs() {
        let mut m = filled(100.0);
        assert_eq!(m.push_and_check(10.0, true), MonitorState::Misaligned);
        assert_eq!(m.push_and_check(10.0, false), MonitorState::Misaligned);
        assert_eq!(m.average(), 100.0);
        assert_eq!(m.events().len(), 2);
        assert_eq!(m.events()[0].frame, 25);
        assert_eq!((m.events()[0].average, m.events()[0].current), (100.0, 10.0));
    }

    #[test]
    fn invalid_detection_counts_as_zero() {
        assert_eq!(filled(100.0).push_and_check(100.0, false), MonitorState::Misaligned);
    }

    #[test]
    fn reset_behaviour() {
        let mut m = filled(100.0);
        assert_eq!(m.push_and_check(0.0, true), MonitorState::Misaligned);
        m.reset();
        m.reset();
        assert!(m.buffer().is_empty());
        for _ in 0..24 {
            assert_eq!(m.push_and_check(40.0, true), MonitorState::Warmup);
        }
        assert_eq!(m.push_and_check(40.0, true), MonitorState::Tracking);
    }

    #[test]
    fn increases_never_trigger() {
        let mut m = filled(100.0);
        assert_eq!(m.push_and_check(1000.0, true), MonitorState::Tracking);
    }

    #[test]
    fn slow_decay_never_triggers() {
        let mut m = AlignmentMonitor::default();
        let mut len = 200.0;
        for _ in 0..N_RING {
            m.push_and_check(len, true);
        }
        for _ in 0..N_RING {
            len *= 0.99;
            assert_ne!(m.push_and_check(len, true), MonitorState::Misaligned);
        }
    }

    proptest! {
        #[test]
        fn running_sum_matches_contents(xs in prop::collection::vec(0.0f64..500.0, 0..80)) {
            let mut b = ShaftLengthBuffer::new(N_RING);
            for x in xs {
                b.push(x);
                prop_assert!(b.len() <= N_RING);
                let s: f64 = b.values().sum();
                prop_assert!((s - b.sum()).abs() < 1e-9);
            }
        }

        #[test]
        fn constant_stream_never_triggers(v in 0.0f64..1000.0, n in 1usize..100) {
            let mut m = AlignmentMonitor::default();
            for _ in 0..n {
                prop_assert_ne!(m.push_and_check(v, true), MonitorState::Misaligned);
            }
        }

        #[test]
        fn step_drop_triggers_on_first_full_frame(level in 10.0f64..500.0, frac in 0.0f64..0.59, pre in 25usize..60) {
            let mut m = AlignmentMonitor::default();
            for _ in 0..pre {
                prop_assert_ne!(m.push_and_check(level, true), MonitorState::Misaligned);
            }
            prop_assert_eq!(m.push_and_check(level * frac, true), MonitorState::Misaligned);
        }
    }
}
