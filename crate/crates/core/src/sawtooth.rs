//! Piecewise-linear unit-slope trajectories (age and age of served information).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Time;

/// A trajectory that grows at unit rate and only jumps at breakpoints.
///
/// Each breakpoint stores the value just after the jump; the pre-jump value
/// is the previous breakpoint's value plus the elapsed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SawtoothProcess {
    breakpoints: Vec<(Time, Time)>,
    end: Time,
}

/// A maximal unit-slope piece: value(start + s) = value + s for s in [0, len).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Time,
    pub len: Time,
    pub value: Time,
}

impl SawtoothProcess {
    pub fn new(origin: Time, value: Time) -> Self {
        assert!(value >= 0.0, "sawtooth values are non-negative");
        Self {
            breakpoints: vec![(origin, value)],
            end: Time::INFINITY,
        }
    }

    /// Builds a process from explicit breakpoints, validating ordering and sign.
    pub fn from_breakpoints(breakpoints: Vec<(Time, Time)>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::Config("sawtooth needs at least one breakpoint".into()));
        }
        for w in breakpoints.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Config("breakpoint times must strictly increase".into()));
            }
        }
        if breakpoints.iter().any(|&(t, v)| !t.is_finite() || !(v >= 0.0)) {
            return Err(Error::Config("breakpoints must be finite and non-negative".into()));
        }
        Ok(Self {
            breakpoints,
            end: Time::INFINITY,
        })
    }

    pub fn breakpoints(&self) -> &[(Time, Time)] {
        &self.breakpoints
    }

    pub fn origin(&self) -> Time {
        self.breakpoints[0].0
    }

    pub fn end(&self) -> Time {
        self.end
    }

    /// Marks the end of the recorded horizon.
    pub fn close(&mut self, end: Time) {
        debug_assert!(end >= self.last().0);
        self.end = end;
    }

    fn last(&self) -> (Time, Time) {
        *self.breakpoints.last().expect("non-empty")
    }

    /// Records a reset to `value` at time `t`. A second reset at the same instant
    /// replaces the first.
    pub fn reset(&mut self, t: Time, value: Time) {
        let (lt, lv) = self.last();
        debug_assert!(t >= lt, "breakpoints must be appended in time order");
        debug_assert!(value >= 0.0);
        debug_assert!(
            value <= lv + (t - lt) + 1e-9,
            "sawtooth jumps are downward only"
        );
        if t == lt {
            self.breakpoints.last_mut().expect("non-empty").1 = value;
        } else {
            self.breakpoints.push((t, value));
        }
    }

    fn index_at(&self, t: Time) -> Result<usize> {
        if t < self.origin() || t.is_nan() {
            return Err(Error::BeforeOrigin(t));
        }
        Ok(self.breakpoints.partition_point(|&(bt, _)| bt <= t) - 1)
    }

    /// Value at `t`, right-continuous at breakpoints.
    pub fn value_at(&self, t: Time) -> Result<Time> {
        let (bt, bv) = self.breakpoints[self.index_at(t)?];
        Ok(bv + (t - bt))
    }

    /// Value just before `t` (the peak, when `t` is a breakpoint).
    pub fn value_before(&self, t: Time) -> Result<Time> {
        if t <= self.origin() {
            return Err(Error::BeforeOrigin(t));
        }
        let idx = self.breakpoints.partition_point(|&(bt, _)| bt < t) - 1;
        let (bt, bv) = self.breakpoints[idx];
        Ok(bv + (t - bt))
    }

    /// The unit-slope pieces covering `[t0, t1]`.
    pub fn segments(&self, t0: Time, t1: Time) -> Result<Vec<Segment>> {
        if !(t0 < t1) || t1 > self.end {
            return Err(Error::Interval(t0, t1));
        }
        let first = self.index_at(t0)?;
        let mut out = Vec::new();
        let mut cursor = t0;
        for (k, &(bt, bv)) in self.breakpoints.iter().enumerate().skip(first) {
            if bt >= t1 {
                break;
            }
            let next = self
                .breakpoints
                .get(k + 1)
                .map_or(t1, |&(nt, _)| nt.min(t1));
            if next > cursor {
                out.push(Segment {
                    start: cursor,
                    len: next - cursor,
                    value: bv + (cursor - bt),
                });
            }
            cursor = next;
        }
        Ok(out)
    }

    /// Exact integral over `[t0, t1]`.
    pub fn integral(&self, t0: Time, t1: Time) -> Result<f64> {
        Ok(self
            .segments(t0, t1)?
            .iter()
            .map(|s| s.value * s.len + 0.5 * s.len * s.len)
            .sum())
    }

    /// Exact time average over `[t0, t1]`.
    pub fn time_average(&self, t0: Time, t1: Time) -> Result<f64> {
        Ok(self.integral(t0, t1)? / (t1 - t0))
    }
}
