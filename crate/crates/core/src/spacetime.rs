//! Flat 2+1 dimensional spacetime: events, boosts along x, lightcones and the
//! timing criteria under which a hidden-influence model loses coordination
//! between two devices.
//!
//! All free functions work in SI units (seconds, meters). A [`Metric`] carries
//! the speed of light and the lightlike tolerance explicitly, so the same
//! operations can be run in c = 1 units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Absolute tolerance for the lightlike boundary, in the metric's length unit.
pub const LIGHTLIKE_TOLERANCE: f64 = 1e-9;

// Rounding slack, relative to the magnitudes being compared.
const ULP_SLACK: f64 = 8.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl Event {
    pub fn new(t: f64, x: f64, y: f64) -> Result<Self> {
        let e = Event { t, x, y };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t.is_finite() && self.x.is_finite() && self.y.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteEvent)
        }
    }

    /// Euclidean distance between the spatial parts.
    pub fn spatial_distance(&self, other: &Event) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }
}

/// A boost along the x axis with velocity `beta` (in units of c).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Boost {
    beta: f64,
}

impl Boost {
    pub const REST: Boost = Boost { beta: 0.0 };

    pub fn new(beta: f64) -> Result<Self> {
        if beta.is_finite() && beta.abs() < 1.0 {
            Ok(Boost { beta })
        } else {
            Err(Error::InvalidBoost(beta.abs()))
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        1.0 / (1.0 - self.beta * self.beta).sqrt()
    }
}

impl TryFrom<f64> for Boost {
    type Error = Error;

    fn try_from(beta: f64) -> Result<Self> {
        Boost::new(beta)
    }
}

impl From<Boost> for f64 {
    fn from(b: Boost) -> f64 {
        b.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    Timelike,
    Lightlike,
    Spacelike,
}

/// Temporal position of the local event relative to the remote one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameOrder {
    Before,
    After,
    Simultaneous,
}

/// Speed of light plus lightlike tolerance. [`Metric::si`] is used by every
/// free function in this module; [`Metric::natural`] sets c = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub c: f64,
    pub tolerance: f64,
}

impl Default for Metric {
    fn default() -> Self {
        Metric::si()
    }
}

/// Result of [`Metric::find_point_d`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointD {
    pub event: Event,
    /// Time by which D precedes the arrival of a light signal from A at D's
    /// location. Strictly positive.
    pub advantage: f64,
}

impl Metric {
    pub const fn si() -> Self {
        Metric {
            c: SPEED_OF_LIGHT,
            tolerance: LIGHTLIKE_TOLERANCE,
        }
    }

    pub const fn natural() -> Self {
        Metric {
            c: 1.0,
            tolerance: LIGHTLIKE_TOLERANCE,
        }
    }

    pub fn boost(&self, e: &Event, b: &Boost) -> Event {
        let gamma = b.gamma();
        let beta = b.beta;
        Event {
            t: gamma * (e.t - beta * e.x / self.c),
            x: gamma * (e.x - beta * self.c * e.t),
            y: e.y,
        }
    }

    /// Squared interval c²Δt² − Δx² − Δy².
    pub fn interval(&self, e1: &Event, e2: &Event) -> f64 {
        let ct = self.c * (e2.t - e1.t);
        let dx = e2.x - e1.x;
        let dy = e2.y - e1.y;
        ct * ct - dx * dx - dy * dy
    }

    pub fn classify(&self, e1: &Event, e2: &Event) -> IntervalKind {
        // Compare lengths rather than squares: c|Δt| against the spatial
        // distance keeps the tolerance in length units.
        let ct = (self.c * (e2.t - e1.t)).abs();
        let r = e1.spatial_distance(e2);
        let tol = self.tolerance + ULP_SLACK * ct.max(r);
        let diff = ct - r;
        if diff.abs() <= tol {
            IntervalKind::Lightlike
        } else if diff > 0.0 {
            IntervalKind::Timelike
        } else {
            IntervalKind::Spacelike
        }
    }

    pub fn in_future_lightcone(&self, source: &Event, target: &Event) -> bool {
        target.t > source.t && self.classify(source, target) != IntervalKind::Spacelike
    }

    /// Order of `local` relative to `remote` as seen from a device moving with
    /// `device_boost`.
    pub fn device_frame_order(&self, local: &Event, remote: &Event, device_boost: &Boost) -> FrameOrder {
        let l = self.boost(local, device_boost);
        let r = self.boost(remote, device_boost);
        let dt = r.t - l.t;
        let tol = self.tolerance / self.c + ULP_SLACK * l.t.abs().max(r.t.abs());
        if dt.abs() <= tol {
            FrameOrder::Simultaneous
        } else if dt > 0.0 {
            FrameOrder::Before
        } else {
            FrameOrder::After
        }
    }

    /// Search for a point D in the future lightcones of `b` and `c_ev` but
    /// outside the future lightcone of `a`.
    ///
    /// D is placed on the perpendicular bisector of the B–C spatial segment
    /// (or, when B and C coincide spatially, on the line from A through B), at
    /// the earliest time both B and C can reach it. The bisector midpoint is
    /// tried first; if it fails, the line is scanned out to ten times the
    /// largest pairwise spatial distance and the best sample is refined.
    pub fn find_point_d(&self, a: &Event, b: &Event, c_ev: &Event) -> Option<PointD> {
        let bc = (c_ev.x - b.x, c_ev.y - b.y);
        let bc_len = bc.0.hypot(bc.1);
        let (origin, dir) = if bc_len > 0.0 {
            (
                ((b.x + c_ev.x) / 2.0, (b.y + c_ev.y) / 2.0),
                (-bc.1 / bc_len, bc.0 / bc_len),
            )
        } else {
            let ab = (b.x - a.x, b.y - a.y);
            let ab_len = ab.0.hypot(ab.1);
            let dir = if ab_len > 0.0 {
                (ab.0 / ab_len, ab.1 / ab_len)
            } else {
                (1.0, 0.0)
            };
            ((b.x, b.y), dir)
        };

        let candidate = |s: f64| -> PointD {
            let p = Event {
                t: 0.0,
                x: origin.0 + s * dir.0,
                y: origin.1 + s * dir.1,
            };
            let t_d = (b.t + b.spatial_distance(&p) / self.c).max(c_ev.t + c_ev.spatial_distance(&p) / self.c);
            let event = Event { t: t_d, ..p };
            let advantage = a.t + a.spatial_distance(&event) / self.c - t_d;
            PointD { event, advantage }
        };
        let accept = |d: &PointD| {
            d.advantage > 0.0
                && self.in_future_lightcone(b, &d.event)
                && self.in_future_lightcone(c_ev, &d.event)
                && !self.in_future_lightcone(a, &d.event)
        };

        let closed_form = candidate(0.0);
        if accept(&closed_form) {
            return Some(closed_form);
        }

        let mut extent = a.spatial_distance(b).max(a.spatial_distance(c_ev)).max(bc_len);
        if extent == 0.0 {
            extent = self.c * (a.t - b.t).abs().max((a.t - c_ev.t).abs()).max((b.t - c_ev.t).abs());
        }
        if extent == 0.0 {
            return None;
        }
        let radius = 10.0 * extent;
        const SAMPLES: usize = 4001;
        let step = 2.0 * radius / (SAMPLES - 1) as f64;
        let mut best: Option<(f64, PointD)> = None;
        for i in 0..SAMPLES {
            let s = -radius + step * i as f64;
            let d = candidate(s);
            if accept(&d) && best.is_none_or(|(_, bd)| d.advantage > bd.advantage) {
                best = Some((s, d));
            }
        }
        let (s0, d0) = best?;

        // Golden-section refinement inside the neighbouring samples.
        let (mut lo, mut hi) = (s0 - step, s0 + step);
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..80 {
            let m1 = hi - inv_phi * (hi - lo);
            let m2 = lo + inv_phi * (hi - lo);
            if candidate(m1).advantage < candidate(m2).advantage {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        let refined = candidate((lo + hi) / 2.0);
        if accept(&refined) && refined.advantage > d0.advantage {
            Some(refined)
        } else {
            Some(d0)
        }
    }
}

pub fn lorentz_boost(e: &Event, b: &Boost) -> Event {
    Metric::si().boost(e, b)
}

pub fn interval_classify(e1: &Event, e2: &Event) -> IntervalKind {
    Metric::si().classify(e1, e2)
}

pub fn in_future_lightcone(source: &Event, target: &Event) -> bool {
    Metric::si().in_future_lightcone(source, target)
}

pub fn device_frame_order(local: &Event, remote: &Event, device_boost: &Boost) -> FrameOrder {
    Metric::si().device_frame_order(local, remote, device_boost)
}

pub fn find_point_d(a: &Event, b: &Event, c_ev: &Event) -> Option<PointD> {
    Metric::si().find_point_d(a, b, c_ev)
}

/// Device separation `l` (m), arrival-time difference `dt` (s), device
/// recession speed `v_bb` (m/s) and hidden-influence speed `v` (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingScenario {
    pub l: f64,
    pub dt: f64,
    pub v_bb: f64,
    pub v: f64,
    #[serde(default = "default_c")]
    pub c: f64,
}

fn default_c() -> f64 {
    SPEED_OF_LIGHT
}

impl TimingScenario {
    pub fn new(l: f64, dt: f64, v_bb: f64, v: f64) -> Result<Self> {
        TimingScenario::with_c(l, dt, v_bb, v, SPEED_OF_LIGHT)
    }

    /// Same as [`TimingScenario::new`] with a caller-chosen speed of light,
    /// e.g. 1 for natural units.
    pub fn with_c(l: f64, dt: f64, v_bb: f64, v: f64, c: f64) -> Result<Self> {
        let s = TimingScenario { l, dt, v_bb, v, c };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidTiming(m.to_string()));
        if !(self.l.is_finite() && self.l > 0.0) {
            return bad("L must be positive and finite");
        }
        if !(self.dt.is_finite() && self.dt >= 0.0) {
            return bad("dt must be non-negative and finite");
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return bad("c must be positive and finite");
        }
        if !(self.v_bb.is_finite() && (0.0..self.c).contains(&self.v_bb)) {
            return bad("v_bb must satisfy 0 <= v_bb < c");
        }
        if !(self.v > 0.0) || self.v.is_nan() {
            return bad("v must be positive");
        }
        Ok(())
    }

    /// Largest arrival-time difference for which the before-before ordering
    /// still holds, v_bb·L/c².
    pub fn before_before_window(&self) -> f64 {
        self.l / c_squared_over(self.v_bb, self.c)
    }

    /// Largest arrival-time difference for which a finite-speed influence
    /// fails to cover the separation, L/v.
    pub fn finite_speed_window(&self) -> f64 {
        self.l / self.v
    }
}

// c²/s, with s = 0 mapping to +inf.
fn c_squared_over(speed: f64, c: f64) -> f64 {
    c * c / speed
}

/// Coordination disappears under multisimultaneity: dt < (v_bb/c²)·L.
///
/// Evaluated as dt < L/(c²/v_bb) so that it agrees bit-for-bit with
/// [`finite_speed_cut`] whenever v = [`equivalent_vbb`]`(v_bb)`.
pub fn before_before(s: &TimingScenario) -> bool {
    s.dt < s.before_before_window()
}

/// Coordination disappears under a finite-speed influence: L > v·dt.
pub fn finite_speed_cut(s: &TimingScenario) -> bool {
    s.dt < s.finite_speed_window()
}

/// Device recession speed equivalent to influence speed `v`: c²/v. The map
/// is an involution, so it also gives the influence speed for a given v_bb.
pub fn equivalent_vbb(v: f64) -> Result<f64> {
    equivalent_vbb_with_c(v, SPEED_OF_LIGHT)
}

pub fn equivalent_vbb_with_c(v: f64, c: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(c_squared_over(v, c))
    } else {
        Err(Error::NonPositiveSpeed(v))
    }
}
