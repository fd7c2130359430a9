//! Gait clock and Von Mises phase indicators.
//!
//! The leg-local cycle is split into a swing window `[0, ρ)` followed by a
//! stance window `[ρ, 1)`. The phase indicator is the probability mass of a
//! Von Mises variable centred on the clock phase that falls inside a window,
//! which gives smooth steps that partition the cycle exactly.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fourier-series form of the Von Mises cumulative distribution for one
/// concentration:
///
/// `C(x) = x/2π + (1/π) Σ_n (I_n(κ)/I_0(κ)) sin(nx)/n`
///
/// `C(b) − C(a)` is the probability of the arc `[a, b]` around the mean,
/// for any real `a ≤ b` (the linear part takes care of wrapping).
#[derive(Debug, Clone, PartialEq)]
pub struct VonMisesCdf {
    kappa: f64,
    /// `I_n(κ)/I_0(κ) / n` for n = 1..
    coeffs: Vec<f64>,
}

impl VonMisesCdf {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::Domain(format!("Von Mises concentration {kappa} must be > 0")));
        }
        // Bessel ratios r_k = I_k/I_{k-1} by downward recurrence, started far
        // enough above the point where I_n/I_0 ~ exp(-n²/2κ) is negligible.
        let start = (kappa + 40.0 * kappa.sqrt() + 60.0).ceil() as usize;
        let mut ratios = vec![0.0; start + 2];
        for k in (1..=start).rev() {
            ratios[k] = 1.0 / (2.0 * k as f64 / kappa + ratios[k + 1]);
        }
        let mut coeffs = Vec::new();
        let mut a = 1.0;
        for (k, r) in ratios.iter().enumerate().take(start + 1).skip(1) {
            a *= r;
            if a < 1e-18 {
                break;
            }
            coeffs.push(a / k as f64);
        }
        Ok(VonMisesCdf { kappa, coeffs })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    fn cumulative(&self, x: f64) -> f64 {
        // sin(nx) by the Chebyshev recurrence
        let two_cos = 2.0 * x.cos();
        let (mut s_prev, mut s) = (0.0, x.sin());
        let mut acc = 0.0;
        for &c in &self.coeffs {
            acc += c * s;
            let next = two_cos * s - s_prev;
            s_prev = s;
            s = next;
        }
        x / TAU + acc / PI
    }

    /// Probability that the phase variable centred at `phi` lies in the
    /// swing window `[0, rho)`, both as cycle fractions.
    pub fn swing_probability(&self, phi: f64, rho: f64) -> f64 {
        let lo = -TAU * phi;
        let hi = TAU * (rho - phi);
        (self.cumulative(hi) - self.cumulative(lo)).clamp(0.0, 1.0)
    }

    /// Probability of the stance window `[rho, 1)`.
    pub fn stance_probability(&self, phi: f64, rho: f64) -> f64 {
        let lo = TAU * (rho - phi);
        let hi = TAU * (1.0 - phi);
        (self.cumulative(hi) - self.cumulative(lo)).clamp(0.0, 1.0)
    }

    /// Each window integrated on its own; they sum to one up to rounding.
    pub fn expectation(&self, phi: f64, rho: f64) -> PhaseExpectation {
        PhaseExpectation {
            swing: self.swing_probability(phi, rho),
            stance: self.stance_probability(phi, rho),
        }
    }
}

fn cached_cdf(kappa: f64) -> Result<Arc<VonMisesCdf>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<VonMisesCdf>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("Von Mises cache poisoned");
    if let Some(c) = map.get(&kappa.to_bits()) {
        return Ok(c.clone());
    }
    let cdf = Arc::new(VonMisesCdf::new(kappa)?);
    map.insert(kappa.to_bits(), cdf.clone());
    Ok(cdf)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseExpectation {
    pub swing: f64,
    pub stance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitParams {
    /// s
    pub period: f64,
    pub swing_ratio: f64,
    pub offset_left: f64,
    pub offset_right: f64,
    pub kappa: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        GaitParams {
            period: 0.8,
            swing_ratio: 0.4,
            offset_left: 0.0,
            offset_right: 0.5,
            kappa: 50.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaitClock {
    phase: f64,
    params: GaitParams,
    cdf: Arc<VonMisesCdf>,
}

impl PartialEq for GaitClock {
    fn eq(&self, other: &Self) -> bool {
        self.phase == other.phase && self.params == other.params
    }
}

impl Default for GaitClock {
    fn default() -> Self {
        GaitClock::new(0.0, GaitParams::default()).expect("default gait params are valid")
    }
}

fn wrap(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

impl GaitClock {
    pub fn new(phase: f64, params: GaitParams) -> Result<Self> {
        if !(params.period.is_finite() && params.period > 0.0) {
            return Err(Error::Domain(format!("gait period {} must be > 0", params.period)));
        }
        if !(params.swing_ratio > 0.0 && params.swing_ratio < 1.0) {
            return Err(Error::Domain(format!(
                "swing ratio {} must lie in (0, 1)",
                params.swing_ratio
            )));
        }
        for off in [params.offset_left, params.offset_right] {
            if !(0.0..1.0).contains(&off) {
                return Err(Error::Domain(format!("leg offset {off} must lie in [0, 1)")));
            }
        }
        if !phase.is_finite() {
            return Err(Error::Domain("phase must be finite".into()));
        }
        let cdf = cached_cdf(params.kappa)?;
        Ok(GaitClock {
            phase: wrap(phase),
            params,
            cdf,
        })
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn period(&self) -> f64 {
        self.params.period
    }

    pub fn swing_ratio(&self) -> f64 {
        self.params.swing_ratio
    }

    pub fn kappa(&self) -> f64 {
        self.params.kappa
    }

    pub fn params(&self) -> &GaitParams {
        &self.params
    }

    /// Offset of leg 0 (left) or 1 (right).
    pub fn offset(&self, leg: usize) -> f64 {
        if leg == 0 {
            self.params.offset_left
        } else {
            self.params.offset_right
        }
    }

    pub fn with_phase(&self, phase: f64) -> GaitClock {
        GaitClock {
            phase: wrap(phase),
            params: self.params.clone(),
            cdf: self.cdf.clone(),
        }
    }

    pub fn advance(&self, dt: f64) -> Result<GaitClock> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Domain(format!("clock step {dt} must be > 0")));
        }
        Ok(self.with_phase(self.phase + dt / self.params.period))
    }

    /// Leg-local phase `(φ + θ) mod 1`.
    pub fn leg_phase(&self, leg: usize) -> f64 {
        wrap(self.phase + self.offset(leg))
    }

    pub fn leg_expectation(&self, leg: usize) -> PhaseExpectation {
        self.cdf.expectation(self.leg_phase(leg), self.params.swing_ratio)
    }
}

pub fn phase_expectation(phi: f64, rho: f64, kappa: f64) -> Result<PhaseExpectation> {
    if !(0.0..1.0).contains(&phi) {
        return Err(Error::Domain(format!("phase {phi} must lie in [0, 1)")));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!("swing ratio {rho} must lie in (0, 1)")));
    }
    Ok(cached_cdf(kappa)?.expectation(phi, rho))
}

/// Stance expectations `(Q1, Q2)` of the left and right legs.
pub fn leg_stance_expectations(clock: &GaitClock) -> (f64, f64) {
    (clock.leg_expectation(0).stance, clock.leg_expectation(1).stance)
}

/// `((φ + θ) mod 1) / ρ`, the raw swing progress before any clipping.
pub fn swing_progress(phi: f64, theta: f64, rho: f64) -> f64 {
    wrap(phi + theta) / rho
}
