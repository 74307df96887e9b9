//! Parking residence-time model: a two-component Gamma mixture per arrival
//! hour, and the conditional probability that a parked vehicle stays at
//! least a further `τ`.
//!
//! Durations are passed in seconds and converted to hours before they meet
//! the table, whose scales are in hours. The CDF argument is either
//! `t / θ^κ` (default) or the textbook `t / θ`, selected by [`GammaArgMode`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{self, SpecialError};

pub const HOURS: usize = 24;
const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParkingError {
    #[error("duration must be non-negative, got {0}")]
    NegativeDuration(f64),
    #[error("arrival hour {0} outside 0..23")]
    BadHour(u8),
    #[error("parking table: {0}")]
    InvalidTable(String),
    #[error(transparent)]
    Special(#[from] SpecialError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GammaArgMode {
    /// `x = t / θ^κ`
    #[default]
    ThetaPowKappa,
    /// `x = t / θ`
    Theta,
}

/// Mixture parameters for one arrival hour. Scales are in hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HourMixture {
    pub kappa_s: f64,
    pub theta_s_h: f64,
    pub kappa_l: f64,
    pub theta_l_h: f64,
    pub d1: f64,
    pub d2: f64,
}

impl HourMixture {
    /// Synthetic default: a 0.5 h short-stay component (shape 1.5) and an
    /// 8 h long-stay component (shape 3), weighted 0.6 / 0.4. Placeholder
    /// values, not fitted to any dataset.
    pub const SYNTHETIC: HourMixture = HourMixture {
        kappa_s: 1.5,
        theta_s_h: 0.5,
        kappa_l: 3.0,
        theta_l_h: 8.0,
        d1: 0.6,
        d2: 0.4,
    };

    fn validate(&self, hour: usize) -> Result<(), ParkingError> {
        let bad = |what: &str| Err(ParkingError::InvalidTable(format!("hour {hour}: {what}")));
        for (name, v) in [
            ("kappa_s", self.kappa_s),
            ("theta_s_h", self.theta_s_h),
            ("kappa_l", self.kappa_l),
            ("theta_l_h", self.theta_l_h),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.d1 >= 0.0 && self.d2 >= 0.0) {
            return bad("mixture weights must be non-negative");
        }
        if (self.d1 + self.d2 - 1.0).abs() > 1e-12 {
            return bad("mixture weights must sum to 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParkingMixtureTable {
    pub gamma_arg_mode: GammaArgMode,
    pub hours: Vec<HourMixture>,
}

impl Default for ParkingMixtureTable {
    fn default() -> Self {
        Self::uniform(HourMixture::SYNTHETIC, GammaArgMode::default())
    }
}

impl ParkingMixtureTable {
    pub fn uniform(m: HourMixture, mode: GammaArgMode) -> Self {
        Self {
            gamma_arg_mode: mode,
            hours: vec![m; HOURS],
        }
    }

    pub fn validate(&self) -> Result<(), ParkingError> {
        if self.hours.len() != HOURS {
            return Err(ParkingError::InvalidTable(format!(
                "expected {HOURS} hourly rows, got {}",
                self.hours.len()
            )));
        }
        for (h, m) in self.hours.iter().enumerate() {
            m.validate(h)?;
        }
        Ok(())
    }

    pub fn hour(&self, t_a: u8) -> Result<&HourMixture, ParkingError> {
        self.hours
            .get(t_a as usize)
            .ok_or(ParkingError::BadHour(t_a))
    }

    fn arg(&self, t_h: f64, kappa: f64, theta: f64) -> f64 {
        match self.gamma_arg_mode {
            GammaArgMode::ThetaPowKappa => t_h / theta.powf(kappa),
            GammaArgMode::Theta => t_h / theta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StayQuery {
    pub parked_so_far_s: f64,
    pub horizon_s: f64,
    pub arrival_hour: u8,
}

/// Outcome of a stay-probability query. `departed` is set when the mixture
/// CDF at `t_p` is numerically 1, in which case `probability` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StayProbability {
    pub probability: f64,
    pub departed: bool,
}

/// Lower incomplete gamma γ(k, x).
pub fn lower_incomplete_gamma(k: f64, x: f64) -> Result<f64, ParkingError> {
    Ok(special::lower_incomplete_gamma(k, x)?)
}

fn check_duration(t: f64) -> Result<(), ParkingError> {
    if t >= 0.0 {
        Ok(())
    } else {
        Err(ParkingError::NegativeDuration(t))
    }
}

/// Mixture CDF of the residence time at `t_p` seconds.
pub fn residence_cdf(t_p: f64, t_a: u8, tbl: &ParkingMixtureTable) -> Result<f64, ParkingError> {
    check_duration(t_p)?;
    let m = tbl.hour(t_a)?;
    let t_h = t_p / SECONDS_PER_HOUR;
    let ps = special::regularized_lower_gamma(m.kappa_s, tbl.arg(t_h, m.kappa_s, m.theta_s_h))?;
    let pl = special::regularized_lower_gamma(m.kappa_l, tbl.arg(t_h, m.kappa_l, m.theta_l_h))?;
    Ok((m.d1 * ps + m.d2 * pl).clamp(0.0, 1.0))
}

/// Mixture survival function 1 − F, evaluated from the upper incomplete
/// gamma so the tail keeps its relative precision.
pub fn residence_survival(
    t_p: f64,
    t_a: u8,
    tbl: &ParkingMixtureTable,
) -> Result<f64, ParkingError> {
    check_duration(t_p)?;
    let m = tbl.hour(t_a)?;
    let t_h = t_p / SECONDS_PER_HOUR;
    let qs = special::regularized_upper_gamma(m.kappa_s, tbl.arg(t_h, m.kappa_s, m.theta_s_h))?;
    let ql = special::regularized_upper_gamma(m.kappa_l, tbl.arg(t_h, m.kappa_l, m.theta_l_h))?;
    // d1 + d2 = 1, so 1 − (d1 P_s + d2 P_l) = d1 Q_s + d2 Q_l.
    Ok((m.d1 * qs + m.d2 * ql).clamp(0.0, 1.0))
}

/// P[T > t_p + τ | T > t_p] as the survival ratio.
pub fn stay_probability(
    q: &StayQuery,
    tbl: &ParkingMixtureTable,
) -> Result<StayProbability, ParkingError> {
    check_duration(q.parked_so_far_s)?;
    check_duration(q.horizon_s)?;
    let s0 = residence_survival(q.parked_so_far_s, q.arrival_hour, tbl)?;
    if s0 <= 0.0 {
        return Ok(StayProbability {
            probability: 0.0,
            departed: true,
        });
    }
    if q.horizon_s == 0.0 {
        return Ok(StayProbability {
            probability: 1.0,
            departed: false,
        });
    }
    let s1 = residence_survival(q.parked_so_far_s + q.horizon_s, q.arrival_hour, tbl)?;
    Ok(StayProbability {
        probability: (s1 / s0).clamp(0.0, 1.0),
        departed: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_table(scale_h: f64) -> ParkingMixtureTable {
        ParkingMixtureTable::uniform(
            HourMixture {
                kappa_s: 1.0,
                theta_s_h: scale_h,
                kappa_l: 2.0,
                theta_l_h: 3.0,
                d1: 1.0,
                d2: 0.0,
            },
            GammaArgMode::ThetaPowKappa,
        )
    }

    #[test]
    fn cdf_endpoints() {
        let tbl = ParkingMixtureTable::default();
        assert_eq!(residence_cdf(0.0, 5, &tbl).unwrap(), 0.0);
        let far = residence_cdf(1e9, 5, &tbl).unwrap();
        assert!((far - 1.0).abs() < 1e-12);
        assert!(residence_cdf(-1.0, 5, &tbl).is_err());
        assert!(residence_cdf(1.0, 24, &tbl).is_err());
    }

    #[test]
    fn exponential_special_case() {
        let tbl = exp_table(2.0);
        for &t in &[60.0, 3600.0, 20_000.0] {
            let f = residence_cdf(t, 0, &tbl).unwrap();
            let expect = 1.0 - (-(t / 3600.0) / 2.0).exp();
            assert!((f - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn stay_at_zero_horizon_is_one() {
        let tbl = ParkingMixtureTable::default();
        let p = stay_probability(
            &StayQuery {
                parked_so_far_s: 5000.0,
                horizon_s: 0.0,
                arrival_hour: 3,
            },
            &tbl,
        )
        .unwrap();
        assert_eq!(p.probability, 1.0);
        assert!(!p.departed);
    }

    #[test]
    fn departed_vehicle_flags_zero() {
        let tbl = exp_table(0.001);
        let p = stay_probability(
            &StayQuery {
                parked_so_far_s: 1e7,
                horizon_s: 10.0,
                arrival_hour: 0,
            },
            &tbl,
        )
        .unwrap();
        assert!(p.departed);
        assert_eq!(p.probability, 0.0);
    }

    #[test]
    fn theta_mode_uses_plain_scale() {
        let mut tbl = ParkingMixtureTable::uniform(
            HourMixture {
                kappa_s: 2.0,
                theta_s_h: 3.0,
                kappa_l: 2.0,
                theta_l_h: 3.0,
                d1: 0.5,
                d2: 0.5,
            },
            GammaArgMode::Theta,
        );
        // Gamma(2, θ=3 h) CDF at 3 h: 1 − 2/e
        let f = residence_cdf(3.0 * 3600.0, 0, &tbl).unwrap();
        assert!((f - (1.0 - 2.0 / std::f64::consts::E)).abs() < 1e-13);
        tbl.gamma_arg_mode = GammaArgMode::ThetaPowKappa;
        // θ^κ = 9 h², x = 3/9
        let x: f64 = 1.0 / 3.0;
        let f = residence_cdf(3.0 * 3600.0, 0, &tbl).unwrap();
        assert!((f - (1.0 - (1.0 + x) * (-x).exp())).abs() < 1e-13);
    }

    #[test]
    fn table_validation() {
        let mut tbl = ParkingMixtureTable::default();
        assert!(tbl.validate().is_ok());
        tbl.hours[4].d1 = 0.7;
        assert!(tbl.validate().is_err());
        let mut tbl = ParkingMixtureTable::default();
        tbl.hours.pop();
        assert!(tbl.validate().is_err());
    }
}
