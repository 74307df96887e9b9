//! Log-distance channel: SNR and Shannon-style rate between two positions.
//!
//! Rates come out in MB/s because the bandwidth constant is expressed in MB
//! per log2-unit; see `ChannelParams::bandwidth_mb`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{ChannelParams, Point, MB_BITS};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ChannelError {
    #[error("zero distance between endpoints")]
    ZeroDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkMetric {
    pub distance_m: f64,
    pub snr: f64,
    /// MB/s
    pub rate: f64,
}

/// SNR at distance `d` metres.
pub fn snr_at(d: f64, ch: &ChannelParams) -> Result<f64, ChannelError> {
    if !(d > 0.0) {
        return Err(ChannelError::ZeroDistance);
    }
    Ok(
        ch.tx_power_w * ch.transceiver_eta * (ch.ref_distance_m / d).powf(ch.pathloss_delta)
            / ch.noise_w,
    )
}

/// Rate in MB/s for a given SNR.
pub fn rate_from_snr(snr: f64, ch: &ChannelParams) -> f64 {
    ch.bandwidth_mb * snr.ln_1p() / std::f64::consts::LN_2
}

pub fn snr(a: Point, b: Point, ch: &ChannelParams) -> Result<f64, ChannelError> {
    snr_at(a.distance(&b), ch)
}

pub fn rate(a: Point, b: Point, ch: &ChannelParams) -> Result<f64, ChannelError> {
    Ok(rate_from_snr(snr(a, b, ch)?, ch))
}

pub fn link(a: Point, b: Point, ch: &ChannelParams) -> Result<LinkMetric, ChannelError> {
    let d = a.distance(&b);
    let s = snr_at(d, ch)?;
    Ok(LinkMetric {
        distance_m: d,
        snr: s,
        rate: rate_from_snr(s, ch),
    })
}

/// Seconds needed to move `bits` over a link of `rate_mbps` MB/s.
pub fn transfer_time(bits: f64, rate_mbps: f64) -> f64 {
    bits / (rate_mbps * MB_BITS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64) -> Point {
        Point { x, y: 0.0 }
    }

    #[test]
    fn reference_distance_values() {
        let ch = ChannelParams::default();
        let s = snr(p(0.0), p(100.0), &ch).unwrap();
        let expect = 0.281_838_15 * 1.637_26e-9 / 1.2589e-13;
        assert!((s - expect).abs() / expect < 1e-14);
        assert!((s - 3665.4).abs() < 0.1);
        let r = rate(p(0.0), p(100.0), &ch).unwrap();
        assert!((r - 15.0 * (1.0 + expect).log2()).abs() < 1e-10);
        assert!((r - 177.6).abs() < 0.05);
    }

    #[test]
    fn degenerate_cases() {
        let mut ch = ChannelParams::default();
        assert_eq!(snr(p(1.0), p(1.0), &ch), Err(ChannelError::ZeroDistance));
        assert_eq!(rate_from_snr(0.0, &ch), 0.0);
        assert!((rate_from_snr(1.0, &ch) - ch.bandwidth_mb).abs() < 1e-12);
        ch.tx_power_w = 0.0;
        assert_eq!(snr(p(0.0), p(50.0), &ch).unwrap(), 0.0);
    }

    #[test]
    fn inverse_square_and_scaling() {
        let ch = ChannelParams::default();
        let s1 = snr_at(100.0, &ch).unwrap();
        let s2 = snr_at(200.0, &ch).unwrap();
        assert!((s2 * 4.0 - s1).abs() / s1 < 1e-14);
        let mut ch2 = ch;
        ch2.tx_power_w *= 3.0;
        ch2.noise_w *= 2.0;
        let s3 = snr_at(100.0, &ch2).unwrap();
        assert!((s3 - 1.5 * s1).abs() / s1 < 1e-14);
    }

    #[test]
    fn rate_strictly_decreasing() {
        let ch = ChannelParams::default();
        let mut prev = f64::INFINITY;
        for i in 1..2000 {
            let r = rate_from_snr(snr_at(i as f64 * 0.5, &ch).unwrap(), &ch);
            assert!(r < prev);
            prev = r;
        }
    }
}
