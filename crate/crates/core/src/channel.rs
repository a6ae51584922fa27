//! Compute and air-to-ground communication latency.

use serde::{Deserialize, Serialize};

use crate::error::ChannelError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputeProfile {
    /// CPU frequency in Hz.
    pub gamma: f64,
    /// CPU cycles per training sample.
    pub kappa: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavGeometry {
    pub distance_m: f64,
    pub elevation_deg: f64,
}

/// Urban-environment constants of the elevation-dependent path-loss exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConstants {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
}

impl Default for EnvConstants {
    /// Exponent between 2.0 (overhead) and about 2.2 (near the horizon).
    fn default() -> Self {
        Self { a1: 1.0, a2: 2.0, a3: 0.1, a4: 10.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Reference channel gain at 1 m.
    pub beta0: f64,
    pub env: EnvConstants,
    /// Noise power spectral density, W/Hz.
    pub noise_psd: f64,
    pub total_bandwidth_hz: f64,
    pub uav_tx_power_w: f64,
    pub bs_tx_power_w: f64,
    /// Server aggregation time, seconds.
    pub t_ag_s: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            beta0: 1e-4,
            env: EnvConstants::default(),
            // -174 dBm/Hz
            noise_psd: 3.981e-21,
            total_bandwidth_hz: 10e6,
            uav_tx_power_w: 0.28,
            bs_tx_power_w: 1.0,
            t_ag_s: 0.01,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let positive = [
            ("beta0", self.beta0),
            ("noise_psd", self.noise_psd),
            ("total_bandwidth_hz", self.total_bandwidth_hz),
            ("uav_tx_power_w", self.uav_tx_power_w),
            ("bs_tx_power_w", self.bs_tx_power_w),
            ("t_ag_s", self.t_ag_s),
            ("a3", self.env.a3),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ChannelError::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Real channel amplitude for a UAV at `geometry`.
    pub fn gain(&self, geometry: &UavGeometry) -> Result<f64, ChannelError> {
        let alpha = path_loss_exponent(geometry.elevation_deg, &self.env)?;
        channel_gain(geometry.distance_m, alpha, self.beta0)
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), ChannelError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ChannelError::InvalidInput(format!("{name} must be positive and finite, got {v}")))
    }
}

/// `a1 / (1 + a4 * exp(a3 * (theta - a4))) + a2`, saturating to `a2` when
/// the exponential overflows.
pub fn path_loss_exponent(theta_deg: f64, env: &EnvConstants) -> Result<f64, ChannelError> {
    if !(env.a3 > 0.0) {
        return Err(ChannelError::InvalidInput(format!("a3 must be positive, got {}", env.a3)));
    }
    let e = (env.a3 * (theta_deg - env.a4)).exp();
    let alpha = env.a1 / (1.0 + env.a4 * e) + env.a2;
    Ok(if alpha.is_finite() { alpha } else { env.a2 })
}

/// `sqrt(beta0) * d^(-alpha/2)`.
pub fn channel_gain(distance_m: f64, alpha: f64, beta0: f64) -> Result<f64, ChannelError> {
    check_positive("distance", distance_m)?;
    check_positive("beta0", beta0)?;
    Ok(beta0.sqrt() * distance_m.powf(-alpha / 2.0))
}

/// Shannon rate `B log2(1 + P |h|^2 / (B sigma^2))` in bit/s.
fn shannon_rate(bandwidth: f64, power: f64, h: f64, noise_psd: f64) -> Result<f64, ChannelError> {
    check_positive("bandwidth", bandwidth)?;
    check_positive("tx power", power)?;
    check_positive("channel gain", h.abs())?;
    check_positive("noise psd", noise_psd)?;
    Ok(bandwidth * (1.0 + power * h * h / (bandwidth * noise_psd)).log2())
}

pub fn uplink_rate(bandwidth_hz: f64, tx_power_w: f64, h: f64, noise_psd: f64) -> Result<f64, ChannelError> {
    shannon_rate(bandwidth_hz, tx_power_w, h, noise_psd)
}

pub fn downlink_rate(
    total_bandwidth_hz: f64,
    bs_power_w: f64,
    h: f64,
    noise_psd: f64,
) -> Result<f64, ChannelError> {
    shannon_rate(total_bandwidth_hz, bs_power_w, h, noise_psd)
}

/// `epochs * kappa * samples / gamma` seconds.
pub fn training_time(epochs: usize, kappa: f64, sample_count: usize, gamma: f64) -> Result<f64, ChannelError> {
    if epochs == 0 || sample_count == 0 {
        return Err(ChannelError::InvalidInput("epochs and sample_count must be positive".into()));
    }
    check_positive("kappa", kappa)?;
    check_positive("gamma", gamma)?;
    Ok(epochs as f64 * kappa * sample_count as f64 / gamma)
}

/// `V * z * 8 / R`: `z` is a byte count per parameter, rates are in bit/s.
pub fn upload_time(param_count: usize, param_bytes: usize, rate_bps: f64) -> Result<f64, ChannelError> {
    if param_count == 0 || param_bytes == 0 {
        return Err(ChannelError::InvalidInput("param_count and param_bytes must be positive".into()));
    }
    check_positive("rate", rate_bps)?;
    Ok((param_count * param_bytes * 8) as f64 / rate_bps)
}

pub fn download_time(param_count: usize, param_bytes: usize, rate_bps: f64) -> Result<f64, ChannelError> {
    upload_time(param_count, param_bytes, rate_bps)
}

/// Slowest participant plus the aggregation time. Download time is not counted.
pub fn round_duration(per_client_times: &[f64], t_ag: f64) -> Result<f64, ChannelError> {
    let slowest = per_client_times
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(ChannelError::EmptyRound)?;
    Ok(slowest + t_ag)
}

/// Training and upload time for one client given its bandwidth share.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyEstimate {
    pub train_s: f64,
    pub upload_s: f64,
}

impl LatencyEstimate {
    pub fn total(&self) -> f64 {
        self.train_s + self.upload_s
    }
}

pub fn estimate_latency(
    compute: &ComputeProfile,
    geometry: &UavGeometry,
    channel: &ChannelParams,
    epochs: usize,
    sample_count: usize,
    param_count: usize,
    param_bytes: usize,
    bandwidth_hz: f64,
) -> Result<LatencyEstimate, ChannelError> {
    let train_s = training_time(epochs, compute.kappa, sample_count, compute.gamma)?;
    let h = channel.gain(geometry)?;
    let rate = uplink_rate(bandwidth_hz, channel.uav_tx_power_w, h, channel.noise_psd)?;
    Ok(LatencyEstimate { train_s, upload_s: upload_time(param_count, param_bytes, rate)? })
}
