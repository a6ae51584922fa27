//! Air-to-ground channel: path-loss exponent, gain, rates and per-client latency.

use uavfl::channel::{estimate_latency, path_loss_exponent, ChannelParams, ComputeProfile, UavGeometry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ch = ChannelParams::default();
    println!("theta_deg  alpha   gain        upload_s  (d = 800 m, 1/5 of the band)");
    for theta in [10.0, 30.0, 50.0, 70.0, 90.0] {
        let g = UavGeometry { distance_m: 800.0, elevation_deg: theta };
        let alpha = path_loss_exponent(theta, &ch.env)?;
        let lat = estimate_latency(
            &ComputeProfile { gamma: 1e7, kappa: 7e4 },
            &g,
            &ch,
            10,
            200,
            101_770,
            4,
            ch.total_bandwidth_hz / 5.0,
        )?;
        println!("{theta:9.0}  {alpha:.3}  {:.3e}  {:.4}", ch.gain(&g)?, lat.upload_s);
    }
    println!("\ngamma_hz   train_s (10 epochs, 200 samples)");
    for gamma in [1e5, 1e6, 1e7, 1e8] {
        let lat = estimate_latency(
            &ComputeProfile { gamma, kappa: 7e4 },
            &UavGeometry { distance_m: 500.0, elevation_deg: 45.0 },
            &ch,
            10,
            200,
            101_770,
            4,
            ch.total_bandwidth_hz / 5.0,
        )?;
        println!("{gamma:8.0e}  {:.2}", lat.train_s);
    }
    Ok(())
}
