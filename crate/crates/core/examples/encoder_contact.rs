//! Drives the firmware loop with a scripted tap and prints the contact.
//!
//! Pass a CSV trajectory (`t_us,angle_rad`) to use your own.

use std::fs::File;

use tapstroop::device::{DeviceConfig, DeviceSim, Trajectory};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = DeviceConfig::default();
    let trajectory = match std::env::args().nth(1) {
        Some(path) => Trajectory::read_csv(File::open(path)?)?,
        None => {
            // 2 cm approach at 0.628 m/s, a bounce, then a second tap
            let c = config.geometry.contact_angle;
            let r = config.geometry.arm_length;
            let rest = c - 0.02 / r;
            let omega = 0.628319 / r;
            let t_hit = (c - rest) / omega * 1e6;
            Trajectory::from_points([
                (0.0, rest),
                (t_hit + 2_000.0, c + 2_000e-6 * omega),
                (t_hit + 5_000.0, c - 0.002),
                (t_hit + 8_000.0, c + 0.003),
                (t_hit + 150_000.0, rest),
                (t_hit + 250_000.0, rest),
                (t_hit + 300_000.0, c + 0.01),
            ])?
        }
    };

    let end = trajectory.end_time_us() as u64 + 10_000;
    let mut sim = DeviceSim::new(config, trajectory)?;
    println!("contact threshold: count {}", config.contact_count());
    for ev in sim.run_until(end) {
        println!(
            "contact at {:>7} us (tick {:>5}): {:.4} m/s",
            ev.timestamp_us, ev.tick_index, ev.velocity
        );
    }
    println!("encoder count {}, invalid transitions {}", sim.encoder().count(), sim.encoder().invalid_transitions());
    Ok(())
}
