//! Runs a batch of simulated sessions and reports the recovered RT delta.
//!
//! ```text
//! cargo run -p tapstroop --example simulated_session -- [sessions] [delta_ms]
//! ```

use tapstroop::participant::{batch_seeds, run_simulated_session, ResponderModel, TapProfile};
use tapstroop::protocol::SessionConfig;
use tapstroop::signal::MaterialTable;
use tapstroop::DeviceConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let sessions: u64 = args.next().map_or(Ok(20), |s| s.parse())?;
    let delta: f64 = args.next().map_or(Ok(60.0), |s| s.parse())?;

    let mut deltas = Vec::new();
    for i in 0..sessions {
        let (session_seed, model_seed) = batch_seeds(0, i);
        let model = ResponderModel {
            stroop_delta_ms: delta,
            seed: model_seed,
            ..ResponderModel::default()
        };
        let run = run_simulated_session(
            &SessionConfig::with_seed(session_seed),
            &model,
            &TapProfile::default(),
            &MaterialTable::placeholder(),
            &DeviceConfig::default(),
        )?;
        let s = run.summary?;
        println!(
            "session {i:>3}: congruent {:7.1} ms  incongruent {:7.1} ms  delta {:6.1} ms  acc {:.2}/{:.2}",
            s.mean_rt_congruent_ms, s.mean_rt_incongruent_ms, s.stroop_delta_ms, s.accuracy_congruent, s.accuracy_incongruent
        );
        deltas.push(s.stroop_delta_ms);
    }
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    println!("batch mean delta over {sessions} sessions: {mean:.2} ms (model {delta} ms)");
    Ok(())
}
