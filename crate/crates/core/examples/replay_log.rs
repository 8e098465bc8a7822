//! Writes a session log to JSONL, reads it back and re-derives the summary.
//! Also shows what a log cut short looks like.

use tapstroop::participant::{run_simulated_session, ResponderModel, TapProfile};
use tapstroop::protocol::SessionConfig;
use tapstroop::signal::MaterialTable;
use tapstroop::storage::{analyze, analyze_file, write_log, write_log_file};
use tapstroop::DeviceConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let run = run_simulated_session(
        &SessionConfig::with_seed(3),
        &ResponderModel::default(),
        &TapProfile::default(),
        &MaterialTable::placeholder(),
        &DeviceConfig::default(),
    )?;
    let path = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("tapstroop_session.jsonl"), Into::into);
    write_log_file(run.log.records(), &path)?;
    println!("wrote {} records to {}", run.log.len(), path.display());
    for line in run.log.to_jsonl().lines().take(4) {
        println!("  {line}");
    }

    let live = run.summary?;
    let replayed = analyze_file(&path)?;
    println!("live     delta {:.3} ms", live.stroop_delta_ms);
    println!("replayed delta {:.3} ms, identical: {}", replayed.stroop_delta_ms, live == replayed);

    let mut cut = Vec::new();
    write_log(run.log.truncated(run.log.len() * 3 / 4).records(), &mut cut)?;
    let partial = analyze(cut.as_slice())?;
    println!(
        "first 3/4 of the log: delta {:.3} ms over {}+{} trials, partial = {}",
        partial.stroop_delta_ms, partial.n_used_congruent, partial.n_used_incongruent, partial.partial
    );
    Ok(())
}
