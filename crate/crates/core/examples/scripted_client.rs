//! Plays a whole session between the host and a scripted client over a
//! simulated link with up to 200 ms of jitter, then checks that the logged
//! reaction times equal the ones the client measured.

use tapstroop::service::scripted::{run_scripted_session, ClientConfig, Direction, LinkConfig};
use tapstroop::service::HostConfig;
use tapstroop::storage::Event;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let link = LinkConfig {
        client_clock_ahead_us: 3_250_000,
        ..LinkConfig::jitter(42, 200_000)
    };
    let run = run_scripted_session("demo", HostConfig::default(), ClientConfig::default(), link)?;

    for (at, dir, msg) in run.transcript.iter().take(12) {
        let arrow = match dir {
            Direction::ToServer => "->",
            Direction::ToClient => "<-",
        };
        println!("{:>9} us {arrow} {:<14} {}", at, msg.kind, msg.body);
    }
    println!("... {} frames in total", run.transcript.len());
    println!("estimated client clock offset: {:.0} us", -run.clock_offset_us);

    let logged: Vec<f64> = run
        .server_log
        .records()
        .iter()
        .filter_map(|r| match r.event {
            Event::TrialResult { rt_ms, .. } => Some(rt_ms),
            _ => None,
        })
        .collect();
    let same = logged.len() == run.client.local_rts.len()
        && logged.iter().zip(&run.client.local_rts).all(|(a, (_, b))| a.to_bits() == b.to_bits());
    println!("{} RTs logged, bit-identical to client: {same}", logged.len());
    if let Some(summary) = &run.client.summary {
        println!("summary: {}", summary["summary"]);
    }
    Ok(())
}
