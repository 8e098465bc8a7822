//! Prints the seeded three-block trial schedule.

use tapstroop::protocol::{build_schedule, SessionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map_or(Ok(7), |s| s.parse())?;
    let schedule = build_schedule(&SessionConfig::with_seed(seed))?;
    println!("seed {seed}, order {:?}", schedule.block_order);
    for t in &schedule.trials {
        let tactile = t.tactile_material.map_or("-".to_string(), |m| m.to_string());
        println!("{:>2}  {:<11} visual {:<8} tactile {tactile}", t.index, t.block.to_string(), t.visual_material);
    }
    Ok(())
}
