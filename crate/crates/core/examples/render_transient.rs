//! Renders one impact transient per material and writes them as WAV files.
//!
//! ```text
//! cargo run -p tapstroop --example render_transient -- [velocity] [out_dir]
//! ```

use std::path::PathBuf;

use tapstroop::signal::{render_transient, Material, MaterialTable, SynthesisConfig};
use tapstroop::storage::write_wav;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let velocity: f64 = args.next().map_or(Ok(0.6), |s| s.parse())?;
    let out_dir = args.next().map_or_else(std::env::temp_dir, PathBuf::from);

    let table = MaterialTable::placeholder();
    let config = SynthesisConfig::default();
    for material in Material::ALL {
        let params = table.get(material);
        let buf = render_transient(params, velocity, &config)?;
        let path = out_dir.join(format!("{material}_{velocity}.wav"));
        write_wav(&buf, &path)?;
        println!(
            "{material:>8}: {} samples ({:.1} ms), peak {:.3}, first codes {:?} -> {}",
            buf.len(),
            buf.duration_secs() * 1e3,
            buf.peak(),
            &buf.dac_codes()?[..4],
            path.display()
        );
    }
    Ok(())
}
