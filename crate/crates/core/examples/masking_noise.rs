//! Generates seeded masking noise and writes it as a WAV file.

use tapstroop::signal::gen_masking_noise;
use tapstroop::storage::write_wav;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map_or(Ok(1), |s| s.parse())?;
    let rate = 44_100;
    let noise = gen_masking_noise(seed, rate as usize, 0.3, rate)?;
    let mean = noise.samples.iter().sum::<f64>() / noise.len() as f64;
    let rms = (noise.samples.iter().map(|x| x * x).sum::<f64>() / noise.len() as f64).sqrt();
    println!("{} samples, mean {mean:+.5}, rms {rms:.4} (uniform: {:.4})", noise.len(), 0.3 / 3f64.sqrt());

    let again = gen_masking_noise(seed, rate as usize, 0.3, rate)?;
    println!("same seed reproduces: {}", again == noise);

    let path = std::env::temp_dir().join(format!("masking_{seed}.wav"));
    write_wav(&noise, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
