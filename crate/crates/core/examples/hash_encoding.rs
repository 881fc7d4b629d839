//! Multiresolution hash encoding of 3D points and of (point, phase) pairs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tgfield::neural::{HashConfig, HashGrid, ParamStore};

fn main() -> tgfield::Result<()> {
    let cfg = HashConfig { levels: 6, table_size_log2: 12, ..Default::default() };
    println!("resolutions per level: {:?}", cfg.resolutions()?);

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spatial = HashGrid::new(3, cfg, 0, &mut store, &mut rng)?;
    for level in 0..cfg.levels {
        println!("level {level}: {}", if spatial.is_dense(level) { "dense" } else { "hashed" });
    }
    let a = spatial.encode_point(&store, &[0.25, 0.5, 0.75])?;
    let b = spatial.encode_point(&store, &[0.25, 0.5, 0.7501])?;
    let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!("{} features; nearby points differ by at most {gap:.2e}", a.len());

    let phases = 10;
    let temporal = HashGrid::new(4, cfg, phases, &mut store, &mut rng)?;
    for phase in [0, 3, 6] {
        let t = phase as f64 / phases as f64;
        let h = temporal.encode_point(&store, &[0.25, 0.5, 0.75, t])?;
        println!("phase {phase}: first features {:+.2e} {:+.2e} {:+.2e}", h[0], h[1], h[2]);
    }
    Ok(())
}
