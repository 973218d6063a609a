//! Walks one image through the windowed sampling machinery by hand: cache
//! updates, per-epoch top-K rows, the averaged distribution and the gate.

use adasim::simcache::{FeatureCache, PairKind, SimWindow, WindowedDistribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> adasim::Result<()> {
    // Five images on a circle; image 0 drifts toward image 1 over four epochs.
    let angles = [0.0f64, 0.4, 1.6, 3.1, 4.7];
    let mut cache = FeatureCache::new(angles.len(), 2);
    for (i, a) in angles.iter().enumerate() {
        cache.update(i, &[a.cos(), a.sin()])?;
    }

    let (w, k, tau) = (3, 3, 0.1);
    let mut window = SimWindow::new(w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for epoch in 1..=4 {
        let a = 0.1 * epoch as f64;
        let z = [a.cos(), a.sin()];
        let row = cache.topk_similarities(&z, k, epoch)?;
        println!("epoch {epoch}: top-{k} {:?}", row.iter().collect::<Vec<_>>());
        cache.update(0, &z)?;
        window.push(row)?;

        if !window.is_filled() {
            println!("  window {}/{w}, standard pair", window.len());
            continue;
        }
        let dist = WindowedDistribution::from_window(&window, tau)?;
        println!("  p_win {:?}", dist.ranked());
        let d = dist.select_pair(0, &mut rng);
        match d.kind {
            PairKind::Bootstrapped => println!("  gate open, partner {}", d.partner),
            PairKind::Standard => println!("  gate closed (argmax {}), standard pair", dist.argmax()),
        }
    }

    // At zero temperature the distribution is one-hot on the argmax.
    let sharp = WindowedDistribution::from_window(&window, 0.0)?;
    println!("tau=0: {:?}", sharp.ranked());
    Ok(())
}
