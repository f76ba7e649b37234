use dbmc_core::*;

fn main() {
    let g = Geometry::reference();
    let scene = Scene::siso(&g, 1e-4).unwrap();
    let h_ref = [0.042725880057699366, 0.040504521958692116, 0.024068423093695818, 0.016091872315760033];
    let n = 100_000u64;
    for seed in [4u64, 5, 6, 7, 8] {
        let hist = simulate_hits(&scene, 0, n, 0.6, seed).unwrap();
        print!("seed {seed}: ");
        let mut worst: f64 = 0.0;
        for lag in 0..4 {
            let h = hist.counts[0][lag] as f64 / n as f64;
            let se = (h_ref[lag] * (1.0 - h_ref[lag]) / n as f64).sqrt();
            let dev: f64 = (h - h_ref[lag]) / se;
            worst = worst.max(dev.abs());
            print!("lag{lag}: {dev:+.2}se ");
        }
        println!(" worst {worst:.2}");
    }
}
