use copyloc::align::{DetectorParams, Method};
use copyloc::pipeline::{generate_suite, score_suite};
use copyloc::synth::Preset;

fn main() {
    let seeds: Vec<u64> = (0..50).collect();
    for preset in [Preset::Easy, Preset::Hard] {
        let pairs = generate_suite(preset, &seeds, 256).unwrap();
        for method in Method::ALL {
            let t = std::time::Instant::now();
            let r = score_suite(&pairs, method, &DetectorParams::default()).unwrap();
            println!(
                "{preset:?} {method}: R {:.3} P {:.3} F {:.3} ({:.1}s)",
                r.recall,
                r.precision,
                r.fscore,
                t.elapsed().as_secs_f64()
            );
        }
    }
}
