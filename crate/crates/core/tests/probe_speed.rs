use poselift::datagen::{action_catalog, generate, GenConfig};
use poselift::lifter::{samples_from_records, train, LifterConfig};
use poselift::skeleton::{species_skeleton, Species};
use std::time::Instant;

#[test]
#[ignore]
fn probe_train_speed() {
    let skeleton = species_skeleton(Species::Macaque);
    let mut config = GenConfig::for_species(Species::Macaque);
    config.target_count = 2000;
    config.seed = 1;
    let t0 = Instant::now();
    let records = generate(&config, &skeleton, &action_catalog(&skeleton)).unwrap();
    println!("gen 2000: {:.2}s", t0.elapsed().as_secs_f64());
    let samples = samples_from_records(&records, &skeleton.soft_subset).unwrap();

    for heads in [0usize, 2, 4] {
        let mut lc = LifterConfig::for_keypoints(skeleton.soft_count());
        lc.heads = heads;
        lc.epochs = 10; // probe: extrapolate x10 for 100 epochs
        lc.seed = 1;
        let t0 = Instant::now();
        let (_, report) = train(&samples, &lc).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!(
            "heads={heads}: 10 epochs in {:.2}s (100 epochs ~ {:.1}s), val MSE {:.5}",
            dt, dt * 10.0, report.final_val_mse
        );
    }
}
