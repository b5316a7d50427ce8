use std::time::Instant;

use aircode::io::write_checkpoint;
use aircode::model::ModelDims;
use aircode::synth::{AugmentationParams, SynthConfig};
use aircode::train::{train, TrainConfig};

fn main() {
    let dims = ModelDims::default();
    let synth = SynthConfig::default();
    let aug = AugmentationParams::default();

    let mut cfg = TrainConfig::default();
    let t0 = Instant::now();
    let with = train(&cfg, &dims, &synth, &aug).unwrap();
    let t_with = t0.elapsed();
    println!("with: {:?}", t_with);
    write_checkpoint("/tmp/aircode_with.ckpt", &with.params).unwrap();

    cfg.disable_sparse_dense_losses = true;
    let t1 = Instant::now();
    let without = train(&cfg, &dims, &synth, &aug).unwrap();
    println!("without: {:?}", t1.elapsed());
    write_checkpoint("/tmp/aircode_without.ckpt", &without.params).unwrap();
    println!("both: {:?}", t0.elapsed());
}
