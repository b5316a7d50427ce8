use std::time::Instant;

fn main() {
    let dims = aircode::model::ModelDims::default();
    let synth = aircode::synth::SynthConfig::default();
    let aug = aircode::synth::AugmentationParams::default();
    let mut config = aircode::train::TrainConfig::default();
    config.steps = 12;
    let t = Instant::now();
    let out = aircode::train::train_with(&config, &dims, &synth, &aug, |step, _, _| {
        if step == 1 {
            // restart the clock after allocator warmup
            println!("first 2 steps: {:?}", t.elapsed());
        }
        Ok(())
    });
    let out = out.unwrap();
    let el = t.elapsed();
    println!("12 steps total {:?} => warm {:?}/step", el, el / 12);
    println!("last loss {}", out.trace.last().unwrap().total);
}
