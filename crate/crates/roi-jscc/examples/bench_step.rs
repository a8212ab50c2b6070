//! Rough timing of one training step (batch forward + backward) for
//! candidate toy configurations.  Run with
//! `cargo run --release --example bench_step`.

use std::time::Instant;

use roi_jscc::autodiff::Tape;
use roi_jscc::channel::{ChannelSpec, Snr};
use roi_jscc::data::toy_image;
use roi_jscc::geometry::RoiPosition;
use roi_jscc::metrics::LossWeights;
use roi_jscc::model::codec::{AblationFlags, Codec, ModelConfig};
use roi_jscc::model::params::ParamSet;
use roi_jscc::model::pipeline::{batch_loss, forward_sample, LinkSpec, Model};
use roi_jscc::util::{stream_rng, Stream};

fn bench(name: &str, cfg: ModelConfig, size: usize, k: usize, batch: usize, steps: usize) {
    let mut ps = ParamSet::new(1);
    let model = Model::Roi(Codec::new(&mut ps, cfg).unwrap());
    let link = LinkSpec {
        channel: ChannelSpec::new(Snr::Db(10.0)),
        k_budget: k,
        tau: 0.1,
        weights: LossWeights::default(),
    };
    let images: Vec<_> = (0..batch as u64).map(|i| toy_image(7, i, size)).collect();
    let mut rng = stream_rng(7, Stream::Noise, 0, 0);

    let t0 = Instant::now();
    let mut grads_count = 0;
    for _ in 0..steps {
        let tape = Tape::new();
        let bind = ps.bind(&tape);
        let runs: Vec<_> = images
            .iter()
            .enumerate()
            .map(|(i, img)| {
                forward_sample(
                    &tape,
                    &model,
                    &bind,
                    img,
                    RoiPosition::new(1 + i % 4, 2),
                    &link,
                    &mut rng,
                )
                .unwrap()
            })
            .collect();
        let loss = batch_loss(&runs);
        let grads = tape.backward(loss);
        grads_count += bind
            .tensors()
            .iter()
            .filter(|t| grads.wrt(**t).is_some())
            .count();
    }
    let dt = t0.elapsed().as_secs_f64() / steps as f64;
    println!(
        "{name}: {:.3} s/step (batch {batch}), params {} ({} grads/step), 2000 steps = {:.1} min",
        dt,
        ps.num_scalars(),
        grads_count / steps,
        dt * 2000.0 / 60.0
    );
}

fn main() {
    let toy = ModelConfig {
        stages: 2,
        channels: vec![16, 32],
        blocks: vec![1, 1],
        c_m: 8,
        heads: 2,
        window: 4,
        n_h: 4,
        n_w: 4,
        routing_threshold: roi_jscc::geometry::DEFAULT_ROUTING_THRESHOLD,
        flags: AblationFlags::all_on(),
    };
    bench("toy-a  c=(16,32) n=(1,1) cm=8  b2", toy.clone(), 64, 1024, 2, 3);

    let mut smaller = toy.clone();
    smaller.channels = vec![12, 24];
    bench("toy-b  c=(12,24) n=(1,1) cm=8  b2", smaller, 64, 1024, 2, 3);

    let mut b1 = toy.clone();
    b1.channels = vec![16, 32];
    bench("toy-a1 c=(16,32) n=(1,1) cm=8  b1", b1, 64, 1024, 1, 3);

    bench("desk   c=(32,64) n=(1,2) cm=16 b2", ModelConfig::desk(), 64, 1024, 2, 2);
}
