use eddynet::data::synth::{synth_scene, SynthConfig};
use eddynet::data::{PatchPair, Provenance};
use eddynet::loss::dice_loss;
use eddynet::model::{build_model, EddyNetConfig};
use eddynet::train::batch_tensors;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let config = SynthConfig::default();
    let patches: Vec<PatchPair> = (0..16)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let (grid, mask) = synth_scene(&config, &mut rng).unwrap();
            PatchPair {
                size: 64,
                ssh: grid.values,
                mask,
                provenance: Provenance { grid_id: format!("{i}"), row_offset: 0, col_offset: 0 },
            }
        })
        .collect();
    let refs: Vec<&PatchPair> = patches.iter().collect();

    let model_config = EddyNetConfig { input_size: (64, 64), ..EddyNetConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut weights = build_model::<f32>(&model_config, &mut rng).unwrap();

    let t = Instant::now();
    let (input, target) = batch_tensors(&refs).unwrap();
    println!("batch_tensors   {:>8.1?}", t.elapsed());

    for round in 0..3 {
        let t = Instant::now();
        let (probs, cache) = weights.forward_train(&input, &mut rng).unwrap();
        let fwd = t.elapsed();

        let t = Instant::now();
        let (_, grad) = dice_loss(&probs, &target).unwrap();
        let loss_t = t.elapsed();

        let t = Instant::now();
        let grads = weights.backward(&cache, &grad).unwrap();
        let bwd = t.elapsed();

        let t = Instant::now();
        let mut adam = weights.fresh_adam_states();
        let hyper = eddynet::nn::AdamHyper::default();
        weights.apply_gradients(&grads, &mut adam, &hyper).unwrap();
        let opt = t.elapsed();

        let t = Instant::now();
        let _ = weights.forward_infer(&input).unwrap();
        let infer = t.elapsed();
        println!("round {round}: fwd {fwd:>8.1?}  loss {loss_t:>8.1?}  bwd {bwd:>8.1?}  adam {opt:>8.1?}  infer {infer:>8.1?}");
    }
}
