use eddynet::nn::{conv2d_backward, conv2d_forward, ConvParams};
use eddynet::Tensor4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn rt(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor4<f32> {
    Tensor4::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // the dominant layer shape: 16 batch, 32->32 channels, 64x64
    let input = rt(&mut rng, 16, 32, 64, 64);
    let params = ConvParams::new(rt(&mut rng, 32, 32, 3, 3), vec![0.0; 32]).unwrap();
    let go = rt(&mut rng, 16, 32, 64, 64);

    for _ in 0..3 {
        let t = Instant::now();
        let out = conv2d_forward(&input, &params).unwrap();
        let fwd = t.elapsed();
        let t = Instant::now();
        let (gi, gp) = conv2d_backward(&input, &params, &go).unwrap();
        let bwd = t.elapsed();
        // 16*32*32*64*64*9*2 flops
        let flops = 16.0 * 32.0 * 32.0 * 4096.0 * 9.0 * 2.0;
        println!(
            "fwd {fwd:>8.1?} ({:.1} GF/s)  bwd {bwd:>8.1?} ({:.1} GF/s)  [sink {:.2} {:.2} {:.2}]",
            flops / fwd.as_secs_f64() / 1e9,
            2.0 * flops / bwd.as_secs_f64() / 1e9,
            out.as_slice()[0], gi.as_slice()[0], gp.bias[0]
        );
    }
}
