mod common;

use common::dd::{forward_dd, max_relative_gradient_error};
use freqct::denoiser::{forward, loss_and_grads, ConvNet};
use freqct::{Grid2D, GridKind, RngStream};

fn random_grid(h: usize, w: usize, seed: u64) -> Grid2D {
    let mut rng = RngStream::new(seed);
    Grid2D::from_fn(h, w, GridKind::Sinogram, |_, _| rng.uniform()).unwrap()
}

#[test]
fn double_double_forward_agrees_with_gemm_forward() {
    let net = ConvNet::kaiming(4, true, &mut RngStream::new(1));
    let x = random_grid(8, 8, 2);
    let fast = forward(&net, &x);
    for (a, b) in fast.data().iter().zip(forward_dd(&net, &x, None)) {
        assert!((a - b.to_f64()).abs() < 1e-13);
    }
}

#[test]
fn gradients_match_central_differences() {
    for seed in [10, 20] {
        for final_relu in [true, false] {
            let net = ConvNet::kaiming(4, final_relu, &mut RngStream::new(seed));
            let x = random_grid(8, 8, seed + 1);
            let t = random_grid(8, 8, seed + 2);
            let (_, grads) = loss_and_grads(&net, &x, &t).unwrap();
            let (worst, checked) = max_relative_gradient_error(&net, &x, &t, &grads, 1e-6, 1e-12);
            assert!(checked > 100);
            assert!(worst < 1e-6, "seed {seed}: worst relative error {worst}");
        }
    }
}
