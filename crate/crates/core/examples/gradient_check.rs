// Checks hand-written backpropagation against finite differences and takes
// a few AdamW steps on a mapping network.

use avalign::nn::{grad_check, AdamW, AdamWConfig, Matrix, Parameters};
use avalign::clip::MappingNetwork;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> avalign::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = MappingNetwork::<f64>::new(6, 12, 4, 3, &mut rng)?;
    let x = Matrix::randn(5, 6, 1.0, &mut rng);
    let target = Matrix::randn(5, 4, 1.0, &mut rng);

    // loss = 0.5 * ||net(x) - target||^2
    let loss_of = |net: &MappingNetwork<f64>| -> avalign::Result<(f64, Matrix<f64>)> {
        let (y, _) = net.forward_cached(&x)?;
        let diff: Vec<f64> = y.as_slice().iter().zip(target.as_slice()).map(|(a, b)| a - b).collect();
        let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
        Ok((loss, Matrix::from_vec(5, 4, diff)?))
    };

    let (_, grad_y) = loss_of(&net)?;
    let (_, cache) = net.forward_cached(&x)?;
    let (_, grads) = net.backward(&cache, &grad_y)?;
    let report = grad_check(
        |p| {
            let mut probe = net.clone();
            probe.load_flat(p).unwrap();
            loss_of(&probe).unwrap().0
        },
        &net.flatten(),
        &grads.flatten(),
        1e-5,
    )?;
    println!("{} parameters, max relative error {:.2e}", report.checked, report.max_rel_error);

    let mut opt = AdamW::new(AdamWConfig { lr: 0.01, ..Default::default() });
    for step in 0..=50 {
        let (loss, grad_y) = loss_of(&net)?;
        if step % 10 == 0 {
            println!("step {step:2}  loss {loss:.4}");
        }
        let (_, cache) = net.forward_cached(&x)?;
        let (_, grads) = net.backward(&cache, &grad_y)?;
        opt.step(&mut net, &grads)?;
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> avalign::Result<()> {
    run_example()
}
