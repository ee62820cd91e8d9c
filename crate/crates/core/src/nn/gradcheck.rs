//! Central-difference check of the analytic gradients in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Checkpoint, Layer, LossKind, Mode, ModelSpec, Network, Objective};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossCase {
    CrossEntropy,
    Kl,
    Cosine,
    CosineRectified,
    Euclidean,
    Entropy,
    /// Weighted sum of several kinds over overlapping row ranges.
    Composite,
}

impl LossCase {
    pub const ALL: [LossCase; 7] = [
        LossCase::CrossEntropy,
        LossCase::Kl,
        LossCase::Cosine,
        LossCase::CosineRectified,
        LossCase::Euclidean,
        LossCase::Entropy,
        LossCase::Composite,
    ];
}

/// A dense and a convolutional network, both under 200 parameters, covering every layer kind.
pub fn check_networks() -> Vec<Network> {
    // 3·4+4 + 8 + 4·3+3 = 39 parameters, one tap after the ReLU.
    let mlp = ModelSpec {
        name: "grad-mlp".into(),
        input_shape: vec![3],
        layers: vec![
            Layer::Dense { inputs: 3, outputs: 4 },
            Layer::BatchNorm { features: 4 },
            Layer::Relu,
            Layer::Dense { inputs: 4, outputs: 3 },
        ],
        taps: vec![2],
        classes: 3,
    };
    // conv 2·1·9+2 + BN 4 + dense 8·3+3 = 51 parameters.
    let conv = ModelSpec {
        name: "grad-conv".into(),
        input_shape: vec![1, 4, 4],
        layers: vec![
            Layer::Conv2d { in_channels: 1, out_channels: 2, kernel: 3 },
            Layer::BatchNorm { features: 2 },
            Layer::Relu,
            Layer::MaxPool2d { size: 2 },
            Layer::Flatten,
            Layer::Dense { inputs: 8, outputs: 3 },
        ],
        taps: vec![3],
        classes: 3,
    };
    vec![Network::new(mlp).expect("valid spec"), Network::new(conv).expect("valid spec")]
}

fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

fn perturbed_params(net: &Network, seed: u64) -> Checkpoint<f64> {
    let mut c = net.init::<f64>(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for v in c.params.iter_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    c
}

/// Largest per-component relative error (h = 1e-5) between the analytic and the
/// central-difference gradient, on a batch of 6 random inputs in train mode.
pub fn max_relative_error(net: &Network, case: LossCase, seed: u64) -> Result<f64> {
    let b = 6;
    let mut shape = vec![b];
    shape.extend_from_slice(&net.spec().input_shape);
    let x = random_tensor(shape, seed);
    let ckpt = perturbed_params(net, seed);
    let other = perturbed_params(net, seed + 1);
    let reference = net.forward(&other, &x, Mode::Train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    let targets: Vec<usize> = (0..b).map(|_| rng.random_range(0..net.classes())).collect();
    let (ref_logits, ref_taps) = (&reference.logits, &reference.taps);
    let obj = match case {
        LossCase::CrossEntropy => Objective::cross_entropy(&targets),
        LossCase::Kl => Objective::single(b, LossKind::KlToReference { reference: ref_logits, temperature: 2.0 }),
        LossCase::Cosine => Objective::single(b, LossKind::CosineRepresentation { reference: ref_taps, rectified: false }),
        LossCase::CosineRectified => {
            Objective::single(b, LossKind::CosineRepresentation { reference: ref_taps, rectified: true })
        }
        LossCase::Euclidean => Objective::single(b, LossKind::EuclideanRepresentation { reference: ref_taps }),
        LossCase::Entropy => Objective::single(b, LossKind::Entropy),
        LossCase::Composite => {
            let mut o = Objective::default();
            o.push(0.7, 0..b / 2, LossKind::CrossEntropy { targets: &targets[..b / 2] });
            o.push(-0.3, 0..b, LossKind::Entropy);
            o.push(1.3, 0..b, LossKind::KlToReference { reference: ref_logits, temperature: 1.0 });
            o.push(0.5, 0..b, LossKind::EuclideanRepresentation { reference: ref_taps });
            o
        }
    };
    let out = net.forward(&ckpt, &x, Mode::Train)?;
    let trace = out.trace.as_ref().expect("train mode keeps a trace");
    let (_, grad) = net.backward(trace, &obj)?;

    let h = 1e-5;
    let loss_at = |c: &Checkpoint<f64>| -> Result<f64> {
        let o = net.forward(c, &x, Mode::Train)?;
        Ok(obj.evaluate(&o.logits, &o.taps)?.0)
    };
    let mut worst = 0.0f64;
    for i in 0..net.n_params() {
        let mut plus = ckpt.clone();
        plus.params[i] += h;
        let mut minus = ckpt.clone();
        minus.params[i] -= h;
        let numeric = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h);
        // Floor keeps exactly-zero components (e.g. a bias feeding batch norm) from
        // dividing round-off by round-off.
        let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-5);
        worst = worst.max(err);
    }
    Ok(worst)
}
