//! Finite-difference verification of every backward pass.
//!
//! Each case rebuilds the graph from scratch per probe, perturbs one
//! input element by +-h, and compares the central difference against
//! the analytic gradient in f64. Kinked ops (relu, max pooling) get
//! inputs with guaranteed margins around their kink points so the
//! stencil never straddles one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{BackwardFn, Graph, ParamId, Var};
use super::losses::soften_rows;
use super::ops::{BnStats, KlDirection, Mode, Padding};
use super::tensor::Tensor;

const SEEDS: u64 = 100;
const H: f64 = 1e-4;
const TOL: f64 = 1e-5;

impl Graph<f64> {
    /// Reduce to a scalar with fixed pseudo-random weights, so backward
    /// sees a non-uniform upstream gradient.
    pub(crate) fn weighted_sum(&mut self, x: Var, seed: u64) -> Var {
        let len = self.value(x).len();
        let weights: Vec<f64> = (0..len as u64)
            .map(|i| {
                let mut z = seed
                    .wrapping_add(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add(i.wrapping_mul(0xbf58_476d_1ce4_e5b9));
                z ^= z >> 31;
                z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
                0.5 + (z % 1000) as f64 / 1000.0
            })
            .collect();
        let total: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(&weights)
            .map(|(&v, &w)| v * w)
            .sum();
        let shape = self.value(x).shape().to_vec();
        let backward: Option<BackwardFn<f64>> = self.requires_grad(x).then(|| {
            Box::new(move |_vals: &[Tensor<f64>], gout: &Tensor<f64>| {
                let g = gout.item();
                let data: Vec<f64> = weights.iter().map(|w| w * g).collect();
                vec![Some(Tensor::new(shape, data).expect("weights match input"))]
            }) as BackwardFn<f64>
        });
        self.push("weighted_sum", Tensor::scalar(total), vec![x], backward)
            .expect("weighted sum is finite")
    }
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in (-1, 1) for smooth ops.
fn smooth(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values on a coarse grid plus a per-element offset: all pairwise gaps
/// exceed 2H and nothing sits within H of zero. Safe for relu and max
/// pooling. Shapes must stay under 64 elements.
fn gapped(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let t = Tensor::from_fn(shape, |j| {
        assert!(j < 64, "gapped inputs must stay small");
        let u: f64 = rng.gen_range(-1.0..1.0);
        (u * 5.0).round() / 5.0 + 0.005 + j as f64 * 1e-3
    });
    t
}

/// Compare analytic gradients of `build` against central differences.
fn check_gradients<F>(inputs: &[Tensor<f64>], build: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| g.leaf(t.clone(), ParamId(i as u64)))
        .collect();
    let root = build(&mut g, &vars);
    assert_eq!(g.value(root).len(), 1, "gradcheck root must be scalar");
    let grads = g.backward(root).expect("backward succeeds");

    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .for_param(ParamId(i as u64))
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        for j in 0..input.len() {
            let eval = |delta: f64| -> f64 {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(ii, tt)| {
                        let mut t = tt.clone();
                        if ii == i {
                            t.data_mut()[j] += delta;
                        }
                        g.leaf(t, ParamId(ii as u64))
                    })
                    .collect();
                let root = build(&mut g, &vars);
                g.value(root).item()
            };
            let numeric = (eval(H) - eval(-H)) / (2.0 * H);
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(1e-2);
            let rel = (a - numeric).abs() / denom;
            assert!(
                rel < TOL,
                "input {i} element {j}: analytic {a}, numeric {numeric}, rel err {rel}"
            );
        }
    }
}

#[test]
fn relu_backward_matches_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let x = gapped(vec![2, 6], &mut rng);
        check_gradients(&[x], |g, v| {
            let y = g.relu(v[0]).unwrap();
            g.weighted_sum(y, seed)
        });
    }
}

#[test]
fn add_backward_matches_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let a = smooth(vec![3, 4], &mut rng);
        let b = smooth(vec![3, 4], &mut rng);
        check_gradients(&[a, b], |g, v| {
            let y = g.add(v[0], v[1]).unwrap();
            g.weighted_sum(y, seed)
        });
    }
}

#[test]
fn self_add_accumulates_correctly() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let a = smooth(vec![2, 3], &mut rng);
        check_gradients(&[a], |g, v| {
            let y = g.add(v[0], v[0]).unwrap();
            g.weighted_sum(y, seed)
        });
    }
}

#[test]
fn conv2d_backward_matches_finite_differences() {
    let variants = [
        (1usize, Padding::Same),
        (2, Padding::Same),
        (1, Padding::Valid),
        (2, Padding::Valid),
    ];
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let x = smooth(vec![2, 2, 4, 3], &mut rng);
        let w = smooth(vec![3, 2, 2, 2], &mut rng);
        let (stride, padding) = variants[(seed % 4) as usize];
        check_gradients(&[x, w], |g, v| {
            let y = g.conv2d(v[0], v[1], stride, padding).unwrap();
            g.weighted_sum(y, seed)
        });
    }
}

#[test]
fn max_pool_backward_matches_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let x = gapped(vec![1, 2, 4, 4], &mut rng);
        let (kernel, stride) = if seed % 2 == 0 { (2, 2) } else { (2, 1) };
        check_gradients(&[x], |g, v| {
            let y = g.max_pool2d(v[0], kernel, stride).unwrap();
            g.weighted_sum(y, seed)
        });
    }
}

#[test]
fn global_avg_pool_backward_matches_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let x = smooth(vec![2, 3, 2, 2], &mut rng);
        check_gradients(&[x], |g, v| {
            let y = g.global_avg_pool(v[0]).unwrap();
            g.weighted_sum(y, seed)
        });
    }
}

#[test]
fn linear_backward_matches_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let x = smooth(vec![3, 4], &mut rng);
        let w = smooth(vec![2, 4], &mut rng);
        let b = smooth(vec![2], &mut rng);
        check_gradients(&[x, w, b], |g, v| {
            let y = g.linear(v[0], v[1], v[2]).unwrap();
            g.weighted_sum(y, seed)
        });
    }
}

#[test]
fn batch_norm_train_backward_matches_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let x = smooth(vec![2, 2, 2, 2], &mut rng);
        let gamma = smooth(vec![2], &mut rng);
        let beta = smooth(vec![2], &mut rng);
        check_gradients(&[x, gamma, beta], |g, v| {
            let mut stats = BnStats::new(2);
            let y = g
                .batch_norm(v[0], v[1], v[2], &mut stats, Mode::Train, 0.1, 1e-5)
                .unwrap();
            g.weighted_sum(y, seed)
        });
    }
}

#[test]
fn batch_norm_eval_backward_matches_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let x = smooth(vec![2, 2, 2, 2], &mut rng);
        let gamma = smooth(vec![2], &mut rng);
        let beta = smooth(vec![2], &mut rng);
        check_gradients(&[x, gamma, beta], |g, v| {
            let mut stats = BnStats::new(2);
            stats.running_mean.data_mut().copy_from_slice(&[0.1, -0.2]);
            stats.running_var.data_mut().copy_from_slice(&[0.8, 1.3]);
            let y = g
                .batch_norm(v[0], v[1], v[2], &mut stats, Mode::Eval, 0.1, 1e-5)
                .unwrap();
            g.weighted_sum(y, seed)
        });
    }
}

#[test]
fn soften_backward_matches_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let logits = smooth(vec![2, 5], &mut rng);
        let temperature = if seed % 2 == 0 { 0.5 } else { 2.0 };
        check_gradients(&[logits], |g, v| {
            let y = g.soften(v[0], temperature).unwrap();
            g.weighted_sum(y, seed)
        });
    }
}

#[test]
fn cross_entropy_backward_matches_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let logits = smooth(vec![2, 4], &mut rng);
        // one hard row, one mixed row
        let targets =
            Tensor::new(vec![2, 4], vec![0.0, 1.0, 0.0, 0.0, 0.3, 0.0, 0.7, 0.0]).unwrap();
        check_gradients(&[logits], move |g, v| {
            let probs = g.soften(v[0], 1.0).unwrap();
            let t = g.constant(targets.clone());
            g.cross_entropy(probs, t).unwrap()
        });
    }
}

#[test]
fn kl_backward_matches_finite_differences_in_both_directions() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let logits = smooth(vec![2, 4], &mut rng);
        let teacher_logits: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let teacher =
            Tensor::new(vec![2, 4], soften_rows(&teacher_logits, 4, 2.0).unwrap()).unwrap();
        let direction = if seed % 2 == 0 {
            KlDirection::Forward
        } else {
            KlDirection::Reverse
        };
        check_gradients(&[logits], move |g, v| {
            let student = g.soften(v[0], 2.0).unwrap();
            let t = g.constant(teacher.clone());
            g.kl_to_teacher(student, t, direction).unwrap()
        });
    }
}

#[test]
fn combined_objective_backward_matches_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let logits = smooth(vec![2, 4], &mut rng);
        let teacher_logits: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let teacher =
            Tensor::new(vec![2, 4], soften_rows(&teacher_logits, 4, 2.0).unwrap()).unwrap();
        let targets =
            Tensor::new(vec![2, 4], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0]).unwrap();
        check_gradients(&[logits], move |g, v| {
            let probs = g.soften(v[0], 1.0).unwrap();
            let tgt = g.constant(targets.clone());
            let ce = g.cross_entropy(probs, tgt).unwrap();
            let soft = g.soften(v[0], 2.0).unwrap();
            let tch = g.constant(teacher.clone());
            let kl = g.kl_to_teacher(soft, tch, KlDirection::Forward).unwrap();
            g.add(ce, kl).unwrap()
        });
    }
}

#[test]
fn layer_chain_backward_matches_finite_differences() {
    // conv -> batch norm -> global pool -> linear -> soften -> loss
    for seed in 0..SEEDS {
        let mut rng = rng_for(seed);
        let x = smooth(vec![1, 2, 4, 3], &mut rng);
        let w1 = smooth(vec![2, 2, 2, 2], &mut rng);
        let gamma = smooth(vec![2], &mut rng);
        let beta = smooth(vec![2], &mut rng);
        let w2 = smooth(vec![3, 2], &mut rng);
        let b2 = smooth(vec![3], &mut rng);
        let targets = Tensor::new(vec![1, 3], vec![0.2, 0.5, 0.3]).unwrap();
        check_gradients(&[x, w1, gamma, beta, w2, b2], move |g, v| {
            let c = g.conv2d(v[0], v[1], 1, Padding::Same).unwrap();
            let mut stats = BnStats::new(2);
            let n = g
                .batch_norm(c, v[2], v[3], &mut stats, Mode::Train, 0.1, 1e-5)
                .unwrap();
            let p = g.global_avg_pool(n).unwrap();
            let z = g.linear(p, v[4], v[5]).unwrap();
            let probs = g.soften(z, 1.0).unwrap();
            let t = g.constant(targets.clone());
            g.cross_entropy(probs, t).unwrap()
        });
    }
}
