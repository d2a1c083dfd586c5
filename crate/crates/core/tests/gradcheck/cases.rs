//! Analytic gradients against central finite differences for every layer type.
//!
//! Shared by the `gradcheck` tests and the acceptance runner.

use cxr_severity::nn::{ConvSpec, Graph, Network, NetworkConfig, PepxConfig, SkipConfig, StageConfig, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const COORDS: usize = 120;

type Build = dyn Fn(&mut Graph<'static>, &[Var]) -> Var;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so a ±h step never crosses a ReLU kink.
fn off_zero_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = random_tensor(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    t
}

fn relative_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-6 {
        // Both gradients are essentially zero; compare absolutely.
        (a - n).abs() / 1e-6
    } else {
        (a - n).abs() / scale
    }
}

fn loss_of(inputs: &[Tensor], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &vars);
    g.value(loss).data()[0]
}

/// Checks `COORDS` random coordinates spread over all inputs; returns the worst relative error.
fn check(name: &str, inputs: Vec<Tensor>, build: &Build, seed: u64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&inputs)
        .map(|(v, t)| grads.wrt(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let total: usize = inputs.iter().map(Tensor::len).sum();
    assert!(total >= COORDS, "{name}: only {total} coordinates");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..COORDS {
        let mut flat = rng.gen_range(0..total);
        let mut which = 0;
        while flat >= inputs[which].len() {
            flat -= inputs[which].len();
            which += 1;
        }
        let mut plus = inputs.clone();
        plus[which].data_mut()[flat] += H;
        let mut minus = inputs.clone();
        minus[which].data_mut()[flat] -= H;
        let numeric = (loss_of(&plus, build) - loss_of(&minus, build)) / (2.0 * H);
        let err = relative_error(analytic[which][flat], numeric);
        assert!(
            err < TOL,
            "{name}: input {which} coord {flat}: analytic {} vs numeric {numeric} (rel {err:e})",
            analytic[which][flat]
        );
        worst = worst.max(err);
    }
    worst
}

fn projection(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn reduce(g: &mut Graph<'static>, v: Var, weights: &[f64]) -> Var {
    g.weighted_sum(v, weights).unwrap()
}

pub fn conv2d_strided_padded() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&mut rng, &[2, 3, 7, 6]);
    let w = random_tensor(&mut rng, &[4, 3, 3, 3]);
    let b = random_tensor(&mut rng, &[4]);
    let spec = ConvSpec {
        stride: 2,
        pad: 1,
        groups: 1,
    };
    let proj = projection(&mut rng, 2 * 4 * 4 * 3);
    let build = move |g: &mut Graph<'static>, v: &[Var]| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), spec).unwrap();
        reduce(g, y, &proj)
    };
    check("conv2d", vec![x, w, b], &build, 10);
}

pub fn conv2d_grouped_large_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(&mut rng, &[1, 4, 9, 9]);
    let w = random_tensor(&mut rng, &[6, 2, 5, 5]);
    let b = random_tensor(&mut rng, &[6]);
    let spec = ConvSpec {
        stride: 2,
        pad: 2,
        groups: 2,
    };
    let proj = projection(&mut rng, 6 * 5 * 5);
    let build = move |g: &mut Graph<'static>, v: &[Var]| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), spec).unwrap();
        reduce(g, y, &proj)
    };
    check("grouped conv2d", vec![x, w, b], &build, 11);
}

pub fn pointwise_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, &[2, 5, 4, 4]);
    let w = random_tensor(&mut rng, &[6, 5, 1, 1]);
    let b = random_tensor(&mut rng, &[6]);
    let proj = projection(&mut rng, 2 * 6 * 16);
    let build = move |g: &mut Graph<'static>, v: &[Var]| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), ConvSpec::POINTWISE).unwrap();
        reduce(g, y, &proj)
    };
    check("pointwise conv", vec![x, w, b], &build, 12);
}

pub fn depthwise_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&mut rng, &[2, 4, 6, 5]);
    let w = random_tensor(&mut rng, &[4, 1, 3, 3]);
    let b = random_tensor(&mut rng, &[4]);
    let spec = ConvSpec {
        stride: 1,
        pad: 1,
        groups: 4,
    };
    let proj = projection(&mut rng, 2 * 4 * 30);
    let build = move |g: &mut Graph<'static>, v: &[Var]| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), spec).unwrap();
        reduce(g, y, &proj)
    };
    check("depthwise conv", vec![x, w, b], &build, 13);
}

pub fn relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = off_zero_tensor(&mut rng, &[2, 3, 5, 5]);
    let proj = projection(&mut rng, 150);
    let build = move |g: &mut Graph<'static>, v: &[Var]| {
        let y = g.relu(v[0]).unwrap();
        reduce(g, y, &proj)
    };
    check("relu", vec![x], &build, 14);
}

pub fn add() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_tensor(&mut rng, &[2, 2, 5, 5]);
    let b = random_tensor(&mut rng, &[2, 2, 5, 5]);
    let proj = projection(&mut rng, 100);
    let build = move |g: &mut Graph<'static>, v: &[Var]| {
        let y = g.add(v[0], v[1]).unwrap();
        // Reusing an operand exercises gradient accumulation.
        let y = g.add(y, v[0]).unwrap();
        reduce(g, y, &proj)
    };
    check("add", vec![a, b], &build, 15);
}

pub fn avg_pool2() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&mut rng, &[2, 3, 7, 6]);
    let proj = projection(&mut rng, 2 * 3 * 3 * 3);
    let build = move |g: &mut Graph<'static>, v: &[Var]| {
        let y = g.avg_pool2(v[0]).unwrap();
        reduce(g, y, &proj)
    };
    check("avg_pool2", vec![x], &build, 16);
}

pub fn global_avg_pool() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_tensor(&mut rng, &[3, 4, 4, 3]);
    let proj = projection(&mut rng, 12);
    let build = move |g: &mut Graph<'static>, v: &[Var]| {
        let y = g.global_avg_pool(v[0]).unwrap();
        reduce(g, y, &proj)
    };
    check("global_avg_pool", vec![x], &build, 17);
}

pub fn dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_tensor(&mut rng, &[5, 12]);
    let w = random_tensor(&mut rng, &[7, 12]);
    let b = random_tensor(&mut rng, &[7]);
    let proj = projection(&mut rng, 35);
    let build = move |g: &mut Graph<'static>, v: &[Var]| {
        let y = g.dense(v[0], v[1], v[2]).unwrap();
        reduce(g, y, &proj)
    };
    check("dense", vec![x, w, b], &build, 18);
}

pub fn sigmoid() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut x = random_tensor(&mut rng, &[4, 30]);
    for v in x.data_mut() {
        *v *= 6.0;
    }
    let proj = projection(&mut rng, 120);
    let build = move |g: &mut Graph<'static>, v: &[Var]| {
        let y = g.sigmoid(v[0]).unwrap();
        reduce(g, y, &proj)
    };
    check("sigmoid", vec![x], &build, 19);
}

pub fn mse() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pred = random_tensor(&mut rng, &[128, 1]);
    let target: Vec<f64> = (0..128).map(|_| rng.gen()).collect();
    let build = move |g: &mut Graph<'static>, v: &[Var]| g.mse(v[0], &target).unwrap();
    check("mse", vec![pred], &build, 20);
}

pub fn weighted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_tensor(&mut rng, &[4, 40]);
    let proj = projection(&mut rng, 160);
    let build = move |g: &mut Graph<'static>, v: &[Var]| reduce(g, v[0], &proj);
    check("weighted_sum", vec![x], &build, 21);
}

fn small_network() -> NetworkConfig {
    NetworkConfig {
        input_height: 10,
        input_width: 10,
        stem_channels: 4,
        stem_kernel: 3,
        stem_stride: 1,
        stages: vec![
            StageConfig {
                blocks: vec![PepxConfig::new(4, 4), PepxConfig::new(4, 6)],
                downsample: true,
            },
            StageConfig {
                blocks: vec![PepxConfig::new(6, 6)],
                downsample: false,
            },
        ],
        skips: vec![SkipConfig { from: 0, to: 1 }],
        head_hidden: vec![5],
    }
}

/// Whole network (stem, PEPX blocks, skip, pooling, head) with respect to every parameter.
pub fn network_parameters() {
    let cfg = small_network();
    let mut net = Network::new(cfg.clone(), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    // Non-zero head so gradients reach the backbone.
    for (t, name) in net
        .params_mut()
        .tensors_mut()
        .iter_mut()
        .zip(cfg.param_specs().iter().map(|s| s.0.clone()))
    {
        if name.ends_with("bias") || name.starts_with("head.out") {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    let x = Tensor::new(vec![3, 1, 10, 10], (0..300).map(|_| rng.gen()).collect()).unwrap();
    let target = [0.2, 0.7, 0.4];

    let loss_for = |params: &cxr_severity::nn::ParamStore| {
        let net = Network::from_params(cfg.clone(), params.clone()).unwrap();
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let out = net.forward(&mut g, xv).unwrap().output;
        let loss = g.mse(out, &target).unwrap();
        g.value(loss).data()[0]
    };

    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = net.forward(&mut g, xv).unwrap().output;
    let loss = g.mse(out, &target).unwrap();
    let grads = g.backward(loss).unwrap().param_grads(net.params());

    let names: Vec<String> = net.params().names().to_vec();
    let mut checked = 0;
    for (p, name) in names.iter().enumerate() {
        let len = net.params().tensors()[p].len();
        let picks: Vec<usize> = (0..len.min(8)).map(|_| rng.gen_range(0..len)).collect();
        for j in picks {
            let mut plus = net.params().clone();
            plus.tensors_mut()[p].data_mut()[j] += H;
            let mut minus = net.params().clone();
            minus.tensors_mut()[p].data_mut()[j] -= H;
            let numeric = (loss_for(&plus) - loss_for(&minus)) / (2.0 * H);
            let analytic = grads[p].data()[j];
            let err = relative_error(analytic, numeric);
            assert!(
                err < TOL,
                "{name}[{j}]: analytic {analytic} vs numeric {numeric} (rel {err:e})"
            );
            checked += 1;
        }
    }
    assert!(checked >= 100, "only {checked} coordinates");
}

pub const CASES: &[(&str, fn())] = &[
    ("conv2d_strided_padded", conv2d_strided_padded),
    ("conv2d_grouped_large_kernel", conv2d_grouped_large_kernel),
    ("pointwise_conv", pointwise_conv),
    ("depthwise_conv", depthwise_conv),
    ("relu", relu),
    ("add", add),
    ("avg_pool2", avg_pool2),
    ("global_avg_pool", global_avg_pool),
    ("dense", dense),
    ("sigmoid", sigmoid),
    ("mse", mse),
    ("weighted_sum", weighted_sum),
    ("network_parameters", network_parameters),
];
