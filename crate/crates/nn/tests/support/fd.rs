//! Central finite differences against the analytic backward passes (f64).

use mapgen_nn::{
    adversarial_loss, discriminator_loss, smooth_l1_loss, Discriminator, DiscriminatorConfig, Generator,
    GeneratorConfig, LayerSpec, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const MAX_REL_ERR: f64 = 1e-4;
/// Denominator floor for the relative error. Gradients that vanish
/// analytically (a conv bias feeding instance norm) still show ~1e-10 of
/// roundoff in the difference quotient.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < MAX_REL_ERR && self.checked > 0
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Values in ±1 kept at least `gap` away from zero (keeps ReLU-type kinks
/// outside the finite-difference stencil).
fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, v).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

struct Tracker {
    worst: f64,
    checked: usize,
}

impl Tracker {
    fn new() -> Self {
        Tracker { worst: 0.0, checked: 0 }
    }

    fn see(&mut self, analytic: f64, numeric: f64) {
        if std::env::var("FD_DEBUG").is_ok() && rel_err(analytic, numeric) > MAX_REL_ERR {
            eprintln!("analytic {analytic:e} numeric {numeric:e}");
        }
        self.worst = self.worst.max(rel_err(analytic, numeric));
        self.checked += 1;
    }

    fn finish(self, name: &str) -> CaseResult {
        CaseResult {
            name: name.to_string(),
            max_rel_err: self.worst,
            checked: self.checked,
        }
    }
}

/// Projects the output on a random direction `w` so `L = <w, f(x)>`.
pub fn check_layer(name: &str, spec: LayerSpec, in_shape: &[usize], seed: u64) -> CaseResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = spec.build::<f64>(&mut rng).unwrap();
    for p in layer.params_mut() {
        let r = random_tensor(&mut rng, p.shape(), 0.1);
        p.data_mut().copy_from_slice(r.data());
    }
    let x = random_tensor(&mut rng, in_shape, 0.05);
    let (y, cache) = layer.forward(&x).unwrap();
    let w = random_tensor(&mut rng, y.shape(), 0.0);
    let (dx, grads) = layer.backward(&cache, &w).unwrap();
    let mut t = Tracker::new();

    let mut xp = x.clone();
    for i in 0..x.numel() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + STEP;
        let up = dot(&w, &layer.infer(&xp).unwrap());
        xp.data_mut()[i] = orig - STEP;
        let down = dot(&w, &layer.infer(&xp).unwrap());
        xp.data_mut()[i] = orig;
        t.see(dx.data()[i], (up - down) / (2.0 * STEP));
    }
    let n_params = layer.params().len();
    assert_eq!(grads.len(), n_params, "{name}: one gradient per parameter tensor");
    for (pi, g) in grads.iter().enumerate() {
        for k in 0..g.numel() {
            let orig = layer.params()[pi].data()[k];
            layer.params_mut()[pi].data_mut()[k] = orig + STEP;
            let up = dot(&w, &layer.infer(&x).unwrap());
            layer.params_mut()[pi].data_mut()[k] = orig - STEP;
            let down = dot(&w, &layer.infer(&x).unwrap());
            layer.params_mut()[pi].data_mut()[k] = orig;
            t.see(g.data()[k], (up - down) / (2.0 * STEP));
        }
    }
    t.finish(name)
}

/// Differentiates a scalar function of one tensor.
fn check_scalar(
    name: &str,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    f: impl Fn(&Tensor<f64>) -> f64,
) -> CaseResult {
    let mut t = Tracker::new();
    let mut xp = x.clone();
    for i in 0..x.numel() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + STEP;
        let up = f(&xp);
        xp.data_mut()[i] = orig - STEP;
        let down = f(&xp);
        xp.data_mut()[i] = orig;
        t.see(analytic.data()[i], (up - down) / (2.0 * STEP));
    }
    t.finish(name)
}

fn probabilities(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    let v = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
    Tensor::from_vec(&[n, 1], v).unwrap()
}

pub fn loss_cases(seed: u64) -> Vec<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 1, 3, 3, 3];
    let x = random_tensor(&mut rng, &shape, 0.0);
    // Residuals spread over both branches but clear of |d| = 1.
    let y: Tensor<f64> = {
        let offs = random_tensor(&mut rng, &shape, 0.0);
        let v = x
            .data()
            .iter()
            .zip(offs.data())
            .map(|(&a, &o)| {
                let d = if o.abs() < 0.5 { o * 1.6 } else { o.signum() * (1.1 + o.abs()) };
                a - d
            })
            .collect();
        Tensor::from_vec(&shape, v).unwrap()
    };
    let sl1 = smooth_l1_loss(&x, &y).unwrap();
    let mut out = vec![check_scalar("smooth_l1_loss", &x, &sl1.grad, |t| {
        smooth_l1_loss(t, &y).unwrap().value
    })];

    let p = probabilities(&mut rng, 6);
    let adv = adversarial_loss(&p).unwrap();
    out.push(check_scalar("adversarial_loss", &p, &adv.grad, |t| {
        adversarial_loss(t).unwrap().value
    }));

    let real = probabilities(&mut rng, 6);
    let fake = probabilities(&mut rng, 6);
    let d = discriminator_loss(&real, &fake).unwrap();
    out.push(check_scalar("discriminator_loss/real", &real, &d.grad_real, |t| {
        discriminator_loss(t, &fake).unwrap().value
    }));
    out.push(check_scalar("discriminator_loss/fake", &fake, &d.grad_fake, |t| {
        discriminator_loss(&real, t).unwrap().value
    }));
    out
}

pub fn layer_cases(seed: u64) -> Vec<CaseResult> {
    let s = [2, 2, 4, 4, 4];
    vec![
        check_layer("conv3d", LayerSpec::conv(2, 3), &s, seed),
        check_layer(
            "conv3d/stride2",
            LayerSpec::Conv3d {
                in_channels: 2,
                out_channels: 2,
                kernel: 3,
                stride: 2,
                padding: 1,
                bias: true,
            },
            &s,
            seed + 1,
        ),
        check_layer(
            "conv3d/1x1-no-bias",
            LayerSpec::Conv3d {
                in_channels: 2,
                out_channels: 1,
                kernel: 1,
                stride: 1,
                padding: 0,
                bias: false,
            },
            &[1, 2, 3, 2, 4],
            seed + 2,
        ),
        check_layer(
            "instance_norm",
            LayerSpec::InstanceNorm {
                channels: 2,
                eps: 1e-5,
                affine: true,
            },
            &s,
            seed + 3,
        ),
        check_layer("prelu", LayerSpec::Prelu { channels: 2, init: 0.25 }, &s, seed + 4),
        check_layer("maxpool3d", LayerSpec::Maxpool3d, &s, seed + 5),
        check_layer("trilinear_up", LayerSpec::TrilinearUp, &[1, 2, 2, 3, 4], seed + 6),
        check_layer("adaptive_avg_pool", LayerSpec::AdaptiveAvgPool, &s, seed + 7),
        check_layer(
            "linear",
            LayerSpec::Linear {
                in_features: 6,
                out_features: 4,
            },
            &[3, 6],
            seed + 8,
        ),
        check_layer("relu", LayerSpec::Relu, &s, seed + 9),
        check_layer("sigmoid", LayerSpec::Sigmoid, &s, seed + 10),
    ]
}

/// Whole-network checks: input gradients plus every `stride`-th parameter scalar.
pub fn network_cases(seed: u64) -> Vec<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gcfg = GeneratorConfig {
        depth: 2,
        base_channels: 2,
        ..GeneratorConfig::default()
    };
    let mut g = Generator::<f64>::new(&gcfg, &mut rng).unwrap();
    for p in g.params_mut() {
        let r = random_tensor(&mut rng, p.shape(), 0.1);
        p.data_mut().copy_from_slice(r.data());
    }
    let x = random_tensor(&mut rng, &[1, 1, 8, 8, 8], 0.0);
    let (y, tape) = g.forward_train(&x).unwrap();
    let w = random_tensor(&mut rng, y.shape(), 0.0);
    let (dx, grads) = g.backward(&tape, &w).unwrap();
    let gen = check_scalar("generator/input", &x, &dx, |t| dot(&w, &g.infer(t).unwrap()));
    let mut t = Tracker::new();
    for (pi, gr) in grads.iter().enumerate() {
        for k in (0..gr.numel()).step_by(13) {
            let orig = g.params()[pi].data()[k];
            g.params_mut()[pi].data_mut()[k] = orig + STEP;
            let up = dot(&w, &g.infer(&x).unwrap());
            g.params_mut()[pi].data_mut()[k] = orig - STEP;
            let down = dot(&w, &g.infer(&x).unwrap());
            g.params_mut()[pi].data_mut()[k] = orig;
            t.see(gr.data()[k], (up - down) / (2.0 * STEP));
        }
    }
    let gp = t.finish("generator/params");

    let dcfg = DiscriminatorConfig {
        conv_channels: vec![2, 3],
        fc_widths: vec![4, 1],
        ..DiscriminatorConfig::default()
    };
    let mut d = Discriminator::<f64>::new(&dcfg, &mut rng).unwrap();
    for p in d.params_mut() {
        let r = random_tensor(&mut rng, p.shape(), 0.1);
        p.data_mut().copy_from_slice(r.data());
    }
    let x = random_tensor(&mut rng, &[2, 1, 8, 8, 8], 0.0);
    let (y, tape) = d.forward_train(&x).unwrap();
    let w = random_tensor(&mut rng, y.shape(), 0.0);
    let (dx, grads) = d.backward(&tape, &w).unwrap();
    let din = check_scalar("discriminator/input", &x, &dx, |t| dot(&w, &d.infer(t).unwrap()));
    let mut t = Tracker::new();
    for (pi, gr) in grads.iter().enumerate() {
        for k in (0..gr.numel()).step_by(3) {
            let orig = d.params()[pi].data()[k];
            d.params_mut()[pi].data_mut()[k] = orig + STEP;
            let up = dot(&w, &d.infer(&x).unwrap());
            d.params_mut()[pi].data_mut()[k] = orig - STEP;
            let down = dot(&w, &d.infer(&x).unwrap());
            d.params_mut()[pi].data_mut()[k] = orig;
            t.see(gr.data()[k], (up - down) / (2.0 * STEP));
        }
    }
    vec![gen, gp, din, t.finish("discriminator/params")]
}
