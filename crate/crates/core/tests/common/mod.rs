//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tafcal::model::{Model, NetworkSpec};
use tafcal::spectral::AmplitudeMap;
use tafcal::stylecal::{AafConfig, CalibrationConfig, Mixing, Prototype, PrototypeBank, StyleContext, StyleDecision, StyleMode};
use tafcal::tensor::{Graph, Real, Shape, Tensor};

pub const SIDES: [usize; 6] = [2, 3, 4, 8, 12, 16];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random shape with `N <= 4`, `C <= 8` and sides from [`SIDES`].
pub fn random_shape(rng: &mut impl Rng) -> Shape {
    [
        rng.random_range(1..=4),
        rng.random_range(1..=8),
        SIDES[rng.random_range(0..SIDES.len())],
        SIDES[rng.random_range(0..SIDES.len())],
    ]
}

pub fn random_tensor<T: Real>(rng: &mut impl Rng, shape: Shape) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-1.0..1.0)))
}

/// Quadruple-loop DFT, `X[m,n] = Σ z[h,w] e^{-2πi(mh/H + nw/W)}`, in f64.
pub fn direct_dft<T: Real>(z: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
    let [n, c, hh, ww] = z.shape();
    let mut re = vec![0.0; z.numel()];
    let mut im = vec![0.0; z.numel()];
    for b in 0..n {
        for ch in 0..c {
            for m in 0..hh {
                for k in 0..ww {
                    let (mut sr, mut si) = (0.0, 0.0);
                    for y in 0..hh {
                        for x in 0..ww {
                            let v = z.at([b, ch, y, x]).to_f64_lossy();
                            let ang = -2.0 * PI * ((m * y) as f64 / hh as f64 + (k * x) as f64 / ww as f64);
                            sr += v * ang.cos();
                            si += v * ang.sin();
                        }
                    }
                    let o = z.offset([b, ch, m, k]);
                    re[o] = sr;
                    im[o] = si;
                }
            }
        }
    }
    (re, im)
}

pub fn max_abs_diff<T: Real>(a: &[T], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.to_f64_lossy() - y).abs())
        .fold(0.0, f64::max)
}

/// Wrapped angle difference in `[0, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

pub struct GradCheck {
    pub checked: usize,
    pub max_rel: f64,
    /// (param tensor, element, analytic, numeric)
    pub worst: (usize, usize, f64, f64),
    pub seconds: f64,
}

/// Relative error with an absolute floor on the denominator.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares tape gradients with central differences (step `h`) for every
/// parameter of `spec` with the style layer active and its branches
/// frozen: amplitude mixing with `delta` and calibration with strength `eta`.
pub fn style_network_gradcheck(spec: NetworkSpec, batch: usize, delta: f64, eta: f64, h: f64, seed: u64) -> GradCheck {
    let start = Instant::now();
    let [ch, side, _] = spec.input;
    let classes = spec.classes;
    let mut model = Model::<f64>::build(spec, seed).expect("valid spec");
    let mut r = rng(seed ^ 0xABCD);
    let x: Tensor<f64> = Tensor::from_fn([batch, ch, side, side], |_| r.random_range(0.0..1.0));
    let labels: Vec<usize> = (0..batch).map(|i| i % classes).collect();

    // Prototype: positive, conjugate-symmetric map at the insertion shape.
    let mut g0 = Graph::new();
    let fp = model.forward(&mut g0, x.clone(), None).expect("forward");
    let feat = g0.value(fp.pre_style).clone();
    let (amp, _) = tafcal::spectral::decompose(&tafcal::spectral::dft2d(&feat));
    let [_, c, fh, fw] = amp.shape();
    let mut proto = Tensor::<f64>::zeros([1, c, fh, fw]);
    for i in 0..batch {
        for (p, &a) in proto.data_mut().iter_mut().zip(amp.tensor().item(i)) {
            *p += 1.3 * a / batch as f64;
        }
    }
    let bank = PrototypeBank::with_prototype(Prototype {
        map: AmplitudeMap::new(proto).expect("non-negative"),
        epoch: 0,
    });
    let partner: Vec<usize> = (0..batch).map(|i| (i + 1) % batch).collect();
    let decision = StyleDecision {
        mixing: Some(Mixing {
            partner,
            delta: vec![delta; batch],
        }),
        calibration: Some(eta),
    };
    let mut ctx = StyleContext::new(
        CalibrationConfig::default(),
        AafConfig::default(),
        StyleMode::Train {
            epoch: 0,
            total_epochs: 1,
        },
        bank,
        0,
    );
    ctx.frozen = Some(decision);

    let loss_of = |model: &Model<f64>, ctx: &mut StyleContext<f64>| -> f64 {
        let mut g = Graph::new();
        let fp = model.forward(&mut g, x.clone(), Some(ctx)).expect("forward");
        let l = g.cross_entropy(fp.logits, &labels).expect("loss");
        g.value(l).data()[0]
    };

    let mut g = Graph::new();
    let fp = model.forward(&mut g, x.clone(), Some(&mut ctx)).expect("forward");
    let l = g.cross_entropy(fp.logits, &labels).expect("loss");
    g.backward(l).expect("backward");
    let analytic: Vec<Tensor<f64>> = fp.params.iter().map(|&p| g.grad_or_zeros(p)).collect();

    let mut out = GradCheck {
        checked: 0,
        max_rel: 0.0,
        worst: (0, 0, 0.0, 0.0),
        seconds: 0.0,
    };
    for p in 0..model.params.len() {
        for e in 0..model.params[p].numel() {
            let orig = model.params[p].data()[e];
            model.params[p].data_mut()[e] = orig + h;
            let up = loss_of(&model, &mut ctx);
            model.params[p].data_mut()[e] = orig - h;
            let down = loss_of(&model, &mut ctx);
            model.params[p].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[p].data()[e];
            let err = rel_err(a, numeric);
            out.checked += 1;
            if err > out.max_rel {
                out.max_rel = err;
                out.worst = (p, e, a, numeric);
            }
        }
    }
    out.seconds = start.elapsed().as_secs_f64();
    out
}
