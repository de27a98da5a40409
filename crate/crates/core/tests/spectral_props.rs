mod common;

use common::{angle_diff, direct_dft, max_abs_diff, random_tensor, rng, SIDES};
use proptest::prelude::*;
use rand::Rng;

use tafcal::spectral::{self, AmplitudeMap, Path};
use tafcal::stylecal::{aaf, calibrate, Prototype, PrototypeBank};
use tafcal::tensor::{Shape, Tensor};

fn shape() -> impl Strategy<Value = Shape> {
    (1usize..=3, 1usize..=4, 0..SIDES.len(), 0..SIDES.len()).prop_map(|(n, c, h, w)| [n, c, SIDES[h], SIDES[w]])
}

fn amp_map(seed: u64, shape: Shape) -> AmplitudeMap<f64> {
    let mut r = rng(seed);
    AmplitudeMap::new(Tensor::from_fn(shape, |_| r.random_range(0.0..3.0))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dft_matches_direct_sum(s in shape(), seed in any::<u64>()) {
        let z: Tensor<f64> = random_tensor(&mut rng(seed), s);
        let (re, im) = direct_dft(&z);
        let out = spectral::dft2d(&z);
        prop_assert!(max_abs_diff(out.re.data(), &re) < 1e-10);
        prop_assert!(max_abs_diff(out.im.data(), &im) < 1e-10);
        let direct = spectral::dft2d_with(&z, Path::Direct);
        prop_assert!(max_abs_diff(direct.re.data(), &re) < 1e-10);

        let z32: Tensor<f32> = z.cast();
        let (re32, im32) = direct_dft(&z32);
        let out32 = spectral::dft2d(&z32);
        prop_assert!(max_abs_diff(out32.re.data(), &re32) < 1e-5);
        prop_assert!(max_abs_diff(out32.im.data(), &im32) < 1e-5);
    }

    #[test]
    fn decompose_reconstruct_roundtrip(s in shape(), seed in any::<u64>()) {
        let z: Tensor<f64> = random_tensor(&mut rng(seed), s);
        let (a, p) = spectral::decompose(&spectral::dft2d(&z));
        let r = spectral::reconstruct(&a, &p).unwrap();
        prop_assert!(r.tensor.max_abs_diff(&z).unwrap() < 1e-10);
        prop_assert!(r.imag_residual < 1e-10);
        prop_assert!(p.tensor().data().iter().all(|&v| v > -std::f64::consts::PI && v <= std::f64::consts::PI));
    }

    #[test]
    fn linearity(s in shape(), seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut r = rng(seed);
        let x: Tensor<f64> = random_tensor(&mut r, s);
        let y: Tensor<f64> = random_tensor(&mut r, s);
        let combo = x.zip_map(&y, |u, v| a * u + b * v).unwrap();
        let (fx, fy, fc) = (spectral::dft2d(&x), spectral::dft2d(&y), spectral::dft2d(&combo));
        let expect_re = fx.re.zip_map(&fy.re, |u, v| a * u + b * v).unwrap();
        let expect_im = fx.im.zip_map(&fy.im, |u, v| a * u + b * v).unwrap();
        prop_assert!(fc.re.max_abs_diff(&expect_re).unwrap() < 1e-9);
        prop_assert!(fc.im.max_abs_diff(&expect_im).unwrap() < 1e-9);
    }

    #[test]
    fn parseval(s in shape(), seed in any::<u64>()) {
        let z: Tensor<f64> = random_tensor(&mut rng(seed), s);
        let f = spectral::dft2d(&z);
        let space: f64 = z.data().iter().map(|v| v * v).sum();
        let freq: f64 = f.re.data().iter().zip(f.im.data()).map(|(r, i)| r * r + i * i).sum::<f64>()
            / (s[2] * s[3]) as f64;
        prop_assert!((space - freq).abs() <= 1e-4 * space.max(1e-12));
    }

    #[test]
    fn conjugate_symmetry(s in shape(), seed in any::<u64>()) {
        let z: Tensor<f64> = random_tensor(&mut rng(seed), s);
        let f = spectral::dft2d(&z);
        let [n, c, h, w] = s;
        for b in 0..n { for ch in 0..c { for m in 0..h { for k in 0..w {
            let (mm, mk) = spectral::mirror(h, w, m, k);
            prop_assert!((f.re.at([b, ch, m, k]) - f.re.at([b, ch, mm, mk])).abs() < 1e-9);
            prop_assert!((f.im.at([b, ch, m, k]) + f.im.at([b, ch, mm, mk])).abs() < 1e-9);
        }}}}
    }

    #[test]
    fn gain_scales_amplitude_only(s in shape(), seed in any::<u64>(), g in 0.1f64..10.0) {
        let z: Tensor<f64> = random_tensor(&mut rng(seed), s);
        let (a, p) = spectral::decompose(&spectral::dft2d(&z));
        let (ag, pg) = spectral::decompose(&spectral::dft2d(&z.scale(g)));
        for i in 0..a.tensor().numel() {
            let (x, y) = (a.tensor().data()[i], ag.tensor().data()[i]);
            prop_assert!((y - g * x).abs() <= 1e-9 * (1.0 + g * x));
            if x > 1e-6 {
                prop_assert!(angle_diff(p.tensor().data()[i], pg.tensor().data()[i]) < 1e-9);
            }
        }
    }

    #[test]
    fn calibration_endpoints_and_composition(s in shape(), seed in any::<u64>(), s1 in 0.0f64..=1.0, s2 in 0.0f64..=1.0) {
        let a = amp_map(seed, s);
        let proto = amp_map(seed ^ 1, [1, s[1], s[2], s[3]]);
        prop_assert_eq!(calibrate(&a, &proto, 0.0).unwrap(), a.clone());
        let full = calibrate(&a, &proto, 1.0).unwrap();
        for i in 0..s[0] {
            prop_assert_eq!(full.tensor().item(i), proto.tensor().item(0));
        }
        let twice = calibrate(&calibrate(&a, &proto, s1).unwrap(), &proto, s2).unwrap();
        let once = calibrate(&a, &proto, 1.0 - (1.0 - s1) * (1.0 - s2)).unwrap();
        prop_assert!(twice.tensor().max_abs_diff(once.tensor()).unwrap() < 1e-6);
    }

    #[test]
    fn calibration_is_binwise_convex(s in shape(), seed in any::<u64>(), st in 0.0f64..=1.0) {
        let a = amp_map(seed, s);
        let proto = amp_map(seed ^ 7, [1, s[1], s[2], s[3]]);
        let out = calibrate(&a, &proto, st).unwrap();
        let per = a.tensor().item_len();
        for (i, &o) in out.tensor().data().iter().enumerate() {
            let (x, p) = (a.tensor().data()[i], proto.tensor().data()[i % per]);
            prop_assert!(o >= x.min(p) - 1e-12 && o <= x.max(p) + 1e-12);
        }
    }

    #[test]
    fn aaf_endpoints(s in shape(), seed in any::<u64>()) {
        let a = amp_map(seed, s);
        let b = amp_map(seed ^ 3, s);
        prop_assert_eq!(aaf(&a, &b, 0.0).unwrap(), b.clone());
        prop_assert_eq!(aaf(&a, &b, 1.0).unwrap(), a);
    }

    #[test]
    fn bank_streaming_equals_batch_mean(seed in any::<u64>(), cuts in proptest::collection::vec(1usize..7, 1..8)) {
        let maps: Vec<AmplitudeMap<f64>> = cuts.iter().enumerate()
            .map(|(i, &n)| amp_map(seed.wrapping_add(i as u64), [n, 2, 3, 4])).collect();
        let total: usize = cuts.iter().sum();
        let mut expect = vec![0.0; 24];
        for m in &maps {
            for (j, v) in m.tensor().data().iter().enumerate() {
                expect[j % 24] += v / total as f64;
            }
        }
        let mut bank = PrototypeBank::<f64>::new();
        for m in &maps { bank.update(m).unwrap(); }
        let proto = bank.finalize(0).unwrap();
        prop_assert!(max_abs_diff(proto.tensor().data(), &expect) < 1e-12);

        let mut reversed = PrototypeBank::<f64>::new();
        for m in maps.iter().rev() { reversed.update(m).unwrap(); }
        let back = reversed.finalize(0).unwrap();
        prop_assert!(back.tensor().max_abs_diff(proto.tensor()).unwrap() < 1e-12);
    }
}

#[test]
fn prototype_of_bank_is_previous_epoch() {
    let mut bank = PrototypeBank::<f64>::with_prototype(Prototype { map: amp_map(1, [1, 1, 2, 2]), epoch: 4 });
    assert_eq!(bank.prototype().unwrap().epoch, 4);
    bank.update(&amp_map(2, [3, 1, 2, 2])).unwrap();
    assert_eq!(bank.prototype().unwrap().epoch, 4);
    bank.finalize(5).unwrap();
    assert_eq!(bank.prototype().unwrap().epoch, 5);
    assert_eq!(bank.count(), 0);
}
