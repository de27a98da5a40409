mod common;

use common::style_network_gradcheck;
use tafcal::model::NetworkSpec;

fn check(spec: NetworkSpec, batch: usize, delta: f64, eta: f64) {
    let r = style_network_gradcheck(spec, batch, delta, eta, 1e-5, 3);
    let (p, e, a, n) = r.worst;
    eprintln!(
        "checked {} parameters, max relative error {:.3e} (param {p}[{e}]: analytic {a:.6e}, numeric {n:.6e})",
        r.checked, r.max_rel
    );
    assert!(r.max_rel < 1e-3, "max relative error {}", r.max_rel);
}

// The full default topology is checked by the acceptance target.

#[test]
fn small_network_style_after_first_block() {
    check(NetworkSpec::conv_stack([2, 8, 8], 3, &[4, 6], 1), 3, 0.3, 0.5);
}

#[test]
fn small_network_style_after_last_block() {
    check(NetworkSpec::conv_stack([1, 8, 8], 3, &[3, 5], 2), 2, 0.7, 0.25);
}

#[test]
fn swap_and_full_calibration() {
    check(NetworkSpec::conv_stack([1, 12, 12], 2, &[4, 4], 1), 2, 0.0, 1.0);
}
