mod common;

use common::*;

fn assert_suite(name: &str, st: FdStats) {
    assert!(
        st.fraction() >= 0.99,
        "{name}: {}/{} entries within {FD_REL} (worst relative error {:.3e})",
        st.passed,
        st.total,
        st.worst
    );
}

#[test]
fn ray_integral_backward_matches_finite_differences() {
    let st = grad_ray_integral(3);
    assert_eq!(st.total, 220);
    assert_suite("ray integral", st);
}

#[test]
fn hash_encoder_gradients() {
    assert_suite("hash", grad_hash(4));
}

#[test]
fn decoder_head_gradients() {
    assert_suite("decoder", grad_decoder(5));
}

#[test]
fn attention_gradients() {
    assert_suite("stab", grad_stab(6));
}

#[test]
fn motion_flow_gradients() {
    assert_suite("flow", grad_flow(7));
}

#[test]
fn end_to_end_gradients() {
    assert_suite("end to end", grad_end_to_end(8));
}

#[test]
fn ray_integral_matches_adaptive_quadrature() {
    let mut r = rng(11);
    for _ in 0..100 {
        let g = random_primitive(&mut r);
        let ray = ray_near(&mut r, &g, 0.15);
        let closed = tgfield::gsplat::ray_integral_with_cull(&g, &ray, f64::INFINITY).unwrap();
        let quad = quadrature_integral(&g, &ray);
        assert!((closed - quad).abs() <= 1e-6 * quad.abs(), "{closed} vs {quad}");
    }
}
