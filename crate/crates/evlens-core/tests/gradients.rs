//! Finite-difference oracle over a population of random architectures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use evlens_core::testkit::{
    max_input_grad_error, max_param_grad_error, random_network, ARCH_COUNT,
};

#[test]
fn gradients_match_central_differences_on_twenty_random_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(90210);
    for case in 0..20 {
        let (net, x) = random_network(&mut rng, case % ARCH_COUNT);
        let class = case % net.class_count();
        let rel = max_input_grad_error(&net, &x, class, 1e-5);
        assert!(
            rel < 1e-6,
            "case {case}: input gradient relative error {rel:.3e}"
        );
        let relp = max_param_grad_error(&net, &x, class, 1e-5);
        assert!(
            relp < 1e-6,
            "case {case}: parameter gradient relative error {relp:.3e}"
        );
    }
}

#[test]
fn batched_forward_equals_per_image_forward_bitwise() {
    use evlens_core::Tensor;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (net, _) = random_network(&mut rng, 3);
    let (c, h, w) = net.input_shape();
    let per = c * h * w;
    let mut data = Vec::new();
    for i in 0..5 {
        let (_, x) = random_network(&mut ChaCha8Rng::seed_from_u64(100 + i), 3);
        data.extend_from_slice(x.data());
    }
    let batch = Tensor::from_vec(vec![5, c, h, w], data.clone()).unwrap();
    let batched = net.forward(&batch).unwrap();
    for i in 0..5 {
        let single = Tensor::from_vec(vec![1, c, h, w], data[i * per..(i + 1) * per].to_vec())
            .unwrap();
        let out = net.forward(&single).unwrap();
        let classes = net.class_count();
        assert_eq!(
            out.data(),
            &batched.data()[i * classes..(i + 1) * classes],
            "image {i}"
        );
    }
}

#[test]
fn forward_is_pure() {
    use evlens_core::Tensor;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let (net, x) = random_network(&mut rng, 1);
    let (c, h, w) = net.input_shape();
    let batch = Tensor::from_vec(vec![1, c, h, w], x.data().to_vec()).unwrap();
    let a = net.forward(&batch).unwrap();
    let b = net.forward(&batch).unwrap();
    assert_eq!(a.data(), b.data());
}
