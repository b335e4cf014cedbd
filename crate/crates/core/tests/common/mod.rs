#![allow(dead_code)]

use latentflow::flow::FlowStack;
use latentflow::params::ParamStore;
use latentflow::rng::Rng;
use latentflow::Tensor;

/// A flow whose parameters are all moved off their identity initialization
/// by `scale·N(0, 1)`.
pub fn random_flow(
    dim: usize,
    depth: usize,
    width: usize,
    seed: u64,
    scale: f64,
) -> (ParamStore, FlowStack) {
    let mut store = ParamStore::new();
    let mut rng = Rng::seed_from_u64(seed);
    let flow = FlowStack::new(&mut store, dim, depth, width, &mut rng).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let t = store.get(id).clone();
        let noise = rng.normal_tensor(t.shape().to_vec());
        let data = t
            .data()
            .iter()
            .zip(noise.data())
            .map(|(v, n)| v + scale * n)
            .collect();
        store.set(id, Tensor::new(t.shape().to_vec(), data).unwrap());
    }
    (store, flow)
}

/// Random symmetric PSD matrix `B Bᵀ` of rank `min(k, r)`.
pub fn random_psd(k: usize, r: usize, seed: u64) -> Tensor {
    let b = Rng::seed_from_u64(seed).normal_tensor(vec![k, r]);
    b.matmul(&b.transpose().unwrap()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
