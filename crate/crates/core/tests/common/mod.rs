#![allow(dead_code)]

pub mod oracle;

use fluidrec::dataset::{Category, FeatureMeta, FeaturePartition};
use fluidrec::ife::{IfeModel, IfeVariant};
use fluidrec::models::{ClassifierModel, ClassifierVariant};
use fluidrec::nn::Network;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Metadata for `n_u` unchangeable, `n_i` indirect and `n_d` direct
/// features, in that order.
pub fn block_meta(n_u: usize, n_i: usize, n_d: usize) -> Vec<FeatureMeta> {
    let mut meta = Vec::new();
    for (n, cat, tag) in [
        (n_u, Category::Unchangeable, "u"),
        (n_i, Category::Indirect, "i"),
        (n_d, Category::Direct, "d"),
    ] {
        for k in 0..n {
            meta.push(FeatureMeta::new(format!("{tag}{k}"), cat, "", 0.0, 1.0));
        }
    }
    meta
}

/// Randomly initialised classifier and IFE over a shared partition.
/// `hidden = 0` gives linear models.
pub fn random_models(seed: u64, n_u: usize, n_i: usize, n_d: usize, hidden_f: usize, hidden_h: usize) -> (ClassifierModel, IfeModel) {
    let meta = block_meta(n_u, n_i, n_d);
    let names: Vec<String> = meta.iter().map(|m| m.name.clone()).collect();
    let part = FeaturePartition::from_meta(&meta).unwrap();
    let p = names.len();
    let f_dims = if hidden_f == 0 { vec![p, 1] } else { vec![p, hidden_f, 1] };
    let h_dims = if hidden_h == 0 {
        vec![n_u + n_d, n_i]
    } else {
        vec![n_u + n_d, hidden_h, n_i]
    };
    let mut f_net = Network::new(&f_dims, seed).unwrap();
    let h_net = Network::new(&h_dims, seed ^ 0x9e37_79b9).unwrap();
    // non-zero biases so hidden units are not all aligned at the origin
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    for layer in f_net.layers_mut() {
        for b in &mut layer.biases {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    let fv = if hidden_f == 0 {
        ClassifierVariant::Logistic
    } else {
        ClassifierVariant::FeedForward
    };
    let hv = if hidden_h == 0 { IfeVariant::Linear } else { IfeVariant::FeedForward };
    (
        ClassifierModel::new(fv, f_net, names.clone()).unwrap(),
        IfeModel::new(hv, h_net, &part, names).unwrap(),
    )
}

/// Smallest distance of any hidden pre-activation (classifier and IFE) or
/// IFE output (clamp boundary) from a kink, at the given point.
pub fn kink_distance(f: &ClassifierModel, h: &IfeModel, x_u: &[f64], x_d: &[f64]) -> f64 {
    let part = h.partition();
    let raw = h.predict_indirect(x_u, x_d).unwrap();
    let x_i: Vec<f64> = raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let x = part.assemble(x_u, &x_i, x_d).unwrap();
    let mut d = raw.iter().map(|v| v.abs().min((v - 1.0).abs())).fold(f64::INFINITY, f64::min);
    let h_in: Vec<f64> = x_u.iter().chain(x_d).copied().collect();
    for (net, input) in [(f.network(), &x), (h.network(), &h_in)] {
        let mut a = input.clone();
        let layers = net.layers();
        for (li, layer) in layers.iter().enumerate() {
            let z: Vec<f64> = (0..layer.outputs)
                .map(|r| layer.biases[r] + (0..layer.inputs).map(|c| layer.weight(r, c) * a[c]).sum::<f64>())
                .collect();
            if li + 1 < layers.len() {
                d = d.min(z.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min));
                a = z.iter().map(|v| v.max(0.0)).collect();
            } else {
                a = z;
            }
        }
    }
    d
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen()).collect()
}
