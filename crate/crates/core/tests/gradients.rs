//! Analytic gradients against central finite differences (step 1e-4, f64).

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rede_core::attention::{self, AttentionParams};
use rede_core::distance::{conversation_buckets, segment_bucket_matrix};
use rede_core::testkit::{
    numeric_attention_grads, numeric_model_grads, random_conversation, random_small_model, relative_error,
    AttentionProbe, ProbeBias,
};
use rede_core::Mechanism;

const STEP: f64 = 1e-4;
const TOLERANCE: f64 = 1e-4;

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>() * 2.0 - 1.0)
}

#[test]
fn attention_kernel_gradients() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = random_conversation(6, 5, &mut rng);
        let grid = conversation_buckets(&conv, 2).unwrap();
        let (len, d, heads, d_r) = (conv.len(), 8, 2, 3);
        let probe = AttentionProbe {
            x: random_matrix(len, d, &mut rng),
            params: AttentionParams {
                heads,
                wq: random_matrix(d, d, &mut rng),
                wk: random_matrix(d, d, &mut rng),
                wv: random_matrix(d, d, &mut rng),
                wo: random_matrix(d, d, &mut rng),
            },
            table: random_matrix(grid.bucket_count, d_r, &mut rng),
            proj: random_matrix(heads, d_r, &mut rng),
        };
        let weights = random_matrix(len, d, &mut rng);
        let variants = [
            ("vanilla", ProbeBias::None),
            ("rede", ProbeBias::Learned(&grid)),
            ("mask", ProbeBias::Mask(&grid)),
        ];
        for (label, kind) in variants {
            let (_, cache) = attention::forward(probe.x.view(), &probe.params, probe.bias(kind)).unwrap();
            let g = attention::backward(&probe.params, probe.bias(kind), &cache, weights.view());
            let zeros_table = Array2::zeros(probe.table.dim());
            let zeros_proj = Array2::zeros(probe.proj.dim());
            let analytic = [
                &g.x,
                &g.wq,
                &g.wk,
                &g.wv,
                &g.wo,
                g.table.as_ref().unwrap_or(&zeros_table),
                g.proj.as_ref().unwrap_or(&zeros_proj),
            ];
            let numeric = numeric_attention_grads(&probe, &weights, STEP, kind);
            for ((name, num), ana) in numeric.iter().zip(analytic) {
                let err = relative_error(ana, num);
                assert!(err <= TOLERANCE, "seed {seed} {label} {name}: relative error {err:e}");
            }
        }
    }
}

#[test]
fn encoder_gradients_every_variant() {
    for mech in Mechanism::ALL {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let conv = random_conversation(6, 5, &mut rng);
            let model = random_small_model(mech, 2, 8, &mut rng);
            let input = model.prepare(&conv).unwrap();
            let label = rng.random_range(0..3);
            let (_, grads) = model.loss_and_grad(&input, label).unwrap();
            let numeric = numeric_model_grads(&model, &input, label, STEP);
            for ((name, _, ana), (_, num)) in grads.tensors().into_iter().zip(&numeric) {
                let err = relative_error(ana, num);
                assert!(err <= TOLERANCE, "{mech} seed {seed} {name}: relative error {err:e}");
            }
        }
    }
}

#[test]
fn segment_grid_gradients() {
    // segment attention through the kernel directly
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let conv = random_conversation(6, 4, &mut rng);
    let grid = segment_bucket_matrix(&conv);
    let probe = AttentionProbe {
        x: random_matrix(conv.len(), 4, &mut rng),
        params: AttentionParams {
            heads: 2,
            wq: random_matrix(4, 4, &mut rng),
            wk: random_matrix(4, 4, &mut rng),
            wv: random_matrix(4, 4, &mut rng),
            wo: random_matrix(4, 4, &mut rng),
        },
        table: random_matrix(2, 4, &mut rng),
        proj: random_matrix(2, 4, &mut rng),
    };
    let weights = random_matrix(conv.len(), 4, &mut rng);
    let kind = ProbeBias::Learned(&grid);
    let (_, cache) = attention::forward(probe.x.view(), &probe.params, probe.bias(kind)).unwrap();
    let g = attention::backward(&probe.params, probe.bias(kind), &cache, weights.view());
    let numeric = numeric_attention_grads(&probe, &weights, STEP, kind);
    assert!(relative_error(g.table.as_ref().unwrap(), &numeric[5].1) <= TOLERANCE);
    assert!(relative_error(g.proj.as_ref().unwrap(), &numeric[6].1) <= TOLERANCE);
}
