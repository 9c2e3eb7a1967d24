//! Manual timing probe for the second-order update path at sweep scale.
//! Run with: cargo test --release --test perf_probe -- --ignored --nocapture

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::time::Instant;

use unlearn::autodiff::Tape;
use unlearn::losses::{uno_graph, LossConfig};
use unlearn::models::{ClassifierModel, DecoderHead, VaeModel};

#[test]
#[ignore]
fn time_uno_step_at_sweep_scale() {
    let (input_dim, hidden, dz, b) = (784, 32, 2, 128);
    let vae = VaeModel::new(input_dim, hidden, dz, DecoderHead::Bernoulli, 1);
    let clf = ClassifierModel::new(input_dim, 64, 10, 2);
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let xr = Array2::from_shape_fn((b, input_dim), |_| rng.gen::<f64>());
    let xf = Array2::from_shape_fn((b, input_dim), |_| rng.gen::<f64>());
    let er = Array2::from_shape_fn((b, dz), |_| rng.gen::<f64>() - 0.5);
    let ef = Array2::from_shape_fn((b, dz), |_| rng.gen::<f64>() - 0.5);
    let z = Array2::from_shape_fn((b, dz), |_| rng.gen::<f64>() - 0.5);
    let cfg = LossConfig {
        beta_o_times_b: 1000.0,
        beta_h_times_b: 1000.0,
        alpha: 1e-8,
        batch_size: b,
        n_generate: b,
        stop_grad_forget: false,
    };

    for (label, guided, beta_o) in [
        ("first-order S-style (two grads)", false, 0.0),
        ("UNO (second order)", false, 1000.0),
        ("UNO-hat (second order + guidance)", true, 1000.0),
    ] {
        let mut cfg = cfg;
        cfg.beta_o_times_b = beta_o;
        let reps = 10;
        let start = Instant::now();
        for _ in 0..reps {
            let mut tape = Tape::new();
            let vars = vae.vars(&mut tape);
            let guidance = if guided { Some((&clf, &z)) } else { None };
            let g = uno_graph(
                &mut tape, &vae, &vars, &xr, &xf, &er, &ef, guidance, &cfg,
            );
            let grads = if beta_o == 0.0 {
                // first-order path: both gradients materialized
                let gr = tape.backward(g.loss, &vars.all);
                let lf = {
                    let xfc = tape.constant(xf.clone());
                    let efc = tape.constant(ef.clone());
                    unlearn::losses::vae_loss_t(&mut tape, &vae, &vars, xfc, efc)
                };
                let gf = tape.backward(lf, &vars.all);
                (gr, Some(gf))
            } else {
                (tape.backward(g.loss, &vars.all), None)
            };
            std::hint::black_box((&grads, tape.len()));
        }
        let per = start.elapsed().as_secs_f64() / reps as f64;
        println!("{label}: {:.1} ms/step", per * 1e3);
    }

    // monitoring: generate 500 + classify
    let noise = unlearn::models::NoiseBatch::sample(500, dz, 9);
    let start = Instant::now();
    for _ in 0..20 {
        let y = vae.generate(&noise).unwrap();
        let p = clf.classify_prob(&y).unwrap();
        std::hint::black_box(p.sum());
    }
    println!(
        "monitor 500 samples: {:.1} ms",
        start.elapsed().as_secs_f64() / 20.0 * 1e3
    );
}
