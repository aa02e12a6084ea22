//! Checks the analytic gradient of the full training loss (rotation head
//! and centering re-encoding included) against central finite
//! differences, parameter by parameter.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use scopenav::autodiff::{Graph, ParamGrads};
use scopenav::model::{DetectionFrame, DetectionSequence, ModelConfig, ModelParams, Slot};
use scopenav::geometry::BBox;
use scopenav::training::build_loss_graph;

fn sample_sequence(cfg: &ModelConfig) -> DetectionSequence {
    let frames = (0..cfg.seq_len)
        .map(|t| {
            let mut f = DetectionFrame::zeroed(cfg.n_classes);
            for i in 0..cfg.n_classes {
                if (t + i) % 3 != 0 {
                    f.slots[i] = Slot {
                        presence: 1.0,
                        bbox: BBox {
                            cx: 0.2 + 0.1 * i as f64 + 0.01 * t as f64,
                            cy: 0.6 - 0.05 * i as f64,
                            w: 0.1 + 0.02 * i as f64,
                            h: 0.15,
                        },
                    };
                }
            }
            f
        })
        .collect();
    DetectionSequence { frames }
}

fn main() -> scopenav::Result<()> {
    let cfg = ModelConfig {
        n_classes: 3,
        seq_len: 4,
        encoder_layers: 1,
        attention_heads: 3,
        fc_dims: [16, 12, 8],
        ff_multiplier: 2,
        class_dec_hidden: 4,
        box_dec_hidden: 6,
        token_dim: None,
        rotation_enabled: true,
        seed: 11,
    };
    let mut params = ModelParams::init(cfg)?;
    let seq = sample_sequence(params.config());
    let target = seq.last().clone();
    println!("checking {} parameters...", params.n_params());

    let mut pgrads = ParamGrads::zeros_like(params.param_set());
    {
        let mut g = Graph::new(params.param_set());
        let nodes = build_loss_graph(&mut g, &params, seq.feature_matrix(), &target)?;
        println!("loss at the check point: {:.6}", g.value(nodes.total).item());
        g.backward(nodes.total, &mut pgrads);
    }

    let eval = |params: &ModelParams| -> f64 {
        let mut g = Graph::new(params.param_set());
        let nodes =
            build_loss_graph(&mut g, params, seq.feature_matrix(), &target).expect("loss");
        g.value(nodes.total).item()
    };

    let h = 1e-5;
    let n = params.param_set().n_scalars();
    let mut worst = 0.0f64;
    let mut worst_idx = 0;
    for i in 0..n {
        let x = params.param_set().get_flat(i);
        params.param_set_mut().set_flat(i, x + h);
        let fp = eval(&params);
        params.param_set_mut().set_flat(i, x - h);
        let fm = eval(&params);
        params.param_set_mut().set_flat(i, x);
        let numeric = (fp - fm) / (2.0 * h);
        let analytic = pgrads.get_flat(i);
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
        if rel > worst {
            worst = rel;
            worst_idx = i;
        }
    }
    println!("max relative error: {worst:.3e} (parameter {worst_idx})");
    println!("bound: 1e-4  ->  {}", if worst < 1e-4 { "pass" } else { "FAIL" });
    Ok(())
}
