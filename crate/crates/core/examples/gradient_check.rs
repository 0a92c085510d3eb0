//! Compare the analytic pixel gradient of the combined objective with central
//! finite differences on a small double-precision network.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use coralgen::synth::{SynthesisConfig, Synthesizer};
use coralgen::weights::{random_weights, ScaleRule};
use coralgen::{LayerWeight, LossConfig, NetworkSpec, Shape, Tensor};

fn main() {
    let net = random_weights(NetworkSpec::vgg16_narrow(32), 3, ScaleRule::FanIn).cast::<f64>();
    let loss = LossConfig {
        feat_layers: vec![LayerWeight::new("conv2_1", 1.0)],
        coral_layers: vec![LayerWeight::new("conv1_1", 0.2), LayerWeight::new("conv2_2", 0.2)],
        lambda: 10.0,
        ..LossConfig::default()
    };
    let synth = Synthesizer::new(&net, SynthesisConfig { loss, ..Default::default() }).unwrap();
    let pattern = |k: f64| {
        Tensor::<f64>::from_fn(Shape::image(3, 8, 8), move |_, c, y, x| {
            ((x as f64 * 0.9 + y as f64 * 1.3 + c as f64) * k).sin()
        })
        .unwrap()
    };
    let (c, r, d) = (pattern(1.0), pattern(2.3), pattern(0.7));
    let ct = synth.content_targets(&c).unwrap();
    let st = synth.style_targets(&r).unwrap();
    let (obj, grad) = synth.pixel_gradient(&d, &ct, &st).unwrap();
    println!("feat {:.6e}  coral {:.6e}  total {:.6e}", obj.feat, obj.coral, obj.total);

    let h = 1e-5;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..d.data().len() {
        let mut p = d.clone();
        p.data_mut()[i] += h;
        let mut m = d.clone();
        m.data_mut()[i] -= h;
        let fd = (synth.evaluate(&p, &ct, &st).unwrap().total - synth.evaluate(&m, &ct, &st).unwrap().total) / (2.0 * h);
        num += (grad.data()[i] - fd).powi(2);
        den += fd * fd;
    }
    println!("relative error {:.3e} over {} pixels", (num / den).sqrt(), d.data().len());
}
