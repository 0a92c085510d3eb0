//! Trade-off between the feature and CORAL terms as λ grows.
//!
//! ```text
//! cargo run --release --example lambda_sweep
//! ```

mod support;

use coralgen::synth::{SynthesisConfig, Synthesizer};
use coralgen::weights::{random_weights, ScaleRule};
use coralgen::NetworkSpec;

fn main() {
    let net = random_weights(NetworkSpec::vgg16_narrow(8), 0, ScaleRule::FanIn);
    let content = support::render_object(48);
    let style = support::render_texture(48, 0.5);
    let cfg = SynthesisConfig {
        iterations: 200,
        ..SynthesisConfig::default()
    };
    let points = Synthesizer::new(&net, cfg)
        .unwrap()
        .sweep_lambda(&content, &style, &[0.0, 1e-4, 1e-2, 1.0, 1e2, 1e4])
        .unwrap();
    println!("{:>8} {:>12} {:>12}", "lambda", "feat", "coral");
    for p in points {
        println!("{:>8.0e} {:>12.4e} {:>12.4e}", p.lambda, p.feat, p.coral);
    }
}
