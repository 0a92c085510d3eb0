//! Per-layer covariance distance between two image sets, before and after
//! moving one set toward the other by synthesis.
//!
//! ```text
//! cargo run --release --example domain_metrics
//! ```

mod support;

use coralgen::metrics::{coral_distances, Aggregation, MetricsConfig};
use coralgen::synth::{SynthesisConfig, Synthesizer};
use coralgen::weights::{random_weights, ScaleRule};
use coralgen::NetworkSpec;

fn main() {
    let net = random_weights(NetworkSpec::vgg16_narrow(8), 2, ScaleRule::FanIn);
    let contents: Vec<_> = (0..3).map(|_| support::render_object(48)).collect();
    let styles: Vec<_> = (0..3).map(|k| support::render_texture(48, k as f64)).collect();

    let cfg = SynthesisConfig {
        iterations: 150,
        ..SynthesisConfig::default()
    };
    let synth = Synthesizer::new(&net, cfg).unwrap();
    let generated: Vec<_> = contents
        .iter()
        .zip(&styles)
        .map(|(c, r)| synth.synthesize(c, r).unwrap().0)
        .collect();

    for aggregation in [Aggregation::Paired, Aggregation::MeanCovariance] {
        let m = MetricsConfig {
            aggregation,
            ..MetricsConfig::default()
        };
        let before = coral_distances(&net, &contents, &styles, &m).unwrap();
        let after = coral_distances(&net, &generated, &styles, &m).unwrap();
        println!("{aggregation:?}");
        for (b, a) in before.iter().zip(&after) {
            println!("  {:<8} content {:>11.4e}  generated {:>11.4e}", b.layer, b.distance, a.distance);
        }
    }
}
