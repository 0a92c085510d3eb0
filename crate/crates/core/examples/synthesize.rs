//! Synthesize one image that keeps the content's conv3_2 features while taking
//! on the style image's channel covariances.
//!
//! ```text
//! cargo run --release --example synthesize -- [content.png style.png [weights.dgcw]]
//! ```
//!
//! Without arguments a rendered box and a wave texture are used, with a
//! narrow random-weight network. Writes `synth_out.png` and prints the trace.

mod support;

use coralgen::dataio::{save_image, PreprocSpec};
use coralgen::synth::{SynthesisConfig, Synthesizer};
use coralgen::weights::{load_weights, random_weights, ScaleRule};
use coralgen::NetworkSpec;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let net = match args.get(2) {
        Some(w) => load_weights(w, NetworkSpec::vgg16()).expect("weights"),
        None => random_weights(NetworkSpec::vgg16_narrow(4), 0, ScaleRule::FanIn),
    };
    let pre = PreprocSpec::for_network(&net);
    let content = pre.preprocess(&support::image_or(args.first(), || support::render_object(64)));
    let style = pre.preprocess(&support::image_or(args.get(1), || support::render_texture(64, 0.0)));

    let cfg = SynthesisConfig {
        iterations: 300,
        log_every: 50,
        ..SynthesisConfig::default()
    };
    let synth = Synthesizer::new(&net, cfg).unwrap();
    let (image, trace) = synth.synthesize(&content, &style).unwrap();
    for e in &trace.entries {
        println!("iter {:>4}  feat {:>11.4e}  coral {:>11.4e}  total {:>11.4e}", e.iter, e.feat, e.coral, e.total);
    }
    println!("{:.2?}, {} restarts", trace.wall_time, trace.restarts);
    save_image(&pre.deprocess(&image), "synth_out.png").unwrap();
    println!("wrote synth_out.png");
}
