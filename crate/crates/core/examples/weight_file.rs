//! Write seeded random VGG-16 weights to a DGCW file, read it back and check
//! the round trip.
//!
//! ```text
//! cargo run --example weight_file -- [out.dgcw [seed]]
//! ```

use coralgen::weights::{load_weights, random_weights, write_weights, ScaleRule, WeightFile};
use coralgen::NetworkSpec;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = args.first().map(String::as_str).unwrap_or("random_vgg16.dgcw");
    let seed = args.get(1).map_or(0, |s| s.parse().expect("seed"));

    let net = random_weights(NetworkSpec::vgg16(), seed, ScaleRule::FanIn);
    write_weights(&net, path).unwrap();
    let file = WeightFile::read(path).unwrap();
    for e in &file.entries {
        println!("{:<12} {:?}", e.name, e.dims);
    }
    let back = load_weights(path, NetworkSpec::vgg16()).unwrap();
    assert_eq!(back.weights(), net.weights());
    let bytes = std::fs::metadata(path).unwrap().len();
    println!("{} entries, {bytes} bytes, means {:?} -> {path}", file.entries.len(), file.means);
}
