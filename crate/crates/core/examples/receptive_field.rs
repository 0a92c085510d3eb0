//! Receptive field of every conv layer of the VGG-16 layout.
//!
//! ```text
//! cargo run --example receptive_field
//! ```

use coralgen::net::LayerKind;
use coralgen::NetworkSpec;

fn main() {
    let spec = NetworkSpec::vgg16();
    println!("{:<10} {:>6}", "layer", "rf");
    for layer in spec.layers() {
        if let LayerKind::Conv { out_channels } = layer.kind {
            let rf = spec.receptive_field(&layer.name).unwrap();
            println!("{:<10} {:>6}   ({out_channels} channels)", layer.name, rf);
        }
    }
    let at = spec.output_shape("conv5_1", 224, 224).unwrap();
    println!("conv5_1 on a 224x224 input: {at}");
}
