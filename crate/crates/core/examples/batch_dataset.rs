//! Build a small labeled dataset with the `batch` subcommand and read the
//! manifest back.
//!
//! ```text
//! cargo run --release --example batch_dataset -- [work-dir]
//! ```

mod support;

use std::path::PathBuf;

use coralgen::dataio::{read_manifest, save_image};

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "batch_demo".into()));
    let (content, style, out) = (root.join("content"), root.join("style"), root.join("out"));
    for (l, label) in ["chair", "mug"].iter().enumerate() {
        let dir = content.join(label);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..3 {
            let mut img = support::render_object(32);
            img.data_mut()[0] = (40 * l + i) as f32;
            save_image(&img, dir.join(format!("{i}.png"))).unwrap();
        }
    }
    std::fs::create_dir_all(&style).unwrap();
    for k in 0..4 {
        save_image(&support::render_texture(32, k as f64), style.join(format!("real{k}.png"))).unwrap();
    }

    let code = coralgen::cli::run_from([
        "coralgen", "batch",
        "--content-dir", content.to_str().unwrap(),
        "--style-dir", style.to_str().unwrap(),
        "--out-dir", out.to_str().unwrap(),
        "--random-weights", "0", "--width-divisor", "8",
        "--iterations", "50", "--workers", "2", "--seed", "7",
    ]);
    assert_eq!(code, 0);
    for r in read_manifest(out.join("manifest.jsonl")).unwrap() {
        println!(
            "{:<6} {} <- {}  feat {:.3e} coral {:.3e}",
            r.label,
            r.output_path.display(),
            r.style_path.file_name().unwrap().to_string_lossy(),
            r.final_feat,
            r.final_coral
        );
    }
}
