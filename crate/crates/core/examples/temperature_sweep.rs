//! Bootstrapping ratio and neighbor agreement for several temperatures, plus
//! an SVG of the ratio curves.

use adasim::cli::{render_svg, PlotSeries};
use adasim::dataaug::{make_blobs, BlobSpec};
use adasim::trainer::{pretrain, TrainConfig};

fn main() -> adasim::Result<()> {
    let data = make_blobs(&BlobSpec { per_class: 128, ..Default::default() })?;
    let mut series = Vec::new();
    for tau in [0.0, 0.05, 0.2, 1.0] {
        let config = TrainConfig { tau, epochs: 40, ..Default::default() };
        let out = pretrain(&config, &data)?;
        let last = out.metrics.last().expect("at least one epoch");
        println!(
            "tau {tau:<5} final ratio {:.3}  nn_top1 {:.3}  2-nn_top1 {:.3}",
            last.bootstrap_ratio,
            last.nn_top1.unwrap_or(f64::NAN),
            last.second_nn_top1.unwrap_or(f64::NAN)
        );
        series.push(PlotSeries {
            label: format!("τ={tau}"),
            points: out.metrics.iter().map(|m| (m.epoch as f64, m.bootstrap_ratio)).collect(),
        });
    }
    let path = std::env::temp_dir().join("adasim-temperature-sweep.svg");
    std::fs::write(&path, render_svg(&series, "bootstrap_ratio")?)?;
    println!("wrote {}", path.display());
    Ok(())
}
