//! PSNR similarity matrix of a synthetic batch: prints it, checks symmetry
//! and the 160 dB diagonal, and writes `similarity.csv` / `similarity.pgm`
//! to the directory given (default: the system temp directory).

use std::path::PathBuf;

use rbi::data::synth::{synth_generate, SynthConfig};
use rbi::evalx::{export_heatmap, read_heatmap_csv};
use rbi::numcore::Tensor;
use rbi::rpe::RpeEncoder;

fn main() -> rbi::Result<()> {
    let out = std::env::args().nth(1).map_or_else(std::env::temp_dir, PathBuf::from);
    let (train, _) = synth_generate(&SynthConfig::new(42, 4, 2, 0, 32))?;
    let batch = train.batch(&(0..train.len()).collect::<Vec<_>>())?;
    let encoder = RpeEncoder::default();
    let s = encoder.similarity_matrix(&batch.images)?;

    println!("labels {:?}", batch.labels);
    for row in s.values.data().chunks(batch.len()) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:7.2}")).collect();
        println!("{}", cells.join(" "));
    }
    println!("diagonal value {:.1} dB", s.diagonal_value());
    println!("symmetric: {}", s.values == s.values.transpose2()?);

    let files = export_heatmap(&s.values, &out.join("similarity"))?;
    let back: Tensor<f64> = read_heatmap_csv(&files.csv)?;
    println!("wrote {} and {}", files.csv.display(), files.pgm.display());
    println!("CSV round trip exact: {}", back == s.values);
    Ok(())
}
