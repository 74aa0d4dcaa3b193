//! Synthetic series, CSV round trip, chronological splits, windows and z-scoring.

use amtsfm::data::{make_windows, read_csv, synth_stf, write_csv, zscore, CsvLayout, SplitRatios, SynthStf};
use amtsfm::Result;

pub fn run_example() -> Result<()> {
    let ds = synth_stf(&SynthStf { missing_rate: 0.02, ..SynthStf::new(6, 2016, 1) })?;
    println!("{} steps × {} nodes, {} missing", ds.steps(), ds.nodes(), ds.observed().iter().filter(|o| !**o).count());

    let layout = CsvLayout { missing: amtsfm::data::Missing::Token("NaN".into()), ..CsvLayout::default() };
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf, &layout)?;
    let back = read_csv(buf.as_slice(), &layout, "reloaded")?;
    println!("CSV: {} bytes, same mask: {}", buf.len(), back.observed() == ds.observed());

    let splits = SplitRatios::STANDARD.split(ds.steps())?;
    let (norm, stats) = zscore(&ds, splits.train.clone())?;
    println!("train mean {:.3}, std {:.3}", stats.mean[0], stats.std[0]);
    for (name, seg) in [("train", splits.train), ("val", splits.val), ("test", splits.test)] {
        let w = make_windows(seg.clone(), 12, 12);
        println!("{name:>5}: steps {seg:?}, {} windows", w.starts.len());
    }
    let sample = norm.window(0, 12, 12, 1)?;
    println!("first window x {:?}, y {:?}, tod {:?}", sample.x.shape(), sample.y.shape(), &sample.tod[..3]);
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
