//! Uniform attention collapses to a mean; value-free attention is a graph convolution.

use amtsfm::checks::{gcn_equivalence, lemma_suite};
use amtsfm::Result;

pub fn run_example() -> Result<()> {
    for line in lemma_suite(0)? {
        println!("{line}");
    }
    println!("{}", gcn_equivalence(100, 0)?);
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
