//! Reverse-mode gradients on a tape, checked against central differences.

use amtsfm::gradcheck::{check, STEP};
use amtsfm::{Result, Tape, Tensor};

pub fn run_example() -> Result<()> {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5])?);
    let w = tape.leaf(Tensor::new(&[3, 2], vec![1.0, 0.0, -1.0, 2.0, 0.5, 0.5])?);
    let h = tape.matmul(x, w)?;
    let s = tape.softmax(h, 1.0)?;
    let sq = tape.square(s)?;
    let loss = tape.sum(sq)?;
    tape.backward(loss)?;
    println!("loss = {:.6}", tape.value(loss).item());
    println!("dL/dw = {:?}", tape.grad(w).expect("leaf").data());
    println!("flops by scope: {:?}", tape.flops().by_scope());

    let inputs = vec![
        ("x".to_string(), Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5])?),
        ("w".to_string(), Tensor::new(&[3, 2], vec![1.0, 0.0, -1.0, 2.0, 0.5, 0.5])?),
    ];
    let report = check(&inputs, STEP, |tape, v| {
        let h = tape.matmul(v[0], v[1])?;
        let s = tape.softmax(h, 1.0)?;
        let sq = tape.square(s)?;
        tape.sum(sq)
    })?;
    println!("max relative error {:.2e} over {} coordinates", report.max_rel_err, report.checked);
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
