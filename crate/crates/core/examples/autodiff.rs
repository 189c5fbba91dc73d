//! Reverse-mode gradients on the tape, checked against finite differences.

use meshgeo::tensor::{gradient_check, Matrix, Tape};

fn main() -> meshgeo::Result<()> {
    let a = Matrix::from_rows(&[[1.0, -2.0, 0.5], [0.3, 0.8, -1.1]]);
    let b = Matrix::from_rows(&[[0.2], [-0.7], [1.5]]);

    let mut tape = Tape::<f64>::new();
    let (va, vb) = (tape.leaf(&a, true), tape.leaf(&b, true));
    let y = tape.matmul(va, vb)?;
    let y = tape.leaky_relu(y, 0.01);
    let loss = tape.l2_norm(y);
    let grads = tape.backward(loss)?;
    println!("loss = {:.6}", tape.scalar(loss));
    println!("dL/dA = {:?}", grads.matrix(va).as_slice());
    println!("dL/dB = {:?}", grads.matrix(vb).as_slice());

    let report = gradient_check(
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let y = t.leaky_relu(y, 0.01);
            Ok(t.l2_norm(y))
        },
        &[a, b],
        1e-6,
        0,
    )?;
    println!("finite-difference check: max relative error {:.2e} over {} probes", report.max_rel_error, report.probes);
    Ok(())
}
