//! Reverse-mode gradients on the tape, checked against central differences.
//!
//! cargo run --release --example autodiff

use viewacq::numerics::{Tape, Tensor};

fn loss(tape: &mut Tape, w: &Tensor, x: &Tensor) -> viewacq::Result<(viewacq::numerics::Var, viewacq::numerics::Var)> {
    let wv = tape.leaf(w);
    let xv = tape.leaf(x);
    let h = tape.matmul(xv, wv)?;
    let h = tape.tanh(h)?;
    let s = tape.square(h)?;
    Ok((tape.mean(s)?, wv))
}

fn main() -> viewacq::Result<()> {
    let w = Tensor::new(vec![3, 2], vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7])?.with_requires_grad(true);
    let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, -1.0, 0.5, -0.3, 0.8])?;

    let mut tape = Tape::new();
    let (l, wv) = loss(&mut tape, &w, &x)?;
    tape.backward(l)?;
    let grad = tape.grad(wv).expect("leaf requires grad").to_vec();
    println!("loss {:.6}", tape.item(l));

    let eps = 1e-6;
    for i in 0..w.numel() {
        let bump = |d: f64| -> viewacq::Result<f64> {
            let mut v = w.values().to_vec();
            v[i] += d;
            let mut t = Tape::new();
            let (l, _) = loss(&mut t, &Tensor::new(vec![3, 2], v)?, &x)?;
            Ok(t.item(l))
        };
        let fd = (bump(eps)? - bump(-eps)?) / (2.0 * eps);
        println!("  dL/dw[{i}]  tape {:+.8}  finite difference {fd:+.8}", grad[i]);
    }
    Ok(())
}
