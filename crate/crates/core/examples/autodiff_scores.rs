//! Scores and their parameter gradients from one tape: the value is seeded
//! with a forward tangent, and the tangent output is differentiated in
//! reverse. Both are checked against central differences.
//!
//! cargo run --release --example autodiff_scores

use score_tensor::autodiff::Tape;
use score_tensor::nn::{init_params, Activation, MlpShape};

fn main() -> score_tensor::Result<()> {
    let shape = MlpShape::new(&[1, 16, 16, 1], Activation::Softplus, Activation::Identity);
    let mlp = init_params(&shape, 1)?;
    let x = [0.3, -1.2, 2.0];

    let mut tape = Tape::new();
    let params = mlp.bind(&mut tape, true);
    let col = tape.column(&x);
    let input = tape.seed(col)?;
    let out = mlp.forward(&mut tape, &params, input)?;
    let energy = tape.sum(out.value)?;
    let score = tape.sum(out.tangent.expect("seeded input"))?;
    let d_score = tape.reverse_grad(score, &params)?;
    println!("energy {:.6}, summed score {:.6}", tape.value(energy).sum(), tape.value(score).sum());

    let eval = |m: &score_tensor::nn::Mlp, x: &[f64]| -> score_tensor::Result<(f64, f64)> {
        let mut t = Tape::new();
        let p = m.bind(&mut t, false);
        let c = t.column(x);
        let i = t.seed(c)?;
        let o = m.forward(&mut t, &p, i)?;
        let (e, s) = (t.sum(o.value)?, t.sum(o.tangent.expect("seeded input"))?);
        Ok((t.value(e).sum(), t.value(s).sum()))
    };
    let h = 1e-5;
    let up: Vec<f64> = x.iter().map(|v| v + h).collect();
    let dn: Vec<f64> = x.iter().map(|v| v - h).collect();
    let fd_score = (eval(&mlp, &up)?.0 - eval(&mlp, &dn)?.0) / (2.0 * h);
    println!("score vs difference in x: {:.3e}", (eval(&mlp, &x)?.1 - fd_score).abs());

    let mut worst = 0.0f64;
    let mut flat = 0;
    for t in 0..mlp.tensor_count() {
        let len = mlp.tensors().nth(t).expect("tensor").len();
        for j in 0..len {
            let (mut a, mut b) = (mlp.clone(), mlp.clone());
            a.tensors_mut().nth(t).expect("tensor").as_slice_mut().expect("contiguous")[j] += h;
            b.tensors_mut().nth(t).expect("tensor").as_slice_mut().expect("contiguous")[j] -= h;
            let fd = (eval(&a, &x)?.1 - eval(&b, &x)?.1) / (2.0 * h);
            worst = worst.max((fd - d_score[flat]).abs());
            flat += 1;
        }
    }
    println!("{flat} parameter gradients of the score, worst absolute error {worst:.3e}");
    Ok(())
}
