//! A ConvGRU cell folded over a short sequence of feature maps.

use stgraph::convgru::{convgru_run, convgru_step, init_params, zero_params, ConvGruState};
use stgraph::params::Init;
use stgraph::{Result, Tensor};

fn main() -> Result<()> {
    let (c, h, w) = (2, 6, 6);
    let params = init_params(&mut Init::new(0), "gru", c);
    let seq: Vec<Tensor> = (0..5)
        .map(|t| {
            let data = (0..c * h * w).map(|i| ((i + 3 * t) as f64 * 0.37).sin()).collect();
            Tensor::new(vec![c, h, w], data)
        })
        .collect::<Result<_>>()?;
    for (t, s) in convgru_run(None, &seq, &params, "gru")?.iter().enumerate() {
        let max = s.h.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!("t={t}: |H| = {:.4}, max |H| = {max:.4}", s.h.norm());
    }

    // With every weight zero both gates sit at 1/2 and the candidate at 0.
    let prev = ConvGruState { h: Tensor::full(&[c, h, w], 0.8) };
    let (next, gates) = convgru_step(&prev, &seq[0], &zero_params("z", c), "z")?;
    println!(
        "zero weights: H {:.2} -> {:.2}, update gate {:.2}",
        prev.h.data()[0],
        next.h.data()[0],
        gates.update.data()[0]
    );
    Ok(())
}
