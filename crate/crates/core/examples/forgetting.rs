//! Pretrains the toy encoder on synthetic language A, continues on
//! language B for several λ, and prints accuracy on both test sets.
//!
//! `cargo run -p hanmlm --example forgetting -- [λ,λ,...]`

use hanmlm::eval::{evaluate_models, Curve, EvalConfig};
use hanmlm::synthetic::ToyExperiment;
use std::time::Instant;

fn main() -> hanmlm::Result<()> {
    let lambdas: Vec<f64> = std::env::args()
        .nth(1)
        .map(|s| s.split(',').map(|x| x.trim().parse().expect("λ list")).collect())
        .unwrap_or_else(|| vec![0.0, 0.3]);
    let exp = ToyExperiment::default();
    let data = exp.data()?;
    let datasets = data.test_sets();
    let eval = EvalConfig::default();

    let t = Instant::now();
    let base = exp.pretrain(&data)?;
    let r = evaluate_models(&[("base".into(), &base)], &datasets, &eval)?;
    println!("vocab {} pretrain {:.1}s\n{}", data.vocab.len(), t.elapsed().as_secs_f64(), r.to_table_text());

    for lambda in lambdas {
        let t = Instant::now();
        let out = exp.finetune(&data, &base, lambda)?;
        let r = evaluate_models(&[(format!("λ={lambda}"), &out.params)], &datasets, &eval)?;
        let curve = Curve::from_epochs("l2", &out.log, |r| r.cross_lingual_l2);
        let ys: Vec<String> = curve.points.iter().map(|p| format!("{:.3}", p.1)).collect();
        println!("{:.1}s l2 per epoch [{}]\n{}", t.elapsed().as_secs_f64(), ys.join(" "), r.to_table_text());
    }
    Ok(())
}
