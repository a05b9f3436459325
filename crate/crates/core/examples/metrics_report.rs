//! Token-level classification report from predictions and gold labels, plus
//! the aggregate of a published per-class table.
//!
//! cargo run --example metrics_report

use darts_ner::data::TagMap;
use darts_ner::metrics::{aggregate, count, report};
use darts_ner::model::IGNORE_ID;
use darts_ner::rng::component_rng;
use darts_ner::Result;
use rand::Rng;

fn main() -> Result<()> {
    let tags = TagMap::default();
    let o = tags.id("O").expect("O tag") as i64;
    let mut rng = component_rng(0, "metrics-example");
    let golds: Vec<i64> = (0..2000)
        .map(|_| match rng.random_range(0..10) {
            0 => IGNORE_ID,
            1..=3 => rng.random_range(0..tags.len() as i64),
            _ => o,
        })
        .collect();
    let preds: Vec<i64> = golds
        .iter()
        .map(|&g| if rng.random_bool(0.85) && g != IGNORE_ID { g } else { rng.random_range(0..tags.len() as i64) })
        .collect();
    let counts = count(&preds, &golds, IGNORE_ID, tags.len())?;
    let rep = report(&counts, tags.tags())?.with_loss(0.0);
    print!("{}", rep.to_text());
    println!("micro F1 {:.4} == accuracy {:.4}", rep.micro_f1, rep.accuracy);

    let rows = [(0.86, 397), (0.76, 291), (0.89, 614), (0.57, 147), (0.71, 251), (0.93, 527), (0.96, 6901)];
    let (macro_f1, weighted_f1) = aggregate(&rows);
    println!("published rows: macro {macro_f1:.4} weighted {weighted_f1:.4}");
    Ok(())
}
