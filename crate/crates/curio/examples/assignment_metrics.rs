//! Soft caption metrics from first principles: optimal noun-to-category
//! assignment via the Hungarian algorithm over embedding similarities,
//! then the coverage and diversity scores built on it.
//!
//! Run with: cargo run --release --example assignment_metrics

use curio::metrics::{coverage, diversity, hungarian_max, SimilarityTable};

fn s(items: &[&str]) -> Vec<String> {
    items.iter().map(|x| x.to_string()).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // an assignment problem solved exactly
    let profit = vec![
        vec![0.9, 0.1, 0.4],
        vec![0.2, 0.8, 0.3],
        vec![0.6, 0.5, 0.7],
    ];
    let (pairs, total) = hungarian_max(&profit)?;
    println!("optimal assignment {pairs:?}, total profit {total}");

    let table = SimilarityTable::new(0x5111);
    for (a, b) in [("bed", "bed"), ("bed", "lamp"), ("chair", "sofa")] {
        println!("similarity({a:5}, {b:5}) = {:.3}", table.similarity(a, b));
    }

    let visible = s(&["bed", "lamp", "mirror"]);
    for mentioned in [
        s(&["bed", "lamp", "mirror"]),
        s(&["bed", "lamp"]),
        s(&["bed"]),
        s(&[]),
    ] {
        println!(
            "coverage({mentioned:?} vs {visible:?}) = {:.3}",
            coverage(&mentioned, &visible, &table)?
        );
    }

    let a = s(&["bed", "lamp"]);
    for b in [s(&["bed", "lamp"]), s(&["bed", "sofa"]), s(&["desk", "sink"])] {
        println!("diversity({a:?}, {b:?}) = {:.3}", diversity(&a, &b, &table)?);
    }
    Ok(())
}
