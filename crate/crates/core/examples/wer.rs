//! Word error rate with its substitution/deletion/insertion breakdown.
//!
//!     cargo run --example wer

use dpfl::data::{edit_counts, wer};

fn main() -> dpfl::Result<()> {
    let pairs = [
        ("the cat sat on the mat", "the cat sat on the mat"),
        ("the cat sat on the mat", "the bat sat on mat"),
        ("turn the lights off", "turn the light of please"),
        ("hello", "hello hello hello"),
    ];
    for (reference, hypothesis) in pairs {
        let r: Vec<&str> = reference.split_whitespace().collect();
        let h: Vec<&str> = hypothesis.split_whitespace().collect();
        let c = edit_counts(&r, &h);
        println!("ref: {reference}\nhyp: {hypothesis}");
        println!(
            "  WER {:.3}  (S={} D={} I={})\n",
            wer(&r, &h)?,
            c.substitutions,
            c.deletions,
            c.insertions
        );
    }
    Ok(())
}
