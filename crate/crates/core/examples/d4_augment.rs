//! The eight square symmetries applied to a small labelled grid, and their
//! composition table.
//!
//! Run: `cargo run --example d4_augment`

use cartoseg::augment::{apply_plane, compose, inverse, D4Element};
use ndarray::Array2;

fn main() -> cartoseg::Result<()> {
    let grid = Array2::from_shape_fn((3, 3), |(i, j)| (b'a' + (3 * i + j) as u8) as char);
    for g in D4Element::ALL {
        let out = apply_plane(g, grid.view())?;
        let rows: Vec<String> = out.rows().into_iter().map(|r| r.iter().collect()).collect();
        println!("{:<14} {}   inverse {}", g.to_string(), rows.join(" "), inverse(g));
    }

    println!("\ncomposition (row after column):");
    let short = |g: D4Element| g.to_string().chars().take(6).collect::<String>();
    print!("{:>8}", "");
    for h in D4Element::ALL {
        print!("{:>8}", short(h));
    }
    println!();
    for g in D4Element::ALL {
        print!("{:>8}", short(g));
        for h in D4Element::ALL {
            print!("{:>8}", short(compose(g, h)));
        }
        println!();
    }
    Ok(())
}
