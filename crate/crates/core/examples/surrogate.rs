//! Evaluates the quadratic surrogate of the transmission loss along a line
//! and shows where it majorizes.
//!
//! cargo run --example surrogate -- [z_ref] [t] [epsilon]

use pcct::detector::{surrogate_at, transmission_loss};

fn main() {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<f64>().ok());
    let z_ref = args.next().flatten().unwrap_or(1.0);
    let t = args.next().flatten().unwrap_or(0.5);
    let eps = args.next().flatten().unwrap_or(1e-3);

    let q = surrogate_at(&[z_ref], &[t], eps);
    println!(
        "z_ref {z_ref}, T {t}: b = {:.6}, C = {:.6}, valid for z >= {:.4}",
        q.b[0], q.c[0], q.z_min[0]
    );
    println!("{:>8} {:>14} {:>14} {:>10}", "z", "g(z)-g(z_ref)", "Q(z)", "majorizes");
    let g0 = transmission_loss(&[z_ref], &[t]);
    for i in -4..=12 {
        let z = z_ref + 0.25 * i as f64;
        let g = transmission_loss(&[z], &[t]) - g0;
        let s = q.value(&[z]);
        println!("{z:>8.3} {g:>14.6} {s:>14.6} {:>10}", s >= g - 1e-12);
    }
}
