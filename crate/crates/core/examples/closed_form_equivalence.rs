// SPDX-License-Identifier: MIT OR Apache-2.0

//! The QR projection, the Gram-matrix projector and the Lagrangian solution
//! of the constrained least-squares problem produce the same direction.
//!
//! `cargo run --example closed_form_equivalence -- [instances]`

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use orthoeraser::projector::{equivalence_report, GramMode, ProtectedBasis};

fn main() -> orthoeraser::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = [0.0f64; 4];
    for _ in 0..n {
        let d = rng.random_range(8..=64);
        let c = rng.random_range(1..=12.min(d - 1));
        let w_c = DMatrix::from_fn(d, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let d_raw: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let rep = equivalence_report(&ProtectedBasis::from_columns(w_c)?, &d_raw, GramMode::Strict)?;
        for (w, v) in worst.iter_mut().zip([
            rep.projector_gap,
            rep.gram_direction_gap,
            rep.oracle_direction_gap,
            rep.kkt_residual,
        ]) {
            *w = w.max(v);
        }
    }
    println!("{n} random instances, worst elementwise gaps:");
    println!("  QQᵀ vs Gram projector      {:.2e}", worst[0]);
    println!("  QR vs Gram direction       {:.2e}", worst[1]);
    println!("  QR vs Lagrangian direction {:.2e}", worst[2]);
    println!("  KKT residual               {:.2e}", worst[3]);
    Ok(())
}
