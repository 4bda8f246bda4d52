//! The covariance of a balanced crossed design has five distinct eigenvalues.
//! Inverse action, log-determinant and quadratic forms follow from them in
//! O(n); this example compares each against the dense matrix.

use crossfit::design::Design;
use crossfit::kron::{self, lambdas_from, Lambdas, Stratum, VarianceComponents};
use crossfit::oracle;

fn main() -> crossfit::Result<()> {
    let design = Design::new(4, 3, 3)?;
    let theta = VarianceComponents::new(2.0, 1.5, 0.7, 1.0);
    let lambdas = lambdas_from(&theta, &design)?;
    let mult = Lambdas::multiplicities(&design);

    println!("design g={} h={} m={} n={}", design.g, design.h, design.m, design.n);
    for (s, count) in Stratum::ALL.iter().zip(mult) {
        println!("  {:?}: lambda={:.4} multiplicity={}", s, lambdas.get(*s), count);
    }

    let spectrum = oracle::dense_spectrum(&theta, &design)?;
    println!(
        "dense spectrum spans [{:.4}, {:.4}] over {} eigenvalues",
        spectrum[0],
        spectrum[spectrum.len() - 1],
        spectrum.len()
    );

    let v: Vec<f64> = (0..design.n).map(|t| ((t * 7 % 11) as f64 - 5.0) / 3.0).collect();
    let fast = kron::vinv_apply(&lambdas, &design, &v)?;
    let dense = oracle::dense_vinv_apply(&theta, &design, &v)?;
    let err = fast.iter().zip(&dense).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("V^-1 v: max abs difference {err:.2e}");

    let logdet = kron::logdet_v(&lambdas, &design)?;
    println!(
        "log|V|: structured {logdet:.10}, dense {:.10}",
        oracle::dense_logdet_v(&theta, &design)?
    );
    let (q, _) = kron::quad_form(&lambdas, &design, &v)?;
    println!(
        "v' V^-1 v: structured {q:.10}, dense {:.10}",
        oracle::dense_quad_form(&theta, &design, &v)?
    );
    Ok(())
}
