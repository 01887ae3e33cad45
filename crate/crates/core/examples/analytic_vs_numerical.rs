//! Closed-form normal posterior against the scenario solver on a sampled reference.

use entropy_pooling::normal::{
    compare_numerical, kl_normals, normal_posterior, NormalModel, NormalViewSpec,
};
use entropy_pooling::solver::SolverConfig;

fn main() -> entropy_pooling::Result<()> {
    let j: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(50_000);
    let reference = NormalModel::from_rows(
        vec![0.0, 0.0, 0.0],
        &[
            vec![1.0, 0.5, 0.2],
            vec![0.5, 1.0, 0.3],
            vec![0.2, 0.3, 1.0],
        ],
    )?;
    let views = NormalViewSpec::mean(vec![vec![1.0, -1.0, 0.0]], vec![0.4])
        .with_covariance(vec![vec![0.0, 0.0, 1.0]], vec![vec![0.5]]);
    let exact = normal_posterior(&reference, &views)?;
    println!(
        "KL(posterior || reference) = {:.6}",
        kl_normals(&exact, &reference)?
    );
    let c = compare_numerical(&reference, &views, j, 1, &SolverConfig::default())?;
    for k in 0..3 {
        println!(
            "X{}: mean {:+.5} vs {:+.5}   std {:.5} vs {:.5}",
            k + 1,
            c.analytical.mu()[k],
            c.numerical_mu[k],
            c.analytical.sigma()[(k, k)].sqrt(),
            c.numerical_sigma[k][k].sqrt()
        );
    }
    println!(
        "max mean gap {:.2e}, max relative std gap {:.2e}, {} iterations",
        c.mean_gap, c.std_gap, c.diagnostics.iterations
    );
    Ok(())
}
