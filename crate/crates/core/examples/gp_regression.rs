//! Fit a scalar GP to a handful of samples of sin(x) and inspect it.
//!
//! cargo run --example gp_regression

use dynemu::prelude::*;
use nalgebra::{DMatrix, DVector};

fn main() -> dynemu::Result<()> {
    let n = 8;
    let xs = DMatrix::from_fn(n, 1, |i, _| i as f64 * std::f64::consts::TAU / (n - 1) as f64);
    let ys = DVector::from_iterator(n, xs.column(0).iter().map(|x| x.sin()));

    for family in [KernelFamily::SquaredExponential, KernelFamily::Matern32, KernelFamily::Exponential] {
        let gp = GpModel::fit(xs.clone(), ys.clone(), family, 7)?;
        println!(
            "{:<12} variance {:.3e}  lengthscale {:.3}  log-lik {:.3}  LOO MSE {:.2e}",
            family.name(),
            gp.kernel().variance(),
            gp.kernel().lengthscales()[0],
            gp.log_marginal_likelihood(),
            gp.loo_mse()?
        );
        for x in [0.5, 2.0, 4.4] {
            let p = gp.predict(&[x])?;
            println!("    x = {x:<4} mean {:+.5} (sin {:+.5})  sd {:.1e}", p.mean, x.sin(), p.variance.sqrt());
        }
    }

    // Conditioning on fixed hyperparameters skips the likelihood search.
    let kernel = KernelSpec::new(KernelFamily::SquaredExponential, 1.0, vec![1.5])?;
    let gp = GpModel::condition(xs, ys, kernel, PriorMean::zero(1))?;
    println!("fixed hyperparameters: m(1) = {:+.5}", gp.predict_mean(&[1.0])?);
    Ok(())
}
