//! Audits every analytic gradient path against central finite differences
//! on a reduced network: trunk layers, all five actor heads, the learned
//! log-stds, and every critic layer, through the full minibatch loss
//! (clipped surrogate, masked-categorical and Gaussian log-probabilities,
//! entropy bonus, and the critic's squared error).

mod common;

#[test]
fn analytic_gradients_match_central_finite_differences() {
    let worst = common::gradient_audit(100, 1e-4);
    println!("worst relative error {worst:.3e}");
}
