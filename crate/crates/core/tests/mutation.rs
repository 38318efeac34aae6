// The unbiasedness check must notice a broken estimator.
use vrpg_core::verify::{criterion_2_with, gpomdp_fn, Level};

#[test]
fn sign_flipped_estimator_is_rejected() {
    let r = criterion_2_with(Level::Fast, &|t, p, th, g| gpomdp_fn(t, p, th, g).iter().map(|x| -x).collect());
    assert!(!r.passed, "{r}");
}

#[test]
fn halved_estimator_is_rejected() {
    let r = criterion_2_with(Level::Fast, &|t, p, th, g| gpomdp_fn(t, p, th, g).iter().map(|x| 0.5 * x).collect());
    assert!(!r.passed, "{r}");
}

#[test]
fn production_estimator_passes() {
    let r = criterion_2_with(Level::Fast, &gpomdp_fn);
    assert!(r.passed, "{r}");
}
