use rand::Rng;

/// Uniform draws are kept this far from 0 and 1 before the transform.
pub const UNIFORM_CLAMP: f64 = 1e-12;

/// `-ln(-ln u)` with `u` clamped into `[1e-12, 1 - 1e-12]`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
    -(-u.ln()).ln()
}

/// One standard Gumbel(0, 1) draw.
pub fn gumbel_sample<G: Rng + ?Sized>(rng: &mut G) -> f64 {
    gumbel_from_uniform(rng.gen::<f64>())
}
