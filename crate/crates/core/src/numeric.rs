//! Small numeric utilities: Gaussian quadrature rules and the standard
//! normal quantile.

use nalgebra::DMatrix;

/// Nodes and weights of an n-point Gauss-Hermite rule (weight function
/// `exp(-t^2)` on the real line), via the Golub-Welsch eigenvalue method on
/// the Jacobi matrix of the recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    // beta_k = k/2 for Hermite polynomials; total mass sqrt(pi)
    let betas: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    golub_welsch(n, &betas, std::f64::consts::PI.sqrt())
}

/// Nodes and weights of an n-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    // beta_k^2 = k^2 / (4k^2 - 1); total mass 2
    let betas: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            (k * k / (4.0 * k * k - 1.0)).sqrt()
        })
        .collect();
    golub_welsch(n, &betas, 2.0)
}

fn golub_welsch(n: usize, betas: &[f64], total_mass: f64) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::zeros(n, n);
    for (k, &b) in betas.iter().enumerate() {
        jac[(k, k + 1)] = b;
        jac[(k + 1, k)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut items: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let first = eig.eigenvectors[(0, i)];
            (node, total_mass * first * first)
        })
        .collect();
    items.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    items.into_iter().unzip()
}

/// Expectation nodes/weights for `N(mean, sd^2)`: weights sum to one.
pub fn normal_expectation(n: usize, mean: f64, sd: f64) -> (Vec<f64>, Vec<f64>) {
    let (t, w) = gauss_hermite(n);
    let norm = std::f64::consts::PI.sqrt();
    let nodes = t
        .iter()
        .map(|&ti| mean + std::f64::consts::SQRT_2 * sd * ti)
        .collect();
    let weights = w.iter().map(|&wi| wi / norm).collect();
    (nodes, weights)
}

/// Expectation nodes/weights for `Uniform(a, b)`: weights sum to one.
pub fn uniform_expectation(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (t, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let nodes = t.iter().map(|&ti| mid + half * ti).collect();
    let weights = w.iter().map(|&wi| wi / 2.0).collect();
    (nodes, weights)
}

/// Quantile of the standard normal distribution (Wichura's rational
/// approximations, accurate to double precision over (0, 1)).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile requires p in (0, 1), got {p}");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A_CENTER, r) / poly(&B_CENTER, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        poly(&A_TAIL, r) / poly(&B_TAIL, r)
    } else {
        r -= 5.0;
        poly(&A_FAR, r) / poly(&B_FAR, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

const A_CENTER: [f64; 8] = [
    3.3871328727963666080e0,
    1.3314166789178437745e2,
    1.9715909503065514427e3,
    1.3731693765509461125e4,
    4.5921953931549871457e4,
    6.7265770927008700853e4,
    3.3430575583588128105e4,
    2.5090809287301226727e3,
];
const B_CENTER: [f64; 8] = [
    1.0,
    4.2313330701600911252e1,
    6.8718700749205790830e2,
    5.3941960214247511077e3,
    2.1213794301586595867e4,
    3.9307895800092710610e4,
    2.8729085735721942674e4,
    5.2264952788528545610e3,
];
const A_TAIL: [f64; 8] = [
    1.42343711074968357734e0,
    4.63033784615654529590e0,
    5.76949722146069140550e0,
    3.64784832476320460504e0,
    1.27045825245236838258e0,
    2.41780725177450611770e-1,
    2.27238449892691845833e-2,
    7.74545014278341407640e-4,
];
const B_TAIL: [f64; 8] = [
    1.0,
    2.05319162663775882187e0,
    1.67638483018380384940e0,
    6.89767334985100004550e-1,
    1.48103976427480074590e-1,
    1.51986665636164571966e-2,
    5.47593808499534494600e-4,
    1.05075007164441684324e-9,
];
const A_FAR: [f64; 8] = [
    6.65790464350110377720e0,
    5.46378491116411436990e0,
    1.78482653991729133580e0,
    2.96560571828504891230e-1,
    2.65321895265761230930e-2,
    1.24266094738807843860e-3,
    2.71155556874348757815e-5,
    2.01033439929228813265e-7,
];
const B_FAR: [f64; 8] = [
    1.0,
    5.99832206555887937690e-1,
    1.36929880922735805310e-1,
    1.48753612908506148525e-2,
    7.86869131145613259100e-4,
    1.84631831751005468180e-5,
    1.42151175831644588870e-7,
    2.04426310338993978564e-15,
];
