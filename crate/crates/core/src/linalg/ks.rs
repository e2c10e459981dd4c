/// Asymptotic two-sample Kolmogorov–Smirnov coefficient `c(α)` at α = 0.01.
pub const KS_COEFFICIENT_001: f64 = 1.628;

/// Two-sample Kolmogorov–Smirnov statistic `sup_t |F_a(t) − F_b(t)|`.
///
/// Ties across the samples are stepped over together, so identical samples
/// give exactly zero.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "ks_two_sample: empty sample");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    sup
}

/// Critical value `c · √((n_a + n_b) / (n_a n_b))` of the two-sample test.
pub fn ks_critical_value(coefficient: f64, n_a: usize, n_b: usize) -> f64 {
    let (na, nb) = (n_a as f64, n_b as f64);
    coefficient * ((na + nb) / (na * nb)).sqrt()
}
