//! Singular-value spectra of task updates: imbalance statistics, partial
//! smoothing toward the mean, direct merging, and normalized accuracy
//! improvement.

use crate::error::{Error, Result};
use crate::linalg::{thin_svd, DenseMatrix};
use std::fmt::Write as _;

/// Denominator guard for [`nai`].
pub const EPS_NAI: f64 = 1e-9;

/// Spectrum of one update with its imbalance statistics. `variance` is the
/// population variance of the raw values; `cv` (coefficient of variation,
/// std over mean) is the scale-free companion.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub sigma: Vec<f64>,
    pub normalized: Vec<f64>,
    pub variance: f64,
    pub cv: f64,
}

fn stats(sigma: &[f64]) -> (f64, f64) {
    let count = sigma.len() as f64;
    let mean = sigma.iter().sum::<f64>() / count;
    let variance = sigma.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / count;
    let cv = if mean > 0.0 { variance.sqrt() / mean } else { 0.0 };
    (variance, cv)
}

/// Full thin spectrum of a matrix. A zero matrix yields all-zero sigma.
pub fn spectrum(delta_w: &DenseMatrix) -> SpectrumReport {
    let svd = thin_svd(delta_w).expect("finite by DenseMatrix invariant");
    report_from_sigma(svd.sigma)
}

/// Statistics over an explicit set of values (e.g. the top-r values of a
/// known rank-r adapter product).
pub fn report_from_sigma(sigma: Vec<f64>) -> SpectrumReport {
    let head = sigma.first().copied().unwrap_or(0.0);
    let normalized = if head > 0.0 {
        sigma.iter().map(|s| s / head).collect()
    } else {
        vec![0.0; sigma.len()]
    };
    let (variance, cv) = stats(&sigma);
    SpectrumReport {
        sigma,
        normalized,
        variance,
        cv,
    }
}

/// Replaces each value by `(1 - alpha) * sigma_i + alpha * mean(sigma)`.
/// The mean is preserved exactly; `alpha = 0` is the identity and
/// `alpha = 1` the constant-mean vector.
pub fn smooth(sigma: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if sigma.is_empty() {
        return Err(Error::InvalidInput("sigma must be nonempty".to_string()));
    }
    let mean = sigma.iter().sum::<f64>() / sigma.len() as f64;
    Ok(sigma.iter().map(|s| (1.0 - alpha) * s + alpha * mean).collect())
}

/// `U diag(sigma') V^T` with the singular vectors kept fixed.
pub fn rebuild(u: &DenseMatrix, sigma: &[f64], v: &DenseMatrix) -> Result<DenseMatrix> {
    if u.cols() != sigma.len() || v.cols() != sigma.len() {
        return Err(Error::InvalidInput(format!(
            "rebuild: factors have {} / {} columns but {} values were given",
            u.cols(),
            v.cols(),
            sigma.len()
        )));
    }
    let scaled = DenseMatrix::from_fn(u.rows(), u.cols(), |i, j| u.at(i, j) * sigma[j]);
    Ok(scaled.matmul_nt(v))
}

/// Smooths the top-`rank` spectrum of a known rank-`rank` update and rebuilds
/// it. `alpha = 0` returns the input unchanged, bit for bit, so unsmoothed
/// merging is reproduced exactly.
pub fn smooth_adapter(delta: &DenseMatrix, rank: usize, alpha: f64) -> Result<DenseMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if rank == 0 || rank > delta.rows().min(delta.cols()) {
        return Err(Error::InvalidInput(format!(
            "rank {rank} out of range for a {}x{} update",
            delta.rows(),
            delta.cols()
        )));
    }
    if alpha == 0.0 {
        return Ok(delta.clone());
    }
    let svd = thin_svd(delta)?;
    let u = svd.u.columns(0, rank);
    let v = svd.v.columns(0, rank);
    let smoothed = smooth(&svd.sigma[..rank], alpha)?;
    rebuild(&u, &smoothed, &v)
}

/// Elementwise sum of task updates (task-arithmetic merging).
pub fn merge(deltas: &[DenseMatrix]) -> Result<DenseMatrix> {
    let first = deltas
        .first()
        .ok_or_else(|| Error::InvalidInput("merge of an empty list".to_string()))?;
    let mut acc = first.clone();
    for d in &deltas[1..] {
        if !d.same_shape(first) {
            return Err(Error::InvalidInput(format!(
                "merge shape mismatch: {}x{} vs {}x{}",
                d.rows(),
                d.cols(),
                first.rows(),
                first.cols()
            )));
        }
        acc = acc.add(d);
    }
    Ok(acc)
}

/// Normalized accuracy improvement:
/// `(merged - zero_shot) / (individual - zero_shot)`.
pub fn nai(a_merged: f64, a_zero_shot: f64, a_individual: f64) -> Result<f64> {
    let denominator = a_individual - a_zero_shot;
    if denominator.abs() < EPS_NAI {
        return Err(Error::DegenerateBaseline { denominator });
    }
    Ok((a_merged - a_zero_shot) / denominator)
}

/// CSV emission: `index,sigma,normalized` rows plus a summary line.
pub fn spectrum_csv(report: &SpectrumReport) -> String {
    let mut out = String::from("index,sigma,normalized\n");
    for (i, (s, n)) in report.sigma.iter().zip(&report.normalized).enumerate() {
        let _ = writeln!(out, "{i},{s:.16e},{n:.16e}");
    }
    let _ = writeln!(out, "# variance={:.16e} cv={:.16e}", report.variance, report.cv);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{fro_norm, sym_eig};
    use crate::rng::StreamRng;

    #[test]
    fn spectrum_of_zero_matrix_has_zero_variance() {
        let r = spectrum(&DenseMatrix::zeros(4, 3));
        assert_eq!(r.sigma, vec![0.0; 3]);
        assert_eq!(r.variance, 0.0);
        assert_eq!(r.cv, 0.0);
        assert_eq!(r.normalized, vec![0.0; 3]);
    }

    #[test]
    fn spectrum_cross_checks_against_the_gram_eigenvalues() {
        // sigma(B A) must match sqrt(eig((BA)(BA)^T)) computed independently.
        let mut rng = StreamRng::from_stream(3, "spectral/cross");
        let b = DenseMatrix::from_fn(16, 4, |_, _| rng.normal());
        let a = DenseMatrix::from_fn(4, 16, |_, _| rng.normal());
        let product = b.matmul(&a);
        let report = spectrum(&product);
        let gram = product.matmul_nt(&product);
        let (_, lambda) = sym_eig(&gram).unwrap();
        for (s, l) in report.sigma.iter().zip(&lambda) {
            let via_eig = l.max(0.0).sqrt();
            assert!(
                (s - via_eig).abs() <= 1e-8 * report.sigma[0].max(1.0),
                "{s} vs {via_eig}"
            );
        }
        assert_eq!(report.normalized[0], 1.0);
    }

    #[test]
    fn smooth_examples_and_variance_contraction() {
        assert_eq!(smooth(&[3.0, 1.0], 1.0).unwrap(), vec![2.0, 2.0]);
        assert_eq!(smooth(&[3.0, 1.0], 0.5).unwrap(), vec![2.5, 1.5]);
        let sigma = [5.0, 2.0, 0.5, 0.1];
        assert_eq!(smooth(&sigma, 0.0).unwrap(), sigma.to_vec());
        assert!(smooth(&sigma, -0.1).is_err());
        assert!(smooth(&sigma, 1.5).is_err());
        assert!(smooth(&[], 0.5).is_err());

        let mean = sigma.iter().sum::<f64>() / 4.0;
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let out = smooth(&sigma, alpha).unwrap();
            let out_mean = out.iter().sum::<f64>() / 4.0;
            assert!((out_mean - mean).abs() <= 1e-12 * mean);
            // variance contracts by exactly (1 - alpha)^2
            let (var_in, _) = stats(&sigma);
            let (var_out, _) = stats(&out);
            let expected = (1.0 - alpha) * (1.0 - alpha) * var_in;
            assert!(
                (var_out - expected).abs() <= 1e-12 * var_in.max(1e-30),
                "alpha {alpha}: {var_out} vs {expected}"
            );
        }
    }

    #[test]
    fn rebuild_round_trips_and_controls_the_spectrum() {
        let mut rng = StreamRng::from_stream(5, "spectral/rebuild");
        let m = DenseMatrix::from_fn(7, 5, |_, _| rng.normal());
        let svd = thin_svd(&m).unwrap();

        let same = rebuild(&svd.u, &svd.sigma, &svd.v).unwrap();
        assert!(fro_norm(&same.sub(&m)) <= 1e-9 * fro_norm(&m));

        let flat = smooth(&svd.sigma, 1.0).unwrap();
        let balanced = rebuild(&svd.u, &flat, &svd.v).unwrap();
        assert!(spectrum(&balanced).cv <= 1e-9);

        // Frobenius norm of a rebuild equals the l2 norm of its values.
        let norm = fro_norm(&balanced);
        let l2 = flat.iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!((norm - l2).abs() <= 1e-9 * l2);

        assert!(rebuild(&svd.u, &svd.sigma[..3], &svd.v).is_err());
    }

    #[test]
    fn smooth_adapter_alpha_zero_is_bitwise_identity() {
        let mut rng = StreamRng::from_stream(7, "spectral/adapter");
        let b = DenseMatrix::from_fn(10, 3, |_, _| rng.normal());
        let a = DenseMatrix::from_fn(3, 8, |_, _| rng.normal());
        let delta = b.matmul(&a);
        assert_eq!(smooth_adapter(&delta, 3, 0.0).unwrap(), delta);
        let full = smooth_adapter(&delta, 3, 1.0).unwrap();
        let top: Vec<f64> = spectrum(&full).sigma.into_iter().take(3).collect();
        let (_, cv) = stats(&top);
        assert!(cv <= 1e-9, "cv {cv}");
        assert!(smooth_adapter(&delta, 0, 0.5).is_err());
        assert!(smooth_adapter(&delta, 99, 0.5).is_err());
    }

    #[test]
    fn merge_examples() {
        let mut rng = StreamRng::from_stream(9, "spectral/merge");
        let x = DenseMatrix::from_fn(4, 4, |_, _| rng.normal());

        assert_eq!(merge(std::slice::from_ref(&x)).unwrap(), x);

        let cancel = merge(&[x.clone(), x.scale(-1.0)]).unwrap();
        assert_eq!(fro_norm(&cancel), 0.0);

        let y = DenseMatrix::from_fn(4, 4, |_, _| rng.normal());
        let z = DenseMatrix::from_fn(4, 4, |_, _| rng.normal());
        let all = merge(&[x.clone(), y.clone(), z.clone()]).unwrap();
        let pairwise = x.add(&y).add(&z);
        assert_eq!(all, pairwise);

        assert!(merge(&[]).is_err());
        assert!(merge(&[x, DenseMatrix::zeros(3, 4)]).is_err());
    }

    #[test]
    fn nai_examples() {
        assert_eq!(nai(80.0, 20.0, 80.0).unwrap(), 1.0);
        assert_eq!(nai(20.0, 20.0, 80.0).unwrap(), 0.0);
        assert_eq!(nai(50.0, 20.0, 80.0).unwrap(), 0.5);
        match nai(50.0, 70.0, 70.0) {
            Err(Error::DegenerateBaseline { .. }) => {}
            other => panic!("expected DegenerateBaseline, got {other:?}"),
        }
    }

    #[test]
    fn csv_has_expected_columns() {
        let report = report_from_sigma(vec![2.0, 1.0]);
        let csv = spectrum_csv(&report);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "index,sigma,normalized");
        assert!(lines.next().unwrap().starts_with("0,2.0000000000000000e0,1.0"));
        assert!(csv.lines().last().unwrap().starts_with("# variance="));
    }
}
