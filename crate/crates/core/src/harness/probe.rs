//! Continuity probe: how far `T_{t_k}` is from `T_t` as `t_k -> t`, with
//! `t_k` on successively halved refinements of the parameter grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::measure::GridDensity;
use crate::monge::{MapSlice, MongeMapFamily};
use crate::par::{self, Execution};

/// One probe measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuityRow {
    pub t: f64,
    pub t_n: f64,
    pub level: usize,
    pub tau: f64,
    pub exceed_fraction: f64,
}

/// Stratified points `x_i = (i + U_i) / count` with seeded jitter.
pub fn stratified_samples(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| (i as f64 + rng.gen::<f64>()) / count as f64).collect()
}

/// `t + 2^-k span`, reflected to `t - 2^-k span` when it would leave `[lo, hi]`.
///
/// With `span` the grid spacing, level `k` lies on the grid refined `k` times.
pub fn probe_point(t: f64, k: usize, span: f64, range: (f64, f64)) -> f64 {
    let step = span * 0.5f64.powi(k as i32);
    if t + step <= range.1 + 1e-12 {
        t + step
    } else {
        t - step
    }
}

/// The grid slice at `t` if there is one, otherwise a freshly assembled slice.
fn slice_at<'a, M>(family: &'a MongeMapFamily, marginals: &M, t: f64) -> Result<std::borrow::Cow<'a, MapSlice>>
where
    M: Fn(&[f64]) -> Result<(GridDensity, GridDensity)>,
{
    let (k, on_grid) = family.nearest(&[t])?;
    if on_grid {
        return Ok(std::borrow::Cow::Borrowed(&family.slices[k]));
    }
    let (mu, nu) = marginals(&[t])?;
    Ok(std::borrow::Cow::Owned(family.record_at(&[t], mu, nu)?))
}

/// Options for [`continuity_probe`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeOptions {
    pub levels: usize,
    pub samples: usize,
    pub taus: Vec<f64>,
    pub seed: u64,
    pub exec: Execution,
}

/// For each level `k = 1..=levels` and each `tau`, the `mu_t`-share of the
/// stratified samples with `|T_{t_k}(x) - T_t(x)| > tau`.
///
/// `marginals` gives source and target at any parameter, for maps re-assembled off the grid.
pub fn continuity_probe<M>(
    family: &MongeMapFamily,
    marginals: &M,
    t: f64,
    range: (f64, f64),
    opts: &ProbeOptions,
) -> Result<Vec<ContinuityRow>>
where
    M: Fn(&[f64]) -> Result<(GridDensity, GridDensity)> + Sync,
{
    if !(range.0 <= t && t <= range.1) {
        return Err(Error::Domain(format!("probe point {t} outside [{}, {}]", range.0, range.1)));
    }
    let base = slice_at(family, marginals, t)?;
    let xs: Vec<f64> = stratified_samples(opts.samples, opts.seed)
        .into_iter()
        .filter(|x| base.source().density(base.source().cell_of(*x)) > 0.0)
        .collect();
    let weights: Vec<f64> = xs.iter().map(|x| base.source().density(base.source().cell_of(*x))).collect();
    let total: f64 = weights.iter().sum();
    let y0: Vec<f64> = xs.iter().map(|x| base.evaluate(*x)).collect::<Result<_>>()?;
    let span = family.cover.space().spacing().min(range.1 - range.0);
    let per_level = par::try_map_range(opts.exec, opts.levels, |l| {
        let k = l + 1;
        let t_n = probe_point(t, k, span, range);
        let other = slice_at(family, marginals, t_n)?;
        let diffs: Vec<f64> =
            xs.iter().zip(&y0).map(|(x, y)| Ok((other.evaluate(*x)? - y).abs())).collect::<Result<_>>()?;
        let rows: Vec<ContinuityRow> = opts
            .taus
            .iter()
            .map(|&tau| {
                let exceed: f64 =
                    diffs.iter().zip(&weights).filter(|(d, _)| **d > tau).fold(0.0, |acc, (_, w)| acc + w);
                ContinuityRow { t, t_n, level: k, tau, exceed_fraction: if total > 0.0 { exceed / total } else { 0.0 } }
            })
            .collect();
        Ok::<_, Error>(rows)
    })?;
    Ok(per_level.into_iter().flatten().collect())
}

/// Fractions for `tau` are nonincreasing across levels up to `inversions`
/// exceptions, and the last one is at most `limit`.
pub fn continuity_passes(rows: &[ContinuityRow], tau: f64, limit: f64, inversions: usize) -> bool {
    let mut fr: Vec<(usize, f64)> =
        rows.iter().filter(|r| r.tau == tau).map(|r| (r.level, r.exceed_fraction)).collect();
    fr.sort_by_key(|r| r.0);
    if fr.is_empty() {
        return false;
    }
    let ups = fr.windows(2).filter(|w| w[1].1 > w[0].1 + 1e-12).count();
    ups <= inversions && fr.last().unwrap().1 <= limit
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_stratified_and_seeded() {
        let a = stratified_samples(64, 3);
        assert_eq!(a, stratified_samples(64, 3));
        assert_ne!(a, stratified_samples(64, 4));
        for (i, x) in a.iter().enumerate() {
            assert!(*x >= i as f64 / 64.0 && *x < (i + 1) as f64 / 64.0);
        }
    }

    #[test]
    fn probe_points_refine() {
        assert_eq!(probe_point(0.5, 1, 1.0, (0.0, 1.0)), 1.0);
        assert_eq!(probe_point(0.5, 3, 1.0, (0.0, 1.0)), 0.625);
        assert_eq!(probe_point(0.9, 1, 1.0, (0.0, 1.0)), 0.4);
        assert_eq!(probe_point(0.5, 2, 0.0625, (0.0, 1.0)), 0.515625);
        assert_eq!(probe_point(1.0, 1, 0.0625, (0.0, 1.0)), 0.96875);
    }

    #[test]
    fn pass_rule() {
        let row = |level, f| ContinuityRow { t: 0.5, t_n: 0.0, level, tau: 0.01, exceed_fraction: f };
        let good = vec![row(1, 0.3), row(2, 0.1), row(3, 0.12), row(4, 0.0)];
        assert!(continuity_passes(&good, 0.01, 0.01, 1));
        let bad = vec![row(1, 0.3), row(2, 0.4), row(3, 0.1), row(4, 0.2), row(5, 0.0)];
        assert!(!continuity_passes(&bad, 0.01, 0.01, 1));
        assert!(!continuity_passes(&good[..3], 0.01, 0.01, 1));
    }
}
