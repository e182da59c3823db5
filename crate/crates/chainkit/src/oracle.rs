//! Ground-truth references independent of the kernel machinery: exhaustive
//! enumeration of every configuration on small discrete chains, and a
//! Metropolis sampler for continuous ones. Both consume only the
//! product-of-determinants density built from the seed systems and the
//! effective couplings, so agreement with the block-kernel statistics is a
//! genuine cross-check rather than a tautology.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::biorthogonal::BiorthogonalSystem;
use crate::chain_model::ChainSpec;
use crate::linalg;
use crate::measure::SpaceKind;
use crate::statistics::Region;
use crate::{Error, Result};

/// Every unordered configuration of a discrete chain with its probability
/// mass. Masses include the node weights and the ordering multiplicity, so
/// they sum to one.
pub struct EnumerationTable {
    /// (per-level ascending node-index subsets, mass).
    pub configurations: Vec<(Vec<Vec<usize>>, f64)>,
    pub total_mass: f64,
    /// Number of masses in (-1e-14, 0) clamped to zero.
    pub clamped: usize,
}

const STATE_LIMIT: u128 = 1_000_000;

/// All k-subsets of 0..n in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        // Advance the rightmost index that can still move.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

pub fn enumerate(spec: &ChainSpec, bio: &BiorthogonalSystem) -> Result<EnumerationTable> {
    let m = spec.levels;
    let n = spec.particles;
    if spec.spaces.iter().any(|s| s.kind() != SpaceKind::Discrete) {
        return Err(Error::NotDiscrete);
    }
    let mut size: u128 = 1;
    for space in &spec.spaces {
        let mut c: u128 = 1;
        for i in 0..n {
            c = c * (space.len() - i) as u128 / (i + 1) as u128;
        }
        size = size.saturating_mul(c);
        if size > STATE_LIMIT {
            return Err(Error::StateSpaceTooLarge { size, limit: STATE_LIMIT });
        }
    }

    let level_subsets: Vec<Vec<Vec<usize>>> =
        spec.spaces.iter().map(|s| subsets(s.len(), n)).collect();
    let transfers: Vec<DMatrix<f64>> = (0..m - 1)
        .map(|j| spec.transfer_matrix(j))
        .collect::<Result<_>>()?;

    // Measure factor of one level subset.
    let mu_product = |j: usize, c: &[usize]| -> f64 {
        c.iter().map(|&q| spec.spaces[j].weights()[q]).product()
    };
    let end_det = |values: &DMatrix<f64>, c: &[usize]| -> f64 {
        let t = DMatrix::from_fn(n, n, |a, b| values[(a, c[b])]);
        linalg::det(&t)
    };

    let mut configurations = Vec::with_capacity(size as usize);
    let mut idx = vec![0usize; m];
    loop {
        let config: Vec<&Vec<usize>> =
            (0..m).map(|j| &level_subsets[j][idx[j]]).collect();
        let mut mass = end_det(&bio.psi1, config[0]) * end_det(&bio.phim, config[m - 1]);
        for j in 0..m - 1 {
            let w = DMatrix::from_fn(n, n, |a, b| {
                transfers[j][(config[j + 1][a], config[j][b])]
            });
            mass *= linalg::det(&w);
        }
        for j in 0..m {
            mass *= mu_product(j, config[j]);
        }
        configurations.push((config.into_iter().cloned().collect(), mass));

        let mut j = m;
        loop {
            if j == 0 {
                let mut total = 0.0;
                let mut clamped = 0;
                for (_, mass) in configurations.iter_mut() {
                    if *mass < 0.0 {
                        if *mass < -1e-14 {
                            return Err(Error::NegativeMass {
                                mass: *mass,
                                scale: 1.0,
                            });
                        }
                        *mass = 0.0;
                        clamped += 1;
                    }
                    total += *mass;
                }
                return Ok(EnumerationTable { configurations, total_mass: total, clamped });
            }
            j -= 1;
            idx[j] += 1;
            if idx[j] < level_subsets[j].len() {
                break;
            }
            idx[j] = 0;
        }
    }
}

impl EnumerationTable {
    fn sum_where<F: Fn(&[Vec<usize>]) -> bool>(&self, keep: F) -> f64 {
        self.configurations
            .iter()
            .filter(|(c, _)| keep(c))
            .map(|(_, mass)| mass)
            .sum()
    }

    /// P(no level-j point inside regions[j], jointly).
    pub fn gap(&self, spec: &ChainSpec, regions: &[Region]) -> f64 {
        self.sum_where(|c| {
            c.iter().enumerate().all(|(j, level)| {
                level.iter().all(|&q| !regions[j].contains_node(&spec.spaces[j], q))
            })
        })
    }

    /// Marginal occupation probability of one node.
    pub fn intensity(&self, level: usize, node: usize) -> f64 {
        self.sum_where(|c| c[level].contains(&node))
    }

    /// Configuration-sum form of the correlator at marked nodes: the summed
    /// mass of configurations containing them, divided by the marked node
    /// weights. Equals the bare kernel determinant.
    pub fn correlator_sum(&self, spec: &ChainSpec, points: &[Vec<usize>]) -> f64 {
        let contained = self.sum_where(|c| {
            points
                .iter()
                .enumerate()
                .all(|(j, pts)| pts.iter().all(|q| c[j].contains(q)))
        });
        let mu: f64 = points
            .iter()
            .enumerate()
            .flat_map(|(j, pts)| pts.iter().map(move |&q| spec.spaces[j].weights()[q]))
            .product();
        contained / mu
    }

    /// P(exactly counts[j][l] points in region l of level j, jointly).
    pub fn count_probability(
        &self,
        spec: &ChainSpec,
        regions: &[Vec<Region>],
        counts: &[Vec<usize>],
    ) -> f64 {
        self.sum_where(|c| {
            regions.iter().enumerate().all(|(j, list)| {
                list.iter().enumerate().all(|(l, region)| {
                    let k = c[j]
                        .iter()
                        .filter(|&&q| region.contains_node(&spec.spaces[j], q))
                        .count();
                    k == counts[j][l]
                })
            })
        })
    }

    /// Summed mass of configurations meeting regions[j] exactly at the
    /// marked nodes: the absolute Janossy density times the marked node
    /// weights.
    pub fn janossy_mass(
        &self,
        spec: &ChainSpec,
        regions: &[Region],
        points: &[Vec<usize>],
    ) -> f64 {
        self.sum_where(|c| {
            c.iter().enumerate().all(|(j, level)| {
                let inside: Vec<usize> = level
                    .iter()
                    .copied()
                    .filter(|&q| regions[j].contains_node(&spec.spaces[j], q))
                    .collect();
                let mut marked = points[j].clone();
                marked.sort_unstable();
                inside == marked
            })
        })
    }
}

/// Diagnostics and the sign-weighted estimate of one scalar statistic from
/// a Metropolis run.
#[derive(Clone, Debug)]
pub struct SampleStats {
    pub estimate: f64,
    pub std_error: f64,
    pub acceptance: f64,
    /// Step sizes per level after burn-in tuning.
    pub steps: Vec<f64>,
    pub negative_fraction: f64,
    pub batches: usize,
}

/// Single-coordinate Metropolis targeting |density| on the truncation box,
/// with the density sign carried into the estimate. `statistic` is
/// evaluated at every post-burn-in state; the estimate is the sign-weighted
/// mean with a batch-means standard error. Burn-in is steps/10, during
/// which the per-level step sizes are tuned toward 30-50% acceptance and
/// then frozen.
pub fn mcmc_sample<F>(
    spec: &ChainSpec,
    bio: &BiorthogonalSystem,
    steps: u64,
    seed: u64,
    mut statistic: F,
) -> Result<SampleStats>
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    if spec.spaces.iter().any(|s| s.kind() != SpaceKind::Quadrature) {
        return Err(Error::Sampler(
            "sampling needs quadrature spaces; discrete chains are enumerable".into(),
        ));
    }
    let m = spec.levels;
    let n = spec.particles;
    let hulls: Vec<(f64, f64)> = spec
        .spaces
        .iter()
        .map(|s| {
            let p = s.panels();
            (p[0].0, p[p.len() - 1].1)
        })
        .collect();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut state: Vec<Vec<f64>> = hulls
        .iter()
        .map(|&(lo, hi)| {
            (0..n)
                .map(|a| lo + (hi - lo) * (a + 1) as f64 / (n + 1) as f64)
                .collect()
        })
        .collect();
    let (mut log_abs, mut sign) = log_density(spec, bio, &state);
    let mut tries = 0;
    while !log_abs.is_finite() {
        tries += 1;
        if tries > 1000 {
            return Err(Error::Sampler("could not find a starting configuration".into()));
        }
        for (j, level) in state.iter_mut().enumerate() {
            for x in level.iter_mut() {
                *x = rng.gen_range(hulls[j].0..hulls[j].1);
            }
        }
        let d = log_density(spec, bio, &state);
        log_abs = d.0;
        sign = d.1;
    }

    let mut step: Vec<f64> = hulls.iter().map(|&(lo, hi)| (hi - lo) / 10.0).collect();
    let burn_in = steps / 10;
    let tune_window = 500u64;
    let mut window_accepted = 0u64;
    let mut accepted_total = 0u64;

    let measured = steps.saturating_sub(burn_in);
    let batches = 50usize.min(measured.max(1) as usize);
    let batch_len = (measured / batches as u64).max(1);
    let mut batch_sign_stat = vec![0.0_f64; batches];
    let mut batch_sign = vec![0.0_f64; batches];
    let mut negatives = 0u64;
    let mut recorded = 0u64;

    for t in 0..steps {
        let j = rng.gen_range(0..m);
        let a = rng.gen_range(0..n);
        // Box-Muller normal increment; the proposal is symmetric.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let normal = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        let old = state[j][a];
        let proposal = old + step[j] * normal;

        if proposal > hulls[j].0 && proposal < hulls[j].1 {
            state[j][a] = proposal;
            let (new_log, new_sign) = log_density(spec, bio, &state);
            let accept = new_log.is_finite() || log_abs == f64::NEG_INFINITY;
            let ratio_ok = accept
                && (new_log >= log_abs
                    || rng.gen_range(0.0..1.0_f64) < (new_log - log_abs).exp());
            if ratio_ok && new_log.is_finite() {
                log_abs = new_log;
                sign = new_sign;
                accepted_total += 1;
                window_accepted += 1;
            } else {
                state[j][a] = old;
            }
        }

        if t < burn_in {
            if (t + 1) % tune_window == 0 {
                let rate = window_accepted as f64 / tune_window as f64;
                if rate < 0.30 {
                    for s in step.iter_mut() {
                        *s *= 0.8;
                    }
                } else if rate > 0.50 {
                    for s in step.iter_mut() {
                        *s *= 1.25;
                    }
                }
                window_accepted = 0;
            }
        } else {
            let b = (((t - burn_in) / batch_len) as usize).min(batches - 1);
            let g = statistic(&state);
            batch_sign_stat[b] += sign * g;
            batch_sign[b] += sign;
            if sign < 0.0 {
                negatives += 1;
            }
            recorded += 1;
        }
    }

    if recorded == 0 {
        return Err(Error::Sampler("no post-burn-in samples recorded".into()));
    }
    let negative_fraction = negatives as f64 / recorded as f64;
    if negative_fraction > 0.01 {
        return Err(Error::Sampler(format!(
            "negative-sign fraction {negative_fraction:.4} exceeds 1%; \
             the chain density is not positive"
        )));
    }
    let total_sign: f64 = batch_sign.iter().sum();
    if total_sign <= 0.0 {
        return Err(Error::Sampler("sign-weighted normalization vanished".into()));
    }
    let estimate = batch_sign_stat.iter().sum::<f64>() / total_sign;
    let mut var = 0.0;
    for b in 0..batches {
        let bm = if batch_sign[b] != 0.0 {
            batch_sign_stat[b] / batch_sign[b]
        } else {
            estimate
        };
        var += (bm - estimate) * (bm - estimate);
    }
    let std_error = if batches > 1 {
        (var / (batches as f64 * (batches - 1) as f64)).sqrt()
    } else {
        f64::INFINITY
    };

    Ok(SampleStats {
        estimate,
        std_error,
        acceptance: accepted_total as f64 / steps as f64,
        steps: step,
        negative_fraction,
        batches,
    })
}

/// log |density| and sign of the product form at one configuration.
fn log_density(spec: &ChainSpec, bio: &BiorthogonalSystem, state: &[Vec<f64>]) -> (f64, f64) {
    let n = spec.particles;
    let m = spec.levels;
    let psi = DMatrix::from_fn(n, n, |a, b| {
        bio.p_value(a, state[0][b]) * spec.potentials[0].half_weight(state[0][b])
    });
    let phi = DMatrix::from_fn(n, n, |a, b| {
        bio.s_value(a, state[m - 1][b]) * spec.potentials[m - 1].half_weight(state[m - 1][b])
    });
    let (mut log_abs, mut sign) = linalg::det_log_abs_sign(&psi);
    let d = linalg::det_log_abs_sign(&phi);
    log_abs += d.0;
    sign *= d.1;
    for j in 0..m - 1 {
        let mut w = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                match spec.effective_coupling(j, state[j + 1][a], state[j][b]) {
                    Ok(v) => w[(a, b)] = v,
                    Err(_) => return (f64::NEG_INFINITY, 0.0),
                }
            }
        }
        let d = linalg::det_log_abs_sign(&w);
        log_abs += d.0;
        sign *= d.1;
    }
    (log_abs, sign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_model::{BasisFamily, Coupling, Potential};
    use crate::kernel::Ensemble;
    use crate::measure::{composite_rule, discrete_space, MeasureSpace};
    use crate::statistics;

    fn discrete_spec(m: usize, n: usize, nodes: usize) -> ChainSpec {
        let spaces: Vec<MeasureSpace> = (0..m)
            .map(|j| {
                let pts: Vec<f64> = (0..nodes)
                    .map(|q| -1.2 + 2.4 * q as f64 / (nodes - 1) as f64 + 0.05 * j as f64)
                    .collect();
                let wts: Vec<f64> = (0..nodes).map(|q| 0.4 + 0.1 * (q % 3) as f64).collect();
                discrete_space(&pts, &wts).unwrap()
            })
            .collect();
        ChainSpec {
            levels: m,
            particles: n,
            spaces,
            potentials: (0..m).map(|_| Potential::quadratic()).collect(),
            couplings: vec![Coupling::Exponential; m.saturating_sub(1)],
            basis: BasisFamily::AllMonomials,
        }
    }

    fn build(spec: ChainSpec) -> (Ensemble, EnumerationTable) {
        let e = Ensemble::build(spec).unwrap();
        let table = enumerate(e.spec(), e.bio()).unwrap();
        (e, table)
    }

    #[test]
    fn coin_flip_masses() {
        let spec = ChainSpec {
            levels: 1,
            particles: 1,
            spaces: vec![discrete_space(&[-1.0, 1.0], &[0.6, 0.4]).unwrap()],
            potentials: vec![Potential::quadratic()],
            couplings: vec![],
            basis: BasisFamily::AllMonomials,
        };
        let (_, table) = build(spec);
        assert_eq!(table.configurations.len(), 2);
        assert!((table.configurations[0].1 - 0.6).abs() < 1e-14);
        assert!((table.configurations[1].1 - 0.4).abs() < 1e-14);
        assert!((table.total_mass - 1.0).abs() < 1e-14);
    }

    #[test]
    fn total_mass_is_one_across_shapes() {
        for (m, n, nodes) in [(1, 2, 5), (2, 2, 4), (3, 1, 3), (3, 2, 4)] {
            let (_, table) = build(discrete_spec(m, n, nodes));
            assert!(
                (table.total_mass - 1.0).abs() < 1e-10,
                "m={m} n={n}: {}",
                table.total_mass
            );
            assert_eq!(table.clamped, 0);
        }
    }

    #[test]
    fn marginal_intensity_matches_kernel_diagonal() {
        let (e, table) = build(discrete_spec(2, 2, 4));
        for j in 0..2 {
            let space = &e.spec().spaces[j];
            for q in 0..space.len() {
                let x = space.nodes()[q];
                let from_kernel = e.kcheck_at(j, j, x, x).unwrap() * space.weights()[q];
                let from_table = table.intensity(j, q);
                assert!(
                    (from_kernel - from_table).abs() < 1e-10,
                    "level {j} node {q}: {from_kernel} vs {from_table}"
                );
            }
        }
    }

    #[test]
    fn gap_matches_fredholm() {
        let (e, table) = build(discrete_spec(2, 2, 4));
        let regions =
            [Region::Nodes(vec![1, 2]), Region::Intervals(vec![(0.0, 2.0)])];
        let enumerated = table.gap(e.spec(), &regions);
        let fredholm = statistics::gap_probability(&e, &regions).unwrap();
        assert!(
            (enumerated - fredholm).abs() < 1e-12,
            "{enumerated} vs {fredholm}"
        );
    }

    #[test]
    fn correlator_sum_matches_kernel_determinant() {
        let (e, table) = build(discrete_spec(2, 2, 4));
        let spec = e.spec();
        let pts_idx = vec![vec![1], vec![0, 3]];
        let pts: Vec<Vec<f64>> = pts_idx
            .iter()
            .enumerate()
            .map(|(j, list)| list.iter().map(|&q| spec.spaces[j].nodes()[q]).collect())
            .collect();
        let from_table = table.correlator_sum(spec, &pts_idx);
        let from_kernel = statistics::correlator(&e, &pts).unwrap();
        assert!(
            (from_table - from_kernel).abs() < 1e-10 * from_kernel.abs().max(1.0),
            "{from_table} vs {from_kernel}"
        );
    }

    #[test]
    fn janossy_mass_matches_resolvent() {
        let (e, table) = build(discrete_spec(1, 2, 4));
        let spec = e.spec();
        let regions = [Region::Nodes(vec![0, 1])];
        let j = statistics::janossy_density(&e, &regions, &[vec![spec.spaces[0].nodes()[1]]])
            .unwrap();
        let mass = j.absolute * spec.spaces[0].weights()[1];
        let enumerated = table.janossy_mass(spec, &regions, &[vec![1]]);
        assert!((mass - enumerated).abs() < 1e-12, "{mass} vs {enumerated}");
    }

    #[test]
    fn state_space_guard() {
        let spec = discrete_spec(3, 3, 20);
        let bio_spec = discrete_spec(1, 1, 2);
        let e = Ensemble::build(bio_spec).unwrap();
        // The guard trips before any density work, so a mismatched system
        // is never touched.
        assert!(matches!(
            enumerate(&spec.validate().unwrap(), e.bio()),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn quadrature_chains_are_not_enumerable() {
        let space = composite_rule(8, &[(-4.0, 4.0)], 1).unwrap();
        let spec = ChainSpec {
            levels: 1,
            particles: 1,
            spaces: vec![space],
            potentials: vec![Potential::quadratic()],
            couplings: vec![],
            basis: BasisFamily::AllMonomials,
        };
        let e = Ensemble::build(spec).unwrap();
        assert!(matches!(enumerate(e.spec(), e.bio()), Err(Error::NotDiscrete)));
    }

    #[test]
    fn sign_changing_chain_reports_negative_mass() {
        // cosh is not totally positive: the minor on rows {1,2}, columns
        // {-2,1} is cosh(2)^2 - cosh(1)cosh(4) < 0, so two-particle
        // configuration masses change sign. Nodes are kept asymmetric so
        // the all-monomial pairing stays non-degenerate.
        let nodes = [-2.0, -0.8, 1.0, 2.1];
        let weights = [0.4, 0.6, 0.5, 0.3];
        let spec = ChainSpec {
            levels: 2,
            particles: 2,
            spaces: (0..2)
                .map(|_| discrete_space(&nodes, &weights).unwrap())
                .collect(),
            potentials: (0..2).map(|_| Potential::quadratic()).collect(),
            couplings: vec![Coupling::Cosh],
            basis: BasisFamily::AllMonomials,
        };
        let e = Ensemble::build(spec).unwrap();
        assert!(matches!(
            enumerate(e.spec(), e.bio()),
            Err(Error::NegativeMass { .. })
        ));
    }

    fn gaussian_spec(m: usize, n: usize, order: usize) -> ChainSpec {
        ChainSpec {
            levels: m,
            particles: n,
            spaces: vec![
                composite_rule(order, &[(-8.0, -1.0), (-1.0, 1.0), (1.0, 8.0)], 1)
                    .unwrap();
                m
            ],
            potentials: (0..m).map(|_| Potential::quadratic()).collect(),
            couplings: vec![Coupling::Exponential; m.saturating_sub(1)],
            basis: BasisFamily::AllMonomials,
        }
    }

    #[test]
    fn sampler_mean_is_centred() {
        let e = Ensemble::build(gaussian_spec(1, 1, 16)).unwrap();
        let stats =
            mcmc_sample(e.spec(), e.bio(), 200_000, 7, |state| state[0][0]).unwrap();
        assert!(stats.negative_fraction == 0.0);
        assert!(
            stats.estimate.abs() < 3.0 * stats.std_error,
            "mean {} se {}",
            stats.estimate,
            stats.std_error
        );
        assert!(stats.acceptance > 0.15 && stats.acceptance < 0.7, "{}", stats.acceptance);
    }

    #[test]
    fn sampler_gap_agrees_with_fredholm() {
        let e = Ensemble::build(gaussian_spec(1, 2, 24)).unwrap();
        let region = [Region::Intervals(vec![(-1.0, 1.0)])];
        let exact = statistics::gap_probability(&e, &region).unwrap();
        let stats = mcmc_sample(e.spec(), e.bio(), 400_000, 12, |state| {
            let inside = state[0].iter().any(|&x| -1.0 < x && x < 1.0);
            if inside {
                0.0
            } else {
                1.0
            }
        })
        .unwrap();
        assert!(
            (stats.estimate - exact).abs() < 3.0 * stats.std_error,
            "mc {} +- {} vs exact {exact}",
            stats.estimate,
            stats.std_error
        );
    }

    #[test]
    fn sampler_is_deterministic() {
        let e = Ensemble::build(gaussian_spec(1, 1, 12)).unwrap();
        let a = mcmc_sample(e.spec(), e.bio(), 20_000, 99, |s| s[0][0]).unwrap();
        let b = mcmc_sample(e.spec(), e.bio(), 20_000, 99, |s| s[0][0]).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.std_error, b.std_error);
        assert_eq!(a.acceptance, b.acceptance);
    }

    #[test]
    fn sampler_rejects_discrete_chains() {
        let e = Ensemble::build(discrete_spec(1, 1, 3)).unwrap();
        assert!(matches!(
            mcmc_sample(e.spec(), e.bio(), 100, 1, |_| 0.0),
            Err(Error::Sampler(_))
        ));
    }
}
