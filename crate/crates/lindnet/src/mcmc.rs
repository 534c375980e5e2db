//! Metropolis sampling of density-matrix elements.
//!
//! Two chains are used. The *pair chain* walks over index pairs `(l, r)`
//! with stationary weight `|ρ_{l,r}|²` and feeds the metric/force
//! estimators
//!
//! ```text
//! S_{μν} = Re[⟨O_μ* O_ν⟩ − ⟨O_μ*⟩⟨O_ν⟩],   O_μ = (∂_μρ)_{l,r} / ρ_{l,r},
//! f_μ    = Re[⟨O_μ* E⟩ − ⟨O_μ*⟩⟨E⟩],       E   = (Lρ)_{l,r} / ρ_{l,r},
//! ```
//!
//! where `⟨·⟩` is the chain average. The *diagonal chain* walks over
//! single configurations `l` with weight `ρ_{l,l}` and estimates Hermitian
//! observables via `Σ_m A_{m,l} ρ_{l,m} / ρ_{l,l}`.
//!
//! Everything here consumes ρ only through element accessors, so the same
//! estimators run on dense matrices today and on amplitude oracles later.
//! All chains draw exclusively from the caller-supplied RNG: fixed seed,
//! fixed estimate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{c, C64};
use crate::lindblad::LindbladModel;
use crate::network::{evaluate_with_derivatives, NetworkTopology, ParamVector};
use crate::pauli::{Observable, SpinConfig};
use crate::solver::SrSystem;

/// Number of batches used for batch-means standard errors.
const N_BATCHES: usize = 16;

/// Consecutive rejections after which a chain is declared stuck.
fn stuck_limit(n_sites: usize) -> usize {
    1000.max(100 * n_sites)
}

/// Element accessor type: `ρ_{l,r}`.
pub type RhoElem<'a> = &'a dyn Fn(&SpinConfig, &SpinConfig) -> C64;

/// Relative weights of the proposal moves.
///
/// Pair-chain moves: M1 flips one site in both configurations, M2 flips
/// one site in one configuration, M3 flips a bond's two sites in one
/// configuration, M4 flips every site in both, M5 redraws both uniformly.
/// Diagonal-chain moves: D1 flips one site, D2 flips a bond's two sites,
/// D3 flips every site, D4 redraws uniformly.
#[derive(Debug, Clone)]
pub struct MoveSet {
    pub pair_weights: [f64; 5],
    pub diag_weights: [f64; 4],
}

impl Default for MoveSet {
    fn default() -> Self {
        MoveSet {
            pair_weights: [30.0, 30.0, 30.0, 1.0, 1.0],
            diag_weights: [30.0, 30.0, 1.0, 1.0],
        }
    }
}

impl MoveSet {
    fn validate(&self) -> Result<()> {
        let all = self.pair_weights.iter().chain(self.diag_weights.iter());
        for w in all.clone() {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::BackendConfig("move weights must be >= 0".into()));
            }
        }
        if self.pair_weights.iter().sum::<f64>() == 0.0
            || self.diag_weights.iter().sum::<f64>() == 0.0
        {
            return Err(Error::BackendConfig("all move weights are zero".into()));
        }
        Ok(())
    }
}

/// Draw an index with probability proportional to `weights`.
fn sample_weighted(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Current position of the pair chain with its cached amplitude.
#[derive(Debug, Clone)]
pub struct PairChainState {
    pub l: SpinConfig,
    pub r: SpinConfig,
    /// `ρ_{l,r}`; nonzero at every accepted state.
    pub amp: C64,
}

impl PairChainState {
    /// Start the chain at the largest-magnitude element (deterministic and
    /// always a valid, nonzero starting weight for a physical state).
    pub fn start(n_sites: usize, rho_elem: RhoElem) -> Result<Self> {
        let dim = 1usize << n_sites;
        let mut best = (0usize, 0usize, -1.0f64);
        for li in 0..dim {
            let lc = SpinConfig::from_index(n_sites, li);
            for ri in 0..dim {
                let rc = SpinConfig::from_index(n_sites, ri);
                let a = rho_elem(&lc, &rc).norm_sqr();
                if a > best.2 {
                    best = (li, ri, a);
                }
            }
        }
        if best.2 <= 0.0 {
            return Err(Error::ZeroAmplitude);
        }
        let l = SpinConfig::from_index(n_sites, best.0);
        let r = SpinConfig::from_index(n_sites, best.1);
        let amp = rho_elem(&l, &r);
        Ok(PairChainState { l, r, amp })
    }
}

/// Propose the pair move `kind` from `(l, r)`.
fn propose_pair(
    l: &SpinConfig,
    r: &SpinConfig,
    kind: usize,
    bonds: &[(usize, usize)],
    rng: &mut impl Rng,
) -> (SpinConfig, SpinConfig) {
    let n = l.n_sites();
    match kind {
        0 => {
            let site = rng.random_range(0..n);
            (l.flipped(site), r.flipped(site))
        }
        1 => {
            let site = rng.random_range(0..n);
            if rng.random_range(0..2) == 0 {
                (l.flipped(site), r.clone())
            } else {
                (l.clone(), r.flipped(site))
            }
        }
        2 => {
            let (a, b) = bonds[rng.random_range(0..bonds.len())];
            if rng.random_range(0..2) == 0 {
                (l.flipped_many(&[a, b]), r.clone())
            } else {
                (l.clone(), r.flipped_many(&[a, b]))
            }
        }
        3 => (l.flipped_all(), r.flipped_all()),
        _ => {
            let dim = 1usize << n;
            (
                SpinConfig::from_index(n, rng.random_range(0..dim)),
                SpinConfig::from_index(n, rng.random_range(0..dim)),
            )
        }
    }
}

/// One Metropolis step of the pair chain: acceptance
/// `min(1, |ρ_{l′,r′} / ρ_{l,r}|²)`. Returns the new state (the input
/// state on rejection) and whether the proposal was accepted.
pub fn pair_chain_step(
    st: &PairChainState,
    rho_elem: RhoElem,
    moves: &MoveSet,
    bonds: &[(usize, usize)],
    rng: &mut impl Rng,
) -> (PairChainState, bool) {
    let mut weights = moves.pair_weights;
    if bonds.is_empty() {
        weights[2] = 0.0;
    }
    let kind = sample_weighted(&weights, rng);
    let (l2, r2) = propose_pair(&st.l, &st.r, kind, bonds, rng);
    let amp2 = rho_elem(&l2, &r2);
    let ratio = amp2.norm_sqr() / st.amp.norm_sqr();
    let accept = ratio >= 1.0 || rng.random_range(0.0..1.0) < ratio;
    if accept && amp2.norm_sqr() > 0.0 {
        (PairChainState { l: l2, r: r2, amp: amp2 }, true)
    } else {
        (st.clone(), false)
    }
}

/// Propose the diagonal move `kind` from `l`.
fn propose_diag(
    l: &SpinConfig,
    kind: usize,
    bonds: &[(usize, usize)],
    rng: &mut impl Rng,
) -> SpinConfig {
    let n = l.n_sites();
    match kind {
        0 => l.flipped(rng.random_range(0..n)),
        1 => {
            let (a, b) = bonds[rng.random_range(0..bonds.len())];
            l.flipped_many(&[a, b])
        }
        2 => l.flipped_all(),
        _ => SpinConfig::from_index(n, rng.random_range(0..1usize << n)),
    }
}

/// One Metropolis step of the diagonal chain: acceptance
/// `min(1, ρ_{l′,l′} / ρ_{l,l})` on the (real, non-negative) diagonal.
pub fn diag_chain_step(
    l: &SpinConfig,
    rho_elem: RhoElem,
    moves: &MoveSet,
    bonds: &[(usize, usize)],
    rng: &mut impl Rng,
) -> (SpinConfig, bool) {
    let mut weights = moves.diag_weights;
    if bonds.is_empty() {
        weights[1] = 0.0;
    }
    let kind = sample_weighted(&weights, rng);
    let proposal = propose_diag(l, kind, bonds, rng);
    let cur = rho_elem(l, l).re;
    let new = rho_elem(&proposal, &proposal).re;
    let accept = new > 0.0 && (new >= cur || rng.random_range(0.0..1.0) < new / cur);
    if accept {
        (proposal, true)
    } else {
        (l.clone(), false)
    }
}

/// Start the diagonal chain at the largest diagonal weight.
pub fn diag_chain_start(n_sites: usize, rho_elem: RhoElem) -> Result<SpinConfig> {
    let dim = 1usize << n_sites;
    let mut best = (0usize, -1.0f64);
    for i in 0..dim {
        let cfg = SpinConfig::from_index(n_sites, i);
        let w = rho_elem(&cfg, &cfg).re;
        if w > best.1 {
            best = (i, w);
        }
    }
    if best.1 <= 0.0 {
        return Err(Error::ZeroAmplitude);
    }
    Ok(SpinConfig::from_index(n_sites, best.0))
}

/// Mean and batch-means standard error of a sample sequence.
fn batch_stats(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let batch = (n / N_BATCHES).max(1);
    let means: Vec<f64> = samples
        .chunks(batch)
        .take(N_BATCHES)
        .map(|ch| ch.iter().sum::<f64>() / ch.len() as f64)
        .collect();
    let k = means.len();
    if k < 2 {
        return (mean, f64::INFINITY);
    }
    let bm = means.iter().sum::<f64>() / k as f64;
    let var = means.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

/// Estimate `Tr(ρ·obs)` along a diagonal chain.
///
/// At each sampled configuration `l` the estimator adds
/// `Σ_terms phase·ρ_{l,m}/ρ_{l,l}` where `P|l⟩ = phase|m⟩` for each
/// monomial. Returns the mean and a 16-batch standard error.
///
/// `burn_in` counts discarded leading steps; `None` uses 10 sweeps of
/// `n_sites²` total moves. Errors with [`Error::ChainStuck`] if every
/// proposal in a long window is rejected (degenerate ρ).
pub fn estimate_observable(
    n_sites: usize,
    rho_elem: RhoElem,
    obs: &Observable,
    n_samples: usize,
    burn_in: Option<usize>,
    moves: &MoveSet,
    bonds: &[(usize, usize)],
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    moves.validate()?;
    if n_samples == 0 {
        return Err(Error::BackendConfig("n_samples must be positive".into()));
    }
    let burn = burn_in.unwrap_or(10 * n_sites * n_sites);
    let limit = stuck_limit(n_sites);
    let mut l = diag_chain_start(n_sites, rho_elem)?;
    let mut rejected = 0usize;
    let advance = |l: &mut SpinConfig, rejected: &mut usize, rng: &mut _| -> Result<()> {
        let (next, accepted) = diag_chain_step(l, rho_elem, moves, bonds, rng);
        *l = next;
        *rejected = if accepted { 0 } else { *rejected + 1 };
        if *rejected >= limit {
            return Err(Error::ChainStuck(limit));
        }
        Ok(())
    };
    for _ in 0..burn {
        advance(&mut l, &mut rejected, rng)?;
    }
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        advance(&mut l, &mut rejected, rng)?;
        let denom = rho_elem(&l, &l);
        let mut x = c(0.0, 0.0);
        for term in &obs.terms {
            let (m_idx, phase) = term.act_on_basis(l.index());
            let m = SpinConfig::from_index(n_sites, m_idx);
            x += phase * rho_elem(&l, &m);
        }
        samples.push((x / denom).re);
    }
    Ok(batch_stats(&samples))
}

/// Per-entry estimate and batch-means standard error of an SR system.
#[derive(Debug, Clone)]
pub struct SrEstimate {
    pub sys: SrSystem,
    /// Standard error of each `S` entry.
    pub s_err: ndarray::Array2<f64>,
    /// Standard error of each `f` entry.
    pub f_err: ndarray::Array1<f64>,
}

/// Accumulated first and second moments of `(O_μ, E)` over one batch.
struct SrAccumulator {
    count: usize,
    o: Vec<C64>,
    e: C64,
    oo: ndarray::Array2<C64>,
    oe: Vec<C64>,
}

impl SrAccumulator {
    fn new(p: usize) -> Self {
        SrAccumulator {
            count: 0,
            o: vec![c(0.0, 0.0); p],
            e: c(0.0, 0.0),
            oo: ndarray::Array2::from_elem((p, p), c(0.0, 0.0)),
            oe: vec![c(0.0, 0.0); p],
        }
    }

    fn add(&mut self, o: &[C64], e: C64) {
        self.count += 1;
        self.e += e;
        let p = o.len();
        for mu in 0..p {
            self.o[mu] += o[mu];
            self.oe[mu] += o[mu].conj() * e;
            for nu in mu..p {
                self.oo[[mu, nu]] += o[mu].conj() * o[nu];
            }
        }
    }

    /// Covariance-form `S` and `f` from this accumulator's means.
    fn finish(&self) -> SrSystem {
        let p = self.o.len();
        let n = self.count as f64;
        let o_mean: Vec<C64> = self.o.iter().map(|z| z / n).collect();
        let e_mean = self.e / n;
        let mut s = ndarray::Array2::zeros((p, p));
        for mu in 0..p {
            for nu in mu..p {
                let val =
                    (self.oo[[mu, nu]] / n - o_mean[mu].conj() * o_mean[nu]).re;
                s[[mu, nu]] = val;
                s[[nu, mu]] = val;
            }
        }
        let mut f = ndarray::Array1::zeros(p);
        for mu in 0..p {
            f[mu] = (self.oe[mu] / n - o_mean[mu].conj() * e_mean).re;
        }
        SrSystem { s, f }
    }

    fn merge(&mut self, other: &SrAccumulator) {
        self.count += other.count;
        self.e += other.e;
        for mu in 0..self.o.len() {
            self.o[mu] += other.o[mu];
            self.oe[mu] += other.oe[mu];
        }
        self.oo = &self.oo + &other.oo;
    }
}

/// Estimate `S` and `f` from element accessors along one pair chain.
///
/// `deriv_elem(μ, l, r)` supplies `(∂_μρ)_{l,r}`; `local_est(l, r)`
/// supplies `(Lρ)_{l,r}/ρ_{l,r}`. The estimators depend on ρ only through
/// ratios, so any global rescaling of the accessors cancels exactly.
#[allow(clippy::too_many_arguments)]
pub fn estimate_sr_from_elements(
    n_sites: usize,
    p: usize,
    rho_elem: RhoElem,
    deriv_elem: &dyn Fn(usize, &SpinConfig, &SpinConfig) -> C64,
    local_est: &dyn Fn(&SpinConfig, &SpinConfig) -> Result<C64>,
    n_samples: usize,
    burn_in: Option<usize>,
    moves: &MoveSet,
    bonds: &[(usize, usize)],
    rng: &mut impl Rng,
) -> Result<SrEstimate> {
    moves.validate()?;
    if n_samples == 0 {
        return Err(Error::BackendConfig("n_samples must be positive".into()));
    }
    let burn = burn_in.unwrap_or(10 * n_sites * n_sites);
    let limit = stuck_limit(n_sites);
    let mut st = PairChainState::start(n_sites, rho_elem)?;
    let mut rejected = 0usize;
    let advance = |st: &mut PairChainState, rejected: &mut usize, rng: &mut _| -> Result<()> {
        let (next, accepted) = pair_chain_step(st, rho_elem, moves, bonds, rng);
        *st = next;
        *rejected = if accepted { 0 } else { *rejected + 1 };
        if *rejected >= limit {
            return Err(Error::ChainStuck(limit));
        }
        Ok(())
    };
    for _ in 0..burn {
        advance(&mut st, &mut rejected, rng)?;
    }
    let batch_len = (n_samples / N_BATCHES).max(1);
    let mut batches: Vec<SrAccumulator> = Vec::new();
    let mut current = SrAccumulator::new(p);
    let mut o = vec![c(0.0, 0.0); p];
    for _ in 0..n_samples {
        advance(&mut st, &mut rejected, rng)?;
        for (mu, slot) in o.iter_mut().enumerate() {
            *slot = deriv_elem(mu, &st.l, &st.r) / st.amp;
        }
        let e = local_est(&st.l, &st.r)?;
        current.add(&o, e);
        if current.count == batch_len && batches.len() + 1 < N_BATCHES {
            batches.push(std::mem::replace(&mut current, SrAccumulator::new(p)));
        }
    }
    if current.count > 0 {
        batches.push(current);
    }

    // Full-sample estimate: merge all batches, then finish.
    let mut total = SrAccumulator::new(p);
    for b in &batches {
        total.merge(b);
    }
    let full = total.finish();

    // Batch-means errors from the spread of per-batch estimates.
    let k = batches.len();
    let mut s_err = ndarray::Array2::zeros((p, p));
    let mut f_err = ndarray::Array1::zeros(p);
    if k >= 2 {
        let finished: Vec<SrSystem> = batches.iter().map(SrAccumulator::finish).collect();
        for mu in 0..p {
            for nu in 0..p {
                let bm: f64 =
                    finished.iter().map(|b| b.s[[mu, nu]]).sum::<f64>() / k as f64;
                let var = finished
                    .iter()
                    .map(|b| (b.s[[mu, nu]] - bm).powi(2))
                    .sum::<f64>()
                    / (k - 1) as f64;
                s_err[[mu, nu]] = (var / k as f64).sqrt();
            }
            let bm: f64 = finished.iter().map(|b| b.f[mu]).sum::<f64>() / k as f64;
            let var =
                finished.iter().map(|b| (b.f[mu] - bm).powi(2)).sum::<f64>() / (k - 1) as f64;
            f_err[mu] = (var / k as f64).sqrt();
        }
    } else {
        s_err.fill(f64::INFINITY);
        f_err.fill(f64::INFINITY);
    }
    Ok(SrEstimate { sys: full, s_err, f_err })
}

/// Sampling estimate of the SR system for a network state: dense
/// feedforward supplies the element accessors, the pair chain supplies the
/// measure.
pub fn estimate_sr(
    m: &LindbladModel,
    topo: &NetworkTopology,
    params: &ParamVector,
    n_samples: usize,
    burn_in: Option<usize>,
    moves: &MoveSet,
    rng: &mut impl Rng,
) -> Result<SrEstimate> {
    if topo.output_qubits() != m.n_sites() {
        return Err(Error::DimMismatch(topo.output_qubits(), m.n_sites()));
    }
    let eval = evaluate_with_derivatives(topo, params)?;
    let rho = eval.rho;
    let derivs = eval.derivs;
    let rho_elem = move |l: &SpinConfig, r: &SpinConfig| rho.element(l, r);
    let deriv_elem = |mu: usize, l: &SpinConfig, r: &SpinConfig| {
        derivs[mu][[l.index(), r.index()]]
    };
    let local_est =
        |l: &SpinConfig, r: &SpinConfig| m.local_estimator(&rho_elem, l, r);
    estimate_sr_from_elements(
        m.n_sites(),
        topo.param_len(),
        &rho_elem,
        &deriv_elem,
        &local_est,
        n_samples,
        burn_in,
        moves,
        m.nn_bonds(),
        rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensityMatrix;
    use crate::network::{Connectivity, Tying};
    use crate::solver::assemble_exact;
    use crate::testing::{random_density, rng};

    fn elem_of<'a>(rho: &'a DensityMatrix) -> impl Fn(&SpinConfig, &SpinConfig) -> C64 + 'a {
        move |l, r| rho.element(l, r)
    }

    #[test]
    fn pair_moves_always_accepted_on_uniform_magnitude_state() {
        let rho = DensityMatrix::all_plus(3);
        let elem = elem_of(&rho);
        let bonds = [(0usize, 1usize), (1, 2)];
        let mut r = rng(1);
        let mut st = PairChainState::start(3, &elem).unwrap();
        for _ in 0..500 {
            let (next, accepted) = pair_chain_step(&st, &elem, &MoveSet::default(), &bonds, &mut r);
            assert!(accepted, "uniform |rho| must accept every move");
            st = next;
        }
    }

    #[test]
    fn zero_amplitude_proposals_are_rejected() {
        // ρ = |↑↑⟩⟨↑↑| + tiny: only the (0,0) element is nonzero, so every
        // move away is rejected and the chain stays put.
        let rho = DensityMatrix::basis(2, 0);
        let elem = elem_of(&rho);
        let mut r = rng(2);
        let st = PairChainState::start(2, &elem).unwrap();
        assert_eq!(st.l.index(), 0);
        assert_eq!(st.r.index(), 0);
        for _ in 0..50 {
            let (next, accepted) =
                pair_chain_step(&st, &elem, &MoveSet::default(), &[(0, 1)], &mut r);
            assert!(!accepted);
            assert_eq!(next.l.index(), 0);
            assert_eq!(next.r.index(), 0);
        }
    }

    #[test]
    fn diag_chain_pinned_at_pure_basis_state() {
        let rho = DensityMatrix::basis(3, 0);
        let elem = elem_of(&rho);
        let mut r = rng(3);
        let l0 = diag_chain_start(3, &elem).unwrap();
        assert_eq!(l0.index(), 0);
        let mut l = l0;
        for _ in 0..50 {
            let (next, accepted) =
                diag_chain_step(&l, &elem, &MoveSet::default(), &[(0, 1), (1, 2)], &mut r);
            assert!(!accepted);
            l = next;
            assert_eq!(l.index(), 0);
        }
    }

    #[test]
    fn diag_chain_accepts_everything_on_maximally_mixed_state() {
        let rho = DensityMatrix::maximally_mixed(2);
        let elem = elem_of(&rho);
        let mut r = rng(4);
        let mut l = diag_chain_start(2, &elem).unwrap();
        for _ in 0..200 {
            let (next, accepted) =
                diag_chain_step(&l, &elem, &MoveSet::default(), &[(0, 1)], &mut r);
            assert!(accepted);
            l = next;
        }
    }

    #[test]
    fn pair_chain_stationary_distribution_matches_weights() {
        let rho_mat = random_density(&mut rng(7), 4);
        let rho = DensityMatrix::from_matrix(rho_mat).unwrap();
        let elem = elem_of(&rho);
        let bonds = [(0usize, 1usize)];
        let mut r = rng(8);
        let mut st = PairChainState::start(2, &elem).unwrap();
        let steps = 400_000usize;
        let mut counts = vec![0usize; 16];
        // Per-state batch counters for an autocorrelation-robust error bar.
        let mut batch_counts = vec![[0usize; 16]; N_BATCHES];
        let batch = steps / N_BATCHES;
        for k in 0..steps {
            let (next, _) = pair_chain_step(&st, &elem, &MoveSet::default(), &bonds, &mut r);
            st = next;
            let idx = st.l.index() * 4 + st.r.index();
            counts[idx] += 1;
            batch_counts[(k / batch).min(N_BATCHES - 1)][idx] += 1;
        }
        let z: f64 = (0..4)
            .flat_map(|l| (0..4).map(move |rr| (l, rr)))
            .map(|(l, rr)| {
                rho.mat()[[l, rr]].norm_sqr()
            })
            .sum();
        for l in 0..4 {
            for rr in 0..4 {
                let idx = l * 4 + rr;
                let expect = rho.mat()[[l, rr]].norm_sqr() / z;
                let freq = counts[idx] as f64 / steps as f64;
                let bfreqs: Vec<f64> = batch_counts
                    .iter()
                    .map(|b| b[idx] as f64 / batch as f64)
                    .collect();
                let bm = bfreqs.iter().sum::<f64>() / bfreqs.len() as f64;
                let var = bfreqs.iter().map(|x| (x - bm).powi(2)).sum::<f64>()
                    / (bfreqs.len() - 1) as f64;
                let se = (var / bfreqs.len() as f64).sqrt();
                assert!(
                    (freq - expect).abs() < 5.0 * se + 1e-4,
                    "state ({l},{rr}): freq {freq:.5} vs weight {expect:.5} (se {se:.2e})"
                );
            }
        }
    }

    #[test]
    fn diag_chain_stationary_distribution_matches_diagonal() {
        let rho_mat = random_density(&mut rng(9), 8);
        let rho = DensityMatrix::from_matrix(rho_mat).unwrap();
        let elem = elem_of(&rho);
        let bonds = [(0usize, 1usize), (1, 2), (2, 0)];
        let mut r = rng(10);
        let mut l = diag_chain_start(3, &elem).unwrap();
        let steps = 400_000usize;
        let mut counts = vec![0usize; 8];
        let mut batch_counts = vec![[0usize; 8]; N_BATCHES];
        let batch = steps / N_BATCHES;
        for k in 0..steps {
            let (next, _) = diag_chain_step(&l, &elem, &MoveSet::default(), &bonds, &mut r);
            l = next;
            counts[l.index()] += 1;
            batch_counts[(k / batch).min(N_BATCHES - 1)][l.index()] += 1;
        }
        for i in 0..8 {
            let expect = rho.mat()[[i, i]].re;
            let freq = counts[i] as f64 / steps as f64;
            let bfreqs: Vec<f64> =
                batch_counts.iter().map(|b| b[i] as f64 / batch as f64).collect();
            let bm = bfreqs.iter().sum::<f64>() / bfreqs.len() as f64;
            let var = bfreqs.iter().map(|x| (x - bm).powi(2)).sum::<f64>()
                / (bfreqs.len() - 1) as f64;
            let se = (var / bfreqs.len() as f64).sqrt();
            assert!(
                (freq - expect).abs() < 5.0 * se + 1e-4,
                "config {i}: freq {freq:.5} vs diagonal {expect:.5} (se {se:.2e})"
            );
        }
    }

    #[test]
    fn detailed_balance_on_two_site_enumeration() {
        // Empirical flow between every ordered pair of chain states must
        // balance its reverse within statistical error.
        let rho_mat = random_density(&mut rng(21), 4);
        let rho = DensityMatrix::from_matrix(rho_mat).unwrap();
        let elem = elem_of(&rho);
        let bonds = [(0usize, 1usize)];
        let mut r = rng(22);
        let mut st = PairChainState::start(2, &elem).unwrap();
        let steps = 600_000usize;
        let mut flows = vec![vec![0usize; 16]; 16];
        let mut prev = st.l.index() * 4 + st.r.index();
        for _ in 0..steps {
            let (next, _) = pair_chain_step(&st, &elem, &MoveSet::default(), &bonds, &mut r);
            st = next;
            let cur = st.l.index() * 4 + st.r.index();
            flows[prev][cur] += 1;
            prev = cur;
        }
        for a in 0..16 {
            for b in (a + 1)..16 {
                let ab = flows[a][b] as f64;
                let ba = flows[b][a] as f64;
                if ab + ba < 50.0 {
                    continue; // too rare for a meaningful comparison
                }
                let diff = (ab - ba).abs();
                let sigma = (ab + ba).sqrt();
                assert!(
                    diff < 5.0 * sigma,
                    "flow {a}->{b}: {ab} vs {ba} (sigma {sigma:.1})"
                );
            }
        }
    }

    #[test]
    fn observable_estimator_is_exact_on_plus_state() {
        let rho = DensityMatrix::all_plus(1);
        let elem = elem_of(&rho);
        let obs = Observable::parse("x(0)", 1).unwrap();
        let mut r = rng(5);
        let (mean, stderr) = estimate_observable(
            1,
            &elem,
            &obs,
            2000,
            Some(10),
            &MoveSet::default(),
            &[],
            &mut r,
        )
        .unwrap();
        assert!((mean - 1.0).abs() < 1e-12, "mean {mean}");
        assert!(stderr < 1e-12, "stderr {stderr}");
    }

    #[test]
    fn observable_estimator_agrees_with_dense_expectation() {
        let m = crate::lindblad::LindbladModel::ising_1d(3, 1.0, 0.6, 1.0, true).unwrap();
        let ss = crate::oracle::steady_state(&m).unwrap();
        let elem = elem_of(&ss.rho);
        let obs = Observable::parse("avg_z", 3).unwrap();
        let exact = obs.expectation(ss.rho.mat());
        let mut r = rng(6);
        let (mean, stderr) = estimate_observable(
            3,
            &elem,
            &obs,
            40_000,
            None,
            &MoveSet::default(),
            m.nn_bonds(),
            &mut r,
        )
        .unwrap();
        assert!(
            (mean - exact).abs() < 5.0 * stderr,
            "mean {mean} vs exact {exact} (stderr {stderr:.2e})"
        );
        assert!(stderr < 0.05);
    }

    #[test]
    fn sr_estimate_matches_exact_assembly_within_errors() {
        let topo =
            NetworkTopology::new(vec![2, 1], Connectivity::LocalModulo, Tying::TiedPerLayer)
                .unwrap();
        let m = crate::lindblad::LindbladModel::single_site(0.4, 1.0).unwrap();
        let mut r = rng(12);
        let params = ParamVector::random(&topo, &mut r, 0.8);
        let exact = assemble_exact(&m, &topo, &params).unwrap();
        let est = estimate_sr(&m, &topo, &params, 30_000, None, &MoveSet::default(), &mut r)
            .unwrap();
        let p = topo.param_len();
        for mu in 0..p {
            for nu in 0..p {
                let err = (est.sys.s[[mu, nu]] - exact.s[[mu, nu]]).abs();
                let bound = 5.0 * est.s_err[[mu, nu]] + 1e-9;
                assert!(
                    err < bound,
                    "S[{mu},{nu}]: {} vs {} (err {err:.2e}, bound {bound:.2e})",
                    est.sys.s[[mu, nu]],
                    exact.s[[mu, nu]]
                );
            }
            let err = (est.sys.f[mu] - exact.f[mu]).abs();
            let bound = 5.0 * est.f_err[mu] + 1e-9;
            assert!(err < bound, "f[{mu}]: err {err:.2e}, bound {bound:.2e}");
        }
    }

    #[test]
    fn sr_estimate_invariant_under_global_rescaling() {
        let topo =
            NetworkTopology::new(vec![2, 1], Connectivity::LocalModulo, Tying::TiedPerLayer)
                .unwrap();
        let m = crate::lindblad::LindbladModel::single_site(0.4, 1.0).unwrap();
        let mut r = rng(13);
        let params = ParamVector::random(&topo, &mut r, 0.8);
        let eval = evaluate_with_derivatives(&topo, &params).unwrap();
        let rho = eval.rho;
        let derivs = eval.derivs;
        let run_with_scale = |scale: f64| {
            let rho_elem =
                |l: &SpinConfig, r2: &SpinConfig| rho.element(l, r2) * scale;
            let deriv_elem = |mu: usize, l: &SpinConfig, r2: &SpinConfig| {
                derivs[mu][[l.index(), r2.index()]] * scale
            };
            let local_est = |l: &SpinConfig, r2: &SpinConfig| {
                m.local_estimator(&rho_elem, l, r2)
            };
            let mut rr = rng(14);
            estimate_sr_from_elements(
                1,
                topo.param_len(),
                &rho_elem,
                &deriv_elem,
                &local_est,
                5000,
                Some(50),
                &MoveSet::default(),
                &[],
                &mut rr,
            )
            .unwrap()
        };
        let a = run_with_scale(1.0);
        let b = run_with_scale(3.7);
        for mu in 0..topo.param_len() {
            for nu in 0..topo.param_len() {
                let d = (a.sys.s[[mu, nu]] - b.sys.s[[mu, nu]]).abs();
                assert!(d < 1e-12, "S[{mu},{nu}] differs by {d}");
            }
            assert!((a.sys.f[mu] - b.sys.f[mu]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_derivative_parameter_gives_zero_rows() {
        // Dead parameters (rotations on wires traced out immediately) have
        // derivative matrices that vanish to rounding, so their estimator
        // rows collapse to the same level regardless of sample count.
        let topo =
            NetworkTopology::new(vec![2, 1], Connectivity::LocalModulo, Tying::Untied).unwrap();
        let mut r = rng(15);
        let params = ParamVector::random(&topo, &mut r, 0.8);
        let m = crate::lindblad::LindbladModel::single_site(0.4, 1.0).unwrap();
        let est =
            estimate_sr(&m, &topo, &params, 2000, Some(100), &MoveSet::default(), &mut r).unwrap();
        for dead in 27..33 {
            assert!(est.sys.f[dead].abs() < 1e-12);
            for nu in 0..topo.param_len() {
                assert!(est.sys.s[[dead, nu]].abs() < 1e-12);
                assert!(est.sys.s[[nu, dead]].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn estimates_are_deterministic_for_fixed_seed() {
        let topo =
            NetworkTopology::new(vec![2, 1], Connectivity::LocalModulo, Tying::TiedPerLayer)
                .unwrap();
        let m = crate::lindblad::LindbladModel::single_site(0.4, 1.0).unwrap();
        let params = ParamVector::random(&topo, &mut rng(16), 0.8);
        let a = estimate_sr(&m, &topo, &params, 1000, Some(20), &MoveSet::default(), &mut rng(17))
            .unwrap();
        let b = estimate_sr(&m, &topo, &params, 1000, Some(20), &MoveSet::default(), &mut rng(17))
            .unwrap();
        assert_eq!(a.sys.s, b.sys.s);
        assert_eq!(a.sys.f, b.sys.f);
    }

    #[test]
    fn stuck_chain_is_reported() {
        // A rank-one diagonal ρ leaves the pair chain no second state.
        let rho = DensityMatrix::basis(2, 1);
        let elem = elem_of(&rho);
        let deriv_elem = |_: usize, _: &SpinConfig, _: &SpinConfig| c(0.0, 0.0);
        let local_est = |_: &SpinConfig, _: &SpinConfig| Ok(c(0.0, 0.0));
        let mut r = rng(18);
        let out = estimate_sr_from_elements(
            2,
            1,
            &elem,
            &deriv_elem,
            &local_est,
            3000,
            Some(0),
            &MoveSet::default(),
            &[(0, 1)],
            &mut r,
        );
        assert!(matches!(out, Err(Error::ChainStuck(_))));
    }

    #[test]
    fn stderr_scales_as_inverse_square_root_of_samples() {
        let rho = DensityMatrix::maximally_mixed(1);
        let elem = elem_of(&rho);
        let obs = Observable::parse("z(0)", 1).unwrap();
        let mut errs = Vec::new();
        for (k, n) in [(0u64, 1000usize), (1, 10_000), (2, 100_000)] {
            let mut r = rng(30 + k);
            let (mean, stderr) =
                estimate_observable(1, &elem, &obs, n, Some(100), &MoveSet::default(), &[], &mut r)
                    .unwrap();
            assert!(mean.abs() < 5.0 * stderr + 1e-12);
            errs.push(stderr);
        }
        // Fit the decay exponent over two decades: must be -0.5 +- 0.1.
        let slope = (errs[2].ln() - errs[0].ln()) / ((100_000f64).ln() - (1000f64).ln());
        assert!(
            (slope + 0.5).abs() < 0.1,
            "stderr scaling exponent {slope:.3} (errors {errs:?})"
        );
    }
}
