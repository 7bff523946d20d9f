//! Grid-search model selection over (ρ, a, σ, λ_r) with repeated random
//! guesses, and the free-parameter accounting used to size comparison models.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EsnError, Result};
use crate::ip::IpConfig;
use crate::metrics::{aggregate_acc, Aggregation};
use crate::pipeline::{adapt, collect_training, evaluate_counts, PreparedDataset};
use crate::readout::{threshold_grid, RidgeReadout};
use crate::reservoir::{init_deep_reservoir, ReservoirConfig};

/// A grid ρ of 1.0 is run at this value so the strict ESP bound holds.
pub const RHO_ONE_SUBSTITUTE: f64 = 1.0 - 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_layers: usize,
    pub units_per_layer: usize,
    pub connectivity: f64,
}

impl Architecture {
    /// 30 layers of 200 units, 1% recurrent connectivity.
    pub fn deep_paper() -> Self {
        Self {
            n_layers: 30,
            units_per_layer: 200,
            connectivity: 0.01,
        }
    }

    /// One 6000-unit reservoir, 1% recurrent connectivity.
    pub fn shallow_paper() -> Self {
        Self {
            n_layers: 1,
            units_per_layer: 6000,
            connectivity: 0.01,
        }
    }

    pub fn total_units(&self) -> usize {
        self.n_layers * self.units_per_layer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub spectral_radius: f64,
    pub leaky_rate: f64,
    pub input_scaling: f64,
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub rho_values: Vec<f64>,
    pub a_values: Vec<f64>,
    pub sigma_values: Vec<f64>,
    pub lambda_values: Vec<f64>,
    pub guesses: usize,
    /// Use the same guess seeds at every grid point instead of deriving
    /// them from the grid index.
    pub shared_seeds: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rho_values: vec![0.1, 0.3, 0.5, 0.7, 0.9, 1.0],
            a_values: vec![0.1, 0.3, 0.5, 0.7, 0.9, 1.0],
            sigma_values: vec![0.5, 1.5, 2.5],
            lambda_values: vec![1e-4, 1e-3, 1e-2, 1e-1],
            guesses: 5,
            shared_seeds: false,
        }
    }
}

impl GridSpec {
    pub fn single(h: Hyperparameters, guesses: usize) -> Self {
        Self {
            rho_values: vec![h.spectral_radius],
            a_values: vec![h.leaky_rate],
            sigma_values: vec![h.input_scaling],
            lambda_values: vec![h.ridge],
            guesses,
            shared_seeds: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rho_values", &self.rho_values),
            ("a_values", &self.a_values),
            ("sigma_values", &self.sigma_values),
            ("lambda_values", &self.lambda_values),
        ] {
            if v.is_empty() {
                return Err(EsnError::Config(format!("grid {name} is empty")));
            }
        }
        if self.guesses == 0 {
            return Err(EsnError::Config("grid needs at least one guess".into()));
        }
        Ok(())
    }

    pub fn reservoir_points(&self) -> usize {
        self.rho_values.len() * self.a_values.len() * self.sigma_values.len()
    }

    pub fn len(&self) -> usize {
        self.reservoir_points() * self.lambda_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hyperparameters at flat index `i`; λ varies fastest, then σ, a, ρ.
    pub fn point(&self, i: usize) -> Hyperparameters {
        let nl = self.lambda_values.len();
        let ns = self.sigma_values.len();
        let na = self.a_values.len();
        Hyperparameters {
            ridge: self.lambda_values[i % nl],
            input_scaling: self.sigma_values[(i / nl) % ns],
            leaky_rate: self.a_values[(i / (nl * ns)) % na],
            spectral_radius: self.rho_values[i / (nl * ns * na)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    Fixed { value: f64 },
    /// Pick from 0.1..=0.9 per guess by validation ACC.
    Tune,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Fixed { value: 0.5 }
    }
}

impl ThresholdPolicy {
    fn candidates(&self) -> Result<Vec<f64>> {
        match *self {
            ThresholdPolicy::Fixed { value } if value > 0.0 && value < 1.0 => Ok(vec![value]),
            ThresholdPolicy::Fixed { value } => Err(EsnError::Config(format!("threshold {value} outside (0, 1)"))),
            ThresholdPolicy::Tune => Ok(threshold_grid()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// `None` disables IP pre-training.
    pub ip: Option<IpConfig>,
    pub washout: usize,
    pub threshold: ThresholdPolicy,
    pub aggregation: Aggregation,
    pub master_seed: u64,
    pub workers: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            ip: Some(IpConfig::default()),
            washout: 0,
            threshold: ThresholdPolicy::default(),
            aggregation: Aggregation::Pooled,
            master_seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub grid_index: usize,
    pub hyperparameters: Hyperparameters,
    /// ρ actually used for initialization.
    pub effective_spectral_radius: f64,
    pub seeds: Vec<u64>,
    pub thresholds: Vec<f64>,
    pub valid_acc: Vec<f64>,
    pub test_acc: Vec<f64>,
    pub valid_mean: f64,
    pub valid_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
    /// Train + test wall-clock seconds summed over guesses.
    pub seconds: f64,
    pub status: TrialStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Index into `trials` of the selected configuration.
    pub selected: usize,
    pub trials: Vec<TrialReport>,
}

impl SearchOutcome {
    pub fn best(&self) -> &TrialReport {
        &self.trials[self.selected]
    }
}

/// Mixes (master, grid point, guess) into one seed (SplitMix64 finalizer).
pub fn derive_seed(master: u64, point: u64, guess: u64) -> u64 {
    let mut z = master
        ^ point.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ guess.wrapping_mul(0xC2B2_AE3D_27D4_EB4F).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sample mean and (n−1) standard deviation; std is 0 for fewer than two values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One guess at one reservoir point, evaluated for every λ.
#[derive(Debug, Clone)]
struct GuessOutcome {
    per_lambda: Vec<Result<LambdaScore, String>>,
}

#[derive(Debug, Clone, Copy)]
struct LambdaScore {
    threshold: f64,
    valid_acc: f64,
    test_acc: f64,
    seconds: f64,
}

fn resolve_rho(rho: f64) -> (f64, Option<String>) {
    if rho == 1.0 {
        (
            RHO_ONE_SUBSTITUTE,
            Some(format!("spectral radius 1.0 run as {RHO_ONE_SUBSTITUTE} (strict ESP bound)")),
        )
    } else {
        (rho, None)
    }
}

fn run_guess(
    data: &PreparedDataset,
    arch: &Architecture,
    h: &Hyperparameters,
    lambdas: &[f64],
    seed: u64,
    opts: &SearchOptions,
) -> Result<GuessOutcome> {
    let started = Instant::now();
    let cfg = ReservoirConfig {
        n_layers: arch.n_layers,
        units_per_layer: arch.units_per_layer,
        input_dim: data.dim,
        leaky_rate: h.leaky_rate,
        spectral_radius: resolve_rho(h.spectral_radius).0,
        input_scaling: h.input_scaling,
        connectivity: arch.connectivity,
        seed,
    };
    let mut model = init_deep_reservoir(&cfg)?;
    if let Some(ip) = &opts.ip {
        adapt(&mut model, &data.train, ip)?;
    }
    let acc = collect_training(&model, &data.train, opts.washout)?;
    let shared = started.elapsed().as_secs_f64();

    let mut solved: Vec<Result<(RidgeReadout, f64), String>> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let t0 = Instant::now();
        solved.push(
            acc.solve(lambda)
                .map(|r| (r, t0.elapsed().as_secs_f64()))
                .map_err(|e| e.to_string()),
        );
    }
    let ok: Vec<usize> = (0..solved.len()).filter(|&i| solved[i].is_ok()).collect();
    let readouts: Vec<RidgeReadout> = ok
        .iter()
        .map(|&i| solved[i].as_ref().expect("filtered").0.clone())
        .collect();

    let thresholds = opts.threshold.candidates()?;
    let t_eval = Instant::now();
    let valid = evaluate_counts(&model, &readouts, &data.valid, &thresholds, opts.washout)?;
    let test = evaluate_counts(&model, &readouts, &data.test, &thresholds, opts.washout)?;
    let eval_seconds = t_eval.elapsed().as_secs_f64();

    let per_readout_eval = eval_seconds / readouts.len().max(1) as f64;
    let mut next_readout = 0;
    let mut per_lambda = Vec::with_capacity(solved.len());
    for s in &solved {
        let (_, solve_secs) = match s {
            Err(e) => {
                per_lambda.push(Err(e.clone()));
                continue;
            }
            Ok(v) => v,
        };
        let r = next_readout;
        next_readout += 1;
        let mut best = 0;
        let mut best_valid = f64::NEG_INFINITY;
        for (k, counts) in valid[r].iter().enumerate().take(thresholds.len()) {
            let v = aggregate_acc(counts, opts.aggregation);
            if v > best_valid {
                best_valid = v;
                best = k;
            }
        }
        per_lambda.push(Ok(LambdaScore {
            threshold: thresholds[best],
            valid_acc: best_valid,
            test_acc: aggregate_acc(&test[r][best], opts.aggregation),
            seconds: shared + solve_secs + per_readout_eval,
        }));
    }
    Ok(GuessOutcome { per_lambda })
}

/// Evaluates every grid point with `grid.guesses` seeded instantiations
/// (train on train, score on valid and test) and selects the point with the
/// highest mean validation ACC. Reservoir-dependent work is shared across
/// the λ values of a point. Failed trials are kept in the report and
/// skipped by selection.
pub fn grid_search(
    dataset: &PreparedDataset,
    arch: &Architecture,
    grid: &GridSpec,
    opts: &SearchOptions,
) -> Result<SearchOutcome> {
    grid.validate()?;
    if opts.workers == 0 {
        return Err(EsnError::Config("workers must be at least 1".into()));
    }
    if let Some(ip) = &opts.ip {
        ip.validate()?;
    }
    opts.threshold.candidates()?;

    let nl = grid.lambda_values.len();
    let units: Vec<(usize, usize)> = (0..grid.reservoir_points())
        .flat_map(|p| (0..grid.guesses).map(move |g| (p, g)))
        .collect();
    let seed_of = |p: usize, g: usize| {
        let point = if grid.shared_seeds { 0 } else { p as u64 };
        derive_seed(opts.master_seed, point, g as u64)
    };
    let run_unit = |&(p, g): &(usize, usize)| {
        let h = grid.point(p * nl);
        run_guess(dataset, arch, &h, &grid.lambda_values, seed_of(p, g), opts)
    };

    let outcomes: Vec<Result<GuessOutcome>> = if opts.workers == 1 {
        units.iter().map(run_unit).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| EsnError::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| units.par_iter().map(run_unit).collect())
    };

    let mut trials = Vec::with_capacity(grid.len());
    for p in 0..grid.reservoir_points() {
        for (li, _) in grid.lambda_values.iter().enumerate() {
            let index = p * nl + li;
            let h = grid.point(index);
            let (rho_used, note) = resolve_rho(h.spectral_radius);
            let mut report = TrialReport {
                grid_index: index,
                hyperparameters: h,
                effective_spectral_radius: rho_used,
                seeds: (0..grid.guesses).map(|g| seed_of(p, g)).collect(),
                thresholds: Vec::new(),
                valid_acc: Vec::new(),
                test_acc: Vec::new(),
                valid_mean: f64::NAN,
                valid_std: f64::NAN,
                test_mean: f64::NAN,
                test_std: f64::NAN,
                seconds: 0.0,
                status: TrialStatus::Ok,
                error: None,
                notes: note.into_iter().collect(),
            };
            for g in 0..grid.guesses {
                let outcome = &outcomes[p * grid.guesses + g];
                let score = match outcome {
                    Err(e) => Err(e.to_string()),
                    Ok(o) => o.per_lambda[li].clone(),
                };
                match score {
                    Ok(s) => {
                        report.thresholds.push(s.threshold);
                        report.valid_acc.push(s.valid_acc);
                        report.test_acc.push(s.test_acc);
                        report.seconds += s.seconds;
                    }
                    Err(e) => {
                        if report.error.is_none() {
                            report.error = Some(format!("guess {g}: {e}"));
                        }
                        report.status = TrialStatus::Failed;
                    }
                }
            }
            if report.status == TrialStatus::Ok {
                (report.valid_mean, report.valid_std) = mean_std(&report.valid_acc);
                (report.test_mean, report.test_std) = mean_std(&report.test_acc);
            } else {
                log::warn!("trial {index} failed: {}", report.error.as_deref().unwrap_or(""));
            }
            trials.push(report);
        }
    }

    let selected = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Ok)
        .fold(None::<&TrialReport>, |best, t| match best {
            Some(b) if b.valid_mean >= t.valid_mean => Some(b),
            _ => Some(t),
        })
        .map(|t| t.grid_index)
        .ok_or_else(|| {
            EsnError::Numerical(format!(
                "all {} trials failed; first error: {}",
                trials.len(),
                trials
                    .iter()
                    .find_map(|t| t.error.clone())
                    .unwrap_or_default()
            ))
        })?;
    Ok(SearchOutcome { selected, trials })
}

/// DeepESN/ESN trainable-parameter count: a readout with bias per output
/// plus one IP gain and one IP bias per reservoir unit.
pub fn count_free_parameters(n_outputs: u64, n_layers: u64, units_per_layer: u64) -> u64 {
    let total = n_layers * units_per_layer;
    n_outputs * (total + 1) + 2 * total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatedKind {
    Srn,
    Lstm,
    Gru,
}

impl GatedKind {
    fn gates(self) -> u64 {
        match self {
            GatedKind::Srn => 1,
            GatedKind::Lstm => 4,
            GatedKind::Gru => 3,
        }
    }
}

impl std::str::FromStr for GatedKind {
    type Err = EsnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "srn" => Ok(GatedKind::Srn),
            "lstm" => Ok(GatedKind::Lstm),
            "gru" => Ok(GatedKind::Gru),
            other => Err(EsnError::Config(format!("unknown recurrent model '{other}'"))),
        }
    }
}

/// `gates · (N_U·N + N² + N) + N_Y·(N + 1)`
pub fn gated_parameter_count(kind: GatedKind, n_inputs: u64, n_outputs: u64, units: u64) -> u64 {
    kind.gates() * (n_inputs * units + units * units + units) + n_outputs * (units + 1)
}

/// Unit count whose parameter total is closest to `budget` (ties go to the
/// smaller network), with that total.
pub fn solve_units_for_budget(kind: GatedKind, n_inputs: u64, n_outputs: u64, budget: u64) -> Result<(u64, u64)> {
    let count = |n| gated_parameter_count(kind, n_inputs, n_outputs, n);
    if budget < count(1) {
        return Err(EsnError::Contract(format!(
            "budget {budget} is below the {} parameters of a one-unit {kind:?}",
            count(1)
        )));
    }
    // largest n with count(n) <= budget, by bisection on the monotone count
    let (mut lo, mut hi) = (1u64, 2u64);
    while count(hi) <= budget {
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if count(mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let below = count(lo);
    let above = count(hi);
    if above - budget < budget - below {
        Ok((hi, above))
    } else {
        Ok((lo, below))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_dataset, SyntheticSpec};

    #[test]
    fn default_grid_size() {
        let g = GridSpec::default();
        assert_eq!(g.len(), 6 * 6 * 3 * 4);
        assert_eq!(g.len(), 432);
        let last = g.point(431);
        assert_eq!(
            last,
            Hyperparameters {
                spectral_radius: 1.0,
                leaky_rate: 1.0,
                input_scaling: 2.5,
                ridge: 1e-1
            }
        );
        assert_eq!(g.point(1).ridge, 1e-3);
        assert_eq!(g.point(4).input_scaling, 1.5);
    }

    #[test]
    fn free_parameters_deep_rows() {
        assert_eq!(count_free_parameters(88, 30, 200), 540_088);
        assert_eq!(count_free_parameters(82, 30, 200), 504_082);
        assert_eq!(count_free_parameters(52, 30, 200), 324_052);
        assert_eq!(count_free_parameters(58, 30, 200), 360_058);
        assert_eq!(count_free_parameters(88, 1, 6000), 540_088);
    }

    #[test]
    fn budget_solver_piano_rows() {
        let b = count_free_parameters(88, 30, 200);
        assert_eq!(solve_units_for_budget(GatedKind::Srn, 88, 88, b).unwrap(), (652, 540_596));
        assert_eq!(solve_units_for_budget(GatedKind::Lstm, 88, 88, b).unwrap(), (316, 539_816));
        assert_eq!(solve_units_for_budget(GatedKind::Gru, 88, 88, b).unwrap(), (369, 539_566));
        assert!(solve_units_for_budget(GatedKind::Gru, 88, 88, 10).is_err());
    }

    #[test]
    fn mean_std_uses_sample_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[0.4]), (0.4, 0.0));
    }

    #[test]
    fn seeds_differ_by_point_and_guess() {
        let a = derive_seed(1, 0, 0);
        assert_ne!(a, derive_seed(1, 1, 0));
        assert_ne!(a, derive_seed(1, 0, 1));
        assert_ne!(a, derive_seed(2, 0, 0));
        assert_eq!(a, derive_seed(1, 0, 0));
    }

    fn tiny() -> PreparedDataset {
        let ds = synthetic_dataset("synthetic", &SyntheticSpec::smoke(), 4).unwrap();
        PreparedDataset::new(&ds).unwrap()
    }

    fn tiny_arch() -> Architecture {
        Architecture {
            n_layers: 2,
            units_per_layer: 12,
            connectivity: 0.3,
        }
    }

    #[test]
    fn single_point_grid_returns_that_point() {
        let h = Hyperparameters {
            spectral_radius: 0.9,
            leaky_rate: 0.5,
            input_scaling: 1.0,
            ridge: 1e-2,
        };
        let out = grid_search(&tiny(), &tiny_arch(), &GridSpec::single(h, 2), &SearchOptions::default()).unwrap();
        assert_eq!(out.trials.len(), 1);
        assert_eq!(out.best().hyperparameters, h);
        assert_eq!(out.best().test_acc.len(), 2);
        assert!(out.best().test_acc.iter().all(|a| (0.0..=1.0).contains(a)));
        assert!(out.best().seconds > 0.0);
    }

    #[test]
    fn duplicate_points_with_shared_seeds_agree() {
        let grid = GridSpec {
            rho_values: vec![0.5, 0.5],
            a_values: vec![0.7],
            sigma_values: vec![1.0],
            lambda_values: vec![1e-3],
            guesses: 2,
            shared_seeds: true,
        };
        let out = grid_search(&tiny(), &tiny_arch(), &grid, &SearchOptions::default()).unwrap();
        assert_eq!(out.trials[0].valid_acc, out.trials[1].valid_acc);
        assert_eq!(out.trials[0].test_mean, out.trials[1].test_mean);
        assert_eq!(out.selected, 0);
    }

    #[test]
    fn selection_and_determinism_across_workers() {
        let grid = GridSpec {
            rho_values: vec![0.5, 1.0],
            a_values: vec![0.3, 1.0],
            sigma_values: vec![1.0],
            lambda_values: vec![1e-3, 1e-1],
            guesses: 2,
            shared_seeds: false,
        };
        let data = tiny();
        let opts = SearchOptions {
            master_seed: 17,
            threshold: ThresholdPolicy::Tune,
            ..SearchOptions::default()
        };
        let a = grid_search(&data, &tiny_arch(), &grid, &opts).unwrap();
        let b = grid_search(&data, &tiny_arch(), &grid, &SearchOptions { workers: 3, ..opts.clone() }).unwrap();
        assert_eq!(a.selected, b.selected);
        for (x, y) in a.trials.iter().zip(&b.trials) {
            assert_eq!(x.valid_acc, y.valid_acc);
            assert_eq!(x.test_acc, y.test_acc);
            assert_eq!(x.thresholds, y.thresholds);
        }
        let best = a.best().valid_mean;
        assert!(a.trials.iter().all(|t| t.valid_mean <= best));
        assert!(a.trials.iter().any(|t| !t.notes.is_empty()));
        assert!(a.trials.iter().filter(|t| t.hyperparameters.spectral_radius == 1.0).all(|t| t.effective_spectral_radius < 1.0));
    }

    #[test]
    fn failed_trials_are_reported_not_selected() {
        let grid = GridSpec {
            rho_values: vec![0.5],
            a_values: vec![0.5],
            sigma_values: vec![1.0],
            // NaN ridge makes the solve fail for that λ only
            lambda_values: vec![f64::NAN, 1e-2],
            guesses: 1,
            shared_seeds: false,
        };
        let out = grid_search(&tiny(), &tiny_arch(), &grid, &SearchOptions::default()).unwrap();
        assert_eq!(out.trials[0].status, TrialStatus::Failed);
        assert!(out.trials[0].error.is_some());
        assert_eq!(out.selected, 1);
    }
}
