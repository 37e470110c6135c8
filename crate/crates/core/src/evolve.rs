//! PSO-DE search over static output feedback gains.
//!
//! Constriction-factor PSO moves the particles; whenever a particle's
//! cognitive best improves, one DE/rand/1/bin round is run on the set of
//! cognitive bests `S_p` to refine that particle's record. Every stored
//! position and record is feasible: candidates are regenerated until the
//! fitness oracle accepts them, up to `resample_cap` attempts.

use std::time::Instant;

use log::{debug, info};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lmi::{self, LmiSpec};
use crate::oracle;
use crate::plant::{self, GainMatrix, PolytopicPlant};
use crate::sdp::{self, SdpSettings, SdpStatus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvolveError {
    #[error("invalid evolve configuration: {0}")]
    Config(String),
    #[error("initialization of particle {particle} found no feasible gain in {attempts} attempts")]
    Initialization { particle: usize, attempts: usize },
}

/// Outcome of one fitness evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Fitness {
    /// The minimized `δ` at this gain.
    Feasible(f64),
    Infeasible(String),
}

impl Fitness {
    /// `+∞` for infeasible gains, so that ordering is total.
    pub fn value(&self) -> f64 {
        match self {
            Fitness::Feasible(v) => *v,
            Fitness::Infeasible(_) => f64::INFINITY,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Fitness::Feasible(_))
    }
}

/// Relative slack of the per-vertex norm pre-checks in [`fitness`].
const PREFILTER_MARGIN: f64 = 1e-4;

/// Minimized `δ` of the LMI problem at `k`.
///
/// Gains that destabilize some vertex, or whose vertex norms clearly exceed
/// `gamma` or `delta_cap`, are rejected before the SDP is built: no common
/// certificate can exist for them.
pub fn fitness(k: &GainMatrix, plant: &PolytopicPlant, spec: &LmiSpec, settings: &SdpSettings) -> Fitness {
    let loops = match plant.closed_loops(k) {
        Ok(l) => l,
        Err(e) => return Fitness::Infeasible(e.to_string()),
    };
    for (i, cl) in loops.iter().enumerate() {
        match plant::is_stable(&cl.acl, 0.0) {
            Ok(true) => {}
            Ok(false) => return Fitness::Infeasible(format!("unstable at vertex {}", i + 1)),
            Err(e) => return Fitness::Infeasible(e.to_string()),
        }
    }
    if let Err(e) = spec.validate() {
        return Fitness::Infeasible(e.to_string());
    }
    // Each vertex must meet the bounds on its own; a clear violation settles
    // infeasibility without an SDP.
    for (i, cl) in loops.iter().enumerate() {
        if let Some(g) = spec.gamma {
            if cl.cinf.rows() > 0 {
                if let Ok(h) = oracle::hinf_norm(cl, 1e-6) {
                    if h > g * (1.0 + PREFILTER_MARGIN) {
                        return Fitness::Infeasible(format!("H-infinity norm {h} exceeds gamma at vertex {}", i + 1));
                    }
                }
            }
        }
        if let Some(cap) = spec.delta_cap {
            if let Ok(h2) = oracle::h2_norm_squared(cl) {
                if h2 > cap * (1.0 + PREFILTER_MARGIN) {
                    return Fitness::Infeasible(format!("H2 cost {h2} exceeds delta_cap at vertex {}", i + 1));
                }
            }
        }
    }
    let problem = lmi::assemble_closed_loops(&loops, spec);
    let sol = sdp::solve(&problem, settings);
    match sol.status {
        SdpStatus::Optimal => Fitness::Feasible(sol.objective_value),
        status => {
            let why = sol.diagnostic.unwrap_or_default();
            debug!("gain {:?} rejected: {status:?} {why}", k.as_flat());
            Fitness::Infeasible(format!("{status:?}: {why}"))
        }
    }
}

/// Either one interval for every gain entry or one interval per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SearchBox {
    Uniform([f64; 2]),
    PerEntry(Vec<[f64; 2]>),
}

impl Default for SearchBox {
    fn default() -> Self {
        SearchBox::Uniform([-10.0, 10.0])
    }
}

impl SearchBox {
    pub fn bounds(&self, entry: usize) -> (f64, f64) {
        let [lo, hi] = match self {
            SearchBox::Uniform(b) => *b,
            SearchBox::PerEntry(v) => v[entry],
        };
        (lo, hi)
    }

    pub fn contains(&self, k: &[f64]) -> bool {
        k.iter().enumerate().all(|(j, &x)| {
            let (lo, hi) = self.bounds(j);
            lo <= x && x <= hi
        })
    }

    fn validate(&self, dim: usize) -> Result<(), EvolveError> {
        let intervals: Vec<[f64; 2]> = match self {
            SearchBox::Uniform(b) => vec![*b],
            SearchBox::PerEntry(v) => {
                if v.len() != dim {
                    return Err(EvolveError::Config(format!(
                        "search_box has {} intervals, gain has {dim} entries",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        for [lo, hi] in intervals {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(EvolveError::Config(format!("search_box interval [{lo}, {hi}] is empty or not finite")));
            }
        }
        Ok(())
    }
}

fn default_chi() -> f64 {
    0.72984
}
fn default_c() -> f64 {
    2.05
}
fn default_f() -> f64 {
    0.5
}
fn default_cr() -> f64 {
    0.9
}
fn default_np() -> usize {
    5
}
fn default_generations() -> usize {
    5
}
fn default_cap() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    /// Constriction factor.
    #[serde(default = "default_chi")]
    pub chi: f64,
    #[serde(default = "default_c")]
    pub c1: f64,
    #[serde(default = "default_c")]
    pub c2: f64,
    /// DE scale factor.
    #[serde(rename = "F", default = "default_f")]
    pub f: f64,
    /// DE crossover rate.
    #[serde(rename = "CR", default = "default_cr")]
    pub cr: f64,
    /// Swarm size.
    #[serde(rename = "NP", default = "default_np")]
    pub np: usize,
    #[serde(default = "default_generations")]
    pub max_generations: usize,
    #[serde(default)]
    pub search_box: SearchBox,
    #[serde(default = "default_cap")]
    pub resample_cap: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            chi: default_chi(),
            c1: default_c(),
            c2: default_c(),
            f: default_f(),
            cr: default_cr(),
            np: default_np(),
            max_generations: default_generations(),
            search_box: SearchBox::default(),
            resample_cap: default_cap(),
            seed: 0,
        }
    }
}

impl EvolveConfig {
    /// Check the configuration against a gain with `dim` entries.
    pub fn validate(&self, dim: usize) -> Result<(), EvolveError> {
        let bad = |msg: String| Err(EvolveError::Config(msg));
        if self.np < 4 {
            return bad(format!("NP must be at least 4 for DE/rand/1, got {}", self.np));
        }
        if !(self.chi > 0.0 && self.chi.is_finite()) {
            return bad(format!("chi must be positive, got {}", self.chi));
        }
        if !(self.c1 >= 0.0 && self.c1.is_finite() && self.c2 >= 0.0 && self.c2.is_finite()) {
            return bad(format!("c1, c2 must be nonnegative, got {}, {}", self.c1, self.c2));
        }
        if !(self.f > 0.0 && self.f <= 2.0) {
            return bad(format!("F must lie in (0, 2], got {}", self.f));
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return bad(format!("CR must lie in [0, 1], got {}", self.cr));
        }
        if self.resample_cap == 0 {
            return bad("resample_cap must be positive".into());
        }
        if dim == 0 {
            return bad("gain has no entries".into());
        }
        self.search_box.validate(dim)
    }

    /// Swarm-size guidance of 5 to 10 particles per gain entry.
    pub fn np_hint(&self, dim: usize) -> Option<String> {
        (self.np < 5 * dim || self.np > 10 * dim)
            .then(|| format!("NP = {} is outside the usual 5..10 per gain entry ({}..{})", self.np, 5 * dim, 10 * dim))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: GainMatrix,
    pub velocity: Vec<f64>,
    pub cognitive_best: GainMatrix,
    pub cognitive_best_fitness: f64,
    pub fitness: f64,
}

#[derive(Debug, Clone)]
pub struct Swarm {
    pub particles: Vec<Particle>,
    pub population_best: GainMatrix,
    pub population_best_fitness: f64,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub generation: usize,
    pub best_fitness: f64,
    pub best_gain: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub best_gain: Vec<f64>,
    pub best_delta: f64,
    pub seed: u64,
    pub wall_time_s: f64,
}

/// Per-generation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenerationStats {
    pub generation: usize,
    /// Particles whose cognitive best improved in the PSO step.
    pub cognitive_improvements: usize,
    pub de_rounds: usize,
    /// DE trials that replaced a cognitive best.
    pub de_replacements: usize,
    pub pso_give_ups: usize,
    pub de_give_ups: usize,
    pub fitness_calls: usize,
}

/// Hooks called by [`run`]; every method defaults to a no-op.
pub trait Observer {
    fn on_generation(&mut self, _record: &TraceRecord, _stats: &GenerationStats, _swarm: &Swarm) {}
    /// Called for every gain offered to the fitness oracle.
    fn on_evaluation(&mut self, _k: &GainMatrix, _fitness: &Fitness) {}
}

impl Observer for () {}

pub struct Callback<F>(pub F);

impl<F: FnMut(&TraceRecord, &GenerationStats, &Swarm)> Observer for Callback<F> {
    fn on_generation(&mut self, record: &TraceRecord, stats: &GenerationStats, swarm: &Swarm) {
        (self.0)(record, stats, swarm)
    }
}

/// Constriction PSO velocity and position update with explicit random factors, without
/// clamping. Returns `(X', V')`.
pub fn pso_update(
    x: &[f64],
    v: &[f64],
    p_i: &[f64],
    p_best: &[f64],
    r1: &[f64],
    r2: &[f64],
    cfg: &EvolveConfig,
) -> (Vec<f64>, Vec<f64>) {
    let v_new: Vec<f64> = (0..x.len())
        .map(|j| cfg.chi * (v[j] + cfg.c1 * r1[j] * (p_i[j] - x[j]) + cfg.c2 * r2[j] * (p_best[j] - x[j])))
        .collect();
    let x_new = x.iter().zip(&v_new).map(|(a, b)| a + b).collect();
    (x_new, v_new)
}

/// Clamp `x` into the box, zeroing the matching velocity entries.
pub fn clamp_to_box(x: &mut [f64], v: &mut [f64], bx: &SearchBox) {
    for j in 0..x.len() {
        let (lo, hi) = bx.bounds(j);
        if x[j] < lo || x[j] > hi {
            x[j] = x[j].clamp(lo, hi);
            v[j] = 0.0;
        }
    }
}

/// One PSO move of `p` toward its record and `best`, with fresh `r1`, `r2`
/// per component and box clamping. Fitness fields are left untouched.
pub fn pso_step(p: &Particle, best: &GainMatrix, cfg: &EvolveConfig, rng: &mut impl Rng) -> Particle {
    let d = p.position.len();
    let r1: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
    let r2: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
    let (mut x, mut v) = pso_update(
        p.position.as_flat(),
        &p.velocity,
        p.cognitive_best.as_flat(),
        best.as_flat(),
        &r1,
        &r2,
        cfg,
    );
    clamp_to_box(&mut x, &mut v, &cfg.search_box);
    let mut out = p.clone();
    out.position.as_flat_mut().copy_from_slice(&x);
    out.velocity = v;
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Resample {
    Accepted { gain: GainMatrix, fitness: f64, attempts: usize },
    GaveUp { attempts: usize },
}

/// Offer `candidate`, then regenerated gains, to `evaluate` until one is
/// feasible. At most `cap` evaluations in total.
pub fn feasibility_resample(
    candidate: GainMatrix,
    mut regenerate: impl FnMut() -> GainMatrix,
    mut evaluate: impl FnMut(&GainMatrix) -> Fitness,
    cap: usize,
) -> Resample {
    let mut current = candidate;
    for attempt in 1..=cap {
        if let Fitness::Feasible(f) = evaluate(&current) {
            return Resample::Accepted {
                gain: current,
                fitness: f,
                attempts: attempt,
            };
        }
        if attempt < cap {
            current = regenerate();
        }
    }
    Resample::GaveUp { attempts: cap }
}

/// `P_r1 + F (P_r2 − P_r3)` for given indices.
pub fn de_mutate_with(sp: &[GainMatrix], r: [usize; 3], f: f64) -> GainMatrix {
    let mut v = sp[r[0]].clone();
    for ((o, a), b) in v.as_flat_mut().iter_mut().zip(sp[r[1]].as_flat()).zip(sp[r[2]].as_flat()) {
        *o += f * (a - b);
    }
    v
}

/// Three distinct indices of `0..np`, all different from `i`.
pub fn draw_distinct(np: usize, i: usize, rng: &mut impl Rng) -> [usize; 3] {
    let s = index::sample(rng, np - 1, 3);
    let skip = |k: usize| if k >= i { k + 1 } else { k };
    [skip(s.index(0)), skip(s.index(1)), skip(s.index(2))]
}

/// DE/rand/1 donor for target `i` drawn from `sp` (at least 4 entries).
pub fn de_mutate(sp: &[GainMatrix], i: usize, f: f64, rng: &mut impl Rng) -> GainMatrix {
    de_mutate_with(sp, draw_distinct(sp.len(), i, rng), f)
}

/// Binomial crossover with explicit uniform draws and forced index.
pub fn de_crossover_with(target: &GainMatrix, donor: &GainMatrix, cr: f64, draws: &[f64], forced: usize) -> GainMatrix {
    let mut trial = target.clone();
    for (j, (t, d)) in trial.as_flat_mut().iter_mut().zip(donor.as_flat()).enumerate() {
        if draws[j] < cr || j == forced {
            *t = *d;
        }
    }
    trial
}

pub fn de_crossover(target: &GainMatrix, donor: &GainMatrix, cr: f64, rng: &mut impl Rng) -> GainMatrix {
    let d = target.len();
    let draws: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
    let forced = rng.gen_range(0..d);
    de_crossover_with(target, donor, cr, &draws, forced)
}

/// Replace the cognitive best iff the trial is strictly better.
pub fn de_select(p: &Particle, trial: &GainMatrix, trial_fitness: f64) -> Particle {
    let mut out = p.clone();
    if trial_fitness < p.cognitive_best_fitness {
        out.cognitive_best = trial.clone();
        out.cognitive_best_fitness = trial_fitness;
    }
    out
}

fn uniform_in_box(shape: (usize, usize), bx: &SearchBox, rng: &mut impl Rng) -> GainMatrix {
    let mut k = GainMatrix::zeros(shape.0, shape.1);
    for (j, x) in k.as_flat_mut().iter_mut().enumerate() {
        let (lo, hi) = bx.bounds(j);
        *x = rng.gen_range(lo..=hi);
    }
    k
}

struct Counted<'a, E, O: ?Sized> {
    eval: E,
    observer: &'a mut O,
    calls: usize,
}

impl<E: FnMut(&GainMatrix) -> Fitness, O: Observer + ?Sized> Counted<'_, E, O> {
    fn call(&mut self, k: &GainMatrix) -> Fitness {
        self.calls += 1;
        let f = (self.eval)(k);
        self.observer.on_evaluation(k, &f);
        f
    }
}

impl Swarm {
    /// Feasible random positions inside the box; zero velocities.
    pub fn initialize(
        shape: (usize, usize),
        cfg: &EvolveConfig,
        mut evaluate: impl FnMut(&GainMatrix) -> Fitness,
    ) -> Result<Self, EvolveError> {
        cfg.validate(shape.0 * shape.1)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut particles = Vec::with_capacity(cfg.np);
        for i in 0..cfg.np {
            let first = uniform_in_box(shape, &cfg.search_box, &mut rng);
            let rng_ref = &mut rng;
            let outcome = {
                let mut draw = || uniform_in_box(shape, &cfg.search_box, rng_ref);
                feasibility_resample(first, &mut draw, &mut evaluate, cfg.resample_cap)
            };
            match outcome {
                Resample::Accepted { gain, fitness, .. } => particles.push(Particle {
                    velocity: vec![0.0; gain.len()],
                    cognitive_best: gain.clone(),
                    position: gain,
                    cognitive_best_fitness: fitness,
                    fitness,
                }),
                Resample::GaveUp { attempts } => return Err(EvolveError::Initialization { particle: i, attempts }),
            }
        }
        let mut best = 0;
        for (i, p) in particles.iter().enumerate() {
            if p.cognitive_best_fitness < particles[best].cognitive_best_fitness {
                best = i;
            }
        }
        Ok(Swarm {
            population_best: particles[best].cognitive_best.clone(),
            population_best_fitness: particles[best].cognitive_best_fitness,
            particles,
            rng,
        })
    }

    fn record(&self, generation: usize) -> TraceRecord {
        TraceRecord {
            generation,
            best_fitness: self.population_best_fitness,
            best_gain: self.population_best.as_flat().to_vec(),
        }
    }

    fn offer_record(&mut self, i: usize) {
        let p = &self.particles[i];
        if p.cognitive_best_fitness < self.population_best_fitness {
            self.population_best = p.cognitive_best.clone();
            self.population_best_fitness = p.cognitive_best_fitness;
        }
    }
}

/// Run PSO-DE with an arbitrary fitness oracle over `shape`-sized gains.
pub fn optimize<O: Observer + ?Sized>(
    shape: (usize, usize),
    cfg: &EvolveConfig,
    evaluate: impl FnMut(&GainMatrix) -> Fitness,
    observer: &mut O,
) -> Result<RunTrace, EvolveError> {
    let start = Instant::now();
    let mut oracle = Counted {
        eval: evaluate,
        observer,
        calls: 0,
    };
    let mut swarm = Swarm::initialize(shape, cfg, |k| oracle.call(k))?;
    let mut records = vec![swarm.record(0)];
    let init_stats = GenerationStats {
        fitness_calls: oracle.calls,
        ..Default::default()
    };
    oracle.observer.on_generation(&records[0], &init_stats, &swarm);
    info!("generation 0: best {:.6}", swarm.population_best_fitness);

    for generation in 1..=cfg.max_generations {
        let calls_before = oracle.calls;
        let mut stats = GenerationStats {
            generation,
            ..Default::default()
        };
        for i in 0..cfg.np {
            let mut outcome = None;
            for _ in 0..cfg.resample_cap {
                let moved = pso_step(&swarm.particles[i], &swarm.population_best, cfg, &mut swarm.rng);
                if let Fitness::Feasible(f) = oracle.call(&moved.position) {
                    outcome = Some((moved, f));
                    break;
                }
            }
            let p = &mut swarm.particles[i];
            let improved = match outcome {
                Some((moved, f)) => {
                    p.position = moved.position;
                    p.velocity = moved.velocity;
                    p.fitness = f;
                    if f < p.cognitive_best_fitness {
                        p.cognitive_best = p.position.clone();
                        p.cognitive_best_fitness = f;
                        true
                    } else {
                        false
                    }
                }
                None => {
                    stats.pso_give_ups += 1;
                    p.velocity.iter_mut().for_each(|v| *v = 0.0);
                    false
                }
            };
            if !improved {
                continue;
            }
            swarm.offer_record(i);
            stats.cognitive_improvements += 1;

            stats.de_rounds += 1;
            let sp: Vec<GainMatrix> = swarm.particles.iter().map(|p| p.cognitive_best.clone()).collect();
            let mut accepted = None;
            for _ in 0..cfg.resample_cap {
                let donor = de_mutate(&sp, i, cfg.f, &mut swarm.rng);
                let mut trial = de_crossover(&sp[i], &donor, cfg.cr, &mut swarm.rng);
                let mut scratch = vec![0.0; trial.len()];
                clamp_to_box(trial.as_flat_mut(), &mut scratch, &cfg.search_box);
                if let Fitness::Feasible(f) = oracle.call(&trial) {
                    accepted = Some((trial, f));
                    break;
                }
            }
            match accepted {
                Some((trial, f)) => {
                    let before = swarm.particles[i].cognitive_best_fitness;
                    swarm.particles[i] = de_select(&swarm.particles[i], &trial, f);
                    if swarm.particles[i].cognitive_best_fitness < before {
                        stats.de_replacements += 1;
                        swarm.offer_record(i);
                    }
                }
                None => stats.de_give_ups += 1,
            }
        }
        stats.fitness_calls = oracle.calls - calls_before;
        let rec = swarm.record(generation);
        oracle.observer.on_generation(&rec, &stats, &swarm);
        info!(
            "generation {generation}: best {:.6}, {} improvements, {} fitness calls",
            rec.best_fitness, stats.cognitive_improvements, stats.fitness_calls
        );
        records.push(rec);
    }

    Ok(RunTrace {
        records,
        best_gain: swarm.population_best.as_flat().to_vec(),
        best_delta: swarm.population_best_fitness,
        seed: cfg.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// PSO-DE synthesis of a gain for `plant` under `spec`.
pub fn run<O: Observer + ?Sized>(
    plant: &PolytopicPlant,
    spec: &LmiSpec,
    cfg: &EvolveConfig,
    settings: &SdpSettings,
    observer: &mut O,
) -> Result<RunTrace, EvolveError> {
    spec.validate().map_err(|e| EvolveError::Config(e.to_string()))?;
    let d = plant.dims();
    optimize((d.m, d.p), cfg, |k| fitness(k, plant, spec, settings), observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar(x: f64) -> GainMatrix {
        GainMatrix::from_flat(1, 1, &[x]).unwrap()
    }

    fn sphere(k: &GainMatrix) -> Fitness {
        Fitness::Feasible(k.as_flat().iter().map(|x| (x - 1.0) * (x - 1.0)).sum())
    }

    #[test]
    fn fitness_examples() {
        let plant = benchmarks::example1_plant();
        let spec = LmiSpec::default();
        let s = SdpSettings::default();
        let f = fitness(&scalar(-1.0), &plant, &spec, &s).value();
        assert!((f - 2.5).abs() < 1e-4, "{f}");
        assert!(!fitness(&scalar(1.0), &plant, &spec, &s).is_feasible());
        let k = -(2.0f64 / 3.0).sqrt();
        let f = fitness(&scalar(k), &plant, &spec, &s).value();
        assert!((f - 6f64.sqrt()).abs() < 1e-3, "{f}");
    }

    #[test]
    fn pso_update_scalar() {
        let cfg = EvolveConfig::default();
        let (x, v) = pso_update(&[0.0], &[1.0], &[2.0], &[3.0], &[1.0], &[1.0], &cfg);
        let expect = 0.72984 * (1.0 + 2.05 * 2.0 + 2.05 * 3.0);
        assert_abs_diff_eq!(v[0], expect, epsilon = 1e-12);
        assert_abs_diff_eq!(x[0], 8.2107, epsilon = 1e-4);
        let (x, v) = pso_update(&[0.5], &[1.0], &[2.0], &[3.0], &[0.0], &[0.0], &cfg);
        assert_eq!(v[0], 0.72984);
        assert_eq!(x[0], 0.5 + 0.72984);
        let (x, v) = pso_update(&[0.7], &[0.0], &[0.7], &[0.7], &[0.4], &[0.9], &cfg);
        assert_eq!((x[0], v[0]), (0.7, 0.0));
    }

    #[test]
    fn clamp_zeroes_velocity() {
        let bx = SearchBox::Uniform([-1.0, 1.0]);
        let (mut x, mut v) = (vec![2.0, 0.5, -3.0], vec![4.0, 0.2, -1.0]);
        clamp_to_box(&mut x, &mut v, &bx);
        assert_eq!(x, vec![1.0, 0.5, -1.0]);
        assert_eq!(v, vec![0.0, 0.2, 0.0]);
    }

    #[test]
    fn resample_counts_calls() {
        let mut calls = 0;
        let r = feasibility_resample(
            scalar(1.0),
            || scalar(2.0),
            |k| {
                calls += 1;
                sphere(k)
            },
            5,
        );
        assert_eq!(calls, 1);
        assert_eq!(
            r,
            Resample::Accepted {
                gain: scalar(1.0),
                fitness: 0.0,
                attempts: 1
            }
        );
        let mut calls = 0;
        let r = feasibility_resample(
            scalar(1.0),
            || scalar(2.0),
            |_| {
                calls += 1;
                Fitness::Infeasible("no".into())
            },
            3,
        );
        assert_eq!((calls, r), (3, Resample::GaveUp { attempts: 3 }));
    }

    #[test]
    fn mutate_and_crossover_examples() {
        let sp = vec![scalar(9.0), scalar(1.0), scalar(2.0), scalar(0.5)];
        assert_eq!(de_mutate_with(&sp, [1, 2, 3], 0.5), scalar(1.75));

        let target = GainMatrix::from_flat(1, 4, &[0.0, 0.0, 0.0, 0.0]).unwrap();
        let donor = GainMatrix::from_flat(1, 4, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = de_crossover_with(&target, &donor, 0.5, &[0.3, 0.7, 0.2, 0.9], 1);
        assert_eq!(t.as_flat(), &[1.0, 2.0, 3.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(de_crossover(&target, &donor, 1.0, &mut rng), donor);
        let t = de_crossover(&target, &donor, 0.0, &mut rng);
        assert_eq!(t.as_flat().iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn select_is_strict() {
        let p = Particle {
            position: scalar(0.0),
            velocity: vec![0.0],
            cognitive_best: scalar(0.0),
            cognitive_best_fitness: 2.0,
            fitness: 2.0,
        };
        assert_eq!(de_select(&p, &scalar(1.0), 1.0).cognitive_best, scalar(1.0));
        assert_eq!(de_select(&p, &scalar(1.0), 2.0), p);
        assert_eq!(de_select(&p, &scalar(1.0), 3.0), p);
    }

    #[test]
    fn small_swarm_is_rejected() {
        let cfg = EvolveConfig {
            np: 3,
            ..Default::default()
        };
        assert!(matches!(optimize((1, 1), &cfg, sphere, &mut ()), Err(EvolveError::Config(_))));
    }

    #[test]
    fn zero_generations_gives_one_record() {
        let cfg = EvolveConfig {
            max_generations: 0,
            ..Default::default()
        };
        let t = optimize((1, 2), &cfg, sphere, &mut ()).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.records[0].generation, 0);
    }

    #[test]
    fn initialization_give_up_is_reported() {
        let cfg = EvolveConfig {
            resample_cap: 4,
            ..Default::default()
        };
        let r = optimize((1, 1), &cfg, |_| Fitness::Infeasible("never".into()), &mut ());
        assert_eq!(r.unwrap_err(), EvolveError::Initialization { particle: 0, attempts: 4 });
    }

    #[test]
    fn config_json_defaults() {
        let cfg: EvolveConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, EvolveConfig::default());
        let cfg: EvolveConfig = serde_json::from_str(r#"{"NP": 6, "search_box": [[-1, 1], [0, 2]]}"#).unwrap();
        assert_eq!(cfg.search_box.bounds(1), (0.0, 2.0));
        assert!(cfg.validate(2).is_ok());
        assert!(cfg.validate(3).is_err());
    }

    struct Audit {
        improvements_match: bool,
        records: Vec<f64>,
    }

    impl Observer for Audit {
        fn on_generation(&mut self, r: &TraceRecord, s: &GenerationStats, swarm: &Swarm) {
            self.improvements_match &= s.de_rounds == s.cognitive_improvements;
            self.records.push(r.best_fitness);
            let m = swarm
                .particles
                .iter()
                .map(|p| p.cognitive_best_fitness)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(m, swarm.population_best_fitness);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn swarm_invariants(seed in any::<u64>(), np in 4usize..9, d in 1usize..4, gens in 0usize..8) {
            let cfg = EvolveConfig { seed, np, max_generations: gens, search_box: SearchBox::Uniform([-3.0, 3.0]), ..Default::default() };
            // Feasible set: first entry nonnegative.
            let eval = |k: &GainMatrix| if k.as_flat()[0] >= 0.0 { sphere(k) } else { Fitness::Infeasible("half".into()) };
            let mut audit = Audit { improvements_match: true, records: vec![] };
            let a = optimize((1, d), &cfg, eval, &mut audit).unwrap();
            prop_assert!(audit.improvements_match);
            prop_assert_eq!(a.records.len(), gens + 1);
            for w in a.records.windows(2) {
                prop_assert!(w[1].best_fitness <= w[0].best_fitness);
            }
            prop_assert!(cfg.search_box.contains(&a.best_gain));
            prop_assert!(a.best_gain[0] >= 0.0);
            let b = optimize((1, d), &cfg, eval, &mut ()).unwrap();
            prop_assert_eq!(a.records, b.records);
        }

        #[test]
        fn distinct_indices(np in 4usize..20, i in 0usize..20, seed in any::<u64>()) {
            let i = i % np;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = draw_distinct(np, i, &mut rng);
            prop_assert!(r.iter().all(|&k| k < np && k != i));
            prop_assert!(r[0] != r[1] && r[1] != r[2] && r[0] != r[2]);
        }

        #[test]
        fn crossover_takes_forced_component(d in 1usize..6, forced in 0usize..6, cr in 0.0f64..1.0) {
            let forced = forced % d;
            let target = GainMatrix::zeros(1, d);
            let donor = GainMatrix::from_flat(1, d, &vec![1.0; d]).unwrap();
            let draws = vec![1.0; d];
            let t = de_crossover_with(&target, &donor, cr, &draws, forced);
            for j in 0..d {
                prop_assert_eq!(t.as_flat()[j], if j == forced { 1.0 } else { 0.0 });
            }
        }
    }
}
