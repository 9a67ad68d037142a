use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::probesim::LinkDelayVector;

use super::{fitness, least_squares, MeasurementSystem, SolveError};

/// Particle-swarm settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwarmConfig {
    pub population_size: usize,
    pub max_generations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub stagnation_window: usize,
    pub mutation_fraction: f64,
    /// Box for every link; `None` means `[0, 10 * max rhs]`.
    pub bounds: Option<(f64, f64)>,
    pub tolerance: f64,
    /// Pull toward the particle's own best in the cognitive term; when off,
    /// both terms pull toward the global best.
    pub cognitive_uses_personal_best: bool,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            population_size: 50,
            max_generations: 500,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
            stagnation_window: 20,
            mutation_fraction: 0.2,
            bounds: None,
            tolerance: 1e-9,
            cognitive_uses_personal_best: true,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::Config(m.to_string()));
        if self.population_size < 2 {
            return bad("population_size must be >= 2");
        }
        if !(self.inertia > 0.0 && self.inertia < 1.0) {
            return bad("inertia must lie in (0, 1)");
        }
        if !(self.cognitive > 0.0 && self.social > 0.0) {
            return bad("cognitive and social constants must be > 0");
        }
        if self.stagnation_window == 0 {
            return bad("stagnation_window must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.mutation_fraction) {
            return bad("mutation_fraction must lie in [0, 1]");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be >= 0");
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad("bounds must be finite with lower < upper");
            }
        }
        Ok(())
    }

    /// Effective box for a system.
    pub fn bounds_for(&self, sys: &MeasurementSystem) -> (f64, f64) {
        self.bounds.unwrap_or_else(|| {
            let top = sys.rhs.iter().copied().fold(0.0, f64::max) * 10.0;
            (0.0, if top > 0.0 { top } else { 1.0 })
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
}

impl Particle {
    fn random(dim: usize, (lo, hi): (f64, f64), rng: &mut ChaCha8Rng) -> Self {
        let span = hi - lo;
        let position: Vec<f64> = (0..dim).map(|_| rng.gen_range(lo..=hi)).collect();
        let velocity = (0..dim).map(|_| rng.gen_range(-span..=span) * 0.1).collect();
        Self {
            best_position: position.clone(),
            position,
            velocity,
            best_fitness: f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub estimate: LinkDelayVector,
    pub fitness: f64,
    pub generations_used: usize,
    /// Global-best fitness after initialization and after every generation.
    pub best_history: Vec<f64>,
    pub residuals: Vec<f64>,
    pub lss_fitness: f64,
    pub seed_fitness: f64,
    pub rank: usize,
    pub non_unique: bool,
    pub null_space_dim: usize,
}

/// Resamples `round(fraction * n)` particles, never `best`.
///
/// Resampled particles restart their personal best at the new position.
/// Returns the touched indices in ascending order.
pub fn mutate_population(
    population: &mut [Particle],
    cfg: &SwarmConfig,
    bounds: (f64, f64),
    best: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = population.len();
    if n < 2 {
        return Vec::new();
    }
    let count = ((cfg.mutation_fraction * n as f64).round() as usize).min(n - 1);
    let mut picked: Vec<usize> = sample(rng, n - 1, count)
        .into_iter()
        .map(|k| if k >= best { k + 1 } else { k })
        .collect();
    picked.sort_unstable();
    for &k in &picked {
        let dim = population[k].position.len();
        population[k] = Particle::random(dim, bounds, rng);
    }
    picked
}

/// Least-squares-seeded particle swarm over the box.
///
/// Particle `i` draws from its own ChaCha8 stream `i + 1` of `seed`; stream 0
/// drives mutation. The last particle starts at the clipped least-squares
/// solution with zero velocity.
pub fn pso_solve(
    sys: &MeasurementSystem,
    cfg: &SwarmConfig,
    seed: u64,
) -> Result<SolveResult, SolveError> {
    cfg.validate()?;
    let dim = sys.cols();
    let lss = least_squares(sys)?;
    let bounds = cfg.bounds_for(sys);
    let (lo, hi) = bounds;
    let span = hi - lo;
    let clip = |v: f64| v.clamp(lo, hi);

    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(k);
        r
    };
    let mut mutation_rng = stream(0);
    let mut rngs: Vec<ChaCha8Rng> = (0..cfg.population_size).map(|i| stream(i as u64 + 1)).collect();

    let mut swarm: Vec<Particle> = rngs[..cfg.population_size - 1]
        .iter_mut()
        .map(|r| Particle::random(dim, bounds, r))
        .collect();
    let seed_position: Vec<f64> = lss.iter().map(|&v| clip(v)).collect();
    swarm.push(Particle {
        position: seed_position.clone(),
        velocity: vec![0.0; dim],
        best_position: seed_position.clone(),
        best_fitness: f64::NEG_INFINITY,
    });

    let evaluate = |swarm: &mut [Particle]| {
        swarm.par_iter_mut().for_each(|p| {
            let f = fitness(&p.position, sys);
            if f > p.best_fitness {
                p.best_fitness = f;
                p.best_position.clone_from(&p.position);
            }
        });
    };
    let leader = |swarm: &[Particle]| {
        let mut b = 0;
        for (k, p) in swarm.iter().enumerate() {
            if p.best_fitness > swarm[b].best_fitness {
                b = k;
            }
        }
        b
    };

    evaluate(&mut swarm);
    let mut best = leader(&swarm);
    let mut best_fitness = swarm[best].best_fitness;
    let mut best_position = swarm[best].best_position.clone();
    let mut history = vec![best_fitness];
    let mut generations = 0;
    let mut stagnant = 0;

    while best_fitness < -cfg.tolerance && generations < cfg.max_generations {
        let global = &best_position;
        swarm
            .par_iter_mut()
            .zip(rngs.par_iter_mut())
            .for_each(|(p, rng)| {
                for d in 0..dim {
                    let r1: f64 = rng.gen();
                    let r2: f64 = rng.gen();
                    let pull = if cfg.cognitive_uses_personal_best {
                        p.best_position[d]
                    } else {
                        global[d]
                    };
                    let v = cfg.inertia * p.velocity[d]
                        + cfg.cognitive * r1 * (pull - p.position[d])
                        + cfg.social * r2 * (global[d] - p.position[d]);
                    let v = v.clamp(-span, span);
                    let x = p.position[d] + v;
                    if x < lo || x > hi {
                        p.position[d] = clip(x);
                        p.velocity[d] = 0.0;
                    } else {
                        p.position[d] = x;
                        p.velocity[d] = v;
                    }
                }
            });
        evaluate(&mut swarm);
        generations += 1;

        let cand = leader(&swarm);
        if swarm[cand].best_fitness > best_fitness {
            best = cand;
            best_fitness = swarm[cand].best_fitness;
            best_position.clone_from(&swarm[cand].best_position);
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        if stagnant >= cfg.stagnation_window {
            let touched = mutate_population(&mut swarm, cfg, bounds, best, &mut mutation_rng);
            for k in touched {
                let p = &mut swarm[k];
                p.best_fitness = fitness(&p.position, sys);
                p.best_position.clone_from(&p.position);
                if p.best_fitness > best_fitness {
                    best = k;
                    best_fitness = p.best_fitness;
                    best_position.clone_from(&p.position);
                }
            }
            stagnant = 0;
        }
        history.push(best_fitness);
    }

    let rank = sys.rank();
    Ok(SolveResult {
        residuals: sys.residuals(&best_position),
        estimate: LinkDelayVector {
            links: sys.links.clone(),
            delays_ms: best_position,
        },
        fitness: best_fitness,
        generations_used: generations,
        best_history: history,
        lss_fitness: fitness(&lss, sys),
        seed_fitness: fitness(&seed_position, sys),
        rank,
        non_unique: rank < dim,
        null_space_dim: dim - rank,
    })
}
