use super::problem::{Genome, Problem};
use super::{baseline_fitness, fitness_of, scalar_fitness, GaParams, Instance, ObjectiveWeights, OptimizeError, OptimizeResult};
use crate::rng::DetRng;

struct Scored {
    genome: Genome,
    fitness: f64,
}

/// Genetic search seeded with the greedy baseline. Deterministic for a
/// given `params.seed`, and never worse than the baseline.
pub fn optimize_reactive(
    inst: &Instance<'_>,
    weights: &ObjectiveWeights,
    params: &GaParams,
) -> Result<OptimizeResult, OptimizeError> {
    weights.validate().map_err(OptimizeError::InvalidParams)?;
    params.validate().map_err(OptimizeError::InvalidParams)?;
    let problem = Problem::new(inst)?;
    let (base_schedule, base_fv) = baseline_fitness(inst)?;
    let base_genome = problem
        .genome_of(&super::Chromosome::from_schedule(&base_schedule))
        .expect("baseline uses available compatible lines");
    let score = |g: Genome| {
        let fitness = scalar_fitness(&problem.evaluate(&g), weights, &base_fv);
        Scored { genome: g, fitness }
    };

    let mut rng = DetRng::seed_from(params.seed);
    let mut pop: Vec<Scored> = Vec::with_capacity(params.population);
    pop.push(score(base_genome));
    while pop.len() < params.population {
        pop.push(score(random_genome(&problem, &mut rng)));
    }
    sort(&mut pop);
    let mut best = pop[0].genome.clone();
    let mut best_fit = pop[0].fitness;
    let mut history = vec![best_fit];
    let mut stall = 0;
    let mut generations_run = 0;

    for _ in 0..params.generations {
        if stall >= params.stall_limit {
            break;
        }
        let mut next: Vec<Scored> = pop[..params.elites]
            .iter()
            .map(|s| Scored {
                genome: s.genome.clone(),
                fitness: s.fitness,
            })
            .collect();
        while next.len() < params.population {
            let a = tournament(&pop, params.tournament_size, &mut rng);
            let b = tournament(&pop, params.tournament_size, &mut rng);
            let mut child = if rng.chance(params.crossover_rate) {
                crossover(&pop[a].genome, &pop[b].genome, &mut rng)
            } else {
                pop[a].genome.clone()
            };
            mutate(&problem, &mut child, params, &mut rng);
            next.push(score(child));
        }
        sort(&mut next);
        pop = next;
        generations_run += 1;
        if pop[0].fitness < best_fit {
            best_fit = pop[0].fitness;
            best = pop[0].genome.clone();
            stall = 0;
        } else {
            stall += 1;
        }
        history.push(best_fit);
    }

    let schedule = problem.decode(&best);
    let fitness = fitness_of(&schedule, inst)?;
    Ok(OptimizeResult {
        chromosome: problem.to_chromosome(&best),
        scalar: scalar_fitness(&fitness, weights, &base_fv),
        schedule,
        fitness,
        baseline_scalar: scalar_fitness(&base_fv, weights, &base_fv),
        baseline_fitness: base_fv,
        generations_run,
        history,
    })
}

/// Stable sort by fitness; equal fitness keeps the earlier individual first.
fn sort(pop: &mut [Scored]) {
    pop.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
}

fn random_genome(p: &Problem<'_>, rng: &mut DetRng) -> Genome {
    let mut perm: Vec<u16> = (0..p.n() as u16).collect();
    rng.shuffle(&mut perm);
    let assign = p.eligible.iter().map(|el| el[rng.below(el.len())]).collect();
    Genome { perm, assign }
}

fn tournament(pop: &[Scored], size: usize, rng: &mut DetRng) -> usize {
    let mut best = rng.below(pop.len());
    for _ in 1..size {
        let c = rng.below(pop.len());
        if pop[c].fitness < pop[best].fitness || (pop[c].fitness == pop[best].fitness && c < best) {
            best = c;
        }
    }
    best
}

/// Order crossover on the permutation, uniform crossover on the assignment.
/// Both parents assign every order to an eligible line, so the child does too.
fn crossover(a: &Genome, b: &Genome, rng: &mut DetRng) -> Genome {
    let n = a.perm.len();
    let assign = a
        .assign
        .iter()
        .zip(&b.assign)
        .map(|(&x, &y)| if rng.chance(0.5) { x } else { y })
        .collect();
    if n < 2 {
        return Genome {
            perm: a.perm.clone(),
            assign,
        };
    }
    let mut i = rng.below(n);
    let mut j = rng.below(n);
    if i > j {
        std::mem::swap(&mut i, &mut j);
    }
    let mut taken = vec![false; n];
    let mut perm = vec![u16::MAX; n];
    for k in i..=j {
        perm[k] = a.perm[k];
        taken[a.perm[k] as usize] = true;
    }
    let mut fill = (j + 1) % n;
    for k in 0..n {
        let gene = b.perm[(j + 1 + k) % n];
        if taken[gene as usize] {
            continue;
        }
        perm[fill] = gene;
        taken[gene as usize] = true;
        fill = (fill + 1) % n;
    }
    Genome { perm, assign }
}

/// Swap exchanges two jobs: their positions in the sequence and, when each
/// may run on the other's line, their lines. Reassignment moves one order to
/// another eligible line when there is one.
fn mutate(p: &Problem<'_>, g: &mut Genome, params: &GaParams, rng: &mut DetRng) {
    let n = g.perm.len();
    if n >= 2 && rng.chance(params.swap_mutation_rate) {
        let i = rng.below(n);
        let j = (i + 1 + rng.below(n - 1)) % n;
        let (a, b) = (g.perm[i] as usize, g.perm[j] as usize);
        g.perm.swap(i, j);
        let (la, lb) = (g.assign[a], g.assign[b]);
        if la != lb && p.eligible[a].contains(&lb) && p.eligible[b].contains(&la) {
            g.assign[a] = lb;
            g.assign[b] = la;
        }
    }
    if n >= 1 && rng.chance(params.reassign_mutation_rate) {
        let o = rng.below(n);
        let others: Vec<u8> = p.eligible[o].iter().copied().filter(|&l| l != g.assign[o]).collect();
        if !others.is_empty() {
            g.assign[o] = others[rng.below(others.len())];
        }
    }
}
