use super::problem::{Genome, Problem};
use super::{baseline_fitness, fitness_of, scalar_fitness, Instance, ObjectiveWeights, OptimizeError, OptimizeResult};
use crate::metrics::{reduce_lines, LineStats};
use std::collections::HashSet;

pub const ORACLE_MAX_ORDERS: usize = 8;
pub const ORACLE_MAX_LINES: usize = 3;

/// Relative margin below which two scalar fitness values count as tied.
const TIE: f64 = 1e-9;

/// Sequences of one order subset on one line with their outcomes.
type Variants = Vec<(Vec<usize>, LineStats)>;

/// Exhaustive optimum over every (assignment, per-line order) combination.
///
/// Ties go to the lexicographically smallest chromosome, comparing the
/// assignment (orders by id, lines by id) first and then the per-line
/// sequences in line order.
pub fn brute_force_optimum(inst: &Instance<'_>, weights: &ObjectiveWeights) -> Result<OptimizeResult, OptimizeError> {
    if inst.orders.len() > ORACLE_MAX_ORDERS || inst.plant.available_lines().count() > ORACLE_MAX_LINES {
        return Err(OptimizeError::TooLarge);
    }
    weights.validate().map_err(OptimizeError::InvalidParams)?;
    let p = Problem::new(inst)?;
    let (_, base_fv) = baseline_fitness(inst)?;
    let n = p.n();
    let m = p.lines.len();

    // Distinct line outcomes per (line, subset of orders), each with the
    // smallest sequence that produces it.
    let mut table: Table = vec![vec![Vec::new(); 1 << n]; m];
    for (l, per_mask) in table.iter_mut().enumerate() {
        for (mask, entry) in per_mask.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|o| mask & (1 << o) != 0).collect();
            if members.iter().any(|&o| !p.eligible[o].contains(&(l as u8))) {
                continue;
            }
            let mut seen = HashSet::new();
            for_each_permutation(&members, |seq| {
                let s = p.line_stats(l, seq.iter().copied());
                if seen.insert((s.usage, s.busy, s.tardiness, s.risk.to_bits())) {
                    entry.push((seq.to_vec(), s));
                }
            });
        }
    }

    let mut best: Option<(f64, Vec<u8>, Vec<usize>)> = None;
    let mut assign = vec![0usize; n];
    let mut stats = vec![LineStats::default(); m];
    let mut choice = vec![0usize; m];
    loop {
        let line_of: Vec<u8> = (0..n).map(|o| p.eligible[o][assign[o]]).collect();
        let mut masks = vec![0usize; m];
        for (o, &l) in line_of.iter().enumerate() {
            masks[l as usize] |= 1 << o;
        }
        let lists: Vec<&Variants> = (0..m).map(|l| &table[l][masks[l]]).collect();
        choice.iter_mut().for_each(|c| *c = 0);
        'combos: loop {
            for l in 0..m {
                stats[l] = lists[l][choice[l]].1;
            }
            let f = scalar_fitness(&reduce_lines(&stats, p.shift.length), weights, &base_fv);
            if best.as_ref().is_none_or(|(b, _, _)| f < b - TIE * b.abs().max(1.0)) {
                best = Some((f, line_of.clone(), choice.clone()));
            }
            for l in (0..m).rev() {
                choice[l] += 1;
                if choice[l] < lists[l].len() {
                    continue 'combos;
                }
                choice[l] = 0;
            }
            break;
        }
        // Next assignment; the first order is the most significant digit.
        let mut o = n;
        loop {
            if o == 0 {
                return finish(&p, inst, weights, &base_fv, &table, best.expect("at least one plan"));
            }
            o -= 1;
            assign[o] += 1;
            if assign[o] < p.eligible[o].len() {
                break;
            }
            assign[o] = 0;
        }
    }
}

type Table = Vec<Vec<Variants>>;

fn finish(
    p: &Problem<'_>,
    inst: &Instance<'_>,
    weights: &ObjectiveWeights,
    base_fv: &crate::metrics::FitnessVector,
    table: &Table,
    (_, line_of, choice): (f64, Vec<u8>, Vec<usize>),
) -> Result<OptimizeResult, OptimizeError> {
    let n = p.n();
    let mut masks = vec![0usize; p.lines.len()];
    for (o, &l) in line_of.iter().enumerate() {
        masks[l as usize] |= 1 << o;
    }
    let mut perm = Vec::with_capacity(n);
    for (l, &c) in choice.iter().enumerate() {
        perm.extend(table[l][masks[l]][c].0.iter().map(|&o| o as u16));
    }
    let genome = Genome { perm, assign: line_of };
    let schedule = p.decode(&genome);
    let fitness = fitness_of(&schedule, inst)?;
    Ok(OptimizeResult {
        chromosome: p.to_chromosome(&genome),
        scalar: scalar_fitness(&fitness, weights, base_fv),
        schedule,
        fitness,
        baseline_scalar: scalar_fitness(base_fv, weights, base_fv),
        baseline_fitness: *base_fv,
        generations_run: 0,
        history: Vec::new(),
    })
}

/// Visits every permutation of `items` in lexicographic order of positions.
fn for_each_permutation(items: &[usize], mut f: impl FnMut(&[usize])) {
    let mut cur: Vec<usize> = items.to_vec();
    cur.sort_unstable();
    loop {
        f(&cur);
        // Standard next-permutation.
        let Some(i) = (1..cur.len()).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return;
        };
        let j = (i..cur.len()).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
}
