//! Integer-indexed form of a scheduling instance and the fast evaluator the
//! search runs on.

use super::{Chromosome, Instance, OptimizeError};
use crate::baseline::find_stranded;
use crate::ids::{Family, LineId};
use crate::metrics::{reduce_lines, FitnessVector, LineStats};
use crate::model::{ChangeoverMatrix, LineCursor, Minutes, Order, Schedule, Shift};
use std::collections::BTreeMap;

/// Order `i` of the problem goes to line `assign[i]`; `perm` is the global
/// placement sequence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) struct Genome {
    pub perm: Vec<u16>,
    pub assign: Vec<u8>,
}

pub(crate) struct Problem<'a> {
    pub orders: Vec<&'a Order>,
    pub lines: Vec<LineId>,
    /// Compatible Available lines per order, ascending.
    pub eligible: Vec<Vec<u8>>,
    /// `duration[o][l]`, meaningful only for eligible pairs.
    duration: Vec<Vec<Minutes>>,
    family: Vec<usize>,
    families: Vec<Family>,
    /// `changeover[prev][next]`; family index 0 is a clean line.
    changeover: Vec<Vec<Minutes>>,
    matrix: &'a ChangeoverMatrix,
    /// `rate[o][l][prev]`.
    rate: Vec<Vec<Vec<f64>>>,
    start: Vec<(Minutes, usize)>,
    pub shift: Shift,
    rework: f64,
}

impl<'a> Problem<'a> {
    pub fn new(inst: &Instance<'a>) -> Result<Self, OptimizeError> {
        if inst.shift.length <= 0 {
            return Err(OptimizeError::DegenerateShift);
        }
        if let Some(s) = find_stranded(inst.orders, inst.plant, inst.catalog) {
            return Err(OptimizeError::Stranded(s));
        }
        let mut orders: Vec<&Order> = inst.orders.iter().collect();
        orders.sort_by(|a, b| a.id.cmp(&b.id));
        if orders.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(OptimizeError::DuplicateOrder);
        }
        if orders.len() > u16::MAX as usize {
            return Err(OptimizeError::TooLarge);
        }
        let lines: Vec<LineId> = inst.plant.available_lines().cloned().collect();
        if lines.len() > u8::MAX as usize {
            return Err(OptimizeError::TooLarge);
        }

        let mut families: Vec<Family> = Vec::new();
        let mut fam_index: BTreeMap<Family, usize> = BTreeMap::new();
        let mut intern = |f: &Family, families: &mut Vec<Family>| {
            *fam_index.entry(f.clone()).or_insert_with(|| {
                families.push(f.clone());
                families.len()
            })
        };
        let mut family = Vec::with_capacity(orders.len());
        let mut eligible = Vec::with_capacity(orders.len());
        let mut duration = Vec::with_capacity(orders.len());
        for o in &orders {
            let recipe = inst.catalog.recipe(&o.recipe_id).expect("stranded check resolves recipes");
            family.push(intern(&recipe.family, &mut families));
            let mut el = Vec::new();
            let mut dur = vec![0; lines.len()];
            for (li, l) in lines.iter().enumerate() {
                if let Some(d) = recipe.duration_on(l) {
                    el.push(li as u8);
                    dur[li] = d;
                }
            }
            eligible.push(el);
            duration.push(dur);
        }
        let mut start = Vec::with_capacity(lines.len());
        for l in &lines {
            let status = &inst.plant.lines[l];
            let f = status.last_family.as_ref().map_or(0, |f| intern(f, &mut families));
            start.push((status.available_from, f));
        }
        let nf = families.len() + 1;
        let fam_at = |i: usize| (i > 0).then(|| &families[i - 1]);
        let changeover: Vec<Vec<Minutes>> = (0..nf)
            .map(|p| {
                (0..nf)
                    .map(|n| match fam_at(n) {
                        Some(next) => inst.catalog.changeovers.before(fam_at(p), next),
                        None => 0,
                    })
                    .collect()
            })
            .collect();
        let rate = orders
            .iter()
            .zip(&eligible)
            .map(|(o, el)| {
                let mut per_line = vec![Vec::new(); lines.len()];
                for &li in el {
                    per_line[li as usize] = (0..nf)
                        .map(|p| inst.rates.rate(&o.recipe_id, &lines[li as usize], fam_at(p)))
                        .collect();
                }
                per_line
            })
            .collect();

        Ok(Self {
            orders,
            lines,
            eligible,
            duration,
            family,
            families,
            changeover,
            matrix: &inst.catalog.changeovers,
            rate,
            start,
            shift: inst.shift,
            rework: inst.rework_factor,
        })
    }

    pub fn n(&self) -> usize {
        self.orders.len()
    }

    /// Per-line statistics of one line's sequence.
    pub fn line_stats(&self, line: usize, seq: impl IntoIterator<Item = usize>) -> LineStats {
        let (mut finish, mut fam) = self.start[line];
        let mut s = LineStats::default();
        let mut last_end = None;
        for o in seq {
            let order = self.orders[o];
            let next = self.family[o];
            let c = self.changeover[fam][next];
            let d = self.duration[o][line];
            let ps = (finish + c).max(order.release);
            let end = ps + d;
            s.busy += end - (ps - c);
            s.risk += self.rate[o][line][fam] * d as f64 * self.rework;
            s.tardiness += (end - order.due).max(0);
            finish = end;
            fam = next;
            last_end = Some(end);
        }
        s.usage = last_end.map_or(0, |e| e - self.shift.start);
        s
    }

    pub fn sequences(&self, g: &Genome) -> Vec<Vec<usize>> {
        let mut seqs = vec![Vec::new(); self.lines.len()];
        for &o in &g.perm {
            seqs[g.assign[o as usize] as usize].push(o as usize);
        }
        seqs
    }

    pub fn evaluate(&self, g: &Genome) -> FitnessVector {
        let stats: Vec<LineStats> = self
            .sequences(g)
            .into_iter()
            .enumerate()
            .map(|(l, seq)| self.line_stats(l, seq))
            .collect();
        reduce_lines(&stats, self.shift.length)
    }

    pub fn decode(&self, g: &Genome) -> Schedule {
        let mut schedule = Schedule::empty(self.shift);
        let mut cursors: Vec<LineCursor> = self
            .start
            .iter()
            .map(|&(finish, fam)| LineCursor {
                finish,
                last_family: (fam > 0).then(|| self.families[fam - 1].clone()),
            })
            .collect();
        for &o in &g.perm {
            let o = o as usize;
            let l = g.assign[o] as usize;
            let fam = &self.families[self.family[o] - 1];
            let job = cursors[l].place(self.orders[o], fam, self.duration[o][l], self.matrix);
            schedule.jobs.entry(self.lines[l].clone()).or_default().push(job);
        }
        schedule
    }

    pub fn to_chromosome(&self, g: &Genome) -> Chromosome {
        Chromosome {
            perm: g.perm.iter().map(|&o| self.orders[o as usize].id.clone()).collect(),
            assign: g
                .assign
                .iter()
                .enumerate()
                .map(|(o, &l)| (self.orders[o].id.clone(), self.lines[l as usize].clone()))
                .collect(),
        }
    }

    /// Index form of `c`, or `None` if it does not fit this problem.
    pub fn genome_of(&self, c: &Chromosome) -> Option<Genome> {
        let by_id: BTreeMap<_, usize> = self.orders.iter().enumerate().map(|(i, o)| (&o.id, i)).collect();
        let line_ix: BTreeMap<_, usize> = self.lines.iter().enumerate().map(|(i, l)| (l, i)).collect();
        if c.perm.len() != self.n() || c.assign.len() != self.n() {
            return None;
        }
        let mut seen = vec![false; self.n()];
        let mut perm = Vec::with_capacity(self.n());
        for id in &c.perm {
            let i = *by_id.get(id)?;
            if std::mem::replace(&mut seen[i], true) {
                return None;
            }
            perm.push(i as u16);
        }
        let mut assign = vec![0u8; self.n()];
        for (id, line) in &c.assign {
            let i = *by_id.get(id)?;
            let l = *line_ix.get(line)? as u8;
            if !self.eligible[i].contains(&l) {
                return None;
            }
            assign[i] = l;
        }
        Some(Genome { perm, assign })
    }
}
