use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{verify_properties, Candidate, FamilyTree, LatticeError, Mode, PropertyReport};
use crate::rng;

/// Radius of the single heavy first-generation mode, in units of `spread`.
pub const HEAVY_RATIO: f64 = 2048.0;

#[derive(Clone, Debug, PartialEq)]
pub struct BuildOptions {
    /// Outer radius of the light first-generation annulus.
    pub spread: f64,
    pub heavy_ratio: f64,
    /// Maximum number of fresh placements tried.
    pub budget: usize,
}

impl BuildOptions {
    /// Spread grows with g so that accidental pair-sum collisions stay rare.
    pub fn for_generations(g: usize) -> Self {
        BuildOptions { spread: 10f64.powi(g.saturating_sub(1).max(3) as i32), heavy_ratio: HEAVY_RATIO, budget: 64 }
    }
}

/// Children of diagonal spouses w1, w3: (w1+w3)/2 ± i(w1-w3)/2.
pub fn procreate(w1: Mode, w3: Mode) -> Option<[Mode; 2]> {
    let a = (w1.m - w1.n + w3.m + w3.n, w1.m + w1.n - w3.m + w3.n);
    let b = (w1.m + w1.n + w3.m - w3.n, w1.n - w1.m + w3.m + w3.n);
    if [a.0, a.1, b.0, b.1].iter().any(|x| x % 2 != 0) {
        return None;
    }
    Some([Mode::new(a.0 / 2, a.1 / 2), Mode::new(b.0 / 2, b.1 / 2)])
}

/// Random point with radius in [r_lo, r_hi], snapped to the grid qℤ².
fn snapped_point(rng: &mut ChaCha8Rng, r_lo: f64, r_hi: f64, q: i64) -> Mode {
    loop {
        let r = rng.gen_range(r_lo..=r_hi);
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let m = (r * phi.cos() / q as f64).round() as i64 * q;
        let n = (r * phi.sin() / q as f64).round() as i64 * q;
        if m != 0 && n != 0 {
            return Mode::new(m, n);
        }
    }
}

struct Node {
    mode: Mode,
    heavy: bool,
    sibling: Option<usize>,
}

/// Pairs up the nodes of one generation: every heavy node gets a light spouse,
/// the remaining light nodes pair among themselves, never with a sibling.
fn marry(rng: &mut ChaCha8Rng, gen: &[Node]) -> Option<Vec<(usize, usize)>> {
    let heavy: Vec<usize> = (0..gen.len()).filter(|&i| gen[i].heavy).collect();
    let mut light: Vec<usize> = (0..gen.len()).filter(|&i| !gen[i].heavy).collect();
    if light.len() < heavy.len() || (light.len() - heavy.len()) % 2 != 0 {
        return None;
    }
    'retry: for _ in 0..256 {
        light.shuffle(rng);
        let mut pairs: Vec<(usize, usize)> = heavy.iter().zip(&light).map(|(&h, &l)| (h, l)).collect();
        for w in light[heavy.len()..].chunks(2) {
            if gen[w[0]].sibling == Some(w[1]) {
                continue 'retry;
            }
            pairs.push((w[0], w[1]));
        }
        return Some(pairs);
    }
    None
}

fn attempt(rng: &mut ChaCha8Rng, g: usize, opts: &BuildOptions) -> Option<Candidate> {
    let size = 1usize << (g - 1);
    // each generation step halves the grid spacing after two steps, so start on
    // a fine enough grid for all g-1 steps to stay integral
    let q = 1i64 << (g - 1).div_ceil(2);
    let mut gens: Vec<Vec<Node>> = Vec::with_capacity(g);
    let mut first = Vec::with_capacity(size);
    let hr = opts.spread * opts.heavy_ratio;
    first.push(Node { mode: snapped_point(rng, hr, hr, q), heavy: true, sibling: None });
    for _ in 1..size {
        first.push(Node { mode: snapped_point(rng, opts.spread / 2.0, opts.spread, q), heavy: false, sibling: None });
    }
    gens.push(first);

    let sizes = vec![size; g];
    let mut tree = FamilyTree::empty(&sizes);
    for k in 0..g - 1 {
        let pairs = marry(rng, &gens[k])?;
        let mut next = Vec::with_capacity(size);
        for (a, b) in pairs {
            let kids = procreate(gens[k][a].mode, gens[k][b].mode)?;
            let heavy = gens[k][a].heavy || gens[k][b].heavy;
            let base = next.len();
            for (i, &c) in kids.iter().enumerate() {
                next.push(Node { mode: c, heavy, sibling: Some(base + 1 - i) });
                tree.parents[k + 1][base + i] = Some([a, b]);
                tree.sibling[k + 1][base + i] = Some(base + 1 - i);
            }
            tree.spouse[k][a] = Some(b);
            tree.spouse[k][b] = Some(a);
            tree.children[k][a] = Some([base, base + 1]);
            tree.children[k][b] = Some([base, base + 1]);
        }
        gens.push(next);
    }
    let generations = gens.iter().map(|gen| gen.iter().map(|n| n.mode).collect()).collect();
    Some(sort_generations(Candidate { generations, tree }))
}

/// Orders each generation lexicographically and rewrites the tree indices to match.
pub fn sort_generations(c: Candidate) -> Candidate {
    let g = c.g();
    let mut perm_new_of_old: Vec<Vec<usize>> = Vec::with_capacity(g);
    let mut generations = Vec::with_capacity(g);
    for gen in &c.generations {
        let mut order: Vec<usize> = (0..gen.len()).collect();
        order.sort_by_key(|&i| gen[i]);
        let mut inv = vec![0; gen.len()];
        for (new, &old) in order.iter().enumerate() {
            inv[old] = new;
        }
        generations.push(order.iter().map(|&i| gen[i]).collect::<Vec<_>>());
        perm_new_of_old.push(inv);
    }
    let sizes: Vec<usize> = generations.iter().map(Vec::len).collect();
    let mut tree = FamilyTree::empty(&sizes);
    for k in 0..g {
        let p = &perm_new_of_old[k];
        for old in 0..sizes[k] {
            let new = p[old];
            tree.spouse[k][new] = c.tree.spouse[k][old].map(|s| p[s]);
            tree.sibling[k][new] = c.tree.sibling[k][old].map(|s| p[s]);
            if k + 1 < g {
                let pn = &perm_new_of_old[k + 1];
                tree.children[k][new] = c.tree.children[k][old].map(|[x, y]| {
                    let (x, y) = (pn[x], pn[y]);
                    [x.min(y), x.max(y)]
                });
            }
            if k > 0 {
                let pp = &perm_new_of_old[k - 1];
                tree.parents[k][new] = c.tree.parents[k][old].map(|[x, y]| {
                    let (x, y) = (pp[x], pp[y]);
                    [x.min(y), x.max(y)]
                });
            }
        }
    }
    Candidate { generations, tree }
}

/// Randomized placement plus rejection against the property checks.
pub fn build_prototype(g: usize, seed: u64, opts: &BuildOptions) -> Result<Candidate, LatticeError> {
    if g < 2 {
        return Err(LatticeError::Invalid(format!("need g >= 2, got {g}")));
    }
    if g > 12 {
        return Err(LatticeError::Invalid(format!("g = {g} is beyond desk scale (max 12)")));
    }
    if !(opts.spread.is_finite() && opts.spread >= 1.0) || !(opts.heavy_ratio.is_finite() && opts.heavy_ratio >= 1.0) {
        return Err(LatticeError::Invalid("spread and heavy ratio must be >= 1".into()));
    }
    if opts.spread * opts.heavy_ratio > 1e14 {
        return Err(LatticeError::Invalid("spread too large for exact integer arithmetic".into()));
    }
    let mut last: Option<PropertyReport> = None;
    for i in 0..opts.budget {
        let mut r = rng::stream(seed, i as u64);
        let Some(cand) = attempt(&mut r, g, opts) else { continue };
        let report = verify_properties(&cand);
        if report.all_pass() {
            return Ok(cand);
        }
        last = Some(report);
    }
    Err(LatticeError::BudgetExhausted {
        attempts: opts.budget,
        last: Box::new(last.unwrap_or_default()),
    })
}
