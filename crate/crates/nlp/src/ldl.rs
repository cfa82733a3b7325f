//! Sparse symmetric indefinite LDLᵀ with static 1×1 / 2×2 pivot blocks.
//!
//! Pivot blocks are fixed before the numeric phase: callers pair rows whose
//! diagonal is expected to be small (constraint rows of a KKT matrix) with a
//! column holding a large off-diagonal entry, which gives a well-conditioned
//! 2×2 pivot `[[h, a], [a, -δ]]` whose determinant is close to `-a²`. The
//! elimination order over blocks is a greedy minimum-degree ordering computed
//! together with the fill pattern. The numeric phase then runs on a flat slot
//! array without any hashing.
//!
//! The inertia of the matrix is read off the block diagonal (Sylvester's law
//! of inertia).

use std::collections::{BTreeSet, HashMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pivot {
    One(usize),
    Two(usize, usize),
}

#[derive(Debug, Clone)]
struct Step {
    pivot: Pivot,
    /// Slots of the pivot block: (p1,p1), (p2,p1), (p2,p2).
    diag: [usize; 3],
    nbrs: Vec<usize>,
    /// For each neighbour, slots of (nbr, p1) and (nbr, p2).
    col: Vec<[usize; 2]>,
    /// Upper-triangle (row-major over `nbrs`) slots of the Schur update.
    update: Vec<usize>,
    /// Offset into the factor's L storage.
    l_offset: usize,
}

/// Elimination order and fill pattern for one sparsity structure.
#[derive(Debug, Clone)]
pub struct Symbolic {
    n: usize,
    steps: Vec<Step>,
    nslots: usize,
    l_len: usize,
    /// Slot of each input entry, in the order given to [`Symbolic::analyze`].
    entry_slots: Vec<usize>,
}

/// Inertia counts of a factorized matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularPivot {
    pub step: usize,
}

impl Symbolic {
    /// Builds the elimination order for an `n × n` symmetric pattern.
    ///
    /// `entries` lists lower-triangle positions `(row, col)` with `row >= col`;
    /// duplicates are allowed and share a slot. Every diagonal gets a slot even
    /// if it is not listed. `pairs` are disjoint index pairs eliminated as 2×2
    /// blocks.
    pub fn analyze(n: usize, entries: &[(usize, usize)], pairs: &[(usize, usize)]) -> Symbolic {
        let mut slot_of: HashMap<(usize, usize), usize> = HashMap::new();
        let mut nslots = 0usize;
        let mut slot = |i: usize, j: usize, map: &mut HashMap<(usize, usize), usize>| -> usize {
            let key = if i >= j { (i, j) } else { (j, i) };
            *map.entry(key).or_insert_with(|| {
                nslots += 1;
                nslots - 1
            })
        };
        for i in 0..n {
            slot(i, i, &mut slot_of);
        }
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        let mut entry_slots = Vec::with_capacity(entries.len());
        for &(i, j) in entries {
            assert!(i < n && j < n, "entry ({i}, {j}) outside {n}x{n}");
            entry_slots.push(slot(i, j, &mut slot_of));
            if i != j {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }

        // Pivot groups.
        let mut group_of = vec![usize::MAX; n];
        let mut groups: Vec<Pivot> = Vec::with_capacity(n);
        for &(a, b) in pairs {
            assert!(a != b && group_of[a] == usize::MAX && group_of[b] == usize::MAX);
            group_of[a] = groups.len();
            group_of[b] = groups.len();
            groups.push(Pivot::Two(a, b));
            // The pivot block itself needs its off-diagonal slot.
            slot(a, b, &mut slot_of);
            adj[a].insert(b);
            adj[b].insert(a);
        }
        for i in 0..n {
            if group_of[i] == usize::MAX {
                group_of[i] = groups.len();
                groups.push(Pivot::One(i));
            }
        }

        let members = |p: Pivot| -> ([usize; 2], usize) {
            match p {
                Pivot::One(a) => ([a, a], 1),
                Pivot::Two(a, b) => ([a, b], 2),
            }
        };
        let external = |p: Pivot, adj: &Vec<BTreeSet<usize>>| -> Vec<usize> {
            let (m, k) = members(p);
            let mut out: Vec<usize> = adj[m[0]].iter().copied().filter(|&v| v != m[1]).collect();
            if k == 2 {
                for &v in &adj[m[1]] {
                    if v != m[0] {
                        out.push(v);
                    }
                }
                out.sort_unstable();
                out.dedup();
            }
            out
        };

        let mut degree: Vec<usize> = groups.iter().map(|&g| external(g, &adj).len()).collect();
        let mut queue: BTreeSet<(usize, usize)> =
            degree.iter().enumerate().map(|(g, &d)| (d, g)).collect();
        let mut done = vec![false; groups.len()];
        let mut steps = Vec::with_capacity(groups.len());
        let mut l_len = 0usize;

        while let Some((_, g)) = queue.pop_first() {
            done[g] = true;
            let pivot = groups[g];
            let (m, k) = members(pivot);
            let nbrs = external(pivot, &adj);
            let d11 = slot(m[0], m[0], &mut slot_of);
            let (d21, d22) = if k == 2 {
                (slot(m[1], m[0], &mut slot_of), slot(m[1], m[1], &mut slot_of))
            } else {
                (d11, d11)
            };
            let col: Vec<[usize; 2]> = nbrs
                .iter()
                .map(|&v| {
                    let s1 = slot(v, m[0], &mut slot_of);
                    let s2 = if k == 2 { slot(v, m[1], &mut slot_of) } else { s1 };
                    [s1, s2]
                })
                .collect();
            let mut update = Vec::with_capacity(nbrs.len() * (nbrs.len() + 1) / 2);
            for (a, &va) in nbrs.iter().enumerate() {
                for &vb in &nbrs[a..] {
                    update.push(slot(va, vb, &mut slot_of));
                }
            }
            // Remove the pivot from the graph and form the clique.
            for &v in &nbrs {
                adj[v].remove(&m[0]);
                if k == 2 {
                    adj[v].remove(&m[1]);
                }
            }
            for (a, &va) in nbrs.iter().enumerate() {
                for &vb in &nbrs[a + 1..] {
                    adj[va].insert(vb);
                    adj[vb].insert(va);
                }
            }
            adj[m[0]].clear();
            if k == 2 {
                adj[m[1]].clear();
            }
            let mut touched: Vec<usize> = nbrs.iter().map(|&v| group_of[v]).collect();
            touched.sort_unstable();
            touched.dedup();
            for h in touched {
                if done[h] {
                    continue;
                }
                let d = external(groups[h], &adj).len();
                if d != degree[h] {
                    queue.remove(&(degree[h], h));
                    degree[h] = d;
                    queue.insert((d, h));
                }
            }
            steps.push(Step { pivot, diag: [d11, d21, d22], nbrs, col, update, l_offset: l_len });
            l_len += steps.last().map(|s| s.nbrs.len() * k).unwrap_or(0);
        }

        Symbolic { n, steps, nslots, l_len, entry_slots }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_slots(&self) -> usize {
        self.nslots
    }

    /// Slot index of the `k`-th input entry.
    pub fn entry_slot(&self, k: usize) -> usize {
        self.entry_slots[k]
    }

    /// Slot index of diagonal `i`.
    pub fn diag_slot(&self, i: usize) -> usize {
        // Diagonals are allocated first, in order.
        i
    }

    /// Numeric factorization of the matrix whose lower triangle is stored in
    /// `slots` (length [`Symbolic::num_slots`]). `slots` is overwritten.
    pub fn factor(&self, slots: &mut [f64]) -> Result<Factor<'_>, SingularPivot> {
        assert_eq!(slots.len(), self.nslots);
        let scale = slots.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let piv_tol = 1e-15 * scale;
        let mut l = vec![0.0; self.l_len];
        let mut d = vec![[0.0f64; 3]; self.steps.len()];
        let mut inertia = Inertia::default();
        let mut w1: Vec<f64> = Vec::new();
        let mut w2: Vec<f64> = Vec::new();

        for (s, step) in self.steps.iter().enumerate() {
            let nb = step.nbrs.len();
            match step.pivot {
                Pivot::One(_) => {
                    let p = slots[step.diag[0]];
                    if !(p.abs() > piv_tol) {
                        return Err(SingularPivot { step: s });
                    }
                    if p > 0.0 {
                        inertia.positive += 1;
                    } else {
                        inertia.negative += 1;
                    }
                    d[s] = [1.0 / p, 0.0, 0.0];
                    w1.clear();
                    w1.extend(step.col.iter().map(|c| slots[c[0]]));
                    let mut u = 0;
                    for a in 0..nb {
                        let la = w1[a] / p;
                        l[step.l_offset + a] = la;
                        for b in a..nb {
                            slots[step.update[u]] -= la * w1[b];
                            u += 1;
                        }
                    }
                }
                Pivot::Two(_, _) => {
                    let (a11, a21, a22) =
                        (slots[step.diag[0]], slots[step.diag[1]], slots[step.diag[2]]);
                    let det = a11 * a22 - a21 * a21;
                    let mag = a11.abs().max(a21.abs()).max(a22.abs());
                    if !(det.abs() > 1e-14 * ((a11 * a22).abs() + a21 * a21)) || !(mag > piv_tol) {
                        return Err(SingularPivot { step: s });
                    }
                    if det < 0.0 {
                        inertia.positive += 1;
                        inertia.negative += 1;
                    } else if a11 + a22 > 0.0 {
                        inertia.positive += 2;
                    } else {
                        inertia.negative += 2;
                    }
                    let (i11, i21, i22) = (a22 / det, -a21 / det, a11 / det);
                    d[s] = [i11, i21, i22];
                    w1.clear();
                    w2.clear();
                    for c in &step.col {
                        w1.push(slots[c[0]]);
                        w2.push(slots[c[1]]);
                    }
                    let mut u = 0;
                    for a in 0..nb {
                        // Row a of L = w_a D^{-1}.
                        let la1 = w1[a] * i11 + w2[a] * i21;
                        let la2 = w1[a] * i21 + w2[a] * i22;
                        l[step.l_offset + 2 * a] = la1;
                        l[step.l_offset + 2 * a + 1] = la2;
                        for b in a..nb {
                            slots[step.update[u]] -= la1 * w1[b] + la2 * w2[b];
                            u += 1;
                        }
                    }
                }
            }
        }
        Ok(Factor { sym: self, l, d, inertia })
    }
}

/// Numeric factor produced by [`Symbolic::factor`].
#[derive(Debug, Clone)]
pub struct Factor<'a> {
    sym: &'a Symbolic,
    l: Vec<f64>,
    d: Vec<[f64; 3]>,
    inertia: Inertia,
}

impl Factor<'_> {
    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.sym.n);
        let steps = &self.sym.steps;
        for step in steps {
            match step.pivot {
                Pivot::One(p) => {
                    let yp = b[p];
                    if yp != 0.0 {
                        for (a, &v) in step.nbrs.iter().enumerate() {
                            b[v] -= self.l[step.l_offset + a] * yp;
                        }
                    }
                }
                Pivot::Two(p, q) => {
                    let (yp, yq) = (b[p], b[q]);
                    for (a, &v) in step.nbrs.iter().enumerate() {
                        b[v] -= self.l[step.l_offset + 2 * a] * yp
                            + self.l[step.l_offset + 2 * a + 1] * yq;
                    }
                }
            }
        }
        for (s, step) in steps.iter().enumerate() {
            let di = self.d[s];
            match step.pivot {
                Pivot::One(p) => b[p] *= di[0],
                Pivot::Two(p, q) => {
                    let (yp, yq) = (b[p], b[q]);
                    b[p] = di[0] * yp + di[1] * yq;
                    b[q] = di[1] * yp + di[2] * yq;
                }
            }
        }
        for step in steps.iter().rev() {
            match step.pivot {
                Pivot::One(p) => {
                    let mut acc = 0.0;
                    for (a, &v) in step.nbrs.iter().enumerate() {
                        acc += self.l[step.l_offset + a] * b[v];
                    }
                    b[p] -= acc;
                }
                Pivot::Two(p, q) => {
                    let (mut ap, mut aq) = (0.0, 0.0);
                    for (a, &v) in step.nbrs.iter().enumerate() {
                        ap += self.l[step.l_offset + 2 * a] * b[v];
                        aq += self.l[step.l_offset + 2 * a + 1] * b[v];
                    }
                    b[p] -= ap;
                    b[q] -= aq;
                }
            }
        }
    }
}

/// Multiplies the symmetric matrix given by its lower-triangle triplets with
/// `x`, accumulating into `y`.
pub fn sym_matvec(entries: &[(usize, usize)], vals: &[f64], x: &[f64], y: &mut [f64]) {
    for (&(i, j), &v) in entries.iter().zip(vals) {
        y[i] += v * x[j];
        if i != j {
            y[j] += v * x[i];
        }
    }
}
