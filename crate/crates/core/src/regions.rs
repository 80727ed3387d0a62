//! Region graphs of the cluster variation method.
//!
//! Regions are numbered densely: outer clusters first (in input order), then
//! subset regions ordered by decreasing size and lexicographically within a
//! size, so every region comes after all of its strict supersets.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use log::warn;
use num_rational::Rational64;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::table::{intersect, is_strict_subset, is_subset};
use crate::VarId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegionKind {
    Outer,
    Subset,
}

impl RegionKind {
    fn as_str(self) -> &'static str {
        match self {
            RegionKind::Outer => "outer",
            RegionKind::Subset => "subset",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub id: usize,
    pub vars: Vec<VarId>,
    /// Overcounting (Moebius) number.
    pub c: Rational64,
    pub kind: RegionKind,
}

/// Immutable poset of regions with overcounting numbers.
#[derive(Clone, Debug)]
pub struct RegionGraph {
    regions: Vec<Region>,
    num_outer: usize,
    hasse: Vec<(usize, usize)>,
    /// strict[a * len + b] ⇔ vars(b) ⊊ vars(a)
    strict: Vec<bool>,
    /// outer clusters strictly containing each region (empty for outer ones)
    outer_parents: Vec<Vec<usize>>,
    direct_intersection: Vec<bool>,
    /// agreement of the outer parents on this subset follows from agreement
    /// on larger shared subsets
    implied: Vec<bool>,
    absorbed: Vec<Vec<VarId>>,
}

fn normalize_clusters(clusters: &[Vec<VarId>], num_vars: usize) -> Result<Vec<Vec<VarId>>> {
    if clusters.is_empty() {
        return Err(Error::EmptyClusters);
    }
    let mut out = Vec::with_capacity(clusters.len());
    for (i, cl) in clusters.iter().enumerate() {
        if cl.is_empty() {
            return Err(Error::EmptyCluster { cluster: i });
        }
        if let Some(&var) = cl.iter().find(|&&v| v >= num_vars) {
            return Err(Error::UnknownVariable { cluster: i, var, num_vars });
        }
        let mut vars = cl.clone();
        vars.sort_unstable();
        vars.dedup();
        out.push(vars);
    }
    Ok(out)
}

/// Drop clusters equal to an earlier one or strictly contained in another.
/// Returns the kept clusters (in order) and the dropped ones.
pub(crate) fn absorb_contained(clusters: Vec<Vec<VarId>>) -> (Vec<Vec<VarId>>, Vec<Vec<VarId>>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, cl) in clusters.iter().enumerate() {
        let covered = clusters.iter().enumerate().any(|(j, other)| {
            (j < i && other == cl) || is_strict_subset(cl, other)
        });
        if covered {
            dropped.push(cl.clone());
        } else {
            kept.push(cl.clone());
        }
    }
    (kept, dropped)
}

impl RegionGraph {
    /// Original cluster variation method: all intersections of outer
    /// clusters, intersections of intersections and so on, with Moebius
    /// overcounting numbers.
    pub fn cvm(clusters: &[Vec<VarId>], num_vars: usize) -> Result<Self> {
        let (outer, absorbed) = absorb_contained(normalize_clusters(clusters, num_vars)?);
        for cl in &absorbed {
            warn!("cluster {cl:?} is contained in another cluster and was absorbed");
        }
        let mut known: BTreeSet<Vec<VarId>> = outer.iter().cloned().collect();
        let mut all: Vec<Vec<VarId>> = outer.clone();
        let mut subsets: BTreeSet<Vec<VarId>> = BTreeSet::new();
        // closure under pairwise intersection; only pairs involving a new
        // region need to be examined each round
        let mut frontier_start = 0;
        while frontier_start < all.len() {
            let end = all.len();
            let mut fresh = Vec::new();
            for i in frontier_start..end {
                for j in 0..i {
                    let inter = intersect(&all[i], &all[j]);
                    if !inter.is_empty() && known.insert(inter.clone()) {
                        fresh.push(inter);
                    }
                }
            }
            frontier_start = end;
            for f in fresh {
                subsets.insert(f.clone());
                all.push(f);
            }
        }
        let subsets = order_subsets(subsets.into_iter().collect());
        let mut graph = Self::assemble(outer, subsets, None)?;
        graph.absorbed = absorbed;
        Ok(graph)
    }

    /// Bethe approximation: outer clusters plus every single variable that is
    /// a strict subset of some outer cluster, with `c = 1 - n`.
    pub fn bethe(clusters: &[Vec<VarId>], num_vars: usize) -> Result<Self> {
        let (outer, absorbed) = absorb_contained(normalize_clusters(clusters, num_vars)?);
        for cl in &absorbed {
            warn!("cluster {cl:?} is contained in another cluster and was absorbed");
        }
        let singles: BTreeSet<VarId> = outer
            .iter()
            .filter(|cl| cl.len() >= 2)
            .flat_map(|cl| cl.iter().copied())
            .collect();
        let subsets: Vec<Vec<VarId>> = singles.into_iter().map(|v| vec![v]).collect();
        let counts: Vec<Rational64> = subsets
            .iter()
            .map(|s| {
                let n = outer.iter().filter(|o| is_strict_subset(s, o)).count() as i64;
                Rational64::from_integer(1 - n)
            })
            .collect();
        let mut graph = Self::assemble(outer, subsets, Some(counts))?;
        graph.absorbed = absorbed;
        Ok(graph)
    }

    /// Build from explicit regions; overcounting numbers of subsets follow the
    /// Moebius recursion unless given.
    fn assemble(
        outer: Vec<Vec<VarId>>,
        subsets: Vec<Vec<VarId>>,
        subset_counts: Option<Vec<Rational64>>,
    ) -> Result<Self> {
        let num_outer = outer.len();
        let vars: Vec<Vec<VarId>> = outer.into_iter().chain(subsets).collect();
        let regions: Vec<Region> = vars
            .into_iter()
            .enumerate()
            .map(|(id, vars)| Region {
                id,
                vars,
                c: Rational64::one(),
                kind: if id < num_outer { RegionKind::Outer } else { RegionKind::Subset },
            })
            .collect();
        let mut graph = Self::from_regions_unchecked(regions, num_outer);
        match subset_counts {
            Some(counts) => {
                for (r, c) in graph.regions[num_outer..].iter_mut().zip(counts) {
                    r.c = c;
                }
            }
            None => {
                let c = graph.moebius_numbers();
                for (r, c) in graph.regions.iter_mut().zip(c) {
                    r.c = c;
                }
            }
        }
        Ok(graph)
    }

    fn from_regions_unchecked(regions: Vec<Region>, num_outer: usize) -> Self {
        let len = regions.len();
        let mut strict = vec![false; len * len];
        for a in 0..len {
            for b in 0..len {
                if a != b && is_strict_subset(&regions[b].vars, &regions[a].vars) {
                    strict[a * len + b] = true;
                }
            }
        }
        let mut hasse = Vec::new();
        for b in 0..len {
            for a in 0..len {
                if !strict[a * len + b] {
                    continue;
                }
                let shortcut = (0..len).any(|m| strict[a * len + m] && strict[m * len + b]);
                if !shortcut {
                    hasse.push((a, b));
                }
            }
        }
        hasse.sort_unstable();
        let outer_parents: Vec<Vec<usize>> = (0..len)
            .map(|b| (0..num_outer).filter(|&a| strict[a * len + b]).collect())
            .collect();
        let direct_intersection: Vec<bool> = (0..len)
            .map(|b| {
                let parents = &outer_parents[b];
                parents.iter().enumerate().any(|(i, &a1)| {
                    parents[..i]
                        .iter()
                        .any(|&a2| intersect(&regions[a1].vars, &regions[a2].vars) == regions[b].vars)
                })
            })
            .collect();
        let implied: Vec<bool> = (0..len)
            .map(|b| {
                let parents = &outer_parents[b];
                if b < num_outer || parents.len() < 2 {
                    return b >= num_outer;
                }
                // union-find over the parents, joined by common larger subsets
                let mut root: Vec<usize> = (0..parents.len()).collect();
                fn find(root: &mut [usize], mut i: usize) -> usize {
                    while root[i] != i {
                        root[i] = root[root[i]];
                        i = root[i];
                    }
                    i
                }
                for gm in num_outer..len {
                    if !strict[gm * len + b] {
                        continue;
                    }
                    let holders: Vec<usize> = (0..parents.len()).filter(|&i| strict[parents[i] * len + gm]).collect();
                    for w in holders.windows(2) {
                        let (x, y) = (find(&mut root, w[0]), find(&mut root, w[1]));
                        root[x] = y;
                    }
                }
                let r0 = find(&mut root, 0);
                (1..parents.len()).all(|i| find(&mut root, i) == r0)
            })
            .collect();
        RegionGraph {
            regions,
            num_outer,
            hasse,
            strict,
            outer_parents,
            direct_intersection,
            implied,
            absorbed: Vec::new(),
        }
    }

    /// Recompute Moebius numbers from scratch: `c = 1` on outer clusters,
    /// `c_γ = 1 - Σ_{γ' ⊃ γ} c_γ'` below.
    pub fn moebius_numbers(&self) -> Vec<Rational64> {
        let len = self.regions.len();
        let mut c = vec![Rational64::one(); len];
        for g in self.num_outer..len {
            let above: Rational64 = (0..g).filter(|&a| self.strict[a * len + g]).map(|a| c[a]).sum();
            c[g] = Rational64::one() - above;
        }
        c
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, id: usize) -> &Region {
        &self.regions[id]
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn num_outer(&self) -> usize {
        self.num_outer
    }

    pub fn outer_ids(&self) -> std::ops::Range<usize> {
        0..self.num_outer
    }

    pub fn subset_ids(&self) -> std::ops::Range<usize> {
        self.num_outer..self.regions.len()
    }

    pub fn v_minus(&self) -> Vec<usize> {
        self.subset_ids().filter(|&i| self.regions[i].c.is_negative()).collect()
    }

    pub fn v_plus(&self) -> Vec<usize> {
        self.subset_ids().filter(|&i| self.regions[i].c.is_positive()).collect()
    }

    pub fn v_zero(&self) -> Vec<usize> {
        self.subset_ids().filter(|&i| self.regions[i].c.is_zero()).collect()
    }

    /// Direct-inclusion pairs `(parent, child)`, sorted.
    pub fn hasse_edges(&self) -> &[(usize, usize)] {
        &self.hasse
    }

    /// `vars(sub) ⊊ vars(sup)`.
    pub fn contains(&self, sup: usize, sub: usize) -> bool {
        self.strict[sup * self.regions.len() + sub]
    }

    /// Outer clusters strictly containing `id`.
    pub fn outer_parents(&self, id: usize) -> &[usize] {
        &self.outer_parents[id]
    }

    /// Number of outer clusters strictly containing `id`.
    pub fn n(&self, id: usize) -> usize {
        self.outer_parents[id].len()
    }

    /// Whether the region equals the intersection of two outer clusters.
    pub fn is_direct_intersection(&self, id: usize) -> bool {
        self.direct_intersection[id]
    }

    /// Whether agreement of all outer clusters containing this subset is
    /// already implied by agreement on larger subset regions they share.
    /// Always true for a subset with one outer parent; also true for a
    /// direct intersection whose parents are chained together by larger
    /// shared subsets (the center of a plaquette grid).
    pub fn is_constraint_implied(&self, id: usize) -> bool {
        self.implied[id]
    }

    pub fn overcounting(&self) -> Vec<f64> {
        self.regions.iter().map(|r| r.c.to_f64().unwrap_or(f64::NAN)).collect()
    }

    /// Clusters dropped during construction because another contained them.
    pub fn absorbed(&self) -> &[Vec<VarId>] {
        &self.absorbed
    }

    pub fn outer_clusters(&self) -> Vec<Vec<VarId>> {
        self.regions[..self.num_outer].iter().map(|r| r.vars.clone()).collect()
    }

    /// Variables `i` with `Σ_{γ ∋ i} c_γ ≠ 1`, with the offending sum.
    /// Informational only.
    pub fn counting_defects(&self) -> Vec<(VarId, Rational64)> {
        let vars: BTreeSet<VarId> = self.regions.iter().flat_map(|r| r.vars.iter().copied()).collect();
        vars.into_iter()
            .filter_map(|v| {
                let s: Rational64 = self
                    .regions
                    .iter()
                    .filter(|r| r.vars.binary_search(&v).is_ok())
                    .map(|r| r.c)
                    .sum();
                (s != Rational64::one()).then_some((v, s))
            })
            .collect()
    }

    /// Whether the Hasse diagram, viewed as an undirected graph, is a forest.
    pub fn is_singly_connected(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.regions.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(a, b) in &self.hasse {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return false;
            }
            parent[ra] = rb;
        }
        true
    }

    /// Line-oriented text form: one `id kind c vars...` line per region,
    /// then one `edge parent child` line per Hasse edge.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# region graph: {} regions, {} outer", self.regions.len(), self.num_outer).unwrap();
        for r in &self.regions {
            write!(out, "{} {} {}", r.id, r.kind.as_str(), r.c).unwrap();
            for v in &r.vars {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        for (a, b) in &self.hasse {
            writeln!(out, "edge {a} {b}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut regions: Vec<Region> = Vec::new();
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let err = |msg: String| Error::Parse { line, msg };
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = content.split_whitespace().collect();
            if tokens[0] == "edge" {
                if tokens.len() != 3 {
                    return Err(err("edge line needs parent and child".into()));
                }
                let a: usize = tokens[1].parse().map_err(|_| err("bad parent id".into()))?;
                let b: usize = tokens[2].parse().map_err(|_| err("bad child id".into()))?;
                edges.push((a, b));
                continue;
            }
            if !edges.is_empty() {
                return Err(err("region line after edge lines".into()));
            }
            if tokens.len() < 4 {
                return Err(err("region line needs id, kind, c and at least one variable".into()));
            }
            let id: usize = tokens[0].parse().map_err(|_| err(format!("bad region id {:?}", tokens[0])))?;
            if id != regions.len() {
                return Err(err(format!("region ids must be dense and ascending, got {id}")));
            }
            let kind = match tokens[1] {
                "outer" => RegionKind::Outer,
                "subset" => RegionKind::Subset,
                other => return Err(err(format!("unknown region kind {other:?}"))),
            };
            let c: Rational64 = tokens[2].parse().map_err(|_| err(format!("bad overcounting number {:?}", tokens[2])))?;
            let vars = tokens[3..]
                .iter()
                .map(|t| t.parse::<VarId>().map_err(|_| err(format!("bad variable {t:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if vars.windows(2).any(|w| w[0] >= w[1]) {
                return Err(err("variables must be strictly increasing".into()));
            }
            if kind == RegionKind::Outer && (c != Rational64::one() || regions.iter().any(|r| r.kind == RegionKind::Subset)) {
                return Err(err("outer regions must come first and have c = 1".into()));
            }
            regions.push(Region { id, vars, c, kind });
        }
        let num_outer = regions.iter().filter(|r| r.kind == RegionKind::Outer).count();
        if num_outer == 0 {
            return Err(Error::EmptyClusters);
        }
        let mut graph = Self::from_regions_unchecked(regions, num_outer);
        for b in graph.subset_ids() {
            if graph.outer_parents[b].is_empty() {
                return Err(Error::Parse { line: 0, msg: format!("subset region {b} is not contained in any outer cluster") });
            }
        }
        edges.sort_unstable();
        if edges != graph.hasse {
            return Err(Error::Parse { line: 0, msg: "edge list is not the transitive reduction of inclusion".into() });
        }
        graph.absorbed.clear();
        Ok(graph)
    }
}

fn order_subsets(mut subsets: Vec<Vec<VarId>>) -> Vec<Vec<VarId>> {
    subsets.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    subsets
}

/// Whether every subset is a strict subset of at least one outer cluster.
pub fn subsets_covered(g: &RegionGraph) -> bool {
    g.subset_ids().all(|b| {
        g.outer_ids().any(|a| is_subset(&g.region(b).vars, &g.region(a).vars) && g.region(a).vars != g.region(b).vars)
    })
}
