//! Percolation-graph descriptions of the village epidemics.
//!
//! Vertices are individuals `(site, label)` with sites `0..length` and labels
//! `0..N`. Two distinct individuals at sites at distance at most one are
//! joined by an open edge with probability `p`. For SIR the coin of a pair is
//! undirected and fixed; for SIS every generation has its own layer of
//! directed coins. Coins come from [`edge_coin`] and are read on demand.

use crate::epidemic::Variant;
use crate::error::{invalid, Result};
use crate::rng::{edge_coin, Key};
use rayon::prelude::*;
use std::collections::BTreeSet;
use std::io::{self, Write};

/// `(site, label)`.
pub type Vertex = (i64, u32);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VillageGraph {
    pub n: u32,
    pub length: i64,
    pub p: f64,
    pub variant: Variant,
    /// Number of SIS generation layers.
    pub horizon: usize,
    rep: Key,
}

/// Graph on `[N] × {0..length-1}`; `p` defaults to `1/(3N)`.
pub fn build_graph(
    n: u32,
    length: i64,
    p: Option<f64>,
    variant: Variant,
    horizon: usize,
    rep: Key,
) -> Result<VillageGraph> {
    if n == 0 {
        return invalid("village size must be positive");
    }
    if length <= 0 {
        return invalid(format!("length must be positive, got {length}"));
    }
    let p = p.unwrap_or(1.0 / (3.0 * n as f64));
    if !(0.0..=1.0).contains(&p) {
        return invalid(format!("edge probability {p} outside [0, 1]"));
    }
    Ok(VillageGraph {
        n,
        length,
        p,
        variant,
        horizon,
        rep,
    })
}

impl VillageGraph {
    pub fn contains(&self, v: Vertex) -> bool {
        (0..self.length).contains(&v.0) && v.1 < self.n
    }

    fn layer(&self, generation: usize) -> Option<u64> {
        match self.variant {
            Variant::Sir => None,
            Variant::Sis => Some(generation as u64),
        }
    }

    /// Whether `a -> b` is open; for SIR the generation is ignored and the
    /// edge is symmetric.
    pub fn is_open(&self, a: Vertex, b: Vertex, generation: usize) -> bool {
        a != b
            && (a.0 - b.0).abs() <= 1
            && self.contains(a)
            && self.contains(b)
            && edge_coin(self.rep, self.layer(generation), a, b).uniform() < self.p
    }

    fn admissible_targets(&self, v: Vertex) -> impl Iterator<Item = Vertex> + '_ {
        let lo = (v.0 - 1).max(0);
        let hi = (v.0 + 1).min(self.length - 1);
        (lo..=hi)
            .flat_map(move |y| (0..self.n).map(move |j| (y, j)))
            .filter(move |&w| w != v)
    }

    /// Open out-edges of `v` in layer `generation`, sorted.
    pub fn neighbours(&self, v: Vertex, generation: usize) -> Vec<Vertex> {
        self.admissible_targets(v)
            .filter(|&w| edge_coin(self.rep, self.layer(generation), v, w).uniform() < self.p)
            .collect()
    }

    /// Every open edge of layer `generation`: unordered pairs `a < b` for
    /// SIR, ordered pairs for SIS. Sites are processed in parallel.
    pub fn edges(&self, generation: usize) -> Vec<(Vertex, Vertex)> {
        let per_site: Vec<Vec<(Vertex, Vertex)>> = (0..self.length)
            .into_par_iter()
            .map(|x| {
                let mut out = Vec::new();
                for i in 0..self.n {
                    let a = (x, i);
                    for b in self.admissible_targets(a) {
                        if self.variant == Variant::Sir && b < a {
                            continue;
                        }
                        if edge_coin(self.rep, self.layer(generation), a, b).uniform() < self.p {
                            out.push((a, b));
                        }
                    }
                }
                out
            })
            .collect();
        per_site.into_iter().flatten().collect()
    }

    /// Edge list rows `layer,site_a,label_a,site_b,label_b`.
    pub fn write_edges_csv(&self, w: &mut impl Write, generation: usize) -> io::Result<()> {
        writeln!(w, "layer,site_a,label_a,site_b,label_b")?;
        let layer = match self.variant {
            Variant::Sir => String::new(),
            Variant::Sis => generation.to_string(),
        };
        for ((xa, ia), (xb, ib)) in self.edges(generation) {
            writeln!(w, "{layer},{xa},{ia},{xb},{ib}")?;
        }
        Ok(())
    }
}

/// Generation sets `Y_0, Y_1, …` of an epidemic on a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationSets {
    pub generations: Vec<Vec<Vertex>>,
    /// SIS run stopped at the layer horizon with infectives left.
    pub truncated: bool,
}

impl GenerationSets {
    pub fn total_size(&self) -> usize {
        self.generations.iter().map(Vec::len).sum()
    }

    /// Rows `generation,site,label`.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "generation,site,label")?;
        for (t, g) in self.generations.iter().enumerate() {
            for &(x, j) in g {
                writeln!(w, "{t},{x},{j}")?;
            }
        }
        Ok(())
    }
}

/// SIR: `Y_{n+1}` holds the vertices outside `Y_0 ∪ … ∪ Y_n` adjacent to
/// `Y_n`. SIS: `Y_{n+1}` holds the vertices outside `Y_n` reached from `Y_n`
/// through layer `n`. The final empty generation is included.
pub fn graph_epidemic(graph: &VillageGraph, initial: &[Vertex]) -> Result<GenerationSets> {
    if initial.is_empty() {
        return invalid("initial set must be nonempty");
    }
    if let Some(v) = initial.iter().find(|&&v| !graph.contains(v)) {
        return invalid(format!("initial vertex {v:?} outside the graph"));
    }
    let mut current: BTreeSet<Vertex> = initial.iter().copied().collect();
    let mut seen = current.clone();
    let mut generations = vec![current.iter().copied().collect::<Vec<_>>()];
    let mut t = 0;
    while !current.is_empty() {
        if graph.variant == Variant::Sis && t >= graph.horizon {
            return Ok(GenerationSets {
                generations,
                truncated: true,
            });
        }
        let mut next = BTreeSet::new();
        for &v in &current {
            for w in graph.neighbours(v, t) {
                let fresh = match graph.variant {
                    Variant::Sir => !seen.contains(&w),
                    Variant::Sis => !current.contains(&w),
                };
                if fresh {
                    next.insert(w);
                }
            }
        }
        if graph.variant == Variant::Sir {
            seen.extend(next.iter().copied());
        }
        generations.push(next.iter().copied().collect());
        current = next;
        t += 1;
    }
    Ok(GenerationSets {
        generations,
        truncated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epidemic::{CoinScheme, EpidemicParams, LabeledEpidemic};
    use crate::stats::MeanSe;
    use std::collections::BTreeMap;

    #[test]
    fn extreme_probabilities() {
        let g = build_graph(4, 5, Some(0.0), Variant::Sir, 0, Key::root(1)).unwrap();
        assert!(g.edges(0).is_empty());
        let g = build_graph(4, 5, Some(1.0), Variant::Sir, 0, Key::root(1)).unwrap();
        // within-site pairs C(4,2) per site, cross pairs 16 per adjacent pair
        assert_eq!(g.edges(0).len(), 5 * 6 + 4 * 16);
        let g = build_graph(3, 4, Some(1.0), Variant::Sis, 2, Key::root(1)).unwrap();
        assert_eq!(g.edges(1).len(), 2 * (4 * 3 + 3 * 9));
        assert!(build_graph(4, 5, Some(1.5), Variant::Sir, 0, Key::root(1)).is_err());
        assert!(build_graph(0, 5, None, Variant::Sir, 0, Key::root(1)).is_err());
    }

    #[test]
    fn edges_respect_admissibility_and_symmetry() {
        let g = build_graph(3, 6, Some(0.4), Variant::Sir, 0, Key::root(9)).unwrap();
        for (a, b) in g.edges(0) {
            assert!(a < b && (a.0 - b.0).abs() <= 1);
            assert!(g.is_open(b, a, 7));
            assert!(g.neighbours(a, 0).contains(&b) && g.neighbours(b, 0).contains(&a));
        }
        let h = build_graph(3, 6, Some(0.4), Variant::Sis, 5, Key::root(9)).unwrap();
        assert_ne!(h.edges(0), h.edges(1));
    }

    #[test]
    fn isolated_start_dies_immediately() {
        let g = build_graph(5, 10, Some(0.0), Variant::Sir, 0, Key::root(2)).unwrap();
        let run = graph_epidemic(&g, &[(3, 1)]).unwrap();
        assert_eq!(run.generations, vec![vec![(3, 1)], vec![]]);
        assert!(graph_epidemic(&g, &[]).is_err());
        assert!(graph_epidemic(&g, &[(10, 0)]).is_err());
    }

    #[test]
    fn expected_interior_degree() {
        // 3N - 1 admissible partners at an interior vertex
        let n = 10u32;
        let mut deg = MeanSe::new();
        for r in 0..4000 {
            let g = build_graph(n, 3, None, Variant::Sir, 0, Key::root(5).replicate(r)).unwrap();
            deg.push(g.neighbours((1, 0), 0).len() as f64);
        }
        let expected = (3 * n - 1) as f64 / (3 * n) as f64;
        assert!(deg.z_score(expected) < 4.0, "{} vs {expected}", deg.mean());
    }

    fn find(parent: &mut BTreeMap<Vertex, Vertex>, v: Vertex) -> Vertex {
        let p = *parent.entry(v).or_insert(v);
        if p == v {
            return v;
        }
        let r = find(parent, p);
        parent.insert(v, r);
        r
    }

    #[test]
    fn sir_final_set_is_union_of_components() {
        for seed in 0..20 {
            let g = build_graph(6, 12, Some(0.12), Variant::Sir, 0, Key::root(seed)).unwrap();
            let mut parent = BTreeMap::new();
            for (a, b) in g.edges(0) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent.insert(ra, rb);
            }
            let init = [(5, 0), (6, 3)];
            let roots: BTreeSet<Vertex> = init.iter().map(|&v| find(&mut parent, v)).collect();
            let mut expected = BTreeSet::new();
            for x in 0..12 {
                for j in 0..6 {
                    if roots.contains(&find(&mut parent, (x, j))) {
                        expected.insert((x, j));
                    }
                }
            }
            let run = graph_epidemic(&g, &init).unwrap();
            let got: BTreeSet<Vertex> = run.generations.iter().flatten().copied().collect();
            assert_eq!(got, expected);
            assert_eq!(got.len(), run.total_size(), "layers overlap");
        }
    }

    #[test]
    fn matches_labelled_epidemic_pathwise() {
        for variant in [Variant::Sir, Variant::Sis] {
            for seed in 0..100u64 {
                let n = 3 + (seed % 18) as u32;
                let length = 10 + (seed % 41) as i64;
                let rep = Key::root(1000 + seed);
                let horizon = 60;
                let init: Vec<Vertex> = vec![(length / 2, 0), (length / 2, n - 1), (length / 2 + 1, 1)];
                let g = build_graph(n, length, None, variant, horizon, rep).unwrap();
                let run = graph_epidemic(&g, &init).unwrap();
                let params = EpidemicParams::new(n, variant).unwrap();
                let lab = LabeledEpidemic::from_sets(params, Some((0, length - 1)), init.clone())
                    .unwrap()
                    .run(CoinScheme::ByPair, rep, horizon);
                let reference: Vec<Vec<Vertex>> = lab.iter().map(|e| e.infected_set()).collect();
                assert_eq!(run.generations, reference, "{variant} seed {seed}");
            }
        }
    }

    #[test]
    fn csv_exports() {
        let g = build_graph(2, 2, Some(1.0), Variant::Sir, 0, Key::root(3)).unwrap();
        let mut buf = Vec::new();
        g.write_edges_csv(&mut buf, 0).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 + 4);
        let run = graph_epidemic(&g, &[(0, 0)]).unwrap();
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("generation,site,label\n0,0,0\n1,0,1\n"));
    }
}
