//! Cell-mapping graph of controlled `(eps, tau_step)`-chains.
//!
//! Cells of a gridded region are nodes. For each cell `c` and control letter
//! `w` there is an edge `c -> c'` whenever the endpoint of the trajectory
//! from the center of `c` under the constant control `w` lies within
//! `eps + h_cell sqrt(d) / 2` of the center of `c'`. Nontrivial strongly
//! connected components approximate chain control sets from outside.

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{integrate_from, FlowOptions};
use crate::system::{quantize_controls, ControlSignal, Region, SystemSpec};

#[derive(Debug, Clone)]
pub struct ChainGraph {
    region: Region,
    eps: f64,
    tau_step: f64,
    alphabet: Vec<Vec<f64>>,
    /// `adjacency[c]` = sorted `(letter, target)` pairs.
    adjacency: Vec<Vec<(usize, usize)>>,
    blown_up: Vec<usize>,
    component: Vec<usize>,
    components: Vec<Vec<usize>>,
}

impl ChainGraph {
    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn tau_step(&self) -> f64 {
        self.tau_step
    }

    pub fn alphabet(&self) -> &[Vec<f64>] {
        &self.alphabet
    }

    pub fn edges_from(&self, cell: usize) -> &[(usize, usize)] {
        &self.adjacency[cell]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    /// Cells whose trajectory failed to integrate for some letter.
    pub fn blown_up(&self) -> &[usize] {
        &self.blown_up
    }

    /// Index of the strongly connected component containing `cell`.
    pub fn component_of(&self, cell: usize) -> usize {
        self.component[cell]
    }

    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    fn has_edge(&self, from: usize, to: usize) -> bool {
        self.adjacency[from].iter().any(|&(_, t)| t == to)
    }

    /// Edge list CSV: `from, to, letter, u1..um`.
    pub fn write_edges_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.alphabet.first().map_or(0, Vec::len);
        let mut header = vec!["from".to_string(), "to".into(), "letter".into()];
        header.extend((1..=m).map(|i| format!("u{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (c, edges) in self.adjacency.iter().enumerate() {
            for &(letter, t) in edges {
                let u: Vec<String> = self.alphabet[letter].iter().map(|v| v.to_string()).collect();
                let mut row = vec![c.to_string(), t.to_string(), letter.to_string()];
                row.extend(u);
                writeln!(w, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

/// Graph over the quantized alphabet with `levels` values per input axis.
pub fn build_graph(
    spec: &SystemSpec,
    region: &Region,
    eps: f64,
    tau_step: f64,
    levels: usize,
    opts: &FlowOptions,
) -> Result<ChainGraph> {
    let alphabet = if spec.inputs() == 0 { vec![Vec::new()] } else { quantize_controls(spec, levels)? };
    build_graph_with_alphabet(spec, region, eps, tau_step, alphabet, opts)
}

pub fn build_graph_with_alphabet(
    spec: &SystemSpec,
    region: &Region,
    eps: f64,
    tau_step: f64,
    alphabet: Vec<Vec<f64>>,
    opts: &FlowOptions,
) -> Result<ChainGraph> {
    if region.dim() != spec.dim() {
        return Err(Error::DimensionMismatch(format!(
            "region of dimension {} for a {}-dimensional system",
            region.dim(),
            spec.dim()
        )));
    }
    let h_cell = region.cell_width();
    if !(eps >= h_cell / 2.0 - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "eps = {eps} must be at least half the cell width {h_cell}"
        )));
    }
    if !(tau_step > 0.0) {
        return Err(Error::InvalidArgument("tau_step must be positive".into()));
    }
    let signals = alphabet
        .iter()
        .map(|w| {
            if w.is_empty() {
                Ok(ControlSignal::autonomous(tau_step))
            } else {
                ControlSignal::constant(w.clone(), tau_step, spec.control_box())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let radius = eps + h_cell * (spec.dim() as f64).sqrt() / 2.0;

    let rows: Vec<(Vec<(usize, usize)>, bool)> = (0..region.cell_count())
        .into_par_iter()
        .map(|c| {
            let center = region.cell_center(c);
            let mut edges = Vec::new();
            let mut blown = false;
            for (letter, u) in signals.iter().enumerate() {
                match integrate_from(spec, 0.0, &center, u, tau_step, false, opts) {
                    Ok(seg) => {
                        for t in cells_near(region, seg.final_state().as_slice(), radius) {
                            edges.push((letter, t));
                        }
                    }
                    Err(_) => blown = true,
                }
            }
            edges.sort_unstable();
            (edges, blown)
        })
        .collect();

    let blown_up = rows.iter().enumerate().filter(|(_, r)| r.1).map(|(c, _)| c).collect();
    let adjacency: Vec<Vec<(usize, usize)>> = rows.into_iter().map(|r| r.0).collect();
    let targets: Vec<Vec<usize>> = adjacency
        .iter()
        .map(|e| {
            let mut t: Vec<usize> = e.iter().map(|p| p.1).collect();
            t.sort_unstable();
            t.dedup();
            t
        })
        .collect();
    let (component, components) = strongly_connected(&targets);
    Ok(ChainGraph {
        region: region.clone(),
        eps,
        tau_step,
        alphabet,
        adjacency,
        blown_up,
        component,
        components,
    })
}

/// Cells whose center lies strictly within `radius` of `p`.
fn cells_near(region: &Region, p: &[f64], radius: f64) -> Vec<usize> {
    let lo = region.bounds().lo();
    let w = region.cell_width();
    let counts = region.counts();
    let mut ranges = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        // center_j = lo + (j + 1/2) w
        let a = ((p[i] - radius - lo[i]) / w - 0.5).ceil().max(0.0);
        let b = ((p[i] + radius - lo[i]) / w - 0.5).floor().min(counts[i] as f64 - 1.0);
        if !(a <= b) {
            return Vec::new();
        }
        ranges.push((a as usize, b as usize));
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    loop {
        let c = region.flat_index(&idx);
        let center = region.cell_center(c);
        let dist = center.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if dist < radius {
            out.push(c);
        }
        // odometer over the index box, last axis fastest
        let mut axis = idx.len();
        loop {
            if axis == 0 {
                out.sort_unstable();
                return out;
            }
            axis -= 1;
            if idx[axis] < ranges[axis].1 {
                idx[axis] += 1;
                break;
            }
            idx[axis] = ranges[axis].0;
        }
    }
}

/// Iterative Tarjan. Returns the component index of every node and the
/// components (sorted node lists, ordered by smallest member).
pub fn strongly_connected(adj: &[Vec<usize>]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let n = adj.len();
    const UNSEEN: usize = usize::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut next = 0;
    let mut call: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        call.push((root, 0));
        while let Some(&mut (v, ref mut child)) = call.last_mut() {
            if *child == 0 && index[v] == UNSEEN {
                index[v] = next;
                low[v] = next;
                next += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if *child < adj[v].len() {
                let w = adj[v][*child];
                *child += 1;
                if index[w] == UNSEEN {
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack");
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                comps.push(comp);
            }
        }
    }
    comps.sort_by_key(|c| c[0]);
    let mut component = vec![0; n];
    for (i, c) in comps.iter().enumerate() {
        for &v in c {
            component[v] = i;
        }
    }
    (component, comps)
}

/// Nontrivial strongly connected component with its bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainControlSet {
    pub cells: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub size: usize,
}

/// Components with at least one internal edge.
pub fn chain_control_sets(g: &ChainGraph) -> Vec<ChainControlSet> {
    g.components
        .iter()
        .filter(|c| c.len() > 1 || g.has_edge(c[0], c[0]))
        .map(|cells| {
            let d = g.region.dim();
            let mut lo = vec![f64::INFINITY; d];
            let mut hi = vec![f64::NEG_INFINITY; d];
            for &c in cells {
                let (a, b) = g.region.cell_bounds(c);
                for i in 0..d {
                    lo[i] = lo[i].min(a[i]);
                    hi[i] = hi[i].max(b[i]);
                }
            }
            ChainControlSet { cells: cells.clone(), lo, hi, size: cells.len() }
        })
        .collect()
}

/// `max_{c in from} dist(c, to) * tau_step` in the graph; `to` itself counts as 0.
pub fn first_hitting_time(g: &ChainGraph, from: &[usize], to: usize) -> Result<f64> {
    let n = g.adjacency.len();
    if to >= n || from.iter().any(|&c| c >= n) {
        return Err(Error::InvalidArgument("cell index out of range".into()));
    }
    let mut reverse = vec![Vec::new(); n];
    for (c, edges) in g.adjacency.iter().enumerate() {
        for &(_, t) in edges {
            reverse[t].push(c);
        }
    }
    let mut dist = vec![usize::MAX; n];
    dist[to] = 0;
    let mut queue = VecDeque::from([to]);
    while let Some(v) = queue.pop_front() {
        for &p in &reverse[v] {
            if dist[p] == usize::MAX {
                dist[p] = dist[v] + 1;
                queue.push_back(p);
            }
        }
    }
    let mut worst = 0;
    for &c in from {
        if dist[c] == usize::MAX {
            return Err(Error::Unreachable { from: c, to });
        }
        worst = worst.max(dist[c]);
    }
    Ok(worst as f64 * g.tau_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::BoxSet;

    fn region(lo: f64, hi: f64, w: f64) -> Region {
        Region::new(BoxSet::new(vec![lo], vec![hi]).unwrap(), w).unwrap()
    }

    #[test]
    fn tarjan_on_small_graphs() {
        let adj = vec![vec![1], vec![2], vec![0], vec![2, 4], vec![]];
        let (comp, comps) = strongly_connected(&adj);
        assert_eq!(comps, vec![vec![0, 1, 2], vec![3], vec![4]]);
        assert_eq!(comp[1], comp[2]);
        assert_ne!(comp[3], comp[4]);
    }

    #[test]
    fn scalar_unstable_chain_set() {
        let s = SystemSpec::from_strings(1, &[&["x1"], &["1"]], &[-1.0], &[1.0]).unwrap();
        let g = build_graph(&s, &region(-2.0, 2.0, 0.05), 0.05, 0.25, 3, &FlowOptions::default())
            .unwrap();
        let sets = chain_control_sets(&g);
        let core: Vec<_> = sets.iter().filter(|c| c.lo[0] <= -0.9 && c.hi[0] >= 0.9).collect();
        assert_eq!(core.len(), 1);
        assert!(core[0].lo[0] >= -1.1 - 1e-9 && core[0].hi[0] <= 1.1 + 1e-9);
        // jump tolerance leaves isolated recurrent cells just outside, none inside
        for c in &sets {
            assert!(c.size == 1 || std::ptr::eq(c, core[0]));
            assert!(c.hi[0] <= -1.1 + 1e-9 || c.lo[0] >= 1.1 - 1e-9 || std::ptr::eq(c, core[0]));
        }
    }

    #[test]
    fn global_attractor_has_single_set_at_origin() {
        let s = SystemSpec::from_strings(1, &[&["-x1"], &["1"]], &[-1.0], &[1.0]).unwrap();
        let g = build_graph_with_alphabet(
            &s,
            &region(-1.0, 1.0, 0.1),
            0.05,
            2.0,
            vec![vec![0.0]],
            &FlowOptions::default(),
        )
        .unwrap();
        let sets = chain_control_sets(&g);
        assert_eq!(sets.len(), 1);
        assert!(sets[0].lo[0] >= -0.3 && sets[0].hi[0] <= 0.3);
        assert!(sets[0].lo[0] <= 0.0 && sets[0].hi[0] >= 0.0);
    }

    #[test]
    fn empty_alphabet_has_no_edges() {
        let s = SystemSpec::from_strings(1, &[&["x1"], &["1"]], &[-1.0], &[1.0]).unwrap();
        let g = build_graph_with_alphabet(&s, &region(-1.0, 1.0, 0.1), 0.05, 0.5, vec![], &FlowOptions::default())
            .unwrap();
        assert_eq!(g.edge_count(), 0);
        assert!(chain_control_sets(&g).is_empty());
    }

    #[test]
    fn bistable_system_separates_attractors() {
        // x' = x - x^3 has attractors at -1 and 1 and a repeller at 0
        let s = SystemSpec::from_strings(1, &[&["x1 - x1^3"], &["1"]], &[-0.05], &[0.05]).unwrap();
        let g = build_graph(&s, &region(-1.5, 1.5, 0.05), 0.025, 0.5, 3, &FlowOptions::default())
            .unwrap();
        let sets = chain_control_sets(&g);
        let contains = |v: f64| sets.iter().filter(|c| c.lo[0] <= v && c.hi[0] >= v).count();
        assert_eq!(contains(-1.0), 1);
        assert_eq!(contains(1.0), 1);
        let left = sets.iter().position(|c| c.lo[0] <= -1.0 && c.hi[0] >= -1.0).unwrap();
        let right = sets.iter().position(|c| c.lo[0] <= 1.0 && c.hi[0] >= 1.0).unwrap();
        assert_ne!(left, right);
    }

    #[test]
    fn edges_grow_with_eps() {
        let s = SystemSpec::from_strings(1, &[&["x1"], &["1"]], &[-1.0], &[1.0]).unwrap();
        let r = region(-2.0, 2.0, 0.1);
        let o = FlowOptions::default();
        let a = build_graph(&s, &r, 0.05, 0.25, 3, &o).unwrap();
        let b = build_graph(&s, &r, 0.12, 0.25, 3, &o).unwrap();
        for c in 0..r.cell_count() {
            for e in a.edges_from(c) {
                assert!(b.edges_from(c).contains(e));
            }
        }
        assert!(build_graph(&s, &r, 0.01, 0.25, 3, &o).is_err());
    }

    #[test]
    fn hitting_times() {
        let s = SystemSpec::from_strings(1, &[&["x1"], &["1"]], &[-1.0], &[1.0]).unwrap();
        let g = build_graph(&s, &region(-2.0, 2.0, 0.05), 0.05, 0.25, 3, &FlowOptions::default())
            .unwrap();
        let mid = g.region().cell_of(&[0.0]).unwrap();
        let sets = chain_control_sets(&g);
        let set = sets.iter().find(|c| c.cells.contains(&mid)).unwrap();
        assert_eq!(first_hitting_time(&g, &[mid], mid).unwrap(), 0.0);
        let t = first_hitting_time(&g, &set.cells, mid).unwrap();
        assert!(t > 0.0 && t <= set.cells.len() as f64 * g.tau_step());
        // from far out every control pushes the state further away
        let far = g.region().cell_of(&[1.9]).unwrap();
        assert!(matches!(
            first_hitting_time(&g, &[far], mid),
            Err(Error::Unreachable { from, to }) if from == far && to == mid
        ));
    }
}
