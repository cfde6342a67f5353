//! Diamond hierarchical graphs `D_n` with branching number `b` and segmenting
//! number `s`.
//!
//! `D_0` is a single edge between the roots `A` and `B`. `D_1` has `b` parallel
//! branches of `s` serial edges, and `D_{n+1}` replaces every edge of `D_1` by a
//! copy of `D_n`. Edges of `D_k` are addressed by `k` pairs `(branch, segment)`
//! read from the outermost level inwards, and non-root vertices by the edge
//! they subdivide plus a `(branch, slot)` pair.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Maximum number of paths [`enumerate_paths`] will materialise.
pub const PATH_ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphParams {
    pub b: u32,
    pub s: u32,
    pub n: u32,
}

impl GraphParams {
    pub fn new(b: u32, s: u32, n: u32) -> Result<Self> {
        if b < 2 {
            bail!(Argument, "branching number b must be >= 2, got {b}");
        }
        if s < 2 {
            bail!(Argument, "segmenting number s must be >= 2, got {s}");
        }
        Ok(Self { b, s, n })
    }

    /// Shorthand for the critical family `b = s`.
    pub fn critical(b: u32, n: u32) -> Result<Self> {
        Self::new(b, b, n)
    }

    pub fn is_critical(&self) -> bool {
        self.b == self.s
    }

    /// Rejects `b != s` for routines defined only on the critical family.
    pub fn require_critical(&self) -> Result<()> {
        if !self.is_critical() {
            bail!(Argument, "critical-mode routine requires b = s, got b={}, s={}", self.b, self.s);
        }
        Ok(())
    }

    pub fn with_generation(&self, n: u32) -> Self {
        Self { n, ..*self }
    }

    /// Number of edges contributed per subdivided edge, `b·s`.
    pub fn fanout(&self) -> u64 {
        u64::from(self.b) * u64::from(self.s)
    }

    /// Number of edges at depth `k`, `(bs)^k`.
    pub fn edges_at_depth(&self, k: u32) -> Result<u64> {
        self.fanout()
            .checked_pow(k)
            .ok_or_else(|| crate::Error::OutOfRange(format!("(bs)^{k} overflows u64 for b={}, s={}", self.b, self.s)))
    }

    /// `|E_n| = (bs)^n`.
    pub fn edge_count(&self) -> Result<u64> {
        self.edges_at_depth(self.n)
    }

    /// Number of generation-`g` vertices, `b(s-1)(bs)^{g-1}`, for `1 <= g <= n`.
    pub fn new_vertex_count(&self, g: u32) -> Result<u64> {
        if g == 0 || g > self.n {
            bail!(Argument, "generation g={g} outside 1..={}", self.n);
        }
        self.generation_size(g)
    }

    fn generation_size(&self, g: u32) -> Result<u64> {
        let per_edge = u64::from(self.b) * u64::from(self.s - 1);
        self.edges_at_depth(g - 1)?
            .checked_mul(per_edge)
            .ok_or_else(|| crate::Error::OutOfRange(format!("generation-{g} vertex count overflows u64")))
    }

    /// `|V_n|`, the number of non-root vertices of `D_n`.
    pub fn total_vertex_count(&self) -> Result<u64> {
        self.vertex_offset(self.n + 1)
    }

    /// Number of vertices with generation strictly below `g`; the first id
    /// assigned to generation `g`.
    pub fn vertex_offset(&self, g: u32) -> Result<u64> {
        let mut total: u64 = 0;
        for gen in 1..g {
            total = total
                .checked_add(self.generation_size(gen)?)
                .ok_or_else(|| crate::Error::OutOfRange("vertex count overflows u64".into()))?;
        }
        Ok(total)
    }

    /// `|Γ_n|`, from `|Γ_0| = 1` and `|Γ_{k+1}| = b·|Γ_k|^s`.
    pub fn path_count(&self) -> Result<u128> {
        path_count_at(self.b, self.s, self.n)
    }
}

impl fmt::Display for GraphParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D_{}^({},{})", self.n, self.b, self.s)
    }
}

fn path_count_at(b: u32, s: u32, n: u32) -> Result<u128> {
    let mut count: u128 = 1;
    for k in 0..n {
        count = count
            .checked_pow(s)
            .and_then(|c| c.checked_mul(u128::from(b)))
            .ok_or_else(|| crate::Error::OutOfRange(format!("|Γ_{}| overflows u128", k + 1)))?;
    }
    Ok(count)
}

/// Edge of `D_k` given by its nested `(branch, segment)` pairs, 1-based,
/// outermost level first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct EdgeAddress {
    pub pairs: Vec<(u32, u32)>,
}

impl EdgeAddress {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn depth(&self) -> u32 {
        self.pairs.len() as u32
    }

    /// The edge `h×(i,j)`.
    pub fn child(&self, i: u32, j: u32) -> Self {
        let mut pairs = Vec::with_capacity(self.pairs.len() + 1);
        pairs.extend_from_slice(&self.pairs);
        pairs.push((i, j));
        Self { pairs }
    }

    pub fn validate(&self, params: &GraphParams) -> Result<()> {
        for &(i, j) in &self.pairs {
            if i == 0 || i > params.b || j == 0 || j > params.s {
                bail!(Argument, "pair ({i},{j}) outside 1..={} x 1..={}", params.b, params.s);
            }
        }
        Ok(())
    }

    /// Mixed-radix code in `[0, (bs)^k)`: digit `(i-1)s + (j-1)`, outermost
    /// pair most significant, so the children of `h` occupy the contiguous
    /// block `[h·bs, h·bs + bs)`.
    pub fn encode(&self, params: &GraphParams) -> Result<u64> {
        self.validate(params)?;
        let radix = params.fanout();
        let mut code: u64 = 0;
        for &(i, j) in &self.pairs {
            let digit = u64::from(i - 1) * u64::from(params.s) + u64::from(j - 1);
            code = code
                .checked_mul(radix)
                .and_then(|c| c.checked_add(digit))
                .ok_or_else(|| crate::Error::OutOfRange("edge code overflows u64".into()))?;
        }
        Ok(code)
    }

    pub fn decode(code: u64, depth: u32, params: &GraphParams) -> Result<Self> {
        let limit = params.edges_at_depth(depth)?;
        if code >= limit {
            bail!(Argument, "edge code {code} outside [0, {limit}) at depth {depth}");
        }
        let radix = params.fanout();
        let s = u64::from(params.s);
        let mut pairs = vec![(0, 0); depth as usize];
        let mut rest = code;
        for slot in pairs.iter_mut().rev() {
            let digit = rest % radix;
            rest /= radix;
            *slot = ((digit / s) as u32 + 1, (digit % s) as u32 + 1);
        }
        Ok(Self { pairs })
    }
}

impl fmt::Display for EdgeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (idx, (i, j)) in self.pairs.iter().enumerate() {
            if idx > 0 {
                f.write_str(",")?;
            }
            write!(f, "({i},{j})")?;
        }
        f.write_str("]")
    }
}

/// Generation-`g` vertex created when the depth-`(g-1)` edge `parent_edge`
/// was subdivided: it sits on branch `branch` after segment `slot`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VertexAddress {
    pub generation: u32,
    pub parent_edge: EdgeAddress,
    pub branch: u32,
    pub slot: u32,
}

impl VertexAddress {
    /// Canonical id in `[0, |V_n|)`; generations are laid out in increasing
    /// order and, within one, by `(parent code, branch, slot)`.
    pub fn id(&self, params: &GraphParams) -> Result<u64> {
        if self.generation == 0 || self.parent_edge.depth() + 1 != self.generation {
            bail!(Argument, "vertex generation {} inconsistent with parent depth {}", self.generation, self.parent_edge.depth());
        }
        if self.branch == 0 || self.branch > params.b || self.slot == 0 || self.slot >= params.s {
            bail!(Argument, "vertex (branch {}, slot {}) out of range", self.branch, self.slot);
        }
        let parent = self.parent_edge.encode(params)?;
        Ok(params.vertex_offset(self.generation)? + vertex_local_index(params, parent, self.branch, self.slot))
    }

    pub fn from_id(id: u64, params: &GraphParams) -> Result<Self> {
        let mut offset = 0u64;
        let mut g = 1u32;
        loop {
            let size = params.generation_size(g)?;
            if id < offset + size {
                break;
            }
            offset += size;
            g += 1;
        }
        let local = id - offset;
        let per_parent = u64::from(params.b) * u64::from(params.s - 1);
        let parent = local / per_parent;
        let within = local % per_parent;
        Ok(Self {
            generation: g,
            parent_edge: EdgeAddress::decode(parent, g - 1, params)?,
            branch: (within / u64::from(params.s - 1)) as u32 + 1,
            slot: (within % u64::from(params.s - 1)) as u32 + 1,
        })
    }
}

#[inline]
pub(crate) fn vertex_local_index(params: &GraphParams, parent_code: u64, branch: u32, slot: u32) -> u64 {
    (parent_code * u64::from(params.b) + u64::from(branch - 1)) * u64::from(params.s - 1) + u64::from(slot - 1)
}

/// Per-generation id offsets, `offsets[g]` for `g = 0..=n+1`.
pub(crate) fn vertex_offsets(params: &GraphParams) -> Result<Vec<u64>> {
    (0..=params.n + 1).map(|g| params.vertex_offset(g.max(1))).collect()
}

/// One end of an edge: a root or a non-root vertex.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Endpoint {
    A,
    B,
    Vertex(VertexAddress),
}

/// The two endpoints of edge `h` in any `D_n` with `n >= depth(h)`.
pub fn edge_endpoints(h: &EdgeAddress, params: &GraphParams) -> (Endpoint, Endpoint) {
    let mut start = Endpoint::A;
    let mut end = Endpoint::B;
    let mut parent = EdgeAddress::root();
    for &(i, j) in &h.pairs {
        let generation = parent.depth() + 1;
        let vertex = |slot| {
            Endpoint::Vertex(VertexAddress { generation, parent_edge: parent.clone(), branch: i, slot })
        };
        let next_start = if j == 1 { start.clone() } else { vertex(j - 1) };
        let next_end = if j == params.s { end.clone() } else { vertex(j) };
        start = next_start;
        end = next_end;
        parent = parent.child(i, j);
    }
    (start, end)
}

/// The `b·s` children `h×(i,j)` of `h`, lexicographic in `(i, j)`.
pub fn child_edges(h: &EdgeAddress, params: &GraphParams) -> Result<Vec<EdgeAddress>> {
    if h.depth() >= params.n {
        bail!(Argument, "edge at depth {} has no children in {}", h.depth(), params);
    }
    h.validate(params)?;
    let mut out = Vec::with_capacity(params.fanout() as usize);
    for i in 1..=params.b {
        for j in 1..=params.s {
            out.push(h.child(i, j));
        }
    }
    Ok(out)
}

/// A directed path from `A` to `B`, listed by the `s^n - 1` non-root vertices
/// it visits in order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    pub vertices: Vec<VertexAddress>,
}

/// Every path of `Γ_n`, built from the coarse-grained product decomposition:
/// a path through the sub-diamond of `h` picks a branch `i` and then one path
/// through each of `h×(i,1), …, h×(i,s)`, separated by the branch's vertices.
pub fn enumerate_paths(params: &GraphParams) -> Result<Vec<Path>> {
    let count = params.path_count()?;
    if count > PATH_ENUMERATION_LIMIT {
        bail!(Resource, "{} has {count} paths, above the enumeration limit {PATH_ENUMERATION_LIMIT}", params);
    }
    let paths = paths_below(&EdgeAddress::root(), params);
    debug_assert_eq!(paths.len() as u128, count);
    Ok(paths.into_iter().map(|vertices| Path { vertices }).collect())
}

fn paths_below(h: &EdgeAddress, params: &GraphParams) -> Vec<Vec<VertexAddress>> {
    if h.depth() == params.n {
        return vec![Vec::new()];
    }
    let generation = h.depth() + 1;
    let mut out = Vec::new();
    for i in 1..=params.b {
        let mut partial: Vec<Vec<VertexAddress>> = vec![Vec::new()];
        for j in 1..=params.s {
            let segment = paths_below(&h.child(i, j), params);
            let mut next = Vec::with_capacity(partial.len() * segment.len());
            for prefix in &partial {
                for tail in &segment {
                    let mut path = prefix.clone();
                    path.extend_from_slice(tail);
                    if j < params.s {
                        path.push(VertexAddress { generation, parent_edge: h.clone(), branch: i, slot: j });
                    }
                    next.push(path);
                }
            }
            partial = next;
        }
        out.extend(partial);
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;

    fn gp(b: u32, s: u32, n: u32) -> GraphParams {
        GraphParams::new(b, s, n).unwrap()
    }

    #[test]
    fn rejects_degenerate_params() {
        assert!(GraphParams::new(1, 2, 0).is_err());
        assert!(GraphParams::new(2, 1, 0).is_err());
        assert!(gp(2, 3, 1).require_critical().is_err());
        assert!(gp(3, 3, 1).require_critical().is_ok());
    }

    #[test]
    fn edge_counts() {
        assert_eq!(gp(2, 2, 3).edge_count().unwrap(), 64);
        assert_eq!(gp(3, 3, 0).edge_count().unwrap(), 1);
        assert_eq!(gp(3, 2, 2).edge_count().unwrap(), 36);
        assert!(matches!(gp(2, 2, 40).edge_count(), Err(crate::Error::OutOfRange(_))));
    }

    #[test]
    fn vertex_counts() {
        assert_eq!(gp(2, 2, 2).new_vertex_count(2).unwrap(), 8);
        assert_eq!(gp(2, 2, 2).new_vertex_count(1).unwrap(), 2);
        assert_eq!(gp(3, 3, 1).new_vertex_count(1).unwrap(), 6);
        assert!(gp(2, 2, 2).new_vertex_count(0).is_err());
        assert!(gp(2, 2, 2).new_vertex_count(3).is_err());
        assert_eq!(gp(2, 2, 0).total_vertex_count().unwrap(), 0);
        assert_eq!(gp(2, 2, 1).total_vertex_count().unwrap(), 2);
        assert_eq!(gp(2, 2, 3).total_vertex_count().unwrap(), 42);
        assert_eq!(gp(2, 2, 6).total_vertex_count().unwrap(), 2730);
        for (b, s, n) in [(2, 2, 6), (3, 3, 4), (2, 5, 3), (4, 3, 5)] {
            let p = gp(b, s, n);
            let bs = u64::from(b * s);
            let closed = u64::from(b * (s - 1)) * (bs.pow(n) - 1) / (bs - 1);
            assert_eq!(p.total_vertex_count().unwrap(), closed);
        }
    }

    #[test]
    fn path_counts() {
        assert_eq!(gp(2, 2, 2).path_count().unwrap(), 8);
        assert_eq!(gp(2, 2, 0).path_count().unwrap(), 1);
        assert_eq!(gp(3, 3, 2).path_count().unwrap(), 81);
        assert_eq!(gp(2, 2, 3).path_count().unwrap(), 128);
        assert!(matches!(gp(2, 2, 9).path_count(), Err(crate::Error::OutOfRange(_))));
    }

    #[test]
    fn root_children() {
        let p = gp(2, 2, 2);
        let kids = child_edges(&EdgeAddress::root(), &p).unwrap();
        let pairs: Vec<_> = kids.iter().map(|h| h.pairs[0]).collect();
        assert_eq!(pairs, vec![(1, 1), (1, 2), (2, 1), (2, 2)]);
        let h = EdgeAddress { pairs: vec![(1, 2)] };
        let kids = child_edges(&h, &p).unwrap();
        assert_eq!(kids.len(), 4);
        assert!(kids.iter().all(|k| k.pairs[0] == (1, 2)));
        let leaf = EdgeAddress { pairs: vec![(1, 2), (2, 1)] };
        assert!(child_edges(&leaf, &p).is_err());
    }

    #[test]
    fn recursive_children_cover_edge_set() {
        for p in [gp(2, 2, 4), gp(3, 3, 2), gp(2, 3, 3)] {
            let mut level = vec![EdgeAddress::root()];
            for _ in 0..p.n {
                level = level.iter().flat_map(|h| child_edges(h, &p).unwrap()).collect();
            }
            let codes: HashSet<u64> = level.iter().map(|h| h.encode(&p).unwrap()).collect();
            assert_eq!(codes.len() as u64, p.edge_count().unwrap());
            // lexicographic generation order equals code order
            let ordered: Vec<u64> = level.iter().map(|h| h.encode(&p).unwrap()).collect();
            assert!(ordered.windows(2).all(|w| w[1] == w[0] + 1));
        }
    }

    #[test]
    fn edge_codes_round_trip_through_depth_six() {
        let p = gp(2, 2, 6);
        for depth in 0..=6 {
            for code in 0..p.edges_at_depth(depth).unwrap() {
                let h = EdgeAddress::decode(code, depth, &p).unwrap();
                assert_eq!(h.depth(), depth);
                assert_eq!(h.encode(&p).unwrap(), code);
            }
        }
        assert!(EdgeAddress::decode(16, 2, &p).is_err());
    }

    #[test]
    fn vertex_ids_are_a_bijection() {
        for p in [gp(2, 2, 4), gp(3, 3, 2), gp(2, 4, 2)] {
            let total = p.total_vertex_count().unwrap();
            for id in 0..total {
                let v = VertexAddress::from_id(id, &p).unwrap();
                assert!(v.generation >= 1 && v.generation <= p.n);
                assert_eq!(v.id(&p).unwrap(), id);
            }
            for g in 1..=p.n {
                let count = (0..total).filter(|&id| VertexAddress::from_id(id, &p).unwrap().generation == g).count();
                assert_eq!(count as u64, p.new_vertex_count(g).unwrap());
            }
        }
    }

    fn adjacency(p: &GraphParams) -> HashSet<(Endpoint, Endpoint)> {
        (0..p.edge_count().unwrap())
            .map(|code| edge_endpoints(&EdgeAddress::decode(code, p.n, p).unwrap(), p))
            .collect()
    }

    #[test]
    fn enumerated_paths_are_directed_paths() {
        for p in [gp(2, 2, 1), gp(2, 2, 2), gp(2, 2, 3), gp(3, 3, 1), gp(3, 3, 2), gp(2, 3, 2), gp(3, 2, 2)] {
            let paths = enumerate_paths(&p).unwrap();
            assert_eq!(paths.len() as u128, p.path_count().unwrap(), "{p}");
            let len = p.s.pow(p.n) as usize - 1;
            let edges = adjacency(&p);
            let mut distinct = HashSet::new();
            for path in &paths {
                assert_eq!(path.vertices.len(), len);
                let mut stops = vec![Endpoint::A];
                stops.extend(path.vertices.iter().cloned().map(Endpoint::Vertex));
                stops.push(Endpoint::B);
                for pair in stops.windows(2) {
                    assert!(edges.contains(&(pair[0].clone(), pair[1].clone())), "{p}: {:?}", pair);
                }
                for v in &path.vertices {
                    assert!(v.generation <= p.n);
                    v.id(&p).unwrap();
                }
                distinct.insert(path.clone());
            }
            assert_eq!(distinct.len(), paths.len());
        }
    }

    #[test]
    fn small_path_examples() {
        let paths = enumerate_paths(&gp(2, 2, 1)).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths.iter().all(|q| q.vertices.len() == 1));
        let paths = enumerate_paths(&gp(2, 2, 2)).unwrap();
        assert_eq!(paths.len(), 8);
        assert!(paths.iter().all(|q| q.vertices.len() == 3));
        let paths = enumerate_paths(&gp(3, 3, 1)).unwrap();
        assert_eq!(paths.len(), 3);
        assert!(paths.iter().all(|q| q.vertices.len() == 2));
        assert_eq!(enumerate_paths(&gp(2, 2, 0)).unwrap(), vec![Path { vertices: vec![] }]);
    }

    #[test]
    fn enumeration_guard() {
        assert!(matches!(enumerate_paths(&gp(2, 2, 5)), Err(crate::Error::Resource(_))));
        assert!(matches!(enumerate_paths(&gp(3, 3, 3)), Err(crate::Error::Resource(_))));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(b in 2u32..6, s in 2u32..6, pairs in proptest::collection::vec((0u32..100, 0u32..100), 0..8)) {
            let p = gp(b, s, pairs.len() as u32);
            let h = EdgeAddress { pairs: pairs.into_iter().map(|(i, j)| (i % b + 1, j % s + 1)).collect() };
            let code = h.encode(&p).unwrap();
            prop_assert!(code < p.edge_count().unwrap());
            prop_assert_eq!(EdgeAddress::decode(code, h.depth(), &p).unwrap(), h);
        }
    }
}
