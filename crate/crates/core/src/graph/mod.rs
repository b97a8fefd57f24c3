//! FN-MDP causal graphs as binary masks, their time unrolling, d-separation
//! and compact representations.
//!
//! Mask convention: rows index the child, columns the parent. `css[i][j] = 1`
//! is the edge `s_j → s_i`, `cts[i][k] = 1` is `θˢ_k → s_i`, and
//! `ctt_s[j][k] = 1` is `θˢ_k → θˢ_j`.

mod compact;
mod dag;
mod unroll;

pub use compact::{compact_representation, CompactRep};
pub use dag::Dag;
pub use unroll::{NodeKind, UnrolledDbn};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub d: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
}

pub type Matrix = Vec<Vec<bool>>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphDoc", into = "GraphDoc")]
pub struct FnMdpGraph {
    pub dims: Dims,
    pub css: Matrix,
    pub cas: Matrix,
    pub cts: Matrix,
    pub csr: Vec<bool>,
    pub car: Vec<bool>,
    pub ctt_s: Matrix,
    pub ctt_r: Matrix,
}

fn filled(rows: usize, cols: usize, v: bool) -> Matrix {
    vec![vec![v; cols]; rows]
}

impl FnMdpGraph {
    pub fn filled(dims: Dims, v: bool) -> Self {
        let Dims { d, m, p, q } = dims;
        Self {
            dims,
            css: filled(d, d, v),
            cas: filled(d, m, v),
            cts: filled(d, p, v),
            csr: vec![v; d],
            car: vec![v; m],
            ctt_s: filled(p, p, v),
            ctt_r: filled(q, q, v),
        }
    }

    pub fn empty(dims: Dims) -> Self {
        Self::filled(dims, false)
    }

    /// Checks every block against the dims header.
    pub fn validate(&self) -> Result<()> {
        let Dims { d, m, p, q } = self.dims;
        let check = |name: &str, mat: &Matrix, r: usize, c: usize| -> Result<()> {
            if mat.len() != r || mat.iter().any(|row| row.len() != c) {
                return Err(Error::contract(format!("mask {name} must be {r}x{c}")));
            }
            Ok(())
        };
        check("css", &self.css, d, d)?;
        check("cas", &self.cas, d, m)?;
        check("cts", &self.cts, d, p)?;
        check("ctt_s", &self.ctt_s, p, p)?;
        check("ctt_r", &self.ctt_r, q, q)?;
        if self.csr.len() != d || self.car.len() != m {
            return Err(Error::contract(format!("csr must have length {d} and car length {m}")));
        }
        Ok(())
    }

    /// The seven mask blocks flattened row-major, in a fixed order.
    pub fn blocks(&self) -> [(&'static str, Vec<bool>); 7] {
        let flat = |m: &Matrix| m.iter().flatten().copied().collect::<Vec<_>>();
        [
            ("css", flat(&self.css)),
            ("cas", flat(&self.cas)),
            ("cts", flat(&self.cts)),
            ("csr", self.csr.clone()),
            ("car", self.car.clone()),
            ("ctt_s", flat(&self.ctt_s)),
            ("ctt_r", flat(&self.ctt_r)),
        ]
    }

    pub fn edge_count(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.iter().filter(|&&x| x).count()).sum()
    }

    /// `true` for each state dimension that receives some θˢ edge.
    pub fn cts_row_support(&self) -> Vec<bool> {
        self.cts.iter().map(|row| row.iter().any(|&x| x)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Structural Hamming distance: differing entries over all seven blocks.
pub fn shd(a: &FnMdpGraph, b: &FnMdpGraph) -> Result<usize> {
    if a.dims != b.dims {
        return Err(Error::contract(format!("shd between {:?} and {:?}", a.dims, b.dims)));
    }
    Ok(a.blocks()
        .iter()
        .zip(b.blocks().iter())
        .map(|((_, x), (_, y))| x.iter().zip(y).filter(|(u, v)| u != v).count())
        .sum())
}

/// Random graph with each optional edge present with probability `density`,
/// patched so that some state feeds the reward and every state has a parent.
pub fn random_fnmdp_graph(seed: u64, dims: Dims, density: f64) -> Result<FnMdpGraph> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::contract(format!("density {density} outside (0, 1]")));
    }
    if dims.d == 0 {
        return Err(Error::contract("graphs need at least one state dimension"));
    }
    let mut rng = substream(seed, "graph");
    let Dims { d, m, p, q } = dims;
    let mut draw = |r: usize, c: usize| -> Matrix {
        (0..r).map(|_| (0..c).map(|_| rng.random_bool(density)).collect()).collect()
    };
    let css = draw(d, d);
    let cas = draw(d, m);
    let cts = draw(d, p);
    let csr = draw(1, d).remove(0);
    let car = draw(1, m).remove(0);
    let ctt_s = draw(p, p);
    let ctt_r = draw(q, q);
    let mut g = FnMdpGraph { dims, css, cas, cts, csr, car, ctt_s, ctt_r };
    if !g.csr.iter().any(|&x| x) {
        let j = rng.random_range(0..d);
        g.csr[j] = true;
    }
    for i in 0..d {
        let has_parent =
            g.css[i].iter().any(|&x| x) || g.cas[i].iter().any(|&x| x) || g.cts[i].iter().any(|&x| x);
        if !has_parent {
            g.css[i][i] = true;
        }
    }
    Ok(g)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    dims: Dims,
    css: Vec<Vec<u8>>,
    cas: Vec<Vec<u8>>,
    cts: Vec<Vec<u8>>,
    csr: Vec<u8>,
    car: Vec<u8>,
    ctt_s: Vec<Vec<u8>>,
    ctt_r: Vec<Vec<u8>>,
}

impl TryFrom<GraphDoc> for FnMdpGraph {
    type Error = Error;

    fn try_from(doc: GraphDoc) -> Result<Self> {
        let bit = |v: u8| -> Result<bool> {
            match v {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::contract(format!("mask entry {v} is not 0 or 1"))),
            }
        };
        let vec = |v: Vec<u8>| v.into_iter().map(bit).collect::<Result<Vec<_>>>();
        let mat = |m: Vec<Vec<u8>>| m.into_iter().map(vec).collect::<Result<Matrix>>();
        let g = FnMdpGraph {
            dims: doc.dims,
            css: mat(doc.css)?,
            cas: mat(doc.cas)?,
            cts: mat(doc.cts)?,
            csr: vec(doc.csr)?,
            car: vec(doc.car)?,
            ctt_s: mat(doc.ctt_s)?,
            ctt_r: mat(doc.ctt_r)?,
        };
        g.validate()?;
        Ok(g)
    }
}

impl From<FnMdpGraph> for GraphDoc {
    fn from(g: FnMdpGraph) -> Self {
        let vec = |v: Vec<bool>| v.into_iter().map(u8::from).collect::<Vec<_>>();
        let mat = |m: Matrix| m.into_iter().map(vec).collect::<Vec<_>>();
        GraphDoc {
            dims: g.dims,
            css: mat(g.css),
            cas: mat(g.cas),
            cts: mat(g.cts),
            csr: vec(g.csr),
            car: vec(g.car),
            ctt_s: mat(g.ctt_s),
            ctt_r: mat(g.ctt_r),
        }
    }
}
