//! Candidate-function libraries over the current state and its delayed (or
//! collocated) copies.
//!
//! Variables are numbered block-major: variable `b * n + j` is channel `j` of
//! block `b`, where block 0 is the current state. Polynomial columns come in
//! graded lexicographic order, followed by the rational columns.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockSelector {
    AllDelayed,
    LastBlock,
    Explicit(Vec<usize>),
}

/// `z^k / (1 + |z|^exponent)` for `k = 0..=numerator` applied to every channel
/// of the selected blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RationalTerm {
    pub exponent: f64,
    pub selector: BlockSelector,
    /// Highest numerator power. Mackey-Glass needs 1.
    #[serde(default)]
    pub numerator: u32,
}

impl RationalTerm {
    pub fn new(exponent: f64, selector: BlockSelector) -> Self {
        Self {
            exponent,
            selector,
            numerator: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossBlockPolicy {
    /// Every monomial over all variables.
    Full,
    /// Monomials touching at most one block besides the current state.
    Restricted,
    /// `Full` while it leaves fewer columns than regression rows, `Restricted`
    /// otherwise. Compiles as `Full` until resolved.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibrarySpec {
    pub degree: u32,
    pub include_constant: bool,
    pub rational: Option<RationalTerm>,
    pub cross_block: CrossBlockPolicy,
}

impl Default for LibrarySpec {
    fn default() -> Self {
        Self {
            degree: 2,
            include_constant: true,
            rational: None,
            cross_block: CrossBlockPolicy::Full,
        }
    }
}

impl LibrarySpec {
    pub fn polynomial(degree: u32) -> Self {
        Self {
            degree,
            ..Self::default()
        }
    }

    /// Replaces an `Auto` cross-block policy by the concrete one used for
    /// `rows` regression rows.
    pub fn resolve_for(&self, dim: usize, blocks: usize, rows: usize) -> LibrarySpec {
        let mut out = self.clone();
        if self.cross_block == CrossBlockPolicy::Auto {
            let full = LibrarySpec {
                cross_block: CrossBlockPolicy::Full,
                ..self.clone()
            };
            let p = Library::new(&full, dim, blocks, BlockLabels::Delays)
                .map_or(usize::MAX, |l| l.len());
            out.cross_block = if p < rows {
                CrossBlockPolicy::Full
            } else {
                CrossBlockPolicy::Restricted
            };
        }
        out
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if let Some(r) = &self.rational {
            if !(r.exponent > 0.0 && r.exponent.is_finite()) {
                errs.push(format!(
                    "rational exponent must be positive (got {})",
                    r.exponent
                ));
            }
        }
        errs
    }
}

/// How delayed blocks are named in descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockLabels {
    /// `x1(t-tau2)`
    Delays,
    /// `x1(t+eta2)`
    Nodes,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    /// Product of variables, indices nondecreasing with repetition for powers.
    Monomial(Vec<usize>),
    Rational {
        var: usize,
        exponent: f64,
        power: u32,
    },
}

impl Term {
    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Term::Monomial(idx) => idx.iter().fold(1.0, |acc, &k| acc * vars[k]),
            Term::Rational {
                var,
                exponent,
                power,
            } => {
                let z = vars[*var];
                z.powi(*power as i32) / (1.0 + z.abs().powf(*exponent))
            }
        }
    }

    /// Blocks read by this term.
    fn blocks(&self, n: usize) -> Vec<usize> {
        let mut b: Vec<usize> = match self {
            Term::Monomial(idx) => idx.iter().map(|k| k / n).collect(),
            Term::Rational { var, .. } => vec![var / n],
        };
        b.dedup();
        b
    }
}

/// Combinations with replacement of `v` variables taken `d` at a time, in
/// lexicographic order.
fn multisets(v: usize, d: usize) -> Vec<Vec<usize>> {
    if d == 0 {
        return vec![vec![]];
    }
    if v == 0 {
        return vec![];
    }
    let mut out = Vec::new();
    let mut cur = vec![0usize; d];
    loop {
        out.push(cur.clone());
        // rightmost position that can still grow
        let Some(pos) = (0..d).rev().find(|&i| cur[i] < v - 1) else {
            break;
        };
        let next = cur[pos] + 1;
        for c in cur[pos..].iter_mut() {
            *c = next;
        }
    }
    out
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k.min(n - k)).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// A library compiled for a fixed physical dimension and block count.
#[derive(Debug, Clone, PartialEq)]
pub struct Library {
    spec: LibrarySpec,
    dim: usize,
    blocks: usize,
    labels: BlockLabels,
    terms: Vec<Term>,
    descriptors: Vec<String>,
}

impl Library {
    pub fn new(spec: &LibrarySpec, dim: usize, blocks: usize, labels: BlockLabels) -> Result<Self> {
        let errs = spec.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        if dim == 0 || blocks == 0 {
            return Err(Error::Shape("library needs at least one variable".into()));
        }
        let v = dim * blocks;
        let mut terms = Vec::new();
        let start = if spec.include_constant { 0 } else { 1 };
        for d in start..=spec.degree as usize {
            for m in multisets(v, d) {
                let t = Term::Monomial(m);
                let delayed = t.blocks(dim).iter().filter(|&&b| b > 0).count();
                if spec.cross_block != CrossBlockPolicy::Restricted || delayed <= 1 {
                    terms.push(t);
                }
            }
        }
        if let Some(r) = &spec.rational {
            let selected: Vec<usize> = match &r.selector {
                BlockSelector::AllDelayed => (1..blocks).collect(),
                BlockSelector::LastBlock => vec![blocks - 1],
                BlockSelector::Explicit(ix) => {
                    if let Some(b) = ix.iter().find(|&&b| b >= blocks) {
                        return Err(Error::Shape(format!(
                            "rational term selects block {b} of {blocks}"
                        )));
                    }
                    ix.clone()
                }
            };
            for b in selected {
                for j in 0..dim {
                    for power in 0..=r.numerator {
                        terms.push(Term::Rational {
                            var: b * dim + j,
                            exponent: r.exponent,
                            power,
                        });
                    }
                }
            }
        }
        let mut lib = Self {
            spec: spec.clone(),
            dim,
            blocks,
            labels,
            terms,
            descriptors: Vec::new(),
        };
        lib.descriptors = lib.terms.iter().map(|t| lib.describe(t)).collect();
        Ok(lib)
    }

    pub fn spec(&self) -> &LibrarySpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn descriptors(&self) -> &[String] {
        &self.descriptors
    }

    pub fn var_name(&self, var: usize) -> String {
        let (b, j) = (var / self.dim, var % self.dim + 1);
        match (b, self.labels) {
            (0, _) => format!("x{j}"),
            (b, BlockLabels::Delays) => format!("x{j}(t-tau{b})"),
            (b, BlockLabels::Nodes) => format!("x{j}(t+eta{b})"),
        }
    }

    fn describe(&self, t: &Term) -> String {
        match t {
            Term::Monomial(idx) if idx.is_empty() => "1".to_string(),
            Term::Monomial(idx) => {
                let mut s = String::new();
                let mut i = 0;
                while i < idx.len() {
                    let run = idx[i..].iter().take_while(|&&k| k == idx[i]).count();
                    if !s.is_empty() {
                        s.push('*');
                    }
                    s.push_str(&self.var_name(idx[i]));
                    if run > 1 {
                        let _ = write!(s, "^{run}");
                    }
                    i += run;
                }
                s
            }
            Term::Rational {
                var,
                exponent,
                power,
            } => {
                let v = self.var_name(*var);
                let num = match power {
                    0 => "1".to_string(),
                    1 => v.clone(),
                    k => format!("{v}^{k}"),
                };
                format!("{num}/(1+{v}^{exponent})")
            }
        }
    }

    fn parse_var(&self, s: &str) -> Option<usize> {
        let rest = s.strip_prefix('x')?;
        let (chan, block) = match rest.find('(') {
            None => (rest, 0),
            Some(p) => {
                let inner = rest[p..].strip_prefix('(')?.strip_suffix(')')?;
                let b = match self.labels {
                    BlockLabels::Delays => inner.strip_prefix("t-tau")?,
                    BlockLabels::Nodes => inner.strip_prefix("t+eta")?,
                };
                (&rest[..p], b.parse::<usize>().ok()?)
            }
        };
        let j = chan.parse::<usize>().ok()?;
        (j >= 1 && j <= self.dim && block < self.blocks).then(|| block * self.dim + j - 1)
    }

    /// Inverse of the descriptor formatting.
    pub fn parse_term(&self, desc: &str) -> Result<Term> {
        let err = || Error::Descriptor(desc.to_string());
        if desc == "1" {
            return Ok(Term::Monomial(vec![]));
        }
        if let Some((num, den)) = desc.split_once("/(1+") {
            let inner = den.strip_suffix(')').ok_or_else(err)?;
            let (v, e) = inner.rsplit_once('^').ok_or_else(err)?;
            let var = self.parse_var(v).ok_or_else(err)?;
            let exponent = e.parse::<f64>().map_err(|_| err())?;
            let power = if num == "1" {
                0
            } else {
                let (nv, k) = num
                    .rsplit_once('^')
                    .map_or((num, Some(1)), |(nv, k)| (nv, k.parse().ok()));
                if self.parse_var(nv) != Some(var) {
                    return Err(err());
                }
                k.ok_or_else(err)?
            };
            return Ok(Term::Rational {
                var,
                exponent,
                power,
            });
        }
        let mut idx = Vec::new();
        for factor in desc.split('*') {
            let (v, p) = match factor.rsplit_once('^') {
                Some((v, p)) => (v, p.parse::<usize>().map_err(|_| err())?),
                None => (factor, 1),
            };
            let var = self.parse_var(v).ok_or_else(err)?;
            idx.extend(std::iter::repeat_n(var, p));
        }
        idx.sort_unstable();
        Ok(Term::Monomial(idx))
    }

    /// Evaluates every column at one point; `vars` holds all blocks back to back.
    pub fn eval_row(&self, vars: &[f64], out: &mut [f64]) {
        debug_assert_eq!(vars.len(), self.dim * self.blocks);
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = t.eval(vars);
        }
    }

    pub fn build(&self, blocks: &[&DMatrix<f64>]) -> Result<FeatureMatrix> {
        if blocks.len() != self.blocks {
            return Err(Error::Shape(format!(
                "library expects {} blocks, got {}",
                self.blocks,
                blocks.len()
            )));
        }
        let rows = blocks[0].nrows();
        if blocks
            .iter()
            .any(|b| b.nrows() != rows || b.ncols() != self.dim)
        {
            return Err(Error::Shape("blocks differ in shape".into()));
        }
        if rows == 0 {
            return Err(Error::InsufficientData("library over zero samples".into()));
        }
        let n = self.dim;
        let mut vars = vec![0.0; n * self.blocks];
        let mut row = vec![0.0; self.len()];
        let mut theta = DMatrix::zeros(rows, self.len());
        for i in 0..rows {
            for (b, blk) in blocks.iter().enumerate() {
                for j in 0..n {
                    vars[b * n + j] = blk[(i, j)];
                }
            }
            self.eval_row(&vars, &mut row);
            theta.row_mut(i).copy_from_slice(&row);
        }
        Ok(FeatureMatrix {
            matrix: theta,
            descriptors: self.descriptors.clone(),
        })
    }
}

/// Library evaluated on sample blocks, one column per descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub matrix: DMatrix<f64>,
    pub descriptors: Vec<String>,
}

impl FeatureMatrix {
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }
}

pub fn build_library(
    blocks: &[DMatrix<f64>],
    spec: &LibrarySpec,
    labels: BlockLabels,
) -> Result<FeatureMatrix> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::Shape("no sample blocks".into()))?;
    let lib = Library::new(spec, first.ncols(), blocks.len(), labels)?;
    lib.build(&blocks.iter().collect::<Vec<_>>())
}

/// Single-point evaluation matching [`build_library`] row by row.
pub fn evaluate_row(
    spec: &LibrarySpec,
    state_blocks: &[Vec<f64>],
    labels: BlockLabels,
) -> Result<Vec<f64>> {
    let n = state_blocks.first().map_or(0, Vec::len);
    if state_blocks.iter().any(|b| b.len() != n) {
        return Err(Error::Shape("state blocks differ in length".into()));
    }
    let lib = Library::new(spec, n, state_blocks.len(), labels)?;
    let vars: Vec<f64> = state_blocks.concat();
    let mut out = vec![0.0; lib.len()];
    lib.eval_row(&vars, &mut out);
    Ok(out)
}
