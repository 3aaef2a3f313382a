//! Minimal conic model in the standard form
//!
//! ```text
//! minimize    x'Px/2 + c'x
//! subject to  A x + s = b,   s in K
//! ```
//!
//! with `K` a product of a zero cone, a nonnegative orthant and second-order
//! cones, in that order. Rows are added as affine expressions.

use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `constant + sum(coef * x[col])`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn var(col: usize) -> Self {
        Self::term(col, 1.0)
    }

    pub fn term(col: usize, coef: f64) -> Self {
        Self {
            terms: vec![(col, coef)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn add(mut self, col: usize, coef: f64) -> Self {
        self.terms.push((col, coef));
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, k: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self
    }

    pub fn sum(mut self, other: &Affine) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(c, a)| a * x[c]).sum::<f64>()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConicModel {
    n_vars: usize,
    names: Vec<String>,
    cost: Vec<f64>,
    /// Upper-triangular entries of P.
    quad: Vec<(usize, usize, f64)>,
    zero: Vec<Affine>,
    nonneg: Vec<Affine>,
    soc: Vec<Vec<Affine>>,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    pub status: SolverStatus,
    pub objective: f64,
    pub iterations: u32,
    pub r_prim: f64,
    pub r_dual: f64,
    pub gap_rel: f64,
    pub gap_abs: f64,
    pub solve_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConicTolerances {
    pub gap_abs: f64,
    pub gap_rel: f64,
    pub feas: f64,
    pub ktratio: f64,
    pub max_iter: u32,
}

impl Default for ConicTolerances {
    fn default() -> Self {
        Self {
            gap_abs: 1e-10,
            gap_rel: 1e-10,
            feas: 1e-10,
            ktratio: 1e-8,
            max_iter: 200,
        }
    }
}

impl ConicModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.names.push(name.into());
        self.cost.push(0.0);
        self.n_vars += 1;
        self.n_vars - 1
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_rows(&self) -> usize {
        self.zero.len() + self.nonneg.len() + self.soc.iter().map(Vec::len).sum::<usize>()
    }

    pub fn var_name(&self, col: usize) -> &str {
        &self.names[col]
    }

    pub fn add_cost(&mut self, col: usize, c: f64) {
        self.cost[col] += c;
    }

    /// Adds `coef * x[i] * x[j]` to the objective (`coef * x[i]^2` on the diagonal).
    pub fn add_quadratic_cost(&mut self, i: usize, j: usize, coef: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // objective carries 1/2 x'Px
        let v = if i == j { 2.0 * coef } else { coef };
        self.quad.push((i, j, v));
    }

    /// `expr == 0`.
    pub fn eq_zero(&mut self, expr: Affine) {
        self.zero.push(expr);
    }

    /// `expr >= 0`.
    pub fn nonneg(&mut self, expr: Affine) {
        self.nonneg.push(expr);
    }

    /// `e[0] >= ||e[1..]||`.
    pub fn soc(&mut self, exprs: Vec<Affine>) {
        assert!(exprs.len() >= 2, "second-order cone needs two rows");
        self.soc.push(exprs);
    }

    /// `2 x y >= z^2`, `x, y >= 0`.
    pub fn rotated(&mut self, x: Affine, y: Affine, z: Affine) {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let a = x.clone().scaled(r).sum(&y.clone().scaled(r));
        let b = x.scaled(r).sum(&y.scaled(-r));
        self.soc(vec![a, b, z]);
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.cost.iter().zip(x).map(|(c, v)| c * v).sum();
        let quad: f64 = self
            .quad
            .iter()
            .map(|&(i, j, v)| if i == j { 0.5 * v * x[i] * x[i] } else { v * x[i] * x[j] })
            .sum();
        lin + quad
    }

    /// Largest violation of any constraint at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for e in &self.zero {
            worst = worst.max(e.eval(x).abs());
        }
        for e in &self.nonneg {
            worst = worst.max(-e.eval(x));
        }
        for c in &self.soc {
            let head = c[0].eval(x);
            let tail = c[1..].iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(tail - head);
        }
        worst
    }

    fn rows(&self) -> impl Iterator<Item = &Affine> {
        self.zero
            .iter()
            .chain(self.nonneg.iter())
            .chain(self.soc.iter().flatten())
    }

    fn cones(&self) -> Vec<SupportedConeT<f64>> {
        let mut cones = Vec::new();
        if !self.zero.is_empty() {
            cones.push(SupportedConeT::ZeroConeT(self.zero.len()));
        }
        if !self.nonneg.is_empty() {
            cones.push(SupportedConeT::NonnegativeConeT(self.nonneg.len()));
        }
        for c in &self.soc {
            cones.push(SupportedConeT::SecondOrderConeT(c.len()));
        }
        cones
    }

    pub fn solve(&self, tol: &ConicTolerances) -> Result<ConicSolution> {
        let n = self.n_vars;
        let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::with_capacity(self.n_rows());
        for (r, e) in self.rows().enumerate() {
            // s = expr = b - A x
            for &(c, a) in &e.terms {
                ii.push(r);
                jj.push(c);
                vv.push(-a);
            }
            b.push(e.constant);
        }
        let a = CscMatrix::new_from_triplets(b.len(), n, ii, jj, vv);
        let (pi, pj, pv) = self
            .quad
            .iter()
            .fold((vec![], vec![], vec![]), |(mut i, mut j, mut v), t| {
                i.push(t.0);
                j.push(t.1);
                v.push(t.2);
                (i, j, v)
            });
        let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_gap_abs(tol.gap_abs)
            .tol_gap_rel(tol.gap_rel)
            .tol_feas(tol.feas)
            .tol_ktratio(tol.ktratio)
            .max_iter(tol.max_iter)
            .build()
            .map_err(|e| Error::Optimizer(format!("solver settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &self.cost, &a, &b, &self.cones(), settings)
            .map_err(|e| Error::Optimizer(format!("solver setup: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        Ok(ConicSolution {
            x: sol.x.clone(),
            status: sol.status,
            objective: sol.obj_val,
            iterations: sol.iterations,
            r_prim: sol.r_prim,
            r_dual: sol.r_dual,
            gap_rel: solver.info.gap_rel,
            gap_abs: solver.info.gap_abs,
            solve_time: sol.solve_time,
        })
    }

    /// Plain-text dump of the standard form.
    ///
    /// ```text
    /// conic 1
    /// vars <n>
    /// var <col> <name>
    /// cost <col> <c>
    /// quad <i> <j> <P_ij>
    /// block zero|nonneg|soc <rows>
    /// row <b> <col>:<A_ij> ...
    /// ```
    /// Each `row` line belongs to the most recent `block` and states
    /// `b - A x` in the cone.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "conic 1");
        let _ = writeln!(out, "vars {}", self.n_vars);
        for (c, name) in self.names.iter().enumerate() {
            let _ = writeln!(out, "var {c} {name}");
        }
        for (c, &v) in self.cost.iter().enumerate() {
            if v != 0.0 {
                let _ = writeln!(out, "cost {c} {v:e}");
            }
        }
        for &(i, j, v) in &self.quad {
            let _ = writeln!(out, "quad {i} {j} {v:e}");
        }
        let block = |out: &mut String, kind: &str, rows: &[Affine]| {
            let _ = writeln!(out, "block {kind} {}", rows.len());
            for e in rows {
                let _ = write!(out, "row {:e}", e.constant);
                for &(c, a) in &e.terms {
                    let _ = write!(out, " {c}:{:e}", -a);
                }
                out.push('\n');
            }
        };
        if !self.zero.is_empty() {
            block(&mut out, "zero", &self.zero);
        }
        if !self.nonneg.is_empty() {
            block(&mut out, "nonneg", &self.nonneg);
        }
        for c in &self.soc {
            block(&mut out, "soc", c);
        }
        out
    }
}
