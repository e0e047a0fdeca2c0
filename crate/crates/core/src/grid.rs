//! Finite-difference Newton solver for `S_k(μ[u]) = ε` on punctured domains
//! in complex dimension 2 (real dimension 4).
//!
//! Nodes sit on `hZ^4` with the puncture at a node. Active nodes lie in
//! `Ω ∖ B̄_ε`; every other node within one step (in the max norm) of an active
//! node is a Dirichlet node carrying the value of a globally defined field.
//! The complex Hessian uses the 25-point stencil of central second
//! differences: four axis second differences and the four mixed ones that
//! couple a z1 coordinate with a z2 coordinate.

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hessian::{HermitianMatrix, OperatorForm, OperatorParams};
use crate::subsolution::{DomainSpec, Field, Shape};

pub const DIM: usize = 4;
const MAX_NEWTON: usize = 60;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[repr(u8)]
pub enum NodeClass {
    Unused = 0,
    Active = 1,
    Dirichlet = 2,
}

impl NodeClass {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(NodeClass::Unused),
            1 => Ok(NodeClass::Active),
            2 => Ok(NodeClass::Dirichlet),
            _ => Err(Error::GridConstruction(format!("unknown node class {v}"))),
        }
    }
}

/// Uniform grid on `[−Nh, Nh]^4` with node classification.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid4 {
    pub h: f64,
    /// Nodes per axis are `2N + 1`.
    pub half_nodes: usize,
    pub eps: f64,
    pub domain: DomainSpec,
    class: Vec<NodeClass>,
    active: Vec<usize>,
    active_of: Vec<u32>,
}

/// Offsets of the 25-point stencil in index space.
fn stencil_offsets() -> Vec<[i64; DIM]> {
    let mut out = vec![[0; DIM]];
    for a in 0..DIM {
        for s in [-1, 1] {
            let mut o = [0; DIM];
            o[a] = s;
            out.push(o);
        }
    }
    // Only pairs mixing z1 and z2 coordinates enter the complex Hessian.
    for (a, b) in MIXED_PAIRS {
        for sa in [-1, 1] {
            for sb in [-1, 1] {
                let mut o = [0; DIM];
                o[a] = sa;
                o[b] = sb;
                out.push(o);
            }
        }
    }
    out
}

const MIXED_PAIRS: [(usize, usize); 4] = [(0, 2), (1, 3), (0, 3), (1, 2)];

impl Grid4 {
    /// Grid for a ball or box in `C^2` with puncture radius `eps` and spacing h.
    pub fn new(domain: &DomainSpec, eps: f64, h: f64) -> Result<Self> {
        if domain.n != 2 {
            return Err(Error::Unsupported(format!("the grid path needs n = 2, got n = {}", domain.n)));
        }
        if !(h > 0.0) {
            return Err(Error::invalid(format!("grid spacing {h} must be positive")));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid(format!("puncture radius {eps} must be positive")));
        }
        let extent = match &domain.shape {
            Shape::Ball { center, radius } => center.iter().map(|c| c.abs() + radius).fold(0.0, f64::max),
            Shape::Box { lower, upper } => lower.iter().chain(upper).map(|v| v.abs()).fold(0.0, f64::max),
        };
        let inner_clearance = match &domain.shape {
            Shape::Ball { center, radius } => radius - crate::subsolution::norm_sq(center).sqrt(),
            Shape::Box { lower, upper } => lower.iter().chain(upper).map(|v| v.abs()).fold(f64::INFINITY, f64::min),
        };
        if eps + 2.0 * h > inner_clearance {
            return Err(Error::GridConstruction(format!(
                "puncture ball of radius {eps} needs a margin of 2h = {} inside the domain",
                2.0 * h
            )));
        }
        let half_nodes = (extent / h - 1e-9).ceil() as usize + 1;
        let side = 2 * half_nodes + 1;
        let total = side.pow(DIM as u32);
        if total > 40_000_000 {
            return Err(Error::GridConstruction(format!("grid with {total} nodes is too large")));
        }
        let mut grid = Grid4 {
            h,
            half_nodes,
            eps,
            domain: domain.clone(),
            class: vec![NodeClass::Unused; total],
            active: Vec::new(),
            active_of: vec![u32::MAX; total],
        };
        let is_active: Vec<bool> = (0..total)
            .into_par_iter()
            .map(|lin| {
                let x = grid.coords(lin);
                let r2: f64 = x.iter().map(|v| v * v).sum();
                r2 > eps * eps && domain.contains(&x)
            })
            .collect();
        let offsets = stencil_offsets();
        for lin in 0..total {
            if !is_active[lin] {
                continue;
            }
            let idx = grid.multi(lin);
            if idx.iter().any(|&i| i == 0 || i == side - 1) {
                return Err(Error::GridConstruction("active node on the grid boundary".into()));
            }
            grid.class[lin] = NodeClass::Active;
            for o in &offsets {
                let nb = grid.offset(lin, o).expect("interior node");
                if !is_active[nb] {
                    grid.class[nb] = NodeClass::Dirichlet;
                }
            }
        }
        for lin in 0..total {
            if grid.class[lin] == NodeClass::Active {
                grid.active_of[lin] = grid.active.len() as u32;
                grid.active.push(lin);
            }
        }
        if grid.active.is_empty() {
            return Err(Error::GridConstruction("no active nodes".into()));
        }
        Ok(grid)
    }

    pub fn side(&self) -> usize {
        2 * self.half_nodes + 1
    }

    pub fn total_nodes(&self) -> usize {
        self.class.len()
    }

    pub fn active_nodes(&self) -> &[usize] {
        &self.active
    }

    pub fn class(&self, lin: usize) -> NodeClass {
        self.class[lin]
    }

    pub fn classes(&self) -> &[NodeClass] {
        &self.class
    }

    pub fn active_index(&self, lin: usize) -> Option<usize> {
        let a = self.active_of[lin];
        (a != u32::MAX).then_some(a as usize)
    }

    pub fn multi(&self, lin: usize) -> [usize; DIM] {
        let side = self.side();
        let mut rest = lin;
        let mut out = [0; DIM];
        for a in (0..DIM).rev() {
            out[a] = rest % side;
            rest /= side;
        }
        out
    }

    pub fn linear(&self, idx: [usize; DIM]) -> usize {
        let side = self.side();
        idx.iter().fold(0, |acc, &i| acc * side + i)
    }

    pub fn coords(&self, lin: usize) -> [f64; DIM] {
        let idx = self.multi(lin);
        let n = self.half_nodes as f64;
        idx.map(|i| (i as f64 - n) * self.h)
    }

    pub fn offset(&self, lin: usize, o: &[i64; DIM]) -> Option<usize> {
        let idx = self.multi(lin);
        let side = self.side() as i64;
        let mut out = [0usize; DIM];
        for a in 0..DIM {
            let v = idx[a] as i64 + o[a];
            if v < 0 || v >= side {
                return None;
            }
            out[a] = v as usize;
        }
        Some(self.linear(out))
    }

    /// Linear index of the node nearest to `x`, if it lies on the grid.
    pub fn node_at(&self, x: &[f64]) -> Option<usize> {
        let n = self.half_nodes as f64;
        let mut idx = [0usize; DIM];
        for a in 0..DIM {
            let v = (x[a] / self.h + n).round();
            if v < 0.0 || v >= self.side() as f64 {
                return None;
            }
            idx[a] = v as usize;
        }
        Some(self.linear(idx))
    }
}

/// Nodal values over the whole grid; NaN at unused nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub values: Vec<f64>,
}

impl GridField {
    /// The field sampled at every active and Dirichlet node.
    pub fn from_field(grid: &Grid4, f: &dyn Field) -> Self {
        let values = (0..grid.total_nodes())
            .into_par_iter()
            .map(|lin| match grid.class[lin] {
                NodeClass::Unused => f64::NAN,
                _ => f.value(&grid.coords(lin)),
            })
            .collect();
        GridField { values }
    }

    /// Dirichlet values from `dirichlet`, active values from `init`.
    pub fn with_dirichlet(grid: &Grid4, dirichlet: &dyn Field, init: &dyn Field) -> Self {
        let values = (0..grid.total_nodes())
            .into_par_iter()
            .map(|lin| {
                let x = grid.coords(lin);
                match grid.class[lin] {
                    NodeClass::Unused => f64::NAN,
                    NodeClass::Dirichlet => dirichlet.value(&x),
                    NodeClass::Active => init.value(&x),
                }
            })
            .collect();
        GridField { values }
    }

    pub fn active_values(&self, grid: &Grid4) -> Vec<f64> {
        grid.active.iter().map(|&l| self.values[l]).collect()
    }

    pub fn set_active(&mut self, grid: &Grid4, v: &[f64]) {
        for (&lin, &x) in grid.active.iter().zip(v) {
            self.values[lin] = x;
        }
    }

    /// Quadrilinear interpolation; every corner must be a used node.
    pub fn interpolate(&self, grid: &Grid4, x: &[f64]) -> Result<f64> {
        let n = grid.half_nodes as f64;
        let mut base = [0usize; DIM];
        let mut frac = [0.0; DIM];
        for a in 0..DIM {
            let g = x[a] / grid.h + n;
            let f = g.floor();
            if f < 0.0 || f + 1.0 >= grid.side() as f64 {
                return Err(Error::invalid("interpolation point outside the grid"));
            }
            base[a] = f as usize;
            frac[a] = g - f;
        }
        let mut acc = 0.0;
        for corner in 0..16usize {
            let mut idx = base;
            let mut w = 1.0;
            for a in 0..DIM {
                if corner >> a & 1 == 1 {
                    idx[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w == 0.0 {
                continue;
            }
            let lin = grid.linear(idx);
            if grid.class[lin] == NodeClass::Unused {
                return Err(Error::invalid("interpolation stencil touches an unused node"));
            }
            acc += w * self.values[lin];
        }
        Ok(acc)
    }
}

/// Entries `(a, d, c)` of `[[a, c], [c̄, d]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Herm2 {
    pub a: f64,
    pub d: f64,
    pub c: Complex64,
}

impl Herm2 {
    pub fn to_matrix(self) -> HermitianMatrix {
        let m = [[Complex64::new(self.a, 0.0), self.c], [self.c.conj(), Complex64::new(self.d, 0.0)]];
        HermitianMatrix::from_upper(2, |i, j| m[i][j])
    }

    pub fn from_matrix(m: &HermitianMatrix) -> Self {
        Herm2 {
            a: m.get(0, 0).re,
            d: m.get(1, 1).re,
            c: m.get(0, 1),
        }
    }

    pub fn trace(self) -> f64 {
        self.a + self.d
    }

    pub fn det(self) -> f64 {
        self.a * self.d - self.c.norm_sqr()
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(self) -> (f64, f64) {
        let m = 0.5 * (self.a + self.d);
        let r = (0.25 * (self.a - self.d).powi(2) + self.c.norm_sqr()).sqrt();
        (m - r, m + r)
    }

    /// The adjugate `[[d, −c], [−c̄, a]]`.
    fn adjugate(self) -> Herm2 {
        Herm2 { a: self.d, d: self.a, c: -self.c }
    }

    fn scale(self, t: f64) -> Herm2 {
        Herm2 { a: t * self.a, d: t * self.d, c: self.c * t }
    }
}

fn complex_hessian_at(grid: &Grid4, values: &[f64], lin: usize) -> Result<Herm2> {
    let h2 = grid.h * grid.h;
    let get = |o: [i64; DIM]| -> Result<f64> {
        let nb = grid
            .offset(lin, &o)
            .ok_or_else(|| Error::GridConstruction("stencil leaves the grid".into()))?;
        if grid.class[nb] == NodeClass::Unused {
            return Err(Error::GridConstruction(format!(
                "stencil of node {:?} touches an unused node",
                grid.coords(lin)
            )));
        }
        Ok(values[nb])
    };
    let u0 = values[lin];
    let mut second = [0.0; DIM];
    for (a, s) in second.iter_mut().enumerate() {
        let mut p = [0; DIM];
        let mut m = [0; DIM];
        p[a] = 1;
        m[a] = -1;
        *s = (get(p)? - 2.0 * u0 + get(m)?) / h2;
    }
    let mixed = |a: usize, b: usize| -> Result<f64> {
        let at = |sa: i64, sb: i64| {
            let mut o = [0; DIM];
            o[a] = sa;
            o[b] = sb;
            get(o)
        };
        Ok((at(1, 1)? - at(1, -1)? - at(-1, 1)? + at(-1, -1)?) / (4.0 * h2))
    };
    // Coordinates (x1, y1, x2, y2).
    let p = mixed(0, 2)? + mixed(1, 3)?;
    let q = mixed(0, 3)? - mixed(1, 2)?;
    Ok(Herm2 {
        a: 0.25 * (second[0] + second[1]),
        d: 0.25 * (second[2] + second[3]),
        c: Complex64::new(0.25 * p, 0.25 * q),
    })
}

/// Discrete complex Hessian at a node.
pub fn complex_hessian(grid: &Grid4, field: &GridField, lin: usize) -> Result<HermitianMatrix> {
    if grid.class[lin] != NodeClass::Active {
        return Err(Error::invalid("complex Hessian requested at a non-active node"));
    }
    Ok(complex_hessian_at(grid, &field.values, lin)?.to_matrix())
}

/// `F(A) − target` and the gradient `G` with `dF = tr(G dA)`, n = 2.
/// For n = 2, μ = (λ_2, λ_1), so `S_2(μ) = det A` and `S_1(μ) = tr A`.
pub fn operator_2x2(a: Herm2, p: &OperatorParams, eps: f64) -> Result<(f64, Herm2)> {
    let (l0, l1) = a.eigenvalues();
    let mu = vec![l1, l0];
    match (p.k, p.form) {
        (1, _) => {
            let tr = a.trace();
            if !(tr > 0.0) {
                return Err(Error::InadmissiblePoint { mu });
            }
            Ok((tr - eps, Herm2 { a: 1.0, d: 1.0, c: Complex64::new(0.0, 0.0) }))
        }
        (2, form) => {
            let det = a.det();
            if !(l0 > 0.0 && det > 0.0) {
                return Err(Error::InadmissiblePoint { mu });
            }
            let inv = a.adjugate().scale(1.0 / det);
            match form {
                OperatorForm::Log => Ok((det.ln() - eps.ln(), inv)),
                OperatorForm::Root => {
                    let r = det.sqrt();
                    Ok((r - eps.sqrt(), inv.scale(0.5 * r)))
                }
            }
        }
        _ => Err(Error::Unsupported(format!("k = {} with n = 2", p.k))),
    }
}

fn check_params(p: &OperatorParams) -> Result<()> {
    if p.n != 2 {
        return Err(Error::Unsupported(format!("grid solver needs n = 2, got {}", p.n)));
    }
    Ok(())
}

/// Residual at every active node, in active order.
pub fn assemble_residual(grid: &Grid4, field: &GridField, p: &OperatorParams, eps: f64) -> Result<Vec<f64>> {
    check_params(p)?;
    grid.active
        .par_iter()
        .map(|&lin| {
            let a = complex_hessian_at(grid, &field.values, lin)?;
            operator_2x2(a, p, eps).map(|(r, _)| r).map_err(|e| match e {
                Error::InadmissiblePoint { mu } => Error::InadmissiblePoint {
                    mu: mu.into_iter().chain(grid.coords(lin)).collect(),
                },
                other => other,
            })
        })
        .collect()
}

/// Compressed sparse rows with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Csr { n, row_ptr, cols, vals }
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut acc = 0.0;
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[idx] * x[self.cols[idx]];
            }
            *yi = acc;
        });
    }
}

/// ILU(0) factors stored in the sparsity pattern of the matrix.
pub struct Ilu0 {
    lu: Csr,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &Csr) -> Result<Self> {
        let mut lu = a.clone();
        let n = a.n;
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for idx in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.cols[idx] == i {
                    diag[i] = idx;
                }
            }
            if diag[i] == usize::MAX {
                return Err(Error::Numerical(format!("row {i} has no diagonal entry")));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for idx in start..end {
                pos[lu.cols[idx]] = idx;
            }
            for idx in start..end {
                let k = lu.cols[idx];
                if k >= i {
                    break;
                }
                let pivot = lu.vals[diag[k]];
                if pivot == 0.0 {
                    return Err(Error::Numerical(format!("zero pivot in ILU(0) at row {k}")));
                }
                let factor = lu.vals[idx] / pivot;
                lu.vals[idx] = factor;
                for kidx in diag[k] + 1..lu.row_ptr[k + 1] {
                    let j = lu.cols[kidx];
                    let p = pos[j];
                    if p != usize::MAX {
                        lu.vals[p] -= factor * lu.vals[kidx];
                    }
                }
            }
            for idx in start..end {
                pos[lu.cols[idx]] = usize::MAX;
            }
            if lu.vals[diag[i]] == 0.0 {
                return Err(Error::Numerical(format!("zero pivot in ILU(0) at row {i}")));
            }
        }
        Ok(Ilu0 { lu, diag })
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut acc = r[i];
            for idx in lu.row_ptr[i]..self.diag[i] {
                acc -= lu.vals[idx] * z[lu.cols[idx]];
            }
            z[i] = acc;
        }
        for i in (0..lu.n).rev() {
            let mut acc = z[i];
            for idx in self.diag[i] + 1..lu.row_ptr[i + 1] {
                acc -= lu.vals[idx] * z[lu.cols[idx]];
            }
            z[i] = acc / lu.vals[self.diag[i]];
        }
    }
}

const CHUNK: usize = 4096;

/// Dot product with a fixed reduction order (independent of thread count).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearSolveInfo {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// ILU(0)-preconditioned BiCGSTAB to relative residual `tol`.
pub fn bicgstab(a: &Csr, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, LinearSolveInfo)> {
    let n = a.n;
    let pre = Ilu0::new(a)?;
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, LinearSolveInfo { iterations: 0, relative_residual: 0.0 }));
    }
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(Error::Numerical(format!("BiCGSTAB breakdown (rho = {rho_new}) at iteration {it}")));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p.par_iter_mut()
            .zip(&r)
            .zip(&v)
            .for_each(|((pi, ri), vi)| *pi = ri + beta * (*pi - omega * vi));
        pre.apply(&p, &mut phat);
        a.mul(&phat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            return Err(Error::Numerical("BiCGSTAB breakdown (r̂·v = 0)".into()));
        }
        alpha = rho / rv;
        s.par_iter_mut().zip(&r).zip(&v).for_each(|((si, ri), vi)| *si = ri - alpha * vi);
        let snorm = norm2(&s);
        if snorm <= tol * bnorm {
            x.par_iter_mut().zip(&phat).for_each(|(xi, pi)| *xi += alpha * pi);
            return Ok((x, LinearSolveInfo { iterations: it, relative_residual: snorm / bnorm }));
        }
        pre.apply(&s, &mut shat);
        a.mul(&shat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt == 0.0 { 0.0 } else { dot(&t, &s) / tt };
        x.par_iter_mut()
            .zip(&phat)
            .zip(&shat)
            .for_each(|((xi, pi), si)| *xi += alpha * pi + omega * si);
        r.par_iter_mut().zip(&s).zip(&t).for_each(|((ri, si), ti)| *ri = si - omega * ti);
        let rel = norm2(&r) / bnorm;
        if rel <= tol {
            return Ok((x, LinearSolveInfo { iterations: it, relative_residual: rel }));
        }
        if omega == 0.0 {
            return Err(Error::Numerical("BiCGSTAB breakdown (omega = 0)".into()));
        }
        if rel < 0.5 * best {
            best = rel;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > 400 {
                return Err(Error::Numerical(format!("BiCGSTAB stagnated at relative residual {rel:e}")));
            }
        }
    }
    Err(Error::Numerical(format!("BiCGSTAB reached {max_iter} iterations without converging")))
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive
/// definite systems.
pub fn conjugate_gradient(a: &Csr, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, LinearSolveInfo)> {
    let n = a.n;
    let mut dinv = vec![0.0; n];
    for i in 0..n {
        for idx in a.row_ptr[i]..a.row_ptr[i + 1] {
            if a.cols[idx] == i {
                dinv[i] = 1.0 / a.vals[idx];
            }
        }
        if !(dinv[i] > 0.0) {
            return Err(Error::Numerical(format!("CG needs a positive diagonal (row {i})")));
        }
    }
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, LinearSolveInfo { iterations: 0, relative_residual: 0.0 }));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        a.mul(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        x.par_iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.par_iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        let rel = norm2(&r) / bnorm;
        if rel <= tol {
            return Ok((x, LinearSolveInfo { iterations: it, relative_residual: rel }));
        }
        z.par_iter_mut().zip(&r).zip(&dinv).for_each(|((zi, ri), di)| *zi = ri * di);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Err(Error::Numerical(format!("CG reached {max_iter} iterations without converging")))
}

/// Stencil weights of `v ↦ tr(G · i∂∂̄v)` at one node, as (offset, weight).
fn linearized_stencil(g: Herm2, h: f64) -> Vec<([i64; DIM], f64)> {
    let h2 = h * h;
    let mut out = Vec::with_capacity(25);
    let axis = [0.25 * g.a, 0.25 * g.a, 0.25 * g.d, 0.25 * g.d];
    let mut center = 0.0;
    for (a, &c) in axis.iter().enumerate() {
        for s in [-1, 1] {
            let mut o = [0; DIM];
            o[a] = s;
            out.push((o, c / h2));
        }
        center -= 2.0 * c / h2;
    }
    out.push(([0; DIM], center));
    let (re, im) = (g.c.re, g.c.im);
    for (a, b, c) in [(0, 2, 0.5 * re), (1, 3, 0.5 * re), (0, 3, 0.5 * im), (1, 2, -0.5 * im)] {
        if c == 0.0 {
            continue;
        }
        for sa in [-1i64, 1] {
            for sb in [-1i64, 1] {
                let mut o = [0; DIM];
                o[a] = sa;
                o[b] = sb;
                out.push((o, c * (sa * sb) as f64 / (4.0 * h2)));
            }
        }
    }
    out
}

/// Residual and Jacobian (active unknowns only) of the discrete problem.
pub fn assemble_jacobian(grid: &Grid4, field: &GridField, p: &OperatorParams, eps: f64) -> Result<(Vec<f64>, Csr)> {
    check_params(p)?;
    let rows: Vec<(f64, Vec<(usize, f64)>)> = grid
        .active
        .par_iter()
        .map(|&lin| {
            let a = complex_hessian_at(grid, &field.values, lin)?;
            let (r, g) = operator_2x2(a, p, eps)?;
            let row = linearized_stencil(g, grid.h)
                .into_iter()
                .filter_map(|(o, w)| {
                    let nb = grid.offset(lin, &o)?;
                    grid.active_index(nb).map(|c| (c, w))
                })
                .collect();
            Ok((r, row))
        })
        .collect::<Result<Vec<_>>>()?;
    let (res, rows): (Vec<f64>, Vec<_>) = rows.into_iter().unzip();
    Ok((res, Csr::from_rows(rows)))
}

/// A punctured Dirichlet problem on a grid.
#[derive(Clone)]
pub struct GridProblem {
    pub grid: Grid4,
    pub params: OperatorParams,
    pub eps: f64,
    pub dirichlet: Arc<dyn Field>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub converged: bool,
    pub newton_iters: usize,
    pub residual_history: Vec<f64>,
    pub linear: Vec<LinearSolveInfo>,
    pub halvings: Vec<usize>,
    pub all_iterates_admissible: bool,
    pub active_nodes: usize,
    pub final_residual: f64,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Damped Newton on the active values. Steps are halved until every active
/// node stays admissible and the max-norm residual decreases.
pub fn solve_grid(problem: &GridProblem, init: &GridField) -> Result<(GridField, SolveReport)> {
    let grid = &problem.grid;
    let p = &problem.params;
    check_params(p)?;
    if init.values.len() != grid.total_nodes() {
        return Err(Error::invalid("initial field does not match the grid"));
    }
    let mut field = init.clone();
    for lin in 0..grid.total_nodes() {
        if grid.class[lin] == NodeClass::Dirichlet {
            field.values[lin] = problem.dirichlet.value(&grid.coords(lin));
        }
    }
    let mut res = match assemble_residual(grid, &field, p, problem.eps) {
        Ok(r) => r,
        Err(Error::InadmissiblePoint { mu }) => {
            return Err(Error::invalid(format!("initial field is not admissible (mu, x) = {mu:?}")))
        }
        Err(e) => return Err(e),
    };
    let tol = 1e-9 * (1.0 + problem.eps);
    let mut norm = max_abs(&res);
    let mut report = SolveReport {
        converged: false,
        newton_iters: 0,
        residual_history: vec![norm],
        linear: Vec::new(),
        halvings: Vec::new(),
        all_iterates_admissible: true,
        active_nodes: grid.active.len(),
        final_residual: norm,
    };
    while norm > tol {
        if report.newton_iters == MAX_NEWTON {
            return Err(Error::SolverFailure {
                message: format!("no convergence in {MAX_NEWTON} Newton iterations"),
                residual_history: report.residual_history,
            });
        }
        let (r, jac) = assemble_jacobian(grid, &field, p, problem.eps)?;
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let (delta, info) = bicgstab(&jac, &rhs, 1e-12, 20_000)?;
        report.linear.push(info);
        let base = field.active_values(grid);
        let mut lambda = 1.0;
        let mut accepted = None;
        for halving in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = base.iter().zip(&delta).map(|(u, d)| u + lambda * d).collect();
            let mut tf = field.clone();
            tf.set_active(grid, &trial);
            match assemble_residual(grid, &tf, p, problem.eps) {
                Ok(tr) if max_abs(&tr) < norm => {
                    accepted = Some((tf, tr, halving));
                    break;
                }
                Ok(_) | Err(Error::InadmissiblePoint { .. }) => lambda *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((tf, tr, halvings)) = accepted else {
            return Err(Error::SolverFailure {
                message: format!("line search stalled after {MAX_HALVINGS} halvings"),
                residual_history: report.residual_history,
            });
        };
        field = tf;
        res = tr;
        norm = max_abs(&res);
        report.newton_iters += 1;
        report.halvings.push(halvings);
        report.residual_history.push(norm);
    }
    report.converged = true;
    report.final_residual = norm;
    Ok((field, report))
}

/// Discrete `¼Δ` with Dirichlet data folded into the right-hand side:
/// assembled independently of the Newton path, as the SPD system
/// `−¼Δ_h u = −rhs`.
pub fn laplacian_system(grid: &Grid4, dirichlet: &dyn Field, rhs: f64) -> (Csr, Vec<f64>) {
    let h2 = grid.h * grid.h;
    let rows: Vec<(Vec<(usize, f64)>, f64)> = grid
        .active
        .par_iter()
        .map(|&lin| {
            let mut row = vec![(grid.active_of[lin] as usize, 2.0 * DIM as f64 * 0.25 / h2)];
            let mut b = -rhs;
            for a in 0..DIM {
                for s in [-1i64, 1] {
                    let mut o = [0; DIM];
                    o[a] = s;
                    let nb = grid.offset(lin, &o).expect("interior");
                    match grid.active_index(nb) {
                        Some(c) => row.push((c, -0.25 / h2)),
                        None => b += 0.25 / h2 * dirichlet.value(&grid.coords(nb)),
                    }
                }
            }
            (row, b)
        })
        .collect();
    let (rows, b): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    (Csr::from_rows(rows), b)
}

/// Solution of `¼Δ_h u = rhs` with the given Dirichlet data, by CG.
pub fn solve_poisson(grid: &Grid4, dirichlet: &dyn Field, rhs: f64) -> Result<GridField> {
    let (a, b) = laplacian_system(grid, dirichlet, rhs);
    let (x, _) = conjugate_gradient(&a, &b, 1e-14, 100_000)?;
    let mut field = GridField::from_field(grid, dirichlet);
    field.set_active(grid, &x);
    Ok(field)
}

/// CSV of the `(x1, y1, 0, 0)` plane: `x1,y1,x2,y2,value,class`.
pub fn plane_csv(grid: &Grid4, field: &GridField) -> String {
    let mut out = String::from("x1,y1,x2,y2,value,class\n");
    let n = grid.half_nodes;
    for i in 0..grid.side() {
        for j in 0..grid.side() {
            let lin = grid.linear([i, j, n, n]);
            let class = grid.class[lin];
            if class == NodeClass::Unused {
                continue;
            }
            let x = grid.coords(lin);
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
                x[0],
                x[1],
                x[2],
                x[3],
                field.values[lin],
                class as u8
            ));
        }
    }
    out
}

const MAGIC: &[u8; 4] = b"GRD4";
const VERSION: u32 = 1;

/// Compact binary dump: magic, version, side, lower corner, h, run-length
/// encoded node classes, then the values of every used node (all
/// little-endian).
pub fn write_dump(grid: &Grid4, field: &GridField, mut w: impl Write) -> Result<()> {
    let io = |e: std::io::Error| Error::Numerical(format!("write failed: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(grid.side() as u32).to_le_bytes()).map_err(io)?;
    let lower = -(grid.half_nodes as f64) * grid.h;
    for _ in 0..DIM {
        w.write_all(&lower.to_le_bytes()).map_err(io)?;
    }
    w.write_all(&grid.h.to_le_bytes()).map_err(io)?;
    let mut runs: Vec<(u8, u64)> = Vec::new();
    for &c in &grid.class {
        match runs.last_mut() {
            Some((k, len)) if *k == c as u8 => *len += 1,
            _ => runs.push((c as u8, 1)),
        }
    }
    w.write_all(&(runs.len() as u64).to_le_bytes()).map_err(io)?;
    for (k, len) in &runs {
        w.write_all(&[*k]).map_err(io)?;
        w.write_all(&len.to_le_bytes()).map_err(io)?;
    }
    for (lin, &c) in grid.class.iter().enumerate() {
        if c != NodeClass::Unused {
            w.write_all(&field.values[lin].to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

/// Contents of a binary dump.
#[derive(Debug, Clone, PartialEq)]
pub struct Dump {
    pub side: usize,
    pub lower: [f64; DIM],
    pub h: f64,
    pub classes: Vec<NodeClass>,
    /// NaN at unused nodes.
    pub values: Vec<f64>,
}

pub fn read_dump(mut r: impl Read) -> Result<Dump> {
    let io = |e: std::io::Error| Error::Numerical(format!("read failed: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::invalid("not a GRD4 dump"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4).map_err(io)?;
    if u32::from_le_bytes(b4) != VERSION {
        return Err(Error::invalid("unsupported dump version"));
    }
    r.read_exact(&mut b4).map_err(io)?;
    let side = u32::from_le_bytes(b4) as usize;
    let mut lower = [0.0; DIM];
    for v in lower.iter_mut() {
        r.read_exact(&mut b8).map_err(io)?;
        *v = f64::from_le_bytes(b8);
    }
    r.read_exact(&mut b8).map_err(io)?;
    let h = f64::from_le_bytes(b8);
    r.read_exact(&mut b8).map_err(io)?;
    let nruns = u64::from_le_bytes(b8);
    let total = side.pow(DIM as u32);
    let mut classes = Vec::with_capacity(total);
    for _ in 0..nruns {
        let mut k = [0u8; 1];
        r.read_exact(&mut k).map_err(io)?;
        r.read_exact(&mut b8).map_err(io)?;
        let class = NodeClass::from_u8(k[0])?;
        let len = u64::from_le_bytes(b8) as usize;
        if classes.len() + len > total {
            return Err(Error::invalid("mask runs exceed the grid size"));
        }
        classes.extend(std::iter::repeat_n(class, len));
    }
    if classes.len() != total {
        return Err(Error::invalid("mask runs do not cover the grid"));
    }
    let mut values = vec![f64::NAN; total];
    for (lin, c) in classes.iter().enumerate() {
        if *c != NodeClass::Unused {
            r.read_exact(&mut b8).map_err(io)?;
            values[lin] = f64::from_le_bytes(b8);
        }
    }
    Ok(Dump { side, lower, h, classes, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Poly(fn(&[f64]) -> f64);
    impl Field for Poly {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, x: &[f64]) -> f64 {
            (self.0)(x)
        }
        fn gradient(&self, _: &[f64]) -> Vec<f64> {
            unimplemented!()
        }
        fn complex_hessian(&self, _: &[f64]) -> HermitianMatrix {
            unimplemented!()
        }
    }

    fn small_grid() -> Grid4 {
        let d = DomainSpec::centered_ball(2, 0.5).unwrap();
        Grid4::new(&d, 0.125, 0.125).unwrap()
    }

    fn node_near_origin(g: &Grid4) -> usize {
        g.node_at(&[0.25, 0.125, 0.0, 0.125]).unwrap()
    }

    #[test]
    fn classification_invariants() {
        let g = small_grid();
        let offs = stencil_offsets();
        assert_eq!(offs.len(), 25);
        for &lin in g.active_nodes() {
            let x = g.coords(lin);
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(r > 0.125 && r < 0.5);
            for o in &offs {
                let nb = g.offset(lin, o).unwrap();
                assert_ne!(g.class(nb), NodeClass::Unused);
            }
        }
        assert_eq!(g.class(g.node_at(&[0.0; 4]).unwrap()), NodeClass::Dirichlet);
    }

    #[test]
    fn hessian_of_quadratics() {
        let g = small_grid();
        let lin = node_near_origin(&g);
        let f = GridField::from_field(&g, &Poly(|x| x.iter().map(|v| v * v).sum()));
        let h = complex_hessian(&g, &f, lin).unwrap();
        assert!((h.get(0, 0).re - 1.0).abs() < 1e-12 && (h.get(1, 1).re - 1.0).abs() < 1e-12);
        assert!(h.get(0, 1).norm() < 1e-12);

        let f = GridField::from_field(&g, &Poly(|x| x[0] * x[0] - x[1] * x[1]));
        assert!(complex_hessian(&g, &f, lin).unwrap().max_abs_entry() < 1e-12);

        // u = x1 x2: u_{12̄} = 1/4.
        let f = GridField::from_field(&g, &Poly(|x| x[0] * x[2]));
        let h = complex_hessian(&g, &f, lin).unwrap();
        assert!((h.get(0, 1) - Complex64::new(0.25, 0.0)).norm() < 1e-12);
        // u = x1 y2: u_{12̄} = i/4.
        let f = GridField::from_field(&g, &Poly(|x| x[0] * x[3]));
        let h = complex_hessian(&g, &f, lin).unwrap();
        assert!((h.get(0, 1) - Complex64::new(0.0, 0.25)).norm() < 1e-12);
        // u = y1 x2: u_{12̄} = −i/4.
        let f = GridField::from_field(&g, &Poly(|x| x[1] * x[2]));
        let h = complex_hessian(&g, &f, lin).unwrap();
        assert!((h.get(0, 1) - Complex64::new(0.0, -0.25)).norm() < 1e-12);
    }

    #[test]
    fn operator_matches_general_path() {
        use crate::hessian::f_value_and_gradient;
        let a = Herm2 { a: 1.3, d: 0.7, c: Complex64::new(0.2, -0.3) };
        for (k, form) in [(1, OperatorForm::Root), (2, OperatorForm::Root), (2, OperatorForm::Log)] {
            let p = OperatorParams::new(2, k, form, 0.0).unwrap();
            let (v, g) = operator_2x2(a, &p, 1.0).unwrap();
            let (v2, g2) = f_value_and_gradient(&a.to_matrix(), &p).unwrap();
            let shift = if form == OperatorForm::Root { 1.0 } else { 0.0 };
            assert!((v + shift - v2).abs() < 1e-12, "k={k}");
            assert!((g.to_matrix().add_scaled(&g2, -1.0)).max_abs_entry() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let g = small_grid();
        let p = OperatorParams::new(2, 2, OperatorForm::Log, 0.1).unwrap();
        let f = GridField::from_field(&g, &Poly(|x| {
            let s: f64 = x.iter().map(|v| v * v).sum();
            s + 0.3 * x[0] * x[2] + 0.1 * x[1].powi(3)
        }));
        let (r0, jac) = assemble_jacobian(&g, &f, &p, 0.1).unwrap();
        let col = g.active_index(node_near_origin(&g)).unwrap();
        let delta = 1e-6;
        let mut fp = f.clone();
        fp.values[g.active_nodes()[col]] += delta;
        let r1 = assemble_residual(&g, &fp, &p, 0.1).unwrap();
        let mut dense = vec![0.0; jac.n];
        for i in 0..jac.n {
            for idx in jac.row_ptr[i]..jac.row_ptr[i + 1] {
                if jac.cols[idx] == col {
                    dense[i] = jac.vals[idx];
                }
            }
        }
        for i in 0..jac.n {
            let fd = (r1[i] - r0[i]) / delta;
            assert!((fd - dense[i]).abs() <= 1e-4 * (1.0 + dense[i].abs()), "row {i}: {fd} vs {}", dense[i]);
        }
    }

    #[test]
    fn krylov_solvers_agree() {
        let g = small_grid();
        let data = Poly(|x| x[0] + x[3]);
        let (a, b) = laplacian_system(&g, &data, 0.5);
        let (x1, _) = conjugate_gradient(&a, &b, 1e-14, 10_000).unwrap();
        let (x2, _) = bicgstab(&a, &b, 1e-14, 10_000).unwrap();
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-11);
        }
    }

    #[test]
    fn dump_round_trip() {
        let g = small_grid();
        let f = GridField::from_field(&g, &Poly(|x| x[0] - 2.0 * x[3]));
        let mut buf = Vec::new();
        write_dump(&g, &f, &mut buf).unwrap();
        let d = read_dump(buf.as_slice()).unwrap();
        assert_eq!(d.side, g.side());
        assert_eq!(d.classes, g.classes());
        for (a, b) in d.values.iter().zip(&f.values) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
        assert!(read_dump(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn interpolation_is_exact_on_multilinear() {
        let g = small_grid();
        let f = GridField::from_field(&g, &Poly(|x| 1.0 + x[0] - 2.0 * x[1] * x[2] + x[3]));
        let x = [0.2, 0.1, -0.15, 0.05];
        let v = f.interpolate(&g, &x).unwrap();
        assert!((v - (1.0 + 0.2 - 2.0 * 0.1 * -0.15 + 0.05)).abs() < 1e-13);
    }
}
