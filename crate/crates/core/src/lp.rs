//! Exact minimiser of box-constrained weighted L1 objectives
//!
//! ```text
//! minimise   Σ_r w_r |a_rᵀ u + c_r|   subject to   lo ≤ u ≤ hi
//! ```
//!
//! This is the epigraph linear program `min Σ w_r t_r, -t ≤ A u + c ≤ t`
//! solved in the space of `u` alone. Every iterate is a vertex of the
//! hyperplane arrangement formed by the kinks `a_rᵀ u + c_r = 0` and the box
//! faces; `n` of them are active and the columns of the inverse active matrix
//! are the edge directions. Each iteration prices the edges, walks the most
//! improving one through every kink it can cross while the slope stays
//! negative, and swaps one constraint. Optimality is certified by a dual
//! point whose bound matches the objective.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{count, lit, Real};

/// Problem data. `a` is `m × n`; `c` and `w` have length `m`; `lo` and `hi`
/// have length `n`.
#[derive(Debug, Clone)]
pub struct L1Problem<T: Real> {
    pub a: DMatrix<T>,
    pub c: DVector<T>,
    pub w: DVector<T>,
    pub lo: DVector<T>,
    pub hi: DVector<T>,
}

/// Optimal point with its optimality certificate.
#[derive(Debug, Clone)]
pub struct L1Solution<T: Real> {
    pub u: DVector<T>,
    pub objective: T,
    /// Lower bound from the dual point `y`.
    pub dual_bound: T,
    /// Dual point, `|y_r| ≤ w_r`.
    pub y: DVector<T>,
    pub iterations: usize,
    /// Smallest directional derivative along the edges leaving the optimal
    /// vertex.
    pub min_edge_slope: T,
    /// Inactive rows whose residual vanishes at the optimum.
    pub degenerate_rows: usize,
}

impl<T: Real> L1Solution<T> {
    pub fn gap(&self) -> T {
        self.objective - self.dual_bound
    }
}

/// Checks whether `sol` is the only minimiser by re-solving with a small
/// linear tilt `±eps·u_j` added for every coordinate `j`. A non-unique
/// optimum is a face, and some tilt moves the solution along it.
pub fn is_unique_minimizer<T: Real>(p: &L1Problem<T>, sol: &L1Solution<T>, eps: T, tol: T) -> Result<bool> {
    let (m, n) = p.a.shape();
    let offset = lit::<T>(2.0) * (p.lo.amax().max(p.hi.amax()) + T::one());
    for j in 0..n {
        for dir in [T::one(), -T::one()] {
            // |u_j + dir·offset| is affine on the box, equal to dir·u_j + offset
            let mut a = p.a.clone().insert_row(m, T::zero());
            a[(m, j)] = T::one();
            let tilted = L1Problem {
                a,
                c: p.c.clone().push(dir * offset),
                w: p.w.clone().push(eps),
                lo: p.lo.clone(),
                hi: p.hi.clone(),
            };
            let other = solve_l1(&tilted, tol)?;
            if (&other.u - &sol.u).amax() > lit::<T>(1e-7) * (T::one() + sol.u.amax()) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Active {
    Kink(usize),
    Lower(usize),
    Upper(usize),
}

struct Vertex<T: Real> {
    active: Vec<Active>,
    /// Columns are the edge directions, the inverse of the active matrix.
    dirs: DMatrix<T>,
    row_active: Vec<bool>,
    coord_bound: Vec<bool>,
}

impl<T: Real> Vertex<T> {
    fn normal(&self, p: &L1Problem<T>, c: Active) -> DVector<T> {
        let n = p.lo.len();
        match c {
            Active::Kink(r) => p.a.row(r).transpose(),
            Active::Lower(i) | Active::Upper(i) => {
                let mut e = DVector::zeros(n);
                e[i] = T::one();
                e
            }
        }
    }

    fn rhs(&self, p: &L1Problem<T>, c: Active) -> T {
        match c {
            Active::Kink(r) => -p.c[r],
            Active::Lower(i) => p.lo[i],
            Active::Upper(i) => p.hi[i],
        }
    }

    fn point(&self, p: &L1Problem<T>) -> DVector<T> {
        let rhs = DVector::from_iterator(self.active.len(), self.active.iter().map(|c| self.rhs(p, *c)));
        &self.dirs * rhs
    }

    fn refactor(&mut self, p: &L1Problem<T>) -> Result<()> {
        let n = self.active.len();
        let mut nmat = DMatrix::<T>::zeros(n, n);
        for (k, c) in self.active.iter().enumerate() {
            nmat.set_row(k, &self.normal(p, *c).transpose());
        }
        self.dirs = nmat.try_inverse().ok_or_else(|| Error::Lp("active constraint matrix became singular".into()))?;
        Ok(())
    }
}

/// Row-major copy of the constraint matrix that skips the zero prefix and
/// suffix of every row. Condensed control problems are block triangular and
/// the input-penalty rows have a single entry, so this halves the work.
struct Rows<T: Real> {
    n: usize,
    data: Vec<T>,
    span: Vec<(usize, usize)>,
}

impl<T: Real> Rows<T> {
    fn new(a: &DMatrix<T>) -> Self {
        let (m, n) = a.shape();
        let mut data = Vec::with_capacity(m * n);
        let mut span = Vec::with_capacity(m);
        for r in 0..m {
            let first = (0..n).find(|&j| a[(r, j)] != T::zero()).unwrap_or(0);
            let last = (0..n).rev().find(|&j| a[(r, j)] != T::zero()).map_or(0, |j| j + 1);
            span.push((first, last.max(first)));
            for j in 0..n {
                data.push(a[(r, j)]);
            }
        }
        Self { n, data, span }
    }

    #[inline]
    fn dot(&self, r: usize, x: &DVector<T>) -> T {
        let (lo, hi) = self.span[r];
        let row = &self.data[r * self.n + lo..r * self.n + hi];
        row.iter().zip(&x.as_slice()[lo..hi]).fold(T::zero(), |acc, (a, b)| acc + *a * *b)
    }

    /// `A x`
    fn mul(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(self.span.len(), (0..self.span.len()).map(|r| self.dot(r, x)))
    }

    /// `Aᵀ y`
    fn tr_mul(&self, y: &DVector<T>) -> DVector<T> {
        let mut out = DVector::<T>::zeros(self.n);
        for (r, &(lo, hi)) in self.span.iter().enumerate() {
            let yr = y[r];
            if yr == T::zero() {
                continue;
            }
            let row = &self.data[r * self.n + lo..r * self.n + hi];
            for (o, a) in out.as_mut_slice()[lo..hi].iter_mut().zip(row) {
                *o += *a * yr;
            }
        }
        out
    }
}

fn sign<T: Real>(x: T) -> T {
    if x < T::zero() {
        -T::one()
    } else {
        T::one()
    }
}

fn id_of(c: Active, m: usize, n: usize) -> usize {
    match c {
        Active::Kink(r) => r,
        Active::Lower(i) => m + i,
        Active::Upper(i) => m + n + i,
    }
}

/// Solves the problem to relative duality gap `tol`.
pub fn solve_l1<T: Real>(p: &L1Problem<T>, tol: T) -> Result<L1Solution<T>> {
    let (m, n) = p.a.shape();
    if p.c.len() != m || p.w.len() != m || p.lo.len() != n || p.hi.len() != n {
        return Err(Error::Lp("inconsistent problem dimensions".into()));
    }
    if p.a.iter().chain(p.c.iter()).chain(p.w.iter()).chain(p.lo.iter()).chain(p.hi.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Lp("non-finite problem data".into()));
    }
    if p.w.iter().any(|w| *w < T::zero()) {
        return Err(Error::Lp("negative weight".into()));
    }
    if (0..n).any(|i| p.lo[i] > p.hi[i]) {
        return Err(Error::Lp("empty box".into()));
    }

    let eps = T::default_epsilon();
    let a_scale = p.a.amax().max(T::one());
    let c_scale = p.c.amax().max(p.lo.amax()).max(p.hi.amax()).max(T::one());
    let w_scale = p.w.amax().max(T::one());
    let ztol = lit::<T>(1e4) * eps * c_scale * a_scale;
    let opt_tol = lit::<T>(1e3) * eps * w_scale * a_scale * count::<T>(m.max(1));
    let live: Vec<usize> = (0..m).filter(|r| p.w[*r] > T::zero()).collect();
    let rows = Rows::new(&p.a);

    // start from a vertex: unit-normal kinks inside the box where available,
    // lower bounds elsewhere
    let mut active = Vec::with_capacity(n);
    let mut row_active = vec![false; m];
    let mut coord_bound = vec![false; n];
    for i in 0..n {
        let unit = live.iter().copied().find(|&r| {
            !row_active[r] && p.a[(r, i)] == T::one() && (0..n).all(|j| j == i || p.a[(r, j)] == T::zero()) && -p.c[r] >= p.lo[i] && -p.c[r] <= p.hi[i]
        });
        match unit {
            Some(r) => {
                row_active[r] = true;
                active.push(Active::Kink(r));
            }
            None => {
                coord_bound[i] = true;
                active.push(Active::Lower(i));
            }
        }
    }
    let mut v = Vertex { active, dirs: DMatrix::identity(n, n), row_active, coord_bound };

    let mut labels = vec![T::one(); m];
    let max_iter = 50 * (m + n) + 100;
    let mut iterations = 0;
    let mut degenerate_streak = 0;
    let mut bland = false;
    let mut since_refactor = 0;

    // the point and residuals are advanced along each step and recomputed
    // from the active set whenever the inverse is refactored
    let mut u = v.point(p);
    let mut z = rows.mul(&u) + &p.c;
    loop {
        for &r in &live {
            if !v.row_active[r] && z[r].abs() > ztol {
                labels[r] = sign(z[r]);
            }
        }
        let mut ws = DVector::<T>::zeros(m);
        for &r in &live {
            if !v.row_active[r] {
                ws[r] = p.w[r] * labels[r];
            }
        }
        let g = v.dirs.tr_mul(&rows.tr_mul(&ws));

        // pricing
        let mut choice: Option<(usize, T, T, T)> = None; // (k, sigma, slope, score)
        for k in 0..n {
            let (slope, sigma) = match v.active[k] {
                Active::Kink(r) => (p.w[r] - g[k].abs(), -sign(g[k])),
                Active::Lower(_) => (g[k], T::one()),
                Active::Upper(_) => (-g[k], -T::one()),
            };
            if slope >= T::zero() {
                continue;
            }
            let score = slope / v.dirs.column(k).norm();
            if score < -opt_tol {
                let better = match choice {
                    None => true,
                    Some((kb, _, _, sb)) => {
                        if bland {
                            id_of(v.active[k], m, n) < id_of(v.active[kb], m, n)
                        } else {
                            score < sb
                        }
                    }
                };
                if better {
                    choice = Some((k, sigma, slope, score));
                }
            }
        }
        let Some((k, sigma, slope, _)) = choice else { break };

        iterations += 1;
        if iterations > max_iter {
            return Err(Error::Lp(format!("no convergence after {max_iter} pivots")));
        }

        let dir = v.dirs.column(k) * sigma;
        let ad = rows.mul(&dir);
        let dir_norm = dir.amax();

        // kink breakpoints along the edge
        let mut breaks: Vec<(T, usize, T)> = Vec::new();
        for &r in &live {
            if v.row_active[r] {
                continue;
            }
            let rate = ad[r];
            if rate.abs() <= eps * a_scale * dir_norm {
                continue;
            }
            if labels[r] * rate < T::zero() {
                let t = if z[r].abs() > ztol { z[r].abs() / rate.abs() } else { T::zero() };
                breaks.push((t, r, lit::<T>(2.0) * p.w[r] * rate.abs()));
            }
        }
        breaks.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));

        // nearest box face
        let leaving_coord = match v.active[k] {
            Active::Lower(i) | Active::Upper(i) => Some(i),
            Active::Kink(_) => None,
        };
        let mut bound_hit: Option<(T, Active)> = None;
        for i in 0..n {
            if v.coord_bound[i] && leaving_coord != Some(i) {
                continue;
            }
            let di = dir[i];
            let (t, face) = if di > eps * dir_norm {
                ((p.hi[i] - u[i]) / di, Active::Upper(i))
            } else if di < -eps * dir_norm {
                ((p.lo[i] - u[i]) / di, Active::Lower(i))
            } else {
                continue;
            };
            if Some(face) == Some(v.active[k]) {
                continue;
            }
            let t = t.max(T::zero());
            let closer = match bound_hit {
                None => true,
                Some((tb, fb)) => t < tb || (t == tb && id_of(face, m, n) < id_of(fb, m, n)),
            };
            if closer {
                bound_hit = Some((t, face));
            }
        }

        let mut cur = slope;
        let mut crossed = Vec::new();
        let mut entering: Option<(T, Active)> = None;
        for &(t, r, gain) in &breaks {
            if let Some((tb, _)) = bound_hit {
                if t > tb {
                    break;
                }
            }
            cur += gain;
            if cur >= T::zero() {
                entering = Some((t, Active::Kink(r)));
                break;
            }
            crossed.push(r);
        }
        let (step, enter) = match entering.or(bound_hit) {
            Some(e) => e,
            None => return Err(Error::Lp("objective unbounded along an edge".into())),
        };
        for r in crossed {
            labels[r] = -labels[r];
        }

        if step <= ztol {
            degenerate_streak += 1;
            if degenerate_streak > 2 * n {
                bland = true;
            }
        } else {
            degenerate_streak = 0;
            bland = false;
        }

        // swap constraint k for the entering one
        let normal = v.normal(p, enter);
        let alpha = normal.dot(&v.dirs.column(k));
        if alpha.abs() <= eps {
            return Err(Error::Lp("degenerate pivot".into()));
        }
        let pivot_col = v.dirs.column(k) / alpha;
        let factors = v.dirs.tr_mul(&normal);
        for j in 0..n {
            if j != k && factors[j] != T::zero() {
                v.dirs.column_mut(j).axpy(-factors[j], &pivot_col, T::one());
            }
        }
        v.dirs.set_column(k, &pivot_col);

        match v.active[k] {
            Active::Kink(r) => {
                v.row_active[r] = false;
                labels[r] = sigma;
            }
            Active::Lower(i) | Active::Upper(i) => v.coord_bound[i] = false,
        }
        match enter {
            Active::Kink(r) => v.row_active[r] = true,
            Active::Lower(i) | Active::Upper(i) => v.coord_bound[i] = true,
        }
        v.active[k] = enter;

        u.axpy(step, &dir, T::one());
        z.axpy(step, &ad, T::one());
        since_refactor += 1;
        if since_refactor >= 64 {
            v.refactor(p)?;
            since_refactor = 0;
            u = v.point(p);
            z = rows.mul(&u) + &p.c;
        }
    }

    // certificate
    if since_refactor > 0 {
        v.refactor(p)?;
        u = v.point(p);
    }
    for (i, x) in u.iter_mut().enumerate() {
        *x = x.max(p.lo[i]).min(p.hi[i]);
    }
    let z = rows.mul(&u) + &p.c;
    let mut y = DVector::<T>::zeros(m);
    let mut degenerate_rows = 0;
    for &r in &live {
        if !v.row_active[r] {
            if z[r].abs() > ztol {
                labels[r] = sign(z[r]);
            } else {
                degenerate_rows += 1;
            }
            y[r] = p.w[r] * labels[r];
        }
    }
    let g = v.dirs.tr_mul(&rows.tr_mul(&y));
    let mut min_edge_slope = T::max_value().unwrap();
    for k in 0..n {
        let slope = match v.active[k] {
            Active::Kink(r) => {
                y[r] = (-g[k]).max(-p.w[r]).min(p.w[r]);
                p.w[r] - g[k].abs()
            }
            Active::Lower(_) => g[k],
            Active::Upper(_) => -g[k],
        };
        min_edge_slope = min_edge_slope.min(slope);
    }
    let objective = live.iter().fold(T::zero(), |acc, &r| acc + p.w[r] * z[r].abs());
    let q = rows.tr_mul(&y);
    let mut dual_bound = y.dot(&p.c);
    for i in 0..n {
        dual_bound += (q[i] * p.lo[i]).min(q[i] * p.hi[i]);
    }
    let sol = L1Solution { u, objective, dual_bound, y, iterations, min_edge_slope, degenerate_rows };
    if sol.gap() > tol * (T::one() + objective.abs()) {
        return Err(Error::Lp(format!("duality gap {} above tolerance", sol.gap())));
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn objective(p: &L1Problem<f64>, u: &DVector<f64>) -> f64 {
        let z = &p.a * u + &p.c;
        z.iter().zip(p.w.iter()).map(|(z, w)| w * z.abs()).sum()
    }

    fn boxed(a: DMatrix<f64>, c: Vec<f64>, w: Vec<f64>, bound: f64) -> L1Problem<f64> {
        let n = a.ncols();
        L1Problem { a, c: DVector::from_vec(c), w: DVector::from_vec(w), lo: DVector::from_element(n, -bound), hi: DVector::from_element(n, bound) }
    }

    #[test]
    fn one_dimensional_median() {
        // Σ |u - x_i| is minimised at the median
        let xs = [3.0, -1.0, 0.5, 2.0, 7.0];
        let a = DMatrix::from_element(5, 1, 1.0);
        let p = boxed(a, xs.iter().map(|x| -x).collect(), vec![1.0; 5], 10.0);
        let s = solve_l1(&p, 1e-9).unwrap();
        assert!((s.u[0] - 2.0).abs() < 1e-12);
        assert!(s.gap().abs() < 1e-9);
    }

    #[test]
    fn box_limits_the_solution() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let p = boxed(a, vec![-8.0], vec![1.0], 5.0);
        let s = solve_l1(&p, 1e-9).unwrap();
        assert_eq!(s.u[0], 5.0);
        assert!((s.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_are_ignored() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let p = boxed(a, vec![-1.0, -4.0], vec![1.0, 0.0], 5.0);
        let s = solve_l1(&p, 1e-9).unwrap();
        assert!((s.u[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let mut p = boxed(a, vec![0.0], vec![-1.0], 1.0);
        assert!(solve_l1(&p, 1e-9).is_err());
        p.w[0] = 1.0;
        p.lo[0] = 2.0;
        assert!(solve_l1(&p, 1e-9).is_err());
    }

    /// Dense grid oracle for two-variable problems.
    fn grid_min(p: &L1Problem<f64>, steps: usize) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=steps {
                let u0 = p.lo[0] + (p.hi[0] - p.lo[0]) * i as f64 / steps as f64;
                let u1 = p.lo[1] + (p.hi[1] - p.lo[1]) * j as f64 / steps as f64;
                best = best.min(objective(p, &DVector::from_vec(vec![u0, u1])));
            }
        }
        best
    }

    #[test]
    fn two_variable_against_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let m = rng.random_range(1..6);
            let a = DMatrix::from_fn(m, 2, |_, _| rng.random_range(-2.0..2.0));
            let c = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
            let w = (0..m).map(|_| rng.random_range(0.1..2.0)).collect();
            let p = boxed(a, c, w, 2.0);
            let s = solve_l1(&p, 1e-9).unwrap();
            let g = grid_min(&p, 800);
            assert!(s.objective <= g + 1e-9, "{} > {}", s.objective, g);
            // grid spacing 0.005 bounds the oracle's own error
            assert!(s.objective >= g - 0.005 * 2.0 * p.a.abs().row_sum().amax() * 2.0);
        }
    }

    proptest! {
        #[test]
        fn certificate_holds_and_beats_random_points(
            seed in any::<u64>(), m in 1usize..40, n in 1usize..10,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let c: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
            let w: Vec<f64> = (0..m).map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..3.0) }).collect();
            let p = boxed(a, c, w, rng.random_range(0.5..5.0));
            let s = solve_l1(&p, 1e-9).unwrap();
            prop_assert!(s.gap() <= 1e-9 * (1.0 + s.objective.abs()));
            prop_assert!((objective(&p, &s.u) - s.objective).abs() < 1e-9 * (1.0 + s.objective));
            for i in 0..n {
                prop_assert!(s.u[i] >= p.lo[i] && s.u[i] <= p.hi[i]);
            }
            for r in 0..m {
                prop_assert!(s.y[r].abs() <= p.w[r] + 1e-12);
            }
            for _ in 0..200 {
                let x = DVector::from_fn(n, |i, _| rng.random_range(p.lo[i]..=p.hi[i]));
                prop_assert!(objective(&p, &x) >= s.objective - 1e-9);
            }
        }

        #[test]
        fn degenerate_integer_data(seed in any::<u64>(), m in 1usize..30, n in 1usize..6) {
            // small integer data produces many coincident kinks
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-2i32..=2) as f64);
            let c: Vec<f64> = (0..m).map(|_| rng.random_range(-2i32..=2) as f64).collect();
            let w: Vec<f64> = (0..m).map(|_| rng.random_range(0i32..=2) as f64).collect();
            let p = boxed(a, c, w, 2.0);
            let s = solve_l1(&p, 1e-9).unwrap();
            prop_assert!(s.gap() <= 1e-9 * (1.0 + s.objective.abs()));
        }
    }

    #[test]
    fn uniqueness_check() {
        // Σ |u - x_i| over an even sample is flat between the middle two
        let a = DMatrix::from_element(4, 1, 1.0);
        let p = boxed(a.clone(), vec![-1.0, -2.0, -3.0, -4.0], vec![1.0; 4], 10.0);
        let s = solve_l1(&p, 1e-9).unwrap();
        assert!(!is_unique_minimizer(&p, &s, 1e-6, 1e-9).unwrap());
        let p = boxed(DMatrix::from_element(3, 1, 1.0), vec![-1.0, -2.0, -3.0], vec![1.0; 3], 10.0);
        let s = solve_l1(&p, 1e-9).unwrap();
        assert!(is_unique_minimizer(&p, &s, 1e-6, 1e-9).unwrap());
    }

    #[test]
    fn single_precision() {
        let a = DMatrix::<f32>::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 1.0, 0.7, 0.7]);
        let p = L1Problem { a, c: DVector::from_vec(vec![1.0, -2.0, 0.5]), w: DVector::from_vec(vec![1.0, 2.0, 0.5]), lo: DVector::from_element(2, -5.0), hi: DVector::from_element(2, 5.0) };
        let s = solve_l1(&p, 1e-4).unwrap();
        assert!(s.gap() <= 1e-4 * (1.0 + s.objective.abs()));
    }
}
