//! Angular-momentum matrices, extended Stevens operators, Kronecker embedding
//! and a Hermitian eigensolver with a fixed phase convention.
//!
//! Basis ordering is `|m_1> ⊗ |m_2> ⊗ ...` with `m` running from `+J` down to
//! `-J` inside each factor and the first spin varying slowest.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Number of states `2J+1`, rejecting anything that is not a positive half-integer.
pub fn multiplicity(j: f64) -> Result<usize> {
    let two_j = 2.0 * j;
    if !(j > 0.0) || (two_j - two_j.round()).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "spin magnitude {j} is not a positive half-integer"
        )));
    }
    Ok(two_j.round() as usize + 1)
}

/// The ordered list of spins making up a composite Hilbert space.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinSystem {
    pub spins: Vec<f64>,
    pub dims: Vec<usize>,
    pub total_dim: usize,
}

impl SpinSystem {
    pub fn new(spins: &[f64]) -> Result<Self> {
        if spins.is_empty() {
            return Err(Error::InvalidInput("empty spin system".into()));
        }
        let dims = spins.iter().map(|&j| multiplicity(j)).collect::<Result<Vec<_>>>()?;
        let total_dim = dims.iter().product();
        Ok(Self {
            spins: spins.to_vec(),
            dims,
            total_dim,
        })
    }

    /// Electron effective spin-1/2 followed by the I = 9/2 nucleus.
    pub fn electron_nuclear() -> Self {
        Self::new(&[0.5, 4.5]).expect("static spins")
    }

    /// The m-values of one slot, descending.
    pub fn m_values(&self, slot: usize) -> Vec<f64> {
        let j = self.spins[slot];
        (0..self.dims[slot]).map(|k| j - k as f64).collect()
    }
}

/// Cartesian and ladder matrices of one spin.
#[derive(Clone, Debug)]
pub struct SpinOps {
    pub j: f64,
    pub x: CMat,
    pub y: CMat,
    pub z: CMat,
    pub plus: CMat,
    pub minus: CMat,
    pub id: CMat,
}

impl SpinOps {
    pub fn dim(&self) -> usize {
        self.z.nrows()
    }

    /// `[x, y, z]` for index-based loops.
    pub fn xyz(&self) -> [&CMat; 3] {
        [&self.x, &self.y, &self.z]
    }
}

pub fn spin_operators(j: f64) -> Result<SpinOps> {
    let d = multiplicity(j)?;
    let mut z = CMat::zeros(d, d);
    let mut plus = CMat::zeros(d, d);
    for k in 0..d {
        let m = j - k as f64;
        z[(k, k)] = C64::new(m, 0.0);
        // J+|m> lands one row up
        if k > 0 {
            plus[(k - 1, k)] = C64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
        }
    }
    let minus = plus.adjoint();
    let x = (&plus + &minus) * C64::new(0.5, 0.0);
    let y = (&plus - &minus) * C64::new(0.0, -0.5);
    Ok(SpinOps {
        j,
        x,
        y,
        z,
        plus,
        minus,
        id: CMat::identity(d, d),
    })
}

/// Allowed `(k, q)` labels for [`stevens_operator`].
pub fn stevens_supported(k: i32, q: i32) -> bool {
    matches!(k, 2 | 4 | 6) && q.abs() <= k
}

fn real(m: &CMat, s: f64) -> CMat {
    m * C64::new(s, 0.0)
}

fn pow(m: &CMat, n: u32) -> CMat {
    let mut out = CMat::identity(m.nrows(), m.ncols());
    for _ in 0..n {
        out = &out * m;
    }
    out
}

/// Polynomial in `Jz` with real coefficients, lowest order first.
fn jz_poly(ops: &SpinOps, coeffs: &[f64]) -> CMat {
    let d = ops.dim();
    let mut out = CMat::zeros(d, d);
    for k in 0..d {
        let m = ops.z[(k, k)].re;
        let mut v = 0.0;
        for c in coeffs.iter().rev() {
            v = v * m + c;
        }
        out[(k, k)] = C64::new(v, 0.0);
    }
    out
}

/// Coefficients (in powers of `Jz`) of the `A(k,|q|)` factor multiplying
/// `J+^q ± J-^q` in the symmetrized Stevens form. `x = J(J+1)`.
fn stevens_factor(k: i32, q: i32, x: f64) -> Vec<f64> {
    match (k, q) {
        (2, 0) => vec![-x, 0.0, 3.0],
        (2, 1) => vec![0.0, 1.0],
        (2, 2) => vec![1.0],
        (4, 0) => vec![3.0 * x * x - 6.0 * x, 0.0, -(30.0 * x - 25.0), 0.0, 35.0],
        (4, 1) => vec![0.0, -(3.0 * x + 1.0), 0.0, 7.0],
        (4, 2) => vec![-x - 5.0, 0.0, 7.0],
        (4, 3) => vec![0.0, 1.0],
        (4, 4) => vec![1.0],
        (6, 0) => vec![
            -5.0 * x * x * x + 40.0 * x * x - 60.0 * x,
            0.0,
            105.0 * x * x - 525.0 * x + 294.0,
            0.0,
            -(315.0 * x - 735.0),
            0.0,
            231.0,
        ],
        (6, 1) => vec![0.0, 5.0 * x * x - 10.0 * x + 12.0, 0.0, -(30.0 * x - 15.0), 0.0, 33.0],
        (6, 2) => vec![x * x + 10.0 * x + 102.0, 0.0, -(18.0 * x + 123.0), 0.0, 33.0],
        (6, 3) => vec![0.0, -(3.0 * x + 59.0), 0.0, 11.0],
        (6, 4) => vec![-x - 38.0, 0.0, 11.0],
        (6, 5) => vec![0.0, 1.0],
        (6, 6) => vec![1.0],
        _ => unreachable!(),
    }
}

/// Extended Stevens operator `O_k^q(J)`.
///
/// For `q > 0` this is `(A J+^q + J+^q A + h.c.)/4` with the standard `A(Jz)`
/// factor, for `q < 0` the same with `(... - h.c.)/(4i)`. The `q = 0` members are
/// the plain polynomials. `O_k^{±k}` reduce to `(J+^k ± J-^k)/2` (divided by `i`
/// for the minus sign).
pub fn stevens_operator(k: i32, q: i32, j: f64) -> Result<CMat> {
    if !stevens_supported(k, q) {
        return Err(Error::InvalidInput(format!("unsupported Stevens operator O_{k}^{q}")));
    }
    let ops = spin_operators(j)?;
    let x = j * (j + 1.0);
    let a = jz_poly(&ops, &stevens_factor(k, q.abs(), x));
    if q == 0 {
        return Ok(a);
    }
    let n = q.unsigned_abs();
    let jp = pow(&ops.plus, n);
    let jm = pow(&ops.minus, n);
    let sym = |t: &CMat| &a * t + t * &a;
    Ok(if q > 0 {
        real(&(sym(&jp) + sym(&jm)), 0.25)
    } else {
        (sym(&jp) - sym(&jm)) * C64::new(0.0, -0.25)
    })
}

fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Embed a single-slot operator into the composite space.
pub fn embed(op: &CMat, system: &SpinSystem, slot: usize) -> Result<CMat> {
    if slot >= system.dims.len() {
        return Err(Error::InvalidInput(format!(
            "slot {slot} out of range for {} spins",
            system.dims.len()
        )));
    }
    if op.nrows() != system.dims[slot] || op.ncols() != system.dims[slot] {
        return Err(Error::InvalidInput(format!(
            "operator of dimension {} does not fit slot {slot} of multiplicity {}",
            op.nrows(),
            system.dims[slot]
        )));
    }
    let mut out = CMat::from_element(1, 1, ONE);
    for (s, &d) in system.dims.iter().enumerate() {
        out = if s == slot {
            kron(&out, op)
        } else {
            kron(&out, &CMat::identity(d, d))
        };
    }
    Ok(out)
}

/// Largest entry of `|H - H†|` relative to the largest entry of `|H|`.
pub fn hermiticity_defect(h: &CMat) -> f64 {
    let scale = h.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for i in 0..h.nrows() {
        for j in i..h.ncols() {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: DVector<f64>,
    pub vectors: CMat,
}

fn check_square_hermitian(h: &CMat) -> Result<()> {
    if h.nrows() != h.ncols() {
        return Err(Error::InvalidInput("matrix is not square".into()));
    }
    let defect = hermiticity_defect(h);
    if defect > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "matrix is not self-adjoint (relative defect {defect:.3e})"
        )));
    }
    Ok(())
}

fn hermitian_part(h: &CMat) -> CMat {
    (h + h.adjoint()) * C64::new(0.5, 0.0)
}

/// Full eigendecomposition, eigenvalues ascending, each eigenvector scaled so
/// that its largest-magnitude component is real and positive.
pub fn eigh(h: &CMat) -> Result<Eigh> {
    check_square_hermitian(h)?;
    let eig = nalgebra::SymmetricEigen::new(hermitian_part(h));
    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut values = DVector::zeros(n);
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        let mut best = 0;
        let mut best_norm = -1.0;
        for (k, z) in col.iter().enumerate() {
            // ties broken towards the lower index so the choice is deterministic
            if z.norm() > best_norm * (1.0 + 1e-12) {
                best = k;
                best_norm = z.norm();
            }
        }
        let phase = if best_norm > 0.0 {
            col[best].conj() / best_norm
        } else {
            ONE
        };
        for k in 0..n {
            vectors[(k, dst)] = col[k] * phase;
        }
    }
    Ok(Eigh { values, vectors })
}

/// Ascending eigenvalues only.
pub fn eigvalsh(h: &CMat) -> Result<Vec<f64>> {
    check_square_hermitian(h)?;
    let mut v: Vec<f64> = hermitian_part(h).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// `<a|op|b>` for column vectors.
pub fn element(a: &CMat, ia: usize, op: &CMat, b: &CMat, ib: usize) -> C64 {
    let ket = op * b.column(ib);
    let mut s = ZERO;
    for k in 0..ket.len() {
        s += a[(k, ia)].conj() * ket[k];
    }
    s
}

/// `<v|op|v>` real part for a column of `vectors`.
pub fn expectation(vectors: &CMat, i: usize, op: &CMat) -> f64 {
    element(vectors, i, op, vectors, i).re
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn max_abs(m: &CMat) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn spin_half_jz() {
        let s = spin_operators(0.5).unwrap();
        assert_eq!(s.z[(0, 0)].re, 0.5);
        assert_eq!(s.z[(1, 1)].re, -0.5);
    }

    #[test]
    fn ladder_element_nine_halves() {
        let i = spin_operators(4.5).unwrap();
        // <9/2|J+|7/2>
        assert_relative_eq!(i.plus[(0, 1)].re, 3.0, epsilon = 1e-14);
        assert_eq!(i.plus.adjoint(), i.minus);
    }

    #[test]
    fn commutators_and_casimir() {
        for j in [0.5, 4.5, 7.5] {
            let o = spin_operators(j).unwrap();
            let comm = &o.x * &o.y - &o.y * &o.x - &o.z * C64::new(0.0, 1.0);
            assert!(max_abs(&comm) < 1e-12);
            let pm = &o.plus * &o.minus - &o.minus * &o.plus - &o.z * C64::new(2.0, 0.0);
            assert!(max_abs(&pm) < 1e-12);
            let cas = &o.x * &o.x + &o.y * &o.y + &o.z * &o.z - &o.id * C64::new(j * (j + 1.0), 0.0);
            assert!(max_abs(&cas) < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_spin() {
        assert!(spin_operators(0.0).is_err());
        assert!(spin_operators(0.3).is_err());
        assert!(spin_operators(-1.5).is_err());
    }

    #[test]
    fn stevens_o20_top_state() {
        let o = stevens_operator(2, 0, 7.5).unwrap();
        assert_relative_eq!(o[(0, 0)].re, 105.0, epsilon = 1e-12);
        for j in [0.5, 4.5, 7.5] {
            let o = stevens_operator(2, 0, j).unwrap();
            assert!(o.trace().norm() < 1e-10);
        }
    }

    #[test]
    fn stevens_o44_matches_ladder_product() {
        let j = 7.5;
        let s = spin_operators(j).unwrap();
        let p4 = &s.plus * &s.plus * &s.plus * &s.plus;
        let m4 = &s.minus * &s.minus * &s.minus * &s.minus;
        let want = (p4 + m4) * C64::new(0.5, 0.0);
        let got = stevens_operator(4, 4, j).unwrap();
        assert!(max_abs(&(got - want)) < 1e-9);
    }

    #[test]
    fn stevens_hermitian_and_traceless() {
        for k in [2, 4, 6] {
            for q in -k..=k {
                let o = stevens_operator(k, q, 7.5).unwrap();
                assert!(hermiticity_defect(&o) < 1e-12, "O_{k}^{q}");
                let scale = max_abs(&o).max(1.0);
                assert!(o.trace().norm() / scale < 1e-10, "O_{k}^{q} trace");
            }
        }
        assert!(stevens_operator(3, 0, 7.5).is_err());
        assert!(stevens_operator(4, 5, 7.5).is_err());
    }

    #[test]
    fn stevens_o64_explicit() {
        let j = 7.5;
        let s = spin_operators(j).unwrap();
        let x = j * (j + 1.0);
        let a = &s.z * &s.z * C64::new(11.0, 0.0) - &s.id * C64::new(x + 38.0, 0.0);
        let p4 = &s.plus * &s.plus * &s.plus * &s.plus;
        let m4 = &s.minus * &s.minus * &s.minus * &s.minus;
        let t = &p4 + &m4;
        let want = (&a * &t + &t * &a) * C64::new(0.25, 0.0);
        assert!(max_abs(&(stevens_operator(6, 4, j).unwrap() - want)) < 1e-6);
    }

    #[test]
    fn embedding() {
        let sys = SpinSystem::electron_nuclear();
        let s = spin_operators(0.5).unwrap();
        let i = spin_operators(4.5).unwrap();
        let id = embed(&s.id, &sys, 0).unwrap();
        assert_eq!(id, CMat::identity(20, 20));
        let szz = embed(&s.z, &sys, 0).unwrap() * embed(&i.z, &sys, 1).unwrap();
        let ms = sys.m_values(0);
        let mi = sys.m_values(1);
        for a in 0..2 {
            for b in 0..10 {
                let k = a * 10 + b;
                assert_relative_eq!(szz[(k, k)].re, ms[a] * mi[b], epsilon = 1e-15);
            }
        }
        let ex = embed(&s.x, &sys, 0).unwrap();
        let iy = embed(&i.y, &sys, 1).unwrap();
        assert!(max_abs(&(&ex * &iy - &iy * &ex)) < 1e-15);
        assert!(embed(&s.x, &sys, 1).is_err());
        assert!(embed(&s.x, &sys, 2).is_err());
    }

    #[test]
    fn eigh_diagonal_and_two_level() {
        let mut d = CMat::zeros(3, 3);
        d[(0, 0)] = C64::new(3.0, 0.0);
        d[(1, 1)] = C64::new(-1.0, 0.0);
        d[(2, 2)] = C64::new(2.0, 0.0);
        let e = eigh(&d).unwrap();
        assert_eq!(e.values.as_slice(), &[-1.0, 2.0, 3.0]);

        let (a, b) = (0.3, C64::new(0.4, -1.2));
        let m = CMat::from_row_slice(2, 2, &[C64::new(a, 0.0), b, b.conj(), C64::new(-a, 0.0)]);
        let e = eigh(&m).unwrap();
        let r = (a * a + b.norm_sqr()).sqrt();
        assert_relative_eq!(e.values[0], -r, epsilon = 1e-14);
        assert_relative_eq!(e.values[1], r, epsilon = 1e-14);
    }

    #[test]
    fn eigh_rejects_non_hermitian() {
        let m = CMat::from_row_slice(2, 2, &[ONE, ONE, ZERO, ONE]);
        assert!(eigh(&m).is_err());
    }
}
