//! Collective spin sector, truncated Fock space and their tensor product.
//!
//! The product basis is boson-major: the flat index of `|n⟩ ⊗ |M⟩_z` is
//! `n * (N + 1) + (M + N/2)`, with `M` ascending inside each boson block.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::sparse::{norm, CsrMatrix, C64, ONE, ZERO};

/// Fully symmetric `S = N/2` sector of `N` spin-1/2 particles.
#[derive(Clone, Debug)]
pub struct SpinSector {
    n_ions: usize,
    pub sz: CsrMatrix,
    pub sp: CsrMatrix,
    pub sm: CsrMatrix,
    pub sx: CsrMatrix,
    pub sy: CsrMatrix,
}

impl SpinSector {
    pub fn new(n_ions: usize) -> Result<Self> {
        if n_ions == 0 {
            return Err(invalid("spin sector needs at least one ion"));
        }
        let dim = n_ions + 1;
        let s = n_ions as f64 / 2.0;
        let m_of = |i: usize| i as f64 - s;

        let sz = CsrMatrix::from_diagonal(&(0..dim).map(m_of).collect::<Vec<_>>());
        let sp = CsrMatrix::from_triplets(
            dim,
            dim,
            (0..dim - 1).map(|i| {
                let m = m_of(i);
                (i + 1, i, C64::new((s * (s + 1.0) - m * (m + 1.0)).sqrt(), 0.0))
            }),
        );
        let sm = sp.adjoint();
        // S_x = (S+ + S-)/2, S_y = (S+ - S-)/(2i)
        let sx = sp.add_scaled(ONE, &sm)?.scale(C64::new(0.5, 0.0));
        let sy = sp.add_scaled(-ONE, &sm)?.scale(C64::new(0.0, -0.5));
        Ok(Self {
            n_ions,
            sz,
            sp,
            sm,
            sx,
            sy,
        })
    }

    pub fn n_ions(&self) -> usize {
        self.n_ions
    }

    pub fn dim(&self) -> usize {
        self.n_ions + 1
    }

    /// Total spin `S = N/2`.
    pub fn spin(&self) -> f64 {
        self.n_ions as f64 / 2.0
    }

    /// Projections `M`, ascending.
    pub fn m_values(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| i as f64 - self.spin()).collect()
    }

    /// Index of projection `m` in the ascending basis.
    pub fn m_index(&self, m: f64) -> Result<usize> {
        let k = m + self.spin();
        if !k.is_finite() || (k - k.round()).abs() > 1e-9 || k.round() < 0.0 || k.round() > self.n_ions as f64 {
            return Err(invalid(format!(
                "projection M = {m} is not in {{-{s}, ..., {s}}}",
                s = self.spin()
            )));
        }
        Ok(k.round() as usize)
    }

    /// Eigenvectors of `S_x` as columns, ordered by ascending eigenvalue,
    /// each with its first amplitude made positive.
    pub fn x_eigenbasis(&self) -> DMatrix<f64> {
        let eig = SymmetricEigen::new(self.sx.to_dense_real());
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut basis = DMatrix::zeros(self.dim(), self.dim());
        for (col, &k) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(k).into_owned();
            let scale = v.amax();
            let lead = v.iter().copied().find(|x| x.abs() > 1e-12 * scale).unwrap_or(1.0);
            if lead < 0.0 {
                v.neg_mut();
            }
            basis.set_column(col, &v);
        }
        basis
    }
}

/// Truncated single-mode Fock space `|0⟩, ..., |n_max⟩`.
#[derive(Clone, Debug)]
pub struct FockSpace {
    n_max: usize,
    pub a: CsrMatrix,
    pub adag: CsrMatrix,
    pub number: CsrMatrix,
}

impl FockSpace {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max == 0 {
            return Err(invalid("Fock truncation n_max must be at least 1"));
        }
        let dim = n_max + 1;
        let a = CsrMatrix::from_triplets(dim, dim, (1..dim).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0))));
        let adag = a.adjoint();
        let number = CsrMatrix::from_diagonal(&(0..dim).map(|n| n as f64).collect::<Vec<_>>());
        Ok(Self { n_max, a, adag, number })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.n_max + 1
    }

    /// Position quadrature `a + a†`.
    pub fn quadrature(&self) -> CsrMatrix {
        self.a.add_scaled(ONE, &self.adag).expect("same shape")
    }
}

/// Tensor product of the boson mode and the collective spin.
#[derive(Clone, Debug)]
pub struct ProductSpace {
    pub spin: SpinSector,
    pub fock: FockSpace,
}

impl ProductSpace {
    pub fn new(n_ions: usize, n_max: usize) -> Result<Self> {
        Ok(Self {
            spin: SpinSector::new(n_ions)?,
            fock: FockSpace::new(n_max)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.spin.dim() * self.fock.dim()
    }

    pub fn n_ions(&self) -> usize {
        self.spin.n_ions()
    }

    pub fn n_max(&self) -> usize {
        self.fock.n_max()
    }

    /// Flat index of `|n⟩ ⊗ |M⟩` where `m_index = M + N/2`.
    pub fn index(&self, n: usize, m_index: usize) -> usize {
        debug_assert!(n < self.fock.dim() && m_index < self.spin.dim());
        n * self.spin.dim() + m_index
    }

    /// Inverse of [`ProductSpace::index`].
    pub fn label(&self, k: usize) -> (usize, usize) {
        (k / self.spin.dim(), k % self.spin.dim())
    }

    /// Lifts a spin operator to `I ⊗ op`.
    pub fn embed_spin(&self, op: &CsrMatrix) -> Result<CsrMatrix> {
        check_square(op, self.spin.dim())?;
        Ok(CsrMatrix::identity(self.fock.dim()).kron(op))
    }

    /// Lifts a boson operator to `op ⊗ I`.
    pub fn embed_boson(&self, op: &CsrMatrix) -> Result<CsrMatrix> {
        check_square(op, self.fock.dim())?;
        Ok(op.kron(&CsrMatrix::identity(self.spin.dim())))
    }

    /// `boson ⊗ spin` for operators on each factor.
    pub fn embed_pair(&self, boson: &CsrMatrix, spin: &CsrMatrix) -> Result<CsrMatrix> {
        check_square(boson, self.fock.dim())?;
        check_square(spin, self.spin.dim())?;
        Ok(boson.kron(spin))
    }

    /// Product state `|boson⟩ ⊗ |spin⟩`.
    pub fn product_state(&self, boson: &[C64], spin: &[C64]) -> Result<StateVector> {
        if boson.len() != self.fock.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.fock.dim(),
                found: boson.len(),
            });
        }
        if spin.len() != self.spin.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.spin.dim(),
                found: spin.len(),
            });
        }
        let amps = boson.iter().flat_map(|b| spin.iter().map(move |s| b * s)).collect();
        Ok(StateVector::new(amps))
    }

    /// `|n⟩ ⊗ |M⟩_z` basis ket.
    pub fn basis_state(&self, n: usize, m_index: usize) -> StateVector {
        let mut amps = vec![ZERO; self.dim()];
        amps[self.index(n, m_index)] = ONE;
        StateVector::new(amps)
    }
}

fn check_square(op: &CsrMatrix, dim: usize) -> Result<()> {
    if op.nrows() != dim || op.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: op.nrows(),
        });
    }
    Ok(())
}

/// Pure state amplitudes on a [`ProductSpace`] (or on one factor).
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub amps: Vec<C64>,
}

impl StateVector {
    pub fn new(amps: Vec<C64>) -> Self {
        Self { amps }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amps)
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.amps
    }
}

/// Spin factor `|M_x⟩_x` expressed in the `S_z` basis.
///
/// The global phase makes the first nonzero amplitude real and positive.
pub fn spin_x_eigenstate(spin: &SpinSector, m_x: f64) -> Result<Vec<C64>> {
    let col = spin.m_index(m_x)?;
    let basis = spin.x_eigenbasis();
    Ok(basis.column(col).iter().map(|&x| C64::new(x, 0.0)).collect())
}

/// Accumulated truncated weight above which boson states are rejected.
pub const LEAKAGE_TOL: f64 = 1e-8;

/// Displaced Fock state `D(α)|n⟩` on the truncated Fock space, renormalized
/// after truncation.
///
/// Uses `D(α)|n⟩ = (a† - α*)^n D(α)|0⟩ / √n!`. The operator `a† - α*` never
/// lowers the photon number, so amplitudes up to `n_max` are exact; only the
/// weight above the cut is lost, and that loss is the leakage.
pub fn displaced_fock_state(fock: &FockSpace, alpha: C64, n: usize) -> Result<Vec<C64>> {
    let dim = fock.dim();
    if n > fock.n_max() {
        return Err(Error::Truncation {
            leakage: 1.0,
            threshold: LEAKAGE_TOL,
            n_max: fock.n_max(),
        });
    }
    let mut v = vec![ZERO; dim];
    v[0] = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for m in 1..dim {
        v[m] = v[m - 1] * alpha / (m as f64).sqrt();
    }
    let shift = alpha.conj();
    for k in 1..=n {
        let mut next = vec![ZERO; dim];
        for m in 0..dim {
            next[m] -= shift * v[m];
            if m + 1 < dim {
                next[m + 1] += ((m + 1) as f64).sqrt() * v[m];
            }
        }
        let inv = 1.0 / (k as f64).sqrt();
        v = next.into_iter().map(|x| x * inv).collect();
    }
    let kept = v.iter().map(|x| x.norm_sqr()).sum::<f64>();
    let leakage = (1.0 - kept).max(0.0);
    if leakage > LEAKAGE_TOL {
        return Err(Error::Truncation {
            leakage,
            threshold: LEAKAGE_TOL,
            n_max: fock.n_max(),
        });
    }
    let s = kept.sqrt();
    v.iter_mut().for_each(|x| *x /= s);
    Ok(v)
}

/// Fock state `|n⟩`.
pub fn fock_state(fock: &FockSpace, n: usize) -> Result<Vec<C64>> {
    if n > fock.n_max() {
        return Err(invalid(format!(
            "Fock state |{n}⟩ exceeds truncation n_max = {}",
            fock.n_max()
        )));
    }
    let mut v = vec![ZERO; fock.dim()];
    v[n] = ONE;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::inner;

    #[test]
    fn single_spin_matrices() {
        let s = SpinSector::new(1).unwrap();
        assert_eq!(s.sz.get(0, 0).re, -0.5);
        assert_eq!(s.sz.get(1, 1).re, 0.5);
        // S+|-1/2⟩ = |+1/2⟩
        assert_eq!(s.sp.get(1, 0), ONE);
        assert_eq!(s.sp.nnz(), 1);
    }

    #[test]
    fn ladder_elements_follow_formula() {
        let s = SpinSector::new(4).unwrap();
        let j: f64 = 2.0;
        for i in 0..4 {
            let m = i as f64 - j;
            let expect = (j * (j + 1.0) - m * (m + 1.0)).sqrt();
            assert!((s.sp.get(i + 1, i).re - expect).abs() < 1e-15);
        }
        let largest = (0..4).map(|i| s.sp.get(i + 1, i).re).fold(0.0, f64::max);
        assert!((largest - 6f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_ions_rejected() {
        assert!(SpinSector::new(0).is_err());
        assert!(FockSpace::new(0).is_err());
    }

    #[test]
    fn fock_operators() {
        let f = FockSpace::new(2).unwrap();
        assert_eq!(f.a.nnz(), 2);
        assert_eq!(f.a.get(0, 1), ONE);
        assert!((f.a.get(1, 2).re - 2f64.sqrt()).abs() < 1e-15);
        for n in 0..3 {
            assert_eq!(f.number.get(n, n).re, n as f64);
        }
    }

    #[test]
    fn truncated_commutator_defect_is_confined() {
        let n_max = 50;
        let f = FockSpace::new(n_max).unwrap();
        let c = CsrMatrix::commutator(&f.a, &f.adag).unwrap();
        let defect = c.add_scaled(-ONE, &CsrMatrix::identity(n_max + 1)).unwrap();
        for (i, j, v) in defect.iter() {
            if v.norm() > 1e-12 {
                assert_eq!((i, j), (n_max, n_max));
                assert!((v.re + (n_max as f64 + 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn index_map_round_trips() {
        let space = ProductSpace::new(5, 7).unwrap();
        for k in 0..space.dim() {
            let (n, m) = space.label(k);
            assert_eq!(space.index(n, m), k);
        }
        assert_eq!(space.index(3, 0), 18);
    }

    #[test]
    fn embed_rejects_wrong_dimension() {
        let space = ProductSpace::new(2, 3).unwrap();
        assert!(space.embed_spin(&CsrMatrix::identity(4)).is_err());
        assert!(space.embed_boson(&CsrMatrix::identity(3)).is_err());
    }

    #[test]
    fn embedded_diagonal_actions() {
        let n_ions = 4;
        let space = ProductSpace::new(n_ions, 5).unwrap();
        let sz = space.embed_spin(&space.spin.sz).unwrap();
        let num = space.embed_boson(&space.fock.number).unwrap();
        let ket = space.basis_state(3, 0);
        let out = sz.mul_vec(ket.as_slice());
        let k = space.index(3, 0);
        assert!((out[k].re + n_ions as f64 / 2.0).abs() < 1e-15);
        let out = num.mul_vec(ket.as_slice());
        assert!((out[k].re - 3.0).abs() < 1e-15);
    }

    #[test]
    fn x_eigenstate_single_spin() {
        let s = SpinSector::new(1).unwrap();
        let v = spin_x_eigenstate(&s, -0.5).unwrap();
        let r = 0.5f64.sqrt();
        assert!((v[0].re - r).abs() < 1e-12);
        assert!((v[1].re + r).abs() < 1e-12);
    }

    #[test]
    fn x_eigenstate_out_of_range() {
        let s = SpinSector::new(4).unwrap();
        assert!(spin_x_eigenstate(&s, 2.5).is_err());
        assert!(spin_x_eigenstate(&s, 0.5).is_err());
    }

    #[test]
    fn x_eigenstates_are_eigenvectors() {
        for n_ions in [1, 2, 5, 20, 69] {
            let s = SpinSector::new(n_ions).unwrap();
            for m in s.m_values() {
                let v = spin_x_eigenstate(&s, m).unwrap();
                let sv = s.sx.mul_vec(&v);
                let err = sv.iter().zip(&v).map(|(a, b)| (a - b * m).norm()).fold(0.0, f64::max);
                assert!(err < 1e-9, "N={n_ions} M={m} err={err}");
                assert!((norm(&v) - 1.0).abs() < 1e-12);
                assert!((inner(&v, &sv).re - m).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fock_displacement_identity() {
        let f = FockSpace::new(10).unwrap();
        let v = displaced_fock_state(&f, ZERO, 2).unwrap();
        assert_eq!(v[2], ONE);
        assert!(v.iter().enumerate().all(|(i, x)| i == 2 || *x == ZERO));
    }

    #[test]
    fn coherent_state_mean_occupation() {
        let f = FockSpace::new(60).unwrap();
        let v = displaced_fock_state(&f, C64::new(2.0, 0.0), 0).unwrap();
        let mean = f.number.expectation(&v).re;
        assert!((mean - 4.0).abs() < 1e-10);
        // amplitudes follow e^{-|α|²/2} αⁿ/√n!
        let mut fact = 1.0;
        for (n, amp) in v.iter().enumerate().take(10) {
            if n > 0 {
                fact *= n as f64;
            }
            let expect = (-2.0f64).exp() * 2f64.powi(n as i32) / fact.sqrt();
            assert!((amp.re - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn displaced_state_truncation_error() {
        let f = FockSpace::new(10).unwrap();
        assert!(matches!(
            displaced_fock_state(&f, C64::new(3.0, 0.0), 0),
            Err(Error::Truncation { .. })
        ));
    }
}
