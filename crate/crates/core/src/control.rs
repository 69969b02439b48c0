//! Riccati-based state-feedback synthesis, H2 norms and controller
//! structure checks.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{
    check_detectable, check_stabilizable, is_hurwitz, matrix_sign, solve_lyapunov, spectral_abscissa,
    symmetric_eig_range, symmetrize, LinalgError,
};
use crate::linear::StateSpace;
use crate::poset::{in_block_incidence_algebra, BlockPartition, Membership, Poset, PosetError};

/// Relative CARE residual accepted by [`solve_care`].
pub const CARE_TOL: f64 = 1e-9;
/// Tolerance of the PBH rank tests.
pub const PBH_TOL: f64 = 1e-8;
const NEWTON_STEPS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("(A, B) is not stabilizable: mode {0} is uncontrollable")]
    NotStabilizable(String),
    #[error("(A, Q) is not detectable: mode {0} is unobservable")]
    NotDetectable(String),
    #[error("Riccati residual {residual:.3e} exceeds tolerance")]
    ResidualTooLarge { residual: f64 },
    #[error("closed loop is not Hurwitz (spectral abscissa {abscissa:.3e})")]
    NotHurwitz { abscissa: f64 },
    #[error("leader is not self-contained: {0}")]
    LeaderNotSelfContained(String),
    #[error("invalid cost: {0}")]
    InvalidCost(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Poset(#[from] PosetError),
}

fn fmt_mode(z: nalgebra::Complex<f64>) -> String {
    format!("{:.4e}{:+.4e}i", z.re, z.im)
}

/// `Q = Qᵀ ⪰ 0`, `R = Rᵀ ≻ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl CostSpec {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, ControlError> {
        let c = CostSpec { q, r };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let sym = |m: &DMatrix<f64>| (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0);
        if !self.q.is_square() || !self.r.is_square() || !sym(&self.q) || !sym(&self.r) {
            return Err(ControlError::InvalidCost("Q and R must be square and symmetric".into()));
        }
        if self.q.nrows() > 0 && symmetric_eig_range(&self.q).0 < -1e-10 {
            return Err(ControlError::InvalidCost("Q is not positive semidefinite".into()));
        }
        if self.r.nrows() > 0 && symmetric_eig_range(&self.r).0 < 1e-10 {
            return Err(ControlError::InvalidCost("R is not positive definite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CareSolution {
    pub x: DMatrix<f64>,
    /// `‖AᵀX + XA − XSX + Q‖ / (‖Q‖ + ‖X‖²‖S‖)` with `S = BR⁻¹Bᵀ`.
    pub residual: f64,
}

fn care_residual(a: &DMatrix<f64>, s: &DMatrix<f64>, q: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let res = a.transpose() * x + x * a - x * s * x + q;
    let scale = q.norm() + x.norm().powi(2) * s.norm();
    if scale == 0.0 {
        res.norm()
    } else {
        res.norm() / scale
    }
}

fn check_dims(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(), ControlError> {
    let (n, m) = (a.nrows(), b.ncols());
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(ControlError::DimensionMismatch(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    Ok(())
}

/// Stabilizing solution of `AᵀX + XA − XBR⁻¹BᵀX + Q = 0`.
///
/// The stable invariant subspace of the Hamiltonian is extracted with the
/// matrix sign function, then polished by Newton–Kleinman steps.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<CareSolution, ControlError> {
    check_dims(a, b, q, r)?;
    CostSpec { q: q.clone(), r: r.clone() }.validate()?;
    let n = a.nrows();
    if n == 0 {
        return Ok(CareSolution { x: DMatrix::zeros(0, 0), residual: 0.0 });
    }
    check_stabilizable(a, b, PBH_TOL).map_err(|l| ControlError::NotStabilizable(fmt_mode(l)))?;
    check_detectable(a, q, PBH_TOL).map_err(|l| ControlError::NotDetectable(fmt_mode(l)))?;

    let rinv = r.clone().cholesky().ok_or(ControlError::InvalidCost("R is not positive definite".into()))?.inverse();
    let s = symmetrize(&(b * &rinv * b.transpose()));

    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let w = matrix_sign(&h)?;
    // (W + I) [I; X] = 0 on the stable subspace
    let eye = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::<f64>::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = DMatrix::<f64>::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));
    let x0 = lhs.svd(true, true).solve(&rhs, 1e-14).map_err(|_| LinalgError::Singular)?;
    let mut x = symmetrize(&x0);
    let mut best = care_residual(a, &s, q, &x);

    // Newton–Kleinman: (A − SX)ᵀ X⁺ + X⁺ (A − SX) = −(Q + XSX)
    for _ in 0..NEWTON_STEPS {
        if best <= 1e-15 {
            break;
        }
        let acl = a - &s * &x;
        if !is_hurwitz(&acl) {
            break;
        }
        let next = match solve_lyapunov(&acl, &(q + &x * &s * &x)) {
            Ok(v) => symmetrize(&v),
            Err(_) => break,
        };
        let res = care_residual(a, &s, q, &next);
        if res >= best * 0.9 {
            if res < best {
                x = next;
                best = res;
            }
            break;
        }
        x = next;
        best = res;
    }
    if !(best <= CARE_TOL) {
        return Err(ControlError::ResidualTooLarge { residual: best });
    }
    let abscissa = spectral_abscissa(&(a - &s * &x));
    if abscissa >= 0.0 {
        return Err(ControlError::NotHurwitz { abscissa });
    }
    Ok(CareSolution { x, residual: best })
}

/// Regulator gain `K = −R⁻¹BᵀX` for `u = Kx`.
pub fn lqr_gain(x: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>, ControlError> {
    if b.ncols() == 0 {
        return Ok(DMatrix::zeros(0, x.nrows()));
    }
    let chol = r.clone().cholesky().ok_or(ControlError::InvalidCost("R is not positive definite".into()))?;
    Ok(-chol.solve(&(b.transpose() * x)))
}

/// `sqrt(trace(Fᵀ X F))` with `A_clᵀ X + X A_cl + C_clᵀ C_cl = 0`.
pub fn h2_norm(a_cl: &DMatrix<f64>, c_cl: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<f64, ControlError> {
    let abscissa = spectral_abscissa(a_cl);
    if abscissa >= 0.0 {
        return Err(ControlError::NotHurwitz { abscissa });
    }
    let x = solve_lyapunov(a_cl, &(c_cl.transpose() * c_cl))?;
    Ok((f.transpose() * x * f).trace().max(0.0).sqrt())
}

/// State-feedback gain with the partitions its structure is checked on.
///
/// `k` is stored in the system's input/state order. The partitions apply
/// to `k` after permuting rows by `row_order` and columns by `col_order`.
#[derive(Clone, Debug, PartialEq)]
pub struct GainMatrix {
    pub k: DMatrix<f64>,
    pub row_partition: BlockPartition,
    pub col_partition: BlockPartition,
    pub row_order: Vec<usize>,
    pub col_order: Vec<usize>,
    pub declared_structure: Option<Poset>,
}

impl GainMatrix {
    /// Gain partitioned like the system it was designed for.
    pub fn for_system(k: DMatrix<f64>, ss: &StateSpace) -> Self {
        GainMatrix {
            row_order: (0..k.nrows()).collect(),
            col_order: (0..k.ncols()).collect(),
            k,
            row_partition: ss.input_partition.clone(),
            col_partition: ss.state_partition.clone(),
            declared_structure: None,
        }
    }

    pub fn permuted(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k.nrows(), self.k.ncols(), |r, c| self.k[(self.row_order[r], self.col_order[c])])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisReport {
    pub gain: GainMatrix,
    pub riccati_residual: f64,
    pub closed_loop_spectral_abscissa: f64,
    pub h2_norm: f64,
}

/// Closed-loop `A + BK` and `C + DK`.
pub fn close_loop(ss: &StateSpace, k: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    if ss.n_inputs() == 0 {
        return (ss.a.clone(), ss.c.clone());
    }
    (&ss.a + &ss.b * k, &ss.c + &ss.d * k)
}

fn report(ss: &StateSpace, gain: GainMatrix, riccati_residual: f64) -> Result<SynthesisReport, ControlError> {
    let (a_cl, c_cl) = close_loop(ss, &gain.k);
    let abscissa = spectral_abscissa(&a_cl);
    if abscissa >= 0.0 {
        return Err(ControlError::NotHurwitz { abscissa });
    }
    let h2 = h2_norm(&a_cl, &c_cl, &ss.f)?;
    Ok(SynthesisReport { gain, riccati_residual, closed_loop_spectral_abscissa: abscissa, h2_norm: h2 })
}

/// Unconstrained LQR on the whole system.
pub fn synthesize_centralized(ss: &StateSpace) -> Result<SynthesisReport, ControlError> {
    let (q, r) = (ss.q(), ss.r());
    let care = solve_care(&ss.a, &ss.b, &q, &r)?;
    let k = lqr_gain(&care.x, &ss.b, &r)?;
    report(ss, GainMatrix::for_system(k, ss), care.residual)
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

/// Two stage design: an LQR for the leader alone, then an LQR for the
/// remaining inputs on the system with the leader loop closed.
///
/// `leader` lists poset elements (state blocks); `leader_inputs` lists
/// input columns that may only see leader states. Closed leader inputs do
/// not enter the second stage's cost.
pub fn synthesize_leader_follower(
    ss: &StateSpace,
    leader: &BTreeSet<usize>,
    leader_inputs: &BTreeSet<usize>,
) -> Result<SynthesisReport, ControlError> {
    let (n, m) = (ss.n_states(), ss.n_inputs());
    if let Some(&bad) = leader_inputs.iter().find(|&&i| i >= m) {
        return Err(ControlError::DimensionMismatch(format!("input {bad} out of range")));
    }
    let sp = &ss.state_partition;
    let mut is_leader = vec![false; n];
    for blk in 0..sp.block_count() {
        if leader.contains(&sp.elements[blk]) {
            for i in sp.range(blk) {
                is_leader[i] = true;
            }
        }
    }
    let lead: Vec<usize> = (0..n).filter(|&i| is_leader[i]).collect();
    let follow: Vec<usize> = (0..n).filter(|&i| !is_leader[i]).collect();
    let coupling = submatrix(&ss.a, &lead, &follow).amax();
    if coupling > 0.0 {
        return Err(ControlError::LeaderNotSelfContained(format!(
            "A couples follower states into the leader ({coupling:.3e})"
        )));
    }
    let lin: Vec<usize> = leader_inputs.iter().copied().collect();
    let rest: Vec<usize> = (0..m).filter(|i| !leader_inputs.contains(i)).collect();
    let (q, r) = (ss.q(), ss.r());

    let mut k = DMatrix::<f64>::zeros(m, n);
    let mut residual: f64 = 0.0;
    if !lin.is_empty() {
        let a_ll = submatrix(&ss.a, &lead, &lead);
        let b_l = submatrix(&ss.b, &lead, &lin);
        let q_ll = submatrix(&q, &lead, &lead);
        let r_l = submatrix(&r, &lin, &lin);
        let care = solve_care(&a_ll, &b_l, &q_ll, &r_l)?;
        residual = residual.max(care.residual);
        let k1 = lqr_gain(&care.x, &b_l, &r_l)?;
        for (ri, &row) in lin.iter().enumerate() {
            for (ci, &col) in lead.iter().enumerate() {
                k[(row, col)] = k1[(ri, ci)];
            }
        }
    }
    if !rest.is_empty() {
        let a2 = &ss.a + &ss.b * &k;
        let b2 = submatrix(&ss.b, &(0..n).collect::<Vec<_>>(), &rest);
        let r2 = submatrix(&r, &rest, &rest);
        let care = solve_care(&a2, &b2, &q, &r2)?;
        residual = residual.max(care.residual);
        let k2 = lqr_gain(&care.x, &b2, &r2)?;
        for (ri, &row) in rest.iter().enumerate() {
            k.set_row(row, &k2.row(ri));
        }
    }

    let group_sizes = [lin.len(), rest.len()];
    let mut gain = GainMatrix {
        k,
        row_partition: BlockPartition::new(group_sizes.to_vec(), vec![0, 1], vec!["leader".into(), "follower".into()]),
        col_partition: BlockPartition::new(
            vec![lead.len(), follow.len()],
            vec![0, 1],
            vec!["leader".into(), "follower".into()],
        ),
        row_order: lin.iter().chain(&rest).copied().collect(),
        col_order: lead.iter().chain(&follow).copied().collect(),
        declared_structure: None,
    };
    gain.declared_structure = Some(leader_follower_poset());
    report(ss, gain, residual)
}

/// `leader ⪯ follower`.
pub fn leader_follower_poset() -> Poset {
    Poset::chain(vec!["leader".into(), "follower".into()])
}

/// Rows are input blocks, columns state blocks: block `(i, j)` may be
/// nonzero only when state element `j` precedes input element `i`.
pub fn verify_controller_structure(gain: &GainMatrix, poset: &Poset) -> Result<Membership, ControlError> {
    Ok(in_block_incidence_algebra(&gain.permuted(), &gain.row_partition, &gain.col_partition, poset)?)
}
