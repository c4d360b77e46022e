//! Lattice regressors, the design matrix, Grenander coefficients and the
//! regression spectral measure of the deterministic trends.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Rational = Ratio<i64>;

type ScalarAtom = ((i64, i64), (i64, i64), Rational);

/// Deterministic trends on the lattice `1 <= t1, t2 <= N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegressorKind {
    /// `t1 t2`
    #[serde(rename = "poly")]
    Polynomial,
    /// `cos(π t1 / 2) cos(π t2 / 2)`
    #[serde(rename = "harmonic")]
    Harmonic,
    /// `1 + cos(π t1 / 2) cos(π t2 / 2)`
    #[serde(rename = "polyharmonic")]
    PolyPlusHarmonic,
}

impl RegressorKind {
    pub const ALL: [RegressorKind; 3] =
        [RegressorKind::Polynomial, RegressorKind::Harmonic, RegressorKind::PolyPlusHarmonic];

    pub fn as_str(self) -> &'static str {
        match self {
            RegressorKind::Polynomial => "poly",
            RegressorKind::Harmonic => "harmonic",
            RegressorKind::PolyPlusHarmonic => "polyharmonic",
        }
    }
}

impl fmt::Display for RegressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegressorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegressorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown regressor '{s}'")))
    }
}

/// `cos(π t / 2)` at integer `t`, exactly.
fn quarter_cos(t: usize) -> i64 {
    [1, 0, -1, 0][t % 4]
}

/// Regressor value at the 1-based lattice point `(t1, t2)`.
pub fn regressor_value<T: Real>(kind: RegressorKind, t1: usize, t2: usize) -> T {
    match kind {
        RegressorKind::Polynomial => T::from_usize_lossy(t1) * T::from_usize_lossy(t2),
        RegressorKind::Harmonic => T::from_i64(quarter_cos(t1) * quarter_cos(t2)).unwrap(),
        RegressorKind::PolyPlusHarmonic => T::from_i64(1 + quarter_cos(t1) * quarter_cos(t2)).unwrap(),
    }
}

/// The `N² × p` design matrix with rows ordered `(1,1), (1,2), …, (1,N), (2,1), …, (N,N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeDesign<T> {
    n: usize,
    x: Array2<T>,
    norms: Array1<T>,
}

impl<T: Real> LatticeDesign<T> {
    pub fn new(n: usize, kinds: &[RegressorKind]) -> Result<Self> {
        if n < 2 {
            return Err(Error::ParameterDomain(format!("lattice side must be >= 2, got {n}")));
        }
        let x = Array2::from_shape_fn((n * n, kinds.len()), |(row, col)| {
            regressor_value(kinds[col], row / n + 1, row % n + 1)
        });
        Self::from_matrix(n, x)
    }

    pub fn single(n: usize, kind: RegressorKind) -> Result<Self> {
        Self::new(n, &[kind])
    }

    pub fn from_matrix(n: usize, x: Array2<T>) -> Result<Self> {
        if x.nrows() != n * n || x.ncols() == 0 {
            return Err(Error::Shape(format!("design of shape {:?} for a {n}x{n} lattice", x.dim())));
        }
        let norms: Array1<T> = x.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
        if norms.iter().any(|&v| !(v > T::zero())) {
            return Err(Error::SingularDesign);
        }
        Ok(Self { n, x, norms })
    }

    /// Lattice side `N`.
    pub fn side(&self) -> usize {
        self.n
    }

    pub fn regressors(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.x
    }

    pub fn column(&self, i: usize) -> ArrayView1<'_, T> {
        self.x.column(i)
    }

    /// `‖x_i‖`, the diagonal of `D_{N²}`.
    pub fn norms(&self) -> &Array1<T> {
        &self.norms
    }

    /// 0-based row of the 1-based lattice point `(t1, t2)`.
    pub fn row_index(&self, t1: usize, t2: usize) -> usize {
        (t1 - 1) * self.n + (t2 - 1)
    }

    /// `X β`.
    pub fn mean(&self, beta: ArrayView1<T>) -> Array1<T> {
        self.x.dot(&beta)
    }
}

/// `a_ij^{(N,N)}(h1, h2) = Σ_t x_{t+h, i} x_{t, j}` over the points where both ends lie
/// on the lattice.
pub fn grenander_coeff<T: Real>(design: &LatticeDesign<T>, i: usize, j: usize, h1: i64, h2: i64) -> Result<T> {
    let n = design.side();
    if h1.unsigned_abs() as usize >= n || h2.unsigned_abs() as usize >= n {
        return Err(Error::LagOutOfRange { h1, h2, n });
    }
    let p = design.regressors();
    if i >= p || j >= p {
        return Err(Error::Shape(format!("regressor index ({i},{j}) with p = {p}")));
    }
    let (xi, xj) = (design.column(i), design.column(j));
    let range = |h: i64| {
        let lo = (-h).max(0) as usize;
        let hi = (n as i64 - h).min(n as i64) as usize;
        lo..hi
    };
    let mut acc = T::zero();
    for t1 in range(h1) {
        let s1 = (t1 as i64 + h1) as usize;
        for t2 in range(h2) {
            let s2 = (t2 as i64 + h2) as usize;
            acc += xi[s1 * n + s2] * xj[t1 * n + t2];
        }
    }
    Ok(acc)
}

/// `γ_ij^{(N,N)}(h) = a_ij(h) / (a_ii(0) a_jj(0))^{1/2}`.
pub fn grenander_corr<T: Real>(design: &LatticeDesign<T>, i: usize, j: usize, h1: i64, h2: i64) -> Result<T> {
    let norms = design.norms();
    Ok(grenander_coeff(design, i, j, h1, h2)? / (norms[i] * norms[j]))
}

/// Point mass of the regression spectral measure. Frequencies are stored as exact
/// multiples of π.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpAtom {
    pub frequency: [Rational; 2],
    pub mass: Array2<Rational>,
}

impl JumpAtom {
    pub fn frequency<T: Real>(&self) -> (T, T) {
        let f = |r: &Rational| T::PI() * T::lit(r.to_f64().expect("finite ratio"));
        (f(&self.frequency[0]), f(&self.frequency[1]))
    }

    pub fn mass<T: Real>(&self) -> Array2<T> {
        self.mass.mapv(|r| T::lit(r.to_f64().expect("finite ratio")))
    }
}

/// Purely atomic regression spectral measure `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMeasure {
    p: usize,
    atoms: Vec<JumpAtom>,
}

impl JumpMeasure {
    pub fn new(p: usize, atoms: Vec<JumpAtom>) -> Result<Self> {
        if p == 0 || atoms.is_empty() {
            return Err(Error::ParameterDomain("jump measure needs p >= 1 and at least one atom".into()));
        }
        for a in &atoms {
            if a.mass.dim() != (p, p) {
                return Err(Error::Shape(format!("atom mass {:?} for p = {p}", a.mass.dim())));
            }
            let half = Rational::new(1, 1);
            if a.frequency.iter().any(|f| f.abs() > half) {
                return Err(Error::ParameterDomain("atom frequency outside [-π, π]".into()));
            }
        }
        Ok(Self { p, atoms })
    }

    /// Atoms given as `(frequency1, frequency2, mass)` with frequencies as `(num, den)` multiples of π.
    fn scalar(atoms: &[ScalarAtom]) -> Self {
        let atoms = atoms
            .iter()
            .map(|&((n1, d1), (n2, d2), m)| JumpAtom {
                frequency: [Rational::new(n1, d1), Rational::new(n2, d2)],
                mass: Array2::from_elem((1, 1), m),
            })
            .collect();
        Self { p: 1, atoms }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn atoms(&self) -> &[JumpAtom] {
        &self.atoms
    }

    /// Exact total mass `M(Π²)`, which equals `R(0,0)`.
    pub fn total_mass(&self) -> Array2<Rational> {
        let mut total = Array2::from_elem((self.p, self.p), Rational::zero());
        for a in &self.atoms {
            total += &a.mass;
        }
        total
    }

    /// `R(h1, h2) = ∫ e^{i(h1 λ1 + h2 λ2)} dM`; the imaginary part cancels for measures
    /// symmetric under `λ ↦ -λ`.
    pub fn characteristic<T: Real>(&self, h1: i64, h2: i64) -> Result<Array2<T>> {
        let mut re = Array2::<T>::zeros((self.p, self.p));
        let mut im = Array2::<T>::zeros((self.p, self.p));
        for a in &self.atoms {
            let (l1, l2) = a.frequency::<T>();
            let phase = T::from_i64(h1).unwrap() * l1 + T::from_i64(h2).unwrap() * l2;
            let m = a.mass::<T>();
            re.scaled_add(phase.cos(), &m);
            im.scaled_add(phase.sin(), &m);
        }
        let residue = im.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
        if residue > T::lit(1e-9) {
            return Err(Error::ComplexResidue { residue: residue.as_f64() });
        }
        Ok(re)
    }

    /// `R(0, 0)`.
    pub fn r00<T: Real>(&self) -> Array2<T> {
        self.total_mass().mapv(|r| T::lit(r.to_f64().expect("finite ratio")))
    }

    /// Atoms folded onto `[0, π]²` by axial symmetry, with their summed masses.
    pub fn folded(&self) -> Vec<([Rational; 2], Array2<Rational>)> {
        let mut out: Vec<([Rational; 2], Array2<Rational>)> = Vec::new();
        for a in &self.atoms {
            let key = [a.frequency[0].abs(), a.frequency[1].abs()];
            match out.iter_mut().find(|(k, _)| *k == key) {
                Some((_, m)) => *m = &*m + &a.mass,
                None => out.push((key, a.mass.clone())),
            }
        }
        out
    }
}

/// Exact rank of a rational matrix.
pub fn rational_rank(m: &Array2<Rational>) -> usize {
    let mut a = m.clone();
    let (rows, cols) = a.dim();
    let mut rank = 0;
    for col in 0..cols {
        let Some(pivot) = (rank..rows).find(|&r| !a[[r, col]].is_zero()) else {
            continue;
        };
        for k in 0..cols {
            a.swap([pivot, k], [rank, k]);
        }
        for r in 0..rows {
            if r != rank && !a[[r, col]].is_zero() {
                let f = a[[r, col]] / a[[rank, col]];
                for k in 0..cols {
                    let v = a[[rank, k]];
                    a[[r, k]] -= f * v;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Analytic jump sets of the three trends.
pub fn jump_measure(kind: RegressorKind) -> JumpMeasure {
    let r = Rational::new;
    let corners = |m: Rational| {
        [((1, 2), (1, 2), m), ((-1, 2), (1, 2), m), ((1, 2), (-1, 2), m), ((-1, 2), (-1, 2), m)]
    };
    match kind {
        RegressorKind::Polynomial => JumpMeasure::scalar(&[((0, 1), (0, 1), r(1, 1))]),
        RegressorKind::Harmonic => JumpMeasure::scalar(&corners(r(1, 4))),
        RegressorKind::PolyPlusHarmonic => {
            let mut atoms = vec![((0, 1), (0, 1), r(4, 5))];
            atoms.extend(corners(r(1, 20)));
            JumpMeasure::scalar(&atoms)
        }
    }
}
