//! Exponential Runge–Kutta tableaux and their transformed (α, β) form.

use thiserror::Error;

use super::expr::CoefficientExpr;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableauError {
    #[error("unsupported method order {0}; expected 2, 3 or 4")]
    UnsupportedOrder(u32),
    #[error("tableau is malformed: {0}")]
    Malformed(String),
}

/// Coefficient tables (c, a, b) of an exponential Runge–Kutta method.
///
/// `a[i][j]` is a_{i+1,j+1}; entries on and above the diagonal are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprkTableau {
    pub name: String,
    pub s: usize,
    pub c: Vec<f64>,
    pub a: Vec<Vec<CoefficientExpr>>,
    pub b: Vec<CoefficientExpr>,
    pub design_order: u32,
}

/// The α/β form in which the method uses f only.
///
/// Row 1 of `alpha` is zero; `e` is the (s-1)×(s-1) matrix
/// E = (I + z·A_{2:s,2:s})^{-1} the coefficients were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedTableau {
    pub name: String,
    pub s: usize,
    pub c: Vec<f64>,
    pub alpha: Vec<Vec<CoefficientExpr>>,
    pub beta: Vec<CoefficientExpr>,
    pub e: Vec<Vec<CoefficientExpr>>,
    pub design_order: u32,
}

impl ExprkTableau {
    pub fn validate(&self) -> Result<(), TableauError> {
        let s = self.s;
        if self.c.len() != s || self.a.len() != s || self.b.len() != s {
            return Err(TableauError::Malformed(format!(
                "expected {s} stages in c, a and b"
            )));
        }
        if self.c[0] != 0.0 {
            return Err(TableauError::Malformed("c_1 must be 0".into()));
        }
        for (i, row) in self.a.iter().enumerate() {
            if row.len() != s {
                return Err(TableauError::Malformed(format!("row {} of a has wrong length", i + 1)));
            }
            for (j, e) in row.iter().enumerate() {
                if j >= i && !e.simplify().is_zero() {
                    return Err(TableauError::Malformed(format!(
                        "a[{}][{}] must be zero (strictly lower triangular)",
                        i + 1,
                        j + 1
                    )));
                }
                e.validate().map_err(TableauError::Malformed)?;
            }
        }
        for e in &self.b {
            e.validate().map_err(TableauError::Malformed)?;
        }
        Ok(())
    }

    /// Largest φ index appearing anywhere in the tableau.
    pub fn max_phi_index(&self) -> u32 {
        self.a
            .iter()
            .flatten()
            .chain(&self.b)
            .filter_map(|e| e.max_phi_index())
            .max()
            .unwrap_or(0)
    }
}

impl TransformedTableau {
    pub fn max_phi_index(&self) -> u32 {
        self.alpha
            .iter()
            .flatten()
            .chain(&self.beta)
            .filter_map(|e| e.max_phi_index())
            .max()
            .unwrap_or(0)
    }
}

fn zeros(s: usize) -> Vec<Vec<CoefficientExpr>> {
    vec![vec![CoefficientExpr::zero(); s]; s]
}

fn phi(k: u32, c: f64) -> CoefficientExpr {
    CoefficientExpr::phi(k, c)
}

/// Order 2: c = [0, 1], a_{21} = φ_1, b = [φ_1 - φ_2, φ_2].
pub fn tableau_order2() -> ExprkTableau {
    let mut a = zeros(2);
    a[1][0] = phi(1, 1.0);
    ExprkTableau {
        name: "exprk2".into(),
        s: 2,
        c: vec![0.0, 1.0],
        a,
        b: vec![phi(1, 1.0) - phi(2, 1.0), phi(2, 1.0)],
        design_order: 2,
    }
}

/// Order 3 with c_2 = c_3 = 2/3.
pub fn tableau_order3() -> ExprkTableau {
    let c2 = 2.0 / 3.0;
    let c3 = 2.0 / 3.0;
    let w = 4.0 / (9.0 * c2);
    let mut a = zeros(3);
    a[1][0] = c2 * phi(1, c2);
    a[2][0] = c3 * phi(1, c3) - w * phi(2, c3);
    a[2][1] = w * phi(2, c3);
    ExprkTableau {
        name: "exprk3".into(),
        s: 3,
        c: vec![0.0, c2, c3],
        a,
        b: vec![
            phi(1, 1.0) - 1.5 * phi(2, 1.0),
            CoefficientExpr::zero(),
            1.5 * phi(2, 1.0),
        ],
        design_order: 3,
    }
}

/// Order 4, five stages, c = [0, 1/2, 1/2, 1, 1/2].
pub fn tableau_order4() -> ExprkTableau {
    let c = vec![0.0, 0.5, 0.5, 1.0, 0.5];
    // φ_{j,k} = φ_j(c_k z), k 1-based
    let pj = |j: u32, k: usize| phi(j, c[k - 1]);
    let mut a = zeros(5);
    a[1][0] = 0.5 * pj(1, 2);
    a[2][0] = 0.5 * pj(1, 3) - pj(2, 3);
    a[2][1] = pj(2, 3);
    a[3][0] = pj(1, 4) - 2.0 * pj(2, 4);
    a[3][1] = pj(2, 4);
    a[3][2] = pj(2, 4);
    let a52 = CoefficientExpr::Sum(vec![
        0.5 * pj(2, 5),
        -pj(3, 4),
        0.25 * pj(2, 4),
        -0.5 * pj(3, 5),
    ]);
    let a54 = 0.25 * pj(2, 5) - a52.clone();
    a[4][0] = CoefficientExpr::Sum(vec![0.5 * pj(1, 5), -2.0 * a52.clone(), -a54.clone()]);
    a[4][1] = a52.clone();
    a[4][2] = a52;
    a[4][3] = a54;
    let p1 = phi(1, 1.0);
    let p2 = phi(2, 1.0);
    let p3 = phi(3, 1.0);
    let mut a_simpl = a;
    for row in a_simpl.iter_mut() {
        for e in row.iter_mut() {
            *e = e.simplify();
        }
    }
    ExprkTableau {
        name: "exprk4".into(),
        s: 5,
        c,
        a: a_simpl,
        b: vec![
            CoefficientExpr::Sum(vec![p1, -3.0 * p2.clone(), 4.0 * p3.clone()]),
            CoefficientExpr::zero(),
            CoefficientExpr::zero(),
            -p2.clone() + 4.0 * p3.clone(),
            4.0 * p2 - 8.0 * p3,
        ],
        design_order: 4,
    }
}

/// Catalog lookup by design order.
pub fn tableau(order: u32) -> Result<ExprkTableau, TableauError> {
    match order {
        2 => Ok(tableau_order2()),
        3 => Ok(tableau_order3()),
        4 => Ok(tableau_order4()),
        _ => Err(TableauError::UnsupportedOrder(order)),
    }
}

fn mat_mul(x: &[Vec<CoefficientExpr>], y: &[Vec<CoefficientExpr>]) -> Vec<Vec<CoefficientExpr>> {
    let n = x.len();
    let m = y.first().map_or(0, |r| r.len());
    let inner = y.len();
    (0..n)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let terms: Vec<CoefficientExpr> = (0..inner)
                        .filter(|&k| !x[i][k].is_zero() && !y[k][j].is_zero())
                        .map(|k| x[i][k].clone() * y[k][j].clone())
                        .collect();
                    CoefficientExpr::Sum(terms).simplify()
                })
                .collect()
        })
        .collect()
}

/// Rewrites a tableau into α/β form.
///
/// E = (I + zA)^{-1} over the block A_{2:s,2:s} is the finite Neumann sum
/// Σ_{j=0}^{s-2} (-zA)^j, exact because zA is nilpotent. Then
/// α_{2:s,1} = E·[c_i φ_1(c_i z)], α_{2:s,2:s} = E·A,
/// β_1 = φ_1 - z Σ_j b_j α_{j,1}, β_{2:s}ᵀ = b_{2:s}ᵀ·E.
pub fn transform(t: &ExprkTableau) -> Result<TransformedTableau, TableauError> {
    t.validate()?;
    let s = t.s;
    let n = s - 1;
    let block: Vec<Vec<CoefficientExpr>> = (1..s)
        .map(|i| (1..s).map(|j| t.a[i][j].simplify()).collect())
        .collect();
    let neg_z_a: Vec<Vec<CoefficientExpr>> = block
        .iter()
        .map(|row| {
            row.iter()
                .map(|e| {
                    if e.is_zero() {
                        CoefficientExpr::zero()
                    } else {
                        e.clone().zmul().scale(-1.0).simplify()
                    }
                })
                .collect()
        })
        .collect();
    let identity: Vec<Vec<CoefficientExpr>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        CoefficientExpr::one()
                    } else {
                        CoefficientExpr::zero()
                    }
                })
                .collect()
        })
        .collect();
    let mut e = identity.clone();
    let mut power = identity;
    for _ in 1..n {
        power = mat_mul(&power, &neg_z_a);
        for i in 0..n {
            for j in 0..n {
                if !power[i][j].is_zero() {
                    e[i][j] = (e[i][j].clone() + power[i][j].clone()).simplify();
                }
            }
        }
    }

    let first_col: Vec<Vec<CoefficientExpr>> = (1..s)
        .map(|i| vec![(t.c[i] * CoefficientExpr::phi(1, t.c[i])).simplify()])
        .collect();
    let alpha_col = mat_mul(&e, &first_col);
    let alpha_block = mat_mul(&e, &block);

    let mut alpha = vec![vec![CoefficientExpr::zero(); s]; s];
    for i in 1..s {
        alpha[i][0] = alpha_col[i - 1][0].clone();
        for j in 1..s {
            alpha[i][j] = alpha_block[i - 1][j - 1].clone();
        }
    }

    let correction: Vec<CoefficientExpr> = (1..s)
        .filter(|&j| !t.b[j].is_zero() && !alpha[j][0].is_zero())
        .map(|j| t.b[j].clone() * alpha[j][0].clone())
        .collect();
    let beta1 = if correction.is_empty() {
        CoefficientExpr::phi(1, 1.0)
    } else {
        CoefficientExpr::phi(1, 1.0) - CoefficientExpr::Sum(correction).zmul()
    };
    let b_row = vec![(1..s).map(|j| t.b[j].simplify()).collect::<Vec<_>>()];
    let beta_rest = mat_mul(&b_row, &e);
    let mut beta = vec![beta1.simplify()];
    beta.extend(beta_rest.into_iter().next().unwrap_or_default());

    Ok(TransformedTableau {
        name: format!("{}-transformed", t.name),
        s,
        c: t.c.clone(),
        alpha,
        beta,
        e,
        design_order: t.design_order,
    })
}

/// One line per nonzero entry, prefix notation.
pub fn dump_tableau(t: &ExprkTableau) -> String {
    let mut out = format!("# {} s={} order={}\n", t.name, t.s, t.design_order);
    out.push_str(&format!("c = {:?}\n", t.c));
    for (i, row) in t.a.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            if !e.is_zero() {
                out.push_str(&format!("a[{}][{}] = {}\n", i + 1, j + 1, e.to_prefix()));
            }
        }
    }
    for (j, e) in t.b.iter().enumerate() {
        out.push_str(&format!("b[{}] = {}\n", j + 1, e.to_prefix()));
    }
    out
}

pub fn dump_transformed(t: &TransformedTableau) -> String {
    let mut out = format!("# {} s={} order={}\n", t.name, t.s, t.design_order);
    out.push_str(&format!("c = {:?}\n", t.c));
    for (i, row) in t.alpha.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            if !e.is_zero() {
                out.push_str(&format!("alpha[{}][{}] = {}\n", i + 1, j + 1, e.to_prefix()));
            }
        }
    }
    for (j, e) in t.beta.iter().enumerate() {
        out.push_str(&format!("beta[{}] = {}\n", j + 1, e.to_prefix()));
    }
    out
}
