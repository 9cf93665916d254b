//! Weighted least-squares machinery shared by the ADMM primal step and the
//! closed-form reference estimators.
//!
//! Everything is expressed through per-individual weighted Gram blocks
//! `X_iᵀWX_i`, `X_iᵀWZ_i`, `Z_iᵀWZ_i`, `X_iᵀWy_i`, `Z_iᵀWy_i` with
//! `W = R⁻¹`. Systems coupling the individual coefficients through the shared
//! `α` have arrowhead structure and are solved by eliminating each
//! individual's block and factoring the small Schur complement.

use crate::correlation::CorrelationModel;
use crate::data::LongitudinalDataset;
use crate::error::{MdspError, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::scalar::Scalar;

/// Weighted Gram blocks of one individual.
#[derive(Debug, Clone)]
pub struct IndividualGram<T> {
    pub xx: Matrix<T>,
    pub xz: Matrix<T>,
    pub zz: Matrix<T>,
    pub xy: Vec<T>,
    pub zy: Vec<T>,
    pub yy: T,
}

/// Gram blocks of every individual plus the pooled shared-covariate blocks.
#[derive(Debug, Clone)]
pub struct Grams<T> {
    pub p: usize,
    pub q: usize,
    pub per: Vec<IndividualGram<T>>,
    pub zz_total: Matrix<T>,
    pub zy_total: Vec<T>,
    pub yy_total: T,
}

impl<T: Scalar> Grams<T> {
    /// Average diagonal entry of `X_iᵀWX_i` over individuals and covariates.
    pub fn mean_x_diagonal(&self) -> T {
        let cells = self.per.len() * self.p;
        if cells == 0 {
            return T::zero();
        }
        let total = self
            .per
            .iter()
            .flat_map(|g| (0..self.p).map(move |k| g.xx[(k, k)]))
            .fold(T::zero(), |a, v| a + v);
        total / T::from_usize(cells).unwrap()
    }

    pub fn build(ds: &LongitudinalDataset<T>, corr: &CorrelationModel<T>) -> Self {
        let (p, q, m) = (ds.p(), ds.q(), ds.measurements());
        let mut per = Vec::with_capacity(ds.n_individuals());
        let mut zz_total = Matrix::zeros(q, q);
        let mut zy_total = vec![T::zero(); q];
        let mut yy_total = T::zero();
        let mut buf = vec![T::zero(); m];
        for i in 0..ds.n_individuals() {
            let xcols: Vec<Vec<T>> = (0..p).map(|k| ds.x_col(i, k)).collect();
            let zcols: Vec<Vec<T>> = (0..q).map(|j| ds.z_col(i, j)).collect();
            let y = ds.y_i(i);
            corr.inverse_apply_into(y, &mut buf);
            let wy = buf.clone();
            let wx: Vec<Vec<T>> = xcols.iter().map(|c| corr.inverse_apply(c)).collect();
            let wz: Vec<Vec<T>> = zcols.iter().map(|c| corr.inverse_apply(c)).collect();

            let mut xx = Matrix::zeros(p, p);
            for a in 0..p {
                for b in 0..=a {
                    let v = dot(&xcols[a], &wx[b]);
                    xx[(a, b)] = v;
                    xx[(b, a)] = v;
                }
            }
            let mut xz = Matrix::zeros(p, q);
            for a in 0..p {
                for j in 0..q {
                    xz[(a, j)] = dot(&xcols[a], &wz[j]);
                }
            }
            let mut zz = Matrix::zeros(q, q);
            for a in 0..q {
                for b in 0..=a {
                    let v = dot(&zcols[a], &wz[b]);
                    zz[(a, b)] = v;
                    zz[(b, a)] = v;
                }
            }
            let xy: Vec<T> = wx.iter().map(|c| dot(c, y)).collect();
            let zy: Vec<T> = wz.iter().map(|c| dot(c, y)).collect();
            let yy = dot(y, &wy);
            for a in 0..q {
                zy_total[a] += zy[a];
                for b in 0..q {
                    zz_total[(a, b)] += zz[(a, b)];
                }
            }
            yy_total += yy;
            per.push(IndividualGram {
                xx,
                xz,
                zz,
                xy,
                zy,
                yy,
            });
        }
        Self {
            p,
            q,
            per,
            zz_total,
            zy_total,
            yy_total,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.per.len()
    }

    /// Weighted loss `½ Σ_i (y_i − X_iβ_i − Z_iα)ᵀ W (y_i − X_iβ_i − Z_iα)`.
    pub fn loss(&self, alpha: &[T], beta: &Matrix<T>) -> T {
        let two = T::lit(2.0);
        let mut acc = self.yy_total - two * dot(alpha, &self.zy_total);
        let za = self.zz_total.mul_vec(alpha);
        acc += dot(alpha, &za);
        for (i, g) in self.per.iter().enumerate() {
            let b = beta.row(i);
            let xb = g.xx.mul_vec(b);
            let xza = g.xz.mul_vec(alpha);
            acc += dot(b, &xb) - two * dot(b, &g.xy) + two * dot(b, &xza);
        }
        T::lit(0.5) * acc
    }

    /// Gradient of [`Self::loss`] with respect to `β` (as `N × p`) and `α`.
    pub fn gradient(&self, alpha: &[T], beta: &Matrix<T>) -> (Matrix<T>, Vec<T>) {
        let (p, q) = (self.p, self.q);
        let mut gb = Matrix::zeros(self.n(), p);
        let mut ga = self.zz_total.mul_vec(alpha);
        for (a, zy) in ga.iter_mut().zip(&self.zy_total) {
            *a -= *zy;
        }
        for (i, g) in self.per.iter().enumerate() {
            let b = beta.row(i);
            let xb = g.xx.mul_vec(b);
            let xza = g.xz.mul_vec(alpha);
            let zxb = g.xz.tr_mul_vec(b);
            for k in 0..p {
                gb[(i, k)] = xb[k] + xza[k] - g.xy[k];
            }
            for j in 0..q {
                ga[j] += zxb[j];
            }
        }
        (gb, ga)
    }
}

/// Factorization of the `(α, β)` subproblem
/// `min L(α, β) + (κ/2)‖β − c‖²` for a fixed `κ`; reused every iteration.
#[derive(Debug, Clone)]
pub struct PrimalSystem<T> {
    kappa: T,
    blocks: Vec<Cholesky<T>>,
    /// `A_i⁻¹ X_iᵀWZ_i`.
    coupling: Vec<Matrix<T>>,
    schur: Cholesky<T>,
}

impl<T: Scalar> PrimalSystem<T> {
    pub fn new(grams: &Grams<T>, kappa: T) -> Result<Self> {
        let (p, q) = (grams.p, grams.q);
        let mut blocks = Vec::with_capacity(grams.n());
        let mut coupling = Vec::with_capacity(grams.n());
        let mut schur = grams.zz_total.clone();
        for (i, g) in grams.per.iter().enumerate() {
            let mut a = g.xx.clone();
            for k in 0..p {
                a[(k, k)] += kappa;
            }
            let chol = Cholesky::factor(&a).map_err(|e| {
                MdspError::SingularSystem(format!("individual {i}: {e}"))
            })?;
            let gi = chol.solve_matrix(&g.xz);
            for r in 0..q {
                for c in 0..q {
                    let mut s = T::zero();
                    for k in 0..p {
                        s += g.xz[(k, r)] * gi[(k, c)];
                    }
                    schur[(r, c)] -= s;
                }
            }
            blocks.push(chol);
            coupling.push(gi);
        }
        // symmetrize against round-off before factoring
        for r in 0..q {
            for c in 0..r {
                let v = T::lit(0.5) * (schur[(r, c)] + schur[(c, r)]);
                schur[(r, c)] = v;
                schur[(c, r)] = v;
            }
        }
        let schur = Cholesky::factor(&schur)
            .map_err(|e| MdspError::SingularSystem(format!("shared-effect Schur complement: {e}")))?;
        Ok(Self {
            kappa,
            blocks,
            coupling,
            schur,
        })
    }

    #[inline]
    pub fn kappa(&self) -> T {
        self.kappa
    }

    /// Exact minimizer of `L(α, β) + (κ/2)‖β − c‖²`; `c` is `N × p`.
    pub fn solve(&self, grams: &Grams<T>, c: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
        let (p, q) = (grams.p, grams.q);
        let n = grams.n();
        let mut t = Matrix::zeros(n, p);
        let mut rhs = grams.zy_total.clone();
        let mut rhs_i = vec![T::zero(); p];
        for (i, g) in grams.per.iter().enumerate() {
            for k in 0..p {
                rhs_i[k] = g.xy[k] + self.kappa * c[(i, k)];
            }
            self.blocks[i].solve_in_place(&mut rhs_i);
            let back = g.xz.tr_mul_vec(&rhs_i);
            for j in 0..q {
                rhs[j] -= back[j];
            }
            t.row_mut(i).copy_from_slice(&rhs_i);
        }
        self.schur.solve_in_place(&mut rhs);
        let alpha = rhs;
        for i in 0..n {
            let ga = self.coupling[i].mul_vec(&alpha);
            for (b, d) in t.row_mut(i).iter_mut().zip(ga) {
                *b -= d;
            }
        }
        (alpha, t)
    }
}

/// How one coefficient `β_ik` is parametrized on a face of the penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellRole<T> {
    /// Pinned at zero.
    Zero,
    /// Pinned at a known constant.
    Fixed(T),
    /// Equal to shared group parameter `g`.
    Group(usize),
    /// Its own unknown.
    Free,
}

/// A face of the piecewise-linear penalty: the role of every cell plus the
/// linear penalty terms that remain smooth on it.
#[derive(Debug, Clone)]
pub struct Face<T> {
    /// `roles[i][k]`.
    pub roles: Vec<Vec<CellRole<T>>>,
    pub n_groups: usize,
    /// Coefficient of `β_ik` in the linear term (free cells only).
    pub linear_cell: Matrix<T>,
    /// Coefficient of each group parameter in the linear term.
    pub linear_group: Vec<T>,
}

impl<T: Scalar> Face<T> {
    pub fn new(roles: Vec<Vec<CellRole<T>>>, n_groups: usize) -> Self {
        let n = roles.len();
        let p = roles.first().map_or(0, Vec::len);
        Self {
            roles,
            n_groups,
            linear_cell: Matrix::zeros(n, p),
            linear_group: vec![T::zero(); n_groups],
        }
    }
}

/// Solution of a face problem.
#[derive(Debug, Clone)]
pub struct FaceSolution<T> {
    pub alpha: Vec<T>,
    pub beta: Matrix<T>,
    pub groups: Vec<T>,
}

/// Exact minimizer of `L(α, β) + Σ c_ik β_ik + Σ d_g θ_g` over `α`, the group
/// parameters `θ` and the free cells, with `β` constrained by the face roles.
pub fn solve_face<T: Scalar>(grams: &Grams<T>, face: &Face<T>) -> Result<FaceSolution<T>> {
    let (p, q, ng) = (grams.p, grams.q, face.n_groups);
    let s = q + ng;
    let mut shared = Matrix::zeros(s, s);
    let mut shared_rhs = vec![T::zero(); s];
    for g in 0..ng {
        shared_rhs[q + g] -= face.linear_group[g];
    }
    struct Local<T> {
        free: Vec<usize>,
        chol: Option<Cholesky<T>>,
        /// `H_bs` (free × shared)
        hbs: Matrix<T>,
        rb: Vec<T>,
    }
    let mut locals = Vec::with_capacity(grams.n());

    for (i, g) in grams.per.iter().enumerate() {
        let roles = &face.roles[i];
        // offsets o and the xy − xx·o, zy − xzᵀ·o residual right-hand sides
        let offset: Vec<T> = roles
            .iter()
            .map(|r| match r {
                CellRole::Fixed(v) => *v,
                _ => T::zero(),
            })
            .collect();
        let xxo = g.xx.mul_vec(&offset);
        let ry: Vec<T> = (0..p).map(|k| g.xy[k] - xxo[k]).collect();
        let xzo = g.xz.tr_mul_vec(&offset);
        let rz: Vec<T> = (0..q).map(|j| g.zy[j] - xzo[j]).collect();

        // Map each coefficient k to a column of the shared block.
        let shared_col = |k: usize| match roles[k] {
            CellRole::Group(gi) => Some(q + gi),
            _ => None,
        };
        let free: Vec<usize> = (0..p).filter(|&k| roles[k] == CellRole::Free).collect();

        // Shared-shared contribution: [[zz, xzᵀM], [Mᵀxz, MᵀxxM]].
        for a in 0..q {
            shared_rhs[a] += rz[a];
            for b in 0..q {
                shared[(a, b)] += g.zz[(a, b)];
            }
        }
        for k in 0..p {
            let Some(ck) = shared_col(k) else { continue };
            shared_rhs[ck] += ry[k];
            for j in 0..q {
                shared[(ck, j)] += g.xz[(k, j)];
                shared[(j, ck)] += g.xz[(k, j)];
            }
            for k2 in 0..p {
                if let Some(ck2) = shared_col(k2) {
                    shared[(ck, ck2)] += g.xx[(k, k2)];
                }
            }
        }

        if free.is_empty() {
            locals.push(Local {
                free,
                chol: None,
                hbs: Matrix::zeros(0, s),
                rb: Vec::new(),
            });
            continue;
        }
        let f = free.len();
        let mut hbb = Matrix::zeros(f, f);
        let mut hbs = Matrix::zeros(f, s);
        let mut rb = vec![T::zero(); f];
        for (a, &ka) in free.iter().enumerate() {
            rb[a] = ry[ka] - face.linear_cell[(i, ka)];
            for (b, &kb) in free.iter().enumerate() {
                hbb[(a, b)] = g.xx[(ka, kb)];
            }
            for j in 0..q {
                hbs[(a, j)] = g.xz[(ka, j)];
            }
            for k in 0..p {
                if let Some(ck) = shared_col(k) {
                    hbs[(a, ck)] += g.xx[(ka, k)];
                }
            }
        }
        let chol = Cholesky::factor(&hbb)
            .map_err(|e| MdspError::SingularSystem(format!("individual {i}: {e}")))?;
        let hinv_hbs = chol.solve_matrix(&hbs);
        let hinv_rb = chol.solve(&rb);
        for r in 0..s {
            for c in 0..s {
                let mut acc = T::zero();
                for a in 0..f {
                    acc += hbs[(a, r)] * hinv_hbs[(a, c)];
                }
                shared[(r, c)] -= acc;
            }
            let mut acc = T::zero();
            for a in 0..f {
                acc += hbs[(a, r)] * hinv_rb[a];
            }
            shared_rhs[r] -= acc;
        }
        locals.push(Local {
            free,
            chol: Some(chol),
            hbs,
            rb,
        });
    }

    for r in 0..s {
        for c in 0..r {
            let v = T::lit(0.5) * (shared[(r, c)] + shared[(c, r)]);
            shared[(r, c)] = v;
            shared[(c, r)] = v;
        }
    }
    let chol = Cholesky::factor(&shared)
        .map_err(|e| MdspError::SingularSystem(format!("shared block: {e}")))?;
    let theta = chol.solve(&shared_rhs);
    let alpha = theta[..q].to_vec();
    let groups = theta[q..].to_vec();

    let n = grams.n();
    let mut beta = Matrix::zeros(n, p);
    for (i, local) in locals.iter().enumerate() {
        for k in 0..p {
            beta[(i, k)] = match face.roles[i][k] {
                CellRole::Zero | CellRole::Free => T::zero(),
                CellRole::Fixed(v) => v,
                CellRole::Group(g) => groups[g],
            };
        }
        if let Some(chol) = &local.chol {
            let hs = local.hbs.mul_vec(&theta);
            let mut rhs: Vec<T> = local.rb.iter().zip(&hs).map(|(&r, &h)| r - h).collect();
            chol.solve_in_place(&mut rhs);
            for (a, &k) in local.free.iter().enumerate() {
                beta[(i, k)] = rhs[a];
            }
        }
    }
    Ok(FaceSolution {
        alpha,
        beta,
        groups,
    })
}
