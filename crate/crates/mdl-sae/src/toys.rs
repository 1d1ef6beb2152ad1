//! Closed-form boolean toy models: feature splitting and hierarchical
//! coding, with a brute-force enumeration oracle over the four outcomes
//! of two boolean features.
//!
//! A [`ToyWorld`] is canonically parameterized by the marginals and the
//! joint probability `P(A AND B)`; the Pearson correlation and the
//! conditional `P(B|A)` are derived views. Infeasible parameter
//! combinations are rejected at construction rather than clamped.

use std::fmt;

use crate::math::bernoulli_entropy;

/// Slack for floating-point dust when checking joint feasibility and
/// scheme ties.
const FEASIBILITY_TOLERANCE: f64 = 1e-9;
const TIE_TOLERANCE: f64 = 1e-12;

/// Errors from toy-model construction and analysis.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyError {
    /// A marginal probability outside `[0, 1]`.
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    /// Correlation outside `[-1, 1]`.
    CorrelationOutOfRange { value: f64 },
    /// The implied joint probability falls outside the feasible interval.
    InfeasibleJoint { p_joint: f64, lo: f64, hi: f64 },
    /// Hierarchy analysis on a world where `p_B > p_A`.
    ChildExceedsParent { p_a: f64, p_b: f64 },
    /// Hierarchy analysis on a world where B is not nested inside A.
    NotNested { p_b: f64, p_joint: f64 },
    /// A scheme feature refers to a parent index that does not exist.
    UndefinedParent { feature: usize, parent: usize },
    /// A scheme child can be active while its parent is not.
    HierarchyViolation { feature: usize, parent: usize },
    /// Phase-boundary grid point outside the open interval (0, 1).
    GridPointOutOfRange { value: f64 },
    /// Non-positive bisection tolerance.
    InvalidTolerance { value: f64 },
}

impl fmt::Display for ToyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ProbabilityOutOfRange { name, value } => {
                write!(f, "{name} = {value} outside [0, 1]")
            }
            Self::CorrelationOutOfRange { value } => {
                write!(f, "correlation {value} outside [-1, 1]")
            }
            Self::InfeasibleJoint { p_joint, lo, hi } => {
                write!(f, "joint probability {p_joint} outside feasible [{lo}, {hi}]")
            }
            Self::ChildExceedsParent { p_a, p_b } => {
                write!(f, "hierarchy requires p_B <= p_A, got p_A = {p_a}, p_B = {p_b}")
            }
            Self::NotNested { p_b, p_joint } => {
                write!(f, "hierarchy requires B to imply A, but p_B = {p_b} while P(A and B) = {p_joint}")
            }
            Self::UndefinedParent { feature, parent } => {
                write!(f, "scheme feature {feature} references undefined parent {parent}")
            }
            Self::HierarchyViolation { feature, parent } => {
                write!(f, "scheme feature {feature} can be active while parent {parent} is not")
            }
            Self::GridPointOutOfRange { value } => {
                write!(f, "grid point {value} outside the open interval (0, 1)")
            }
            Self::InvalidTolerance { value } => {
                write!(f, "bisection tolerance {value} must be positive")
            }
        }
    }
}

impl std::error::Error for ToyError {}

fn check_probability(name: &'static str, value: f64) -> Result<(), ToyError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(ToyError::ProbabilityOutOfRange { name, value });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// ToyWorld
// ---------------------------------------------------------------------------

/// Joint distribution of two boolean features A and B.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyWorld {
    p_a: f64,
    p_b: f64,
    p_joint: f64,
}

impl ToyWorld {
    /// World parameterized by marginals and the Pearson correlation:
    /// `P(A and B) = p_a p_b + rho * sqrt(p_a (1-p_a) p_b (1-p_b))`.
    pub fn split(p_a: f64, p_b: f64, rho: f64) -> Result<Self, ToyError> {
        check_probability("p_A", p_a)?;
        check_probability("p_B", p_b)?;
        if !(-1.0..=1.0).contains(&rho) {
            return Err(ToyError::CorrelationOutOfRange { value: rho });
        }
        let p_joint = p_a * p_b + rho * (p_a * (1.0 - p_a) * p_b * (1.0 - p_b)).sqrt();
        Self::from_joint(p_a, p_b, p_joint)
    }

    /// Nested world: B fires only when A does, with conditional
    /// probability `p_b_given_a`.
    pub fn hierarchical(p_a: f64, p_b_given_a: f64) -> Result<Self, ToyError> {
        check_probability("p_A", p_a)?;
        check_probability("p_B_given_A", p_b_given_a)?;
        let p_b = p_a * p_b_given_a;
        Self::from_joint(p_a, p_b, p_b)
    }

    /// World from explicit marginals and joint probability.
    pub fn from_joint(p_a: f64, p_b: f64, p_joint: f64) -> Result<Self, ToyError> {
        check_probability("p_A", p_a)?;
        check_probability("p_B", p_b)?;
        let hi = p_a.min(p_b);
        // At degenerate corners the window collapses to a point and
        // floating-point dust can push lo a few ulp past hi.
        let lo = (p_a + p_b - 1.0).max(0.0).min(hi);
        if p_joint < lo - FEASIBILITY_TOLERANCE || p_joint > hi + FEASIBILITY_TOLERANCE {
            return Err(ToyError::InfeasibleJoint { p_joint, lo, hi });
        }
        // Absorb floating-point dust from the rho parameterization.
        Ok(Self {
            p_a,
            p_b,
            p_joint: p_joint.clamp(lo, hi),
        })
    }

    pub fn p_a(&self) -> f64 {
        self.p_a
    }

    pub fn p_b(&self) -> f64 {
        self.p_b
    }

    /// `P(A and B)`.
    pub fn p_joint(&self) -> f64 {
        self.p_joint
    }

    /// `P(B | A)`; zero when A never fires.
    pub fn p_b_given_a(&self) -> f64 {
        if self.p_a == 0.0 {
            0.0
        } else {
            self.p_joint / self.p_a
        }
    }

    /// Pearson correlation between the boolean indicators; zero when
    /// either marginal is degenerate.
    pub fn rho(&self) -> f64 {
        let denom = (self.p_a * (1.0 - self.p_a) * self.p_b * (1.0 - self.p_b)).sqrt();
        if denom == 0.0 {
            0.0
        } else {
            (self.p_joint - self.p_a * self.p_b) / denom
        }
    }

    /// Probabilities of the four outcomes (both, a only, b only, neither).
    pub fn outcome_probabilities(&self) -> [f64; 4] {
        let both = self.p_joint;
        let a_only = self.p_a - both;
        let b_only = self.p_b - both;
        let neither = (1.0 - self.p_a - self.p_b + both).max(0.0);
        [both, a_only, b_only, neither]
    }
}

// ---------------------------------------------------------------------------
// Coding comparisons
// ---------------------------------------------------------------------------

/// Which coding scheme a comparison prefers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preferred {
    Scheme1,
    Scheme2,
    Tie,
}

/// Side-by-side sparsity and description length of two coding schemes.
///
/// For [`split_analysis`], scheme 1 codes the marginals (no splitting)
/// and scheme 2 the three mutually exclusive features. For
/// [`hier_analysis`], scheme 1 is the flat mutually exclusive code and
/// scheme 2 the parent-conditional one; `l0_scheme2_expected_count`
/// then carries the expected-nonzero-count reading of the hierarchical
/// sparsity alongside the conventional `p_A + p_B_given_A` figure.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CodingComparison {
    pub l0_scheme1: f64,
    pub dl_scheme1: f64,
    pub l0_scheme2: f64,
    pub dl_scheme2: f64,
    pub l0_scheme2_expected_count: Option<f64>,
    pub preferred: Preferred,
}

fn prefer(dl1: f64, dl2: f64) -> Preferred {
    if (dl1 - dl2).abs() <= TIE_TOLERANCE {
        Preferred::Tie
    } else if dl1 < dl2 {
        Preferred::Scheme1
    } else {
        Preferred::Scheme2
    }
}

fn entropy(p: f64) -> f64 {
    bernoulli_entropy(p).expect("probability validated by ToyWorld")
}

/// Compares coding A and B as-is against splitting into the three
/// mutually exclusive features A-only, B-only, and A-and-B.
pub fn split_analysis(world: &ToyWorld) -> CodingComparison {
    let [both, a_only, b_only, _] = world.outcome_probabilities();
    let l0_no_split = world.p_a() + world.p_b();
    let dl_no_split = entropy(world.p_a()) + entropy(world.p_b());
    let l0_split = world.p_a() + world.p_b() - both;
    let dl_split = entropy(a_only) + entropy(b_only) + entropy(both);
    CodingComparison {
        l0_scheme1: l0_no_split,
        dl_scheme1: dl_no_split,
        l0_scheme2: l0_split,
        dl_scheme2: dl_split,
        l0_scheme2_expected_count: None,
        preferred: prefer(dl_no_split, dl_split),
    }
}

/// True when splitting strictly lowers the expected nonzero count,
/// which holds exactly when `P(A and B) > 0`.
pub fn split_l0_dominance_check(world: &ToyWorld) -> bool {
    let cmp = split_analysis(world);
    cmp.l0_scheme2 < cmp.l0_scheme1
}

/// Compares the flat mutually exclusive code (Bird, Generic-Animal)
/// against the parent-conditional hierarchical code.
///
/// Requires a nested world (`B` implies `A`).
pub fn hier_analysis(world: &ToyWorld) -> Result<CodingComparison, ToyError> {
    if world.p_b() > world.p_a() {
        return Err(ToyError::ChildExceedsParent {
            p_a: world.p_a(),
            p_b: world.p_b(),
        });
    }
    if (world.p_joint() - world.p_b()).abs() > FEASIBILITY_TOLERANCE {
        return Err(ToyError::NotNested {
            p_b: world.p_b(),
            p_joint: world.p_joint(),
        });
    }
    let p_a = world.p_a();
    let p_b = world.p_b();
    let p_b_given_a = world.p_b_given_a();
    let dl_flat = entropy(p_a - p_b) + entropy(p_b);
    let dl_hier = entropy(p_a) + p_a * entropy(p_b_given_a);
    Ok(CodingComparison {
        l0_scheme1: p_a,
        dl_scheme1: dl_flat,
        l0_scheme2: p_a + p_b_given_a,
        dl_scheme2: dl_hier,
        l0_scheme2_expected_count: Some(p_a + p_b),
        preferred: prefer(dl_flat, dl_hier),
    })
}

// ---------------------------------------------------------------------------
// Phase boundary
// ---------------------------------------------------------------------------

/// Boundary correlation for one grid point of the symmetric split model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BoundaryPoint {
    pub p: f64,
    /// Root of `DL_split(rho) - DL_no_split` on `[0, 1]`; `None` when the
    /// difference does not change sign there.
    pub rho_star: Option<f64>,
}

/// Finds, for each `p` in the grid (with `p_A = p_B = p`), the
/// correlation above which feature splitting has the shorter code.
/// Bisection on `rho` in `[0, 1]` to absolute tolerance `tol`.
pub fn split_phase_boundary(p_grid: &[f64], tol: f64) -> Result<Vec<BoundaryPoint>, ToyError> {
    if !(tol > 0.0) {
        return Err(ToyError::InvalidTolerance { value: tol });
    }
    for &p in p_grid {
        if !(p > 0.0 && p < 1.0) {
            return Err(ToyError::GridPointOutOfRange { value: p });
        }
    }
    let dl_gap = |p: f64, rho: f64| -> f64 {
        let world = ToyWorld::split(p, p, rho).expect("rho in [0,1] keeps the joint feasible");
        let cmp = split_analysis(&world);
        cmp.dl_scheme2 - cmp.dl_scheme1
    };
    Ok(p_grid
        .iter()
        .map(|&p| {
            let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
            let (f_lo, f_hi) = (dl_gap(p, lo), dl_gap(p, hi));
            if f_lo == 0.0 {
                return BoundaryPoint { p, rho_star: Some(lo) };
            }
            if f_hi == 0.0 {
                return BoundaryPoint { p, rho_star: Some(hi) };
            }
            if f_lo.signum() == f_hi.signum() {
                return BoundaryPoint { p, rho_star: None };
            }
            // 64 halvings take the bracket far below any sane tolerance.
            for _ in 0..64 {
                if hi - lo <= tol {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let f_mid = dl_gap(p, mid);
                if f_mid == 0.0 {
                    return BoundaryPoint { p, rho_star: Some(mid) };
                }
                if f_mid.signum() == f_lo.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            BoundaryPoint {
                p,
                rho_star: Some(0.5 * (lo + hi)),
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Enumeration oracle
// ---------------------------------------------------------------------------

/// Boolean function of the two world features usable as a dictionary
/// feature in a coding scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoolFeature {
    A,
    B,
    AAndB,
    AOnly,
    BOnly,
}

impl BoolFeature {
    fn eval(self, a: bool, b: bool) -> bool {
        match self {
            Self::A => a,
            Self::B => b,
            Self::AAndB => a && b,
            Self::AOnly => a && !b,
            Self::BOnly => b && !a,
        }
    }
}

/// One dictionary feature of a coding scheme, optionally conditioned on
/// a parent feature (by index into the scheme).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchemeFeature {
    pub feature: BoolFeature,
    pub parent: Option<usize>,
}

/// A set of boolean dictionary features with optional parent links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodingScheme {
    pub features: Vec<SchemeFeature>,
}

impl CodingScheme {
    /// Marginal features A and B, coded independently.
    pub fn no_split() -> Self {
        Self {
            features: vec![
                SchemeFeature { feature: BoolFeature::A, parent: None },
                SchemeFeature { feature: BoolFeature::B, parent: None },
            ],
        }
    }

    /// Three mutually exclusive features A-only, B-only, A-and-B.
    pub fn split() -> Self {
        Self {
            features: vec![
                SchemeFeature { feature: BoolFeature::AOnly, parent: None },
                SchemeFeature { feature: BoolFeature::BOnly, parent: None },
                SchemeFeature { feature: BoolFeature::AAndB, parent: None },
            ],
        }
    }

    /// Flat code for nested features: Bird and Generic-Animal.
    pub fn hierarchical_flat() -> Self {
        Self {
            features: vec![
                SchemeFeature { feature: BoolFeature::AOnly, parent: None },
                SchemeFeature { feature: BoolFeature::B, parent: None },
            ],
        }
    }

    /// Parent-conditional code: A root, B coded only when A fires.
    pub fn hierarchical() -> Self {
        Self {
            features: vec![
                SchemeFeature { feature: BoolFeature::A, parent: None },
                SchemeFeature { feature: BoolFeature::B, parent: Some(0) },
            ],
        }
    }
}

/// Exact description length of a coding scheme, in bits per sample,
/// by enumeration of the four `(A, B)` outcomes — no sampling.
///
/// Root features cost their Bernoulli entropy; children cost
/// `P(parent) * H(child | parent active)`, zero when the parent never
/// fires. Errors if a child can fire without its parent.
pub fn enumeration_oracle(world: &ToyWorld, scheme: &CodingScheme) -> Result<f64, ToyError> {
    let probs = world.outcome_probabilities();
    let outcomes = [(true, true), (true, false), (false, true), (false, false)];
    let marginal = |f: BoolFeature| -> f64 {
        outcomes
            .iter()
            .zip(probs)
            .filter(|((a, b), _)| f.eval(*a, *b))
            .map(|(_, p)| p)
            .sum()
    };
    let mut total = 0.0;
    for (index, sf) in scheme.features.iter().enumerate() {
        match sf.parent {
            None => {
                total += entropy(marginal(sf.feature));
            }
            Some(parent) => {
                let parent_feature = scheme
                    .features
                    .get(parent)
                    .ok_or(ToyError::UndefinedParent { feature: index, parent })?
                    .feature;
                let p_child_without_parent: f64 = outcomes
                    .iter()
                    .zip(probs)
                    .filter(|((a, b), _)| sf.feature.eval(*a, *b) && !parent_feature.eval(*a, *b))
                    .map(|(_, p)| p)
                    .sum();
                if p_child_without_parent > 0.0 {
                    return Err(ToyError::HierarchyViolation { feature: index, parent });
                }
                let p_parent = marginal(parent_feature);
                if p_parent > 0.0 {
                    let p_child = marginal(sf.feature);
                    total += p_parent * entropy(p_child / p_parent);
                }
            }
        }
    }
    Ok(total)
}
