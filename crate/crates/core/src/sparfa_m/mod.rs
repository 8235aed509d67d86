//! Maximum-likelihood sparse factor analysis by alternating FISTA.

mod fista;
mod solver;

pub use fista::{
    fista, fista_rr1, fista_rr2, fista_trajectory, lipschitz_l1, lipschitz_l2, soft_threshold_nonneg,
    Composite, ColSubproblem, RowSubproblem,
};
pub use solver::{
    bic, bic_select_lambda, fit_sparfa_m, objective, select_min_bic, BicSelection, FitTrace, SparfaMConfig,
};
