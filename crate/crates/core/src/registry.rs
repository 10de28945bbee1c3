//! The table of checked claims, one row per diagnostics suite.

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ClaimRow {
    pub suite: &'static str,
    pub claim: &'static str,
    pub statement: &'static str,
}

pub const CLAIMS: &[ClaimRow] = &[
    ClaimRow {
        suite: "lyapunov",
        claim: "lyapunov_drift",
        statement: "L V^k + c_k V^k <= C_k, and L_n W^k_n <= -c_k W^k_n + C_k uniformly in n",
    },
    ClaimRow {
        suite: "kolmogorov",
        claim: "kolmogorov_scaling",
        statement: "E||A(t) - A(s)||_S^8 <= C(T)|t - s|^2",
    },
    ClaimRow {
        suite: "tail_mass",
        claim: "tail_mass",
        statement: "sup_n E sum_{i > N_0} ||A_i(t)||^8 u(i) < delta",
    },
    ClaimRow {
        suite: "box_consistency",
        claim: "box_consistency",
        statement: "E sup_{t in [0,T]} ||A^l_k(t) - A^m_k(t)||^2 <= eps for m, l large",
    },
    ClaimRow {
        suite: "ic_continuity",
        claim: "ic_continuity",
        statement: "||b - a||_S < eta implies E||A^{m,a}_k(t) - A^{m,b}_k(t)||^2 < eps",
    },
    ClaimRow {
        suite: "ergodic",
        claim: "ergodic_decay",
        statement: "|E^a f(A^n(t)) - mu_n(f)| <= K W^k_n(a) exp(-alpha t)",
    },
    ClaimRow {
        suite: "martingale",
        claim: "martingale_residual",
        statement: "f(A_t) - f(A_0) - int_0^t L f(A_u) du is a martingale",
    },
    ClaimRow {
        suite: "tightness",
        claim: "invariant_tightness",
        statement: "mu_n(L_n W^2_n) = 0 and {nu_n} is tight",
    },
    ClaimRow {
        suite: "product_tv",
        claim: "product_tv",
        statement: "product measures of distinct laws have total variation distance tending to 1",
    },
];

pub fn find(suite: &str) -> Option<&'static ClaimRow> {
    CLAIMS.iter().find(|r| r.suite == suite)
}

/// Plain-text table for `list-claims`.
pub fn table() -> String {
    let w = CLAIMS.iter().map(|r| r.suite.len()).max().unwrap_or(0);
    let wc = CLAIMS.iter().map(|r| r.claim.len()).max().unwrap_or(0);
    let mut s = format!("{:w$}  {:wc$}  statement\n", "suite", "claim");
    for r in CLAIMS {
        s.push_str(&format!(
            "{:w$}  {:wc$}  {}\n",
            r.suite, r.claim, r.statement
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SuiteConfig;

    #[test]
    fn every_row_names_a_runnable_suite() {
        assert_eq!(CLAIMS.len(), 9);
        for r in CLAIMS {
            assert_eq!(SuiteConfig::default_for(r.suite).unwrap().name(), r.suite);
        }
    }

    #[test]
    fn lyapunov_row_states_drift_bound() {
        assert!(find("lyapunov")
            .unwrap()
            .statement
            .contains("L V^k + c_k V^k <= C_k"));
    }
}
