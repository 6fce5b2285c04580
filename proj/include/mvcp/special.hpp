#ifndef MVCP_SPECIAL_HPP
#define MVCP_SPECIAL_HPP

namespace mvcp {

// ln C(n, k). Log-gamma based, with a direct log-sum path for small k where
// the lgamma difference would lose relative accuracy. Accurate to better
// than 1e-10 relative for n up to 1e6. Throws DomainError if k > n.
double log_binomial(long n, long k);

// Regularized incomplete beta function I_x(a, b), continued-fraction
// evaluation (modified Lentz) with the symmetry I_x(a,b) = 1 - I_{1-x}(b,a).
// Absolute accuracy ~1e-12. Throws DomainError outside x in [0,1], a,b > 0.
double reg_inc_beta(double x, double a, double b);

// ln B(a, b)
double log_beta(double a, double b);

}  // namespace mvcp

#endif  // MVCP_SPECIAL_HPP
