#pragma once

namespace clusterkit {

// Regularized incomplete beta I_x(a,b), continued-fraction evaluation,
// absolute error target 1e-12.
double incomplete_beta(double a, double b, double x);

// Student-t distribution with `dof` degrees of freedom.
double t_cdf(double x, double dof);
double t_quantile(double p, double dof);

// Standard normal.
double normal_cdf(double x);

}  // namespace clusterkit
