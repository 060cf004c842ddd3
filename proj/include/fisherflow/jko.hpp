#pragma once

#include "fisherflow/curves.hpp"
#include "fisherflow/transport.hpp"

namespace fisherflow {

struct JkoConfig {
  double tau = 2.5e-3;
  double epsilon = 1e-3;  // length^2
  int inner_iters = 5000;
  double inner_tol = 1e-10;  // L1 change of the new density between sweeps

  void validate() const;
  nlohmann::json to_json() const;
};

/// Transport term of the entropic scheme,
///   T(mu, nu) = min_pi eps KL(pi | R) - (the same at mu = nu),
/// over couplings of (mu, nu), where R is the entropic self-coupling of the
/// volume measure (the optimal plan of OT_eps(m, m), so it carries the factor
/// exp(-C / eps)). R makes the uniform density a fixed point; the subtracted
/// term is constant in mu and makes T(nu, nu) = 0. Computed here with the
/// dense solver from the transport module.
double jko_transport_cost(const Density& mu, const Density& nu, const CostTable& cost, double eps,
                          const SinkhornConfig& cfg);

/// One step: argmin_mu jko_transport_cost(mu, rho_n) / (2 tau) + H(mu), by
/// alternating scaling sweeps on a truncated sparse kernel. The entropy's
/// proximal map is mu = q^(1/(1+g)) m^(g/(1+g)) with g = 2 tau / eps.
Density jko_step(const Density& rho_n, const CostTable& cost, const JkoConfig& cfg);

/// Iterates at times n * tau up to T = N * tau. Momenta on each step are
/// -grad of the midpoint density, a reconstruction and not solver output.
Curve jko_curve(const Density& rho0, double T, const CostTable& cost, const JkoConfig& cfg);

}  // namespace fisherflow
