// Weighted posterior draws: effective sample size, the conditional noise-path
// extension, the sequential weight update against a two-particle hand
// calculation, and the refresh rule.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "duogp/particles.hpp"

using namespace duogp;
using Catch::Approx;

namespace {

Particle make_particle(double mu0, double sf2, double sv2, double lf, double lv,
                       const Vector& v, double w) {
  Particle p;
  p.state.theta.mu0 = mu0;
  p.state.theta.sigma_f2 = sf2;
  p.state.theta.sigma_v2 = sv2;
  p.state.theta.lf = Vector::Constant(1, lf);
  p.state.theta.lv = Vector::Constant(1, lv);
  p.state.v = v;
  p.weight = w;
  return p;
}

}  // namespace

TEST_CASE("effective sample size of normalized weights", "[particles]") {
  ParticleSet set;
  Vector v;
  set.particles.push_back(make_particle(0, 1, 1, 0.5, 0.5, v, 0.5));
  set.particles.push_back(make_particle(0, 1, 1, 0.5, 0.5, v, 0.25));
  set.particles.push_back(make_particle(0, 1, 1, 0.5, 0.5, v, 0.25));
  REQUIRE(ess(set) == Approx(8.0 / 3.0).epsilon(1e-15));

  // Uniform weights give N; a point mass gives 1.
  for (Particle& p : set.particles) p.weight = 1.0 / 3.0;
  REQUIRE(ess(set) == Approx(3.0).epsilon(1e-12));
  set.particles[0].weight = 1.0;
  set.particles[1].weight = 0.0;
  set.particles[2].weight = 0.0;
  REQUIRE(ess(set) == Approx(1.0).epsilon(1e-15));
}

TEST_CASE("path extension draws from each particle's conditional", "[particles]") {
  Matrix X(3, 1);
  X << -1.0, -0.5, 0.0;
  ParticleSet set;
  set.particles.push_back(
      make_particle(-0.2, 1.0, 0.7, 0.4, 0.5, Vector::LinSpaced(3, -0.4, 0.2), 0.6));
  set.particles.push_back(
      make_particle(0.1, 1.5, 0.9, 0.3, 0.6, Vector::LinSpaced(3, 0.3, -0.1), 0.4));
  ParticleSet copy = set;

  DesignPoint x = Vector::Constant(1, -0.25);
  RngStream stream = RngStream(81).derive(3);
  Vector draws = augment_v(set, X, x, KernelFamily::SquaredExponential, stream);

  REQUIRE(draws.size() == 2);
  for (int i = 0; i < 2; ++i) {
    // The appended value is the returned draw...
    REQUIRE(set.particles[i].state.v.size() == 4);
    REQUIRE(set.particles[i].state.v(3) == draws(i));
    // ...and equals mean + sd * z with z the single normal from the
    // particle's sub-stream, per the documented stream contract.
    const Particle& p = copy.particles[i];
    KernelSpec kv{KernelFamily::SquaredExponential, p.state.theta.sigma_v2, p.state.theta.lv};
    PredictiveMoments pm = v_predictive(kv, p.state.theta.mu0, X, p.state.v, x);
    RngStream si = stream.derive(static_cast<std::uint64_t>(i));
    double z = si.normal();
    REQUIRE(draws(i) == Approx(pm.mean + std::sqrt(std::max(0.0, pm.variance)) * z)
                            .epsilon(1e-15));
    // Weights are untouched by augmentation.
    REQUIRE(set.particles[i].weight == copy.particles[i].weight);
  }

  // Consuming the stream elsewhere does not change what a particle receives.
  ParticleSet again = copy;
  RngStream stream2 = RngStream(81).derive(3);
  (void)stream2;  // fresh handle, nothing consumed
  Vector draws2 = augment_v(again, X, x, KernelFamily::SquaredExponential,
                            RngStream(81).derive(3));
  REQUIRE(draws2(0) == draws(0));
  REQUIRE(draws2(1) == draws(1));

  ParticleSet bad = copy;
  bad.particles[0].state.v = Vector::Zero(2);  // wrong path length
  REQUIRE_THROWS_AS(augment_v(bad, X, x, KernelFamily::SquaredExponential, stream),
                    DimensionError);
}

TEST_CASE("weight update matches the two-particle hand calculation", "[particles]") {
  Matrix X(2, 1);
  X << -0.8, -0.2;
  Vector y(2);
  y << 0.5, -0.3;
  ObservationSet data = ObservationSet::initial(X, y);

  ParticleSet set;
  set.particles.push_back(
      make_particle(-0.1, 1.2, 0.8, 0.45, 0.5, Vector::LinSpaced(2, -0.2, 0.1), 0.5));
  set.particles.push_back(
      make_particle(0.2, 0.9, 0.6, 0.35, 0.7, Vector::LinSpaced(2, 0.2, -0.3), 0.5));

  DesignPoint xn = Vector::Constant(1, -0.5);
  RngStream stream(82);
  augment_v(set, X, xn, KernelFamily::SquaredExponential, stream);

  // Hand-computed target weights: w_i' = w_i p_i / sum_j w_j p_j with
  // p_i = N(y_new; mean_i, var_i + exp(v_aug,i)).
  const double y_new = 0.4;
  double p[2];
  for (int i = 0; i < 2; ++i) {
    const Particle& q = set.particles[i];
    KernelSpec kf{KernelFamily::SquaredExponential, q.state.theta.sigma_f2, q.state.theta.lf};
    Vector noise = q.state.v.head(2).array().exp().matrix();
    PredictiveMoments pm = gp_conditional(kf, X, y, 0.0, noise, xn);
    double var = pm.variance + std::exp(q.state.v(2));
    p[i] = std::exp(-0.5 * (y_new - pm.mean) * (y_new - pm.mean) / var) /
           std::sqrt(2.0 * 3.14159265358979323846 * var);
  }
  sis_update(set, data, xn, y_new, KernelFamily::SquaredExponential);
  REQUIRE(set.particles[0].weight == Approx(0.5 * p[0] / (0.5 * p[0] + 0.5 * p[1])).epsilon(1e-12));
  REQUIRE(set.particles[1].weight == Approx(0.5 * p[1] / (0.5 * p[0] + 0.5 * p[1])).epsilon(1e-12));
  REQUIRE(set.particles[0].weight + set.particles[1].weight == Approx(1.0).epsilon(1e-14));
  REQUIRE_FALSE(set.degenerate);

  // A zero-weight particle stays at zero regardless of its likelihood.
  ParticleSet zw;
  zw.particles.push_back(
      make_particle(-0.1, 1.2, 0.8, 0.45, 0.5, Vector::LinSpaced(3, -0.2, 0.1), 0.0));
  zw.particles.push_back(
      make_particle(0.2, 0.9, 0.6, 0.35, 0.7, Vector::LinSpaced(3, 0.2, -0.3), 1.0));
  sis_update(zw, data, xn, y_new, KernelFamily::SquaredExponential);
  REQUIRE(zw.particles[0].weight == 0.0);
  REQUIRE(zw.particles[1].weight == 1.0);
}

TEST_CASE("total underflow resets to uniform and flags degeneracy", "[particles]") {
  Matrix X(2, 1);
  X << -0.8, -0.2;
  Vector y(2);
  y << 0.5, -0.3;
  ObservationSet data = ObservationSet::initial(X, y);
  ParticleSet set;
  // The update works in log space, so merely unlikely observations still
  // renormalize; an overflowing one (squared residual is inf) zeroes every
  // particle and must flag degeneracy instead of dividing by zero.
  set.particles.push_back(
      make_particle(0.0, 1.0, 0.5, 0.4, 0.5, Vector::Constant(3, -50.0), 0.7));
  set.particles.push_back(
      make_particle(0.0, 1.0, 0.5, 0.4, 0.5, Vector::Constant(3, -50.0), 0.3));
  sis_update(set, data, Vector::Constant(1, -0.5), 1e200, KernelFamily::SquaredExponential);
  REQUIRE(set.degenerate);
  REQUIRE(set.particles[0].weight == Approx(0.5));
  REQUIRE(set.particles[1].weight == Approx(0.5));

  // Wrong path length (no appended draw) is a contract violation.
  ParticleSet bad;
  bad.particles.push_back(
      make_particle(0.0, 1.0, 0.5, 0.4, 0.5, Vector::Constant(2, 0.0), 1.0));
  REQUIRE_THROWS_AS(
      sis_update(bad, data, Vector::Constant(1, -0.5), 0.0, KernelFamily::SquaredExponential),
      DimensionError);
}

TEST_CASE("refresh triggers at the threshold or on degeneracy", "[particles]") {
  auto fresh = []() {
    ParticleSet s;
    s.particles.push_back(make_particle(0, 1, 1, 0.5, 0.5, Vector(), 0.5));
    s.particles.push_back(make_particle(0, 1, 1, 0.5, 0.5, Vector(), 0.5));
    return s;
  };
  int calls = 0;
  auto refit = [&]() {
    ++calls;
    return fresh();
  };

  ParticleSet balanced = fresh();  // ESS = 2 = N
  REQUIRE_FALSE(maybe_refresh(balanced, 0.8, refit));
  REQUIRE(calls == 0);
  // tau = 1 refreshes even a perfectly balanced set (ESS <= N always holds).
  REQUIRE(maybe_refresh(balanced, 1.0, refit));
  REQUIRE(calls == 1);

  ParticleSet skewed = fresh();
  skewed.particles[0].weight = 0.95;
  skewed.particles[1].weight = 0.05;  // ESS ~ 1.105
  REQUIRE_FALSE(maybe_refresh(skewed, 0.5, refit));  // threshold 1.0 < ESS
  REQUIRE(maybe_refresh(skewed, 0.6, refit));        // threshold 1.2 >= ESS
  REQUIRE(calls == 2);

  ParticleSet degen = fresh();
  degen.degenerate = true;
  REQUIRE(maybe_refresh(degen, 0.0, refit));  // degeneracy forces it at any tau
  REQUIRE(calls == 3);
  REQUIRE_FALSE(degen.degenerate);  // the refit replaced the set
}
