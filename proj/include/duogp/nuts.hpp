#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "duogp/errors.hpp"
#include "duogp/rng.hpp"
#include "duogp/types.hpp"

namespace duogp {

struct ChainSchedule {
  int total_iterations = 5000;
  int burn_in = 2000;
  int thin = 100;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  bool adapt_mass = true;  // estimate a diagonal metric from mid-burn-in draws

  [[nodiscard]] int retained_draws() const { return (total_iterations - burn_in) / thin; }
};

// Log density and gradient evaluated together: returns log p(x), fills grad.
using LogDensityGrad = std::function<double(const Vector&, Vector&)>;

struct NutsResult {
  std::vector<Vector> draws;        // thinned post-burn-in draws
  std::vector<Vector> post_burnin;  // every post-burn-in draw (kept on request)
  double step_size = 0.0;           // final (dual-averaged) step size
  double mean_accept = 0.0;         // post-burn-in mean acceptance statistic
  int divergences = 0;              // post-burn-in divergent iterations
  int initialization_retries = 0;
};

namespace detail {

struct Phase {
  Vector q;     // position
  Vector p;     // momentum
  Vector grad;  // gradient of log density at q
  double logp = 0.0;
};

// No-U-Turn tree sampler (multiplicative doubling with a slice variable) and
// dual-averaging step-size adaptation toward a target acceptance statistic.
class NutsChain {
 public:
  NutsChain(const LogDensityGrad& target, const ChainSchedule& sched, RngStream rng)
      : target_(target), sched_(sched), rng_(rng) {}

  NutsResult run(const Vector& init, bool keep_post_burnin) {
    NutsResult out;
    Vector q = init;
    Vector grad(init.size());
    inv_mass_ = Vector::Ones(init.size());
    double logp = target_(q, grad);
    // Jittered restarts if the requested starting point has no density.
    int retries = 0;
    while (!std::isfinite(logp) && retries < 100) {
      q = init;
      for (int i = 0; i < q.size(); ++i) q(i) += 0.1 * rng_.normal();
      logp = target_(q, grad);
      ++retries;
    }
    if (!std::isfinite(logp))
      throw InitializationFailure("no finite log density near the requested start");
    out.initialization_retries = retries;

    double eps = reasonable_step_size(q, grad, logp);
    // Dual averaging state; the iteration counter restarts if the metric changes.
    double mu = std::log(10.0 * eps);
    const double da_gamma = 0.05, t0 = 10.0, kappa = 0.75;
    double log_eps_bar = 0.0, h_bar = 0.0;
    int da_m = 0;

    // Diagonal metric estimated from the middle half of burn-in.
    const int win_start = sched_.burn_in / 4;
    const int win_end = 3 * sched_.burn_in / 4;
    Vector w_mean, w_m2;
    int w_n = 0;

    double accept_sum = 0.0;
    int accept_count = 0;

    for (int m = 1; m <= sched_.total_iterations; ++m) {
      IterationStats stats;
      sample_iteration(q, grad, logp, eps, stats);

      if (m <= sched_.burn_in) {
        ++da_m;
        double frac = 1.0 / (da_m + t0);
        h_bar = (1.0 - frac) * h_bar + frac * (sched_.target_accept - stats.accept_stat);
        double log_eps = mu - std::sqrt(static_cast<double>(da_m)) / da_gamma * h_bar;
        double w = std::pow(static_cast<double>(da_m), -kappa);
        log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
        eps = std::exp(log_eps);
        if (sched_.adapt_mass && m > win_start && m <= win_end) {
          if (w_n == 0) {
            w_mean = Vector::Zero(q.size());
            w_m2 = Vector::Zero(q.size());
          }
          ++w_n;
          Vector delta = q - w_mean;
          w_mean += delta / w_n;
          w_m2 += delta.cwiseProduct(q - w_mean);
          if (m == win_end && w_n >= 10) {
            for (int i = 0; i < q.size(); ++i) {
              double var = w_m2(i) / (w_n - 1);
              if (!std::isfinite(var) || var <= 0.0) var = 1.0;
              // Shrink toward a small constant so short windows stay stable.
              inv_mass_(i) =
                  (w_n / (w_n + 5.0)) * var + (5.0 / (w_n + 5.0)) * 1e-3;
            }
            eps = reasonable_step_size(q, grad, logp);
            mu = std::log(10.0 * eps);
            log_eps_bar = 0.0;
            h_bar = 0.0;
            da_m = 0;
          }
        }
        if (m == sched_.burn_in) eps = std::exp(log_eps_bar);
      } else {
        accept_sum += stats.accept_stat;
        ++accept_count;
        if (stats.divergent) ++out.divergences;
        int k = m - sched_.burn_in;
        if (keep_post_burnin) out.post_burnin.push_back(q);
        if (sched_.thin > 0 && k % sched_.thin == 0) out.draws.push_back(q);
      }
    }
    out.step_size = eps;
    out.mean_accept = accept_count > 0 ? accept_sum / accept_count : 0.0;
    return out;
  }

 private:
  struct IterationStats {
    double accept_stat = 0.0;
    bool divergent = false;
  };

  struct Tree {
    Phase minus, plus;  // trajectory endpoints
    Vector proposal;
    double proposal_logp = 0.0;
    Vector proposal_grad;
    double n = 0.0;  // slice-admissible states in the subtree
    bool cont = true;
    double alpha = 0.0;  // acceptance-statistic accumulator
    int n_alpha = 0;
    bool divergent = false;
  };

  static constexpr double kDeltaMax = 1000.0;

  [[nodiscard]] double joint(const Phase& z) const {
    return z.logp - 0.5 * z.p.dot(inv_mass_.cwiseProduct(z.p));
  }

  void draw_momentum(Phase& z) {
    z.p.resize(z.q.size());
    for (int i = 0; i < z.p.size(); ++i)
      z.p(i) = rng_.normal() / std::sqrt(inv_mass_(i));
  }

  void leapfrog(Phase& z, double dir_eps) const {
    z.p += 0.5 * dir_eps * z.grad;
    z.q += dir_eps * inv_mass_.cwiseProduct(z.p);
    z.logp = target_(z.q, z.grad);
    if (!std::isfinite(z.logp)) {
      z.logp = -std::numeric_limits<double>::infinity();
      z.grad.setZero();
    }
    z.p += 0.5 * dir_eps * z.grad;
  }

  // Heuristic initial step size: doubled/halved until one leapfrog step moves
  // the joint density across the 1/2 acceptance boundary.
  double reasonable_step_size(const Vector& q, const Vector& grad, double logp) {
    double eps = 1.0;
    Phase z0;
    z0.q = q;
    z0.grad = grad;
    z0.logp = logp;
    draw_momentum(z0);
    double joint0 = joint(z0);

    auto step_ratio = [&](double e) {
      Phase z = z0;
      leapfrog(z, e);
      double j = joint(z);
      return std::isfinite(j) ? j - joint0 : -std::numeric_limits<double>::infinity();
    };
    double a = step_ratio(eps) > std::log(0.5) ? 1.0 : -1.0;
    for (int it = 0; it < 100; ++it) {
      if (a * step_ratio(eps) <= -a * std::log(2.0)) break;
      eps *= std::pow(2.0, a);
      if (eps > 1e7 || eps < 1e-10) break;
    }
    return eps;
  }

  void sample_iteration(Vector& q, Vector& grad, double& logp, double eps,
                        IterationStats& stats) {
    Phase init;
    init.q = q;
    init.grad = grad;
    init.logp = logp;
    draw_momentum(init);
    joint0_ = joint(init);
    log_u_ = joint0_ - rng_.exponential();

    Phase minus = init, plus = init;
    Vector sample_q = q;
    double sample_logp = logp;
    Vector sample_grad = grad;
    double n = 1.0;
    bool cont = true;
    double alpha_sum = 0.0;
    int n_alpha = 0;
    bool divergent = false;

    for (int depth = 0; cont && depth < sched_.max_tree_depth; ++depth) {
      double dir = rng_.uniform01() < 0.5 ? -1.0 : 1.0;
      Tree sub;
      if (dir < 0) {
        build_tree(minus, depth, -eps, sub);
        minus = sub.minus;
      } else {
        build_tree(plus, depth, eps, sub);
        plus = sub.plus;
      }
      alpha_sum += sub.alpha;
      n_alpha += sub.n_alpha;
      divergent = divergent || sub.divergent;
      if (sub.cont && sub.n > 0.0 && rng_.uniform01() < sub.n / n) {
        sample_q = sub.proposal;
        sample_logp = sub.proposal_logp;
        sample_grad = sub.proposal_grad;
      }
      n += sub.n;
      cont = sub.cont && no_u_turn(minus, plus);
    }
    q = sample_q;
    logp = sample_logp;
    grad = sample_grad;
    stats.accept_stat = n_alpha > 0 ? alpha_sum / n_alpha : 0.0;
    stats.divergent = divergent;
  }

  [[nodiscard]] bool no_u_turn(const Phase& minus, const Phase& plus) const {
    Vector dq = plus.q - minus.q;
    return dq.dot(inv_mass_.cwiseProduct(minus.p)) >= 0.0 &&
           dq.dot(inv_mass_.cwiseProduct(plus.p)) >= 0.0;
  }

  void build_tree(const Phase& from, int depth, double dir_eps, Tree& tree) {
    if (depth == 0) {
      Phase z = from;
      leapfrog(z, dir_eps);
      double j = joint(z);
      tree.minus = z;
      tree.plus = z;
      tree.proposal = z.q;
      tree.proposal_logp = z.logp;
      tree.proposal_grad = z.grad;
      tree.n = (log_u_ <= j) ? 1.0 : 0.0;
      tree.cont = log_u_ < j + kDeltaMax;
      tree.divergent = !tree.cont;
      double la = j - joint0_;
      tree.alpha = la > 0.0 ? 1.0 : std::exp(std::isfinite(la) ? la : -750.0);
      tree.n_alpha = 1;
      return;
    }
    build_tree(from, depth - 1, dir_eps, tree);
    if (!tree.cont) return;
    Tree second;
    if (dir_eps < 0) {
      build_tree(tree.minus, depth - 1, dir_eps, second);
      tree.minus = second.minus;
    } else {
      build_tree(tree.plus, depth - 1, dir_eps, second);
      tree.plus = second.plus;
    }
    double total = tree.n + second.n;
    if (total > 0.0 && rng_.uniform01() < second.n / total) {
      tree.proposal = second.proposal;
      tree.proposal_logp = second.proposal_logp;
      tree.proposal_grad = second.proposal_grad;
    }
    tree.alpha += second.alpha;
    tree.n_alpha += second.n_alpha;
    tree.divergent = tree.divergent || second.divergent;
    tree.n = total;
    tree.cont = second.cont && no_u_turn(tree.minus, tree.plus);
  }

  const LogDensityGrad& target_;
  const ChainSchedule& sched_;
  RngStream rng_;
  Vector inv_mass_;
  double joint0_ = 0.0;
  double log_u_ = 0.0;
};

}  // namespace detail

// Runs one No-U-Turn chain from `init` under `schedule`.  Step size is tuned
// during burn-in by dual averaging; a diagonal mass matrix is estimated from
// the middle half of burn-in (identity until then, or throughout when
// schedule.adapt_mass is false).  Single chain; draws are deterministic given
// the target, init, schedule and stream.
inline NutsResult nuts_run(const LogDensityGrad& target, const Vector& init,
                           const ChainSchedule& schedule, RngStream rng,
                           bool keep_post_burnin = false) {
  if (schedule.total_iterations <= schedule.burn_in)
    throw ConfigError("chain schedule leaves no post-burn-in iterations");
  if (schedule.thin <= 0) throw ConfigError("chain thinning interval must be positive");
  detail::NutsChain chain(target, schedule, rng);
  return chain.run(init, keep_post_burnin);
}

}  // namespace duogp
