#ifndef LMHP_SIMULATE_HPP
#define LMHP_SIMULATE_HPP

// Synthetic ground truth and sampling:
//  - directed scale-free graphs grown by three-case preferential attachment,
//  - truncated-SVD low-rank influence matrices,
//  - Ogata thinning for multivariate exponential Hawkes processes,
//  - time-rescaling residuals and a Kolmogorov-Smirnov check against Exp(1).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lmhp/error.hpp"
#include "lmhp/model.hpp"

namespace lmhp {

/// splitmix64 finalizer; derives independent per-sequence seeds.
inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

struct ScaleFreeOptions {
  double alpha_in = 0.41;   ///< new node -> existing node chosen by in-degree
  double beta_frac = 0.54;  ///< existing (by out-degree) -> existing (by in-degree)
  double gamma_out = 0.05;  ///< existing node chosen by out-degree -> new node
  double delta_in = 0.2;
  double delta_out = 0.0;
};

/// Directed multigraph as an edge list (src, dst). Self-loops and parallel
/// edges are kept; influence_from_graph() collapses them.
struct DirectedGraph {
  std::size_t num_nodes = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;

  std::vector<std::size_t> in_degree() const {
    std::vector<std::size_t> deg(num_nodes, 0);
    for (const auto& e : edges) ++deg[e.second];
    return deg;
  }
  std::vector<std::size_t> out_degree() const {
    std::vector<std::size_t> deg(num_nodes, 0);
    for (const auto& e : edges) ++deg[e.first];
    return deg;
  }
  friend bool operator==(const DirectedGraph&, const DirectedGraph&) = default;
};

/// Grows a directed scale-free graph from the 2-cycle 0 <-> 1 until it has n
/// nodes.
inline DirectedGraph sample_scale_free_graph(std::size_t n, std::uint64_t seed,
                                             const ScaleFreeOptions& opt = {}) {
  if (n < 2) throw InvalidArgument("scale-free graph needs n >= 2");
  if (opt.alpha_in < 0 || opt.beta_frac < 0 || opt.gamma_out < 0 ||
      std::abs(opt.alpha_in + opt.beta_frac + opt.gamma_out - 1.0) > 1e-9)
    throw InvalidArgument("alpha_in + beta_frac + gamma_out must equal 1");
  if (opt.delta_in < 0 || opt.delta_out < 0) throw InvalidArgument("delta must be non-negative");
  if (opt.alpha_in + opt.gamma_out <= 0) throw InvalidArgument("graph cannot grow when alpha_in + gamma_out = 0");

  DirectedGraph g;
  g.num_nodes = 2;
  g.edges = {{0, 1}, {1, 0}};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // P(node) proportional to degree + delta: pick a uniformly random edge
  // endpoint with probability |E| / (|E| + delta N), else a uniform node.
  auto choose = [&](bool by_in, double delta) -> std::uint32_t {
    const double edges = static_cast<double>(g.edges.size());
    const double total = edges + delta * static_cast<double>(g.num_nodes);
    const double r = unit(rng) * total;
    if (r < edges) {
      const auto& e = g.edges[std::min(g.edges.size() - 1, static_cast<std::size_t>(r))];
      return by_in ? e.second : e.first;
    }
    const auto node = static_cast<std::size_t>((r - edges) / delta);
    return static_cast<std::uint32_t>(std::min(node, g.num_nodes - 1));
  };

  while (g.num_nodes < n) {
    const double r = unit(rng);
    std::uint32_t src, dst;
    if (r < opt.alpha_in) {
      dst = choose(true, opt.delta_in);
      src = static_cast<std::uint32_t>(g.num_nodes++);
    } else if (r < opt.alpha_in + opt.beta_frac) {
      src = choose(false, opt.delta_out);
      dst = choose(true, opt.delta_in);
    } else {
      src = choose(false, opt.delta_out);
      dst = static_cast<std::uint32_t>(g.num_nodes++);
    }
    g.edges.emplace_back(src, dst);
  }
  return g;
}

/// Dense non-negative influence matrix; values[x * n + y] = alpha_xy, the
/// excitation events at y cause on x.
struct InfluenceMatrix {
  std::size_t n = 0;
  std::vector<double> values;
  double spectral_note = 0.0;  ///< largest |eigenvalue| at construction/rescale time

  double at(std::size_t x, std::size_t y) const { return values[x * n + y]; }

  Eigen::MatrixXd to_eigen() const {
    Eigen::MatrixXd m(n, n);
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t y = 0; y < n; ++y) m(x, y) = at(x, y);
    return m;
  }
  static InfluenceMatrix from_eigen(const Eigen::MatrixXd& m) {
    InfluenceMatrix out;
    out.n = static_cast<std::size_t>(m.rows());
    out.values.resize(out.n * out.n);
    for (std::size_t x = 0; x < out.n; ++x)
      for (std::size_t y = 0; y < out.n; ++y) out.values[x * out.n + y] = m(x, y);
    return out;
  }
};

inline double spectral_radius(const InfluenceMatrix& m) {
  if (m.n == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(m.to_eigen(), false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

/// 0/1 adjacency: an edge src -> dst means events at src excite dst.
inline InfluenceMatrix influence_from_graph(const DirectedGraph& g) {
  InfluenceMatrix m;
  m.n = g.num_nodes;
  m.values.assign(m.n * m.n, 0.0);
  for (const auto& [src, dst] : g.edges) m.values[dst * m.n + src] = 1.0;
  m.spectral_note = spectral_radius(m);
  return m;
}

/// Rank-k truncated SVD with negative entries clamped to zero.
inline InfluenceMatrix low_rank_approximation(const InfluenceMatrix& m, std::size_t k) {
  if (k == 0 || k > m.n) throw InvalidArgument("rank must be in [1, n]");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m.to_eigen(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto kk = static_cast<Eigen::Index>(k);
  Eigen::MatrixXd approx = svd.matrixU().leftCols(kk) * svd.singularValues().head(kk).asDiagonal() *
                           svd.matrixV().leftCols(kk).transpose();
  InfluenceMatrix out = InfluenceMatrix::from_eigen(approx.cwiseMax(0.0));
  out.spectral_note = spectral_radius(out);
  return out;
}

/// Scales m down so that spectral_radius(m) / beta <= target.
inline InfluenceMatrix rescale_for_stability(InfluenceMatrix m, double beta, double target = 0.8) {
  const double radius = spectral_radius(m);
  if (radius / beta > target) {
    const double scale = target * beta / radius;
    for (double& v : m.values) v *= scale;
  }
  m.spectral_note = spectral_radius(m);
  return m;
}

/// Ground-truth parameters of a (non-factorized) exponential MHP.
struct HawkesTruth {
  std::vector<double> mu;
  double beta = 1.0;
  InfluenceMatrix alpha;

  std::size_t num_entities() const { return mu.size(); }
  double baseline(std::size_t x) const { return mu[x]; }
  double influence(std::size_t x, std::size_t y) const { return alpha.at(x, y); }
};

inline void check_stability(const HawkesTruth& truth) {
  if (truth.alpha.n != truth.mu.size()) throw InvalidArgument("mu and alpha sizes differ");
  if (!(truth.beta > 0.0)) throw InvalidArgument("beta must be positive");
  for (double m : truth.mu)
    if (!(m >= 0.0)) throw InvalidArgument("mu must be non-negative");
  for (double a : truth.alpha.values)
    if (!(a >= 0.0)) throw InvalidArgument("alpha must be non-negative");
  const double branching = spectral_radius(truth.alpha) / truth.beta;
  if (!(branching < 1.0))
    throw UnstableConfiguration("spectral radius of alpha/beta is " + std::to_string(branching) +
                                " >= 1; expected event count diverges");
}

/// Ogata thinning on [0, horizon]. The caller is responsible for stability
/// (see check_stability); `max_events` bounds runaway samples.
inline Sequence thinning_sample_unchecked(const HawkesTruth& truth, double horizon, std::uint64_t seed,
                                          std::size_t max_events = 10'000'000) {
  if (!(horizon > 0.0)) throw InvalidArgument("horizon must be positive");
  const std::size_t n = truth.num_entities();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double mu_sum = 0.0;
  for (double m : truth.mu) mu_sum += m;
  std::vector<double> excitation(n, 0.0);
  std::vector<Event> events;
  double now = 0.0;
  for (;;) {
    double exc_sum = 0.0;
    for (double e : excitation) exc_sum += e;
    // Total intensity only decays until the next event: it bounds the future.
    const double bound = mu_sum + exc_sum;
    if (!(bound > 0.0)) break;
    const double dt = -std::log1p(-unit(rng)) / bound;
    const double t = now + dt;
    if (t > horizon) break;
    const double decay = std::exp(-truth.beta * dt);
    for (double& e : excitation) e *= decay;
    now = t;
    // One uniform both accepts (r < lambda(t)) and selects the entity.
    const double r = unit(rng) * bound;
    double cumulative = 0.0;
    std::size_t chosen = n;
    for (std::size_t x = 0; x < n; ++x) {
      cumulative += truth.mu[x] + excitation[x];
      if (r < cumulative) {
        chosen = x;
        break;
      }
    }
    if (chosen == n) continue;
    if (!events.empty() && !(events.back().time < t)) continue;
    events.push_back({static_cast<EntityId>(chosen), t});
    if (events.size() > max_events)
      throw UnstableConfiguration("thinning exceeded " + std::to_string(max_events) + " events");
    for (std::size_t x = 0; x < n; ++x) excitation[x] += truth.alpha.at(x, chosen);
  }
  return Sequence(std::move(events), horizon);
}

inline Sequence thinning_sample(const HawkesTruth& truth, double horizon, std::uint64_t seed) {
  check_stability(truth);
  return thinning_sample_unchecked(truth, horizon, seed);
}

inline Sequence thinning_sample(std::vector<double> mu, double beta, InfluenceMatrix alpha, double horizon,
                                std::uint64_t seed) {
  return thinning_sample(HawkesTruth{std::move(mu), beta, std::move(alpha)}, horizon, seed);
}

/// Samples `num_sequences` independent sequences; sequence i uses
/// derive_seed(seed, i), so the result does not depend on `threads`.
inline Dataset simulate_dataset(const HawkesTruth& truth, std::size_t num_sequences, double horizon,
                                std::uint64_t seed, std::size_t threads = 1) {
  check_stability(truth);
  std::vector<Sequence> seqs(num_sequences);
  threads = std::max<std::size_t>(1, std::min(threads, num_sequences));
  auto work = [&](std::size_t tid) {
    for (std::size_t i = tid; i < num_sequences; i += threads)
      seqs[i] = thinning_sample_unchecked(truth, horizon, derive_seed(seed, i));
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
  }
  return Dataset(truth.num_entities(), std::move(seqs));
}

/// Ground truth for the synthetic protocol: scale-free adjacency (optionally
/// rank-reduced), rescaled to spectral radius <= 0.8 beta, constant baseline.
inline HawkesTruth make_synthetic_truth(std::size_t nodes, double beta, double mu, std::size_t rank,
                                        std::uint64_t seed, const ScaleFreeOptions& opt = {}) {
  if (!(beta > 0.0) || !(mu >= 0.0)) throw InvalidArgument("beta must be positive and mu non-negative");
  InfluenceMatrix adjacency = influence_from_graph(sample_scale_free_graph(nodes, seed, opt));
  if (rank > 0 && rank < nodes) adjacency = low_rank_approximation(adjacency, rank);
  HawkesTruth truth;
  truth.mu.assign(nodes, mu);
  truth.beta = beta;
  truth.alpha = rescale_for_stability(std::move(adjacency), beta);
  return truth;
}

/// Materializes the factorized model as dense ground-truth-style parameters.
inline HawkesTruth to_truth(const ModelParams& p) {
  HawkesTruth t;
  t.mu.resize(p.num_entities);
  t.beta = p.beta();
  t.alpha.n = p.num_entities;
  t.alpha.values.resize(p.num_entities * p.num_entities);
  for (EntityId x = 0; x < p.num_entities; ++x) {
    t.mu[x] = p.mu(x);
    for (EntityId y = 0; y < p.num_entities; ++y) t.alpha.values[x * p.num_entities + y] = alpha(p, x, y);
  }
  return t;
}

namespace detail {

template <class Model>
std::vector<double> rescaled_increments(const Model& model, const Sequence& h,
                                        const std::vector<double>& column_sums, double mu_sum,
                                        double beta) {
  std::vector<double> out;
  out.reserve(h.size());
  double excitation = 0.0;  // total excitation just after the previous event
  double prev = 0.0;
  for (const Event& e : h.events()) {
    const double dt = e.time - prev;
    const double decay = std::exp(-beta * dt);
    out.push_back(mu_sum * dt + excitation / beta * -std::expm1(-beta * dt));
    excitation = excitation * decay + column_sums[e.entity];
    prev = e.time;
  }
  (void)model;
  return out;
}

}  // namespace detail

/// Compensator increments of the pooled (all-entity) process between
/// consecutive events, Lambda(t_i) - Lambda(t_{i-1}) with t_0 = 0. Under the
/// true model they are i.i.d. Exp(1).
inline std::vector<double> time_rescaling_residuals(const HawkesTruth& truth, const Sequence& h) {
  const std::size_t n = truth.num_entities();
  std::vector<double> columns(n, 0.0);
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t y = 0; y < n; ++y) columns[y] += truth.influence(x, y);
  double mu_sum = 0.0;
  for (double m : truth.mu) mu_sum += m;
  return detail::rescaled_increments(truth, h, columns, mu_sum, truth.beta);
}

inline std::vector<double> time_rescaling_residuals(const ModelParams& p, const Sequence& h) {
  // column sum of alpha: u_hat . v_y - u_y . v_y + phi(theta_self_y)
  std::vector<double> u_hat(p.dim, 0.0);
  for (EntityId x = 0; x < p.num_entities; ++x)
    for (std::size_t k = 0; k < p.dim; ++k) u_hat[k] += p.u(x, k);
  std::vector<double> columns(p.num_entities);
  double mu_sum = 0.0;
  for (EntityId y = 0; y < p.num_entities; ++y) {
    double c = p.self_excitation(y);
    for (std::size_t k = 0; k < p.dim; ++k) c += (u_hat[k] - p.u(y, k)) * p.v(y, k);
    columns[y] = c;
    mu_sum += p.mu(y);
  }
  return detail::rescaled_increments(p, h, columns, mu_sum, p.beta());
}

/// Kolmogorov-Smirnov distance between the sample and Exp(1).
inline double ks_statistic_exponential(std::vector<double> sample) {
  if (sample.empty()) throw InvalidArgument("KS statistic of an empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double cdf = -std::expm1(-sample[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - cdf, cdf - static_cast<double>(i) / n});
  }
  return d;
}

/// Critical value of the one-sample KS test (Stephens' finite-n correction of
/// the asymptotic Kolmogorov quantile).
inline double ks_critical_value(std::size_t n, double significance = 0.01) {
  const double c = std::sqrt(-0.5 * std::log(significance / 2.0));
  const double rn = std::sqrt(static_cast<double>(n));
  return c / (rn + 0.12 + 0.11 / rn);
}

}  // namespace lmhp

#endif  // LMHP_SIMULATE_HPP
