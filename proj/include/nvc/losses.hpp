#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "nvc/ops.hpp"
#include "nvc/random.hpp"
#include "nvc/tensor.hpp"

namespace nvc {

// ---------------------------------------------------------------------------
// Anchors and per-batch assignment

template <typename T>
struct AnchorSet {
  Tensor<T> anchors;  // m x d, trainable
  uint64_t rng_seed = 0;

  int64_t count() const { return anchors.shape().dim(0); }
  int64_t dim() const { return anchors.shape().dim(1); }
};

// Anchor entries drawn i.i.d. standard normal.
template <typename T>
AnchorSet<T> init_anchors(int64_t m, int64_t d, uint64_t seed) {
  if (m < 1 || d < 1)
    throw std::invalid_argument("init_anchors: m and d must be >= 1, got m=" +
                                std::to_string(m) + " d=" + std::to_string(d));
  Rng rng(seed);
  std::vector<T> data(static_cast<size_t>(m * d));
  rng.fill_normal(data);
  return AnchorSet<T>{Tensor<T>(Shape{m, d}, std::move(data), true), seed};
}

// Nearest-anchor labels for one mini-batch. Recomputed per batch; treated as
// a constant downstream (no gradient through the argmin). Ties take the
// lowest anchor index.
struct Assignment {
  std::vector<int64_t> labels;      // length n, in [0, m)
  std::vector<double> distances_sq; // n x m row-major
  int64_t n = 0;
  int64_t m = 0;

  double distance_sq(int64_t i, int64_t j) const {
    return distances_sq[static_cast<size_t>(i * m + j)];
  }
};

template <typename T>
Assignment assign_anchors(const Tensor<T>& features, const AnchorSet<T>& anchors) {
  if (features.shape().rank() != 2)
    throw std::invalid_argument("assign_anchors: features must be rank-2, got " +
                                features.shape().str());
  const int64_t n = features.shape().dim(0), d = features.shape().dim(1);
  const int64_t m = anchors.count();
  if (d != anchors.dim())
    throw std::invalid_argument(
        "assign_anchors: feature dim " + std::to_string(d) +
        " != anchor dim " + std::to_string(anchors.dim()));
  Assignment out;
  out.n = n;
  out.m = m;
  out.labels.resize(static_cast<size_t>(n));
  out.distances_sq.resize(static_cast<size_t>(n * m));
  const auto f = features.data();
  const auto a = anchors.anchors.data();
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = 0;
    double best_d = 0.0;
    for (int64_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < d; ++k) {
        const double diff = static_cast<double>(f[static_cast<size_t>(i * d + k)]) -
                            static_cast<double>(a[static_cast<size_t>(j * d + k)]);
        acc += diff * diff;
      }
      out.distances_sq[static_cast<size_t>(i * m + j)] = acc;
      if (j == 0 || acc < best_d) {
        best_d = acc;
        best = j;
      }
    }
    out.labels[static_cast<size_t>(i)] = best;
  }
  return out;
}

namespace detail {

// Squared distance of every feature to its assigned anchor, one per row.
template <typename T>
Tensor<T> assigned_sq_distances(const Tensor<T>& features,
                                const AnchorSet<T>& anchors,
                                const Assignment& assignment) {
  Tensor<T> nearest = gather_rows(anchors.anchors, assignment.labels);
  return sum_axis(square(sub(features, nearest)), 1);  // (n,1)
}

template <typename T>
Tensor<T> label_mask(const Assignment& assignment, int64_t anchor_index) {
  std::vector<T> mask(static_cast<size_t>(assignment.n), T(0));
  for (int64_t k = 0; k < assignment.n; ++k)
    if (assignment.labels[static_cast<size_t>(k)] == anchor_index)
      mask[static_cast<size_t>(k)] = T(1);
  return Tensor<T>(Shape{assignment.n, 1}, std::move(mask));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Nebula loss building blocks

inline constexpr double kAnchorDistanceEps = 1e-12;

// M(a_i) = 1 + sum of squared distances from the anchor's assigned features.
template <typename T>
Tensor<T> anchor_mass(const Tensor<T>& features, const AnchorSet<T>& anchors,
                      const Assignment& assignment, int64_t i) {
  if (i < 0 || i >= anchors.count())
    throw std::out_of_range("anchor_mass: index " + std::to_string(i));
  Tensor<T> d2 = detail::assigned_sq_distances(features, anchors, assignment);
  return add_scalar(sum(mul(d2, detail::label_mask<T>(assignment, i))), T(1));
}

// D^-2(a_i, a_j) = -ln(||a_j - a_i||^2 + eps); may be negative.
template <typename T>
Tensor<T> log_inv_sq_distance(const Tensor<T>& a_i, const Tensor<T>& a_j,
                              bool clamp_at_zero = false) {
  Tensor<T> d2 = sum(square(sub(a_j, a_i)));
  Tensor<T> v = mul_scalar(log(add_scalar(d2, static_cast<T>(kAnchorDistanceEps))),
                           T(-1));
  return clamp_at_zero ? clamp_min(v, T(0)) : v;
}

// F(a_i, a_j) = M(a_i) * M(a_j) * D^-2(a_i, a_j).
template <typename T>
Tensor<T> gravitational_force(const Tensor<T>& features, const AnchorSet<T>& anchors,
                              const Assignment& assignment, int64_t i, int64_t j,
                              bool clamp_at_zero = false) {
  if (i == j) throw std::invalid_argument("gravitational_force: i == j");
  Tensor<T> mi = anchor_mass(features, anchors, assignment, i);
  Tensor<T> mj = anchor_mass(features, anchors, assignment, j);
  Tensor<T> ai = gather_rows(anchors.anchors, {i});
  Tensor<T> aj = gather_rows(anchors.anchors, {j});
  return mul(mul(mi, mj), log_inv_sq_distance(ai, aj, clamp_at_zero));
}

enum class NebulaMode { kMass, kEuclidean };

// Nebula loss over one batch. Mass mode sums the gravitational force over
// all unordered anchor pairs; a single anchor degenerates to pure attraction
// (the pair sum would otherwise be empty). Euclidean mode is the ablation
// without masses: plain squared distance of every feature to its anchor.
// Gradients reach both the features and the anchors; the assignment is fixed.
template <typename T>
Tensor<T> nebula_loss(const Tensor<T>& features, const AnchorSet<T>& anchors,
                      const Assignment& assignment, NebulaMode mode,
                      bool clamp_at_zero = false) {
  const int64_t m = anchors.count();
  Tensor<T> d2 = detail::assigned_sq_distances(features, anchors, assignment);
  if (mode == NebulaMode::kEuclidean || m == 1) return sum(d2);

  std::vector<Tensor<T>> masses;
  masses.reserve(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i)
    masses.push_back(
        add_scalar(sum(mul(d2, detail::label_mask<T>(assignment, i))), T(1)));

  Tensor<T> total = Tensor<T>::zeros(Shape{1});
  for (int64_t i = 0; i < m - 1; ++i) {
    Tensor<T> ai = gather_rows(anchors.anchors, {i});
    for (int64_t j = i + 1; j < m; ++j) {
      Tensor<T> aj = gather_rows(anchors.anchors, {j});
      Tensor<T> force =
          mul(mul(masses[static_cast<size_t>(i)], masses[static_cast<size_t>(j)]),
              log_inv_sq_distance(ai, aj, clamp_at_zero));
      total = add(total, force);
    }
  }
  return total;
}

template <typename T>
Tensor<T> nebula_loss(const Tensor<T>& features, const AnchorSet<T>& anchors,
                      NebulaMode mode, bool clamp_at_zero = false) {
  return nebula_loss(features, anchors, assign_anchors(features, anchors), mode,
                     clamp_at_zero);
}

// ---------------------------------------------------------------------------
// Variational and reconstruction losses

// Closed-form KL(N(mu, diag(exp(logvar))) || N(0, I)), averaged over the batch.
template <typename T>
Tensor<T> kl_diag_gaussian(const Tensor<T>& mu, const Tensor<T>& logvar) {
  detail::require_same_shape(mu, logvar, "kl_diag_gaussian");
  Tensor<T> inner = sub(add(square(mu), exp(logvar)),
                        add_scalar(logvar, T(1)));  // mu^2 + e^lv - 1 - lv
  return mul_scalar(mean(sum_axis(inner, 1)), T(0.5));
}

// Mean over the batch of the squared Euclidean distance per sample.
template <typename T>
Tensor<T> recon_euclidean(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require_same_shape(pred, target, "recon_euclidean");
  return mean(sum_axis(square(sub(pred, target)), 1));
}

inline constexpr double kBceClamp = 1e-7;

// Mean over the batch of the per-sample summed binary cross entropy.
// Predictions are clamped to [1e-7, 1-1e-7] before the logs.
template <typename T>
Tensor<T> recon_bce(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require_same_shape(pred, target, "recon_bce");
  for (T p : pred.data())
    if (p < T(0) || p > T(1))
      throw std::domain_error("recon_bce: prediction outside [0,1]: " +
                              std::to_string(p));
  Tensor<T> p = clamp_max(clamp_min(pred, static_cast<T>(kBceClamp)),
                          T(1) - static_cast<T>(kBceClamp));
  Tensor<T> one_minus_t = add_scalar(mul_scalar(target, T(-1)), T(1));
  Tensor<T> one_minus_p = add_scalar(mul_scalar(p, T(-1)), T(1));
  Tensor<T> ll = add(mul(target, log(p)), mul(one_minus_t, log(one_minus_p)));
  return mul_scalar(mean(sum_axis(ll, 1)), T(-1));
}

// Symmetric squared-distance Chamfer, each direction averaged over its set.
// The nearest-neighbour match is fixed at current values; gradients flow
// through the matched squared distances.
template <typename T>
Tensor<T> chamfer(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().rank() != 2 || b.shape().rank() != 2)
    throw std::invalid_argument("chamfer: point sets must be rank-2");
  if (a.shape().dim(1) != b.shape().dim(1))
    throw std::invalid_argument("chamfer: point dims differ, " + a.shape().str() +
                                " vs " + b.shape().str());
  const int64_t na = a.shape().dim(0), nb = b.shape().dim(0), d = a.shape().dim(1);
  if (na == 0 || nb == 0) throw std::invalid_argument("chamfer: empty point set");

  auto nearest = [d](const Tensor<T>& from, const Tensor<T>& to) {
    const auto fv = from.data(), tv = to.data();
    const int64_t nf = from.shape().dim(0), nt = to.shape().dim(0);
    std::vector<int64_t> idx(static_cast<size_t>(nf));
    for (int64_t i = 0; i < nf; ++i) {
      double best = 0.0;
      int64_t best_j = 0;
      for (int64_t j = 0; j < nt; ++j) {
        double acc = 0.0;
        for (int64_t k = 0; k < d; ++k) {
          const double diff =
              static_cast<double>(fv[static_cast<size_t>(i * d + k)]) -
              static_cast<double>(tv[static_cast<size_t>(j * d + k)]);
          acc += diff * diff;
        }
        if (j == 0 || acc < best) {
          best = acc;
          best_j = j;
        }
      }
      idx[static_cast<size_t>(i)] = best_j;
    }
    return idx;
  };

  Tensor<T> b_match = gather_rows(b, nearest(a, b));
  Tensor<T> a_match = gather_rows(a, nearest(b, a));
  Tensor<T> a_to_b = mean(sum_axis(square(sub(a, b_match)), 1));
  Tensor<T> b_to_a = mean(sum_axis(square(sub(b, a_match)), 1));
  return add(a_to_b, b_to_a);
}

// ---------------------------------------------------------------------------
// Self-supervised metric learning (labels come from the assignment)

template <typename T>
Tensor<T> siamese_pair(const Tensor<T>& e_i, const Tensor<T>& e_p) {
  detail::require_same_shape(e_i, e_p, "siamese_pair");
  return sum(square(sub(e_i, e_p)));
}

inline constexpr double kTripletDenomEps = 0.01;

// ln(max(1, 2 - d(i,n) / (d(i,p) + 0.01))); bounded to [0, ln 2].
template <typename T>
Tensor<T> triplet(const Tensor<T>& e_i, const Tensor<T>& e_p, const Tensor<T>& e_n) {
  Tensor<T> d_in = sum(square(sub(e_i, e_n)));
  Tensor<T> d_ip = sum(square(sub(e_i, e_p)));
  Tensor<T> ratio = div(d_in, add_scalar(d_ip, static_cast<T>(kTripletDenomEps)));
  Tensor<T> arg = add_scalar(mul_scalar(ratio, T(-1)), T(2));
  return log(clamp_min(arg, T(1)));
}

template <typename T>
struct MetricTerms {
  Tensor<T> pair;     // scalar, 0 when no positive pair exists
  Tensor<T> triplet;  // scalar, 0 when no triplet exists
  int64_t pair_count = 0;
  int64_t triplet_count = 0;

  Tensor<T> total() const { return add(pair, triplet); }
};

// Siamese term over all unordered same-label pairs plus triplet term over all
// ordered same-label (i,p) with every differently-labeled negative n, each
// averaged by its own combination count. Vectorized through the pairwise
// squared-distance matrix; tests pin equality against the naive loops.
template <typename T>
MetricTerms<T> metric_loss(const Tensor<T>& features,
                           const std::vector<int64_t>& labels) {
  if (features.shape().rank() != 2)
    throw std::invalid_argument("metric_loss: features must be rank-2");
  const int64_t n = features.shape().dim(0);
  if (static_cast<int64_t>(labels.size()) != n)
    throw std::invalid_argument("metric_loss: label count mismatch");
  if (n < 2)
    throw std::invalid_argument("metric_loss: needs a batch of at least 2");

  MetricTerms<T> out;
  out.pair = Tensor<T>::zeros(Shape{1});
  out.triplet = Tensor<T>::zeros(Shape{1});

  // Ordered same-label pairs drive the triplet term; the upper triangle of
  // the same-label relation drives the pair term.
  std::vector<int64_t> pair_i, pair_p;
  int64_t c2 = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t p = 0; p < n; ++p) {
      if (i == p || labels[static_cast<size_t>(i)] != labels[static_cast<size_t>(p)])
        continue;
      pair_i.push_back(i);
      pair_p.push_back(p);
      if (i < p) ++c2;
    }
  out.pair_count = c2;
  if (pair_i.empty()) return out;

  // Pairwise squared distances D = r 1^T + 1 r^T - 2 Z Z^T, floored at 0
  // against round-off.
  Tensor<T> ones_n = Tensor<T>::full(Shape{n, 1}, T(1));
  Tensor<T> r = sum_axis(square(features), 1);  // (n,1)
  Tensor<T> D = clamp_min(
      add(add(matmul(r, ones_n, false, true), matmul(ones_n, r, false, true)),
          mul_scalar(matmul(features, features, false, true), T(-2))),
      T(0));

  if (c2 > 0) {
    std::vector<T> pos(static_cast<size_t>(n * n), T(0));
    for (size_t k = 0; k < pair_i.size(); ++k)
      if (pair_i[k] < pair_p[k])
        pos[static_cast<size_t>(pair_i[k] * n + pair_p[k])] = T(1);
    Tensor<T> pos_mask(Shape{n, n}, std::move(pos));
    out.pair = mul_scalar(sum(mul(D, pos_mask)), T(1) / static_cast<T>(c2));
  }

  const int64_t num_pairs = static_cast<int64_t>(pair_i.size());
  std::vector<T> sel_i(static_cast<size_t>(num_pairs * n), T(0));
  std::vector<T> sel_p(static_cast<size_t>(num_pairs * n), T(0));
  std::vector<T> neg(static_cast<size_t>(num_pairs * n), T(0));
  int64_t c3 = 0;
  for (int64_t k = 0; k < num_pairs; ++k) {
    sel_i[static_cast<size_t>(k * n + pair_i[static_cast<size_t>(k)])] = T(1);
    sel_p[static_cast<size_t>(k * n + pair_p[static_cast<size_t>(k)])] = T(1);
    for (int64_t q = 0; q < n; ++q)
      if (labels[static_cast<size_t>(q)] !=
          labels[static_cast<size_t>(pair_i[static_cast<size_t>(k)])]) {
        neg[static_cast<size_t>(k * n + q)] = T(1);
        ++c3;
      }
  }
  out.triplet_count = c3;
  if (c3 == 0) return out;

  Tensor<T> Si(Shape{num_pairs, n}, std::move(sel_i));
  Tensor<T> Sp(Shape{num_pairs, n}, std::move(sel_p));
  Tensor<T> neg_mask(Shape{num_pairs, n}, std::move(neg));
  Tensor<T> ones_p = Tensor<T>::full(Shape{num_pairs, 1}, T(1));

  Tensor<T> Dn = matmul(Si, D);                     // (P,n): row k = D[i_k, :]
  Tensor<T> d_ip = sum_axis(mul(Dn, Sp), 1);        // (P,1)
  Tensor<T> recip = div(ones_p, add_scalar(d_ip, static_cast<T>(kTripletDenomEps)));
  Tensor<T> ratio = mul(Dn, matmul(recip, ones_n, false, true));
  Tensor<T> arg = add_scalar(mul_scalar(ratio, T(-1)), T(2));
  Tensor<T> terms = mul(log(clamp_min(arg, T(1))), neg_mask);
  out.triplet = mul_scalar(sum(terms), T(1) / static_cast<T>(c3));
  return out;
}

// ---------------------------------------------------------------------------
// Total objective (Eq-style weighted sum; all weights default to 1)

template <typename T>
struct LossWeights {
  T recon = T(1);
  T kl = T(1);
  T nebula = T(1);
  T metric = T(1);
};

template <typename T>
Tensor<T> total_loss(const Tensor<T>& recon, const Tensor<T>& kl,
                     const Tensor<T>& nebula, const Tensor<T>& metric,
                     const LossWeights<T>& w) {
  if (w.recon < T(0) || w.kl < T(0) || w.nebula < T(0) || w.metric < T(0))
    throw std::invalid_argument("total_loss: weights must be >= 0");
  return add(add(mul_scalar(recon, w.recon), mul_scalar(kl, w.kl)),
             add(mul_scalar(nebula, w.nebula), mul_scalar(metric, w.metric)));
}

// ---------------------------------------------------------------------------
// Baseline anchor updates (no autodiff; operate on raw values)

// a_i <- mean of assigned features; empty clusters keep their center.
template <typename T>
std::vector<T> kmeans_update(const Tensor<T>& features, const Assignment& assignment,
                             const Tensor<T>& anchors) {
  const int64_t n = features.shape().dim(0), d = features.shape().dim(1);
  const int64_t m = anchors.shape().dim(0);
  std::vector<T> next(anchors.data().begin(), anchors.data().end());
  std::vector<int64_t> counts(static_cast<size_t>(m), 0);
  std::vector<double> acc(static_cast<size_t>(m * d), 0.0);
  const auto f = features.data();
  for (int64_t i = 0; i < n; ++i) {
    const int64_t c = assignment.labels[static_cast<size_t>(i)];
    ++counts[static_cast<size_t>(c)];
    for (int64_t k = 0; k < d; ++k)
      acc[static_cast<size_t>(c * d + k)] +=
          static_cast<double>(f[static_cast<size_t>(i * d + k)]);
  }
  for (int64_t c = 0; c < m; ++c) {
    if (counts[static_cast<size_t>(c)] == 0) continue;
    for (int64_t k = 0; k < d; ++k)
      next[static_cast<size_t>(c * d + k)] = static_cast<T>(
          acc[static_cast<size_t>(c * d + k)] /
          static_cast<double>(counts[static_cast<size_t>(c)]));
  }
  return next;
}

// Sum over clusters of within-cluster squared distances.
template <typename T>
double kmeans_loss(const Tensor<T>& features, const Tensor<T>& anchors,
                   const Assignment& assignment) {
  const int64_t n = features.shape().dim(0), d = features.shape().dim(1);
  const auto f = features.data();
  const auto a = anchors.data();
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const int64_t c = assignment.labels[static_cast<size_t>(i)];
    for (int64_t k = 0; k < d; ++k) {
      const double diff = static_cast<double>(f[static_cast<size_t>(i * d + k)]) -
                          static_cast<double>(a[static_cast<size_t>(c * d + k)]);
      total += diff * diff;
    }
  }
  return total;
}

// a_i <- a_i + lr * sum_{z in Z_i} (z - a_i)  (Robbins-Monro step).
template <typename T>
std::vector<T> robbins_monro_update(const Tensor<T>& anchors,
                                    const Tensor<T>& features,
                                    const Assignment& assignment, T lr) {
  const int64_t n = features.shape().dim(0), d = features.shape().dim(1);
  const int64_t m = anchors.shape().dim(0);
  std::vector<T> next(anchors.data().begin(), anchors.data().end());
  const auto f = features.data();
  const auto a = anchors.data();
  std::vector<double> delta(static_cast<size_t>(m * d), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t c = assignment.labels[static_cast<size_t>(i)];
    for (int64_t k = 0; k < d; ++k)
      delta[static_cast<size_t>(c * d + k)] +=
          static_cast<double>(f[static_cast<size_t>(i * d + k)]) -
          static_cast<double>(a[static_cast<size_t>(c * d + k)]);
  }
  for (size_t idx = 0; idx < next.size(); ++idx)
    next[idx] += static_cast<T>(static_cast<double>(lr) * delta[idx]);
  return next;
}

}  // namespace nvc
