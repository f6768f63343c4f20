#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>

#include "nvc/tensor.hpp"

// Differentiable primitives over Tensor<T>. Each op computes its value
// eagerly and, when a tape is active and an input requires gradients,
// records a closure that scatters d(out) into d(in). Broadcasting is
// limited to the leading batch axis (add_rowwise); everything else demands
// exact shape agreement.

namespace nvc {

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<EMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const EMat<T>>;

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                               const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape().str() + " vs " + b.shape().str());
}

template <typename T>
inline bool tracing(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const Tensor<T>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// grad(out) may be absent when the op does not lead to the loss; such
// closures are no-ops.
template <typename T>
inline bool has_out_grad(const std::shared_ptr<Node<T>>& on) {
  return !on->grad.empty();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  const auto av = a.data(), bv = b.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const bool traced = detail::tracing<T>({&a, &b});
  Tensor<T> res(a.shape(), std::move(out), traced);
  if (traced) {
    auto an = a.node(), bn = b.node(), on = res.node();
    Tape<T>::active()->record([an, bn, on] {
      if (!detail::has_out_grad(on)) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  const auto av = a.data(), bv = b.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const bool traced = detail::tracing<T>({&a, &b});
  Tensor<T> res(a.shape(), std::move(out), traced);
  if (traced) {
    auto an = a.node(), bn = b.node(), on = res.node();
    Tape<T>::active()->record([an, bn, on] {
      if (!detail::has_out_grad(on)) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  const auto av = a.data(), bv = b.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const bool traced = detail::tracing<T>({&a, &b});
  Tensor<T> res(a.shape(), std::move(out), traced);
  if (traced) {
    auto an = a.node(), bn = b.node(), on = res.node();
    Tape<T>::active()->record([an, bn, on] {
      if (!detail::has_out_grad(on)) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i)
          an->grad[i] += on->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i)
          bn->grad[i] += on->grad[i] * an->value[i];
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "div");
  const auto av = a.data(), bv = b.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  const bool traced = detail::tracing<T>({&a, &b});
  Tensor<T> res(a.shape(), std::move(out), traced);
  if (traced) {
    auto an = a.node(), bn = b.node(), on = res.node();
    Tape<T>::active()->record([an, bn, on] {
      if (!detail::has_out_grad(on)) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i)
          an->grad[i] += on->grad[i] / bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) {
          const T inv = T(1) / bn->value[i];
          bn->grad[i] -= on->grad[i] * an->value[i] * inv * inv;
        }
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Scalar-constant ops (the constant carries no gradient)

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  const bool traced = detail::tracing<T>({&a});
  Tensor<T> res(a.shape(), std::move(out), traced);
  if (traced) {
    auto an = a.node(), on = res.node();
    Tape<T>::active()->record([an, on] {
      if (!detail::has_out_grad(on)) return;
      an->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
  }
  return res;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  const bool traced = detail::tracing<T>({&a});
  Tensor<T> res(a.shape(), std::move(out), traced);
  if (traced) {
    auto an = a.node(), on = res.node();
    Tape<T>::active()->record([an, on, c] {
      if (!detail::has_out_grad(on)) return;
      an->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += c * on->grad[i];
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Elementwise unary

namespace detail {

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_op(const Tensor<T>& a, FwdFn fwd, BwdFn bwd) {
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  const bool traced = tracing<T>({&a});
  Tensor<T> res(a.shape(), std::move(out), traced);
  if (traced) {
    auto an = a.node(), on = res.node();
    Tape<T>::active()->record([an, on, bwd] {
      if (!has_out_grad(on)) return;
      an->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += on->grad[i] * bwd(an->value[i], on->value[i]);
    });
  }
  return res;
}

}  // namespace detail

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

// Natural log. Non-positive input is an error; callers that need protection
// clamp or shift the argument first (clamp_min, add_scalar).
template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  for (T x : a.data())
    if (!(x > T(0)))
      throw std::domain_error("log: non-positive input " + std::to_string(x));
  return detail::unary_op(
      a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
  return detail::unary_op(
      a, [lo](T x) { return x < lo ? lo : x; },
      [lo](T x, T) { return x > lo ? T(1) : T(0); });
}

template <typename T>
Tensor<T> clamp_max(const Tensor<T>& a, T hi) {
  return detail::unary_op(
      a, [hi](T x) { return x > hi ? hi : x; },
      [hi](T x, T) { return x < hi ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Matrix multiply (Eigen GEMM), optional operand transposes.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false) {
  if (a.shape().rank() != 2 || b.shape().rank() != 2)
    throw std::invalid_argument("matmul: expects rank-2 operands, got " +
                                a.shape().str() + " and " + b.shape().str());
  const int64_t n = trans_a ? a.shape().dim(1) : a.shape().dim(0);
  const int64_t k = trans_a ? a.shape().dim(0) : a.shape().dim(1);
  const int64_t kb = trans_b ? b.shape().dim(1) : b.shape().dim(0);
  const int64_t m = trans_b ? b.shape().dim(0) : b.shape().dim(1);
  if (k != kb)
    throw std::invalid_argument("matmul: inner dims differ, " + a.shape().str() +
                                (trans_a ? "^T" : "") + " * " + b.shape().str() +
                                (trans_b ? "^T" : ""));

  detail::CMapMat<T> A(a.data().data(), a.shape().dim(0), a.shape().dim(1));
  detail::CMapMat<T> B(b.data().data(), b.shape().dim(0), b.shape().dim(1));
  std::vector<T> out(static_cast<size_t>(n * m));
  detail::MapMat<T> C(out.data(), n, m);
  if (!trans_a && !trans_b)
    C.noalias() = A * B;
  else if (trans_a && !trans_b)
    C.noalias() = A.transpose() * B;
  else if (!trans_a && trans_b)
    C.noalias() = A * B.transpose();
  else
    C.noalias() = A.transpose() * B.transpose();

  const bool traced = detail::tracing<T>({&a, &b});
  Tensor<T> res(Shape{n, m}, std::move(out), traced);
  if (traced) {
    auto an = a.node(), bn = b.node(), on = res.node();
    Tape<T>::active()->record([an, bn, on, trans_a, trans_b, n, m] {
      if (!detail::has_out_grad(on)) return;
      detail::CMapMat<T> G(on->grad.data(), n, m);
      detail::CMapMat<T> A(an->value.data(), an->shape.dim(0), an->shape.dim(1));
      detail::CMapMat<T> B(bn->value.data(), bn->shape.dim(0), bn->shape.dim(1));
      if (an->requires_grad) {
        an->ensure_grad();
        detail::MapMat<T> dA(an->grad.data(), an->shape.dim(0), an->shape.dim(1));
        if (!trans_a && !trans_b)
          dA.noalias() += G * B.transpose();
        else if (!trans_a && trans_b)
          dA.noalias() += G * B;
        else if (trans_a && !trans_b)
          dA.noalias() += B * G.transpose();
        else
          dA.noalias() += B.transpose() * G.transpose();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        detail::MapMat<T> dB(bn->grad.data(), bn->shape.dim(0), bn->shape.dim(1));
        if (!trans_a && !trans_b)
          dB.noalias() += A.transpose() * G;
        else if (!trans_a && trans_b)
          dB.noalias() += G.transpose() * A;
        else if (trans_a && !trans_b)
          dB.noalias() += A * G;
        else
          dB.noalias() += G.transpose() * A.transpose();
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Broadcast over the leading batch axis: (n,d) + (1,d) or (d).

template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& mat, const Tensor<T>& row) {
  if (mat.shape().rank() != 2)
    throw std::invalid_argument("add_rowwise: matrix must be rank-2, got " +
                                mat.shape().str());
  const int64_t n = mat.shape().dim(0), d = mat.shape().dim(1);
  const bool row_ok = (row.shape().rank() == 1 && row.shape().dim(0) == d) ||
                      (row.shape().rank() == 2 && row.shape().dim(0) == 1 &&
                       row.shape().dim(1) == d);
  if (!row_ok)
    throw std::invalid_argument("add_rowwise: row " + row.shape().str() +
                                " does not broadcast over " + mat.shape().str());
  const auto mv = mat.data(), rv = row.data();
  std::vector<T> out(mv.size());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      out[static_cast<size_t>(i * d + j)] =
          mv[static_cast<size_t>(i * d + j)] + rv[static_cast<size_t>(j)];
  const bool traced = detail::tracing<T>({&mat, &row});
  Tensor<T> res(mat.shape(), std::move(out), traced);
  if (traced) {
    auto mn = mat.node(), rn = row.node(), on = res.node();
    Tape<T>::active()->record([mn, rn, on, n, d] {
      if (!detail::has_out_grad(on)) return;
      if (mn->requires_grad) {
        mn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) mn->grad[i] += on->grad[i];
      }
      if (rn->requires_grad) {
        rn->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < d; ++j)
            rn->grad[static_cast<size_t>(j)] +=
                on->grad[static_cast<size_t>(i * d + j)];
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T x : a.data()) acc += x;
  const bool traced = detail::tracing<T>({&a});
  Tensor<T> res(Shape{1}, {acc}, traced);
  if (traced) {
    auto an = a.node(), on = res.node();
    Tape<T>::active()->record([an, on] {
      if (!detail::has_out_grad(on)) return;
      an->ensure_grad();
      const T g = on->grad[0];
      for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
    });
  }
  return res;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  T acc = T(0);
  for (T x : a.data()) acc += x;
  const T inv_n = T(1) / static_cast<T>(a.numel());
  const bool traced = detail::tracing<T>({&a});
  Tensor<T> res(Shape{1}, {acc * inv_n}, traced);
  if (traced) {
    auto an = a.node(), on = res.node();
    Tape<T>::active()->record([an, on, inv_n] {
      if (!detail::has_out_grad(on)) return;
      an->ensure_grad();
      const T g = on->grad[0] * inv_n;
      for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
    });
  }
  return res;
}

// Reduce a rank-2 tensor over one axis; axis 0 -> (1,d), axis 1 -> (n,1).
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, int axis) {
  if (a.shape().rank() != 2)
    throw std::invalid_argument("sum_axis: expects rank-2, got " + a.shape().str());
  if (axis != 0 && axis != 1)
    throw std::invalid_argument("sum_axis: axis must be 0 or 1");
  const int64_t n = a.shape().dim(0), d = a.shape().dim(1);
  const auto av = a.data();
  std::vector<T> out;
  Shape out_shape = axis == 0 ? Shape{1, d} : Shape{n, 1};
  out.assign(static_cast<size_t>(out_shape.numel()), T(0));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) {
      const T v = av[static_cast<size_t>(i * d + j)];
      if (axis == 0)
        out[static_cast<size_t>(j)] += v;
      else
        out[static_cast<size_t>(i)] += v;
    }
  const bool traced = detail::tracing<T>({&a});
  Tensor<T> res(out_shape, std::move(out), traced);
  if (traced) {
    auto an = a.node(), on = res.node();
    Tape<T>::active()->record([an, on, n, d, axis] {
      if (!detail::has_out_grad(on)) return;
      an->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j)
          an->grad[static_cast<size_t>(i * d + j)] +=
              axis == 0 ? on->grad[static_cast<size_t>(j)]
                        : on->grad[static_cast<size_t>(i)];
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Row gather; duplicate indices accumulate gradient (copies, no views).

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int64_t>& idx) {
  if (a.shape().rank() != 2)
    throw std::invalid_argument("gather_rows: expects rank-2, got " +
                                a.shape().str());
  const int64_t n = a.shape().dim(0), d = a.shape().dim(1);
  for (int64_t i : idx)
    if (i < 0 || i >= n)
      throw std::out_of_range("gather_rows: index " + std::to_string(i) +
                              " out of range [0," + std::to_string(n) + ")");
  const int64_t k = static_cast<int64_t>(idx.size());
  if (k == 0) throw std::invalid_argument("gather_rows: empty index list");
  const auto av = a.data();
  std::vector<T> out(static_cast<size_t>(k * d));
  for (int64_t r = 0; r < k; ++r)
    for (int64_t j = 0; j < d; ++j)
      out[static_cast<size_t>(r * d + j)] = av[static_cast<size_t>(idx[r] * d + j)];
  const bool traced = detail::tracing<T>({&a});
  Tensor<T> res(Shape{k, d}, std::move(out), traced);
  if (traced) {
    auto an = a.node(), on = res.node();
    Tape<T>::active()->record([an, on, idx, d, k] {
      if (!detail::has_out_grad(on)) return;
      an->ensure_grad();
      for (int64_t r = 0; r < k; ++r)
        for (int64_t j = 0; j < d; ++j)
          an->grad[static_cast<size_t>(idx[r] * d + j)] +=
              on->grad[static_cast<size_t>(r * d + j)];
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Operator sugar

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

}  // namespace nvc
