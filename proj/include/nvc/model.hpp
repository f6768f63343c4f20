#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nvc/ops.hpp"
#include "nvc/random.hpp"
#include "nvc/tensor.hpp"

namespace nvc {

struct ModelConfig {
  int64_t input_dim = 784;
  std::vector<int64_t> hidden_dims = {512, 256};
  int64_t latent_dim = 16;
  uint64_t seed = 0;

  void validate() const {
    if (input_dim < 1 || latent_dim < 1)
      throw std::invalid_argument("ModelConfig: dims must be >= 1");
    for (int64_t h : hidden_dims)
      if (h < 1) throw std::invalid_argument("ModelConfig: hidden dims must be >= 1");
  }
};

template <typename T>
struct LatentBatch {
  Tensor<T> mu;      // n x d
  Tensor<T> logvar;  // n x d, clamped to [-10, 10]
  Tensor<T> z;       // n x d; sampled in train mode, mu in eval mode
};

namespace detail {

template <typename T>
struct Linear {
  Tensor<T> W;  // (in, out)
  Tensor<T> b;  // (1, out)
};

template <typename T>
Linear<T> glorot_linear(int64_t in, int64_t out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<T> w(static_cast<size_t>(in * out));
  rng.fill_uniform(w, -bound, bound);
  return Linear<T>{Tensor<T>(Shape{in, out}, std::move(w), true),
                   Tensor<T>::zeros(Shape{1, out}, true)};
}

template <typename T>
inline void require_finite(const Tensor<T>& x, const char* who) {
  for (T v : x.data())
    if (!std::isfinite(static_cast<double>(v)))
      throw std::domain_error(std::string(who) + ": non-finite input value");
}

}  // namespace detail

inline constexpr double kLogvarClamp = 10.0;

// MLP encoder/decoder pair with a reparameterized diagonal-Gaussian latent.
// The encoder stacks relu layers over hidden_dims and ends in two linear
// heads (mu, logvar); the decoder mirrors the stack and maps back to the
// input width, through a sigmoid for image data or linear for regression
// targets.
template <typename T>
class MlpVae {
 public:
  static MlpVae init(const ModelConfig& cfg, bool sigmoid_output) {
    cfg.validate();
    MlpVae m;
    m.cfg_ = cfg;
    m.sigmoid_output_ = sigmoid_output;
    Rng rng(cfg.seed);
    int64_t w = cfg.input_dim;
    for (int64_t h : cfg.hidden_dims) {
      m.enc_.push_back(detail::glorot_linear<T>(w, h, rng));
      w = h;
    }
    m.mu_head_ = detail::glorot_linear<T>(w, cfg.latent_dim, rng);
    m.logvar_head_ = detail::glorot_linear<T>(w, cfg.latent_dim, rng);
    w = cfg.latent_dim;
    for (auto it = cfg.hidden_dims.rbegin(); it != cfg.hidden_dims.rend(); ++it) {
      m.dec_.push_back(detail::glorot_linear<T>(w, *it, rng));
      w = *it;
    }
    m.dec_.push_back(detail::glorot_linear<T>(w, cfg.input_dim, rng));
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  bool sigmoid_output() const { return sigmoid_output_; }

  // noise_rng == nullptr selects eval mode (z = mu).
  LatentBatch<T> encode(const Tensor<T>& x, Rng* noise_rng) const {
    detail::require_finite(x, "encode");
    if (x.shape().rank() != 2 || x.shape().dim(1) != cfg_.input_dim)
      throw std::invalid_argument("encode: expected (n," +
                                  std::to_string(cfg_.input_dim) + "), got " +
                                  x.shape().str());
    Tensor<T> h = x;
    for (const auto& layer : enc_)
      h = relu(add_rowwise(matmul(h, layer.W), layer.b));
    LatentBatch<T> out;
    out.mu = add_rowwise(matmul(h, mu_head_.W), mu_head_.b);
    out.logvar =
        clamp_min(clamp_max(add_rowwise(matmul(h, logvar_head_.W), logvar_head_.b),
                            static_cast<T>(kLogvarClamp)),
                  static_cast<T>(-kLogvarClamp));
    if (noise_rng == nullptr) {
      out.z = out.mu;
      return out;
    }
    std::vector<T> eta(static_cast<size_t>(out.mu.numel()));
    noise_rng->fill_normal(eta);
    Tensor<T> noise(out.mu.shape(), std::move(eta));
    out.z = add(out.mu, mul(exp(mul_scalar(out.logvar, T(0.5))), noise));
    return out;
  }

  Tensor<T> decode(const Tensor<T>& z) const {
    detail::require_finite(z, "decode");
    if (z.shape().rank() != 2 || z.shape().dim(1) != cfg_.latent_dim)
      throw std::invalid_argument("decode: expected (n," +
                                  std::to_string(cfg_.latent_dim) + "), got " +
                                  z.shape().str());
    Tensor<T> h = z;
    for (size_t l = 0; l + 1 < dec_.size(); ++l)
      h = relu(add_rowwise(matmul(h, dec_[l].W), dec_[l].b));
    h = add_rowwise(matmul(h, dec_.back().W), dec_.back().b);
    return sigmoid_output_ ? sigmoid(h) : h;
  }

  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    for (auto& l : enc_) {
      out.push_back(l.W);
      out.push_back(l.b);
    }
    out.push_back(mu_head_.W);
    out.push_back(mu_head_.b);
    out.push_back(logvar_head_.W);
    out.push_back(logvar_head_.b);
    for (auto& l : dec_) {
      out.push_back(l.W);
      out.push_back(l.b);
    }
    return out;
  }

  // Stable names aligned with parameters(), used by checkpoints.
  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out;
    for (size_t i = 0; i < enc_.size(); ++i) {
      out.push_back("enc" + std::to_string(i) + ".W");
      out.push_back("enc" + std::to_string(i) + ".b");
    }
    out.push_back("mu_head.W");
    out.push_back("mu_head.b");
    out.push_back("logvar_head.W");
    out.push_back("logvar_head.b");
    for (size_t i = 0; i < dec_.size(); ++i) {
      out.push_back("dec" + std::to_string(i) + ".W");
      out.push_back("dec" + std::to_string(i) + ".b");
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  bool sigmoid_output_ = true;
  std::vector<detail::Linear<T>> enc_;
  detail::Linear<T> mu_head_, logvar_head_;
  std::vector<detail::Linear<T>> dec_;
};

}  // namespace nvc
