#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nvc/checkpoint.hpp"
#include "nvc/config.hpp"
#include "nvc/data.hpp"
#include "nvc/losses.hpp"
#include "nvc/model.hpp"
#include "nvc/optim.hpp"

namespace nvc {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRecord {
  int64_t step = 0;
  int64_t epoch = 0;
  double loss_total = 0, loss_recon = 0, loss_kl = 0, loss_nebula = 0;
  double loss_pair = 0, loss_triplet = 0;
  double elbo = 0, latent_entropy = 0, mean_assignment_count = 0;

  static constexpr const char* kCsvHeader =
      "step,epoch,loss_total,loss_recon,loss_kl,loss_nebula,loss_pair,"
      "loss_triplet,elbo,latent_entropy,mean_assignment_count";

  std::string csv_row() const {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "%lld,%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                  static_cast<long long>(step), static_cast<long long>(epoch),
                  loss_total, loss_recon, loss_kl, loss_nebula, loss_pair,
                  loss_triplet, elbo, latent_entropy, mean_assignment_count);
    return buf;
  }
};

// ---------------------------------------------------------------------------
// Latent diagnostics

inline Eigen::MatrixXd latent_covariance(const std::vector<double>& latents,
                                         int64_t n, int64_t d) {
  if (n < 2) throw std::invalid_argument("latent covariance needs n >= 2");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
      Z(latents.data(), n, d);
  const Eigen::RowVectorXd mu = Z.colwise().mean();
  const auto centered = Z.rowwise() - mu;
  return (centered.transpose() * centered) / static_cast<double>(n - 1);
}

// Gaussian plug-in differential entropy 0.5*ln((2*pi*e)^d * det(Cov + 1e-6 I)).
inline double latent_entropy(const std::vector<double>& latents, int64_t n,
                             int64_t d) {
  Eigen::MatrixXd cov = latent_covariance(latents, n, d);
  cov.diagonal().array() += 1e-6;
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw NumericError("latent_entropy: covariance not positive definite");
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  constexpr double kLog2PiE = 2.8378770664093453;  // ln(2*pi*e)
  return 0.5 * (static_cast<double>(d) * kLog2PiE + logdet);
}

template <typename T>
double latent_entropy(const Tensor<T>& latents) {
  std::vector<double> vals(latents.data().begin(), latents.data().end());
  return latent_entropy(vals, latents.shape().dim(0), latents.shape().dim(1));
}

// ---------------------------------------------------------------------------
// Trainer: one model + optional anchors + optimizer, driven by TrainConfig.

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_record;
  std::function<void(int64_t epoch)> on_epoch_end;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, Dataset::Kind kind) : cfg_(std::move(cfg)), kind_(kind) {
    cfg_.validate();
    if (cfg_.input_dim < 1)
      throw ConfigError("invalid value for key \"input_dim\": must be resolved "
                        "from the dataset before training");
    if (cfg_.anchors == 0) cfg_.mode = TrainMode::kVae;  // m = 0 forces vae
    ModelConfig mc;
    mc.input_dim = cfg_.input_dim;
    mc.hidden_dims = cfg_.hidden_dims;
    mc.latent_dim = cfg_.latent_dim;
    mc.seed = cfg_.seed;
    model_ = MlpVae<float>::init(mc, kind == Dataset::Kind::kImage);
    if (cfg_.uses_anchors())
      anchors_ = init_anchors<float>(cfg_.anchors, cfg_.latent_dim,
                                     cfg_.seed ^ 0x517cc1b727220a95ULL);
    noise_rng_ = Rng(cfg_.seed).fork(1);
    if (cfg_.optimizer == "adam")
      adam_.emplace(static_cast<float>(cfg_.lr));
    else
      sgd_.emplace(static_cast<float>(cfg_.lr));
  }

  const TrainConfig& config() const { return cfg_; }
  Dataset::Kind data_kind() const { return kind_; }
  MlpVae<float>& model() { return model_; }
  const MlpVae<float>& model() const { return model_; }
  bool has_anchors() const { return anchors_.has_value(); }
  AnchorSet<float>& anchors() { return *anchors_; }
  const AnchorSet<float>& anchors() const { return *anchors_; }
  const std::vector<MetricsRecord>& records() const { return records_; }
  int64_t global_step() const { return step_; }

  std::vector<Tensor<float>> parameters() {
    auto params = model_.parameters();
    if (anchors_) params.push_back(anchors_->anchors);
    return params;
  }

  std::vector<std::string> parameter_names() const {
    auto names = model_.parameter_names();
    if (anchors_) names.push_back("anchors");
    return names;
  }

  void run(const Dataset& train_set, const TrainHooks& hooks = {}) {
    if (train_set.n == 0) throw DataError("training dataset is empty");
    if (train_set.input_dim != cfg_.input_dim)
      throw DataError("dataset input_dim " + std::to_string(train_set.input_dim) +
                      " does not match config input_dim " +
                      std::to_string(cfg_.input_dim));
    auto params = parameters();
    for (int64_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      BatchIterator batches(train_set.n, cfg_.batch_size, epoch, cfg_.seed);
      std::vector<int64_t> idx;
      while (batches.next(idx))
        train_step(train_set.batch_tensor(idx), epoch, params, hooks);
      if (hooks.on_epoch_end) hooks.on_epoch_end(epoch);
    }
  }

  // One optimization step over a prepared batch (exposed for tests).
  void train_step(const Tensor<float>& x, int64_t epoch,
                  std::vector<Tensor<float>>& params, const TrainHooks& hooks) {
    Tape<float> tape;
    auto scope = tape.activate();

    LatentBatch<float> lat = model_.encode(x, &noise_rng_);
    Tensor<float> pred = model_.decode(lat.z);
    Tensor<float> l_recon = kind_ == Dataset::Kind::kImage
                                ? recon_bce(pred, x)
                                : recon_euclidean(pred, x);
    Tensor<float> l_kl = kl_diag_gaussian(lat.mu, lat.logvar);

    Tensor<float> l_nebula = Tensor<float>::zeros(Shape{1});
    Tensor<float> l_pair = Tensor<float>::zeros(Shape{1});
    Tensor<float> l_triplet = Tensor<float>::zeros(Shape{1});
    double mean_assignment = 0.0;
    if (anchors_) {
      // Anchor losses act on the sampled latent codes; early in training the
      // sampling noise spreads assignments over every anchor, which keeps the
      // whole constellation receiving gradients.
      const Assignment assignment = assign_anchors(lat.z, *anchors_);
      if (cfg_.mode == TrainMode::kNvcNoMass) {
        l_nebula =
            nebula_loss(lat.z, *anchors_, assignment, NebulaMode::kEuclidean);
      } else {
        // Mass mode: the gravitational pair sum plus the closest-anchor
        // attraction. The attraction is what the pair sum degenerates to at
        // m = 1; keeping it at every m lets anchors follow the latent
        // clusters, while the mass-weighted pair term separates anchors that
        // drift within unit distance of each other.
        l_nebula = nebula_loss(lat.z, *anchors_, assignment, NebulaMode::kMass,
                               cfg_.clamp_D);
        if (anchors_->count() > 1)
          l_nebula = add(l_nebula, nebula_loss(lat.z, *anchors_, assignment,
                                               NebulaMode::kEuclidean));
      }
      if (cfg_.uses_metric()) {
        MetricTerms<float> mt = metric_loss(lat.z, assignment.labels);
        l_pair = mt.pair;
        l_triplet = mt.triplet;
      }
      std::vector<bool> used(static_cast<size_t>(assignment.m), false);
      for (int64_t lbl : assignment.labels) used[static_cast<size_t>(lbl)] = true;
      int64_t active = 0;
      for (bool u : used) active += u ? 1 : 0;
      mean_assignment = static_cast<double>(assignment.n) /
                        static_cast<double>(std::max<int64_t>(active, 1));
    }

    Tensor<float> l_metric = add(l_pair, l_triplet);
    LossWeights<float> w{static_cast<float>(cfg_.w_recon),
                         static_cast<float>(cfg_.w_kl),
                         static_cast<float>(cfg_.w_nebula),
                         static_cast<float>(cfg_.w_metric)};
    Tensor<float> total = total_loss(l_recon, l_kl, l_nebula, l_metric, w);

    check_finite(l_recon.value(), "loss_recon");
    check_finite(l_kl.value(), "loss_kl");
    check_finite(l_nebula.value(), "loss_nebula");
    check_finite(l_pair.value(), "loss_pair");
    check_finite(l_triplet.value(), "loss_triplet");
    check_finite(total.value(), "loss_total");

    const int64_t n = x.shape().dim(0);
    if (step_ % cfg_.log_every == 0 && n >= 2) {
      MetricsRecord rec;
      rec.step = step_;
      rec.epoch = epoch;
      rec.loss_total = total.value();
      rec.loss_recon = l_recon.value();
      rec.loss_kl = l_kl.value();
      rec.loss_nebula = l_nebula.value();
      rec.loss_pair = l_pair.value();
      rec.loss_triplet = l_triplet.value();
      rec.elbo = -(rec.loss_recon + rec.loss_kl);
      rec.latent_entropy = latent_entropy(lat.z);
      rec.mean_assignment_count = mean_assignment;
      records_.push_back(rec);
      if (hooks.on_record) hooks.on_record(rec);
    }

    tape.backward(total);
    if (adam_)
      adam_->step(params);
    else
      sgd_->step(params);
    ++step_;
  }

  // --- checkpoint bridge ---------------------------------------------------

  Checkpoint to_checkpoint() const {
    Checkpoint ckpt;
    TrainConfig snap = cfg_;
    ckpt.config_text = serialize_config(snap) + "data_kind = " +
                       (kind_ == Dataset::Kind::kImage ? "image" : "gaussian") +
                       "\n";
    auto self = const_cast<Trainer*>(this);
    const auto params = self->parameters();
    const auto names = parameter_names();
    for (size_t k = 0; k < params.size(); ++k)
      ckpt.sections.push_back(section_from(names[k], params[k]));
    if (adam_) {
      auto& adam = const_cast<Adam<float>&>(*adam_);
      TensorSection t;
      t.name = "adam.t";
      t.dims = {1};
      t.data = {static_cast<float>(adam.step_count())};
      ckpt.sections.push_back(std::move(t));
      if (!adam.first_moments().empty()) {
        for (size_t k = 0; k < params.size(); ++k) {
          ckpt.sections.push_back(
              raw_section("adam.m." + names[k], params[k], adam.first_moments()[k]));
          ckpt.sections.push_back(
              raw_section("adam.v." + names[k], params[k], adam.second_moments()[k]));
        }
      }
    }
    return ckpt;
  }

  static Trainer from_checkpoint(const Checkpoint& ckpt) {
    TrainConfig cfg;
    Dataset::Kind kind = Dataset::Kind::kImage;
    {
      // data_kind rides along in the snapshot but is not a TrainConfig key
      std::string text;
      std::stringstream ss(ckpt.config_text);
      std::string line;
      while (std::getline(ss, line)) {
        if (line.rfind("data_kind", 0) == 0) {
          if (line.find("gaussian") != std::string::npos)
            kind = Dataset::Kind::kGaussian;
          continue;
        }
        text += line + "\n";
      }
      cfg = parse_config_text(text);
    }
    Trainer t(cfg, kind);
    auto params = t.parameters();
    const auto names = t.parameter_names();
    for (size_t k = 0; k < params.size(); ++k) {
      const TensorSection* s = ckpt.find(names[k]);
      if (s == nullptr)
        throw CheckpointError("checkpoint missing section " + names[k]);
      if (static_cast<int64_t>(s->numel()) != params[k].numel())
        throw CheckpointError("checkpoint section " + names[k] +
                              " has wrong element count");
      std::copy(s->data.begin(), s->data.end(), params[k].mutable_data().begin());
    }
    if (t.adam_) {
      if (const TensorSection* ts = ckpt.find("adam.t")) {
        t.adam_->set_step_count(static_cast<int64_t>(ts->data.at(0)));
        auto& m = t.adam_->first_moments();
        auto& v = t.adam_->second_moments();
        m.resize(params.size());
        v.resize(params.size());
        for (size_t k = 0; k < params.size(); ++k) {
          const TensorSection* ms = ckpt.find("adam.m." + names[k]);
          const TensorSection* vs = ckpt.find("adam.v." + names[k]);
          if (ms == nullptr || vs == nullptr)
            throw CheckpointError("checkpoint missing Adam state for " + names[k]);
          m[k] = ms->data;
          v[k] = vs->data;
        }
      }
    }
    return t;
  }

 private:
  static void check_finite(double v, const char* term) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite ") + term +
                         " encountered during training");
  }

  static TensorSection section_from(const std::string& name,
                                    const Tensor<float>& t) {
    TensorSection s;
    s.name = name;
    for (int64_t d : t.shape().dims()) s.dims.push_back(static_cast<uint32_t>(d));
    s.data.assign(t.data().begin(), t.data().end());
    return s;
  }

  static TensorSection raw_section(const std::string& name,
                                   const Tensor<float>& shape_like,
                                   const std::vector<float>& data) {
    TensorSection s;
    s.name = name;
    for (int64_t d : shape_like.shape().dims())
      s.dims.push_back(static_cast<uint32_t>(d));
    s.data = data;
    return s;
  }

  TrainConfig cfg_;
  Dataset::Kind kind_;
  MlpVae<float> model_;
  std::optional<AnchorSet<float>> anchors_;
  Rng noise_rng_{0};
  std::optional<Adam<float>> adam_;
  std::optional<Sgd<float>> sgd_;
  std::vector<MetricsRecord> records_;
  int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation

// Eval-mode latents (z = mu), computed in chunks.
inline std::vector<float> encode_eval(const MlpVae<float>& model,
                                      const Dataset& ds, int64_t chunk = 512) {
  const int64_t d = model.config().latent_dim;
  std::vector<float> out(static_cast<size_t>(ds.n * d));
  for (int64_t start = 0; start < ds.n; start += chunk) {
    const int64_t end = std::min(ds.n, start + chunk);
    std::vector<int64_t> idx(static_cast<size_t>(end - start));
    for (int64_t i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
    LatentBatch<float> lat = model.encode(ds.batch_tensor(idx), nullptr);
    std::copy(lat.z.data().begin(), lat.z.data().end(),
              out.begin() + start * d);
  }
  return out;
}

struct ReconMetrics {
  double rel = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;  // percentages
};

// Accumulates per-element absolute relative error and 1.25^i threshold
// accuracies; the ground truth (and prediction, for the ratio test) is
// floored at eps.
class ReconAccumulator {
 public:
  explicit ReconAccumulator(double eps) : eps_(eps) {}

  void add(double truth, double pred) {
    rel_sum_ += std::abs(pred - truth) / std::max(truth, eps_);
    const double yp = std::max(truth, eps_);
    const double yhp = std::max(pred, eps_);
    const double ratio = std::max(yhp / yp, yp / yhp);
    within1_ += ratio < 1.25;
    within2_ += ratio < 1.25 * 1.25;
    within3_ += ratio < 1.25 * 1.25 * 1.25;
    ++total_;
  }

  ReconMetrics metrics() const {
    ReconMetrics m;
    m.rel = rel_sum_ / static_cast<double>(total_);
    m.delta1 = 100.0 * static_cast<double>(within1_) / static_cast<double>(total_);
    m.delta2 = 100.0 * static_cast<double>(within2_) / static_cast<double>(total_);
    m.delta3 = 100.0 * static_cast<double>(within3_) / static_cast<double>(total_);
    return m;
  }

 private:
  double eps_;
  double rel_sum_ = 0;
  int64_t within1_ = 0, within2_ = 0, within3_ = 0, total_ = 0;
};

inline ReconMetrics eval_reconstruction(const MlpVae<float>& model,
                                        const Dataset& ds, double eps = 0.01,
                                        int64_t chunk = 512) {
  ReconAccumulator acc(eps);
  for (int64_t start = 0; start < ds.n; start += chunk) {
    const int64_t end = std::min(ds.n, start + chunk);
    std::vector<int64_t> idx(static_cast<size_t>(end - start));
    for (int64_t i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
    Tensor<float> x = ds.batch_tensor(idx);
    Tensor<float> pred = model.decode(model.encode(x, nullptr).z);
    const auto pv = pred.data();
    const auto xv = x.data();
    for (size_t i = 0; i < pv.size(); ++i) acc.add(xv[i], pv[i]);
  }
  return acc.metrics();
}

namespace detail {

inline Assignment assign_latents(const std::vector<float>& latents, int64_t n,
                                 int64_t d, const AnchorSet<float>& anchors) {
  Tensor<float> z(Shape{n, d}, std::vector<float>(latents.begin(), latents.end()));
  return assign_anchors(z, anchors);
}

}  // namespace detail

// Majority-vote mapping from anchors to true labels on the training split;
// anchors with no assigned sample map to -1 (never correct). Majority ties
// break toward the smaller label.
inline std::vector<int32_t> anchor_label_map(const MlpVae<float>& model,
                                             const AnchorSet<float>& anchors,
                                             const Dataset& train_set) {
  if (!train_set.has_labels())
    throw DataError("anchor_label_map: dataset has no labels");
  const int64_t d = model.config().latent_dim;
  const auto latents = encode_eval(model, train_set);
  const Assignment a = detail::assign_latents(latents, train_set.n, d, anchors);
  int32_t max_label = 0;
  for (int32_t l : train_set.labels) max_label = std::max(max_label, l);
  std::vector<std::vector<int64_t>> votes(
      static_cast<size_t>(anchors.count()),
      std::vector<int64_t>(static_cast<size_t>(max_label + 1), 0));
  for (int64_t i = 0; i < train_set.n; ++i)
    ++votes[static_cast<size_t>(a.labels[static_cast<size_t>(i)])]
           [static_cast<size_t>(train_set.labels[static_cast<size_t>(i)])];
  std::vector<int32_t> mapping(static_cast<size_t>(anchors.count()), -1);
  for (int64_t j = 0; j < anchors.count(); ++j) {
    int64_t best = 0;
    int32_t best_label = -1;
    for (int32_t l = 0; l <= max_label; ++l)
      if (votes[static_cast<size_t>(j)][static_cast<size_t>(l)] > best) {
        best = votes[static_cast<size_t>(j)][static_cast<size_t>(l)];
        best_label = l;
      }
    mapping[static_cast<size_t>(j)] = best_label;
  }
  return mapping;
}

// Test accuracy (%) of nearest-anchor classification through the mapping.
inline double eval_anchor_accuracy(const MlpVae<float>& model,
                                   const AnchorSet<float>& anchors,
                                   const Dataset& train_set,
                                   const Dataset& test_set) {
  if (!test_set.has_labels())
    throw DataError("eval_anchor_accuracy: test set has no labels");
  const auto mapping = anchor_label_map(model, anchors, train_set);
  const int64_t d = model.config().latent_dim;
  const auto latents = encode_eval(model, test_set);
  const Assignment a = detail::assign_latents(latents, test_set.n, d, anchors);
  int64_t correct = 0;
  for (int64_t i = 0; i < test_set.n; ++i)
    correct += mapping[static_cast<size_t>(a.labels[static_cast<size_t>(i)])] ==
               test_set.labels[static_cast<size_t>(i)];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(test_set.n);
}

// Fraction of samples sharing their anchor's majority label.
inline double anchor_purity(const MlpVae<float>& model,
                            const AnchorSet<float>& anchors, const Dataset& ds) {
  if (!ds.has_labels()) throw DataError("anchor_purity: dataset has no labels");
  const int64_t d = model.config().latent_dim;
  const auto latents = encode_eval(model, ds);
  const Assignment a = detail::assign_latents(latents, ds.n, d, anchors);
  std::map<std::pair<int64_t, int32_t>, int64_t> counts;
  for (int64_t i = 0; i < ds.n; ++i)
    ++counts[{a.labels[static_cast<size_t>(i)], ds.labels[static_cast<size_t>(i)]}];
  std::vector<int64_t> best(static_cast<size_t>(anchors.count()), 0);
  for (const auto& [key, c] : counts)
    best[static_cast<size_t>(key.first)] =
        std::max(best[static_cast<size_t>(key.first)], c);
  int64_t agree = 0;
  for (int64_t b : best) agree += b;
  return static_cast<double>(agree) / static_cast<double>(ds.n);
}

struct CovarianceDiag {
  Eigen::MatrixXd matrix;
  double offdiag_mean_abs = 0;
};

inline CovarianceDiag covariance_diagnostic(const std::vector<float>& latents,
                                            int64_t n, int64_t d) {
  std::vector<double> vals(latents.begin(), latents.end());
  CovarianceDiag out;
  out.matrix = latent_covariance(vals, n, d);
  double acc = 0;
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < d; ++j)
      if (i != j) acc += std::abs(out.matrix(i, j));
  out.offdiag_mean_abs = d > 1 ? acc / static_cast<double>(d * (d - 1)) : 0.0;
  return out;
}

// Single-batch ELBO estimate; -(recon + kl) with the Bernoulli (BCE) or
// Gaussian (squared error) likelihood matching the decoder head.
inline double elbo_estimate(const MlpVae<float>& model, const Tensor<float>& x,
                            Rng* noise_rng = nullptr) {
  LatentBatch<float> lat = model.encode(x, noise_rng);
  Tensor<float> pred = model.decode(lat.z);
  Tensor<float> recon = model.sigmoid_output() ? recon_bce(pred, x)
                                               : recon_euclidean(pred, x);
  Tensor<float> kl = kl_diag_gaussian(lat.mu, lat.logvar);
  return -(static_cast<double>(recon.value()) + static_cast<double>(kl.value()));
}

struct EvalReport {
  ReconMetrics recon;
  bool has_anchor_accuracy = false;
  double anchor_accuracy = 0;
  double covariance_offdiag_mean_abs = 0;
  std::vector<int64_t> per_anchor_counts;
};

inline EvalReport evaluate(const MlpVae<float>& model,
                           const AnchorSet<float>* anchors, const DataDir& data,
                           double eval_epsilon) {
  EvalReport report;
  report.recon = eval_reconstruction(model, data.test, eval_epsilon);
  const auto latents = encode_eval(model, data.test);
  report.covariance_offdiag_mean_abs =
      covariance_diagnostic(latents, data.test.n, model.config().latent_dim)
          .offdiag_mean_abs;
  if (anchors != nullptr && data.train.has_labels() && data.test.has_labels()) {
    report.has_anchor_accuracy = true;
    report.anchor_accuracy =
        eval_anchor_accuracy(model, *anchors, data.train, data.test);
  }
  if (anchors != nullptr) {
    const auto train_latents = encode_eval(model, data.train);
    const Assignment a = detail::assign_latents(
        train_latents, data.train.n, model.config().latent_dim, *anchors);
    report.per_anchor_counts.assign(static_cast<size_t>(anchors->count()), 0);
    for (int64_t lbl : a.labels)
      ++report.per_anchor_counts[static_cast<size_t>(lbl)];
  }
  return report;
}

// ---------------------------------------------------------------------------
// Anchor sweep: one independent run per (mode, m) cell, same seed throughout.

struct SweepRow {
  std::string mode;
  int64_t anchors = 0;
  bool ok = false;
  EvalReport report;
  std::string error;
};

inline SweepRow run_sweep_cell(TrainConfig cfg, const DataDir& data,
                               TrainMode mode, int64_t m) {
  SweepRow row;
  row.mode = to_string(mode);
  row.anchors = m;
  try {
    cfg.mode = mode;
    cfg.anchors = m;
    cfg.input_dim = data.train.input_dim;
    Trainer trainer(cfg, data.train.kind);
    trainer.run(data.train);
    row.report = evaluate(trainer.model(),
                          trainer.has_anchors() ? &trainer.anchors() : nullptr,
                          data, cfg.eval_epsilon);
    row.ok = true;
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

inline std::vector<SweepRow> anchor_sweep(
    const TrainConfig& base, const std::vector<TrainMode>& modes,
    const std::vector<int64_t>& anchor_counts, const DataDir& data,
    const std::function<void(const SweepRow&)>& on_row = {}) {
  std::vector<SweepRow> rows;
  for (TrainMode mode : modes)
    for (int64_t m : anchor_counts) {
      rows.push_back(run_sweep_cell(base, data, mode, m));
      if (on_row) on_row(rows.back());
    }
  return rows;
}

// ---------------------------------------------------------------------------
// K-means / Robbins-Monro baseline: anchors updated by the closed-form rule
// each batch instead of by gradients; the network itself trains as a plain
// VAE. loss_nebula column carries the K-means loss for stability comparison.

enum class BaselineRule { kKmeans, kRobbinsMonro };

struct BaselineResult {
  std::vector<MetricsRecord> records;
  std::vector<double> anchor_displacement;  // mean L2 move per update
  AnchorSet<float> anchors;
};

inline BaselineResult kmeans_baseline_train(const TrainConfig& cfg_in,
                                            const Dataset& train_set,
                                            BaselineRule rule,
                                            double rm_lr = 0.1) {
  TrainConfig cfg = cfg_in;
  cfg.mode = TrainMode::kVae;  // network sees recon + kl only
  cfg.input_dim = train_set.input_dim;
  Trainer trainer(cfg, train_set.kind);
  AnchorSet<float> anchors = init_anchors<float>(
      std::max<int64_t>(cfg_in.anchors, 1), cfg.latent_dim,
      cfg.seed ^ 0x517cc1b727220a95ULL);

  BaselineResult result{{}, {}, anchors};
  auto params = trainer.parameters();
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    BatchIterator batches(train_set.n, cfg.batch_size, epoch, cfg.seed);
    std::vector<int64_t> idx;
    while (batches.next(idx)) {
      Tensor<float> x = train_set.batch_tensor(idx);
      const size_t records_before = trainer.records().size();
      const int64_t step = trainer.global_step();
      trainer.train_step(x, epoch, params, {});

      LatentBatch<float> lat = trainer.model().encode(x, nullptr);
      const Assignment a = assign_anchors(lat.z, anchors);
      const std::vector<float> updated =
          rule == BaselineRule::kKmeans
              ? kmeans_update(lat.z, a, anchors.anchors)
              : robbins_monro_update(anchors.anchors, lat.z, a,
                                     static_cast<float>(rm_lr));
      double disp = 0;
      const auto old = anchors.anchors.data();
      const int64_t d = cfg.latent_dim;
      for (int64_t j = 0; j < anchors.count(); ++j) {
        double acc = 0;
        for (int64_t k = 0; k < d; ++k) {
          const double diff = static_cast<double>(updated[static_cast<size_t>(j * d + k)]) -
                              static_cast<double>(old[static_cast<size_t>(j * d + k)]);
          acc += diff * diff;
        }
        disp += std::sqrt(acc);
      }
      disp /= static_cast<double>(anchors.count());
      std::copy(updated.begin(), updated.end(),
                anchors.anchors.mutable_data().begin());

      if (trainer.records().size() > records_before) {
        MetricsRecord rec = trainer.records().back();
        rec.step = step;
        rec.epoch = epoch;
        rec.loss_nebula = kmeans_loss(lat.z, anchors.anchors, a);
        result.records.push_back(rec);
        result.anchor_displacement.push_back(disp);
      }
    }
  }
  result.anchors = anchors;
  return result;
}

}  // namespace nvc
