#pragma once

#include <zlib.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nvc/checkpoint.hpp"
#include "nvc/random.hpp"
#include "nvc/tensor.hpp"

namespace nvc {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Labels, when present, are evaluation-only: nothing on the training path
// reads them (the method is self-supervised).
struct Dataset {
  enum class Kind { kImage, kGaussian };

  int64_t n = 0;
  int64_t input_dim = 0;
  std::vector<float> samples;  // n x input_dim row-major
  std::vector<int32_t> labels; // empty when absent
  Kind kind = Kind::kImage;

  bool has_labels() const { return !labels.empty(); }

  Tensor<float> batch_tensor(const std::vector<int64_t>& idx) const {
    std::vector<float> out(idx.size() * static_cast<size_t>(input_dim));
    for (size_t r = 0; r < idx.size(); ++r)
      std::copy_n(samples.begin() + idx[r] * input_dim, input_dim,
                  out.begin() + static_cast<int64_t>(r) * input_dim);
    return Tensor<float>(Shape{static_cast<int64_t>(idx.size()), input_dim},
                         std::move(out));
  }
};

// ---------------------------------------------------------------------------
// IDX (MNIST container) parsing; big-endian headers, u8 payload.

namespace detail {

inline std::vector<unsigned char> read_file_maybe_gz(
    const std::filesystem::path& path) {
  if (path.extension() == ".gz") {
    gzFile gz = gzopen(path.string().c_str(), "rb");
    if (gz == nullptr) throw DataError("cannot open " + path.string());
    std::vector<unsigned char> out;
    unsigned char buf[1 << 16];
    int got;
    while ((got = gzread(gz, buf, sizeof buf)) > 0)
      out.insert(out.end(), buf, buf + got);
    const bool bad = got < 0;
    gzclose(gz);
    if (bad) throw DataError("gzip decompression failed for " + path.string());
    return out;
  }
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(is),
                                    std::istreambuf_iterator<char>());
}

inline uint32_t be32(const std::vector<unsigned char>& buf, size_t off,
                     const std::string& path) {
  if (off + 4 > buf.size())
    throw DataError("truncated IDX file " + path + " (header)");
  return (static_cast<uint32_t>(buf[off]) << 24) |
         (static_cast<uint32_t>(buf[off + 1]) << 16) |
         (static_cast<uint32_t>(buf[off + 2]) << 8) |
         static_cast<uint32_t>(buf[off + 3]);
}

}  // namespace detail

inline constexpr uint32_t kIdxImagesMagic = 2051;  // 0x00000803
inline constexpr uint32_t kIdxLabelsMagic = 2049;  // 0x00000801

inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  const auto img = detail::read_file_maybe_gz(images_path);
  const uint32_t img_magic = detail::be32(img, 0, images_path.string());
  if (img_magic != kIdxImagesMagic)
    throw DataError("wrong magic in " + images_path.string() + ": got " +
                    std::to_string(img_magic) + ", expected " +
                    std::to_string(kIdxImagesMagic) + " (IDX images)");
  const uint32_t n = detail::be32(img, 4, images_path.string());
  const uint32_t rows = detail::be32(img, 8, images_path.string());
  const uint32_t cols = detail::be32(img, 12, images_path.string());
  const size_t expected = 16 + static_cast<size_t>(n) * rows * cols;
  if (img.size() < expected)
    throw DataError("truncated IDX file " + images_path.string() + ": need " +
                    std::to_string(expected) + " bytes, have " +
                    std::to_string(img.size()));

  const auto lab = detail::read_file_maybe_gz(labels_path);
  const uint32_t lab_magic = detail::be32(lab, 0, labels_path.string());
  if (lab_magic != kIdxLabelsMagic)
    throw DataError("wrong magic in " + labels_path.string() + ": got " +
                    std::to_string(lab_magic) + ", expected " +
                    std::to_string(kIdxLabelsMagic) + " (IDX labels)");
  const uint32_t n_lab = detail::be32(lab, 4, labels_path.string());
  if (n_lab != n)
    throw DataError("image/label count mismatch: " + std::to_string(n) +
                    " images vs " + std::to_string(n_lab) + " labels");
  if (lab.size() < 8 + static_cast<size_t>(n_lab))
    throw DataError("truncated IDX file " + labels_path.string());

  Dataset ds;
  ds.kind = Dataset::Kind::kImage;
  ds.n = n;
  ds.input_dim = static_cast<int64_t>(rows) * cols;
  ds.samples.resize(static_cast<size_t>(ds.n * ds.input_dim));
  for (size_t i = 0; i < ds.samples.size(); ++i)
    ds.samples[i] = static_cast<float>(img[16 + i]) / 255.0f;
  ds.labels.assign(lab.begin() + 8, lab.begin() + 8 + n_lab);
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian mixture; labels are the generating cluster ids.
// Centers depend only on the seed, so datasets generated with different
// noise_stream values share centers but draw disjoint sample noise (used for
// train/test splits).

inline Dataset gen_synthetic(int64_t num_clusters, int64_t samples_per_cluster,
                             int64_t dim, double spread, uint64_t seed,
                             uint64_t noise_stream = 0) {
  if (num_clusters < 1 || samples_per_cluster < 1 || dim < 1)
    throw std::invalid_argument("gen_synthetic: counts and dim must be >= 1");
  Rng center_rng(seed);
  std::vector<double> centers(static_cast<size_t>(num_clusters * dim));
  for (auto& c : centers) c = 4.0 * center_rng.normal();
  Rng rng = Rng(seed).fork(noise_stream + 1);

  Dataset ds;
  ds.kind = Dataset::Kind::kGaussian;
  ds.n = num_clusters * samples_per_cluster;
  ds.input_dim = dim;
  ds.samples.resize(static_cast<size_t>(ds.n * dim));
  ds.labels.resize(static_cast<size_t>(ds.n));
  int64_t row = 0;
  for (int64_t c = 0; c < num_clusters; ++c)
    for (int64_t s = 0; s < samples_per_cluster; ++s, ++row) {
      ds.labels[static_cast<size_t>(row)] = static_cast<int32_t>(c);
      for (int64_t k = 0; k < dim; ++k)
        ds.samples[static_cast<size_t>(row * dim + k)] = static_cast<float>(
            centers[static_cast<size_t>(c * dim + k)] + spread * rng.normal());
    }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset container files: the checkpoint tensor-section layout with a
// "samples" section and an optional "labels" section.

inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  Checkpoint c;
  c.config_text = std::string("dataset kind=") +
                  (ds.kind == Dataset::Kind::kImage ? "image" : "gaussian") + "\n";
  TensorSection samples;
  samples.name = "samples";
  samples.dims = {static_cast<uint32_t>(ds.n), static_cast<uint32_t>(ds.input_dim)};
  samples.data = ds.samples;
  c.sections.push_back(std::move(samples));
  if (ds.has_labels()) {
    TensorSection labels;
    labels.name = "labels";
    labels.dims = {static_cast<uint32_t>(ds.n)};
    labels.data.assign(ds.labels.begin(), ds.labels.end());
    c.sections.push_back(std::move(labels));
  }
  save_checkpoint(path, c);
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  const Checkpoint c = load_checkpoint(path);
  const TensorSection* samples = c.find("samples");
  if (samples == nullptr || samples->dims.size() != 2)
    throw DataError("dataset file " + path.string() +
                    " has no 2-D \"samples\" section");
  Dataset ds;
  ds.kind = c.config_text.find("kind=image") != std::string::npos
                ? Dataset::Kind::kImage
                : Dataset::Kind::kGaussian;
  ds.n = samples->dims[0];
  ds.input_dim = samples->dims[1];
  ds.samples = samples->data;
  if (const TensorSection* labels = c.find("labels")) {
    if (labels->numel() != static_cast<uint64_t>(ds.n))
      throw DataError("dataset file " + path.string() +
                      ": label count does not match sample count");
    ds.labels.resize(static_cast<size_t>(ds.n));
    for (size_t i = 0; i < ds.labels.size(); ++i)
      ds.labels[i] = static_cast<int32_t>(labels->data[i]);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Data directory resolution: MNIST IDX files or generated synthetic pairs.

struct DataDir {
  Dataset train;
  Dataset test;
};

namespace detail {

inline std::filesystem::path find_variant(const std::filesystem::path& dir,
                                          const std::string& base) {
  const auto plain = dir / base;
  if (std::filesystem::exists(plain)) return plain;
  const auto gz = dir / (base + ".gz");
  if (std::filesystem::exists(gz)) return gz;
  return {};
}

}  // namespace detail

inline DataDir load_data_dir(const std::filesystem::path& dir) {
  const auto synth_train = dir / "synth_train.nvct";
  if (std::filesystem::exists(synth_train)) {
    DataDir out;
    out.train = read_dataset(synth_train);
    const auto synth_test = dir / "synth_test.nvct";
    out.test = std::filesystem::exists(synth_test) ? read_dataset(synth_test)
                                                   : out.train;
    return out;
  }
  const auto ti = detail::find_variant(dir, "train-images-idx3-ubyte");
  const auto tl = detail::find_variant(dir, "train-labels-idx1-ubyte");
  const auto ei = detail::find_variant(dir, "t10k-images-idx3-ubyte");
  const auto el = detail::find_variant(dir, "t10k-labels-idx1-ubyte");
  if (ti.empty() || tl.empty() || ei.empty() || el.empty())
    throw DataError("no dataset found in " + dir.string() +
                    ": expected MNIST IDX files (train-images-idx3-ubyte, ...) "
                    "or synth_train.nvct");
  DataDir out;
  out.train = load_idx(ti, tl);
  out.test = load_idx(ei, el);
  return out;
}

// ---------------------------------------------------------------------------
// Seeded epoch batching; the permutation depends only on (seed, epoch) and
// the final short batch is kept.

class BatchIterator {
 public:
  BatchIterator(int64_t n, int64_t batch_size, int64_t epoch, uint64_t seed)
      : batch_size_(batch_size) {
    if (batch_size < 1)
      throw std::invalid_argument("BatchIterator: batch_size must be >= 1");
    Rng rng = Rng(seed).fork(0x9b97f4a7c15ULL + static_cast<uint64_t>(epoch));
    perm_ = rng.permutation(n);
  }

  bool next(std::vector<int64_t>& out) {
    if (cursor_ >= static_cast<int64_t>(perm_.size())) return false;
    const int64_t end =
        std::min<int64_t>(cursor_ + batch_size_, static_cast<int64_t>(perm_.size()));
    out.assign(perm_.begin() + cursor_, perm_.begin() + end);
    cursor_ = end;
    return true;
  }

  const std::vector<int64_t>& permutation() const { return perm_; }

 private:
  int64_t batch_size_;
  int64_t cursor_ = 0;
  std::vector<int64_t> perm_;
};

}  // namespace nvc
