#include <zlib.h>

#include <catch2/catch_amalgamated.hpp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>

#include "nvc/data.hpp"

namespace fs = std::filesystem;
using nvc::Dataset;

namespace {

fs::path test_dir() {
  const fs::path dir = fs::temp_directory_path() / "nvc_data_test";
  fs::create_directories(dir);
  return dir;
}

void write_be32(std::ofstream& os, uint32_t v) {
  const unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(buf), 4);
}

// Two 2x2 images: {0,128,255,64} and {1,2,3,4}, labels {7, 2}.
void write_idx_fixture(const fs::path& images, const fs::path& labels,
                       uint32_t img_magic = 2051, uint32_t lab_magic = 2049,
                       uint32_t lab_count = 2) {
  {
    std::ofstream os(images, std::ios::binary | std::ios::trunc);
    write_be32(os, img_magic);
    write_be32(os, 2);
    write_be32(os, 2);
    write_be32(os, 2);
    const unsigned char px[8] = {0, 128, 255, 64, 1, 2, 3, 4};
    os.write(reinterpret_cast<const char*>(px), 8);
  }
  {
    std::ofstream os(labels, std::ios::binary | std::ios::trunc);
    write_be32(os, lab_magic);
    write_be32(os, lab_count);
    const unsigned char lv[2] = {7, 2};
    os.write(reinterpret_cast<const char*>(lv), lab_count);
  }
}

}  // namespace

TEST_CASE("idx loader parses the fixture") {
  const auto dir = test_dir();
  write_idx_fixture(dir / "img", dir / "lab");
  const Dataset ds = nvc::load_idx(dir / "img", dir / "lab");
  CHECK(ds.n == 2);
  CHECK(ds.input_dim == 4);
  CHECK(ds.kind == Dataset::Kind::kImage);
  CHECK(ds.samples[0] == 0.0f);
  CHECK(ds.samples[2] == 1.0f);  // 255 -> 1.0
  CHECK(ds.samples[1] == Catch::Approx(128.0 / 255.0));
  CHECK(ds.labels == std::vector<int32_t>{7, 2});
}

TEST_CASE("idx loader is idempotent and does not mutate files") {
  const auto dir = test_dir();
  write_idx_fixture(dir / "img", dir / "lab");
  const auto before = fs::file_size(dir / "img");
  const Dataset a = nvc::load_idx(dir / "img", dir / "lab");
  const Dataset b = nvc::load_idx(dir / "img", dir / "lab");
  CHECK(a.samples == b.samples);
  CHECK(a.labels == b.labels);
  CHECK(fs::file_size(dir / "img") == before);
}

TEST_CASE("idx loader distinguishes its error cases") {
  const auto dir = test_dir();

  SECTION("wrong image magic") {
    write_idx_fixture(dir / "img", dir / "lab", 1234);
    CHECK_THROWS_WITH(nvc::load_idx(dir / "img", dir / "lab"),
                      Catch::Matchers::ContainsSubstring("wrong magic"));
  }
  SECTION("wrong label magic") {
    write_idx_fixture(dir / "img", dir / "lab", 2051, 9999);
    CHECK_THROWS_WITH(nvc::load_idx(dir / "img", dir / "lab"),
                      Catch::Matchers::ContainsSubstring("wrong magic"));
  }
  SECTION("truncated image payload") {
    write_idx_fixture(dir / "img", dir / "lab");
    fs::resize_file(dir / "img", 18);  // cut into the first image
    CHECK_THROWS_WITH(nvc::load_idx(dir / "img", dir / "lab"),
                      Catch::Matchers::ContainsSubstring("truncated"));
  }
  SECTION("count mismatch") {
    write_idx_fixture(dir / "img", dir / "lab", 2051, 2049, 1);
    CHECK_THROWS_WITH(nvc::load_idx(dir / "img", dir / "lab"),
                      Catch::Matchers::ContainsSubstring("count mismatch"));
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(nvc::load_idx(dir / "absent", dir / "lab"), nvc::DataError);
  }
}

TEST_CASE("gzip-compressed idx files load transparently") {
  const auto dir = test_dir();
  write_idx_fixture(dir / "img", dir / "lab");
  for (const char* base : {"img", "lab"}) {
    std::ifstream is(dir / base, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                            std::istreambuf_iterator<char>());
    gzFile gz = gzopen((dir / (std::string(base) + ".idx.gz")).c_str(), "wb");
    REQUIRE(gz != nullptr);
    gzwrite(gz, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(gz);
  }
  // rename so the extension check sees .gz
  fs::rename(dir / "img.idx.gz", dir / "img.gz");
  fs::rename(dir / "lab.idx.gz", dir / "lab.gz");
  const Dataset plain = nvc::load_idx(dir / "img", dir / "lab");
  const Dataset gz = nvc::load_idx(dir / "img.gz", dir / "lab.gz");
  CHECK(plain.samples == gz.samples);
  CHECK(plain.labels == gz.labels);
}

TEST_CASE("synthetic generation") {
  SECTION("spread zero collapses every sample onto its center") {
    const Dataset ds = nvc::gen_synthetic(3, 5, 4, 0.0, 11);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t s = 1; s < 5; ++s)
        for (int64_t k = 0; k < 4; ++k)
          CHECK(ds.samples[static_cast<size_t>((c * 5 + s) * 4 + k)] ==
                ds.samples[static_cast<size_t>((c * 5) * 4 + k)]);
  }
  SECTION("same seed reproduces the dataset") {
    const Dataset a = nvc::gen_synthetic(4, 10, 6, 0.3, 17);
    const Dataset b = nvc::gen_synthetic(4, 10, 6, 0.3, 17);
    CHECK(a.samples == b.samples);
    CHECK(a.labels == b.labels);
  }
  SECTION("nearest-center classification is perfect at small spread") {
    const Dataset centers = nvc::gen_synthetic(4, 1, 8, 0.0, 23);
    const Dataset ds = nvc::gen_synthetic(4, 50, 8, 0.1, 23);
    for (int64_t i = 0; i < ds.n; ++i) {
      int64_t best = -1;
      double best_d = 0;
      for (int64_t c = 0; c < 4; ++c) {
        double acc = 0;
        for (int64_t k = 0; k < 8; ++k) {
          const double diff = ds.samples[static_cast<size_t>(i * 8 + k)] -
                              centers.samples[static_cast<size_t>(c * 8 + k)];
          acc += diff * diff;
        }
        if (best < 0 || acc < best_d) {
          best_d = acc;
          best = c;
        }
      }
      REQUIRE(best == ds.labels[static_cast<size_t>(i)]);
    }
  }
  SECTION("noise streams differ while centers agree") {
    const Dataset train = nvc::gen_synthetic(2, 3, 4, 0.2, 31, 0);
    const Dataset test = nvc::gen_synthetic(2, 3, 4, 0.2, 31, 1);
    CHECK(train.samples != test.samples);
    const Dataset c0 = nvc::gen_synthetic(2, 1, 4, 0.0, 31, 0);
    const Dataset c1 = nvc::gen_synthetic(2, 1, 4, 0.0, 31, 1);
    CHECK(c0.samples == c1.samples);
  }
  SECTION("invalid parameters") {
    CHECK_THROWS_AS(nvc::gen_synthetic(0, 5, 4, 0.1, 1), std::invalid_argument);
    CHECK_THROWS_AS(nvc::gen_synthetic(3, 0, 4, 0.1, 1), std::invalid_argument);
  }
}

TEST_CASE("dataset container round-trips bit-identically") {
  const auto dir = test_dir();
  const Dataset ds = nvc::gen_synthetic(3, 7, 5, 0.4, 41);
  nvc::write_dataset(dir / "ds.nvct", ds);
  const Dataset back = nvc::read_dataset(dir / "ds.nvct");
  CHECK(back.samples == ds.samples);
  CHECK(back.labels == ds.labels);
  CHECK(back.kind == ds.kind);
  CHECK(back.n == ds.n);
  CHECK(back.input_dim == ds.input_dim);
}

TEST_CASE("batch iterator covers every index exactly once") {
  nvc::BatchIterator it(10, 4, 0, 3);
  std::vector<int64_t> sizes;
  std::set<int64_t> seen;
  std::vector<int64_t> idx;
  while (it.next(idx)) {
    sizes.push_back(static_cast<int64_t>(idx.size()));
    seen.insert(idx.begin(), idx.end());
  }
  CHECK(sizes == std::vector<int64_t>{4, 4, 2});
  CHECK(seen.size() == 10);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 9);
}

TEST_CASE("epoch permutations differ but are seed-reproducible") {
  nvc::BatchIterator e0(32, 8, 0, 5);
  nvc::BatchIterator e1(32, 8, 1, 5);
  nvc::BatchIterator e0b(32, 8, 0, 5);
  CHECK(e0.permutation() != e1.permutation());
  CHECK(e0.permutation() == e0b.permutation());
}

TEST_CASE("data dir resolution") {
  const auto dir = test_dir() / "datadir";
  fs::create_directories(dir);
  SECTION("missing everything is a data error") {
    CHECK_THROWS_AS(nvc::load_data_dir(dir / "nothing_here"), nvc::DataError);
  }
  SECTION("synthetic pair is preferred when present") {
    nvc::write_dataset(dir / "synth_train.nvct", nvc::gen_synthetic(2, 4, 3, 0.1, 1));
    nvc::write_dataset(dir / "synth_test.nvct",
                       nvc::gen_synthetic(2, 2, 3, 0.1, 1, 1));
    const nvc::DataDir dd = nvc::load_data_dir(dir);
    CHECK(dd.train.n == 8);
    CHECK(dd.test.n == 4);
    CHECK(dd.train.kind == Dataset::Kind::kGaussian);
  }
}
