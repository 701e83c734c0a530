#include <gtest/gtest.h>

#include <zlib.h>

#include <filesystem>
#include <fstream>

#include "fetch_data.hpp"

namespace {

namespace fs = std::filesystem;

std::vector<std::uint8_t> gzip(const std::vector<std::uint8_t>& raw) {
  z_stream zs{};
  EXPECT_EQ(deflateInit2(&zs, Z_BEST_SPEED, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY), Z_OK);
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(raw.size())) + 64);
  zs.next_in = const_cast<Bytef*>(raw.data());
  zs.avail_in = static_cast<uInt>(raw.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  EXPECT_EQ(deflate(&zs, Z_FINISH), Z_STREAM_END);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  return out;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Mirror {
  fs::path root;
  Mirror() : root(fs::temp_directory_path() / ("prp_fetch_test_" + std::to_string(::getpid()))) {
    fs::remove_all(root);
    fs::create_directories(root / "mirror");
    const auto stage = root / "stage";
    fs::create_directories(stage);
    prp::IdxImages img{3, 2, 2, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
    prp::write_idx_images(stage / "train-images-idx3-ubyte", img);
    prp::write_idx_labels(stage / "train-labels-idx1-ubyte", {1, 2, 3});
    img.count = 1;
    img.pixels.resize(4);
    prp::write_idx_images(stage / "t10k-images-idx3-ubyte", img);
    prp::write_idx_labels(stage / "t10k-labels-idx1-ubyte", {9});
    for (const auto& name : prp::fetch::idx_file_names())
      write_bytes(root / "mirror" / (name + ".gz"), gzip(read_bytes(stage / name)));
  }
  ~Mirror() { fs::remove_all(root); }
  std::string url() const { return "file://" + (root / "mirror").string() + "/"; }
};

TEST(Gunzip, RoundTripAndCorruption) {
  std::vector<std::uint8_t> raw(100000);
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<std::uint8_t>((i * 7) ^ (i >> 5));
  const auto gz = gzip(raw);
  EXPECT_EQ(prp::fetch::gunzip(gz), raw);
  auto truncated = gz;
  truncated.resize(gz.size() / 2);
  EXPECT_THROW(prp::fetch::gunzip(truncated), prp::Error);
  EXPECT_THROW(prp::fetch::gunzip({'n', 'o', 't', ' ', 'g', 'z'}), prp::Error);
}

TEST(Fetch, DownloadsUnpacksAndVerifies) {
  Mirror m;
  const auto data = m.root / "data";
  const auto written = prp::fetch::fetch({"toy", m.url()}, data);
  EXPECT_EQ(written.size(), 4u);
  const auto train = prp::load_idx(data / "toy" / "train-images-idx3-ubyte", data / "toy" / "train-labels-idx1-ubyte");
  EXPECT_EQ(train.size(), 3u);
  EXPECT_EQ(train.labels(), (std::vector<int>{1, 2, 3}));
  // Present files are kept unless forced.
  EXPECT_TRUE(prp::fetch::fetch({"toy", m.url()}, data).empty());
  EXPECT_EQ(prp::fetch::fetch({"toy", m.url()}, data, true).size(), 4u);
  for (const auto& e : fs::directory_iterator(data / "toy")) EXPECT_NE(e.path().extension(), ".part");
}

TEST(Fetch, MissingRemoteFileFails) {
  Mirror m;
  fs::remove(m.root / "mirror" / "t10k-labels-idx1-ubyte.gz");
  EXPECT_THROW(prp::fetch::fetch({"toy", m.url()}, m.root / "data"), prp::Error);
}

TEST(Fetch, CorruptArchiveFails) {
  Mirror m;
  write_bytes(m.root / "mirror" / "train-images-idx3-ubyte.gz", {0x1f, 0x8b, 8, 0, 1, 2, 3});
  EXPECT_THROW(prp::fetch::fetch({"toy", m.url()}, m.root / "data"), prp::Error);
}

TEST(Fetch, KnownSources) {
  EXPECT_EQ(prp::fetch::default_source("mnist").dataset, "mnist");
  EXPECT_EQ(prp::fetch::default_source("fashion-mnist").dataset, "fashion-mnist");
  EXPECT_THROW(prp::fetch::default_source("cifar10"), prp::Error);
}

}  // namespace
