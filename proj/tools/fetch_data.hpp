#pragma once

// Optional download helper for the IDX image sets. Kept out of the library:
// nothing under include/ touches the network.

#include <curl/curl.h>
#include <zlib.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "prp/data.hpp"
#include "prp/error.hpp"

namespace prp::fetch {

struct Source {
  std::string dataset;   // directory name under the data dir
  std::string base_url;  // ends with '/'
};

inline Source default_source(const std::string& dataset) {
  if (dataset == "mnist") return {"mnist", "https://storage.googleapis.com/cvdf-datasets/mnist/"};
  if (dataset == "fashion-mnist") {
    return {"fashion-mnist", "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/"};
  }
  throw Error("fetch-data: unknown dataset '" + dataset + "' (expected mnist|fashion-mnist)");
}

inline const std::vector<std::string>& idx_file_names() {
  static const std::vector<std::string> names = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                                                 "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};
  return names;
}

inline std::vector<std::uint8_t> download(const std::string& url) {
  CURL* curl = curl_easy_init();
  if (curl == nullptr) throw Error("fetch-data: curl_easy_init failed");
  std::vector<std::uint8_t> body;
  const auto sink = +[](char* ptr, std::size_t size, std::size_t n, void* user) -> std::size_t {
    auto* out = static_cast<std::vector<std::uint8_t>*>(user);
    out->insert(out->end(), ptr, ptr + size * n);
    return size * n;
  };
  curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, sink);
  curl_easy_setopt(curl, CURLOPT_WRITEDATA, &body);
  const CURLcode rc = curl_easy_perform(curl);
  curl_easy_cleanup(curl);
  if (rc != CURLE_OK) throw Error("fetch-data: " + url + ": " + curl_easy_strerror(rc));
  return body;
}

inline std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw Error("gunzip: inflateInit2 failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf;
    zs.avail_out = sizeof buf;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw Error("gunzip: corrupt gzip stream");
    }
    out.insert(out.end(), buf, buf + (sizeof buf - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw Error("gunzip: truncated gzip stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

/// Downloads the four .gz files, unpacks them into data_dir/<dataset>/ and
/// checks that the result loads. Existing files are kept unless `force`.
inline std::vector<std::filesystem::path> fetch(const Source& src, const std::filesystem::path& data_dir,
                                                bool force = false) {
  const auto dir = data_dir / src.dataset;
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const auto& name : idx_file_names()) {
    const auto target = dir / name;
    if (std::filesystem::exists(target) && !force) continue;
    const auto raw = gunzip(download(src.base_url + name + ".gz"));
    const auto tmp = target.string() + ".part";
    {
      std::ofstream out(tmp, std::ios::binary);
      out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
      if (!out) throw Error("fetch-data: cannot write " + tmp);
    }
    std::filesystem::rename(tmp, target);
    written.push_back(target);
  }
  load_idx(dir / idx_file_names()[0], dir / idx_file_names()[1]);
  load_idx(dir / idx_file_names()[2], dir / idx_file_names()[3]);
  return written;
}

}  // namespace prp::fetch
