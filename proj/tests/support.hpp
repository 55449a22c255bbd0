#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "json.hpp"
#include "quakesense/fusion.hpp"
#include "quakesense/io.hpp"

namespace qs_test {

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(QS_FIXTURE_DIR) / name; }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> n{0};
    path_ = std::filesystem::temp_directory_path() /
            ("qs_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// The San Diego fixture bundle with its image path made absolute.
inline quakesense::SampleFeatures fixture_sample() {
  auto j = nlohmann::json::parse(quakesense::read_text_file(fixture("sample_san_diego.json")));
  auto x = j.get<quakesense::SampleFeatures>();
  x.image.image_ref = fixture("street.jpg").string();
  return x;
}

}  // namespace qs_test
