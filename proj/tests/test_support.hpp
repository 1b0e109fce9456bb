#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <unistd.h>

#include "newsdistill/rng.hpp"
#include "newsdistill/tensor.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("nd_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Central difference of f with respect to element i of t.
inline double central_difference(const std::function<double()>& f, newsdistill::Tensor t, std::size_t i,
                                 double h = 1e-5) {
  double& v = t.mutable_values()[i];
  const double saved = v;
  v = saved + h;
  const double up = f();
  v = saved - h;
  const double down = f();
  v = saved;
  return (up - down) / (2 * h);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

inline newsdistill::Tensor random_tensor(newsdistill::Shape shape, newsdistill::Rng& rng, bool grad = true) {
  newsdistill::Tensor t(shape, grad);
  for (double& v : t.mutable_values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace testing
