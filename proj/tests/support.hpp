#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <unistd.h>
#include <string>
#include <vector>

#include "rswin/tensor.hpp"

namespace testutil {

inline rswin::Array random_array(rswin::Shape shape, unsigned seed, double scale = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist(0.0, scale);
  rswin::Array a(std::move(shape));
  for (auto& x : a.data()) x = dist(gen);
  return a;
}

inline double max_abs_diff(const rswin::Array& a, const rswin::Array& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Central-difference gradient of f at x (x is perturbed in place and
// restored).
inline rswin::Array numeric_grad(rswin::Tensor x, const std::function<double()>& f,
                                 double h = 1e-6) {
  auto& v = x.mutable_value();
  rswin::Array g(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double orig = v[i];
    v[i] = orig + h;
    const double plus = f();
    v[i] = orig - h;
    const double minus = f();
    v[i] = orig;
    g[i] = (plus - minus) / (2.0 * h);
  }
  return g;
}

inline double rel_err(const rswin::Array& analytic, const rswin::Array& numeric,
                      double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return worst;
}

// Builds the graph once for the analytic gradient of every input, then checks
// each input against central differences. Returns the worst relative error.
inline double check_grads(const std::function<rswin::Tensor()>& loss,
                          std::vector<rswin::Tensor> inputs, double h = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  loss().backward();
  double worst = 0.0;
  for (auto& t : inputs) {
    const rswin::Array analytic = t.grad();
    const rswin::Array numeric = numeric_grad(t, [&] {
      rswin::NoGradGuard g;
      return loss().item();
    }, h);
    worst = std::max(worst, rel_err(analytic, numeric));
  }
  return worst;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("rswin_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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

}  // namespace testutil
