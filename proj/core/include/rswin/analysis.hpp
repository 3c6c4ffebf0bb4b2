#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "rswin/tensor.hpp"

namespace rswin {

struct SymmetricEigen {
  std::vector<double> values;  // descending
  Array vectors;               // [n, n], row i pairs with values[i]
};

// Cyclic Jacobi rotations; `m` must be square and symmetric.
SymmetricEigen symmetric_eigen(const Array& m, double tol = 1e-14, std::size_t max_sweeps = 100);

struct PCAResult {
  Array mean;                               // [d]
  Array components;                         // [k', d], orthonormal rows
  std::vector<double> explained_variance;   // k' values, descending
  std::vector<double> eigenvalues;          // all d covariance eigenvalues, descending
  Array projected;                          // [N, k']
  std::vector<std::size_t> labels;
  std::size_t rank = 0;
  std::string warning;  // set when fewer than k components exist
};

// Centers the rows of features[N, d], eigendecomposes the sample covariance
// (divided by N - 1) and keeps the top k directions. Each component's
// largest-magnitude entry is made positive.
PCAResult pca_fit_project(const Array& features, std::size_t k = 2,
                          std::vector<std::size_t> labels = {});

// trace(S_B) / trace(S_W) of labelled points[N, k]. Needs two classes.
double separability_score(const Array& points, const std::vector<std::size_t>& labels);
double separability_score(const PCAResult& result);

// x,y,class_name
void write_projection_csv(const PCAResult& result, const std::vector<std::string>& class_names,
                          const std::filesystem::path& path);

}  // namespace rswin
