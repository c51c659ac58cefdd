#pragma once

#include <vector>

#include "trajvae/tensor.hpp"

namespace trajvae {

// Dynamic time warping between two sequences of d-dim points (rows of
// [T x d] matrices). Local cost is the Euclidean distance between rows;
// allowed steps advance one row in either or both sequences. `window >= 0`
// restricts the alignment to a band of that half-width around the diagonal.
double dtw_distance(const Tensor& a, const Tensor& b, int window = -1);

// Condensed full pairwise matrix [n x n], symmetric with zero diagonal.
Tensor pairwise_dtw(const std::vector<Tensor>& seqs, int window = -1);
Tensor pairwise_dtw_serial(const std::vector<Tensor>& seqs, int window = -1);

}  // namespace trajvae
