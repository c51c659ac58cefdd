#include "trajvae/dtw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace trajvae {

namespace {

double row_dist(const Tensor& a, int i, const Tensor& b, int j, int d) {
    double s = 0.0;
    for (int c = 0; c < d; ++c) {
        double diff = a.data[static_cast<std::size_t>(i * d + c)] -
                      b.data[static_cast<std::size_t>(j * d + c)];
        s += diff * diff;
    }
    return std::sqrt(s);
}

}  // namespace

double dtw_distance(const Tensor& a, const Tensor& b, int window) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[1])
        throw DimensionError("dtw_distance: sequences must be [T x d] with matching d");
    int n = a.shape[0], m = b.shape[0], d = a.shape[1];
    if (n == 0 || m == 0) throw ContractError("dtw_distance: empty sequence");

    const double inf = std::numeric_limits<double>::infinity();
    // two-row dp over the cumulative alignment cost
    std::vector<double> prev(static_cast<std::size_t>(m), inf), cur(static_cast<std::size_t>(m), inf);
    for (int i = 0; i < n; ++i) {
        std::fill(cur.begin(), cur.end(), inf);
        int jlo = 0, jhi = m - 1;
        if (window >= 0) {
            // band is around the rescaled diagonal so unequal lengths stay reachable
            int diag = m > 1 && n > 1 ? static_cast<int>(std::lround(i * double(m - 1) / double(n - 1))) : 0;
            jlo = std::max(0, diag - window);
            jhi = std::min(m - 1, diag + window);
        }
        for (int j = jlo; j <= jhi; ++j) {
            double cost = row_dist(a, i, b, j, d);
            double best;
            if (i == 0 && j == 0)
                best = 0.0;
            else {
                best = prev[static_cast<std::size_t>(j)];  // (1,0)
                if (j > 0) {
                    best = std::min(best, cur[static_cast<std::size_t>(j - 1)]);   // (0,1)
                    best = std::min(best, prev[static_cast<std::size_t>(j - 1)]);  // (1,1)
                }
            }
            cur[static_cast<std::size_t>(j)] = cost + best;
        }
        std::swap(prev, cur);
    }
    double result = prev[static_cast<std::size_t>(m - 1)];
    if (!std::isfinite(result)) throw ContractError("dtw_distance: window too narrow, no valid path");
    return result;
}

namespace {

Tensor pairwise_impl(const std::vector<Tensor>& seqs, int window, bool parallel) {
    int n = static_cast<int>(seqs.size());
    Tensor out = Tensor::zeros({n, n});
    // upper triangle flattened so iterations are balanced units of work
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    int np = static_cast<int>(pairs.size());

#pragma omp parallel for schedule(dynamic) if (parallel)
    for (int p = 0; p < np; ++p) {
        auto [i, j] = pairs[static_cast<std::size_t>(p)];
        double dij = dtw_distance(seqs[static_cast<std::size_t>(i)], seqs[static_cast<std::size_t>(j)], window);
        out.at(i, j) = dij;
        out.at(j, i) = dij;
    }
    return out;
}

}  // namespace

Tensor pairwise_dtw(const std::vector<Tensor>& seqs, int window) {
    return pairwise_impl(seqs, window, true);
}

Tensor pairwise_dtw_serial(const std::vector<Tensor>& seqs, int window) {
    return pairwise_impl(seqs, window, false);
}

}  // namespace trajvae
