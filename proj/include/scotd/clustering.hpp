#pragma once

#include "scotd/embedder.hpp"
#include "scotd/error.hpp"

#include <cstddef>
#include <limits>
#include <vector>

namespace scotd {

// Distances closer than this are treated as equal; ties merge the pair with the smallest
// (first member, second member) indices.
inline constexpr double kLinkageTieEpsilon = 1e-12;

// Symmetric n x n distance matrix stored row-major.
class DistanceMatrix {
public:
    explicit DistanceMatrix(std::size_t n) : n_(n), d_(n * n, 0.0) {}

    static DistanceMatrix cosine(const std::vector<Embedding>& points) {
        DistanceMatrix m(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) {
            for (std::size_t j = i + 1; j < points.size(); ++j) m.set(i, j, cosine_distance(points[i], points[j]));
        }
        return m;
    }

    std::size_t size() const { return n_; }
    double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }
    void set(std::size_t i, std::size_t j, double v) {
        d_[i * n_ + j] = v;
        d_[j * n_ + i] = v;
    }

private:
    std::size_t n_;
    std::vector<double> d_;
};

// Average-linkage agglomerative clustering down to `k` clusters. Returns one label per point;
// labels are numbered 0..k-1 in order of each cluster's smallest member.
inline std::vector<std::size_t> agglomerative_average_linkage(const DistanceMatrix& distances, std::size_t k) {
    const std::size_t n = distances.size();
    if (k == 0) throw InvalidArgument("cluster count must be >= 1");
    DistanceMatrix d = distances;
    std::vector<std::size_t> size(n, 1);
    std::vector<bool> active(n, true);
    std::vector<std::size_t> parent(n);
    for (std::size_t i = 0; i < n; ++i) parent[i] = i;

    // A cluster is represented by its smallest member index; merging j into i keeps i.
    for (std::size_t clusters = n; clusters > k; --clusters) {
        std::size_t best_i = n, best_j = n;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (!active[i]) continue;
            for (std::size_t j = i + 1; j < n; ++j) {
                if (!active[j]) continue;
                if (best_i == n || d(i, j) < best - kLinkageTieEpsilon) {
                    best = d(i, j);
                    best_i = i;
                    best_j = j;
                }
            }
        }
        // Lance-Williams update for average linkage.
        const double wi = static_cast<double>(size[best_i]);
        const double wj = static_cast<double>(size[best_j]);
        for (std::size_t m = 0; m < n; ++m) {
            if (!active[m] || m == best_i || m == best_j) continue;
            d.set(best_i, m, (wi * d(best_i, m) + wj * d(best_j, m)) / (wi + wj));
        }
        size[best_i] += size[best_j];
        active[best_j] = false;
        parent[best_j] = best_i;
    }

    std::vector<std::size_t> label(n, 0);
    std::vector<std::size_t> root_label(n, n);
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = i;
        while (parent[r] != r) r = parent[r];
        if (root_label[r] == n) root_label[r] = next++;
        label[i] = root_label[r];
    }
    return label;
}

}  // namespace scotd
