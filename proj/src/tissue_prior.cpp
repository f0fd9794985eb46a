#include "brainseg/tissue_prior.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace brainseg {
namespace {

double percentile(const std::vector<double>& sorted, double q) {
    const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(sorted.size() - 1)));
    return sorted[idx];
}

// Index of the nearest centroid; exact midpoints go to the lower cluster.
int nearest(double v, const std::array<double, 3>& c) {
    int best = 0;
    double best_d = std::abs(v - c[0]);
    for (int k = 1; k < 3; ++k) {
        const double d = std::abs(v - c[k]);
        if (d < best_d) {
            best = k;
            best_d = d;
        }
    }
    return best;
}

} // namespace

KmeansFit fit_kmeans3(const Grid3<float>& intensities, std::uint64_t seed, const KmeansOptions& opts) {
    std::vector<double> values;
    values.reserve(intensities.size());
    for (float v : intensities.values()) {
        if (v != 0.0f) values.push_back(v);
    }
    std::sort(values.begin(), values.end());
    std::vector<double> distinct;
    std::unique_copy(values.begin(), values.end(), std::back_inserter(distinct));
    if (distinct.size() < 3) {
        throw Error(ErrorCode::DegenerateInput,
                    "k-means needs at least 3 distinct nonzero intensities, found " + std::to_string(distinct.size()));
    }

    KmeansFit fit;
    fit.centroids = {percentile(values, 0.25), percentile(values, 0.50), percentile(values, 0.75)};
    if (!(fit.centroids[0] < fit.centroids[1] && fit.centroids[1] < fit.centroids[2])) {
        // Heavily repeated values: seed from the distinct levels instead.
        fit.centroids = {percentile(distinct, 0.25), percentile(distinct, 0.50), percentile(distinct, 0.75)};
        if (!(fit.centroids[0] < fit.centroids[1] && fit.centroids[1] < fit.centroids[2])) {
            fit.centroids = {distinct.front(), distinct[distinct.size() / 2], distinct.back()};
        }
    }

    // Prefix sums over sorted values make each Lloyd step O(log n).
    std::vector<double> prefix(values.size() + 1, 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) prefix[i + 1] = prefix[i] + values[i];

    std::mt19937_64 rng(seed);
    for (fit.iterations = 0; fit.iterations < opts.max_iterations;) {
        ++fit.iterations;
        // Centroids stay sorted, so clusters are contiguous runs of the sorted values.
        const double cut01 = 0.5 * (fit.centroids[0] + fit.centroids[1]);
        const double cut12 = 0.5 * (fit.centroids[1] + fit.centroids[2]);
        const std::size_t b1 = std::upper_bound(values.begin(), values.end(), cut01) - values.begin();
        const std::size_t b2 = std::max(b1, static_cast<std::size_t>(
                                                std::upper_bound(values.begin(), values.end(), cut12) - values.begin()));
        const std::array<std::size_t, 4> edges{0, b1, b2, values.size()};

        std::array<double, 3> next = fit.centroids;
        for (int k = 0; k < 3; ++k) {
            const std::size_t n = edges[k + 1] - edges[k];
            if (n > 0) {
                next[k] = (prefix[edges[k + 1]] - prefix[edges[k]]) / static_cast<double>(n);
            } else {
                std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
                next[k] = values[pick(rng)];
            }
        }
        std::sort(next.begin(), next.end());
        double shift = 0.0;
        for (int k = 0; k < 3; ++k) shift = std::max(shift, std::abs(next[k] - fit.centroids[k]));
        fit.centroids = next;
        if (shift < opts.tolerance) {
            fit.converged = true;
            break;
        }
    }
    return fit;
}

ProbabilityMaps kmeans_tissue_prior(const Volume3D& vol, std::uint64_t seed, const KmeansOptions& opts) {
    Grid3<float> gm(vol.shape(), 0.0f);
    Grid3<float> wm(vol.shape(), 0.0f);
    // No tissue at all: empty maps rather than a degenerate clustering.
    if (std::all_of(vol.data.values().begin(), vol.data.values().end(), [](float v) { return v == 0.0f; })) {
        return ProbabilityMaps(std::move(gm), std::move(wm), MapSource::KmeansFallback);
    }
    const KmeansFit fit = fit_kmeans3(vol.data, seed, opts);
    const auto src = vol.data.values();
    auto g = gm.values();
    auto w = wm.values();
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i] == 0.0f) continue;
        const int cls = nearest(src[i], fit.centroids);
        if (cls == 1) g[i] = 1.0f;
        if (cls == 2) w[i] = 1.0f;
    }
    return ProbabilityMaps(std::move(gm), std::move(wm), MapSource::KmeansFallback);
}

Grid3<std::uint8_t> intensity_threshold_mask(const Volume3D& vol, double low, double high) {
    if (!(low <= high)) {
        throw Error(ErrorCode::InvalidRange, "threshold low must not exceed high");
    }
    Grid3<std::uint8_t> mask(vol.shape(), 0);
    const auto src = vol.data.values();
    auto dst = mask.values();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = (low <= src[i] && src[i] < high) ? 1 : 0;
    }
    return mask;
}

} // namespace brainseg
