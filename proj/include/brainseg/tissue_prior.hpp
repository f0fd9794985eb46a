#pragma once

#include <array>
#include <cstdint>

#include "brainseg/volume.hpp"

namespace brainseg {

struct KmeansOptions {
    int max_iterations = 100;
    double tolerance = 1e-6;
};

struct KmeansFit {
    std::array<double, 3> centroids{}; // ascending: CSF, GM, WM
    int iterations = 0;
    bool converged = false;
};

/// 1D Lloyd's k-means (k = 3) over the nonzero intensities, initialised at the
/// 25th/50th/75th percentiles. Operates on sorted values so the result does
/// not depend on voxel order. Throws DegenerateInput with < 3 distinct values.
KmeansFit fit_kmeans3(const Grid3<float>& intensities, std::uint64_t seed, const KmeansOptions& opts = {});

/// Hard one-hot GM/WM maps from a three-cluster fit of the brain voxels.
ProbabilityMaps kmeans_tissue_prior(const Volume3D& vol, std::uint64_t seed, const KmeansOptions& opts = {});

/// True exactly where low <= intensity < high. Throws InvalidRange if low > high.
Grid3<std::uint8_t> intensity_threshold_mask(const Volume3D& vol, double low, double high);

} // namespace brainseg
