#pragma once

#include <array>
#include <string>
#include <string_view>

#include "brainseg/grid.hpp"

namespace brainseg {

/// One subject scan: intensities in scanner units plus voxel spacing in mm.
struct Volume3D {
    Grid3<float> data;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::string subject_id;

    const Shape3& shape() const noexcept { return data.shape(); }

    /// Throws NonFiniteData / InvalidArgument when the type invariants fail.
    void validate() const;
};

enum class MapSource { ExternalFast, KmeansFallback };

std::string_view to_string(MapSource source) noexcept;
MapSource map_source_from_string(std::string_view text);

/// Per-voxel gray/white matter probabilities aligned to a source volume.
/// Construction validates ranges and the p_gm + p_wm <= 1 + eps bound.
class ProbabilityMaps {
  public:
    static constexpr double kSumTolerance = 1e-6;

    ProbabilityMaps(Grid3<float> p_gm, Grid3<float> p_wm, MapSource source);

    const Grid3<float>& gm() const noexcept { return p_gm_; }
    const Grid3<float>& wm() const noexcept { return p_wm_; }
    MapSource source() const noexcept { return source_; }
    const Shape3& shape() const noexcept { return p_gm_.shape(); }

    void require_shape(const Shape3& expected) const;

  private:
    Grid3<float> p_gm_;
    Grid3<float> p_wm_;
    MapSource source_;
};

} // namespace brainseg
