#include "brainseg/volume.hpp"

#include <cmath>

namespace brainseg {

void Volume3D::validate() const {
    const auto& s = data.shape();
    if (s.nx == 0 || s.ny == 0 || s.nz == 0) {
        throw Error(ErrorCode::InvalidArgument, "volume '" + subject_id + "' has an empty dimension");
    }
    for (double sp : spacing) {
        if (!(sp > 0.0) || !std::isfinite(sp)) {
            throw Error(ErrorCode::InvalidArgument, "volume '" + subject_id + "' has non-positive spacing");
        }
    }
    for (float v : data.values()) {
        if (!std::isfinite(v)) {
            throw Error(ErrorCode::NonFiniteData, "volume '" + subject_id + "' contains NaN/Inf voxels");
        }
    }
}

std::string_view to_string(MapSource source) noexcept {
    return source == MapSource::ExternalFast ? "external_fast" : "kmeans_fallback";
}

MapSource map_source_from_string(std::string_view text) {
    if (text == "external_fast") return MapSource::ExternalFast;
    if (text == "kmeans_fallback") return MapSource::KmeansFallback;
    throw Error(ErrorCode::InvalidArgument, "unknown map source '" + std::string(text) + "'");
}

ProbabilityMaps::ProbabilityMaps(Grid3<float> p_gm, Grid3<float> p_wm, MapSource source)
    : p_gm_(std::move(p_gm)), p_wm_(std::move(p_wm)), source_(source) {
    if (!(p_gm_.shape() == p_wm_.shape())) {
        throw Error(ErrorCode::MapShapeMismatch, "GM and WM maps have different shapes");
    }
    const auto gm = p_gm_.values();
    const auto wm = p_wm_.values();
    for (std::size_t i = 0; i < gm.size(); ++i) {
        const double g = gm[i];
        const double w = wm[i];
        if (!(g >= 0.0 && g <= 1.0) || !(w >= 0.0 && w <= 1.0)) {
            throw Error(ErrorCode::MapShapeMismatch,
                        "probability outside [0,1] at voxel " + std::to_string(i));
        }
        if (g + w > 1.0 + kSumTolerance) {
            throw Error(ErrorCode::MapShapeMismatch,
                        "p_gm + p_wm exceeds 1 at voxel " + std::to_string(i));
        }
    }
}

void ProbabilityMaps::require_shape(const Shape3& expected) const {
    if (!(shape() == expected)) {
        throw Error(ErrorCode::MapShapeMismatch, "probability maps do not match the source volume shape");
    }
}

} // namespace brainseg
