#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "brainseg/trainer.hpp"
#include "brainseg/volume.hpp"

namespace brainseg::testing {

/// 256x256 slice with an elliptical gray-matter ring around a white-matter
/// core on a dark background. Image intensities are class plateaus, so the
/// label is fully determined by the image.
TrainingSample geometric_slice(std::uint64_t seed);

std::vector<TrainingSample> geometric_slices(std::size_t count, std::uint64_t seed);

/// Head phantom: scalp/skull shell, CSF, gray-matter shell, white-matter core.
Volume3D phantom_volume(const Shape3& shape, const std::string& subject_id, std::uint64_t seed);

/// Exact GM/WM maps of phantom_volume (before noise) as probabilities.
ProbabilityMaps phantom_maps(const Shape3& shape, std::uint64_t seed);

/// Brain-only phantom (skull zeroed) paired with its maps.
SubjectData phantom_subject(const Shape3& shape, const std::string& subject_id, std::uint64_t seed);


/// Raw-dataset fixture for end-to-end pipeline runs: `n_subjects` phantom
/// heads under <root>/raw, bet/fast links to the stand-in tool under
/// <root>/fsl/bin, and <root>/config.json pointing at both.
std::filesystem::path write_pipeline_fixture(const std::filesystem::path& root, std::size_t n_subjects,
                                             const std::filesystem::path& fake_fsl, const Shape3& shape = {24, 26, 20});

} // namespace brainseg::testing
