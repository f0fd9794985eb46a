#include "brainseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "brainseg/fsutil.hpp"
#include "brainseg/png_io.hpp"
#include "brainseg/random.hpp"

namespace brainseg {

using nlohmann::json;

std::string_view to_string(Plane plane) noexcept {
    switch (plane) {
    case Plane::Axial: return "axial";
    case Plane::Coronal: return "coronal";
    case Plane::Sagittal: return "sagittal";
    }
    return "axial";
}

std::string_view to_string(Split split) noexcept {
    switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "train";
}

Plane plane_from_string(std::string_view text) {
    for (Plane p : kAllPlanes) {
        if (to_string(p) == text) return p;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown plane '" + std::string(text) + "'");
}

Split split_from_string(std::string_view text) {
    for (Split s : kAllSplits) {
        if (to_string(s) == text) return s;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown split '" + std::string(text) + "'");
}

void BuildConfig::validate() const {
    if (target_resolution < 16) throw Error(ErrorCode::InvalidConfig, "target_resolution must be >= 16");
    if (!(threshold > 0.0 && threshold < 1.0)) throw Error(ErrorCode::InvalidConfig, "threshold must lie in (0,1)");
    if (!(min_tissue_fraction >= 0.0 && min_tissue_fraction < 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "min_tissue_fraction must lie in [0,1)");
    }
    if (planes.empty()) throw Error(ErrorCode::InvalidConfig, "at least one plane is required");
}

std::string BuildConfig::hash() const {
    json planes_json = json::array();
    for (Plane p : planes) planes_json.push_back(to_string(p));
    const json j{{"target_resolution", target_resolution},
                 {"threshold", threshold},
                 {"min_tissue_fraction", min_tissue_fraction},
                 {"planes", planes_json}};
    return sha256_hex(j.dump());
}

std::size_t slice_count(const Shape3& shape, Plane plane) noexcept {
    switch (plane) {
    case Plane::Axial: return shape.nz;
    case Plane::Coronal: return shape.ny;
    case Plane::Sagittal: return shape.nx;
    }
    return 0;
}

template <typename T>
Image<T> extract_slice(const Grid3<T>& grid, Plane plane, std::size_t index) {
    const Shape3& s = grid.shape();
    if (index >= slice_count(s, plane)) {
        throw Error(ErrorCode::OutOfRange, "slice index " + std::to_string(index) + " out of range for " +
                                               std::string(to_string(plane)));
    }
    switch (plane) {
    case Plane::Axial: {
        Image<T> img(s.nx, s.ny);
        for (std::size_t y = 0; y < s.ny; ++y)
            for (std::size_t x = 0; x < s.nx; ++x) img.at(x, y) = grid.at(x, y, index);
        return img;
    }
    case Plane::Coronal: {
        Image<T> img(s.nx, s.nz);
        for (std::size_t z = 0; z < s.nz; ++z)
            for (std::size_t x = 0; x < s.nx; ++x) img.at(x, z) = grid.at(x, index, z);
        return img;
    }
    case Plane::Sagittal: {
        Image<T> img(s.ny, s.nz);
        for (std::size_t z = 0; z < s.nz; ++z)
            for (std::size_t y = 0; y < s.ny; ++y) img.at(y, z) = grid.at(index, y, z);
        return img;
    }
    }
    return {};
}

template <typename T>
std::vector<Image<T>> extract_slices(const Grid3<T>& grid, Plane plane) {
    const std::size_t n = slice_count(grid.shape(), plane);
    std::vector<Image<T>> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) out.push_back(extract_slice(grid, plane, k));
    return out;
}

template <typename T>
Grid3<T> restack_slices(const std::vector<Image<T>>& slices, Plane plane) {
    if (slices.empty()) throw Error(ErrorCode::EmptySlice, "cannot restack zero slices");
    const std::size_t w = slices.front().width();
    const std::size_t h = slices.front().height();
    for (const auto& s : slices) {
        if (s.width() != w || s.height() != h) throw Error(ErrorCode::ShapeMismatch, "slices differ in shape");
    }
    const std::size_t n = slices.size();
    Shape3 shape;
    switch (plane) {
    case Plane::Axial: shape = {w, h, n}; break;
    case Plane::Coronal: shape = {w, n, h}; break;
    case Plane::Sagittal: shape = {n, w, h}; break;
    }
    Grid3<T> grid(shape);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& img = slices[k];
        for (std::size_t v = 0; v < h; ++v) {
            for (std::size_t u = 0; u < w; ++u) {
                switch (plane) {
                case Plane::Axial: grid.at(u, v, k) = img.at(u, v); break;
                case Plane::Coronal: grid.at(u, k, v) = img.at(u, v); break;
                case Plane::Sagittal: grid.at(k, u, v) = img.at(u, v); break;
                }
            }
        }
    }
    return grid;
}

template Image<float> extract_slice(const Grid3<float>&, Plane, std::size_t);
template Image<std::uint8_t> extract_slice(const Grid3<std::uint8_t>&, Plane, std::size_t);
template std::vector<Image<float>> extract_slices(const Grid3<float>&, Plane);
template std::vector<Image<std::uint8_t>> extract_slices(const Grid3<std::uint8_t>&, Plane);
template Grid3<float> restack_slices(const std::vector<Image<float>>&, Plane);
template Grid3<std::uint8_t> restack_slices(const std::vector<Image<std::uint8_t>>&, Plane);

Image<float> resize_to_grid(const Image<float>& slice, int target) {
    if (slice.empty()) throw Error(ErrorCode::EmptySlice, "cannot resize an empty slice");
    if (target < 1) throw Error(ErrorCode::InvalidArgument, "resize target must be positive");
    const auto t = static_cast<std::size_t>(target);
    if (slice.width() == t && slice.height() == t) return slice;

    // Per-axis source coordinates with half-pixel centres, clamped to the edge.
    auto taps = [t](std::size_t src_n) {
        std::vector<std::pair<std::size_t, double>> out(t);
        const double scale = static_cast<double>(src_n) / static_cast<double>(t);
        for (std::size_t i = 0; i < t; ++i) {
            double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
            s = std::clamp(s, 0.0, static_cast<double>(src_n - 1));
            auto i0 = static_cast<std::size_t>(std::floor(s));
            if (i0 >= src_n - 1) i0 = src_n > 1 ? src_n - 2 : 0;
            out[i] = {i0, src_n > 1 ? s - static_cast<double>(i0) : 0.0};
        }
        return out;
    };
    const auto xs = taps(slice.width());
    const auto ys = taps(slice.height());
    const std::size_t x_last = slice.width() - 1;
    const std::size_t y_last = slice.height() - 1;

    Image<float> out(t, t);
    for (std::size_t y = 0; y < t; ++y) {
        const auto [y0, fy] = ys[y];
        const std::size_t y1 = std::min(y0 + 1, y_last);
        for (std::size_t x = 0; x < t; ++x) {
            const auto [x0, fx] = xs[x];
            const std::size_t x1 = std::min(x0 + 1, x_last);
            const double top = (1.0 - fx) * slice.at(x0, y0) + fx * slice.at(x1, y0);
            const double bottom = (1.0 - fx) * slice.at(x0, y1) + fx * slice.at(x1, y1);
            out.at(x, y) = static_cast<float>((1.0 - fy) * top + fy * bottom);
        }
    }
    return out;
}

LabelMask fuse_mask(const Image<float>& p_gm, const Image<float>& p_wm, double threshold) {
    if (!p_gm.same_shape(p_wm)) throw Error(ErrorCode::ShapeMismatch, "GM and WM slices differ in shape");
    LabelMask label(p_gm.width(), p_gm.height(), 0);
    for (std::size_t i = 0; i < label.size(); ++i) {
        if (p_gm[i] > threshold) label[i] = 1;
        if (p_wm[i] > threshold) label[i] = 2;
    }
    return label;
}

bool is_informative(const LabelMask& label, double min_tissue_fraction) {
    std::size_t tissue = 0;
    for (std::uint8_t v : label.values()) tissue += (v == 1 || v == 2);
    return static_cast<double>(tissue) >= min_tissue_fraction * static_cast<double>(label.size());
}

Image<float> normalize_min_max(const Image<float>& slice) {
    Image<float> out(slice.width(), slice.height(), 0.0f);
    if (slice.empty()) return out;
    const auto [lo_it, hi_it] = std::minmax_element(slice.values().begin(), slice.values().end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (!(hi > lo)) return out;
    for (std::size_t i = 0; i < slice.size(); ++i) {
        out[i] = static_cast<float>(std::clamp((slice[i] - lo) / (hi - lo), 0.0, 1.0));
    }
    return out;
}

Image<std::uint8_t> to_u8(const Image<float>& unit_image) {
    Image<std::uint8_t> out(unit_image.width(), unit_image.height());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(unit_image[i], 0.0f, 1.0f) * 255.0f));
    }
    return out;
}

const std::vector<std::string>& SubjectSplit::of(Split s) const {
    switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
    }
    return train;
}

SubjectSplit split_subjects(std::vector<std::string> subject_ids, std::array<double, 3> fractions,
                            std::uint64_t seed) {
    double total = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0)) throw Error(ErrorCode::InvalidArgument, "split fractions must be non-negative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorCode::InvalidArgument, "split fractions must sum to 1");

    std::sort(subject_ids.begin(), subject_ids.end());
    if (std::adjacent_find(subject_ids.begin(), subject_ids.end()) != subject_ids.end()) {
        throw Error(ErrorCode::DuplicateIds, "subject ids must be unique");
    }
    std::mt19937_64 rng(seed);
    deterministic_shuffle(std::span<std::string>(subject_ids), rng);

    const std::size_t n = subject_ids.size();
    // The epsilon keeps products such as 0.7 * 10 from flooring to 6.
    auto take = [n](double f) { return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9)); };
    const std::size_t n_train = std::min(take(fractions[0]), n);
    const std::size_t n_val = std::min(take(fractions[1]), n - n_train);

    SubjectSplit out;
    out.train.assign(subject_ids.begin(), subject_ids.begin() + n_train);
    out.val.assign(subject_ids.begin() + n_train, subject_ids.begin() + n_train + n_val);
    out.test.assign(subject_ids.begin() + n_train + n_val, subject_ids.end());
    return out;
}

std::filesystem::path manifest_path(const std::filesystem::path& root, Plane plane, Split split) {
    return root / "manifests" / (std::string(to_string(plane)) + "_" + std::string(to_string(split)) + ".jsonl");
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    std::ostringstream out;
    for (const auto& e : manifest.entries) {
        const json line{{"image_path", e.image_path},
                        {"label_path", e.label_path},
                        {"subject_id", e.subject_id},
                        {"plane", to_string(e.plane)},
                        {"index", e.index},
                        {"split", to_string(manifest.split)},
                        {"seed", manifest.seed},
                        {"build_config_hash", manifest.build_config_hash}};
        out << line.dump() << '\n';
    }
    try {
        write_text_file(path, out.str());
    } catch (const std::exception& ex) {
        throw Error(ErrorCode::ManifestWriteFailure, ex.what());
    }
}

DatasetManifest read_manifest(const std::filesystem::path& path, const std::filesystem::path& root) {
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingManifest, path.string());
    DatasetManifest m;
    m.root = root;
    std::ifstream in(path);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& ex) {
            throw Error(ErrorCode::InvalidArgument, path.string() + ": " + ex.what());
        }
        ManifestEntry e;
        e.image_path = j.at("image_path").get<std::string>();
        e.label_path = j.at("label_path").get<std::string>();
        e.subject_id = j.at("subject_id").get<std::string>();
        e.plane = plane_from_string(j.at("plane").get<std::string>());
        e.index = j.at("index").get<std::size_t>();
        if (first) {
            m.split = split_from_string(j.at("split").get<std::string>());
            m.seed = j.at("seed").get<std::uint64_t>();
            m.build_config_hash = j.at("build_config_hash").get<std::string>();
            first = false;
        }
        m.entries.push_back(std::move(e));
    }
    if (first) {
        // Empty manifests carry no per-line metadata; recover the split from the name.
        const std::string stem = path.stem().string();
        const auto us = stem.rfind('_');
        if (us != std::string::npos) m.split = split_from_string(stem.substr(us + 1));
    }
    return m;
}

SlicePair make_slice_pair(const Volume3D& brain, const ProbabilityMaps& maps, Plane plane, std::size_t index,
                          const BuildConfig& config) {
    maps.require_shape(brain.shape());
    const int t = config.target_resolution;
    SlicePair pair;
    pair.subject_id = brain.subject_id;
    pair.plane = plane;
    pair.index = index;
    pair.image = normalize_min_max(resize_to_grid(extract_slice(brain.data, plane, index), t));
    // Probability maps are resized first and thresholded after.
    const auto gm = resize_to_grid(extract_slice(maps.gm(), plane, index), t);
    const auto wm = resize_to_grid(extract_slice(maps.wm(), plane, index), t);
    pair.label = fuse_mask(gm, wm, config.threshold);
    return pair;
}

DatasetBuilder::DatasetBuilder(std::filesystem::path root, BuildConfig config, SubjectSplit splits,
                               std::uint64_t seed)
    : root_(std::move(root)), config_(std::move(config)), splits_(std::move(splits)), seed_(seed) {
    config_.validate();
    std::set<std::string> seen;
    for (Split s : kAllSplits) {
        for (const auto& id : splits_.of(s)) {
            if (!seen.insert(id).second) {
                throw Error(ErrorCode::DuplicateIds, "subject '" + id + "' appears in more than one split");
            }
        }
    }
    config_hash_ = config_.hash();
    for (Plane p : config_.planes) {
        for (Split s : kAllSplits) {
            DatasetManifest m;
            m.split = s;
            m.seed = seed_;
            m.build_config_hash = config_hash_;
            m.root = root_;
            manifests_.emplace(std::pair{p, s}, std::move(m));
        }
    }
}

Split DatasetBuilder::split_of(const std::string& subject_id) const {
    for (Split s : kAllSplits) {
        const auto& ids = splits_.of(s);
        if (std::find(ids.begin(), ids.end(), subject_id) != ids.end()) return s;
    }
    throw Error(ErrorCode::InvalidArgument, "subject '" + subject_id + "' is not assigned to any split");
}

std::size_t DatasetBuilder::add_subject(const Volume3D& brain, const ProbabilityMaps& maps) {
    maps.require_shape(brain.shape());
    const Split split = split_of(brain.subject_id);
    std::size_t written = 0;
    for (Plane plane : config_.planes) {
        auto& manifest = manifests_.at({plane, split});
        const std::string dir = std::string(to_string(split)) + "/" + std::string(to_string(plane)) + "/";
        for (std::size_t k = 0; k < slice_count(brain.shape(), plane); ++k) {
            const SlicePair pair = make_slice_pair(brain, maps, plane, k, config_);
            if (!is_informative(pair.label, config_.min_tissue_fraction)) continue;
            const std::string stem = dir + brain.subject_id + "_" + std::to_string(k);
            ManifestEntry e{stem + ".png", stem + "_label.png", brain.subject_id, plane, k};
            png::write_gray8(root_ / e.image_path, to_u8(pair.image));
            png::write_gray8(root_ / e.label_path, pair.label);
            manifest.entries.push_back(std::move(e));
            ++written;
        }
    }
    return written;
}

std::map<std::pair<Plane, Split>, DatasetManifest> DatasetBuilder::finish() {
    for (auto& [key, manifest] : manifests_) {
        std::sort(manifest.entries.begin(), manifest.entries.end(), [](const auto& a, const auto& b) {
            return std::tie(a.subject_id, a.index) < std::tie(b.subject_id, b.index);
        });
        write_manifest(manifest_path(root_, key.first, key.second), manifest);
    }
    json planes = json::array();
    for (Plane p : config_.planes) planes.push_back(to_string(p));
    const json info{{"seed", seed_},
                    {"build_config_hash", config_hash_},
                    {"build_config",
                     {{"target_resolution", config_.target_resolution},
                      {"threshold", config_.threshold},
                      {"min_tissue_fraction", config_.min_tissue_fraction},
                      {"planes", planes}}},
                    {"subjects", {{"train", splits_.train}, {"val", splits_.val}, {"test", splits_.test}}}};
    try {
        write_text_file(root_ / "manifests" / "build_info.json", info.dump(2) + "\n");
    } catch (const std::exception& ex) {
        throw Error(ErrorCode::ManifestWriteFailure, ex.what());
    }
    return manifests_;
}

std::map<std::pair<Plane, Split>, DatasetManifest> build_dataset(const std::vector<SubjectData>& subjects,
                                                                 const BuildConfig& config,
                                                                 const SubjectSplit& splits,
                                                                 const std::filesystem::path& root,
                                                                 std::uint64_t seed) {
    DatasetBuilder builder(root, config, splits, seed);
    for (const auto& s : subjects) builder.add_subject(s.brain, s.maps);
    return builder.finish();
}

} // namespace brainseg
