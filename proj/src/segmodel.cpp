#include "brainseg/segmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "brainseg/dataset.hpp"
#include "brainseg/fsutil.hpp"
#include "brainseg/random.hpp"

namespace brainseg {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'B', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr int kBoxFeatures = 4;

const std::string kPatchW = "image_encoder.patch_embed.weight";
const std::string kPatchB = "image_encoder.patch_embed.bias";
const std::string kPos = "image_encoder.pos_embed";
const std::string kBoxW = "prompt_encoder.box_embed.weight";
const std::string kBoxB = "prompt_encoder.box_embed.bias";
const std::string kFuseW = "mask_decoder.fuse.weight";
const std::string kFuseB = "mask_decoder.fuse.bias";
const std::string kUpW = "mask_decoder.upscale.weight";
const std::string kUpB = "mask_decoder.upscale.bias";
const std::string kHeadW = "mask_decoder.mask_head.weight";
const std::string kHeadB = "mask_decoder.mask_head.bias";
const std::string kClassW = "mask_decoder.class_head.weight";
const std::string kClassB = "mask_decoder.class_head.bias";

std::string block_name(int b, const char* leaf) {
    return "image_encoder.blocks." + std::to_string(b) + "." + leaf;
}

bool is_class_head(const std::string& name) { return name.rfind("mask_decoder.class_head.", 0) == 0; }

constexpr float kInvSqrt2 = 0.70710678118654752440f;
constexpr float kInvSqrt2Pi = 0.39894228040143267794f;

inline float gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * kInvSqrt2)); }
inline float gelu_grad(float x) {
    return 0.5f * (1.0f + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5f * x * x);
}

Eigen::MatrixXf gelu(const Eigen::MatrixXf& m) { return m.unaryExpr([](float v) { return gelu(v); }); }

// d(out)/d(pre) applied in place: grad *= gelu'(pre)
void gelu_backward_inplace(Eigen::MatrixXf& grad, const Eigen::MatrixXf& pre) {
    grad.array() *= pre.unaryExpr([](float v) { return gelu_grad(v); }).array();
}

struct Tap {
    std::size_t i0;
    std::size_t i1;
    double frac;
};

// Same sampling convention as resize_to_grid.
std::vector<Tap> bilinear_taps(std::size_t src_n, std::size_t dst_n) {
    std::vector<Tap> taps(dst_n);
    const double scale = static_cast<double>(src_n) / static_cast<double>(dst_n);
    for (std::size_t i = 0; i < dst_n; ++i) {
        double s = std::clamp((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0, static_cast<double>(src_n - 1));
        auto i0 = static_cast<std::size_t>(std::floor(s));
        if (src_n == 1) {
            taps[i] = {0, 0, 0.0};
            continue;
        }
        if (i0 >= src_n - 1) i0 = src_n - 2;
        taps[i] = {i0, i0 + 1, s - static_cast<double>(i0)};
    }
    return taps;
}

Eigen::VectorXf box_features(const PromptSpec& p) {
    Eigen::VectorXf f(kBoxFeatures);
    f << static_cast<float>(2.0 * p.x0 - 1.0), static_cast<float>(2.0 * p.y0 - 1.0),
        static_cast<float>(2.0 * p.x1 - 1.0), static_cast<float>(2.0 * p.y1 - 1.0);
    return f;
}

void fill_normal(Eigen::MatrixXf& m, double stddev, std::mt19937_64& rng) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<float>(stddev * standard_normal(rng));
}

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error(ErrorCode::IncompatibleCheckpoint, "truncated checkpoint while reading " + what);
    return v;
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
    auto p = checkpoint;
    p += ".json";
    return p;
}

} // namespace

ModelConfig ModelConfig::tiny() { return {}; }

std::size_t ModelConfig::encoder_parameter_count() const noexcept {
    const auto c = static_cast<std::size_t>(embed_dim);
    const auto k = static_cast<std::size_t>(3 * patch_size * patch_size);
    const auto g2 = static_cast<std::size_t>(grid_size()) * static_cast<std::size_t>(grid_size());
    return c * k + c + c * g2 + static_cast<std::size_t>(encoder_depth) * 2 * (c * c + c);
}

void ModelConfig::validate() const {
    if (native_resolution < 16 || patch_size < 1 || native_resolution % patch_size != 0) {
        throw Error(ErrorCode::InvalidConfig, "native_resolution must be >= 16 and divisible by patch_size");
    }
    if (embed_dim < 1 || decoder_dim < 1 || encoder_depth < 0) {
        throw Error(ErrorCode::InvalidConfig, "embed_dim/decoder_dim must be positive, encoder_depth >= 0");
    }
}

json ModelConfig::to_json() const {
    return {{"variant", variant},
            {"native_resolution", native_resolution},
            {"patch_size", patch_size},
            {"embed_dim", embed_dim},
            {"encoder_depth", encoder_depth},
            {"decoder_dim", decoder_dim}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    c.variant = j.value("variant", c.variant);
    c.native_resolution = j.value("native_resolution", c.native_resolution);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.encoder_depth = j.value("encoder_depth", c.encoder_depth);
    c.decoder_dim = j.value("decoder_dim", c.decoder_dim);
    c.validate();
    return c;
}

PromptSpec PromptSpec::tissue_box(const LabelMask& label) {
    std::size_t x_min = label.width(), y_min = label.height(), x_max = 0, y_max = 0;
    bool any = false;
    for (std::size_t y = 0; y < label.height(); ++y) {
        for (std::size_t x = 0; x < label.width(); ++x) {
            if (label.at(x, y) == 0) continue;
            any = true;
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    }
    if (!any) return full_image();
    const auto w = static_cast<double>(label.width());
    const auto h = static_cast<double>(label.height());
    return {static_cast<double>(x_min) / w, static_cast<double>(y_min) / h, static_cast<double>(x_max + 1) / w,
            static_cast<double>(y_max + 1) / h};
}

void PromptSpec::validate() const {
    for (double v : {x0, y0, x1, y1}) {
        if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::InvalidArgument, "box coordinates must lie in [0,1]");
    }
    if (!(x0 < x1 && y0 < y1)) throw Error(ErrorCode::InvalidArgument, "box must satisfy x0 < x1 and y0 < y1");
}

std::array<Image<float>, kNumClasses> softmax_probabilities(const LogitMap& logits) {
    const auto n = static_cast<std::size_t>(logits.size);
    std::array<Image<float>, kNumClasses> probs{Image<float>(n, n), Image<float>(n, n), Image<float>(n, n)};
    for (std::size_t p = 0; p < logits.pixels(); ++p) {
        double m = logits.at(0, p);
        for (int c = 1; c < kNumClasses; ++c) m = std::max(m, logits.at(c, p));
        std::array<double, kNumClasses> e{};
        double sum = 0.0;
        for (int c = 0; c < kNumClasses; ++c) {
            e[c] = std::exp(logits.at(c, p) - m);
            sum += e[c];
        }
        for (int c = 0; c < kNumClasses; ++c) probs[c][p] = static_cast<float>(e[c] / sum);
    }
    return probs;
}

LabelMask argmax_labels(const LogitMap& logits) {
    const auto n = static_cast<std::size_t>(logits.size);
    LabelMask label(n, n, 0);
    for (std::size_t p = 0; p < logits.pixels(); ++p) {
        int best = 0;
        for (int c = 1; c < kNumClasses; ++c) {
            if (logits.at(c, p) > logits.at(best, p)) best = c;
        }
        label[p] = static_cast<std::uint8_t>(best);
    }
    return label;
}

SegModel::SegModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const int c = config_.embed_dim;
    const int k = 3 * config_.patch_size * config_.patch_size;
    const int g2 = config_.grid_size() * config_.grid_size();
    const int d = config_.decoder_dim;
    const int s2 = config_.patch_size * config_.patch_size;
    auto add = [this](const std::string& name, int rows, int cols, bool trainable) {
        params_.push_back({name, Eigen::MatrixXf::Zero(rows, cols), trainable});
    };
    add(kPatchW, c, k, false);
    add(kPatchB, c, 1, false);
    add(kPos, c, g2, false);
    for (int b = 0; b < config_.encoder_depth; ++b) {
        add(block_name(b, "fc1.weight"), c, c, false);
        add(block_name(b, "fc1.bias"), c, 1, false);
        add(block_name(b, "fc2.weight"), c, c, false);
        add(block_name(b, "fc2.bias"), c, 1, false);
    }
    add(kBoxW, c, kBoxFeatures, true);
    add(kBoxB, c, 1, true);
    add(kFuseW, c, c, true);
    add(kFuseB, c, 1, true);
    add(kUpW, d * s2, c, true);
    add(kUpB, d, 1, true);
    add(kHeadW, d, d, true);
    add(kHeadB, d, 1, true);
    add(kClassW, kNumClasses, d, true);
    add(kClassB, kNumClasses, 1, true);
}

SegModel SegModel::init(const ModelConfig& config, std::uint64_t seed) {
    SegModel model(config);
    std::mt19937_64 rng(seed);
    for (auto& p : model.params_) {
        if (p.name.ends_with(".bias")) continue; // zero
        if (p.name == kPos) {
            fill_normal(p.value, 0.02, rng);
        } else if (is_class_head(p.name)) {
            fill_normal(p.value, 0.01, rng);
        } else {
            fill_normal(p.value, std::sqrt(2.0 / static_cast<double>(p.value.cols())), rng);
        }
    }
    return model;
}

std::size_t SegModel::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name == name) return i;
    }
    throw Error(ErrorCode::MissingKeys, "no parameter named '" + name + "'");
}

const Parameter& SegModel::parameter(const std::string& name) const { return params_[index_of(name)]; }
Parameter& SegModel::parameter(const std::string& name) { return params_[index_of(name)]; }

std::size_t SegModel::parameter_count(bool trainable) const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (p.trainable == trainable) n += static_cast<std::size_t>(p.value.size());
    }
    return n;
}

Gradients SegModel::zero_gradients() const {
    Gradients g;
    g.reserve(params_.size());
    for (const auto& p : params_) {
        g.push_back(p.trainable ? Eigen::MatrixXf::Zero(p.value.rows(), p.value.cols()) : Eigen::MatrixXf());
    }
    return g;
}

EmbeddingGrid SegModel::encode(const Image<float>& image) const {
    if (image.empty()) throw Error(ErrorCode::EmptySlice, "cannot encode an empty image");
    for (float v : image.values()) {
        if (!(v >= 0.0f && v <= 1.0f)) throw Error(ErrorCode::InvalidArgument, "model input must lie in [0,1]");
    }
    const Image<float> native = resize_to_grid(image, config_.native_resolution);
    const int p = config_.patch_size;
    const int g = config_.grid_size();
    const int k = 3 * p * p;

    // Grayscale replicated into 3 identical channel blocks per patch.
    Eigen::MatrixXf patches(k, g * g);
    for (int gy = 0; gy < g; ++gy) {
        for (int gx = 0; gx < g; ++gx) {
            const int col = gy * g + gx;
            for (int u = 0; u < p; ++u) {
                for (int v = 0; v < p; ++v) {
                    const float val = native.at(static_cast<std::size_t>(gx * p + v), static_cast<std::size_t>(gy * p + u));
                    for (int ch = 0; ch < 3; ++ch) patches(ch * p * p + u * p + v, col) = val;
                }
            }
        }
    }

    EmbeddingGrid out;
    out.channels = config_.embed_dim;
    out.height = g;
    out.width = g;
    out.features.noalias() = parameter(kPatchW).value * patches;
    out.features.colwise() += parameter(kPatchB).value.col(0);
    out.features += parameter(kPos).value;
    for (int b = 0; b < config_.encoder_depth; ++b) {
        Eigen::MatrixXf h = parameter(block_name(b, "fc1.weight")).value * out.features;
        h.colwise() += parameter(block_name(b, "fc1.bias")).value.col(0);
        h = gelu(h);
        Eigen::MatrixXf r = parameter(block_name(b, "fc2.weight")).value * h;
        r.colwise() += parameter(block_name(b, "fc2.bias")).value.col(0);
        out.features += r;
    }
    return out;
}

LogitMap SegModel::decode(const EmbeddingGrid& embedding, const PromptSpec& prompt, DecoderCache* cache) const {
    prompt.validate();
    const int g = config_.grid_size();
    const int s = config_.patch_size;
    const int m = config_.mask_resolution();
    const int d = config_.decoder_dim;
    if (embedding.channels != config_.embed_dim || embedding.height != g || embedding.width != g) {
        throw Error(ErrorCode::ShapeMismatch, "embedding does not match the model configuration");
    }

    DecoderCache local;
    DecoderCache& c = cache ? *cache : local;
    c.box_features = box_features(prompt);
    const Eigen::VectorXf q = parameter(kBoxW).value * c.box_features + parameter(kBoxB).value.col(0);

    c.fused_in = embedding.features;
    c.fused_in.colwise() += q;
    c.fuse_pre.noalias() = parameter(kFuseW).value * c.fused_in;
    c.fuse_pre.colwise() += parameter(kFuseB).value.col(0);
    c.fuse_act = gelu(c.fuse_pre);

    // Transposed conv with kernel == stride == s: each grid cell expands to
    // an s x s block of D-channel pixels.
    const Eigen::MatrixXf up = parameter(kUpW).value * c.fuse_act;
    const auto& up_bias = parameter(kUpB).value;
    c.up_pre.resize(d, static_cast<Eigen::Index>(m) * m);
    for (int gy = 0; gy < g; ++gy) {
        for (int gx = 0; gx < g; ++gx) {
            const int cell = gy * g + gx;
            for (int u = 0; u < s; ++u) {
                for (int v = 0; v < s; ++v) {
                    const Eigen::Index pix = static_cast<Eigen::Index>(gy * s + u) * m + (gx * s + v);
                    for (int ch = 0; ch < d; ++ch) {
                        c.up_pre(ch, pix) = up((ch * s + u) * s + v, cell) + up_bias(ch, 0);
                    }
                }
            }
        }
    }
    c.up_act = gelu(c.up_pre);
    c.head_pre.noalias() = parameter(kHeadW).value * c.up_act;
    c.head_pre.colwise() += parameter(kHeadB).value.col(0);
    c.head_act = gelu(c.head_pre);
    Eigen::MatrixXf logits = parameter(kClassW).value * c.head_act;
    logits.colwise() += parameter(kClassB).value.col(0);

    LogitMap out(kSliceSize);
    if (m == kSliceSize) {
        for (int ch = 0; ch < kNumClasses; ++ch)
            for (std::size_t p = 0; p < out.pixels(); ++p) out.at(ch, p) = logits(ch, static_cast<Eigen::Index>(p));
    } else {
        const auto taps = bilinear_taps(static_cast<std::size_t>(m), kSliceSize);
        for (int ch = 0; ch < kNumClasses; ++ch) {
            for (std::size_t y = 0; y < kSliceSize; ++y) {
                const auto& ty = taps[y];
                for (std::size_t x = 0; x < kSliceSize; ++x) {
                    const auto& tx = taps[x];
                    auto src = [&](std::size_t yy, std::size_t xx) {
                        return static_cast<double>(logits(ch, static_cast<Eigen::Index>(yy * m + xx)));
                    };
                    const double top = (1.0 - tx.frac) * src(ty.i0, tx.i0) + tx.frac * src(ty.i0, tx.i1);
                    const double bot = (1.0 - tx.frac) * src(ty.i1, tx.i0) + tx.frac * src(ty.i1, tx.i1);
                    out.at(ch, y * kSliceSize + x) = (1.0 - ty.frac) * top + ty.frac * bot;
                }
            }
        }
    }
    for (double v : out.logits) {
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteActivation, "decoder produced NaN/Inf logits");
    }
    return out;
}

LogitMap SegModel::forward(const Image<float>& image, const PromptSpec& prompt) const {
    return decode(encode(image), prompt);
}

void SegModel::backward(const DecoderCache& c, const LogitMap& logit_grad, Gradients& grads) const {
    const int g = config_.grid_size();
    const int s = config_.patch_size;
    const int m = config_.mask_resolution();
    const int d = config_.decoder_dim;
    const Eigen::Index mm = static_cast<Eigen::Index>(m) * m;
    if (grads.size() != params_.size()) throw Error(ErrorCode::ShapeMismatch, "gradient buffer size mismatch");

    // Back through the optional bilinear upsample (its transpose).
    Eigen::MatrixXf dlogits = Eigen::MatrixXf::Zero(kNumClasses, mm);
    if (m == kSliceSize) {
        for (int ch = 0; ch < kNumClasses; ++ch)
            for (Eigen::Index p = 0; p < mm; ++p) dlogits(ch, p) = static_cast<float>(logit_grad.at(ch, p));
    } else {
        const auto taps = bilinear_taps(static_cast<std::size_t>(m), kSliceSize);
        for (int ch = 0; ch < kNumClasses; ++ch) {
            for (std::size_t y = 0; y < kSliceSize; ++y) {
                const auto& ty = taps[y];
                for (std::size_t x = 0; x < kSliceSize; ++x) {
                    const auto& tx = taps[x];
                    const double gval = logit_grad.at(ch, y * kSliceSize + x);
                    auto add = [&](std::size_t yy, std::size_t xx, double w) {
                        dlogits(ch, static_cast<Eigen::Index>(yy * m + xx)) += static_cast<float>(w * gval);
                    };
                    add(ty.i0, tx.i0, (1.0 - ty.frac) * (1.0 - tx.frac));
                    add(ty.i0, tx.i1, (1.0 - ty.frac) * tx.frac);
                    add(ty.i1, tx.i0, ty.frac * (1.0 - tx.frac));
                    add(ty.i1, tx.i1, ty.frac * tx.frac);
                }
            }
        }
    }

    grads[index_of(kClassW)].noalias() += dlogits * c.head_act.transpose();
    grads[index_of(kClassB)] += dlogits.rowwise().sum();
    Eigen::MatrixXf dhead = parameter(kClassW).value.transpose() * dlogits;
    gelu_backward_inplace(dhead, c.head_pre);

    grads[index_of(kHeadW)].noalias() += dhead * c.up_act.transpose();
    grads[index_of(kHeadB)] += dhead.rowwise().sum();
    Eigen::MatrixXf dup = parameter(kHeadW).value.transpose() * dhead;
    gelu_backward_inplace(dup, c.up_pre);
    grads[index_of(kUpB)] += dup.rowwise().sum();

    // Gather the upsampled gradient back into (D*s*s) x G^2 layout.
    Eigen::MatrixXf dup_cells(d * s * s, g * g);
    for (int gy = 0; gy < g; ++gy) {
        for (int gx = 0; gx < g; ++gx) {
            const int cell = gy * g + gx;
            for (int u = 0; u < s; ++u) {
                for (int v = 0; v < s; ++v) {
                    const Eigen::Index pix = static_cast<Eigen::Index>(gy * s + u) * m + (gx * s + v);
                    for (int ch = 0; ch < d; ++ch) dup_cells((ch * s + u) * s + v, cell) = dup(ch, pix);
                }
            }
        }
    }
    grads[index_of(kUpW)].noalias() += dup_cells * c.fuse_act.transpose();
    Eigen::MatrixXf dfuse = parameter(kUpW).value.transpose() * dup_cells;
    gelu_backward_inplace(dfuse, c.fuse_pre);

    grads[index_of(kFuseW)].noalias() += dfuse * c.fused_in.transpose();
    grads[index_of(kFuseB)] += dfuse.rowwise().sum();
    const Eigen::VectorXf dq = (parameter(kFuseW).value.transpose() * dfuse).rowwise().sum();

    grads[index_of(kBoxW)].noalias() += dq * c.box_features.transpose();
    grads[index_of(kBoxB)] += dq;
}

void SegModel::save(const std::filesystem::path& path, const json& extra) const {
    std::ostringstream out(std::ios::binary);
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params_.size()));
    for (const auto& p : params_) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rows()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.cols()));
        out.write(reinterpret_cast<const char*>(p.value.data()),
                  static_cast<std::streamsize>(p.value.size() * sizeof(float)));
    }
    const std::string payload = out.str();
    write_text_file(path, payload);

    json sidecar = extra;
    sidecar["format_version"] = kFormatVersion;
    sidecar["encoder_variant"] = config_.variant;
    sidecar["model_config"] = config_.to_json();
    sidecar["head_shape"] = {kNumClasses, config_.decoder_dim};
    sidecar["payload_sha256"] = sha256_hex(payload);
    write_text_file(sidecar_path(path), sidecar.dump(2) + "\n");
}

json read_checkpoint_sidecar(const std::filesystem::path& checkpoint) {
    const auto side = sidecar_path(checkpoint);
    if (!std::filesystem::exists(side)) {
        throw Error(ErrorCode::IncompatibleCheckpoint, "missing sidecar " + side.string());
    }
    try {
        return json::parse(read_text_file(side));
    } catch (const json::exception& ex) {
        throw Error(ErrorCode::IncompatibleCheckpoint, side.string() + ": " + ex.what());
    }
}

SegModel load_pretrained(const std::filesystem::path& checkpoint, std::uint64_t head_seed) {
    if (!std::filesystem::exists(checkpoint)) throw Error(ErrorCode::MissingFile, checkpoint.string());
    const json sidecar = read_checkpoint_sidecar(checkpoint);
    if (sidecar.value("format_version", 0u) != kFormatVersion) {
        throw Error(ErrorCode::IncompatibleCheckpoint, "unsupported checkpoint format version");
    }
    ModelConfig config;
    try {
        config = ModelConfig::from_json(sidecar.at("model_config"));
    } catch (const json::exception& ex) {
        throw Error(ErrorCode::IncompatibleCheckpoint, std::string("bad model_config: ") + ex.what());
    }

    const std::string payload = read_text_file(checkpoint);
    std::istringstream in(payload, std::ios::binary);
    char magic[sizeof(kMagic)] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw Error(ErrorCode::IncompatibleCheckpoint, checkpoint.string() + " is not a brainseg checkpoint");
    }
    if (get<std::uint32_t>(in, "version") != kFormatVersion) {
        throw Error(ErrorCode::IncompatibleCheckpoint, "unsupported checkpoint payload version");
    }

    // The class head has no pretrained counterpart, so it starts from the fresh init.
    SegModel model = SegModel::init(config, head_seed);
    std::vector<bool> loaded(model.params_.size(), false);
    const auto count = get<std::uint32_t>(in, "tensor count");
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = get<std::uint32_t>(in, "name length");
        if (name_len > 4096) throw Error(ErrorCode::IncompatibleCheckpoint, "implausible tensor name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw Error(ErrorCode::IncompatibleCheckpoint, "truncated checkpoint while reading a name");
        const auto rows = get<std::uint32_t>(in, name + " rows");
        const auto cols = get<std::uint32_t>(in, name + " cols");
        Eigen::MatrixXf value(rows, cols);
        in.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(value.size() * sizeof(float)));
        if (!in) throw Error(ErrorCode::IncompatibleCheckpoint, "truncated checkpoint while reading " + name);

        auto it = std::find_if(model.params_.begin(), model.params_.end(),
                               [&](const Parameter& p) { return p.name == name; });
        if (it == model.params_.end()) continue; // tensors this architecture does not use
        if (it->value.rows() != value.rows() || it->value.cols() != value.cols()) {
            throw Error(ErrorCode::IncompatibleCheckpoint, "shape mismatch for " + name);
        }
        it->value = std::move(value);
        loaded[static_cast<std::size_t>(it - model.params_.begin())] = true;
    }
    std::string missing;
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        if (!loaded[i] && !is_class_head(model.params_[i].name)) missing += " " + model.params_[i].name;
    }
    if (!missing.empty()) throw Error(ErrorCode::MissingKeys, "checkpoint lacks:" + missing);
    return model;
}

Prediction predict_from_logits(const LogitMap& logits) {
    Prediction out;
    out.probabilities = softmax_probabilities(logits);
    // Argmax over the stored probabilities so the label agrees with them even
    // where float rounding collapses nearly equal logits.
    const auto n = static_cast<std::size_t>(logits.size);
    out.label = LabelMask(n, n, 0);
    for (std::size_t p = 0; p < logits.pixels(); ++p) {
        int best = 0;
        for (int c = 1; c < kNumClasses; ++c) {
            if (out.probabilities[c][p] > out.probabilities[best][p]) best = c;
        }
        out.label[p] = static_cast<std::uint8_t>(best);
    }
    return out;
}

Prediction predict(const SegModel& model, const Image<float>& image, const PromptSpec& prompt) {
    return predict_from_logits(model.forward(image, prompt));
}

} // namespace brainseg
