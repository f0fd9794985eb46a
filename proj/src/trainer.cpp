#include "brainseg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>

#include "brainseg/png_io.hpp"
#include "brainseg/random.hpp"

namespace brainseg {

using nlohmann::json;

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning_rate must be > 0");
    if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
    if (max_epochs < 1) throw Error(ErrorCode::InvalidConfig, "max_epochs must be >= 1");
    for (double w : class_weights) {
        if (!(w > 0.0)) throw Error(ErrorCode::InvalidConfig, "class_weights must all be > 0");
    }
    if (!(weight_decay >= 0.0)) throw Error(ErrorCode::InvalidConfig, "weight_decay must be >= 0");
    if (early_stop_patience < 1) throw Error(ErrorCode::InvalidConfig, "early_stop_patience must be >= 1");
    if (max_steps < 0) throw Error(ErrorCode::InvalidConfig, "max_steps must be >= 0");
}

json TrainConfig::to_json() const {
    return {{"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"class_weights", class_weights},
            {"weight_decay", weight_decay},
            {"early_stop_patience", early_stop_patience},
            {"seed", seed},
            {"max_steps", max_steps},
            {"prompt_mode", prompt_mode == PromptMode::FullImage ? "full_image" : "tissue_box"},
            {"beta1", beta1},
            {"beta2", beta2},
            {"epsilon", epsilon},
            {"embedding_cache_mb", embedding_cache_mb}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    if (j.contains("class_weights")) c.class_weights = j.at("class_weights").get<std::array<double, 3>>();
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.seed = j.value("seed", c.seed);
    c.max_steps = j.value("max_steps", c.max_steps);
    const std::string mode = j.value("prompt_mode", std::string("full_image"));
    if (mode == "full_image") {
        c.prompt_mode = PromptMode::FullImage;
    } else if (mode == "tissue_box") {
        c.prompt_mode = PromptMode::TissueBox;
    } else {
        throw Error(ErrorCode::InvalidConfig, "prompt_mode must be full_image or tissue_box");
    }
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.embedding_cache_mb = j.value("embedding_cache_mb", c.embedding_cache_mb);
    c.validate();
    return c;
}

InMemoryDataset::InMemoryDataset(std::vector<TrainingSample> samples) : samples_(std::move(samples)) {}

ManifestDataset::ManifestDataset(std::vector<DatasetManifest> manifests, std::size_t max_slices) {
    for (const auto& m : manifests) {
        for (const auto& e : m.entries) {
            if (max_slices != 0 && items_.size() >= max_slices) return;
            items_.emplace_back(m.root, e);
        }
    }
}

TrainingSample ManifestDataset::get(std::size_t i) const {
    const auto& [root, e] = items_.at(i);
    return load_sample(root / e.image_path, root / e.label_path);
}

TrainingSample load_sample(const std::filesystem::path& image_png, const std::filesystem::path& label_png) {
    const auto img8 = png::read_gray8(image_png);
    TrainingSample s;
    s.image = Image<float>(img8.width(), img8.height());
    for (std::size_t i = 0; i < img8.size(); ++i) s.image[i] = static_cast<float>(img8[i]) / 255.0f;
    s.label = png::read_gray8(label_png);
    if (!s.label.same_shape(s.image)) {
        throw Error(ErrorCode::ShapeMismatch, label_png.string() + " does not match its image");
    }
    for (std::uint8_t v : s.label.values()) {
        if (v > 2) throw Error(ErrorCode::OutOfRange, label_png.string() + " has labels outside {0,1,2}");
    }
    return s;
}

LossResult weighted_cross_entropy(std::span<const LogitMap> logits, std::span<const LabelMask> labels,
                                  const std::array<double, 3>& weights, bool with_grad) {
    if (logits.size() != labels.size() || logits.empty()) {
        throw Error(ErrorCode::ShapeMismatch, "logit and label batches differ in size");
    }
    for (double w : weights) {
        if (!(w > 0.0)) throw Error(ErrorCode::InvalidArgument, "class weights must be > 0");
    }
    double weighted_nll = 0.0;
    double weight_sum = 0.0;
    LossResult result;
    if (with_grad) result.grad.reserve(logits.size());

    for (std::size_t b = 0; b < logits.size(); ++b) {
        const LogitMap& z = logits[b];
        const LabelMask& y = labels[b];
        if (y.width() != static_cast<std::size_t>(z.size) || y.height() != static_cast<std::size_t>(z.size)) {
            throw Error(ErrorCode::ShapeMismatch, "label mask does not match the logit map");
        }
        if (with_grad) result.grad.emplace_back(z.size);
        for (std::size_t p = 0; p < z.pixels(); ++p) {
            const int cls = y[p];
            if (cls < 0 || cls >= kNumClasses) throw Error(ErrorCode::OutOfRange, "label outside {0,1,2}");
            double m = z.at(0, p);
            for (int c = 1; c < kNumClasses; ++c) m = std::max(m, z.at(c, p));
            double sum = 0.0;
            for (int c = 0; c < kNumClasses; ++c) sum += std::exp(z.at(c, p) - m);
            const double log_sum = m + std::log(sum);
            const double w = weights[cls];
            weighted_nll += w * (log_sum - z.at(cls, p));
            weight_sum += w;
            if (with_grad) {
                for (int c = 0; c < kNumClasses; ++c) {
                    const double prob = std::exp(z.at(c, p) - log_sum);
                    result.grad.back().at(c, p) = w * (prob - (c == cls ? 1.0 : 0.0));
                }
            }
        }
    }
    result.loss = weighted_nll / weight_sum;
    if (!std::isfinite(result.loss)) throw Error(ErrorCode::NonFiniteLoss, "weighted cross-entropy is not finite");
    if (with_grad) {
        for (auto& g : result.grad)
            for (double& v : g.logits) v /= weight_sum;
    }
    return result;
}

AdamW::AdamW(const SegModel& model, double lr, double weight_decay, double beta1, double beta2, double epsilon)
    : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
    for (const auto& p : model.parameters()) {
        if (p.trainable) {
            m_.push_back(Eigen::MatrixXf::Zero(p.value.rows(), p.value.cols()));
            v_.push_back(Eigen::MatrixXf::Zero(p.value.rows(), p.value.cols()));
        } else {
            m_.emplace_back();
            v_.emplace_back();
        }
    }
}

void AdamW::step(SegModel& model, const Gradients& grads) {
    auto& params = model.parameters();
    if (grads.size() != params.size() || m_.size() != params.size()) {
        throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match the model");
    }
    ++steps_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    const auto b1 = static_cast<float>(beta1_);
    const auto b2 = static_cast<float>(beta2_);
    const auto decay = static_cast<float>(1.0 - lr_ * weight_decay_);
    const auto step_size = static_cast<float>(lr_ / bc1);
    const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<float>(epsilon_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].trainable) continue;
        const auto& g = grads[i];
        m_[i] = b1 * m_[i] + (1.0f - b1) * g;
        v_[i] = b2 * v_[i] + (1.0f - b2) * g.cwiseProduct(g);
        params[i].value *= decay;
        params[i].value.array() -=
            step_size * m_[i].array() / (v_[i].array().sqrt() * inv_sqrt_bc2 + eps);
    }
}

bool EarlyStopping::update(int epoch, double val_loss) {
    if (val_loss < best_loss_) {
        best_loss_ = val_loss;
        best_epoch_ = epoch;
        bad_epochs_ = 0;
        improved_last_ = true;
    } else {
        ++bad_epochs_;
        improved_last_ = false;
    }
    return bad_epochs_ >= patience_;
}

std::string TrainHistory::to_csv(bool include_wall_time) const {
    std::ostringstream out;
    out << (include_wall_time ? "epoch,train_loss,val_loss,wall_time_s\n" : "epoch,train_loss,val_loss\n");
    for (const auto& r : epochs) {
        out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss);
        if (include_wall_time) out << ',' << format_double(r.wall_time_s);
        out << '\n';
    }
    return out.str();
}

json TrainHistory::to_json(bool include_wall_time) const {
    json records = json::array();
    for (const auto& r : epochs) {
        json rec{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"steps", r.steps}};
        if (include_wall_time) rec["wall_time_s"] = r.wall_time_s;
        records.push_back(std::move(rec));
    }
    return {{"epochs", records}, {"best_epoch", best_epoch}, {"stopped_early", stopped_early}};
}

PromptSpec prompt_for(const TrainingSample& sample, PromptMode mode) {
    return mode == PromptMode::TissueBox ? PromptSpec::tissue_box(sample.label) : PromptSpec::full_image();
}

namespace {

/// Frozen-encoder outputs, memoised when the dataset fits the budget.
class EmbeddingCache {
  public:
    EmbeddingCache(const SegModel& model, const SliceDataset& data, std::size_t budget_mb)
        : model_(model), data_(data) {
        const auto g = static_cast<std::size_t>(model.config().grid_size());
        const std::size_t bytes_each = static_cast<std::size_t>(model.config().embed_dim) * g * g * sizeof(float) +
                                       kSliceSize * kSliceSize * (sizeof(float) + 1);
        enabled_ = data.size() * bytes_each <= budget_mb * 1024 * 1024;
        if (enabled_) {
            samples_.resize(data.size());
            embeddings_.resize(data.size());
        }
    }

    std::pair<TrainingSample, EmbeddingGrid> get(std::size_t i) {
        if (!enabled_) {
            TrainingSample s = data_.get(i);
            EmbeddingGrid e = model_.encode(s.image);
            return {std::move(s), std::move(e)};
        }
        if (!embeddings_[i]) {
            samples_[i] = data_.get(i);
            embeddings_[i] = model_.encode(samples_[i].image);
        }
        return {samples_[i], *embeddings_[i]};
    }

  private:
    const SegModel& model_;
    const SliceDataset& data_;
    bool enabled_ = false;
    std::vector<TrainingSample> samples_;
    std::vector<std::optional<EmbeddingGrid>> embeddings_;
};

double evaluate_loss(const SegModel& model, EmbeddingCache& cache, std::size_t n, const TrainConfig& cfg) {
    // Weighted mean over every validation pixel, accumulated per slice.
    double nll = 0.0;
    double weight = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto [sample, emb] = cache.get(i);
        const LogitMap z = model.decode(emb, prompt_for(sample, cfg.prompt_mode));
        const LossResult r = weighted_cross_entropy(std::span(&z, 1), std::span(&sample.label, 1),
                                                    cfg.class_weights, false);
        double w = 0.0;
        for (std::uint8_t y : sample.label.values()) w += cfg.class_weights[y];
        nll += r.loss * w;
        weight += w;
    }
    return nll / weight;
}

} // namespace

TrainResult train(const SegModel& initial, const SliceDataset& train_set, const SliceDataset& val_set,
                  const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.size() == 0) throw Error(ErrorCode::EmptyDataset, "training set is empty");
    if (val_set.size() == 0) throw Error(ErrorCode::EmptyDataset, "validation set is empty");

    SegModel model = initial;
    SegModel best = initial;
    AdamW optimizer(model, cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.epsilon);
    EarlyStopping stopper(cfg.early_stop_patience);
    EmbeddingCache train_cache(initial, train_set, cfg.embedding_cache_mb);
    EmbeddingCache val_cache(initial, val_set, cfg.embedding_cache_mb);

    std::mt19937_64 rng(cfg.seed);
    TrainHistory history;
    long step = 0;
    bool step_cap_hit = false;
    const auto batch = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 1; epoch <= cfg.max_epochs && !step_cap_hit; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        deterministic_shuffle(std::span<std::size_t>(order), rng);

        double loss_sum = 0.0;
        long batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            std::vector<LogitMap> logits;
            std::vector<LabelMask> labels;
            std::vector<DecoderCache> caches(end - start);
            for (std::size_t k = start; k < end; ++k) {
                auto [sample, emb] = train_cache.get(order[k]);
                logits.push_back(model.decode(emb, prompt_for(sample, cfg.prompt_mode), &caches[k - start]));
                labels.push_back(std::move(sample.label));
            }
            LossResult r;
            try {
                r = weighted_cross_entropy(logits, labels, cfg.class_weights, true);
            } catch (const Error& ex) {
                if (ex.code() == ErrorCode::NonFiniteLoss) throw Error(ErrorCode::DivergedLoss, ex.what());
                throw;
            }
            Gradients grads = model.zero_gradients();
            for (std::size_t k = 0; k < caches.size(); ++k) model.backward(caches[k], r.grad[k], grads);
            optimizer.step(model, grads);
            loss_sum += r.loss;
            ++batches;
            ++step;
            if (cfg.max_steps > 0 && step >= cfg.max_steps) {
                step_cap_hit = true;
                break;
            }
        }

        const double val_loss = evaluate_loss(model, val_cache, val_set.size(), cfg);
        if (!std::isfinite(val_loss)) throw Error(ErrorCode::DivergedLoss, "validation loss is not finite");
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.epochs.push_back({epoch, loss_sum / static_cast<double>(batches), val_loss, wall, step});

        const bool stop = stopper.update(epoch, val_loss);
        if (stopper.improved_last()) best = model;
        if (stop) {
            history.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch();
    return {std::move(best), std::move(history)};
}

std::string_view to_string(ExperimentPlan plan) noexcept {
    switch (plan) {
    case ExperimentPlan::Axial: return "axial";
    case ExperimentPlan::Coronal: return "coronal";
    case ExperimentPlan::Sagittal: return "sagittal";
    case ExperimentPlan::Unified: return "unified";
    }
    return "axial";
}

ExperimentPlan plan_from_string(std::string_view text) {
    for (auto p : {ExperimentPlan::Axial, ExperimentPlan::Coronal, ExperimentPlan::Sagittal, ExperimentPlan::Unified}) {
        if (to_string(p) == text) return p;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown plan '" + std::string(text) + "'");
}

std::vector<Plane> planes_of(ExperimentPlan plan) {
    switch (plan) {
    case ExperimentPlan::Axial: return {Plane::Axial};
    case ExperimentPlan::Coronal: return {Plane::Coronal};
    case ExperimentPlan::Sagittal: return {Plane::Sagittal};
    case ExperimentPlan::Unified: return {kAllPlanes.begin(), kAllPlanes.end()};
    }
    return {};
}

std::vector<DatasetManifest> plan_manifests(const std::filesystem::path& dataset_root, ExperimentPlan plan,
                                            Split split) {
    std::vector<DatasetManifest> out;
    for (Plane p : planes_of(plan)) {
        const auto path = manifest_path(dataset_root, p, split);
        if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingManifest, path.string());
        out.push_back(read_manifest(path, dataset_root));
    }
    return out;
}

TrainResult run_experiment(ExperimentPlan plan, const std::filesystem::path& dataset_root, const SegModel& initial,
                           const TrainConfig& cfg, std::size_t max_slices) {
    const ManifestDataset train_set(plan_manifests(dataset_root, plan, Split::Train), max_slices);
    const ManifestDataset val_set(plan_manifests(dataset_root, plan, Split::Val), max_slices);
    return train(initial, train_set, val_set, cfg);
}

} // namespace brainseg
