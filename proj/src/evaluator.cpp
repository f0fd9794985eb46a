#include "brainseg/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>

#include "brainseg/random.hpp"

namespace brainseg {

using nlohmann::json;

namespace {

constexpr std::array<const char*, kNumClasses> kClassNames{"background", "gray_matter", "white_matter"};

void check_pair(const LabelMask& pred, const LabelMask& gt, int class_id) {
    if (!pred.same_shape(gt)) throw Error(ErrorCode::ShapeMismatch, "prediction and ground truth differ in shape");
    if (class_id < 0 || class_id >= kNumClasses) throw Error(ErrorCode::InvalidArgument, "class_id must be 0, 1 or 2");
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

} // namespace

ClassCounts count_class(const LabelMask& pred, const LabelMask& gt, int class_id) {
    check_pair(pred, gt, class_id);
    ClassCounts c;
    const auto cls = static_cast<std::uint8_t>(class_id);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred[i] == cls;
        const bool b = gt[i] == cls;
        c.predicted += a;
        c.truth += b;
        c.intersection += (a && b);
    }
    return c;
}

double dice_from_counts(const ClassCounts& c) noexcept {
    if (c.both_empty()) return 1.0;
    return 2.0 * static_cast<double>(c.intersection) / static_cast<double>(c.predicted + c.truth);
}

double iou_from_counts(const ClassCounts& c) noexcept {
    if (c.both_empty()) return 1.0;
    return static_cast<double>(c.intersection) / static_cast<double>(c.union_size());
}

double dice(const LabelMask& pred, const LabelMask& gt, int class_id) {
    return dice_from_counts(count_class(pred, gt, class_id));
}

double iou(const LabelMask& pred, const LabelMask& gt, int class_id) {
    return iou_from_counts(count_class(pred, gt, class_id));
}

std::string_view to_string(Aggregation a) noexcept {
    switch (a) {
    case Aggregation::MacroForeground: return "macro_foreground";
    case Aggregation::MacroAll: return "macro_all";
    case Aggregation::Micro: return "micro";
    }
    return "macro_foreground";
}

Aggregation aggregation_from_string(std::string_view text) {
    for (auto a : {Aggregation::MacroForeground, Aggregation::MacroAll, Aggregation::Micro}) {
        if (to_string(a) == text) return a;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown aggregation '" + std::string(text) + "'");
}

std::string_view to_string(EmptyPolicy p) noexcept { return p == EmptyPolicy::ScoreOne ? "score_one" : "exclude"; }

EmptyPolicy empty_policy_from_string(std::string_view text) {
    if (text == "score_one") return EmptyPolicy::ScoreOne;
    if (text == "exclude") return EmptyPolicy::Exclude;
    throw Error(ErrorCode::InvalidArgument, "unknown empty policy '" + std::string(text) + "'");
}

json MetricsReport::to_json() const {
    json classes = json::object();
    for (int c = 0; c < kNumClasses; ++c) {
        classes[kClassNames[c]] = {{"dice", per_class[c].dice},
                                   {"iou", per_class[c].iou},
                                   {"empty_slices", empty_slices[c]}};
    }
    return {{"model_id", model_id},
            {"per_class", classes},
            {"overall_dice", overall_dice},
            {"overall_iou", overall_iou},
            {"n_slices_evaluated", n_slices_evaluated},
            {"sampling_seed", sampling_seed},
            {"aggregation", to_string(aggregation)},
            {"empty_policy", to_string(empty_policy)},
            {"sample_indices", sample_indices}};
}

MetricsReport MetricsReport::from_json(const json& j) {
    MetricsReport r;
    r.model_id = j.at("model_id").get<std::string>();
    for (int c = 0; c < kNumClasses; ++c) {
        const auto& cls = j.at("per_class").at(kClassNames[c]);
        r.per_class[c] = {cls.at("dice").get<double>(), cls.at("iou").get<double>()};
        r.empty_slices[c] = cls.value("empty_slices", std::size_t{0});
    }
    r.overall_dice = j.at("overall_dice").get<double>();
    r.overall_iou = j.at("overall_iou").get<double>();
    r.n_slices_evaluated = j.at("n_slices_evaluated").get<std::size_t>();
    r.sampling_seed = j.at("sampling_seed").get<std::uint64_t>();
    r.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
    r.empty_policy = empty_policy_from_string(j.value("empty_policy", std::string("score_one")));
    r.sample_indices = j.value("sample_indices", std::vector<std::size_t>{});
    return r;
}

MetricsReport aggregate_scores(const std::vector<SliceScores>& slices, Aggregation aggregation, EmptyPolicy policy) {
    MetricsReport r;
    r.aggregation = aggregation;
    r.empty_policy = policy;
    r.n_slices_evaluated = slices.size();

    if (aggregation == Aggregation::Micro) {
        std::array<ClassCounts, kNumClasses> total{};
        for (const auto& s : slices) {
            for (int c = 0; c < kNumClasses; ++c) {
                total[c].predicted += s.counts[c].predicted;
                total[c].truth += s.counts[c].truth;
                total[c].intersection += s.counts[c].intersection;
                r.empty_slices[c] += s.counts[c].both_empty();
            }
        }
        for (int c = 0; c < kNumClasses; ++c) r.per_class[c] = {dice_from_counts(total[c]), iou_from_counts(total[c])};
        r.overall_dice = 0.5 * (r.per_class[1].dice + r.per_class[2].dice);
        r.overall_iou = 0.5 * (r.per_class[1].iou + r.per_class[2].iou);
        return r;
    }

    for (int c = 0; c < kNumClasses; ++c) {
        double dsum = 0.0, isum = 0.0;
        std::size_t n = 0;
        for (const auto& s : slices) {
            const auto& k = s.counts[c];
            if (k.both_empty()) {
                ++r.empty_slices[c];
                if (policy == EmptyPolicy::Exclude) continue;
            }
            dsum += dice_from_counts(k);
            isum += iou_from_counts(k);
            ++n;
        }
        // A class excluded on every slice falls back to the empty-set convention.
        r.per_class[c] = n ? ClassScore{dsum / static_cast<double>(n), isum / static_cast<double>(n)}
                           : ClassScore{1.0, 1.0};
    }
    const int first = aggregation == Aggregation::MacroAll ? 0 : 1;
    double d = 0.0, i = 0.0;
    for (int c = first; c < kNumClasses; ++c) {
        d += r.per_class[c].dice;
        i += r.per_class[c].iou;
    }
    r.overall_dice = d / (kNumClasses - first);
    r.overall_iou = i / (kNumClasses - first);
    return r;
}

std::vector<std::size_t> sample_indices(std::size_t total, std::size_t sample_n, std::uint64_t seed) {
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (sample_n == 0 || sample_n >= total) return idx;
    std::mt19937_64 rng(seed);
    deterministic_shuffle(std::span<std::size_t>(idx), rng);
    idx.resize(sample_n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

MetricsReport evaluate(const Predictor& predictor, const SliceDataset& test_set, const EvalOptions& opts,
                       const std::string& model_id) {
    if (test_set.size() == 0) throw Error(ErrorCode::EmptyManifest, "test set is empty");
    if (opts.sample_n > test_set.size()) {
        std::cerr << "warning: sample_n=" << opts.sample_n << " exceeds the " << test_set.size()
                  << " available test slices; evaluating all of them\n";
    }
    const auto indices = sample_indices(test_set.size(), opts.sample_n, opts.seed);
    std::vector<SliceScores> scores;
    scores.reserve(indices.size());
    for (std::size_t i : indices) {
        const TrainingSample sample = test_set.get(i);
        const LabelMask pred = predictor(sample);
        SliceScores s;
        for (int c = 0; c < kNumClasses; ++c) s.counts[c] = count_class(pred, sample.label, c);
        scores.push_back(s);
    }
    MetricsReport r = aggregate_scores(scores, opts.aggregation, opts.empty_policy);
    r.sampling_seed = opts.seed;
    r.model_id = model_id;
    r.sample_indices = indices;
    return r;
}

MetricsReport evaluate_model(const SegModel& model, const SliceDataset& test_set, const EvalOptions& opts,
                             const std::string& model_id) {
    const Predictor p = [&model](const TrainingSample& s) {
        return predict(model, s.image, PromptSpec::full_image()).label;
    };
    return evaluate(p, test_set, opts, model_id);
}

ComparisonTable compare_models(std::vector<MetricsReport> reports) {
    std::stable_sort(reports.begin(), reports.end(), [](const MetricsReport& a, const MetricsReport& b) {
        if (a.overall_dice != b.overall_dice) return a.overall_dice > b.overall_dice;
        return a.model_id < b.model_id;
    });
    return {std::move(reports)};
}

std::string ComparisonTable::to_csv() const {
    std::ostringstream out;
    out << "model,overall_dice,overall_iou\n";
    for (const auto& r : rows) out << r.model_id << ',' << fixed(r.overall_dice, 6) << ',' << fixed(r.overall_iou, 6) << '\n';
    return out.str();
}

std::string ComparisonTable::to_text() const {
    std::size_t width = 5;
    for (const auto& r : rows) width = std::max(width, r.model_id.size());
    std::ostringstream out;
    auto pad = [width](const std::string& s) { return s + std::string(width - s.size(), ' '); };
    out << "rank  " << pad("model") << "  dice    iou\n";
    int rank = 1;
    for (const auto& r : rows) {
        out << rank++ << "     " << pad(r.model_id) << "  " << fixed(r.overall_dice, 4) << "  "
            << fixed(r.overall_iou, 4) << '\n';
    }
    return out.str();
}

} // namespace brainseg
