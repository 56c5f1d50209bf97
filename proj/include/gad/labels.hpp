#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "gad/raster.hpp"

// Label algebra for two-class change maps: thresholding probability rasters,
// merging a prediction back into reference labels, class balancing weights,
// and confusion-matrix scores.

namespace gad {

/// How to resolve pixels where the prediction disagrees with the reference.
/// Agreeing pixels always keep their label and reference ignore pixels stay
/// ignored.
///   kIntersection  disagreement -> class 0 (change survives only where both
///                  maps mark it)
///   kIgnoreFn      reference change missed by the prediction -> ignore;
///                  predicted change absent from the reference -> class 0
///   kIgnoreAll     any disagreement -> ignore
enum class MergeStrategy { kIntersection, kIgnoreFn, kIgnoreAll };

inline MergeStrategy parse_merge_strategy(const std::string& name) {
    if (name == "intersection") return MergeStrategy::kIntersection;
    if (name == "ignore-fn") return MergeStrategy::kIgnoreFn;
    if (name == "ignore-all") return MergeStrategy::kIgnoreAll;
    throw validation_error("unknown merge strategy '" + name +
                           "' (expected intersection, ignore-fn, or ignore-all)");
}

inline const char* merge_strategy_name(MergeStrategy s) {
    switch (s) {
        case MergeStrategy::kIntersection: return "intersection";
        case MergeStrategy::kIgnoreFn: return "ignore-fn";
        case MergeStrategy::kIgnoreAll: return "ignore-all";
    }
    return "?";
}

/// Thresholds a single-channel probability raster: 1 where value >= threshold,
/// else 0. Ties go to class 1.
inline LabelMap binarize(const RasterF& probabilities, double threshold = 0.5) {
    if (probabilities.channels() != 1) {
        throw validation_error("binarize: expected a single-channel raster, got " +
                               std::to_string(probabilities.channels()) + " channels");
    }
    if (!std::isfinite(threshold)) {
        throw validation_error("binarize: threshold must be finite");
    }
    LabelMap out(probabilities.width(), probabilities.height());
    const double* src = probabilities.data();
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        out.data()[i] = (src[i] >= threshold) ? 1 : 0;
    }
    return out;
}

/// Merges a binary prediction into reference labels. The prediction must not
/// contain ignore pixels; the reference may, and those stay ignored.
inline LabelMap merge_labels(const LabelMap& reference, const LabelMap& prediction,
                             MergeStrategy strategy) {
    if (!reference.same_shape(prediction)) {
        throw validation_error("merge_labels: dimension mismatch");
    }
    LabelMap out(reference.width(), reference.height());
    const std::size_t n = reference.size();
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t ref = reference.values()[i];
        const std::uint8_t pred = prediction.values()[i];
        if (pred == kIgnoreLabel) {
            throw validation_error("merge_labels: prediction contains an ignore pixel");
        }
        std::uint8_t v;
        if (ref == kIgnoreLabel) {
            v = kIgnoreLabel;
        } else if (ref == pred) {
            v = ref;
        } else {
            switch (strategy) {
                case MergeStrategy::kIntersection:
                    v = 0;
                    break;
                case MergeStrategy::kIgnoreFn:
                    // ref == 1, pred == 0 is a miss; the opposite is a spurious
                    // detection that the reference overrules.
                    v = (ref == 1) ? kIgnoreLabel : 0;
                    break;
                case MergeStrategy::kIgnoreAll:
                    v = kIgnoreLabel;
                    break;
                default:
                    throw validation_error("merge_labels: invalid strategy");
            }
        }
        out.data()[i] = v;
    }
    return out;
}

/// Inverse-frequency class weights over the non-ignored pixels. With T
/// scored pixels of which n_c belong to class c, w_c = T / (2 * n_c); a class
/// with no pixels gets weight 0. The weighted pixel mass w_0*n_0 + w_1*n_1
/// equals T when both classes are present.
struct ClassWeights {
    double w0;
    double w1;
    std::uint64_t n0;
    std::uint64_t n1;
};

inline ClassWeights class_weights(const LabelMap& labels) {
    std::uint64_t n0 = 0, n1 = 0;
    for (std::uint8_t v : labels.values()) {
        if (v == 0) ++n0;
        else if (v == 1) ++n1;
    }
    const std::uint64_t total = n0 + n1;
    if (total == 0) {
        throw validation_error("class_weights: label map has no non-ignored pixels");
    }
    ClassWeights w{};
    w.n0 = n0;
    w.n1 = n1;
    w.w0 = (n0 > 0) ? static_cast<double>(total) / (2.0 * static_cast<double>(n0)) : 0.0;
    w.w1 = (n1 > 0) ? static_cast<double>(total) / (2.0 * static_cast<double>(n1)) : 0.0;
    return w;
}

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;
    std::uint64_t ignored = 0;
};

/// Counts prediction vs reference agreement with class 1 as positive. A pixel
/// ignored in either map is excluded from all four counts; this keeps the
/// scores symmetric in their arguments' ignore masks.
inline ConfusionCounts confusion(const LabelMap& prediction, const LabelMap& reference) {
    if (!prediction.same_shape(reference)) {
        throw validation_error("confusion: dimension mismatch");
    }
    ConfusionCounts c;
    const std::size_t n = prediction.size();
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t p = prediction.values()[i];
        const std::uint8_t r = reference.values()[i];
        if (p == kIgnoreLabel || r == kIgnoreLabel) {
            ++c.ignored;
        } else if (p == 1 && r == 1) {
            ++c.tp;
        } else if (p == 1 && r == 0) {
            ++c.fp;
        } else if (p == 0 && r == 1) {
            ++c.fn;
        } else {
            ++c.tn;
        }
    }
    return c;
}

// Ratio helpers return 1.0 on an empty denominator: with nothing to get
// wrong, the score is perfect by convention.

inline double dice(const ConfusionCounts& c) {
    const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0;
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline double precision(const ConfusionCounts& c) {
    const std::uint64_t denom = c.tp + c.fp;
    if (denom == 0) return 1.0;
    return static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline double recall(const ConfusionCounts& c) {
    const std::uint64_t denom = c.tp + c.fn;
    if (denom == 0) return 1.0;
    return static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline double accuracy(const ConfusionCounts& c) {
    const std::uint64_t denom = c.tp + c.fp + c.fn + c.tn;
    if (denom == 0) return 1.0;
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(denom);
}

inline nlohmann::json metrics_json(const ConfusionCounts& c) {
    return nlohmann::json{
        {"tp", c.tp},           {"fp", c.fp},
        {"fn", c.fn},           {"tn", c.tn},
        {"ignored", c.ignored}, {"dice", dice(c)},
        {"precision", precision(c)}, {"recall", recall(c)},
        {"accuracy", accuracy(c)},
    };
}

}  // namespace gad
