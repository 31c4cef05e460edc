#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cakit/conceptattn.hpp"
#include "cakit/pgm.hpp"

namespace cakit {

inline constexpr int kIgnoreLabel = 255;

// Integer label grid. Label 0 is background; 255 is the PascalVOC-style
// ignore label, excluded from every count.
struct GroundTruthMask {
    int img_h = 0;
    int img_w = 0;
    std::vector<int> labels;  // row-major

    GroundTruthMask() = default;
    GroundTruthMask(int h, int w, int fill = 0)
        : img_h(h), img_w(w), labels(static_cast<size_t>(h) * w, fill) {}

    int at(int row, int col) const { return labels[static_cast<size_t>(row) * img_w + col]; }
    int& at(int row, int col) { return labels[static_cast<size_t>(row) * img_w + col]; }
    size_t size() const { return labels.size(); }

    static GroundTruthMask from_pgm(const PgmImage& img) {
        GroundTruthMask m(img.height, img.width);
        for (size_t i = 0; i < img.pixels.size(); ++i) m.labels[i] = img.pixels[i];
        return m;
    }

    PgmImage to_pgm() const {
        PgmImage img;
        img.height = img_h;
        img.width = img_w;
        img.pixels.resize(labels.size());
        for (size_t i = 0; i < labels.size(); ++i) img.pixels[i] = static_cast<uint8_t>(labels[i]);
        return img;
    }
};

// Foreground iff score strictly exceeds the mean; ties go to background.
inline std::vector<int> binarize_mean_threshold(const std::vector<double>& scores) {
    double mean = std::accumulate(scores.begin(), scores.end(), 0.0) /
                  static_cast<double>(scores.size());
    std::vector<int> mask(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) mask[i] = scores[i] > mean ? 1 : 0;
    return mask;
}

// Per-pixel argmax over concepts; ties break to the lowest concept index.
inline std::vector<int> multiclass_argmax(const SaliencyMap& map) {
    if (map.scores.cols < 2) throw data_error("multiclass_argmax: need at least 2 concepts");
    std::vector<int> pred(map.scores.rows);
    for (size_t i = 0; i < map.scores.rows; ++i) {
        size_t best = 0;
        for (size_t j = 1; j < map.scores.cols; ++j)
            if (map.scores(i, j) > map.scores(i, best)) best = j;
        pred[i] = static_cast<int>(best);
    }
    return pred;
}

inline double pixel_accuracy(const std::vector<int>& pred, const GroundTruthMask& gt) {
    if (pred.size() != gt.size())
        throw shape_error("pixel_accuracy: " + std::to_string(pred.size()) + " predictions vs " +
                          std::to_string(gt.size()) + " labels");
    size_t correct = 0, total = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (gt.labels[i] == kIgnoreLabel) continue;
        ++total;
        if (pred[i] == gt.labels[i]) ++correct;
    }
    if (total == 0) throw data_error("pixel_accuracy: every pixel is ignored");
    return static_cast<double>(correct) / static_cast<double>(total);
}

// Mean IoU over the classes of class_set that appear in pred or gt
// (non-ignored pixels only). Classes absent from both are excluded.
inline double miou(const std::vector<int>& pred, const GroundTruthMask& gt,
                   const std::set<int>& class_set) {
    if (pred.size() != gt.size())
        throw shape_error("miou: " + std::to_string(pred.size()) + " predictions vs " +
                          std::to_string(gt.size()) + " labels");
    if (class_set.empty()) throw data_error("miou: empty class set");
    double sum = 0.0;
    int counted = 0;
    for (int cls : class_set) {
        size_t inter = 0, uni = 0;
        for (size_t i = 0; i < pred.size(); ++i) {
            if (gt.labels[i] == kIgnoreLabel) continue;
            bool in_pred = pred[i] == cls;
            bool in_gt = gt.labels[i] == cls;
            if (in_pred && in_gt) ++inter;
            if (in_pred || in_gt) ++uni;
        }
        if (uni == 0) continue;
        sum += static_cast<double>(inter) / static_cast<double>(uni);
        ++counted;
    }
    if (counted == 0) throw data_error("miou: no class present in pred or gt");
    return sum / counted;
}

// Rank-based average precision: pixels sorted by descending score (ties by
// pixel index), AP = mean over positive pixels of precision at their rank.
// Ignored pixels are dropped before ranking. Returns nullopt when gt has no
// positive pixel.
inline std::optional<double> average_precision(const std::vector<double>& scores,
                                               const GroundTruthMask& gt) {
    if (scores.size() != gt.size())
        throw shape_error("average_precision: " + std::to_string(scores.size()) + " scores vs " +
                          std::to_string(gt.size()) + " labels");
    std::vector<size_t> order;
    order.reserve(scores.size());
    for (size_t i = 0; i < scores.size(); ++i)
        if (gt.labels[i] != kIgnoreLabel) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    size_t positives = 0, hits = 0;
    double sum_precision = 0.0;
    for (size_t i : order)
        if (gt.labels[i] > 0) ++positives;
    if (positives == 0) return std::nullopt;
    for (size_t rank = 0; rank < order.size(); ++rank) {
        if (gt.labels[order[rank]] > 0) {
            ++hits;
            sum_precision += static_cast<double>(hits) / static_cast<double>(rank + 1);
        }
    }
    return sum_precision / static_cast<double>(positives);
}

struct SampleMetrics {
    std::string id;
    double acc = 0.0;
    double iou = 0.0;
    std::optional<double> ap;
};

struct MetricsReport {
    double acc = 0.0;
    double miou = 0.0;
    std::optional<double> map;       // absent for the multi-class protocol
    size_t n_samples = 0;
    size_t n_ap_excluded = 0;        // samples with no positive pixel
    std::vector<SampleMetrics> per_sample;
};

// Whether single-object mIoU averages foreground and background IoU
// (two_class, the default) or reports foreground IoU alone.
enum class IouMode { two_class, foreground_only };

struct SegmentationSample {
    std::string id;
    SaliencyMap map;
    std::vector<std::string> concepts;        // vocabulary the map was computed with
    GroundTruthMask gt;
    int target_concept = -1;                  // single-object protocol
    std::vector<int> label_map;               // concept index -> gt label (multi-class)

    void check_shapes() const {
        if (map.img_h != gt.img_h || map.img_w != gt.img_w)
            throw shape_error("sample \"" + id + "\": map " + std::to_string(map.img_h) + "x" +
                              std::to_string(map.img_w) + " vs mask " + std::to_string(gt.img_h) +
                              "x" + std::to_string(gt.img_w));
        if (map.scores.cols != concepts.size())
            throw shape_error("sample \"" + id + "\": map has " +
                              std::to_string(map.scores.cols) + " concept planes for " +
                              std::to_string(concepts.size()) + " concepts");
    }

    std::vector<double> concept_plane(size_t concept_idx) const {
        std::vector<double> plane(map.scores.rows);
        for (size_t i = 0; i < plane.size(); ++i) plane[i] = map.scores(i, concept_idx);
        return plane;
    }
};

// Single-object protocol: the target concept's plane is thresholded at its
// mean for Acc/IoU; the raw plane drives AP. Aggregates are sample means.
inline MetricsReport evaluate_single_object(const std::vector<SegmentationSample>& samples,
                                            IouMode iou_mode = IouMode::two_class) {
    if (samples.empty()) throw data_error("evaluate_single_object: no samples");
    MetricsReport report;
    double ap_sum = 0.0;
    size_t ap_count = 0;
    for (const SegmentationSample& s : samples) {
        s.check_shapes();
        if (s.target_concept < 0 || s.target_concept >= static_cast<int>(s.concepts.size()))
            throw data_error("sample \"" + s.id + "\": target concept index " +
                             std::to_string(s.target_concept) + " outside vocabulary");
        std::vector<double> plane = s.concept_plane(s.target_concept);
        std::vector<int> pred = binarize_mean_threshold(plane);
        GroundTruthMask binary_gt = s.gt;
        for (int& label : binary_gt.labels)
            if (label != kIgnoreLabel) label = label > 0 ? 1 : 0;

        SampleMetrics sm;
        sm.id = s.id;
        sm.acc = pixel_accuracy(pred, binary_gt);
        sm.iou = iou_mode == IouMode::two_class ? miou(pred, binary_gt, {0, 1})
                                                : miou(pred, binary_gt, {1});
        sm.ap = average_precision(plane, binary_gt);
        if (sm.ap) {
            ap_sum += *sm.ap;
            ++ap_count;
        } else {
            ++report.n_ap_excluded;
        }
        report.acc += sm.acc;
        report.miou += sm.iou;
        report.per_sample.push_back(std::move(sm));
    }
    report.n_samples = samples.size();
    report.acc /= report.n_samples;
    report.miou /= report.n_samples;
    if (ap_count > 0) report.map = ap_sum / ap_count;
    return report;
}

// Multi-class protocol: per-pixel argmax over concepts, mapped through
// label_map (background concepts map to 0) and scored against the mask.
// mAP is omitted.
inline MetricsReport evaluate_multiclass(const std::vector<SegmentationSample>& samples) {
    if (samples.empty()) throw data_error("evaluate_multiclass: no samples");
    MetricsReport report;
    for (const SegmentationSample& s : samples) {
        s.check_shapes();
        if (s.label_map.size() != s.concepts.size())
            throw data_error("sample \"" + s.id + "\": label map covers " +
                             std::to_string(s.label_map.size()) + " of " +
                             std::to_string(s.concepts.size()) + " concepts");
        std::set<int> mapped(s.label_map.begin(), s.label_map.end());
        for (int label : s.gt.labels)
            if (label != kIgnoreLabel && !mapped.count(label))
                throw data_error("sample \"" + s.id + "\": gt label " + std::to_string(label) +
                                 " not covered by the label map");

        std::vector<int> pred = multiclass_argmax(s.map);
        for (int& p : pred) p = s.label_map[p];

        std::set<int> classes(mapped);
        SampleMetrics sm;
        sm.id = s.id;
        sm.acc = pixel_accuracy(pred, s.gt);
        sm.iou = miou(pred, s.gt, classes);
        report.acc += sm.acc;
        report.miou += sm.iou;
        report.per_sample.push_back(std::move(sm));
    }
    report.n_samples = samples.size();
    report.acc /= report.n_samples;
    report.miou /= report.n_samples;
    return report;
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json samples = nlohmann::json::array();
    for (const SampleMetrics& s : r.per_sample) {
        nlohmann::json js = {{"id", s.id}, {"acc", s.acc}, {"iou", s.iou}};
        if (s.ap) js["ap"] = *s.ap;
        samples.push_back(js);
    }
    nlohmann::json out = {{"acc", r.acc},
                          {"miou", r.miou},
                          {"n_samples", r.n_samples},
                          {"n_ap_excluded", r.n_ap_excluded},
                          {"samples", samples}};
    if (r.map) out["map"] = *r.map;
    return out;
}

inline std::string report_to_csv(const MetricsReport& r) {
    char line[128];
    if (r.map)
        std::snprintf(line, sizeof(line), "acc,miou,map\n%.6f,%.6f,%.6f\n", r.acc, r.miou, *r.map);
    else
        std::snprintf(line, sizeof(line), "acc,miou\n%.6f,%.6f\n", r.acc, r.miou);
    return line;
}

}  // namespace cakit
