#include <doctest.h>

#include <cmath>
#include <map>

#include "cakit/ablation.hpp"
#include "cakit/planted.hpp"
#include "cakit/segeval.hpp"

using namespace cakit;

namespace {

SaliencyMap map_from(const Matrix& scores, int h, int w) {
    SaliencyMap m;
    m.img_h = h;
    m.img_w = w;
    m.scores = scores;
    return m;
}

// set-based IoU oracle: collect pixel index sets and intersect them
double miou_oracle(const std::vector<int>& pred, const GroundTruthMask& gt,
                   const std::set<int>& classes) {
    double sum = 0.0;
    int counted = 0;
    for (int cls : classes) {
        std::set<size_t> p, g;
        for (size_t i = 0; i < pred.size(); ++i) {
            if (gt.labels[i] == kIgnoreLabel) continue;
            if (pred[i] == cls) p.insert(i);
            if (gt.labels[i] == cls) g.insert(i);
        }
        std::set<size_t> uni = p;
        uni.insert(g.begin(), g.end());
        if (uni.empty()) continue;
        size_t inter = 0;
        for (size_t i : p)
            if (g.count(i)) ++inter;
        sum += (double)inter / (double)uni.size();
        ++counted;
    }
    return counted ? sum / counted : -1.0;
}

// AP oracle via explicit (score, index) pair sort
double ap_oracle(const std::vector<double>& scores, const GroundTruthMask& gt) {
    std::vector<std::pair<double, size_t>> ranked;
    for (size_t i = 0; i < scores.size(); ++i)
        if (gt.labels[i] != kIgnoreLabel) ranked.push_back({scores[i], i});
    std::sort(ranked.begin(), ranked.end(), [](auto& a, auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    size_t pos = 0;
    for (auto& [s, i] : ranked)
        if (gt.labels[i] > 0) ++pos;
    double sum = 0.0;
    size_t hits = 0;
    for (size_t r = 0; r < ranked.size(); ++r) {
        if (gt.labels[ranked[r].second] > 0) {
            ++hits;
            sum += (double)hits / (double)(r + 1);
        }
    }
    return sum / (double)pos;
}

}  // namespace

TEST_CASE("binarize_mean_threshold: strict inequality, ties to background") {
    CHECK(binarize_mean_threshold({1, 1, 1, 1}) == std::vector<int>{0, 0, 0, 0});
    CHECK(binarize_mean_threshold({0, 0, 0, 4}) == std::vector<int>{0, 0, 0, 1});
    CHECK(binarize_mean_threshold({-3, 1, 1, 1}) == std::vector<int>{0, 1, 1, 1});
    // mean 2, the pixel equal to the mean goes to background
    CHECK(binarize_mean_threshold({0, 2, 4}) == std::vector<int>{0, 0, 1});
}

TEST_CASE("multiclass_argmax: ties break to the lowest concept index") {
    Matrix s(3, 3);
    s(0, 0) = 1;  s(0, 1) = 1;  s(0, 2) = 1;  // all tied -> 0
    s(1, 0) = 0;  s(1, 1) = 2;  s(1, 2) = 2;  // tie between 1 and 2 -> 1
    s(2, 0) = 0;  s(2, 1) = 0;  s(2, 2) = 5;
    CHECK(multiclass_argmax(map_from(s, 1, 3)) == std::vector<int>{0, 1, 2});
    CHECK_THROWS_AS(multiclass_argmax(map_from(Matrix(3, 1), 1, 3)), data_error);
}

TEST_CASE("pixel_accuracy with ignore pixels") {
    GroundTruthMask gt(2, 2);
    gt.labels = {1, 0, kIgnoreLabel, 1};
    CHECK(pixel_accuracy({1, 0, 0, 0}, gt) == doctest::Approx(2.0 / 3.0));
    CHECK(pixel_accuracy({1, 0, 1, 1}, gt) == 1.0);  // ignored pixel never counts
    CHECK_THROWS_AS(pixel_accuracy({1, 0}, gt), shape_error);
    GroundTruthMask all_ignored(1, 2);
    all_ignored.labels = {kIgnoreLabel, kIgnoreLabel};
    CHECK_THROWS_AS(pixel_accuracy({0, 0}, all_ignored), data_error);
}

TEST_CASE("miou hand case: 2x2 two-class gives 7/12") {
    // gt: fg = {0,1}; pred: fg = {1,2}
    GroundTruthMask gt(2, 2);
    gt.labels = {1, 1, 0, 0};
    std::vector<int> pred = {0, 1, 1, 0};
    // fg IoU = 1/3, bg IoU = 1/3... recompute: fg inter {1}, union {0,1,2} -> 1/3
    // bg inter {3}, union {0,2,3} -> 1/3; mean = 1/3.
    CHECK(miou(pred, gt, {0, 1}) == doctest::Approx(1.0 / 3.0));

    // the 7/12 case: fg IoU 1/2, bg IoU 2/3
    gt.labels = {1, 1, 0, 0};
    pred = {1, 0, 0, 0};
    CHECK(miou(pred, gt, {0, 1}) == doctest::Approx(7.0 / 12.0));
    CHECK(miou(pred, gt, {1}) == doctest::Approx(0.5));
}

TEST_CASE("miou skips classes absent from both pred and gt") {
    GroundTruthMask gt(1, 4);
    gt.labels = {1, 1, 2, 2};
    std::vector<int> pred = {1, 1, 2, 2};
    CHECK(miou(pred, gt, {1, 2, 3}) == 1.0);
    CHECK_THROWS_AS(miou(pred, gt, {}), data_error);
    CHECK_THROWS_AS(miou(pred, gt, {7}), data_error);
}

TEST_CASE("metric oracles on random small masks") {
    Rng rng(2024);
    auto s = rng.stream("masks");
    for (int trial = 0; trial < 600; ++trial) {
        int h = 1 + (int)(s.next_u64() % 8);
        int w = 1 + (int)(s.next_u64() % 8);
        GroundTruthMask gt(h, w);
        std::vector<int> pred(gt.size());
        std::vector<double> scores(gt.size());
        bool any_scored = false;
        for (size_t i = 0; i < gt.size(); ++i) {
            uint64_t roll = s.next_u64() % 10;
            gt.labels[i] = roll == 9 ? kIgnoreLabel : (int)(roll % 3);
            if (gt.labels[i] != kIgnoreLabel) any_scored = true;
            pred[i] = (int)(s.next_u64() % 3);
            // coarse scores so ties actually occur
            scores[i] = (double)(s.next_u64() % 4);
        }
        if (!any_scored) continue;

        // accuracy oracle
        size_t correct = 0, total = 0;
        for (size_t i = 0; i < gt.size(); ++i) {
            if (gt.labels[i] == kIgnoreLabel) continue;
            ++total;
            if (pred[i] == gt.labels[i]) ++correct;
        }
        CHECK(pixel_accuracy(pred, gt) == (double)correct / (double)total);

        double want_iou = miou_oracle(pred, gt, {0, 1, 2});
        if (want_iou >= 0.0) CHECK(miou(pred, gt, {0, 1, 2}) == doctest::Approx(want_iou));

        auto ap = average_precision(scores, gt);
        bool has_pos = false;
        for (size_t i = 0; i < gt.size(); ++i)
            if (gt.labels[i] != kIgnoreLabel && gt.labels[i] > 0) has_pos = true;
        CHECK(ap.has_value() == has_pos);
        if (ap) CHECK(*ap == doctest::Approx(ap_oracle(scores, gt)).epsilon(1e-12));
    }
}

TEST_CASE("average_precision exhaustive hand cases") {
    GroundTruthMask gt(1, 4);
    gt.labels = {1, 0, 1, 0};
    // perfect ranking
    CHECK(*average_precision({4, 1, 3, 0}, gt) == doctest::Approx(1.0));
    // worst ranking: positives at ranks 3,4 -> (1/3 + 2/4)/2
    CHECK(*average_precision({0, 3, 1, 4}, gt) == doctest::Approx((1.0 / 3.0 + 0.5) / 2.0));
    // all-tied scores: order falls back to pixel index -> ranks 1 and 3
    CHECK(*average_precision({2, 2, 2, 2}, gt) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
    // no positives
    GroundTruthMask neg(1, 2);
    CHECK_FALSE(average_precision({1, 0}, neg).has_value());
    CHECK_THROWS_AS(average_precision({1, 0}, gt), shape_error);
}

TEST_CASE("binarization metrics are invariant to monotone score maps") {
    Rng rng(5);
    auto s = rng.stream("mono");
    std::vector<double> scores(16);
    for (double& v : scores) v = s.gaussian();
    GroundTruthMask gt(4, 4);
    for (size_t i = 0; i < 16; ++i) gt.labels[i] = (int)(s.next_u64() % 2);

    std::vector<double> mapped = scores;
    // strictly increasing map preserves ranking, hence AP
    for (double& v : mapped) v = std::exp(0.5 * v) + 3.0;
    CHECK(*average_precision(scores, gt) == doctest::Approx(*average_precision(mapped, gt)));

    // positive affine maps preserve the mean threshold exactly
    std::vector<double> affine = scores;
    for (double& v : affine) v = 2.0 * v + 7.0;
    CHECK(binarize_mean_threshold(scores) == binarize_mean_threshold(affine));
}

TEST_CASE("evaluate_single_object matches a manual pipeline") {
    Rng rng(11);
    auto s = rng.stream("single");
    std::vector<SegmentationSample> samples;
    for (int i = 0; i < 5; ++i) {
        SegmentationSample smp;
        smp.id = "s" + std::to_string(i);
        smp.concepts = {"cat", "sky"};
        smp.map = map_from(gaussian_matrix(12, 2, s, 1.0), 3, 4);
        smp.gt = GroundTruthMask(3, 4);
        for (int& l : smp.gt.labels) l = (int)(s.next_u64() % 2);
        smp.gt.labels[0] = 1;  // guarantee a positive
        smp.target_concept = i % 2;
        samples.push_back(smp);
    }
    MetricsReport r = evaluate_single_object(samples);
    CHECK(r.n_samples == 5);
    CHECK(r.per_sample.size() == 5);
    double acc = 0.0, iou = 0.0, ap = 0.0;
    for (const SegmentationSample& smp : samples) {
        std::vector<double> plane = smp.concept_plane(smp.target_concept);
        std::vector<int> pred = binarize_mean_threshold(plane);
        acc += pixel_accuracy(pred, smp.gt);
        iou += miou(pred, smp.gt, {0, 1});
        ap += ap_oracle(plane, smp.gt);
    }
    CHECK(r.acc == doctest::Approx(acc / 5));
    CHECK(r.miou == doctest::Approx(iou / 5));
    REQUIRE(r.map.has_value());
    CHECK(*r.map == doctest::Approx(ap / 5));
    CHECK(r.n_ap_excluded == 0);

    MetricsReport fg = evaluate_single_object(samples, IouMode::foreground_only);
    CHECK(fg.acc == r.acc);
    CHECK(fg.miou != r.miou);

    samples[0].target_concept = 5;
    CHECK_THROWS_AS(evaluate_single_object(samples), data_error);
    CHECK_THROWS_AS(evaluate_single_object({}), data_error);
}

TEST_CASE("evaluate_single_object treats every positive label as foreground") {
    SegmentationSample smp;
    smp.id = "multi-label-gt";
    smp.concepts = {"cat"};
    Matrix sc(4, 1);
    sc(0, 0) = 10;
    sc(1, 0) = 10;
    sc(2, 0) = -10;
    sc(3, 0) = -10;
    smp.map = map_from(sc, 2, 2);
    smp.gt = GroundTruthMask(2, 2);
    smp.gt.labels = {1, 3, 0, kIgnoreLabel};  // labels 1 and 3 both count as fg
    smp.target_concept = 0;
    MetricsReport r = evaluate_single_object({smp});
    CHECK(r.acc == 1.0);
    CHECK(r.miou == 1.0);
    CHECK(*r.map == 1.0);
}

TEST_CASE("samples with no positive pixels are excluded from mAP only") {
    SegmentationSample smp;
    smp.id = "empty";
    smp.concepts = {"cat"};
    smp.map = map_from(Matrix(4, 1), 2, 2);
    smp.gt = GroundTruthMask(2, 2);  // all background
    smp.target_concept = 0;
    MetricsReport r = evaluate_single_object({smp});
    CHECK(r.n_ap_excluded == 1);
    CHECK_FALSE(r.map.has_value());
    CHECK(r.acc == 1.0);  // all-zero scores binarize to background everywhere
}

TEST_CASE("evaluate_multiclass matches a manual pipeline") {
    Rng rng(13);
    auto s = rng.stream("multi");
    std::vector<SegmentationSample> samples;
    for (int i = 0; i < 4; ++i) {
        SegmentationSample smp;
        smp.id = "m" + std::to_string(i);
        smp.concepts = {"cat", "sky", "grass"};
        smp.label_map = {1, 0, 2};  // sky is background
        smp.map = map_from(gaussian_matrix(9, 3, s, 1.0), 3, 3);
        smp.gt = GroundTruthMask(3, 3);
        for (int& l : smp.gt.labels) {
            uint64_t roll = s.next_u64() % 4;
            l = roll == 3 ? kIgnoreLabel : (int)roll;
        }
        smp.gt.labels[0] = 1;
        samples.push_back(smp);
    }
    MetricsReport r = evaluate_multiclass(samples);
    CHECK_FALSE(r.map.has_value());
    double acc = 0.0, iou = 0.0;
    for (const SegmentationSample& smp : samples) {
        std::vector<int> pred = multiclass_argmax(smp.map);
        for (int& p : pred) p = smp.label_map[p];
        acc += pixel_accuracy(pred, smp.gt);
        iou += miou_oracle(pred, smp.gt, {0, 1, 2});
    }
    CHECK(r.acc == doctest::Approx(acc / 4));
    CHECK(r.miou == doctest::Approx(iou / 4));

    samples[0].gt.labels[1] = 9;  // uncovered label
    CHECK_THROWS_WITH(evaluate_multiclass(samples), doctest::Contains("label 9"));
    samples[0].gt.labels[1] = 0;
    samples[0].label_map = {1, 0};
    CHECK_THROWS_AS(evaluate_multiclass(samples), data_error);
}

TEST_CASE("multiclass metrics are invariant to relabeling") {
    Rng rng(17);
    auto s = rng.stream("relabel");
    SegmentationSample a;
    a.id = "a";
    a.concepts = {"cat", "dog"};
    a.label_map = {1, 2};
    a.map = map_from(gaussian_matrix(16, 2, s, 1.0), 4, 4);
    a.gt = GroundTruthMask(4, 4);
    for (int& l : a.gt.labels) l = 1 + (int)(s.next_u64() % 2);

    SegmentationSample b = a;  // same geometry, swapped label names
    b.label_map = {5, 3};
    for (int& l : b.gt.labels) l = l == 1 ? 5 : 3;

    MetricsReport ra = evaluate_multiclass({a});
    MetricsReport rb = evaluate_multiclass({b});
    CHECK(ra.acc == rb.acc);
    CHECK(ra.miou == rb.miou);
}

TEST_CASE("report serialization") {
    MetricsReport r;
    r.acc = 0.75;
    r.miou = 0.5;
    r.map = 0.25;
    r.n_samples = 2;
    r.per_sample = {{"a", 1.0, 1.0, 0.5}, {"b", 0.5, 0.0, std::nullopt}};
    nlohmann::json j = report_to_json(r);
    CHECK(j["acc"] == 0.75);
    CHECK(j["samples"].size() == 2);
    CHECK(j["samples"][0]["ap"] == 0.5);
    CHECK_FALSE(j["samples"][1].contains("ap"));
    CHECK(report_to_csv(r) == "acc,miou,map\n0.750000,0.500000,0.250000\n");
    r.map.reset();
    CHECK(report_to_csv(r) == "acc,miou\n0.750000,0.500000\n");
}

TEST_CASE("planted scenes: band layout, labels, and label map") {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.img_h = 5;
    cfg.img_w = 3;
    cfg.prompt_len = 2;
    cfg.mlp_ratio = 2;
    MMDiTWeights w = init_weights(cfg, 1);
    ConceptVocabulary vocab({"cat", "sky"}, {"sky"});
    Rng rng(9);
    auto s = rng.stream("noise");
    PlantedScene scene = make_planted_scene(w, vocab, 0.0, s);

    CHECK(scene.label_map == std::vector<int>{1, 0});
    // rows 0-2 -> concept 0, rows 3-4 -> concept 1
    for (int row = 0; row < 5; ++row)
        for (int col = 0; col < 3; ++col) CHECK(scene.gt.at(row, col) == (row < 3 ? 1 : 2));
    // sigma 0 means tokens equal the concept embeddings exactly
    int cat_row = w.lookup("cat");
    for (int j = 0; j < cfg.d_model; ++j)
        CHECK(scene.x0(0, j) == w.embedding_table(cat_row, j));

    PlantedScene noisy = make_planted_scene(w, vocab, 0.5, s);
    CHECK(noisy.x0 != scene.x0);
    CHECK(noisy.gt.labels == scene.gt.labels);
    CHECK_THROWS_AS(make_planted_scene(w, vocab, -1.0, s), data_error);
}

TEST_CASE("ablation grids have the documented row structure") {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 3;
    cfg.img_h = 4;
    cfg.img_w = 2;
    cfg.prompt_len = 2;
    cfg.mlp_ratio = 2;
    MMDiTWeights w = init_weights_aligned(cfg, 5);
    ConceptVocabulary vocab({"cat", "sky"});
    Rng rng(6);
    auto s = rng.stream("scenes");
    std::vector<PlantedScene> scenes = {make_planted_scene(w, vocab, 0.1, s),
                                        make_planted_scene(w, vocab, 0.1, s)};
    AblationInputs in{w, vocab, {"field", "sky"}, scenes, RunParams{}, Rng(6), {0.0, 500.0}};

    AblationGrid g1 = run_ablation(SweepAxis::space_softmax, in);
    REQUIRE(g1.rows.size() == 6);
    CHECK(g1.rows[0].key == "ca,off");
    CHECK(g1.rows[1].key == "ca,on");
    CHECK(g1.rows[2].key == "value,off");
    CHECK(g1.rows[3].key == "value,on");
    CHECK(g1.rows[4].key == "output,off");
    CHECK(g1.rows[5].key == "output,on");

    AblationGrid g2 = run_ablation(SweepAxis::ca_sa, in);
    REQUIRE(g2.rows.size() == 4);
    CHECK(g2.rows[0].key == "none");
    CHECK(g2.rows[1].key == "sa");
    CHECK(g2.rows[2].key == "ca");
    CHECK(g2.rows[3].key == "ca+sa");

    AblationGrid g3 = run_ablation(SweepAxis::layers, in);
    REQUIRE(g3.rows.size() == 4);  // one per layer + "all"
    CHECK(g3.rows[0].key == "layer0");
    CHECK(g3.rows[3].key == "all");

    AblationGrid g4 = run_ablation(SweepAxis::timesteps, in);
    REQUIRE(g4.rows.size() == 2);
    CHECK(g4.rows[0].key == "t=0");
    CHECK(g4.rows[1].key == "t=500");

    for (const AblationGrid* g : {&g1, &g2, &g3, &g4})
        for (const AblationRow& row : g->rows) {
            CHECK(row.report.acc >= 0.0);
            CHECK(row.report.acc <= 1.0);
            CHECK(row.report.miou >= 0.0);
            CHECK(row.report.miou <= 1.0);
            if (row.report.map) {
                CHECK(*row.report.map >= 0.0);
                CHECK(*row.report.map <= 1.0);
            }
        }

    std::string csv = ablation_to_csv(g1);
    CHECK(csv.substr(0, 17) == "row,acc,miou,map\n");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);

    in.scenes.clear();
    CHECK_THROWS_AS(run_ablation(SweepAxis::space_softmax, in), data_error);
    CHECK(sweep_axis_from_string("ca-sa") == SweepAxis::ca_sa);
    CHECK_THROWS_AS(sweep_axis_from_string("bogus"), data_error);
}

TEST_CASE("ablation is deterministic across repeated runs") {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.img_h = 2;
    cfg.img_w = 2;
    cfg.prompt_len = 2;
    cfg.mlp_ratio = 2;
    MMDiTWeights w = init_weights_aligned(cfg, 3);
    ConceptVocabulary vocab({"cat", "sky"});
    Rng rng(6);
    auto s = rng.stream("scenes");
    std::vector<PlantedScene> scenes = {make_planted_scene(w, vocab, 0.1, s)};
    AblationInputs in{w, vocab, {"field", "sky"}, scenes, RunParams{}, Rng(6), {}};
    AblationGrid a = run_ablation(SweepAxis::ca_sa, in);
    AblationGrid b = run_ablation(SweepAxis::ca_sa, in);
    for (size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].report.acc == b.rows[i].report.acc);
        CHECK(a.rows[i].report.miou == b.rows[i].report.miou);
    }
}
