#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "seghgnn/metrics.hpp"
#include "seghgnn/pipeline.hpp"
#include "support/synthetic.hpp"

using namespace seghgnn;
using namespace seghgnn::pipeline;

namespace {

LabelGrid grid(std::size_t rows, std::size_t cols, std::vector<int> v) { return LabelGrid(rows, cols, std::move(v)); }

TttConfig small_config(std::uint64_t seed = 0) {
    TttConfig cfg;
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST(TttConfig, Validation) {
    auto cfg = small_config();
    EXPECT_NO_THROW(cfg.validate());
    cfg.epochs = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = small_config();
    cfg.k = 1;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = small_config();
    cfg.lr_stiefel = 0.0;
    EXPECT_THROW(cfg.validate(), Error);
}

TEST(TttFit, SingleEpochSmoke) {
    const auto g = testsupport::two_halves(4, 4, 8, 1).graph();
    auto cfg = small_config();
    cfg.epochs = 1;
    const auto r = ttt_fit(g, cfg);
    ASSERT_EQ(r.losses.size(), 1u);
    EXPECT_TRUE(std::isfinite(r.losses[0]));
    EXPECT_EQ(r.assignment.nodes(), 16);
    EXPECT_LT(stiefel::orthonormality_error(r.params.lorentz.stiefel().mat()), 1e-6);
}

TEST(TttFit, RecoversHalvesAndDescends) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto inst = testsupport::two_halves(8, 8, 16, 100 + seed);
        const auto r = ttt_fit(inst.graph(), small_config(seed));
        EXPECT_EQ(metrics::ari(harden(r.assignment), inst.truth), 1.0) << "seed " << seed;
        EXPECT_LE(r.losses.back(), r.losses.front());
    }
}

TEST(TttFit, Deterministic) {
    const auto g = testsupport::two_halves(6, 6, 8, 3).graph();
    const auto a = ttt_fit(g, small_config(9));
    const auto b = ttt_fit(g, small_config(9));
    EXPECT_EQ(a.assignment.matrix(), b.assignment.matrix());
    EXPECT_EQ(a.losses, b.losses);
}

TEST(TttFit, TooFewNodes) {
    const auto g = hgnn::PatchGraph::from_features(Matrix::Ones(2, 3), 1, 2);
    auto cfg = small_config();
    cfg.k = 3;
    EXPECT_THROW(ttt_fit(g, cfg), Error);
}

TEST(TttFit, DegenerateGraphPropagates) {
    Matrix f(3, 2);
    f << 1, 0, 0, 1, 1, 0;
    Matrix w = Matrix::Zero(3, 3);
    w(0, 0) = w(2, 2) = 1.0;
    const auto g = hgnn::PatchGraph::with_weights(f, w, 1, 3);
    try {
        ttt_fit(g, small_config());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::degenerate_graph);
    }
}

TEST(Harden, ArgmaxAndTies) {
    Matrix s(3, 2);
    s << 0.75, 0.25, 0.5, 0.5, 0.1, 0.9;
    EXPECT_EQ(harden(hgnn::ClusterAssignment::from_matrix(s)), (std::vector<int>{0, 0, 1}));
}

TEST(Harden, PermutationEquivariantAndShiftInvariant) {
    Matrix logits(4, 3);
    logits << 1, 2, 3, 0.5, -1, 0.2, 4, 4.5, 1, 0, 0, 2;
    const auto base = harden(hgnn::ClusterAssignment::softmax(logits));
    Matrix shifted = logits;
    shifted.row(2).array() += 100.0;
    EXPECT_EQ(harden(hgnn::ClusterAssignment::softmax(shifted)), base);
    Matrix perm(4, 3);
    perm << logits.col(2), logits.col(0), logits.col(1);
    const auto p = harden(hgnn::ClusterAssignment::softmax(perm));
    const int map[3] = {1, 2, 0}; // old column -> new column
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(p[i], map[base[i]]);
}

TEST(IdentifyBackground, FrameAroundBlob) {
    const auto g = grid(4, 4, {0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0});
    EXPECT_EQ(identify_background(g), 0);
    const auto h = grid(4, 4, {1, 1, 1, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 1, 1, 1});
    EXPECT_EQ(identify_background(h), 1);
}

TEST(IdentifyBackground, CornerBlob) {
    // Blob in the top-left corner touches 2 borders; the rest touches 4.
    const auto g = grid(4, 4, {1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
    EXPECT_EQ(identify_background(g), 0);
}

TEST(IdentifyBackground, TwoBorderFallbackToArea) {
    // Staircase split: cluster 0 touches top + left, cluster 1 touches
    // bottom + right; cluster 1 is larger.
    const auto g = grid(4, 4, {0, 0, 0, 1, 0, 0, 1, 1, 0, 1, 1, 1, 1, 1, 1, 1});
    EXPECT_EQ(identify_background(g), 1);
}

TEST(IdentifyBackground, VerticalSplitTie) {
    // Both halves touch 3 borders; the wider half wins.
    const auto g = grid(3, 5, {0, 0, 1, 1, 1, 0, 0, 1, 1, 1, 0, 0, 1, 1, 1});
    EXPECT_EQ(identify_background(g), 1);
    // Equal areas: lower label.
    const auto h = grid(2, 4, {0, 0, 1, 1, 0, 0, 1, 1});
    EXPECT_EQ(identify_background(h), 0);
}

TEST(IdentifyBackground, EmptyGrid) { EXPECT_THROW(identify_background(LabelGrid()), Error); }

TEST(ConnectedComponents, Examples) {
    const auto one = grid(3, 3, {0, 0, 0, 0, 1, 0, 0, 0, 0});
    ASSERT_EQ(connected_components(one, 1).size(), 1u);
    EXPECT_EQ(connected_components(one, 1)[0].size(), 1u);

    const auto diag = grid(2, 2, {1, 0, 0, 1});
    const auto dc = connected_components(diag, 1);
    ASSERT_EQ(dc.size(), 2u);
    EXPECT_EQ(dc[0], std::vector<std::size_t>{0});
    EXPECT_EQ(dc[1], std::vector<std::size_t>{3});

    const auto solid = grid(3, 3, std::vector<int>(9, 2));
    ASSERT_EQ(connected_components(solid, 2).size(), 1u);
    EXPECT_EQ(connected_components(solid, 2)[0].size(), 9u);
}

TEST(ExtractBoxes, Examples) {
    // 3x2 component at rows 1-2, cols 0-2
    const auto g = grid(4, 4, {0, 0, 0, 0, 1, 1, 1, 0, 1, 1, 1, 0, 0, 0, 0, 0});
    const auto boxes = extract_boxes(g, 0, 8);
    ASSERT_EQ(boxes.size(), 1u);
    EXPECT_EQ(boxes[0], (BoundingBox{0, 8, 23, 23}));

    const auto four = grid(4, 4, {0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0});
    EXPECT_TRUE(extract_boxes(four, 0, 8).empty());
    EXPECT_TRUE(extract_boxes(grid(2, 2, {0, 0, 0, 0}), 0, 8).empty());
}

TEST(ExtractBoxes, SeveralComponentsStayInsideImage) {
    const auto g = grid(4, 7, {1, 1, 1, 0, 1, 1, 1,  //
                               1, 1, 0, 0, 0, 1, 1,  //
                               0, 0, 0, 0, 0, 0, 0,  //
                               0, 0, 0, 0, 0, 0, 0});
    const auto boxes = extract_boxes(g, 0, 4);
    ASSERT_EQ(boxes.size(), 2u);
    EXPECT_EQ(boxes[0], (BoundingBox{0, 0, 11, 7}));
    EXPECT_EQ(boxes[1], (BoundingBox{16, 0, 27, 7}));
    for (const auto& b : boxes) {
        EXPECT_LE(b.x_min, b.x_max);
        EXPECT_LE(b.y_max, 4 * 4 - 1);
        EXPECT_LE(b.x_max, 7 * 4 - 1);
    }
}

TEST(SegmentObject, BlobOnFrame) {
    const auto inst = testsupport::centered_blob(8, 8, 2, 5, 2, 5, 16, 4);
    const auto seg = segment_object(inst.graph(), small_config(0));
    ASSERT_TRUE(seg.background.has_value());
    EXPECT_EQ(foreground_mask(seg).labels, inst.truth);
    EXPECT_EQ(background_first(seg).labels, inst.truth);
    const auto loc = localize(inst.graph(), small_config(0), 8);
    ASSERT_EQ(loc.boxes.size(), 1u);
    EXPECT_EQ(loc.boxes[0], (BoundingBox{16, 16, 47, 47}));
}

TEST(BackgroundFirst, Relabels) {
    SegmentationResult seg{grid(1, 4, {0, 1, 2, 1}), 1, hgnn::ClusterAssignment::from_matrix(Matrix::Ones(4, 1)), 0};
    EXPECT_EQ(background_first(seg).labels, (std::vector<int>{1, 0, 2, 0}));
    EXPECT_EQ(foreground_mask(seg).labels, (std::vector<int>{1, 0, 1, 0}));
}

TEST(PartSegmentation, RecoversFourBlocks) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto inst = testsupport::four_part_object(50 + seed);
        PartConfig pc;
        pc.base.seed = seed;
        const auto r = part_segmentation(inst.graph(), pc);
        EXPECT_EQ(metrics::ari(r.parts.labels, inst.truth), 1.0) << "seed " << seed;
        for (std::size_t i = 0; i < inst.truth.size(); ++i) {
            if (inst.truth[i] == 0) {
                EXPECT_EQ(r.parts.labels[i], kBackgroundPart);
            }
        }
    }
}

TEST(PartSegmentation, StageOneMatchesObjectSegmentation) {
    const auto inst = testsupport::four_part_object(7);
    PartConfig pc;
    pc.base.seed = 3;
    const auto r = part_segmentation(inst.graph(), pc);
    const auto seg = segment_object(inst.graph(), stage1_config(pc));
    EXPECT_EQ(r.stage1.labels, seg.labels);
    EXPECT_EQ(r.stage1.background, seg.background);
}

TEST(PartSegmentation, BackgroundRowsNeverRead) {
    const auto inst = testsupport::four_part_object(11);
    PartConfig pc;
    pc.base.seed = 1;
    auto graph = inst.graph();
    const auto stage1 = segment_object(graph, stage1_config(pc));
    const auto clean = part_stage2(graph, stage1, pc);
    for (std::size_t i = 0; i < stage1.labels.size(); ++i) {
        if (stage1.labels.labels[i] == *stage1.background) {
            graph.features.row(static_cast<Eigen::Index>(i)).setConstant(std::numeric_limits<double>::quiet_NaN());
        }
    }
    const auto poisoned = part_stage2(graph, stage1, pc);
    EXPECT_EQ(poisoned.parts, clean.parts);
}

TEST(PartSegmentation, InsufficientForeground) {
    // Stage-1 result with only 3 foreground patches.
    std::vector<int> labels(16, 0);
    labels[5] = labels[6] = labels[9] = 1;
    SegmentationResult stage1{grid(4, 4, labels), 0, hgnn::ClusterAssignment::from_matrix(Matrix::Ones(16, 1)), 0};
    const auto g = testsupport::two_halves(4, 4, 8, 0).graph();
    try {
        part_stage2(g, stage1, PartConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::insufficient_foreground);
    }
}
