#include "maivart/fusion.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "maivart/rng.hpp"
#include "maivart/tensor.hpp"
#include "testing_util.hpp"

namespace {

using namespace maivart;
using maivart::testing::check_gradients;

FusionConfig small_config() {
    FusionConfig cfg;
    cfg.d = 6;
    cfg.d_f = 6;
    cfg.num_classes = 3;
    return cfg;
}

// Replaces every parameter with a fresh draw at a scale where the loss
// surface has usable curvature for finite differences.
FusionParams dense_params(const FusionConfig& cfg, Rng& rng, double stddev = 0.3) {
    FusionParams p = FusionParams::init(cfg, rng);
    p.visit([&](const std::string&, Tensor& t) {
        t = Tensor::randn(t.shape(), rng, stddev, true);
    });
    return p;
}

std::vector<std::pair<std::string, Tensor>> named_params(FusionParams& p) {
    std::vector<std::pair<std::string, Tensor>> out;
    p.visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
}

FusionOutput logits_only(std::initializer_list<real> vals) {
    FusionOutput out;
    out.logits = Tensor::from({1, vals.size()}, std::vector<real>(vals));
    out.aux_audio_logits = Tensor::zeros({1, vals.size()});
    out.aux_video_logits = Tensor::zeros({1, vals.size()});
    out.fused_embedding = Tensor::zeros({1, 1});
    return out;
}

TEST(FusionConfigTest, RejectsDegenerateSettings) {
    FusionConfig cfg = small_config();
    cfg.d = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.d_f = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.num_classes = 1;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(FuseTest, SymmetricWeightsGiveIdenticalAttendedVectors) {
    FusionConfig cfg = small_config();
    const std::size_t f = cfg.d_f;
    Rng rng(11);
    FusionParams p = dense_params(cfg, rng);
    // Same projection for both modalities, so identical inputs make the
    // audio and video rows of the attention pair identical.
    p.proj_v = Tensor::from(p.proj_a.shape(), p.proj_a.values());
    p.bias_v = Tensor::from(p.bias_a.shape(), p.bias_a.values());
    p.waux_v = Tensor::from(p.waux_a.shape(), p.waux_a.values());
    p.baux_v = Tensor::from(p.baux_a.shape(), p.baux_a.values());
    // First MLP layer computes (att_a - att_v) * M: a zero witness for the
    // attended vectors agreeing.
    Tensor m = Tensor::randn({f, 2 * f}, rng);
    std::vector<real> w1(2 * f * 2 * f);
    for (std::size_t i = 0; i < f; ++i) {
        for (std::size_t j = 0; j < 2 * f; ++j) {
            w1[i * 2 * f + j] = m.values()[i * 2 * f + j];
            w1[(f + i) * 2 * f + j] = -m.values()[i * 2 * f + j];
        }
    }
    p.w1 = Tensor::from({2 * f, 2 * f}, w1);
    p.b1 = Tensor::zeros({2 * f});
    p.b2 = Tensor::zeros({f});
    p.bc = Tensor::from({cfg.num_classes}, {0.4, -1.1, 0.2});

    Tensor x = Tensor::randn({1, cfg.d}, rng);
    FusionOutput out = fuse(x, x, p, cfg);

    // Pre-attention projections agree bitwise, so the shared aux head does.
    for (std::size_t i = 0; i < cfg.num_classes; ++i) {
        EXPECT_DOUBLE_EQ(out.aux_audio_logits.values()[i], out.aux_video_logits.values()[i]);
    }
    // att_a == att_v collapses the difference MLP input to rounding noise.
    for (std::size_t i = 0; i < f; ++i) {
        EXPECT_NEAR(out.fused_embedding.values()[i], 0.0, 1e-12);
    }
    for (std::size_t i = 0; i < cfg.num_classes; ++i) {
        EXPECT_NEAR(out.logits.values()[i], p.bc.values()[i], 1e-12);
    }
}

TEST(FuseTest, ZeroEmbeddingsYieldClassifierBias) {
    FusionConfig cfg = small_config();
    Rng rng(7);
    FusionParams p = FusionParams::init(cfg, rng);
    p.bc = Tensor::from({3}, {0.7, -0.3, 0.1});
    p.baux_a = Tensor::from({3}, {1.0, 2.0, 3.0});

    Tensor zero = Tensor::zeros({1, cfg.d});
    FusionOutput out = fuse(zero, zero, p, cfg);

    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(out.logits.values()[i], p.bc.values()[i]);
        EXPECT_DOUBLE_EQ(out.aux_audio_logits.values()[i], p.baux_a.values()[i]);
        EXPECT_DOUBLE_EQ(out.aux_video_logits.values()[i], 0.0);
        EXPECT_DOUBLE_EQ(out.fused_embedding.values()[i % cfg.d_f], 0.0);
    }
}

TEST(FuseTest, GradientsMatchFiniteDifferences) {
    FusionConfig cfg = small_config();
    Rng rng(3);
    FusionParams p = dense_params(cfg, rng);
    Tensor xa = Tensor::randn({1, cfg.d}, rng, 0.3, true);
    Tensor xv = Tensor::randn({1, cfg.d}, rng, 0.3, true);

    auto params = named_params(p);
    params.emplace_back("audio_cls", xa);
    params.emplace_back("video_cls", xv);
    auto forward = [&] { return multimodal_loss(fuse(xa, xv, p, cfg), 1, 0.5, 0.5); };

    const auto check = check_gradients(forward, params);
    EXPECT_LT(check.max_rel_error, 1e-4)
        << "worst parameter " << check.worst_param << "[" << check.worst_index << "]";
}

TEST(FuseTest, ConcatOnlyPathAlsoDifferentiates) {
    FusionConfig cfg = small_config();
    cfg.use_cross_attention = false;
    Rng rng(5);
    FusionParams p = dense_params(cfg, rng);
    Tensor xa = Tensor::randn({1, cfg.d}, rng, 0.3, true);
    Tensor xv = Tensor::randn({1, cfg.d}, rng, 0.3, true);

    auto params = named_params(p);
    params.emplace_back("audio_cls", xa);
    params.emplace_back("video_cls", xv);
    auto forward = [&] { return multimodal_loss(fuse(xa, xv, p, cfg), 2, 0.5, 0.5); };

    const auto check = check_gradients(forward, params);
    EXPECT_LT(check.max_rel_error, 1e-4)
        << "worst parameter " << check.worst_param << "[" << check.worst_index << "]";
}

TEST(FuseTest, CrossAttentionFlagChangesTheFusedPath) {
    FusionConfig on = small_config();
    FusionConfig off = small_config();
    off.use_cross_attention = false;
    Rng rng(19);
    FusionParams p = dense_params(on, rng);
    Tensor xa = Tensor::randn({1, on.d}, rng);
    Tensor xv = Tensor::randn({1, on.d}, rng);

    FusionOutput with = fuse(xa, xv, p, on);
    FusionOutput without = fuse(xa, xv, p, off);
    double diff = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        diff = std::max(diff, std::abs(with.logits.values()[i] - without.logits.values()[i]));
    }
    EXPECT_GT(diff, 1e-6);
    // The pre-attention aux heads are untouched by the flag.
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(with.aux_audio_logits.values()[i], without.aux_audio_logits.values()[i]);
    }
}

TEST(FuseTest, RejectsWidthMismatch) {
    FusionConfig cfg = small_config();
    Rng rng(2);
    FusionParams p = FusionParams::init(cfg, rng);
    Tensor bad = Tensor::zeros({1, cfg.d + 1});
    Tensor good = Tensor::zeros({1, cfg.d});
    EXPECT_THROW(fuse(bad, good, p, cfg), DimensionError);
    EXPECT_THROW(fuse(good, bad, p, cfg), DimensionError);
}

TEST(FuseTest, EvalIsDeterministic) {
    FusionConfig cfg = small_config();
    Rng rng(23);
    FusionParams p = dense_params(cfg, rng);
    Tensor xa = Tensor::randn({1, cfg.d}, rng);
    Tensor xv = Tensor::randn({1, cfg.d}, rng);
    FusionOutput a = fuse(xa, xv, p, cfg);
    FusionOutput b = fuse(xa, xv, p, cfg);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(a.logits.values()[i], b.logits.values()[i]);
    }
}

TEST(MultimodalLossTest, UniformLogitsGiveLogC) {
    FusionOutput out;
    out.logits = Tensor::zeros({1, 4});
    out.aux_audio_logits = Tensor::zeros({1, 4});
    out.aux_video_logits = Tensor::zeros({1, 4});
    out.fused_embedding = Tensor::zeros({1, 2});

    EXPECT_NEAR(multimodal_loss(out, 2, 0.0, 0.0).item(), std::log(4.0), 1e-12);
    EXPECT_NEAR(multimodal_loss(out, 0, 0.5, 0.5).item(), 2.0 * std::log(4.0), 1e-12);
}

TEST(MultimodalLossTest, RejectsBadLabelAndWeights) {
    FusionOutput out = logits_only({0.0, 0.0, 0.0});
    EXPECT_THROW(multimodal_loss(out, 3, 0.5, 0.5), ContractError);
    EXPECT_THROW(multimodal_loss(out, 0, -0.1, 0.5), ConfigError);
    EXPECT_THROW(multimodal_loss(out, 0, 0.5, -1.0), ConfigError);
}

TEST(MultimodalLossTest, NonNegativeOnRandomLogits) {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        FusionOutput out;
        out.logits = Tensor::randn({1, 5}, rng, 2.0);
        out.aux_audio_logits = Tensor::randn({1, 5}, rng, 2.0);
        out.aux_video_logits = Tensor::randn({1, 5}, rng, 2.0);
        out.fused_embedding = Tensor::zeros({1, 1});
        const std::size_t label = rng.below(5);
        EXPECT_GE(multimodal_loss(out, label, 0.5, 0.5).item(), 0.0);
    }
}

TEST(MultimodalLossTest, ZeroWeightsLeaveAuxGradientsExactlyZero) {
    FusionConfig cfg = small_config();
    Rng rng(13);
    FusionParams p = dense_params(cfg, rng);
    Tensor xa = Tensor::randn({1, cfg.d}, rng, 0.3);
    Tensor xv = Tensor::randn({1, cfg.d}, rng, 0.3);

    {
        Tape tape;
        Tensor loss = multimodal_loss(fuse(xa, xv, p, cfg), 1, 0.0, 0.0);
        tape.backward(loss);
    }
    for (Tensor* t : {&p.waux_a, &p.baux_a, &p.waux_v, &p.baux_v}) {
        if (!t->has_grad()) continue;
        for (const real g : t->grad()) EXPECT_EQ(g, 0.0);
    }
    // The fused head still learns.
    ASSERT_TRUE(p.wc.has_grad());
    double norm = 0.0;
    for (const real g : p.wc.grad()) norm += std::abs(g);
    EXPECT_GT(norm, 0.0);
}

TEST(PredictTest, ArgmaxWithLowestIndexTieBreak) {
    EXPECT_EQ(predict(logits_only({0.1, 0.9, 0.3})), 1u);
    EXPECT_EQ(predict(logits_only({0.5, 0.5, 0.5})), 0u);
    EXPECT_EQ(predict(logits_only({-2.0, -2.0, -3.0})), 0u);
}

TEST(PredictTest, InvariantUnderMonotoneTransforms) {
    const std::vector<real> base{0.2, -1.4, 0.9, 0.1};
    FusionOutput out;
    out.aux_audio_logits = Tensor::zeros({1, 4});
    out.aux_video_logits = Tensor::zeros({1, 4});
    out.fused_embedding = Tensor::zeros({1, 1});

    out.logits = Tensor::from({1, 4}, base);
    const std::size_t ref = predict(out);

    std::vector<real> shifted(base), scaled(base), exped(base);
    for (std::size_t i = 0; i < 4; ++i) {
        shifted[i] += 7.25;
        scaled[i] = 3.0 * base[i] + 1.0;
        exped[i] = std::exp(base[i]);
    }
    out.logits = Tensor::from({1, 4}, shifted);
    EXPECT_EQ(predict(out), ref);
    out.logits = Tensor::from({1, 4}, scaled);
    EXPECT_EQ(predict(out), ref);
    out.logits = Tensor::from({1, 4}, exped);
    EXPECT_EQ(predict(out), ref);
}

}  // namespace
