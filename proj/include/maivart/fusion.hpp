#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "maivart/common.hpp"
#include "maivart/rng.hpp"
#include "maivart/tensor.hpp"

namespace maivart {

struct FusionConfig {
    std::size_t d = 64;    // incoming CLS width from each encoder
    std::size_t d_f = 64;  // shared fusion width
    std::size_t num_classes = 2;
    bool use_cross_attention = true;  // off: pure concat-MLP ablation

    void validate() const {
        if (d == 0 || d_f == 0) throw ConfigError("fusion: widths must be positive");
        if (num_classes < 2) {
            throw ConfigError("fusion: need at least 2 classes, got " +
                              std::to_string(num_classes));
        }
    }
};

struct FusionParams {
    Tensor proj_a, bias_a;  // d x d_f, d_f
    Tensor proj_v, bias_v;
    Tensor wq, wk, wv;      // d_f x d_f single-head cross-attention
    Tensor w1, b1;          // 2*d_f x 2*d_f, 2*d_f
    Tensor w2, b2;          // 2*d_f x d_f, d_f
    Tensor wc, bc;          // d_f x C, C
    Tensor waux_a, baux_a;  // d_f x C, C
    Tensor waux_v, baux_v;

    void visit(const std::function<void(const std::string&, Tensor&)>& fn) {
        fn("proj_a", proj_a);
        fn("bias_a", bias_a);
        fn("proj_v", proj_v);
        fn("bias_v", bias_v);
        fn("wq", wq);
        fn("wk", wk);
        fn("wv", wv);
        fn("w1", w1);
        fn("b1", b1);
        fn("w2", w2);
        fn("b2", b2);
        fn("wc", wc);
        fn("bc", bc);
        fn("waux_a", waux_a);
        fn("baux_a", baux_a);
        fn("waux_v", waux_v);
        fn("baux_v", baux_v);
    }

    // Hidden weights carry fan-scaled noise so signal magnitude survives the
    // projection/attention/MLP stack; all classification heads start at zero,
    // making the initial logits exactly uniform while their unit-scale inputs
    // give the heads full-strength gradients from the first step.
    static FusionParams init(const FusionConfig& cfg, Rng& rng) {
        cfg.validate();
        const std::size_t d = cfg.d, f = cfg.d_f, c = cfg.num_classes;
        auto xavier = [&](std::size_t rows, std::size_t cols) {
            const real stddev = std::sqrt(real(2) / static_cast<real>(rows + cols));
            return Tensor::randn({rows, cols}, rng, stddev, true);
        };
        FusionParams p;
        p.proj_a = xavier(d, f);
        p.bias_a = Tensor::zeros({f}, true);
        p.proj_v = xavier(d, f);
        p.bias_v = Tensor::zeros({f}, true);
        p.wq = xavier(f, f);
        p.wk = xavier(f, f);
        p.wv = xavier(f, f);
        p.w1 = xavier(2 * f, 2 * f);
        p.b1 = Tensor::zeros({2 * f}, true);
        p.w2 = xavier(2 * f, f);
        p.b2 = Tensor::zeros({f}, true);
        p.wc = Tensor::zeros({f, c}, true);
        p.bc = Tensor::zeros({c}, true);
        p.waux_a = Tensor::zeros({f, c}, true);
        p.baux_a = Tensor::zeros({c}, true);
        p.waux_v = Tensor::zeros({f, c}, true);
        p.baux_v = Tensor::zeros({c}, true);
        return p;
    }
};

struct FusionOutput {
    Tensor logits;            // 1 x C, fused head
    Tensor aux_audio_logits;  // 1 x C, audio projection only
    Tensor aux_video_logits;  // 1 x C, video projection only
    Tensor fused_embedding;   // 1 x d_f
};

// Projects both CLS embeddings to the fusion width, lets each modality
// attend over the pair {audio, video} with one shared-weight attention head,
// concatenates the two attended vectors, and runs the two-layer GELU MLP.
// Auxiliary heads read the pre-attention projections, so they measure each
// modality on its own.
inline FusionOutput fuse(const Tensor& audio_cls, const Tensor& video_cls,
                         const FusionParams& p, const FusionConfig& cfg) {
    cfg.validate();
    const std::vector<std::size_t> want{1, cfg.d};
    if (audio_cls.shape() != want || video_cls.shape() != want) {
        throw DimensionError("fuse: embeddings must be [1x" + std::to_string(cfg.d) + "], got " +
                             shape_to_string(audio_cls.shape()) + " and " +
                             shape_to_string(video_cls.shape()));
    }
    Tensor ha = add_bias(matmul(audio_cls, p.proj_a), p.bias_a);
    Tensor hv = add_bias(matmul(video_cls, p.proj_v), p.bias_v);

    Tensor att_a = ha, att_v = hv;
    if (cfg.use_cross_attention) {
        Tensor pair = concat_rows({ha, hv});  // 2 x d_f
        Tensor q = matmul(pair, p.wq);
        Tensor k = matmul(pair, p.wk);
        Tensor v = matmul(pair, p.wv);
        const real inv_sqrt = static_cast<real>(1.0 / std::sqrt(static_cast<double>(cfg.d_f)));
        Tensor attn = softmax(scale(matmul(q, transpose(k)), inv_sqrt));
        Tensor mixed = matmul(attn, v);  // 2 x d_f
        att_a = slice_rows(mixed, 0, 1);
        att_v = slice_rows(mixed, 1, 1);
    }

    Tensor joint = concat_cols({att_a, att_v});  // 1 x 2*d_f
    Tensor hidden = gelu(add_bias(matmul(joint, p.w1), p.b1));

    FusionOutput out;
    out.fused_embedding = add_bias(matmul(hidden, p.w2), p.b2);
    out.logits = add_bias(matmul(out.fused_embedding, p.wc), p.bc);
    out.aux_audio_logits = add_bias(matmul(ha, p.waux_a), p.baux_a);
    out.aux_video_logits = add_bias(matmul(hv, p.waux_v), p.baux_v);
    return out;
}

// CE(fused) + lambda_a * CE(audio aux) + lambda_v * CE(video aux).
inline Tensor multimodal_loss(const FusionOutput& out, std::size_t label, real lambda_a,
                              real lambda_v) {
    if (lambda_a < 0 || lambda_v < 0) {
        throw ConfigError("multimodal_loss: lambda weights must be non-negative");
    }
    Tensor loss = cross_entropy(out.logits, label);
    if (lambda_a > 0) loss = add(loss, scale(cross_entropy(out.aux_audio_logits, label), lambda_a));
    if (lambda_v > 0) loss = add(loss, scale(cross_entropy(out.aux_video_logits, label), lambda_v));
    return loss;
}

// Argmax over the fused logits; ties go to the lowest class index.
inline std::size_t predict(const FusionOutput& out) {
    const auto& v = out.logits.values();
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

}  // namespace maivart
