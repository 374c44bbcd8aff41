#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "maivart/common.hpp"
#include "maivart/flops.hpp"
#include "maivart/rng.hpp"
#include "maivart/tensor.hpp"
#include "maivart/tokenizer.hpp"

namespace maivart {

struct EncoderConfig {
    std::size_t layers = 4;
    std::size_t d = 64;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    double dropout_p = 0.1;
    bool use_gap = false;  // readout: CLS row by default, mean over tokens if set

    void validate() const {
        if (layers < 1) throw ConfigError("encoder: need at least one layer");
        if (d == 0 || heads == 0 || d % heads != 0) {
            throw ConfigError("encoder: token width " + std::to_string(d) +
                              " must be a positive multiple of heads " + std::to_string(heads));
        }
        if (mlp_ratio < 1) throw ConfigError("encoder: mlp_ratio must be at least 1");
        if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
            throw ConfigError("encoder: dropout_p must be in [0, 1)");
        }
    }
};

// Attention matrices captured during a forward pass, indexed [layer][head];
// each matrix is (N+1) x (N+1) with rows summing to 1.
struct AttentionRecord {
    std::vector<std::vector<Tensor>> layers;
};

// Per-forward-pass context: train toggles dropout (which then needs the rng);
// a non-null record pointer enables attention capture.
struct ForwardCtx {
    bool train = false;
    Rng* rng = nullptr;
    AttentionRecord* attention = nullptr;
};

// The key projection carries no bias: a per-row constant added to the
// attention scores cancels inside softmax, so such a parameter would be
// inert and its gradient identically zero.
struct AttentionParams {
    Tensor wq, wk, wv, wo;  // d x d
    Tensor bq, bv, bo;      // d

    void visit(const std::function<void(const std::string&, Tensor&)>& fn) {
        fn("wq", wq);
        fn("wk", wk);
        fn("wv", wv);
        fn("wo", wo);
        fn("bq", bq);
        fn("bv", bv);
        fn("bo", bo);
    }
};

struct LayerParams {
    Tensor ln1_gain, ln1_bias;
    AttentionParams attn;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1;  // d x hidden, hidden
    Tensor w2, b2;  // hidden x d, d

    void visit(const std::function<void(const std::string&, Tensor&)>& fn) {
        fn("ln1_gain", ln1_gain);
        fn("ln1_bias", ln1_bias);
        attn.visit([&](const std::string& name, Tensor& t) { fn("attn." + name, t); });
        fn("ln2_gain", ln2_gain);
        fn("ln2_bias", ln2_bias);
        fn("w1", w1);
        fn("b1", b1);
        fn("w2", w2);
        fn("b2", b2);
    }
};

struct EncoderParams {
    std::vector<LayerParams> layers;
    Tensor final_gain, final_bias;

    void visit(const std::function<void(const std::string&, Tensor&)>& fn) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].visit([&](const std::string& name, Tensor& t) {
                fn("layer" + std::to_string(i) + "." + name, t);
            });
        }
        fn("final_gain", final_gain);
        fn("final_bias", final_bias);
    }

    // Gaussian std 0.02 for projections, zero biases, layernorm at identity.
    // The attention output and second MLP projections start at zero so every
    // layer begins as an identity on the residual path.
    static EncoderParams init(const EncoderConfig& cfg, Rng& rng) {
        cfg.validate();
        const std::size_t d = cfg.d, hidden = cfg.mlp_ratio * cfg.d;
        EncoderParams p;
        p.layers.reserve(cfg.layers);
        for (std::size_t i = 0; i < cfg.layers; ++i) {
            LayerParams lp;
            lp.ln1_gain = Tensor::ones({d}, true);
            lp.ln1_bias = Tensor::zeros({d}, true);
            lp.attn.wq = Tensor::randn({d, d}, rng, 0.02, true);
            lp.attn.wk = Tensor::randn({d, d}, rng, 0.02, true);
            lp.attn.wv = Tensor::randn({d, d}, rng, 0.02, true);
            lp.attn.wo = Tensor::zeros({d, d}, true);
            lp.attn.bq = Tensor::zeros({d}, true);
            lp.attn.bv = Tensor::zeros({d}, true);
            lp.attn.bo = Tensor::zeros({d}, true);
            lp.ln2_gain = Tensor::ones({d}, true);
            lp.ln2_bias = Tensor::zeros({d}, true);
            lp.w1 = Tensor::randn({d, hidden}, rng, 0.02, true);
            lp.b1 = Tensor::zeros({hidden}, true);
            lp.w2 = Tensor::zeros({hidden, d}, true);
            lp.b2 = Tensor::zeros({d}, true);
            p.layers.push_back(std::move(lp));
        }
        p.final_gain = Tensor::ones({d}, true);
        p.final_bias = Tensor::zeros({d}, true);
        return p;
    }
};

// Multi-head self-attention over normalized tokens x (n x d):
// per head A = softmax(Q K^T / sqrt(d_head)), output concat(A V) W_o + b_o,
// with dropout after the output projection in train mode.
inline Tensor mhsa(const Tensor& x, const AttentionParams& p, const EncoderConfig& cfg,
                   const ForwardCtx& ctx, std::vector<Tensor>* head_record = nullptr) {
    if (x.rank() != 2 || x.dim(1) != cfg.d) {
        throw DimensionError("mhsa: tokens must be [n x " + std::to_string(cfg.d) + "], got " +
                             shape_to_string(x.shape()));
    }
    const std::size_t d_head = cfg.d / cfg.heads;
    const real inv_sqrt = static_cast<real>(1.0 / std::sqrt(static_cast<double>(d_head)));

    Tensor q, k, v;
    {
        FlopRegion region("attention_proj");
        q = add_bias(matmul(x, p.wq), p.bq);
        k = matmul(x, p.wk);
        v = add_bias(matmul(x, p.wv), p.bv);
    }

    std::vector<Tensor> mixed;
    mixed.reserve(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        Tensor qh = slice_cols(q, h * d_head, d_head);
        Tensor kh = slice_cols(k, h * d_head, d_head);
        Tensor vh = slice_cols(v, h * d_head, d_head);
        Tensor scores;
        {
            FlopRegion region("attention_scores");
            scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        }
        Tensor attn = softmax(scores);
        if (head_record != nullptr) head_record->push_back(attn.detach());
        FlopRegion region("attention_mix");
        mixed.push_back(matmul(attn, vh));
    }

    FlopRegion region("attention_proj");
    Tensor out = add_bias(matmul(concat_cols(mixed), p.wo), p.bo);
    return dropout(out, static_cast<real>(cfg.dropout_p), ctx.train, ctx.rng);
}

// One pre-norm block: x + mhsa(ln1(x)), then + mlp(ln2(.)), where the MLP is
// two projections around a GELU, hidden width mlp_ratio * d, with dropout
// after the second projection in train mode.
inline Tensor encoder_layer(const Tensor& x, const LayerParams& p, const EncoderConfig& cfg,
                            const ForwardCtx& ctx, std::vector<Tensor>* head_record = nullptr) {
    Tensor h = add(x, mhsa(layernorm(x, p.ln1_gain, p.ln1_bias), p.attn, cfg, ctx, head_record));
    Tensor mlp_in = layernorm(h, p.ln2_gain, p.ln2_bias);
    Tensor mlp_out;
    {
        FlopRegion region("mlp");
        mlp_out = add_bias(matmul(gelu(add_bias(matmul(mlp_in, p.w1), p.b1)), p.w2), p.b2);
    }
    return add(h, dropout(mlp_out, static_cast<real>(cfg.dropout_p), ctx.train, ctx.rng));
}

struct EncodeResult {
    Tensor readout;  // 1 x d: the final CLS row, or the token mean under GAP
    Tensor tokens;   // (N+1) x d after the final layernorm
};

// Runs L layers plus the final layernorm and reads out the embedding.
inline EncodeResult encode(const TokenSequence& seq, const EncoderConfig& cfg,
                           const EncoderParams& params, const ForwardCtx& ctx) {
    cfg.validate();
    if (params.layers.size() != cfg.layers) {
        throw ContractError("encode: params hold " + std::to_string(params.layers.size()) +
                            " layers for a config of " + std::to_string(cfg.layers));
    }
    if (ctx.attention != nullptr) ctx.attention->layers.assign(cfg.layers, {});

    Tensor x = seq.tokens;
    for (std::size_t i = 0; i < cfg.layers; ++i) {
        std::vector<Tensor>* record = ctx.attention ? &ctx.attention->layers[i] : nullptr;
        x = encoder_layer(x, params.layers[i], cfg, ctx, record);
    }
    EncodeResult out;
    out.tokens = layernorm(x, params.final_gain, params.final_bias);
    out.readout = cfg.use_gap ? mean_rows(out.tokens) : slice_rows(out.tokens, 0, 1);
    return out;
}

}  // namespace maivart
