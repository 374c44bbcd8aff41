#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "maivart/common.hpp"
#include "maivart/dsp.hpp"
#include "maivart/fusion.hpp"
#include "maivart/rng.hpp"
#include "maivart/tensor.hpp"
#include "maivart/tokenizer.hpp"
#include "maivart/transformer.hpp"

namespace maivart {

struct ModelConfig {
    std::size_t image_size = 32;  // audio images are square RGB
    std::size_t patch = 8;
    std::size_t video_frames = 4;
    std::size_t video_size = 32;
    std::size_t video_channels = 3;
    std::size_t tubelet_t = 2;
    std::size_t tubelet_h = 8;
    std::size_t tubelet_w = 8;
    EncoderConfig encoder;        // shared shape for the audio and video streams
    std::size_t fusion_width = 0; // 0 keeps the encoder width
    std::size_t num_classes = 2;
    bool use_cross_attention = true;
    ReprKind audio_repr = ReprKind::chroma;
    bool average_audio_kinds = false;  // feed the mean CLS over all six representations

    std::size_t d_f() const { return fusion_width == 0 ? encoder.d : fusion_width; }
    std::size_t audio_tokens() const {
        return (image_size / patch) * (image_size / patch);
    }
    std::size_t video_tokens() const {
        return (video_frames / tubelet_t) * (video_size / tubelet_h) * (video_size / tubelet_w);
    }
    FusionConfig fusion_config() const {
        FusionConfig f;
        f.d = encoder.d;
        f.d_f = d_f();
        f.num_classes = num_classes;
        f.use_cross_attention = use_cross_attention;
        return f;
    }

    void validate() const {
        encoder.validate();
        fusion_config().validate();
        if (patch == 0 || image_size % patch != 0) {
            throw ConfigError("model: image " + std::to_string(image_size) +
                              " is not divisible by patch " + std::to_string(patch));
        }
        if (tubelet_t == 0 || tubelet_h == 0 || tubelet_w == 0 ||
            video_frames % tubelet_t != 0 || video_size % tubelet_h != 0 ||
            video_size % tubelet_w != 0) {
            throw ConfigError("model: video " + std::to_string(video_frames) + "x" +
                              std::to_string(video_size) + "x" + std::to_string(video_size) +
                              " is not divisible by tubelet " + std::to_string(tubelet_t) + "x" +
                              std::to_string(tubelet_h) + "x" + std::to_string(tubelet_w));
        }
        if (video_channels == 0) throw ConfigError("model: video needs at least one channel");
    }
};

// Both encoder streams plus the tokenizer embeddings and the fusion head.
// Every learnable tensor is reachable through visit() exactly once; that
// ordering is the registry contract the optimizer and checkpoints rely on.
struct Model {
    ModelConfig cfg;
    Tensor E, cls, pos;        // audio patch embedding
    Tensor E_v, cls_v, pos_v;  // video tubelet embedding
    EncoderParams audio_encoder, video_encoder;
    FusionParams fusion;

    static Model init(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        const std::size_t d = cfg.encoder.d;
        const std::size_t flat_patch = cfg.patch * cfg.patch * 3;
        const std::size_t flat_tubelet =
            cfg.tubelet_t * cfg.tubelet_h * cfg.tubelet_w * cfg.video_channels;
        Model m;
        m.cfg = cfg;
        m.E = Tensor::randn({flat_patch, d}, rng, 0.02, true);
        m.cls = Tensor::zeros({1, d}, true);
        m.pos = Tensor::randn({cfg.audio_tokens() + 1, d}, rng, 0.02, true);
        m.E_v = Tensor::randn({flat_tubelet, d}, rng, 0.02, true);
        m.cls_v = Tensor::zeros({1, d}, true);
        m.pos_v = Tensor::randn({cfg.video_tokens() + 1, d}, rng, 0.02, true);
        m.audio_encoder = EncoderParams::init(cfg.encoder, rng);
        m.video_encoder = EncoderParams::init(cfg.encoder, rng);
        m.fusion = FusionParams::init(cfg.fusion_config(), rng);
        return m;
    }

    void visit(const std::function<void(const std::string&, Tensor&)>& fn) {
        fn("audio.patch_embed", E);
        fn("audio.cls", cls);
        fn("audio.pos", pos);
        fn("video.patch_embed", E_v);
        fn("video.cls", cls_v);
        fn("video.pos", pos_v);
        audio_encoder.visit(
            [&](const std::string& name, Tensor& t) { fn("audio_encoder." + name, t); });
        video_encoder.visit(
            [&](const std::string& name, Tensor& t) { fn("video_encoder." + name, t); });
        fusion.visit([&](const std::string& name, Tensor& t) { fn("fusion." + name, t); });
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters() {
        std::vector<std::pair<std::string, Tensor>> out;
        visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        visit([&](const std::string&, Tensor& t) { n += t.values().size(); });
        return n;
    }

    // image: image_size x image_size x 3, values in [0, 1].
    Tensor encode_audio(const Tensor& image, const ForwardCtx& ctx) const {
        const std::vector<std::size_t> want{cfg.image_size, cfg.image_size, 3};
        if (image.shape() != want) {
            throw DimensionError("model: audio image " + shape_to_string(image.shape()) +
                                 " does not match configured " + shape_to_string(want));
        }
        TokenSequence seq = embed(patchify(image, cfg.patch, cfg.patch), E, cls, pos);
        return encode(seq, cfg.encoder, audio_encoder, ctx).readout;
    }

    Tensor encode_video(const Tensor& video, const ForwardCtx& ctx) const {
        const std::vector<std::size_t> want{cfg.video_frames, cfg.video_size, cfg.video_size,
                                            cfg.video_channels};
        if (video.shape() != want) {
            throw DimensionError("model: video clip " + shape_to_string(video.shape()) +
                                 " does not match configured " + shape_to_string(want));
        }
        TokenSequence seq =
            tubelet_tokenize(video, cfg.tubelet_t, cfg.tubelet_h, cfg.tubelet_w, E_v, cls_v, pos_v);
        return encode(seq, cfg.encoder, video_encoder, ctx).readout;
    }

    // Attention capture (ctx.attention) follows the audio stream: that is the
    // matrix the inspection tooling visualizes.
    FusionOutput forward(const Tensor& audio_image, const Tensor& video,
                         const ForwardCtx& ctx) const {
        Tensor ha = encode_audio(audio_image, ctx);
        ForwardCtx video_ctx = ctx;
        video_ctx.attention = nullptr;
        Tensor hv = encode_video(video, video_ctx);
        return fuse(ha, hv, fusion, cfg.fusion_config());
    }

    // Averaged-representation mode: one CLS per audio image through the same
    // audio stream, mean taken before fusion.
    FusionOutput forward_averaged(const std::vector<Tensor>& audio_images, const Tensor& video,
                                  const ForwardCtx& ctx) const {
        if (audio_images.empty()) throw ContractError("model: no audio images to average");
        Tensor sum = encode_audio(audio_images[0], ctx);
        for (std::size_t i = 1; i < audio_images.size(); ++i) {
            ForwardCtx rest = ctx;
            rest.attention = nullptr;  // keep the record pointing at the first image
            sum = add(sum, encode_audio(audio_images[i], rest));
        }
        Tensor ha = scale(sum, static_cast<real>(1.0 / static_cast<double>(audio_images.size())));
        ForwardCtx video_ctx = ctx;
        video_ctx.attention = nullptr;
        Tensor hv = encode_video(video, video_ctx);
        return fuse(ha, hv, fusion, cfg.fusion_config());
    }
};

}  // namespace maivart
