#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "maivart/common.hpp"
#include "maivart/dsp.hpp"
#include "maivart/image.hpp"
#include "maivart/model.hpp"
#include "maivart/optim.hpp"

namespace maivart {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                                const std::string& what) {
    if (!j.is_object()) throw ConfigError(what + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const auto& k : known) ok = ok || k == key;
        if (!ok) throw ConfigError(what + ": unknown key \"" + key + "\"");
    }
}

inline nlohmann::json parse_json(const std::string& text, const std::string& what) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError(what + ": malformed JSON");
    return j;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

inline nlohmann::json to_json(const ModelConfig& c) {
    return {
        {"image_size", c.image_size},
        {"patch", c.patch},
        {"video_frames", c.video_frames},
        {"video_size", c.video_size},
        {"video_channels", c.video_channels},
        {"tubelet", {c.tubelet_t, c.tubelet_h, c.tubelet_w}},
        {"layers", c.encoder.layers},
        {"d", c.encoder.d},
        {"heads", c.encoder.heads},
        {"mlp_ratio", c.encoder.mlp_ratio},
        {"dropout", c.encoder.dropout_p},
        {"use_gap", c.encoder.use_gap},
        {"fusion_width", c.fusion_width},
        {"num_classes", c.num_classes},
        {"cross_attention", c.use_cross_attention},
        {"audio_repr", repr_name(c.audio_repr)},
        {"average_audio_kinds", c.average_audio_kinds},
    };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j,
        {"image_size", "patch", "video_frames", "video_size", "video_channels", "tubelet",
         "layers", "d", "heads", "mlp_ratio", "dropout", "use_gap", "fusion_width", "num_classes",
         "cross_attention", "audio_repr", "average_audio_kinds"},
        "model config");
    ModelConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.patch = j.value("patch", c.patch);
    c.video_frames = j.value("video_frames", c.video_frames);
    c.video_size = j.value("video_size", c.video_size);
    c.video_channels = j.value("video_channels", c.video_channels);
    if (j.contains("tubelet")) {
        const auto t = j.at("tubelet");
        if (!t.is_array() || t.size() != 3) {
            throw ConfigError("model config: tubelet must be [t, h, w]");
        }
        c.tubelet_t = t[0].get<std::size_t>();
        c.tubelet_h = t[1].get<std::size_t>();
        c.tubelet_w = t[2].get<std::size_t>();
    }
    c.encoder.layers = j.value("layers", c.encoder.layers);
    c.encoder.d = j.value("d", c.encoder.d);
    c.encoder.heads = j.value("heads", c.encoder.heads);
    c.encoder.mlp_ratio = j.value("mlp_ratio", c.encoder.mlp_ratio);
    c.encoder.dropout_p = j.value("dropout", c.encoder.dropout_p);
    c.encoder.use_gap = j.value("use_gap", c.encoder.use_gap);
    c.fusion_width = j.value("fusion_width", c.fusion_width);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.use_cross_attention = j.value("cross_attention", c.use_cross_attention);
    if (j.contains("audio_repr")) c.audio_repr = repr_from_name(j.at("audio_repr").get<std::string>());
    c.average_audio_kinds = j.value("average_audio_kinds", c.average_audio_kinds);
    c.validate();
    return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {
        {"batch_size", c.batch_size},
        {"lr0", c.lr0},
        {"decay_factor", c.decay_factor},
        {"decay_every", c.decay_every},
        {"patience", c.patience},
        {"max_epochs", c.max_epochs},
        {"lambda_a", c.lambda_a},
        {"lambda_v", c.lambda_v},
        {"seed", c.seed},
        {"dropout", c.dropout_p},
        {"augment", c.augment},
    };
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j,
                                {"batch_size", "lr0", "decay_factor", "decay_every", "patience",
                                 "max_epochs", "lambda_a", "lambda_v", "seed", "dropout",
                                 "augment"},
                                "train config");
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr0 = j.value("lr0", c.lr0);
    c.decay_factor = j.value("decay_factor", c.decay_factor);
    c.decay_every = j.value("decay_every", c.decay_every);
    c.patience = j.value("patience", c.patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.lambda_a = j.value("lambda_a", c.lambda_a);
    c.lambda_v = j.value("lambda_v", c.lambda_v);
    c.seed = j.value("seed", c.seed);
    c.dropout_p = j.value("dropout", c.dropout_p);
    c.augment = j.value("augment", c.augment);
    c.validate();
    return c;
}

inline nlohmann::json to_json(const ExtractConfig& c) {
    return {
        {"resolution", c.resolution}, {"window", c.window},
        {"hop", c.hop},               {"n_mfcc", c.n_mfcc},
        {"n_mels", c.n_mels},         {"rolloff_fraction", c.rolloff_fraction},
    };
}

inline ExtractConfig extract_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j, {"resolution", "window", "hop", "n_mfcc", "n_mels", "rolloff_fraction"},
        "extract config");
    ExtractConfig c;
    c.resolution = j.value("resolution", c.resolution);
    c.window = j.value("window", c.window);
    c.hop = j.value("hop", c.hop);
    c.n_mfcc = j.value("n_mfcc", c.n_mfcc);
    c.n_mels = j.value("n_mels", c.n_mels);
    c.rolloff_fraction = j.value("rolloff_fraction", c.rolloff_fraction);
    c.validate();
    return c;
}

template <typename Config>
Config config_from_file(const std::string& path,
                        Config (*parse)(const nlohmann::json&)) {
    return parse(detail::parse_json(detail::read_text_file(path), path));
}

}  // namespace maivart
