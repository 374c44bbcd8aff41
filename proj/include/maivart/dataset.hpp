#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "maivart/common.hpp"
#include "maivart/image.hpp"
#include "maivart/model.hpp"
#include "maivart/png.hpp"
#include "maivart/rng.hpp"
#include "maivart/tensor.hpp"
#include "maivart/wav.hpp"

namespace maivart {

struct ManifestEntry {
    std::string id;
    std::string audio;  // WAV file, relative paths resolve against the manifest root
    std::string video;  // directory of numbered PNG frames
    std::size_t label = 0;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> class_names;
    std::filesystem::path root;  // where relative entry paths anchor; not serialized

    std::size_t num_classes() const { return class_names.size(); }

    std::filesystem::path resolve(const std::string& p) const {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : root / fp;
    }

    void validate() const {
        if (class_names.empty()) throw InputError("manifest: empty class list");
        std::set<std::string> ids;
        for (const auto& e : entries) {
            if (e.label >= class_names.size()) {
                throw InputError("manifest: sample " + e.id + " has label " +
                                 std::to_string(e.label) + " outside [0," +
                                 std::to_string(class_names.size()) + ")");
            }
            if (!ids.insert(e.id).second) {
                throw InputError("manifest: duplicate sample id " + e.id);
            }
            if (!std::filesystem::exists(resolve(e.audio))) {
                throw InputError("manifest: sample " + e.id + " audio missing: " + e.audio);
            }
            if (!std::filesystem::exists(resolve(e.video))) {
                throw InputError("manifest: sample " + e.id + " video missing: " + e.video);
            }
        }
    }
};

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& jsonl_path,
                          const std::filesystem::path& classes_path) {
    std::ofstream out(jsonl_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + jsonl_path.string());
    for (const auto& e : m.entries) {
        nlohmann::json j{{"id", e.id}, {"audio", e.audio}, {"video", e.video}, {"label", e.label}};
        out << j.dump() << "\n";
    }
    nlohmann::json classes{{"classes", m.class_names}};
    std::ofstream cls(classes_path, std::ios::binary);
    if (!cls) throw IoError("cannot write " + classes_path.string());
    cls << classes.dump(2) << "\n";
}

// Loads `manifest.jsonl` plus its sibling class-name header. Relative sample
// paths inside the manifest are taken relative to the manifest's directory.
inline DatasetManifest load_manifest(const std::filesystem::path& jsonl_path,
                                     const std::filesystem::path& classes_path) {
    std::ifstream in(jsonl_path, std::ios::binary);
    if (!in) throw IoError("cannot open " + jsonl_path.string());
    std::ifstream cls_in(classes_path, std::ios::binary);
    if (!cls_in) throw IoError("cannot open " + classes_path.string());

    DatasetManifest m;
    m.root = jsonl_path.has_parent_path() ? jsonl_path.parent_path() : ".";

    nlohmann::json classes = nlohmann::json::parse(cls_in, nullptr, false);
    if (classes.is_discarded() || !classes.contains("classes") ||
        !classes.at("classes").is_array()) {
        throw InputError(classes_path.string() + ": expected {\"classes\": [...]}");
    }
    for (const auto& name : classes.at("classes")) m.class_names.push_back(name.get<std::string>());

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw InputError(jsonl_path.string() + ":" + std::to_string(lineno) +
                             ": malformed JSON line");
        }
        ManifestEntry e;
        try {
            e.id = j.at("id").get<std::string>();
            e.audio = j.at("audio").get<std::string>();
            e.video = j.at("video").get<std::string>();
            e.label = j.at("label").get<std::size_t>();
        } catch (const nlohmann::json::exception& ex) {
            throw InputError(jsonl_path.string() + ":" + std::to_string(lineno) + ": " +
                             ex.what());
        }
        m.entries.push_back(std::move(e));
    }
    m.validate();
    return m;
}

// A manifest entry decoded into model-ready tensors. audio_images holds one
// rendered representation, or all six in averaged mode.
struct Sample {
    std::string id;
    std::size_t label = 0;
    std::vector<Tensor> audio_images;
    Tensor video;
};

struct LoadedDataset {
    std::vector<Sample> samples;
    std::vector<std::string> class_names;

    std::size_t num_classes() const { return class_names.size(); }
};

namespace detail {

inline Tensor load_video_clip(const std::filesystem::path& dir, std::size_t frames,
                              std::size_t size, std::size_t channels) {
    if (channels != 3) {
        throw ConfigError("video: PNG frames carry 3 channels, config wants " +
                          std::to_string(channels));
    }
    std::vector<std::filesystem::path> files;
    if (!std::filesystem::is_directory(dir)) {
        throw InputError("video: " + dir.string() + " is not a directory");
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.size() < frames) {
        throw InputError("video: " + dir.string() + " holds " + std::to_string(files.size()) +
                         " frames, need " + std::to_string(frames));
    }
    Tensor clip = Tensor::zeros({frames, size, size, 3});
    for (std::size_t t = 0; t < frames; ++t) {
        // Uniform temporal subsampling when the clip is longer than needed.
        const std::size_t src = t * files.size() / frames;
        ImageRgb frame = load_png(files[src].string());
        if (frame.width != size || frame.height != size) {
            throw DimensionError("video: frame " + files[src].filename().string() + " is " +
                                 std::to_string(frame.width) + "x" +
                                 std::to_string(frame.height) + ", config wants " +
                                 std::to_string(size) + "x" + std::to_string(size));
        }
        Tensor img = image_to_tensor(frame);
        std::copy(img.values().begin(), img.values().end(),
                  clip.values().begin() + static_cast<std::ptrdiff_t>(t * size * size * 3));
    }
    return clip;
}

}  // namespace detail

// Renders audio representations and decodes video frames for every entry.
// Failures carry the sample id so a bad file in a large manifest is findable.
inline LoadedDataset load_dataset(const DatasetManifest& manifest, const ModelConfig& model_cfg,
                                  ExtractConfig extract_cfg) {
    model_cfg.validate();
    extract_cfg.resolution = model_cfg.image_size;
    extract_cfg.validate();
    if (manifest.num_classes() != model_cfg.num_classes) {
        throw ConfigError("dataset: manifest lists " + std::to_string(manifest.num_classes()) +
                          " classes, model expects " + std::to_string(model_cfg.num_classes));
    }

    LoadedDataset data;
    data.class_names = manifest.class_names;
    data.samples.reserve(manifest.entries.size());
    for (const auto& entry : manifest.entries) {
        try {
            Sample s;
            s.id = entry.id;
            s.label = entry.label;
            Waveform w = load_wav(manifest.resolve(entry.audio).string());
            if (model_cfg.average_audio_kinds) {
                for (const AudioImage& img : extract_all(w, extract_cfg, entry.id)) {
                    s.audio_images.push_back(image_to_tensor(img.image));
                }
            } else {
                s.audio_images.push_back(
                    image_to_tensor(render_repr(w, model_cfg.audio_repr, extract_cfg)));
            }
            s.video = detail::load_video_clip(manifest.resolve(entry.video),
                                              model_cfg.video_frames, model_cfg.video_size,
                                              model_cfg.video_channels);
            data.samples.push_back(std::move(s));
        } catch (const IoError& e) {
            throw IoError("sample " + entry.id + ": " + e.what());
        } catch (const InputError& e) {
            throw InputError("sample " + entry.id + ": " + e.what());
        } catch (const DimensionError& e) {
            throw DimensionError("sample " + entry.id + ": " + e.what());
        }
    }
    return data;
}

// Desk-scale stand-in corpus. Each class pairs a tone (semitone steps up
// from 440 Hz, so classes occupy distinct pitch classes) with a direction
// along which a bright square drifts across four frames; both modalities
// are individually class-informative.
inline DatasetManifest synth_dataset(const std::filesystem::path& out_dir,
                                     std::size_t num_classes, std::size_t per_class,
                                     std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("synth: need at least 2 classes");
    if (per_class == 0) throw ConfigError("synth: need at least 1 sample per class");

    constexpr std::size_t kSampleRate = 8000;
    constexpr std::size_t kAudioLen = 8000;  // one second
    constexpr std::size_t kFrames = 4;
    constexpr std::size_t kFrameSize = 32;
    constexpr double kHalfSquare = 4.0;

    std::filesystem::create_directories(out_dir / "audio");
    std::filesystem::create_directories(out_dir / "video");

    DatasetManifest m;
    m.root = out_dir;
    for (std::size_t k = 0; k < num_classes; ++k) m.class_names.push_back("class_" + std::to_string(k));

    for (std::size_t k = 0; k < num_classes; ++k) {
        const double freq = 440.0 * std::pow(2.0, static_cast<double>(k) / 12.0);
        const double theta = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(num_classes);
        for (std::size_t i = 0; i < per_class; ++i) {
            Rng rng(mix_seed(seed, k, i));
            const std::string id = "c" + std::to_string(k) + "_s" + std::to_string(i);

            std::vector<real> samples(kAudioLen);
            const double phase = rng.uniform() * 2.0 * M_PI;
            for (std::size_t t = 0; t < kAudioLen; ++t) {
                const double tone = 0.5 * std::sin(2.0 * M_PI * freq * static_cast<double>(t) /
                                                       static_cast<double>(kSampleRate) +
                                                   phase);
                samples[t] = std::clamp(tone + 0.02 * rng.normal(), -1.0, 1.0);
            }
            const std::string audio_rel = "audio/" + id + ".wav";
            save_wav_pcm16((out_dir / audio_rel).string(),
                           Waveform(std::move(samples), kSampleRate));

            const std::string video_rel = "video/" + id;
            std::filesystem::create_directories(out_dir / video_rel);
            const double cx0 = kFrameSize / 2.0 + (rng.uniform() * 2.0 - 1.0);
            const double cy0 = kFrameSize / 2.0 + (rng.uniform() * 2.0 - 1.0);
            for (std::size_t f = 0; f < kFrames; ++f) {
                const double step = (static_cast<double>(f) - 1.5) * 3.5;
                const double cx = cx0 + step * std::cos(theta);
                const double cy = cy0 + step * std::sin(theta);
                ImageRgb frame;
                frame.width = kFrameSize;
                frame.height = kFrameSize;
                frame.pixels.resize(kFrameSize * kFrameSize);
                for (std::size_t y = 0; y < kFrameSize; ++y) {
                    for (std::size_t x = 0; x < kFrameSize; ++x) {
                        const double u = rng.uniform();
                        const bool inside = std::abs(static_cast<double>(x) - cx) <= kHalfSquare &&
                                            std::abs(static_cast<double>(y) - cy) <= kHalfSquare;
                        const double v = inside ? 0.85 + 0.15 * u : 0.15 * u;
                        const auto byte = static_cast<std::uint8_t>(std::lround(v * 255.0));
                        frame.at(x, y) = Rgb{byte, byte, byte};
                    }
                }
                char name[32];
                std::snprintf(name, sizeof(name), "frame_%03zu.png", f);
                save_png((out_dir / video_rel / name).string(), frame);
            }

            m.entries.push_back(ManifestEntry{id, audio_rel, video_rel, k});
        }
    }
    save_manifest(m, out_dir / "manifest.jsonl", out_dir / "classes.json");
    return m;
}

}  // namespace maivart
