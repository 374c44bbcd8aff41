#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "maivart/common.hpp"
#include "maivart/config.hpp"
#include "maivart/dataset.hpp"
#include "maivart/model.hpp"
#include "maivart/optim.hpp"
#include "maivart/rng.hpp"
#include "maivart/tensor.hpp"
#include "maivart/wav.hpp"

namespace maivart {

inline double accuracy(const std::vector<std::size_t>& preds,
                       const std::vector<std::size_t>& labels) {
    if (preds.empty() || preds.size() != labels.size()) {
        throw ContractError("accuracy: need matching non-empty prediction/label lists");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i];
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

struct MetricsRow {
    std::size_t epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double eval_accuracy = 0;
};

inline void save_metrics_csv(const std::filesystem::path& path,
                             const std::vector<MetricsRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,lr,train_loss,eval_accuracy\n";
    char line[128];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%zu,%.12g,%.12g,%.12g\n", r.epoch, r.lr, r.train_loss,
                      r.eval_accuracy);
        out << line;
    }
}

struct EvalResult {
    double accuracy = 0;
    std::vector<std::vector<std::size_t>> confusion;  // [true label][predicted]
    double aux_audio_accuracy = 0;
    double aux_video_accuracy = 0;
};

namespace detail {

inline std::size_t argmax_row(const Tensor& logits) {
    const auto& v = logits.values();
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

inline FusionOutput run_forward(const Model& model, const Sample& s, const ForwardCtx& ctx) {
    if (s.audio_images.size() > 1) return model.forward_averaged(s.audio_images, s.video, ctx);
    if (s.audio_images.empty()) throw ContractError("sample " + s.id + " has no audio image");
    return model.forward(s.audio_images[0], s.video, ctx);
}

// Zero-padded translation of the spatial plane, applied per frame when the
// tensor carries a leading time dimension. Equivalent to pad-then-random-crop.
inline Tensor shifted_image(const Tensor& img, std::ptrdiff_t dx, std::ptrdiff_t dy) {
    const auto& shape = img.shape();
    if (shape.size() != 3 && shape.size() != 4) {
        throw ContractError("shifted_image: expected rank 3 or 4");
    }
    const std::size_t frames = shape.size() == 4 ? shape[0] : 1;
    const std::size_t h = shape[shape.size() - 3];
    const std::size_t w = shape[shape.size() - 2];
    const std::size_t c = shape[shape.size() - 1];
    Tensor out = Tensor::zeros(shape);
    const auto& src = img.values();
    auto& dst = out.values();
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t y = 0; y < h; ++y) {
            const auto sy = static_cast<std::ptrdiff_t>(y) - dy;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t x = 0; x < w; ++x) {
                const auto sx = static_cast<std::ptrdiff_t>(x) - dx;
                if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                const std::size_t from = ((t * h + static_cast<std::size_t>(sy)) * w +
                                          static_cast<std::size_t>(sx)) * c;
                const std::size_t to = ((t * h + y) * w + x) * c;
                for (std::size_t ch = 0; ch < c; ++ch) dst[to + ch] = src[from + ch];
            }
        }
    }
    return out;
}

// Nearest-neighbor remap of columns. The horizontal axis is time in every
// audio image, so stretching columns is a time-stretch; factor 1 is the
// identity, factor > 1 plays the clip slower (edge columns repeat).
inline Tensor time_stretched_image(const Tensor& img, double factor) {
    if (img.shape().size() != 3) throw ContractError("time_stretched_image: expected rank 3");
    if (factor <= 0) throw ContractError("time_stretched_image: factor must be positive");
    const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    Tensor out = Tensor::zeros(img.shape());
    const auto& src = img.values();
    auto& dst = out.values();
    for (std::size_t x = 0; x < w; ++x) {
        auto sx = static_cast<std::ptrdiff_t>(std::llround(static_cast<double>(x) / factor));
        sx = std::clamp<std::ptrdiff_t>(sx, 0, static_cast<std::ptrdiff_t>(w) - 1);
        for (std::size_t y = 0; y < h; ++y) {
            const std::size_t from = (y * w + static_cast<std::size_t>(sx)) * c;
            const std::size_t to = (y * w + x) * c;
            for (std::size_t ch = 0; ch < c; ++ch) dst[to + ch] = src[from + ch];
        }
    }
    return out;
}

// One random crop/stretch draw per sample: audio images get a time-stretch in
// [0.9, 1.1] plus a +-2 pixel crop offset, video frames share one crop offset.
inline Sample augmented(const Sample& s, Rng& rng) {
    const double factor = 0.9 + 0.2 * rng.uniform();
    const auto dx = static_cast<std::ptrdiff_t>(rng.below(5)) - 2;
    const auto dy = static_cast<std::ptrdiff_t>(rng.below(5)) - 2;
    Sample out;
    out.id = s.id;
    out.label = s.label;
    out.audio_images.reserve(s.audio_images.size());
    for (const Tensor& img : s.audio_images) {
        out.audio_images.push_back(shifted_image(time_stretched_image(img, factor), dx, dy));
    }
    out.video = shifted_image(s.video, dx, dy);
    return out;
}

}  // namespace detail

inline EvalResult evaluate(const Model& model, const LoadedDataset& data) {
    if (data.samples.empty()) throw ContractError("evaluate: empty dataset");
    if (data.num_classes() != model.cfg.num_classes) {
        throw ConfigError("evaluate: dataset lists " + std::to_string(data.num_classes()) +
                          " classes, model expects " + std::to_string(model.cfg.num_classes));
    }
    const std::size_t c = model.cfg.num_classes;
    EvalResult r;
    r.confusion.assign(c, std::vector<std::size_t>(c, 0));
    std::size_t fused_ok = 0, audio_ok = 0, video_ok = 0;
    ForwardCtx ctx;  // eval mode
    for (const Sample& s : data.samples) {
        FusionOutput out = detail::run_forward(model, s, ctx);
        const std::size_t pred = predict(out);
        r.confusion[s.label][pred] += 1;
        fused_ok += pred == s.label;
        audio_ok += detail::argmax_row(out.aux_audio_logits) == s.label;
        video_ok += detail::argmax_row(out.aux_video_logits) == s.label;
    }
    const double n = static_cast<double>(data.samples.size());
    r.accuracy = static_cast<double>(fused_ok) / n;
    r.aux_audio_accuracy = static_cast<double>(audio_ok) / n;
    r.aux_video_accuracy = static_cast<double>(video_ok) / n;
    return r;
}

// Everything the loop carries between epochs. Restart-safe: all per-epoch
// randomness is derived from (seed, epoch, batch), so a state restored from
// a checkpoint continues bit-identically.
struct TrainState {
    std::size_t next_epoch = 0;
    AdamState adam;
    double best_accuracy = -1.0;
    std::size_t best_epoch = 0;
    std::vector<std::vector<real>> best_params;  // registry-order snapshot
    std::vector<MetricsRow> history;
};

struct TrainOptions {
    std::ostream* log = nullptr;        // per-epoch progress lines
    std::filesystem::path metrics_csv;  // rewritten from full history each epoch when set
};

inline void restore_best(Model& model, const TrainState& state) {
    if (state.best_params.empty()) throw ContractError("restore_best: no snapshot recorded");
    auto params = model.named_parameters();
    if (params.size() != state.best_params.size()) {
        throw ContractError("restore_best: snapshot holds " +
                            std::to_string(state.best_params.size()) + " tensors for " +
                            std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].second.size() != state.best_params[i].size()) {
            throw ContractError("restore_best: size mismatch at " + params[i].first);
        }
        params[i].second.values() = state.best_params[i];
    }
}

inline void train(Model& model, TrainState& state, const LoadedDataset& train_set,
                  const LoadedDataset& eval_set, const TrainConfig& cfg,
                  const TrainOptions& opts = {}) {
    cfg.validate();
    if (train_set.samples.empty()) throw ContractError("train: empty training set");
    model.cfg.encoder.dropout_p = cfg.dropout_p;  // the recipe owns the effective rate

    auto params = model.named_parameters();
    const std::size_t n = train_set.samples.size();

    for (std::size_t epoch = state.next_epoch; epoch < cfg.max_epochs; ++epoch) {
        // A state restored after early stopping must not train further.
        if (!state.history.empty() && epoch - state.best_epoch > cfg.patience) break;
        const double lr = lr_at(epoch, cfg);

        Rng order_rng(mix_seed(cfg.seed, epoch, 0));
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        shuffle(order, order_rng);

        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            const auto batch_n = static_cast<double>(stop - start);
            for (auto& [name, p] : params) p.zero_grad();
            Rng dropout_rng(mix_seed(cfg.seed, epoch, 1 + batch_index));
            ForwardCtx ctx;
            ctx.train = true;
            ctx.rng = &dropout_rng;
            for (std::size_t j = start; j < stop; ++j) {
                const Sample& stored = train_set.samples[order[j]];
                const Sample s = cfg.augment ? detail::augmented(stored, dropout_rng) : stored;
                Tape tape;
                Tensor loss = multimodal_loss(detail::run_forward(model, s, ctx), s.label,
                                              static_cast<real>(cfg.lambda_a),
                                              static_cast<real>(cfg.lambda_v));
                loss_sum += loss.item();
                tape.backward(scale(loss, static_cast<real>(1.0 / batch_n)));
            }
            adam_step(params, state.adam, lr);
        }

        MetricsRow row;
        row.epoch = epoch;
        row.lr = lr;
        row.train_loss = loss_sum / static_cast<double>(n);
        row.eval_accuracy = evaluate(model, eval_set).accuracy;
        state.history.push_back(row);
        if (!opts.metrics_csv.empty()) save_metrics_csv(opts.metrics_csv, state.history);
        if (opts.log) {
            (*opts.log) << "epoch " << epoch << " lr " << lr << " loss " << row.train_loss
                        << " eval_acc " << row.eval_accuracy << "\n";
        }

        if (row.eval_accuracy > state.best_accuracy) {
            state.best_accuracy = row.eval_accuracy;
            state.best_epoch = epoch;
            state.best_params.clear();
            for (auto& [name, p] : params) state.best_params.push_back(p.values());
        }
        state.next_epoch = epoch + 1;
        if (epoch - state.best_epoch >= cfg.patience) break;
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: little-endian binary, magic "MVRT", version 1. Configs are
// embedded as JSON strings; parameters, the best-snapshot, Adam moments, and
// the metrics history ride along so a resumed run regenerates the same log.

namespace detail {

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_f64(std::vector<unsigned char>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline void put_str(std::vector<unsigned char>& out, const std::string& s) {
    put_u64(out, s.size());
    out.insert(out.end(), s.begin(), s.end());
}

inline void put_vec(std::vector<unsigned char>& out, const std::vector<real>& v) {
    put_u64(out, v.size());
    for (const real x : v) put_f64(out, x);
}

struct ByteReader {
    const std::vector<unsigned char>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw InputError("checkpoint: truncated file");
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint64_t len = u64();
        need(len);
        std::string s(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
        return s;
    }
    std::vector<real> vec() {
        const std::uint64_t len = u64();
        std::vector<real> v(len);
        for (auto& x : v) x = f64();
        return v;
    }
};

}  // namespace detail

struct Checkpoint {
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    TrainState state;
    std::vector<std::string> param_names;
    std::vector<std::vector<real>> param_values;  // current, registry order
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, Model& model,
                            const TrainConfig& train_cfg, const TrainState& state) {
    std::vector<unsigned char> out;
    out.insert(out.end(), {'M', 'V', 'R', 'T'});
    detail::write_u32le(out, kCheckpointVersion);
    detail::put_str(out, to_json(model.cfg).dump());
    detail::put_str(out, to_json(train_cfg).dump());
    detail::put_u64(out, state.next_epoch);
    detail::put_u64(out, state.best_epoch);
    detail::put_f64(out, state.best_accuracy);

    auto params = model.named_parameters();
    detail::put_u64(out, params.size());
    for (auto& [name, p] : params) {
        detail::put_str(out, name);
        detail::put_vec(out, p.values());
    }
    detail::put_u64(out, state.best_params.size());
    for (const auto& v : state.best_params) detail::put_vec(out, v);

    detail::put_u64(out, state.adam.step);
    detail::put_u64(out, state.adam.m.size());
    for (std::size_t i = 0; i < state.adam.m.size(); ++i) {
        detail::put_vec(out, state.adam.m[i]);
        detail::put_vec(out, state.adam.v[i]);
    }

    detail::put_u64(out, state.history.size());
    for (const auto& r : state.history) {
        detail::put_u64(out, r.epoch);
        detail::put_f64(out, r.lr);
        detail::put_f64(out, r.train_loss);
        detail::put_f64(out, r.eval_accuracy);
    }
    detail::write_file_bytes(path.string(), out);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::vector<unsigned char> bytes = detail::read_file_bytes(path.string());
    if (bytes.size() < 8 || bytes[0] != 'M' || bytes[1] != 'V' || bytes[2] != 'R' ||
        bytes[3] != 'T') {
        throw InputError("checkpoint: " + path.string() + " is not a checkpoint file");
    }
    const std::uint32_t version = detail::read_u32le(bytes.data() + 4);
    if (version != kCheckpointVersion) {
        throw InputError("checkpoint: unsupported format version " + std::to_string(version));
    }
    detail::ByteReader r{bytes, 8};
    Checkpoint c;
    c.model_cfg = model_config_from_json(detail::parse_json(r.str(), "checkpoint model config"));
    c.train_cfg = train_config_from_json(detail::parse_json(r.str(), "checkpoint train config"));
    c.state.next_epoch = r.u64();
    c.state.best_epoch = r.u64();
    c.state.best_accuracy = r.f64();

    const std::uint64_t n_params = r.u64();
    for (std::uint64_t i = 0; i < n_params; ++i) {
        c.param_names.push_back(r.str());
        c.param_values.push_back(r.vec());
    }
    const std::uint64_t n_best = r.u64();
    for (std::uint64_t i = 0; i < n_best; ++i) c.state.best_params.push_back(r.vec());

    c.state.adam.step = r.u64();
    const std::uint64_t n_moments = r.u64();
    for (std::uint64_t i = 0; i < n_moments; ++i) {
        c.state.adam.m.push_back(r.vec());
        c.state.adam.v.push_back(r.vec());
    }

    const std::uint64_t n_rows = r.u64();
    for (std::uint64_t i = 0; i < n_rows; ++i) {
        MetricsRow row;
        row.epoch = r.u64();
        row.lr = r.f64();
        row.train_loss = r.f64();
        row.eval_accuracy = r.f64();
        c.state.history.push_back(row);
    }
    return c;
}

// Rebuilds the model a checkpoint describes and installs its current
// parameter values.
inline Model model_from_checkpoint(const Checkpoint& c) {
    Rng rng(c.train_cfg.seed);
    Model m = Model::init(c.model_cfg, rng);
    auto params = m.named_parameters();
    if (params.size() != c.param_names.size()) {
        throw InputError("checkpoint: holds " + std::to_string(c.param_names.size()) +
                         " tensors, model wants " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].first != c.param_names[i] ||
            params[i].second.size() != c.param_values[i].size()) {
            throw InputError("checkpoint: parameter mismatch at " + c.param_names[i]);
        }
        params[i].second.values() = c.param_values[i];
    }
    return m;
}

}  // namespace maivart
