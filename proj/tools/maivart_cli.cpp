#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "maivart/config.hpp"
#include "maivart/dataset.hpp"
#include "maivart/dsp.hpp"
#include "maivart/flops.hpp"
#include "maivart/image.hpp"
#include "maivart/model.hpp"
#include "maivart/optim.hpp"
#include "maivart/png.hpp"
#include "maivart/tokenizer.hpp"
#include "maivart/training.hpp"
#include "maivart/transformer.hpp"
#include "maivart/wav.hpp"

namespace {

using namespace maivart;
namespace fs = std::filesystem;

void log_resolved(const std::string& subcommand, const nlohmann::json& resolved) {
    std::cerr << "resolved config (" << subcommand << "): " << resolved.dump() << "\n";
}

fs::path sibling_classes_file(const fs::path& manifest) {
    return (manifest.has_parent_path() ? manifest.parent_path() : fs::path(".")) / "classes.json";
}

struct ExtractArgs {
    std::string audio;
    std::string manifest;
    std::string out;
    std::vector<std::string> kinds;
    ExtractConfig cfg;
};

int run_extract(const ExtractArgs& a) {
    if (a.audio.empty() == a.manifest.empty()) {
        throw ConfigError("extract: pass exactly one of --audio or --manifest");
    }
    a.cfg.validate();
    std::vector<ReprKind> kinds;
    if (a.kinds.empty()) {
        kinds.assign(std::begin(kAllReprKinds), std::end(kAllReprKinds));
    } else {
        for (const auto& name : a.kinds) kinds.push_back(repr_from_name(name));
    }
    nlohmann::json resolved = to_json(a.cfg);
    resolved["out"] = a.out;
    for (const ReprKind k : kinds) resolved["kinds"].push_back(repr_name(k));

    std::vector<std::pair<std::string, std::string>> inputs;  // id, wav path
    if (!a.audio.empty()) {
        resolved["audio"] = a.audio;
        inputs.emplace_back(fs::path(a.audio).stem().string(), a.audio);
    } else {
        resolved["manifest"] = a.manifest;
        DatasetManifest m = load_manifest(a.manifest, sibling_classes_file(a.manifest));
        for (const auto& e : m.entries) {
            inputs.emplace_back(e.id, m.resolve(e.audio).string());
        }
    }
    log_resolved("extract", resolved);

    // Render everything before touching the output directory so a bad input
    // leaves no partial artifacts behind.
    std::vector<std::pair<std::string, ImageRgb>> rendered;
    for (const auto& [id, wav_path] : inputs) {
        Waveform w = load_wav(wav_path);
        std::optional<Spectrogram> cache;
        for (const ReprKind kind : kinds) {
            rendered.emplace_back(image_filename(id, kind), render_repr(w, kind, a.cfg, cache));
        }
    }
    fs::create_directories(a.out);
    for (const auto& [name, img] : rendered) {
        save_png((fs::path(a.out) / name).string(), img);
    }
    std::cerr << "wrote " << rendered.size() << " images to " << a.out << "\n";
    return 0;
}

struct SynthArgs {
    std::string out;
    std::size_t classes = 4;
    std::size_t per_class = 16;
    std::uint64_t seed = 42;
};

int run_synth(const SynthArgs& a) {
    log_resolved("synth", {{"out", a.out},
                           {"classes", a.classes},
                           {"per_class", a.per_class},
                           {"seed", a.seed}});
    DatasetManifest m = synth_dataset(a.out, a.classes, a.per_class, a.seed);
    std::cerr << "wrote " << m.entries.size() << " samples across " << m.num_classes()
              << " classes to " << a.out << "\n";
    return 0;
}

struct TrainArgs {
    std::string manifest;
    std::string eval_manifest;
    std::string model_config;
    std::string train_config;
    std::string extract_config;
    std::string out;
    std::string resume;
    bool seed_passed = false;
    std::uint64_t seed = 42;
};

int run_train(const TrainArgs& a) {
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    TrainState state;
    Model model = [&] {
        if (!a.resume.empty()) {
            if (!a.model_config.empty() || !a.train_config.empty()) {
                throw ConfigError("train: --resume carries its own configs; drop --model-config/"
                                  "--train-config");
            }
            Checkpoint c = load_checkpoint(a.resume);
            model_cfg = c.model_cfg;
            train_cfg = c.train_cfg;
            state = std::move(c.state);
            return model_from_checkpoint(c);
        }
        if (!a.model_config.empty()) {
            model_cfg = config_from_file(a.model_config, model_config_from_json);
        }
        if (!a.train_config.empty()) {
            train_cfg = config_from_file(a.train_config, train_config_from_json);
        }
        if (a.seed_passed) train_cfg.seed = a.seed;
        Rng rng(train_cfg.seed);
        return Model::init(model_cfg, rng);
    }();

    ExtractConfig extract_cfg;
    if (!a.extract_config.empty()) {
        extract_cfg = config_from_file(a.extract_config, extract_config_from_json);
    }

    nlohmann::json resolved{{"model", to_json(model_cfg)},
                            {"train", to_json(train_cfg)},
                            {"extract", to_json(extract_cfg)},
                            {"manifest", a.manifest},
                            {"out", a.out}};
    if (!a.resume.empty()) resolved["resume"] = a.resume;
    log_resolved("train", resolved);

    DatasetManifest manifest = load_manifest(a.manifest, sibling_classes_file(a.manifest));
    LoadedDataset train_set = load_dataset(manifest, model_cfg, extract_cfg);
    LoadedDataset eval_set = train_set;
    if (!a.eval_manifest.empty()) {
        DatasetManifest em = load_manifest(a.eval_manifest, sibling_classes_file(a.eval_manifest));
        eval_set = load_dataset(em, model_cfg, extract_cfg);
    }

    fs::create_directories(a.out);
    TrainOptions opts;
    opts.log = &std::cerr;
    opts.metrics_csv = fs::path(a.out) / "metrics.csv";
    train(model, state, train_set, eval_set, train_cfg, opts);

    // The checkpoint keeps the final weights for resuming; the best snapshot
    // rides along inside the state.
    save_checkpoint(fs::path(a.out) / "checkpoint.bin", model, train_cfg, state);
    std::cerr << "best eval accuracy " << state.best_accuracy << " at epoch " << state.best_epoch
              << "; checkpoint in " << a.out << "\n";
    return 0;
}

struct EvalArgs {
    std::string manifest;
    std::string checkpoint;
    std::string out = ".";
    bool use_best = true;
};

int run_eval(const EvalArgs& a) {
    Checkpoint c = load_checkpoint(a.checkpoint);
    log_resolved("eval", {{"manifest", a.manifest},
                          {"checkpoint", a.checkpoint},
                          {"out", a.out},
                          {"use_best", a.use_best},
                          {"model", to_json(c.model_cfg)}});
    Model model = model_from_checkpoint(c);
    if (a.use_best && !c.state.best_params.empty()) restore_best(model, c.state);

    DatasetManifest manifest = load_manifest(a.manifest, sibling_classes_file(a.manifest));
    LoadedDataset data = load_dataset(manifest, model.cfg, ExtractConfig{});
    EvalResult r = evaluate(model, data);

    fs::create_directories(a.out);
    const fs::path confusion_path = fs::path(a.out) / "confusion.csv";
    std::ofstream out(confusion_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + confusion_path.string());
    for (const auto& row : r.confusion) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << "\n";
    }
    std::cerr << "aux accuracies: audio " << r.aux_audio_accuracy << ", video "
              << r.aux_video_accuracy << "; confusion in " << confusion_path.string() << "\n";
    std::printf("%.6f\n", r.accuracy);
    return 0;
}

struct AttentionArgs {
    std::string checkpoint;
    std::string input;
    std::size_t layer = 0;
    std::size_t head = 0;
    std::string out = ".";
};

int run_attention(const AttentionArgs& a) {
    Checkpoint c = load_checkpoint(a.checkpoint);
    log_resolved("attention", {{"checkpoint", a.checkpoint},
                               {"input", a.input},
                               {"layer", a.layer},
                               {"head", a.head},
                               {"out", a.out}});
    if (a.layer >= c.model_cfg.encoder.layers) {
        throw ConfigError("attention: layer " + std::to_string(a.layer) + " out of range [0," +
                          std::to_string(c.model_cfg.encoder.layers) + ")");
    }
    if (a.head >= c.model_cfg.encoder.heads) {
        throw ConfigError("attention: head " + std::to_string(a.head) + " out of range [0," +
                          std::to_string(c.model_cfg.encoder.heads) + ")");
    }
    Model model = model_from_checkpoint(c);
    if (!c.state.best_params.empty()) restore_best(model, c.state);

    Waveform w = load_wav(a.input);
    ExtractConfig extract_cfg;
    extract_cfg.resolution = model.cfg.image_size;
    Tensor image = image_to_tensor(render_repr(w, model.cfg.audio_repr, extract_cfg));

    AttentionRecord record;
    ForwardCtx ctx;
    ctx.attention = &record;
    model.encode_audio(image, ctx);
    const Tensor& matrix = record.layers[a.layer][a.head];
    const std::size_t n = matrix.shape()[0];

    // Format both artifacts in memory first so failures leave no partial output.
    std::string csv_text;
    char cell[40];
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t col = 0; col < n; ++col) {
            std::snprintf(cell, sizeof(cell), "%.17g", matrix.values()[r * n + col]);
            if (col) csv_text += ',';
            csv_text += cell;
        }
        csv_text += '\n';
    }
    FeatureSeries series(n, n);
    series.values.assign(matrix.values().begin(), matrix.values().end());
    const ImageRgb heatmap = render_heatmap(series, 224);

    fs::create_directories(a.out);
    const fs::path csv_path = fs::path(a.out) / "attention.csv";
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw IoError("cannot write " + csv_path.string());
    csv << csv_text;
    csv.close();
    save_png((fs::path(a.out) / "attention.png").string(), heatmap);
    std::cerr << "attention matrix " << n << "x" << n << " written to " << a.out << "\n";
    return 0;
}

struct FlopsArgs {
    std::string model_config;
    std::vector<std::size_t> seq_lens{16, 32, 64, 128};
};

double fitted_exponent(const std::vector<std::size_t>& ns, const std::vector<double>& macs) {
    // Least-squares slope of ln(macs) against ln(n).
    const auto count = static_cast<double>(ns.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < ns.size(); ++i) {
        const double x = std::log(static_cast<double>(ns[i]));
        const double y = std::log(macs[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (count * sxy - sx * sy) / (count * sxx - sx * sx);
}

int run_flops(const FlopsArgs& a) {
    if (a.seq_lens.size() < 2) throw ConfigError("flops: need at least 2 sequence lengths");
    ModelConfig model_cfg;
    if (!a.model_config.empty()) {
        model_cfg = config_from_file(a.model_config, model_config_from_json);
    }
    nlohmann::json resolved{{"model", to_json(model_cfg)}, {"seq_lens", a.seq_lens}};
    log_resolved("flops", resolved);

    const EncoderConfig& enc = model_cfg.encoder;
    Rng rng(0);
    EncoderParams params = EncoderParams::init(enc, rng);

    const std::vector<std::string> labels{"attention_scores", "attention_mix", "attention_proj",
                                          "mlp"};
    std::printf("n,attention_scores,attention_mix,attention_proj,mlp,total\n");
    std::vector<double> attention_macs, mlp_macs;
    for (const std::size_t n : a.seq_lens) {
        TokenSequence seq;
        seq.tokens = Tensor::randn({n, enc.d}, rng);
        FlopCounter counter;
        {
            FlopCounter::Scope scope(counter);
            ForwardCtx ctx;
            encode(seq, enc, params, ctx);
        }
        std::printf("%zu", n);
        for (const auto& label : labels) std::printf(",%llu",
            static_cast<unsigned long long>(counter.by_class(label)));
        std::printf(",%llu\n", static_cast<unsigned long long>(counter.total()));
        attention_macs.push_back(static_cast<double>(counter.by_class("attention_scores") +
                                                     counter.by_class("attention_mix")));
        mlp_macs.push_back(static_cast<double>(counter.by_class("mlp")));
    }
    std::printf("fitted exponent attention %.3f\n", fitted_exponent(a.seq_lens, attention_macs));
    std::printf("fitted exponent mlp %.3f\n", fitted_exponent(a.seq_lens, mlp_macs));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Audio-video action recognition pipeline: audio-image extraction, "
                 "two transformer streams, attention fusion"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "file whose keys mirror the long flags; flags win");

    std::uint64_t seed = 42;
    auto* seed_opt = app.add_option("--seed", seed, "seed for synthesis and training");

    ExtractArgs extract_args;
    auto* extract = app.add_subcommand("extract", "render audio-image representations");
    extract->add_option("--audio", extract_args.audio, "single WAV input");
    extract->add_option("--manifest", extract_args.manifest, "JSONL manifest of samples");
    extract->add_option("--out", extract_args.out, "output directory")->required();
    extract->add_option("--kinds", extract_args.kinds,
                        "representations to render (default: all six)")
        ->delimiter(',');
    extract->add_option("--resolution", extract_args.cfg.resolution, "square image size");
    extract->add_option("--window", extract_args.cfg.window, "analysis window (power of 2)");
    extract->add_option("--hop", extract_args.cfg.hop, "hop between frames");
    extract->add_option("--n-mfcc", extract_args.cfg.n_mfcc, "cepstral coefficients");
    extract->add_option("--n-mels", extract_args.cfg.n_mels, "mel bands");
    extract->add_option("--rolloff-fraction", extract_args.cfg.rolloff_fraction,
                        "rolloff energy fraction");

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "generate the synthetic desk-scale dataset");
    synth->add_option("--out", synth_args.out, "dataset directory")->required();
    synth->add_option("--classes", synth_args.classes, "number of classes");
    synth->add_option("--per-class", synth_args.per_class, "samples per class");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train on a manifest");
    train_cmd->add_option("--manifest", train_args.manifest, "training manifest")->required();
    train_cmd->add_option("--eval-manifest", train_args.eval_manifest,
                          "held-out manifest (default: the training one)");
    train_cmd->add_option("--model-config", train_args.model_config, "model config JSON");
    train_cmd->add_option("--train-config", train_args.train_config, "training recipe JSON");
    train_cmd->add_option("--extract-config", train_args.extract_config,
                          "audio extraction config JSON");
    train_cmd->add_option("--out", train_args.out, "output directory")->required();
    train_cmd->add_option("--resume", train_args.resume, "checkpoint to continue from");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--manifest", eval_args.manifest, "evaluation manifest")->required();
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "trained checkpoint")->required();
    eval_cmd->add_option("--out", eval_args.out, "directory for confusion.csv");
    eval_cmd->add_flag("!--final,--best", eval_args.use_best,
                       "evaluate the best snapshot (default) or the final weights");

    AttentionArgs attention_args;
    auto* attention = app.add_subcommand("attention", "export one attention matrix");
    attention->add_option("--checkpoint", attention_args.checkpoint, "trained checkpoint")
        ->required();
    attention->add_option("--input", attention_args.input, "WAV input")->required();
    attention->add_option("--layer", attention_args.layer, "encoder layer index");
    attention->add_option("--head", attention_args.head, "attention head index");
    attention->add_option("--out", attention_args.out, "directory for attention.csv/.png");

    FlopsArgs flops_args;
    auto* flops = app.add_subcommand("flops", "measure MAC growth per component");
    flops->add_option("--model-config", flops_args.model_config, "model config JSON");
    flops->add_option("--seq-lens", flops_args.seq_lens, "token counts to measure")
        ->delimiter(',');

    int rc = 0;
    extract->callback([&] { rc = run_extract(extract_args); });
    synth->callback([&] {
        synth_args.seed = seed;
        rc = run_synth(synth_args);
    });
    train_cmd->callback([&] {
        train_args.seed_passed = seed_opt->count() > 0;
        train_args.seed = seed;
        rc = run_train(train_args);
    });
    eval_cmd->callback([&] { rc = run_eval(eval_args); });
    attention->callback([&] { rc = run_attention(attention_args); });
    flops->callback([&] { rc = run_flops(flops_args); });

    try {
        app.parse(argc, argv);
        return rc;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 3;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 3;
    }
}
