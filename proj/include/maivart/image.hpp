#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "maivart/colormap.hpp"
#include "maivart/common.hpp"
#include "maivart/dsp.hpp"
#include "maivart/png.hpp"
#include "maivart/tensor.hpp"
#include "maivart/wav.hpp"

namespace maivart {

// A rendered audio representation, square, 8-bit RGB.
struct AudioImage {
    ImageRgb image;
    ReprKind kind;
    std::string source_id;
};

struct ExtractConfig {
    int resolution = 224;
    int window = 2048;
    int hop = 512;
    int n_mfcc = 20;
    int n_mels = 20;
    double rolloff_fraction = 0.85;

    void validate() const {
        if (resolution < 32) {
            throw ConfigError("resolution must be at least 32, got " + std::to_string(resolution));
        }
        if (window <= 0 || (window & (window - 1)) != 0) {
            throw ConfigError("window must be a positive power of two, got " +
                              std::to_string(window));
        }
        if (hop <= 0 || hop > window) throw ConfigError("need 0 < hop <= window");
        if (n_mfcc <= 0 || n_mfcc > n_mels) throw ConfigError("need 0 < n_mfcc <= n_mels");
        if (!(rolloff_fraction > 0.0 && rolloff_fraction < 1.0)) {
            throw ConfigError("rolloff_fraction must be in (0, 1)");
        }
    }
};

inline constexpr Rgb kWaveplotInk = {31, 119, 180};
inline constexpr Rgb kWaveplotBackground = {255, 255, 255};

// Filled symmetric min/max column plot on a white background. Time runs
// left to right across the full width; amplitude 0 is the vertical center.
// Each column fills between +peak and -peak of its sample span, where peak is
// the largest absolute sample, so a waveform and its negation render
// identically.
inline ImageRgb render_waveplot(const Waveform& w, int resolution) {
    if (resolution < 32) throw ConfigError("render_waveplot: resolution must be at least 32");
    const auto size = static_cast<std::size_t>(resolution);
    ImageRgb img(size, size, kWaveplotBackground);

    const std::size_t len = w.samples.size();
    const double center = (static_cast<double>(size) - 1.0) / 2.0;
    const double scale = center;
    for (std::size_t x = 0; x < size; ++x) {
        std::size_t start = x * len / size;
        std::size_t end = (x + 1) * len / size;
        if (start >= len) start = len - 1;
        if (end <= start) end = start + 1;
        double peak = 0;
        for (std::size_t i = start; i < end; ++i) {
            peak = std::max(peak, std::abs(static_cast<double>(w.samples[i])));
        }
        const auto top = static_cast<std::size_t>(std::lround(center - peak * scale));
        const auto bottom = static_cast<std::size_t>(std::lround(center + peak * scale));
        for (std::size_t y = top; y <= bottom && y < size; ++y) img.at(x, y) = kWaveplotInk;
    }
    return img;
}

// Feature matrix as a colormapped heatmap: frames left to right, channels
// bottom to top, both nearest-neighbor resampled. Values are min-max
// normalized over the whole series; a constant series maps to the colormap
// midpoint.
inline ImageRgb render_heatmap(const FeatureSeries& f, int resolution) {
    if (resolution < 1) throw ConfigError("render_heatmap: resolution must be positive");
    if (f.frames == 0 || f.channels == 0) throw ContractError("render_heatmap: empty series");
    const auto size = static_cast<std::size_t>(resolution);

    real lo = f.values[0], hi = f.values[0];
    for (real v : f.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const bool constant = hi <= lo;
    const double span = static_cast<double>(hi) - static_cast<double>(lo);

    ImageRgb img(size, size);
    for (std::size_t y = 0; y < size; ++y) {
        const std::size_t ch = (size - 1 - y) * f.channels / size;
        for (std::size_t x = 0; x < size; ++x) {
            const std::size_t fr = x * f.frames / size;
            const double t =
                constant ? 0.5 : (static_cast<double>(f.at(fr, ch)) - static_cast<double>(lo)) / span;
            img.at(x, y) = colormap(t);
        }
    }
    return img;
}

namespace detail {

template <typename Fn>
auto with_repr_context(ReprKind kind, Fn&& fn) {
    const std::string prefix = "while rendering " + repr_name(kind) + ": ";
    try {
        return fn();
    } catch (const IoError& e) {
        throw IoError(prefix + e.what());
    } catch (const InputError& e) {
        throw InputError(prefix + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(prefix + e.what());
    } catch (const DimensionError& e) {
        throw DimensionError(prefix + e.what());
    } catch (const ContractError& e) {
        throw ContractError(prefix + e.what());
    }
}

}  // namespace detail

// Renders one representation of the waveform.
inline ImageRgb render_repr(const Waveform& w, ReprKind kind, const ExtractConfig& cfg,
                            std::optional<Spectrogram>& spec_cache) {
    return detail::with_repr_context(kind, [&]() -> ImageRgb {
        if (kind == ReprKind::waveplot) return render_waveplot(w, cfg.resolution);
        if (!spec_cache) spec_cache = stft(w, cfg.window, cfg.hop);
        const Spectrogram& s = *spec_cache;
        switch (kind) {
            case ReprKind::centroid:
                return render_heatmap(spectral_centroid(s), cfg.resolution);
            case ReprKind::rolloff:
                return render_heatmap(spectral_rolloff(s, cfg.rolloff_fraction), cfg.resolution);
            case ReprKind::mfcc:
                return render_heatmap(mfcc(s, static_cast<std::size_t>(cfg.n_mfcc),
                                           static_cast<std::size_t>(cfg.n_mels)),
                                      cfg.resolution);
            case ReprKind::mfcc_scaled:
                return render_heatmap(mfcc_feature_scaled(s, static_cast<std::size_t>(cfg.n_mfcc),
                                                          static_cast<std::size_t>(cfg.n_mels)),
                                      cfg.resolution);
            case ReprKind::chroma:
                return render_heatmap(chromagram(s), cfg.resolution);
            default:
                throw ContractError("render_repr: invalid kind");
        }
    });
}

inline ImageRgb render_repr(const Waveform& w, ReprKind kind, const ExtractConfig& cfg) {
    std::optional<Spectrogram> cache;
    return render_repr(w, kind, cfg, cache);
}

// All six representations of one clip; errors carry the failing
// representation's name.
inline std::vector<AudioImage> extract_all(const Waveform& w, const ExtractConfig& cfg,
                                           const std::string& source_id) {
    cfg.validate();
    std::optional<Spectrogram> cache;
    std::vector<AudioImage> out;
    out.reserve(6);
    for (ReprKind kind : kAllReprKinds) {
        out.push_back({render_repr(w, kind, cfg, cache), kind, source_id});
    }
    return out;
}

inline std::string image_filename(const std::string& source_id, ReprKind kind) {
    return source_id + "." + repr_name(kind) + ".png";
}

// H x W x 3 tensor with channel values scaled to [0, 1].
inline Tensor image_to_tensor(const ImageRgb& img) {
    Tensor t = Tensor::zeros({img.height, img.width, 3});
    std::size_t i = 0;
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const Rgb p = img.at(x, y);
            t.values()[i++] = static_cast<real>(p.r) / real(255);
            t.values()[i++] = static_cast<real>(p.g) / real(255);
            t.values()[i++] = static_cast<real>(p.b) / real(255);
        }
    }
    return t;
}

}  // namespace maivart
