#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "maivart/common.hpp"
#include "maivart/wav.hpp"

namespace maivart {

// The six image representations an audio clip can be rendered into.
enum class ReprKind { waveplot, centroid, rolloff, mfcc, mfcc_scaled, chroma };

inline constexpr ReprKind kAllReprKinds[] = {ReprKind::waveplot,  ReprKind::centroid,
                                             ReprKind::rolloff,   ReprKind::mfcc,
                                             ReprKind::mfcc_scaled, ReprKind::chroma};

inline std::string repr_name(ReprKind k) {
    switch (k) {
        case ReprKind::waveplot: return "waveplot";
        case ReprKind::centroid: return "centroid";
        case ReprKind::rolloff: return "rolloff";
        case ReprKind::mfcc: return "mfcc";
        case ReprKind::mfcc_scaled: return "mfcc_scaled";
        case ReprKind::chroma: return "chroma";
    }
    throw ContractError("repr_name: invalid kind");
}

inline ReprKind repr_from_name(const std::string& name) {
    for (ReprKind k : kAllReprKinds) {
        if (repr_name(k) == name) return k;
    }
    throw ConfigError("unknown representation \"" + name +
                      "\"; expected one of waveplot, centroid, rolloff, mfcc, mfcc_scaled, chroma");
}

// In-place iterative radix-2 Cooley-Tukey FFT (forward, unnormalized).
// Length must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) {
        throw ContractError("fft_radix2: length " + std::to_string(n) + " is not a power of two");
    }
    // Bit-reversal permutation.
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// Magnitude spectrogram: frames x bins, row-major, bins = window/2 + 1.
struct Spectrogram {
    std::vector<real> mags;
    std::size_t frames = 0;
    std::size_t bins = 0;
    int sample_rate = 0;
    int window = 0;
    int hop = 0;

    real at(std::size_t f, std::size_t b) const { return mags[f * bins + b]; }
    real& at(std::size_t f, std::size_t b) { return mags[f * bins + b]; }
    // Center frequency of a bin in Hz.
    double bin_frequency(std::size_t b) const {
        return static_cast<double>(b) * sample_rate / window;
    }
};

// A per-frame feature matrix: frames x channels, row-major.
struct FeatureSeries {
    std::vector<real> values;
    std::size_t frames = 0;
    std::size_t channels = 0;

    FeatureSeries() = default;
    FeatureSeries(std::size_t f, std::size_t c)
        : values(f * c, real(0)), frames(f), channels(c) {}

    real at(std::size_t f, std::size_t c) const { return values[f * channels + c]; }
    real& at(std::size_t f, std::size_t c) { return values[f * channels + c]; }
};

// Short-time Fourier transform with a periodic Hann window.
// frames = 1 + floor((len - window) / hop); the clip must cover at least one
// full window.
inline Spectrogram stft(const Waveform& w, int window = 2048, int hop = 512) {
    if (window <= 0 || (window & (window - 1)) != 0) {
        throw ConfigError("stft: window size must be a positive power of two, got " +
                          std::to_string(window));
    }
    if (hop <= 0) throw ConfigError("stft: hop must be positive");
    const std::size_t len = w.samples.size();
    if (len < static_cast<std::size_t>(window)) {
        throw InputError("audio too short for analysis: " + std::to_string(len) +
                         " samples < window " + std::to_string(window));
    }

    std::vector<double> hann(static_cast<std::size_t>(window));
    for (int n = 0; n < window; ++n) {
        hann[static_cast<std::size_t>(n)] =
            0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * n / window));
    }

    Spectrogram out;
    out.frames = 1 + (len - static_cast<std::size_t>(window)) / static_cast<std::size_t>(hop);
    out.bins = static_cast<std::size_t>(window) / 2 + 1;
    out.sample_rate = w.sample_rate;
    out.window = window;
    out.hop = hop;
    out.mags.assign(out.frames * out.bins, real(0));

    std::vector<std::complex<double>> buf(static_cast<std::size_t>(window));
    for (std::size_t f = 0; f < out.frames; ++f) {
        const std::size_t start = f * static_cast<std::size_t>(hop);
        for (std::size_t n = 0; n < static_cast<std::size_t>(window); ++n) {
            buf[n] = std::complex<double>(static_cast<double>(w.samples[start + n]) * hann[n], 0.0);
        }
        fft_radix2(buf);
        for (std::size_t b = 0; b < out.bins; ++b) {
            out.at(f, b) = static_cast<real>(std::abs(buf[b]));
        }
    }
    return out;
}

// Per-frame magnitude-weighted mean frequency in Hz. Silent frames map to 0.
inline FeatureSeries spectral_centroid(const Spectrogram& s) {
    FeatureSeries out(s.frames, 1);
    for (std::size_t f = 0; f < s.frames; ++f) {
        double num = 0, den = 0;
        for (std::size_t b = 0; b < s.bins; ++b) {
            num += s.bin_frequency(b) * s.at(f, b);
            den += s.at(f, b);
        }
        out.at(f, 0) = den > 0 ? static_cast<real>(num / den) : real(0);
    }
    return out;
}

// Per-frame frequency below which `fraction` of the total spectral magnitude
// lies: the lowest bin whose cumulative magnitude reaches the threshold.
// Silent frames map to 0.
inline FeatureSeries spectral_rolloff(const Spectrogram& s, double fraction = 0.85) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw ConfigError("spectral_rolloff: fraction must be in (0, 1)");
    }
    FeatureSeries out(s.frames, 1);
    for (std::size_t f = 0; f < s.frames; ++f) {
        double total = 0;
        for (std::size_t b = 0; b < s.bins; ++b) total += s.at(f, b);
        if (total <= 0) {
            out.at(f, 0) = real(0);
            continue;
        }
        const double threshold = fraction * total;
        double cum = 0;
        for (std::size_t b = 0; b < s.bins; ++b) {
            cum += s.at(f, b);
            if (cum >= threshold) {
                out.at(f, 0) = static_cast<real>(s.bin_frequency(b));
                break;
            }
        }
    }
    return out;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filterbank over spectrogram bins: n_mels rows x bins columns.
// Filter centers are spaced evenly on the mel scale from 0 Hz to Nyquist.
inline std::vector<std::vector<double>> mel_filterbank(std::size_t n_mels, std::size_t bins,
                                                       int sample_rate, int window) {
    if (n_mels == 0) throw ConfigError("mel_filterbank: n_mels must be positive");
    const double mel_lo = hz_to_mel(0.0);
    const double mel_hi = hz_to_mel(sample_rate / 2.0);
    std::vector<double> centers(n_mels + 2);
    for (std::size_t i = 0; i < centers.size(); ++i) {
        centers[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                            static_cast<double>(n_mels + 1));
    }
    std::vector<std::vector<double>> fb(n_mels, std::vector<double>(bins, 0.0));
    for (std::size_t m = 0; m < n_mels; ++m) {
        const double lo = centers[m], mid = centers[m + 1], hi = centers[m + 2];
        for (std::size_t b = 0; b < bins; ++b) {
            const double f = static_cast<double>(b) * sample_rate / window;
            double w = 0.0;
            if (f > lo && f < mid) {
                w = (f - lo) / (mid - lo);
            } else if (f == mid) {
                w = 1.0;
            } else if (f > mid && f < hi) {
                w = (hi - f) / (hi - mid);
            }
            fb[m][b] = w;
        }
    }
    return fb;
}

// Orthonormal DCT-II of one row: y_k = s_k * sum_j x_j * cos(pi*(j+0.5)*k/N),
// with s_0 = sqrt(1/N) and s_k = sqrt(2/N) otherwise.
inline std::vector<double> dct2_orthonormal(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<double> y(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double acc = 0;
        for (std::size_t j = 0; j < n; ++j) {
            acc += x[j] * std::cos(std::numbers::pi * (static_cast<double>(j) + 0.5) *
                                   static_cast<double>(k) / static_cast<double>(n));
        }
        const double scale = k == 0 ? std::sqrt(1.0 / static_cast<double>(n))
                                    : std::sqrt(2.0 / static_cast<double>(n));
        y[k] = scale * acc;
    }
    return y;
}

inline constexpr double kLogFloor = 1e-10;

// MFCCs: mel filterbank over magnitudes, log with a small floor, orthonormal
// DCT-II, first n_mfcc coefficients kept. frames x n_mfcc.
inline FeatureSeries mfcc(const Spectrogram& s, std::size_t n_mfcc = 20, std::size_t n_mels = 20) {
    if (n_mfcc == 0 || n_mfcc > n_mels) {
        throw ConfigError("mfcc: need 0 < n_mfcc <= n_mels");
    }
    const auto fb = mel_filterbank(n_mels, s.bins, s.sample_rate, s.window);
    FeatureSeries out(s.frames, n_mfcc);
    std::vector<double> mel_log(n_mels);
    for (std::size_t f = 0; f < s.frames; ++f) {
        for (std::size_t m = 0; m < n_mels; ++m) {
            double e = 0;
            for (std::size_t b = 0; b < s.bins; ++b) e += fb[m][b] * s.at(f, b);
            mel_log[m] = std::log(std::max(e, kLogFloor));
        }
        const std::vector<double> coeffs = dct2_orthonormal(mel_log);
        for (std::size_t k = 0; k < n_mfcc; ++k) out.at(f, k) = static_cast<real>(coeffs[k]);
    }
    return out;
}

// MFCCs standardized per coefficient across frames: (x - mean) / max(std, 1e-8),
// with the population standard deviation.
inline FeatureSeries mfcc_feature_scaled(const Spectrogram& s, std::size_t n_mfcc = 20,
                                         std::size_t n_mels = 20) {
    FeatureSeries out = mfcc(s, n_mfcc, n_mels);
    for (std::size_t c = 0; c < out.channels; ++c) {
        double mean = 0;
        for (std::size_t f = 0; f < out.frames; ++f) mean += out.at(f, c);
        mean /= static_cast<double>(out.frames);
        double var = 0;
        for (std::size_t f = 0; f < out.frames; ++f) {
            const double d = out.at(f, c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(out.frames);
        const double sd = std::max(std::sqrt(var), 1e-8);
        for (std::size_t f = 0; f < out.frames; ++f) {
            out.at(f, c) = static_cast<real>((out.at(f, c) - mean) / sd);
        }
    }
    return out;
}

// Pitch-class index (0 = C, ..., 9 = A, 11 = B) of a frequency in Hz,
// referenced to A4 = 440 Hz.
inline int pitch_class(double hz) {
    const int steps = static_cast<int>(std::lround(12.0 * std::log2(hz / 440.0)));
    return ((9 + steps) % 12 + 12) % 12;
}

// 12-class chromagram: spectral energy (magnitude squared) folded onto pitch
// classes, skipping the DC bin, each frame scaled so its peak class is 1.
// frames x 12.
inline FeatureSeries chromagram(const Spectrogram& s) {
    FeatureSeries out(s.frames, 12);
    for (std::size_t f = 0; f < s.frames; ++f) {
        for (std::size_t b = 1; b < s.bins; ++b) {
            const double mag = s.at(f, b);
            const int pc = pitch_class(s.bin_frequency(b));
            out.at(f, static_cast<std::size_t>(pc)) += static_cast<real>(mag * mag);
        }
        real mx = 0;
        for (std::size_t c = 0; c < 12; ++c) mx = std::max(mx, out.at(f, c));
        if (mx > 0) {
            for (std::size_t c = 0; c < 12; ++c) out.at(f, c) /= mx;
        }
    }
    return out;
}

}  // namespace maivart
