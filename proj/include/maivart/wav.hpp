#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "maivart/common.hpp"

namespace maivart {

// Time-domain audio. Samples are normalized to [-1, 1]; stereo sources are
// downmixed by channel average at load time.
struct Waveform {
    std::vector<real> samples;
    int sample_rate;

    Waveform(std::vector<real> s, int rate) : samples(std::move(s)), sample_rate(rate) {
        if (samples.empty()) throw ContractError("Waveform: empty sample buffer");
        if (sample_rate <= 0) throw ContractError("Waveform: sample rate must be positive");
        for (real v : samples) {
            if (!(v >= real(-1) && v <= real(1))) {
                throw ContractError("Waveform: sample outside [-1, 1]");
            }
        }
    }

    std::size_t length() const { return samples.size(); }
    double duration_seconds() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16le(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void write_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

inline void write_u16le(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace detail

// Reads a RIFF/WAVE file holding 16-bit PCM or 32-bit IEEE float samples,
// mono or stereo. Anything else (compressed codecs, other bit depths) is
// rejected with an unsupported-codec error.
inline Waveform load_wav(const std::string& path) {
    const std::vector<unsigned char> bytes = detail::read_file_bytes(path);
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw IoError("not a RIFF/WAVE file: " + path);
    }

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t sample_rate = 0;
    const unsigned char* data_ptr = nullptr;
    std::uint32_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* chunk_id = reinterpret_cast<const char*>(bytes.data() + pos);
        const std::uint32_t chunk_len = detail::read_u32le(bytes.data() + pos + 4);
        const std::size_t body = pos + 8;
        if (body + chunk_len > bytes.size()) throw IoError("truncated WAV chunk in " + path);
        if (std::memcmp(chunk_id, "fmt ", 4) == 0) {
            if (chunk_len < 16) throw IoError("malformed fmt chunk in " + path);
            format = detail::read_u16le(bytes.data() + body);
            channels = detail::read_u16le(bytes.data() + body + 2);
            sample_rate = detail::read_u32le(bytes.data() + body + 4);
            bits = detail::read_u16le(bytes.data() + body + 14);
            if (format == 0xFFFE && chunk_len >= 40) {
                // WAVE_FORMAT_EXTENSIBLE: first two bytes of the SubFormat
                // GUID carry the real format tag.
                format = detail::read_u16le(bytes.data() + body + 24);
            }
        } else if (std::memcmp(chunk_id, "data", 4) == 0) {
            data_ptr = bytes.data() + body;
            data_len = chunk_len;
        }
        pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
    }

    if (format == 0 || data_ptr == nullptr) throw IoError("missing fmt/data chunk in " + path);
    if (channels == 0 || channels > 2) {
        throw InputError("unsupported channel count " + std::to_string(channels) + " in " + path);
    }
    const bool pcm16 = format == 1 && bits == 16;
    const bool float32 = format == 3 && bits == 32;
    if (!pcm16 && !float32) {
        throw InputError("unsupported codec in " + path + " (format tag " + std::to_string(format) +
                         ", " + std::to_string(bits) + "-bit); only 16-bit PCM and 32-bit float WAV are readable");
    }

    const std::size_t bytes_per_sample = bits / 8;
    const std::size_t frame_size = bytes_per_sample * channels;
    const std::size_t frames = data_len / frame_size;
    if (frames == 0) throw InputError("empty audio data in " + path);

    std::vector<real> samples(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0;
        for (std::uint16_t ch = 0; ch < channels; ++ch) {
            const unsigned char* p = data_ptr + f * frame_size + ch * bytes_per_sample;
            if (pcm16) {
                std::int16_t v;
                std::memcpy(&v, p, 2);
                acc += static_cast<double>(v) / 32768.0;
            } else {
                float v;
                std::memcpy(&v, p, 4);
                acc += static_cast<double>(v);
            }
        }
        acc /= channels;
        samples[f] = static_cast<real>(std::clamp(acc, -1.0, 1.0));
    }
    return Waveform(std::move(samples), static_cast<int>(sample_rate));
}

// Writes mono 16-bit PCM.
inline void save_wav_pcm16(const std::string& path, const Waveform& w) {
    std::vector<unsigned char> out;
    const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
    out.reserve(44 + data_len);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    detail::write_u32le(out, 36 + data_len);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    detail::write_u32le(out, 16);
    detail::write_u16le(out, 1);   // PCM
    detail::write_u16le(out, 1);   // mono
    detail::write_u32le(out, static_cast<std::uint32_t>(w.sample_rate));
    detail::write_u32le(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
    detail::write_u16le(out, 2);   // block align
    detail::write_u16le(out, 16);  // bits
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    detail::write_u32le(out, data_len);
    for (real s : w.samples) {
        const double clamped = std::clamp(static_cast<double>(s), -1.0, 1.0);
        const long scaled = std::lround(clamped * 32768.0);
        const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768L, 32767L));
        detail::write_u16le(out, static_cast<std::uint16_t>(v));
    }
    detail::write_file_bytes(path, out);
}

}  // namespace maivart
