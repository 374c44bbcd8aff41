#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "maivart/common.hpp"
#include "maivart/tensor.hpp"

namespace maivart {

// Non-overlapping patches of one image: N x (h*w*c), elements row-major
// within a patch as (row, col, channel), patches row-major over the grid.
struct PatchGrid {
    Tensor patches;
    std::size_t grid_rows = 0;
    std::size_t grid_cols = 0;
    std::size_t patch_h = 0;
    std::size_t patch_w = 0;
    std::size_t channels = 0;

    std::size_t count() const { return grid_rows * grid_cols; }
};

// The encoder input z: CLS token followed by N projected tokens, with the
// positional embedding added across all N + 1 rows.
struct TokenSequence {
    Tensor tokens;  // (N + 1) x d
    bool includes_cls = true;
    bool positional = false;
};

// Non-overlapping spatiotemporal blocks of a video: rows ordered time-major
// then row-major spatially; elements within a row ordered (frame, row, col,
// channel).
struct TubeletGrid {
    Tensor tubelets;  // (n_t*n_h*n_w) x (t*h*w*c)
    std::size_t n_t = 0, n_h = 0, n_w = 0;
    std::size_t t = 0, h = 0, w = 0;
    std::size_t channels = 0;

    std::size_t count() const { return n_t * n_h * n_w; }
};

inline PatchGrid patchify(const Tensor& image, std::size_t patch_h, std::size_t patch_w) {
    if (image.shape().size() != 3) {
        throw DimensionError("patchify: expected an HxWxC tensor, got " +
                             shape_to_string(image.shape()));
    }
    const std::size_t H = image.shape()[0], W = image.shape()[1], C = image.shape()[2];
    if (patch_h == 0 || patch_w == 0 || H % patch_h != 0 || W % patch_w != 0) {
        throw ConfigError("patchify: image " + std::to_string(H) + "x" + std::to_string(W) +
                          " is not divisible by patch " + std::to_string(patch_h) + "x" +
                          std::to_string(patch_w));
    }
    PatchGrid out;
    out.grid_rows = H / patch_h;
    out.grid_cols = W / patch_w;
    out.patch_h = patch_h;
    out.patch_w = patch_w;
    out.channels = C;
    out.patches = Tensor::zeros({out.count(), patch_h * patch_w * C});

    const auto& src = image.values();
    auto& dst = out.patches.values();
    std::size_t row = 0;
    for (std::size_t gr = 0; gr < out.grid_rows; ++gr) {
        for (std::size_t gc = 0; gc < out.grid_cols; ++gc, ++row) {
            std::size_t e = 0;
            for (std::size_t r = 0; r < patch_h; ++r) {
                for (std::size_t c = 0; c < patch_w; ++c) {
                    const std::size_t base = ((gr * patch_h + r) * W + gc * patch_w + c) * C;
                    for (std::size_t ch = 0; ch < C; ++ch) {
                        dst[row * (patch_h * patch_w * C) + e++] = src[base + ch];
                    }
                }
            }
        }
    }
    return out;
}

inline Tensor unpatchify(const PatchGrid& g) {
    const std::size_t H = g.grid_rows * g.patch_h, W = g.grid_cols * g.patch_w, C = g.channels;
    Tensor image = Tensor::zeros({H, W, C});
    const auto& src = g.patches.values();
    auto& dst = image.values();
    std::size_t row = 0;
    for (std::size_t gr = 0; gr < g.grid_rows; ++gr) {
        for (std::size_t gc = 0; gc < g.grid_cols; ++gc, ++row) {
            std::size_t e = 0;
            for (std::size_t r = 0; r < g.patch_h; ++r) {
                for (std::size_t c = 0; c < g.patch_w; ++c) {
                    const std::size_t base = ((gr * g.patch_h + r) * W + gc * g.patch_w + c) * C;
                    for (std::size_t ch = 0; ch < C; ++ch) {
                        dst[base + ch] = src[row * (g.patch_h * g.patch_w * C) + e++];
                    }
                }
            }
        }
    }
    return image;
}

// tokens = concat(cls, patches * E) + pos. E projects flattened patches to
// width d; cls is 1 x d; pos covers all N + 1 rows.
inline TokenSequence embed(const PatchGrid& g, const Tensor& E, const Tensor& cls,
                           const Tensor& pos) {
    const std::size_t N = g.count();
    const std::size_t flat = g.patches.shape()[1];
    if (E.shape().size() != 2 || E.shape()[0] != flat) {
        throw DimensionError("embed: projection expects " + std::to_string(flat) +
                             " rows, got " + shape_to_string(E.shape()));
    }
    const std::size_t d = E.shape()[1];
    if (cls.shape() != std::vector<std::size_t>{1, d}) {
        throw DimensionError("embed: cls must be [1x" + std::to_string(d) + "], got " +
                             shape_to_string(cls.shape()));
    }
    if (pos.shape() != std::vector<std::size_t>{N + 1, d}) {
        throw DimensionError("embed: pos must be [" + std::to_string(N + 1) + "x" +
                             std::to_string(d) + "], got " + shape_to_string(pos.shape()));
    }
    TokenSequence seq;
    seq.tokens = add(concat_rows({cls, matmul(g.patches, E)}), pos);
    seq.includes_cls = true;
    seq.positional = true;
    return seq;
}

inline TubeletGrid tubelet_split(const Tensor& video, std::size_t t, std::size_t h,
                                 std::size_t w) {
    if (video.shape().size() != 4) {
        throw DimensionError("tubelet_split: expected a TxHxWxC tensor, got " +
                             shape_to_string(video.shape()));
    }
    const std::size_t T = video.shape()[0], H = video.shape()[1], W = video.shape()[2],
                      C = video.shape()[3];
    if (t == 0 || h == 0 || w == 0 || T % t != 0 || H % h != 0 || W % w != 0) {
        throw ConfigError("tubelet_split: video " + std::to_string(T) + "x" + std::to_string(H) +
                          "x" + std::to_string(W) + " is not divisible by tubelet " +
                          std::to_string(t) + "x" + std::to_string(h) + "x" + std::to_string(w));
    }
    TubeletGrid out;
    out.n_t = T / t;
    out.n_h = H / h;
    out.n_w = W / w;
    out.t = t;
    out.h = h;
    out.w = w;
    out.channels = C;
    const std::size_t flat = t * h * w * C;
    out.tubelets = Tensor::zeros({out.count(), flat});

    const auto& src = video.values();
    auto& dst = out.tubelets.values();
    std::size_t row = 0;
    for (std::size_t bt = 0; bt < out.n_t; ++bt) {
        for (std::size_t br = 0; br < out.n_h; ++br) {
            for (std::size_t bc = 0; bc < out.n_w; ++bc, ++row) {
                std::size_t e = 0;
                for (std::size_t df = 0; df < t; ++df) {
                    for (std::size_t dr = 0; dr < h; ++dr) {
                        for (std::size_t dc = 0; dc < w; ++dc) {
                            const std::size_t base =
                                (((bt * t + df) * H + br * h + dr) * W + bc * w + dc) * C;
                            for (std::size_t ch = 0; ch < C; ++ch) {
                                dst[row * flat + e++] = src[base + ch];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

inline TokenSequence tubelet_tokenize(const Tensor& video, std::size_t t, std::size_t h,
                                      std::size_t w, const Tensor& E_v, const Tensor& cls,
                                      const Tensor& pos) {
    const TubeletGrid g = tubelet_split(video, t, h, w);
    const std::size_t N = g.count();
    const std::size_t flat = g.tubelets.shape()[1];
    if (E_v.shape().size() != 2 || E_v.shape()[0] != flat) {
        throw DimensionError("tubelet_tokenize: projection expects " + std::to_string(flat) +
                             " rows, got " + shape_to_string(E_v.shape()));
    }
    const std::size_t d = E_v.shape()[1];
    if (cls.shape() != std::vector<std::size_t>{1, d}) {
        throw DimensionError("tubelet_tokenize: cls must be [1x" + std::to_string(d) + "], got " +
                             shape_to_string(cls.shape()));
    }
    if (pos.shape() != std::vector<std::size_t>{N + 1, d}) {
        throw DimensionError("tubelet_tokenize: pos must be [" + std::to_string(N + 1) + "x" +
                             std::to_string(d) + "], got " + shape_to_string(pos.shape()));
    }
    TokenSequence seq;
    seq.tokens = add(concat_rows({cls, matmul(g.tubelets, E_v)}), pos);
    seq.includes_cls = true;
    seq.positional = true;
    return seq;
}

}  // namespace maivart
