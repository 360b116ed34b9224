#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mvcl/errors.hpp"

namespace mvcl {

/// Dense H x W x C raster, row-major, channel-minor, values in [0, 1].
struct Raster {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<double> pix;

    Raster() = default;
    Raster(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
        : height(h), width(w), channels(c), pix(h * w * c, fill) {}

    bool empty() const { return pix.empty(); }

    double& at(std::size_t r, std::size_t c, std::size_t ch) {
        return pix[(r * width + c) * channels + ch];
    }
    double at(std::size_t r, std::size_t c, std::size_t ch) const {
        return pix[(r * width + c) * channels + ch];
    }

    bool operator==(const Raster& o) const {
        return height == o.height && width == o.width && channels == o.channels &&
               pix == o.pix;
    }
};

/// Token id sequence (caption, tag phrase, or assembled tag view).
using TokenSeq = std::vector<int>;

/// One paired item: an image, its caption, and detector-style
/// attribute-object tag phrases (possibly none).
struct Sample {
    Raster image;
    TokenSeq caption;
    std::vector<TokenSeq> tags;
    int group = -1;       // latent equivalence class, -1 when unknown
    std::string id;       // stable identifier for stores / corpus files
};

}  // namespace mvcl
