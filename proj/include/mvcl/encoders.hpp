#pragma once

#include <cstdint>
#include <vector>

#include "mvcl/params.hpp"
#include "mvcl/rng.hpp"
#include "mvcl/tensor.hpp"
#include "mvcl/types.hpp"

namespace mvcl {

/// A point on the shared unit sphere.
using Embedding = std::vector<double>;

struct ImageEncoderConfig {
    std::size_t image_size = 16;  // square inputs, H == W
    std::size_t channels = 3;
    std::size_t patch_size = 4;
    std::size_t hidden_dim = 64;
    std::size_t num_layers = 2;
    std::size_t embed_dim = 32;
    bool mlp_projection = false;  // default: linear map into the shared space
};

struct TextEncoderConfig {
    std::size_t vocab_size = 16;
    std::size_t max_len = 12;
    std::size_t hidden_dim = 64;
    std::size_t num_layers = 2;
    std::size_t embed_dim = 32;
    double dropout_p = 0.1;
    bool mlp_projection = false;
};

void validate(const ImageEncoderConfig& cfg);
void validate(const TextEncoderConfig& cfg);

/// Patch embedding + mixer blocks (token mixing across patches, channel
/// mixing per patch) + mean pool + projection, unit-normalized. The encoder
/// has no stochastic layers: outputs are a pure function of (params, input).
class ImageEncoder {
public:
    ImageEncoder(const ImageEncoderConfig& cfg, Rng init_rng);

    const ImageEncoderConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    std::size_t n_patches() const { return n_patches_; }

    /// Encode a batch: [B, embed_dim], rows unit-norm. Part of the autodiff
    /// graph when gradients are enabled.
    Tensor forward(const std::vector<const Raster*>& batch) const;

    /// Single-image convenience wrapper (no graph recording).
    Embedding encode(const Raster& img) const;

private:
    ImageEncoderConfig cfg_;
    ParamStore params_;
    std::size_t n_patches_ = 0;
};

/// Token + positional embeddings, pre-norm self-attention blocks with
/// dropout, masked mean pool over real (non-padding) positions, projection,
/// unit-normalized. In train mode the dropout draws come from the supplied
/// rng, so encoding the same tokens twice with independent streams realizes
/// two distinct textual views.
class TextEncoder {
public:
    TextEncoder(const TextEncoderConfig& cfg, Rng init_rng);

    const TextEncoderConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// Encode a batch of sequences: [B, embed_dim], rows unit-norm.
    /// Sequences are padded to the batch maximum; padding positions are
    /// masked out of attention and pooling.
    Tensor forward(const std::vector<const TokenSeq*>& batch, bool train_mode,
                   Rng& rng) const;

    /// Single-sequence convenience wrapper (inference mode, no graph).
    Embedding encode(const TokenSeq& toks) const;

private:
    TextEncoderConfig cfg_;
    ParamStore params_;
};

}  // namespace mvcl
