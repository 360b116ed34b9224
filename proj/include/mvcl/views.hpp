#pragma once

#include <cstddef>
#include <vector>

#include "mvcl/rng.hpp"
#include "mvcl/types.hpp"

namespace mvcl {

/// Stochastic image-augmentation policy: random resized crop, horizontal
/// flip, brightness/contrast jitter, gaussian blur, grayscale.
struct AugmentConfig {
    double crop_scale_lo = 0.6;   // min area fraction kept by the crop
    double crop_scale_hi = 1.0;   // max area fraction
    double flip_prob = 0.5;
    double jitter_strength = 0.2; // factors drawn from [1-j, 1+j]
    double blur_prob = 0.2;
    double blur_sigma = 1.0;
    double grayscale_prob = 0.1;

    /// Policy under which augment_image is exactly the identity.
    static AugmentConfig identity() {
        return AugmentConfig{1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
    }
};

/// Throws ParamError when a field is out of range.
void validate(const AugmentConfig& cfg);

/// Which textual view a bundle carries.
enum class TextSource { caption, tag };

/// The views of one sample consumed by a training step: two augmented
/// renditions of the image and one token sequence (the two textual views
/// are realized later as independent dropout passes over these tokens).
struct ViewBundle {
    Raster i_v1;
    Raster i_v2;
    TextSource source = TextSource::caption;
    TokenSeq tokens;
};

/// Full view-construction policy for a training run.
struct ViewConfig {
    AugmentConfig augment;
    double p_tag = 0.5;              // probability the batch uses tag views
    bool tag_draw_per_sample = false;
    TokenSeq tag_prompt;             // e.g. tokenized "the picture contains"
    TokenSeq tag_separator;          // e.g. tokenized "and"; may be empty
    std::size_t max_text_len = 12;
};

/// Apply the augmentation stack in a fixed order: random resized crop
/// (area fraction in [crop_scale_lo, crop_scale_hi], aspect preserved,
/// bilinear resize back), horizontal flip, multiplicative brightness and
/// contrast jitter, gaussian blur, grayscale; output clamped to [0, 1].
Raster augment_image(const Raster& img, const AugmentConfig& cfg, Rng& rng);

/// Two independent augmentation draws over the same source image.
std::pair<Raster, Raster> make_visual_views(const Raster& img,
                                            const AugmentConfig& cfg, Rng& rng);

/// prompt ++ separator-joined phrases, truncated to max_len. Phrase order
/// is preserved and nothing is dropped except by tail truncation. An empty
/// tag list yields the prompt alone.
TokenSeq build_tag_sequence(const std::vector<TokenSeq>& tags,
                            const TokenSeq& prompt, std::size_t max_len,
                            const TokenSeq& separator = {});

/// Pick the textual source: tag with probability p_tag when tags exist,
/// caption otherwise. Always consumes one draw so streams stay aligned.
TextSource sample_textual_source(bool has_tags, double p_tag, Rng& rng);

/// One ViewBundle per sample. The caption-vs-tag draw is made once per
/// batch (samples without tags fall back to caption individually) unless
/// cfg.tag_draw_per_sample is set.
std::vector<ViewBundle> build_batch_views(const std::vector<Sample>& batch,
                                          const ViewConfig& cfg, Rng& rng);
std::vector<ViewBundle> build_batch_views(const std::vector<const Sample*>& batch,
                                          const ViewConfig& cfg, Rng& rng);

}  // namespace mvcl
