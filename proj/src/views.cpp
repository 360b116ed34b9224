#include "mvcl/views.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace mvcl {

void validate(const AugmentConfig& cfg) {
    if (!(cfg.crop_scale_lo > 0.0) || cfg.crop_scale_lo > cfg.crop_scale_hi ||
        cfg.crop_scale_hi > 1.0)
        throw ParamError("augment: crop_scale_range must satisfy 0 < lo <= hi <= 1");
    auto prob = [](double p, const char* name) {
        if (p < 0.0 || p > 1.0)
            throw ParamError(std::string("augment: ") + name + " must be in [0, 1]");
    };
    prob(cfg.flip_prob, "flip_prob");
    prob(cfg.blur_prob, "blur_prob");
    prob(cfg.grayscale_prob, "grayscale_prob");
    if (cfg.jitter_strength < 0.0 || cfg.jitter_strength > 1.0)
        throw ParamError("augment: jitter_strength must be in [0, 1]");
    if (!(cfg.blur_sigma > 0.0))
        throw ParamError("augment: blur_sigma must be positive");
}

namespace {

/// Bilinear resample src to (h, w); the half-pixel-center convention.
Raster resize_bilinear(const Raster& src, std::size_t h, std::size_t w) {
    Raster dst(h, w, src.channels);
    const double sy = static_cast<double>(src.height) / static_cast<double>(h);
    const double sx = static_cast<double>(src.width) / static_cast<double>(w);
    for (std::size_t r = 0; r < h; ++r) {
        double fy = (static_cast<double>(r) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t c = 0; c < w; ++c) {
            double fx = (static_cast<double>(c) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < src.channels; ++ch) {
                const double top = src.at(y0, x0, ch) * (1.0 - wx) + src.at(y0, x1, ch) * wx;
                const double bot = src.at(y1, x0, ch) * (1.0 - wx) + src.at(y1, x1, ch) * wx;
                dst.at(r, c, ch) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return dst;
}

/// Area-fraction crop with preserved aspect ratio, resized back to the
/// source dimensions. A full-frame crop is returned untouched so the
/// identity policy is an exact fixed point.
Raster random_resized_crop(const Raster& img, double lo, double hi, Rng& rng) {
    const double s = rng.uniform(lo, hi);
    const double side = std::sqrt(s);
    std::size_t ch = static_cast<std::size_t>(
        std::lround(side * static_cast<double>(img.height)));
    std::size_t cw = static_cast<std::size_t>(
        std::lround(side * static_cast<double>(img.width)));
    ch = std::clamp<std::size_t>(ch, 1, img.height);
    cw = std::clamp<std::size_t>(cw, 1, img.width);
    const std::size_t top = static_cast<std::size_t>(rng.bounded(img.height - ch + 1));
    const std::size_t left = static_cast<std::size_t>(rng.bounded(img.width - cw + 1));
    if (ch == img.height && cw == img.width) return img;

    Raster crop(ch, cw, img.channels);
    for (std::size_t r = 0; r < ch; ++r)
        for (std::size_t c = 0; c < cw; ++c)
            for (std::size_t k = 0; k < img.channels; ++k)
                crop.at(r, c, k) = img.at(top + r, left + c, k);
    return resize_bilinear(crop, img.height, img.width);
}

void flip_horizontal(Raster& img) {
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width / 2; ++c)
            for (std::size_t k = 0; k < img.channels; ++k)
                std::swap(img.at(r, c, k), img.at(r, img.width - 1 - c, k));
}

void gaussian_blur(Raster& img, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        kernel[static_cast<std::size_t>(i + radius)] = v;
        norm += v;
    }
    for (double& v : kernel) v /= norm;

    const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
    auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi); };
    Raster tmp = img;
    for (int r = 0; r < h; ++r)  // horizontal pass, clamp-to-edge
        for (int c = 0; c < w; ++c)
            for (std::size_t k = 0; k < img.channels; ++k) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<std::size_t>(i + radius)] *
                           img.at(static_cast<std::size_t>(r),
                                  static_cast<std::size_t>(clampi(c + i, w - 1)), k);
                tmp.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), k) = acc;
            }
    for (int r = 0; r < h; ++r)  // vertical pass
        for (int c = 0; c < w; ++c)
            for (std::size_t k = 0; k < img.channels; ++k) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[static_cast<std::size_t>(i + radius)] *
                           tmp.at(static_cast<std::size_t>(clampi(r + i, h - 1)),
                                  static_cast<std::size_t>(c), k);
                img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), k) = acc;
            }
}

}  // namespace

Raster augment_image(const Raster& img, const AugmentConfig& cfg, Rng& rng) {
    if (img.empty()) throw ParamError("augment_image: empty raster");
    validate(cfg);

    // The draw sequence below is fixed (every branch consumes its draws),
    // so a given seed produces the same augmentation regardless of outcome.
    Raster out = random_resized_crop(img, cfg.crop_scale_lo, cfg.crop_scale_hi, rng);

    if (rng.bernoulli(cfg.flip_prob)) flip_horizontal(out);

    const double brightness = rng.uniform(1.0 - cfg.jitter_strength, 1.0 + cfg.jitter_strength);
    const double contrast = rng.uniform(1.0 - cfg.jitter_strength, 1.0 + cfg.jitter_strength);
    for (double& v : out.pix) v *= brightness;  // exact when factor == 1
    if (contrast != 1.0) {
        double mean = 0.0;
        for (double v : out.pix) mean += v;
        mean /= static_cast<double>(out.pix.size());
        for (double& v : out.pix) v = (v - mean) * contrast + mean;
    }

    if (rng.bernoulli(cfg.blur_prob)) gaussian_blur(out, cfg.blur_sigma);

    if (rng.bernoulli(cfg.grayscale_prob)) {
        for (std::size_t r = 0; r < out.height; ++r)
            for (std::size_t c = 0; c < out.width; ++c) {
                double g = 0.0;
                for (std::size_t k = 0; k < out.channels; ++k) g += out.at(r, c, k);
                g /= static_cast<double>(out.channels);
                for (std::size_t k = 0; k < out.channels; ++k) out.at(r, c, k) = g;
            }
    }

    for (double& v : out.pix) v = std::clamp(v, 0.0, 1.0);
    return out;
}

std::pair<Raster, Raster> make_visual_views(const Raster& img,
                                            const AugmentConfig& cfg, Rng& rng) {
    Raster a = augment_image(img, cfg, rng);
    Raster b = augment_image(img, cfg, rng);
    return {std::move(a), std::move(b)};
}

TokenSeq build_tag_sequence(const std::vector<TokenSeq>& tags,
                            const TokenSeq& prompt, std::size_t max_len,
                            const TokenSeq& separator) {
    if (prompt.empty()) throw ParamError("build_tag_sequence: prompt must be nonempty");
    TokenSeq out = prompt;
    for (const TokenSeq& phrase : tags) {
        out.insert(out.end(), separator.begin(), separator.end());
        out.insert(out.end(), phrase.begin(), phrase.end());
    }
    if (out.size() > max_len) out.resize(max_len);
    return out;
}

TextSource sample_textual_source(bool has_tags, double p_tag, Rng& rng) {
    if (p_tag < 0.0 || p_tag > 1.0)
        throw ParamError("sample_textual_source: p_tag must be in [0, 1]");
    // Always consume the draw so caller streams stay aligned either way.
    const bool pick_tag = rng.bernoulli(p_tag);
    return (has_tags && pick_tag) ? TextSource::tag : TextSource::caption;
}

std::vector<ViewBundle> build_batch_views(const std::vector<Sample>& batch,
                                          const ViewConfig& cfg, Rng& rng) {
    std::vector<const Sample*> ptrs;
    ptrs.reserve(batch.size());
    for (const Sample& s : batch) ptrs.push_back(&s);
    return build_batch_views(ptrs, cfg, rng);
}

std::vector<ViewBundle> build_batch_views(const std::vector<const Sample*>& batch,
                                          const ViewConfig& cfg, Rng& rng) {
    if (batch.empty()) throw ParamError("build_batch_views: empty batch");
    validate(cfg.augment);

    TextSource batch_source = TextSource::caption;
    if (!cfg.tag_draw_per_sample)
        batch_source = sample_textual_source(true, cfg.p_tag, rng);

    std::vector<ViewBundle> bundles;
    bundles.reserve(batch.size());
    for (const Sample* sp : batch) {
        const Sample& s = *sp;
        ViewBundle b;
        auto views = make_visual_views(s.image, cfg.augment, rng);
        b.i_v1 = std::move(views.first);
        b.i_v2 = std::move(views.second);

        TextSource src = cfg.tag_draw_per_sample
                             ? sample_textual_source(!s.tags.empty(), cfg.p_tag, rng)
                             : batch_source;
        if (src == TextSource::tag && !s.tags.empty()) {
            b.source = TextSource::tag;
            b.tokens = build_tag_sequence(s.tags, cfg.tag_prompt, cfg.max_text_len,
                                          cfg.tag_separator);
        } else {
            b.source = TextSource::caption;
            b.tokens = s.caption;
            if (b.tokens.size() > cfg.max_text_len) b.tokens.resize(cfg.max_text_len);
        }
        bundles.push_back(std::move(b));
    }
    return bundles;
}

}  // namespace mvcl
