#include "mvcl/encoders.hpp"

#include <cmath>
#include <string>

namespace mvcl {

namespace {

std::string blk(std::size_t layer, const char* tail) {
    return "block" + std::to_string(layer) + "." + tail;
}

void add_projection(ParamStore& ps, std::size_t hidden, std::size_t embed,
                    bool mlp, Rng& rng) {
    if (mlp) {
        ps.add("proj.h.w", {hidden, hidden}, hidden, rng);
        ps.add("proj.h.b", {hidden}, hidden, rng);
    }
    ps.add("proj.w", {hidden, embed}, hidden, rng);
    ps.add("proj.b", {embed}, hidden, rng);
}

Tensor project(const ParamStore& ps, const Tensor& pooled, bool mlp) {
    Tensor h = pooled;
    if (mlp)
        h = relu(add(matmul(h, ps.at("proj.h.w")), ps.at("proj.h.b")));
    return l2_normalize(add(matmul(h, ps.at("proj.w")), ps.at("proj.b")));
}

}  // namespace

// ---- image encoder -----------------------------------------------------------

void validate(const ImageEncoderConfig& cfg) {
    if (cfg.image_size == 0 || cfg.patch_size == 0 ||
        cfg.image_size % cfg.patch_size != 0)
        throw ConfigError("image encoder: image_size must be a positive multiple of patch_size");
    if (cfg.channels == 0) throw ConfigError("image encoder: channels must be positive");
    if (cfg.hidden_dim == 0 || cfg.embed_dim == 0)
        throw ConfigError("image encoder: hidden_dim and embed_dim must be positive");
    if (cfg.num_layers == 0)
        throw ConfigError("image encoder: num_layers must be positive");
}

ImageEncoder::ImageEncoder(const ImageEncoderConfig& cfg, Rng init_rng)
    : cfg_(cfg) {
    validate(cfg_);
    const std::size_t grid = cfg_.image_size / cfg_.patch_size;
    n_patches_ = grid * grid;
    const std::size_t feat = cfg_.patch_size * cfg_.patch_size * cfg_.channels;
    const std::size_t hid = cfg_.hidden_dim;

    params_.add("patch_embed.w", {feat, hid}, feat, init_rng);
    params_.add("patch_embed.b", {hid}, feat, init_rng);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
        params_.add(blk(l, "token.w1"), {n_patches_, n_patches_}, n_patches_, init_rng);
        params_.add(blk(l, "token.w2"), {n_patches_, n_patches_}, n_patches_, init_rng);
        params_.add(blk(l, "channel.w1"), {hid, hid}, hid, init_rng);
        params_.add(blk(l, "channel.b1"), {hid}, hid, init_rng);
        params_.add(blk(l, "channel.w2"), {hid, hid}, hid, init_rng);
        params_.add(blk(l, "channel.b2"), {hid}, hid, init_rng);
    }
    add_projection(params_, hid, cfg_.embed_dim, cfg_.mlp_projection, init_rng);
}

Tensor ImageEncoder::forward(const std::vector<const Raster*>& batch) const {
    const std::size_t B = batch.size();
    if (B == 0) throw ShapeError("image encoder: empty batch");
    const std::size_t P = cfg_.patch_size;
    const std::size_t grid = cfg_.image_size / P;
    const std::size_t feat = P * P * cfg_.channels;

    std::vector<double> patches(B * n_patches_ * feat);
    std::size_t w = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const Raster& img = *batch[b];
        if (img.height != cfg_.image_size || img.width != cfg_.image_size ||
            img.channels != cfg_.channels)
            throw ShapeError("image encoder: raster " + std::to_string(b) +
                             " has incompatible dimensions");
        for (std::size_t gr = 0; gr < grid; ++gr)
            for (std::size_t gc = 0; gc < grid; ++gc)
                for (std::size_t pr = 0; pr < P; ++pr)
                    for (std::size_t pc = 0; pc < P; ++pc)
                        for (std::size_t ch = 0; ch < cfg_.channels; ++ch)
                            patches[w++] = img.at(gr * P + pr, gc * P + pc, ch);
    }

    Tensor x = Tensor::from_data({B, n_patches_, feat}, std::move(patches));
    Tensor h = add(matmul(x, params_.at("patch_embed.w")), params_.at("patch_embed.b"));
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
        // Token mixing: an MLP across the patch axis.
        Tensor t = transpose_last(layer_norm(h));  // [B, hid, n_patches]
        t = relu(matmul(t, params_.at(blk(l, "token.w1"))));
        t = matmul(t, params_.at(blk(l, "token.w2")));
        h = add(h, transpose_last(t));
        // Channel mixing: an MLP across the hidden axis.
        Tensor c = layer_norm(h);
        c = relu(add(matmul(c, params_.at(blk(l, "channel.w1"))),
                     params_.at(blk(l, "channel.b1"))));
        c = add(matmul(c, params_.at(blk(l, "channel.w2"))),
                params_.at(blk(l, "channel.b2")));
        h = add(h, c);
    }
    Tensor pooled = mean_axis(h, 1);  // [B, hid]
    return project(params_, pooled, cfg_.mlp_projection);
}

Embedding ImageEncoder::encode(const Raster& img) const {
    NoGradGuard guard;
    Tensor out = forward({&img});
    return out.to_vector();
}

// ---- text encoder --------------------------------------------------------------

void validate(const TextEncoderConfig& cfg) {
    if (cfg.vocab_size < 2)
        throw ConfigError("text encoder: vocab_size must cover pad and unk");
    if (cfg.max_len == 0) throw ConfigError("text encoder: max_len must be positive");
    if (cfg.hidden_dim == 0 || cfg.embed_dim == 0)
        throw ConfigError("text encoder: hidden_dim and embed_dim must be positive");
    if (cfg.num_layers == 0)
        throw ConfigError("text encoder: num_layers must be positive");
    if (cfg.dropout_p < 0.0 || cfg.dropout_p >= 1.0)
        throw ConfigError("text encoder: dropout_p must be in [0, 1)");
}

TextEncoder::TextEncoder(const TextEncoderConfig& cfg, Rng init_rng) : cfg_(cfg) {
    validate(cfg_);
    const std::size_t hid = cfg_.hidden_dim;
    params_.add("tok_embed", {cfg_.vocab_size, hid}, hid, init_rng);
    params_.add("pos_embed", {cfg_.max_len, hid}, hid, init_rng);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
        params_.add(blk(l, "attn.wq"), {hid, hid}, hid, init_rng);
        params_.add(blk(l, "attn.wk"), {hid, hid}, hid, init_rng);
        params_.add(blk(l, "attn.wv"), {hid, hid}, hid, init_rng);
        params_.add(blk(l, "attn.wo"), {hid, hid}, hid, init_rng);
        params_.add(blk(l, "mlp.w1"), {hid, hid}, hid, init_rng);
        params_.add(blk(l, "mlp.b1"), {hid}, hid, init_rng);
        params_.add(blk(l, "mlp.w2"), {hid, hid}, hid, init_rng);
        params_.add(blk(l, "mlp.b2"), {hid}, hid, init_rng);
    }
    add_projection(params_, hid, cfg_.embed_dim, cfg_.mlp_projection, init_rng);
}

Tensor TextEncoder::forward(const std::vector<const TokenSeq*>& batch,
                            bool train_mode, Rng& rng) const {
    const std::size_t B = batch.size();
    if (B == 0) throw ShapeError("text encoder: empty batch");
    std::size_t L = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const TokenSeq& toks = *batch[b];
        if (toks.empty())
            throw DataError("text encoder: sequence " + std::to_string(b) + " is empty");
        if (toks.size() > cfg_.max_len)
            throw DataError("text encoder: sequence " + std::to_string(b) +
                            " exceeds max_len " + std::to_string(cfg_.max_len));
        for (int id : toks)
            if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size)
                throw DataError("text encoder: token id " + std::to_string(id) +
                                " outside vocab of size " +
                                std::to_string(cfg_.vocab_size));
        L = std::max(L, toks.size());
    }

    constexpr int kPadId = 0;
    std::vector<int> ids(B * L, kPadId);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < batch[b]->size(); ++t)
            ids[b * L + t] = (*batch[b])[t];

    Tensor x = embedding_lookup(params_.at("tok_embed"), ids, {B, L});
    std::vector<int> positions(L);
    for (std::size_t t = 0; t < L; ++t) positions[t] = static_cast<int>(t);
    x = add(x, embedding_lookup(params_.at("pos_embed"), positions, {L}));

    // Additive attention bias: padding keys get -1e9 before the softmax.
    std::vector<double> bias(B * L * L, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = batch[b]->size(); k < L; ++k)
            for (std::size_t q = 0; q < L; ++q)
                bias[(b * L + q) * L + k] = -1e9;
    Tensor mask = Tensor::from_data({B, L, L}, std::move(bias));

    const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden_dim));
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
        Tensor a_in = layer_norm(x);
        Tensor q = matmul(a_in, params_.at(blk(l, "attn.wq")));
        Tensor k = matmul(a_in, params_.at(blk(l, "attn.wk")));
        Tensor v = matmul(a_in, params_.at(blk(l, "attn.wv")));
        Tensor attn = softmax(add(scale(bmm_nt(q, k), inv_sqrt_h), mask), -1);
        Tensor out = matmul(bmm(attn, v), params_.at(blk(l, "attn.wo")));
        x = add(x, dropout(out, cfg_.dropout_p, rng, train_mode));

        Tensor m_in = layer_norm(x);
        Tensor hmid = relu(add(matmul(m_in, params_.at(blk(l, "mlp.w1"))),
                               params_.at(blk(l, "mlp.b1"))));
        Tensor hout = add(matmul(hmid, params_.at(blk(l, "mlp.w2"))),
                          params_.at(blk(l, "mlp.b2")));
        x = add(x, dropout(hout, cfg_.dropout_p, rng, train_mode));
    }

    // Mean over real positions via constant per-row pooling weights.
    std::vector<double> pool(B * L, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        const double inv = 1.0 / static_cast<double>(batch[b]->size());
        for (std::size_t t = 0; t < batch[b]->size(); ++t) pool[b * L + t] = inv;
    }
    Tensor weights = Tensor::from_data({B, std::size_t{1}, L}, std::move(pool));
    Tensor pooled = reshape(bmm(weights, x), {B, cfg_.hidden_dim});
    return project(params_, pooled, cfg_.mlp_projection);
}

Embedding TextEncoder::encode(const TokenSeq& toks) const {
    NoGradGuard guard;
    Rng unused(0);
    Tensor out = forward({&toks}, false, unused);
    return out.to_vector();
}

}  // namespace mvcl
