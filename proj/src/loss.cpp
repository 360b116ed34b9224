#include "mvcl/loss.hpp"

namespace mvcl {

const char* pair_name(PairType p) {
    switch (p) {
        case PairType::II: return "II";
        case PairType::TT: return "TT";
        case PairType::IT: return "IT";
        case PairType::TI: return "TI";
    }
    throw ParamError("unknown pair type");
}

double LossConfig::lambda(PairType p) const {
    switch (p) {
        case PairType::II: return lambda_ii;
        case PairType::TT: return lambda_tt;
        case PairType::IT: return lambda_it;
        case PairType::TI: return lambda_ti;
    }
    throw ParamError("unknown pair type");
}

void validate(const LossConfig& cfg) {
    if (cfg.tau_init <= 0.0) throw ConfigError("loss: tau_init must be positive");
    if (cfg.tau_min <= 0.0 || cfg.tau_max < cfg.tau_min)
        throw ConfigError("loss: need 0 < tau_min <= tau_max");
    if (cfg.tau_init < cfg.tau_min || cfg.tau_init > cfg.tau_max)
        throw ConfigError("loss: tau_init outside the clamp range");
    for (PairType p : kPairTypes)
        if (cfg.lambda(p) < 0.0)
            throw ConfigError(std::string("loss: lambda_") + pair_name(p) +
                              " must be non-negative");
}

Tensor similarity_matrix(const Tensor& hx, const Tensor& hy) {
    if (hx.rank() != 2 || hy.rank() != 2)
        throw ShapeError("similarity_matrix: inputs must be [N, D]");
    if (hx.shape() != hy.shape())
        throw ShapeError("similarity_matrix: shape mismatch " +
                         shape_str(hx.shape()) + " vs " + shape_str(hy.shape()));
    return matmul_nt(hx, hy);
}

Tensor info_nce(const Tensor& hx, const Tensor& hy, const Tensor& tau) {
    if (tau.size() != 1) throw ShapeError("info_nce: tau must be a scalar");
    if (tau.item() <= 0.0) throw ParamError("info_nce: tau must be positive");
    Tensor logits = scale_by(similarity_matrix(hx, hy), reciprocal(tau));
    // Row-wise cross-entropy against the diagonal, with max-subtracted
    // log-sum-exp so small temperatures stay finite.
    return mean(sub(logsumexp_rows(logits), diagonal(logits)));
}

Tensor info_nce(const Tensor& hx, const Tensor& hy, double tau) {
    return info_nce(hx, hy, Tensor::scalar(tau));
}

LossBreakdown multi_view_loss(const ViewEmbeddings& emb, const LossConfig& cfg,
                              const Tensor& tau) {
    const std::array<const Tensor*, 4> mats = {&emb.i_v1, &emb.i_v2, &emb.t_v1,
                                               &emb.t_v2};
    for (const Tensor* m : mats) {
        if (!m->defined() || m->rank() != 2)
            throw ShapeError("multi_view_loss: all four views must be [N, D]");
        if (m->shape() != emb.i_v1.shape())
            throw ShapeError("multi_view_loss: view shape mismatch " +
                             shape_str(m->shape()) + " vs " +
                             shape_str(emb.i_v1.shape()));
    }

    std::array<Tensor, 4> terms;
    terms[static_cast<std::size_t>(PairType::II)] = info_nce(emb.i_v1, emb.i_v2, tau);
    terms[static_cast<std::size_t>(PairType::TT)] = info_nce(emb.t_v1, emb.t_v2, tau);
    if (cfg.extra_symmetric_pairs) {
        terms[static_cast<std::size_t>(PairType::IT)] =
            scale(add(info_nce(emb.i_v1, emb.t_v1, tau),
                      info_nce(emb.i_v2, emb.t_v2, tau)),
                  0.5);
        terms[static_cast<std::size_t>(PairType::TI)] =
            scale(add(info_nce(emb.t_v1, emb.i_v1, tau),
                      info_nce(emb.t_v2, emb.i_v2, tau)),
                  0.5);
    } else {
        terms[static_cast<std::size_t>(PairType::IT)] = info_nce(emb.i_v1, emb.t_v1, tau);
        terms[static_cast<std::size_t>(PairType::TI)] = info_nce(emb.t_v1, emb.i_v1, tau);
    }

    LossBreakdown out;
    Tensor total = Tensor::scalar(0.0);
    for (PairType p : kPairTypes) {
        const auto i = static_cast<std::size_t>(p);
        out.per_pair[i] = terms[i].item();
        total = add(total, scale(terms[i], cfg.lambda(p)));
    }
    out.total_tensor = total;
    out.total = total.item();
    return out;
}

}  // namespace mvcl
