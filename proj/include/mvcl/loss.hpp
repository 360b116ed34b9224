#pragma once

#include <array>
#include <string>

#include "mvcl/tensor.hpp"

namespace mvcl {

/// The four trained view pairs: two intra-modal, two inter-modal.
enum class PairType { II = 0, TT = 1, IT = 2, TI = 3 };

constexpr std::array<PairType, 4> kPairTypes = {PairType::II, PairType::TT,
                                                PairType::IT, PairType::TI};

const char* pair_name(PairType p);

struct LossConfig {
    double tau_init = 0.07;
    bool tau_learnable = true;
    double tau_min = 0.005;  // clamp applied after each optimizer update
    double tau_max = 0.5;
    double lambda_ii = 0.5;
    double lambda_tt = 0.5;
    double lambda_it = 1.0;
    double lambda_ti = 1.0;
    /// Experimental: also trains the mirrored inter-modal pairs built from
    /// the second views; each inter-modal term becomes the average of its
    /// two realizations. Off by default.
    bool extra_symmetric_pairs = false;

    double lambda(PairType p) const;
};

void validate(const LossConfig& cfg);

/// The two augmented visual views and two dropout-realized textual views of
/// one batch, each [N, D] with unit-norm rows.
struct ViewEmbeddings {
    Tensor i_v1, i_v2, t_v1, t_v2;
};

struct LossBreakdown {
    std::array<double, 4> per_pair{};  // indexed by PairType
    double total = 0.0;
    Tensor total_tensor;  // scalar graph node; backward() drives training

    double at(PairType p) const { return per_pair[static_cast<std::size_t>(p)]; }
};

/// Pairwise dot products of two row sets: [N, D] x [N, D] -> [N, N] with
/// entry (i, j) = x_i . y_j. Cosine similarity when rows are unit-norm.
Tensor similarity_matrix(const Tensor& hx, const Tensor& hy);

/// Symmetric-free contrastive loss of hx against hy: mean over rows of the
/// softmax cross-entropy of row i against column i at temperature tau.
/// Differentiable in hx, hy, and tau.
Tensor info_nce(const Tensor& hx, const Tensor& hy, const Tensor& tau);
Tensor info_nce(const Tensor& hx, const Tensor& hy, double tau);

/// Weighted sum over the pair set: II = (I_v1,I_v2), TT = (T_v1,T_v2),
/// IT = (I_v1,T_v1), TI = (T_v1,I_v1).
LossBreakdown multi_view_loss(const ViewEmbeddings& emb, const LossConfig& cfg,
                              const Tensor& tau);

}  // namespace mvcl
