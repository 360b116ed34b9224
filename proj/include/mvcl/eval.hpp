#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mvcl/data.hpp"
#include "mvcl/trainer.hpp"

namespace mvcl {

/// Retrieval directions: query modality 2 gallery modality.
enum class Direction { I2T = 0, T2I = 1, I2I = 2, T2T = 3 };

constexpr std::array<Direction, 4> kDirections = {Direction::I2T, Direction::T2I,
                                                  Direction::I2I, Direction::T2T};

const char* direction_name(Direction d);

/// Fraction of queries whose top-k gallery rows (by descending similarity,
/// ties broken by ascending gallery index) intersect the relevant set.
/// sim is [Q, G]; gt must list a nonempty in-range relevant set per query.
/// k > G is clamped to G with a warning on stderr.
double recall_at_k(const Tensor& sim, const GroundTruth& gt, std::size_t k);

/// Arithmetic mean of R@1, R@5, R@10; each must lie in [0, 1].
double mean_recall(double r1, double r5, double r10);

struct DirectionReport {
    double r1 = 0.0, r5 = 0.0, r10 = 0.0;
    double mean_recall = 0.0;
    std::size_t queries = 0;  // rows actually scored
};

struct RetrievalReport {
    std::array<DirectionReport, 4> per_direction{};
    /// Mean of the two cross-modal mean-recalls; the headline number.
    double overall = 0.0;

    const DirectionReport& at(Direction d) const {
        return per_direction[static_cast<std::size_t>(d)];
    }
    DirectionReport& at(Direction d) {
        return per_direction[static_cast<std::size_t>(d)];
    }

    std::string to_json() const;   // stable key order, byte-deterministic
    std::string to_table() const;  // aligned plain text
};

/// Encode every sample in inference mode (identity image view, no dropout,
/// captions only) and score retrieval in all four directions. Intra-modal
/// directions leave the query out of its gallery; queries whose relevant
/// set becomes empty by that rule are skipped.
RetrievalReport zero_shot_retrieval(const Model& model, const Dataset& ds);

}  // namespace mvcl
